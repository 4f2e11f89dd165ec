//! Scalar-loop reference for the guided modulation
//! `GN(x) * (1 + gamma) + beta`, with gamma and beta from shared conv+ReLU
//! and two 3x3 convs over bilinearly resized guidance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rawdiff::nn::{Binding, Conv2d, ParamBuilder, ParamStore};
use rawdiff::unet::{guided_modulation, Modulation};
use rawdiff::Error;
use rawdiff_tensor::{Graph, Tensor};

pub const C: usize = 16;
pub const GROUPS: usize = 8;
pub const GC: usize = 5;
pub const HID: usize = 6;

pub fn setup(seed: u64) -> (Modulation, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = {
        let mut b = ParamBuilder { store: &mut store, rng: &mut rng };
        Modulation::new(&mut b, "m", C, GROUPS, GC, HID)
    };
    // Non-zero biases so every term of the formula is exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for conv in [&m.shared, &m.gamma, &m.beta] {
        store.get_mut(conv.bias).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
    (m, store)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
}

pub fn apply(m: &Modulation, s: &ParamStore<f64>, x: &Tensor<f64>, g: &Tensor<f64>) -> Result<Tensor<f64>, Error> {
    let graph = Graph::inference();
    let p = Binding::new(&graph, s);
    let y = guided_modulation(&p, m, graph.constant(x.clone()), graph.constant(g.clone()))?;
    Ok((*y.value()).clone())
}

pub type Map = Vec<Vec<Vec<f64>>>; // [c][y][x]

pub fn to_map(t: &Tensor<f64>, n: usize) -> Map {
    let s = t.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let d = t.data();
    (0..c)
        .map(|ci| (0..h).map(|y| (0..w).map(|x| d[((n * c + ci) * h + y) * w + x]).collect()).collect())
        .collect()
}

pub fn resize_1d_coord(d: usize, input: usize, output: usize) -> (usize, usize, f64) {
    let src = ((d as f64 + 0.5) * input as f64 / output as f64 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(input - 1);
    let i1 = (i0 + 1).min(input - 1);
    (i0, i1, src - i0 as f64)
}

pub fn bilinear(m: &Map, oh: usize, ow: usize) -> Map {
    let (h, w) = (m[0].len(), m[0][0].len());
    m.iter()
        .map(|p| {
            (0..oh)
                .map(|oy| {
                    let (y0, y1, fy) = resize_1d_coord(oy, h, oh);
                    (0..ow)
                        .map(|ox| {
                            let (x0, x1, fx) = resize_1d_coord(ox, w, ow);
                            (1.0 - fy) * ((1.0 - fx) * p[y0][x0] + fx * p[y0][x1])
                                + fy * ((1.0 - fx) * p[y1][x0] + fx * p[y1][x1])
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn conv3(m: &Map, conv: &Conv2d, s: &ParamStore<f64>) -> Map {
    let (w, b) = (s.get(conv.weight).data(), s.get(conv.bias).data());
    let (h, wd) = (m[0].len(), m[0][0].len());
    let cin = m.len();
    (0..conv.cout)
        .map(|co| {
            (0..h)
                .map(|y| {
                    (0..wd)
                        .map(|x| {
                            let mut acc = b[co];
                            for (ci, plane) in m.iter().enumerate() {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let (sy, sx) = (y as i64 + ky as i64 - 1, x as i64 + kx as i64 - 1);
                                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                                            acc += w[((co * cin + ci) * 3 + ky) * 3 + kx] * plane[sy as usize][sx as usize];
                                        }
                                    }
                                }
                            }
                            acc
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn group_norm(m: &Map, groups: usize) -> Map {
    let per = m.len() / groups;
    let mut out = m.clone();
    for g in 0..groups {
        let vals: Vec<f64> = m[g * per..(g + 1) * per].iter().flatten().flatten().copied().collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        for c in g * per..(g + 1) * per {
            for row in out[c].iter_mut() {
                for v in row.iter_mut() {
                    *v = (*v - mean) / (var + 1e-5).sqrt();
                }
            }
        }
    }
    out
}

pub fn reference(m: &Modulation, s: &ParamStore<f64>, x: &Tensor<f64>, g: &Tensor<f64>, n: usize) -> Map {
    let xm = to_map(x, n);
    let (h, w) = (xm[0].len(), xm[0][0].len());
    let gd = bilinear(&to_map(g, n), h, w);
    let mut a = conv3(&gd, &m.shared, s);
    a.iter_mut().flatten().flatten().for_each(|v| *v = v.max(0.0));
    let (gamma, beta) = (conv3(&a, &m.gamma, s), conv3(&a, &m.beta, s));
    let norm = group_norm(&xm, m.groups);
    (0..m.gamma.cout)
        .map(|c| (0..h).map(|y| (0..w).map(|x| norm[c][y][x] * (1.0 + gamma[c][y][x]) + beta[c][y][x]).collect()).collect())
        .collect()
}

pub fn max_diff(t: &Tensor<f64>, n: usize, r: &Map) -> f64 {
    let got = to_map(t, n);
    got.iter().flatten().flatten().zip(r.iter().flatten().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}
