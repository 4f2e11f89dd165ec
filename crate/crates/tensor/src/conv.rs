/// Border handling for 2-d convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PadMode {
    Zeros,
    /// Mirror without repeating the edge sample (`dcb|abcd|cba`).
    Reflect,
}

/// Precomputed im2col gather table for one input geometry.
#[derive(Debug, Clone)]
pub(crate) struct ConvGeometry {
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub ho: usize,
    pub wo: usize,
    /// For each `(kernel tap, output position)`: source offset in the `h*w`
    /// plane, or -1 for a zero sample.
    table: Vec<isize>,
}

fn reflect(i: isize, n: isize) -> isize {
    if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    }
}

impl ConvGeometry {
    pub fn new(h: usize, w: usize, k: usize, stride: usize, pad: usize, mode: PadMode) -> Self {
        assert!(stride >= 1 && k >= 1);
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "kernel larger than padded input");
        if mode == PadMode::Reflect {
            assert!(pad < h && pad < w, "reflect padding {pad} needs input larger than {pad}, got {h}x{w}");
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let l = ho * wo;
        let mut table = vec![-1isize; k * k * l];
        let (hi, wi) = (h as isize, w as isize);
        for ky in 0..k {
            for kx in 0..k {
                let base = (ky * k + kx) * l;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        let src = match mode {
                            PadMode::Zeros => {
                                if iy < 0 || iy >= hi || ix < 0 || ix >= wi {
                                    -1
                                } else {
                                    iy * wi + ix
                                }
                            }
                            PadMode::Reflect => reflect(iy, hi) * wi + reflect(ix, wi),
                        };
                        table[base + oy * wo + ox] = src;
                    }
                }
            }
        }
        ConvGeometry { h, w, k, ho, wo, table }
    }

    pub fn out_len(&self) -> usize {
        self.ho * self.wo
    }

    /// Gathers `cin` planes of one batch item into a `(cin*k*k) x (ho*wo)` matrix.
    pub fn im2col<T: Copy + Default>(&self, x: &[T], cin: usize, col: &mut [T]) {
        let hw = self.h * self.w;
        let l = self.out_len();
        let kk = self.k * self.k;
        for c in 0..cin {
            let plane = &x[c * hw..(c + 1) * hw];
            for t in 0..kk {
                let dst = &mut col[(c * kk + t) * l..(c * kk + t + 1) * l];
                let idx = &self.table[t * l..(t + 1) * l];
                for (d, &s) in dst.iter_mut().zip(idx) {
                    *d = if s >= 0 { plane[s as usize] } else { T::default() };
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-adds columns back into planes.
    pub fn col2im<T: Copy + std::ops::AddAssign>(&self, col: &[T], cin: usize, dx: &mut [T]) {
        let hw = self.h * self.w;
        let l = self.out_len();
        let kk = self.k * self.k;
        for c in 0..cin {
            let plane = &mut dx[c * hw..(c + 1) * hw];
            for t in 0..kk {
                let src = &col[(c * kk + t) * l..(c * kk + t + 1) * l];
                let idx = &self.table[t * l..(t + 1) * l];
                for (&v, &s) in src.iter().zip(idx) {
                    if s >= 0 {
                        plane[s as usize] += v;
                    }
                }
            }
        }
    }
}
