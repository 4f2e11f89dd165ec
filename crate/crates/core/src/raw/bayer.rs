use super::{Cfa, Planes};
use crate::error::{bail, Result};

/// Packs a `2h x 2w` mosaic (single plane) into `4 x h x w` planes in
/// `(R, G1, G2, B)` order.
pub fn pack_bayer(mosaic: &Planes, cfa: Cfa) -> Result<Planes> {
    if mosaic.channels != 1 {
        bail!(InvalidArgument, "mosaic must be a single plane, got {}", mosaic.channels);
    }
    if mosaic.h % 2 != 0 || mosaic.w % 2 != 0 || mosaic.h == 0 || mosaic.w == 0 {
        bail!(
            InvalidArgument,
            "mosaic dimensions {}x{} must be even and non-zero",
            mosaic.h,
            mosaic.w
        );
    }
    let (h, w) = (mosaic.h / 2, mosaic.w / 2);
    let mut out = Planes::zeros(4, h, w);
    for y in 0..mosaic.h {
        for x in 0..mosaic.w {
            out.set(cfa.plane_at(y, x), y / 2, x / 2, mosaic.get(0, y, x));
        }
    }
    Ok(out)
}

/// Inverse of [`pack_bayer`].
pub fn unpack_bayer(packed: &Planes, cfa: Cfa) -> Result<Planes> {
    if packed.channels != 4 {
        bail!(InvalidArgument, "packed RAW must have 4 planes, got {}", packed.channels);
    }
    let (h, w) = (packed.h * 2, packed.w * 2);
    let mut out = Planes::zeros(1, h, w);
    for y in 0..h {
        for x in 0..w {
            out.set(0, y, x, packed.get(cfa.plane_at(y, x), y / 2, x / 2));
        }
    }
    Ok(out)
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

/// Bilinear demosaic of a single-plane mosaic to 3 planes. Native samples
/// are kept; missing colours average the nearest same-colour neighbours,
/// with mirrored borders (which preserve the CFA phase).
pub fn demosaic_bilinear(mosaic: &Planes, cfa: Cfa) -> Result<Planes> {
    if mosaic.channels != 1 || mosaic.h < 2 || mosaic.w < 2 {
        bail!(InvalidArgument, "demosaic needs a single-plane mosaic of at least 2x2");
    }
    let (h, w) = (mosaic.h, mosaic.w);
    let m = |y: isize, x: isize| mosaic.get(0, reflect(y, h), reflect(x, w));
    let mut out = Planes::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            let (yi, xi) = (y as isize, x as isize);
            let native = cfa.color_at(y, x);
            for c in 0..3 {
                let v = if c == native {
                    m(yi, xi)
                } else if c == 1 {
                    // green at a red or blue site: 4-neighbour cross
                    (m(yi - 1, xi) + m(yi + 1, xi) + m(yi, xi - 1) + m(yi, xi + 1)) * 0.25
                } else if native == 1 {
                    // red/blue at a green site: the two neighbours on the axis
                    // carrying that colour
                    let horizontal = cfa.color_at(y, x ^ 1) == c;
                    if horizontal {
                        (m(yi, xi - 1) + m(yi, xi + 1)) * 0.5
                    } else {
                        (m(yi - 1, xi) + m(yi + 1, xi)) * 0.5
                    }
                } else {
                    // red at blue or blue at red: diagonal neighbours
                    (m(yi - 1, xi - 1) + m(yi - 1, xi + 1) + m(yi + 1, xi - 1) + m(yi + 1, xi + 1)) * 0.25
                };
                out.set(c, y, x, v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn packs_single_quad() {
        let m = Planes::from_vec(1, 2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let p = pack_bayer(&m, Cfa::Rggb).unwrap();
        assert_eq!(p.data, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!((p.h, p.w), (1, 1));
    }

    #[test]
    fn constant_mosaic_packs_to_constant_planes() {
        let m = Planes::from_vec(1, 4, 6, vec![0.5; 24]).unwrap();
        let p = pack_bayer(&m, Cfa::Rggb).unwrap();
        assert!(p.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn odd_dimensions_rejected() {
        let m = Planes::zeros(1, 3, 4);
        assert!(matches!(pack_bayer(&m, Cfa::Rggb), Err(crate::Error::InvalidArgument(_))));
    }

    #[test]
    fn pack_is_bijective_on_4x4_sites() {
        // every site index maps to a distinct packed slot and back
        let m = Planes::from_vec(1, 4, 4, (0..16).map(|v| v as f64).collect()).unwrap();
        let p = pack_bayer(&m, Cfa::Rggb).unwrap();
        let mut seen = p.data.clone();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..16).map(|v| v as f64).collect::<Vec<_>>());
        assert_eq!(unpack_bayer(&p, Cfa::Rggb).unwrap(), m);
    }

    #[test]
    fn demosaic_keeps_native_samples_and_constants() {
        let m = Planes::from_vec(1, 4, 4, (0..16).map(|v| v as f64 * 0.1).collect()).unwrap();
        let d = demosaic_bilinear(&m, Cfa::Rggb).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(d.get(Cfa::Rggb.color_at(y, x), y, x), m.get(0, y, x));
            }
        }
        let c = Planes::from_vec(1, 4, 4, vec![0.3; 16]).unwrap();
        let d = demosaic_bilinear(&c, Cfa::Rggb).unwrap();
        assert!(d.data.iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn demosaic_interpolates_red_at_green_sites_horizontally() {
        // R at even rows/even cols = 1, everything else 0
        let mut m = Planes::zeros(1, 4, 4);
        for y in (0..4).step_by(2) {
            for x in (0..4).step_by(2) {
                m.set(0, y, x, 1.0);
            }
        }
        let d = demosaic_bilinear(&m, Cfa::Rggb).unwrap();
        assert_eq!(d.get(0, 0, 1), 1.0); // G1 site: left/right are red
        assert_eq!(d.get(0, 1, 0), 1.0); // G2 site: up/down are red
        assert_eq!(d.get(0, 1, 1), 1.0); // B site: diagonals are red
        assert_eq!(d.get(2, 0, 0), 0.0);
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            let n = 4 * h * w;
            let data: Vec<f64> = (0..n).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64).collect();
            let m = Planes::from_vec(1, 2 * h, 2 * w, data).unwrap();
            let p = pack_bayer(&m, Cfa::Rggb).unwrap();
            prop_assert_eq!(unpack_bayer(&p, Cfa::Rggb).unwrap(), m);
        }
    }
}
