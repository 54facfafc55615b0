use serde::{Deserialize, Serialize};

use super::BBox;
use crate::{Error, Result};

/// Default bound on `dw`/`dh` before exponentiation, `ln(1000 / 16)`.
pub const DEFAULT_DELTA_CLAMP: f64 = 4.135_166_556_742_356;

/// Regression target relative to an anchor: center offsets normalized by the
/// anchor size and log-scale size ratios.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxDelta {
    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            dx: v[0],
            dy: v[1],
            dw: v[2],
            dh: v[3],
        }
    }
}

pub fn encode(anchor: &BBox, gt: &BBox) -> Result<BoxDelta> {
    if anchor.is_degenerate() {
        return Err(Error::InvalidBox(format!("anchor {anchor:?} has zero area")));
    }
    if gt.is_degenerate() {
        return Err(Error::InvalidBox(format!(
            "ground-truth {gt:?} has zero width or height"
        )));
    }
    let (ax, ay) = anchor.center();
    let (gx, gy) = gt.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    Ok(BoxDelta {
        dx: (gx - ax) / aw,
        dy: (gy - ay) / ah,
        dw: (gt.width() / aw).ln(),
        dh: (gt.height() / ah).ln(),
    })
}

pub fn decode(anchor: &BBox, delta: &BoxDelta) -> BBox {
    decode_clamped(anchor, delta, DEFAULT_DELTA_CLAMP)
}

/// Applies `delta` to `anchor`, clamping `dw`/`dh` to `[-bound, bound]`.
pub fn decode_clamped(anchor: &BBox, delta: &BoxDelta, bound: f64) -> BBox {
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let cx = ax + delta.dx * aw;
    let cy = ay + delta.dy * ah;
    let w = aw * delta.dw.clamp(-bound, bound).exp();
    let h = ah * delta.dh.clamp(-bound, bound).exp();
    BBox::from_center_size(cx, cy, w, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_delta() {
        let a = BBox::new(3.0, 4.0, 50.0, 70.0).unwrap();
        assert_eq!(encode(&a, &a).unwrap(), BoxDelta::default());
    }

    #[test]
    fn shifted_gt() {
        let a = BBox::new(0.0, 0.0, 100.0, 100.0).unwrap();
        let g = BBox::new(10.0, 10.0, 110.0, 110.0).unwrap();
        let d = encode(&a, &g).unwrap();
        assert!((d.dx - 0.1).abs() < 1e-12);
        assert!((d.dy - 0.1).abs() < 1e-12);
        assert!(d.dw.abs() < 1e-12 && d.dh.abs() < 1e-12);
    }

    #[test]
    fn zero_size_gt_is_error() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let g = BBox::new(2.0, 2.0, 2.0, 8.0).unwrap();
        assert!(encode(&a, &g).is_err());
    }

    #[test]
    fn decode_clamps_large_sizes() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let d = BoxDelta {
            dx: 0.0,
            dy: 0.0,
            dw: 1e6,
            dh: -1e6,
        };
        let out = decode_clamped(&a, &d, 2.0);
        assert!((out.width() - 10.0 * 2f64.exp()).abs() < 1e-9);
        assert!((out.height() - 10.0 * (-2f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn random_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let rand_box = |rng: &mut ChaCha8Rng| {
                let x = rng.random_range(-50.0..200.0);
                let y = rng.random_range(-50.0..200.0);
                let w = rng.random_range(1.0..150.0);
                let h = rng.random_range(1.0..150.0);
                BBox::new(x, y, x + w, y + h).unwrap()
            };
            let anchor = rand_box(&mut rng);
            let gt = rand_box(&mut rng);
            let back = decode_clamped(&anchor, &encode(&anchor, &gt).unwrap(), f64::INFINITY);
            for (p, q) in [
                (back.x_min, gt.x_min),
                (back.y_min, gt.y_min),
                (back.x_max, gt.x_max),
                (back.y_max, gt.y_max),
            ] {
                worst = worst.max((p - q).abs());
            }
        }
        assert!(worst < 1e-6, "max coordinate error {worst}");
    }
}
