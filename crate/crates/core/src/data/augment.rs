//! Random crop and color jitter for `[c, H, W]` images in `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::VsaError;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CROP_SCALE: (f64, f64) = (0.6, 1.0);
pub const JITTER_RANGE: (f64, f64) = (0.8, 1.2);

/// Subset of {random crop, color jitter}. Text form: `none`, `rc`, `jt`,
/// `rc+jt`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AugmentPolicy {
    pub random_crop: bool,
    pub color_jitter: bool,
}

impl AugmentPolicy {
    pub const NONE: AugmentPolicy = AugmentPolicy { random_crop: false, color_jitter: false };
    pub const CROP: AugmentPolicy = AugmentPolicy { random_crop: true, color_jitter: false };
    pub const CROP_JITTER: AugmentPolicy = AugmentPolicy { random_crop: true, color_jitter: true };

    pub fn is_none(&self) -> bool {
        !self.random_crop && !self.color_jitter
    }
}

impl FromStr for AugmentPolicy {
    type Err = VsaError;

    fn from_str(s: &str) -> Result<Self, VsaError> {
        let mut p = AugmentPolicy::NONE;
        let s = s.trim();
        if s.is_empty() || s == "none" || s == "no" {
            return Ok(p);
        }
        for part in s.split(['+', ',']) {
            match part.trim() {
                "rc" => p.random_crop = true,
                "jt" => p.color_jitter = true,
                other => {
                    return Err(VsaError::Config(format!(
                        "unknown augmentation {other:?} (expected none, rc, jt or rc+jt)"
                    )))
                }
            }
        }
        Ok(p)
    }
}

impl fmt::Display for AugmentPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.random_crop, self.color_jitter) {
            (false, false) => f.write_str("none"),
            (true, false) => f.write_str("rc"),
            (false, true) => f.write_str("jt"),
            (true, true) => f.write_str("rc+jt"),
        }
    }
}

impl TryFrom<String> for AugmentPolicy {
    type Error = VsaError;

    fn try_from(s: String) -> Result<Self, VsaError> {
        s.parse()
    }
}

impl From<AugmentPolicy> for String {
    fn from(p: AugmentPolicy) -> String {
        p.to_string()
    }
}

fn bilinear(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Crop the square window of side `scale * H` whose top-left corner sits at
/// fraction `(oy, ox)` of the free margin, then resize it back to `H x W`
/// bilinearly (pixel-center aligned).
pub fn crop_resize(image: &Tensor<f32>, scale: f64, oy: f64, ox: f64) -> Tensor<f32> {
    let s = image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let (ch, cw) = (scale * h as f64, scale * w as f64);
    let (top, left) = (oy * (h as f64 - ch), ox * (w as f64 - cw));
    let src = image.data();
    let mut out = Vec::with_capacity(image.numel());
    for plane in src.chunks(h * w).take(c) {
        for y in 0..h {
            let sy = top + (y as f64 + 0.5) * ch / h as f64 - 0.5;
            for x in 0..w {
                let sx = left + (x as f64 + 0.5) * cw / w as f64 - 0.5;
                out.push(bilinear(plane, h, w, sy, sx));
            }
        }
    }
    Tensor::new(s.to_vec(), out).expect("same extents")
}

/// Multiply channel `i` by `factors[i]` and clamp to `[0, 1]`.
pub fn color_jitter(image: &Tensor<f32>, factors: &[f32]) -> Tensor<f32> {
    let s = image.shape();
    let plane = s[1] * s[2];
    let mut out = image.clone();
    for (ch, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let f = factors[ch];
        chunk.iter_mut().for_each(|v| *v = (*v * f).clamp(0.0, 1.0));
    }
    out
}

/// Apply `policy` with parameters drawn from `rng`. The draw count is fixed
/// per enabled augmentation, so the stream stays aligned across images.
pub fn augment_image(image: &Tensor<f32>, policy: AugmentPolicy, rng: &mut Rng) -> Tensor<f32> {
    let mut out = image.clone();
    if policy.random_crop {
        let scale = rng.gen_range(CROP_SCALE.0..=CROP_SCALE.1);
        let (oy, ox) = (rng.gen::<f64>(), rng.gen::<f64>());
        out = crop_resize(&out, scale, oy, ox);
    }
    if policy.color_jitter {
        let factors: Vec<f32> =
            (0..image.shape()[0]).map(|_| rng.gen_range(JITTER_RANGE.0..=JITTER_RANGE.1) as f32).collect();
        out = color_jitter(&out, &factors);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn img(seed: u64) -> Tensor<f32> {
        let mut rng = rng_for(seed, &[]);
        Tensor::from_fn([3, 16, 16], |_| rng.gen::<f32>())
    }

    #[test]
    fn parse_policies() {
        assert_eq!("none".parse::<AugmentPolicy>().unwrap(), AugmentPolicy::NONE);
        assert_eq!("rc".parse::<AugmentPolicy>().unwrap(), AugmentPolicy::CROP);
        assert_eq!("rc, jt".parse::<AugmentPolicy>().unwrap(), AugmentPolicy::CROP_JITTER);
        assert_eq!(AugmentPolicy::CROP_JITTER.to_string(), "rc+jt");
        assert!("flip".parse::<AugmentPolicy>().is_err());
    }

    #[test]
    fn empty_policy_is_identity() {
        let x = img(1);
        assert_eq!(augment_image(&x, AugmentPolicy::NONE, &mut rng_for(2, &[])), x);
    }

    #[test]
    fn full_scale_crop_is_identity() {
        let x = img(3);
        let y = crop_resize(&x, 1.0, 0.3, 0.7);
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn unit_jitter_is_identity() {
        let x = img(4);
        assert_eq!(color_jitter(&x, &[1.0, 1.0, 1.0]), x);
    }

    #[test]
    fn augmented_shape_and_range() {
        let x = img(5);
        let mut rng = rng_for(6, &[]);
        for _ in 0..20 {
            let y = augment_image(&x, AugmentPolicy::CROP_JITTER, &mut rng);
            assert_eq!(y.shape(), x.shape());
            assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
