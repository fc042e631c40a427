//! Weak and strong input perturbations used by the pseudo-labeling stage.
//!
//! Operators are pure: they read a feature row and return a fresh one. All
//! randomness comes from the caller's generator, so a cloned generator state
//! reproduces the same output.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::Layout;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum WeakAugment {
    /// Mirror every image row with probability `p`.
    Hflip { p: f64 },
    /// Additive Gaussian noise per feature.
    Jitter { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StrongAugment {
    /// `n_ops` operations drawn from shift / noise / cutout, scaled by `magnitude ∈ [0, 1]`.
    RandLite { n_ops: usize, magnitude: f64 },
    /// Gaussian noise plus zeroing a `drop_frac` fraction of the features.
    JitterDrop { sigma: f64, drop_frac: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub weak: WeakAugment,
    pub strong: StrongAugment,
    #[serde(default)]
    pub rng_seed: u64,
}

impl AugmentConfig {
    /// Jitter analogs for tabular pools.
    pub fn tabular_default() -> Self {
        Self {
            weak: WeakAugment::Jitter { sigma: 0.1 },
            strong: StrongAugment::JitterDrop {
                sigma: 0.3,
                drop_frac: 0.125,
            },
            rng_seed: 0,
        }
    }

    pub fn image_default() -> Self {
        Self {
            weak: WeakAugment::Hflip { p: 0.5 },
            strong: StrongAugment::RandLite {
                n_ops: 2,
                magnitude: 0.5,
            },
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.weak {
            WeakAugment::Hflip { p } if !(0.0..=1.0).contains(&p) => {
                return Err(Error::config("hflip probability must lie in [0, 1]"))
            }
            WeakAugment::Jitter { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                return Err(Error::config("weak jitter sigma must be nonnegative"))
            }
            _ => {}
        }
        match self.strong {
            StrongAugment::RandLite { magnitude, .. } if !(0.0..=1.0).contains(&magnitude) => {
                return Err(Error::config("rand_lite magnitude must lie in [0, 1]"))
            }
            StrongAugment::JitterDrop { sigma, drop_frac } => {
                if !(sigma >= 0.0 && sigma.is_finite()) || !(0.0..=1.0).contains(&drop_frac) {
                    return Err(Error::config("jitter_drop needs sigma ≥ 0 and drop_frac in [0, 1]"));
                }
                if let WeakAugment::Jitter { sigma: weak } = self.weak {
                    if weak >= sigma {
                        return Err(Error::config("weak jitter must be smaller than strong jitter"));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn image_dims(x: &[f64], layout: Layout) -> Result<(usize, usize, usize)> {
    layout.check(x.len())?;
    match layout {
        Layout::Image { h, w, c } => Ok((h, w, c)),
        Layout::Tabular => Err(Error::input("operation requires an image layout")),
    }
}

fn add_noise<R: Rng + ?Sized>(x: &mut [f64], sigma: f64, draw: &mut R) {
    if sigma == 0.0 {
        return;
    }
    for v in x {
        let z: f64 = draw.sample(StandardNormal);
        *v += sigma * z;
    }
}

/// Reverses the column order of every row and channel.
pub fn hflip(x: &[f64], layout: Layout) -> Result<Vec<f64>> {
    let (h, w, c) = image_dims(x, layout)?;
    let mut out = vec![0.0; x.len()];
    for r in 0..h {
        for col in 0..w {
            let src = (r * w + (w - 1 - col)) * c;
            let dst = (r * w + col) * c;
            out[dst..dst + c].copy_from_slice(&x[src..src + c]);
        }
    }
    Ok(out)
}

pub fn weak_augment<R: Rng + ?Sized>(
    x: &[f64],
    layout: Layout,
    weak: &WeakAugment,
    draw: &mut R,
) -> Result<Vec<f64>> {
    layout.check(x.len())?;
    match *weak {
        WeakAugment::Hflip { p } => {
            image_dims(x, layout)?;
            let u: f64 = draw.random();
            if u < p {
                hflip(x, layout)
            } else {
                Ok(x.to_vec())
            }
        }
        WeakAugment::Jitter { sigma } => {
            let mut out = x.to_vec();
            add_noise(&mut out, sigma, draw);
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandLiteOp {
    /// Horizontal roll by up to `magnitude · w / 2` columns.
    Shift,
    /// Gaussian noise with σ = `magnitude / 4`.
    Noise,
    /// Square of side `magnitude · min(h, w)` filled with the dataset mean.
    Cutout,
}

const RAND_LITE_OPS: [RandLiteOp; 3] = [RandLiteOp::Shift, RandLiteOp::Noise, RandLiteOp::Cutout];

pub fn apply_rand_lite_op<R: Rng + ?Sized>(
    x: &[f64],
    layout: Layout,
    op: RandLiteOp,
    magnitude: f64,
    fill: f64,
    draw: &mut R,
) -> Result<Vec<f64>> {
    let (h, w, c) = image_dims(x, layout)?;
    let mut out = x.to_vec();
    match op {
        RandLiteOp::Shift => {
            let reach = (magnitude * w as f64 / 2.0).round() as i64;
            let k = draw.random_range(-reach..=reach);
            if k != 0 {
                for r in 0..h {
                    for col in 0..w {
                        let src = (col as i64 - k).rem_euclid(w as i64) as usize;
                        let (s, d) = ((r * w + src) * c, (r * w + col) * c);
                        out[d..d + c].copy_from_slice(&x[s..s + c]);
                    }
                }
            }
        }
        RandLiteOp::Noise => add_noise(&mut out, magnitude / 4.0, draw),
        RandLiteOp::Cutout => {
            let side = ((magnitude * h.min(w) as f64).round() as usize).min(h.min(w));
            if side > 0 {
                let top = draw.random_range(0..=h - side);
                let left = draw.random_range(0..=w - side);
                for r in top..top + side {
                    let start = (r * w + left) * c;
                    out[start..start + side * c].fill(fill);
                }
            }
        }
    }
    Ok(out)
}

/// `fill` is the dataset mean used by cutout.
pub fn strong_augment<R: Rng + ?Sized>(
    x: &[f64],
    layout: Layout,
    strong: &StrongAugment,
    fill: f64,
    draw: &mut R,
) -> Result<Vec<f64>> {
    layout.check(x.len())?;
    match *strong {
        StrongAugment::RandLite { n_ops, magnitude } => {
            image_dims(x, layout)?;
            let mut out = x.to_vec();
            for _ in 0..n_ops {
                let op = RAND_LITE_OPS[draw.random_range(0..RAND_LITE_OPS.len())];
                out = apply_rand_lite_op(&out, layout, op, magnitude, fill, draw)?;
            }
            Ok(out)
        }
        StrongAugment::JitterDrop { sigma, drop_frac } => {
            let mut out = x.to_vec();
            add_noise(&mut out, sigma, draw);
            let n_drop = (drop_frac * x.len() as f64).round() as usize;
            for i in index::sample(draw, x.len(), n_drop.min(x.len())) {
                out[i] = 0.0;
            }
            Ok(out)
        }
    }
}
