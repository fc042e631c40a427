//! Procedural datasets standing in for natural-image pools at desk scale.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Layout};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticKind {
    /// `classes` unit-variance isotropic Gaussians whose means are pairwise at
    /// least `separation` apart (exactly `separation` when `classes ≤ dim`).
    GaussianMixture {
        classes: usize,
        dim: usize,
        separation: f64,
    },
    /// Ten binary digit glyphs rendered into `height × width` with jitter.
    TinyDigits { height: usize, width: usize },
}

impl SyntheticKind {
    pub fn num_classes(&self) -> usize {
        match *self {
            SyntheticKind::GaussianMixture { classes, .. } => classes,
            SyntheticKind::TinyDigits { .. } => 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SyntheticKind::GaussianMixture {
                classes,
                dim,
                separation,
            } => {
                if classes < 2 || dim == 0 || !(separation > 0.0 && separation.is_finite()) {
                    return Err(Error::input(
                        "gaussian_mixture needs classes ≥ 2, dim ≥ 1, separation > 0",
                    ));
                }
            }
            SyntheticKind::TinyDigits { height, width } => {
                if height < 5 || width < 3 {
                    return Err(Error::input("tiny_digits needs height ≥ 5 and width ≥ 3"));
                }
            }
        }
        Ok(())
    }
}

/// Generates `n` labeled samples with features rounded to `f32` precision.
pub fn make_synthetic(kind: SyntheticKind, n: usize, seed: u64) -> Result<Dataset> {
    kind.validate()?;
    let k = kind.num_classes();
    if n < k {
        return Err(Error::input(format!("need at least {k} samples, got {n}")));
    }
    let mut draw = rng::rng(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut draw);

    let (mut features, d, layout) = match kind {
        SyntheticKind::GaussianMixture {
            classes,
            dim,
            separation,
        } => {
            let means = mixture_means(classes, dim, separation, &mut draw);
            let mut feats = Vec::with_capacity(n * dim);
            for &y in &labels {
                for m in &means[y] {
                    let z: f64 = draw.sample(StandardNormal);
                    feats.push(m + z);
                }
            }
            (feats, dim, Layout::Tabular)
        }
        SyntheticKind::TinyDigits { height, width } => {
            let mut feats = Vec::with_capacity(n * height * width);
            for &y in &labels {
                feats.extend(render_digit(y, height, width, &mut draw));
            }
            (
                feats,
                height * width,
                Layout::Image {
                    h: height,
                    w: width,
                    c: 1,
                },
            )
        }
    };
    for v in &mut features {
        *v = *v as f32 as f64;
    }
    Dataset::new(features, d, Some(labels), layout)
}

fn mixture_means<R: Rng>(k: usize, d: usize, sep: f64, draw: &mut R) -> Vec<Vec<f64>> {
    if k <= d {
        // Scaled basis vectors under a random rotation: all pairwise distances
        // equal `sep`.
        let basis = random_orthonormal(d, draw);
        let scale = sep / std::f64::consts::SQRT_2;
        return basis[..k]
            .iter()
            .map(|row| row.iter().map(|v| v * scale).collect())
            .collect();
    }
    let mut radius = sep;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut failures = 0;
    while means.len() < k {
        let cand: Vec<f64> = (0..d)
            .map(|_| radius * draw.sample::<f64, _>(StandardNormal))
            .collect();
        let ok = means.iter().all(|m| {
            m.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= sep
        });
        if ok {
            means.push(cand);
        } else {
            failures += 1;
            if failures % 1000 == 0 {
                radius *= 1.5;
            }
        }
    }
    means
}

/// Rows of a random orthonormal matrix (Gram–Schmidt on Gaussian rows).
fn random_orthonormal<R: Rng>(d: usize, draw: &mut R) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| draw.sample(StandardNormal)).collect();
        for r in &rows {
            let p: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (vi, ri) in v.iter_mut().zip(r) {
                *vi -= p * ri;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    rows
}

const GLYPHS: [[&str; 5]; 10] = [
    ["###", "#.#", "#.#", "#.#", "###"],
    [".#.", "##.", ".#.", ".#.", "###"],
    ["###", "..#", "###", "#..", "###"],
    ["###", "..#", ".##", "..#", "###"],
    ["#.#", "#.#", "###", "..#", "..#"],
    ["###", "#..", "###", "..#", "###"],
    ["###", "#..", "###", "#.#", "###"],
    ["###", "..#", ".#.", ".#.", ".#."],
    ["###", "#.#", "###", "#.#", "###"],
    ["###", "#.#", "###", "..#", "###"],
];

fn render_digit<R: Rng>(digit: usize, h: usize, w: usize, draw: &mut R) -> Vec<f64> {
    // glyph scaled to the canvas minus a one-pixel jitter margin
    let gh = (h - 2).max(5);
    let gw = (w - 2).max(3);
    let dy = draw.random_range(0..=(h - gh.min(h)));
    let dx = draw.random_range(0..=(w - gw.min(w)));
    let mut img = vec![0.0; h * w];
    for r in 0..gh.min(h) {
        for c in 0..gw.min(w) {
            let (sr, sc) = (r * 5 / gh, c * 3 / gw);
            if GLYPHS[digit][sr].as_bytes()[sc] == b'#' {
                img[(r + dy) * w + (c + dx)] = 1.0;
            }
        }
    }
    for px in &mut img {
        if draw.random::<f64>() < 0.05 {
            *px = 1.0 - *px;
        }
    }
    img
}
