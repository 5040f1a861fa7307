//! Brute-force reference implementations used to verify the fast paths.
//!
//! Everything here is written as plain scalar loops with no shared code
//! with the graph operations it checks. Test suites compare the production
//! implementations against these references; nothing in the training or
//! evaluation pipeline calls them.

use crate::data::LabelMask;
use crate::memory::cosine_similarity;
use ndarray::{ArrayD, IxDyn};

/// Memory read per the definition: per-pixel softmax over cosine
/// similarities to the pixel class's keys, then the weighted value sum.
/// Returns (memory style `[C_s, h, w]`, weights `[U, h, w]`).
pub fn memory_read(
    content: &ArrayD<f64>,
    mask_ds: &LabelMask,
    keys: &ArrayD<f64>,
    values: &ArrayD<f64>,
) -> (ArrayD<f64>, ArrayD<f64>) {
    let (cdim, h, w) = {
        let s = content.shape();
        (s[0], s[1], s[2])
    };
    let slots = keys.shape()[1];
    let sdim = values.shape()[2];
    let mut style = ArrayD::zeros(IxDyn(&[sdim, h, w]));
    let mut weights = ArrayD::zeros(IxDyn(&[slots, h, w]));
    for r in 0..h {
        for c in 0..w {
            let class = mask_ds.data()[(r, c)] as usize;
            let pixel: Vec<f64> = (0..cdim).map(|ch| content[[ch, r, c]]).collect();
            let sims: Vec<f64> = (0..slots)
                .map(|j| {
                    let key: Vec<f64> = (0..cdim).map(|ch| keys[[class, j, ch]]).collect();
                    cosine_similarity(&pixel, &key)
                })
                .collect();
            let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = sims.iter().map(|&s| (s - max).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for j in 0..slots {
                let wgt = exps[j] / denom;
                weights[[j, r, c]] = wgt;
                for ch in 0..sdim {
                    style[[ch, r, c]] += wgt * values[[class, j, ch]];
                }
            }
        }
    }
    (style, weights)
}

/// InfoNCE over pixel rows, sum form:
/// `-sum_i log( exp(a_i . p_i / tau) / sum_j exp(a_j . p_i / tau) )`.
pub fn info_nce(anchors: &[Vec<f64>], positives: &[Vec<f64>], tau: f64, normalize: bool) -> f64 {
    let prep = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                if normalize {
                    let n = r.iter().map(|&x| x * x).sum::<f64>().sqrt().max(1e-8);
                    r.iter().map(|&x| x / n).collect()
                } else {
                    r.clone()
                }
            })
            .collect()
    };
    let a = prep(anchors);
    let p = prep(positives);
    let dot = |x: &[f64], y: &[f64]| -> f64 { x.iter().zip(y).map(|(&u, &v)| u * v).sum() };
    let n = a.len();
    let mut loss = 0.0;
    for i in 0..n {
        let logits: Vec<f64> = (0..n).map(|j| dot(&a[j], &p[i]) / tau).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
        loss -= logits[i] - max - denom.ln();
    }
    loss
}

/// Rows of a `[C, h, w]` map in row-major pixel order.
pub fn map_rows(map: &ArrayD<f64>) -> Vec<Vec<f64>> {
    let (c, h, w) = {
        let s = map.shape();
        (s[0], s[1], s[2])
    };
    (0..h * w)
        .map(|p| (0..c).map(|ch| map[[ch, p / w, p % w]]).collect())
        .collect()
}

/// Mean absolute difference, elementwise.
pub fn mean_abs_diff(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Bilinear upsample with half-pixel centers and clamped edges, written as
/// per-pixel scalar arithmetic.
pub fn bilinear_upsample(map: &ArrayD<f64>, oh: usize, ow: usize) -> ArrayD<f64> {
    let (c, h, w) = {
        let s = map.shape();
        (s[0], s[1], s[2])
    };
    let mut out = ArrayD::zeros(IxDyn(&[c, oh, ow]));
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let sy = ((oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5)
                    .clamp(0.0, (h - 1) as f64);
                let sx = ((ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5)
                    .clamp(0.0, (w - 1) as f64);
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (wy, wx) = (sy - y0 as f64, sx - x0 as f64);
                out[[ci, oy, ox]] = map[[ci, y0, x0]] * (1.0 - wy) * (1.0 - wx)
                    + map[[ci, y0, x1]] * (1.0 - wy) * wx
                    + map[[ci, y1, x0]] * wy * (1.0 - wx)
                    + map[[ci, y1, x1]] * wy * wx;
            }
        }
    }
    out
}

/// Fréchet distance between two Gaussians with diagonal covariances,
/// evaluated per coordinate: `sum_d (mu_p - mu_q)^2 + (sqrt(v_p) - sqrt(v_q))^2`.
pub fn frechet_diagonal(mu_p: &[f64], var_p: &[f64], mu_q: &[f64], var_q: &[f64]) -> f64 {
    mu_p.iter()
        .zip(mu_q)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        + var_p
            .iter()
            .zip(var_q)
            .map(|(&a, &b)| (a.sqrt() - b.sqrt()) * (a.sqrt() - b.sqrt()))
            .sum::<f64>()
}
