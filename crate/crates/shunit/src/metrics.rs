//! Class-wise Fréchet distance (cFID) and plain FID.
//!
//! Embeddings come from the first block of the frozen extractor: the
//! feature map is bilinearly upsampled back to input resolution, then
//! pooled over each semantic region of the ground-truth mask, giving one
//! embedding per (image, class). Per class, the sets of generated and
//! reference embeddings are summarized as Gaussians and compared by
//! Fréchet distance; cFID is the mean over classes valid on both sides.
//! Global FID pools one embedding per whole image instead and coincides
//! with cFID when a single class covers everything.

use crate::data::{ImageTensor, LabelMask};
use crate::error::{Error, Result};
use crate::graph::Tape;
use crate::networks::PerceptualExtractor;
use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayD};
use std::collections::BTreeMap;

/// Sample count, mean and unbiased covariance of an embedding set.
#[derive(Clone, Debug)]
pub struct GaussianStats {
    pub count: usize,
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

impl GaussianStats {
    /// Accumulate from embedding vectors; needs at least two samples for a
    /// covariance.
    pub fn from_embeddings(vectors: &[Array1<f64>]) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::MetricUndefined(format!(
                "need >= 2 embeddings for covariance, got {}",
                vectors.len()
            )));
        }
        let n = vectors.len();
        let d = vectors[0].len();
        let mut mean = Array1::<f64>::zeros(d);
        for v in vectors {
            if v.len() != d {
                return Err(Error::shape("embedding dimension", &[d], &[v.len()]));
            }
            mean += v;
        }
        mean /= n as f64;
        let mut cov = Array2::<f64>::zeros((d, d));
        for v in vectors {
            let centered = v - &mean;
            for i in 0..d {
                for j in 0..d {
                    cov[(i, j)] += centered[i] * centered[j];
                }
            }
        }
        cov /= (n - 1) as f64;
        Ok(GaussianStats {
            count: n,
            mean,
            cov,
        })
    }
}

/// Symmetric PSD square root via eigendecomposition; tiny negative
/// eigenvalues from round-off are clamped to zero.
pub fn sqrtm_psd(mat: &Array2<f64>) -> Array2<f64> {
    let d = mat.nrows();
    let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (mat[(i, j)] + mat[(j, i)]));
    let eig = m.symmetric_eigen();
    let mut out = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                let lambda = eig.eigenvalues[k].max(0.0).sqrt();
                acc += eig.eigenvectors[(i, k)] * lambda * eig.eigenvectors[(j, k)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Fréchet distance between two Gaussians:
/// `||mu_p - mu_q||^2 + Tr(S_p + S_q - 2 (S_p S_q)^{1/2})`, with `eps * I`
/// added to both covariances before the square root. Clipped at zero.
pub fn frechet_distance(p: &GaussianStats, q: &GaussianStats, eps: f64) -> Result<f64> {
    if p.mean.len() != q.mean.len() {
        return Err(Error::shape(
            "frechet dimensions",
            &[p.mean.len()],
            &[q.mean.len()],
        ));
    }
    let d = p.mean.len();
    let mean_term: f64 = p
        .mean
        .iter()
        .zip(q.mean.iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    let mut cp = p.cov.clone();
    let mut cq = q.cov.clone();
    for i in 0..d {
        cp[(i, i)] += eps;
        cq[(i, i)] += eps;
    }
    // Tr((S_p S_q)^{1/2}) = Tr((S_p^{1/2} S_q S_p^{1/2})^{1/2}), the
    // symmetric route
    let a = sqrtm_psd(&cp);
    let inner = a.dot(&cq).dot(&a);
    let root = sqrtm_psd(&inner);
    let tr_root: f64 = (0..d).map(|i| root[(i, i)]).sum();
    let tr_p: f64 = (0..d).map(|i| p.cov[(i, i)]).sum();
    let tr_q: f64 = (0..d).map(|i| q.cov[(i, i)]).sum();
    let value = mean_term + tr_p + tr_q + 2.0 * eps * d as f64 - 2.0 * tr_root;
    if !value.is_finite() {
        return Err(Error::MetricUndefined(format!(
            "non-finite Fréchet distance (dim {d}, counts {} / {}); covariance conditioning",
            p.count, q.count
        )));
    }
    Ok(value.max(0.0))
}

/// One embedding per class present with at least `min_pixels` pixels:
/// first-block features, bilinearly upsampled to the image size, mean-pooled
/// over each semantic region.
pub fn extract_class_embeddings(
    image: &ImageTensor,
    mask: &LabelMask,
    extractor: &PerceptualExtractor,
    min_pixels: usize,
) -> BTreeMap<usize, Array1<f64>> {
    let (h, w) = image.size();
    let up = upsampled_first_block(image, extractor, h, w);
    let d = up.shape()[0];
    let mut sums: BTreeMap<usize, (Array1<f64>, usize)> = BTreeMap::new();
    for r in 0..h {
        for c in 0..w {
            let class = mask.data()[(r, c)] as usize;
            let entry = sums
                .entry(class)
                .or_insert_with(|| (Array1::zeros(d), 0usize));
            for ch in 0..d {
                entry.0[ch] += up[[ch, r, c]];
            }
            entry.1 += 1;
        }
    }
    sums.into_iter()
        .filter(|(_, (_, count))| *count >= min_pixels)
        .map(|(class, (sum, count))| (class, sum / count as f64))
        .collect()
}

fn upsampled_first_block(
    image: &ImageTensor,
    extractor: &PerceptualExtractor,
    h: usize,
    w: usize,
) -> ArrayD<f64> {
    let tape = Tape::new();
    let v = tape.constant(image.data().clone().into_dyn());
    let feat = extractor.first_block(&tape, v).bilinear_resize(h, w);
    feat.value().as_ref().clone()
}

/// Embeddings of a whole set, grouped per class.
pub type ClassEmbeddingSets = BTreeMap<usize, Vec<Array1<f64>>>;

pub fn collect_class_embeddings(
    set: &[(ImageTensor, LabelMask)],
    extractor: &PerceptualExtractor,
    min_pixels: usize,
) -> ClassEmbeddingSets {
    let mut out: ClassEmbeddingSets = BTreeMap::new();
    for (image, mask) in set {
        for (class, emb) in extract_class_embeddings(image, mask, extractor, min_pixels) {
            out.entry(class).or_default().push(emb);
        }
    }
    out
}

/// Why a class was left out of the mean.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SkipReason {
    MissingInGenerated,
    MissingInReference,
    TooFewGenerated(usize),
    TooFewReference(usize),
}

impl std::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SkipReason::MissingInGenerated => write!(f, "absent from generated set"),
            SkipReason::MissingInReference => write!(f, "absent from reference set"),
            SkipReason::TooFewGenerated(n) => write!(f, "only {n} generated embeddings"),
            SkipReason::TooFewReference(n) => write!(f, "only {n} reference embeddings"),
        }
    }
}

/// Per-class distances, skipped classes with reasons, and the mean.
#[derive(Clone, Debug)]
pub struct CfidReport {
    pub per_class: BTreeMap<usize, f64>,
    pub skipped: Vec<(usize, SkipReason)>,
    pub mean: f64,
}

impl CfidReport {
    /// Report file body: one `class_id,distance` line per valid class plus
    /// a final `mean,<value>` line.
    pub fn to_report_lines(&self) -> String {
        let mut s = String::new();
        for (class, dist) in &self.per_class {
            s.push_str(&format!("{class},{dist}\n"));
        }
        s.push_str(&format!("mean,{}\n", self.mean));
        s
    }
}

/// cFID from already-extracted embedding sets (also the hook the sampling
/// oracle tests use).
pub fn cfid_from_embeddings(
    generated: &ClassEmbeddingSets,
    reference: &ClassEmbeddingSets,
    eps: f64,
) -> Result<CfidReport> {
    let mut per_class = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut classes: Vec<usize> = generated.keys().chain(reference.keys()).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    for class in classes {
        match (generated.get(&class), reference.get(&class)) {
            (None, _) => skipped.push((class, SkipReason::MissingInGenerated)),
            (_, None) => skipped.push((class, SkipReason::MissingInReference)),
            (Some(g), Some(r)) => {
                if g.len() < 2 {
                    skipped.push((class, SkipReason::TooFewGenerated(g.len())));
                } else if r.len() < 2 {
                    skipped.push((class, SkipReason::TooFewReference(r.len())));
                } else {
                    let gp = GaussianStats::from_embeddings(g)?;
                    let rp = GaussianStats::from_embeddings(r)?;
                    per_class.insert(class, frechet_distance(&gp, &rp, eps)?);
                }
            }
        }
    }
    if per_class.is_empty() {
        return Err(Error::MetricUndefined(
            "no class is valid in both sets".into(),
        ));
    }
    let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(CfidReport {
        per_class,
        skipped,
        mean,
    })
}

/// Class-wise FID between a generated and a reference set.
pub fn cfid(
    generated: &[(ImageTensor, LabelMask)],
    reference: &[(ImageTensor, LabelMask)],
    extractor: &PerceptualExtractor,
    eps: f64,
    min_pixels: usize,
) -> Result<CfidReport> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::InvalidArgument("cfid: empty image set".into()));
    }
    let g = collect_class_embeddings(generated, extractor, min_pixels);
    let r = collect_class_embeddings(reference, extractor, min_pixels);
    cfid_from_embeddings(&g, &r, eps)
}

/// Plain FID over one spatially pooled embedding per image (same upsampled
/// first-block features as cFID, pooled globally).
pub fn global_fid(
    generated: &[(ImageTensor, LabelMask)],
    reference: &[(ImageTensor, LabelMask)],
    extractor: &PerceptualExtractor,
    eps: f64,
) -> Result<f64> {
    let pool = |set: &[(ImageTensor, LabelMask)]| -> Result<Vec<Array1<f64>>> {
        set.iter()
            .map(|(image, _)| {
                let (h, w) = image.size();
                let up = upsampled_first_block(image, extractor, h, w);
                let d = up.shape()[0];
                let mut v = Array1::zeros(d);
                for ch in 0..d {
                    let mut acc = 0.0;
                    for r in 0..h {
                        for c in 0..w {
                            acc += up[[ch, r, c]];
                        }
                    }
                    v[ch] = acc / (h * w) as f64;
                }
                Ok(v)
            })
            .collect()
    };
    let g = pool(generated)?;
    let r = pool(reference)?;
    if g.len() < 2 || r.len() < 2 {
        return Err(Error::MetricUndefined(
            "global FID needs at least 2 images per side".into(),
        ));
    }
    frechet_distance(
        &GaussianStats::from_embeddings(&g)?,
        &GaussianStats::from_embeddings(&r)?,
        eps,
    )
}
