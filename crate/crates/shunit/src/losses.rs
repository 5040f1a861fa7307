//! The training objective: reconstruction, perceptual and adversarial
//! terms, the two pixel-wise contrastive terms, and their weighted sum.
//!
//! The contrastive kernel treats every spatial position as one sample: the
//! feature at pixel `i` of the anchor map pairs with pixel `i` of the
//! positive map, and all other anchor pixels act as negatives. The
//! equations are written as sums over pixels; training normally uses the
//! mean so the loss weights stay resolution-independent (configurable).

use crate::error::{Error, Result};
use crate::graph::Var;
use indexmap::IndexMap;
use std::rc::Rc;

/// Weights of the six generator-side terms plus the contrastive
/// temperature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub self_recon: f64,
    pub cycle: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub content: f64,
    pub style: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            self_recon: 10.0,
            cycle: 10.0,
            perceptual: 1.0,
            adversarial: 1.0,
            content: 10.0,
            style: 10.0,
            tau: 0.7,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.self_recon,
            self.cycle,
            self.perceptual,
            self.adversarial,
            self.content,
            self.style,
        ];
        if all.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidArgument("loss weights must be nonnegative".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Pixel aggregation of the contrastive terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    /// As the equations are written.
    Sum,
    /// Sum divided by the pixel count; default for training.
    Mean,
}

/// Above this many pixels the negative set is subsampled (never reached at
/// desk scale).
pub const MAX_NEGATIVES: usize = 4096;

/// Options for the contrastive kernel.
#[derive(Clone, Copy, Debug)]
pub struct NceOpts {
    pub tau: f64,
    pub normalize: bool,
    pub reduction: Reduction,
}

/// Flatten `[C, h, w]` into `[h*w, C]` pixel rows.
pub fn feature_rows(map: Var<'_>) -> Var<'_> {
    let s = map.shape();
    assert_eq!(s.len(), 3, "feature_rows expects [C, h, w]");
    map.reshape(&[s[0], s[1] * s[2]]).transpose2()
}

/// InfoNCE over two equally shaped `[C, h, w]` maps.
///
/// For each pixel `i`: `-log( exp(a_i . p_i / tau) / sum_j exp(a_j . p_i / tau) )`,
/// optionally on L2-normalized pixel vectors. With more pixels than
/// [`MAX_NEGATIVES`], the negative pool is an evenly spaced subsample (the
/// positive always participates).
pub fn info_nce<'t>(
    anchors: Var<'t>,
    positives: Var<'t>,
    opts: &NceOpts,
) -> Result<Var<'t>> {
    let (sa, sp) = (anchors.shape(), positives.shape());
    if sa != sp {
        return Err(Error::shape("info_nce operands", &sa, &sp));
    }
    if sa.len() != 3 {
        return Err(Error::shape("info_nce feature map", &[0, 0, 0], &sa));
    }
    if !(opts.tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {}",
            opts.tau
        )));
    }
    let pixels = sa[1] * sa[2];
    let mut a = feature_rows(anchors);
    let mut p = feature_rows(positives);
    if opts.normalize {
        a = a.l2_normalize_rows(1e-8);
        p = p.l2_normalize_rows(1e-8);
    }

    let per_pixel_nll = if pixels <= MAX_NEGATIVES {
        // logits[i][j] = a_j . p_i / tau; row-wise softmax over j
        let logits = p.matmul(a.transpose2()).mul_scalar(1.0 / opts.tau);
        logits.log_softmax_rows().take_diag().neg()
    } else {
        // shared negative pool: evenly spaced anchor pixels
        let stride = pixels as f64 / MAX_NEGATIVES as f64;
        let pool: Vec<usize> = (0..MAX_NEGATIVES)
            .map(|k| (k as f64 * stride) as usize)
            .collect();
        let pool_rows = anchors.gather_pixels(Rc::new(pool.clone()));
        let pool_rows = if opts.normalize {
            pool_rows.l2_normalize_rows(1e-8)
        } else {
            pool_rows
        };
        let pos_logit = a.rowwise_dot(p).mul_scalar(1.0 / opts.tau); // [P]
        let neg = p.matmul(pool_rows.transpose2()).mul_scalar(1.0 / opts.tau); // [P, K]
        // mask out pool entries that coincide with the row's own positive
        let mut mask = ndarray::Array2::<f64>::zeros((pixels, pool.len()));
        for (k, &src) in pool.iter().enumerate() {
            mask[(src, k)] = -1e30;
        }
        let neg = neg.add(anchors.tape().constant(mask.into_dyn()));
        let denom = pos_logit
            .reshape(&[pixels, 1])
            .concat1(neg)
            .row_logsumexp();
        denom.sub(pos_logit)
    };
    let total = per_pixel_nll.sum_all();
    Ok(match opts.reduction {
        Reduction::Sum => total,
        Reduction::Mean => total.mul_scalar(1.0 / pixels as f64),
    })
}

/// Content contrastive term for one direction: anchors are the source
/// content, positives the content re-encoded from the translated image.
pub fn content_contrastive<'t>(
    c_src: Var<'t>,
    c_trans: Var<'t>,
    opts: &NceOpts,
) -> Result<Var<'t>> {
    info_nce(c_src, c_trans, opts)
}

/// Style contrastive term for one direction: anchors are the component
/// style, positives the memory style read back through the cycle. This is
/// the path that supervises the bank directly.
pub fn style_contrastive<'t>(
    s_comp: Var<'t>,
    s_mem: Var<'t>,
    opts: &NceOpts,
) -> Result<Var<'t>> {
    info_nce(s_comp, s_mem, opts)
}

/// Mean absolute difference between two equally shaped nodes.
pub fn reconstruction_l1<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::shape("reconstruction_l1 operands", &sa, &sb));
    }
    Ok(a.sub(b).abs_val().mean_all())
}

/// Whose objective an adversarial term belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GanSide {
    Generator,
    Discriminator,
}

/// Stabilized log-sigmoid adversarial loss over multi-scale patch logits,
/// averaged over patches and scales.
///
/// The discriminator minimizes `softplus(-real) + softplus(fake)`
/// (equivalently maximizes `log D(real) + log(1 - D(fake))`). The generator
/// by default minimizes the non-saturating `softplus(-fake)`; the written
/// `log(1 - D(fake))` form is available behind `nonsaturating = false`.
pub fn adversarial_terms<'t>(
    real_logits: &[Var<'t>],
    fake_logits: &[Var<'t>],
    side: GanSide,
    nonsaturating: bool,
) -> Result<Var<'t>> {
    if fake_logits.is_empty() {
        return Err(Error::InvalidArgument("no fake logit maps".into()));
    }
    let mean_over = |maps: &[Var<'t>], f: &dyn Fn(Var<'t>) -> Var<'t>| -> Var<'t> {
        let scaled: Vec<Var<'t>> = maps
            .iter()
            .map(|&m| f(m).mean_all().mul_scalar(1.0 / maps.len() as f64))
            .collect();
        crate::graph::sum_vars(&scaled)
    };
    match side {
        GanSide::Discriminator => {
            if real_logits.len() != fake_logits.len() {
                return Err(Error::InvalidArgument(
                    "real/fake logit scale counts differ".into(),
                ));
            }
            let real_term = mean_over(real_logits, &|m| m.neg().softplus());
            let fake_term = mean_over(fake_logits, &|m| m.softplus());
            Ok(real_term.add(fake_term))
        }
        GanSide::Generator => {
            if nonsaturating {
                Ok(mean_over(fake_logits, &|m| m.neg().softplus()))
            } else {
                // minimize log(1 - D(fake)) = -softplus(fake)
                Ok(mean_over(fake_logits, &|m| m.softplus().neg()))
            }
        }
    }
}

/// Scalar values of the six generator-side terms.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms {
    pub self_recon: f64,
    pub cycle: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub content: f64,
    pub style: f64,
}

/// Itemized losses of one step: generator terms with their weighted total,
/// and the discriminator loss with its weighted total.
#[derive(Clone, Debug, Default)]
pub struct LossReport {
    pub self_recon: f64,
    pub cycle: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub content: f64,
    pub style: f64,
    pub gen_total: f64,
    pub disc: f64,
    pub disc_total: f64,
}

impl LossReport {
    /// `(name, value)` rows in a stable order, as logged to CSV.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("self", self.self_recon),
            ("cycle", self.cycle),
            ("perc", self.perceptual),
            ("adv", self.adversarial),
            ("content", self.content),
            ("style", self.style),
            ("gen_total", self.gen_total),
            ("disc", self.disc),
            ("disc_total", self.disc_total),
        ]
    }

    pub fn map(&self) -> IndexMap<&'static str, f64> {
        self.entries().into_iter().collect()
    }
}

/// Weighted total of the generator objective. Any non-finite term is an
/// error naming the term.
pub fn total_loss(terms: &LossTerms, weights: &LossWeights) -> Result<LossReport> {
    let named = [
        ("self", terms.self_recon),
        ("cycle", terms.cycle),
        ("perc", terms.perceptual),
        ("adv", terms.adversarial),
        ("content", terms.content),
        ("style", terms.style),
    ];
    for (name, value) in named {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                term: name.to_string(),
                iteration: 0,
            });
        }
    }
    let gen_total = weights.self_recon * terms.self_recon
        + weights.cycle * terms.cycle
        + weights.perceptual * terms.perceptual
        + weights.adversarial * terms.adversarial
        + weights.content * terms.content
        + weights.style * terms.style;
    Ok(LossReport {
        self_recon: terms.self_recon,
        cycle: terms.cycle,
        perceptual: terms.perceptual,
        adversarial: terms.adversarial,
        content: terms.content,
        style: terms.style,
        gen_total,
        disc: 0.0,
        disc_total: 0.0,
    })
}
