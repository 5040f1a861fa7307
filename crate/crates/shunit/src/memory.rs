//! Class-wise key-value style memory.
//!
//! Each domain owns a bank of `N x U` learnable (key, value) vector pairs.
//! A read separates the content feature map by the label, matches each
//! pixel's content vector against its class's keys by cosine similarity,
//! softmaxes the similarities over the U slots and returns the weighted sum
//! of that class's value vectors. Pixels of one class never consult another
//! class's slots.
//!
//! The bank is normally trained by backpropagation through the read. The
//! legacy update mechanism (moving slots toward attention-weighted input
//! features, with no gradient flow) is kept for the ablation baseline.

use crate::data::{Domain, LabelMask};
use crate::error::{Error, Result};
use crate::graph::{Tape, Var};
use crate::params::normal_init;
use ndarray::{Array2, ArrayD, Axis, Ix3};
use rand_chacha::ChaCha12Rng;
use std::rc::Rc;

/// How a bank learns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemoryMode {
    /// Slots are ordinary parameters, updated by the optimizer.
    Backprop,
    /// Slots are detached from the graph and moved by [`legacy_update`].
    Update,
}

impl MemoryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MemoryMode::Backprop => "backprop",
            MemoryMode::Update => "update",
        }
    }
}

/// Per-domain style memory: keys `[N, U, C_content]`, values
/// `[N, U, C_style]`.
#[derive(Clone, Debug)]
pub struct MemoryBank {
    pub keys: ArrayD<f64>,
    pub values: ArrayD<f64>,
    pub domain: Domain,
    pub mode: MemoryMode,
}

impl MemoryBank {
    pub fn init(
        rng: &mut ChaCha12Rng,
        domain: Domain,
        num_classes: usize,
        slots: usize,
        content_dim: usize,
        style_dim: usize,
        mode: MemoryMode,
    ) -> Result<Self> {
        if slots == 0 {
            return Err(Error::EmptyMemory);
        }
        Ok(MemoryBank {
            keys: normal_init(rng, &[num_classes, slots, content_dim], 0.02),
            values: normal_init(rng, &[num_classes, slots, style_dim], 0.02),
            domain,
            mode,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.keys.shape()[0]
    }

    pub fn slots(&self) -> usize {
        self.keys.shape()[1]
    }

    pub fn content_dim(&self) -> usize {
        self.keys.shape()[2]
    }

    pub fn style_dim(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots() == 0 {
            return Err(Error::EmptyMemory);
        }
        if self.keys.iter().chain(self.values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("memory bank holds non-finite values".into()));
        }
        Ok(())
    }

    /// Read the bank on a fresh tape; convenient for inspection and tests.
    /// In `Update` mode the bank binds as a constant, so no gradient can
    /// reach it.
    pub fn read<'t>(
        &self,
        tape: &'t Tape,
        content: Var<'t>,
        mask_ds: &LabelMask,
    ) -> Result<ReadResult<'t>> {
        let (keys, values) = match self.mode {
            MemoryMode::Backprop => (tape.leaf(self.keys.clone()), tape.leaf(self.values.clone())),
            MemoryMode::Update => (
                tape.constant(self.keys.clone()),
                tape.constant(self.values.clone()),
            ),
        };
        read(content, mask_ds, keys, values)
    }
}

/// Result of one memory read.
pub struct ReadResult<'t> {
    /// Memory style `[C_style, h, w]`.
    pub memory_style: Var<'t>,
    /// Per-pixel attention over the slots of that pixel's class, `[U, h, w]`.
    pub weights: Var<'t>,
}

/// Cosine similarity with the norms floored at `eps = 1e-8`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine_similarity: length mismatch");
    let eps = 1e-8;
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na: f64 = a.iter().map(|&x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x * x).sum::<f64>().sqrt();
    dot / (na.max(eps) * nb.max(eps))
}

/// Flattened pixel indices of each class, in row-major scan order.
pub fn class_pixel_indices(mask: &LabelMask, num_classes: usize) -> Vec<Vec<usize>> {
    let (h, w) = mask.size();
    let mut buckets = vec![Vec::new(); num_classes];
    for r in 0..h {
        for c in 0..w {
            buckets[mask.data()[(r, c)] as usize].push(r * w + c);
        }
    }
    buckets
}

/// Differentiable memory read from bound key/value nodes.
///
/// For each pixel `i` of class `n`, the attention over slot `j` is
/// `softmax_j cos(c_i, k_{n,j})` and the output is the weighted sum of the
/// class-`n` values. Gradients flow into the content feature, the keys and
/// the values.
pub fn read<'t>(
    content: Var<'t>,
    mask_ds: &LabelMask,
    keys: Var<'t>,
    values: Var<'t>,
) -> Result<ReadResult<'t>> {
    let cshape = content.shape();
    if cshape.len() != 3 {
        return Err(Error::shape("memory read content", &[0, 0, 0], &cshape));
    }
    let (h, w) = (cshape[1], cshape[2]);
    if mask_ds.size() != (h, w) {
        return Err(Error::shape(
            "memory read mask",
            &[h, w],
            &[mask_ds.size().0, mask_ds.size().1],
        ));
    }
    let kshape = keys.shape();
    let vshape = values.shape();
    let num_classes = kshape[0];
    let slots = kshape[1];
    if slots == 0 {
        return Err(Error::EmptyMemory);
    }
    if kshape[2] != cshape[0] {
        return Err(Error::shape("memory key width", &[cshape[0]], &[kshape[2]]));
    }
    if let Some(&m) = mask_ds.data().iter().max() {
        if (m as usize) >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "mask class {m} exceeds bank classes {num_classes}"
            )));
        }
    }
    let style_dim = vshape[2];

    let buckets = class_pixel_indices(mask_ds, num_classes);
    let mut style_parts: Vec<Var<'t>> = Vec::new();
    let mut weight_parts: Vec<Var<'t>> = Vec::new();
    for (class, indices) in buckets.iter().enumerate() {
        if indices.is_empty() {
            continue;
        }
        let idx = Rc::new(indices.clone());
        let pixels = content.gather_pixels(Rc::clone(&idx)); // [P, C_c]
        let keys_n = keys.index_axis0(class); // [U, C_c]
        let sims = pixels
            .l2_normalize_rows(1e-8)
            .matmul(keys_n.l2_normalize_rows(1e-8).transpose2()); // [P, U]
        let attn = sims.softmax_rows();
        let values_n = values.index_axis0(class); // [U, C_s]
        let styled = attn.matmul(values_n); // [P, C_s]
        style_parts.push(styled.scatter_pixels(Rc::clone(&idx), h, w));
        weight_parts.push(attn.scatter_pixels(idx, h, w));
    }
    // the class buckets partition the pixels, so the parts sum disjointly
    let memory_style = crate::graph::sum_vars(&style_parts);
    let weights = crate::graph::sum_vars(&weight_parts);
    debug_assert_eq!(memory_style.shape(), vec![style_dim, h, w]);
    Ok(ReadResult {
        memory_style,
        weights,
    })
}

/// Move keys and values toward the attention-weighted input features, with
/// no gradient flow (ablation baseline). `rate = 0` leaves the bank
/// unchanged, `rate = 1` replaces reachable slots outright.
pub fn legacy_update(
    bank: &mut MemoryBank,
    content: &ArrayD<f64>,
    style: &ArrayD<f64>,
    mask_ds: &LabelMask,
    rate: f64,
) -> Result<()> {
    if bank.mode != MemoryMode::Update {
        return Err(Error::MemoryMode {
            required: "update",
            actual: bank.mode.as_str(),
        });
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "update rate {rate} outside [0, 1]"
        )));
    }
    if rate == 0.0 {
        return Ok(());
    }
    let (h, w) = mask_ds.size();
    let cdim = bank.content_dim();
    let sdim = bank.style_dim();
    let slots = bank.slots();
    if content.shape() != [cdim, h, w] {
        return Err(Error::shape("legacy_update content", &[cdim, h, w], content.shape()));
    }
    if style.shape() != [sdim, h, w] {
        return Err(Error::shape("legacy_update style", &[sdim, h, w], style.shape()));
    }

    let cflat = content.as_slice().expect("standard layout");
    let sflat = style.as_slice().expect("standard layout");
    let pixel_content =
        |pix: usize| -> Vec<f64> { (0..cdim).map(|ch| cflat[ch * h * w + pix]).collect() };
    let pixel_style =
        |pix: usize| -> Vec<f64> { (0..sdim).map(|ch| sflat[ch * h * w + pix]).collect() };

    let buckets = class_pixel_indices(mask_ds, bank.num_classes());
    let mut keys = bank
        .keys
        .view_mut()
        .into_dimensionality::<Ix3>()
        .expect("keys 3-d");
    let mut values = bank
        .values
        .view_mut()
        .into_dimensionality::<Ix3>()
        .expect("values 3-d");
    for (class, indices) in buckets.iter().enumerate() {
        if indices.is_empty() {
            continue;
        }
        // attention of every pixel of this class over the class slots
        let mut attn = Array2::zeros((indices.len(), slots));
        for (row, &pix) in indices.iter().enumerate() {
            let c = pixel_content(pix);
            let mut logits: Vec<f64> = (0..slots)
                .map(|j| {
                    cosine_similarity(&c, keys.index_axis(Axis(0), class).row(j).as_slice().unwrap())
                })
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            logits.iter_mut().for_each(|l| *l = (*l - max).exp());
            let sum: f64 = logits.iter().sum();
            for j in 0..slots {
                attn[(row, j)] = logits[j] / sum;
            }
        }
        for j in 0..slots {
            let total: f64 = (0..indices.len()).map(|r| attn[(r, j)]).sum();
            if total <= 0.0 {
                continue;
            }
            let mut key_target = vec![0.0; cdim];
            let mut value_target = vec![0.0; sdim];
            for (row, &pix) in indices.iter().enumerate() {
                let wgt = attn[(row, j)] / total;
                for (t, v) in key_target.iter_mut().zip(pixel_content(pix)) {
                    *t += wgt * v;
                }
                for (t, v) in value_target.iter_mut().zip(pixel_style(pix)) {
                    *t += wgt * v;
                }
            }
            for (ch, t) in key_target.iter().enumerate() {
                let k = &mut keys[(class, j, ch)];
                *k = (1.0 - rate) * *k + rate * t;
            }
            for (ch, t) in value_target.iter().enumerate() {
                let v = &mut values[(class, j, ch)];
                *v = (1.0 - rate) * *v + rate * t;
            }
        }
    }
    Ok(())
}
