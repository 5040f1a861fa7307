//! Dual-direction adversarial training: discriminator step, then a joint
//! generator step over encoders, generators, memories and alphas, for both
//! translation directions at once. Also owns checkpointing and the
//! ablation switches (memory mode, L1-vs-contrastive, loss toggles).

use crate::config::{PerceptualChoice, RunConfig};
use crate::data::{downsample_mask, one_hot, Domain, DomainSample, ImageTensor, LabelMask};
use crate::encoders::{encode_content, encode_style, init_content_encoder, init_style_encoder};
use crate::error::{Error, Result};
use crate::graph::{Tape, Var};
use crate::losses::{
    adversarial_terms, info_nce, reconstruction_l1, total_loss, GanSide, LossReport, LossTerms,
    NceOpts,
};
use crate::memory::{legacy_update, read, MemoryBank, MemoryMode};
use crate::networks::{
    discriminate, generate, init_discriminator, init_generator, read_array, read_string,
    read_u32, read_u64, write_array, write_string, PercLayer, PerceptualExtractor,
};
use crate::optim::Adam;
use crate::params::{normal_init, ParamStore, Session};
use indexmap::IndexMap;
use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;

/// Translation direction at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    XtoY,
    YtoX,
}

impl Direction {
    pub fn source(self) -> Domain {
        match self {
            Direction::XtoY => Domain::X,
            Direction::YtoX => Domain::Y,
        }
    }

    pub fn target(self) -> Domain {
        self.source().other()
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "x2y" | "X2Y" | "xy" => Ok(Direction::XtoY),
            "y2x" | "Y2X" | "yx" => Ok(Direction::YtoX),
            other => Err(Error::InvalidArgument(format!(
                "unknown direction `{other}` (use x2y or y2x)"
            ))),
        }
    }
}

/// Whether a parameter belongs to the generator-side optimizer group. The
/// memory joins only in backprop mode.
pub fn is_gen_param(name: &str, memory_mode: MemoryMode) -> bool {
    name.starts_with("enc_c.")
        || name.starts_with("enc_s.")
        || name.starts_with("gen.")
        || (memory_mode == MemoryMode::Backprop && name.starts_with("memory."))
}

pub fn is_disc_param(name: &str) -> bool {
    name.starts_with("disc.")
}

/// Everything a run mutates: parameters, frozen extractor, optimizer
/// moments, iteration counter and the data-sampling RNG.
pub struct TrainState {
    pub run: RunConfig,
    config_text: String,
    pub store: ParamStore,
    pub perc: PerceptualExtractor,
    pub gen_opt: Adam,
    pub disc_opt: Adam,
    pub iteration: u64,
    data_rng: ChaCha12Rng,
    last_memory_grad_norms: Option<(f64, f64)>,
    last_gen_grad_norms: IndexMap<String, f64>,
}

impl TrainState {
    /// Initialize all parameters from the run seed, in a fixed order.
    pub fn init(run: &RunConfig) -> Result<Self> {
        run.validate()?;
        let cfg = run.model();
        let mut rng = ChaCha12Rng::seed_from_u64(run.seed);
        let mut store = ParamStore::new();
        for domain in [Domain::X, Domain::Y] {
            init_content_encoder(&mut store, &mut rng, &cfg, domain);
            init_style_encoder(&mut store, &mut rng, &cfg, domain);
        }
        for domain in [Domain::X, Domain::Y] {
            init_generator(&mut store, &mut rng, &cfg, domain);
        }
        for domain in [Domain::X, Domain::Y] {
            init_discriminator(&mut store, &mut rng, &cfg, domain);
        }
        for domain in [Domain::X, Domain::Y] {
            let d = domain.as_str();
            store.insert(
                format!("memory.{d}.keys"),
                normal_init(
                    &mut rng,
                    &[cfg.num_classes, cfg.slots_per_class, cfg.content_channels()],
                    0.02,
                ),
            );
            store.insert(
                format!("memory.{d}.values"),
                normal_init(
                    &mut rng,
                    &[cfg.num_classes, cfg.slots_per_class, cfg.style_channels()],
                    0.02,
                ),
            );
        }
        let perc = match &run.perceptual {
            PerceptualChoice::FrozenRandom => PerceptualExtractor::frozen_random(run.perc_seed),
            PerceptualChoice::File(path) => PerceptualExtractor::from_file(path)?,
        };
        // the frozen extractor's arrays live in the store too (shared
        // allocations), so checkpoints carry them under `perc.*` names
        for (i, layer) in perc.layers().iter().enumerate() {
            store.insert_shared(format!("perc.l{i}.w"), Rc::clone(&layer.weight));
            store.insert_shared(format!("perc.l{i}.b"), Rc::clone(&layer.bias));
        }
        let data_rng = ChaCha12Rng::seed_from_u64(run.seed.wrapping_add(0x9e3779b97f4a7c15));
        Ok(TrainState {
            config_text: run.canonical(),
            run: run.clone(),
            store,
            perc,
            gen_opt: Adam::new(run.lr, run.beta1, run.beta2, run.weight_decay),
            disc_opt: Adam::new(run.lr, run.beta1, run.beta2, run.weight_decay),
            iteration: 0,
            data_rng,
            last_memory_grad_norms: None,
            last_gen_grad_norms: IndexMap::new(),
        })
    }

    /// Per-parameter gradient L2 norms of the most recent generator step.
    pub fn last_gen_grad_norms(&self) -> &IndexMap<String, f64> {
        &self.last_gen_grad_norms
    }

    /// L2 norms of the gradients that reached the memory keys and values
    /// (both domains pooled) in the most recent generator step. Exactly
    /// `(0, 0)` in update mode, where the banks are detached.
    pub fn last_memory_grad_norms(&self) -> Option<(f64, f64)> {
        self.last_memory_grad_norms
    }

    fn session<'t, 's>(&'s self, tape: &'t Tape) -> Session<'t, 's> {
        let sess = Session::new(tape, &self.store).freeze_prefix("perc.");
        match self.run.memory_mode {
            MemoryMode::Update => sess.freeze_prefix("memory."),
            MemoryMode::Backprop => sess,
        }
    }

    /// One full training iteration: discriminator update on the adversarial
    /// term with generators frozen, then a joint generator-side update on
    /// the total objective with discriminators frozen.
    pub fn train_step(
        &mut self,
        batch_x: &[DomainSample],
        batch_y: &[DomainSample],
    ) -> Result<LossReport> {
        if batch_x.is_empty() || batch_x.len() != batch_y.len() {
            return Err(Error::InvalidArgument(
                "train_step needs equally sized non-empty batches".into(),
            ));
        }
        let disc = self.discriminator_step(batch_x, batch_y)?;
        let mut report = self.generator_step(batch_x, batch_y)?;
        report.disc = disc;
        report.disc_total = self.run.w_adv * disc;
        self.iteration += 1;
        Ok(report)
    }

    /// Update the discriminators on the adversarial term, generators
    /// frozen. Returns the unweighted discriminator loss.
    pub fn discriminator_step(
        &mut self,
        batch_x: &[DomainSample],
        batch_y: &[DomainSample],
    ) -> Result<f64> {
        let tape = Tape::new();
        let sess = self.session(&tape);
        let cfg = self.run.model();
        let inv_b = 1.0 / batch_x.len() as f64;
        let mut losses: Vec<Var<'_>> = Vec::new();
        for (sx, sy) in batch_x.iter().zip(batch_y) {
            let ex = EncodedSample::encode(&sess, &self.run, sx)?;
            let ey = EncodedSample::encode(&sess, &self.run, sy)?;
            let fake_y = translate_encoded(&sess, &self.run, &ex, Domain::Y)?;
            let fake_x = translate_encoded(&sess, &self.run, &ey, Domain::X)?;
            for (domain, real, fake) in [
                (Domain::X, ex.image, fake_x),
                (Domain::Y, ey.image, fake_y),
            ] {
                let real_logits = discriminate(&sess, &cfg, domain, real)?;
                let fake_logits = discriminate(&sess, &cfg, domain, fake.detach())?;
                losses.push(
                    adversarial_terms(
                        &real_logits,
                        &fake_logits,
                        GanSide::Discriminator,
                        self.run.gan_nonsaturating,
                    )?
                    .mul_scalar(inv_b),
                );
            }
        }
        let disc_loss = crate::graph::sum_vars(&losses);
        let value = disc_loss.scalar();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                term: "disc".into(),
                iteration: self.iteration,
            });
        }
        let objective = disc_loss.mul_scalar(self.run.w_adv);
        let grads = tape.backward(objective);
        let collected = sess.collect_grads(&grads, is_disc_param);
        let clip = self.clip();
        self.disc_opt.step(&mut self.store, &collected, clip)?;
        Ok(value)
    }

    /// Update encoders, generators, alphas and (in backprop mode) the
    /// memory banks jointly on the full objective, discriminators frozen.
    pub fn generator_step(
        &mut self,
        batch_x: &[DomainSample],
        batch_y: &[DomainSample],
    ) -> Result<LossReport> {
        let tape = Tape::new();
        let sess = self.session(&tape);
        let weights = self.run.loss_weights();
        let inv_b = 1.0 / batch_x.len() as f64;
        let mut acc = TermAccumulator::default();
        // feature snapshots for the legacy memory update
        let mut update_feats: Vec<(FeatureSnapshot, FeatureSnapshot)> = Vec::new();

        for (sx, sy) in batch_x.iter().zip(batch_y) {
            let ex = EncodedSample::encode(&sess, &self.run, sx)?;
            let ey = EncodedSample::encode(&sess, &self.run, sy)?;
            let pair = forward_pair(&sess, &self.run, &self.perc, &ex, &ey)?;
            acc.add(&pair, inv_b);
            if self.run.memory_mode == MemoryMode::Update {
                update_feats.push((ex.snapshot(), ey.snapshot()));
            }
        }

        let report = total_loss(&acc.values(), &weights).map_err(|e| match e {
            Error::NonFinite { term, .. } => Error::NonFinite {
                term,
                iteration: self.iteration,
            },
            other => other,
        })?;
        let objective = acc.weighted_total(&weights, &tape);
        let grads = tape.backward(objective);
        let mode = self.run.memory_mode;
        let collected = sess.collect_grads(&grads, |n| is_gen_param(n, mode));
        let sq = |names: [&str; 2]| -> f64 {
            names
                .iter()
                .filter_map(|n| collected.get(*n))
                .map(|g| g.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt()
        };
        self.last_memory_grad_norms = Some((
            sq(["memory.x.keys", "memory.y.keys"]),
            sq(["memory.x.values", "memory.y.values"]),
        ));
        self.last_gen_grad_norms = collected
            .iter()
            .map(|(name, g)| {
                (name.clone(), g.iter().map(|v| v * v).sum::<f64>().sqrt())
            })
            .collect();
        let clip = self.clip();
        self.gen_opt.step(&mut self.store, &collected, clip)?;

        if mode == MemoryMode::Update {
            for (fx, fy) in update_feats {
                self.apply_legacy_update(Domain::X, &fx)?;
                self.apply_legacy_update(Domain::Y, &fy)?;
            }
        }
        Ok(report)
    }

    fn clip(&self) -> Option<f64> {
        (self.run.grad_clip > 0.0).then_some(self.run.grad_clip)
    }

    fn apply_legacy_update(&mut self, domain: Domain, snap: &FeatureSnapshot) -> Result<()> {
        let d = domain.as_str();
        let mut bank = MemoryBank {
            keys: self.store.get(&format!("memory.{d}.keys"))?.as_ref().clone(),
            values: self
                .store
                .get(&format!("memory.{d}.values"))?
                .as_ref()
                .clone(),
            domain,
            mode: MemoryMode::Update,
        };
        legacy_update(
            &mut bank,
            &snap.content,
            &snap.style,
            &snap.mask_ds,
            self.run.memory_update_rate,
        )?;
        self.store.set(&format!("memory.{d}.keys"), bank.keys)?;
        self.store.set(&format!("memory.{d}.values"), bank.values)?;
        Ok(())
    }

    /// Full inference pipeline: encode with the source-domain encoders,
    /// read the target bank, decode with the target generator. Pure.
    pub fn translate(&self, sample: &DomainSample, direction: Direction) -> Result<ImageTensor> {
        if direction.source() != sample.domain {
            return Err(Error::InvalidArgument(format!(
                "sample is domain {:?} but direction starts at {:?}",
                sample.domain,
                direction.source()
            )));
        }
        let tape = Tape::new();
        let sess = self.session(&tape);
        let encoded = EncodedSample::encode(&sess, &self.run, sample)?;
        let out = translate_encoded(&sess, &self.run, &encoded, direction.target())?;
        let data = out
            .value()
            .as_ref()
            .clone()
            .into_dimensionality::<ndarray::Ix3>()
            .expect("image rank");
        ImageTensor::new(data)
    }

    /// Per-layer, per-class sigmoid(alpha) table:
    /// `(generator domain, layer index, class alphas)`.
    pub fn alpha_table(&self) -> Result<Vec<(Domain, usize, Vec<f64>)>> {
        let mut rows = Vec::new();
        for domain in [Domain::X, Domain::Y] {
            let d = domain.as_str();
            for layer in 0..2 * crate::networks::NUM_SH_BLOCKS {
                let raw = self.store.get(&format!("gen.{d}.shl{layer}.alpha_raw"))?;
                let alphas = raw.iter().map(|&r| 1.0 / (1.0 + (-r).exp())).collect();
                rows.push((domain, layer, alphas));
            }
        }
        Ok(rows)
    }

    /// Frobenius norms of each bank's keys and values.
    pub fn memory_norms(&self) -> Result<Vec<(Domain, f64, f64)>> {
        let norm = |a: &ArrayD<f64>| a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut rows = Vec::new();
        for domain in [Domain::X, Domain::Y] {
            let d = domain.as_str();
            rows.push((
                domain,
                norm(self.store.get(&format!("memory.{d}.keys"))?),
                norm(self.store.get(&format!("memory.{d}.values"))?),
            ));
        }
        Ok(rows)
    }

    /// Draw one batch of sample indices for each domain.
    pub fn sample_batch(&mut self, len_x: usize, len_y: usize) -> (Vec<usize>, Vec<usize>) {
        let b = self.run.batch_size;
        let ix = (0..b).map(|_| self.data_rng.random_range(0..len_x)).collect();
        let iy = (0..b).map(|_| self.data_rng.random_range(0..len_y)).collect();
        (ix, iy)
    }
}

/// Encoded views of one sample bound to the current tape.
struct EncodedSample<'t> {
    image: Var<'t>,
    content: Var<'t>,
    style: Var<'t>,
    onehot: ArrayD<f64>,
    mask_ds: LabelMask,
}

impl<'t> EncodedSample<'t> {
    fn encode(sess: &Session<'t, '_>, run: &RunConfig, sample: &DomainSample) -> Result<Self> {
        let cfg = run.model();
        if sample
            .mask
            .present_classes()
            .iter()
            .any(|&c| c >= run.num_classes)
        {
            return Err(Error::InvalidArgument(format!(
                "mask of `{}` holds a class outside 0..{}",
                sample.name, run.num_classes
            )));
        }
        let oh = one_hot(&sample.mask, run.num_classes).into_dyn();
        let mask_ds = downsample_mask(&sample.mask, 4)?;
        let image = sess.tape().constant(sample.image.data().clone().into_dyn());
        let onehot_var = sess.tape().constant(oh.clone());
        let content = encode_content(sess, &cfg, sample.domain, image, onehot_var)?;
        let style = encode_style(sess, &cfg, sample.domain, image)?;
        Ok(EncodedSample {
            image,
            content,
            style,
            onehot: oh,
            mask_ds,
        })
    }

    fn snapshot(&self) -> FeatureSnapshot {
        FeatureSnapshot {
            content: self.content.value().as_ref().clone(),
            style: self.style.value().as_ref().clone(),
            mask_ds: self.mask_ds.clone(),
        }
    }
}

struct FeatureSnapshot {
    content: ArrayD<f64>,
    style: ArrayD<f64>,
    mask_ds: LabelMask,
}

/// Read the target bank with the source content and decode the translated
/// image in the target domain.
fn translate_encoded<'t>(
    sess: &Session<'t, '_>,
    run: &RunConfig,
    src: &EncodedSample<'t>,
    target: Domain,
) -> Result<Var<'t>> {
    let cfg = run.model();
    let t = target.as_str();
    let mem = read(
        src.content,
        &src.mask_ds,
        sess.param(&format!("memory.{t}.keys"))?,
        sess.param(&format!("memory.{t}.values"))?,
    )?;
    generate(
        sess,
        &cfg,
        target,
        src.content,
        src.style,
        mem.memory_style,
        &src.mask_ds,
    )
}

/// All per-pair loss terms of the generator objective, as graph nodes.
struct PairTerms<'t> {
    self_recon: Var<'t>,
    cycle: Var<'t>,
    perceptual: Option<Var<'t>>,
    adversarial: Option<Var<'t>>,
    content: Option<Var<'t>>,
    style: Option<Var<'t>>,
}

/// Forward both translation directions for one (x, y) pair and assemble
/// every enabled loss term. Terms whose weight is zero are skipped
/// entirely, so they contribute no gradient at all.
fn forward_pair<'t>(
    sess: &Session<'t, '_>,
    run: &RunConfig,
    perc: &PerceptualExtractor,
    ex: &EncodedSample<'t>,
    ey: &EncodedSample<'t>,
) -> Result<PairTerms<'t>> {
    let cfg = run.model();
    let tape = sess.tape();
    let nce = NceOpts {
        tau: run.tau,
        normalize: run.nce_normalize,
        reduction: run.contrastive_reduction,
    };

    // same-domain reads and self-reconstruction
    let mem_xx = read(
        ex.content,
        &ex.mask_ds,
        sess.param("memory.x.keys")?,
        sess.param("memory.x.values")?,
    )?;
    let self_x = generate(sess, &cfg, Domain::X, ex.content, ex.style, mem_xx.memory_style, &ex.mask_ds)?;
    let mem_yy = read(
        ey.content,
        &ey.mask_ds,
        sess.param("memory.y.keys")?,
        sess.param("memory.y.values")?,
    )?;
    let self_y = generate(sess, &cfg, Domain::Y, ey.content, ey.style, mem_yy.memory_style, &ey.mask_ds)?;
    let self_recon = reconstruction_l1(ex.image, self_x)?.add(reconstruction_l1(ey.image, self_y)?);

    // cross-domain translation
    let fake_y = translate_encoded(sess, run, ex, Domain::Y)?;
    let fake_x = translate_encoded(sess, run, ey, Domain::X)?;

    // re-encode the translations with the target-domain encoders; the
    // translated image keeps the source layout, so it pairs with the
    // source labels
    let oh_x = tape.constant(ex.onehot.clone());
    let oh_y = tape.constant(ey.onehot.clone());
    let c_hat_y = encode_content(sess, &cfg, Domain::Y, fake_y, oh_x)?;
    let s_hat_y = encode_style(sess, &cfg, Domain::Y, fake_y)?;
    let c_hat_x = encode_content(sess, &cfg, Domain::X, fake_x, oh_y)?;
    let s_hat_x = encode_style(sess, &cfg, Domain::X, fake_x)?;

    // cycle back with memory styles read from the original domains
    let mem_cyc_x = read(
        c_hat_y,
        &ex.mask_ds,
        sess.param("memory.x.keys")?,
        sess.param("memory.x.values")?,
    )?;
    let cyc_x = generate(sess, &cfg, Domain::X, c_hat_y, s_hat_y, mem_cyc_x.memory_style, &ex.mask_ds)?;
    let mem_cyc_y = read(
        c_hat_x,
        &ey.mask_ds,
        sess.param("memory.y.keys")?,
        sess.param("memory.y.values")?,
    )?;
    let cyc_y = generate(sess, &cfg, Domain::Y, c_hat_x, s_hat_x, mem_cyc_y.memory_style, &ey.mask_ds)?;
    let cycle = reconstruction_l1(ex.image, cyc_x)?.add(reconstruction_l1(ey.image, cyc_y)?);

    let perceptual = if run.w_perc > 0.0 {
        let t1 = reconstruction_l1(perc.features(tape, ex.image), perc.features(tape, fake_y))?;
        let t2 = reconstruction_l1(perc.features(tape, ey.image), perc.features(tape, fake_x))?;
        Some(t1.add(t2))
    } else {
        None
    };

    let adversarial = if run.w_adv > 0.0 {
        let logits_y = discriminate(sess, &cfg, Domain::Y, fake_y)?;
        let logits_x = discriminate(sess, &cfg, Domain::X, fake_x)?;
        let ty = adversarial_terms(&[], &logits_y, GanSide::Generator, run.gan_nonsaturating)?;
        let tx = adversarial_terms(&[], &logits_x, GanSide::Generator, run.gan_nonsaturating)?;
        Some(ty.add(tx))
    } else {
        None
    };

    let content = if run.w_content > 0.0 {
        Some(if run.l1_mode {
            reconstruction_l1(ex.content, c_hat_y)?.add(reconstruction_l1(ey.content, c_hat_x)?)
        } else {
            info_nce(ex.content, c_hat_y, &nce)?.add(info_nce(ey.content, c_hat_x, &nce)?)
        })
    } else {
        None
    };

    // the memory style read back during the cycle is per-pixel aligned
    // with the same-domain component style
    let style = if run.w_style > 0.0 {
        Some(if run.l1_mode {
            reconstruction_l1(ex.style, mem_cyc_x.memory_style)?
                .add(reconstruction_l1(ey.style, mem_cyc_y.memory_style)?)
        } else {
            info_nce(ex.style, mem_cyc_x.memory_style, &nce)?
                .add(info_nce(ey.style, mem_cyc_y.memory_style, &nce)?)
        })
    } else {
        None
    };

    Ok(PairTerms {
        self_recon,
        cycle,
        perceptual,
        adversarial,
        content,
        style,
    })
}

/// Batch-averaged term nodes.
#[derive(Default)]
struct TermAccumulator<'t> {
    self_recon: Vec<Var<'t>>,
    cycle: Vec<Var<'t>>,
    perceptual: Vec<Var<'t>>,
    adversarial: Vec<Var<'t>>,
    content: Vec<Var<'t>>,
    style: Vec<Var<'t>>,
}

impl<'t> TermAccumulator<'t> {
    fn add(&mut self, pair: &PairTerms<'t>, inv_b: f64) {
        self.self_recon.push(pair.self_recon.mul_scalar(inv_b));
        self.cycle.push(pair.cycle.mul_scalar(inv_b));
        if let Some(v) = pair.perceptual {
            self.perceptual.push(v.mul_scalar(inv_b));
        }
        if let Some(v) = pair.adversarial {
            self.adversarial.push(v.mul_scalar(inv_b));
        }
        if let Some(v) = pair.content {
            self.content.push(v.mul_scalar(inv_b));
        }
        if let Some(v) = pair.style {
            self.style.push(v.mul_scalar(inv_b));
        }
    }

    fn term(vars: &[Var<'t>]) -> Option<Var<'t>> {
        (!vars.is_empty()).then(|| crate::graph::sum_vars(vars))
    }

    fn values(&self) -> LossTerms {
        let val = |vars: &[Var<'t>]| Self::term(vars).map(|v| v.scalar()).unwrap_or(0.0);
        LossTerms {
            self_recon: val(&self.self_recon),
            cycle: val(&self.cycle),
            perceptual: val(&self.perceptual),
            adversarial: val(&self.adversarial),
            content: val(&self.content),
            style: val(&self.style),
        }
    }

    fn weighted_total(&self, w: &crate::losses::LossWeights, tape: &'t Tape) -> Var<'t> {
        let mut parts: Vec<Var<'t>> = Vec::new();
        let mut push = |term: Option<Var<'t>>, weight: f64| {
            if let Some(v) = term {
                if weight > 0.0 {
                    parts.push(v.mul_scalar(weight));
                }
            }
        };
        push(Self::term(&self.self_recon), w.self_recon);
        push(Self::term(&self.cycle), w.cycle);
        push(Self::term(&self.perceptual), w.perceptual);
        push(Self::term(&self.adversarial), w.adversarial);
        push(Self::term(&self.content), w.content);
        push(Self::term(&self.style), w.style);
        if parts.is_empty() {
            return tape.constant(ArrayD::zeros(ndarray::IxDyn(&[])));
        }
        crate::graph::sum_vars(&parts)
    }
}

const CKPT_MAGIC: &[u8; 4] = b"SHCK";
const CKPT_VERSION: u32 = 1;

/// Serialize the full state. Byte-identical across save/load/save.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CKPT_MAGIC)?;
    f.write_all(&CKPT_VERSION.to_le_bytes())?;
    f.write_all(&state.iteration.to_le_bytes())?;
    f.write_all(&state.data_rng.get_seed())?;
    let pos: u128 = state.data_rng.get_word_pos();
    f.write_all(&(pos as u64).to_le_bytes())?;
    f.write_all(&((pos >> 64) as u64).to_le_bytes())?;
    write_string(&mut f, &state.config_text)?;
    // extractor arrays are in the parameter map as perc.*; only the tag
    // and the layer strides need a side record
    write_string(&mut f, &state.perc.tag)?;
    f.write_all(&(state.perc.layers().len() as u64).to_le_bytes())?;
    for layer in state.perc.layers() {
        f.write_all(&(layer.stride as u64).to_le_bytes())?;
    }
    write_param_map(
        &mut f,
        state.store.iter().map(|(k, v)| (k, v.as_ref())),
        state.store.len(),
    )?;
    for opt in [&state.gen_opt, &state.disc_opt] {
        let (t, m, v) = opt.state();
        f.write_all(&t.to_le_bytes())?;
        write_param_map(&mut f, m.iter().map(|(k, v)| (k.as_str(), v)), m.len())?;
        write_param_map(&mut f, v.iter().map(|(k, v)| (k.as_str(), v)), v.len())?;
    }
    f.flush()?;
    Ok(())
}

fn write_param_map<'a>(
    f: &mut impl Write,
    entries: impl Iterator<Item = (&'a str, &'a ArrayD<f64>)>,
    len: usize,
) -> Result<()> {
    f.write_all(&(len as u64).to_le_bytes())?;
    for (name, value) in entries {
        write_string(f, name)?;
        write_array(f, value)?;
    }
    Ok(())
}

fn read_param_map(f: &mut impl Read) -> Result<IndexMap<String, ArrayD<f64>>> {
    let count = read_u64(f)? as usize;
    let mut map = IndexMap::with_capacity(count);
    for _ in 0..count {
        let name = read_string(f)?;
        let value = read_array(f)?;
        map.insert(name, value);
    }
    Ok(map)
}

/// Restore a state from disk. The run configuration is the checkpoint's
/// own snapshot; a corrupt or mismatched file yields an error and no
/// partial state.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let version = read_u32(&mut f)?;
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {version}, expected {CKPT_VERSION}"
        )));
    }
    let iteration = read_u64(&mut f)?;
    let mut seed = [0u8; 32];
    f.read_exact(&mut seed)?;
    let lo = read_u64(&mut f)? as u128;
    let hi = read_u64(&mut f)? as u128;
    let mut data_rng = ChaCha12Rng::from_seed(seed);
    data_rng.set_word_pos(lo | (hi << 64));
    let config_text = read_string(&mut f)?;
    let run = RunConfig::parse(&config_text)
        .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    let tag = read_string(&mut f)?;
    let layer_count = read_u64(&mut f)? as usize;
    if layer_count == 0 || layer_count > 64 {
        return Err(Error::Checkpoint("checkpoint has no extractor".into()));
    }
    let mut strides = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        strides.push(read_u64(&mut f)? as usize);
    }
    let params = read_param_map(&mut f)?;
    let mut store = ParamStore::new();
    for (name, value) in params {
        store.insert(name, value);
    }
    let mut layers = Vec::with_capacity(layer_count);
    for (i, &stride) in strides.iter().enumerate() {
        let weight = Rc::clone(
            store
                .get(&format!("perc.l{i}.w"))
                .map_err(|_| Error::Checkpoint(format!("missing perc.l{i}.w")))?,
        );
        let bias = Rc::clone(
            store
                .get(&format!("perc.l{i}.b"))
                .map_err(|_| Error::Checkpoint(format!("missing perc.l{i}.b")))?,
        );
        layers.push(PercLayer {
            weight,
            bias,
            stride,
        });
    }
    let perc = PerceptualExtractor::from_parts(tag, layers);
    let mut opts = Vec::with_capacity(2);
    for _ in 0..2 {
        let t = read_u64(&mut f)?;
        let m = read_param_map(&mut f)?;
        let v = read_param_map(&mut f)?;
        let mut opt = Adam::new(run.lr, run.beta1, run.beta2, run.weight_decay);
        opt.restore(t, m, v);
        opts.push(opt);
    }
    let disc_opt = opts.pop().expect("two optimizers");
    let gen_opt = opts.pop().expect("two optimizers");
    // trailing garbage means a corrupt file
    let mut probe = [0u8; 1];
    if f.read(&mut probe)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }
    Ok(TrainState {
        run,
        config_text,
        store,
        perc,
        gen_opt,
        disc_opt,
        iteration,
        data_rng,
        last_memory_grad_norms: None,
        last_gen_grad_norms: IndexMap::new(),
    })
}

/// Drive a training run: sample batches, step, log CSV rows, dump previews
/// and periodic checkpoints under `run.out_dir`.
pub fn run_training(
    state: &mut TrainState,
    data_x: &[DomainSample],
    data_y: &[DomainSample],
    mut progress: Option<&mut dyn FnMut(u64, &LossReport)>,
) -> Result<()> {
    if data_x.is_empty() || data_y.is_empty() {
        return Err(Error::InvalidArgument("empty training dataset".into()));
    }
    let out_dir = state.run.out_dir.clone();
    std::fs::create_dir_all(&out_dir)?;
    let csv_path = out_dir.join("loss.csv");
    let mut csv = if state.iteration == 0 {
        let mut f = std::fs::File::create(&csv_path)?;
        writeln!(f, "iter,term,value")?;
        f
    } else {
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&csv_path)?
    };

    let total = state.run.iterations;
    while state.iteration < total {
        let (ix, iy) = state.sample_batch(data_x.len(), data_y.len());
        let batch_x: Vec<DomainSample> = ix.iter().map(|&i| data_x[i].clone()).collect();
        let batch_y: Vec<DomainSample> = iy.iter().map(|&i| data_y[i].clone()).collect();
        let report = state.train_step(&batch_x, &batch_y)?;
        let iter = state.iteration;
        for (term, value) in report.entries() {
            writeln!(csv, "{iter},{term},{value}")?;
        }
        if state.run.preview_every > 0 && iter % state.run.preview_every == 0 {
            write_previews(state, &out_dir, data_x, data_y, iter)?;
        }
        if state.run.checkpoint_every > 0 && iter % state.run.checkpoint_every == 0 {
            save_checkpoint(state, &out_dir.join(format!("checkpoint_{iter:06}.bin")))?;
        }
        if let Some(cb) = progress.as_deref_mut() {
            cb(iter, &report);
        }
    }
    csv.flush()?;
    save_checkpoint(state, &out_dir.join("checkpoint.bin"))?;
    Ok(())
}

fn write_previews(
    state: &TrainState,
    out_dir: &Path,
    data_x: &[DomainSample],
    data_y: &[DomainSample],
    iter: u64,
) -> Result<()> {
    let dir = out_dir.join("previews");
    std::fs::create_dir_all(&dir)?;
    let x2y = state.translate(&data_x[0], Direction::XtoY)?;
    crate::data::save_image(&x2y, &dir.join(format!("{iter:06}_x2y.png")))?;
    let y2x = state.translate(&data_y[0], Direction::YtoX)?;
    crate::data::save_image(&y2x, &dir.join(format!("{iter:06}_y2x.png")))?;
    Ok(())
}
