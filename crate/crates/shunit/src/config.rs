//! The flat run configuration: one `key = value` per line, `#` comments,
//! unknown keys rejected. Defaults are the reference training settings
//! (fixed learning rate 1e-4, Adam betas 0.5/0.999, weight decay 1e-4,
//! loss weights {10, 10, 1, 1, 10, 10}, temperature 0.7, 20 memory slots
//! per class).

use crate::data::{ClassIntensity, SyntheticSpec};
use crate::error::{Error, Result};
use crate::graph::PadMode;
use crate::losses::{LossWeights, Reduction};
use crate::memory::MemoryMode;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Layer-width fidelity: `paper` uses the reference channel counts,
/// `toy` scales them down for CPU-sized experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fidelity {
    Paper,
    Toy,
}

impl Fidelity {
    pub fn as_str(self) -> &'static str {
        match self {
            Fidelity::Paper => "paper",
            Fidelity::Toy => "toy",
        }
    }
}

/// Which frozen feature extractor backs the perceptual loss and the
/// evaluation embeddings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PerceptualChoice {
    /// Seeded, randomly initialized convnet (the default; no external
    /// weights needed).
    FrozenRandom,
    /// Conv-stack weights loaded from a file (e.g. exported pretrained
    /// features).
    File(PathBuf),
}

/// Architecture hyperparameters derived from the run config.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub slots_per_class: usize,
    pub width_scale: f64,
    pub use_label_input: bool,
    pub num_disc_scales: usize,
    pub padding_mode: PadMode,
}

impl ModelConfig {
    /// A base channel count scaled by the fidelity width factor.
    pub fn ch(&self, base: usize) -> usize {
        ((base as f64 * self.width_scale).round() as usize).max(1)
    }

    /// Channels of the content feature (two concatenated 128-wide branches,
    /// or one when the label branch is disabled).
    pub fn content_channels(&self) -> usize {
        self.ch(128) * if self.use_label_input { 2 } else { 1 }
    }

    /// Channels of the component style (and of the memory values).
    pub fn style_channels(&self) -> usize {
        self.ch(128)
    }
}

/// Everything a run needs, parsed from the flat config file.
#[derive(Clone, Debug)]
pub struct RunConfig {
    // data
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
    pub num_classes: usize,
    // model
    pub fidelity: Fidelity,
    pub width_scale: f64,
    pub num_slots: usize,
    pub num_disc_scales: usize,
    pub padding_mode: PadMode,
    pub use_label_input: bool,
    pub perceptual: PerceptualChoice,
    pub perc_seed: u64,
    // losses
    pub w_self: f64,
    pub w_cycle: f64,
    pub w_perc: f64,
    pub w_adv: f64,
    pub w_content: f64,
    pub w_style: f64,
    pub tau: f64,
    pub nce_normalize: bool,
    pub contrastive_reduction: Reduction,
    pub l1_mode: bool,
    pub gan_nonsaturating: bool,
    // trainer
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub memory_mode: MemoryMode,
    pub memory_update_rate: f64,
    pub grad_clip: f64,
    pub preview_every: u64,
    pub checkpoint_every: u64,
    // metrics
    pub cfid_eps: f64,
    pub cfid_min_pixels: usize,
    // synthetic data
    pub synth_canvas: usize,
    pub synth_count: usize,
    pub synth_seed: u64,
    pub synth_means: [Vec<[f64; 3]>; 2],
    pub synth_stds: [Vec<[f64; 3]>; 2],
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_root: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            num_classes: 2,
            fidelity: Fidelity::Toy,
            width_scale: 0.125,
            num_slots: 20,
            num_disc_scales: 2,
            padding_mode: PadMode::Reflect,
            use_label_input: true,
            perceptual: PerceptualChoice::FrozenRandom,
            perc_seed: 7,
            w_self: 10.0,
            w_cycle: 10.0,
            w_perc: 1.0,
            w_adv: 1.0,
            w_content: 10.0,
            w_style: 10.0,
            tau: 0.7,
            nce_normalize: true,
            contrastive_reduction: Reduction::Mean,
            l1_mode: false,
            gan_nonsaturating: true,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            weight_decay: 1e-4,
            iterations: 2000,
            batch_size: 1,
            seed: 1,
            memory_mode: MemoryMode::Backprop,
            memory_update_rate: 0.1,
            grad_clip: 0.0,
            preview_every: 0,
            checkpoint_every: 0,
            cfid_eps: 1e-6,
            cfid_min_pixels: 16,
            synth_canvas: 32,
            synth_count: 64,
            synth_seed: 9,
            synth_means: [
                vec![[-0.2; 3], [0.6; 3]],
                vec![[-0.2; 3], [-0.6; 3]],
            ],
            synth_stds: [vec![[0.05; 3]; 2], vec![[0.05; 3]; 2]],
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parse overrides on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.apply(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn bad(key: &str, value: &str) -> Error {
            Error::Config(format!("invalid value `{value}` for key `{key}`"))
        }
        let parse_f64 =
            |v: &str, k: &str| -> Result<f64> { v.parse().map_err(|_| bad(k, v)) };
        let parse_u64 =
            |v: &str, k: &str| -> Result<u64> { v.parse().map_err(|_| bad(k, v)) };
        let parse_usize =
            |v: &str, k: &str| -> Result<usize> { v.parse().map_err(|_| bad(k, v)) };
        let parse_bool = |v: &str, k: &str| -> Result<bool> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(bad(k, v)),
            }
        };
        let parse_rgb = |v: &str, k: &str| -> Result<[f64; 3]> {
            let parts: Vec<&str> = v.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(bad(k, v));
            }
            let mut out = [0.0; 3];
            for (slot, p) in out.iter_mut().zip(parts) {
                *slot = p.parse().map_err(|_| bad(k, v))?;
            }
            Ok(out)
        };

        // per-class synthetic intensity keys: synth_{mean,std}_{x,y}_<class>
        if let Some(rest) = key.strip_prefix("synth_mean_").or_else(|| key.strip_prefix("synth_std_")) {
            let is_mean = key.starts_with("synth_mean_");
            let (domain, class) = rest
                .split_once('_')
                .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
            let side = match domain {
                "x" => 0usize,
                "y" => 1,
                _ => return Err(Error::Config(format!("unknown key `{key}`"))),
            };
            let class: usize = class
                .parse()
                .map_err(|_| Error::Config(format!("unknown key `{key}`")))?;
            let rgb = parse_rgb(value, key)?;
            let table = if is_mean {
                &mut self.synth_means[side]
            } else {
                &mut self.synth_stds[side]
            };
            if table.len() <= class {
                table.resize(class + 1, [0.0; 3]);
            }
            table[class] = rgb;
            return Ok(());
        }

        match key {
            "data_root" => self.data_root = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "num_classes" => self.num_classes = parse_usize(value, key)?,
            "fidelity" => {
                self.fidelity = match value {
                    "paper" => Fidelity::Paper,
                    "toy" => Fidelity::Toy,
                    _ => return Err(bad(key, value)),
                }
            }
            "width_scale" => self.width_scale = parse_f64(value, key)?,
            "num_slots" => self.num_slots = parse_usize(value, key)?,
            "num_disc_scales" => self.num_disc_scales = parse_usize(value, key)?,
            "padding_mode" => {
                self.padding_mode = match value {
                    "reflect" => PadMode::Reflect,
                    "zero" => PadMode::Zero,
                    _ => return Err(bad(key, value)),
                }
            }
            "use_label_input" => self.use_label_input = parse_bool(value, key)?,
            "perceptual" => {
                self.perceptual = match value {
                    "frozen-random" => PerceptualChoice::FrozenRandom,
                    other => match other.strip_prefix("file:") {
                        Some(path) => PerceptualChoice::File(PathBuf::from(path)),
                        None => return Err(bad(key, value)),
                    },
                }
            }
            "perc_seed" => self.perc_seed = parse_u64(value, key)?,
            "w_self" => self.w_self = parse_f64(value, key)?,
            "w_cycle" => self.w_cycle = parse_f64(value, key)?,
            "w_perc" => self.w_perc = parse_f64(value, key)?,
            "w_adv" => self.w_adv = parse_f64(value, key)?,
            "w_content" => self.w_content = parse_f64(value, key)?,
            "w_style" => self.w_style = parse_f64(value, key)?,
            "tau" => self.tau = parse_f64(value, key)?,
            "nce_normalize" => self.nce_normalize = parse_bool(value, key)?,
            "contrastive_reduction" => {
                self.contrastive_reduction = match value {
                    "mean" => Reduction::Mean,
                    "sum" => Reduction::Sum,
                    _ => return Err(bad(key, value)),
                }
            }
            "l1_mode" => self.l1_mode = parse_bool(value, key)?,
            "gan_nonsaturating" => self.gan_nonsaturating = parse_bool(value, key)?,
            "lr" => self.lr = parse_f64(value, key)?,
            "beta1" => self.beta1 = parse_f64(value, key)?,
            "beta2" => self.beta2 = parse_f64(value, key)?,
            "weight_decay" => self.weight_decay = parse_f64(value, key)?,
            "iterations" => self.iterations = parse_u64(value, key)?,
            "batch_size" => self.batch_size = parse_usize(value, key)?,
            "seed" => self.seed = parse_u64(value, key)?,
            "memory_mode" => {
                self.memory_mode = match value {
                    "backprop" => MemoryMode::Backprop,
                    "update" => MemoryMode::Update,
                    _ => return Err(bad(key, value)),
                }
            }
            "memory_update_rate" => self.memory_update_rate = parse_f64(value, key)?,
            "grad_clip" => self.grad_clip = parse_f64(value, key)?,
            "preview_every" => self.preview_every = parse_u64(value, key)?,
            "checkpoint_every" => self.checkpoint_every = parse_u64(value, key)?,
            "cfid_eps" => self.cfid_eps = parse_f64(value, key)?,
            "cfid_min_pixels" => self.cfid_min_pixels = parse_usize(value, key)?,
            "synth_canvas" => self.synth_canvas = parse_usize(value, key)?,
            "synth_count" => self.synth_count = parse_usize(value, key)?,
            "synth_seed" => self.synth_seed = parse_u64(value, key)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > 256 {
            return Err(Error::Config("num_classes must be in 1..=256".into()));
        }
        if self.num_slots == 0 {
            return Err(Error::Config("num_slots must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.fidelity == Fidelity::Toy && !(self.width_scale > 0.0 && self.width_scale <= 1.0) {
            return Err(Error::Config("width_scale must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.memory_update_rate) {
            return Err(Error::Config("memory_update_rate must be in [0, 1]".into()));
        }
        self.loss_weights().validate()?;
        Ok(())
    }

    /// Effective width factor: `paper` fidelity always runs full width.
    pub fn effective_width_scale(&self) -> f64 {
        match self.fidelity {
            Fidelity::Paper => 1.0,
            Fidelity::Toy => self.width_scale,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            num_classes: self.num_classes,
            slots_per_class: self.num_slots,
            width_scale: self.effective_width_scale(),
            use_label_input: self.use_label_input,
            num_disc_scales: self.num_disc_scales,
            padding_mode: self.padding_mode,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            self_recon: self.w_self,
            cycle: self.w_cycle,
            perceptual: self.w_perc,
            adversarial: self.w_adv,
            content: self.w_content,
            style: self.w_style,
            tau: self.tau,
        }
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let num_classes = self.num_classes;
        let build = |side: usize| -> Result<Vec<ClassIntensity>> {
            let means = &self.synth_means[side];
            let stds = &self.synth_stds[side];
            if means.len() != num_classes || stds.len() != num_classes {
                return Err(Error::Config(format!(
                    "synthetic intensities cover {} classes, config has {num_classes}",
                    means.len().min(stds.len())
                )));
            }
            Ok((0..num_classes)
                .map(|k| ClassIntensity {
                    mean: means[k],
                    std: stds[k],
                })
                .collect())
        };
        let spec = SyntheticSpec {
            canvas: self.synth_canvas,
            num_classes,
            intensities: [build(0)?, build(1)?],
            seed: self.synth_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Canonical serialization: every key in a fixed order. Parsing the
    /// result reproduces the config exactly.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let rgb = |v: &[f64; 3]| format!("{},{},{}", v[0], v[1], v[2]);
        let _ = writeln!(s, "data_root = {}", self.data_root.display());
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "num_classes = {}", self.num_classes);
        let _ = writeln!(s, "fidelity = {}", self.fidelity.as_str());
        let _ = writeln!(s, "width_scale = {}", self.width_scale);
        let _ = writeln!(s, "num_slots = {}", self.num_slots);
        let _ = writeln!(s, "num_disc_scales = {}", self.num_disc_scales);
        let _ = writeln!(
            s,
            "padding_mode = {}",
            match self.padding_mode {
                PadMode::Reflect => "reflect",
                PadMode::Zero => "zero",
            }
        );
        let _ = writeln!(s, "use_label_input = {}", self.use_label_input);
        let _ = writeln!(
            s,
            "perceptual = {}",
            match &self.perceptual {
                PerceptualChoice::FrozenRandom => "frozen-random".to_string(),
                PerceptualChoice::File(p) => format!("file:{}", p.display()),
            }
        );
        let _ = writeln!(s, "perc_seed = {}", self.perc_seed);
        let _ = writeln!(s, "w_self = {}", self.w_self);
        let _ = writeln!(s, "w_cycle = {}", self.w_cycle);
        let _ = writeln!(s, "w_perc = {}", self.w_perc);
        let _ = writeln!(s, "w_adv = {}", self.w_adv);
        let _ = writeln!(s, "w_content = {}", self.w_content);
        let _ = writeln!(s, "w_style = {}", self.w_style);
        let _ = writeln!(s, "tau = {}", self.tau);
        let _ = writeln!(s, "nce_normalize = {}", self.nce_normalize);
        let _ = writeln!(
            s,
            "contrastive_reduction = {}",
            match self.contrastive_reduction {
                Reduction::Mean => "mean",
                Reduction::Sum => "sum",
            }
        );
        let _ = writeln!(s, "l1_mode = {}", self.l1_mode);
        let _ = writeln!(s, "gan_nonsaturating = {}", self.gan_nonsaturating);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "beta1 = {}", self.beta1);
        let _ = writeln!(s, "beta2 = {}", self.beta2);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "memory_mode = {}", self.memory_mode.as_str());
        let _ = writeln!(s, "memory_update_rate = {}", self.memory_update_rate);
        let _ = writeln!(s, "grad_clip = {}", self.grad_clip);
        let _ = writeln!(s, "preview_every = {}", self.preview_every);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "cfid_eps = {}", self.cfid_eps);
        let _ = writeln!(s, "cfid_min_pixels = {}", self.cfid_min_pixels);
        let _ = writeln!(s, "synth_canvas = {}", self.synth_canvas);
        let _ = writeln!(s, "synth_count = {}", self.synth_count);
        let _ = writeln!(s, "synth_seed = {}", self.synth_seed);
        for (side, tag) in [(0usize, "x"), (1, "y")] {
            for (k, v) in self.synth_means[side].iter().enumerate() {
                let _ = writeln!(s, "synth_mean_{tag}_{k} = {}", rgb(v));
            }
            for (k, v) in self.synth_stds[side].iter().enumerate() {
                let _ = writeln!(s, "synth_std_{tag}_{k} = {}", rgb(v));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_canonical_text() {
        let cfg = RunConfig::default();
        let text = cfg.canonical();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(text, back.canonical());
    }

    #[test]
    fn unknown_key_is_rejected_with_its_name() {
        let err = RunConfig::parse("bogus_key = 3\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn comments_and_overrides() {
        let cfg = RunConfig::parse(
            "# full-line comment\nlr = 0.001  # trailing comment\nfidelity = paper\n",
        )
        .unwrap();
        assert_eq!(cfg.lr, 0.001);
        assert_eq!(cfg.fidelity, Fidelity::Paper);
        assert_eq!(cfg.effective_width_scale(), 1.0);
    }

    #[test]
    fn synthetic_intensity_keys() {
        let cfg = RunConfig::parse("synth_mean_y_1 = 0.1, 0.2, -0.3\n").unwrap();
        assert_eq!(cfg.synth_means[1][1], [0.1, 0.2, -0.3]);
        let spec = cfg.synthetic_spec().unwrap();
        assert_eq!(spec.intensities[1][1].mean, [0.1, 0.2, -0.3]);
    }

    #[test]
    fn invalid_values_are_errors() {
        assert!(RunConfig::parse("lr = fast\n").is_err());
        assert!(RunConfig::parse("lr = 0\n").is_err());
        assert!(RunConfig::parse("tau = -1\n").is_err());
        assert!(RunConfig::parse("memory_mode = sideways\n").is_err());
    }
}
