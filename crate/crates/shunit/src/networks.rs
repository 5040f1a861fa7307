//! Generator decoder, multi-scale patch discriminators, and the frozen
//! perceptual feature extractor.

use crate::config::ModelConfig;
use crate::data::{Domain, ImageTensor, LabelMask};
use crate::encoders::{conv_block, Act};
use crate::error::{Error, Result};
use crate::graph::{PadMode, Tape, Var};
use crate::harmonization::{init_sh_resblock, sh_resblock, ShResBlockVars};
use crate::params::{init_conv, normal_init, ParamStore, Session};
use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;

pub const NUM_SH_BLOCKS: usize = 4;
/// Minimum input side for one patch discriminator (four stride-2 stages).
pub const DISC_RECEPTIVE_FLOOR: usize = 16;

/// Register the generator of one domain: four SH residual blocks at
/// encoder resolution, then an upsampling head that restores full
/// resolution and ends in tanh.
pub fn init_generator(
    store: &mut ParamStore,
    rng: &mut ChaCha12Rng,
    cfg: &ModelConfig,
    domain: Domain,
) {
    let d = domain.as_str();
    let content_ch = cfg.content_channels();
    let style_ch = cfg.style_channels();
    for b in 0..NUM_SH_BLOCKS {
        init_sh_resblock(
            store,
            rng,
            &format!("gen.{d}"),
            b,
            style_ch,
            content_ch,
            cfg.num_classes,
        );
    }
    init_conv(store, rng, &format!("gen.{d}.head.c1"), content_ch, cfg.ch(128), 5);
    init_conv(store, rng, &format!("gen.{d}.head.c2"), cfg.ch(128), cfg.ch(64), 5);
    init_conv(store, rng, &format!("gen.{d}.head.c3"), cfg.ch(64), 3, 7);
}

/// Decode an image from content, component style and memory style.
/// Output is `[3, 4h, 4w]` in `[-1, 1]`.
pub fn generate<'t>(
    sess: &Session<'t, '_>,
    cfg: &ModelConfig,
    domain: Domain,
    content: Var<'t>,
    comp_style: Var<'t>,
    mem_style: Var<'t>,
    mask_ds: &LabelMask,
) -> Result<Var<'t>> {
    let cs = content.shape();
    if cs.len() != 3 || cs[0] != cfg.content_channels() {
        return Err(Error::shape(
            "generate content",
            &[cfg.content_channels(), 0, 0],
            &cs,
        ));
    }
    if mask_ds.size() != (cs[1], cs[2]) {
        return Err(Error::shape(
            "generate mask",
            &[cs[1], cs[2]],
            &[mask_ds.size().0, mask_ds.size().1],
        ));
    }
    let d = domain.as_str();
    let pm = cfg.padding_mode;
    let mut h = content;
    for b in 0..NUM_SH_BLOCKS {
        let params = ShResBlockVars::bind(sess, &format!("gen.{d}"), b)?;
        h = sh_resblock(h, comp_style, mem_style, mask_ds, &params, pm)?;
    }
    h = h.upsample_nearest2();
    h = conv_block(sess, &format!("gen.{d}.head.c1"), h, 1, 2, pm, true, Act::Relu)?;
    h = h.upsample_nearest2();
    h = conv_block(sess, &format!("gen.{d}.head.c2"), h, 1, 2, pm, true, Act::Relu)?;
    conv_block(sess, &format!("gen.{d}.head.c3"), h, 1, 3, pm, false, Act::Tanh)
}

/// Register the multi-scale patch discriminators of one domain.
pub fn init_discriminator(
    store: &mut ParamStore,
    rng: &mut ChaCha12Rng,
    cfg: &ModelConfig,
    domain: Domain,
) {
    let d = domain.as_str();
    for s in 0..cfg.num_disc_scales {
        let p = format!("disc.{d}.scale{s}");
        init_conv(store, rng, &format!("{p}.c1"), 3, cfg.ch(64), 4);
        init_conv(store, rng, &format!("{p}.c2"), cfg.ch(64), cfg.ch(128), 4);
        init_conv(store, rng, &format!("{p}.c3"), cfg.ch(128), cfg.ch(256), 4);
        init_conv(store, rng, &format!("{p}.c4"), cfg.ch(256), cfg.ch(512), 4);
        init_conv(store, rng, &format!("{p}.out"), cfg.ch(512), 1, 3);
    }
}

/// Patch logit maps, one per scale; scale `s` sees the input downsampled
/// `s` times by 3x3 stride-2 average pooling.
pub fn discriminate<'t>(
    sess: &Session<'t, '_>,
    cfg: &ModelConfig,
    domain: Domain,
    image: Var<'t>,
) -> Result<Vec<Var<'t>>> {
    let d = domain.as_str();
    let mut maps = Vec::with_capacity(cfg.num_disc_scales);
    let mut input = image;
    for s in 0..cfg.num_disc_scales {
        if s > 0 {
            input = input.avg_pool3_s2();
        }
        let shape = input.shape();
        if shape[1] < DISC_RECEPTIVE_FLOOR || shape[2] < DISC_RECEPTIVE_FLOOR {
            return Err(Error::InvalidArgument(format!(
                "discriminator scale {s} input {}x{} below the {DISC_RECEPTIVE_FLOOR} px floor",
                shape[1], shape[2]
            )));
        }
        let p = format!("disc.{d}.scale{s}");
        let mut h = input;
        for (i, name) in ["c1", "c2", "c3", "c4"].iter().enumerate() {
            let _ = i;
            h = conv_block(
                sess,
                &format!("{p}.{name}"),
                h,
                2,
                1,
                PadMode::Zero,
                false,
                Act::LeakyRelu(20),
            )?;
        }
        // raw logits, no final activation
        maps.push(conv_block(
            sess,
            &format!("{p}.out"),
            h,
            1,
            1,
            PadMode::Zero,
            false,
            Act::None,
        )?);
    }
    Ok(maps)
}

/// One convolution of the frozen extractor.
#[derive(Clone)]
pub struct PercLayer {
    pub weight: Rc<ArrayD<f64>>,
    pub bias: Rc<ArrayD<f64>>,
    pub stride: usize,
}

/// Frozen feature function used by the perceptual loss and the evaluation
/// embeddings. Parameters never receive gradients; they bind to every tape
/// as constants.
#[derive(Clone)]
pub struct PerceptualExtractor {
    pub tag: String,
    layers: Vec<PercLayer>,
    first_block_len: usize,
}

const PERC_MAGIC: &[u8; 4] = b"SHPX";
const PERC_VERSION: u32 = 1;

impl PerceptualExtractor {
    /// Seeded 4-layer convnet: strides (2, 2, 1, 1), widths (32, 64, 64, 64),
    /// leaky-ReLU activations. The first block (through the stride-2 stem)
    /// provides the 32-channel evaluation features.
    pub fn frozen_random(seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let plan = [(3usize, 32usize, 2usize), (32, 64, 2), (64, 64, 1), (64, 64, 1)];
        let layers = plan
            .iter()
            .map(|&(ic, oc, stride)| PercLayer {
                weight: Rc::new(normal_init(&mut rng, &[oc, ic, 3, 3], 0.2)),
                bias: Rc::new(normal_init(&mut rng, &[oc], 0.05)),
                stride,
            })
            .collect();
        PerceptualExtractor {
            tag: "frozen-random-convnet".into(),
            layers,
            first_block_len: 1,
        }
    }

    pub fn layers(&self) -> &[PercLayer] {
        &self.layers
    }

    pub fn from_parts(tag: String, layers: Vec<PercLayer>) -> Self {
        // first block = everything up to and including the first
        // spatial downsampling stage
        let first_block_len = layers
            .iter()
            .position(|l| l.stride > 1)
            .map(|i| i + 1)
            .unwrap_or(layers.len());
        PerceptualExtractor {
            tag,
            layers,
            first_block_len,
        }
    }

    /// Embedding width of the evaluation features.
    pub fn first_block_channels(&self) -> usize {
        self.layers[self.first_block_len - 1].weight.shape()[0]
    }

    fn forward<'t>(&self, tape: &'t Tape, image: Var<'t>, depth: usize) -> Var<'t> {
        let mut h = image;
        for layer in &self.layers[..depth] {
            let w = tape.constant_shared(Rc::clone(&layer.weight));
            let b = tape.constant_shared(Rc::clone(&layer.bias));
            h = h.pad2d(1, PadMode::Zero).conv2d(w, b, layer.stride).leaky_relu(0.2);
        }
        h
    }

    /// Full feature map for the perceptual loss. Gradients flow into the
    /// image argument only.
    pub fn features<'t>(&self, tape: &'t Tape, image: Var<'t>) -> Var<'t> {
        self.forward(tape, image, self.layers.len())
    }

    /// First-block features (finer scale) for the evaluation metrics.
    pub fn first_block<'t>(&self, tape: &'t Tape, image: Var<'t>) -> Var<'t> {
        self.forward(tape, image, self.first_block_len)
    }

    /// Convenience: first-block features of a plain image, no graph kept.
    pub fn first_block_array(&self, image: &ImageTensor) -> ArrayD<f64> {
        let tape = Tape::new();
        let v = tape.constant(image.data().clone().into_dyn());
        self.first_block(&tape, v).value().as_ref().clone()
    }

    /// Serialize to a standalone weights file (the `file:` config variant).
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(PERC_MAGIC)?;
        f.write_all(&PERC_VERSION.to_le_bytes())?;
        write_string(&mut f, &self.tag)?;
        f.write_all(&(self.layers.len() as u64).to_le_bytes())?;
        for layer in &self.layers {
            f.write_all(&(layer.stride as u64).to_le_bytes())?;
            write_array(&mut f, &layer.weight)?;
            write_array(&mut f, &layer.bias)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != PERC_MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not an extractor file",
                path.display()
            )));
        }
        let version = read_u32(&mut f)?;
        if version != PERC_VERSION {
            return Err(Error::Checkpoint(format!(
                "extractor version {version}, expected {PERC_VERSION}"
            )));
        }
        let tag = read_string(&mut f)?;
        let count = read_u64(&mut f)? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let stride = read_u64(&mut f)? as usize;
            let weight = Rc::new(read_array(&mut f)?);
            let bias = Rc::new(read_array(&mut f)?);
            layers.push(PercLayer {
                weight,
                bias,
                stride,
            });
        }
        if layers.is_empty() {
            return Err(Error::Checkpoint("extractor file has no layers".into()));
        }
        Ok(Self::from_parts(tag, layers))
    }
}

pub(crate) fn write_string(f: &mut impl Write, s: &str) -> std::io::Result<()> {
    f.write_all(&(s.len() as u64).to_le_bytes())?;
    f.write_all(s.as_bytes())
}

pub(crate) fn read_string(f: &mut impl Read) -> Result<String> {
    let len = read_u64(f)? as usize;
    let mut buf = vec![0u8; len];
    f.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("invalid utf-8 string".into()))
}

pub(crate) fn write_array(f: &mut impl Write, a: &ArrayD<f64>) -> std::io::Result<()> {
    f.write_all(&(a.ndim() as u64).to_le_bytes())?;
    for &d in a.shape() {
        f.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in a.as_slice().expect("standard layout") {
        f.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_array(f: &mut impl Read) -> Result<ArrayD<f64>> {
    let ndim = read_u64(f)? as usize;
    if ndim > 8 {
        return Err(Error::Checkpoint(format!("array rank {ndim} out of range")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u64(f)? as usize);
    }
    let len: usize = shape.iter().product();
    if len > (1 << 31) {
        return Err(Error::Checkpoint("array too large".into()));
    }
    let mut data = vec![0.0f64; len];
    let mut buf = [0u8; 8];
    for v in &mut data {
        f.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    ArrayD::from_shape_vec(ndarray::IxDyn(&shape), data)
        .map_err(|e| Error::Checkpoint(e.to_string()))
}

pub(crate) fn read_u64(f: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    f.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_u32(f: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    f.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
