//! Content and style encoders.
//!
//! The content encoder runs two parallel convolutional branches, one on the
//! RGB image and one on the one-hot label map, and concatenates their
//! outputs along channels. Every convolution is followed by instance
//! normalization, which strips image-specific statistics and leaves a
//! domain-invariant layout feature. The style encoder is a single branch of
//! the same shape with all normalization removed, so the image's own
//! statistics survive — that is exactly what makes its output a style.

use crate::config::ModelConfig;
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::graph::{PadMode, Var};
use crate::params::{init_conv, ParamStore, Session};
use rand_chacha::ChaCha12Rng;

/// Activation applied after a convolution block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Act {
    Relu,
    LeakyRelu(i32), // slope in hundredths to stay Eq/Copy-friendly
    Tanh,
    None,
}

/// Convolution + optional instance norm + activation, fetching
/// `{name}.w` / `{name}.b` from the session.
pub fn conv_block<'t>(
    sess: &Session<'t, '_>,
    name: &str,
    x: Var<'t>,
    stride: usize,
    pad: usize,
    pad_mode: PadMode,
    norm: bool,
    act: Act,
) -> Result<Var<'t>> {
    let w = sess.param(&format!("{name}.w"))?;
    let b = sess.param(&format!("{name}.b"))?;
    let mut y = x.pad2d(pad, pad_mode).conv2d(w, b, stride);
    if norm {
        y = y.instance_norm(crate::harmonization::NORM_EPS);
    }
    Ok(match act {
        Act::Relu => y.relu(),
        Act::LeakyRelu(h) => y.leaky_relu(h as f64 / 100.0),
        Act::Tanh => y.tanh_act(),
        Act::None => y,
    })
}

/// Downsampling widths of one encoder branch.
struct BranchWidths {
    c1: usize,
    c2: usize,
    c3: usize,
    out: usize,
}

fn widths(cfg: &ModelConfig) -> BranchWidths {
    BranchWidths {
        c1: cfg.ch(64),
        c2: cfg.ch(128),
        c3: cfg.ch(256),
        out: cfg.ch(128),
    }
}

fn init_branch(
    store: &mut ParamStore,
    rng: &mut ChaCha12Rng,
    cfg: &ModelConfig,
    prefix: &str,
    in_ch: usize,
) {
    let w = widths(cfg);
    init_conv(store, rng, &format!("{prefix}.c1"), in_ch, w.c1, 7);
    init_conv(store, rng, &format!("{prefix}.c2"), w.c1, w.c2, 4);
    init_conv(store, rng, &format!("{prefix}.c3"), w.c2, w.c3, 4);
    for r in 0..4 {
        init_conv(store, rng, &format!("{prefix}.r{r}.conv1"), w.c3, w.c3, 3);
        init_conv(store, rng, &format!("{prefix}.r{r}.conv2"), w.c3, w.c3, 3);
    }
    init_conv(store, rng, &format!("{prefix}.out"), w.c3, w.out, 1);
}

/// One encoder branch: 7x7 stem, two stride-2 4x4 convolutions, four
/// residual blocks, 1x1 projection. `norm` selects the content (true) or
/// style (false) variant.
fn branch_forward<'t>(
    sess: &Session<'t, '_>,
    cfg: &ModelConfig,
    prefix: &str,
    x: Var<'t>,
    norm: bool,
) -> Result<Var<'t>> {
    let pm = cfg.padding_mode;
    let mut h = conv_block(sess, &format!("{prefix}.c1"), x, 1, 3, pm, norm, Act::Relu)?;
    // even 4x4 kernels take plain zero padding
    h = conv_block(sess, &format!("{prefix}.c2"), h, 2, 1, PadMode::Zero, norm, Act::Relu)?;
    h = conv_block(sess, &format!("{prefix}.c3"), h, 2, 1, PadMode::Zero, norm, Act::Relu)?;
    for r in 0..4 {
        let b1 = conv_block(
            sess,
            &format!("{prefix}.r{r}.conv1"),
            h,
            1,
            1,
            pm,
            norm,
            Act::Relu,
        )?;
        let b2 = conv_block(
            sess,
            &format!("{prefix}.r{r}.conv2"),
            b1,
            1,
            1,
            pm,
            norm,
            Act::None,
        )?;
        h = h.add(b2);
    }
    conv_block(sess, &format!("{prefix}.out"), h, 1, 0, pm, norm, Act::Relu)
}

/// Register the content encoder of one domain (`enc_c.<domain>.img` and,
/// when the label input is enabled, `enc_c.<domain>.lab`).
pub fn init_content_encoder(
    store: &mut ParamStore,
    rng: &mut ChaCha12Rng,
    cfg: &ModelConfig,
    domain: Domain,
) {
    let d = domain.as_str();
    init_branch(store, rng, cfg, &format!("enc_c.{d}.img"), 3);
    if cfg.use_label_input {
        init_branch(store, rng, cfg, &format!("enc_c.{d}.lab"), cfg.num_classes);
    }
}

/// Register the style encoder of one domain (`enc_s.<domain>`).
pub fn init_style_encoder(
    store: &mut ParamStore,
    rng: &mut ChaCha12Rng,
    cfg: &ModelConfig,
    domain: Domain,
) {
    init_branch(store, rng, cfg, &format!("enc_s.{}", domain.as_str()), 3);
}

fn check_image(what: &str, shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::shape(what, &[3, 0, 0], shape));
    }
    let (h, w) = (shape[1], shape[2]);
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::InvalidArgument(format!(
            "{what}: size {h}x{w} not divisible by 4"
        )));
    }
    Ok((h, w))
}

/// Domain-invariant content feature `[C_content, H/4, W/4]` from an image
/// and its one-hot label map.
pub fn encode_content<'t>(
    sess: &Session<'t, '_>,
    cfg: &ModelConfig,
    domain: Domain,
    image: Var<'t>,
    onehot: Var<'t>,
) -> Result<Var<'t>> {
    let (h, w) = check_image("encode_content image", &image.shape())?;
    let d = domain.as_str();
    let img_feat = branch_forward(sess, cfg, &format!("enc_c.{d}.img"), image, true)?;
    if !cfg.use_label_input {
        return Ok(img_feat);
    }
    let os = onehot.shape();
    if os.len() != 3 || os[0] != cfg.num_classes || (os[1], os[2]) != (h, w) {
        return Err(Error::shape(
            "encode_content one-hot",
            &[cfg.num_classes, h, w],
            &os,
        ));
    }
    let lab_feat = branch_forward(sess, cfg, &format!("enc_c.{d}.lab"), onehot, true)?;
    Ok(img_feat.concat0(lab_feat))
}

/// Image-specific component style `[C_style, H/4, W/4]`; no normalization
/// anywhere on this path.
pub fn encode_style<'t>(
    sess: &Session<'t, '_>,
    cfg: &ModelConfig,
    domain: Domain,
    image: Var<'t>,
) -> Result<Var<'t>> {
    check_image("encode_style image", &image.shape())?;
    branch_forward(sess, cfg, &format!("enc_s.{}", domain.as_str()), image, false)
}
