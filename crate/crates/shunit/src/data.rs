//! Datasets of (image, label-mask) pairs for two unpaired domains, plus a
//! deterministic synthetic scene generator for desk-scale experiments.
//!
//! On disk a dataset is `<root>/<domain>/images/*.png` paired by file stem
//! with `<root>/<domain>/labels/*.png`; labels are single-channel 8-bit
//! class-index masks. Images are rescaled from `[0, 255]` to `[-1, 1]` on
//! load, matching the tanh output range of the generator.

use crate::error::{Error, Result};
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use std::path::{Path, PathBuf};

/// Which of the two unpaired domains a sample belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    X,
    Y,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::X => "x",
            Domain::Y => "y",
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::X => Domain::Y,
            Domain::Y => Domain::X,
        }
    }

    pub fn parse(s: &str) -> Result<Domain> {
        match s {
            "x" | "X" => Ok(Domain::X),
            "y" | "Y" => Ok(Domain::Y),
            other => Err(Error::InvalidArgument(format!("unknown domain `{other}`"))),
        }
    }
}

/// RGB image as `[3, H, W]` with values in `[-1, 1]`; H and W must be
/// divisible by 4 (two stride-2 encoder stages).
#[derive(Clone, Debug)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != 3 {
            return Err(Error::shape("ImageTensor channels", &[3], &[c]));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "image size {h}x{w} not divisible by 4"
            )));
        }
        if data.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-12) {
            return Err(Error::InvalidArgument(
                "image values must be finite and within [-1, 1]".into(),
            ));
        }
        Ok(ImageTensor { data })
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn size(&self) -> (usize, usize) {
        let (_, h, w) = self.data.dim();
        (h, w)
    }
}

/// Per-pixel integer class indices, `[H, W]`, every value `< num_classes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    data: Array2<u8>,
}

impl LabelMask {
    pub fn new(data: Array2<u8>, num_classes: usize) -> Result<Self> {
        for ((r, c), &v) in data.indexed_iter() {
            if (v as usize) >= num_classes {
                return Err(Error::ClassIndexOutOfRange {
                    value: v as usize,
                    num_classes,
                    row: r,
                    col: c,
                });
            }
        }
        Ok(LabelMask { data })
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn size(&self) -> (usize, usize) {
        self.data.dim()
    }

    /// Class indices present in the mask, ascending.
    pub fn present_classes(&self) -> Vec<usize> {
        let mut seen = [false; 256];
        for &v in self.data.iter() {
            seen[v as usize] = true;
        }
        (0..256).filter(|&i| seen[i]).collect()
    }
}

/// One (image, mask) pair tagged with its domain. `name` is the file stem
/// (or a generated index) used to pair outputs with inputs.
#[derive(Clone, Debug)]
pub struct DomainSample {
    pub image: ImageTensor,
    pub mask: LabelMask,
    pub domain: Domain,
    pub name: String,
}

/// Per-class, per-channel intensity distribution of a synthetic domain.
#[derive(Clone, Debug)]
pub struct ClassIntensity {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Recipe for a synthetic two-domain dataset: axis-aligned rectangles, one
/// per non-background class, on a background of class 0. Per-class pixel
/// statistics are exactly controllable, which makes translation quality
/// measurable in closed form.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub canvas: usize,
    pub num_classes: usize,
    /// Intensity distributions, indexed `[domain][class]`: 0 = X, 1 = Y.
    pub intensities: [Vec<ClassIntensity>; 2],
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(
                "synthetic spec needs at least 2 classes".into(),
            ));
        }
        if self.canvas % 4 != 0 || self.canvas < 8 {
            return Err(Error::InvalidArgument(
                "synthetic canvas must be >= 8 and divisible by 4".into(),
            ));
        }
        for side in &self.intensities {
            if side.len() != self.num_classes {
                return Err(Error::InvalidArgument(
                    "one intensity entry per class required".into(),
                ));
            }
            for ci in side {
                if ci.mean.iter().any(|m| m.abs() > 1.0) {
                    return Err(Error::InvalidArgument(
                        "intensity means must lie within [-1, 1]".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn u8_to_signed(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

fn signed_to_u8(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// One-hot encode a mask to `[N, H, W]`.
pub fn one_hot(mask: &LabelMask, num_classes: usize) -> Array3<f64> {
    let (h, w) = mask.size();
    let mut out = Array3::zeros((num_classes, h, w));
    for ((r, c), &v) in mask.data().indexed_iter() {
        out[(v as usize, r, c)] = 1.0;
    }
    out
}

/// Nearest-neighbor mask subsampling anchored at the top-left corner:
/// `out[i, j] = in[i * factor, j * factor]`.
pub fn downsample_mask(mask: &LabelMask, factor: usize) -> Result<LabelMask> {
    let (h, w) = mask.size();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "downsample factor {factor} does not divide {h}x{w}"
        )));
    }
    let data = Array2::from_shape_fn((h / factor, w / factor), |(i, j)| {
        mask.data()[(i * factor, j * factor)]
    });
    // values come from the source mask, so they stay valid
    Ok(LabelMask { data })
}

/// Generate `count` samples of one synthetic domain. Deterministic under a
/// fixed spec seed; the two domains consume independent streams.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    domain: Domain,
    count: usize,
) -> Result<Vec<DomainSample>> {
    spec.validate()?;
    let side = match domain {
        Domain::X => 0,
        Domain::Y => 1,
    };
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed.wrapping_add(side as u64));
    let n = spec.canvas;
    let mut out = Vec::with_capacity(count);
    for idx in 0..count {
        let mut mask = Array2::<u8>::zeros((n, n));
        for class in 1..spec.num_classes {
            // rectangle between a quarter and half of the canvas per side
            let rh = rand::Rng::random_range(&mut rng, n / 4..=n / 2);
            let rw = rand::Rng::random_range(&mut rng, n / 4..=n / 2);
            let top = rand::Rng::random_range(&mut rng, 0..=n - rh);
            let left = rand::Rng::random_range(&mut rng, 0..=n - rw);
            for r in top..top + rh {
                for c in left..left + rw {
                    mask[(r, c)] = class as u8;
                }
            }
        }
        let stats = &spec.intensities[side];
        let mut img = Array3::zeros((3, n, n));
        for r in 0..n {
            for c in 0..n {
                let cls = mask[(r, c)] as usize;
                for ch in 0..3 {
                    let dist = Normal::new(stats[cls].mean[ch], stats[cls].std[ch])
                        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                    img[(ch, r, c)] = dist.sample(&mut rng).clamp(-1.0, 1.0);
                }
            }
        }
        out.push(DomainSample {
            image: ImageTensor::new(img)?,
            mask: LabelMask { data: mask },
            domain,
            name: format!("{:04}", idx),
        });
    }
    Ok(out)
}

/// Load every (image, mask) pair under `<root>/<domain_dir>`, deterministic
/// in filename order. Unpaired files and mask values `>= num_classes` are
/// errors.
pub fn load_dataset(
    root: &Path,
    domain_dir: &str,
    domain: Domain,
    num_classes: usize,
) -> Result<Vec<DomainSample>> {
    load_pairs(&root.join(domain_dir), domain, num_classes)
}

/// Like [`load_dataset`] but `base` itself holds `images/` and `labels/`.
pub fn load_pairs(base: &Path, domain: Domain, num_classes: usize) -> Result<Vec<DomainSample>> {
    let base = base.to_path_buf();
    let images = list_pngs(&base.join("images"))?;
    let labels = list_pngs(&base.join("labels"))?;

    let label_stems: Vec<String> = labels.iter().map(|p| stem_of(p)).collect();
    let image_stems: Vec<String> = images.iter().map(|p| stem_of(p)).collect();
    for (path, stem) in images.iter().zip(&image_stems) {
        if !label_stems.contains(stem) {
            return Err(Error::UnpairedSample(format!(
                "image {} has no label file",
                path.display()
            )));
        }
    }
    for (path, stem) in labels.iter().zip(&label_stems) {
        if !image_stems.contains(stem) {
            return Err(Error::UnpairedSample(format!(
                "label {} has no image file",
                path.display()
            )));
        }
    }

    let mut out = Vec::with_capacity(images.len());
    for (path, stem) in images.iter().zip(&image_stems) {
        let label_path = base.join("labels").join(format!("{stem}.png"));
        let image = load_image(path)?;
        let mask = load_mask(&label_path, num_classes)?;
        if image.size() != mask.size() {
            return Err(Error::shape(
                format!("mask size for {stem}"),
                &[image.size().0, image.size().1],
                &[mask.size().0, mask.size().1],
            ));
        }
        out.push(DomainSample {
            image,
            mask,
            domain,
            name: stem.clone(),
        });
    }
    Ok(out)
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::InvalidArgument(format!(
            "missing dataset directory {}",
            dir.display()
        )));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .collect();
    paths.sort();
    Ok(paths)
}

fn stem_of(path: &Path) -> String {
    path.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

/// Read an RGB PNG and rescale to `[-1, 1]`.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    let mut data = Array3::zeros((3, h as usize, w as usize));
    for (x, y, pix) in img.enumerate_pixels() {
        for ch in 0..3 {
            data[(ch, y as usize, x as usize)] = u8_to_signed(pix.0[ch]);
        }
    }
    ImageTensor::new(data)
}

/// Write an image as an 8-bit RGB PNG.
pub fn save_image(img: &ImageTensor, path: &Path) -> Result<()> {
    let (h, w) = img.size();
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (x, y, pix) in buf.enumerate_pixels_mut() {
        for ch in 0..3 {
            pix.0[ch] = signed_to_u8(img.data()[(ch, y as usize, x as usize)]);
        }
    }
    buf.save(path)?;
    Ok(())
}

/// Read a single-channel class-index PNG.
pub fn load_mask(path: &Path, num_classes: usize) -> Result<LabelMask> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let mut data = Array2::zeros((h as usize, w as usize));
    for (x, y, pix) in img.enumerate_pixels() {
        data[(y as usize, x as usize)] = pix.0[0];
    }
    LabelMask::new(data, num_classes)
}

/// Write a mask as a single-channel 8-bit PNG (lossless, diffable).
pub fn save_mask(mask: &LabelMask, path: &Path) -> Result<()> {
    let (h, w) = mask.size();
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for (x, y, pix) in buf.enumerate_pixels_mut() {
        pix.0[0] = mask.data()[(y as usize, x as usize)];
    }
    buf.save(path)?;
    Ok(())
}

/// Write a full sample pair into `<root>/<domain_dir>/{images,labels}/`.
pub fn save_sample(root: &Path, domain_dir: &str, sample: &DomainSample) -> Result<()> {
    let base = root.join(domain_dir);
    std::fs::create_dir_all(base.join("images"))?;
    std::fs::create_dir_all(base.join("labels"))?;
    save_image(
        &sample.image,
        &base.join("images").join(format!("{}.png", sample.name)),
    )?;
    save_mask(
        &sample.mask,
        &base.join("labels").join(format!("{}.png", sample.name)),
    )
}
