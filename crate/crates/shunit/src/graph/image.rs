//! Spatial operations on `[C, H, W]` feature maps: convolution, padding,
//! pooling, resampling and instance normalization.
//!
//! Convolution is lowered to a GEMM over an im2col matrix. The column matrix
//! is rebuilt during backward instead of being captured, which keeps tape
//! memory proportional to the feature maps themselves.

use super::Var;
use ndarray::{Array2, ArrayD, IxDyn};
use std::rc::Rc;

fn standardize(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Border handling for convolution padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Reflect,
}

fn chw(x: &ArrayD<f64>) -> (usize, usize, usize) {
    assert_eq!(x.ndim(), 3, "expected [C, H, W]");
    (x.shape()[0], x.shape()[1], x.shape()[2])
}

/// Mirror index into `[0, n)` without repeating the border sample.
fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
    debug_assert!((0..n).contains(&j), "reflect pad wider than input");
    j as usize
}

fn im2col(x: &ArrayD<f64>, kh: usize, kw: usize, stride: usize) -> Array2<f64> {
    let (c, h, w) = chw(x);
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let xf = x.as_slice().expect("standard layout");
    let mut cols = Array2::zeros((c * kh * kw, oh * ow));
    let cf = cols.as_slice_mut().unwrap();
    for ci in 0..c {
        for r in 0..kh {
            for q in 0..kw {
                let row = ((ci * kh + r) * kw + q) * (oh * ow);
                for oy in 0..oh {
                    let src = ci * h * w + (oy * stride + r) * w + q;
                    let dst = row + oy * ow;
                    for ox in 0..ow {
                        cf[dst + ox] = xf[src + ox * stride];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    cols: &Array2<f64>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> ArrayD<f64> {
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let mut x = ArrayD::zeros(IxDyn(&[c, h, w]));
    let xf = x.as_slice_mut().unwrap();
    let cf = cols.as_slice().expect("standard layout");
    for ci in 0..c {
        for r in 0..kh {
            for q in 0..kw {
                let row = ((ci * kh + r) * kw + q) * (oh * ow);
                for oy in 0..oh {
                    let dst = ci * h * w + (oy * stride + r) * w + q;
                    let src = row + oy * ow;
                    for ox in 0..ow {
                        xf[dst + ox * stride] += cf[src + ox];
                    }
                }
            }
        }
    }
    x
}

impl<'t> Var<'t> {
    /// Pad a `[C, H, W]` map by `pad` pixels on every side.
    pub fn pad2d(self, pad: usize, mode: PadMode) -> Var<'t> {
        if pad == 0 {
            return self;
        }
        let v = self.value();
        let (c, h, w) = chw(&v);
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let mut out = ArrayD::zeros(IxDyn(&[c, ph, pw]));
        {
            let xf = v.as_slice().unwrap();
            let of = out.as_slice_mut().unwrap();
            for ci in 0..c {
                for y in 0..ph {
                    for x in 0..pw {
                        let val = match mode {
                            PadMode::Zero => {
                                let (sy, sx) = (y as isize - pad as isize, x as isize - pad as isize);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    0.0
                                } else {
                                    xf[ci * h * w + sy as usize * w + sx as usize]
                                }
                            }
                            PadMode::Reflect => {
                                let sy = reflect_index(y as isize - pad as isize, h);
                                let sx = reflect_index(x as isize - pad as isize, w);
                                xf[ci * h * w + sy * w + sx]
                            }
                        };
                        of[ci * ph * pw + y * pw + x] = val;
                    }
                }
            }
        }
        self.unary(out, move |g| {
            let gf = g.as_slice().unwrap();
            let mut dx = ArrayD::zeros(IxDyn(&[c, h, w]));
            let df = dx.as_slice_mut().unwrap();
            for ci in 0..c {
                for y in 0..ph {
                    for x in 0..pw {
                        let gv = gf[ci * ph * pw + y * pw + x];
                        match mode {
                            PadMode::Zero => {
                                let (sy, sx) =
                                    (y as isize - pad as isize, x as isize - pad as isize);
                                if sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize {
                                    df[ci * h * w + sy as usize * w + sx as usize] += gv;
                                }
                            }
                            PadMode::Reflect => {
                                let sy = reflect_index(y as isize - pad as isize, h);
                                let sx = reflect_index(x as isize - pad as isize, w);
                                df[ci * h * w + sy * w + sx] += gv;
                            }
                        }
                    }
                }
            }
            dx
        })
    }

    /// 2-d convolution of an already padded `[Cin, H, W]` input with weights
    /// `[Cout, Cin, kh, kw]` and bias `[Cout]`.
    pub fn conv2d(self, weight: Var<'t>, bias: Var<'t>, stride: usize) -> Var<'t> {
        let x = self.value();
        let wt = weight.value();
        let b = bias.value();
        let (c, h, w) = chw(&x);
        let ws = wt.shape().to_vec();
        assert_eq!(ws.len(), 4, "conv2d: weight must be [Cout, Cin, kh, kw]");
        let (cout, cin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(cin, c, "conv2d: input channels");
        assert!(h >= kh && w >= kw, "conv2d: kernel larger than input");
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;

        let cols = Rc::new(im2col(&x, kh, kw, stride));
        let w2 = wt
            .to_shape((cout, cin * kh * kw))
            .expect("weight layout")
            .to_owned();
        let mut out2 = w2.dot(&*cols);
        let bf = b.as_slice().unwrap();
        for (mut row, &bv) in out2.rows_mut().into_iter().zip(bf) {
            row.mapv_inplace(|v| v + bv);
        }
        let out = out2.into_shape_with_order((cout, oh, ow)).unwrap().into_dyn();

        let (ix, iw, ib) = (self.id, weight.id, bias.id);
        let wc = Rc::clone(&wt);
        self.tape.op(out, &[ix, iw, ib], move |g| {
            let g2 = g
                .to_shape((cout, oh * ow))
                .expect("grad layout")
                .to_owned();
            // dot with a transposed operand can come back column-major
            let dw = standardize(g2.dot(&cols.t()))
                .into_shape_with_order((cout, cin, kh, kw))
                .unwrap()
                .into_dyn();
            let db: ndarray::Array1<f64> = g2.rows().into_iter().map(|r| r.sum()).collect();
            let w2 = wc
                .to_shape((cout, cin * kh * kw))
                .expect("weight layout")
                .to_owned();
            let dcols = standardize(w2.t().dot(&g2));
            let dx = col2im(&dcols, c, h, w, kh, kw, stride);
            vec![(ix, dx), (iw, dw), (ib, db.into_dyn())]
        })
    }

    /// 3x3 average pooling with stride 2 and zero padding 1 (fixed divisor 9).
    pub fn avg_pool3_s2(self) -> Var<'t> {
        let v = self.value();
        let (c, h, w) = chw(&v);
        let oh = (h - 1) / 2 + 1;
        let ow = (w - 1) / 2 + 1;
        let xf = v.as_slice().unwrap();
        let mut out = ArrayD::zeros(IxDyn(&[c, oh, ow]));
        {
            let of = out.as_slice_mut().unwrap();
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for r in 0..3usize {
                            for q in 0..3usize {
                                let sy = (2 * oy + r) as isize - 1;
                                let sx = (2 * ox + q) as isize - 1;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    acc += xf[ci * h * w + sy as usize * w + sx as usize];
                                }
                            }
                        }
                        of[ci * oh * ow + oy * ow + ox] = acc / 9.0;
                    }
                }
            }
        }
        self.unary(out, move |g| {
            let gf = g.as_slice().unwrap();
            let mut dx = ArrayD::zeros(IxDyn(&[c, h, w]));
            let df = dx.as_slice_mut().unwrap();
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = gf[ci * oh * ow + oy * ow + ox] / 9.0;
                        for r in 0..3usize {
                            for q in 0..3usize {
                                let sy = (2 * oy + r) as isize - 1;
                                let sx = (2 * ox + q) as isize - 1;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    df[ci * h * w + sy as usize * w + sx as usize] += gv;
                                }
                            }
                        }
                    }
                }
            }
            dx
        })
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample_nearest2(self) -> Var<'t> {
        let v = self.value();
        let (c, h, w) = chw(&v);
        let xf = v.as_slice().unwrap();
        let mut out = ArrayD::zeros(IxDyn(&[c, 2 * h, 2 * w]));
        {
            let of = out.as_slice_mut().unwrap();
            for ci in 0..c {
                for y in 0..2 * h {
                    for x in 0..2 * w {
                        of[ci * 4 * h * w + y * 2 * w + x] = xf[ci * h * w + (y / 2) * w + x / 2];
                    }
                }
            }
        }
        self.unary(out, move |g| {
            let gf = g.as_slice().unwrap();
            let mut dx = ArrayD::zeros(IxDyn(&[c, h, w]));
            let df = dx.as_slice_mut().unwrap();
            for ci in 0..c {
                for y in 0..2 * h {
                    for x in 0..2 * w {
                        df[ci * h * w + (y / 2) * w + x / 2] += gf[ci * 4 * h * w + y * 2 * w + x];
                    }
                }
            }
            dx
        })
    }

    /// Bilinear resize to `(oh, ow)`, half-pixel centers, edges clamped.
    pub fn bilinear_resize(self, oh: usize, ow: usize) -> Var<'t> {
        let v = self.value();
        let (c, h, w) = chw(&v);
        if (oh, ow) == (h, w) {
            return self;
        }
        let ytab = resize_taps(h, oh);
        let xtab = resize_taps(w, ow);
        let xf = v.as_slice().unwrap();
        let mut out = ArrayD::zeros(IxDyn(&[c, oh, ow]));
        {
            let of = out.as_slice_mut().unwrap();
            for ci in 0..c {
                for (oy, &(y0, y1, wy)) in ytab.iter().enumerate() {
                    for (ox, &(x0, x1, wx)) in xtab.iter().enumerate() {
                        let p00 = xf[ci * h * w + y0 * w + x0];
                        let p01 = xf[ci * h * w + y0 * w + x1];
                        let p10 = xf[ci * h * w + y1 * w + x0];
                        let p11 = xf[ci * h * w + y1 * w + x1];
                        let top = p00 * (1.0 - wx) + p01 * wx;
                        let bot = p10 * (1.0 - wx) + p11 * wx;
                        of[ci * oh * ow + oy * ow + ox] = top * (1.0 - wy) + bot * wy;
                    }
                }
            }
        }
        self.unary(out, move |g| {
            let gf = g.as_slice().unwrap();
            let mut dx = ArrayD::zeros(IxDyn(&[c, h, w]));
            let df = dx.as_slice_mut().unwrap();
            for ci in 0..c {
                for (oy, &(y0, y1, wy)) in ytab.iter().enumerate() {
                    for (ox, &(x0, x1, wx)) in xtab.iter().enumerate() {
                        let gv = gf[ci * oh * ow + oy * ow + ox];
                        df[ci * h * w + y0 * w + x0] += gv * (1.0 - wy) * (1.0 - wx);
                        df[ci * h * w + y0 * w + x1] += gv * (1.0 - wy) * wx;
                        df[ci * h * w + y1 * w + x0] += gv * wy * (1.0 - wx);
                        df[ci * h * w + y1 * w + x1] += gv * wy * wx;
                    }
                }
            }
            dx
        })
    }

    /// Instance normalization over spatial positions, per channel, with
    /// population variance and an `eps` floor inside the square root.
    pub fn instance_norm(self, eps: f64) -> Var<'t> {
        let v = self.value();
        let (c, h, w) = chw(&v);
        let n = (h * w) as f64;
        let xf = v.as_slice().unwrap();
        let mut sigma = vec![0.0f64; c];
        let mut out = ArrayD::zeros(IxDyn(&[c, h, w]));
        {
            let of = out.as_slice_mut().unwrap();
            for ci in 0..c {
                let base = ci * h * w;
                let mean = xf[base..base + h * w].iter().sum::<f64>() / n;
                let var = xf[base..base + h * w]
                    .iter()
                    .map(|&x| (x - mean) * (x - mean))
                    .sum::<f64>()
                    / n;
                let sd = (var + eps).sqrt();
                sigma[ci] = sd;
                for p in 0..h * w {
                    of[base + p] = (xf[base + p] - mean) / sd;
                }
            }
        }
        let out = Rc::new(out);
        let oc = Rc::clone(&out);
        let id = self.id;
        self.tape.op_shared(out, &[id], move |g| {
            let gf = g.as_slice().unwrap();
            let yf = oc.as_slice().unwrap();
            let mut dx = ArrayD::zeros(IxDyn(&[c, h, w]));
            let df = dx.as_slice_mut().unwrap();
            for ci in 0..c {
                let base = ci * h * w;
                let gsum: f64 = gf[base..base + h * w].iter().sum();
                let gydot: f64 = (0..h * w).map(|p| gf[base + p] * yf[base + p]).sum();
                let inv = 1.0 / sigma[ci];
                for p in 0..h * w {
                    df[base + p] =
                        inv * (gf[base + p] - gsum / n - yf[base + p] * gydot / n);
                }
            }
            vec![(id, dx)]
        })
    }

}

/// Source taps and lerp weight for one output coordinate of a bilinear
/// resize with half-pixel centers.
fn resize_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}
