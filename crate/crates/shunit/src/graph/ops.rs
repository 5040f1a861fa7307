//! Elementwise, matrix, reduction and gather/scatter operations.

use super::Var;
use ndarray::{Array1, Array2, ArrayD, Axis, Ix1, Ix2, IxDyn};
use std::rc::Rc;

fn assert_same_shape(what: &str, a: &ArrayD<f64>, b: &ArrayD<f64>) {
    assert_eq!(a.shape(), b.shape(), "{what}: operand shapes differ");
}

fn as2(a: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("2-d operand")
}

fn as1(a: &ArrayD<f64>) -> ndarray::ArrayView1<'_, f64> {
    a.view().into_dimensionality::<Ix1>().expect("1-d operand")
}

impl<'t> Var<'t> {
    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_same_shape("add", &a, &b);
        let (ia, ib) = (self.id, other.id);
        self.tape
            .op(&*a + &*b, &[ia, ib], move |g| {
                vec![(ia, g.clone()), (ib, g.clone())]
            })
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_same_shape("sub", &a, &b);
        let (ia, ib) = (self.id, other.id);
        self.tape.op(&*a - &*b, &[ia, ib], move |g| {
            vec![(ia, g.clone()), (ib, -g)]
        })
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_same_shape("mul", &a, &b);
        let (ia, ib) = (self.id, other.id);
        let (ac, bc) = (Rc::clone(&a), Rc::clone(&b));
        self.tape.op(&*a * &*b, &[ia, ib], move |g| {
            vec![(ia, g * &*bc), (ib, g * &*ac)]
        })
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = self.value();
        self.unary(&*v + c, |g| g.clone())
    }

    pub fn mul_scalar(self, c: f64) -> Var<'t> {
        let v = self.value();
        self.unary(&*v * c, move |g| g * c)
    }

    pub fn neg(self) -> Var<'t> {
        self.mul_scalar(-1.0)
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.value();
        let vc = Rc::clone(&v);
        let out = v.mapv(|x| x.max(0.0));
        self.unary(out, move |g| {
            let mut dx = g.clone();
            dx.zip_mut_with(&vc, |d, &x| {
                if x <= 0.0 {
                    *d = 0.0;
                }
            });
            dx
        })
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let v = self.value();
        let vc = Rc::clone(&v);
        let out = v.mapv(|x| if x > 0.0 { x } else { slope * x });
        self.unary(out, move |g| {
            let mut dx = g.clone();
            dx.zip_mut_with(&vc, |d, &x| {
                if x <= 0.0 {
                    *d *= slope;
                }
            });
            dx
        })
    }

    pub fn tanh_act(self) -> Var<'t> {
        let v = self.value();
        let out = Rc::new(v.mapv(f64::tanh));
        let id = self.id;
        let oc = Rc::clone(&out);
        self.tape.op_shared(out, &[id], move |g| {
            let mut dx = g.clone();
            dx.zip_mut_with(&oc, |d, &y| *d *= 1.0 - y * y);
            vec![(id, dx)]
        })
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = self.value();
        let out = Rc::new(v.mapv(|x| 1.0 / (1.0 + (-x).exp())));
        let id = self.id;
        let oc = Rc::clone(&out);
        self.tape.op_shared(out, &[id], move |g| {
            let mut dx = g.clone();
            dx.zip_mut_with(&oc, |d, &y| *d *= y * (1.0 - y));
            vec![(id, dx)]
        })
    }

    /// Numerically stable `ln(1 + exp(x))`.
    pub fn softplus(self) -> Var<'t> {
        let v = self.value();
        let vc = Rc::clone(&v);
        let out = v.mapv(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        self.unary(out, move |g| {
            let mut dx = g.clone();
            dx.zip_mut_with(&vc, |d, &x| *d *= 1.0 / (1.0 + (-x).exp()));
            dx
        })
    }

    pub fn abs_val(self) -> Var<'t> {
        let v = self.value();
        let vc = Rc::clone(&v);
        let out = v.mapv(f64::abs);
        self.unary(out, move |g| {
            let mut dx = g.clone();
            dx.zip_mut_with(&vc, |d, &x| *d *= x.signum());
            dx
        })
    }

    pub fn sum_all(self) -> Var<'t> {
        let v = self.value();
        let shape = v.shape().to_vec();
        let total = v.sum();
        self.unary(ArrayD::from_elem(IxDyn(&[]), total), move |g| {
            ArrayD::from_elem(IxDyn(&shape), g[IxDyn(&[])])
        })
    }

    pub fn mean_all(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum_all().mul_scalar(1.0 / n)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let v = self.value();
        let old = v.shape().to_vec();
        let out = v
            .to_shape(IxDyn(shape))
            .expect("reshape: incompatible size")
            .to_owned();
        self.unary(out, move |g| {
            g.to_shape(IxDyn(&old)).expect("reshape back").to_owned()
        })
    }

    /// Matrix product of two 2-d nodes.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let out = as2(&a).dot(&as2(&b)).into_dyn();
        let (ia, ib) = (self.id, other.id);
        let (ac, bc) = (Rc::clone(&a), Rc::clone(&b));
        self.tape.op(out, &[ia, ib], move |g| {
            let g2 = as2(g);
            let da = g2.dot(&as2(&bc).t()).into_dyn();
            let db = as2(&ac).t().dot(&g2).into_dyn();
            vec![(ia, da), (ib, db)]
        })
    }

    pub fn transpose2(self) -> Var<'t> {
        // as_standard_layout keeps downstream reshape/as_slice users happy
        let v = self.value();
        let out = as2(&v).t().as_standard_layout().into_owned().into_dyn();
        self.unary(out, |g| {
            as2(g).t().as_standard_layout().into_owned().into_dyn()
        })
    }

    /// Concatenate along axis 0 (spectral use: channel concat of `[C, h, w]`).
    pub fn concat0(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let na = a.shape()[0];
        let out = ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("concat0");
        let (ia, ib) = (self.id, other.id);
        self.tape.op(out, &[ia, ib], move |g| {
            let da = g.slice_axis(Axis(0), ndarray::Slice::from(0..na)).to_owned();
            let db = g.slice_axis(Axis(0), ndarray::Slice::from(na..)).to_owned();
            vec![(ia, da), (ib, db)]
        })
    }

    /// Concatenate two 2-d nodes along axis 1.
    pub fn concat1(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let na = a.shape()[1];
        let out = ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("concat1");
        let (ia, ib) = (self.id, other.id);
        self.tape.op(out, &[ia, ib], move |g| {
            let da = g.slice_axis(Axis(1), ndarray::Slice::from(0..na)).to_owned();
            let db = g.slice_axis(Axis(1), ndarray::Slice::from(na..)).to_owned();
            vec![(ia, da), (ib, db)]
        })
    }

    /// Row-wise log-sum-exp of a 2-d node, yielding `[rows]`.
    pub fn row_logsumexp(self) -> Var<'t> {
        let v = self.value();
        let x = as2(&v);
        let out: Array1<f64> = x
            .rows()
            .into_iter()
            .map(|r| {
                let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                max + r.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
            })
            .collect();
        let id = self.id;
        let vc = Rc::clone(&v);
        self.tape.op(out.into_dyn(), &[id], move |g| {
            let g1 = as1(g);
            let x = as2(&vc);
            let mut dx = Array2::zeros(x.raw_dim());
            for r in 0..x.nrows() {
                let max = x.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = x.row(r).iter().map(|&z| (z - max).exp()).sum();
                for c in 0..x.ncols() {
                    dx[(r, c)] = g1[r] * (x[(r, c)] - max).exp() / denom;
                }
            }
            vec![(id, dx.into_dyn())]
        })
    }

    /// Row-wise softmax of a 2-d node.
    pub fn softmax_rows(self) -> Var<'t> {
        let v = self.value();
        let x = as2(&v);
        let mut y = x.to_owned();
        for mut row in y.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|z| (z - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|z| z / sum);
        }
        let out = Rc::new(y.into_dyn());
        let id = self.id;
        let oc = Rc::clone(&out);
        self.tape.op_shared(out, &[id], move |g| {
            let y = as2(&oc);
            let g2 = as2(g);
            let mut dx = Array2::zeros(y.raw_dim());
            for r in 0..y.nrows() {
                let dot: f64 = y.row(r).iter().zip(g2.row(r)).map(|(&a, &b)| a * b).sum();
                for c in 0..y.ncols() {
                    dx[(r, c)] = y[(r, c)] * (g2[(r, c)] - dot);
                }
            }
            vec![(id, dx.into_dyn())]
        })
    }

    /// Row-wise log-softmax of a 2-d node.
    pub fn log_softmax_rows(self) -> Var<'t> {
        let v = self.value();
        let x = as2(&v);
        let mut y = x.to_owned();
        for mut row in y.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|z| z - lse);
        }
        let out = Rc::new(y.into_dyn());
        let id = self.id;
        let oc = Rc::clone(&out);
        self.tape.op_shared(out, &[id], move |g| {
            let y = as2(&oc);
            let g2 = as2(g);
            let mut dx = Array2::zeros(y.raw_dim());
            for r in 0..y.nrows() {
                let gsum: f64 = g2.row(r).sum();
                for c in 0..y.ncols() {
                    dx[(r, c)] = g2[(r, c)] - y[(r, c)].exp() * gsum;
                }
            }
            vec![(id, dx.into_dyn())]
        })
    }

    /// Normalize each row of a 2-d node to unit L2 norm, with the norm
    /// floored at `eps`.
    pub fn l2_normalize_rows(self, eps: f64) -> Var<'t> {
        let v = self.value();
        let x = as2(&v);
        let norms: Vec<f64> = x
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&z| z * z).sum::<f64>().sqrt())
            .collect();
        let mut y = x.to_owned();
        for (mut row, &n) in y.rows_mut().into_iter().zip(&norms) {
            let d = n.max(eps);
            row.mapv_inplace(|z| z / d);
        }
        let out = Rc::new(y.into_dyn());
        let id = self.id;
        let oc = Rc::clone(&out);
        self.tape.op_shared(out, &[id], move |g| {
            let y = as2(&oc);
            let g2 = as2(g);
            let mut dx = Array2::zeros(y.raw_dim());
            for r in 0..y.nrows() {
                let d = norms[r].max(eps);
                if norms[r] > eps {
                    let dot: f64 = y.row(r).iter().zip(g2.row(r)).map(|(&a, &b)| a * b).sum();
                    for c in 0..y.ncols() {
                        dx[(r, c)] = (g2[(r, c)] - y[(r, c)] * dot) / d;
                    }
                } else {
                    for c in 0..y.ncols() {
                        dx[(r, c)] = g2[(r, c)] / d;
                    }
                }
            }
            vec![(id, dx.into_dyn())]
        })
    }

    /// Per-row dot product of two equally shaped 2-d nodes, yielding `[rows]`.
    pub fn rowwise_dot(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_same_shape("rowwise_dot", &a, &b);
        let (av, bv) = (as2(&a), as2(&b));
        let out: Array1<f64> = av
            .rows()
            .into_iter()
            .zip(bv.rows())
            .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| p * q).sum())
            .collect();
        let (ia, ib) = (self.id, other.id);
        let (ac, bc) = (Rc::clone(&a), Rc::clone(&b));
        self.tape.op(out.into_dyn(), &[ia, ib], move |g| {
            let g1 = as1(g);
            let (av, bv) = (as2(&ac), as2(&bc));
            let mut da = Array2::zeros(av.raw_dim());
            let mut db = Array2::zeros(bv.raw_dim());
            for r in 0..av.nrows() {
                for c in 0..av.ncols() {
                    da[(r, c)] = g1[r] * bv[(r, c)];
                    db[(r, c)] = g1[r] * av[(r, c)];
                }
            }
            vec![(ia, da.into_dyn()), (ib, db.into_dyn())]
        })
    }

    /// Diagonal of a square 2-d node.
    pub fn take_diag(self) -> Var<'t> {
        let v = self.value();
        let x = as2(&v);
        let n = x.nrows();
        assert_eq!(n, x.ncols(), "take_diag: square matrix required");
        let out: Array1<f64> = (0..n).map(|i| x[(i, i)]).collect();
        self.unary(out.into_dyn(), move |g| {
            let g1 = as1(g);
            let mut dx = Array2::zeros((n, n));
            for i in 0..n {
                dx[(i, i)] = g1[i];
            }
            dx.into_dyn()
        })
    }

    /// Select sub-array at index `n` of axis 0 (e.g. one class of a bank).
    pub fn index_axis0(self, n: usize) -> Var<'t> {
        let v = self.value();
        let full = v.shape().to_vec();
        let out = v.index_axis(Axis(0), n).to_owned();
        self.unary(out, move |g| {
            let mut dx = ArrayD::zeros(IxDyn(&full));
            dx.index_axis_mut(Axis(0), n).assign(g);
            dx
        })
    }

    /// Gather feature vectors of `[C, h, w]` at flattened pixel indices,
    /// producing `[len(indices), C]` rows.
    pub fn gather_pixels(self, indices: Rc<Vec<usize>>) -> Var<'t> {
        let v = self.value();
        let (c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        let flat = v.as_slice().expect("standard layout");
        let mut out = Array2::zeros((indices.len(), c));
        for (row, &pix) in indices.iter().enumerate() {
            for ch in 0..c {
                out[(row, ch)] = flat[ch * h * w + pix];
            }
        }
        let idx = Rc::clone(&indices);
        self.unary(out.into_dyn(), move |g| {
            let g2 = as2(g);
            let mut dx = ArrayD::zeros(IxDyn(&[c, h, w]));
            let dflat = dx.as_slice_mut().unwrap();
            for (row, &pix) in idx.iter().enumerate() {
                for ch in 0..c {
                    dflat[ch * h * w + pix] += g2[(row, ch)];
                }
            }
            dx
        })
    }

    /// Scatter `[P, C]` rows back into a zero-initialized `[C, h, w]` map at
    /// flattened pixel indices.
    pub fn scatter_pixels(self, indices: Rc<Vec<usize>>, h: usize, w: usize) -> Var<'t> {
        let v = self.value();
        let c = v.shape()[1];
        let rows = as2(&v);
        let mut out = ArrayD::zeros(IxDyn(&[c, h, w]));
        {
            let flat = out.as_slice_mut().unwrap();
            for (row, &pix) in indices.iter().enumerate() {
                for ch in 0..c {
                    flat[ch * h * w + pix] += rows[(row, ch)];
                }
            }
        }
        let idx = Rc::clone(&indices);
        self.unary(out, move |g| {
            let gflat = g.as_slice().expect("standard layout");
            let mut dr = Array2::zeros((idx.len(), c));
            for (row, &pix) in idx.iter().enumerate() {
                for ch in 0..c {
                    dr[(row, ch)] = gflat[ch * h * w + pix];
                }
            }
            dr.into_dyn()
        })
    }

    /// Broadcast per-class scalars `[N]` over a label map, producing `[h, w]`.
    pub fn gather_classes(self, mask: Rc<ndarray::Array2<u8>>) -> Var<'t> {
        let v = self.value();
        let n = v.len();
        let vals = v.as_slice().expect("standard layout");
        let out = mask.mapv(|cls| vals[cls as usize]).into_dyn();
        let mc = Rc::clone(&mask);
        self.unary(out, move |g| {
            let mut dv = Array1::zeros(n);
            for (&cls, &gv) in mc.iter().zip(g.iter()) {
                dv[cls as usize] += gv;
            }
            dv.into_dyn()
        })
    }

    /// Multiply `[C, h, w]` by a spatial map `[h, w]` broadcast over channels.
    pub fn mul_bcast_hw(self, spatial: Var<'t>) -> Var<'t> {
        let (x, a) = (self.value(), spatial.value());
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        assert_eq!(&a.shape(), &[h, w], "mul_bcast_hw: spatial shape");
        let mut out = ArrayD::zeros(IxDyn(&[c, h, w]));
        {
            let xf = x.as_slice().unwrap();
            let af = a.as_slice().unwrap();
            let of = out.as_slice_mut().unwrap();
            for ch in 0..c {
                for p in 0..h * w {
                    of[ch * h * w + p] = xf[ch * h * w + p] * af[p];
                }
            }
        }
        let (ix, ia) = (self.id, spatial.id);
        let (xc, ac) = (Rc::clone(&x), Rc::clone(&a));
        self.tape.op(out, &[ix, ia], move |g| {
            let gf = g.as_slice().unwrap();
            let xf = xc.as_slice().unwrap();
            let af = ac.as_slice().unwrap();
            let mut dx = ArrayD::zeros(IxDyn(&[c, h, w]));
            let mut da = ArrayD::zeros(IxDyn(&[h, w]));
            {
                let dxf = dx.as_slice_mut().unwrap();
                let daf = da.as_slice_mut().unwrap();
                for ch in 0..c {
                    for p in 0..h * w {
                        dxf[ch * h * w + p] = gf[ch * h * w + p] * af[p];
                        daf[p] += gf[ch * h * w + p] * xf[ch * h * w + p];
                    }
                }
            }
            vec![(ix, dx), (ia, da)]
        })
    }

    /// Add a per-channel bias `[C]` to `[C, h, w]`.
    pub fn add_bias_channels(self, bias: Var<'t>) -> Var<'t> {
        let (x, b) = (self.value(), bias.value());
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        assert_eq!(b.len(), c, "add_bias_channels: bias length");
        let mut out = x.as_ref().clone();
        {
            let of = out.as_slice_mut().unwrap();
            let bf = b.as_slice().unwrap();
            for ch in 0..c {
                for p in 0..h * w {
                    of[ch * h * w + p] += bf[ch];
                }
            }
        }
        let (ix, ib) = (self.id, bias.id);
        self.tape.op(out, &[ix, ib], move |g| {
            let gf = g.as_slice().unwrap();
            let mut db = Array1::zeros(c);
            for ch in 0..c {
                for p in 0..h * w {
                    db[ch] += gf[ch * h * w + p];
                }
            }
            vec![(ix, g.clone()), (ib, db.into_dyn())]
        })
    }
}

/// Sum a non-empty list of equally shaped nodes.
pub fn sum_vars<'t>(vars: &[Var<'t>]) -> Var<'t> {
    let mut acc = vars[0];
    for v in &vars[1..] {
        acc = acc.add(*v);
    }
    acc
}
