use rand::Rng;

use crate::error::{Error, Result};
use crate::init::orthogonal;
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::{gemm, Tensor};

/// Epsilon added to the variance inside the square root of layer norm.
pub const LN_EPS: f64 = 1e-5;

fn check_cols<T: Real>(x: &Tensor<T>, cols: usize, context: &str) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != cols {
        return Err(Error::shape(context, &[x.shape().first().copied().unwrap_or(0), cols], x.shape()));
    }
    Ok(())
}

fn col_sum_into<T: Real>(dy: &Tensor<T>, out: &mut [T]) {
    for r in 0..dy.rows() {
        for (o, &g) in out.iter_mut().zip(dy.row(r)) {
            *o += g;
        }
    }
}

/// `y = x W + b` with `W` stored row-major as `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let w = orthogonal(in_dim, out_dim, gain, rng);
        let w = store.add(format!("{name}.w"), Tensor::from_f64(&[in_dim, out_dim], &w)?)?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[out_dim]))?;
        Ok(Linear {
            name: name.to_string(),
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        check_cols(x, self.in_dim, &self.name)?;
        let rows = x.rows();
        let mut y = Tensor::zeros(&[rows, self.out_dim]);
        let bias = store.value(self.b).data();
        for r in 0..rows {
            y.row_mut(r).copy_from_slice(bias);
        }
        gemm(
            x.data(),
            [rows, self.in_dim],
            false,
            store.value(self.w).data(),
            [self.in_dim, self.out_dim],
            false,
            y.data_mut(),
            true,
        );
        Ok(y)
    }

    /// Accumulates parameter gradients; returns `dL/dx` when requested.
    pub fn backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let rows = x.rows();
        let dx = need_dx.then(|| {
            let mut dx = Tensor::zeros(&[rows, self.in_dim]);
            gemm(
                dy.data(),
                [rows, self.out_dim],
                false,
                store.value(self.w).data(),
                [self.in_dim, self.out_dim],
                true,
                dx.data_mut(),
                false,
            );
            dx
        });
        gemm(
            x.data(),
            [rows, self.in_dim],
            true,
            dy.data(),
            [rows, self.out_dim],
            false,
            store.grad_mut(self.w).data_mut(),
            true,
        );
        col_sum_into(dy, store.grad_mut(self.b).data_mut());
        dx
    }
}

/// Normalized rows and inverse standard deviations kept for backprop.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

fn normalize_rows<T: Real>(x: &Tensor<T>) -> LayerNormCache<T> {
    let (rows, d) = (x.rows(), x.cols());
    let dn = T::lit(d as f64);
    let eps = T::lit(LN_EPS);
    let mut xhat = Tensor::zeros(&[rows, d]);
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let is = T::one() / (var + eps).sqrt();
        for (o, &v) in xhat.row_mut(r).iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
        inv_std.push(is);
    }
    LayerNormCache { xhat, inv_std }
}

fn affine_rows<T: Real>(xhat: &Tensor<T>, gain: &[T], bias: &[T]) -> Tensor<T> {
    let mut y = xhat.clone();
    for r in 0..y.rows() {
        for ((o, &g), &b) in y.row_mut(r).iter_mut().zip(gain).zip(bias) {
            *o = *o * g + b;
        }
    }
    y
}

/// Row-wise layer normalization over the last dimension:
/// `gain * (x - mean) / sqrt(var + 1e-5) + bias`.
pub fn layer_norm<T: Real>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    check_cols(x, gain.len(), "layer_norm gain")?;
    check_cols(x, bias.len(), "layer_norm bias")?;
    let cache = normalize_rows(x);
    Ok(affine_rows(&cache.xhat, gain.data(), bias.data()))
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        let gain = store.add(format!("{name}.gain"), Tensor::full(&[dim], T::one()))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[dim]))?;
        Ok(LayerNorm {
            name: name.to_string(),
            gain,
            bias,
            dim,
        })
    }

    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, LayerNormCache<T>)> {
        check_cols(x, self.dim, &self.name)?;
        let cache = normalize_rows(x);
        let y = affine_rows(
            &cache.xhat,
            store.value(self.gain).data(),
            store.value(self.bias).data(),
        );
        Ok((y, cache))
    }

    pub fn backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        cache: &LayerNormCache<T>,
        dy: &Tensor<T>,
    ) -> Tensor<T> {
        let (rows, d) = (dy.rows(), dy.cols());
        let dn = T::lit(d as f64);
        let mut dx = Tensor::zeros(&[rows, d]);
        {
            let gain = store.value(self.gain).data();
            let mut dxhat = vec![T::zero(); d];
            for r in 0..rows {
                let xh = cache.xhat.row(r);
                let g = dy.row(r);
                let mut sum = T::zero();
                let mut sum_x = T::zero();
                for j in 0..d {
                    dxhat[j] = g[j] * gain[j];
                    sum += dxhat[j];
                    sum_x += dxhat[j] * xh[j];
                }
                let is = cache.inv_std[r];
                for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                    *o = is / dn * (dn * dxhat[j] - sum - xh[j] * sum_x);
                }
            }
        }
        {
            let dg = store.grad_mut(self.gain).data_mut();
            for r in 0..rows {
                for ((o, &g), &xh) in dg.iter_mut().zip(dy.row(r)).zip(cache.xhat.row(r)) {
                    *o += g * xh;
                }
            }
        }
        col_sum_into(dy, store.grad_mut(self.bias).data_mut());
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply<T: Real>(self, x: &mut Tensor<T>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => x.data_mut().iter_mut().for_each(|v| {
                if *v < T::zero() {
                    *v = T::zero()
                }
            }),
            Activation::Tanh => x.data_mut().iter_mut().for_each(|v| *v = v.tanh()),
        }
    }

    /// Multiply `dy` in place by the derivative, given the activation output `y`.
    fn backward_in_place<T: Real>(self, y: &Tensor<T>, dy: &mut Tensor<T>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for (g, &v) in dy.data_mut().iter_mut().zip(y.data()) {
                    if v <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            Activation::Tanh => {
                for (g, &v) in dy.data_mut().iter_mut().zip(y.data()) {
                    *g *= T::one() - v * v;
                }
            }
        }
    }
}

/// Linear layer, optional layer norm, then an activation.
#[derive(Debug, Clone)]
pub struct Dense {
    pub linear: Linear,
    pub norm: Option<LayerNorm>,
    pub act: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseCache<T> {
    x: Tensor<T>,
    norm: Option<LayerNormCache<T>>,
    y: Tensor<T>,
}

impl Dense {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        norm: bool,
        act: Activation,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let linear = Linear::new(store, &format!("{name}.lin"), in_dim, out_dim, gain, rng)?;
        let norm = if norm {
            Some(LayerNorm::new(store, &format!("{name}.ln"), out_dim)?)
        } else {
            None
        };
        Ok(Dense { linear, norm, act })
    }

    pub fn in_dim(&self) -> usize {
        self.linear.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.linear.out_dim
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.linear.forward(store, x)?;
        if let Some(ln) = &self.norm {
            h = ln.forward(store, &h)?.0;
        }
        self.act.apply(&mut h);
        Ok(h)
    }

    pub fn forward_cached<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, DenseCache<T>)> {
        let mut h = self.linear.forward(store, x)?;
        let mut norm_cache = None;
        if let Some(ln) = &self.norm {
            let (y, c) = ln.forward(store, &h)?;
            h = y;
            norm_cache = Some(c);
        }
        self.act.apply(&mut h);
        let cache = DenseCache {
            x: x.clone(),
            norm: norm_cache,
            y: h.clone(),
        };
        Ok((h, cache))
    }

    pub fn backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        cache: &DenseCache<T>,
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let mut g = dy.clone();
        self.act.backward_in_place(&cache.y, &mut g);
        if let (Some(ln), Some(c)) = (&self.norm, &cache.norm) {
            g = ln.backward(store, c, &g);
        }
        self.linear.backward(store, &cache.x, &g, need_dx)
    }
}

/// GRU cell. Gates use the logistic sigmoid; the update follows
/// `h' = (1 - z) * n + z * h` with `n = tanh(W_n x + U_n (r * h) + b_n)`.
///
/// Input weights are stored as one `[in, 3H]` matrix with column blocks
/// `[r | z | n]`; recurrent weights as `[H, 2H]` (`r | z`) and `[H, H]` (`n`);
/// a single bias of length `3H`.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub name: String,
    pub w: ParamId,
    pub u_rz: ParamId,
    pub u_n: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct GruCache<T> {
    x: Tensor<T>,
    h: Tensor<T>,
    r: Tensor<T>,
    z: Tensor<T>,
    n: Tensor<T>,
    rh: Tensor<T>,
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl GruCell {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let h = hidden;
        let mut w = vec![0.0; in_dim * 3 * h];
        for gate in 0..3 {
            let block = orthogonal(in_dim, h, 1.0, rng);
            for i in 0..in_dim {
                w[i * 3 * h + gate * h..i * 3 * h + (gate + 1) * h]
                    .copy_from_slice(&block[i * h..(i + 1) * h]);
            }
        }
        let mut u_rz = vec![0.0; h * 2 * h];
        for gate in 0..2 {
            let block = orthogonal(h, h, 1.0, rng);
            for i in 0..h {
                u_rz[i * 2 * h + gate * h..i * 2 * h + (gate + 1) * h]
                    .copy_from_slice(&block[i * h..(i + 1) * h]);
            }
        }
        let u_n = orthogonal(h, h, 1.0, rng);
        let w = store.add(format!("{name}.w"), Tensor::from_f64(&[in_dim, 3 * h], &w)?)?;
        let u_rz = store.add(format!("{name}.u_rz"), Tensor::from_f64(&[h, 2 * h], &u_rz)?)?;
        let u_n = store.add(format!("{name}.u_n"), Tensor::from_f64(&[h, h], &u_n)?)?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[3 * h]))?;
        Ok(GruCell {
            name: name.to_string(),
            w,
            u_rz,
            u_n,
            b,
            in_dim,
            hidden,
        })
    }

    pub fn initial_state<T: Real>(&self, batch: usize) -> Tensor<T> {
        Tensor::zeros(&[batch, self.hidden])
    }

    pub fn step<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.step_cached(store, x, h)?.0)
    }

    pub fn step_cached<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
        h: &Tensor<T>,
    ) -> Result<(Tensor<T>, GruCache<T>)> {
        check_cols(x, self.in_dim, &format!("{} input", self.name))?;
        check_cols(h, self.hidden, &format!("{} state", self.name))?;
        if x.rows() != h.rows() {
            return Err(Error::shape(&self.name, &[x.rows()], &[h.rows()]));
        }
        let (bsz, hd) = (x.rows(), self.hidden);
        let mut gx = Tensor::zeros(&[bsz, 3 * hd]);
        let bias = store.value(self.b).data();
        for r in 0..bsz {
            gx.row_mut(r).copy_from_slice(bias);
        }
        gemm(
            x.data(),
            [bsz, self.in_dim],
            false,
            store.value(self.w).data(),
            [self.in_dim, 3 * hd],
            false,
            gx.data_mut(),
            true,
        );
        let mut gh = Tensor::zeros(&[bsz, 2 * hd]);
        gemm(
            h.data(),
            [bsz, hd],
            false,
            store.value(self.u_rz).data(),
            [hd, 2 * hd],
            false,
            gh.data_mut(),
            false,
        );
        let mut r = Tensor::zeros(&[bsz, hd]);
        let mut z = Tensor::zeros(&[bsz, hd]);
        let mut rh = Tensor::zeros(&[bsz, hd]);
        for i in 0..bsz {
            let (gxr, ghr, hr) = (gx.row(i), gh.row(i), h.row(i));
            for j in 0..hd {
                let rv = sigmoid(gxr[j] + ghr[j]);
                let zv = sigmoid(gxr[hd + j] + ghr[hd + j]);
                r.row_mut(i)[j] = rv;
                z.row_mut(i)[j] = zv;
                rh.row_mut(i)[j] = rv * hr[j];
            }
        }
        let mut n = Tensor::zeros(&[bsz, hd]);
        gemm(
            rh.data(),
            [bsz, hd],
            false,
            store.value(self.u_n).data(),
            [hd, hd],
            false,
            n.data_mut(),
            false,
        );
        let mut h_new = Tensor::zeros(&[bsz, hd]);
        for i in 0..bsz {
            let gxr = gx.row(i);
            for j in 0..hd {
                let nv = (n.row(i)[j] + gxr[2 * hd + j]).tanh();
                n.row_mut(i)[j] = nv;
                let zv = z.row(i)[j];
                h_new.row_mut(i)[j] = (T::one() - zv) * nv + zv * h.row(i)[j];
            }
        }
        let cache = GruCache {
            x: x.clone(),
            h: h.clone(),
            r,
            z,
            n,
            rh,
        };
        Ok((h_new, cache))
    }

    /// Given `dL/dh'`, accumulate parameter gradients and return
    /// `(dL/dx, dL/dh)`.
    pub fn backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        cache: &GruCache<T>,
        dh_new: &Tensor<T>,
        need_dx: bool,
    ) -> (Option<Tensor<T>>, Tensor<T>) {
        let (bsz, hd) = (dh_new.rows(), self.hidden);
        let mut dh = Tensor::zeros(&[bsz, hd]);
        let mut dn_pre = Tensor::zeros(&[bsz, hd]);
        let mut drz_pre = Tensor::zeros(&[bsz, 2 * hd]);
        for i in 0..bsz {
            for j in 0..hd {
                let g = dh_new.row(i)[j];
                let (zv, nv, hv) = (cache.z.row(i)[j], cache.n.row(i)[j], cache.h.row(i)[j]);
                dh.row_mut(i)[j] = g * zv;
                dn_pre.row_mut(i)[j] = g * (T::one() - zv) * (T::one() - nv * nv);
                drz_pre.row_mut(i)[hd + j] = g * (hv - nv) * zv * (T::one() - zv);
            }
        }
        let mut d_rh = Tensor::zeros(&[bsz, hd]);
        gemm(
            dn_pre.data(),
            [bsz, hd],
            false,
            store.value(self.u_n).data(),
            [hd, hd],
            true,
            d_rh.data_mut(),
            false,
        );
        for i in 0..bsz {
            for j in 0..hd {
                let g = d_rh.row(i)[j];
                let (rv, hv) = (cache.r.row(i)[j], cache.h.row(i)[j]);
                dh.row_mut(i)[j] += g * rv;
                drz_pre.row_mut(i)[j] = g * hv * rv * (T::one() - rv);
            }
        }
        gemm(
            cache.rh.data(),
            [bsz, hd],
            true,
            dn_pre.data(),
            [bsz, hd],
            false,
            store.grad_mut(self.u_n).data_mut(),
            true,
        );
        gemm(
            cache.h.data(),
            [bsz, hd],
            true,
            drz_pre.data(),
            [bsz, 2 * hd],
            false,
            store.grad_mut(self.u_rz).data_mut(),
            true,
        );
        gemm(
            drz_pre.data(),
            [bsz, 2 * hd],
            false,
            store.value(self.u_rz).data(),
            [hd, 2 * hd],
            true,
            dh.data_mut(),
            true,
        );
        let dgx = Tensor::concat_cols(&[&drz_pre, &dn_pre]);
        gemm(
            cache.x.data(),
            [bsz, self.in_dim],
            true,
            dgx.data(),
            [bsz, 3 * hd],
            false,
            store.grad_mut(self.w).data_mut(),
            true,
        );
        col_sum_into(&dgx, store.grad_mut(self.b).data_mut());
        let dx = need_dx.then(|| {
            let mut dx = Tensor::zeros(&[bsz, self.in_dim]);
            gemm(
                dgx.data(),
                [bsz, 3 * hd],
                false,
                store.value(self.w).data(),
                [self.in_dim, 3 * hd],
                true,
                dx.data_mut(),
                false,
            );
            dx
        });
        (dx, dh)
    }
}
