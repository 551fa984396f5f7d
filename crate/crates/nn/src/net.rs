use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Activation, Dense, DenseCache, GruCache, GruCell};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

/// A stack of [`Dense`] blocks.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    layers: Vec<DenseCache<T>>,
}

impl Mlp {
    /// Hidden blocks are `dense -> layer norm -> ReLU` (gain sqrt 2); the final
    /// block is a plain dense layer followed by `out_act`, initialized with
    /// `out_gain`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        out_act: Activation,
        out_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Dense::new(
                store,
                &format!("{name}.fc{i}"),
                prev,
                h,
                true,
                Activation::Relu,
                std::f64::consts::SQRT_2,
                rng,
            )?);
            prev = h;
        }
        layers.push(Dense::new(
            store,
            &format!("{name}.out"),
            prev,
            out_dim,
            false,
            out_act,
            out_gain,
            rng,
        )?);
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("an MLP needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::shape(
                    format!("{} -> {}", w[0].linear.name, w[1].linear.name),
                    &[w[0].out_dim()],
                    &[w[1].in_dim()],
                ));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.layers[0].forward(store, x)?;
        for layer in &self.layers[1..] {
            h = layer.forward(store, &h)?;
        }
        Ok(h)
    }

    pub fn forward_cached<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, MlpCache<T>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let (mut h, c) = self.layers[0].forward_cached(store, x)?;
        caches.push(c);
        for layer in &self.layers[1..] {
            let (y, c) = layer.forward_cached(store, &h)?;
            caches.push(c);
            h = y;
        }
        Ok((h, MlpCache { layers: caches }))
    }

    pub fn backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        cache: &MlpCache<T>,
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let mut g = dy.clone();
        for (i, (layer, c)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let want_dx = i > 0 || need_dx;
            g = layer.backward(store, c, &g, want_dx)?;
        }
        Some(g)
    }
}

/// Dense trunk, GRU, then an output head: the recurrent network shape used
/// for the encoder, actor and critic.
#[derive(Debug, Clone)]
pub struct RecurrentNet {
    pub trunk: Mlp,
    pub gru: GruCell,
    pub head: Mlp,
}

#[derive(Debug, Clone)]
pub struct RecurrentCache<T> {
    trunk: Vec<MlpCache<T>>,
    gru: Vec<GruCache<T>>,
    head: Vec<MlpCache<T>>,
}

impl RecurrentNet {
    /// `trunk_layers` dense blocks of `width` units (layer norm + ReLU), a
    /// GRU with `width` hidden units and a linear head with `out_act`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        width: usize,
        trunk_layers: usize,
        out_dim: usize,
        out_act: Activation,
        out_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if trunk_layers == 0 {
            return Err(Error::Argument("recurrent net needs at least one trunk layer".into()));
        }
        let mut layers = Vec::with_capacity(trunk_layers);
        let mut prev = in_dim;
        for i in 0..trunk_layers {
            layers.push(Dense::new(
                store,
                &format!("{name}.fc{i}"),
                prev,
                width,
                true,
                Activation::Relu,
                std::f64::consts::SQRT_2,
                rng,
            )?);
            prev = width;
        }
        let trunk = Mlp { layers };
        let gru = GruCell::new(store, &format!("{name}.gru"), width, width, rng)?;
        let head = Mlp {
            layers: vec![Dense::new(
                store,
                &format!("{name}.head"),
                width,
                out_dim,
                false,
                out_act,
                out_gain,
                rng,
            )?],
        };
        Ok(RecurrentNet { trunk, gru, head })
    }

    pub fn in_dim(&self) -> usize {
        self.trunk.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.head.out_dim()
    }

    pub fn hidden(&self) -> usize {
        self.gru.hidden
    }

    pub fn initial_state<T: Real>(&self, batch: usize) -> Tensor<T> {
        self.gru.initial_state(batch)
    }

    /// One inference step; returns `(output, next hidden state)`.
    pub fn step<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
        h: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let a = self.trunk.forward(store, x)?;
        let h2 = self.gru.step(store, &a, h)?;
        let y = self.head.forward(store, &h2)?;
        Ok((y, h2))
    }

    /// Unroll over a sequence of `[batch, in]` inputs from a zero state.
    pub fn forward_seq<T: Real>(
        &self,
        store: &ParamStore<T>,
        xs: &[Tensor<T>],
    ) -> Result<(Vec<Tensor<T>>, RecurrentCache<T>)> {
        let batch = xs.first().map(|x| x.rows()).unwrap_or(0);
        let mut h = self.initial_state(batch);
        let mut cache = RecurrentCache {
            trunk: Vec::with_capacity(xs.len()),
            gru: Vec::with_capacity(xs.len()),
            head: Vec::with_capacity(xs.len()),
        };
        let mut ys = Vec::with_capacity(xs.len());
        for x in xs {
            let (a, ct) = self.trunk.forward_cached(store, x)?;
            let (h2, cg) = self.gru.step_cached(store, &a, &h)?;
            let (y, ch) = self.head.forward_cached(store, &h2)?;
            cache.trunk.push(ct);
            cache.gru.push(cg);
            cache.head.push(ch);
            ys.push(y);
            h = h2;
        }
        Ok((ys, cache))
    }

    /// Backprop through time given `dL/dy_t` for every step.
    pub fn backward_seq<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        cache: &RecurrentCache<T>,
        dys: &[Tensor<T>],
        need_dx: bool,
    ) -> Option<Vec<Tensor<T>>> {
        let steps = dys.len();
        let mut dxs: Vec<Option<Tensor<T>>> = vec![None; steps];
        let mut dh_next: Option<Tensor<T>> = None;
        for t in (0..steps).rev() {
            let mut dh = self
                .head
                .backward(store, &cache.head[t], &dys[t], true)
                .expect("requested");
            if let Some(next) = &dh_next {
                dh.add_assign(next);
            }
            let (da, dh_prev) = self.gru.backward(store, &cache.gru[t], &dh, true);
            dh_next = Some(dh_prev);
            let da = da.expect("requested");
            dxs[t] = self.trunk.backward(store, &cache.trunk[t], &da, need_dx);
        }
        need_dx.then(|| dxs.into_iter().map(|d| d.expect("requested")).collect())
    }
}
