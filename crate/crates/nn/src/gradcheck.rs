use rand::Rng;

use crate::params::{ParamId, ParamStore};

const STEP: f64 = 1e-5;

/// Compare backprop gradients against central differences.
///
/// `f` evaluates the scalar loss and accumulates its gradient into `store`
/// (gradients are zeroed before every call). `probes` coordinates are drawn
/// uniformly over all scalars. Returns the largest relative error
/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn finite_diff_check<F, R>(mut f: F, store: &mut ParamStore<f64>, probes: usize, rng: &mut R) -> f64
where
    F: FnMut(&mut ParamStore<f64>) -> f64,
    R: Rng + ?Sized,
{
    store.zero_grad();
    f(store);
    let analytic: Vec<Vec<f64>> = store.entries().iter().map(|e| e.grad.data().to_vec()).collect();
    let sizes: Vec<usize> = store.entries().iter().map(|e| e.value.len()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let mut flat = rng.gen_range(0..total);
        let mut entry = 0;
        while flat >= sizes[entry] {
            flat -= sizes[entry];
            entry += 1;
        }
        let id = ParamId(entry);
        let orig = store.value(id).data()[flat];
        store.value_mut(id).data_mut()[flat] = orig + STEP;
        store.zero_grad();
        let up = f(store);
        store.value_mut(id).data_mut()[flat] = orig - STEP;
        store.zero_grad();
        let down = f(store);
        store.value_mut(id).data_mut()[flat] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic[entry][flat];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    store.zero_grad();
    worst
}
