use rand::seq::index;

use super::ParamRegistry;
use crate::seed;

/// Compares the analytic flat gradient against central differences on up to
/// `samples` random coordinates and returns the largest relative error
/// `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// `loss_fn` must compute the loss and add its gradient into the registry; it
/// always sees zeroed gradients. It must be deterministic (no dropout).
pub fn grad_check<F>(reg: &mut ParamRegistry, h: f64, samples: usize, seed: u64, mut loss_fn: F) -> f64
where
    F: FnMut(&mut ParamRegistry) -> f64,
{
    reg.zero_grads();
    loss_fn(reg);
    let analytic = reg.flat_grads();
    let n = analytic.len();
    let coords: Vec<usize> = if samples >= n {
        (0..n).collect()
    } else {
        let mut rng = seed::rng(seed, "grad-check");
        let mut c = index::sample(&mut rng, n, samples).into_vec();
        c.sort_unstable();
        c
    };
    let mut worst: f64 = 0.0;
    for k in coords {
        let (id, off) = reg.locate(k).expect("coordinate in range");
        let orig = reg.get(id).values[off];
        reg.get_mut(id).values[off] = orig + h;
        reg.zero_grads();
        let plus = loss_fn(reg);
        reg.get_mut(id).values[off] = orig - h;
        reg.zero_grads();
        let minus = loss_fn(reg);
        reg.get_mut(id).values[off] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[k];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    reg.zero_grads();
    worst
}
