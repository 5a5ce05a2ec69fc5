//! Central-difference gradient checking against the tape's analytic grads.

use crate::nn::params::ParamStore;
use crate::nn::tape::GradStore;
use crate::rng;
use rand::Rng;

/// Compare analytic gradients with central differences on a random coordinate
/// subset (at least `min_coords`, or all coordinates when fewer exist).
/// Returns the max relative error with denominator max(|a|, |n|, 1e-3).
/// The floor keeps central-difference roundoff (about machine epsilon times
/// the loss magnitude over eps) from dominating coordinates whose true
/// gradient is near zero; such coordinates are judged absolutely instead.
///
/// `f` evaluates the scalar objective and its analytic gradient at the given
/// parameters; only the loss value is used at perturbed points.
pub fn grad_check<F>(f: F, params: &ParamStore, eps: f64, min_coords: usize, seed: u64) -> f64
where
    F: Fn(&ParamStore) -> (f64, GradStore),
{
    let (_, analytic) = f(params);
    let mut coords: Vec<(String, usize, usize)> = Vec::new();
    for name in params.names() {
        let t = params.get(name);
        for r in 0..t.nrows() {
            for c in 0..t.ncols() {
                coords.push((name.clone(), r, c));
            }
        }
    }
    let mut rng = rng::stream(seed, "grad-check");
    let picked: Vec<(String, usize, usize)> = if coords.len() <= min_coords {
        coords
    } else {
        (0..min_coords)
            .map(|_| coords[rng.gen_range(0..coords.len())].clone())
            .collect()
    };

    let mut max_rel = 0.0f64;
    let mut work = params.clone();
    for (name, r, c) in picked {
        let orig = work.get(&name)[[r, c]];
        work.get_mut(&name)[[r, c]] = orig + eps;
        let (f_plus, _) = f(&work);
        work.get_mut(&name)[[r, c]] = orig - eps;
        let (f_minus, _) = f(&work);
        work.get_mut(&name)[[r, c]] = orig;

        let numeric = (f_plus - f_minus) / (2.0 * eps);
        let a = analytic
            .get(&name)
            .map(|g| g[[r, c]])
            .unwrap_or(0.0);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
        max_rel = max_rel.max(rel);
    }
    max_rel
}
