//! Shared helpers for integration tests: central finite differences over
//! every parameter coordinate, and a guarded relative-error comparison.

use clo_core::nnet::{GradStore, PolicyModel};

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
/// Coordinates where both gradients are below this magnitude are compared
/// absolutely; relative error on vanishing values is dominated by
/// finite-difference noise.
pub const ABS_FLOOR: f64 = 1e-9;

/// Central finite-difference gradient of `loss` over every parameter
/// coordinate of `model`.
pub fn fd_gradient<F>(model: &PolicyModel, mut loss: F) -> GradStore
where
    F: FnMut(&PolicyModel) -> f64,
{
    let mut probe = model.clone();
    let mut grads = GradStore::zeros(model.config());
    for name in model.param_names() {
        let len = model.param(&name).unwrap().len();
        for i in 0..len {
            let original = probe.param(&name).unwrap()[i];
            probe.param_mut(&name).unwrap()[i] = original + FD_STEP;
            let plus = loss(&probe);
            probe.param_mut(&name).unwrap()[i] = original - FD_STEP;
            let minus = loss(&probe);
            probe.param_mut(&name).unwrap()[i] = original;
            grads.set(&name, i, (plus - minus) / (2.0 * FD_STEP));
        }
    }
    grads
}

/// Maximum guarded relative error between two gradient stores.
pub fn max_relative_error(analytic: &GradStore, numeric: &GradStore) -> f64 {
    let mut worst = 0.0f64;
    for name in analytic.names() {
        let a = analytic.get(&name).unwrap();
        let n = numeric.get(&name).unwrap();
        for (x, y) in a.iter().zip(n) {
            let denom = x.abs().max(y.abs());
            if denom < ABS_FLOOR {
                continue;
            }
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}
