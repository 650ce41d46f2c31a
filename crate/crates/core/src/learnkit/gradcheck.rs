use crate::error::{Error, Result};
use crate::numkit::{NumArray, Real, RngStream};

use super::{backward, forward, Mode, Network, ParamSet};

/// Denominator floor for relative errors, so that gradients which are zero
/// up to rounding do not register as large relative mismatches.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Worst relative error between `analytic` and central differences of `f`
/// around `x`. `f` may return `None` for perturbations that cross a
/// non-differentiable point; those coordinates are skipped.
pub fn finite_difference_error(
    mut f: impl FnMut(&[f64]) -> Option<f64>,
    x: &[f64],
    analytic: &[f64],
    epsilon: f64,
) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + epsilon;
        let plus = f(&probe);
        probe[i] = x[i] - epsilon;
        let minus = f(&probe);
        probe[i] = x[i];
        if let (Some(p), Some(m)) = (plus, minus) {
            let numeric = (p - m) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
    }
    worst
}

/// Compares [`backward`] against central differences for every parameter
/// and every input element, in `f64`.
///
/// In train mode every forward reuses a clone of `rng`, so dropout masks are
/// frozen across perturbations. Perturbations that flip a relu or change a
/// channel-max winner are skipped.
pub fn grad_check<F: Real>(
    net: &Network,
    params: &ParamSet<F>,
    input: &NumArray<F>,
    mode: Mode,
    rng: &RngStream,
    loss_fn: impl Fn(&NumArray<f64>) -> (f64, NumArray<f64>),
    epsilon: f64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidInput(format!(
            "grad_check epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let params: ParamSet<f64> = params.cast();
    let input: NumArray<f64> = input.cast();
    let (out, trace) = forward(net, &params, &input, mode, &mut rng.clone())?;
    let pattern = trace.activation_pattern();
    let (_, upstream) = loss_fn(&out);
    let (grads, input_grad) = backward(net, &params, trace, &upstream)?;

    let eval = |p: &ParamSet<f64>, x: &NumArray<f64>| -> Option<f64> {
        let (out, trace) = forward(net, p, x, mode, &mut rng.clone()).ok()?;
        (trace.activation_pattern() == pattern).then(|| loss_fn(&out).0)
    };

    let mut worst = 0.0f64;
    for (name, g) in grads.iter() {
        let base = params.get(name)?.data().to_vec();
        let mut probe = params.clone();
        worst = worst.max(finite_difference_error(
            |theta| {
                probe.get_mut(name).ok()?.data_mut().copy_from_slice(theta);
                eval(&probe, &input)
            },
            &base,
            g.data(),
            epsilon,
        ));
    }
    let mut probe = input.clone();
    worst = worst.max(finite_difference_error(
        |x| {
            probe.data_mut().copy_from_slice(x);
            eval(&params, &probe)
        },
        input.data(),
        input_grad.data(),
        epsilon,
    ));
    Ok(worst)
}
