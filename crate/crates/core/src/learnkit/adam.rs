use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numkit::{NumArray, Real};

use super::ParamSet;

/// Bias-corrected Adam moments and hyperparameters.
#[derive(Clone, Debug)]
pub struct AdamState<F = f32> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: BTreeMap<String, NumArray<F>>,
    second: BTreeMap<String, NumArray<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(learning_rate: f64) -> Self {
        Self::with_hyperparameters(learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparameters(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update of every tensor in `grads`; the step counter advances
/// even when all gradients are zero.
pub fn adam_step<F: Real>(params: &mut ParamSet<F>, grads: &ParamSet<F>, state: &mut AdamState<F>) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(Error::shape(
                format!("adam_step {name}"),
                format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
            ));
        }
        for moments in [&state.first, &state.second] {
            if let Some(m) = moments.get(name) {
                if m.shape() != g.shape() {
                    return Err(Error::shape(
                        format!("adam_step {name}"),
                        format!("moment {:?} vs gradient {:?}", m.shape(), g.shape()),
                    ));
                }
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    let step_size = F::lit(state.learning_rate / correction1);
    let inv_sqrt_c2 = F::lit(1.0 / correction2.sqrt());
    let eps = F::lit(state.epsilon);
    let (fb1, fb2) = (F::lit(b1), F::lit(b2));
    let (gb1, gb2) = (F::lit(1.0 - b1), F::lit(1.0 - b2));
    for (name, g) in grads.iter() {
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| NumArray::zeros(g.shape().to_vec()));
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| NumArray::zeros(g.shape().to_vec()));
        let p = params.get_mut(name)?;
        for (((theta, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = fb1 * *mi + gb1 * gi;
            *vi = fb2 * *vi + gb2 * gi * gi;
            *theta -= step_size * *mi / (vi.sqrt() * inv_sqrt_c2 + eps);
        }
    }
    Ok(())
}
