use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::numkit::{NumArray, Real, RngStream};

use super::Network;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Named parameter tensors.
///
/// Every mutation stamps a new version so traces recorded against an older
/// state are detected as stale.
#[derive(Clone, Debug)]
pub struct ParamSet<F = f32> {
    tensors: BTreeMap<String, NumArray<F>>,
    version: u64,
}

impl<F: Real> PartialEq for ParamSet<F> {
    fn eq(&self, other: &Self) -> bool {
        self.tensors == other.tensors
    }
}

impl<F: Real> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
            version: fresh_version(),
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: NumArray<F>) {
        self.tensors.insert(name.into(), tensor);
        self.version = fresh_version();
    }

    /// Moves every tensor of `other` into `self`, replacing equal names.
    pub fn absorb(&mut self, other: Self) {
        self.tensors.extend(other.tensors);
        self.version = fresh_version();
    }

    pub fn get(&self, name: &str) -> Result<&NumArray<F>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("missing parameter tensor {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut NumArray<F>> {
        self.version = fresh_version();
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::InvalidInput(format!("missing parameter tensor {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NumArray<F>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut NumArray<F>)> {
        self.version = fresh_version();
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(NumArray::len).sum()
    }

    /// Zero-filled tensors with the same keys and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), NumArray::zeros(v.shape().to_vec())))
                .collect(),
            version: fresh_version(),
        }
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        ParamSet {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            version: fresh_version(),
        }
    }

    /// Adds `scale * other` into every matching tensor.
    pub fn accumulate(&mut self, other: &Self, scale: F) -> Result<()> {
        for (name, t) in &other.tensors {
            match self.tensors.get_mut(name) {
                Some(mine) => mine.axpy(scale, t)?,
                None => {
                    let mut scaled = t.clone();
                    scaled.data_mut().iter_mut().for_each(|x| *x *= scale);
                    self.tensors.insert(name.clone(), scaled);
                }
            }
        }
        self.version = fresh_version();
        Ok(())
    }

    pub fn scale(&mut self, factor: F) {
        for t in self.tensors.values_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
        self.version = fresh_version();
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(NumArray::is_finite)
    }

    /// Checks that every parameter of `net` is present with the right shape.
    pub fn check_against(&self, net: &Network) -> Result<()> {
        for (key, shape) in net.param_specs() {
            let t = self.get(&key)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    key,
                    format!("expected {shape:?}, stored {:?}", t.shape()),
                ));
            }
        }
        Ok(())
    }
}

/// Adds freshly initialized parameters for `net` into `params`.
///
/// Weights are uniform in `±sqrt(6 / (fan_in + fan_out))`; biases are zero.
pub fn init_params_into<F: Real>(net: &Network, params: &mut ParamSet<F>, rng: &mut RngStream) {
    for (i, layer) in net.layers.iter().enumerate() {
        let (Some((w_shape, b_shape)), Some((fan_in, fan_out))) = (layer.param_shapes(), layer.fans())
        else {
            continue;
        };
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = w_shape.iter().product();
        let w: Vec<F> = (0..n).map(|_| F::lit((2.0 * rng.uniform() - 1.0) * bound)).collect();
        params.insert(
            net.weight_key(i),
            NumArray::new(w_shape, w).expect("shape matches count"),
        );
        params.insert(net.bias_key(i), NumArray::zeros(b_shape));
    }
}

pub fn init_params<F: Real>(net: &Network, rng: &mut RngStream) -> ParamSet<F> {
    let mut params = ParamSet::new();
    init_params_into(net, &mut params, rng);
    params
}
