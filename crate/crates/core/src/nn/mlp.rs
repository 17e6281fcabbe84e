//! Fully connected networks with a hand-written reverse pass.
//!
//! Layer `l` stores a weight tensor `l{l}.w` of shape `[fan_in, fan_out]` and a bias
//! `l{l}.b` of shape `[fan_out]`. Hidden layers apply the configured activation; the
//! output layer is affine. Inputs are processed as row-major batches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Elu,
    /// No nonlinearity; used for analytic checks.
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Elu => {
                if z > T::zero() {
                    z
                } else {
                    z.exp() - T::one()
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn grad_from_output<T: Real>(self, a: T) -> T {
        match self {
            Activation::Tanh => T::one() - a * a,
            Activation::Elu => {
                if a > T::zero() {
                    T::one()
                } else {
                    a + T::one()
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

pub fn default_hidden() -> Vec<usize> {
    vec![256, 256]
}

impl MlpConfig {
    /// Two hidden layers of 256 units with `tanh`.
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        MlpConfig {
            in_dim,
            out_dim,
            hidden: default_hidden(),
            activation: Activation::Tanh,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Argument(format!("MLP dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.in_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.out_dim);
        w
    }
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    generation: u64,
    batch: usize,
    /// `layer_inputs[l]` is the `batch x widths[l]` input to layer `l`.
    layer_inputs: Vec<Vec<T>>,
}

impl<T> Tape<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Parameter and input gradients of `y . dy`.
#[derive(Debug, Clone)]
pub struct MlpGradients<T> {
    pub params: ParamStore<T>,
    pub input: Vec<T>,
}

/// A network bound to a set of slots inside a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Mlp {
    config: MlpConfig,
    prefix: String,
    slots: Vec<(usize, usize)>,
}

impl Mlp {
    /// Creates a standalone network with freshly initialized parameters.
    ///
    /// Weights are drawn from `N(0, 1/fan_in)`; biases start at zero. The draw order is
    /// layer by layer, row-major, from a ChaCha8 stream seeded with `seed`.
    pub fn init<T: Real>(config: MlpConfig, seed: u64) -> Result<(Mlp, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = Mlp::register(config, "", &mut store, &mut rng)?;
        Ok((mlp, store))
    }

    /// Appends freshly initialized layers named `{prefix}l{k}.{w,b}` to `store`.
    pub fn register<T: Real>(
        config: MlpConfig,
        prefix: &str,
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Mlp> {
        config.validate()?;
        let widths = config.widths();
        let mut slots = Vec::with_capacity(widths.len() - 1);
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (1.0 / fan_in as f64).sqrt();
            let w: Vec<T> = (0..fan_in * fan_out)
                .map(|_| {
                    let n: f64 = StandardNormal.sample(rng);
                    T::of(n * std)
                })
                .collect();
            let wi = store.insert(format!("{prefix}l{l}.w"), &[fan_in, fan_out], w)?;
            let bi = store.insert(format!("{prefix}l{l}.b"), &[fan_out], vec![T::zero(); fan_out])?;
            slots.push((wi, bi));
        }
        Ok(Mlp {
            config,
            prefix: prefix.to_string(),
            slots,
        })
    }

    /// Binds to layers already present in `store` (for example after loading a checkpoint).
    pub fn attach<T: Real>(config: MlpConfig, prefix: &str, store: &ParamStore<T>) -> Result<Mlp> {
        config.validate()?;
        let widths = config.widths();
        let mut slots = Vec::new();
        for (l, pair) in widths.windows(2).enumerate() {
            let find = |suffix: &str, shape: &[usize]| -> Result<usize> {
                let name = format!("{prefix}l{l}.{suffix}");
                let idx = store
                    .index_of(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                if store.tensor(idx).shape != shape {
                    return Err(Error::shape(format!(
                        "tensor {name} has shape {:?}, expected {shape:?}",
                        store.tensor(idx).shape
                    )));
                }
                Ok(idx)
            };
            slots.push((find("w", &[pair[0], pair[1]])?, find("b", &[pair[1]])?));
        }
        Ok(Mlp {
            config,
            prefix: prefix.to_string(),
            slots,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn in_dim(&self) -> usize {
        self.config.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    fn check_store<T: Real>(&self, params: &ParamStore<T>) -> Result<()> {
        let widths = self.config.widths();
        for (l, &(wi, bi)) in self.slots.iter().enumerate() {
            if wi >= params.len()
                || bi >= params.len()
                || params.tensor(wi).shape != [widths[l], widths[l + 1]]
                || params.tensor(bi).shape != [widths[l + 1]]
            {
                return Err(Error::shape(format!(
                    "parameter store does not hold layer {l} of network '{}'",
                    self.prefix
                )));
            }
        }
        Ok(())
    }

    /// Single-input forward pass.
    pub fn forward<T: Real>(&self, params: &ParamStore<T>, x: &[T]) -> Result<(Vec<T>, Tape<T>)> {
        self.forward_batch(params, x, 1)
    }

    /// Forward pass over `batch` row-major inputs.
    pub fn forward_batch<T: Real>(
        &self,
        params: &ParamStore<T>,
        x: &[T],
        batch: usize,
    ) -> Result<(Vec<T>, Tape<T>)> {
        self.check_store(params)?;
        if x.len() != batch * self.config.in_dim {
            return Err(Error::shape(format!(
                "network '{}' expects {} x {} inputs, got {} values",
                self.prefix,
                batch,
                self.config.in_dim,
                x.len()
            )));
        }
        let widths = self.config.widths();
        let n_layers = self.slots.len();
        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut current = x.to_vec();
        for (l, &(wi, bi)) in self.slots.iter().enumerate() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let w = &params.tensor(wi).values;
            let b = &params.tensor(bi).values;
            let mut z = Vec::with_capacity(batch * fan_out);
            for _ in 0..batch {
                z.extend_from_slice(b);
            }
            T::gemm(batch, fan_in, fan_out, T::one(), &current, false, w, false, T::one(), &mut z);
            if l + 1 < n_layers {
                let act = self.config.activation;
                z.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            layer_inputs.push(std::mem::replace(&mut current, z));
        }
        Ok((
            current,
            Tape {
                generation: params.generation(),
                batch,
                layer_inputs,
            },
        ))
    }

    /// Forward pass without keeping the tape.
    pub fn predict<T: Real>(&self, params: &ParamStore<T>, x: &[T], batch: usize) -> Result<Vec<T>> {
        self.forward_batch(params, x, batch).map(|(y, _)| y)
    }

    /// Reverse pass: accumulates parameter gradients of `sum(y * dy)` into `grads` and
    /// returns the input gradient (`batch x in_dim`).
    pub fn backward_into<T: Real>(
        &self,
        params: &ParamStore<T>,
        tape: &Tape<T>,
        dy: &[T],
        grads: &mut ParamStore<T>,
    ) -> Result<Vec<T>> {
        if tape.generation != params.generation() {
            return Err(Error::StaleTape {
                recorded: tape.generation,
                current: params.generation(),
            });
        }
        self.check_store(grads)?;
        let batch = tape.batch;
        if dy.len() != batch * self.config.out_dim {
            return Err(Error::shape(format!(
                "output gradient has {} values, expected {}",
                dy.len(),
                batch * self.config.out_dim
            )));
        }
        let widths = self.config.widths();
        let mut dz = dy.to_vec();
        for l in (0..self.slots.len()).rev() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let (wi, bi) = self.slots[l];
            let input = &tape.layer_inputs[l];
            {
                let gw = &mut grads.tensor_mut(wi).values;
                T::gemm(fan_in, batch, fan_out, T::one(), input, true, &dz, false, T::one(), gw);
            }
            {
                let gb = &mut grads.tensor_mut(bi).values;
                for row in dz.chunks_exact(fan_out) {
                    for (g, d) in gb.iter_mut().zip(row) {
                        *g += *d;
                    }
                }
            }
            let w = &params.tensor(wi).values;
            let mut dx = vec![T::zero(); batch * fan_in];
            T::gemm(batch, fan_out, fan_in, T::one(), &dz, false, w, true, T::zero(), &mut dx);
            if l > 0 {
                let act = self.config.activation;
                for (d, a) in dx.iter_mut().zip(input) {
                    *d *= act.grad_from_output(*a);
                }
            }
            dz = dx;
        }
        Ok(dz)
    }

    /// Reverse pass into a fresh gradient store.
    pub fn backward<T: Real>(
        &self,
        params: &ParamStore<T>,
        tape: &Tape<T>,
        dy: &[T],
    ) -> Result<MlpGradients<T>> {
        let mut grads = params.zeros_like();
        let input = self.backward_into(params, tape, dy, &mut grads)?;
        Ok(MlpGradients { params: grads, input })
    }
}
