//! Parameter storage and the Adagrad optimizer.

use crate::diffcore::graph::{Graph, NodeId};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameter tensors with stable insertion order. Models hold ids
/// into this store; the trainer turns every entry into a graph leaf each
/// minibatch.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let id = ParamId(self.tensors.len());
        self.names.push(name.into());
        self.tensors.push(tensor);
        id
    }

    /// Weight matrix initialized uniformly in +-1/sqrt(fan_in).
    pub fn add_linear_weight<R: Rng>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.add(
            name,
            Tensor::rand_uniform(&[fan_in, fan_out], -bound, bound, rng),
        )
    }

    /// Zero-initialized bias row.
    pub fn add_bias(&mut self, name: impl Into<String>, width: usize) -> ParamId {
        self.add(name, Tensor::zeros(&[1, width]))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn set(&mut self, id: ParamId, tensor: Tensor) {
        self.tensors[id.0] = tensor;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.tensors.iter())
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Insert one graph leaf per parameter; the returned vector is indexed
    /// by `ParamId`.
    pub fn leaves(&self, g: &mut Graph) -> Vec<NodeId> {
        self.tensors.iter().map(|t| g.leaf(t.clone())).collect()
    }

    /// Collect adjoints for every parameter leaf after a backward pass.
    pub fn grads(&self, g: &Graph, leaves: &[NodeId]) -> Vec<(ParamId, Tensor)> {
        self.ids()
            .map(|id| (id, g.adjoint(leaves[id.0])))
            .collect()
    }
}

/// Seeded inverted dropout. Inactive outside training; active, it zeroes
/// entries with probability `rate` and rescales survivors by 1/(1-rate).
#[derive(Debug)]
pub struct Dropout {
    rate: f64,
    active: bool,
    rng: rand_chacha::ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidParam(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        use rand_chacha::rand_core::SeedableRng;
        Ok(Dropout {
            rate,
            active: false,
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Disabled dropout (evaluation mode).
    pub fn disabled() -> Self {
        Dropout::new(0.0, 0).expect("zero rate is valid")
    }

    pub fn set_active(&mut self, active: bool) {
        self.active = active;
    }

    pub fn apply(&mut self, g: &mut Graph, node: NodeId) -> NodeId {
        if !self.active || self.rate == 0.0 {
            return node;
        }
        let shape = g.value(node).shape().to_vec();
        let keep = 1.0 - self.rate;
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.gen_bool(self.rate) {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let m = g.leaf(Tensor::new(shape, mask).expect("mask shape"));
        g.mul(node, m).expect("mask has identical shape")
    }
}

/// Adagrad state: one squared-gradient accumulator per parameter.
#[derive(Debug, Clone)]
pub struct Adagrad {
    learning_rate: f64,
    epsilon: f64,
    accumulators: Vec<Tensor>,
}

impl Adagrad {
    pub fn new(learning_rate: f64, epsilon: f64, store: &ParamStore) -> Result<Self> {
        if learning_rate.is_nan() || learning_rate <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(Adagrad {
            learning_rate,
            epsilon,
            accumulators: store
                .ids()
                .map(|id| Tensor::zeros(store.get(id).shape()))
                .collect(),
        })
    }

    /// Accumulate squared gradients, then apply
    /// p <- p - lr * g / (sqrt(acc) + eps).
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) -> Result<()> {
        for (id, grad) in grads {
            let param = store.get(*id);
            if param.shape() != grad.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adagrad_step",
                    lhs: param.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
            let acc = &mut self.accumulators[id.0];
            for (a, g) in acc.data_mut().iter_mut().zip(grad.data()) {
                *a += g * g;
            }
            let lr = self.learning_rate;
            let eps = self.epsilon;
            let mut updated = param.clone();
            for ((p, g), a) in updated
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(acc.data())
            {
                *p -= lr * g / (a.sqrt() + eps);
            }
            store.set(*id, updated);
        }
        Ok(())
    }

    pub fn accumulator(&self, id: ParamId) -> &Tensor {
        &self.accumulators[id.0]
    }
}
