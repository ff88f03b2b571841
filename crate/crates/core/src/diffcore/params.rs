use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;

/// Stable index of a parameter leaf inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamLeaf {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    leaves: Vec<ParamLeaf>,
}

/// Tape handles for every leaf of a store, valid for one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles in store order, e.g. leaves created by a gradient check.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.leaves.push(ParamLeaf {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.leaves.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaf(&self, id: ParamId) -> &ParamLeaf {
        &self.leaves[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.leaves[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.leaves[id.0].value
    }

    pub fn leaves(&self) -> &[ParamLeaf] {
        &self.leaves
    }

    pub fn leaves_mut(&mut self) -> &mut [ParamLeaf] {
        &mut self.leaves
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.leaves.iter().position(|l| l.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.leaves.iter().map(|l| l.value.len()).sum()
    }

    /// Registers every leaf on `tape`. With `trainable == false` the leaves are
    /// bound as constants (inference).
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .leaves
            .iter()
            .map(|l| {
                if trainable {
                    tape.leaf(l.value.clone())
                } else {
                    tape.constant(l.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.leaves {
            l.grad.data_mut().fill(0.0);
        }
    }

    /// Adds the tape gradients of each bound leaf into its `grad` slot.
    pub fn accumulate(&mut self, grads: &Gradients, bound: &Bound) {
        for (l, &v) in self.leaves.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(v) {
                l.grad.add_assign(g);
            }
        }
    }

    /// All parameter values, concatenated in leaf order.
    pub fn flatten(&self) -> Vec<f64> {
        self.leaves.iter().flat_map(|l| l.value.data().iter().copied()).collect()
    }
}
