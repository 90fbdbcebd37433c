//! Named parameter tensors with paired gradient buffers and freeze flags.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which part of the network a parameter belongs to. Freezing acts on
/// whole groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    Decoder,
    Head,
}

impl ParamGroup {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParamGroup::Backbone => "backbone",
            ParamGroup::Decoder => "decoder",
            ParamGroup::Head => "head",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    name: String,
    group: ParamGroup,
    frozen: bool,
    value: Tensor,
    grad: Tensor,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn group(&self) -> ParamGroup {
        self.group
    }
    pub fn frozen(&self) -> bool {
        self.frozen
    }
    pub fn value(&self) -> &Tensor {
        &self.value
    }
    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }
    pub fn grad(&self) -> &Tensor {
        &self.grad
    }
    pub fn grad_mut(&mut self) -> &mut Tensor {
        &mut self.grad
    }

    /// Split borrow of the value (mutably) and its gradient.
    pub fn value_and_grad_mut(&mut self) -> (&mut Tensor, &Tensor) {
        (&mut self.value, &self.grad)
    }
}

/// Ordered collection of named parameters. Iteration order is definition
/// order and is part of the contract: serialization and gradient/weight
/// reduction all walk parameters in this order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore { params: Vec::new() }
    }

    /// Append a parameter; the gradient buffer starts at zero.
    pub fn push(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name,
            group,
            frozen: false,
            value,
            grad,
        });
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, index: usize) -> &Param {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Param {
        &mut self.params[index]
    }

    pub fn find(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn set_group_frozen(&mut self, group: ParamGroup, frozen: bool) {
        for p in &mut self.params {
            if p.group == group {
                p.frozen = frozen;
            }
        }
    }

    /// Snapshot all values in definition order.
    pub fn values_snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Overwrite all values from a snapshot taken on a structurally equal
    /// store.
    pub fn set_values(&mut self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::shape(
                "set_values",
                format!("{} tensors for {} parameters", values.len(), self.params.len()),
            ));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::shape(
                    "set_values",
                    format!("{}: {} vs {}", p.name, p.value.shape(), v.shape()),
                ));
            }
            p.value = v.clone();
        }
        Ok(())
    }

    /// Overwrite all gradients from tensors in definition order.
    pub fn set_grads(&mut self, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::shape(
                "set_grads",
                format!("{} tensors for {} parameters", grads.len(), self.params.len()),
            ));
        }
        for (p, g) in self.params.iter_mut().zip(grads) {
            if p.grad.shape() != g.shape() {
                return Err(Error::shape(
                    "set_grads",
                    format!("{}: {} vs {}", p.name, p.grad.shape(), g.shape()),
                ));
            }
            p.grad = g.clone();
        }
        Ok(())
    }

    /// True when both stores have the same parameter names and shapes in
    /// the same order.
    pub fn structure_matches(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn push_rejects_duplicate_names() {
        let mut s = ParamStore::new();
        s.push("a.w", ParamGroup::Head, Tensor::zeros(Shape::new(1, 1, 1, 1)))
            .unwrap();
        assert!(s
            .push("a.w", ParamGroup::Head, Tensor::zeros(Shape::new(1, 1, 1, 1)))
            .is_err());
    }

    #[test]
    fn grads_start_zero_and_match_value_shape() {
        let mut s = ParamStore::new();
        let shape = Shape::new(2, 3, 3, 3);
        s.push("w", ParamGroup::Backbone, Tensor::filled(shape, 1.0))
            .unwrap();
        let p = s.get(0);
        assert_eq!(p.grad().shape(), shape);
        assert!(p.grad().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn freeze_affects_only_the_group() {
        let mut s = ParamStore::new();
        s.push("e.w", ParamGroup::Backbone, Tensor::zeros(Shape::new(1, 1, 1, 1)))
            .unwrap();
        s.push("d.w", ParamGroup::Decoder, Tensor::zeros(Shape::new(1, 1, 1, 1)))
            .unwrap();
        s.set_group_frozen(ParamGroup::Backbone, true);
        assert!(s.find("e.w").unwrap().frozen());
        assert!(!s.find("d.w").unwrap().frozen());
        // toggling twice is idempotent
        s.set_group_frozen(ParamGroup::Backbone, true);
        assert!(s.find("e.w").unwrap().frozen());
        s.set_group_frozen(ParamGroup::Backbone, false);
        assert!(!s.find("e.w").unwrap().frozen());
    }
}
