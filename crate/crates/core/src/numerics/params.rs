use std::collections::BTreeMap;

use crate::numerics::tape::{Gradients, Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::numerics::NumericsError;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
struct Slot<S> {
    value: Tensor<S>,
    grad: Option<Tensor<S>>,
}

/// Named learnable parameters with a gradient slot per entry.
///
/// Iteration order is the lexicographic order of names, which fixes the
/// order of every reduction over parameters.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<S> {
    slots: BTreeMap<String, Slot<S>>,
}

/// Tape variables bound to the parameters of a store for one forward pass.
pub struct Bindings<'t, S: Scalar> {
    vars: BTreeMap<String, Var<'t, S>>,
}

impl<'t, S: Scalar> Bindings<'t, S> {
    pub fn get(&self, name: &str) -> Result<Var<'t, S>, NumericsError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| NumericsError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var<'t, S>)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            slots: BTreeMap::new(),
        }
    }

    /// Registers a parameter. Names must be unique.
    pub fn insert(
        &mut self,
        name: impl Into<String>,
        value: Tensor<S>,
    ) -> Result<(), NumericsError> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(NumericsError::DuplicateParam(name));
        }
        self.slots.insert(name, Slot { value, grad: None });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.slots.get_mut(name).map(|s| &mut s.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<S>> {
        self.slots.get(name).and_then(|s| s.grad.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    /// Moves another store's entries into this one.
    pub fn extend(&mut self, other: ParamStore<S>) -> Result<(), NumericsError> {
        for (name, slot) in other.slots {
            if self.slots.contains_key(&name) {
                return Err(NumericsError::DuplicateParam(name));
            }
            self.slots.insert(name, slot);
        }
        Ok(())
    }

    /// Sets every gradient slot to zeros of the parameter's shape.
    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad = Some(Tensor::zeros(slot.value.shape()));
        }
    }

    pub fn set_grad(&mut self, name: &str, grad: Tensor<S>) -> Result<(), NumericsError> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| NumericsError::MissingParam(name.to_string()))?;
        if grad.shape() != slot.value.shape() {
            return Err(NumericsError::Shape {
                op: "set_grad",
                left: slot.value.shape().to_vec(),
                right: grad.shape().to_vec(),
            });
        }
        slot.grad = Some(grad);
        Ok(())
    }

    /// Records every parameter on `tape`. Parameters rejected by `trainable`
    /// become constants and never receive gradients.
    pub fn bind<'t>(&self, tape: &'t Tape<S>, trainable: impl Fn(&str) -> bool) -> Bindings<'t, S> {
        let vars = self
            .slots
            .iter()
            .map(|(name, slot)| {
                let var = if trainable(name) {
                    tape.leaf(slot.value.clone())
                } else {
                    tape.constant(slot.value.clone())
                };
                (name.clone(), var)
            })
            .collect();
        Bindings { vars }
    }

    /// Adds the gradients of bound parameters into their slots, creating
    /// zero slots where none exist.
    pub fn accumulate(&mut self, bindings: &Bindings<'_, S>, grads: &Gradients<S>) {
        for (name, var) in bindings.iter() {
            let Some(slot) = self.slots.get_mut(name) else {
                continue;
            };
            let g = slot
                .grad
                .get_or_insert_with(|| Tensor::zeros(slot.value.shape()));
            if let Some(delta) = grads.get(var) {
                for (acc, &d) in g.data_mut().iter_mut().zip(delta.data()) {
                    *acc += d;
                }
            }
        }
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            slots: self
                .slots
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        Slot {
                            value: s.value.cast(),
                            grad: s.grad.as_ref().map(Tensor::cast),
                        },
                    )
                })
                .collect(),
        }
    }

    pub(crate) fn slots_mut(
        &mut self,
    ) -> impl Iterator<Item = (&str, &mut Tensor<S>, &mut Option<Tensor<S>>)> {
        self.slots
            .iter_mut()
            .map(|(k, s)| (k.as_str(), &mut s.value, &mut s.grad))
    }

    /// True when parameter values (ignoring gradients) are bit-identical.
    pub fn values_bit_equal(&self, other: &ParamStore<S>) -> bool {
        self.slots.len() == other.slots.len()
            && self
                .slots
                .iter()
                .zip(&other.slots)
                .all(|((ka, a), (kb, b))| {
                    ka == kb
                        && a.value.shape() == b.value.shape()
                        && a.value
                            .data()
                            .iter()
                            .zip(b.value.data())
                            .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
                })
    }
}
