use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::array::DArray;
use crate::error::{Error, Result};

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

fn next_uid() -> u64 {
    NEXT_STORE.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: DArray,
    pub grad: Option<DArray>,
    pub requires_grad: bool,
}

/// Named, ordered parameter table. Gradients accumulate until
/// [`ParamStore::zero_grads`] is called.
#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    /// Clones values and gradients into a store with a fresh identity, so a
    /// tape never confuses the copy (e.g. a target network) with the original.
    fn clone(&self) -> Self {
        Self { uid: next_uid(), params: self.params.clone(), by_name: self.by_name.clone() }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self { uid: next_uid(), params: Vec::new(), by_name: HashMap::new() }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    fn insert(&mut self, name: &str, value: DArray, requires_grad: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("initial value of `{name}`")));
        }
        let id = self.params.len();
        self.params.push(Param { name: name.to_string(), value, grad: None, requires_grad });
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn add(&mut self, name: &str, value: DArray) -> Result<ParamId> {
        self.insert(name, value, true)
    }

    /// A non-trainable entry (normalisation statistics, metadata).
    pub fn add_frozen(&mut self, name: &str, value: DArray) -> Result<ParamId> {
        self.insert(name, value, false)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name).ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &DArray {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut DArray {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&DArray> {
        self.params[id.0].grad.as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.iter().filter(|(_, p)| p.requires_grad).map(|(id, _)| id)
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Sets every trainable gradient to zeros.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            if p.requires_grad {
                match &mut p.grad {
                    Some(g) => g.data_mut().fill(0.0),
                    None => p.grad = Some(DArray::zeros(p.value.shape().to_vec())),
                }
            }
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: usize, g: &DArray) {
        let p = &mut self.params[id];
        match &mut p.grad {
            Some(acc) => acc.add_assign(g),
            None => p.grad = Some(g.clone()),
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn check_layout(&self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::invalid("parameter stores have different layouts"));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::invalid(format!("parameter `{}` does not match `{}`", a.name, b.name)));
            }
        }
        Ok(())
    }

    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.value.data_mut().copy_from_slice(b.value.data());
        }
        Ok(())
    }

    /// Polyak averaging: `self ← (1 − tau)·self + tau·online`.
    pub fn soft_update_from(&mut self, online: &ParamStore, tau: f64) -> Result<()> {
        self.check_layout(online)?;
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            for (tv, ov) in t.value.data_mut().iter_mut().zip(o.value.data()) {
                *tv = (1.0 - tau) * *tv + tau * ov;
            }
        }
        Ok(())
    }

    /// Bitwise equality of names, shapes and values.
    pub fn same_values(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_update_is_exact_ema() {
        let mut online = ParamStore::new();
        online.add("w", DArray::vector(vec![1.0, 2.0])).unwrap();
        let mut target = online.clone();
        target.value_mut(ParamId(0)).data_mut().copy_from_slice(&[0.0, 0.0]);
        target.soft_update_from(&online, 0.25).unwrap();
        assert_eq!(target.value(ParamId(0)).data(), &[0.25, 0.5]);
        assert_ne!(target.uid(), online.uid());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("a", DArray::scalar(1.0)).unwrap();
        assert!(s.add("a", DArray::scalar(2.0)).is_err());
    }
}
