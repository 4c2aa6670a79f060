use indexmap::IndexMap;

use super::Tensor;

/// Named learnable tensors in insertion order.
///
/// Names are dot-separated paths such as `encoder.block3.msa.u_qkv`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: IndexMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a tensor, keeping the original position when the
    /// name already exists.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.shift_remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Total element count, optionally restricted by a name/tensor predicate.
    pub fn count(&self, filter: impl Fn(&str, &Tensor) -> bool) -> usize {
        self.iter().filter(|(n, t)| filter(n, t)).map(|(_, t)| t.numel()).sum()
    }

    pub fn total(&self) -> usize {
        self.count(|_, _| true)
    }

    pub fn trainable(&self) -> usize {
        self.count(|_, t| t.requires_grad())
    }

    pub fn zero_grad(&mut self) {
        self.entries.values_mut().for_each(Tensor::zero_grad);
    }

    /// Per-tensor checksums, for comparing stores before and after training.
    pub fn checksums(&self) -> IndexMap<String, u64> {
        self.entries.iter().map(|(k, v)| (k.clone(), v.checksum())).collect()
    }

    /// Adds `grad` into the gradient buffer of `name`; a no-op for tensors
    /// that do not track gradients.
    pub fn accumulate_grad(&mut self, name: &str, grad: &[f64]) -> crate::Result<()> {
        let t = self
            .get_mut(name)
            .ok_or_else(|| crate::Error::UnknownParameter(name.to_string()))?;
        if let Some(acc) = t.grad_mut() {
            if acc.len() != grad.len() {
                return Err(crate::Error::InvalidArgument(format!("gradient size of `{name}` differs")));
            }
            acc.iter_mut().zip(grad).for_each(|(a, g)| *a += g);
        }
        Ok(())
    }

    /// Moves every tensor of `other` into this store.
    pub fn extend(&mut self, other: ParameterStore) {
        self.entries.extend(other.entries);
    }
}
