use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::{NumericsError, Real, Result, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// The two disjoint parameter partitions.
///
/// `Slm` is the sequence model; `Fusion` is the time-series encoder plus the
/// knowledge attention projections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Slm,
    Fusion,
}

impl ParamGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Slm => "slm",
            ParamGroup::Fusion => "fusion",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "slm" => Some(ParamGroup::Slm),
            "fusion" => Some(ParamGroup::Fusion),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub group: ParamGroup,
    pub trainable: bool,
}

/// Named parameters in insertion order. Every parameter belongs to exactly one
/// group, recorded at insertion.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor, group: ParamGroup) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(NumericsError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            tensor: tensor.with_requires_grad(true),
            group,
            trainable: true,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    /// Sets the trainable flag on every parameter of `group`.
    pub fn set_group_trainable(&mut self, group: ParamGroup, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.group == group) {
            p.trainable = trainable;
            p.tensor.set_requires_grad(trainable);
        }
    }

    pub fn group_ids(&self, group: ParamGroup) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.group == group)
            .map(|(id, _)| id)
            .collect()
    }

    pub fn num_elements(&self, group: Option<ParamGroup>) -> usize {
        self.params
            .iter()
            .filter(|p| group.is_none_or(|g| p.group == g))
            .map(|p| p.tensor.len())
            .sum()
    }

    /// SHA-256 over names, shapes and little-endian values of one group.
    pub fn group_hash(&self, group: ParamGroup) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| p.group == group) {
            hash_param(&mut h, p);
        }
        hex::encode(h.finalize())
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            hash_param(&mut h, p);
        }
        hex::encode(h.finalize())
    }

    /// Copies gradients into the `grad` slot of each trainable tensor.
    pub fn attach_grads(&mut self, grads: &Gradients) -> Result<()> {
        for (id, g) in grads.iter() {
            let p = &mut self.params[id.0];
            if p.trainable {
                p.tensor.set_grad(g.to_vec())?;
            }
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.clear_grad();
        }
    }
}

fn hash_param(h: &mut Sha256, p: &Param) {
    h.update(p.name.as_bytes());
    h.update([0u8]);
    for d in p.tensor.shape() {
        h.update((*d as u64).to_le_bytes());
    }
    for v in p.tensor.data() {
        h.update(v.to_le_bytes());
    }
}

/// Per-parameter gradients produced by a backward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    slots: Vec<Option<Vec<Real>>>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Self {
            slots: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[Real]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &[Real]) {
        if self.slots.len() <= id.0 {
            self.slots.resize(id.0 + 1, None);
        }
        match &mut self.slots[id.0] {
            Some(acc) => acc.iter_mut().zip(grad).for_each(|(a, g)| *a += g),
            slot @ None => *slot = Some(grad.to_vec()),
        }
    }

    /// Adds `other` into `self`, slot by slot.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, factor: Real) {
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[Real])> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_deref().map(|g| (ParamId(i), g)))
    }

    pub fn global_norm(&self) -> Real {
        self.iter()
            .flat_map(|(_, g)| g.iter())
            .map(|v| v * v)
            .sum::<Real>()
            .sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: Real) -> Real {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}
