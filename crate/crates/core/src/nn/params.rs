use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Location of one named block inside a [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRange {
    pub offset: usize,
    pub len: usize,
}

impl ParamRange {
    pub fn slice<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        &values[self.offset..self.offset + self.len]
    }

    pub fn slice_mut<'a>(&self, values: &'a mut [f64]) -> &'a mut [f64] {
        &mut values[self.offset..self.offset + self.len]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Every trainable weight of a model in one flat vector.
///
/// Layers hold [`ParamRange`]s into this vector; forward, backward and the
/// optimizer all operate on the flat buffer. Blocks are appended in
/// construction order so the layout is a pure function of the model config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    values: Vec<f64>,
    layout: Vec<ParamEntry>,
    trainable: Vec<bool>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block, filling it from `init`.
    pub fn alloc(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        mut init: impl FnMut() -> f64,
    ) -> ParamRange {
        let name = name.into();
        debug_assert!(self.entry(&name).is_none(), "duplicate block {name}");
        let len: usize = shape.iter().product();
        let offset = self.values.len();
        self.values.extend((0..len).map(|_| init()));
        self.trainable.extend(std::iter::repeat(true).take(len));
        self.layout.push(ParamEntry {
            name,
            offset,
            shape: shape.to_vec(),
        });
        ParamRange { offset, len }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::dim(format!(
                "parameter vector has {} entries, expected {}",
                values.len(),
                self.values.len()
            )));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    pub fn layout(&self) -> &[ParamEntry] {
        &self.layout
    }

    pub fn trainable(&self) -> &[bool] {
        &self.trainable
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.layout.iter().find(|e| e.name == name)
    }

    /// Name of the block holding flat index `i`, with the offset inside it.
    pub fn locate(&self, i: usize) -> Option<(&str, usize)> {
        self.layout
            .iter()
            .find(|e| i >= e.offset && i < e.offset + e.len())
            .map(|e| (e.name.as_str(), i - e.offset))
    }

    /// Sets the trainable flag on every block whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for e in &self.layout {
            if e.name.starts_with(prefix) {
                let n = e.len();
                self.trainable[e.offset..e.offset + n].fill(trainable);
            }
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        self.trainable.fill(trainable);
    }

    pub fn frozen_count(&self) -> usize {
        self.trainable.iter().filter(|t| !**t).count()
    }

    /// Whether any entry of the blocks with the given prefix is trainable.
    pub fn any_trainable(&self, prefix: &str) -> bool {
        self.layout
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .any(|e| self.trainable[e.offset..e.offset + e.len()].iter().any(|t| *t))
    }

    /// Copy of the values in all blocks with the given prefix, in layout order.
    pub fn sub_vector(&self, prefix: &str) -> Vec<f64> {
        self.layout
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .flat_map(|e| self.values[e.offset..e.offset + e.len()].iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous_and_disjoint() {
        let mut p = ParameterSet::new();
        let a = p.alloc("a.w", &[2, 3], || 1.0);
        let b = p.alloc("a.b", &[2], || 2.0);
        let c = p.alloc("c.w", &[4], || 3.0);
        assert_eq!((a.offset, a.len), (0, 6));
        assert_eq!((b.offset, b.len), (6, 2));
        assert_eq!((c.offset, c.len), (8, 4));
        assert_eq!(p.len(), 12);
        let total: usize = p.layout().iter().map(ParamEntry::len).sum();
        assert_eq!(total, p.len());
        assert_eq!(p.locate(7), Some(("a.b", 1)));
    }

    #[test]
    fn prefix_freezing() {
        let mut p = ParameterSet::new();
        p.alloc("don.branch.0.w", &[3], || 0.0);
        p.alloc("lstm.w", &[2], || 0.0);
        p.set_trainable_prefix("don.", false);
        assert_eq!(p.trainable(), &[false, false, false, true, true]);
        assert!(!p.any_trainable("don."));
        assert!(p.any_trainable("lstm."));
        assert_eq!(p.frozen_count(), 3);
    }
}
