use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Matrix,
    /// Frozen parameters are never touched by the optimizer.
    #[serde(default)]
    pub frozen: bool,
}

/// Named parameter tensors in a stable (insertion) order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        self.insert_param(name, value, false)
    }

    pub fn insert_param(&mut self, name: impl Into<String>, value: Matrix, frozen: bool) -> Result<()> {
        let name = name.into();
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "parameter `{name}` has non-finite entries"
            )));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        self.entries.insert(name, Param { value, frozen });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Matrix) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(Error::dims(format!(
                "parameter `{name}`: {:?} vs {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?
            .frozen = frozen;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.as_slice().len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    let (r, c) = p.value.shape();
                    (
                        k.clone(),
                        Param {
                            value: Matrix::zeros(r, c),
                            frozen: p.frozen,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Concatenates all entries in store order, each tensor row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for p in self.entries.values() {
            out.extend_from_slice(p.value.as_slice());
        }
        out
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::dims(format!(
                "unflatten: {} values for {} scalars",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut offset = 0;
        for p in self.entries.values_mut() {
            let n = p.value.as_slice().len();
            p.value.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|p| p.value.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_and_unknown_names() {
        let mut s = ParamStore::new();
        s.insert("a", Matrix::zeros(1, 2)).unwrap();
        assert!(matches!(
            s.insert("a", Matrix::zeros(1, 1)),
            Err(Error::DuplicateParameter(_))
        ));
        assert!(matches!(
            s.set("b", Matrix::zeros(1, 1)),
            Err(Error::UnknownParameter(_))
        ));
        assert!(s.set("a", Matrix::zeros(2, 1)).is_err());
    }

    proptest! {
        #[test]
        fn flatten_unflatten_identity(vals in proptest::collection::vec(-1e3f64..1e3, 7)) {
            let mut s = ParamStore::new();
            s.insert("w", Matrix::from_vec(2, 2, vals[..4].to_vec())).unwrap();
            s.insert("b", Matrix::from_vec(1, 3, vals[4..].to_vec())).unwrap();
            let flat = s.flatten();
            prop_assert_eq!(&flat, &vals);
            let mut t = s.zeros_like();
            t.unflatten(&flat).unwrap();
            prop_assert_eq!(t, s);
        }
    }
}
