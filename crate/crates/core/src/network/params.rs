//! Flat storage for named tensors.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named tensors packed into one contiguous `f64` buffer in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub tensors: Vec<TensorInfo>,
    pub data: Vec<f64>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, shape: &[usize]) -> TensorId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "tensor `{name}` registered twice"
        );
        let info = TensorInfo {
            name: name.clone(),
            shape: shape.to_vec(),
            offset: self.data.len(),
        };
        self.data.resize(self.data.len() + info.len(), 0.0);
        self.by_name.insert(name, self.tensors.len());
        self.tensors.push(info);
        TensorId(self.tensors.len() - 1)
    }

    /// Rebuilds a store from a registry and a data buffer, checking consistency.
    pub fn from_parts(tensors: Vec<TensorInfo>, data: Vec<f64>) -> Result<Self> {
        let mut offset = 0;
        let mut by_name = HashMap::new();
        for (i, t) in tensors.iter().enumerate() {
            if t.offset != offset {
                return Err(Error::Shape(format!(
                    "tensor `{}` has a gap before it",
                    t.name
                )));
            }
            offset += t.len();
            if by_name.insert(t.name.clone(), i).is_some() {
                return Err(Error::Shape(format!("tensor `{}` listed twice", t.name)));
            }
        }
        if offset != data.len() {
            return Err(Error::Shape(format!(
                "registry covers {offset} values, buffer holds {}",
                data.len()
            )));
        }
        Ok(ParamStore {
            tensors,
            data,
            by_name,
        })
    }

    pub fn id(&self, name: &str) -> Option<TensorId> {
        self.by_name.get(name).map(|&i| TensorId(i))
    }

    pub fn info(&self, id: TensorId) -> &TensorInfo {
        &self.tensors[id.0]
    }

    pub fn get(&self, id: TensorId) -> &[f64] {
        let t = &self.tensors[id.0];
        &self.data[t.offset..t.offset + t.len()]
    }

    pub fn get_mut(&mut self, id: TensorId) -> &mut [f64] {
        let t = &self.tensors[id.0];
        let (o, n) = (t.offset, t.len());
        &mut self.data[o..o + n]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Slice of a flat gradient/moment buffer belonging to `id`.
    pub fn view<'a>(&self, id: TensorId, flat: &'a [f64]) -> &'a [f64] {
        let t = &self.tensors[id.0];
        &flat[t.offset..t.offset + t.len()]
    }
}
