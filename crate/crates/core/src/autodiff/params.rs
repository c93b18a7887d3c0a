use std::collections::HashMap;
use std::sync::Arc;

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A named tensor owned by a model. Non-trainable entries hold buffers such
/// as batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Arc<Tensor<T>>,
    pub trainable: bool,
    /// Included in the L2 penalty.
    pub decay: bool,
}

/// Ordered collection of parameters with unique names.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool, decay: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter name '{name}'")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value: Arc::new(value), trainable, decay });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    /// Replaces a value, keeping the registered dims.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.dims() != value.dims() {
            return Err(Error::shape(p.name.clone(), format!("stored {:?}, given {:?}", p.value.dims(), value.dims())));
        }
        p.value = Arc::new(value);
        Ok(())
    }

    /// Element-type conversion, e.g. an `f32` training model to `f64` for
    /// gradient checking.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: Arc::new(
                        Tensor::new(
                            p.value.dims(),
                            p.value.data().iter().map(|v| U::from_f64(Real::to_f64(*v))).collect(),
                        )
                        .expect("same dims"),
                    ),
                    trainable: p.trainable,
                    decay: p.decay,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}
