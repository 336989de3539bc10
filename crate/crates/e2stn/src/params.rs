//! Binding of stored parameters into a computation graph.

use std::collections::BTreeMap;

use crate::array::ParamStore;
use crate::error::Result;
use crate::tensor::{Graph, Tensor};

/// Records which store entry each graph leaf came from, so gradients can be
/// gathered back by name after `backward`. Frozen entries are bound as
/// constants and receive no gradient.
#[derive(Default)]
pub struct Bindings {
    pairs: Vec<(String, Tensor)>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, g: &mut Graph, store: &ParamStore, name: &str) -> Result<Tensor> {
        let array = store.get(name)?;
        let t = if store.is_frozen(name)? {
            g.constant_from(array)?
        } else {
            g.param_from(array)?
        };
        self.pairs.push((name.to_string(), t));
        Ok(t)
    }

    /// Gradients for every bound trainable parameter; entries with no flow
    /// come back as zeros.
    pub fn collect_grads(&self, g: &Graph) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        for (name, t) in &self.pairs {
            if !g.requires_grad(*t) {
                continue;
            }
            let grad = g
                .grad(*t)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; g.numel(*t)]);
            out.insert(name.clone(), grad);
        }
        out
    }

    pub fn tensor_of(&self, name: &str) -> Option<Tensor> {
        self.pairs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| *t)
    }
}
