//! Adam optimizer over the named parameter store.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::array::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First/second moment estimates per parameter, plus the step counter used
/// for bias correction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// One Adam update over every gradient entry. Gradients for frozen or
    /// unknown parameters are rejected.
    pub fn apply(
        &mut self,
        store: &mut ParamStore,
        grads: &BTreeMap<String, Vec<f64>>,
        hp: &AdamHyper,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - hp.beta1.powi(t);
        let bias2 = 1.0 - hp.beta2.powi(t);
        for (name, grad) in grads {
            if store.is_frozen(name)? {
                return Err(Error::Training(format!(
                    "gradient supplied for frozen parameter `{name}`"
                )));
            }
            let array = store.get_mut(name)?;
            if grad.len() != array.numel() {
                return Err(Error::Dimension {
                    op: "adam",
                    shape: vec![grad.len()],
                    msg: format!("gradient size != parameter `{name}` size {}", array.numel()),
                });
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            for i in 0..grad.len() {
                m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * grad[i];
                v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                array.data[i] -= hp.learning_rate * m_hat / (v_hat.sqrt() + hp.eps);
            }
        }
        Ok(())
    }
}

/// Scale all gradients so their global l2 norm is at most `clip`; a clip of 0
/// disables. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Vec<f64>>, clip: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if clip > 0.0 && norm > clip {
        let scale = clip / norm;
        for g in grads.values_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
