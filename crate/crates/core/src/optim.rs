//! Adam with bias correction and a separate step count per parameter, so a
//! parameter that sat out some steps (frozen memories, the idle network of an
//! alternating update) is corrected by the number of updates it actually had.

use std::collections::BTreeMap;

use crate::error::{MimError, Result};
use crate::params::{to_storage, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Adam {
    pub slots: BTreeMap<String, AdamSlot>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// Updates every parameter named in `grads`; others are left untouched,
    /// moments included. Values and moments are kept at `f32` precision.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>, cfg: &AdamConfig) -> Result<()> {
        for (name, g) in grads {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(MimError::NonFinite {
                    component: format!("gradient of {name}[{i}]"),
                    value: g[i],
                });
            }
            let param = store
                .get(name)
                .ok_or_else(|| MimError::Contract(format!("gradient for unknown parameter `{name}`")))?;
            if param.value.len() != g.len() {
                return Err(MimError::Dimension {
                    what: format!("gradient of {name}"),
                    got: vec![g.len()],
                    expected: vec![param.value.len()],
                });
            }
        }
        for (name, g) in grads {
            let param = store.get_mut(name).expect("checked above");
            let slot = self.slots.entry(name.clone()).or_insert_with(|| AdamSlot {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
                t: 0,
            });
            slot.t += 1;
            let c1 = 1.0 - cfg.beta1.powi(slot.t as i32);
            let c2 = 1.0 - cfg.beta2.powi(slot.t as i32);
            for (((w, m), v), &gi) in param.value.iter_mut().zip(&mut slot.m).zip(&mut slot.v).zip(g) {
                *m = to_storage(cfg.beta1 * *m + (1.0 - cfg.beta1) * gi);
                *v = to_storage(cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi);
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w = to_storage(*w - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps));
            }
        }
        Ok(())
    }
}
