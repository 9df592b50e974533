//! Adam with per-parameter-group learning rates and freezing.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::params::{GradStore, ParamGroup, ParamStore};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Per-group learning rates; an absent entry freezes the group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerPolicy {
    rates: BTreeMap<ParamGroup, f64>,
}

impl OptimizerPolicy {
    /// Start from everything frozen.
    pub fn frozen() -> Self {
        OptimizerPolicy::default()
    }

    /// Unfreeze a group at the given learning rate.
    pub fn with_rate(mut self, group: ParamGroup, lr: f64) -> Self {
        self.rates.insert(group, lr);
        self
    }

    pub fn rate_of(&self, group: ParamGroup) -> Option<f64> {
        self.rates.get(&group).copied()
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        !self.rates.contains_key(&group)
    }

    pub fn frozen_groups(&self) -> Vec<ParamGroup> {
        ParamGroup::ALL
            .into_iter()
            .filter(|g| self.is_frozen(*g))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (group, &lr) in &self.rates {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "learning rate for group {group} must be positive and finite, got {lr}"
                )));
            }
        }
        Ok(())
    }
}

/// Adam state over a parameter store.
pub struct Adam {
    policy: OptimizerPolicy,
    m: BTreeMap<String, ArrayD<f64>>,
    v: BTreeMap<String, ArrayD<f64>>,
    step_count: u64,
    updates_per_group: BTreeMap<ParamGroup, u64>,
}

impl Adam {
    pub fn new(policy: OptimizerPolicy) -> Self {
        Adam {
            policy,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step_count: 0,
            updates_per_group: BTreeMap::new(),
        }
    }

    pub fn policy(&self) -> &OptimizerPolicy {
        &self.policy
    }

    /// Tensor updates applied so far, per group. Frozen groups never appear.
    pub fn updates_per_group(&self) -> &BTreeMap<ParamGroup, u64> {
        &self.updates_per_group
    }

    /// Apply one update from accumulated gradients. Frozen groups and
    /// parameters without gradients are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradStore) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);

        let names: Vec<String> = grads.names().map(String::from).collect();
        for name in names {
            let group = store.group_of(&name)?;
            let Some(lr) = self.policy.rate_of(group) else {
                continue;
            };
            let grad = grads.get(&name).expect("name taken from grads");
            if store.get(&name)?.shape() != grad.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "gradient for {name} has shape {:?}, parameter {:?}",
                    grad.shape(),
                    store.get(&name)?.shape()
                )));
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            m.zip_mut_with(&grad, |m_i, g| *m_i = BETA1 * *m_i + (1.0 - BETA1) * g);
            v.zip_mut_with(&grad, |v_i, g| *v_i = BETA2 * *v_i + (1.0 - BETA2) * g * g);

            let mut delta = m.clone();
            delta.zip_mut_with(v, |d, v_i| {
                *d = lr * (*d / bc1) / ((v_i / bc2).sqrt() + EPS);
            });
            store.update(&name, |value| *value -= &delta)?;
            *self.updates_per_group.entry(group).or_insert(0) += 1;
        }
        Ok(())
    }
}
