use std::collections::BTreeMap;

use super::params::ParamStore;
use super::GradMap;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

/// First-order optimizer over a ParamStore. Parameters absent from a
/// gradient map are left untouched, so freezing falls out of gradient
/// bookkeeping rather than optimizer configuration.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Sgd,
            lr,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            lr,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. The step counter increases by exactly one per
    /// call. Moment buffers are created lazily per parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradMap) -> Result<()> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::numerics(format!("non-finite gradient for {name}")));
            }
            let p = params
                .get(name)
                .ok_or_else(|| Error::config(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(Error::config(format!(
                    "gradient shape {:?} does not match parameter {name} shape {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step;

        for (name, g) in grads {
            let p = params.get_mut(name).expect("validated above");
            match self.kind {
                OptimizerKind::Sgd => {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= self.lr * gv;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let m = self
                        .m
                        .entry(name.clone())
                        .or_insert_with(|| vec![0.0; g.len()]);
                    let v = self
                        .v
                        .entry(name.clone())
                        .or_insert_with(|| vec![0.0; g.len()]);
                    debug_assert!(m.len() == g.len() && v.len() == g.len());
                    let bc1 = 1.0 - beta1.powi(t as i32);
                    let bc2 = 1.0 - beta2.powi(t as i32);
                    for i in 0..g.len() {
                        let gv = g.data()[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gv;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gv * gv;
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        p.data_mut()[i] -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
