use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one buffer per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.tensor.numel()]).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update using the gradients stored on the parameters.
/// Parameters without a gradient buffer are left untouched; frozen rows are skipped.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            left: vec![store.len()],
            right: vec![state.m.len()],
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let frozen = store.param(id).frozen_rows.clone();
        let tensor = store.get_mut(id);
        let (_, cols) = tensor.dims2();
        let Some(grad) = tensor.grad().map(<[f64]>::to_vec) else {
            continue;
        };
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        if m.len() != grad.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: vec![m.len()],
                right: vec![grad.len()],
            });
        }
        let data = tensor.data_mut();
        for i in 0..grad.len() {
            if let Some(fz) = &frozen {
                if fz[i / cols] {
                    continue;
                }
            }
            let g = grad[i];
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            data[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}
