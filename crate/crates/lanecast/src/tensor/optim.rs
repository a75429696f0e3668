//! Adam optimizer with bias correction.

use super::array::Array;
use serde::{Deserialize, Serialize};

/// First/second-moment state, one entry per parameter array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Array>,
    pub v: Vec<Array>,
}

impl AdamState {
    pub fn new(params: &[Array]) -> AdamState {
        AdamState {
            step: 0,
            m: params.iter().map(|p| Array::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Array::zeros(p.shape())).collect(),
        }
    }
}

/// One Adam update over a parameter list; deterministic and in-place.
pub fn adam_step(
    params: &mut [Array],
    grads: &[Array],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
    assert_eq!(params.len(), state.m.len(), "params/state length mismatch");
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - beta1.powf(t);
    let bc2 = 1.0 - beta2.powf(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        assert_eq!(
            p.shape(),
            g.shape(),
            "adam_step: parameter shape {:?} vs gradient shape {:?}",
            p.shape(),
            g.shape()
        );
        for ((pv, &gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
