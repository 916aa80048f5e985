//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{NtfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(NtfError::InvalidConfig(format!(
                "invalid Adam hyperparameters {self:?}"
            )))
        }
    }
}

/// First and second moment estimates per parameter tensor, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(shapes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|n| (vec![0.0; n], vec![0.0; n]))
            .unzip();
        AdamState { m, v, t: 0 }
    }

    pub fn for_tensors(tensors: &[&[f64]]) -> Self {
        AdamState::new(tensors.iter().map(|t| t.len()))
    }
}

/// One Adam update of every tensor in `params`. Fails without modifying
/// anything if a gradient is not finite. `names` labels tensors in errors.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    hyper: &AdamHyper,
    names: Option<&[String]>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NtfError::shape(
            format!("{} tensors", state.m.len()),
            format!("{} params / {} grads", params.len(), grads.len()),
        ));
    }
    for (n, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[n].len() {
            return Err(NtfError::shape(
                format!("tensor {n} of length {}", state.m[n].len()),
                g.len(),
            ));
        }
        if g.iter().any(|x| !x.is_finite()) {
            let name = names
                .and_then(|ns| ns.get(n).cloned())
                .unwrap_or_else(|| format!("tensor {n}"));
            return Err(NtfError::NonFiniteGradient(name));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for (n, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[n];
        let v = &mut state.v[n];
        for idx in 0..p.len() {
            let gi = g[idx];
            m[idx] = hyper.beta1 * m[idx] + (1.0 - hyper.beta1) * gi;
            v[idx] = hyper.beta2 * v[idx] + (1.0 - hyper.beta2) * gi * gi;
            let m_hat = m[idx] / c1;
            let v_hat = v[idx] / c2;
            p[idx] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}
