//! Bias-corrected Adam over [`ModelWeights`].

use crate::dsnet::ModelWeights;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty coefficient folded into the gradient.
    pub l2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::Config(format!(
                "Adam betas must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::Config("Adam epsilon must be positive and L2 non-negative".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the number of steps taken.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub first_moment: ModelWeights<f64>,
    pub second_moment: ModelWeights<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelWeights<f64>) -> Self {
        OptimizerState {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }
}

/// Apply one Adam update with learning rate `lr` in place.
pub fn adam_step(
    params: &mut ModelWeights<f64>,
    grads: &ModelWeights<f64>,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.config() != grads.config() || params.config() != state.first_moment.config() {
        return Err(Error::Shape("optimizer state and gradient must match the parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let layers = params
        .layers_mut()
        .zip(grads.layers())
        .zip(state.first_moment.layers_mut().zip(state.second_moment.layers_mut()));
    for (((pw, pb), g), ((mw, mb), (vw, vb))) in layers {
        for (p, g, m, v) in [(pw, &g.weights, mw, vw), (pb, &g.bias, mb, vb)] {
            for i in 0..p.len() {
                let grad = g[i] + cfg.l2 * p[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad * grad;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
    Ok(())
}
