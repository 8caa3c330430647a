//! Finite-difference checks of the analytic training gradient.
//!
//! LReLU makes the network piecewise smooth, and a parameter step of 1e-3
//! moves thousands of pre-activations, some of them across zero. Central
//! differences taken across such a kink measure the jump, not the
//! derivative. The primary check therefore re-evaluates the network with
//! every activation slope pinned to the branch chosen by the unperturbed
//! pass, which is the function whose derivative backpropagation computes.
//! The plain central difference is reported alongside.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsnet::{
    bilinear_base, cascade_name, conv2d, forward_traced, rdb_conv_name, rdb_fusion_name, ModelWeights, Trace,
};
use crate::error::Result;
use crate::image::Tensor3;
use crate::tiling::BLOCK_SIZE;

use super::loss::{LossOperators, LossWeights};
use super::train::batch_gradient;

/// Apply the activation with the branch taken from `reference`.
fn pinned_lrelu(pre: &Tensor3<f64>, reference: &Tensor3<f64>, slope: f64) -> Tensor3<f64> {
    let data = pre
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&z, &r)| if r >= 0.0 { z } else { slope * z })
        .collect();
    Tensor3::new(pre.channels(), pre.height(), pre.width(), data).expect("same shape")
}

/// DSNet output for `w`, with activation branches fixed by `pattern`.
pub fn pinned_forward(x: &Tensor3<f64>, w: &ModelWeights<f64>, pattern: &Trace<f64>) -> Result<Tensor3<f64>> {
    let cfg = w.config();
    let s = cfg.lrelu_slope;
    let act = |input: &Tensor3<f64>, name: &str, reference: &Tensor3<f64>| -> Result<Tensor3<f64>> {
        Ok(pinned_lrelu(&conv2d(input, w.layer(name)?)?, reference, s))
    };
    let d0 = act(x, "down", &pattern.down_pre)?;
    let f0 = act(&d0, "shallow", &pattern.shallow_pre)?;
    let mut outs: Vec<Tensor3<f64>> = Vec::new();
    for i in 1..=cfg.num_rdb {
        let input = if i == 1 {
            f0.clone()
        } else {
            let mut parts = vec![&d0];
            parts.extend(outs.iter());
            act(&Tensor3::concat(&parts)?, &cascade_name(i), &pattern.cascades[i - 2].1)?
        };
        let rdb = &pattern.rdbs[i - 1];
        let mut dense = input.clone();
        for k in 1..=cfg.rdb_layers {
            let a = act(&dense, &rdb_conv_name(i, k), &rdb.pre[k - 1])?;
            dense = Tensor3::concat(&[&dense, &a])?;
        }
        let mut g = conv2d(&dense, w.layer(&rdb_fusion_name(i))?)?;
        g.add_assign(&input)?;
        outs.push(g);
    }
    let mut parts = vec![&d0];
    parts.extend(outs.iter());
    let mut skip = act(&Tensor3::concat(&parts)?, "rl1", &pattern.rl1_pre)?;
    skip.add_assign(&f0)?;
    let rl2 = act(&skip, "rl2", &pattern.rl2_pre)?;
    let mut out = conv2d(&rl2, w.layer("final")?)?;
    out.add_assign(&bilinear_base(x)?)?;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct CoordinateCheck {
    pub name: String,
    pub analytic: f64,
    /// Central difference with activation branches pinned.
    pub pinned: f64,
    /// Plain central difference.
    pub raw: f64,
}

impl CoordinateCheck {
    pub fn pinned_rel_error(&self) -> f64 {
        rel_error(self.analytic, self.pinned)
    }

    pub fn raw_rel_error(&self) -> f64 {
        rel_error(self.analytic, self.raw)
    }
}

/// `|a - b| / max(|a|, |b|)`, with a floor of 1e-10 on the denominator.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-10)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub coordinates: Vec<CoordinateCheck>,
}

impl GradCheckReport {
    pub fn max_pinned_rel_error(&self) -> f64 {
        self.coordinates.iter().map(|c| c.pinned_rel_error()).fold(0.0, f64::max)
    }

    pub fn max_raw_rel_error(&self) -> f64 {
        self.coordinates.iter().map(|c| c.raw_rel_error()).fold(0.0, f64::max)
    }

    /// Coordinates whose plain central difference misses by `tol` or more.
    pub fn raw_failures(&self, tol: f64) -> usize {
        self.coordinates.iter().filter(|c| c.raw_rel_error() >= tol).count()
    }
}

/// Compare the batch-mean loss gradient with central differences of step
/// `eps` on `count` parameter coordinates drawn with `seed`.
pub fn check_loss_gradient(
    params: &ModelWeights<f64>,
    blocks: &[Tensor3<f64>],
    weights: &LossWeights,
    count: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let ops = LossOperators::new(BLOCK_SIZE)?;
    let refs: Vec<&Tensor3<f64>> = blocks.iter().collect();
    let (_, grad) = batch_gradient(params, &refs, weights, &ops)?;
    let patterns = blocks
        .iter()
        .map(|x| forward_traced(x, params))
        .collect::<Result<Vec<_>>>()?;
    let n = blocks.len() as f64;

    let pinned_loss = |w: &ModelWeights<f64>| -> Result<f64> {
        let mut total = 0.0;
        for (x, p) in blocks.iter().zip(&patterns) {
            total += ops.loss(x, &pinned_forward(x, w, p)?, weights)?.total;
        }
        Ok(total / n)
    };
    let raw_loss = |w: &ModelWeights<f64>| -> Result<f64> {
        let mut total = 0.0;
        for x in blocks {
            total += ops.loss(x, &forward_traced(x, w)?.output, weights)?.total;
        }
        Ok(total / n)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total_params = params.param_count();
    let mut coordinates = Vec::with_capacity(count);
    for _ in 0..count {
        let j = rng.gen_range(0..total_params);
        let mut plus = params.clone();
        plus.flat_set(j, params.flat_get(j) + eps);
        let mut minus = params.clone();
        minus.flat_set(j, params.flat_get(j) - eps);
        coordinates.push(CoordinateCheck {
            name: params.flat_name(j),
            analytic: grad.flat_get(j),
            pinned: (pinned_loss(&plus)? - pinned_loss(&minus)?) / (2.0 * eps),
            raw: (raw_loss(&plus)? - raw_loss(&minus)?) / (2.0 * eps),
        });
    }
    Ok(GradCheckReport { coordinates })
}
