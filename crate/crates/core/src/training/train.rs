//! Mini-batch training loop, synthetic data and checkpoints.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsnet::{forward_traced, DsNetConfig, ModelWeights};
use crate::error::{Error, Result};
use crate::image::Tensor3;
use crate::tiling::BLOCK_SIZE;

use super::adam::{adam_step, AdamConfig, OptimizerState};
use super::backprop::dsnet_backward;
use super::loss::{LossOperators, LossTerms, LossWeights};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rate_weight: f64,
    pub msssim_weight: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Multiplier applied to the learning rate every `lr_decay_epochs`.
    pub lr_decay_factor: f64,
    pub lr_decay_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rate_weight: 30.0,
            msssim_weight: 1.0 / 6.0,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2: 0.0,
            batch_size: 16,
            epochs: 200,
            lr_decay_factor: 0.1,
            lr_decay_epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            rate_weight: self.rate_weight,
            msssim_weight: self.msssim_weight,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            l2: self.l2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        let non_negative = [self.rate_weight, self.msssim_weight, self.learning_rate];
        if non_negative.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("loss weights and learning rate must be finite and non-negative".into()));
        }
        if self.batch_size == 0 || self.lr_decay_epochs == 0 {
            return Err(Error::Config("batch size and decay period must be positive".into()));
        }
        if !(self.lr_decay_factor > 0.0) {
            return Err(Error::Config("learning-rate decay factor must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay_factor.powi((epoch / self.lr_decay_epochs) as i32)
    }
}

/// Per-epoch record of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean over the epoch's batches, measured before each update.
    pub loss: LossTerms,
}

/// Loss and parameter gradient of one batch, averaged over its items.
///
/// Items run in parallel; their gradients are summed in item order.
pub fn batch_gradient(
    params: &ModelWeights<f64>,
    blocks: &[&Tensor3<f64>],
    weights: &LossWeights,
    ops: &LossOperators,
) -> Result<(LossTerms, ModelWeights<f64>)> {
    let per_item: Vec<(LossTerms, ModelWeights<f64>)> = blocks
        .par_iter()
        .map(|x| {
            let trace = forward_traced(x, params)?;
            let (terms, g_out) = ops.loss_with_grad(x, &trace.output, weights)?;
            Ok((terms, dsnet_backward(params, &trace, &g_out)?))
        })
        .collect::<Result<_>>()?;
    let n = blocks.len() as f64;
    let mut grad = params.zeros_like();
    for (_, g) in &per_item {
        for ((aw, ab), l) in grad.layers_mut().zip(g.layers()) {
            aw.iter_mut().zip(&l.weights).for_each(|(a, v)| *a += v);
            ab.iter_mut().zip(&l.bias).for_each(|(a, v)| *a += v);
        }
    }
    for (w, b) in grad.layers_mut() {
        w.iter_mut().chain(b.iter_mut()).for_each(|v| *v /= n);
    }
    let terms: Vec<LossTerms> = per_item.iter().map(|(t, _)| *t).collect();
    Ok((LossTerms::mean(&terms, weights), grad))
}

/// Mean loss of `params` over `blocks`.
pub fn evaluate_loss(params: &ModelWeights<f64>, blocks: &[Tensor3<f64>], weights: &LossWeights) -> Result<LossTerms> {
    let ops = LossOperators::new(BLOCK_SIZE)?;
    let terms: Vec<LossTerms> = blocks
        .par_iter()
        .map(|x| ops.loss(x, &forward_traced(x, params)?.output, weights))
        .collect::<Result<_>>()?;
    Ok(LossTerms::mean(&terms, weights))
}

/// A resumable training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: ModelWeights<f64>,
    pub state: OptimizerState,
    /// Number of completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, params: ModelWeights<f64>) -> Result<Self> {
        config.validate()?;
        let state = OptimizerState::new(&params);
        Ok(Trainer {
            config,
            params,
            state,
            epoch: 0,
        })
    }

    /// Run one epoch over `blocks`: shuffle with a generator seeded from the
    /// run seed and epoch number, then update once per full batch. A
    /// trailing partial batch is skipped.
    pub fn run_epoch(&mut self, blocks: &[Tensor3<f64>]) -> Result<EpochStats> {
        let bs = self.config.batch_size;
        if blocks.len() < bs {
            return Err(Error::Input(format!(
                "{} training blocks is fewer than one batch of {bs}",
                blocks.len()
            )));
        }
        let lr = self.config.learning_rate_at(self.epoch);
        let weights = self.config.loss_weights();
        let adam = self.config.adam();
        let ops = LossOperators::new(BLOCK_SIZE)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (self.epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut order: Vec<usize> = (0..blocks.len()).collect();
        order.shuffle(&mut rng);
        let mut batch_terms = Vec::new();
        for chunk in order.chunks_exact(bs) {
            let batch: Vec<&Tensor3<f64>> = chunk.iter().map(|&i| &blocks[i]).collect();
            let (terms, grad) = batch_gradient(&self.params, &batch, &weights, &ops)?;
            adam_step(&mut self.params, &grad, &mut self.state, lr, &adam)?;
            batch_terms.push(terms);
        }
        let stats = EpochStats {
            epoch: self.epoch,
            learning_rate: lr,
            loss: LossTerms::mean(&batch_terms, &weights),
        };
        self.epoch += 1;
        Ok(stats)
    }

    /// Run the remaining epochs up to `config.epochs`.
    pub fn run(&mut self, blocks: &[Tensor3<f64>], mut on_epoch: impl FnMut(&EpochStats)) -> Result<Vec<EpochStats>> {
        let mut history = Vec::new();
        while self.epoch < self.config.epochs {
            let stats = self.run_epoch(blocks)?;
            on_epoch(&stats);
            history.push(stats);
        }
        Ok(history)
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: Vec<u8>| {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        write(CHECKPOINT_WEIGHTS, self.params.cast::<f32>().to_bytes())?;
        write(CHECKPOINT_FIRST_MOMENT, self.state.first_moment.cast::<f32>().to_bytes())?;
        write(CHECKPOINT_SECOND_MOMENT, self.state.second_moment.cast::<f32>().to_bytes())?;
        let sidecar = CheckpointScalars {
            step: self.state.step,
            epoch: self.epoch,
            lrelu_slope: self.params.config().lrelu_slope,
            config: self.config,
        };
        let text = toml::to_string(&sidecar).map_err(|e| Error::Internal(e.to_string()))?;
        write(CHECKPOINT_SCALARS, text.into_bytes())
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| Error::io(&p, e))
        };
        let text = String::from_utf8(read(CHECKPOINT_SCALARS)?)
            .map_err(|e| Error::Format(format!("{CHECKPOINT_SCALARS}: {e}")))?;
        let sc: CheckpointScalars =
            toml::from_str(&text).map_err(|e| Error::Format(format!("{CHECKPOINT_SCALARS}: {e}")))?;
        let load = |name: &str| -> Result<ModelWeights<f64>> {
            let mut w = ModelWeights::<f32>::from_bytes(&read(name)?)?;
            w.set_lrelu_slope(sc.lrelu_slope)?;
            Ok(w.cast())
        };
        let params = load(CHECKPOINT_WEIGHTS)?;
        let first_moment = load(CHECKPOINT_FIRST_MOMENT)?;
        let second_moment = load(CHECKPOINT_SECOND_MOMENT)?;
        if first_moment.config() != params.config() || second_moment.config() != params.config() {
            return Err(Error::Format("optimizer moments do not match the checkpoint weights".into()));
        }
        sc.config.validate()?;
        Ok(Trainer {
            config: sc.config,
            params,
            state: OptimizerState {
                first_moment,
                second_moment,
                step: sc.step,
            },
            epoch: sc.epoch,
        })
    }
}

pub const CHECKPOINT_WEIGHTS: &str = "weights.dsnw";
pub const CHECKPOINT_FIRST_MOMENT: &str = "adam_m.dsnw";
pub const CHECKPOINT_SECOND_MOMENT: &str = "adam_v.dsnw";
pub const CHECKPOINT_SCALARS: &str = "optimizer.toml";

#[derive(Serialize, Deserialize)]
struct CheckpointScalars {
    step: u64,
    epoch: usize,
    lrelu_slope: f64,
    config: TrainConfig,
}

/// Train a freshly initialized network; returns the weights and the
/// per-epoch loss trajectory.
pub fn train(
    blocks: &[Tensor3<f64>],
    config: &TrainConfig,
    model: DsNetConfig,
) -> Result<(ModelWeights<f64>, Vec<EpochStats>)> {
    let params = ModelWeights::<f64>::random(model, config.seed)?;
    let mut trainer = Trainer::new(*config, params)?;
    let history = trainer.run(blocks, |_| {})?;
    Ok((trainer.params, history))
}

/// Seeded 96x96 blocks of oriented sinusoidal texture plus noise, values in
/// `[0, 1]`, with chroma loosely following luma.
pub fn synthetic_blocks(count: usize, seed: u64) -> Vec<Tensor3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = BLOCK_SIZE;
    (0..count)
        .map(|_| {
            let waves: Vec<(f64, f64, f64, f64)> = (0..4)
                .map(|_| {
                    let angle = rng.gen_range(0.0..std::f64::consts::PI);
                    let freq = rng.gen_range(0.02..0.35);
                    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                    let amp = rng.gen_range(0.03..0.12);
                    (angle.cos() * freq, angle.sin() * freq, phase, amp)
                })
                .collect();
            let base = rng.gen_range(0.3..0.7);
            let chroma_gain = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
            let chroma_base = [rng.gen_range(0.4..0.6), rng.gen_range(0.4..0.6)];
            let mut luma = vec![0.0; n * n];
            for (i, v) in luma.iter_mut().enumerate() {
                let (x, y) = ((i % n) as f64, (i / n) as f64);
                let tex: f64 = waves
                    .iter()
                    .map(|&(fx, fy, ph, a)| a * (std::f64::consts::TAU * (fx * x + fy * y) + ph).sin())
                    .sum();
                *v = (base + tex + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0);
            }
            let mut data = luma.clone();
            for c in 0..2 {
                data.extend(
                    luma.iter()
                        .map(|l| (chroma_base[c] + chroma_gain[c] * (l - base)).clamp(0.0, 1.0)),
                );
            }
            Tensor3::new(3, n, n, data).expect("3 planes of 96x96")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_run(lr: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            batch_size: 2,
            epochs: 2,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate_at(0), 1e-4);
        assert_eq!(c.learning_rate_at(99), 1e-4);
        assert!((c.learning_rate_at(100) - 1e-5).abs() < 1e-20);
        assert!((c.learning_rate_at(199) - 1e-5).abs() < 1e-20);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let blocks = synthetic_blocks(4, 1);
        let start = ModelWeights::<f64>::random(DsNetConfig::tiny(), 7).unwrap();
        let (end, history) = train(&blocks, &small_run(0.0), DsNetConfig::tiny()).unwrap();
        assert_eq!(end, start);
        assert_eq!(history.len(), 2);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let blocks = synthetic_blocks(4, 2);
        let a = train(&blocks, &small_run(1e-3), DsNetConfig::tiny()).unwrap();
        let b = train(&blocks, &small_run(1e-3), DsNetConfig::tiny()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn too_few_blocks() {
        let blocks = synthetic_blocks(1, 3);
        assert!(matches!(
            train(&blocks, &small_run(1e-3), DsNetConfig::tiny()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn zero_network_gradient_lives_in_final_bias() {
        let blocks = synthetic_blocks(2, 4);
        let params = ModelWeights::<f64>::zeros(DsNetConfig::tiny()).unwrap();
        let w = LossWeights::default();
        let ops = LossOperators::new(BLOCK_SIZE).unwrap();
        let refs: Vec<&Tensor3<f64>> = blocks.iter().collect();
        let (_, grad) = batch_gradient(&params, &refs, &w, &ops).unwrap();
        // with every layer zero the output is bilinear(x) + final.bias, so the
        // bias gradient is the channel sum of the loss gradient
        let mut expected = [0.0; 3];
        for x in &blocks {
            let y = crate::dsnet::bilinear_base(x).unwrap();
            let (_, g) = ops.loss_with_grad(x, &y, &w).unwrap();
            for (c, e) in expected.iter_mut().enumerate() {
                *e += g.channel(c).iter().sum::<f64>() / 2.0;
            }
        }
        let bias = &grad.layer("final").unwrap().bias;
        for c in 0..3 {
            assert!((bias[c] - expected[c]).abs() < 1e-12 * expected[c].abs().max(1.0));
        }
        for l in grad.layers().iter().filter(|l| l.name != "final") {
            assert!(l.weights.iter().chain(&l.bias).all(|v| *v == 0.0), "{}", l.name);
        }

        let constant = vec![Tensor3::filled(3, 96, 96, 0.4)];
        let refs: Vec<&Tensor3<f64>> = constant.iter().collect();
        let (terms, grad) = batch_gradient(&params, &refs, &w, &ops).unwrap();
        assert!(terms.total < 1e-12);
        assert!(grad.layer("final").unwrap().bias.iter().all(|b| b.abs() < 1e-9));
    }

    #[test]
    fn checkpoint_round_trip() {
        let blocks = synthetic_blocks(2, 5);
        let mut t = Trainer::new(
            TrainConfig { batch_size: 2, epochs: 1, learning_rate: 1e-3, ..TrainConfig::default() },
            ModelWeights::random(DsNetConfig::tiny(), 1).unwrap(),
        )
        .unwrap();
        t.run_epoch(&blocks).unwrap();
        let dir = tempfile::tempdir().unwrap();
        t.save_checkpoint(dir.path()).unwrap();
        let back = Trainer::load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.epoch, 1);
        assert_eq!(back.state.step, 1);
        assert_eq!(back.config, t.config);
        assert_eq!(back.params, t.params.cast::<f32>().cast::<f64>());
        fs::write(dir.path().join(CHECKPOINT_SCALARS), "step = \"x\"").unwrap();
        assert!(matches!(Trainer::load_checkpoint(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn synthetic_blocks_are_textured_and_bounded() {
        let b = synthetic_blocks(3, 9);
        assert_eq!(b.len(), 3);
        for t in &b {
            assert_eq!(t.shape(), (3, 96, 96));
            assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let luma = t.channel(0);
            let mean = luma.iter().sum::<f64>() / luma.len() as f64;
            let var = luma.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / luma.len() as f64;
            assert!(var > 1e-4);
        }
        assert_eq!(synthetic_blocks(2, 9), synthetic_blocks(2, 9));
    }
}
