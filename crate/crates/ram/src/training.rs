//! Hybrid supervised + policy-gradient training: per-episode losses, the
//! optimizer family, learning-rate decay and the epoch/minibatch loop with
//! periodic evaluation.

use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{augment, batches, AugmentConfig, ImageSample};
use crate::error::{RamError, Result};
use crate::glimpse::GlimpseConfig;
use crate::model::{
    episode_backward, forward_episode, forward_episode_cached, replay_episode, EpisodeTrace,
    LossComponents, RamDims, RamParams,
};
use crate::report::{MetricsRecord, MetricsSink};

/// Run-level hyperparameters. Defaults are the baseline configuration used
/// by every linear search: 4 glimpses, 4 scales, 12px bandwidth, noise std
/// 0.22, batch 128, 100 epochs, Adam at 1e-3 with 0.97 decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub num_glimpses: usize,
    pub num_scales: usize,
    pub bandwidth: usize,
    pub loc_std: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub decay: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            num_glimpses: 4,
            num_scales: 4,
            bandwidth: 12,
            loc_std: 0.22,
            batch_size: 128,
            epochs: 100,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            decay: 0.97,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_glimpses < 1 || self.num_scales < 1 || self.bandwidth < 1 {
            return Err(RamError::Config(
                "glimpse counts and bandwidth must be >= 1".into(),
            ));
        }
        if self.loc_std <= 0.0 {
            return Err(RamError::Config(format!(
                "loc_std must be > 0, got {}",
                self.loc_std
            )));
        }
        if self.batch_size < 1 {
            return Err(RamError::Config("batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(RamError::Config("learning_rate must be > 0".into()));
        }
        if self.decay <= 0.0 || self.decay > 1.0 {
            return Err(RamError::Config(format!(
                "decay must be in (0, 1], got {}",
                self.decay
            )));
        }
        Ok(())
    }

    pub fn glimpse_config(&self) -> Result<GlimpseConfig> {
        GlimpseConfig::new(self.num_glimpses, self.num_scales, self.bandwidth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adagrad,
    Adadelta,
    Rmsprop,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Adadelta => "adadelta",
            OptimizerKind::Rmsprop => "rmsprop",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = RamError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "adagrad" => Ok(OptimizerKind::Adagrad),
            "adadelta" => Ok(OptimizerKind::Adadelta),
            "rmsprop" => Ok(OptimizerKind::Rmsprop),
            other => Err(RamError::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

// canonical optimizer constants; only the learning rate is swept
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const ADAGRAD_EPS: f64 = 1e-8;
const ADADELTA_RHO: f64 = 0.95;
const ADADELTA_EPS: f64 = 1e-6;
const RMSPROP_RHO: f64 = 0.9;
const RMSPROP_EPS: f64 = 1e-8;

/// Per-parameter accumulators, shapes mirroring the model tensors.
/// `slot1`/`slot2` hold whatever the algorithm needs: first/second moments
/// for Adam, squared-gradient sums for AdaGrad/RMSProp, squared-gradient and
/// squared-delta averages for AdaDelta.
pub struct OptimizerState {
    pub kind: OptimizerKind,
    step: u64,
    slot1: Vec<Vec<f64>>,
    slot2: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &RamParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        OptimizerState {
            kind,
            step: 0,
            slot1: zeros.clone(),
            slot2: zeros,
        }
    }
}

/// Apply one update with the state's algorithm, then clear the gradients.
pub fn optimizer_step(params: &mut RamParams, state: &mut OptimizerState, lr: f64) {
    state.step += 1;
    let t = state.step;
    for (k, tensor) in params.tensors_mut().into_iter().enumerate() {
        let s1 = &mut state.slot1[k];
        let s2 = &mut state.slot2[k];
        for i in 0..tensor.values.len() {
            let g = tensor.grads[i];
            let update = match state.kind {
                OptimizerKind::Sgd => lr * g,
                OptimizerKind::Adam => {
                    s1[i] = ADAM_BETA1 * s1[i] + (1.0 - ADAM_BETA1) * g;
                    s2[i] = ADAM_BETA2 * s2[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = s1[i] / (1.0 - ADAM_BETA1.powi(t as i32));
                    let v_hat = s2[i] / (1.0 - ADAM_BETA2.powi(t as i32));
                    lr * m_hat / (v_hat.sqrt() + ADAM_EPS)
                }
                OptimizerKind::Adagrad => {
                    s1[i] += g * g;
                    lr * g / (s1[i].sqrt() + ADAGRAD_EPS)
                }
                OptimizerKind::Adadelta => {
                    s1[i] = ADADELTA_RHO * s1[i] + (1.0 - ADADELTA_RHO) * g * g;
                    let delta = (s2[i] + ADADELTA_EPS).sqrt() / (s1[i] + ADADELTA_EPS).sqrt() * g;
                    s2[i] = ADADELTA_RHO * s2[i] + (1.0 - ADADELTA_RHO) * delta * delta;
                    lr * delta
                }
                OptimizerKind::Rmsprop => {
                    s1[i] = RMSPROP_RHO * s1[i] + (1.0 - RMSPROP_RHO) * g * g;
                    lr * g / (s1[i].sqrt() + RMSPROP_EPS)
                }
            };
            tensor.values[i] -= update;
        }
        tensor.zero_grads();
    }
}

/// One epoch of exponential decay: `lr' = lr * decay`.
pub fn decay_lr(lr: f64, decay: f64) -> f64 {
    lr * decay
}

/// Replay a recorded episode against the current parameters and accumulate
/// the full objective gradient into `params.grads`. Returns the loss
/// breakdown.
pub fn episode_loss_and_grads(
    params: &mut RamParams,
    image: &ImageSample,
    trace: &EpisodeTrace,
    cfg: &GlimpseConfig,
) -> Result<LossComponents> {
    let (replayed, cache) = replay_episode(image, params, cfg, trace)?;
    episode_backward(params, image, &replayed, &cache)
}

// rng stream layout: one ChaCha seed per run, streams partitioned by role
const STREAM_SHUFFLE: u64 = 1 << 56;
const STREAM_EPISODE: u64 = 2 << 56;
const STREAM_TEST_AUG: u64 = 3 << 56;
/// Fixed seed for evaluation-time initial fixations.
const EVAL_LOC_SEED: u64 = 0x4556_414c;

fn episode_rng(seed: u64, epoch: usize, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_EPISODE | ((epoch as u64) << 28) | sample as u64);
    rng
}

/// Classification accuracy over already-augmented samples, with
/// deterministic fixations (`std_eval`, normally 0) and a fixed initial
/// location stream so repeated calls agree bit-for-bit.
pub fn evaluate(
    params: &RamParams,
    samples: &[ImageSample],
    cfg: &GlimpseConfig,
    std_eval: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(RamError::Consistency("evaluate on empty dataset".into()));
    }
    let hits: usize = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(EVAL_LOC_SEED);
            rng.set_stream(i as u64);
            let trace = forward_episode(s, params, cfg, std_eval, &mut rng)?;
            Ok(trace.reward as usize)
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok(hits as f64 / samples.len() as f64)
}

/// Everything one training run needs besides the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_id: String,
    pub hyper: HyperParams,
    pub augment: AugmentConfig,
    /// Seed for parameter init, shuffling and episode sampling.
    pub seed: u64,
    /// Evaluate every `eval_stride` minibatches.
    pub eval_stride: usize,
    /// Cap on the evaluation subset used during training; the final
    /// accuracy always uses the full test split.
    pub eval_subset: usize,
    /// Emit a parameter checkpoint every k epochs into `out_dir`.
    pub checkpoint_every: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "run".into(),
            hyper: HyperParams::default(),
            augment: AugmentConfig::default(),
            seed: 1,
            eval_stride: 1,
            eval_subset: 1000,
            checkpoint_every: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.augment.validate()?;
        if self.eval_stride < 1 {
            return Err(RamError::Config("eval_stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// Raw (28x28) train/test samples; augmentation happens inside the loop.
#[derive(Debug, Clone)]
pub struct DataSplit {
    pub train: Vec<ImageSample>,
    pub test: Vec<ImageSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Diverged,
    Aborted,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RunStatus::Completed => "completed",
            RunStatus::Diverged => "diverged",
            RunStatus::Aborted => "aborted",
        };
        f.write_str(s)
    }
}

pub struct TrainOutcome {
    pub params: RamParams,
    pub records: Vec<MetricsRecord>,
    pub status: RunStatus,
    /// Accuracy on the full augmented test split after the last epoch (the
    /// last recorded eval accuracy if the run diverged).
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    /// Wall-clock of the epoch loop, evaluation included.
    pub wall_seconds: f64,
    /// Wall-clock of the epoch loop minus time spent evaluating.
    pub train_seconds: f64,
    pub epochs_run: usize,
}

/// Augment a whole split once with the test-augmentation stream, which is
/// independent of the run seed so evaluation data is identical across runs
/// sharing an `AugmentConfig`.
pub fn augment_test_split(samples: &[ImageSample], cfg: &AugmentConfig) -> Result<Vec<ImageSample>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(STREAM_TEST_AUG | i as u64);
            augment(s, cfg, &mut rng)
        })
        .collect()
}

const GRAD_CHUNK: usize = 16;

/// Forward/backward over one minibatch. Episodes fan out in fixed chunks of
/// `GRAD_CHUNK` with private gradient buffers that are reduced in chunk
/// order, so the result is bit-identical for any worker count.
fn run_batch(
    params: &mut RamParams,
    train: &[ImageSample],
    batch: &[usize],
    run: &RunConfig,
    gcfg: &GlimpseConfig,
    epoch: usize,
) -> Result<f64> {
    let chunks: Vec<&[usize]> = batch.chunks(GRAD_CHUNK).collect();
    let results: Vec<(RamParams, f64)> = chunks
        .into_par_iter()
        .map(|chunk| -> Result<(RamParams, f64)> {
            let mut local = params.clone();
            local.zero_grads();
            let mut loss_sum = 0.0;
            for &idx in chunk {
                let mut rng = episode_rng(run.seed, epoch, idx);
                let sample = augment(&train[idx], &run.augment, &mut rng)?;
                let (trace, cache) =
                    forward_episode_cached(&sample, &local, gcfg, run.hyper.loc_std, &mut rng)?;
                let loss = episode_backward(&mut local, &sample, &trace, &cache)?;
                loss_sum += loss.total;
            }
            Ok((local, loss_sum))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total = 0.0;
    for (local, loss) in &results {
        params.add_grads_from(local);
        total += loss;
    }
    Ok(total / batch.len() as f64)
}

/// Full training loop: per epoch, shuffle and step through minibatches,
/// evaluating on a fixed subset every `eval_stride` batches and decaying the
/// learning rate at the epoch boundary. A non-finite batch loss aborts the
/// run with `RunStatus::Diverged` before the poisoned step is applied.
pub fn train(
    run: &RunConfig,
    data: &DataSplit,
    mut sink: Option<&mut MetricsSink>,
) -> Result<TrainOutcome> {
    run.validate()?;
    if data.train.is_empty() {
        return Err(RamError::Consistency("empty training split".into()));
    }
    if data.test.is_empty() {
        return Err(RamError::Consistency("empty test split".into()));
    }
    let gcfg = run.hyper.glimpse_config()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut params = RamParams::new(&gcfg, RamDims::default(), &mut init_rng);
    let mut opt = OptimizerState::new(run.hyper.optimizer, &params);
    let mut lr = run.hyper.learning_rate;

    let eval_full = augment_test_split(&data.test, &run.augment)?;
    let eval_subset = &eval_full[..run.eval_subset.min(eval_full.len())];

    let mut records: Vec<MetricsRecord> = Vec::new();
    let mut best_accuracy = 0.0f64;
    let mut status = RunStatus::Completed;
    let mut step = 0usize;
    let mut epochs_run = 0usize;
    let mut eval_seconds = 0.0f64;
    let started = Instant::now();

    'epochs: for epoch in 0..run.hyper.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(run.seed);
        shuffle_rng.set_stream(STREAM_SHUFFLE | epoch as u64);
        let epoch_batches = batches(data.train.len(), run.hyper.batch_size, &mut shuffle_rng)?;

        for batch in &epoch_batches {
            let loss = run_batch(&mut params, &data.train, batch, run, &gcfg, epoch)?;
            if !loss.is_finite() {
                status = RunStatus::Diverged;
                params.zero_grads();
                break 'epochs;
            }
            params.scale_grads(1.0 / batch.len() as f64);
            optimizer_step(&mut params, &mut opt, lr);
            step += 1;

            if step % run.eval_stride == 0 {
                let eval_started = Instant::now();
                let accuracy = evaluate(&params, eval_subset, &gcfg, 0.0)?;
                eval_seconds += eval_started.elapsed().as_secs_f64();
                best_accuracy = best_accuracy.max(accuracy);
                let record = MetricsRecord {
                    run_id: run.run_id.clone(),
                    epoch,
                    step,
                    train_loss: loss,
                    eval_accuracy: accuracy,
                    wall_seconds: started.elapsed().as_secs_f64(),
                    lr,
                };
                if let Some(s) = sink.as_deref_mut() {
                    s.append(&record)?;
                }
                records.push(record);
            }
        }
        lr = decay_lr(lr, run.hyper.decay);
        epochs_run = epoch + 1;

        if let (Some(every), Some(dir)) = (run.checkpoint_every, run.out_dir.as_ref()) {
            if every > 0 && (epoch + 1) % every == 0 {
                std::fs::create_dir_all(dir).map_err(|e| RamError::io(dir, e))?;
                params.save(&dir.join(format!("checkpoint-epoch{:04}.json", epoch + 1)))?;
            }
        }
    }

    let wall_seconds = started.elapsed().as_secs_f64();
    let final_accuracy = match status {
        RunStatus::Completed if run.hyper.epochs > 0 => {
            evaluate(&params, &eval_full, &gcfg, 0.0)?
        }
        RunStatus::Completed => 0.0,
        _ => records.last().map(|r| r.eval_accuracy).unwrap_or(0.0),
    };
    best_accuracy = best_accuracy.max(final_accuracy);

    Ok(TrainOutcome {
        params,
        records,
        status,
        final_accuracy,
        best_accuracy,
        wall_seconds,
        train_seconds: (wall_seconds - eval_seconds).max(0.0),
        epochs_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward_episode_cached, gaussian_logprob, NUM_CLASSES};
    use rand::Rng;
    use crate::nncore::gradcheck::{numeric_grad, relative_error};
    use crate::nncore::{affine_forward, softmax_ce};

    fn tiny_tensor_params() -> RamParams {
        let cfg = GlimpseConfig::new(2, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        RamParams::new(&cfg, RamDims::tiny(), &mut rng)
    }

    #[test]
    fn zero_gradient_is_a_fixed_point_for_every_optimizer() {
        for kind in [
            OptimizerKind::Sgd,
            OptimizerKind::Adam,
            OptimizerKind::Adagrad,
            OptimizerKind::Adadelta,
            OptimizerKind::Rmsprop,
        ] {
            let mut params = tiny_tensor_params();
            params.zero_grads();
            let before: Vec<Vec<f64>> =
                params.tensors().iter().map(|t| t.values.clone()).collect();
            let mut state = OptimizerState::new(kind, &params);
            optimizer_step(&mut params, &mut state, 0.1);
            for (t, b) in params.tensors().iter().zip(&before) {
                assert_eq!(&t.values, b, "{kind} moved with zero grads");
            }
        }
    }

    #[test]
    fn sgd_update_arithmetic() {
        let mut params = tiny_tensor_params();
        params.zero_grads();
        params.w_img.values[0] = 1.0;
        params.w_img.grads[0] = 0.5;
        let mut state = OptimizerState::new(OptimizerKind::Sgd, &params);
        optimizer_step(&mut params, &mut state, 0.1);
        assert!((params.w_img.values[0] - 0.95).abs() < 1e-15);
        assert_eq!(params.w_img.grads[0], 0.0, "grads cleared after step");
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        // hand-evaluated recurrences at t=1: m_hat = g, v_hat = g^2, so the
        // update is lr * g / (|g| + eps) ~= lr
        let mut params = tiny_tensor_params();
        params.zero_grads();
        params.w_img.values[0] = 0.0;
        params.w_img.grads[0] = 1.0;
        let mut state = OptimizerState::new(OptimizerKind::Adam, &params);
        optimizer_step(&mut params, &mut state, 1e-3);
        let theta = params.w_img.values[0];
        assert!(
            relative_error(theta, -1e-3) < 1e-6,
            "adam first step {theta}"
        );
    }

    #[test]
    fn all_optimizers_shrink_a_quadratic() {
        // minimize theta^2 with each optimizer at its tabled learning rate
        for (kind, lr) in [
            (OptimizerKind::Sgd, 0.1),
            (OptimizerKind::Adam, 1e-3),
            (OptimizerKind::Adagrad, 0.2),
            (OptimizerKind::Adadelta, 5.0),
            (OptimizerKind::Rmsprop, 9e-4),
        ] {
            let mut params = tiny_tensor_params();
            params.zero_grads();
            for t in params.tensors_mut() {
                for v in t.values.iter_mut() {
                    *v = 1.0;
                }
            }
            let mut state = OptimizerState::new(kind, &params);
            for _ in 0..200 {
                for t in params.tensors_mut() {
                    for i in 0..t.len() {
                        t.grads[i] = 2.0 * t.values[i];
                    }
                }
                optimizer_step(&mut params, &mut state, lr);
            }
            let theta = params.w_img.values[0].abs();
            assert!(theta < 0.9, "{kind} failed to descend: |theta| = {theta}");
        }
    }

    #[test]
    fn decay_examples() {
        assert!((decay_lr(1e-3, 0.97) - 0.97e-3).abs() < 1e-18);
        assert_eq!(decay_lr(0.5, 1.0), 0.5);
        let mut lr = 1.0;
        for _ in 0..100 {
            lr = decay_lr(lr, 0.97);
        }
        // 0.97^100 by direct exponentiation
        assert!(relative_error(lr, 0.97f64.powi(100)) < 1e-12);
        assert!((lr - 0.047553).abs() < 1e-5);
    }

    fn tiny_image(label: u8, seed: u64) -> ImageSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels = (0..16).map(|_| rng.gen_range(0.0..1.0)).collect();
        ImageSample::new(pixels, 4, 4, label)
    }

    #[test]
    fn full_episode_gradient_matches_finite_differences() {
        // h=3, G=2, B=2, S=1 on a 4x4 image; everything the estimator treats
        // as constant is frozen from the base run (fixations, advantages,
        // and the hidden states feeding the detached policy and baseline
        // heads), making the objective an ordinary differentiable function
        let cfg = GlimpseConfig::new(2, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = RamParams::new(&cfg, RamDims::tiny(), &mut rng);
        let image = tiny_image(7, 91);
        let std = 0.22;

        let mut ep_rng = ChaCha8Rng::seed_from_u64(13);
        let (trace0, cache0) =
            forward_episode_cached(&image, &params, &cfg, std, &mut ep_rng).unwrap();
        let steps = trace0.locations.len();
        let frozen_adv: Vec<f64> = trace0
            .baselines
            .iter()
            .map(|b| trace0.reward - b)
            .collect();
        let frozen_h: Vec<Vec<f64>> = (0..steps).map(|t| cache0.hidden(t).to_vec()).collect();
        let frozen_reward = trace0.reward;

        let objective = |p: &RamParams| -> f64 {
            let (tr, _) = replay_episode(&image, p, &cfg, &trace0).unwrap();
            let (ce, _) = softmax_ce(&tr.logits, image.label as usize).unwrap();
            let mut policy = 0.0;
            for t in 0..steps.saturating_sub(1) {
                let mean_pre = affine_forward(&p.w_locout, &p.b_locout, &frozen_h[t]).unwrap();
                let mean = crate::nncore::tanh_forward(&mean_pre);
                let raw = trace0.raw_samples[t];
                let lp = gaussian_logprob(raw[0], mean[0], std)
                    + gaussian_logprob(raw[1], mean[1], std);
                policy += -frozen_adv[t] * lp;
            }
            let mut baseline = 0.0;
            for h in &frozen_h {
                let b = affine_forward(&p.w_base, &p.b_base, h).unwrap()[0];
                baseline += (b - frozen_reward) * (b - frozen_reward);
            }
            ce + policy + baseline
        };

        params.zero_grads();
        let loss = episode_backward(&mut params, &image, &trace0, &cache0).unwrap();
        assert!((loss.total - objective(&params)).abs() < 1e-12);

        let base = params.clone();
        let names: Vec<String> = base.tensors().iter().map(|t| t.name.clone()).collect();
        for k in 0..names.len() {
            let n = base.tensors()[k].len();
            let num = numeric_grad(n, |i, eps| {
                let mut p = base.clone();
                p.tensors_mut()[k].values[i] += eps;
                objective(&p)
            });
            for (a, nval) in params.tensors()[k].grads.iter().zip(&num) {
                assert!(
                    relative_error(*a, *nval) < 1e-4,
                    "{}: analytic {a} vs numeric {nval}",
                    names[k]
                );
            }
        }
    }

    #[test]
    fn loss_and_grads_via_replay_equals_direct_backward() {
        let cfg = GlimpseConfig::new(3, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = RamParams::new(&cfg, RamDims::tiny(), &mut rng);
        let image = tiny_image(2, 17);
        let mut ep_rng = ChaCha8Rng::seed_from_u64(4);
        let (trace, cache) =
            forward_episode_cached(&image, &params, &cfg, 0.4, &mut ep_rng).unwrap();

        let mut direct = params.clone();
        direct.zero_grads();
        let a = episode_backward(&mut direct, &image, &trace, &cache).unwrap();

        let mut replayed = params.clone();
        replayed.zero_grads();
        let b = episode_loss_and_grads(&mut replayed, &image, &trace, &cfg).unwrap();

        assert_eq!(a, b);
        for (x, y) in direct.tensors().iter().zip(replayed.tensors()) {
            assert_eq!(x.grads, y.grads, "{}", x.name);
        }
    }

    #[test]
    fn reward_definition_follows_argmax() {
        let cfg = GlimpseConfig::new(1, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut params = RamParams::new(&cfg, RamDims::tiny(), &mut rng);
        params.w_action.values.fill(0.0);
        params.b_action.values.fill(0.0);
        params.b_action.values[6] = 5.0;
        let mut ep_rng = ChaCha8Rng::seed_from_u64(0);
        let hit = forward_episode(&tiny_image(6, 1), &params, &cfg, 0.22, &mut ep_rng).unwrap();
        assert_eq!(hit.reward, 1.0);
        let mut ep_rng = ChaCha8Rng::seed_from_u64(0);
        let miss = forward_episode(&tiny_image(3, 1), &params, &cfg, 0.22, &mut ep_rng).unwrap();
        assert_eq!(miss.reward, 0.0);
    }

    fn quick_data(n_train: usize, n_test: usize) -> DataSplit {
        let train = (0..n_train)
            .map(|i| tiny_digitish(i as u64, (i % NUM_CLASSES) as u8))
            .collect();
        let test = (0..n_test)
            .map(|i| tiny_digitish(1000 + i as u64, (i % NUM_CLASSES) as u8))
            .collect();
        DataSplit { train, test }
    }

    fn tiny_digitish(seed: u64, label: u8) -> ImageSample {
        // 28x28 blob whose position depends on the label, so the task is
        // learnable in a handful of steps
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pixels = vec![0.0; 28 * 28];
        let r0 = 4 + (label as usize % 5) * 4;
        let c0 = 4 + (label as usize / 5) * 10;
        for r in r0..r0 + 6 {
            for c in c0..c0 + 6 {
                pixels[r * 28 + c] = rng.gen_range(0.6..1.0);
            }
        }
        ImageSample::new(pixels, 28, 28, label)
    }

    fn quick_run(run_id: &str, seed: u64, epochs: usize) -> RunConfig {
        RunConfig {
            run_id: run_id.into(),
            hyper: HyperParams {
                num_glimpses: 2,
                num_scales: 2,
                bandwidth: 4,
                batch_size: 8,
                epochs,
                ..HyperParams::default()
            },
            augment: AugmentConfig {
                canvas_size: 32,
                rotation_max: 0.0,
                pixel_noise_std: 0.05,
                seed: 3,
            },
            seed,
            eval_stride: 1,
            eval_subset: 16,
            checkpoint_every: None,
            out_dir: None,
        }
    }

    #[test]
    fn zero_epochs_returns_initial_params_and_no_records() {
        let data = quick_data(16, 8);
        let run = quick_run("zero", 1, 0);
        let outcome = train(&run, &data, None).unwrap();
        assert!(outcome.records.is_empty());
        assert_eq!(outcome.status, RunStatus::Completed);
        assert_eq!(outcome.epochs_run, 0);

        let gcfg = run.hyper.glimpse_config().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
        let fresh = RamParams::new(&gcfg, RamDims::default(), &mut rng);
        for (a, b) in outcome.params.tensors().iter().zip(fresh.tensors()) {
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn record_count_is_batches_per_epoch_at_stride_one() {
        let data = quick_data(20, 8);
        let run = quick_run("stride", 2, 2);
        let outcome = train(&run, &data, None).unwrap();
        // ceil(20 / 8) = 3 eval points per epoch
        assert_eq!(outcome.records.len(), 6);
        assert_eq!(outcome.status, RunStatus::Completed);
    }

    #[test]
    fn training_is_bitwise_deterministic_excluding_wall_time() {
        let data = quick_data(24, 12);
        let a = train(&quick_run("det", 9, 2), &data, None).unwrap();
        let b = train(&quick_run("det", 9, 2), &data, None).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (x, y) in a.records.iter().zip(&b.records) {
            assert!(x.same_excluding_wall(y), "{x:?} vs {y:?}");
        }
        assert_eq!(a.final_accuracy.to_bits(), b.final_accuracy.to_bits());
        for (x, y) in a.params.tensors().iter().zip(b.params.tensors()) {
            assert_eq!(x.values, y.values, "{}", x.name);
        }
    }

    #[test]
    fn evaluate_is_deterministic_and_rejects_empty() {
        let data = quick_data(4, 32);
        let run = quick_run("eval", 3, 0);
        let gcfg = run.hyper.glimpse_config().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = RamParams::new(&gcfg, RamDims::default(), &mut rng);
        let eval_set = augment_test_split(&data.test, &run.augment).unwrap();
        let a = evaluate(&params, &eval_set, &gcfg, 0.0).unwrap();
        let b = evaluate(&params, &eval_set, &gcfg, 0.0).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(evaluate(&params, &[], &gcfg, 0.0).is_err());
    }

    #[test]
    fn untrained_accuracy_is_near_chance() {
        // random params, random images, labels uniform over 10 classes
        let gcfg = GlimpseConfig::new(2, 2, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let params = RamParams::new(&gcfg, RamDims::default(), &mut rng);
        let samples: Vec<ImageSample> = (0..1200)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(5000 + i as u64);
                let pixels = (0..32 * 32).map(|_| r.gen_range(0.0..1.0)).collect();
                ImageSample::new(pixels, 32, 32, (i % 10) as u8)
            })
            .collect();
        let acc = evaluate(&params, &samples, &gcfg, 0.0).unwrap();
        assert!((acc - 0.1).abs() < 0.03, "chance-level accuracy, got {acc}");
    }

    #[test]
    fn constant_class_params_score_perfectly_on_matching_labels() {
        let gcfg = GlimpseConfig::new(1, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = RamParams::new(&gcfg, RamDims::tiny(), &mut rng);
        params.w_action.values.fill(0.0);
        params.b_action.values.fill(0.0);
        params.b_action.values[3] = 4.0;
        let samples: Vec<ImageSample> = (0..50).map(|i| tiny_digitish(i, 3)).collect();
        let acc = evaluate(&params, &samples, &gcfg, 0.0).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn divergent_run_aborts_with_diagnostic_status() {
        let data = quick_data(16, 8);
        let mut run = quick_run("nan", 4, 3);
        run.hyper.optimizer = OptimizerKind::Sgd;
        run.hyper.learning_rate = 1e12;
        let outcome = train(&run, &data, None).unwrap();
        assert_eq!(outcome.status, RunStatus::Diverged);
        assert!(outcome.epochs_run < 3);
    }

    #[test]
    fn reinforce_estimator_is_unbiased_on_gaussian_testbed() {
        // 1-D policy N(mu, sigma^2), reward -l^2; the score-function average
        // must approach d/dmu E[R] = -2 mu
        let sigma = 0.5;
        let n = 100_000;
        for (mu, seed) in [(-0.5, 1u64), (0.0, 2), (0.7, 3)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..n {
                let eps: f64 = rng.sample(rand_distr::StandardNormal);
                let l = mu + sigma * eps;
                let estimate = -l * l * crate::model::gaussian_score_mean(l, mu, sigma);
                sum += estimate;
                sum_sq += estimate * estimate;
            }
            let mean = sum / n as f64;
            let var = sum_sq / n as f64 - mean * mean;
            let stderr = (var / n as f64).sqrt();
            let expected = -2.0 * mu;
            assert!(
                (mean - expected).abs() <= 3.0 * stderr,
                "mu={mu}: estimate {mean} vs {expected} (3se = {})",
                3.0 * stderr
            );
        }
        let _ = gaussian_logprob(0.0, 0.0, 1.0);
    }
}
