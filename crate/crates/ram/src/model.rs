//! The recurrent attention model: glimpse network, recurrent core,
//! classification head, location policy head and baseline head, assembled
//! into an episodic forward pass (sense -> encode -> recur -> classify /
//! locate) plus the matching backward pass.
//!
//! Sampled locations are treated as non-differentiable inputs (hard
//! attention): the classification loss reaches the location head only
//! through the score-function term, never through the crop.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dataset::ImageSample;
use crate::error::{RamError, Result};
use crate::glimpse::{retina, GlimpseConfig, Location, RetinaObservation};
use crate::nncore::{
    affine_backward, affine_forward, load_checkpoint, relu_backward, relu_forward,
    rnn_cell_backward, rnn_cell_forward, save_checkpoint, softmax_ce, softmax_ce_grad,
    tanh_backward, tanh_forward, ParamTensor,
};

pub const NUM_CLASSES: usize = 10;

/// Hidden-layer widths. The image pathway maps the flattened sensor to
/// `glimpse_hidden`, the location pathway maps (x, y) to `loc_hidden`, their
/// concatenation is fused into a `g_size` feature, and the recurrent state
/// has `core_hidden` units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RamDims {
    pub glimpse_hidden: usize,
    pub loc_hidden: usize,
    pub g_size: usize,
    pub core_hidden: usize,
}

impl Default for RamDims {
    fn default() -> Self {
        RamDims {
            glimpse_hidden: 128,
            loc_hidden: 128,
            g_size: 256,
            core_hidden: 256,
        }
    }
}

impl RamDims {
    /// Small widths for gradient-check and smoke-test work.
    pub fn tiny() -> Self {
        RamDims {
            glimpse_hidden: 4,
            loc_hidden: 3,
            g_size: 5,
            core_hidden: 3,
        }
    }
}

/// All learnable tensors. Matrix shapes are `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RamParams {
    pub dims: RamDims,
    pub sensor_size: usize,
    // glimpse network
    pub w_img: ParamTensor,
    pub b_img: ParamTensor,
    pub w_loc: ParamTensor,
    pub b_loc: ParamTensor,
    pub w_comb: ParamTensor,
    pub b_comb: ParamTensor,
    // recurrent core
    pub w_hh: ParamTensor,
    pub w_gh: ParamTensor,
    pub b_h: ParamTensor,
    // heads
    pub w_action: ParamTensor,
    pub b_action: ParamTensor,
    pub w_locout: ParamTensor,
    pub b_locout: ParamTensor,
    pub w_base: ParamTensor,
    pub b_base: ParamTensor,
}

impl RamParams {
    pub fn new<R: Rng>(cfg: &GlimpseConfig, dims: RamDims, rng: &mut R) -> Self {
        let sensor = cfg.sensor_size();
        let mut p = RamParams {
            dims,
            sensor_size: sensor,
            w_img: ParamTensor::matrix("glimpse.w_img", dims.glimpse_hidden, sensor),
            b_img: ParamTensor::vector("glimpse.b_img", dims.glimpse_hidden),
            w_loc: ParamTensor::matrix("glimpse.w_loc", dims.loc_hidden, 2),
            b_loc: ParamTensor::vector("glimpse.b_loc", dims.loc_hidden),
            w_comb: ParamTensor::matrix(
                "glimpse.w_comb",
                dims.g_size,
                dims.glimpse_hidden + dims.loc_hidden,
            ),
            b_comb: ParamTensor::vector("glimpse.b_comb", dims.g_size),
            w_hh: ParamTensor::matrix("core.w_hh", dims.core_hidden, dims.core_hidden),
            w_gh: ParamTensor::matrix("core.w_gh", dims.core_hidden, dims.g_size),
            b_h: ParamTensor::vector("core.b_h", dims.core_hidden),
            w_action: ParamTensor::matrix("action.w", NUM_CLASSES, dims.core_hidden),
            b_action: ParamTensor::vector("action.b", NUM_CLASSES),
            w_locout: ParamTensor::matrix("location.w", 2, dims.core_hidden),
            b_locout: ParamTensor::vector("location.b", 2),
            w_base: ParamTensor::matrix("baseline.w", 1, dims.core_hidden),
            b_base: ParamTensor::vector("baseline.b", 1),
        };
        for t in p.tensors_mut() {
            t.init_xavier(rng);
        }
        p
    }

    pub fn tensors(&self) -> Vec<&ParamTensor> {
        vec![
            &self.w_img,
            &self.b_img,
            &self.w_loc,
            &self.b_loc,
            &self.w_comb,
            &self.b_comb,
            &self.w_hh,
            &self.w_gh,
            &self.b_h,
            &self.w_action,
            &self.b_action,
            &self.w_locout,
            &self.b_locout,
            &self.w_base,
            &self.b_base,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![
            &mut self.w_img,
            &mut self.b_img,
            &mut self.w_loc,
            &mut self.b_loc,
            &mut self.w_comb,
            &mut self.b_comb,
            &mut self.w_hh,
            &mut self.w_gh,
            &mut self.b_h,
            &mut self.w_action,
            &mut self.b_action,
            &mut self.w_locout,
            &mut self.b_locout,
            &mut self.w_base,
            &mut self.b_base,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grads();
        }
    }

    /// Scale every gradient, e.g. by `1 / batch_size` before a step.
    pub fn scale_grads(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for g in t.grads.iter_mut() {
                *g *= factor;
            }
        }
    }

    /// Add another instance's gradients into this one (fixed tensor order,
    /// so reductions are deterministic).
    pub fn add_grads_from(&mut self, other: &RamParams) {
        let src: Vec<&ParamTensor> = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.grads.iter_mut().zip(&src.grads) {
                *d += s;
            }
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        save_checkpoint(path, &self.tensors())
    }

    pub fn load(&mut self, path: &std::path::Path) -> Result<()> {
        let mut tensors = self.tensors_mut();
        load_checkpoint(path, &mut tensors)
    }
}

/// Forward activations of the glimpse network kept for its backward pass.
#[derive(Debug, Clone)]
pub struct GlimpseCache {
    obs_flat: Vec<f64>,
    loc_in: [f64; 2],
    img_pre: Vec<f64>,
    loc_pre: Vec<f64>,
    comb_in: Vec<f64>,
    comb_pre: Vec<f64>,
}

/// Fuse one observation with its location:
/// `g = ReLU(W_comb [ReLU(W_img flat) ++ ReLU(W_loc [x,y])] + b_comb)`.
pub fn glimpse_network(
    params: &RamParams,
    obs: &RetinaObservation,
    loc: Location,
) -> Result<(Vec<f64>, GlimpseCache)> {
    if obs.flat.len() != params.sensor_size {
        return Err(RamError::Dimension(format!(
            "observation has {} values, model expects {}",
            obs.flat.len(),
            params.sensor_size
        )));
    }
    let loc_in = [loc.x, loc.y];
    let img_pre = affine_forward(&params.w_img, &params.b_img, &obs.flat)?;
    let loc_pre = affine_forward(&params.w_loc, &params.b_loc, &loc_in)?;
    let mut comb_in = relu_forward(&img_pre);
    comb_in.extend(relu_forward(&loc_pre));
    let comb_pre = affine_forward(&params.w_comb, &params.b_comb, &comb_in)?;
    let g = relu_forward(&comb_pre);
    Ok((
        g,
        GlimpseCache {
            obs_flat: obs.flat.clone(),
            loc_in,
            img_pre,
            loc_pre,
            comb_in,
            comb_pre,
        },
    ))
}

/// Backward through the glimpse network. Gradients w.r.t. the observation
/// and the location input are discarded: the crop is not differentiable and
/// the sampled location enters as a constant.
fn glimpse_network_backward(params: &mut RamParams, cache: &GlimpseCache, dg: &[f64]) {
    let dcomb_pre = relu_backward(&cache.comb_pre, dg);
    let dcomb_in = affine_backward(
        &mut params.w_comb,
        &mut params.b_comb,
        &cache.comb_in,
        &dcomb_pre,
    );
    let split = params.dims.glimpse_hidden;
    let dimg = relu_backward(&cache.img_pre, &dcomb_in[..split]);
    let dloc = relu_backward(&cache.loc_pre, &dcomb_in[split..]);
    affine_backward(&mut params.w_img, &mut params.b_img, &cache.obs_flat, &dimg);
    affine_backward(&mut params.w_loc, &mut params.b_loc, &cache.loc_in, &dloc);
}

/// Log-density of a scalar Gaussian, `log N(x; mean, std^2)`.
pub fn gaussian_logprob(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * (2.0 * std::f64::consts::PI).ln() - std.ln() - 0.5 * z * z
}

/// Score of the Gaussian log-density w.r.t. its mean: `(x - mean) / std^2`.
pub fn gaussian_score_mean(x: f64, mean: f64, std: f64) -> f64 {
    (x - mean) / (std * std)
}

/// One draw from the location policy.
#[derive(Debug, Clone, Copy)]
pub struct PolicySample {
    pub mean: Location,
    /// Clamped into [-1,1]^2; this is what the sensor sees next.
    pub sampled: Location,
    /// Pre-clamp sample; the log-density is evaluated here.
    pub raw: [f64; 2],
    pub logprob: f64,
}

/// Sample the next fixation: `mean = tanh(W_l h + b_l)`, then per-axis
/// Gaussian noise of the given std, clamped onto the canvas.
pub fn location_policy<R: Rng>(
    params: &RamParams,
    h: &[f64],
    std: f64,
    rng: &mut R,
) -> Result<PolicySample> {
    if std <= 0.0 {
        return Err(RamError::Config(format!(
            "location policy std must be > 0, got {std}"
        )));
    }
    let pre = affine_forward(&params.w_locout, &params.b_locout, h)?;
    let mean = tanh_forward(&pre);
    let ex: f64 = rng.sample(StandardNormal);
    let ey: f64 = rng.sample(StandardNormal);
    let raw = [mean[0] + std * ex, mean[1] + std * ey];
    let logprob =
        gaussian_logprob(raw[0], mean[0], std) + gaussian_logprob(raw[1], mean[1], std);
    Ok(PolicySample {
        mean: Location::new(mean[0], mean[1]),
        sampled: Location::new(raw[0], raw[1]),
        raw,
        logprob,
    })
}

/// Complete record of one episode.
///
/// Per-step vectors all have length `num_glimpses` and are aligned by the
/// step that *produced* the entry: `means[t]`, `raw_samples[t]` and
/// `logprobs[t]` describe the policy output computed from `h_t`, which is
/// sensed as `locations[t+1]`. The final step produces no sample, so its
/// `raw_samples` entry is the mean itself and its log-probability is zero;
/// the same convention applies to every step when running deterministically
/// (`loc_std == 0`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeTrace {
    pub locations: Vec<Location>,
    pub means: Vec<Location>,
    pub logprobs: Vec<f64>,
    pub raw_samples: Vec<[f64; 2]>,
    pub baselines: Vec<f64>,
    pub logits: Vec<f64>,
    pub reward: f64,
    pub loc_std: f64,
}

impl EpisodeTrace {
    /// Compact JSON for glimpse-path inspection: locations and reward.
    pub fn debug_json(&self) -> String {
        #[derive(Serialize)]
        struct Dump<'a> {
            locations: &'a [Location],
            reward: f64,
        }
        serde_json::to_string(&Dump {
            locations: &self.locations,
            reward: self.reward,
        })
        .expect("trace serialization")
    }
}

/// Everything the backward pass needs from a forward run.
pub struct EpisodeCache {
    /// `hiddens[0]` is the zero initial state; `hiddens[t+1] = h_t`.
    hiddens: Vec<Vec<f64>>,
    core_pre: Vec<Vec<f64>>,
    glimpse: Vec<GlimpseCache>,
    glimpse_out: Vec<Vec<f64>>,
    /// tanh outputs of the location head, per step.
    mean_raw: Vec<[f64; 2]>,
}

impl EpisodeCache {
    /// Hidden state after step `t` (0-based).
    pub fn hidden(&self, t: usize) -> &[f64] {
        &self.hiddens[t + 1]
    }
}

enum FixationSource<'a, R: Rng> {
    /// Draw the initial location uniformly, then follow the policy with the
    /// given exploration std (0 = deterministic fixations at the mean).
    Sample { std: f64, rng: &'a mut R },
    /// Re-run a recorded episode: locations and pre-clamp samples are fixed.
    Replay {
        locations: &'a [Location],
        raw: &'a [[f64; 2]],
        std: f64,
    },
}

fn episode_impl<R: Rng>(
    image: &ImageSample,
    params: &RamParams,
    cfg: &GlimpseConfig,
    mut source: FixationSource<R>,
) -> Result<(EpisodeTrace, EpisodeCache)> {
    let steps = cfg.num_glimpses;
    let std = match &source {
        FixationSource::Sample { std, .. } => {
            if *std < 0.0 {
                return Err(RamError::Config(format!("negative location std {std}")));
            }
            *std
        }
        FixationSource::Replay {
            locations, raw, std, ..
        } => {
            if locations.len() != steps || raw.len() != steps {
                return Err(RamError::Dimension(format!(
                    "replay provides {} locations for {steps} glimpses",
                    locations.len()
                )));
            }
            *std
        }
    };

    let mut loc = match &mut source {
        FixationSource::Sample { rng, .. } => {
            Location::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        }
        FixationSource::Replay { locations, .. } => locations[0],
    };

    let mut trace = EpisodeTrace {
        locations: Vec::with_capacity(steps),
        means: Vec::with_capacity(steps),
        logprobs: Vec::with_capacity(steps),
        raw_samples: Vec::with_capacity(steps),
        baselines: Vec::with_capacity(steps),
        logits: Vec::new(),
        reward: 0.0,
        loc_std: std,
    };
    let mut cache = EpisodeCache {
        hiddens: vec![vec![0.0; params.dims.core_hidden]],
        core_pre: Vec::with_capacity(steps),
        glimpse: Vec::with_capacity(steps),
        glimpse_out: Vec::with_capacity(steps),
        mean_raw: Vec::with_capacity(steps),
    };

    for t in 0..steps {
        trace.locations.push(loc);
        let obs = retina(&image.pixels, image.width, image.height, loc, cfg);
        let (g, gcache) = glimpse_network(params, &obs, loc)?;
        let h_prev = cache.hiddens.last().expect("initial state");
        let (h, pre) = rnn_cell_forward(&params.w_hh, &params.w_gh, &params.b_h, h_prev, &g)?;

        let baseline = affine_forward(&params.w_base, &params.b_base, &h)?[0];
        let mean_pre = affine_forward(&params.w_locout, &params.b_locout, &h)?;
        let mean = tanh_forward(&mean_pre);

        let last_step = t + 1 == steps;
        let (raw, logprob, next) = if last_step || std == 0.0 {
            ([mean[0], mean[1]], 0.0, Location::new(mean[0], mean[1]))
        } else {
            match &mut source {
                FixationSource::Sample { rng, .. } => {
                    let ex: f64 = rng.sample(StandardNormal);
                    let ey: f64 = rng.sample(StandardNormal);
                    let raw = [mean[0] + std * ex, mean[1] + std * ey];
                    let lp = gaussian_logprob(raw[0], mean[0], std)
                        + gaussian_logprob(raw[1], mean[1], std);
                    (raw, lp, Location::new(raw[0], raw[1]))
                }
                FixationSource::Replay { locations, raw, .. } => {
                    let r = raw[t];
                    let lp = gaussian_logprob(r[0], mean[0], std)
                        + gaussian_logprob(r[1], mean[1], std);
                    (r, lp, locations[t + 1])
                }
            }
        };

        trace.means.push(Location::new(mean[0], mean[1]));
        trace.raw_samples.push(raw);
        trace.logprobs.push(logprob);
        trace.baselines.push(baseline);
        cache.glimpse.push(gcache);
        cache.glimpse_out.push(g);
        cache.core_pre.push(pre);
        cache.mean_raw.push([mean[0], mean[1]]);
        cache.hiddens.push(h);

        if !last_step {
            loc = next;
        }
    }

    let h_final = cache.hiddens.last().expect("final state");
    trace.logits = affine_forward(&params.w_action, &params.b_action, h_final)?;
    trace.reward = if argmax(&trace.logits) == image.label as usize {
        1.0
    } else {
        0.0
    };
    Ok((trace, cache))
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Run one episode, sampling fixations. `std == 0` runs deterministically at
/// the policy mean (evaluation mode); the initial location is always drawn
/// uniformly from the rng.
pub fn forward_episode<R: Rng>(
    image: &ImageSample,
    params: &RamParams,
    cfg: &GlimpseConfig,
    std: f64,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    Ok(episode_impl(image, params, cfg, FixationSource::Sample { std, rng })?.0)
}

/// Like [`forward_episode`] but also returns the activation cache for an
/// immediate backward pass.
pub fn forward_episode_cached<R: Rng>(
    image: &ImageSample,
    params: &RamParams,
    cfg: &GlimpseConfig,
    std: f64,
    rng: &mut R,
) -> Result<(EpisodeTrace, EpisodeCache)> {
    episode_impl(image, params, cfg, FixationSource::Sample { std, rng })
}

/// Deterministically re-run a recorded episode (same fixations, same
/// pre-clamp samples) against possibly different parameter values.
pub fn replay_episode(
    image: &ImageSample,
    params: &RamParams,
    cfg: &GlimpseConfig,
    trace: &EpisodeTrace,
) -> Result<(EpisodeTrace, EpisodeCache)> {
    episode_impl(
        image,
        params,
        cfg,
        FixationSource::Replay::<rand_chacha::ChaCha8Rng> {
            locations: &trace.locations,
            raw: &trace.raw_samples,
            std: trace.loc_std,
        },
    )
}

/// Loss breakdown for one episode. The objective is
/// `CE(logits, label) + sum_t -(R - b_t) * logprob_t + sum_t (b_t - R)^2`
/// with the advantage `(R - b_t)` held constant in the policy term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents {
    pub total: f64,
    pub ce: f64,
    pub policy: f64,
    pub baseline: f64,
    pub reward: f64,
}

/// Backward pass over a completed episode. Accumulates into `params.grads`
/// (nothing is cleared here, so episodes sum naturally over a batch).
///
/// Gradient routing: the cross-entropy term backpropagates through the core
/// and glimpse network. The policy and baseline terms train only their own
/// heads; their gradients into `h_t` are dropped. Letting the score-function
/// term flow into the core drowns the classification signal in estimator
/// noise (its scale goes as 1/std^2), so the core learns from the
/// cross-entropy path alone.
pub fn episode_backward(
    params: &mut RamParams,
    image: &ImageSample,
    trace: &EpisodeTrace,
    cache: &EpisodeCache,
) -> Result<LossComponents> {
    let steps = trace.locations.len();
    let label = image.label as usize;
    let (ce, probs) = softmax_ce(&trace.logits, label)?;
    let reward = trace.reward;
    let std = trace.loc_std;

    let mut policy_loss = 0.0;
    let mut baseline_loss = 0.0;
    for t in 0..steps {
        let adv = reward - trace.baselines[t];
        policy_loss += -adv * trace.logprobs[t];
        let berr = trace.baselines[t] - reward;
        baseline_loss += berr * berr;
    }

    // classification head into the final hidden state
    let dlogits = softmax_ce_grad(&probs, label);
    let h_final = cache.hiddens[steps].clone();
    let mut dh = affine_backward(&mut params.w_action, &mut params.b_action, &h_final, &dlogits);

    for t in (0..steps).rev() {
        let h_t = cache.hiddens[t + 1].clone();

        // policy head: only steps that actually sampled a location;
        // contribution into h_t dropped
        if t + 1 < steps && std > 0.0 {
            let adv = reward - trace.baselines[t];
            let mean = &cache.mean_raw[t];
            let raw = &trace.raw_samples[t];
            let dmean = [
                -adv * gaussian_score_mean(raw[0], mean[0], std),
                -adv * gaussian_score_mean(raw[1], mean[1], std),
            ];
            let dmean_pre = tanh_backward(mean, &dmean);
            let _ = affine_backward(&mut params.w_locout, &mut params.b_locout, &h_t, &dmean_pre);
        }

        // baseline head: 2 (b_t - R); contribution into h_t dropped
        let dbase = [2.0 * (trace.baselines[t] - reward)];
        let _ = affine_backward(&mut params.w_base, &mut params.b_base, &h_t, &dbase);

        // recurrent core and glimpse network
        let (dh_prev, dg) = rnn_cell_backward(
            &mut params.w_hh,
            &mut params.w_gh,
            &mut params.b_h,
            &cache.hiddens[t].clone(),
            &cache.glimpse_out[t].clone(),
            &cache.core_pre[t].clone(),
            &dh,
        );
        glimpse_network_backward(params, &cache.glimpse[t], &dg);
        dh = dh_prev;
    }

    Ok(LossComponents {
        total: ce + policy_loss + baseline_loss,
        ce,
        policy: policy_loss,
        baseline: baseline_loss,
        reward,
    })
}
