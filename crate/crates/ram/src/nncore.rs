//! Minimal differentiable building blocks with explicit forward/backward
//! passes: affine layers, ReLU/tanh, an Elman-style recurrent cell and
//! softmax cross-entropy. Everything is 64-bit so central finite differences
//! stay trustworthy.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{RamError, Result};

/// A named parameter array with a same-shape gradient buffer.
///
/// Matrices are row-major with shape `[out, in]`; vectors have shape `[n]`.
/// Gradients accumulate across an episode/batch and are cleared by the
/// optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
}

impl ParamTensor {
    pub fn matrix(name: &str, out_dim: usize, in_dim: usize) -> Self {
        ParamTensor {
            name: name.to_string(),
            shape: vec![out_dim, in_dim],
            values: vec![0.0; out_dim * in_dim],
            grads: vec![0.0; out_dim * in_dim],
        }
    }

    pub fn vector(name: &str, n: usize) -> Self {
        ParamTensor {
            name: name.to_string(),
            shape: vec![n],
            values: vec![0.0; n],
            grads: vec![0.0; n],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.shape[0]
    }

    pub fn in_dim(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill(0.0);
    }

    /// Uniform init in `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
    /// Vectors (biases) are left at zero.
    pub fn init_xavier<R: Rng>(&mut self, rng: &mut R) {
        if self.shape.len() < 2 {
            return;
        }
        let a = (6.0 / (self.shape[0] + self.shape[1]) as f64).sqrt();
        for v in self.values.iter_mut() {
            *v = rng.gen_range(-a..a);
        }
    }
}

fn check_affine_shapes(w: &ParamTensor, b: &ParamTensor, x_len: usize) -> Result<()> {
    if w.shape.len() != 2 || w.in_dim() != x_len || b.len() != w.out_dim() {
        return Err(RamError::Dimension(format!(
            "affine {}: W {:?} with x of {} and b of {}",
            w.name,
            w.shape,
            x_len,
            b.len()
        )));
    }
    Ok(())
}

/// `y = Wx + b`.
pub fn affine_forward(w: &ParamTensor, b: &ParamTensor, x: &[f64]) -> Result<Vec<f64>> {
    check_affine_shapes(w, b, x.len())?;
    let (out, inp) = (w.out_dim(), w.in_dim());
    let mut y = Vec::with_capacity(out);
    for i in 0..out {
        let row = &w.values[i * inp..(i + 1) * inp];
        let mut acc = b.values[i];
        for (wj, xj) in row.iter().zip(x) {
            acc += wj * xj;
        }
        y.push(acc);
    }
    Ok(y)
}

/// Backward for `y = Wx + b`: accumulates `dW += dy ⊗ x`, `db += dy` and
/// returns `dx = Wᵀ dy`.
pub fn affine_backward(w: &mut ParamTensor, b: &mut ParamTensor, x: &[f64], dy: &[f64]) -> Vec<f64> {
    let (out, inp) = (w.out_dim(), w.in_dim());
    debug_assert_eq!(x.len(), inp);
    debug_assert_eq!(dy.len(), out);
    let mut dx = vec![0.0; inp];
    for i in 0..out {
        let g = dy[i];
        b.grads[i] += g;
        let row = &w.values[i * inp..(i + 1) * inp];
        let grow = &mut w.grads[i * inp..(i + 1) * inp];
        for j in 0..inp {
            grow[j] += g * x[j];
            dx[j] += g * row[j];
        }
    }
    dx
}

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// ReLU backward given the pre-activation input.
pub fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(dy)
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect()
}

pub fn tanh_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.tanh()).collect()
}

/// tanh backward given the forward output `y = tanh(x)`.
pub fn tanh_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(&t, &g)| g * (1.0 - t * t)).collect()
}

/// One Elman step `h = ReLU(W_h h_prev + W_g g + b)`. Returns the new hidden
/// state and the pre-activation needed by the backward pass.
pub fn rnn_cell_forward(
    w_h: &ParamTensor,
    w_g: &ParamTensor,
    b: &ParamTensor,
    h_prev: &[f64],
    g: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_affine_shapes(w_h, b, h_prev.len())?;
    check_affine_shapes(w_g, b, g.len())?;
    let mut pre = affine_forward(w_h, b, h_prev)?;
    let hidden = w_g.out_dim();
    let inp = w_g.in_dim();
    for i in 0..hidden {
        let row = &w_g.values[i * inp..(i + 1) * inp];
        let mut acc = 0.0;
        for (wj, gj) in row.iter().zip(g) {
            acc += wj * gj;
        }
        pre[i] += acc;
    }
    let h = relu_forward(&pre);
    Ok((h, pre))
}

/// Backward for one Elman step; accumulates into all three parameter
/// gradients and returns `(dh_prev, dg)`.
pub fn rnn_cell_backward(
    w_h: &mut ParamTensor,
    w_g: &mut ParamTensor,
    b: &mut ParamTensor,
    h_prev: &[f64],
    g: &[f64],
    pre: &[f64],
    dh: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let dpre = relu_backward(pre, dh);
    let dh_prev = affine_backward(w_h, b, h_prev, &dpre);
    // W_g shares the bias; accumulate its half without touching b again
    let (hidden, inp) = (w_g.out_dim(), w_g.in_dim());
    let mut dg = vec![0.0; inp];
    for i in 0..hidden {
        let gi = dpre[i];
        let row = &w_g.values[i * inp..(i + 1) * inp];
        let grow = &mut w_g.grads[i * inp..(i + 1) * inp];
        for j in 0..inp {
            grow[j] += gi * g[j];
            dg[j] += gi * row[j];
        }
    }
    (dh_prev, dg)
}

/// Numerically stable softmax cross-entropy. Returns `(loss, probs)` with
/// `loss = -log probs[label]`; the gradient w.r.t. the logits is
/// `probs - onehot(label)`.
pub fn softmax_ce(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(RamError::Config(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    let loss = -(probs[label].max(f64::MIN_POSITIVE)).ln();
    Ok((loss, probs))
}

pub fn softmax_ce_grad(probs: &[f64], label: usize) -> Vec<f64> {
    let mut g = probs.to_vec();
    g[label] -= 1.0;
    g
}

#[derive(Serialize, Deserialize)]
struct CheckpointTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Save tensors as a JSON map of name -> shape + values. serde_json emits
/// shortest round-trip float literals, so reloading is bit-exact.
pub fn save_checkpoint(path: &Path, tensors: &[&ParamTensor]) -> Result<()> {
    let map: BTreeMap<&str, CheckpointTensor> = tensors
        .iter()
        .map(|t| {
            (
                t.name.as_str(),
                CheckpointTensor {
                    shape: t.shape.clone(),
                    values: t.values.clone(),
                },
            )
        })
        .collect();
    let json = serde_json::to_string(&map).map_err(|e| RamError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    std::fs::write(path, json).map_err(|e| RamError::io(path, e))
}

/// Load checkpoint values into the given tensors, by name, verifying shapes.
pub fn load_checkpoint(path: &Path, tensors: &mut [&mut ParamTensor]) -> Result<()> {
    let json = std::fs::read_to_string(path).map_err(|e| RamError::io(path, e))?;
    let mut map: BTreeMap<String, CheckpointTensor> =
        serde_json::from_str(&json).map_err(|e| RamError::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
    for t in tensors.iter_mut() {
        let entry = map.remove(&t.name).ok_or_else(|| {
            RamError::Consistency(format!("checkpoint missing tensor {}", t.name))
        })?;
        if entry.shape != t.shape {
            return Err(RamError::Dimension(format!(
                "checkpoint tensor {} has shape {:?}, expected {:?}",
                t.name, entry.shape, t.shape
            )));
        }
        t.values = entry.values;
        t.zero_grads();
    }
    if let Some(extra) = map.keys().next() {
        return Err(RamError::Consistency(format!(
            "checkpoint has unexpected tensor {extra}"
        )));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite-difference oracle used by the unit tests. Kept
    //! independent of every backward pass it checks.

    pub const EPS: f64 = 1e-5;

    pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
        let denom = analytic.abs().max(numeric.abs());
        if denom < 1e-10 {
            (analytic - numeric).abs()
        } else {
            (analytic - numeric).abs() / denom
        }
    }

    /// Central difference of `f` w.r.t. every entry of a value buffer the
    /// closure can mutate through the index argument.
    pub fn numeric_grad(n: usize, mut eval_at: impl FnMut(usize, f64) -> f64) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let plus = eval_at(i, EPS);
                let minus = eval_at(i, -EPS);
                (plus - minus) / (2.0 * EPS)
            })
            .collect()
    }
}
