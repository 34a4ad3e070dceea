use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Architecture of a multilayer perceptron: affine layers with tanh on
/// every hidden layer and a linear output layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        assert!(input_dim >= 1 && output_dim >= 1 && hidden.iter().all(|&h| h >= 1));
        MlpSpec {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
        }
    }

    /// (in, out) dimensions per layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }

    /// Flat layout: per layer, row-major weights `[out][in]` then biases.
    pub fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut offsets = Vec::new();
        let mut at = 0;
        for (i, o) in self.layer_dims() {
            let w = at;
            let b = at + i * o;
            offsets.push((w, b));
            at = b + o;
        }
        offsets
    }
}

/// Flat parameter (or gradient) storage for one MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn fill(&mut self, v: f64) {
        self.0.iter_mut().for_each(|x| *x = v);
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// self += alpha * other
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.iter_mut().for_each(|x| *x *= alpha);
    }
}

/// Xavier-uniform weights, zero biases, deterministic in `seed`.
pub fn init_params(spec: &MlpSpec, seed: u64) -> ParamVector {
    let mut params = ParamVector::zeros(spec.param_count());
    let mut r = rng::rng(seed, "mlp-init", spec.input_dim as u64, spec.output_dim as u64);
    let offsets = spec.layer_offsets();
    for ((in_dim, out_dim), (w_off, _)) in spec.layer_dims().into_iter().zip(offsets) {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        for w in &mut params.0[w_off..w_off + in_dim * out_dim] {
            *w = r.random_range(-limit..limit);
        }
    }
    params
}

/// Activations recorded during a forward pass: `a[0]` is the input,
/// `a[k+1]` the output of layer k (tanh on hidden layers, affine on the
/// last).
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<Vec<f64>>,
}

fn affine(weights: &[f64], biases: &[f64], input: &[f64], out: &mut [f64]) {
    let in_dim = input.len();
    for (o, out_v) in out.iter_mut().enumerate() {
        let row = &weights[o * in_dim..(o + 1) * in_dim];
        let mut acc = biases[o];
        for (w, x) in row.iter().zip(input) {
            acc += w * x;
        }
        *out_v = acc;
    }
}

fn check_dims(spec: &MlpSpec, params: &ParamVector, input: &[f64]) -> Result<()> {
    if input.len() != spec.input_dim {
        return Err(Error::contract(format!(
            "mlp input length {} != input_dim {}",
            input.len(),
            spec.input_dim
        )));
    }
    if params.len() != spec.param_count() {
        return Err(Error::contract(format!(
            "parameter vector length {} != spec count {}",
            params.len(),
            spec.param_count()
        )));
    }
    Ok(())
}

/// Forward pass: affine-tanh composition with a linear output layer.
pub fn mlp_forward(spec: &MlpSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    check_dims(spec, params, input)?;
    Ok(forward_internal(spec, params, input, None))
}

/// Forward pass that records activations for [`mlp_backward`].
pub fn mlp_forward_cached(
    spec: &MlpSpec,
    params: &ParamVector,
    input: &[f64],
) -> Result<(Vec<f64>, ForwardCache)> {
    check_dims(spec, params, input)?;
    let mut cache = ForwardCache {
        activations: Vec::with_capacity(spec.hidden.len() + 2),
    };
    let out = forward_internal(spec, params, input, Some(&mut cache));
    Ok((out, cache))
}

fn forward_internal(
    spec: &MlpSpec,
    params: &ParamVector,
    input: &[f64],
    mut cache: Option<&mut ForwardCache>,
) -> Vec<f64> {
    let dims = spec.layer_dims();
    let offsets = spec.layer_offsets();
    let n_layers = dims.len();
    let mut a = input.to_vec();
    if let Some(c) = cache.as_deref_mut() {
        c.activations.push(a.clone());
    }
    for (k, ((in_dim, out_dim), (w_off, b_off))) in dims.into_iter().zip(offsets).enumerate() {
        let mut z = vec![0.0; out_dim];
        affine(
            &params.0[w_off..w_off + in_dim * out_dim],
            &params.0[b_off..b_off + out_dim],
            &a,
            &mut z,
        );
        if k + 1 < n_layers {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
        a = z;
        if let Some(c) = cache.as_deref_mut() {
            c.activations.push(a.clone());
        }
    }
    a
}

/// Reverse-mode gradient of a scalar loss. `grad_output` is dLoss/d(output);
/// parameter gradients are accumulated into `grad` (callers zero or reuse
/// it across a batch) and dLoss/d(input) is returned.
pub fn mlp_backward(
    spec: &MlpSpec,
    params: &ParamVector,
    cache: &ForwardCache,
    grad_output: &[f64],
    grad: &mut ParamVector,
) -> Vec<f64> {
    let dims = spec.layer_dims();
    let offsets = spec.layer_offsets();
    let n_layers = dims.len();
    debug_assert_eq!(grad.len(), spec.param_count());
    debug_assert_eq!(cache.activations.len(), n_layers + 1);
    debug_assert_eq!(grad_output.len(), spec.output_dim);

    let mut g = grad_output.to_vec();
    for k in (0..n_layers).rev() {
        let (in_dim, _) = dims[k];
        let (w_off, b_off) = offsets[k];
        let a_in = &cache.activations[k];
        // Hidden layers carry tanh; the output of layer k is activations[k+1].
        let delta: Vec<f64> = if k + 1 < n_layers {
            let a_out = &cache.activations[k + 1];
            g.iter()
                .zip(a_out)
                .map(|(gi, ai)| gi * (1.0 - ai * ai))
                .collect()
        } else {
            g
        };
        for (o, d) in delta.iter().enumerate() {
            let row = &mut grad.0[w_off + o * in_dim..w_off + (o + 1) * in_dim];
            for (slot, x) in row.iter_mut().zip(a_in) {
                *slot += d * x;
            }
            grad.0[b_off + o] += d;
        }
        let mut g_in = vec![0.0; in_dim];
        for (o, d) in delta.iter().enumerate() {
            let row = &params.0[w_off + o * in_dim..w_off + (o + 1) * in_dim];
            for (gi, w) in g_in.iter_mut().zip(row) {
                *gi += w * d;
            }
        }
        g = g_in;
    }
    g
}
