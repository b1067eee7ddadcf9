//! Feed-forward networks over flat parameter vectors.
//!
//! Layout: for each layer, the weight matrix (`out × in`, row-major) followed
//! by the bias vector. Hidden layers use tanh, the output layer is linear.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        NetworkSpec {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
        }
    }

    /// `(in, out)` of every layer in order.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|&(i, o)| o * i + o).sum()
    }

    /// Layer holding parameter `k` of the flat layout.
    pub fn layer_of_param(&self, k: usize) -> Option<usize> {
        let mut end = 0;
        self.layers().iter().position(|&(i, o)| {
            end += o * i + o;
            k < end
        })
    }
}

/// Activations saved by a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input followed by every hidden activation.
    inputs: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: NetworkSpec,
    params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(spec: NetworkSpec) -> Self {
        let n = spec.param_count();
        Mlp {
            spec,
            params: vec![0.0; n],
        }
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::InvalidConfig(format!(
                "{} parameters for a layout of {}",
                params.len(),
                spec.param_count()
            )));
        }
        Ok(Mlp { spec, params })
    }

    /// Uniform fan-in initialization; the output layer is scaled by `output_scale`.
    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, output_scale: f64, rng: &mut R) -> Self {
        let mut net = Mlp::zeros(spec);
        let layers = net.spec.layers();
        let last = layers.len() - 1;
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() * if l == last { output_scale } else { 1.0 };
            for w in &mut net.params[offset..offset + fan_in * fan_out] {
                *w = rng.random_range(-bound..=bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_views(&self) -> Vec<(ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        let mut out = Vec::new();
        let mut rest: &[f64] = &self.params;
        for (i, o) in self.spec.layers() {
            let (w, r) = rest.split_at(i * o);
            let (b, r) = r.split_at(o);
            rest = r;
            out.push((
                ArrayView2::from_shape((o, i), w).expect("layout"),
                ArrayView1::from(b),
            ));
        }
        out
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.spec.input_dim {
            return Err(Error::InvalidConfig(format!(
                "network input has dimension {}, expected {}",
                input.len(),
                self.spec.input_dim
            )));
        }
        if let Some(bad) = input.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("network input contains {bad}")));
        }
        let layers = self.layer_views();
        let last = layers.len() - 1;
        let mut x = input.to_vec();
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut y = b.to_vec();
            for (r, yr) in y.iter_mut().enumerate() {
                let row = w.row(r);
                let mut acc = 0.0;
                for (wi, xi) in row.iter().zip(&x) {
                    acc += wi * xi;
                }
                *yr += acc;
                if l != last {
                    *yr = yr.tanh();
                }
            }
            x = y;
        }
        Ok(x)
    }

    /// Batched forward pass; rows of `input` are samples.
    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> ForwardCache {
        let mut inputs = Vec::with_capacity(self.spec.hidden.len() + 1);
        let output = self.run_layers(input.to_owned(), 0, Some(&mut inputs));
        ForwardCache { inputs, output }
    }

    /// Batched forward pass resuming at `layer` from the activations in
    /// `cache`. Matches [`Mlp::forward_batch`] when only parameters of
    /// layers `layer..` changed since the cache was built.
    pub fn forward_batch_from(&self, cache: &ForwardCache, layer: usize) -> Array2<f64> {
        self.run_layers(cache.inputs[layer].clone(), layer, None)
    }

    fn run_layers(&self, mut x: Array2<f64>, first: usize, mut keep: Option<&mut Vec<Array2<f64>>>) -> Array2<f64> {
        let layers = self.layer_views();
        let last = layers.len() - 1;
        for (l, (w, b)) in layers.iter().enumerate().skip(first) {
            let mut y = Array2::zeros((x.nrows(), w.nrows()));
            y += b;
            general_mat_mul(1.0, &x, &w.t(), 1.0, &mut y);
            if l != last {
                y.mapv_inplace(f64::tanh);
            }
            match keep.as_deref_mut() {
                Some(inputs) => inputs.push(std::mem::replace(&mut x, y)),
                None => x = y,
            }
        }
        x
    }

    /// Backpropagates `d_output` (one row per sample) and returns the
    /// gradient summed over the batch, in parameter layout order.
    pub fn backward(&self, cache: &ForwardCache, d_output: ArrayView2<'_, f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(cache, d_output, &mut grad);
        grad
    }

    pub fn backward_into(&self, cache: &ForwardCache, d_output: ArrayView2<'_, f64>, grad: &mut [f64]) {
        let layers = self.layer_views();
        let dims = self.spec.layers();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &(i, o) in &dims {
            offsets.push(off);
            off += i * o + o;
        }
        let mut delta = d_output.to_owned();
        for l in (0..layers.len()).rev() {
            let (i, o) = dims[l];
            let x = &cache.inputs[l];
            let (gw, rest) = grad[offsets[l]..].split_at_mut(i * o);
            let mut gw = ArrayViewMut2::from_shape((o, i), gw).expect("layout");
            general_mat_mul(1.0, &delta.t(), x, 1.0, &mut gw);
            let mut gb = ArrayViewMut1::from(&mut rest[..o]);
            gb += &delta.sum_axis(Axis(0));
            if l > 0 {
                let (w, _) = &layers[l];
                let mut prev = Array2::zeros((delta.nrows(), i));
                general_mat_mul(1.0, &delta, w, 0.0, &mut prev);
                // x is tanh output of the previous layer
                prev.zip_mut_with(x, |d, &h| *d *= 1.0 - h * h);
                delta = prev;
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Log-softmax, stable for large logits.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
