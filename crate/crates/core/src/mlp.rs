//! Feed-forward networks with hand-derived backward passes.
//!
//! Every hidden layer applies `tanh`; the last layer applies an [`OutputActivation`].
//! Weights are stored `fan_in × fan_out` so a batch forward is `Z = X·W + b`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};
use crate::matrix::Matrix;
use crate::rng::DetRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OutputActivation {
    Identity,
    Sigmoid,
    Softmax,
}

impl OutputActivation {
    pub fn name(self) -> &'static str {
        match self {
            OutputActivation::Identity => "identity",
            OutputActivation::Sigmoid => "sigmoid",
            OutputActivation::Softmax => "softmax",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Self::Identity),
            "sigmoid" => Some(Self::Sigmoid),
            "softmax" => Some(Self::Softmax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascent,
    Descent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in × fan_out`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    output: OutputActivation,
}

/// Outputs of every layer; index 0 is the input batch.
#[derive(Debug, Clone)]
pub struct Activations(Vec<Matrix>);

impl Activations {
    pub fn output(&self) -> &Matrix {
        self.0.last().expect("activations always hold the input")
    }

    pub fn input(&self) -> &Matrix {
        &self.0[0]
    }

    pub fn layer(&self, i: usize) -> &Matrix {
        &self.0[i]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_output(mut self) -> Matrix {
        self.0.pop().expect("activations always hold the input")
    }
}

/// Gradients mirroring an [`Mlp`] layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense {
                    weights: Matrix::zeros(l.fan_in(), l.fan_out()),
                    bias: vec![0.0; l.fan_out()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        self.add_scaled(other, 1.0)
    }

    pub fn add_scaled(&mut self, other: &Gradients, k: f64) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            bail!(
                Dimension,
                "gradient sets with {} and {} layers",
                self.layers.len(),
                other.layers.len()
            );
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.add_scaled(&b.weights, k)?;
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += k * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights.scale(k);
            l.bias.iter_mut().for_each(|b| *b *= k);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.data().iter().chain(l.bias.iter()).copied())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|v| v == 0.0)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn softmax_rows(m: &mut Matrix) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

/// Xavier-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
pub fn xavier_init(layer_dims: &[usize], output: OutputActivation, seed: u64) -> Result<Mlp> {
    let mut rng = DetRng::new(seed);
    xavier_init_with(layer_dims, output, &mut rng)
}

pub fn xavier_init_with(
    layer_dims: &[usize],
    output: OutputActivation,
    rng: &mut DetRng,
) -> Result<Mlp> {
    if layer_dims.len() < 2 {
        bail!(
            Config,
            "need at least input and output dims, got {:?}",
            layer_dims
        );
    }
    if layer_dims.contains(&0) {
        bail!(Config, "layer dims must be >= 1, got {:?}", layer_dims);
    }
    let layers = layer_dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            Dense {
                weights: Matrix::from_fn(fan_in, fan_out, |_, _| rng.uniform_in(-limit, limit)),
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(Mlp { layers, output })
}

impl Mlp {
    /// Assembles a network from explicit layers, checking that dims chain.
    pub fn from_layers(layers: Vec<Dense>, output: OutputActivation) -> Result<Self> {
        if layers.is_empty() {
            bail!(Config, "network needs at least one layer");
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                bail!(Dimension, "layer {} bias length {} != fan_out {}", i, l.bias.len(), l.fan_out());
            }
            if !l.weights.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite { layer: i });
            }
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].fan_out() != w[1].fan_in() {
                bail!(
                    Dimension,
                    "layer {} outputs {} but layer {} expects {}",
                    i,
                    w[0].fan_out(),
                    i + 1,
                    w[1].fan_in()
                );
            }
        }
        Ok(Self { layers, output })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(Dense::fan_out));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.fan_in() * l.fan_out() + l.fan_out())
            .sum()
    }

    /// Flat parameter access in layer order, weights (row-major) before biases.
    pub fn param(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            let nw = l.weights.data().len();
            if idx < nw {
                return l.weights.data()[idx];
            }
            idx -= nw;
            if idx < l.bias.len() {
                return l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, v: f64) {
        for l in &mut self.layers {
            let nw = l.weights.data().len();
            if idx < nw {
                l.weights.data_mut()[idx] = v;
                return;
            }
            idx -= nw;
            if idx < l.bias.len() {
                l.bias[idx] = v;
                return;
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Runs the network on a batch and keeps every layer's output.
    pub fn forward(&self, input: &Matrix) -> Result<Activations> {
        if input.cols() != self.input_dim() {
            bail!(
                Dimension,
                "input has {} columns, network expects {}",
                input.cols(),
                self.input_dim()
            );
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.clone());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts[i].matmul(&layer.weights)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            if i < last {
                z.data_mut().iter_mut().for_each(|v| *v = libm::tanh(*v));
            } else {
                match self.output {
                    OutputActivation::Identity => {}
                    OutputActivation::Sigmoid => {
                        z.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v))
                    }
                    OutputActivation::Softmax => softmax_rows(&mut z),
                }
            }
            acts.push(z);
        }
        Ok(Activations(acts))
    }

    /// Convenience wrapper returning only the final output.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        Ok(self.forward(input)?.into_output())
    }

    /// Back-propagates `output_grad = ∂L/∂output` through the activations of a
    /// previous [`forward`](Self::forward) call.
    pub fn backward(&self, acts: &Activations, output_grad: &Matrix) -> Result<(Gradients, Matrix)> {
        if acts.len() != self.layers.len() + 1 {
            bail!(
                Dimension,
                "activations hold {} layers, network has {}",
                acts.len() - 1,
                self.layers.len()
            );
        }
        let out = acts.output();
        if !out.same_shape(output_grad) {
            bail!(
                Dimension,
                "output grad {}x{} vs output {}x{}",
                output_grad.rows(),
                output_grad.cols(),
                out.rows(),
                out.cols()
            );
        }

        // delta = ∂L/∂z for the last layer
        let mut delta = output_grad.clone();
        match self.output {
            OutputActivation::Identity => {}
            OutputActivation::Sigmoid => {
                for (d, y) in delta.data_mut().iter_mut().zip(out.data()) {
                    *d *= y * (1.0 - y);
                }
            }
            OutputActivation::Softmax => {
                for r in 0..delta.rows() {
                    let y = out.row(r);
                    let dot: f64 = delta.row(r).iter().zip(y).map(|(g, p)| g * p).sum();
                    for (d, p) in delta.row_mut(r).iter_mut().zip(y) {
                        *d = p * (*d - dot);
                    }
                }
            }
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let a_in = acts.layer(i);
            let gw = a_in.t_matmul(&delta)?;
            let gb = delta.column_sums();
            let mut g_in = delta.matmul_t(&layer.weights)?;
            grads.push(Dense {
                weights: gw,
                bias: gb,
            });
            if i > 0 {
                // a_in = tanh(z_{i-1})
                for (g, a) in g_in.data_mut().iter_mut().zip(a_in.data()) {
                    *g *= 1.0 - a * a;
                }
            }
            delta = g_in;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// `θ ← θ ± rate·grad`. Leaves the network untouched if any gradient entry is
    /// non-finite.
    pub fn apply_update(&mut self, grads: &Gradients, rate: f64, direction: Direction) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            bail!(
                Dimension,
                "gradient has {} layers, network has {}",
                grads.layers.len(),
                self.layers.len()
            );
        }
        for (i, (l, g)) in self.layers.iter().zip(&grads.layers).enumerate() {
            if !l.weights.same_shape(&g.weights) || l.bias.len() != g.bias.len() {
                bail!(Dimension, "gradient layer {} shape differs from network", i);
            }
            if !g.weights.is_finite() || g.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite { layer: i });
            }
        }
        let k = match direction {
            Direction::Ascent => rate,
            Direction::Descent => -rate,
        };
        for (i, (l, g)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            l.weights.add_scaled(&g.weights, k)?;
            for (b, gb) in l.bias.iter_mut().zip(&g.bias) {
                *b += k * gb;
            }
            if !l.weights.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite { layer: i });
            }
        }
        Ok(())
    }
}

/// Max over parameters of `|analytic − central| / max(1, |central|)` where
/// `central = (L(θ+h) − L(θ−h)) / 2h`.
pub fn finite_diff_check(
    mut loss_fn: impl FnMut(&Mlp) -> f64,
    net: &Mlp,
    analytic: &Gradients,
    h: f64,
) -> f64 {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (idx, a) in analytic.iter().enumerate() {
        let orig = net.param(idx);
        probe.set_param(idx, orig + h);
        let up = loss_fn(&probe);
        probe.set_param(idx, orig - h);
        let down = loss_fn(&probe);
        probe.set_param(idx, orig);
        let numeric = (up - down) / (2.0 * h);
        let err = (a - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}
