//! Dense networks with hand-written reverse mode, Adam and Polyak averaging.
//!
//! Only what the actor and the twin critics need: fully connected layers,
//! ReLU/tanh/linear activations, batched forward passes that can be cached
//! for a backward pass, and a JSON checkpoint format.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// Shape (inputs, outputs).
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }
}

/// Parameter store for a feed-forward network.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations retained by [`Mlp::forward_cached`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer l; the last entry is the network output.
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds at least the input")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Shape-congruent companion of an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub layers: Vec<DenseGrad>,
}

impl Gradient {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| DenseGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.iter().all(|x| x.is_finite()) && l.bias.iter().all(|x| x.is_finite())
        })
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weight *= k;
            l.bias *= k;
        }
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl Mlp {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; when `final_scale` is
    /// given the last layer is drawn from Uniform(-final_scale, final_scale).
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        final_scale: Option<f64>,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let last = i + 1 == n;
                let act = if last { output } else { hidden };
                let bound = match (last, final_scale) {
                    (true, Some(s)) => s,
                    _ => 1.0 / (sizes[i] as f64).sqrt(),
                };
                let mut d = Dense::zeros(sizes[i], sizes[i + 1], act);
                d.weight.mapv_inplace(|_| rng.random_range(-bound..=bound));
                d.bias.mapv_inplace(|_| rng.random_range(-bound..=bound));
                d
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Dense::outputs).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::Dimension {
                context: "mlp input",
                expected: self.input_dim(),
                got: cols,
            });
        }
        Ok(())
    }

    /// Batched forward pass; rows are samples.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut h = x.to_owned();
        for l in &self.layers {
            h = layer_forward(l, h.view());
        }
        Ok(h)
    }

    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let input = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward(input)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(x.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for l in &self.layers {
            let next = layer_forward(l, activations.last().unwrap().view());
            activations.push(next);
        }
        Ok(ForwardCache { activations })
    }

    /// Reverse pass for upstream dL/d(output). Returns parameter gradients
    /// summed over the batch and dL/d(input) per row.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(Gradient, Array2<f64>)> {
        let out = cache.output();
        if upstream.dim() != out.dim() {
            return Err(Error::Dimension {
                context: "mlp upstream gradient",
                expected: out.ncols(),
                got: upstream.ncols(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let y = &cache.activations[i + 1];
            let act = l.activation;
            if act != Activation::Linear {
                ndarray::Zip::from(&mut delta)
                    .and(y)
                    .for_each(|d, &yv| *d *= act.derivative_from_output(yv));
            }
            let input = &cache.activations[i];
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            let next = delta.dot(&l.weight.t());
            grads.push(DenseGrad {
                weight: gw,
                bias: gb,
            });
            delta = next;
        }
        grads.reverse();
        Ok((Gradient { layers: grads }, delta))
    }

    /// target <- (1 - rho) * target + rho * online.
    pub fn polyak_update(&mut self, online: &Mlp, rho: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.weight.zip_mut_with(&o.weight, |a, &b| *a = (1.0 - rho) * *a + rho * b);
            t.bias.zip_mut_with(&o.bias, |a, &b| *a = (1.0 - rho) * *a + rho * b);
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension {
                context: "flat parameters",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.iter().all(|x| x.is_finite()) && l.bias.iter().all(|x| x.is_finite())
        })
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        MlpCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    activation: l.activation,
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &MlpCheckpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let mut layers = Vec::with_capacity(ck.layers.len());
        for (i, r) in ck.layers.iter().enumerate() {
            if i > 0 && ck.layers[i - 1].outputs != r.inputs {
                return Err(Error::Parse(format!("layer {i} input width does not chain")));
            }
            let weight = Array2::from_shape_vec((r.inputs, r.outputs), r.weight.clone())
                .map_err(|e| Error::Parse(format!("layer {i} weight: {e}")))?;
            if r.bias.len() != r.outputs {
                return Err(Error::Parse(format!("layer {i} bias length")));
            }
            layers.push(Dense {
                weight,
                bias: Array1::from(r.bias.clone()),
                activation: r.activation,
            });
        }
        if layers.is_empty() {
            return Err(Error::Parse("checkpoint has no layers".into()));
        }
        Ok(Self { layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: MlpCheckpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(&ck)
    }
}

fn layer_forward(l: &Dense, x: ArrayView2<f64>) -> Array2<f64> {
    let mut z = x.dot(&l.weight);
    z += &l.bias;
    if l.activation != Activation::Linear {
        let act = l.activation;
        z.mapv_inplace(|v| act.apply(v));
    }
    z
}

pub const CHECKPOINT_FORMAT: &str = "selfi-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    /// Row-major (inputs, outputs).
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format: String,
    pub version: u32,
    pub layers: Vec<LayerRecord>,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Gradient,
    v: Gradient,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Gradient::zeros_like(net),
            v: Gradient::zeros_like(net),
        }
    }

    /// Descends along `grad` (the gradient of a loss to minimize).
    pub fn step(&mut self, net: &mut Mlp, grad: &Gradient) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::Diverged("non-finite gradient passed to Adam".into()));
        }
        if grad.layers.len() != net.layers.len() {
            return Err(Error::Dimension {
                context: "adam gradient layers",
                expected: net.layers.len(),
                got: grad.layers.len(),
            });
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let (lr, eps) = (self.lr, self.eps);
        for ((layer, g), (m, v)) in net
            .layers
            .iter_mut()
            .zip(&grad.layers)
            .zip(self.m.layers.iter_mut().zip(self.v.layers.iter_mut()))
        {
            let upd = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            };
            ndarray::Zip::from(&mut layer.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(|p, &g, m, v| upd(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| upd(p, g, m, v));
        }
        Ok(())
    }
}
