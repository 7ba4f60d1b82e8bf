//! Small dense networks as loss surfaces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::LossSurface;
use crate::error::{invalid, Result};
use crate::landscapes::SyntheticDataset;
use crate::param::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpLoss {
    CrossEntropy,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub loss: MlpLoss,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, loss: MlpLoss) -> Result<Self> {
        let spec = Self { layer_widths, activation, loss };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(invalid("an MLP needs at least an input and an output layer"));
        }
        if self.layer_widths.contains(&0) {
            return Err(invalid("layer widths must be positive"));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// `(weight_offset, bias_offset, fan_in, fan_out)` per layer. Weights are
    /// stored `fan_in x fan_out` row-major, followed by the bias.
    pub fn layout(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut off = 0;
        self.layer_widths
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                let entry = (off, off + i * o, i, o);
                off += i * o + o;
                entry
            })
            .collect()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.num_params()];
        for (w_off, _, fan_in, fan_out) in self.layout() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut p[w_off..w_off + fan_in * fan_out] {
                *v = rng.random_range(-limit..limit);
            }
        }
        ParamVector::from_raw(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    /// Row-major `samples x output_dim` regression targets.
    Values(Vec<f64>),
}

/// An MLP bound to an in-memory dataset, evaluated one minibatch at a time.
#[derive(Debug, Clone)]
pub struct MlpSurface {
    spec: MlpSpec,
    features: Vec<f64>,
    targets: Targets,
    samples: usize,
    batch_size: usize,
    batch: usize,
}

impl MlpSurface {
    /// Classification surface over `data`, using its batch size.
    pub fn new(spec: MlpSpec, data: &SyntheticDataset) -> Result<Self> {
        spec.validate()?;
        if data.dims != spec.input_dim() {
            return Err(invalid(format!("dataset has {} features, MLP input is {}", data.dims, spec.input_dim())));
        }
        if data.num_classes > spec.output_dim() {
            return Err(invalid("MLP output narrower than the number of classes"));
        }
        let targets = match spec.loss {
            MlpLoss::CrossEntropy => Targets::Classes(data.labels.clone()),
            MlpLoss::Mse => {
                let c = spec.output_dim();
                let mut t = vec![0.0; data.samples() * c];
                for (i, &l) in data.labels.iter().enumerate() {
                    t[i * c + l] = 1.0;
                }
                Targets::Values(t)
            }
        };
        Self::with_targets(spec, data.features.clone(), targets, data.batch_size)
    }

    pub fn with_targets(spec: MlpSpec, features: Vec<f64>, targets: Targets, batch_size: usize) -> Result<Self> {
        spec.validate()?;
        let d = spec.input_dim();
        if !features.len().is_multiple_of(d) {
            return Err(invalid("feature buffer is not a multiple of the input width"));
        }
        let samples = features.len() / d;
        match (&targets, spec.loss) {
            (Targets::Classes(l), MlpLoss::CrossEntropy) => {
                if l.len() != samples || l.iter().any(|&c| c >= spec.output_dim()) {
                    return Err(invalid("class targets do not match the samples/outputs"));
                }
            }
            (Targets::Values(v), MlpLoss::Mse) => {
                if v.len() != samples * spec.output_dim() {
                    return Err(invalid("regression targets do not match the samples/outputs"));
                }
            }
            _ => return Err(invalid("target kind does not match the loss")),
        }
        if batch_size == 0 || samples == 0 || !samples.is_multiple_of(batch_size) {
            return Err(invalid(format!("batch size {batch_size} must divide sample count {samples}")));
        }
        Ok(Self { spec, features, targets, samples, batch_size, batch: 0 })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    fn forward(&self, tape: &mut Tape, params: Var, rows: std::ops::Range<usize>) -> Var {
        let d = self.spec.input_dim();
        let n = rows.len();
        let x = tape.constant(self.features[rows.start * d..rows.end * d].to_vec(), n, d);
        let layout = self.spec.layout();
        let last = layout.len() - 1;
        let mut h = x;
        for (l, (w_off, b_off, fan_in, fan_out)) in layout.into_iter().enumerate() {
            let w = tape.slice(params, w_off, fan_in, fan_out);
            let b = tape.slice(params, b_off, 1, fan_out);
            let z = tape.matmul(h, w);
            let z = tape.add_row(z, b);
            h = if l == last {
                z
            } else {
                match self.spec.activation {
                    Activation::Tanh => tape.tanh(z),
                    Activation::Relu => tape.relu(z),
                }
            };
        }
        h
    }

    fn loss_over(&self, tape: &mut Tape, params: Var, rows: std::ops::Range<usize>) -> Var {
        let out = self.forward(tape, params, rows.clone());
        match &self.targets {
            Targets::Classes(labels) => tape.softmax_cross_entropy(out, &labels[rows]),
            Targets::Values(v) => {
                let c = self.spec.output_dim();
                tape.mean_squared_error(out, &v[rows.start * c..rows.end * c])
            }
        }
    }

    /// Mean loss over the whole dataset (not tied to the current batch).
    pub fn full_loss(&self, params: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let p = tape.param(params.to_vec(), 1, params.len());
        let out = self.loss_over(&mut tape, p, 0..self.samples);
        tape.scalar(out)
    }

    /// Fraction of samples whose arg-max output equals the label. Only meaningful for class targets.
    pub fn accuracy(&self, params: &[f64]) -> f64 {
        let Targets::Classes(labels) = &self.targets else {
            return f64::NAN;
        };
        let mut tape = Tape::new();
        let p = tape.param(params.to_vec(), 1, params.len());
        let out = self.forward(&mut tape, p, 0..self.samples);
        let c = self.spec.output_dim();
        let logits = tape.value(out);
        let correct = labels
            .iter()
            .enumerate()
            .filter(|(i, &l)| {
                let row = &logits[i * c..(i + 1) * c];
                let best = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc })
                    .0;
                best == l
            })
            .count();
        correct as f64 / self.samples as f64
    }
}

impl LossSurface for MlpSurface {
    fn dim(&self) -> usize {
        self.spec.num_params()
    }

    fn record(&self, tape: &mut Tape, params: Var) -> Var {
        let start = self.batch * self.batch_size;
        self.loss_over(tape, params, start..start + self.batch_size)
    }

    fn num_batches(&self) -> usize {
        self.samples / self.batch_size
    }

    fn batch(&self) -> usize {
        self.batch
    }

    fn set_batch(&mut self, batch: usize) {
        self.batch = batch % self.num_batches();
    }

    /// One group per output neuron: its incoming weights plus its bias.
    fn filter_groups(&self) -> Vec<Vec<usize>> {
        let mut groups = Vec::new();
        for (w_off, b_off, fan_in, fan_out) in self.spec.layout() {
            for j in 0..fan_out {
                let mut g: Vec<usize> = (0..fan_in).map(|i| w_off + i * fan_out + j).collect();
                g.push(b_off + j);
                groups.push(g);
            }
        }
        groups
    }
}
