use rand::Rng;

use crate::error::Result;
use crate::param::Parameter;
use crate::real::Real;
use crate::tape::{BatchStats, Tape, Var};
use crate::tensor::Tensor;

/// Named parameter references, collected in declaration order.
pub type NamedParams<'a, T> = Vec<(String, &'a Parameter<T>)>;
pub type NamedParamsMut<'a, T> = Vec<(String, &'a mut Parameter<T>)>;
/// Named non-trainable state (batch-norm running statistics).
pub type NamedBuffersMut<'a, T> = Vec<(String, &'a mut Vec<T>)>;

/// Same-padded 1-D convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv1d<T: Real> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Real> Conv1d<T> {
    pub fn new(cin: usize, cout: usize, k: usize, rng: &mut impl Rng) -> Self {
        let fan_in = cin * k;
        Self {
            weight: Parameter::fan_in_uniform(&[cout, cin, k], fan_in, rng),
            bias: Parameter::fan_in_uniform(&[cout], fan_in, rng),
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        tape.conv1d_same(x, w, Some(b), 1)
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut NamedParams<'a, T>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedParamsMut<'a, T>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnSettings {
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BnSettings {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm<T: Real> {
    pub scale: Parameter<T>,
    pub shift: Parameter<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: Parameter::filled(&[channels], 1.0),
            shift: Parameter::filled(&[channels], 0.0),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    /// Key under which training-mode statistics are reported.
    pub fn key(&self) -> u64 {
        self.scale.uid()
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        batch_stats: bool,
        settings: BnSettings,
        updates: &mut Vec<(u64, BatchStats<T>)>,
    ) -> Result<Var> {
        let scale = tape.param(&self.scale);
        let shift = tape.param(&self.shift);
        if batch_stats {
            let (y, stats) = tape.batch_norm_train(x, scale, shift, settings.epsilon)?;
            updates.push((self.key(), stats));
            Ok(y)
        } else {
            tape.batch_norm_eval(
                x,
                scale,
                shift,
                &self.running_mean,
                &self.running_var,
                settings.epsilon,
            )
        }
    }

    /// Exponential moving average of the running statistics.
    pub fn update(&mut self, stats: &BatchStats<T>, momentum: f64) {
        let m = T::lit(momentum);
        let keep = T::one() - m;
        for (r, &b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(&stats.var_unbiased) {
            *r = keep * *r + m * b;
        }
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut NamedParams<'a, T>) {
        out.push((format!("{prefix}.scale"), &self.scale));
        out.push((format!("{prefix}.shift"), &self.shift));
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedParamsMut<'a, T>) {
        out.push((format!("{prefix}.scale"), &mut self.scale));
        out.push((format!("{prefix}.shift"), &mut self.shift));
    }

    pub fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedBuffersMut<'a, T>) {
        out.push((format!("{prefix}.running_mean"), &mut self.running_mean));
        out.push((format!("{prefix}.running_var"), &mut self.running_var));
    }
}

/// Convolution, then ReLU, then batch norm.
#[derive(Clone, Debug)]
pub struct ConvUnit<T: Real> {
    pub conv: Conv1d<T>,
    pub bn: BatchNorm<T>,
}

impl<T: Real> ConvUnit<T> {
    pub fn new(cin: usize, cout: usize, k: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv1d::new(cin, cout, k, rng),
            bn: BatchNorm::new(cout),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        batch_stats: bool,
        settings: BnSettings,
        updates: &mut Vec<(u64, BatchStats<T>)>,
    ) -> Result<Var> {
        let y = self.conv.forward(tape, x)?;
        let y = tape.relu(y);
        self.bn.forward(tape, y, batch_stats, settings, updates)
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut NamedParams<'a, T>) {
        self.conv.named(&format!("{prefix}.conv"), out);
        self.bn.named(&format!("{prefix}.bn"), out);
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedParamsMut<'a, T>) {
        self.conv.named_mut(&format!("{prefix}.conv"), out);
        self.bn.named_mut(&format!("{prefix}.bn"), out);
    }

    pub fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedBuffersMut<'a, T>) {
        self.bn.buffers_mut(&format!("{prefix}.bn"), out);
    }
}

/// Fully connected layer `y = x W^T + b`.
#[derive(Clone, Debug)]
pub struct Linear<T: Real> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(din: usize, dout: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Parameter::fan_in_uniform(&[dout, din], din, rng),
            bias: Parameter::fan_in_uniform(&[dout], din, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        tape.linear(x, w, Some(b))
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut NamedParams<'a, T>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedParamsMut<'a, T>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

/// Dense block: each layer sees the block input plus every earlier layer's output.
#[derive(Clone, Debug)]
pub struct DenseBlock<T: Real> {
    pub in_channels: usize,
    pub growth_rate: usize,
    pub layers: Vec<ConvUnit<T>>,
}

impl<T: Real> DenseBlock<T> {
    pub fn new(in_channels: usize, growth_rate: usize, kernels: &[usize], rng: &mut impl Rng) -> Self {
        let layers = kernels
            .iter()
            .enumerate()
            .map(|(j, &k)| ConvUnit::new(in_channels + j * growth_rate, growth_rate, k, rng))
            .collect();
        Self {
            in_channels,
            growth_rate,
            layers,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels + self.layers.len() * self.growth_rate
    }

    pub fn kernels(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.conv.kernel_size()).collect()
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        batch_stats: bool,
        settings: BnSettings,
        updates: &mut Vec<(u64, BatchStats<T>)>,
    ) -> Result<Var> {
        let mut features = vec![x];
        for layer in &self.layers {
            let input = if features.len() == 1 {
                x
            } else {
                tape.concat_channels(&features)?
            };
            let y = layer.forward(tape, input, batch_stats, settings, updates)?;
            features.push(y);
        }
        tape.concat_channels(&features)
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut NamedParams<'a, T>) {
        for (j, l) in self.layers.iter().enumerate() {
            l.named(&format!("{prefix}.layer{j}"), out);
        }
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedParamsMut<'a, T>) {
        for (j, l) in self.layers.iter_mut().enumerate() {
            l.named_mut(&format!("{prefix}.layer{j}"), out);
        }
    }

    pub fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedBuffersMut<'a, T>) {
        for (j, l) in self.layers.iter_mut().enumerate() {
            l.buffers_mut(&format!("{prefix}.layer{j}"), out);
        }
    }
}

/// Batch tensor `[B, D, W]` from per-sample `[D][W]` values.
pub fn batch_tensor<T: Real>(samples: &[&[Vec<f64>]]) -> Result<Tensor<T>> {
    let b = samples.len();
    let d = samples.first().map_or(0, |s| s.len());
    let w = samples.first().and_then(|s| s.first()).map_or(0, |v| v.len());
    let mut data = Vec::with_capacity(b * d * w);
    for s in samples {
        for dim in s.iter() {
            data.extend(dim.iter().map(|&v| T::lit(v)));
        }
    }
    Tensor::from_vec(&[b, d, w], data)
}
