//! The AdaFSNet classifier.
//!
//! Pipeline: OS-Block (one isolated three-layer conv stack per kernel path,
//! outputs concatenated) → TargetDrop → dense block 1 → + kernel-1 projection
//! of the OS-Block output → dense block 2 → global average pool → linear head.

mod checkpoint;
mod layers;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{CHECKPOINT_MAGIC, checkpoint_precision, decode_checkpoint, encode_checkpoint};
pub use layers::{
    BatchNorm, BnSettings, Conv1d, ConvUnit, DenseBlock, Linear, NamedBuffersMut, NamedParams,
    NamedParamsMut, batch_tensor,
};

use crate::error::{Error, Result};
use crate::param::Parameter;
use crate::plan::{KernelPlan, Path, PathAttribution};
use crate::real::Real;
use crate::tape::{BatchStats, Tape, Var};
use crate::targetdrop::{DropMask, TargetDrop, TargetDropConfig};
use crate::tensor::dims3;

/// Layers per dense block.
pub const DENSE_LAYERS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub filters_per_path: usize,
    pub growth_rate: usize,
    pub num_classes: usize,
    /// Input dimensions (1 for univariate series).
    pub input_dims: usize,
    /// Distinct kernel sizes kept for the dense blocks after warmup.
    pub dense_kernel_count: usize,
    pub targetdrop: TargetDropConfig,
    pub enable_targetdrop: bool,
    pub dense_block_count: usize,
    pub bn: BnSettings,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            filters_per_path: 4,
            growth_rate: 16,
            num_classes: 2,
            input_dims: 1,
            dense_kernel_count: 4,
            targetdrop: TargetDropConfig::default(),
            enable_targetdrop: true,
            dense_block_count: 2,
            bn: BnSettings::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("filters_per_path", self.filters_per_path),
            ("growth_rate", self.growth_rate),
            ("num_classes", self.num_classes),
            ("input_dims", self.input_dims),
            ("dense_kernel_count", self.dense_kernel_count),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.dense_block_count > 2 {
            return Err(Error::Config(format!(
                "dense_block_count must be 0, 1 or 2, got {}",
                self.dense_block_count
            )));
        }
        if !(self.bn.momentum > 0.0 && self.bn.momentum <= 1.0) || self.bn.epsilon <= 0.0 {
            return Err(Error::Config("invalid batch-norm momentum/epsilon".into()));
        }
        self.targetdrop.validate()
    }
}

/// Three stacked conv units for one `(k1, k2, k3)` path.
#[derive(Clone, Debug)]
pub struct PathStack<T: Real> {
    pub path: Path,
    pub units: Vec<ConvUnit<T>>,
}

#[derive(Clone, Debug)]
pub struct AdaFsNet<T: Real = f64> {
    pub plan: KernelPlan,
    pub cfg: ModelConfig,
    pub attribution: PathAttribution,
    pub os_block: Vec<PathStack<T>>,
    pub targetdrop: Option<TargetDrop<T>>,
    pub projection: Option<Conv1d<T>>,
    pub dense: Vec<DenseBlock<T>>,
    pub head: Linear<T>,
    /// Kernel sizes chosen by [`AdaFsNet::respecialize_dense_blocks`], if it ran.
    pub preserved_kernels: Option<Vec<usize>>,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// Layer-3 output of each path, before concatenation.
    pub path_outputs: Vec<Var>,
    pub os_output: Var,
    pub targetdrop_output: Var,
    pub dense1_output: Option<Var>,
    pub residual: Option<Var>,
    pub block2_input: Option<Var>,
    pub pooled: Var,
}

pub struct Forward<T> {
    pub logits: Var,
    /// Attention map `[B, C]` when TargetDrop is enabled.
    pub attention: Option<Var>,
    pub masks: Vec<DropMask>,
    pub bn_updates: Vec<(u64, BatchStats<T>)>,
    pub trace: Trace,
}

/// Round-robin assignment of `sizes` to the layers of a dense block.
pub fn round_robin_kernels(sizes: &[usize], layers: usize) -> Vec<usize> {
    (0..layers).map(|j| sizes[j % sizes.len()]).collect()
}

impl<T: Real> AdaFsNet<T> {
    pub fn build(plan: &KernelPlan, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let report = plan.verify();
        if !report.ok {
            return Err(Error::Verification(format!(
                "kernel plan p_k={} misses receptive fields {:?}",
                plan.p_k, report.missing
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = cfg.filters_per_path;
        let os_block: Vec<PathStack<T>> = plan
            .paths
            .iter()
            .map(|&path| PathStack {
                path,
                units: path
                    .iter()
                    .enumerate()
                    .map(|(layer, &k)| {
                        let cin = if layer == 0 { cfg.input_dims } else { f };
                        ConvUnit::new(cin, f, k, &mut rng)
                    })
                    .collect(),
            })
            .collect();
        let attribution = PathAttribution::new(plan, f);
        let os_channels = attribution.total_channels();
        let targetdrop = cfg
            .enable_targetdrop
            .then(|| TargetDrop::new(os_channels, cfg.targetdrop, &mut rng));
        let mut sorted = plan.layer_sets[0].clone();
        sorted.sort_unstable();
        let kernels = round_robin_kernels(&sorted, DENSE_LAYERS);
        let mut dense = Vec::new();
        let mut channels = os_channels;
        for _ in 0..cfg.dense_block_count {
            let block = DenseBlock::new(channels, cfg.growth_rate, &kernels, &mut rng);
            channels = block.out_channels();
            dense.push(block);
        }
        let projection = dense
            .first()
            .map(|b| Conv1d::new(os_channels, b.out_channels(), 1, &mut rng));
        let head = Linear::new(channels, cfg.num_classes, &mut rng);
        Ok(Self {
            plan: plan.clone(),
            cfg: cfg.clone(),
            attribution,
            os_block,
            targetdrop,
            projection,
            dense,
            head,
            preserved_kernels: None,
        })
    }

    pub fn os_channels(&self) -> usize {
        self.attribution.total_channels()
    }

    pub fn dense_kernels(&self) -> Vec<Vec<usize>> {
        self.dense.iter().map(DenseBlock::kernels).collect()
    }

    /// Records one forward pass of a `[B, D, W]` input on `tape`.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Forward<T>> {
        let (_, d, _) = dims3(tape.value(x), "forward")?;
        if d != self.cfg.input_dims {
            return Err(Error::shape(
                "forward",
                "input dimensions",
                format!("model expects {}, got {d}", self.cfg.input_dims),
            ));
        }
        let train = mode == Mode::Train;
        let bn = self.cfg.bn;
        let mut updates = Vec::new();

        let mut path_outputs = Vec::with_capacity(self.os_block.len());
        for stack in &self.os_block {
            let mut h = x;
            for unit in &stack.units {
                h = unit.forward(tape, h, train, bn, &mut updates)?;
            }
            path_outputs.push(h);
        }
        let os_output = tape.concat_channels(&path_outputs)?;

        let (td_output, attention, masks) = match &self.targetdrop {
            Some(td) => {
                let out = td.forward(tape, os_output, train)?;
                (out.output, Some(out.attention), out.masks)
            }
            None => (os_output, None, Vec::new()),
        };

        let mut h = td_output;
        let (mut dense1_output, mut residual, mut block2_input) = (None, None, None);
        if let (Some(first), Some(proj)) = (self.dense.first(), &self.projection) {
            let d1 = first.forward(tape, h, train, bn, &mut updates)?;
            let r = proj.forward(tape, td_output)?;
            h = tape.add(d1, r)?;
            dense1_output = Some(d1);
            residual = Some(r);
            block2_input = Some(h);
            for block in &self.dense[1..] {
                h = block.forward(tape, h, train, bn, &mut updates)?;
            }
        }
        let pooled = tape.global_avg_pool(h)?;
        let logits = self.head.forward(tape, pooled)?;
        Ok(Forward {
            logits,
            attention,
            masks,
            bn_updates: updates,
            trace: Trace {
                path_outputs,
                os_output,
                targetdrop_output: td_output,
                dense1_output,
                residual,
                block2_input,
                pooled,
            },
        })
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn apply_bn_updates(&mut self, updates: Vec<(u64, BatchStats<T>)>) {
        let mut by_key: HashMap<u64, BatchStats<T>> = updates.into_iter().collect();
        let momentum = self.cfg.bn.momentum;
        self.for_each_bn(|bn| {
            if let Some(stats) = by_key.remove(&bn.key()) {
                bn.update(&stats, momentum);
            }
        });
    }

    fn for_each_bn(&mut self, mut f: impl FnMut(&mut BatchNorm<T>)) {
        for stack in &mut self.os_block {
            stack.units.iter_mut().for_each(|u| f(&mut u.bn));
        }
        for block in &mut self.dense {
            block.layers.iter_mut().for_each(|u| f(&mut u.bn));
        }
    }

    /// Every trainable parameter with a stable name, in declaration order.
    pub fn named_parameters(&self) -> NamedParams<'_, T> {
        let mut out = Vec::new();
        for (i, stack) in self.os_block.iter().enumerate() {
            for (l, unit) in stack.units.iter().enumerate() {
                unit.named(&format!("os.path{i}.layer{l}"), &mut out);
            }
        }
        if let Some(td) = &self.targetdrop {
            out.push(("targetdrop.w1".to_string(), &td.w1));
            out.push(("targetdrop.w2".to_string(), &td.w2));
        }
        for (b, block) in self.dense.iter().enumerate() {
            block.named(&format!("dense{b}"), &mut out);
        }
        if let Some(p) = &self.projection {
            p.named("projection", &mut out);
        }
        self.head.named("head", &mut out);
        out
    }

    pub fn named_parameters_mut(&mut self) -> NamedParamsMut<'_, T> {
        let mut out = Vec::new();
        for (i, stack) in self.os_block.iter_mut().enumerate() {
            for (l, unit) in stack.units.iter_mut().enumerate() {
                unit.named_mut(&format!("os.path{i}.layer{l}"), &mut out);
            }
        }
        if let Some(td) = &mut self.targetdrop {
            out.push(("targetdrop.w1".to_string(), &mut td.w1));
            out.push(("targetdrop.w2".to_string(), &mut td.w2));
        }
        for (b, block) in self.dense.iter_mut().enumerate() {
            block.named_mut(&format!("dense{b}"), &mut out);
        }
        if let Some(p) = &mut self.projection {
            p.named_mut("projection", &mut out);
        }
        self.head.named_mut("head", &mut out);
        out
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.named_parameters_mut().into_iter().map(|(_, p)| p)
    }

    /// Batch-norm running statistics, in declaration order.
    pub fn named_buffers_mut(&mut self) -> NamedBuffersMut<'_, T> {
        let mut out = Vec::new();
        for (i, stack) in self.os_block.iter_mut().enumerate() {
            for (l, unit) in stack.units.iter_mut().enumerate() {
                unit.buffers_mut(&format!("os.path{i}.layer{l}"), &mut out);
            }
        }
        for (b, block) in self.dense.iter_mut().enumerate() {
            block.buffers_mut(&format!("dense{b}"), &mut out);
        }
        out
    }

    pub fn named_buffers(&self) -> Vec<(String, &Vec<T>)> {
        fn push<'a, T: Real>(out: &mut Vec<(String, &'a Vec<T>)>, prefix: String, bn: &'a BatchNorm<T>) {
            out.push((format!("{prefix}.bn.running_mean"), &bn.running_mean));
            out.push((format!("{prefix}.bn.running_var"), &bn.running_var));
        }
        let mut out = Vec::new();
        // Order and names match `named_buffers_mut`.
        for (i, stack) in self.os_block.iter().enumerate() {
            for (l, unit) in stack.units.iter().enumerate() {
                push(&mut out, format!("os.path{i}.layer{l}"), &unit.bn);
            }
        }
        for (b, block) in self.dense.iter().enumerate() {
            for (j, unit) in block.layers.iter().enumerate() {
                push(&mut out, format!("dense{b}.layer{j}"), &unit.bn);
            }
        }
        out
    }

    /// Exact number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, p)| p.len()).sum()
    }

    /// Rebuilds the dense blocks with kernel sizes assigned round-robin from
    /// `preserved`. Dense-block parameters are re-initialised; channel counts,
    /// and therefore the projection and head, are unchanged.
    pub fn respecialize_dense_blocks(&mut self, preserved: &[usize], seed: u64) -> Result<()> {
        if preserved.is_empty() || preserved.contains(&0) {
            return Err(Error::Config(format!("invalid preserved kernel list {preserved:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernels = round_robin_kernels(preserved, DENSE_LAYERS);
        for block in &mut self.dense {
            *block = DenseBlock::new(block.in_channels, block.growth_rate, &kernels, &mut rng);
        }
        self.preserved_kernels = Some(preserved.to_vec());
        Ok(())
    }
}

/// Ranks paths by the mean attention of their channels and returns up to `m`
/// distinct first-layer kernel sizes in rank order. Ties in attention go to
/// the larger kernel.
pub fn preserved_kernel_sizes(
    attribution: &PathAttribution,
    mean_attention: &[f64],
    m: usize,
) -> Result<Vec<usize>> {
    if mean_attention.len() != attribution.total_channels() {
        return Err(Error::shape(
            "preserved_kernel_sizes",
            "channels",
            format!(
                "{} attention values for {} channels",
                mean_attention.len(),
                attribution.total_channels()
            ),
        ));
    }
    let mut ranked: Vec<(f64, usize)> = attribution
        .entries
        .iter()
        .enumerate()
        .map(|(i, (path, _))| {
            let ch = attribution.channels(i);
            let n = ch.len() as f64;
            let mean = mean_attention[ch].iter().sum::<f64>() / n;
            (mean, path[0])
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
    let mut out = Vec::new();
    for (_, k1) in ranked {
        if out.len() == m {
            break;
        }
        if !out.contains(&k1) {
            out.push(k1);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn tiny_plan() -> KernelPlan {
        KernelPlan::new(2, 4, false).unwrap()
    }

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            filters_per_path: 1,
            growth_rate: 2,
            num_classes: 3,
            targetdrop: TargetDropConfig {
                reduction_ratio: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn tiny_plan_has_eight_paths() {
        let model = AdaFsNet::<f64>::build(&tiny_plan(), &tiny_cfg(), 0).unwrap();
        assert_eq!(model.os_block.len(), 8);
        assert_eq!(model.os_channels(), 8);
        assert_eq!(model.dense[0].out_channels(), 8 + 8 * 2);
        assert_eq!(model.dense[1].in_channels, 24);
    }

    #[test]
    fn forward_shape() {
        let model = AdaFsNet::<f64>::build(&tiny_plan(), &tiny_cfg(), 0).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(&[2, 1, 6], (0..12).map(|v| v as f64).collect()).unwrap());
        let out = model.forward(&mut tape, x, Mode::Train).unwrap();
        assert_eq!(tape.value(out.logits).shape(), &[2, 3]);
        assert!(tape.value(out.logits).all_finite());
    }

    #[test]
    fn wrong_input_dims_rejected() {
        let model = AdaFsNet::<f64>::build(&tiny_plan(), &tiny_cfg(), 0).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3, 6]));
        assert!(matches!(model.forward(&mut tape, x, Mode::Eval), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_dense_blocks_wire_head_to_targetdrop() {
        let cfg = ModelConfig {
            dense_block_count: 0,
            ..tiny_cfg()
        };
        let model = AdaFsNet::<f64>::build(&tiny_plan(), &cfg, 0).unwrap();
        assert!(model.projection.is_none());
        assert_eq!(model.head.weight.shape(), &[3, 8]);
    }

    #[test]
    fn parameter_count_grows_with_filters() {
        let plan = tiny_plan();
        let counts: Vec<usize> = (1..4)
            .map(|f| {
                let cfg = ModelConfig {
                    filters_per_path: f,
                    ..tiny_cfg()
                };
                AdaFsNet::<f64>::build(&plan, &cfg, 0).unwrap().parameter_count()
            })
            .collect();
        assert!(counts.windows(2).all(|w| w[1] > w[0]), "{counts:?}");
    }

    #[test]
    fn round_robin_example() {
        assert_eq!(round_robin_kernels(&[7, 5, 3, 2], 8), vec![7, 5, 3, 2, 7, 5, 3, 2]);
    }

    #[test]
    fn preserved_sizes_uniform_prefers_large_kernels() {
        let plan = KernelPlan::new(7, 14, false).unwrap();
        let attr = PathAttribution::new(&plan, 2);
        let uniform = vec![0.5; attr.total_channels()];
        assert_eq!(preserved_kernel_sizes(&attr, &uniform, 4).unwrap(), vec![7, 5, 3, 2]);
        assert_eq!(preserved_kernel_sizes(&attr, &uniform, 1).unwrap(), vec![7]);
        assert_eq!(preserved_kernel_sizes(&attr, &uniform, 10).unwrap().len(), 5);
    }

    #[test]
    fn preserved_sizes_follow_attention() {
        let plan = KernelPlan::new(13, 26, false).unwrap();
        let attr = PathAttribution::new(&plan, 1);
        let att: Vec<f64> = plan.paths.iter().map(|p| if p[0] == 7 { 0.9 } else { 0.1 }).collect();
        assert_eq!(preserved_kernel_sizes(&attr, &att, 3).unwrap()[0], 7);
    }

    #[test]
    fn respecialize_changes_only_dense_blocks() {
        let plan = KernelPlan::new(7, 14, false).unwrap();
        let cfg = ModelConfig {
            filters_per_path: 1,
            growth_rate: 2,
            ..Default::default()
        };
        let mut model = AdaFsNet::<f64>::build(&plan, &cfg, 3).unwrap();
        let before: Vec<(String, usize)> = model
            .named_parameters()
            .iter()
            .filter(|(n, _)| !n.starts_with("dense"))
            .map(|(n, p)| (n.clone(), p.len()))
            .collect();
        model.respecialize_dense_blocks(&[7, 5, 3, 2], 9).unwrap();
        assert_eq!(model.dense_kernels()[0], vec![7, 5, 3, 2, 7, 5, 3, 2]);
        let after: Vec<(String, usize)> = model
            .named_parameters()
            .iter()
            .filter(|(n, _)| !n.starts_with("dense"))
            .map(|(n, p)| (n.clone(), p.len()))
            .collect();
        assert_eq!(before, after);
    }
}
