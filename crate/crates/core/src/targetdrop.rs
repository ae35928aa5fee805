//! Attention-targeted structured dropout.
//!
//! Channel significance is the time-average of each channel. A two-layer
//! bottleneck with ReLU and sigmoid turns it into an attention map `M`. In
//! training, the channels whose attention reaches the `⌈γC⌉`-th largest value
//! become targets; each target channel loses a window of length about `k`
//! centred on its peak, and survivors are rescaled by `numel / kept`.
//!
//! Mask construction (argmax, top-K) is not differentiable. So that the
//! attention weights still learn, the output channels are also multiplied by
//! `M` in both modes (squeeze-excitation style recalibration).

use rand::Rng;

use crate::error::{Error, Result};
use crate::param::Parameter;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::dims3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegionLength {
    Fixed(usize),
    /// `max(2, ⌈W / 10⌉)`.
    Auto,
}

impl RegionLength {
    pub fn resolve(self, width: usize) -> usize {
        match self {
            RegionLength::Fixed(k) => k.max(1),
            RegionLength::Auto => 2.max(width.div_ceil(10)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetDropConfig {
    pub gamma: f64,
    pub reduction_ratio: usize,
    pub region: RegionLength,
}

impl Default for TargetDropConfig {
    fn default() -> Self {
        Self {
            gamma: 0.15,
            reduction_ratio: 16,
            region: RegionLength::Auto,
        }
    }
}

impl TargetDropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.reduction_ratio == 0 {
            return Err(Error::Config("reduction ratio must be >= 1".into()));
        }
        if self.region == RegionLength::Fixed(0) {
            return Err(Error::Config("region length must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn bottleneck_width(channels: usize, reduction_ratio: usize) -> usize {
    (channels / reduction_ratio.max(1)).max(1)
}

/// `K = ⌈γC⌉`, clamped to `[1, C]`.
pub fn target_count(gamma: f64, channels: usize) -> usize {
    // The small offset keeps products like 0.3 * 10 from rounding up to 4.
    let k = (gamma * channels as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(channels)
}

/// Channels selected for dropping in one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetVector<T> {
    pub targets: Vec<bool>,
    pub k: usize,
    pub threshold: T,
}

impl<T> TargetVector<T> {
    pub fn count(&self) -> usize {
        self.targets.iter().filter(|&&t| t).count()
    }
}

/// Marks every channel whose attention is at least the `K`-th largest value.
/// Ties at the threshold are all selected.
pub fn select_targets<T: Real>(attention: &[T], gamma: f64) -> TargetVector<T> {
    assert!(!attention.is_empty(), "select_targets needs at least one channel");
    let k = target_count(gamma, attention.len());
    let mut sorted = attention.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let threshold = sorted[k - 1];
    TargetVector {
        targets: attention.iter().map(|&m| m >= threshold).collect(),
        k,
        threshold,
    }
}

/// Dropped window around a channel's peak, 1-indexed and inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DropRegion {
    pub peak: usize,
    pub start: usize,
    pub end: usize,
}

impl DropRegion {
    pub fn around(peak: usize, k: usize, width: usize) -> Self {
        let half = k / 2;
        Self {
            peak,
            start: peak.saturating_sub(half).max(1),
            end: (peak + half).min(width),
        }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Peak (first maximum) of a channel and the window of length `k` around it.
pub fn drop_region<T: Real>(channel: &[T], k: usize) -> DropRegion {
    assert!(!channel.is_empty(), "drop_region needs a non-empty channel");
    let mut peak = 0;
    for (i, &v) in channel.iter().enumerate() {
        if v > channel[peak] {
            peak = i;
        }
    }
    DropRegion::around(peak + 1, k, channel.len())
}

/// Keep-mask for one sample, stored channel-major (`keep[c * W + t]`).
#[derive(Clone, Debug, PartialEq)]
pub struct DropMask {
    pub channels: usize,
    pub width: usize,
    pub keep: Vec<bool>,
    pub regions: Vec<Option<DropRegion>>,
}

impl DropMask {
    pub fn all_kept(channels: usize, width: usize) -> Self {
        Self {
            channels,
            width,
            keep: vec![true; channels * width],
            regions: vec![None; channels],
        }
    }

    /// Mask for one sample `u` laid out `[C, W]`.
    pub fn build<T: Real>(u: &[T], width: usize, targets: &TargetVector<T>, k: usize) -> Self {
        let channels = targets.targets.len();
        let mut mask = Self::all_kept(channels, width);
        for (c, &is_target) in targets.targets.iter().enumerate() {
            if !is_target {
                continue;
            }
            let region = drop_region(&u[c * width..(c + 1) * width], k);
            for t in region.start - 1..region.end {
                mask.keep[c * width + t] = false;
            }
            mask.regions[c] = Some(region);
        }
        mask
    }

    pub fn kept(&self, channel: usize) -> usize {
        self.keep[channel * self.width..(channel + 1) * self.width]
            .iter()
            .filter(|&&k| k)
            .count()
    }

    /// Per-element factor `s * numel / sum(s)`; a fully masked channel gets zeros.
    pub fn scale_factors<T: Real>(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.keep.len());
        for c in 0..self.channels {
            let kept = self.kept(c);
            let scale = if kept == 0 {
                T::zero()
            } else {
                T::lit(self.width as f64 / kept as f64)
            };
            out.extend(
                self.keep[c * self.width..(c + 1) * self.width]
                    .iter()
                    .map(|&k| if k { scale } else { T::zero() }),
            );
        }
        out
    }
}

/// Applies per-sample masks to `u: [B, C, W]` with survivor rescaling.
pub fn apply_mask<T: Real>(tape: &mut Tape<T>, u: Var, masks: &[DropMask]) -> Result<Var> {
    let (b, c, w) = dims3(tape.value(u), "apply_mask")?;
    if masks.len() != b || masks.iter().any(|m| m.channels != c || m.width != w) {
        return Err(Error::shape("apply_mask", "mask", format!("need {b} masks of [{c}, {w}]")));
    }
    let factor = masks.iter().flat_map(|m| m.scale_factors::<T>()).collect();
    tape.mul_const(u, factor)
}

pub fn channel_significance<T: Real>(tape: &mut Tape<T>, u: Var) -> Result<Var> {
    tape.global_avg_pool(u)
}

/// `sigmoid(W2 relu(W1 v))` row-wise for `v: [B, C]`.
pub fn attention_map<T: Real>(tape: &mut Tape<T>, v: Var, w1: Var, w2: Var) -> Result<Var> {
    let hidden = tape.linear(v, w1, None)?;
    let hidden = tape.relu(hidden);
    let logits = tape.linear(hidden, w2, None)?;
    Ok(tape.sigmoid(logits))
}

/// TargetDrop parameters for a fixed channel count.
#[derive(Clone, Debug)]
pub struct TargetDrop<T: Real = f64> {
    pub cfg: TargetDropConfig,
    pub w1: Parameter<T>,
    pub w2: Parameter<T>,
}

pub struct TargetDropOutput {
    pub output: Var,
    /// Attention map `[B, C]`.
    pub attention: Var,
    /// Per-sample masks; empty in eval mode.
    pub masks: Vec<DropMask>,
}

impl<T: Real> TargetDrop<T> {
    pub fn new(channels: usize, cfg: TargetDropConfig, rng: &mut impl Rng) -> Self {
        let hidden = bottleneck_width(channels, cfg.reduction_ratio);
        Self {
            cfg,
            w1: Parameter::fan_in_uniform(&[hidden, channels], channels, rng),
            w2: Parameter::fan_in_uniform(&[channels, hidden], hidden, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn forward(&self, tape: &mut Tape<T>, u: Var, train: bool) -> Result<TargetDropOutput> {
        let (b, c, w) = dims3(tape.value(u), "targetdrop")?;
        if c != self.channels() {
            return Err(Error::shape(
                "targetdrop",
                "channels",
                format!("built for {}, got {c}", self.channels()),
            ));
        }
        let v = channel_significance(tape, u)?;
        let w1 = tape.param(&self.w1);
        let w2 = tape.param(&self.w2);
        let attention = attention_map(tape, v, w1, w2)?;
        let (dropped, masks) = if train {
            let k = self.cfg.region.resolve(w);
            let m = tape.value(attention).data().to_vec();
            let x = tape.value(u).data().to_vec();
            let masks: Vec<DropMask> = (0..b)
                .map(|bi| {
                    let targets = select_targets(&m[bi * c..(bi + 1) * c], self.cfg.gamma);
                    DropMask::build(&x[bi * c * w..(bi + 1) * c * w], w, &targets, k)
                })
                .collect();
            (apply_mask(tape, u, &masks)?, masks)
        } else {
            (u, Vec::new())
        };
        let output = tape.scale_channels(dropped, attention)?;
        Ok(TargetDropOutput {
            output,
            attention,
            masks,
        })
    }
}

/// Running per-channel mean of attention maps.
#[derive(Clone, Debug, Default)]
pub struct AttentionStats {
    sum: Vec<f64>,
    comp: Vec<f64>,
    count: usize,
}

impl AttentionStats {
    pub fn new(channels: usize) -> Self {
        Self {
            sum: vec![0.0; channels],
            comp: vec![0.0; channels],
            count: 0,
        }
    }

    /// Adds every row of a `[B, C]` attention batch.
    pub fn observe<T: Real>(&mut self, attention: &[T]) -> Result<()> {
        let c = self.sum.len();
        if c == 0 || attention.len() % c != 0 {
            return Err(Error::shape(
                "attention_statistics",
                "channels",
                format!("{} values for {c} channels", attention.len()),
            ));
        }
        for row in attention.chunks_exact(c) {
            for (i, &m) in row.iter().enumerate() {
                // Neumaier summation keeps the mean independent of batch order.
                let x = m.to_f64().unwrap_or(f64::NAN);
                let t = self.sum[i] + x;
                if self.sum[i].abs() >= x.abs() {
                    self.comp[i] += (self.sum[i] - t) + x;
                } else {
                    self.comp[i] += (x - t) + self.sum[i];
                }
                self.sum[i] = t;
            }
            self.count += 1;
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.sum
            .iter()
            .zip(&self.comp)
            .map(|(s, c)| (s + c) / n)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn significance_examples() {
        let mut tape = Tape::<f64>::new();
        let u = tape.constant(Tensor::from_vec(&[1, 3, 2], vec![2.0, 4.0, 0.0, 0.0, 1.5, 1.5]).unwrap());
        let v = channel_significance(&mut tape, u).unwrap();
        assert_eq!(tape.value(v).data(), &[3.0, 0.0, 1.5]);
    }

    #[test]
    fn attention_with_zero_weights_is_half() {
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(Tensor::from_vec(&[1, 4], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let w1 = tape.constant(Tensor::zeros(&[2, 4]));
        let w2 = tape.constant(Tensor::zeros(&[4, 2]));
        let m = attention_map(&mut tape, v, w1, w2).unwrap();
        assert_eq!(tape.value(m).shape(), &[1, 4]);
        assert!(tape.value(m).data().iter().all(|&x| x == 0.5));
        assert_eq!(bottleneck_width(4, 2), 2);
        assert_eq!(bottleneck_width(4, 16), 1);
    }

    #[test]
    fn target_selection_examples() {
        assert_eq!(target_count(0.25, 10), 3);
        assert_eq!(target_count(0.3, 10), 3);
        let t = select_targets(&[0.9, 0.1, 0.5], 0.34);
        assert_eq!(t.k, 2);
        assert_eq!(t.targets, vec![true, false, true]);
        let t = select_targets(&[0.4; 5], 0.2);
        assert_eq!(t.count(), 5);
    }

    #[test]
    fn region_examples() {
        assert_eq!(DropRegion::around(5, 4, 20), DropRegion { peak: 5, start: 3, end: 7 });
        assert_eq!(DropRegion::around(1, 4, 20), DropRegion { peak: 1, start: 1, end: 3 });
        assert_eq!(DropRegion::around(20, 4, 20), DropRegion { peak: 20, start: 18, end: 20 });
        // ties resolve to the first maximum
        assert_eq!(drop_region(&[0.0, 2.0, 2.0, 1.0], 1).peak, 2);
        assert_eq!(RegionLength::Auto.resolve(150), 15);
        assert_eq!(RegionLength::Auto.resolve(5), 2);
    }

    #[test]
    fn mask_rescaling_example() {
        let mut mask = DropMask::all_kept(1, 10);
        for t in 2..6 {
            mask.keep[t] = false;
        }
        let mut tape = Tape::<f64>::new();
        let u = tape.constant(Tensor::full(&[1, 1, 10], 3.0));
        let out = apply_mask(&mut tape, u, &[mask]).unwrap();
        let vals = tape.value(out).data();
        assert!((vals[0] - 5.0).abs() < 1e-12);
        assert_eq!(vals[3], 0.0);
    }

    #[test]
    fn all_ones_mask_is_identity() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.7 - 2.0).collect();
        let u = tape.constant(Tensor::from_vec(&[2, 2, 3], data.clone()).unwrap());
        let masks = vec![DropMask::all_kept(2, 3); 2];
        let out = apply_mask(&mut tape, u, &masks).unwrap();
        assert_eq!(tape.value(out).data(), &data[..]);
    }

    #[test]
    fn fully_masked_channel_is_zero() {
        let mut mask = DropMask::all_kept(1, 3);
        mask.keep.iter_mut().for_each(|k| *k = false);
        let f: Vec<f64> = mask.scale_factors();
        assert_eq!(f, vec![0.0; 3]);
    }

    #[test]
    fn eval_with_zero_weights_halves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut td = TargetDrop::<f64>::new(4, TargetDropConfig { reduction_ratio: 2, ..Default::default() }, &mut rng);
        td.w1.tensor.data_mut().fill(0.0);
        td.w2.tensor.data_mut().fill(0.0);
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..24).map(|i| (i as f64).sin()).collect();
        let u = tape.constant(Tensor::from_vec(&[2, 4, 3], data.clone()).unwrap());
        let out = td.forward(&mut tape, u, false).unwrap();
        for (o, x) in tape.value(out.output).data().iter().zip(&data) {
            assert_eq!(*o, 0.5 * x);
        }
    }

    #[test]
    fn single_channel_training_masks_one_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let td = TargetDrop::<f64>::new(
            1,
            TargetDropConfig { gamma: 1e-6, reduction_ratio: 1, region: RegionLength::Fixed(2) },
            &mut rng,
        );
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::from_vec(&[1, 1, 6], vec![0.0, 1.0, 5.0, 1.0, 0.0, 0.0]).unwrap());
        let out = td.forward(&mut tape, u, true).unwrap();
        assert_eq!(out.masks[0].regions[0], Some(DropRegion { peak: 3, start: 2, end: 4 }));
        assert_eq!(out.masks[0].kept(0), 3);
    }

    #[test]
    fn attention_statistics_mean() {
        let mut s = AttentionStats::new(1);
        s.observe(&[0.2f64]).unwrap();
        assert_eq!(s.mean(), vec![0.2]);
        s.observe(&[0.4f64]).unwrap();
        assert!((s.mean()[0] - 0.3).abs() < 1e-15);
        assert!(s.observe(&[0.1f64, 0.2]).is_ok());
        assert!(AttentionStats::new(3).observe(&[0.1f64, 0.2]).is_err());
    }
}
