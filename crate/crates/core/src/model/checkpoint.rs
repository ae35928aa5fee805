//! Self-describing model checkpoints.
//!
//! Layout: a UTF-8 header of `key value` lines starting with
//! [`CHECKPOINT_MAGIC`] and ending with a line `end`, followed by one binary
//! record per parameter and per batch-norm buffer, in declaration order:
//! `u32` name length, name bytes, `u32` rank, `u64` extents, then the values
//! as little-endian `f64`.

use super::{AdaFsNet, BnSettings, ModelConfig};
use crate::error::{Error, Result};
use crate::plan::KernelPlan;
use crate::real::Real;
use crate::targetdrop::{RegionLength, TargetDropConfig};

pub const CHECKPOINT_MAGIC: &str = "ADAFSNET-CHECKPOINT 1";

fn header<T: Real>(model: &AdaFsNet<T>) -> String {
    let c = &model.cfg;
    let region = match c.targetdrop.region {
        RegionLength::Auto => "auto".to_string(),
        RegionLength::Fixed(k) => k.to_string(),
    };
    let preserved = model
        .preserved_kernels
        .as_ref()
        .map(|p| p.iter().map(ToString::to_string).collect::<Vec<_>>().join(","))
        .unwrap_or_else(|| "-".into());
    let lines = [
        CHECKPOINT_MAGIC.to_string(),
        format!("precision {}", T::NAME),
        format!("p_k {}", model.plan.p_k),
        format!("target_rf {}", model.plan.target_rf),
        format!("literal_last_layer {}", model.plan.layer_sets[2] == [2]),
        format!("filters_per_path {}", c.filters_per_path),
        format!("growth_rate {}", c.growth_rate),
        format!("num_classes {}", c.num_classes),
        format!("input_dims {}", c.input_dims),
        format!("dense_kernel_count {}", c.dense_kernel_count),
        format!("gamma {:?}", c.targetdrop.gamma),
        format!("reduction_ratio {}", c.targetdrop.reduction_ratio),
        format!("region {region}"),
        format!("enable_targetdrop {}", c.enable_targetdrop),
        format!("dense_block_count {}", c.dense_block_count),
        format!("bn_momentum {:?}", c.bn.momentum),
        format!("bn_epsilon {:?}", c.bn.epsilon),
        format!("preserved {preserved}"),
        "end".to_string(),
    ];
    let mut s = lines.join("\n");
    s.push('\n');
    s
}

fn write_record(out: &mut Vec<u8>, name: &str, shape: &[usize], values: impl Iterator<Item = f64>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint<T: Real>(model: &AdaFsNet<T>) -> Vec<u8> {
    let mut out = header(model).into_bytes();
    let f64s = |v: &[T]| v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect::<Vec<_>>();
    for (name, p) in model.named_parameters() {
        write_record(&mut out, &name, p.shape(), f64s(p.tensor.data()).into_iter());
    }
    for (name, buf) in model.named_buffers() {
        write_record(&mut out, &name, &[buf.len()], f64s(buf).into_iter());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn record(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let n = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(n)?)
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?
            .to_string();
        let rank = self.u32()? as usize;
        let shape = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = self.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("record too large".into()))?)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((name, shape, values))
    }
}

fn parse_header(bytes: &[u8]) -> Result<(Vec<(String, String)>, usize)> {
    let mut pos = 0;
    let mut entries = Vec::new();
    let mut first = true;
    loop {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("unterminated header".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        pos += nl + 1;
        if first {
            if line != CHECKPOINT_MAGIC {
                return Err(Error::Checkpoint(format!("bad magic line {line:?}")));
            }
            first = false;
            continue;
        }
        if line == "end" {
            return Ok((entries, pos));
        }
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| Error::Checkpoint(format!("malformed header line {line:?}")))?;
        entries.push((k.to_string(), v.to_string()));
    }
}

fn field<'a>(entries: &'a [(String, String)], key: &str) -> Result<&'a str> {
    entries
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Checkpoint(format!("header lacks {key}")))
}

fn parsed<V: std::str::FromStr>(entries: &[(String, String)], key: &str) -> Result<V> {
    let raw = field(entries, key)?;
    raw.parse()
        .map_err(|_| Error::Checkpoint(format!("bad value {raw:?} for {key}")))
}

/// The `precision` recorded when the checkpoint was written (`f64` or `f32`).
pub fn checkpoint_precision(bytes: &[u8]) -> Result<String> {
    let (h, _) = parse_header(bytes)?;
    field(&h, "precision").map(str::to_string)
}

/// Restores a model written by [`encode_checkpoint`].
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<AdaFsNet<T>> {
    let (h, offset) = parse_header(bytes)?;
    let plan = KernelPlan::new(
        parsed(&h, "p_k")?,
        parsed(&h, "target_rf")?,
        parsed(&h, "literal_last_layer")?,
    )?;
    let region = match field(&h, "region")? {
        "auto" => RegionLength::Auto,
        k => RegionLength::Fixed(
            k.parse()
                .map_err(|_| Error::Checkpoint(format!("bad region {k:?}")))?,
        ),
    };
    let cfg = ModelConfig {
        filters_per_path: parsed(&h, "filters_per_path")?,
        growth_rate: parsed(&h, "growth_rate")?,
        num_classes: parsed(&h, "num_classes")?,
        input_dims: parsed(&h, "input_dims")?,
        dense_kernel_count: parsed(&h, "dense_kernel_count")?,
        targetdrop: TargetDropConfig {
            gamma: parsed(&h, "gamma")?,
            reduction_ratio: parsed(&h, "reduction_ratio")?,
            region,
        },
        enable_targetdrop: parsed(&h, "enable_targetdrop")?,
        dense_block_count: parsed(&h, "dense_block_count")?,
        bn: BnSettings {
            momentum: parsed(&h, "bn_momentum")?,
            epsilon: parsed(&h, "bn_epsilon")?,
        },
    };
    let mut model = AdaFsNet::<T>::build(&plan, &cfg, 0)?;
    match field(&h, "preserved")? {
        "-" => {}
        list => {
            let sizes = list
                .split(',')
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Checkpoint(format!("bad preserved list {list:?}")))?;
            model.respecialize_dense_blocks(&sizes, 0)?;
        }
    }

    let mut reader = Reader { bytes, pos: offset };
    let expect = |reader: &mut Reader<'_>, name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let (got, got_shape, values) = reader.record()?;
        if got != name || got_shape != shape {
            return Err(Error::Checkpoint(format!(
                "expected {name} {shape:?}, found {got} {got_shape:?}"
            )));
        }
        Ok(values)
    };
    for (name, p) in model.named_parameters_mut() {
        let shape = p.shape().to_vec();
        let values = expect(&mut reader, &name, &shape)?;
        for (d, v) in p.tensor.data_mut().iter_mut().zip(values) {
            *d = T::lit(v);
        }
    }
    for (name, buf) in model.named_buffers_mut() {
        let values = expect(&mut reader, &name, &[buf.len()])?;
        for (d, v) in buf.iter_mut().zip(values) {
            *d = T::lit(v);
        }
    }
    if reader.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - reader.pos
        )));
    }
    Ok(model)
}
