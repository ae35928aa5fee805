//! `key=value` run settings shared by every subcommand.

use std::collections::BTreeMap;
use std::path::Path;

use adafsnet::ExperimentConfig;
use adafsnet::data::LoadOptions;
use adafsnet::targetdrop::RegionLength;

use crate::CliError;

/// Environment variable selecting `f32` arithmetic when `precision` is unset.
pub const PRECISION_ENV: &str = "ADAFSNET_PRECISION";

/// Every accepted key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("precision", "f64", "f64 or f32 (falls back to $ADAFSNET_PRECISION)"),
    ("seed", "0", "run seed (also --seed)"),
    ("rf_cap", "48", "largest receptive field the kernel plan must cover"),
    ("literal_last_layer", "false", "use {2} instead of {1,2} for the third OS-Block layer"),
    ("filters_per_path", "4", "filters in each OS-Block path layer"),
    ("growth_rate", "16", "channels added by each dense layer"),
    ("dense_kernel_count", "4", "kernel sizes preserved for the dense blocks"),
    ("dense_block_count", "2", "0, 1 or 2"),
    ("enable_targetdrop", "true", "attention-targeted dropout after the OS-Block"),
    ("gamma", "0.15", "fraction of channels targeted by TargetDrop"),
    ("reduction_ratio", "16", "attention bottleneck ratio"),
    ("region_length", "auto", "drop region length k, or auto = max(2, ceil(W/10))"),
    ("bn_momentum", "0.1", "batch-norm running-stat momentum"),
    ("bn_epsilon", "1e-5", "batch-norm epsilon"),
    ("lr", "0.001", "Adam learning rate"),
    ("batch_size", "16", "mini-batch size"),
    ("max_epochs", "1500", "epoch budget"),
    ("warmup_epochs", "20", "attention calibration epochs before the dense rebuild"),
    ("early_stop_patience", "none", "stop after this many epochs without loss improvement"),
    ("target_train_accuracy", "none", "stop once an epoch reaches this training accuracy"),
    ("keep_best", "false", "keep the lowest-loss epoch instead of the last"),
    ("normalize", "true", "z-normalise every series"),
    ("interpolate_missing", "false", "fill missing values linearly instead of failing"),
    ("seeds", "0,1,2", "ablation seeds"),
    ("gradcheck_cases", "20", "random shapes per operation for gradcheck"),
    ("log_every", "1", "epochs between progress lines (0 = silent)"),
];

pub fn keys_help() -> String {
    let mut s = String::from("Config keys (--config file or --set key=value):\n");
    for (k, d, h) in KEYS {
        s.push_str(&format!("  {k:<22} {d:<8} {h}\n"));
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

#[derive(Clone, Debug)]
pub struct Settings {
    pub experiment: ExperimentConfig,
    pub load: LoadOptions,
    pub precision: Precision,
    pub seeds: Vec<u64>,
    pub gradcheck_cases: usize,
    pub log_every: usize,
    /// Resolved `key=value` lines, in key order.
    pub resolved: Vec<(String, String)>,
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str, origin: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = parse_pair(line).map_err(|m| CliError::Usage(format!("{origin}:{}: {m}", i + 1)))?;
        out.push((k, v));
    }
    Ok(out)
}

pub fn parse_pair(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn bad(key: &str, value: &str) -> CliError {
    CliError::Usage(format!("invalid value {value:?} for {key}"))
}

fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V, CliError> {
    value.parse().map_err(|_| bad(key, value))
}

fn optional<V: std::str::FromStr>(key: &str, value: &str) -> Result<Option<V>, CliError> {
    if value == "none" { Ok(None) } else { num(key, value).map(Some) }
}

impl Settings {
    /// Defaults, then the config file, then `--seed`, then `--set` overrides.
    pub fn resolve(
        config: Option<&Path>,
        seed: Option<u64>,
        overrides: &[(String, String)],
    ) -> Result<Self, CliError> {
        let mut values: BTreeMap<&str, String> = KEYS.iter().map(|(k, d, _)| (*k, d.to_string())).collect();
        if let Ok(p) = std::env::var(PRECISION_ENV) {
            values.insert("precision", p);
        }
        let mut entries = Vec::new();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            entries.extend(parse_config_text(&text, &path.display().to_string())?);
        }
        if let Some(s) = seed {
            entries.push(("seed".into(), s.to_string()));
        }
        entries.extend(overrides.iter().cloned());
        for (k, v) in entries {
            let Some((key, _, _)) = KEYS.iter().find(|(name, _, _)| *name == k) else {
                let valid: Vec<&str> = KEYS.iter().map(|(k, _, _)| *k).collect();
                return Err(CliError::Usage(format!("unknown key {k:?}; valid keys: {}", valid.join(", "))));
            };
            values.insert(key, v);
        }
        Self::from_values(&values)
    }

    fn from_values(values: &BTreeMap<&str, String>) -> Result<Self, CliError> {
        let get = |k: &str| values[k].as_str();
        let flag = |k: &str| -> Result<bool, CliError> { num(k, get(k)) };
        let mut e = ExperimentConfig::default();
        e.planner.rf_cap = num("rf_cap", get("rf_cap"))?;
        e.planner.literal_last_layer = flag("literal_last_layer")?;
        let m = &mut e.model;
        m.filters_per_path = num("filters_per_path", get("filters_per_path"))?;
        m.growth_rate = num("growth_rate", get("growth_rate"))?;
        m.dense_kernel_count = num("dense_kernel_count", get("dense_kernel_count"))?;
        m.dense_block_count = num("dense_block_count", get("dense_block_count"))?;
        m.enable_targetdrop = flag("enable_targetdrop")?;
        m.targetdrop.gamma = num("gamma", get("gamma"))?;
        m.targetdrop.reduction_ratio = num("reduction_ratio", get("reduction_ratio"))?;
        m.targetdrop.region = match get("region_length") {
            "auto" => RegionLength::Auto,
            v => RegionLength::Fixed(num("region_length", v)?),
        };
        m.bn.momentum = num("bn_momentum", get("bn_momentum"))?;
        m.bn.epsilon = num("bn_epsilon", get("bn_epsilon"))?;
        let t = &mut e.train;
        t.seed = num("seed", get("seed"))?;
        t.lr = num("lr", get("lr"))?;
        t.batch_size = num("batch_size", get("batch_size"))?;
        t.max_epochs = num("max_epochs", get("max_epochs"))?;
        t.warmup_epochs = num("warmup_epochs", get("warmup_epochs"))?;
        t.early_stop_patience = optional("early_stop_patience", get("early_stop_patience"))?;
        t.target_train_accuracy = optional("target_train_accuracy", get("target_train_accuracy"))?;
        t.keep_best = flag("keep_best")?;
        let precision = match get("precision") {
            "f64" => Precision::F64,
            "f32" => Precision::F32,
            v => return Err(bad("precision", v)),
        };
        let seeds = get("seeds")
            .split(',')
            .map(|s| num("seeds", s.trim()))
            .collect::<Result<Vec<u64>, _>>()?;
        Ok(Self {
            experiment: e,
            load: LoadOptions {
                normalize: flag("normalize")?,
                interpolate_missing: flag("interpolate_missing")?,
            },
            precision,
            seeds,
            gradcheck_cases: num("gradcheck_cases", get("gradcheck_cases"))?,
            log_every: num("log_every", get("log_every"))?,
            resolved: values.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        })
    }

    pub fn resolved_text(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nlr = 0.01\nmax_epochs=10 # trailing\n").unwrap();
        let s = Settings::resolve(Some(&path), Some(4), &[("lr".into(), "0.5".into())]).unwrap();
        assert_eq!(s.experiment.train.lr, 0.5);
        assert_eq!(s.experiment.train.max_epochs, 10);
        assert_eq!(s.experiment.train.seed, 4);
    }

    #[test]
    fn unknown_key_lists_valid() {
        let err = Settings::resolve(None, None, &[("learning_rate".into(), "1".into())]).unwrap_err();
        let CliError::Usage(msg) = err else { panic!() };
        assert!(msg.contains("valid keys") && msg.contains("lr"));
    }

    #[test]
    fn defaults_match_library() {
        let s = Settings::resolve(None, None, &[]).unwrap();
        let d = ExperimentConfig::default();
        assert_eq!(s.experiment.planner, d.planner);
        assert_eq!(s.experiment.train, d.train);
        assert_eq!(s.experiment.model, d.model);
        assert_eq!(s.seeds, vec![0, 1, 2]);
    }
}
