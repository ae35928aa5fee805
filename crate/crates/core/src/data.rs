//! UCR (`.tsv`) and UEA/sktime (`.ts`) time-series files.
//!
//! UCR grammar: one sample per non-empty line, `label` followed by the
//! values, fields separated by tabs or commas.
//!
//! `.ts` grammar: `#` comment lines; `@`-directives (`@problemName`,
//! `@univariate`, `@classLabel true <labels...>`, ...); then `@data`, after
//! which each line holds the dimensions separated by `:` with comma-separated
//! values in each, and the class label as the last `:` field.
//!
//! Labels are opaque tokens and class names sort as strings, so `"10"` comes
//! before `"2"`. Missing values (`NaN`, `?`) are rejected unless linear
//! interpolation is requested.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Environment variable consulted for the dataset root when no path is given.
pub const DATA_ROOT_ENV: &str = "ADAFSNET_DATA_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[D][W]` values.
    pub values: Vec<Vec<f64>>,
    pub label: usize,
    /// Per dimension: true when z-normalisation found (near-)zero variance.
    pub constant: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesDataset {
    pub name: String,
    pub samples: Vec<Sample>,
    /// Longest series length; every series has this length after padding.
    pub width: usize,
    pub dims: usize,
    pub class_names: Vec<String>,
    pub split: Split,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParseOptions {
    pub interpolate_missing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    pub normalize: bool,
    pub interpolate_missing: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            normalize: true,
            interpolate_missing: false,
        }
    }
}

impl TimeSeriesDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn is_ragged(&self) -> bool {
        self.samples
            .iter()
            .any(|s| s.values.iter().any(|d| d.len() != self.width))
    }

    /// A dataset holding only the given samples (same classes and split).
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Self {
        Self {
            name: self.name.clone(),
            samples: Vec::new(),
            width: self.width,
            dims: self.dims,
            class_names: self.class_names.clone(),
            split: self.split,
        }
    }
}

/// Sorted class names and the name → index map.
pub fn encode_labels<S: AsRef<str>>(raw: &[S]) -> (Vec<String>, HashMap<String, usize>) {
    let names: Vec<String> = raw
        .iter()
        .map(|s| s.as_ref().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    (names, index)
}

fn is_missing(tok: &str) -> bool {
    matches!(tok, "?" | "NaN" | "nan" | "NAN")
}

fn parse_values(
    tokens: &[&str],
    line: usize,
    first_column: usize,
    opts: ParseOptions,
) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(tokens.len());
    let mut any_missing = false;
    for (i, tok) in tokens.iter().enumerate() {
        let tok = tok.trim();
        let col = first_column + i;
        if is_missing(tok) {
            if !opts.interpolate_missing {
                return Err(Error::parse(line, Some(col), "missing value (enable interpolation to fill)"));
            }
            any_missing = true;
            values.push(f64::NAN);
            continue;
        }
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::parse(line, Some(col), format!("not a number: {tok:?}")))?;
        if !v.is_finite() {
            return Err(Error::parse(line, Some(col), format!("non-finite value {tok:?}")));
        }
        values.push(v);
    }
    if any_missing {
        interpolate(&mut values).map_err(|m| Error::parse(line, None, m))?;
    }
    Ok(values)
}

/// Linear in-fill of NaN gaps; leading/trailing gaps copy the nearest value.
fn interpolate(values: &mut [f64]) -> std::result::Result<(), String> {
    let known: Vec<usize> = (0..values.len()).filter(|&i| !values[i].is_nan()).collect();
    let (Some(&first), Some(&last)) = (known.first(), known.last()) else {
        return Err("series has no observed values".into());
    };
    for i in 0..first {
        values[i] = values[first];
    }
    for i in last + 1..values.len() {
        values[i] = values[last];
    }
    for pair in known.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        for i in a + 1..b {
            let t = (i - a) as f64 / (b - a) as f64;
            values[i] = values[a] + t * (values[b] - values[a]);
        }
    }
    Ok(())
}

fn assemble(
    name: &str,
    rows: Vec<(Vec<Vec<f64>>, String)>,
    dims: usize,
    split: Split,
) -> TimeSeriesDataset {
    let raw: Vec<&str> = rows.iter().map(|(_, l)| l.as_str()).collect();
    let (class_names, index) = encode_labels(&raw);
    let width = rows
        .iter()
        .flat_map(|(v, _)| v.iter().map(Vec::len))
        .max()
        .unwrap_or(0);
    let samples = rows
        .into_iter()
        .map(|(values, label)| Sample {
            constant: vec![false; values.len()],
            values,
            label: index[&label],
        })
        .collect();
    TimeSeriesDataset {
        name: name.to_string(),
        samples,
        width,
        dims,
        class_names,
        split,
    }
}

pub fn parse_ucr_tsv(text: &str) -> Result<TimeSeriesDataset> {
    parse_ucr_tsv_with(text, "", Split::Train, ParseOptions::default())
}

pub fn parse_ucr_tsv_with(
    text: &str,
    name: &str,
    split: Split,
    opts: ParseOptions,
) -> Result<TimeSeriesDataset> {
    let mut rows = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(['\t', ',']).collect();
        let label = fields[0].trim();
        if label.is_empty() {
            return Err(Error::parse(lineno, Some(1), "empty label"));
        }
        if fields.len() < 2 {
            return Err(Error::parse(lineno, None, "row has a label but no values"));
        }
        let values = parse_values(&fields[1..], lineno, 2, opts)?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::parse(
                    lineno,
                    None,
                    format!("ragged row: {} values, expected {w}", values.len()),
                ));
            }
            _ => {}
        }
        rows.push((vec![values], label.to_string()));
    }
    if rows.is_empty() {
        return Err(Error::parse(1, None, "no samples"));
    }
    Ok(assemble(name, rows, 1, split))
}

pub fn parse_ts(text: &str) -> Result<TimeSeriesDataset> {
    parse_ts_with(text, Split::Train, ParseOptions::default())
}

pub fn parse_ts_with(text: &str, split: Split, opts: ParseOptions) -> Result<TimeSeriesDataset> {
    let mut name = String::new();
    let mut univariate = None;
    let mut declared: Option<BTreeSet<String>> = None;
    let mut in_data = false;
    let mut dims = None;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !in_data {
            let Some(directive) = line.strip_prefix('@') else {
                return Err(Error::parse(lineno, None, "data before @data"));
            };
            let mut parts = directive.split_whitespace();
            let key = parts.next().unwrap_or_default().to_ascii_lowercase();
            let args: Vec<&str> = parts.collect();
            let flag = |args: &[&str]| -> Result<bool> {
                match args.first().map(|a| a.to_ascii_lowercase()).as_deref() {
                    Some("true") => Ok(true),
                    Some("false") => Ok(false),
                    _ => Err(Error::parse(lineno, None, format!("@{key} needs true or false"))),
                }
            };
            match key.as_str() {
                "problemname" => name = args.join(" "),
                "univariate" => univariate = Some(flag(&args)?),
                "classlabel" => {
                    if !flag(&args)? {
                        return Err(Error::parse(lineno, None, "unlabelled (@classLabel false) data is not supported"));
                    }
                    if args.len() < 2 {
                        return Err(Error::parse(lineno, None, "@classLabel true lists no labels"));
                    }
                    declared = Some(args[1..].iter().map(|s| s.to_string()).collect());
                }
                "timestamps" => {
                    if flag(&args)? {
                        return Err(Error::parse(lineno, None, "timestamped series are not supported"));
                    }
                }
                "data" => {
                    if declared.is_none() {
                        return Err(Error::parse(lineno, None, "@data before @classLabel"));
                    }
                    in_data = true;
                }
                // Informational directives (@missing, @equalLength, @seriesLength, @dimensions, ...).
                _ => {}
            }
            continue;
        }
        let fields: Vec<&str> = line.split(':').collect();
        if fields.len() < 2 {
            return Err(Error::parse(lineno, None, "expected dimensions followed by :label"));
        }
        let label = fields[fields.len() - 1].trim();
        let labels = declared.as_ref().expect("checked at @data");
        if !labels.contains(label) {
            return Err(Error::parse(
                lineno,
                Some(fields.len()),
                format!("label {label:?} not declared in @classLabel"),
            ));
        }
        let d = fields.len() - 1;
        match dims {
            None => dims = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::parse(lineno, None, format!("{d} dimensions, expected {prev}")));
            }
            _ => {}
        }
        if univariate == Some(true) && d != 1 {
            return Err(Error::parse(lineno, None, format!("@univariate true but {d} dimensions")));
        }
        let values = fields[..d]
            .iter()
            .enumerate()
            .map(|(j, dim)| {
                let toks: Vec<&str> = dim.split(',').collect();
                if toks.iter().all(|t| t.trim().is_empty()) {
                    return Err(Error::parse(lineno, Some(j + 1), "empty dimension"));
                }
                parse_values(&toks, lineno, j + 1, opts)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((values, label.to_string()));
    }
    if !in_data {
        return Err(Error::parse(text.lines().count().max(1), None, "missing @data section"));
    }
    if rows.is_empty() {
        return Err(Error::parse(text.lines().count().max(1), None, "no samples after @data"));
    }
    Ok(assemble(&name, rows, dims.unwrap_or(1), split))
}

/// `(x - mean) / std` with population statistics; near-constant series map to
/// zeros and report `true`.
pub fn znormalize(series: &[f64]) -> (Vec<f64>, bool) {
    if series.is_empty() {
        return (Vec::new(), true);
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return (vec![0.0; series.len()], true);
    }
    (series.iter().map(|v| (v - mean) / std).collect(), false)
}

/// Z-normalises every (sample, dimension) series in place.
pub fn normalize(ds: &mut TimeSeriesDataset) {
    for s in &mut ds.samples {
        for (d, series) in s.values.iter_mut().enumerate() {
            let (z, constant) = znormalize(series);
            *series = z;
            s.constant[d] = constant;
        }
    }
}

/// Zero-pads every series at the end to `width` (at least the current maximum).
pub fn pad_to_length(ds: &mut TimeSeriesDataset, width: usize) {
    let width = width.max(ds.width);
    for s in &mut ds.samples {
        for series in &mut s.values {
            series.resize(width, 0.0);
        }
    }
    ds.width = width;
}

pub fn pad_to_common_length(ds: &mut TimeSeriesDataset) {
    pad_to_length(ds, ds.width);
}

fn fmt_values(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{v}").expect("write to string");
    }
    s
}

/// UCR text for a univariate dataset (tab-separated).
pub fn to_ucr_tsv(ds: &TimeSeriesDataset) -> Result<String> {
    if ds.dims != 1 {
        return Err(Error::Dataset(format!("{} has {} dimensions; UCR files hold one", ds.name, ds.dims)));
    }
    let mut out = String::new();
    for s in &ds.samples {
        out.push_str(&ds.class_names[s.label]);
        for v in &s.values[0] {
            write!(out, "\t{v}").expect("write to string");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn to_ts(ds: &TimeSeriesDataset) -> String {
    let mut out = String::new();
    if !ds.name.is_empty() {
        writeln!(out, "@problemName {}", ds.name).expect("write");
    }
    writeln!(out, "@univariate {}", ds.dims == 1).expect("write");
    writeln!(out, "@classLabel true {}", ds.class_names.join(" ")).expect("write");
    out.push_str("@data\n");
    for s in &ds.samples {
        for dim in &s.values {
            out.push_str(&fmt_values(dim));
            out.push(':');
        }
        out.push_str(&ds.class_names[s.label]);
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Tsv,
    Ts,
}

fn locate(dir: &Path, name: &str, split: &str) -> Vec<(PathBuf, Format)> {
    let mut found = Vec::new();
    for base in [dir.join(name), dir.to_path_buf()] {
        for (ext, fmt) in [("tsv", Format::Tsv), ("ts", Format::Ts)] {
            let p = base.join(format!("{name}_{split}.{ext}"));
            if p.is_file() {
                found.push((p, fmt));
            }
        }
        if !found.is_empty() {
            break;
        }
    }
    found
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_file(path: &Path, fmt: Format, name: &str, split: Split, opts: ParseOptions) -> Result<TimeSeriesDataset> {
    let text = read(path)?;
    let mut ds = match fmt {
        Format::Tsv => parse_ucr_tsv_with(&text, name, split, opts),
        Format::Ts => parse_ts_with(&text, split, opts),
    }
    .map_err(|e| match e {
        Error::Parse { line, column, message } => Error::Parse {
            line,
            column,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })?;
    ds.name = name.to_string();
    ds.split = split;
    Ok(ds)
}

/// Re-indexes labels onto a shared class list.
fn remap(ds: &mut TimeSeriesDataset, names: &[String]) {
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    for s in &mut ds.samples {
        s.label = index[ds.class_names[s.label].as_str()];
    }
    ds.class_names = names.to_vec();
}

/// Loads `<name>_TRAIN` / `<name>_TEST` from `dir/<name>/` or `dir/`.
///
/// Both splits share one class encoding and one (padded) width.
pub fn load_pair(dir: &Path, name: &str, opts: LoadOptions) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    let train_files = locate(dir, name, "TRAIN");
    let test_files = locate(dir, name, "TEST");
    let (train_path, test_path) = [Format::Tsv, Format::Ts]
        .iter()
        .find_map(|f| {
            let a = train_files.iter().find(|(_, g)| g == f)?;
            let b = test_files.iter().find(|(_, g)| g == f)?;
            Some((a.clone(), b.clone()))
        })
        .ok_or_else(|| match (train_files.first(), test_files.first()) {
            (None, _) => Error::Dataset(format!("no {name}_TRAIN.tsv or {name}_TRAIN.ts under {}", dir.display())),
            (_, None) => Error::Dataset(format!("no {name}_TEST.tsv or {name}_TEST.ts under {}", dir.display())),
            _ => Error::Dataset(format!("{name}: train and test files use different formats")),
        })?;
    let popts = ParseOptions {
        interpolate_missing: opts.interpolate_missing,
    };
    let mut train = parse_file(&train_path.0, train_path.1, name, Split::Train, popts)?;
    let mut test = parse_file(&test_path.0, test_path.1, name, Split::Test, popts)?;
    if train.dims != test.dims {
        return Err(Error::Dataset(format!(
            "{name}: train has {} dimensions, test has {}",
            train.dims, test.dims
        )));
    }
    if let Some(unseen) = test.class_names.iter().find(|c| !train.class_names.contains(c)) {
        return Err(Error::Dataset(format!("{name}: class {unseen:?} appears in test but not in train")));
    }
    let names = train.class_names.clone();
    remap(&mut train, &names);
    remap(&mut test, &names);
    if opts.normalize {
        normalize(&mut train);
        normalize(&mut test);
    }
    let width = train.width.max(test.width);
    pad_to_length(&mut train, width);
    pad_to_length(&mut test, width);
    Ok((train, test))
}

/// Dataset root: explicit path, else [`DATA_ROOT_ENV`], else `data/ucr`.
pub fn data_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/ucr"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_basic() {
        let ds = parse_ucr_tsv("1\t0.5\t0.7\n2\t0.1\t0.2").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.width, 2);
        assert_eq!(ds.dims, 1);
        assert_eq!(ds.class_names, vec!["1", "2"]);
        assert_eq!(ds.samples[1].values[0], vec![0.1, 0.2]);
        assert_eq!(ds.samples[1].label, 1);
    }

    #[test]
    fn tsv_singleton_and_commas() {
        let ds = parse_ucr_tsv("a,1,2,3\n").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.width, 3);
    }

    #[test]
    fn tsv_errors() {
        assert!(matches!(parse_ucr_tsv(""), Err(Error::Parse { .. })));
        match parse_ucr_tsv("1\t0.5\t0.7\n2\t0.1") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_ucr_tsv("1\t0.5\tx") {
            Err(Error::Parse { line: 1, column: Some(3), .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse_ucr_tsv("1\t0.5\tNaN").is_err());
    }

    #[test]
    fn missing_values_interpolate() {
        let opts = ParseOptions { interpolate_missing: true };
        let ds = parse_ucr_tsv_with("1\tNaN\t1\tNaN\t3\tNaN", "", Split::Train, opts).unwrap();
        assert_eq!(ds.samples[0].values[0], vec![1.0, 1.0, 2.0, 3.0, 3.0]);
        assert!(parse_ucr_tsv_with("1\tNaN\tNaN", "", Split::Train, opts).is_err());
    }

    const TS2: &str = "# comment\n@problemName Toy\n@univariate false\n@classLabel true a b\n@data\n1,2,3:4,5,6:a\n7,8,9:1,1,1:b\n";

    #[test]
    fn ts_multivariate() {
        let ds = parse_ts(TS2).unwrap();
        assert_eq!(ds.name, "Toy");
        assert_eq!(ds.dims, 2);
        assert_eq!(ds.samples[0].values, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(ds.samples[1].label, 1);
    }

    #[test]
    fn ts_univariate_matches_tsv() {
        let ts = parse_ts("@univariate true\n@classLabel true 1 2\n@data\n0.5,0.7:1\n0.1,0.2:2\n").unwrap();
        let tsv = parse_ucr_tsv("1\t0.5\t0.7\n2\t0.1\t0.2").unwrap();
        assert_eq!(ts.samples, tsv.samples);
        assert_eq!(ts.class_names, tsv.class_names);
    }

    #[test]
    fn ts_errors() {
        match parse_ts("@classLabel true a b\n@data\n1,2:a\n1,2:c\n") {
            Err(Error::Parse { line: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse_ts("@classLabel true a\n1,2:a\n").is_err());
        assert!(parse_ts("@classLabel true a\n").is_err());
        assert!(parse_ts("@classLabel true a\n@data\n1,2:3,4:a\n1,2:a\n").is_err());
        assert!(parse_ts("@univariate true\n@classLabel true a\n@data\n1,2:3,4:a\n").is_err());
    }

    #[test]
    fn znormalize_examples() {
        let (z, c) = znormalize(&[1.0, 2.0, 3.0]);
        assert!(!c);
        let s = (2.0f64 / 3.0).sqrt();
        for (a, b) in z.iter().zip([-1.0 / s, 0.0, 1.0 / s]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(znormalize(&[4.0; 5]), (vec![0.0; 5], true));
        let (zz, _) = znormalize(&z);
        for (a, b) in z.iter().zip(&zz) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn padding() {
        let mut ds = parse_ts("@classLabel true a\n@data\n1,2,3:a\n1,2,3,4,5:a\n").unwrap();
        assert!(ds.is_ragged());
        assert_eq!(ds.width, 5);
        pad_to_common_length(&mut ds);
        assert!(!ds.is_ragged());
        assert_eq!(ds.samples[0].values[0], vec![1.0, 2.0, 3.0, 0.0, 0.0]);
        let before = ds.clone();
        pad_to_common_length(&mut ds);
        assert_eq!(ds, before);
    }

    #[test]
    fn label_encoding() {
        let (names, idx) = encode_labels(&["2", "1"]);
        assert_eq!(names, vec!["1", "2"]);
        assert_eq!(idx["2"], 1);
        let (names, _) = encode_labels(&["x"]);
        assert_eq!(names, vec!["x"]);
        let (names, _) = encode_labels(&["2", "10"]);
        assert_eq!(names, vec!["10", "2"]);
    }
}
