use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Per-class error: `error / classes`.
pub fn pce(error: f64, classes: usize) -> f64 {
    error / classes as f64
}

/// Mean of per-class errors.
pub fn mpce(pces: &[f64]) -> Result<f64> {
    if pces.is_empty() {
        return Err(Error::Config("MPCE of an empty list".into()));
    }
    Ok(pces.iter().sum::<f64>() / pces.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub accuracy: f64,
    pub error: f64,
    pub classes: usize,
    pub pce: f64,
}

impl ReportRow {
    pub fn from_accuracy(name: impl Into<String>, accuracy: f64, classes: usize) -> Self {
        Self::from_error(name, 1.0 - accuracy, classes)
    }

    pub fn from_error(name: impl Into<String>, error: f64, classes: usize) -> Self {
        Self {
            name: name.into(),
            accuracy: 1.0 - error,
            error,
            classes,
            pce: pce(error, classes),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
    pub fingerprint: String,
    pub seconds: f64,
}

impl RunReport {
    pub fn mpce(&self) -> Result<f64> {
        mpce(&self.rows.iter().map(|r| r.pce).collect::<Vec<_>>())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

const COLUMNS: [&str; 5] = ["name", "accuracy", "error", "classes", "pce"];

/// Renders the rows plus an MPCE footer. CSV keeps full precision so it reads
/// back exactly; markdown uses four decimals.
pub fn emit_report(report: &RunReport, format: ReportFormat) -> Result<String> {
    let m = report.mpce()?;
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(&COLUMNS.join(","));
            out.push('\n');
            for r in &report.rows {
                writeln!(out, "{},{},{},{},{}", r.name, r.accuracy, r.error, r.classes, r.pce).expect("write");
            }
            writeln!(out, "MPCE,,,,{m}").expect("write");
        }
        ReportFormat::Markdown => {
            writeln!(out, "| {} |", COLUMNS.join(" | ")).expect("write");
            out.push_str("|---|---:|---:|---:|---:|\n");
            for r in &report.rows {
                writeln!(
                    out,
                    "| {} | {:.4} | {:.4} | {} | {:.4} |",
                    r.name, r.accuracy, r.error, r.classes, r.pce
                )
                .expect("write");
            }
            writeln!(out, "| MPCE | | | | {m:.4} |").expect("write");
        }
    }
    Ok(out)
}

/// Reads CSV written by [`emit_report`]; the MPCE footer is checked against the rows.
pub fn parse_report_csv(text: &str) -> Result<RunReport> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == COLUMNS.join(",") => {}
        _ => return Err(Error::parse(1, None, format!("expected header {}", COLUMNS.join(",")))),
    }
    let mut rows = Vec::new();
    let mut footer = None;
    for (i, line) in lines {
        let n = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::parse(n, None, format!("expected 5 fields, got {}", f.len())));
        }
        let num = |col: usize| -> Result<f64> {
            f[col].trim().parse().map_err(|_| Error::parse(n, Some(col + 1), format!("not a number: {:?}", f[col])))
        };
        if f[0] == "MPCE" {
            footer = Some((n, num(4)?));
            continue;
        }
        if footer.is_some() {
            return Err(Error::parse(n, None, "row after MPCE footer"));
        }
        let classes = f[3]
            .trim()
            .parse()
            .map_err(|_| Error::parse(n, Some(4), format!("not a class count: {:?}", f[3])))?;
        rows.push(ReportRow {
            name: f[0].to_string(),
            accuracy: num(1)?,
            error: num(2)?,
            classes,
            pce: num(4)?,
        });
    }
    let report = RunReport { rows, ..Default::default() };
    let (n, value) = footer.ok_or_else(|| Error::parse(text.lines().count(), None, "missing MPCE footer"))?;
    if report.mpce()? != value {
        return Err(Error::parse(n, Some(5), "MPCE footer does not match rows"));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pce_examples() {
        assert_eq!(pce(0.2, 4), 0.05);
        assert_eq!(pce(0.0, 3), 0.0);
        assert_eq!(pce(1.0, 1), 1.0);
    }

    #[test]
    fn mpce_examples() {
        assert!((mpce(&[0.05, 0.1]).unwrap() - 0.075).abs() < 1e-15);
        assert_eq!(mpce(&[0.3]).unwrap(), 0.3);
        assert!(mpce(&[]).is_err());
        assert_eq!(mpce(&[0.1, 0.05]).unwrap(), mpce(&[0.05, 0.1]).unwrap());
    }

    #[test]
    fn one_row_report() {
        let report = RunReport {
            rows: vec![ReportRow::from_error("Coffee", 0.25, 2)],
            ..Default::default()
        };
        let csv = emit_report(&report, ReportFormat::Csv).unwrap();
        assert_eq!(csv, "name,accuracy,error,classes,pce\nCoffee,0.75,0.25,2,0.125\nMPCE,,,,0.125\n");
        let md = emit_report(&report, ReportFormat::Markdown).unwrap();
        assert_eq!(md.lines().count(), 4);
        assert!(md.contains("| Coffee | 0.7500 | 0.2500 | 2 | 0.1250 |"));
        assert_eq!(parse_report_csv(&csv).unwrap().rows, report.rows);
    }

    #[test]
    fn parse_rejects_bad_footer() {
        let csv = "name,accuracy,error,classes,pce\nA,0.75,0.25,2,0.125\nMPCE,,,,0.2\n";
        assert!(parse_report_csv(csv).is_err());
        assert!(parse_report_csv("a,b\n").is_err());
    }
}
