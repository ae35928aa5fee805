//! Prime kernel planning for the OS-Block.
//!
//! Layers one and two draw kernel sizes from `{1, 2} ∪ {odd primes <= p_k}`,
//! layer three from `{1, 2}`. A path `(k1, k2, k3)` has receptive field
//! `k1 + k2 + k3 - 2`; since every even number is a sum of two primes, the
//! paths reach every even scale and, via the kernel-1 option in layer three,
//! every odd scale below it. The planner never assumes that: coverage is
//! enumerated and checked for each plan it returns.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// Default upper bound on the receptive field the planner targets.
pub const DEFAULT_RF_CAP: usize = 48;

/// Table of primality for `0..=limit`.
#[derive(Clone, Debug)]
pub struct PrimeTable {
    is_prime: Vec<bool>,
}

impl PrimeTable {
    pub fn new(limit: usize) -> Self {
        let mut is_prime = vec![true; limit + 1];
        for v in is_prime.iter_mut().take(2) {
            *v = false;
        }
        let mut i = 2;
        while i * i <= limit {
            if is_prime[i] {
                for j in (i * i..=limit).step_by(i) {
                    is_prime[j] = false;
                }
            }
            i += 1;
        }
        Self { is_prime }
    }

    pub fn limit(&self) -> usize {
        self.is_prime.len() - 1
    }

    pub fn is_prime(&self, n: usize) -> bool {
        self.is_prime.get(n).copied().unwrap_or(false)
    }

    pub fn primes(&self) -> Vec<usize> {
        (2..=self.limit()).filter(|&n| self.is_prime[n]).collect()
    }

    /// Lexicographically smallest `(p, q)`, `p <= q`, both prime, `p + q = even`.
    pub fn goldbach_pair(&self, even: usize) -> Result<(usize, usize)> {
        if even < 4 || even % 2 != 0 {
            return Err(Error::Config(format!(
                "Goldbach decomposition needs an even number >= 4, got {even}"
            )));
        }
        if even > self.limit() {
            return Err(Error::Config(format!(
                "{even} exceeds prime table limit {}",
                self.limit()
            )));
        }
        (2..=even / 2)
            .find(|&p| self.is_prime(p) && self.is_prime(even - p))
            .map(|p| (p, even - p))
            .ok_or_else(|| Error::Verification(format!("no prime pair sums to {even}")))
    }
}

/// Primes `<= n`, ascending.
pub fn sieve_primes(n: usize) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::Config(format!("sieve bound must be >= 2, got {n}")));
    }
    Ok(PrimeTable::new(n).primes())
}

pub fn goldbach_pair(even: usize) -> Result<(usize, usize)> {
    PrimeTable::new(even.max(4)).goldbach_pair(even)
}

/// Checks every even number in `[4, upper]`; returns how many were decomposed.
pub fn verify_goldbach(upper: usize) -> Result<usize> {
    let table = PrimeTable::new(upper.max(4));
    let mut checked = 0;
    for e in (4..=upper).step_by(2) {
        table.goldbach_pair(e)?;
        checked += 1;
    }
    Ok(checked)
}

/// Receptive field of a stride-1 stack: `1 + sum(k_i - 1)`.
pub fn receptive_field(kernels: &[usize]) -> Result<usize> {
    if kernels.is_empty() {
        return Err(Error::Config("receptive field of an empty stack".into()));
    }
    if kernels.contains(&0) {
        return Err(Error::Config("kernel sizes must be >= 1".into()));
    }
    Ok(1 + kernels.iter().map(|k| k - 1).sum::<usize>())
}

/// Kernel sets `(P1, P2, P3)` for a given largest prime.
///
/// With `literal_last_layer` the third layer uses `{2}` only, which leaves
/// some scales unreachable; the default `{1, 2}` does not.
pub fn build_kernel_sets(p_k: usize, literal_last_layer: bool) -> Result<[Vec<usize>; 3]> {
    if !PrimeTable::new(p_k.max(2)).is_prime(p_k) {
        return Err(Error::Config(format!("{p_k} is not prime")));
    }
    let mut first = vec![1, 2];
    first.extend(sieve_primes(p_k)?.into_iter().filter(|&p| p > 2));
    let last = if literal_last_layer { vec![2] } else { vec![1, 2] };
    Ok([first.clone(), first, last])
}

/// All path receptive fields `k1 + k2 + k3 - 2`, sorted and deduplicated.
pub fn coverage_set(p1: &[usize], p2: &[usize], p3: &[usize]) -> Vec<usize> {
    let mut set = BTreeSet::new();
    for &a in p1 {
        for &b in p2 {
            for &c in p3 {
                set.insert(a + b + c - 2);
            }
        }
    }
    set.into_iter().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlannerConfig {
    pub rf_cap: usize,
    pub literal_last_layer: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            rf_cap: DEFAULT_RF_CAP,
            literal_last_layer: false,
        }
    }
}

/// Kernel sizes of one OS-Block path, first layer first.
pub type Path = [usize; 3];

pub fn path_rf(path: &Path) -> usize {
    path.iter().sum::<usize>() - 2
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelPlan {
    pub p_k: usize,
    pub layer_sets: [Vec<usize>; 3],
    /// `P1 x P2 x P3` in lexicographic order.
    pub paths: Vec<Path>,
    pub coverage: Vec<usize>,
    pub target_rf: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoverageReport {
    pub ok: bool,
    pub missing: Vec<usize>,
}

impl KernelPlan {
    pub fn new(p_k: usize, target_rf: usize, literal_last_layer: bool) -> Result<Self> {
        let layer_sets = build_kernel_sets(p_k, literal_last_layer)?;
        let [p1, p2, p3] = &layer_sets;
        let mut paths = Vec::with_capacity(p1.len() * p2.len() * p3.len());
        for &a in p1 {
            for &b in p2 {
                for &c in p3 {
                    paths.push([a, b, c]);
                }
            }
        }
        let coverage = coverage_set(p1, p2, p3);
        Ok(Self {
            p_k,
            layer_sets,
            paths,
            coverage,
            target_rf,
        })
    }

    pub fn verify(&self) -> CoverageReport {
        let missing: Vec<usize> = (1..=self.target_rf)
            .filter(|n| self.coverage.binary_search(n).is_err())
            .collect();
        CoverageReport {
            ok: missing.is_empty(),
            missing,
        }
    }

    /// First path (in path order) whose receptive field is `rf`.
    pub fn witness(&self, rf: usize) -> Option<Path> {
        self.paths.iter().copied().find(|p| path_rf(p) == rf)
    }

    /// One line per target scale: `RF <n>: <k1>-<k2>-<k3>`.
    pub fn certificate(&self) -> Vec<String> {
        (1..=self.target_rf)
            .map(|n| match self.witness(n) {
                Some([a, b, c]) => format!("RF {n}: {a}-{b}-{c}"),
                None => format!("RF {n}: MISSING"),
            })
            .collect()
    }
}

pub fn verify_coverage(plan: &KernelPlan) -> CoverageReport {
    plan.verify()
}

/// Smallest prime whose kernel sets cover every receptive field in
/// `[1, min(series_length, rf_cap)]`.
pub fn select_pk(series_length: usize, cfg: &PlannerConfig) -> Result<KernelPlan> {
    if series_length < 2 {
        return Err(Error::Config(format!(
            "series length must be >= 2, got {series_length}"
        )));
    }
    if cfg.rf_cap == 0 {
        return Err(Error::Config("rf_cap must be >= 1".into()));
    }
    let target = series_length.min(cfg.rf_cap);
    // A prime above target + 1 only adds receptive fields above the target.
    let candidates = sieve_primes(target + 2)?;
    let mut last = None;
    for p in candidates {
        let plan = KernelPlan::new(p, target, cfg.literal_last_layer)?;
        if plan.verify().ok {
            return Ok(plan);
        }
        last = Some(plan);
    }
    let missing = last.map(|p| p.verify().missing).unwrap_or_default();
    Err(Error::Verification(format!(
        "no prime kernel plan covers [1, {target}]; missing {missing:?}"
    )))
}

impl fmt::Display for KernelPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "p_k {}", self.p_k)?;
        for (i, set) in self.layer_sets.iter().enumerate() {
            let items: Vec<String> = set.iter().map(ToString::to_string).collect();
            writeln!(f, "P{} [{}]", i + 1, items.join(","))?;
        }
        writeln!(f, "paths {}", self.paths.len())?;
        write!(f, "target_rf {}", self.target_rf)
    }
}

/// Maps OS-Block output channels back to the path that produced them.
///
/// Path `i` owns channels `[i * F, (i + 1) * F)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathAttribution {
    pub filters_per_path: usize,
    pub entries: Vec<(Path, usize)>,
}

impl PathAttribution {
    pub fn new(plan: &KernelPlan, filters_per_path: usize) -> Self {
        Self {
            filters_per_path,
            entries: plan.paths.iter().map(|p| (*p, path_rf(p))).collect(),
        }
    }

    pub fn total_channels(&self) -> usize {
        self.entries.len() * self.filters_per_path
    }

    pub fn channels(&self, path_index: usize) -> std::ops::Range<usize> {
        let f = self.filters_per_path;
        path_index * f..(path_index + 1) * f
    }

    pub fn path_of_channel(&self, channel: usize) -> Option<Path> {
        self.entries
            .get(channel / self.filters_per_path.max(1))
            .map(|e| e.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sieve_examples() {
        assert_eq!(sieve_primes(10).unwrap(), vec![2, 3, 5, 7]);
        assert_eq!(sieve_primes(2).unwrap(), vec![2]);
        assert_eq!(sieve_primes(100).unwrap().len(), 25);
        assert!(sieve_primes(1).is_err());
    }

    #[test]
    fn goldbach_examples() {
        assert_eq!(goldbach_pair(4).unwrap(), (2, 2));
        assert_eq!(goldbach_pair(10).unwrap(), (3, 7));
        assert!(goldbach_pair(9).is_err());
        assert!(goldbach_pair(2).is_err());
    }

    #[test]
    fn receptive_field_examples() {
        assert_eq!(receptive_field(&[3, 3, 3, 3]).unwrap(), 9);
        assert_eq!(receptive_field(&[11]).unwrap(), 11);
        assert_eq!(receptive_field(&[1, 1, 2]).unwrap(), 2);
        assert!(receptive_field(&[]).is_err());
        assert!(receptive_field(&[0, 3]).is_err());
    }

    #[test]
    fn kernel_set_examples() {
        let [p1, p2, p3] = build_kernel_sets(7, false).unwrap();
        assert_eq!(p1, vec![1, 2, 3, 5, 7]);
        assert_eq!(p2, p1);
        assert_eq!(p3, vec![1, 2]);
        assert_eq!(build_kernel_sets(2, false).unwrap()[0], vec![1, 2]);
        assert_eq!(build_kernel_sets(13, false).unwrap()[0].len(), 7);
        assert_eq!(build_kernel_sets(7, true).unwrap()[2], vec![2]);
        assert!(build_kernel_sets(9, false).is_err());
    }

    #[test]
    fn coverage_examples() {
        let small = coverage_set(&[1, 2], &[1, 2], &[1, 2]);
        assert_eq!(small, vec![1, 2, 3, 4]);
        assert_eq!(coverage_set(&[1], &[1], &[1]), vec![1]);
        let seven = coverage_set(&[1, 2, 3, 5, 7], &[1, 2, 3, 5, 7], &[1, 2]);
        assert_eq!(seven, (1..=14).collect::<Vec<_>>());
    }

    #[test]
    fn select_pk_examples() {
        let cfg = PlannerConfig {
            rf_cap: 14,
            ..PlannerConfig::default()
        };
        assert_eq!(select_pk(100, &cfg).unwrap().p_k, 7);
        assert_eq!(select_pk(4, &cfg).unwrap().p_k, 2);
        assert_eq!(select_pk(2, &cfg).unwrap().p_k, 2);
        assert!(select_pk(1, &cfg).is_err());
    }

    #[test]
    fn verify_examples() {
        let plan = KernelPlan::new(7, 14, false).unwrap();
        assert_eq!(verify_coverage(&plan), CoverageReport { ok: true, missing: vec![] });
        let plan = KernelPlan::new(5, 14, false).unwrap();
        let report = plan.verify();
        assert!(!report.ok);
        assert!(report.missing.contains(&11) || report.missing.contains(&13));
        let plan = KernelPlan::new(3, 1, false).unwrap();
        assert!(plan.verify().ok);
    }

    #[test]
    fn literal_last_layer_misses_scales() {
        let plan = KernelPlan::new(7, 14, true).unwrap();
        assert!(plan.verify().missing.contains(&1));
        assert!(select_pk(30, &PlannerConfig { rf_cap: 48, literal_last_layer: true }).is_err());
    }

    #[test]
    fn certificate_lines() {
        let plan = KernelPlan::new(2, 4, false).unwrap();
        assert_eq!(
            plan.certificate(),
            vec!["RF 1: 1-1-1", "RF 2: 1-1-2", "RF 3: 1-2-2", "RF 4: 2-2-2"]
        );
    }

    #[test]
    fn attribution_covers_all_channels() {
        let plan = KernelPlan::new(2, 4, false).unwrap();
        let attr = PathAttribution::new(&plan, 3);
        assert_eq!(attr.total_channels(), 24);
        assert_eq!(attr.channels(2), 6..9);
        assert_eq!(attr.path_of_channel(7), Some(plan.paths[2]));
        assert_eq!(attr.path_of_channel(24), None);
    }
}
