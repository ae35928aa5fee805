use std::collections::BTreeSet;

use adafsnet::plan::{
    KernelPlan, PlannerConfig, build_kernel_sets, coverage_set, goldbach_pair, receptive_field, select_pk,
    sieve_primes, verify_goldbach,
};
use proptest::prelude::*;

fn is_prime(n: usize) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0)
}

fn primes_upto(n: usize) -> Vec<usize> {
    (2..=n).filter(|&p| is_prime(p)).collect()
}

/// {1, 2} and the odd primes up to `p`.
fn oracle_set(p: usize) -> Vec<usize> {
    let mut s = vec![1, 2];
    s.extend(primes_upto(p).into_iter().filter(|q| q % 2 == 1));
    s
}

fn oracle_coverage(p1: &[usize], p2: &[usize], p3: &[usize]) -> Vec<usize> {
    let mut out = BTreeSet::new();
    for a in p1 {
        for b in p2 {
            for c in p3 {
                out.insert(a + b + c - 2);
            }
        }
    }
    out.into_iter().collect()
}

#[test]
fn sieve_matches_trial_division() {
    assert_eq!(sieve_primes(10).unwrap(), vec![2, 3, 5, 7]);
    assert_eq!(sieve_primes(2).unwrap(), vec![2]);
    assert_eq!(sieve_primes(100).unwrap().len(), 25);
    assert_eq!(sieve_primes(5000).unwrap(), primes_upto(5000));
    assert!(sieve_primes(1).is_err());
}

#[test]
fn goldbach_pairs_are_smallest() {
    assert_eq!(goldbach_pair(4).unwrap(), (2, 2));
    assert_eq!(goldbach_pair(10).unwrap(), (3, 7));
    for e in (4..=2000).step_by(2) {
        let (p, q) = goldbach_pair(e).unwrap();
        assert_eq!(p + q, e);
        assert!(is_prime(p) && is_prime(q) && p <= q);
        let smallest = (2..=e / 2).find(|&a| is_prime(a) && is_prime(e - a)).unwrap();
        assert_eq!(p, smallest);
    }
    assert!(goldbach_pair(7).is_err());
    assert!(goldbach_pair(2).is_err());
}

#[test]
fn goldbach_exhaustive_to_20000() {
    assert_eq!(verify_goldbach(20000).unwrap(), (20000 - 4) / 2 + 1);
}

/// Pairs drawn only from primes <= p_k do not reach every even number up to
/// 2 p_k: 2 p_k - 2 needs p_k - 2 to be prime as well.
#[test]
fn goldbach_within_kernel_primes_has_gaps() {
    let within = |p_k: usize, e: usize| {
        let primes = primes_upto(p_k);
        primes.iter().any(|&a| a < e && primes.contains(&(e - a)))
    };
    for p_k in [5, 7, 13, 19] {
        assert!((4..=2 * p_k).step_by(2).all(|e| within(p_k, e)), "p_k={p_k}");
    }
    assert!(!within(11, 20));
    assert!(!within(17, 32));
    assert!(goldbach_pair(20).is_ok());
}

#[test]
fn receptive_field_examples() {
    assert_eq!(receptive_field(&[3, 3, 3, 3]).unwrap(), 9);
    assert_eq!(receptive_field(&[7]).unwrap(), 7);
    assert_eq!(receptive_field(&[1, 1, 2]).unwrap(), 2);
    assert!(receptive_field(&[]).is_err());
}

#[test]
fn coverage_equals_brute_force_for_primes_to_97() {
    for p_k in primes_upto(97) {
        let [p1, p2, p3] = build_kernel_sets(p_k, false).unwrap();
        assert_eq!(p1, oracle_set(p_k));
        assert_eq!(p2, p1);
        assert_eq!(p3, vec![1, 2]);
        assert_eq!(coverage_set(&p1, &p2, &p3), oracle_coverage(&p1, &p2, &[1, 2]), "p_k={p_k}");
    }
}

#[test]
fn full_range_to_twice_p_k_only_for_some_primes() {
    let missing = |p_k: usize| {
        let [p1, p2, p3] = build_kernel_sets(p_k, false).unwrap();
        let cov = coverage_set(&p1, &p2, &p3);
        (1..=2 * p_k).filter(|n| !cov.contains(n)).collect::<Vec<_>>()
    };
    for p_k in [5, 7, 13, 19] {
        assert_eq!(missing(p_k), Vec::<usize>::new());
    }
    assert_eq!(missing(11), vec![19, 20]);
    assert_eq!(missing(17), vec![31, 32]);
    assert_eq!(missing(29), vec![43, 44, 49, 50, 53, 54, 55, 56]);
}

#[test]
fn p7_covers_exactly_one_to_fourteen() {
    let [p1, p2, p3] = build_kernel_sets(7, false).unwrap();
    assert_eq!(coverage_set(&p1, &p2, &p3), (1..=14).collect::<Vec<_>>());
    let plan = KernelPlan::new(7, 14, false).unwrap();
    assert_eq!(plan.paths.len(), 50);
    assert!(plan.verify().ok);
}

#[test]
fn p5_fails_target_fourteen() {
    let plan = KernelPlan::new(5, 14, false).unwrap();
    let report = plan.verify();
    assert!(!report.ok);
    assert_eq!(report.missing, vec![11, 12, 13, 14]);
    assert!(!report.missing.is_empty());
}

#[test]
fn coverage_is_monotone_in_p_k() {
    let primes = primes_upto(97);
    for pair in primes.windows(2) {
        let [a1, a2, a3] = build_kernel_sets(pair[0], false).unwrap();
        let [b1, b2, b3] = build_kernel_sets(pair[1], false).unwrap();
        let small: BTreeSet<_> = coverage_set(&a1, &a2, &a3).into_iter().collect();
        let large: BTreeSet<_> = coverage_set(&b1, &b2, &b3).into_iter().collect();
        assert!(small.is_subset(&large));
    }
}

#[test]
fn select_pk_examples() {
    let cfg = PlannerConfig { rf_cap: 1000, literal_last_layer: false };
    assert_eq!(select_pk(14, &cfg).unwrap().p_k, 7);
    assert_eq!(select_pk(4, &cfg).unwrap().p_k, 2);
    assert_eq!(select_pk(2, &cfg).unwrap().p_k, 2);
    let capped = select_pk(500, &PlannerConfig::default()).unwrap();
    assert_eq!(capped.target_rf, 48);
    assert!(select_pk(1, &cfg).is_err());
}

#[test]
fn literal_last_layer_reading() {
    let [_, _, p3] = build_kernel_sets(7, true).unwrap();
    assert_eq!(p3, vec![2]);
    let plan = KernelPlan::new(7, 14, true).unwrap();
    assert!(plan.verify().missing.contains(&1));
}

#[test]
fn certificate_paths_reach_each_rf() {
    let plan = select_pk(30, &PlannerConfig::default()).unwrap();
    let lines = plan.certificate();
    assert_eq!(lines.len(), 30);
    for (i, line) in lines.iter().enumerate() {
        let (head, path) = line.split_once(": ").unwrap();
        assert_eq!(head, format!("RF {}", i + 1));
        let ks: Vec<usize> = path.split('-').map(|k| k.parse().unwrap()).collect();
        assert_eq!(receptive_field(&ks).unwrap(), i + 1);
    }
}

proptest! {
    #[test]
    fn select_pk_is_minimal(target in 2usize..120) {
        let cfg = PlannerConfig { rf_cap: target, literal_last_layer: false };
        let plan = select_pk(target.max(2), &cfg).unwrap();
        prop_assert!(plan.verify().ok);
        let cov = oracle_coverage(&oracle_set(plan.p_k), &oracle_set(plan.p_k), &[1, 2]);
        prop_assert!((1..=target).all(|n| cov.contains(&n)));
        for smaller in primes_upto(plan.p_k - 1) {
            let cov = oracle_coverage(&oracle_set(smaller), &oracle_set(smaller), &[1, 2]);
            prop_assert!(!(1..=target).all(|n| cov.contains(&n)), "p={smaller} also covers {target}");
        }
    }

    #[test]
    fn paths_are_the_full_product(p_idx in 0usize..25) {
        let p_k = primes_upto(97)[p_idx];
        let plan = KernelPlan::new(p_k, 1, false).unwrap();
        let set: BTreeSet<_> = plan.paths.iter().collect();
        prop_assert_eq!(set.len(), plan.paths.len());
        prop_assert_eq!(plan.paths.len(), plan.layer_sets[0].len() * plan.layer_sets[1].len() * plan.layer_sets[2].len());
    }
}
