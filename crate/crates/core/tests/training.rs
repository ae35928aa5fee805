use adafsnet::data::Sample;
use adafsnet::model::{Mode, encode_checkpoint};
use adafsnet::plan::{PlannerConfig, select_pk};
use adafsnet::train::*;
use adafsnet::{AdaFsNet, ModelConfig, Split, Tape, TargetDropConfig, TimeSeriesDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Balanced classes; class `c` is a noisy sine with frequency `c + 1`.
fn synthetic(n: usize, classes: usize, width: usize, seed: u64) -> TimeSeriesDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let label = i % classes;
            let f = (label + 1) as f64;
            let values = (0..width)
                .map(|t| (f * t as f64 * std::f64::consts::TAU / width as f64).sin() + rng.random_range(-0.3..0.3))
                .collect();
            Sample { values: vec![values], label, constant: vec![false] }
        })
        .collect();
    TimeSeriesDataset {
        name: format!("synthetic{seed}"),
        samples,
        width,
        dims: 1,
        class_names: (0..classes).map(|c| format!("c{c}")).collect(),
        split: Split::Train,
    }
}

fn small_model() -> ModelConfig {
    ModelConfig {
        filters_per_path: 1,
        growth_rate: 2,
        dense_kernel_count: 2,
        targetdrop: TargetDropConfig { reduction_ratio: 2, ..Default::default() },
        ..Default::default()
    }
}

fn small_experiment(epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        planner: PlannerConfig { rf_cap: 8, ..Default::default() },
        model: small_model(),
        train: TrainConfig { max_epochs: epochs, warmup_epochs: 2.min(epochs), batch_size: 4, ..Default::default() },
    }
}

fn build(data: &TimeSeriesDataset, cfg: ModelConfig, seed: u64) -> AdaFsNet<f64> {
    let plan = select_pk(data.width, &PlannerConfig { rf_cap: 8, ..Default::default() }).unwrap();
    let cfg = ModelConfig { num_classes: data.num_classes(), ..cfg };
    AdaFsNet::build(&plan, &cfg, seed).unwrap()
}

#[test]
fn fixed_seed_reproduces_history_bitwise() {
    let data = synthetic(12, 2, 16, 1);
    let cfg = small_experiment(5);
    let a = run_experiment::<f64>(&data, &data, &cfg, |_| {}).unwrap();
    let b = run_experiment::<f64>(&data, &data, &cfg, |_| {}).unwrap();
    let bits = |h: &[EpochRecord]| h.iter().map(|r| (r.loss.to_bits(), r.train_accuracy.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a.outcome.history), bits(&b.outcome.history));
    assert_eq!(encode_checkpoint(&a.model), encode_checkpoint(&b.model));
    assert_eq!(a.outcome.history_csv(), b.outcome.history_csv());
    assert!(a.outcome.history_csv().starts_with("epoch,loss,train_acc\n"));
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let data = synthetic(8, 2, 12, 2);
    let mut model = build(&data, ModelConfig { dense_block_count: 0, ..small_model() }, 0);
    let before: Vec<Vec<f64>> = model.named_parameters().iter().map(|(_, p)| p.tensor.to_f64()).collect();
    let cfg = TrainConfig { lr: 0.0, batch_size: 8, max_epochs: 4, warmup_epochs: 0, ..Default::default() };
    let out = train(&mut model, &data, &cfg).unwrap();
    let after: Vec<Vec<f64>> = model.named_parameters().iter().map(|(_, p)| p.tensor.to_f64()).collect();
    assert_eq!(before, after);
    let first = out.history[0].loss;
    assert!(out.history.iter().all(|r| (r.loss - first).abs() < 1e-12));
}

#[test]
fn respecializes_exactly_once() {
    let data = synthetic(8, 2, 12, 3);
    let mut model = build(&data, small_model(), 0);
    let cfg = TrainConfig { max_epochs: 6, warmup_epochs: 3, batch_size: 4, ..Default::default() };
    let out = train(&mut model, &data, &cfg).unwrap();
    assert_eq!(out.respecialized_at, Some(3));
    assert_eq!(model.preserved_kernels, out.preserved_kernels);
    assert_eq!(out.history.len(), 6);

    let mut flat = build(&data, ModelConfig { dense_block_count: 0, ..small_model() }, 0);
    let out = train(&mut flat, &data, &cfg).unwrap();
    assert_eq!(out.respecialized_at, None);
    assert!(flat.preserved_kernels.is_none());
}

#[test]
fn fresh_model_first_batch_loss_near_log_c() {
    for classes in [2, 3, 5] {
        let data = synthetic(4 * classes, classes, 20, classes as u64);
        for seed in 0..5 {
            let model = build(&data, small_model(), seed);
            let mut tape = Tape::new();
            let idx: Vec<&[Vec<f64>]> = data.samples[..16.min(data.len())].iter().map(|s| s.values.as_slice()).collect();
            let labels: Vec<usize> = data.samples[..idx.len()].iter().map(|s| s.label).collect();
            let x = tape.constant(adafsnet::model::batch_tensor(&idx).unwrap());
            let fwd = model.forward(&mut tape, x, Mode::Train).unwrap();
            let loss = tape.softmax_cross_entropy(fwd.logits, &labels).unwrap();
            let v = tape.value(loss).item();
            assert!((v - (classes as f64).ln()).abs() <= 0.5, "c={classes} seed={seed} loss={v}");
        }
    }
}

#[test]
fn untrained_accuracy_near_chance() {
    for classes in [2, 4] {
        let data = synthetic(40, classes, 16, 7);
        let mean: f64 = (0..20)
            .map(|seed| evaluate(&build(&data, small_model(), seed), &data).unwrap().accuracy())
            .sum::<f64>()
            / 20.0;
        assert!((mean - 1.0 / classes as f64).abs() <= 0.15, "c={classes}: {mean}");
    }
}

#[test]
fn evaluation_examples() {
    let e = Evaluation { correct: 9, total: 10, predictions: vec![] };
    assert!((e.accuracy() - 0.9).abs() < 1e-15);
    assert!((e.error() + e.accuracy() - 1.0).abs() < 1e-15);
    assert_eq!(Evaluation { correct: 4, total: 4, predictions: vec![] }.accuracy(), 1.0);
    assert_eq!(argmax(&[0.3, 0.7, 0.7]), 1);
}

#[test]
fn metric_identities_on_synthetic_table() {
    let errors = [0.2, 0.1, 0.0, 0.5, 0.25];
    let classes = [4, 2, 3, 1, 5];
    let rows: Vec<ReportRow> = errors.iter().zip(classes).enumerate().map(|(i, (&e, c))| ReportRow::from_error(format!("d{i}"), e, c)).collect();
    let pces = [0.05, 0.05, 0.0, 0.5, 0.05];
    for (r, p) in rows.iter().zip(pces) {
        assert_eq!(r.pce, p);
        assert_eq!(r.error + r.accuracy, 1.0);
        assert!(r.pce <= r.error);
    }
    let report = RunReport { rows, fingerprint: "f".into(), seconds: 0.0 };
    assert_eq!(report.mpce().unwrap(), (0.05 + 0.05 + 0.0 + 0.5 + 0.05) / 5.0);
    assert_eq!(mpce(&[0.05, 0.05]).unwrap(), 0.05);
    assert_eq!(mpce(&[0.3]).unwrap(), 0.3);
    assert_eq!(pce(1.0, 1), 1.0);
    assert!(mpce(&[]).is_err());

    let csv = emit_report(&report, ReportFormat::Csv).unwrap();
    assert!(csv.starts_with("name,accuracy,error,classes,pce\n"));
    let back = parse_report_csv(&csv).unwrap();
    assert_eq!(back.rows, report.rows);
    let md = emit_report(&report, ReportFormat::Markdown).unwrap();
    assert!(md.contains("| d0 | 0.8000 | 0.2000 | 4 | 0.0500 |"), "{md}");
    assert!(md.trim_end().ends_with("| MPCE | | | | 0.1300 |"), "{md}");
}

#[test]
fn ablation_accounting() {
    let data = synthetic(8, 2, 12, 5);
    let pair = (data.clone(), TimeSeriesDataset { split: Split::Test, ..data });
    let variants = vec![Variant::new("a", true, 1), Variant::new("b", false, 1)];
    let report = run_ablation::<f64>(std::slice::from_ref(&pair), &small_experiment(3), &variants, &[0, 1], |_, _, _, _| {}).unwrap();
    assert_eq!(report.reports.len(), 2);
    assert_eq!(report.wins.iter().sum::<usize>(), 1);
    assert_eq!(report.accuracies[0][0].len(), 2);
    let table = report.win_table();
    assert!(table.lines().last().unwrap().starts_with("| wins |"), "{table}");

    assert_eq!(count_wins(&[vec![0.5, 0.9], vec![0.5, 0.9]]), vec![2, 0]);
    let same = vec![Variant::new("x", true, 0), Variant::new("y", true, 0)];
    let tied = run_ablation::<f64>(std::slice::from_ref(&pair), &small_experiment(2), &same, &[0], |_, _, _, _| {}).unwrap();
    assert_eq!(tied.accuracies[0], tied.accuracies[1]);
    assert_eq!(tied.wins, vec![1, 0]);
    assert_eq!(tied.data_fingerprints, report.data_fingerprints);
}

#[test]
fn invalid_training_configs_rejected() {
    let data = synthetic(8, 2, 12, 6);
    let mut model = build(&data, small_model(), 0);
    for cfg in [
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig { max_epochs: 3, warmup_epochs: 5, ..Default::default() },
        TrainConfig { lr: f64::NAN, ..Default::default() },
        TrainConfig { warmup_epochs: 0, max_epochs: 2, ..Default::default() },
    ] {
        assert!(train(&mut model, &data, &cfg).is_err());
    }
    let wrong = synthetic(9, 3, 12, 6);
    assert!(evaluate(&model, &wrong).is_err());
}
