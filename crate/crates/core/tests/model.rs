use adafsnet::model::*;
use adafsnet::plan::{KernelPlan, Path};
use adafsnet::{Adam, Parameter, Tape, TargetDropConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn plan() -> KernelPlan {
    KernelPlan::new(2, 4, false).unwrap()
}

fn small_plan() -> KernelPlan {
    KernelPlan::new(5, 10, false).unwrap()
}

fn cfg(f: usize) -> ModelConfig {
    ModelConfig {
        filters_per_path: f,
        growth_rate: 2,
        num_classes: 3,
        dense_kernel_count: 2,
        targetdrop: TargetDropConfig { reduction_ratio: 2, ..Default::default() },
        ..Default::default()
    }
}

fn random_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn eval_logits(model: &AdaFsNet<f64>, x: &Tensor<f64>) -> Vec<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = model.forward(&mut tape, v, Mode::Eval).unwrap();
    tape.value(out.logits).to_f64()
}

fn randomize_bn(model: &mut AdaFsNet<f64>, rng: &mut ChaCha8Rng) {
    for (_, buf) in model.named_buffers_mut() {
        for v in buf.iter_mut() {
            *v = rng.random_range(0.5..1.5);
        }
    }
}

#[test]
fn path_count_and_channels() {
    let model = AdaFsNet::<f64>::build(&plan(), &cfg(1), 0).unwrap();
    assert_eq!(model.plan.paths.len(), 8);
    assert_eq!(model.os_channels(), 8);
    let model = AdaFsNet::<f64>::build(&small_plan(), &cfg(3), 0).unwrap();
    assert_eq!(model.os_channels(), model.plan.paths.len() * 3);
    for c in 0..model.os_channels() {
        assert!(model.attribution.path_of_channel(c).is_some());
    }
}

#[test]
fn dense_connectivity_structure() {
    let model = AdaFsNet::<f64>::build(&small_plan(), &cfg(1), 0).unwrap();
    let c0 = model.os_channels();
    for (b, block) in model.dense.iter().enumerate() {
        let cin = c0 + b * 8 * 2;
        assert_eq!(block.in_channels, cin);
        assert_eq!(block.layers.len(), 8);
        for (j, layer) in block.layers.iter().enumerate() {
            assert_eq!(layer.conv.weight.shape()[1], cin + j * 2);
            assert_eq!(layer.conv.out_channels(), 2);
        }
        assert_eq!(block.out_channels(), cin + 16);
    }
    assert_eq!(model.dense_kernels()[0], vec![1, 2, 3, 5, 1, 2, 3, 5]);
}

#[test]
fn output_shape_and_eval_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = AdaFsNet::<f64>::build(&small_plan(), &cfg(2), 4).unwrap();
    for (b, w) in [(1, 5), (3, 17), (2, 40)] {
        let x = random_input(&mut rng, &[b, 1, w]);
        let a = eval_logits(&model, &x);
        assert_eq!(a.len(), b * 3);
        assert_eq!(a, eval_logits(&model, &x));
    }
}

#[test]
fn multivariate_input_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = AdaFsNet::<f64>::build(&plan(), &ModelConfig { input_dims: 3, ..cfg(1) }, 0).unwrap();
    assert_eq!(model.os_block[0].units[0].conv.weight.shape()[1], 3);
    assert_eq!(eval_logits(&model, &random_input(&mut rng, &[2, 3, 9])).len(), 6);
}

#[test]
fn receptive_field_audit() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut model = AdaFsNet::<f64>::build(&small_plan(), &cfg(2), 0).unwrap();
    randomize_bn(&mut model, &mut rng);
    let w = 40;
    let x = random_input(&mut rng, &[1, 1, w]);
    let t = 20;
    let paths = |input: &Tensor<f64>| {
        let mut tape = Tape::new();
        let v = tape.constant(input.clone());
        let out = model.forward(&mut tape, v, Mode::Eval).unwrap();
        out.trace.path_outputs.iter().map(|&p| tape.value(p).to_f64()).collect::<Vec<_>>()
    };
    let full = paths(&x);
    for (i, stack) in model.os_block.iter().enumerate() {
        let path: Path = stack.path;
        let left: usize = path.iter().map(|k| (k - 1) / 2).sum();
        let right: usize = path.iter().map(|k| k - 1 - (k - 1) / 2).sum();
        assert_eq!(left + right + 1, adafsnet::plan::path_rf(&path));
        let mut windowed = x.clone();
        for (s, v) in windowed.data_mut().iter_mut().enumerate() {
            if s + left < t || s > t + right {
                *v = 0.0;
            }
        }
        let cut = paths(&windowed);
        for f in 0..2 {
            assert_eq!(full[i][f * w + t], cut[i][f * w + t], "path {path:?}");
        }
    }
}

#[test]
fn residual_passes_through_when_dense_features_vanish() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = AdaFsNet::<f64>::build(&small_plan(), &cfg(1), 0).unwrap();
    for layer in &mut model.dense[0].layers {
        layer.bn.scale = Parameter::filled(layer.bn.scale.shape(), 0.0);
        layer.bn.shift = Parameter::filled(layer.bn.shift.shape(), 0.0);
    }
    let x = random_input(&mut rng, &[2, 1, 12]);
    let mut tape = Tape::new();
    let v = tape.constant(x);
    let out = model.forward(&mut tape, v, Mode::Train).unwrap();
    let tr = &out.trace;
    let cin = model.os_channels();
    let block2 = tape.value(tr.block2_input.unwrap()).to_f64();
    let residual = tape.value(tr.residual.unwrap()).to_f64();
    let dense1 = tape.value(tr.dense1_output.unwrap()).to_f64();
    let td = tape.value(tr.targetdrop_output).to_f64();
    let ch = model.dense[0].out_channels();
    for b in 0..2 {
        for c in 0..ch {
            for t in 0..12 {
                let i = (b * ch + c) * 12 + t;
                if c < cin {
                    assert_eq!(dense1[i], td[(b * cin + c) * 12 + t]);
                    assert_eq!(block2[i], dense1[i] + residual[i]);
                } else {
                    assert_eq!(dense1[i], 0.0);
                    assert_eq!(block2[i], residual[i]);
                }
            }
        }
    }
}

#[test]
fn disabled_targetdrop_is_identity_in_train_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = AdaFsNet::<f64>::build(&small_plan(), &ModelConfig { enable_targetdrop: false, ..cfg(2) }, 0).unwrap();
    assert!(model.targetdrop.is_none());
    let x = random_input(&mut rng, &[3, 1, 15]);
    let run = |mode| {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = model.forward(&mut tape, v, mode).unwrap();
        assert!(out.masks.is_empty() && out.attention.is_none());
        assert_eq!(out.trace.targetdrop_output, out.trace.os_output);
        tape.value(out.logits).data().to_vec()
    };
    assert_eq!(run(Mode::Train), run(Mode::Train));
    run(Mode::Eval);
}

#[test]
fn ablation_variants_build() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_input(&mut rng, &[2, 1, 10]);
    for blocks in 0..=2 {
        for td in [true, false] {
            let model = AdaFsNet::<f64>::build(&plan(), &ModelConfig { dense_block_count: blocks, enable_targetdrop: td, ..cfg(1) }, 0).unwrap();
            assert_eq!(model.dense.len(), blocks);
            assert_eq!(model.projection.is_some(), blocks > 0);
            let head_in = model.os_channels() + blocks * 16;
            assert_eq!(model.head.weight.shape(), &[3, head_in]);
            assert_eq!(eval_logits(&model, &x).len(), 6);
        }
    }
    assert!(AdaFsNet::<f64>::build(&plan(), &ModelConfig { dense_block_count: 3, ..cfg(1) }, 0).is_err());
}

#[test]
fn gradient_reaches_every_parameter() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let build = |seed| AdaFsNet::<f64>::build(&small_plan(), &cfg(2), seed).unwrap();
    let names: Vec<String> = build(0).named_parameters().into_iter().map(|(n, _)| n).collect();
    let mut touched = vec![false; names.len()];
    for trial in 0..10 {
        let mut m = build(trial);
        let x = random_input(&mut rng, &[4, 1, 16]).map(|v| 3.0 * v);
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let out = m.forward(&mut tape, v, Mode::Train).unwrap();
        let loss = tape.softmax_cross_entropy(out.logits, &labels).unwrap();
        let grads = tape.backward(loss).unwrap();
        for (i, (_, p)) in m.named_parameters_mut().into_iter().enumerate() {
            p.accumulate(&tape, &grads);
            touched[i] |= p.grad.iter().any(|&g| g != 0.0);
        }
    }
    let missing: Vec<&String> = names.iter().zip(&touched).filter(|(_, t)| !**t).map(|(n, _)| n).collect();
    assert!(missing.is_empty(), "{missing:?}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut model = AdaFsNet::<f64>::build(&small_plan(), &cfg(2), 9).unwrap();
    randomize_bn(&mut model, &mut rng);
    model.respecialize_dense_blocks(&[5, 3], 1).unwrap();
    let bytes = encode_checkpoint(&model);
    assert_eq!(checkpoint_precision(&bytes).unwrap(), "f64");
    let back = decode_checkpoint::<f64>(&bytes).unwrap();
    assert_eq!(encode_checkpoint(&back), bytes);
    assert_eq!(back.preserved_kernels, Some(vec![5, 3]));
    assert_eq!(back.dense_kernels(), model.dense_kernels());
    for ((na, pa), (nb, pb)) in model.named_parameters().into_iter().zip(back.named_parameters()) {
        assert_eq!(na, nb);
        let a: Vec<u64> = pa.tensor.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = pb.tensor.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
    let x = random_input(&mut rng, &[2, 1, 11]);
    assert_eq!(eval_logits(&model, &x), eval_logits(&back, &x));

    let mut bad = bytes.clone();
    bad.truncate(bytes.len() - 3);
    assert!(decode_checkpoint::<f64>(&bad).is_err());
    assert!(decode_checkpoint::<f32>(&bytes).is_ok());
}

#[test]
fn parameter_count_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(Conv1d::<f64>::new(1, 1, 3, &mut rng).weight.len() + 1, 4);
    let p = small_plan();
    let count = |f| AdaFsNet::<f64>::build(&p, &cfg(f), 0).unwrap().parameter_count();
    let os_weights = |f| {
        let m = AdaFsNet::<f64>::build(&p, &cfg(f), 0).unwrap();
        m.os_block.iter().flat_map(|s| &s.units).map(|u| u.conv.weight.len()).sum::<usize>()
    };
    assert!(count(1) < count(2) && count(2) < count(4));
    assert!(os_weights(4) > 2 * os_weights(2));

    let mut model = AdaFsNet::<f64>::build(&p, &cfg(2), 0).unwrap();
    let before = model.parameter_count();
    let x = random_input(&mut rng, &[2, 1, 8]);
    eval_logits(&model, &x);
    assert_eq!(model.parameter_count(), before);
    let outside_dense = |m: &AdaFsNet<f64>| {
        m.named_parameters().iter().filter(|(n, _)| !n.starts_with("dense")).map(|(_, p)| p.len()).sum::<usize>()
    };
    let kept = outside_dense(&model);
    model.respecialize_dense_blocks(&[5], 3).unwrap();
    assert_eq!(outside_dense(&model), kept);
    assert_ne!(model.parameter_count(), before);
}

#[test]
fn toy_loss_decreases() {
    let model_cfg = ModelConfig { num_classes: 2, ..cfg(1) };
    let mut model = AdaFsNet::<f64>::build(&plan(), &model_cfg, 0).unwrap();
    let (b, w) = (8, 12);
    let data: Vec<f64> = (0..b).flat_map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }; w]).collect();
    let labels: Vec<usize> = (0..b).map(|i| i % 2).collect();
    let x = Tensor::from_vec(&[b, 1, w], data).unwrap();
    let adam = Adam::with_lr(0.01);
    let mut losses = Vec::new();
    for _ in 0..50 {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = model.forward(&mut tape, v, Mode::Train).unwrap();
        let loss = tape.softmax_cross_entropy(out.logits, &labels).unwrap();
        losses.push(tape.value(loss).item());
        let grads = tape.backward(loss).unwrap();
        for p in model.parameters_mut() {
            p.accumulate(&tape, &grads);
        }
        adam.step(model.parameters_mut());
        model.apply_bn_updates(out.bn_updates);
    }
    let first: f64 = losses[..5].iter().sum::<f64>() / 5.0;
    let last: f64 = losses[45..].iter().sum::<f64>() / 5.0;
    assert!(last < 0.5 * first, "{first} -> {last}");
}
