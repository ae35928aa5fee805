//! Central-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::targetdrop::{TargetDrop, TargetDropConfig, attention_map};
use crate::tensor::Tensor;

/// Central-difference step used by [`op_suite`].
pub const SUITE_EPS: f64 = 1e-6;

/// `max_i |a_i - n_i| / max(1e-8, |a_i| + |n_i|)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Central differences of a scalar function at `theta`.
pub fn numeric_gradient(
    mut f: impl FnMut(&Tensor<f64>) -> Result<f64>,
    theta: &Tensor<f64>,
    eps: f64,
) -> Result<Vec<f64>> {
    let mut probe = theta.clone();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * eps));
    }
    Ok(out)
}

/// Compares the taped gradient of `build` at `theta` with central differences.
///
/// `build` receives a fresh tape and the leaf holding `theta`, and returns the
/// scalar output node. It must be deterministic.
pub fn finite_diff_check(
    mut build: impl FnMut(&mut Tape<f64>, Var) -> Result<Var>,
    theta: &Tensor<f64>,
    eps: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let leaf = tape.leaf(theta.clone(), true);
    let out = build(&mut tape, leaf)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(leaf)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; theta.len()]);
    let numeric = numeric_gradient(
        |t| {
            let mut tape = Tape::new();
            let leaf = tape.leaf(t.clone(), true);
            let out = build(&mut tape, leaf)?;
            Ok(tape.value(out).item())
        },
        theta,
        eps,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Worst relative error seen for one operation.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub cases: usize,
    pub max_error: f64,
}

type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

/// Values in `±[0.05, 1]`, away from the ReLU kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = uniform(rng, shape, 0.05, 1.0);
    for v in t.data_mut() {
        if rng.random::<bool>() {
            *v = -*v;
        }
    }
    t
}

/// Redraws of the projection before accepting a poorly scaled gradient.
const PROJECTION_DRAWS: usize = 8;

fn projected(tape: &mut Tape<f64>, inputs: &[Tensor<f64>], i: usize, theta: Var, r: &Tensor<f64>, f: &Build<'_>) -> Result<Var> {
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(j, t)| if j == i { theta } else { tape.constant(t.clone()) })
        .collect();
    let out = f(tape, &vars)?;
    let rv = tape.constant(r.clone());
    let weighted = tape.mul(out, rv)?;
    Ok(tape.sum(weighted))
}

/// Central differences of `<r, f(inputs)>` in input `i`. The two output
/// tensors are subtracted before projecting onto `r`, which keeps outputs
/// untouched by the perturbation from adding rounding noise.
fn projected_difference(inputs: &[Tensor<f64>], i: usize, r: &Tensor<f64>, f: &Build<'_>) -> Result<Vec<f64>> {
    let eval = |theta: &Tensor<f64>| -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(j, t)| tape.constant(if j == i { theta.clone() } else { t.clone() }))
            .collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data().to_vec())
    };
    let mut probe = inputs[i].clone();
    let mut grad = Vec::with_capacity(probe.len());
    for k in 0..probe.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + SUITE_EPS;
        let up = eval(&probe)?;
        probe.data_mut()[k] = orig - SUITE_EPS;
        let down = eval(&probe)?;
        probe.data_mut()[k] = orig;
        let diff: f64 = up.iter().zip(&down).zip(r.data()).map(|((u, d), w)| (u - d) * w).sum();
        grad.push(diff / (2.0 * SUITE_EPS));
    }
    Ok(grad)
}

/// True when some gradient entry is nonzero yet tiny next to the largest, so
/// that its central difference is mostly rounding noise.
fn ill_scaled(grad: &[f64]) -> bool {
    let top = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    grad.iter().any(|g| *g != 0.0 && g.abs() < 1e-3 * top)
}

/// Checks the gradient of `<r, f(inputs)>` with respect to every input in
/// turn, for a random positive `r` drawn per input.
fn check_inputs(rng: &mut ChaCha8Rng, inputs: &[Tensor<f64>], f: &Build<'_>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let out_shape = tape.value(out).shape().to_vec();
    let mut worst = 0.0f64;
    for i in 0..inputs.len() {
        let mut r = uniform(rng, &out_shape, 0.5, 1.5);
        for _ in 1..PROJECTION_DRAWS {
            let mut tape = Tape::new();
            let theta = tape.leaf(inputs[i].clone(), true);
            let loss = projected(&mut tape, inputs, i, theta, &r, f)?;
            let grads = tape.backward(loss)?;
            if !grads.get(theta).is_some_and(ill_scaled) {
                break;
            }
            r = uniform(rng, &out_shape, 0.5, 1.5);
        }
        let mut tape = Tape::new();
        let theta = tape.leaf(inputs[i].clone(), true);
        let loss = projected(&mut tape, inputs, i, theta, &r, f)?;
        let grads = tape.backward(loss)?;
        let analytic = grads.get(theta).map_or_else(|| vec![0.0; inputs[i].len()], <[f64]>::to_vec);
        let numeric = projected_difference(inputs, i, &r, f)?;
        let err = max_relative_error(&analytic, &numeric);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn one_case(op: &'static str, rng: &mut ChaCha8Rng) -> Result<f64> {
    let b = rng.random_range(1..=3);
    let c = rng.random_range(1..=4);
    let w = rng.random_range(2..=7);
    match op {
        "conv1d" => {
            let groups = rng.random_range(1..=2);
            let cin = groups * rng.random_range(1..=2);
            let cout = groups * rng.random_range(1..=2);
            let k = rng.random_range(1..=5);
            let x = uniform(rng, &[b, cin, w], -1.0, 1.0);
            let wt = uniform(rng, &[cout, cin / groups, k], -1.0, 1.0);
            let bias = uniform(rng, &[cout], -1.0, 1.0);
            check_inputs(rng, &[x, wt, bias], &|t, v| t.conv1d_same(v[0], v[1], Some(v[2]), groups))
        }
        "batch_norm_train" => {
            // Two values per channel always normalise to ±1 (zero gradient).
            let b = b.max(2);
            let x = uniform(rng, &[b, c, w], -2.0, 2.0);
            let scale = uniform(rng, &[c], 0.5, 1.5);
            let shift = uniform(rng, &[c], -1.0, 1.0);
            check_inputs(rng, &[x, scale, shift], &|t, v| Ok(t.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0))
        }
        "batch_norm_eval" => {
            let x = uniform(rng, &[b, c, w], -2.0, 2.0);
            let scale = uniform(rng, &[c], 0.5, 1.5);
            let shift = uniform(rng, &[c], -1.0, 1.0);
            let mean = uniform(rng, &[c], -0.5, 0.5).into_data();
            let var = uniform(rng, &[c], 0.5, 2.0).into_data();
            check_inputs(rng, &[x, scale, shift], &|t, v| {
                t.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)
            })
        }
        "relu" => {
            let x = away_from_zero(rng, &[b, c, w]);
            check_inputs(rng, &[x], &|t, v| Ok(t.relu(v[0])))
        }
        "sigmoid" => {
            let x = uniform(rng, &[b, c, w], -3.0, 3.0);
            check_inputs(rng, &[x], &|t, v| Ok(t.sigmoid(v[0])))
        }
        "linear" => {
            let dout = rng.random_range(1..=4);
            let x = uniform(rng, &[b, c], -1.0, 1.0);
            let wt = uniform(rng, &[dout, c], -1.0, 1.0);
            let bias = uniform(rng, &[dout], -1.0, 1.0);
            check_inputs(rng, &[x, wt, bias], &|t, v| t.linear(v[0], v[1], Some(v[2])))
        }
        "global_avg_pool" => {
            let x = uniform(rng, &[b, c, w], -1.0, 1.0);
            check_inputs(rng, &[x], &|t, v| t.global_avg_pool(v[0]))
        }
        "concat_channels" => {
            let parts: Vec<Tensor<f64>> = (0..rng.random_range(1..=3))
                .map(|_| {
                    let ci = rng.random_range(1..=3);
                    uniform(rng, &[b, ci, w], -1.0, 1.0)
                })
                .collect();
            check_inputs(rng, &parts, &|t, v| t.concat_channels(v))
        }
        "add" => {
            let x = uniform(rng, &[b, c, w], -1.0, 1.0);
            let y = uniform(rng, &[b, c, w], -1.0, 1.0);
            check_inputs(rng, &[x, y], &|t, v| t.add(v[0], v[1]))
        }
        "mul" => {
            let x = uniform(rng, &[b, c, w], -1.0, 1.0);
            let y = uniform(rng, &[b, c, w], -1.0, 1.0);
            check_inputs(rng, &[x, y], &|t, v| t.mul(v[0], v[1]))
        }
        "scale_channels" => {
            let x = uniform(rng, &[b, c, w], -1.0, 1.0);
            let s = uniform(rng, &[b, c], 0.0, 1.0);
            check_inputs(rng, &[x, s], &|t, v| t.scale_channels(v[0], v[1]))
        }
        "mul_const" => {
            let x = uniform(rng, &[b, c, w], -1.0, 1.0);
            let factor: Vec<f64> = (0..x.len())
                .map(|_| if rng.random_bool(0.3) { 0.0 } else { 1.5 })
                .collect();
            check_inputs(rng, &[x], &|t, v| t.mul_const(v[0], factor.clone()))
        }
        "sum" => {
            let x = uniform(rng, &[b, c, w], -1.0, 1.0);
            check_inputs(rng, &[x], &|t, v| Ok(t.sum(v[0])))
        }
        "softmax_cross_entropy" => {
            let classes = rng.random_range(2..=5);
            let logits = uniform(rng, &[b, classes], -3.0, 3.0);
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
            check_inputs(rng, &[logits], &|t, v| t.softmax_cross_entropy(v[0], &labels))
        }
        "attention_map" => {
            let hidden = rng.random_range(1..=3);
            let v0 = uniform(rng, &[b, c], -1.0, 1.0);
            let w1 = away_from_zero(rng, &[hidden, c]);
            let w2 = uniform(rng, &[c, hidden], -1.0, 1.0);
            check_inputs(rng, &[v0, w1, w2], &|t, v| attention_map(t, v[0], v[1], v[2]))
        }
        "targetdrop_eval" => {
            let c = rng.random_range(1..=6);
            let td = TargetDrop::<f64>::new(c, TargetDropConfig::default(), rng);
            let u = uniform(rng, &[b, c, w], -1.0, 1.0);
            check_inputs(rng, &[u], &|t, v| Ok(td.forward(t, v[0], false)?.output))
        }
        other => unreachable!("unknown op {other}"),
    }
}

/// Every differentiable operation checked by [`op_suite`].
pub const SUITE_OPS: [&str; 16] = [
    "conv1d",
    "batch_norm_train",
    "batch_norm_eval",
    "relu",
    "sigmoid",
    "linear",
    "global_avg_pool",
    "concat_channels",
    "add",
    "mul",
    "scale_channels",
    "mul_const",
    "sum",
    "softmax_cross_entropy",
    "attention_map",
    "targetdrop_eval",
];

/// Runs `cases` randomly shaped finite-difference checks per operation.
pub fn op_suite(cases: usize, seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SUITE_OPS
        .iter()
        .map(|&op| {
            let mut max_error = 0.0f64;
            for _ in 0..cases {
                max_error = max_error.max(one_case(op, &mut rng)?);
            }
            Ok(OpCheck { op, cases, max_error })
        })
        .collect()
}
