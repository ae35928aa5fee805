use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::real::Real;
use crate::tape::{Gradients, Tape};
use crate::tensor::Tensor;

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

/// A trainable tensor with its gradient slot and Adam moment estimates.
#[derive(Clone, Debug)]
pub struct Parameter<T: Real = f64> {
    uid: u64,
    pub tensor: Tensor<T>,
    pub grad: Vec<T>,
    pub adam_m: Vec<T>,
    pub adam_v: Vec<T>,
    pub step_count: u64,
}

impl<T: Real> Parameter<T> {
    pub fn new(tensor: Tensor<T>) -> Self {
        let n = tensor.len();
        Self {
            uid: NEXT_UID.fetch_add(1, Ordering::Relaxed),
            tensor,
            grad: vec![T::zero(); n],
            adam_m: vec![T::zero(); n],
            adam_v: vec![T::zero(); n],
            step_count: 0,
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::lit(rng.random_range(-bound..=bound)))
            .collect();
        Self::new(Tensor::from_vec(shape, data).expect("shape product"))
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self::new(Tensor::full(shape, T::lit(value)))
    }

    /// Identity used to find this parameter's node on a tape.
    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn len(&self) -> usize {
        self.tensor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensor.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    /// Adds this parameter's gradient from a finished backward pass.
    ///
    /// Returns false when the parameter was not used on the tape.
    pub fn accumulate(&mut self, tape: &Tape<T>, grads: &Gradients<T>) -> bool {
        let mut used = false;
        for var in tape.vars_of(self.uid) {
            if let Some(g) = grads.get(var) {
                for (acc, &v) in self.grad.iter_mut().zip(g) {
                    *acc = *acc + v;
                }
                used = true;
            }
        }
        used
    }
}

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// One bias-corrected Adam update on every parameter, then clears gradients.
    pub fn step<'a, T: Real>(&self, params: impl IntoIterator<Item = &'a mut Parameter<T>>) {
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.epsilon));
        let one = T::one();
        for p in params {
            p.step_count += 1;
            let t = p.step_count as i32;
            let c1 = one - b1.powi(t);
            let c2 = one - b2.powi(t);
            let data = p.tensor.data_mut();
            for i in 0..data.len() {
                let g = p.grad[i];
                p.adam_m[i] = b1 * p.adam_m[i] + (one - b1) * g;
                p.adam_v[i] = b2 * p.adam_v[i] + (one - b2) * g * g;
                let m_hat = p.adam_m[i] / c1;
                let v_hat = p.adam_v[i] / c2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.zero_grad();
        }
    }
}
