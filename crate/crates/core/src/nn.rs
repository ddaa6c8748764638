//! Multilayer perceptrons, feature scaling and the Adam optimizer.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg;

/// Fully connected network: tanh on hidden layers, identity output.
///
/// Weights are stored row-major `out × in` per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Tape handles of one recorded network's parameters.
#[derive(Debug, Clone)]
pub struct MlpVars {
    weights: Vec<Var>,
    biases: Vec<Var>,
}

impl MlpVars {
    /// Gradient flattened in [`Mlp::params`] order; absent adjoints are zero.
    pub fn gradient(&self, g: &Gradients) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| g.wrt(w).into_iter().chain(g.wrt(b)))
            .collect()
    }
}

impl Mlp {
    /// Xavier-uniform weights and zero biases, deterministic per seed.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "network needs at least one hidden layer, got sizes {sizes:?}"
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "zero-width layer in {sizes:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| dist.sample(&mut rng))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
            seed,
        })
    }

    /// `[input, hidden × depth, output]`.
    pub fn uniform(
        input: usize,
        hidden: usize,
        depth: usize,
        output: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(hidden, depth));
        sizes.push(output);
        Self::new(&sizes, seed)
    }

    /// Zeroes the final layer so the network outputs 0 for every input.
    pub fn zero_head(mut self) -> Self {
        let last = self.weights.len() - 1;
        self.weights[last].iter_mut().for_each(|w| *w = 0.0);
        self.biases[last].iter_mut().for_each(|b| *b = 0.0);
        self
    }

    pub fn inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Parameters flattened as `W₀, b₀, W₁, b₁, …`.
    pub fn params(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::Dimension {
                context: "Mlp::set_params",
                expected: self.num_params(),
                got: p.len(),
            });
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&p[off..off + nw]);
            off += nw;
            b.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let layers = self.sizes.len().saturating_sub(1);
        if layers < 2 || self.weights.len() != layers || self.biases.len() != layers {
            return Err(Error::Config(format!(
                "malformed network with sizes {:?}",
                self.sizes
            )));
        }
        for (l, w) in self.sizes.windows(2).enumerate() {
            if self.weights[l].len() != w[0] * w[1] || self.biases[l].len() != w[1] {
                return Err(Error::Config(format!(
                    "layer {l} has wrong parameter count"
                )));
            }
        }
        if !self.params().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(())
    }

    /// Forward pass for one (already scaled) input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs() {
            return Err(Error::Dimension {
                context: "Mlp::forward",
                expected: self.inputs(),
                got: x.len(),
            });
        }
        let last = self.weights.len() - 1;
        let mut h = x.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let n_in = h.len();
            h = w
                .chunks(n_in)
                .zip(b)
                .map(|(row, bi)| {
                    let z = row.iter().zip(&h).map(|(a, x)| a * x).sum::<f64>() + bi;
                    if l < last {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
        }
        Ok(h)
    }

    /// Forward pass of a feature-major `inputs × b` batch without a tape.
    fn forward_batch(&self, x: &[f64], b: usize) -> Vec<f64> {
        let last = self.weights.len() - 1;
        let mut h = x.to_vec();
        for (l, win) in self.sizes.windows(2).enumerate() {
            let mut z = linalg::matmul(&self.weights[l], &h, win[1], win[0], b);
            for (row, bi) in z.chunks_mut(b).zip(&self.biases[l]) {
                for v in row {
                    *v += bi;
                    if l < last {
                        *v = v.tanh();
                    }
                }
            }
            h = z;
        }
        h
    }

    /// Records a batched forward pass: `x` is `inputs × batch`, the result
    /// `outputs × batch`. Parameters enter as leaves when `trainable`.
    pub fn record(&self, tape: &mut Tape, x: Var, trainable: bool) -> Result<(Var, MlpVars)> {
        let (rows, _) = tape.shape(x);
        if rows != self.inputs() {
            return Err(Error::Dimension {
                context: "Mlp::record",
                expected: self.inputs(),
                got: rows,
            });
        }
        let last = self.weights.len() - 1;
        let mut vars = MlpVars {
            weights: Vec::with_capacity(last + 1),
            biases: Vec::with_capacity(last + 1),
        };
        if !trainable && !(tape.grad_enabled() && tape.requires_grad(x)) {
            let (_, b) = tape.shape(x);
            let y = self.forward_batch(tape.value(x), b);
            return Ok((tape.constant_tensor(y, self.outputs(), b), vars));
        }
        let mut h = x;
        for (l, win) in self.sizes.windows(2).enumerate() {
            let (w, b) = if trainable {
                (
                    tape.var_tensor(self.weights[l].clone(), win[1], win[0]),
                    tape.var_tensor(self.biases[l].clone(), win[1], 1),
                )
            } else {
                (
                    tape.constant_tensor(self.weights[l].clone(), win[1], win[0]),
                    tape.constant_tensor(self.biases[l].clone(), win[1], 1),
                )
            };
            vars.weights.push(w);
            vars.biases.push(b);
            let z = tape.matmul(w, h);
            let z = tape.add_column(z, b);
            h = if l < last { tape.tanh(z) } else { z };
        }
        Ok((h, vars))
    }
}

/// Per-feature standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Lower bound on a fitted standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

impl Scaler {
    pub fn identity(dim: usize) -> Self {
        Scaler {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Mean and population standard deviation of each column.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Data("cannot fit a scaler on zero rows".into()))?;
        let dim = first.as_ref().len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::Dimension {
                    context: "Scaler::fit",
                    expected: dim,
                    got: r.len(),
                });
            }
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        Ok(Scaler {
            mean,
            std: var.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }

    /// Columns of `rows` scaled and laid out feature-major (`dim × rows`).
    pub fn transform_batch<R: AsRef<[f64]>>(&self, rows: &[R]) -> Vec<f64> {
        let b = rows.len();
        let mut out = vec![0.0; self.dim() * b];
        for (j, r) in rows.iter().enumerate() {
            for (i, z) in self.transform(r.as_ref()).into_iter().enumerate() {
                out[i * b + j] = z;
            }
        }
        out
    }
}

/// Adam with bias correction and step-decay schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiply the rate by `decay_factor` every `decay_every` steps (0 disables).
    pub decay_every: usize,
    pub decay_factor: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_every: 0,
            decay_factor: 1.0,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn with_decay(mut self, every: usize, factor: f64) -> Self {
        self.decay_every = every;
        self.decay_factor = factor;
        self
    }

    /// Rate applied at the next step.
    pub fn current_lr(&self) -> f64 {
        match self.decay_every {
            0 => self.lr,
            k => self.lr * self.decay_factor.powi((self.step / k as u64) as i32),
        }
    }

    /// One update in place. Non-finite gradients leave parameters and moments untouched.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension {
                context: "Adam::update",
                expected: self.m.len(),
                got: grads.len().min(params.len()),
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient component {i} is {}",
                grads[i]
            )));
        }
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::compare;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = Mlp::uniform(7, 200, 6, 9, 42).unwrap();
        let b = Mlp::uniform(7, 200, 6, 9, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, Mlp::uniform(7, 200, 6, 9, 43).unwrap());
        let ann = Mlp::uniform(7, 150, 4, 4, 1).unwrap();
        assert_eq!(ann.sizes, vec![7, 150, 150, 150, 150, 4]);
        assert_eq!(
            ann.num_params(),
            7 * 150 + 150 + 3 * (150 * 150 + 150) + 150 * 4 + 4
        );
        ann.validate().unwrap();
        assert!(a.biases.iter().flatten().all(|&b| b == 0.0));
        let lim = (6.0f64 / 207.0).sqrt();
        assert!(a.weights[0].iter().all(|w| w.abs() <= lim));
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(Mlp::new(&[7, 4], 0).is_err());
        assert!(Mlp::new(&[7, 0, 4], 0).is_err());
    }

    #[test]
    fn zero_head_outputs_zero() {
        let net = Mlp::uniform(5, 16, 3, 4, 9).unwrap().zero_head();
        for x in [[0.3, -1.0, 2.0, 0.0, 5.0], [100.0; 5]] {
            assert_eq!(net.forward(&x).unwrap(), vec![0.0; 4]);
        }
    }

    #[test]
    fn identity_weights_pass_tanh_of_input() {
        let mut net = Mlp::new(&[2, 2, 2], 0).unwrap();
        net.weights[0] = vec![1.0, 0.0, 0.0, 1.0];
        net.weights[1] = vec![1.0, 0.0, 0.0, 1.0];
        let x = [0.1, -0.2];
        let y = net.forward(&x).unwrap();
        assert!((y[0] - 0.1f64.tanh()).abs() < 1e-15 && (y[1] + 0.2f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn hand_evaluated_2_2_1() {
        let mut net = Mlp::new(&[2, 2, 1], 0).unwrap();
        net.weights[0] = vec![0.5, -1.0, 2.0, 0.25];
        net.biases[0] = vec![0.1, -0.3];
        net.weights[1] = vec![1.5, -0.7];
        net.biases[1] = vec![0.2];
        let x = [0.4, 1.2];
        let h0 = (0.5 * 0.4 - 1.0 * 1.2 + 0.1f64).tanh();
        let h1 = (2.0 * 0.4 + 0.25 * 1.2 - 0.3f64).tanh();
        let want = 1.5 * h0 - 0.7 * h1 + 0.2;
        assert!((net.forward(&x).unwrap()[0] - want).abs() <= 1e-12);
        let mut t = Tape::new();
        let xv = t.constant_tensor(x.to_vec(), 2, 1);
        let (y, _) = net.record(&mut t, xv, true).unwrap();
        assert!((t.value(y)[0] - want).abs() <= 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let net = Mlp::uniform(3, 4, 1, 1, 0).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn batched_record_matches_per_sample() {
        let net = Mlp::uniform(3, 6, 2, 2, 5).unwrap();
        let rows = [[0.1, 0.2, -0.3], [1.0, -2.0, 0.5], [0.0, 0.0, 0.0]];
        let s = Scaler::identity(3);
        let mut t = Tape::no_grad();
        let x = t.constant_tensor(s.transform_batch(&rows), 3, 3);
        let (y, _) = net.record(&mut t, x, false).unwrap();
        for (j, r) in rows.iter().enumerate() {
            let f = net.forward(r).unwrap();
            for k in 0..2 {
                assert!((t.value(y)[k * 3 + j] - f[k]).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        for seed in 0..4 {
            let net = Mlp::new(&[3, 5, 4, 2], seed).unwrap();
            let xs = vec![0.3, -0.7, 1.1, 0.5, 0.2, -0.4];
            let loss = |p: &[f64], t: &mut Tape| -> Var {
                let mut n = net.clone();
                n.set_params(p).unwrap();
                let x = t.constant_tensor(xs.clone(), 3, 2);
                let (y, _) = n.record(t, x, false).unwrap();
                let y2 = t.square(y);
                t.sum(y2)
            };
            let p0 = net.params();
            let mut t = Tape::new();
            let x = t.constant_tensor(xs.clone(), 3, 2);
            let (y, vars) = net.record(&mut t, x, true).unwrap();
            let y2 = t.square(y);
            let l = t.sum(y2);
            let g = vars.gradient(&t.backward(l).unwrap());
            let eval = |p: &[f64]| {
                let mut t = Tape::no_grad();
                let l = loss(p, &mut t);
                t.scalar(l)
            };
            let numeric: Vec<f64> = (0..p0.len())
                .map(|i| {
                    let (mut pp, mut pm) = (p0.clone(), p0.clone());
                    pp[i] += 1e-6;
                    pm[i] -= 1e-6;
                    (eval(&pp) - eval(&pm)) / 2e-6
                })
                .collect();
            let r = compare(g, numeric);
            assert!(r.max_rel_error <= 1e-6, "{r:?}");
        }
    }

    #[test]
    fn scaler_roundtrip_and_floor() {
        let rows = vec![
            vec![1.0, 5.0, 2.0],
            vec![3.0, 5.0, -2.0],
            vec![2.0, 5.0, 0.0],
        ];
        let s = Scaler::fit(&rows).unwrap();
        assert!((s.mean[0] - 2.0).abs() < 1e-15);
        assert_eq!(s.std[1], STD_FLOOR);
        for r in &rows {
            let back = s.inverse(&s.transform(r));
            for (a, b) in back.iter().zip(r) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        assert!(Scaler::fit::<Vec<f64>>(&[]).is_err());
    }

    #[test]
    fn first_adam_step_is_sign_step() {
        let mut p = vec![1.0, -2.0, 0.5, 3.0];
        let g = vec![0.3, -5.0, 1e-3, 0.0];
        let before = p.clone();
        let mut adam = Adam::new(4, 1e-3);
        adam.update(&mut p, &g).unwrap();
        for k in 0..3 {
            assert!(((before[k] - p[k]).abs() - 1e-3).abs() <= 1e-6);
            assert_eq!((before[k] - p[k]).signum(), g[k].signum());
        }
        assert_eq!(p[3], before[3]);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.1, 0.2];
        let mut adam = Adam::new(2, 0.1);
        for _ in 0..10 {
            adam.update(&mut p, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(p, vec![0.1, 0.2]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut w = vec![1.0];
        let mut adam = Adam::new(1, 0.05);
        for _ in 0..200 {
            let g = vec![2.0 * w[0]];
            adam.update(&mut w, &g).unwrap();
        }
        assert!(w[0].abs() < 0.05, "{}", w[0]);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut p = vec![1.0, 1.0];
        let mut adam = Adam::new(2, 0.1);
        assert!(matches!(
            adam.update(&mut p, &[1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn decay_schedule() {
        let mut adam = Adam::new(1, 1e-3).with_decay(2, 0.5);
        let mut p = vec![0.0];
        let mut rates = Vec::new();
        for _ in 0..5 {
            rates.push(adam.current_lr());
            adam.update(&mut p, &[1.0]).unwrap();
        }
        assert_eq!(rates, vec![1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4]);
    }
}
