//! Reverse-mode automatic differentiation.
//!
//! [`Tape`] records tensor-valued primitives and returns exact adjoints in one
//! reverse sweep. The linear solve is a first-class primitive: its adjoint
//! reuses the forward LU factorization (see [`linear_solve_adjoint`]) instead
//! of tracing the elimination. Physics kernels that are awkward to express as
//! tape primitives are recorded with [`Tape::custom`], their local partials
//! computed with the forward-mode [`Dual`] numbers in [`dual`].

pub mod dual;
mod tape;

pub use dual::{Dual, Real};
pub use tape::{sigmoid, softplus, BinaryOp, Gradients, Partials, Tape, UnaryOp, Var};

use crate::error::Result;
use crate::linalg::Lu;

/// Adjoint of `γ = A⁻¹ b` given `∂L/∂γ`.
///
/// Returns `(∂L/∂A, ∂L/∂b)` with `∂L/∂b = A⁻ᵀ ∂L/∂γ` and `∂L/∂A = −(∂L/∂b) γᵀ`
/// (row-major `n × n`).
pub fn linear_solve_adjoint(lu: &Lu, gamma: &[f64], adjoint_gamma: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = lu.dim();
    let adj_b = lu.solve_transpose(adjoint_gamma);
    let mut adj_a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            adj_a[i * n + j] = -adj_b[i] * gamma[j];
        }
    }
    (adj_a, adj_b)
}

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Worst component-wise relative error.
    pub max_rel_error: f64,
    /// Component attaining `max_rel_error`.
    pub worst_index: usize,
}

impl GradCheck {
    pub fn passed(&self, threshold: f64) -> bool {
        self.max_rel_error <= threshold
    }
}

/// Relative error between an analytic and a numeric derivative.
///
/// The denominator is floored at `floor`, so components that are zero in both
/// routes compare as equal and noise on negligible components does not dominate.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `backward()` gradients of a scalar function against central
/// differences with per-component step `step · max(1, |xᵢ|)`.
///
/// `f` must record a scalar on the tape it is given. Components are compared
/// with [`relative_error`] using a floor of `1e-6 · ‖numeric‖∞` (at least
/// `1e-12`).
pub fn gradcheck<F>(f: F, x: &[f64], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = tape.vars(x);
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<f64> = vars.iter().map(|&v| grads.scalar(v)).collect();

    let eval = |point: &[f64]| -> Result<f64> {
        let mut t = Tape::no_grad();
        let vs = t.vars(point);
        let o = f(&mut t, &vs)?;
        Ok(t.scalar(o))
    };
    let mut numeric = Vec::with_capacity(x.len());
    let mut point = x.to_vec();
    for i in 0..x.len() {
        let h = step * x[i].abs().max(1.0);
        point[i] = x[i] + h;
        let fp = eval(&point)?;
        point[i] = x[i] - h;
        let fm = eval(&point)?;
        point[i] = x[i];
        numeric.push((fp - fm) / (2.0 * h));
    }
    Ok(compare(analytic, numeric))
}

/// Builds a [`GradCheck`] from two gradient routes.
pub fn compare(analytic: Vec<f64>, numeric: Vec<f64>) -> GradCheck {
    let scale = numeric
        .iter()
        .chain(&analytic)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-6 * scale).max(1e-12);
    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .enumerate()
        .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    GradCheck {
        analytic,
        numeric,
        max_rel_error,
        worst_index,
    }
}
