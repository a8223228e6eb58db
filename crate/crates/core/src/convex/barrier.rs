//! Log-barrier Newton method for small problems of the form
//!
//! ```text
//! minimize phi(x)  subject to  a_i . x >= 0,  ||x[..n_w]||^2 <= 1
//! ```
//!
//! where `phi` is either linear or a sum of Gaussian tail terms
//! `sum_b Q(d_b . x[..n_w] / c)`. The Q-sum is evaluated relative to its value
//! at the start of each centering stage so that very small error
//! probabilities keep a usable scale.

use nalgebra::{DMatrix, DVector};

use crate::analysis::{log_normal_pdf, log_q, normal_pdf, q_function};

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_HALVINGS: usize = 80;
const NEWTON_TOL: f64 = 1e-11;
const T_GROWTH: f64 = 20.0;
/// Newton decrement squared below which full steps are taken.
const QUADRATIC_REGION: f64 = 0.04;
const MAX_PURE_STEPS: usize = 30;
/// Linear objectives: a pure step must shrink the squared decrement this much.
const STALL_RATIO: f64 = 0.25;
const MAX_STAGE_STEPS: usize = 2_000;
/// Decreases below this fraction of the barrier value are not resolvable.
const ROUNDOFF: f64 = 1e-14;

pub(crate) enum Objective<'a> {
    /// `c . x`
    Linear(Vec<f64>),
    /// `sum_b Q(d_b . w / scale)` with directions stored row-major.
    QSum { directions: &'a [f64], inv_scale: f64 },
}

pub(crate) struct BarrierProblem<'a> {
    pub n: usize,
    pub n_w: usize,
    /// Row-major `m x n` constraint matrix.
    pub rows: &'a [f64],
    /// Weight on each half-space log term.
    pub row_weight: f64,
    pub objective: Objective<'a>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Termination {
    Converged,
    MaxIter,
    Stalled,
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonStep {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub step: f64,
}

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub kkt_residual: f64,
    pub steps: Vec<NewtonStep>,
}

pub(crate) struct Settings {
    pub max_iterations: usize,
    pub gap_tol: f64,
    pub record_steps: bool,
}

struct Derivs {
    value: f64,
    grad: Vec<f64>,
    hess: Option<DMatrix<f64>>,
}

impl<'a> BarrierProblem<'a> {
    fn m(&self) -> usize {
        self.rows.len().checked_div(self.n).unwrap_or(0)
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n..(i + 1) * self.n]
    }

    fn n_tuples(&self) -> usize {
        match &self.objective {
            Objective::QSum { directions, .. } => directions.len() / self.n_w,
            Objective::Linear(_) => 0,
        }
    }

    /// `ln sum_b Q(.)`, used to rescale the Q-sum per stage.
    fn log_objective(&self, x: &[f64]) -> f64 {
        match &self.objective {
            Objective::Linear(c) => dot(c, x),
            Objective::QSum {
                directions,
                inv_scale,
            } => {
                let w = &x[..self.n_w];
                let logs: Vec<f64> = (0..self.n_tuples())
                    .map(|b| log_q(dot(&directions[b * self.n_w..(b + 1) * self.n_w], w) * inv_scale))
                    .collect();
                log_sum_exp(&logs)
            }
        }
    }

    /// `t phi(x) / exp(log_ref) - sum ln(slack) - ln(1 - ||w||^2)` and
    /// its gradient and Hessian when `derivatives` is set (otherwise only
    /// `value` is meaningful). `None` outside the domain.
    fn evaluate(&self, x: &[f64], t: f64, log_ref: f64, derivatives: bool) -> Option<Derivs> {
        let n = self.n;
        let n_w = self.n_w;
        let rho: f64 = x[..n_w].iter().map(|v| v * v).sum();
        if !(rho < 1.0) {
            return None;
        }
        let mut value = -(1.0 - rho).ln();
        let mut grad = vec![0.0; n];
        // Row-major, upper triangle only until the end.
        let mut hess = derivatives.then(|| vec![0.0; n * n]);
        let slack_ball = 1.0 - rho;
        for i in 0..n_w {
            grad[i] += 2.0 * x[i] / slack_ball;
        }
        if let Some(hm) = hess.as_mut() {
            for i in 0..n_w {
                hm[i * n + i] += 2.0 / slack_ball;
            }
            add_outer_upper(hm, n, 4.0 / (slack_ball * slack_ball), &x[..n_w]);
        }
        for r in 0..self.m() {
            let a = self.row(r);
            let s = dot(a, x);
            if !(s > 0.0) {
                return None;
            }
            let rw = self.row_weight;
            value -= rw * s.ln();
            for i in 0..n {
                grad[i] -= rw * a[i] / s;
            }
            if let Some(hm) = hess.as_mut() {
                add_outer_upper(hm, n, rw / (s * s), a);
            }
        }
        let mut obj_grad = vec![0.0; n];
        match &self.objective {
            Objective::Linear(c) => {
                value += t * dot(c, x);
                obj_grad.copy_from_slice(c);
            }
            Objective::QSum {
                directions,
                inv_scale,
            } => {
                let w = &x[..n_w];
                let c = *inv_scale;
                // Direct evaluation while exp(-log_ref) is representable.
                let direct = log_ref > -600.0;
                let ref_scale = (-log_ref).exp();
                let mut phi_sum = 0.0;
                for b in 0..self.n_tuples() {
                    let d = &directions[b * n_w..(b + 1) * n_w];
                    let arg = dot(d, w) * c;
                    let fast = direct && arg < 37.0;
                    phi_sum += if fast {
                        q_function(arg) * ref_scale
                    } else {
                        (log_q(arg) - log_ref).exp()
                    };
                    if !derivatives {
                        continue;
                    }
                    let pdf = if fast {
                        normal_pdf(arg) * ref_scale
                    } else {
                        (log_normal_pdf(arg) - log_ref).exp()
                    };
                    let gcoef = -pdf * c;
                    for i in 0..n_w {
                        obj_grad[i] += gcoef * d[i];
                    }
                    if let Some(hm) = hess.as_mut() {
                        let hcoef = t * arg * pdf * c * c;
                        if hcoef != 0.0 {
                            add_outer_upper(hm, n, hcoef, d);
                        }
                    }
                }
                value += t * phi_sum;
            }
        }
        for i in 0..n {
            grad[i] += t * obj_grad[i];
        }
        let hess = hess.map(|hm| {
            let mut m = DMatrix::from_row_slice(n, n, &hm);
            m.fill_lower_triangle_with_upper_triangle();
            m
        });
        Some(Derivs {
            value,
            grad,
            hess,
        })
    }

    /// Barrier path following from a strictly feasible `x0`.
    pub fn minimize(&self, x0: &[f64], settings: &Settings) -> Outcome {
        let m_total = self.row_weight * self.m() as f64 + 1.0;
        let is_qsum = matches!(self.objective, Objective::QSum { .. });
        let mut t = if is_qsum { m_total } else { 1.0 };
        let mut x = x0.to_vec();
        let mut iterations = 0usize;
        let mut steps = Vec::new();
        let mut termination = Termination::Converged;
        let mut decrement = f64::INFINITY;
        let mut log_ref = if is_qsum { self.log_objective(&x) } else { 0.0 };

        loop {
            if is_qsum {
                let lr = self.log_objective(&x);
                if lr.is_finite() {
                    log_ref = lr;
                }
            }
            // Centering.
            let mut pure_steps = 0usize;
            let mut stage_steps = 0usize;
            let mut last_pure_decrement = f64::INFINITY;
            let mut precision_limited = false;
            loop {
                if iterations >= settings.max_iterations {
                    termination = Termination::MaxIter;
                    break;
                }
                let Some(d) = self.evaluate(&x, t, log_ref, true) else {
                    termination = Termination::Stalled;
                    break;
                };
                let Some(dir) = newton_direction(d.hess.as_ref().unwrap(), &d.grad) else {
                    termination = Termination::Stalled;
                    break;
                };
                let lambda_sq = -dot(&d.grad, &dir);
                decrement = lambda_sq.max(0.0).sqrt();
                if lambda_sq / 2.0 <= NEWTON_TOL
                    || pure_steps >= MAX_PURE_STEPS
                    || stage_steps >= MAX_STAGE_STEPS
                {
                    break;
                }
                let pure = lambda_sq < QUADRATIC_REGION;
                if pure && !is_qsum {
                    // The linear-objective barrier is self-concordant, so a
                    // pure step that fails to converge quadratically is roundoff.
                    if pure_steps >= 2 && lambda_sq > STALL_RATIO * last_pure_decrement {
                        precision_limited = true;
                        break;
                    }
                    last_pure_decrement = lambda_sq;
                }
                let floor = ROUNDOFF * d.value.abs().max(1.0);
                let mut alpha = 1.0;
                let mut accepted = None;
                for _ in 0..MAX_HALVINGS {
                    if !pure && alpha < 1.0 && alpha * lambda_sq < floor {
                        break;
                    }
                    let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + alpha * b).collect();
                    if let Some(e) = self.evaluate(&trial, t, log_ref, false) {
                        if pure || e.value <= d.value - ARMIJO_C * alpha * lambda_sq {
                            accepted = Some(trial);
                            break;
                        }
                    }
                    alpha *= BACKTRACK;
                }
                iterations += 1;
                stage_steps += 1;
                if pure {
                    pure_steps += 1;
                }
                match accepted {
                    Some(next) => {
                        x = next;
                        if settings.record_steps {
                            steps.push(NewtonStep {
                                iteration: iterations,
                                x: x.clone(),
                                step: alpha,
                            });
                        }
                    }
                    // No measurable decrease left at this t.
                    None => break,
                }
            }
            if termination != Termination::Converged {
                break;
            }
            if m_total / t <= settings.gap_tol || precision_limited {
                break;
            }
            t *= T_GROWTH;
        }

        // Duality gap estimate for a point with Newton decrement `decrement`.
        let kkt_residual = (m_total + m_total.sqrt() * decrement) / t;
        Outcome {
            x,
            iterations,
            termination,
            kkt_residual,
            steps,
        }
    }
}

/// Adds `coef * a a^T` to the upper triangle of the leading `a.len()` block
/// of a row-major `n x n` matrix.
fn add_outer_upper(h: &mut [f64], n: usize, coef: f64, a: &[f64]) {
    let len = a.len();
    for i in 0..len {
        let ci = coef * a[i];
        if ci == 0.0 {
            continue;
        }
        let row = &mut h[i * n + i..i * n + len];
        for (hj, aj) in row.iter_mut().zip(&a[i..]) {
            *hj += ci * aj;
        }
    }
}

fn newton_direction(hess: &DMatrix<f64>, grad: &[f64]) -> Option<Vec<f64>> {
    let n = grad.len();
    let rhs = DVector::from_iterator(n, grad.iter().map(|g| -g));
    let mut h = hess.clone();
    let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    for attempt in 0..6 {
        if let Some(ch) = h.clone().cholesky() {
            let sol = ch.solve(&rhs);
            if sol.iter().all(|v| v.is_finite()) {
                return Some(sol.iter().copied().collect());
            }
        }
        let shift = scale * 1e-14 * 100f64.powi(attempt);
        for i in 0..n {
            h[(i, i)] += shift;
        }
    }
    None
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
