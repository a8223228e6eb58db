//! Convex beamformer design on the lifted unit ball.
//!
//! All three programs work in `w_bar = [Re{w}, Im{w}] in R^{2N}`, where
//! `Re{w h_j} = w_bar . h_tilde_j`:
//!
//! * [`ProgramKind::MpeFull`] minimizes the Q-sum error probability (with the
//!   norm in the denominator replaced by the ball constraint) subject to one
//!   margin constraint per interferer tuple.
//! * [`ProgramKind::MpeReduced`] uses the same objective under the single
//!   reduced margin constraint, written with auxiliary `u_j >= |g_j|`.
//! * [`ProgramKind::SminrAmp`] maximizes the reduced margin.
//!
//! Each is solved by a log-barrier Newton method. A max-margin phase provides
//! a strictly feasible start and decides feasibility.

mod barrier;

use std::f64::consts::SQRT_2;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analysis::{normal_pdf, q_function, BeamVector};
use crate::beamformers::RealLiftedChannel;
use crate::channel::ChannelMatrix;
use crate::modem::Constellation;
use crate::{Error, Result};

use barrier::{dot, BarrierProblem, Objective, Settings, Termination};

/// Margins below this are treated as infeasible.
pub const TOL_FEAS: f64 = 1e-9;
/// Newton iteration cap per solve.
pub const MAX_ITER: usize = 50_000;
/// KKT residual required for [`SolveStatus::Optimal`].
pub const KKT_TOL: f64 = 1e-6;
/// Largest tuple count for which the Q-sum program is built.
pub const MAX_TUPLES: usize = 1_000_000;

const GAP_TOL: f64 = 1e-8;
const MARGIN_GAP_TOL: f64 = 1e-12;
const START_SHRINK: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProgramKind {
    MpeFull,
    MpeReduced,
    SminrAmp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    pub max_iterations: Option<usize>,
    pub trace: bool,
}

/// One Newton iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub phase: &'static str,
    pub iteration: usize,
    pub objective: f64,
    pub margin: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Unit-norm weights; for infeasible instances, the max-margin point.
    pub weights: BeamVector,
    /// Exact error probability objective (ball form) for the MPE programs,
    /// the single-term upper bound for [`ProgramKind::SminrAmp`].
    pub objective_value: f64,
    /// Reduced margin at `weights`.
    pub margin: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub trace: Vec<TraceRow>,
}

impl SolveReport {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("phase,iteration,objective,margin,step\n");
        for r in &self.trace {
            let _ = writeln!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e}",
                r.phase, r.iteration, r.objective, r.margin, r.step
            );
        }
        out
    }
}

/// Outcome of the max-margin phase.
#[derive(Debug, Clone)]
pub struct Feasibility {
    /// Largest reduced margin over the unit ball.
    pub max_margin: f64,
    pub weights: BeamVector,
    pub feasible: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// One design problem for user `k`.
#[derive(Debug, Clone)]
pub struct ConvexProgram {
    kind: ProgramKind,
    user: usize,
    lifted: RealLiftedChannel,
    signal: f64,
    interferers: Vec<usize>,
    peaks: Vec<f64>,
    tuple_count: usize,
    prefactor: f64,
    bound_prefactor: f64,
    noise_scale: f64,
    /// Row-major `N_p x 2N` vectors `a h_tilde_k - sum_j s_j(b) h_tilde_j`.
    directions: Vec<f64>,
}

impl ConvexProgram {
    pub fn new(
        kind: ProgramKind,
        h: &ChannelMatrix,
        k: usize,
        constellations: &[Constellation],
        sigma_z: f64,
    ) -> Result<Self> {
        let users = h.n_users();
        if k >= users {
            return Err(Error::UserOutOfRange { user: k, users });
        }
        if constellations.len() != users {
            return Err(Error::DimensionMismatch(format!(
                "{} constellations for {users} users",
                constellations.len()
            )));
        }
        if !(sigma_z > 0.0 && sigma_z.is_finite()) {
            return Err(Error::InvalidNoise(sigma_z));
        }
        let lifted = RealLiftedChannel::new(h);
        let interferers: Vec<usize> = (0..users).filter(|&j| j != k).collect();
        let peaks = interferers
            .iter()
            .map(|&j| constellations[j].peak_symbol())
            .collect();
        let signal = constellations[k].scaled_half_spacing();
        let n_tuples: usize = interferers
            .iter()
            .map(|&j| constellations[j].order())
            .product();
        let directions = if kind == ProgramKind::SminrAmp {
            Vec::new()
        } else {
            if n_tuples > MAX_TUPLES {
                return Err(Error::InvalidScenario(format!(
                    "{n_tuples} interferer tuples exceed the limit of {MAX_TUPLES}"
                )));
            }
            let mut dirs: Vec<f64> = lifted.column(k).iter().map(|v| signal * v).collect();
            let dim = lifted.dim();
            for &j in &interferers {
                let hj = lifted.column(j);
                let alphabet = constellations[j].symbols();
                let mut next = Vec::with_capacity(dirs.len() * alphabet.len());
                for base in dirs.chunks(dim) {
                    for &s in &alphabet {
                        next.extend(base.iter().zip(hj).map(|(b, x)| b - s * x));
                    }
                }
                dirs = next;
            }
            dirs
        };
        let nb: f64 = constellations.iter().map(|c| c.order() as f64).product();
        let lk = constellations[k].order() as f64;
        Ok(Self {
            kind,
            user: k,
            lifted,
            signal,
            interferers,
            peaks,
            tuple_count: n_tuples,
            prefactor: 2.0 * (lk - 1.0) / nb,
            bound_prefactor: 2.0 * (lk - 1.0) / lk,
            noise_scale: sigma_z / SQRT_2,
            directions,
        })
    }

    pub fn kind(&self) -> ProgramKind {
        self.kind
    }

    pub fn user(&self) -> usize {
        self.user
    }

    /// Length of the lifted weight vector.
    pub fn dim(&self) -> usize {
        self.lifted.dim()
    }

    pub fn n_tuples(&self) -> usize {
        self.tuple_count
    }

    /// Reduced margin `a g_k - sum_j s_j(L_j) |g_j|` at lifted weights.
    pub fn reduced_margin(&self, w: &[f64]) -> f64 {
        self.signal * self.lifted.dot(w, self.user)
            - self
                .interferers
                .iter()
                .zip(&self.peaks)
                .map(|(&j, p)| p * self.lifted.dot(w, j).abs())
                .sum::<f64>()
    }

    /// Smallest per-tuple margin. Equals [`Self::reduced_margin`] in exact arithmetic.
    pub fn full_margin(&self, w: &[f64]) -> f64 {
        if self.directions.is_empty() {
            return self.reduced_margin(w);
        }
        self.directions
            .chunks(self.dim())
            .map(|d| dot(d, w))
            .fold(f64::INFINITY, f64::min)
    }

    /// Objective value and (sub)gradient at lifted weights `w`.
    ///
    /// MPE programs: `c sum_b Q(a_b . w / (sigma_z / sqrt 2))`.
    /// SMINR-amp: `reduced_margin / (sigma_z / sqrt 2)` with `sign(0) = +1`.
    pub fn objective_and_gradient(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} lifted weights, got {}",
                self.dim(),
                w.len()
            )));
        }
        let dim = self.dim();
        let inv = 1.0 / self.noise_scale;
        let mut grad = vec![0.0; dim];
        match self.kind {
            ProgramKind::MpeFull | ProgramKind::MpeReduced => {
                let mut value = 0.0;
                for d in self.directions.chunks(dim) {
                    let x = dot(d, w) * inv;
                    value += q_function(x);
                    let coef = -normal_pdf(x) * inv * self.prefactor;
                    grad.iter_mut().zip(d).for_each(|(g, v)| *g += coef * v);
                }
                Ok((self.prefactor * value, grad))
            }
            ProgramKind::SminrAmp => {
                grad.iter_mut()
                    .zip(self.lifted.column(self.user))
                    .for_each(|(g, v)| *g += self.signal * inv * v);
                for (&j, p) in self.interferers.iter().zip(&self.peaks) {
                    let sign = if self.lifted.dot(w, j) < 0.0 { -1.0 } else { 1.0 };
                    grad.iter_mut()
                        .zip(self.lifted.column(j))
                        .for_each(|(g, v)| *g -= sign * p * inv * v);
                }
                Ok((self.reduced_margin(w) * inv, grad))
            }
        }
    }

    fn mpe_value(&self, w: &[f64]) -> f64 {
        let inv = 1.0 / self.noise_scale;
        self.prefactor
            * self
                .directions
                .chunks(self.dim())
                .map(|d| q_function(dot(d, w) * inv))
                .sum::<f64>()
    }

    fn bound_value(&self, margin: f64) -> f64 {
        self.bound_prefactor * q_function(margin / self.noise_scale)
    }

    fn trace_objective(&self, w: &[f64]) -> f64 {
        match self.kind {
            ProgramKind::SminrAmp => self.reduced_margin(w) / self.noise_scale,
            _ => self.mpe_value(w),
        }
    }

    fn settings(&self, options: &SolveOptions, gap_tol: f64) -> Settings {
        Settings {
            max_iterations: options.max_iterations.unwrap_or(MAX_ITER),
            gap_tol,
            record_steps: options.trace,
        }
    }

    /// Maximizes the reduced margin over the unit ball.
    fn max_margin(&self, options: &SolveOptions, trace: &mut Vec<TraceRow>) -> Feasibility {
        let dim = self.dim();
        let n_aux = self.interferers.len();
        let n = dim + n_aux;
        // Rows: a h_k . w - sum p_j u_j >= 0 is implied at the optimum when
        // feasible and is left out; u_j -/+ h_j . w >= 0.
        let mut rows = Vec::with_capacity(2 * n_aux * n);
        for (i, &j) in self.interferers.iter().enumerate() {
            for sign in [1.0, -1.0] {
                let mut r = vec![0.0; n];
                r[..dim]
                    .iter_mut()
                    .zip(self.lifted.column(j))
                    .for_each(|(a, v)| *a = sign * v);
                r[dim + i] = 1.0;
                rows.extend(r);
            }
        }
        let mut c = vec![0.0; n];
        c[..dim]
            .iter_mut()
            .zip(self.lifted.column(self.user))
            .for_each(|(a, v)| *a = -self.signal * v);
        c[dim..].copy_from_slice(&self.peaks);
        let problem = BarrierProblem {
            n,
            n_w: dim,
            rows: &rows,
            row_weight: 1.0,
            objective: Objective::Linear(c),
        };
        let mut x0 = vec![0.0; n];
        x0[dim..].iter_mut().for_each(|u| *u = 1.0);
        let out = problem.minimize(&x0, &self.settings(options, MARGIN_GAP_TOL));
        if options.trace {
            for s in &out.steps {
                trace.push(TraceRow {
                    phase: "margin",
                    iteration: s.iteration,
                    objective: self.reduced_margin(&s.x[..dim]) / self.noise_scale,
                    margin: self.reduced_margin(&s.x[..dim]),
                    step: s.step,
                });
            }
        }
        let mut w = unit(&out.x[..dim]).unwrap_or_else(|| {
            let mut e = self.lifted.column(self.user).to_vec();
            normalize(&mut e);
            e
        });
        let mut margin = self.reduced_margin(&w);
        if let Some((pw, pm)) = self.polish(&w) {
            if pm >= margin {
                w = pw;
                margin = pm;
            }
        }
        let weights = BeamVector::from_lifted(&w).expect("even-length finite vector");
        Feasibility {
            max_margin: margin,
            feasible: margin >= TOL_FEAS,
            weights,
            iterations: out.iterations,
            kkt_residual: if out.termination == Termination::MaxIter {
                f64::INFINITY
            } else {
                out.kkt_residual
            },
        }
    }

    /// Exact maximizer on the face where the nearly nulled interferers are
    /// exactly nulled and the remaining signs are fixed.
    fn polish(&self, w: &[f64]) -> Option<(Vec<f64>, f64)> {
        let dim = self.dim();
        let mut best: Option<(Vec<f64>, f64)> = None;
        for tau in [1e-10, 1e-8, 1e-6, 1e-4] {
            let mut c: Vec<f64> = self
                .lifted
                .column(self.user)
                .iter()
                .map(|v| self.signal * v)
                .collect();
            let mut nulls: Vec<Vec<f64>> = Vec::new();
            for (&j, p) in self.interferers.iter().zip(&self.peaks) {
                let hj = self.lifted.column(j);
                let g = self.lifted.dot(w, j);
                let scale = hj.iter().map(|v| v * v).sum::<f64>().sqrt();
                if g.abs() <= tau * scale.max(f64::MIN_POSITIVE) {
                    nulls.push(hj.to_vec());
                } else {
                    let s = g.signum();
                    c.iter_mut().zip(hj).for_each(|(a, v)| *a -= s * p * v);
                }
            }
            // Orthonormal basis of the nulled span by modified Gram-Schmidt.
            let mut basis: Vec<Vec<f64>> = Vec::new();
            for mut v in nulls {
                let original = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                for _ in 0..2 {
                    for b in &basis {
                        let p = dot(&v, b);
                        v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
                    }
                }
                let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if nv > 1e-10 * original {
                    v.iter_mut().for_each(|x| *x /= nv);
                    basis.push(v);
                }
            }
            for _ in 0..2 {
                for b in &basis {
                    let p = dot(&c, b);
                    c.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
                }
            }
            if let Some(candidate) = unit(&c) {
                debug_assert_eq!(candidate.len(), dim);
                let m = self.reduced_margin(&candidate);
                if best.as_ref().is_none_or(|(_, bm)| m > *bm) {
                    best = Some((candidate, m));
                }
            }
        }
        best
    }

    /// Checks feasibility without solving the main program.
    pub fn feasibility_phase(&self) -> Feasibility {
        self.max_margin(&SolveOptions::default(), &mut Vec::new())
    }

    pub fn solve(&self) -> SolveReport {
        self.solve_with(&SolveOptions::default())
    }

    pub fn solve_with(&self, options: &SolveOptions) -> SolveReport {
        let mut trace = Vec::new();
        let phase1 = self.max_margin(options, &mut trace);
        let w1 = phase1.weights.lifted();
        if !phase1.feasible {
            return SolveReport {
                objective_value: self.report_value(&w1, phase1.max_margin),
                margin: phase1.max_margin,
                weights: phase1.weights,
                status: SolveStatus::Infeasible,
                iterations: phase1.iterations,
                kkt_residual: phase1.kkt_residual,
                trace,
            };
        }
        if self.kind == ProgramKind::SminrAmp {
            let status = if phase1.kkt_residual <= KKT_TOL {
                SolveStatus::Optimal
            } else {
                SolveStatus::MaxIter
            };
            return SolveReport {
                objective_value: self.bound_value(phase1.max_margin),
                margin: phase1.max_margin,
                weights: phase1.weights,
                status,
                iterations: phase1.iterations,
                kkt_residual: phase1.kkt_residual,
                trace,
            };
        }
        let start: Vec<f64> = w1.iter().map(|v| START_SHRINK * v).collect();
        let mut report = self.run_mpe(&start, options, trace);
        report.iterations += phase1.iterations;
        report
    }

    /// Runs the main program from a caller-supplied strictly feasible
    /// lifted start (`||w|| < 1`, positive reduced margin).
    pub fn solve_from(&self, start: &[f64], options: &SolveOptions) -> Result<SolveReport> {
        if start.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} lifted weights, got {}",
                self.dim(),
                start.len()
            )));
        }
        let rho: f64 = start.iter().map(|v| v * v).sum();
        if !(rho < 1.0) || !(self.reduced_margin(start) > 0.0) {
            return Err(Error::InfeasibleStart);
        }
        if self.kind == ProgramKind::SminrAmp {
            return Ok(self.solve_with(options));
        }
        Ok(self.run_mpe(start, options, Vec::new()))
    }

    fn run_mpe(&self, start: &[f64], options: &SolveOptions, mut trace: Vec<TraceRow>) -> SolveReport {
        let dim = self.dim();
        let (n, rows, x0) = match self.kind {
            ProgramKind::MpeFull => (dim, self.directions.clone(), start.to_vec()),
            _ => self.reduced_rows(start),
        };
        let problem = BarrierProblem {
            n,
            n_w: dim,
            rows: &rows,
            // Keeps the total half-space barrier mass at one so that the
            // central path stays close to the sphere for large tuple counts.
            row_weight: 1.0 / (rows.len() / n).max(1) as f64,
            objective: Objective::QSum {
                directions: &self.directions,
                inv_scale: 1.0 / self.noise_scale,
            },
        };
        let out = problem.minimize(&x0, &self.settings(options, GAP_TOL));
        if options.trace {
            for s in &out.steps {
                trace.push(TraceRow {
                    phase: "main",
                    iteration: s.iteration,
                    objective: self.trace_objective(&s.x[..dim]),
                    margin: self.reduced_margin(&s.x[..dim]),
                    step: s.step,
                });
            }
        }
        let w = unit(&out.x[..dim]).unwrap_or_else(|| start.to_vec());
        let margin = self.reduced_margin(&w);
        let status = if out.termination == Termination::MaxIter || out.kkt_residual > KKT_TOL {
            SolveStatus::MaxIter
        } else {
            SolveStatus::Optimal
        };
        SolveReport {
            objective_value: self.mpe_value(&w),
            margin,
            weights: BeamVector::from_lifted(&w).expect("even-length finite vector"),
            status,
            iterations: out.iterations,
            kkt_residual: out.kkt_residual,
            trace,
        }
    }

    /// Constraint rows and start for the reduced program in `(w, u)`.
    fn reduced_rows(&self, start: &[f64]) -> (usize, Vec<f64>, Vec<f64>) {
        let dim = self.dim();
        let n_aux = self.interferers.len();
        let n = dim + n_aux;
        let mut rows = Vec::with_capacity((1 + 2 * n_aux) * n);
        let mut r0 = vec![0.0; n];
        r0[..dim]
            .iter_mut()
            .zip(self.lifted.column(self.user))
            .for_each(|(a, v)| *a = self.signal * v);
        r0[dim..]
            .iter_mut()
            .zip(&self.peaks)
            .for_each(|(a, p)| *a = -p);
        rows.extend(r0);
        for (i, &j) in self.interferers.iter().enumerate() {
            for sign in [1.0, -1.0] {
                let mut r = vec![0.0; n];
                r[..dim]
                    .iter_mut()
                    .zip(self.lifted.column(j))
                    .for_each(|(a, v)| *a = sign * v);
                r[dim + i] = 1.0;
                rows.extend(r);
            }
        }
        let margin = self.reduced_margin(start);
        let peak_sum: f64 = self.peaks.iter().sum();
        let slack = if peak_sum > 0.0 { margin / (2.0 * peak_sum) } else { 0.0 };
        let mut x0 = start.to_vec();
        x0.extend(
            self.interferers
                .iter()
                .map(|&j| self.lifted.dot(start, j).abs() + slack),
        );
        (n, rows, x0)
    }

    fn report_value(&self, w: &[f64], margin: f64) -> f64 {
        match self.kind {
            ProgramKind::SminrAmp => self.bound_value(margin),
            _ => self.mpe_value(w),
        }
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}
