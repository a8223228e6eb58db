//! Randomized self-checks of the analytic and optimization layers.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{
    exact_pe, feasibility_margins, pe_upper_bound, q_sum, sminr_power, BeamVector,
    InterferenceSign,
};
use crate::beamformers::{align_phase, sminr_closed_form, zf};
use crate::channel::{cscg, sample_channel, ChannelMatrix};
use crate::convex::{ConvexProgram, ProgramKind, SolveStatus};
use crate::modem::Constellation;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Instance counts for one run of [`run_checks`].
#[derive(Debug, Clone, Copy)]
struct Sizes {
    generic: usize,
    dominance: usize,
    sminr_instances: usize,
    sminr_draws: usize,
    gradient: usize,
    programs: usize,
}

impl Sizes {
    fn new(quick: bool) -> Self {
        if quick {
            Self {
                generic: 500,
                dominance: 10_000,
                sminr_instances: 20,
                sminr_draws: 10_000,
                gradient: 100,
                programs: 10,
            }
        } else {
            Self {
                generic: 5_000,
                dominance: 100_000,
                sminr_instances: 100,
                sminr_draws: 10_000,
                gradient: 1_000,
                programs: 100,
            }
        }
    }
}

pub(crate) struct Instance {
    pub h: ChannelMatrix,
    pub k: usize,
    pub users: Vec<Constellation>,
    pub sigma: f64,
}

fn random_w(rng: &mut ChaCha8Rng, n: usize) -> BeamVector {
    BeamVector::new((0..n).map(|_| cscg(rng, 1.0)).collect()).expect("nonempty")
}

/// Up to four antennas and four users with 2-, 4- or 8-PAM.
pub(crate) fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.gen_range(1..=4);
    let users = rng.gen_range(1..=4);
    let h = sample_channel(n, users, rng).expect("positive dimensions");
    let users: Vec<Constellation> = (0..users)
        .map(|_| {
            let order = [2, 4, 8][rng.gen_range(0..3)];
            let c = Constellation::unit_energy(order).expect("valid order");
            let pulse = rng.gen_range(0.25..4.0);
            Constellation::new(order, c.half_spacing(), pulse).expect("valid")
        })
        .collect();
    Instance {
        k: rng.gen_range(0..users.len()),
        h,
        users,
        sigma: 10f64.powf(-rng.gen_range(-5.0..35.0) / 20.0),
    }
}

/// Four antennas, four 8-PAM users at 20 dB.
pub(crate) fn standard_instance(rng: &mut ChaCha8Rng) -> Instance {
    Instance {
        h: sample_channel(4, 4, rng).expect("positive dimensions"),
        k: rng.gen_range(0..4),
        users: vec![Constellation::unit_energy(8).expect("valid order"); 4],
        sigma: 0.1,
    }
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name,
        passed,
        detail,
    }
}

fn scale_invariance(rng: &mut ChaCha8Rng, count: usize) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for _ in 0..count {
        let inst = random_instance(rng);
        let w = random_w(rng, inst.h.n_antennas());
        let c = 10f64.powf(rng.gen_range(-3.0..3.0));
        let a = exact_pe(&w, &inst.h, inst.k, &inst.users, inst.sigma)?;
        let b = exact_pe(
            &w.scaled(Complex64::new(c, 0.0)),
            &inst.h,
            inst.k,
            &inst.users,
            inst.sigma,
        )?;
        worst = worst.max((a - b).abs());
    }
    Ok(outcome(
        "scale_invariance",
        worst <= 1e-12,
        format!("max |Pe(cw) - Pe(w)| = {worst:.3e} over {count} draws"),
    ))
}

fn sign_symmetry(rng: &mut ChaCha8Rng, count: usize) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for _ in 0..count {
        let inst = random_instance(rng);
        let w = random_w(rng, inst.h.n_antennas());
        let args = (&w, &inst.h, inst.k, inst.users.as_slice(), inst.sigma);
        let minus = q_sum(args.0, args.1, args.2, args.3, args.4, InterferenceSign::Minus)?;
        let plus = q_sum(args.0, args.1, args.2, args.3, args.4, InterferenceSign::Plus)?;
        worst = worst.max((minus - plus).abs() / minus.abs().max(f64::MIN_POSITIVE));
    }
    Ok(outcome(
        "q_sum_sign_symmetry",
        worst <= 1e-12,
        format!("max relative difference {worst:.3e} over {count} draws"),
    ))
}

fn bound_dominance(rng: &mut ChaCha8Rng, count: usize) -> Result<CheckOutcome> {
    let mut violations = 0;
    let mut closest = f64::INFINITY;
    for _ in 0..count {
        let inst = random_instance(rng);
        let w = random_w(rng, inst.h.n_antennas());
        let exact = exact_pe(&w, &inst.h, inst.k, &inst.users, inst.sigma)?;
        let bound = pe_upper_bound(&w, &inst.h, inst.k, &inst.users, inst.sigma)?;
        closest = closest.min(bound - exact);
        if bound < exact {
            violations += 1;
        }
    }
    Ok(outcome(
        "bound_dominance",
        violations == 0,
        format!("{violations} violations in {count} draws, min(bound - exact) = {closest:.3e}"),
    ))
}

fn margin_identity(rng: &mut ChaCha8Rng, count: usize) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for _ in 0..count {
        let inst = random_instance(rng);
        let w = random_w(rng, inst.h.n_antennas());
        let m = feasibility_margins(&w, &inst.h, inst.k, &inst.users)?;
        let scale = m.full.iter().fold(m.reduced.abs(), |a, x| a.max(x.abs()));
        worst = worst.max((m.min_full() - m.reduced).abs() / scale.max(f64::MIN_POSITIVE));
    }
    Ok(outcome(
        "min_full_margin_equals_reduced",
        worst <= 1e-12,
        format!("max relative difference {worst:.3e} over {count} draws"),
    ))
}

fn convex_combination(rng: &mut ChaCha8Rng, count: usize) -> Result<CheckOutcome> {
    let (mut pairs, mut failures) = (0, 0);
    let mut attempts = 0;
    while pairs < count && attempts < 20 * count {
        attempts += 1;
        let inst = random_instance(rng);
        if inst.h.n_antennas() < inst.h.n_users() {
            continue;
        }
        let h_k = inst.h.column(inst.k);
        let w1 = align_phase(&zf(&inst.h, inst.k)?, &h_k)?.normalized()?;
        let program =
            ConvexProgram::new(ProgramKind::SminrAmp, &inst.h, inst.k, &inst.users, inst.sigma)?;
        let report = program.solve();
        if report.status == SolveStatus::Infeasible {
            continue;
        }
        let w2 = report.weights;
        let margin = |w: &BeamVector| -> Result<f64> {
            Ok(feasibility_margins(w, &inst.h, inst.k, &inst.users)?.reduced)
        };
        if margin(&w1)? <= 0.0 || margin(&w2)? <= 0.0 {
            continue;
        }
        pairs += 1;
        for i in 1..10 {
            let lambda = i as f64 / 10.0;
            let mix: Vec<Complex64> = w1
                .weights()
                .iter()
                .zip(w2.weights())
                .map(|(a, b)| a * lambda + b * (1.0 - lambda))
                .collect();
            if margin(&BeamVector::new(mix)?)? <= 0.0 {
                failures += 1;
            }
        }
    }
    Ok(outcome(
        "convex_combination_feasibility",
        failures == 0 && pairs == count,
        format!("{failures} infeasible mixtures over {pairs} feasible pairs"),
    ))
}

fn zf_tightness(rng: &mut ChaCha8Rng, count: usize) -> Result<CheckOutcome> {
    let (mut worst, mut tested) = (0.0f64, 0);
    for _ in 0..count {
        let inst = random_instance(rng);
        if inst.h.n_antennas() < inst.h.n_users() {
            continue;
        }
        let w = zf(&inst.h, inst.k)?;
        let exact = exact_pe(&w, &inst.h, inst.k, &inst.users, inst.sigma)?;
        let bound = pe_upper_bound(&w, &inst.h, inst.k, &inst.users, inst.sigma)?;
        worst = worst.max(bound - exact);
        tested += 1;
    }
    Ok(outcome(
        "zf_bound_tightness",
        worst <= 1e-10,
        format!("max bound - exact = {worst:.3e} over {tested} instances"),
    ))
}

fn sminr_optimality(rng: &mut ChaCha8Rng, instances: usize, draws: usize) -> Result<CheckOutcome> {
    let mut beaten = 0;
    for _ in 0..instances {
        let inst = standard_instance(rng);
        let n = inst.h.n_antennas();
        let best = sminr_closed_form(&inst.h, inst.k, &inst.users, inst.sigma)?;
        let value = sminr_power(&best, &inst.h, inst.k, &inst.users, inst.sigma)?;
        let tol = 1e-12 * value.abs().max(1.0);
        for _ in 0..draws {
            let w = random_w(rng, n).normalized()?;
            if sminr_power(&w, &inst.h, inst.k, &inst.users, inst.sigma)? > value + tol {
                beaten += 1;
                break;
            }
        }
    }
    Ok(outcome(
        "sminr_closed_form_optimality",
        beaten == 0,
        format!("beaten by a random unit vector in {beaten} of {instances} instances ({draws} draws each)"),
    ))
}

fn gradient(rng: &mut ChaCha8Rng, count: usize) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for i in 0..count {
        let mut inst = standard_instance(rng);
        inst.sigma = 10f64.powf(-rng.gen_range(0.0..20.0) / 20.0);
        let kind = if i % 2 == 0 {
            ProgramKind::MpeFull
        } else {
            ProgramKind::MpeReduced
        };
        let program = ConvexProgram::new(kind, &inst.h, inst.k, &inst.users, inst.sigma)?;
        let dim = program.dim();
        let mut w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let radius = rng.gen_range(0.2..1.0);
        w.iter_mut().for_each(|x| *x *= radius / norm);
        let (_, g) = program.objective_and_gradient(&w)?;
        let step = 1e-6;
        let mut err2 = 0.0;
        for d in 0..dim {
            let mut up = w.clone();
            let mut down = w.clone();
            up[d] += step;
            down[d] -= step;
            let fd = (program.objective_and_gradient(&up)?.0
                - program.objective_and_gradient(&down)?.0)
                / (2.0 * step);
            err2 += (fd - g[d]).powi(2);
        }
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max(err2.sqrt() / gnorm.max(f64::MIN_POSITIVE));
    }
    Ok(outcome(
        "gradient_finite_difference",
        worst <= 1e-6,
        format!("max relative gradient error {worst:.3e} over {count} points"),
    ))
}

fn program_equivalence(rng: &mut ChaCha8Rng, count: usize) -> Result<CheckOutcome> {
    let (mut obj_gap, mut margin_gap, mut solved) = (0.0f64, 0.0f64, 0);
    let mut attempts = 0;
    while solved < count && attempts < 20 * count {
        attempts += 1;
        let inst = standard_instance(rng);
        let full = ConvexProgram::new(ProgramKind::MpeFull, &inst.h, inst.k, &inst.users, inst.sigma)?;
        let reduced =
            ConvexProgram::new(ProgramKind::MpeReduced, &inst.h, inst.k, &inst.users, inst.sigma)?;
        let a = full.solve();
        if a.status == SolveStatus::Infeasible {
            continue;
        }
        let b = reduced.solve();
        solved += 1;
        obj_gap = obj_gap.max((a.objective_value - b.objective_value).abs());
        let lifted = b.weights.lifted();
        margin_gap = margin_gap.max((full.full_margin(&lifted) - reduced.reduced_margin(&lifted)).abs());
    }
    Ok(outcome(
        "full_equals_reduced",
        solved == count && obj_gap <= 1e-6 && margin_gap <= 1e-12,
        format!("{solved} instances, max objective gap {obj_gap:.3e}, max margin gap {margin_gap:.3e}"),
    ))
}

/// Runs every check with a fixed seed. `quick` keeps the total well under a
/// minute in optimized builds.
pub fn run_checks(quick: bool) -> Result<Vec<CheckOutcome>> {
    let sizes = Sizes::new(quick);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    Ok(vec![
        scale_invariance(&mut rng, sizes.generic)?,
        sign_symmetry(&mut rng, sizes.generic)?,
        bound_dominance(&mut rng, sizes.dominance)?,
        margin_identity(&mut rng, sizes.generic)?,
        convex_combination(&mut rng, sizes.programs)?,
        zf_tightness(&mut rng, sizes.generic)?,
        sminr_optimality(&mut rng, sizes.sminr_instances, sizes.sminr_draws)?,
        gradient(&mut rng, sizes.gradient)?,
        program_equivalence(&mut rng, sizes.programs)?,
    ])
}
