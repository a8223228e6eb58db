//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use beamsim_core::analysis::{
    binomial_sigma, error_floor, exact_pe, pe_upper_bound, sminr_power, BeamVector,
};
use beamsim_core::beamformers::{sminr_closed_form, zf};
use beamsim_core::channel::{cscg, sample_channel, ChannelMatrix};
use beamsim_core::check::run_checks;
use beamsim_core::convex::{ConvexProgram, ProgramKind, SolveOptions, SolveStatus};
use beamsim_core::modem::Constellation;
use beamsim_core::sim::{
    crossing_snr, imperfect_csi_sweep, qam_reference_sweep, run_sweep, Method, QamScenario,
    Scenario, SweepResult, QAM_LABELS,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

const PROPOSED: [Method; 4] = Method::PROPOSED;

fn pam8() -> Constellation {
    Constellation::unit_energy(8).unwrap()
}

fn standard(rng: &mut ChaCha8Rng) -> (ChannelMatrix, usize) {
    (sample_channel(4, 4, rng).unwrap(), rng.gen_range(0..4))
}

fn shared_sweep() -> SweepResult {
    let scenario = Scenario {
        snr_grid_db: (0..=12).map(|i| 2.5 * i as f64).collect(),
        ..Scenario::desk()
    };
    run_sweep(&scenario).unwrap()
}

fn analytic_agreement(sweep: &SweepResult) -> Verdict {
    let mut worst = (0.0f64, String::new());
    for m in Method::ALL {
        for snr in [0.0, 10.0, 20.0, 30.0] {
            let p = sweep.point(m.label(), snr).unwrap();
            let pe = p.pe_analytic.unwrap();
            let sigma = binomial_sigma(pe.max(p.ser), p.trials);
            let z = if sigma > 0.0 {
                (p.ser - pe).abs() / sigma
            } else if p.ser == pe {
                0.0
            } else {
                f64::INFINITY
            };
            if z > worst.0 {
                worst = (z, format!("{} at {snr} dB", m.label()));
            }
        }
    }
    verdict(
        worst.0 <= 3.0,
        format!("worst |ser - pe| = {:.2} sigma ({})", worst.0, worst.1),
    )
}

fn zf_bound_tightness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let users = vec![pam8(); 4];
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let h = sample_channel(4, 4, &mut rng).unwrap();
        let sigma = 10f64.powf(-rng.gen_range(0.0..40.0) / 20.0);
        for k in 0..4 {
            let w = zf(&h, k).unwrap();
            let gap = pe_upper_bound(&w, &h, k, &users, sigma).unwrap()
                - exact_pe(&w, &h, k, &users, sigma).unwrap();
            worst = worst.max(gap);
        }
    }
    verdict(
        worst <= 1e-10,
        format!("max bound - exact = {worst:.2e} over 4000 (realization, user) pairs"),
    )
}

fn snr_gain(sweep: &SweepResult) -> Verdict {
    let target = 2.3e-2;
    let grid: Vec<f64> = sweep.series("ZF").iter().map(|p| p.snr_db).collect();
    let proposed: Vec<(f64, f64)> = grid
        .iter()
        .map(|&s| {
            let mean = PROPOSED
                .iter()
                .map(|m| sweep.point(m.label(), s).unwrap().ser)
                .sum::<f64>()
                / PROPOSED.len() as f64;
            (s, mean)
        })
        .collect();
    let series = |label: &str| -> Vec<(f64, f64)> {
        sweep.series(label).iter().map(|p| (p.snr_db, p.ser)).collect()
    };
    let at = crossing_snr(&proposed, target);
    let zf_at = crossing_snr(&series("ZF"), target);
    let mmse_at = crossing_snr(&series("MMSE"), target);
    match (at, zf_at, mmse_at) {
        (Some(p), Some(z), Some(m)) => {
            let (gz, gm) = (z - p, m - p);
            let ok = |g: f64| (7.5..=10.5).contains(&g);
            verdict(
                ok(gz) && ok(gm),
                format!(
                    "SER {target:.1e} reached at {p:.2} dB (proposed), {z:.2} dB (ZF), {m:.2} dB (MMSE); gains {gz:.2} / {gm:.2} dB"
                ),
            )
        }
        other => verdict(false, format!("missing crossing: {other:?}")),
    }
}

fn clustering(sweep: &SweepResult) -> Verdict {
    let mut worst = (0.0f64, 0.0);
    for p in sweep.series("MPE") {
        if p.snr_db > 30.0 {
            continue;
        }
        let pes: Vec<f64> = PROPOSED
            .iter()
            .map(|m| sweep.point(m.label(), p.snr_db).unwrap().pe_analytic.unwrap())
            .collect();
        let hi = pes.iter().copied().fold(f64::MIN, f64::max);
        let lo = pes.iter().copied().fold(f64::MAX, f64::min);
        let spread = hi / lo - 1.0;
        if spread > worst.0 {
            worst = (spread, p.snr_db);
        }
    }
    verdict(
        worst.0 <= 0.10,
        format!(
            "largest relative spread of mean analytic Pe {:.2}% at {} dB",
            100.0 * worst.0,
            worst.1
        ),
    )
}

fn program_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let users = vec![pam8(); 4];
    let (mut solved, mut obj_gap, mut margin_gap, mut nonoptimal) = (0, 0.0f64, 0.0f64, 0);
    while solved < 100 {
        let (h, k) = standard(&mut rng);
        let full = ConvexProgram::new(ProgramKind::MpeFull, &h, k, &users, 0.1).unwrap();
        let reduced = ConvexProgram::new(ProgramKind::MpeReduced, &h, k, &users, 0.1).unwrap();
        let a = full.solve();
        if a.status == SolveStatus::Infeasible {
            continue;
        }
        let b = reduced.solve();
        if a.status != SolveStatus::Optimal || b.status != SolveStatus::Optimal {
            nonoptimal += 1;
        }
        solved += 1;
        obj_gap = obj_gap.max((a.objective_value - b.objective_value).abs());
        for w in [a.weights.lifted(), b.weights.lifted()] {
            margin_gap = margin_gap.max((full.full_margin(&w) - reduced.reduced_margin(&w)).abs());
        }
    }
    verdict(
        obj_gap <= 1e-6 && margin_gap <= 1e-12 && nonoptimal == 0,
        format!(
            "100 feasible instances: max |obj gap| {obj_gap:.2e}, max margin gap {margin_gap:.2e}, {nonoptimal} not optimal"
        ),
    )
}

/// Random strictly feasible lifted start: a random mixture of the
/// max-margin point and a random direction, shrunk into the open ball.
fn random_start(program: &ConvexProgram, w1: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let r: Vec<f64> = (0..w1.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        let lambda = rng.gen_range(0.2..1.0);
        let shrink = rng.gen_range(0.1..0.95);
        let x: Vec<f64> = w1
            .iter()
            .zip(&r)
            .map(|(a, b)| shrink * (lambda * a + (1.0 - lambda) * b / rn))
            .collect();
        if x.iter().map(|v| v * v).sum::<f64>() < 1.0 && program.reduced_margin(&x) > 0.0 {
            return x;
        }
    }
}

fn unique_minimizer() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let users = vec![pam8(); 4];
    let (mut done, mut worst) = (0, 0.0f64);
    while done < 50 {
        let (h, k) = standard(&mut rng);
        let kind = if done % 2 == 0 {
            ProgramKind::MpeFull
        } else {
            ProgramKind::MpeReduced
        };
        let program = ConvexProgram::new(kind, &h, k, &users, 0.1).unwrap();
        let phase1 = program.feasibility_phase();
        if !phase1.feasible {
            continue;
        }
        let w1 = phase1.weights.lifted();
        let opts = SolveOptions::default();
        let canonical = |start: Vec<f64>| -> Vec<f64> {
            let w = program.solve_from(&start, &opts).unwrap().weights.lifted();
            let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            w.iter().map(|x| x / n).collect()
        };
        let a = canonical(random_start(&program, &w1, &mut rng));
        let b = canonical(random_start(&program, &w1, &mut rng));
        let dist = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(dist);
        done += 1;
    }
    verdict(
        worst <= 1e-5,
        format!("max distance between minimizers from independent starts {worst:.2e} over 50 instances"),
    )
}

fn closed_form_optimality() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let users = vec![pam8(); 4];
    let mut beaten = 0;
    for _ in 0..100 {
        let (h, k) = standard(&mut rng);
        let best = sminr_closed_form(&h, k, &users, 0.1).unwrap();
        let value = sminr_power(&best, &h, k, &users, 0.1).unwrap();
        for _ in 0..10_000 {
            let w = BeamVector::new((0..4).map(|_| cscg(&mut rng, 1.0)).collect())
                .unwrap()
                .normalized()
                .unwrap();
            if sminr_power(&w, &h, k, &users, 0.1).unwrap() > value {
                beaten += 1;
                break;
            }
        }
    }
    let mut worst_rel = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(1..=6);
        let order = [2, 4, 8, 16][rng.gen_range(0..4)];
        let d = rng.gen_range(0.1..2.0);
        let eg = rng.gen_range(0.1..5.0);
        let sigma = rng.gen_range(0.01..2.0);
        let c = vec![Constellation::new(order, d, eg).unwrap()];
        let h = sample_channel(n, 1, &mut rng).unwrap();
        let w = sminr_closed_form(&h, 0, &c, sigma).unwrap();
        let got = sminr_power(&w, &h, 0, &c, sigma).unwrap();
        let norm2: f64 = h.column(0).iter().map(|z| z.norm_sqr()).sum();
        let expected = 2.0 * d * d * eg * norm2 / (sigma * sigma);
        worst_rel = worst_rel.max((got - expected).abs() / expected);
    }
    verdict(
        beaten == 0 && worst_rel <= 1e-10,
        format!(
            "beaten in {beaten}/100 instances by 10^4 random unit vectors; single-user closed form relative error {worst_rel:.2e}"
        ),
    )
}

fn error_floor_limit() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let col: Vec<Complex64> = (0..2).map(|_| cscg(&mut rng, 1.0)).collect();
    let h = ChannelMatrix::from_columns(&[col.clone(), col]).unwrap();
    let w = BeamVector::new(h.column(0).iter().map(|z| z.conj()).collect()).unwrap();
    let mut values = Vec::new();
    for scale in [1e2f64, 1e4, 1e6] {
        let c = vec![Constellation::new(2, 1.0, scale * scale).unwrap(); 2];
        values.push(exact_pe(&w, &h, 0, &c, 1.0).unwrap());
    }
    let floor = error_floor(0, &[Constellation::unit_energy(2).unwrap(); 2]).unwrap();
    let last = *values.last().unwrap();
    verdict(
        (last - 0.25).abs() <= 1e-6 && floor == 0.25,
        format!(
            "Pe at amplitude scale 1e2/1e4/1e6: {:.8}/{:.8}/{:.8}; floor (L-1)/N_b = {floor}",
            values[0], values[1], values[2]
        ),
    )
}

fn property_suites() -> Verdict {
    let start = Instant::now();
    let outcomes = run_checks(true).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    let required = [
        "scale_invariance",
        "q_sum_sign_symmetry",
        "bound_dominance",
        "convex_combination_feasibility",
    ];
    let present = required
        .iter()
        .all(|r| outcomes.iter().any(|o| o.name == *r));
    verdict(
        failed.is_empty() && present && elapsed < 60.0,
        format!(
            "{} checks in {elapsed:.2} s, failed: {failed:?}",
            outcomes.len()
        ),
    )
}

fn gradient_check() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let users = vec![pam8(); 4];
    let mut worst = 0.0f64;
    for i in 0..100 {
        let (h, k) = standard(&mut rng);
        let sigma = 10f64.powf(-rng.gen_range(0.0..20.0) / 20.0);
        let kind = [ProgramKind::MpeFull, ProgramKind::MpeReduced][i % 2];
        let program = ConvexProgram::new(kind, &h, k, &users, sigma).unwrap();
        let mut w: Vec<f64> = (0..program.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scale = rng.gen_range(0.1..1.0) / w.iter().map(|x| x * x).sum::<f64>().sqrt();
        w.iter_mut().for_each(|x| *x *= scale);
        let (_, g) = program.objective_and_gradient(&w).unwrap();
        let h_step = 1e-6;
        let fd: Vec<f64> = (0..w.len())
            .map(|d| {
                let mut up = w.clone();
                let mut down = w.clone();
                up[d] += h_step;
                down[d] -= h_step;
                (program.objective_and_gradient(&up).unwrap().0
                    - program.objective_and_gradient(&down).unwrap().0)
                    / (2.0 * h_step)
            })
            .collect();
        let err = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(err / norm);
    }
    verdict(
        worst <= 1e-6,
        format!("max relative gradient error {worst:.2e} over 100 points"),
    )
}

fn sum_rate_ceiling() -> Verdict {
    let scenario = Scenario {
        snr_grid_db: vec![45.0],
        methods: PROPOSED.to_vec(),
        ..Scenario::desk()
    };
    let res = run_sweep(&scenario).unwrap();
    let qam = qam_reference_sweep(&QamScenario::desk(vec![45.0], 1)).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for p in res.points.iter().chain(&qam.points) {
        ok &= p.sum_rate >= 11.5;
        parts.push(format!("{} {:.3}", p.method, p.sum_rate));
    }
    ok &= QAM_LABELS.iter().all(|l| qam.points.iter().any(|p| p.method == *l));
    verdict(ok, format!("sum rate at 45 dB: {}", parts.join(", ")))
}

fn imperfect_csi_ordering() -> Verdict {
    let scenario = Scenario {
        snr_grid_db: vec![40.0],
        methods: vec![Method::Zf, Method::Mmse, Method::Sminr],
        ..Scenario::desk()
    };
    let res = imperfect_csi_sweep(&scenario, &[0.001]).unwrap();
    let ser = |label: &str| res.point(label, 40.0).unwrap().ser;
    let (s, z, m) = (ser("SMINR"), ser("ZF"), ser("MMSE"));
    verdict(
        10.0 * s <= z && 10.0 * s <= m,
        format!("SER at 40 dB, CSI error variance 1e-3: SMINR {s:.2e}, ZF {z:.2e}, MMSE {m:.2e}"),
    )
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

fn main() -> ExitCode {
    let started = Instant::now();
    let sweep = shared_sweep();
    let criteria: Vec<Criterion> = vec![
        ("analytic/empirical agreement", Box::new(|| analytic_agreement(&sweep))),
        ("ZF bound tightness", Box::new(zf_bound_tightness)),
        ("SNR gain over ZF and MMSE", Box::new(|| snr_gain(&sweep))),
        ("proposed-method clustering", Box::new(|| clustering(&sweep))),
        ("full/reduced program equivalence", Box::new(program_equivalence)),
        ("unique minimizer", Box::new(unique_minimizer)),
        ("closed-form SMINR optimality", Box::new(closed_form_optimality)),
        ("error floor", Box::new(error_floor_limit)),
        ("property suites", Box::new(property_suites)),
        ("gradient correctness", Box::new(gradient_check)),
        ("sum-rate ceiling", Box::new(sum_rate_ceiling)),
        ("imperfect CSI ordering", Box::new(imperfect_csi_ordering)),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        if !v.passed {
            failures += 1;
        }
        println!(
            "[{}] {:>2}. {name}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            i + 1,
            v.detail
        );
    }
    println!(
        "acceptance: {}/{} passed in {:.0} s",
        criteria.len() - failures,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
