//! Monte-Carlo symbol-error-rate experiments.
//!
//! Every realization draws its channel, CSI error, symbol block and unit
//! noise from its own ChaCha stream, so results do not depend on thread
//! count or scheduling. Symbols and noise are shared by all methods and SNR
//! points of a realization, and the CSI error stream is separate from the
//! others so that sweeps over error variance see the same channels.

use std::fmt::Write as _;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{binomial_sigma, exact_pe, pe_upper_bound, BeamVector};
use crate::beamformers::{mmse, sminr_closed_form, zf};
use crate::channel::{cscg, perturb_csi, sample_channel, ChannelMatrix};
use crate::convex::{ConvexProgram, ProgramKind, SolveStatus, MAX_TUPLES};
use crate::modem::{decide, Constellation};
use crate::{Error, Result};

pub const FULL_REALIZATIONS: usize = 10_000;
pub const FULL_SYMBOLS: usize = 1_000;
pub const DESK_REALIZATIONS: usize = 500;
pub const DESK_SYMBOLS: usize = 2_000;

/// Two-sided 95% normal quantile used for `ser_ci`.
const CI_Z: f64 = 1.959_963_984_540_054;

const STREAM_CHANNEL: u64 = 0;
const STREAM_CSI: u64 = 1;
const STREAM_SYMBOLS: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAMS: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ZF")]
    Zf,
    #[serde(rename = "MMSE")]
    Mmse,
    #[serde(rename = "MPE")]
    MpeFull,
    #[serde(rename = "RC-MPE")]
    MpeReduced,
    #[serde(rename = "SMINR-Amp")]
    SminrAmp,
    #[serde(rename = "SMINR")]
    Sminr,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Zf,
        Method::Mmse,
        Method::MpeFull,
        Method::MpeReduced,
        Method::SminrAmp,
        Method::Sminr,
    ];

    /// The four proposed designs.
    pub const PROPOSED: [Method; 4] = [
        Method::MpeFull,
        Method::MpeReduced,
        Method::SminrAmp,
        Method::Sminr,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Zf => "ZF",
            Method::Mmse => "MMSE",
            Method::MpeFull => "MPE",
            Method::MpeReduced => "RC-MPE",
            Method::SminrAmp => "SMINR-Amp",
            Method::Sminr => "SMINR",
        }
    }

    fn depends_on_snr(self) -> bool {
        matches!(self, Method::Mmse | Method::MpeFull | Method::MpeReduced)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Ok(match key.as_str() {
            "zf" => Method::Zf,
            "mmse" => Method::Mmse,
            "mpe" | "mpe-full" => Method::MpeFull,
            "rc-mpe" | "mpe-reduced" => Method::MpeReduced,
            "sminr-amp" => Method::SminrAmp,
            "sminr" => Method::Sminr,
            _ => return Err(Error::InvalidScenario(format!("unknown method '{s}'"))),
        })
    }
}

/// One experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_antennas: usize,
    pub users: Vec<Constellation>,
    pub snr_grid_db: Vec<f64>,
    pub n_realizations: usize,
    pub n_symbols: usize,
    pub csi_error_var: f64,
    pub methods: Vec<Method>,
    pub seed: u64,
}

impl Default for Scenario {
    /// Four antennas, four unit-energy 8-PAM users, 10^4 realizations of
    /// 10^3-symbol blocks, all six methods, 0 to 40 dB in 5 dB steps.
    fn default() -> Self {
        Self {
            n_antennas: 4,
            users: vec![Constellation::unit_energy(8).expect("8-PAM is valid"); 4],
            snr_grid_db: (0..=8).map(|i| 5.0 * i as f64).collect(),
            n_realizations: FULL_REALIZATIONS,
            n_symbols: FULL_SYMBOLS,
            csi_error_var: 0.0,
            methods: Method::ALL.to_vec(),
            seed: 1,
        }
    }
}

impl Scenario {
    /// [`Scenario::default`] at 500 realizations of 2000 symbols.
    pub fn desk() -> Self {
        Self {
            n_realizations: DESK_REALIZATIONS,
            n_symbols: DESK_SYMBOLS,
            ..Self::default()
        }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if self.n_antennas == 0 {
            return bad("need at least one antenna".into());
        }
        if self.users.is_empty() {
            return bad("need at least one user".into());
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return bad("SNR grid must be non-empty and finite".into());
        }
        if self.n_realizations == 0 || self.n_symbols == 0 {
            return bad("realizations and symbols per block must be positive".into());
        }
        if !(self.csi_error_var >= 0.0 && self.csi_error_var.is_finite()) {
            return bad(format!("CSI error variance {} must be >= 0", self.csi_error_var));
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return bad("duplicate methods".into());
        }
        if self.methods.contains(&Method::Zf) && self.n_antennas < self.n_users() {
            return bad(format!(
                "ZF needs at least as many antennas ({}) as users ({})",
                self.n_antennas,
                self.n_users()
            ));
        }
        if self
            .methods
            .iter()
            .any(|m| matches!(m, Method::MpeFull | Method::MpeReduced))
        {
            for k in 0..self.n_users() {
                let tuples: f64 = self
                    .users
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != k)
                    .map(|(_, c)| c.order() as f64)
                    .product();
                if tuples > MAX_TUPLES as f64 {
                    return bad(format!(
                        "user {k} sees {tuples} interferer tuples, above the MPE limit {MAX_TUPLES}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Noise standard deviation for unit-energy symbols at `snr_db`.
pub fn sigma_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 20.0)
}

/// Aggregates for one (series, SNR) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub method: String,
    pub csi_error_var: f64,
    pub snr_db: f64,
    /// Monte-Carlo SER averaged over users and realizations.
    pub ser: f64,
    pub ser_std_error: f64,
    /// Half-width of the 95% normal-approximation interval.
    pub ser_ci: f64,
    pub ser_per_user: Vec<f64>,
    pub errors: u64,
    pub trials: u64,
    /// Mean exact error probability on the true channel.
    pub pe_analytic: Option<f64>,
    /// Mean single-term upper bound, clamped to one after averaging.
    pub pe_bound: Option<f64>,
    pub sum_rate: f64,
    /// Fraction of (realization, user) designs that fell back to MMSE.
    pub infeasible_frac: f64,
    /// Fraction of solves that stopped before certifying optimality.
    pub nonoptimal_frac: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvLayout {
    Sweep,
    Rate,
    Csi,
}

impl CsvLayout {
    pub fn header(self) -> &'static str {
        match self {
            CsvLayout::Sweep => "method,snr_db,ser,ser_ci,pe_analytic,pe_bound,infeasible_frac",
            CsvLayout::Rate => "method,snr_db,sum_rate,ser,ser_ci,infeasible_frac",
            CsvLayout::Csi => {
                "method,csi_var,snr_db,ser,ser_ci,pe_analytic,pe_bound,infeasible_frac"
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

impl SweepResult {
    pub fn point(&self, method: &str, snr_db: f64) -> Option<&SweepPoint> {
        self.points
            .iter()
            .find(|p| p.method == method && p.snr_db == snr_db)
    }

    /// Points of one series in SNR order.
    pub fn series(&self, method: &str) -> Vec<&SweepPoint> {
        let mut pts: Vec<&SweepPoint> = self.points.iter().filter(|p| p.method == method).collect();
        pts.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
        pts
    }

    pub fn extend(&mut self, other: SweepResult) {
        self.points.extend(other.points);
    }

    pub fn to_csv(&self, layout: CsvLayout) -> String {
        let mut out = String::from(layout.header());
        out.push('\n');
        for p in &self.points {
            let row = match layout {
                CsvLayout::Sweep => format!(
                    "{},{},{},{},{},{},{}",
                    p.method,
                    num(p.snr_db),
                    num(p.ser),
                    num(p.ser_ci),
                    opt(p.pe_analytic),
                    opt(p.pe_bound),
                    num(p.infeasible_frac)
                ),
                CsvLayout::Rate => format!(
                    "{},{},{},{},{},{}",
                    p.method,
                    num(p.snr_db),
                    num(p.sum_rate),
                    num(p.ser),
                    num(p.ser_ci),
                    num(p.infeasible_frac)
                ),
                CsvLayout::Csi => format!(
                    "{},{},{},{},{},{},{},{}",
                    p.method,
                    num(p.csi_error_var),
                    num(p.snr_db),
                    num(p.ser),
                    num(p.ser_ci),
                    opt(p.pe_analytic),
                    opt(p.pe_bound),
                    num(p.infeasible_frac)
                ),
            };
            let _ = writeln!(out, "{row}");
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Goodput `sum_k bits_k (1 - SER_k)`.
pub fn goodput(ser_per_user: &[f64], bits_per_symbol: &[f64]) -> Result<f64> {
    if ser_per_user.len() != bits_per_symbol.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} SER values for {} users",
            ser_per_user.len(),
            bits_per_symbol.len()
        )));
    }
    if let Some(bad) = ser_per_user.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidScenario(format!("SER {bad} outside [0, 1]")));
    }
    Ok(ser_per_user
        .iter()
        .zip(bits_per_symbol)
        .map(|(p, b)| b * (1.0 - p))
        .sum())
}

/// `sum_k log2(L_k) (1 - SER_k)` in bits per channel use.
pub fn sum_rate(ser_per_user: &[f64], constellations: &[Constellation]) -> Result<f64> {
    let bits: Vec<f64> = constellations.iter().map(Constellation::bits_per_symbol).collect();
    goodput(ser_per_user, &bits)
}

/// SNR where a decreasing SER series first crosses `target`, by linear
/// interpolation of `log10(SER)` against SNR in dB.
pub fn crossing_snr(series: &[(f64, f64)], target: f64) -> Option<f64> {
    if series.first().is_some_and(|&(_, p)| p <= target) {
        return Some(series[0].0);
    }
    series.windows(2).find_map(|w| {
        let ((s0, p0), (s1, p1)) = (w[0], w[1]);
        if p0 > target && p1 <= target {
            if p1 <= 0.0 {
                return Some(s1);
            }
            let (l0, l1, lt) = (p0.log10(), p1.log10(), target.log10());
            Some(s0 + (s1 - s0) * (l0 - lt) / (l0 - l1))
        } else {
            None
        }
    })
}

fn stream_rng(seed: u64, realization: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(realization as u64 * STREAMS + stream);
    rng
}

/// Symbol indices, symbol values and unit-variance noise for one block.
struct Block {
    n_users: usize,
    n_antennas: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
    noise: Vec<Complex64>,
}

impl Block {
    fn draw(sc: &Scenario, realization: usize) -> Self {
        let (k, n, s) = (sc.n_users(), sc.n_antennas, sc.n_symbols);
        let mut rs = stream_rng(sc.seed, realization, STREAM_SYMBOLS);
        let mut indices = Vec::with_capacity(s * k);
        let mut values = Vec::with_capacity(s * k);
        for _ in 0..s {
            for c in &sc.users {
                let l = rs.gen_range(1..=c.order());
                indices.push(l);
                values.push(c.symbol(l).expect("index drawn in range"));
            }
        }
        let mut rn = stream_rng(sc.seed, realization, STREAM_NOISE);
        let noise = (0..s * n).map(|_| cscg(&mut rn, 1.0)).collect();
        Self {
            n_users: k,
            n_antennas: n,
            indices,
            values,
            noise,
        }
    }

    fn len(&self) -> usize {
        self.indices.len() / self.n_users
    }

    /// `Re{w z_t}` for every symbol time.
    fn noise_projection(&self, w: &BeamVector) -> Vec<f64> {
        self.noise
            .chunks(self.n_antennas)
            .map(|z| {
                w.weights()
                    .iter()
                    .zip(z)
                    .map(|(a, b)| a.re * b.re - a.im * b.im)
                    .sum()
            })
            .collect()
    }
}

/// Per-(method, SNR) accumulators of one realization.
#[derive(Debug, Clone, Default)]
struct Cell {
    errors: Vec<u64>,
    pe: f64,
    bound: f64,
    infeasible: u64,
    nonoptimal: u64,
}

/// A designed beamformer, or `None` when the design program is infeasible.
struct Design {
    weights: Option<BeamVector>,
    nonoptimal: bool,
}

fn design(
    method: Method,
    h_est: &ChannelMatrix,
    k: usize,
    users: &[Constellation],
    sigma: f64,
    energies: &[f64],
) -> Result<Design> {
    let solved = |kind: ProgramKind, s: f64| -> Result<Design> {
        let report = ConvexProgram::new(kind, h_est, k, users, s)?.solve();
        Ok(match report.status {
            SolveStatus::Infeasible => Design {
                weights: None,
                nonoptimal: false,
            },
            status => Design {
                weights: Some(report.weights),
                nonoptimal: status != SolveStatus::Optimal,
            },
        })
    };
    let plain = |w: BeamVector| Design {
        weights: Some(w),
        nonoptimal: false,
    };
    match method {
        Method::Zf => Ok(plain(zf(h_est, k)?)),
        Method::Mmse => Ok(plain(mmse(h_est, k, sigma, energies)?)),
        Method::MpeFull => solved(ProgramKind::MpeFull, sigma),
        Method::MpeReduced => solved(ProgramKind::MpeReduced, sigma),
        // Both designs are invariant to the noise level.
        Method::SminrAmp => solved(ProgramKind::SminrAmp, 1.0),
        Method::Sminr => Ok(plain(sminr_closed_form(h_est, k, users, 1.0)?)),
    }
}

fn count_errors(
    block: &Block,
    h: &ChannelMatrix,
    h_est: &ChannelMatrix,
    w: &BeamVector,
    k: usize,
    c: &Constellation,
    sigma: f64,
) -> u64 {
    let g = w.real_gains(h);
    let gain = w.response(h_est, k).re * c.pulse_energy().sqrt();
    let proj = block.noise_projection(w);
    let users = block.n_users;
    let mut errors = 0;
    for (t, &p) in proj.iter().enumerate().take(block.len()) {
        let s = &block.values[t * users..(t + 1) * users];
        let clean: f64 = g.iter().zip(s).map(|(a, b)| a * b).sum();
        let y = clean + sigma * p;
        if decide(y, gain, c) != block.indices[t * users + k] {
            errors += 1;
        }
    }
    errors
}

fn simulate_realization(sc: &Scenario, r: usize) -> Result<Vec<Cell>> {
    let k_users = sc.n_users();
    let mut rh = stream_rng(sc.seed, r, STREAM_CHANNEL);
    let h = sample_channel(sc.n_antennas, k_users, &mut rh)?;
    let mut rc = stream_rng(sc.seed, r, STREAM_CSI);
    let h_est = perturb_csi(&h, sc.csi_error_var, &mut rc)?;
    let block = Block::draw(sc, r);
    let energies: Vec<f64> = sc.users.iter().map(Constellation::average_energy).collect();
    let n_snr = sc.snr_grid_db.len();
    let mut cells = vec![Cell::default(); sc.methods.len() * n_snr];

    for (mi, &method) in sc.methods.iter().enumerate() {
        let fixed: Option<Vec<Design>> = if method.depends_on_snr() {
            None
        } else {
            Some(
                (0..k_users)
                    .map(|k| design(method, &h_est, k, &sc.users, 1.0, &energies))
                    .collect::<Result<_>>()?,
            )
        };
        for (si, &snr) in sc.snr_grid_db.iter().enumerate() {
            let sigma = sigma_from_snr_db(snr);
            let cell = &mut cells[mi * n_snr + si];
            cell.errors = vec![0; k_users];
            for k in 0..k_users {
                let owned;
                let d = match &fixed {
                    Some(list) => &list[k],
                    None => {
                        owned = design(method, &h_est, k, &sc.users, sigma, &energies)?;
                        &owned
                    }
                };
                let w = match &d.weights {
                    Some(w) => w.clone(),
                    None => {
                        cell.infeasible += 1;
                        mmse(&h_est, k, sigma, &energies)?
                    }
                };
                if d.nonoptimal {
                    cell.nonoptimal += 1;
                }
                let c = &sc.users[k];
                cell.errors[k] = count_errors(&block, &h, &h_est, &w, k, c, sigma);
                cell.pe += exact_pe(&w, &h, k, &sc.users, sigma)?;
                cell.bound += pe_upper_bound(&w, &h, k, &sc.users, sigma)?;
            }
        }
    }
    Ok(cells)
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    label: &str,
    csi_error_var: f64,
    snr_db: f64,
    errors_per_user: &[u64],
    trials_per_user: u64,
    bits: &[f64],
    analytic: Option<(f64, f64)>,
    infeasible_frac: f64,
    nonoptimal_frac: f64,
) -> Result<SweepPoint> {
    let users = errors_per_user.len() as u64;
    let errors: u64 = errors_per_user.iter().sum();
    let trials = trials_per_user * users;
    let ser = errors as f64 / trials as f64;
    let ser_per_user: Vec<f64> = errors_per_user
        .iter()
        .map(|&e| e as f64 / trials_per_user as f64)
        .collect();
    let sigma = binomial_sigma(ser, trials);
    Ok(SweepPoint {
        method: label.to_string(),
        csi_error_var,
        snr_db,
        ser,
        ser_std_error: sigma,
        ser_ci: CI_Z * sigma,
        sum_rate: goodput(&ser_per_user, bits)?,
        ser_per_user,
        errors,
        trials,
        pe_analytic: analytic.map(|(pe, _)| pe.clamp(0.0, 1.0)),
        pe_bound: analytic.map(|(_, b)| b.clamp(0.0, 1.0)),
        infeasible_frac,
        nonoptimal_frac,
    })
}

/// Runs every method of `sc` over its SNR grid.
pub fn run_sweep(sc: &Scenario) -> Result<SweepResult> {
    sc.validate()?;
    let per_realization: Vec<Vec<Cell>> = (0..sc.n_realizations)
        .into_par_iter()
        .map(|r| simulate_realization(sc, r))
        .collect::<Result<_>>()?;

    let k_users = sc.n_users();
    let n_snr = sc.snr_grid_db.len();
    let bits: Vec<f64> = sc.users.iter().map(Constellation::bits_per_symbol).collect();
    let trials_per_user = (sc.n_realizations * sc.n_symbols) as u64;
    let designs = (sc.n_realizations * k_users) as f64;
    let mut points = Vec::with_capacity(sc.methods.len() * n_snr);
    for (mi, method) in sc.methods.iter().enumerate() {
        for (si, &snr) in sc.snr_grid_db.iter().enumerate() {
            let idx = mi * n_snr + si;
            let mut errors = vec![0u64; k_users];
            let (mut pe, mut bound, mut infeasible, mut nonoptimal) = (0.0, 0.0, 0u64, 0u64);
            // Fixed realization order keeps floating-point sums reproducible.
            for cells in &per_realization {
                let c = &cells[idx];
                errors.iter_mut().zip(&c.errors).for_each(|(a, b)| *a += b);
                pe += c.pe;
                bound += c.bound;
                infeasible += c.infeasible;
                nonoptimal += c.nonoptimal;
            }
            points.push(summarize(
                method.label(),
                sc.csi_error_var,
                snr,
                &errors,
                trials_per_user,
                &bits,
                Some((pe / designs, bound / designs)),
                infeasible as f64 / designs,
                nonoptimal as f64 / designs,
            )?);
        }
    }
    Ok(SweepResult { points })
}

/// [`run_sweep`] once per CSI error variance, on common channels, symbols
/// and noise. Only ZF, MMSE and SMINR are accepted.
pub fn imperfect_csi_sweep(sc: &Scenario, variances: &[f64]) -> Result<SweepResult> {
    validate_csi_sweep(sc, variances)?;
    let mut out = SweepResult::default();
    for &var in variances {
        let scenario = Scenario {
            csi_error_var: var,
            ..sc.clone()
        };
        out.extend(run_sweep(&scenario)?);
    }
    Ok(out)
}

/// Checks the arguments of [`imperfect_csi_sweep`] without running it.
pub fn validate_csi_sweep(sc: &Scenario, variances: &[f64]) -> Result<()> {
    sc.validate()?;
    if let Some(m) = sc
        .methods
        .iter()
        .find(|m| !matches!(m, Method::Zf | Method::Mmse | Method::Sminr))
    {
        return Err(Error::InvalidScenario(format!(
            "imperfect-CSI sweeps support ZF, MMSE and SMINR, not {m}"
        )));
    }
    if variances.is_empty() {
        return Err(Error::InvalidScenario("no CSI error variances given".into()));
    }
    if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::NegativeVariance(*v));
    }
    Ok(())
}

/// Two-dimensional reference: `n_users` users sending square QAM, detected
/// through ZF or MMSE with a per-axis nearest-point decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QamScenario {
    pub n_antennas: usize,
    pub n_users: usize,
    pub order: usize,
    pub snr_grid_db: Vec<f64>,
    pub n_realizations: usize,
    pub n_symbols: usize,
    pub seed: u64,
}

impl QamScenario {
    /// Two 64-QAM users on four antennas, matching the PAM scenario's 12 bits.
    pub fn desk(snr_grid_db: Vec<f64>, seed: u64) -> Self {
        Self {
            n_antennas: 4,
            n_users: 2,
            order: 64,
            snr_grid_db,
            n_realizations: DESK_REALIZATIONS,
            n_symbols: DESK_SYMBOLS,
            seed,
        }
    }

    /// Per-axis PAM with unit average QAM symbol energy.
    pub fn axis_constellation(&self) -> Result<Constellation> {
        let side = (self.order as f64).sqrt().round() as usize;
        if side < 2 || side * side != self.order {
            return Err(Error::NonSquareQam(self.order));
        }
        let l = side as f64;
        Constellation::new(side, (3.0 / (2.0 * (l * l - 1.0))).sqrt(), 1.0)
    }

    fn validate(&self) -> Result<Constellation> {
        let axis = self.axis_constellation()?;
        if self.n_users == 0 || self.n_antennas < self.n_users {
            return Err(Error::InvalidScenario(format!(
                "QAM reference needs 1 <= users ({}) <= antennas ({})",
                self.n_users, self.n_antennas
            )));
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidScenario("SNR grid must be non-empty and finite".into()));
        }
        if self.n_realizations == 0 || self.n_symbols == 0 {
            return Err(Error::InvalidScenario(
                "realizations and symbols per block must be positive".into(),
            ));
        }
        Ok(axis)
    }
}

pub const QAM_LABELS: [&str; 2] = ["ZF-QAM", "MMSE-QAM"];

fn qam_realization(sc: &QamScenario, axis: &Constellation, r: usize) -> Result<Vec<Vec<u64>>> {
    let (n, k_users, s) = (sc.n_antennas, sc.n_users, sc.n_symbols);
    let mut rh = stream_rng(sc.seed, r, STREAM_CHANNEL);
    let h = sample_channel(n, k_users, &mut rh)?;
    let mut rs = stream_rng(sc.seed, r, STREAM_SYMBOLS);
    let side = axis.order();
    // (in-phase index, quadrature index) per user and symbol time.
    let idx: Vec<(usize, usize)> = (0..s * k_users)
        .map(|_| (rs.gen_range(1..=side), rs.gen_range(1..=side)))
        .collect();
    let x: Vec<Complex64> = idx
        .iter()
        .map(|&(i, q)| {
            Complex64::new(
                axis.symbol(i).expect("index drawn in range"),
                axis.symbol(q).expect("index drawn in range"),
            )
        })
        .collect();
    let mut rn = stream_rng(sc.seed, r, STREAM_NOISE);
    let noise: Vec<Complex64> = (0..s * n).map(|_| cscg(&mut rn, 1.0)).collect();
    let energies = vec![1.0; k_users];

    let mut out = Vec::with_capacity(2 * sc.snr_grid_db.len());
    let zf_w: Vec<BeamVector> = (0..k_users).map(|k| zf(&h, k)).collect::<Result<_>>()?;
    for detector in 0..2 {
        for &snr in &sc.snr_grid_db {
            let sigma = sigma_from_snr_db(snr);
            let mut errors = vec![0u64; k_users];
            for k in 0..k_users {
                let w = if detector == 0 {
                    zf_w[k].clone()
                } else {
                    mmse(&h, k, sigma, &energies)?
                };
                let resp: Vec<Complex64> = (0..k_users).map(|j| w.response(&h, j)).collect();
                let own = resp[k];
                for t in 0..s {
                    let clean: Complex64 = resp
                        .iter()
                        .zip(&x[t * k_users..(t + 1) * k_users])
                        .map(|(a, b)| a * b)
                        .sum();
                    let y = clean + w.apply(&noise[t * n..(t + 1) * n]) * sigma;
                    let z = y / own;
                    let (i, q) = idx[t * k_users + k];
                    if decide(z.re, 1.0, axis) != i || decide(z.im, 1.0, axis) != q {
                        errors[k] += 1;
                    }
                }
            }
            out.push(errors);
        }
    }
    Ok(out)
}

/// ZF and MMSE symbol error rates for the square-QAM reference, with
/// QAM-symbol-level error counting. `pe_analytic` and `pe_bound` are absent.
pub fn qam_reference_sweep(sc: &QamScenario) -> Result<SweepResult> {
    let axis = sc.validate()?;
    let per_realization: Vec<Vec<Vec<u64>>> = (0..sc.n_realizations)
        .into_par_iter()
        .map(|r| qam_realization(sc, &axis, r))
        .collect::<Result<_>>()?;
    let bits = vec![(sc.order as f64).log2(); sc.n_users];
    let trials_per_user = (sc.n_realizations * sc.n_symbols) as u64;
    let n_snr = sc.snr_grid_db.len();
    let mut points = Vec::new();
    for (detector, label) in QAM_LABELS.iter().enumerate() {
        for (si, &snr) in sc.snr_grid_db.iter().enumerate() {
            let idx = detector * n_snr + si;
            let mut errors = vec![0u64; sc.n_users];
            for cells in &per_realization {
                errors.iter_mut().zip(&cells[idx]).for_each(|(a, b)| *a += b);
            }
            points.push(summarize(
                label,
                0.0,
                snr,
                &errors,
                trials_per_user,
                &bits,
                None,
                0.0,
                0.0,
            )?);
        }
    }
    Ok(SweepResult { points })
}
