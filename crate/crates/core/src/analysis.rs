//! Exact symbol error probability of a linear receive beamformer and the
//! quantities derived from it.
//!
//! For user `k` with weights `w`, let `g_j = Re{w h_j}`, `a = d sqrt(E_g)`
//! and `I_b = sum_{j != k} g_j s_j(b)` for every interferer tuple `b`. The
//! error probability under the threshold detector is
//!
//! ```text
//! P_e = 2 (L_k - 1) / (L_k N_p) * sum_b Q((g_k a - I_b) / (sigma_z / sqrt 2 * ||w||))
//! ```
//!
//! Nothing here clamps probabilities: the single-term bound may exceed one.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use rand::Rng;
use libm::erfc;

use crate::channel::{received_signal, ChannelMatrix};
use crate::modem::{decide, draw_symbols, Constellation};
use crate::{Error, Result};

/// Receive weights `w_k` (a `1 x N` row). `w h` is the plain product
/// `sum_i w_i h_i`, without conjugation.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamVector {
    weights: Vec<Complex64>,
}

impl BeamVector {
    pub fn new(weights: Vec<Complex64>) -> Result<Self> {
        if weights.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerical("non-finite beamforming weight".into()));
        }
        Ok(Self { weights })
    }

    pub fn from_real(weights: &[f64]) -> Result<Self> {
        Self::new(weights.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    /// Inverse of the lifting `w -> [Re{w}, Im{w}]`.
    pub fn from_lifted(lifted: &[f64]) -> Result<Self> {
        if !lifted.len().is_multiple_of(2) {
            return Err(Error::DimensionMismatch(
                "lifted weight vector must have even length".into(),
            ));
        }
        let n = lifted.len() / 2;
        Self::new(
            (0..n)
                .map(|i| Complex64::new(lifted[i], lifted[n + i]))
                .collect(),
        )
    }

    /// `[Re{w}, Im{w}]` in `R^{2N}`.
    pub fn lifted(&self) -> Vec<f64> {
        self.weights
            .iter()
            .map(|z| z.re)
            .chain(self.weights.iter().map(|z| z.im))
            .collect()
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self {
            weights: self.weights.iter().map(|z| z * c).collect(),
        }
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroWeights);
        }
        Ok(self.scaled(Complex64::new(1.0 / n, 0.0)))
    }

    /// `w h_j` for column `j` of `H`.
    pub fn response(&self, h: &ChannelMatrix, j: usize) -> Complex64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * h.get(i, j))
            .sum()
    }

    /// `w r` for a received vector.
    pub fn apply(&self, r: &[Complex64]) -> Complex64 {
        self.weights.iter().zip(r).map(|(w, x)| w * x).sum()
    }

    /// `Re{w h_j}` for every user.
    pub fn real_gains(&self, h: &ChannelMatrix) -> Vec<f64> {
        (0..h.n_users()).map(|j| self.response(h, j).re).collect()
    }

    fn check_against(&self, h: &ChannelMatrix) -> Result<()> {
        if self.weights.len() != h.n_antennas() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} antennas",
                self.weights.len(),
                h.n_antennas()
            )));
        }
        Ok(())
    }
}

/// `w_k h_k` and the cross gains `w_k h_j`, `j != k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveGains {
    pub self_gain: Complex64,
    pub cross_gains: Vec<Complex64>,
}

impl EffectiveGains {
    pub fn compute(w: &BeamVector, h: &ChannelMatrix, k: usize) -> Result<Self> {
        w.check_against(h)?;
        check_user(k, h.n_users())?;
        Ok(Self {
            self_gain: w.response(h, k),
            cross_gains: (0..h.n_users())
                .filter(|&j| j != k)
                .map(|j| w.response(h, j))
                .collect(),
        })
    }
}

fn check_user(k: usize, users: usize) -> Result<()> {
    if k >= users {
        return Err(Error::UserOutOfRange { user: k, users });
    }
    Ok(())
}

fn check_setup(
    w: &BeamVector,
    h: &ChannelMatrix,
    k: usize,
    constellations: &[Constellation],
) -> Result<()> {
    w.check_against(h)?;
    check_user(k, h.n_users())?;
    if constellations.len() != h.n_users() {
        return Err(Error::DimensionMismatch(format!(
            "{} constellations for {} users",
            constellations.len(),
            h.n_users()
        )));
    }
    Ok(())
}

fn check_noise(sigma_z: f64) -> Result<()> {
    if !(sigma_z > 0.0 && sigma_z.is_finite()) {
        return Err(Error::InvalidNoise(sigma_z));
    }
    Ok(())
}

/// Gaussian tail probability `Q(x) = erfc(x / sqrt 2) / 2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub(crate) fn log_normal_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * PI).ln()
}

/// `ln Q(x)`, finite far beyond the point where `Q` underflows.
pub fn log_q(x: f64) -> f64 {
    if x < 30.0 {
        q_function(x).ln()
    } else {
        // Asymptotic expansion of the Mills ratio; error below 1e-10 relative at x = 30.
        let r = 1.0 / (x * x);
        let series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
        log_normal_pdf(x) - x.ln() + series.ln()
    }
}

/// Interference values `I_b = sum_{j != k} g_j s_j(b)` in tuple order.
pub fn interference_sums(
    real_gains: &[f64],
    k: usize,
    constellations: &[Constellation],
) -> Vec<f64> {
    let mut sums = vec![0.0];
    for (j, c) in constellations.iter().enumerate() {
        if j == k {
            continue;
        }
        let alphabet = c.symbols();
        let g = real_gains[j];
        sums = sums
            .iter()
            .flat_map(|&acc| alphabet.iter().map(move |&s| acc + g * s))
            .collect();
    }
    sums
}

/// Prefactor `2 (L_k - 1) / (L_k N_p) = 2 (L_k - 1) / N_b`.
pub fn pe_prefactor(k: usize, constellations: &[Constellation]) -> f64 {
    let nb: f64 = constellations.iter().map(|c| c.order() as f64).product();
    2.0 * (constellations[k].order() as f64 - 1.0) / nb
}

/// Sign applied to the interference term inside each Q argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterferenceSign {
    Minus,
    Plus,
}

/// `sum_b Q((g_k a -/+ I_b) / (sigma_z / sqrt 2 * ||w||))`, without prefactor.
pub fn q_sum(
    w: &BeamVector,
    h: &ChannelMatrix,
    k: usize,
    constellations: &[Constellation],
    sigma_z: f64,
    sign: InterferenceSign,
) -> Result<f64> {
    check_setup(w, h, k, constellations)?;
    check_noise(sigma_z)?;
    let norm = w.norm();
    if norm == 0.0 {
        return Err(Error::ZeroWeights);
    }
    let g = w.real_gains(h);
    let signal = g[k] * constellations[k].scaled_half_spacing();
    let denom = sigma_z / SQRT_2 * norm;
    let s = match sign {
        InterferenceSign::Minus => -1.0,
        InterferenceSign::Plus => 1.0,
    };
    Ok(interference_sums(&g, k, constellations)
        .iter()
        .map(|&i| q_function((signal + s * i) / denom))
        .sum())
}

/// Exact symbol error probability of user `k` under beamformer `w`.
pub fn exact_pe(
    w: &BeamVector,
    h: &ChannelMatrix,
    k: usize,
    constellations: &[Constellation],
    sigma_z: f64,
) -> Result<f64> {
    let sum = q_sum(w, h, k, constellations, sigma_z, InterferenceSign::Minus)?;
    Ok(pe_prefactor(k, constellations) * sum)
}

/// Same Q-sum as [`exact_pe`] with the denominator fixed at `sigma_z / sqrt 2`,
/// i.e. the minimum-error-probability objective restricted to the unit ball.
pub fn mpe_objective(
    w: &BeamVector,
    h: &ChannelMatrix,
    k: usize,
    constellations: &[Constellation],
    sigma_z: f64,
) -> Result<f64> {
    check_setup(w, h, k, constellations)?;
    check_noise(sigma_z)?;
    let g = w.real_gains(h);
    let signal = g[k] * constellations[k].scaled_half_spacing();
    let denom = sigma_z / SQRT_2;
    let sum: f64 = interference_sums(&g, k, constellations)
        .iter()
        .map(|&i| q_function((signal - i) / denom))
        .sum();
    Ok(pe_prefactor(k, constellations) * sum)
}

/// Monte-Carlo error-rate estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub errors: u64,
    pub trials: u64,
}

impl McEstimate {
    pub fn from_counts(errors: u64, trials: u64) -> Self {
        let p = if trials == 0 {
            0.0
        } else {
            errors as f64 / trials as f64
        };
        Self {
            estimate: p,
            std_error: binomial_sigma(p, trials),
            errors,
            trials,
        }
    }
}

pub fn binomial_sigma(p: f64, trials: u64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / trials as f64).max(0.0).sqrt()
}

/// Simulates the received signal and detector directly and counts errors
/// for user `k`. Independent of the Q-sum evaluation in [`exact_pe`].
pub fn exact_pe_bruteforce<R: Rng + ?Sized>(
    w: &BeamVector,
    h: &ChannelMatrix,
    k: usize,
    constellations: &[Constellation],
    sigma_z: f64,
    n_mc: u64,
    rng: &mut R,
) -> Result<McEstimate> {
    check_setup(w, h, k, constellations)?;
    check_noise(sigma_z)?;
    if n_mc == 0 {
        return Err(Error::ZeroSamples);
    }
    if w.norm() == 0.0 {
        return Err(Error::ZeroWeights);
    }
    let ck = &constellations[k];
    let gain = w.response(h, k).re * ck.pulse_energy().sqrt();
    let mut errors = 0u64;
    for _ in 0..n_mc {
        let drawn = draw_symbols(constellations, rng);
        let s: Vec<f64> = drawn.iter().map(|&(_, v)| v).collect();
        let r = received_signal(h, &s, sigma_z, rng)?;
        let y = w.apply(&r);
        if decide(y.re, gain, ck) != drawn[k].0 {
            errors += 1;
        }
    }
    Ok(McEstimate::from_counts(errors, n_mc))
}

fn reduced_margin_from_gains(g: &[f64], k: usize, constellations: &[Constellation]) -> f64 {
    let interference: f64 = constellations
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(j, c)| (g[j] * c.peak_symbol()).abs())
        .sum();
    g[k] * constellations[k].scaled_half_spacing() - interference
}

/// Single-term upper bound on [`exact_pe`]:
/// `2 (L_k - 1) / L_k * Q(margin / (sigma_z / sqrt 2 * ||w||))`.
pub fn pe_upper_bound(
    w: &BeamVector,
    h: &ChannelMatrix,
    k: usize,
    constellations: &[Constellation],
    sigma_z: f64,
) -> Result<f64> {
    check_setup(w, h, k, constellations)?;
    check_noise(sigma_z)?;
    let norm = w.norm();
    if norm == 0.0 {
        return Err(Error::ZeroWeights);
    }
    let g = w.real_gains(h);
    let margin = reduced_margin_from_gains(&g, k, constellations);
    let lk = constellations[k].order() as f64;
    Ok(2.0 * (lk - 1.0) / lk * q_function(margin / (sigma_z / SQRT_2 * norm)))
}

/// Per-tuple margins and the single reduced margin.
#[derive(Debug, Clone, PartialEq)]
pub struct Margins {
    /// `Re{w h_k d sqrt(E_g) - w H_kbar s_kbar(b)}` for every tuple `b`.
    pub full: Vec<f64>,
    /// `Re{w h_k d sqrt(E_g)} - sum_{j != k} |Re{w h_j s_j(L_j)}|`.
    pub reduced: f64,
}

impl Margins {
    pub fn min_full(&self) -> f64 {
        self.full.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn feasibility_margins(
    w: &BeamVector,
    h: &ChannelMatrix,
    k: usize,
    constellations: &[Constellation],
) -> Result<Margins> {
    check_setup(w, h, k, constellations)?;
    let g = w.real_gains(h);
    let signal = g[k] * constellations[k].scaled_half_spacing();
    Ok(Margins {
        full: interference_sums(&g, k, constellations)
            .into_iter()
            .map(|i| signal - i)
            .collect(),
        reduced: reduced_margin_from_gains(&g, k, constellations),
    })
}

/// Amplitude SMINR: reduced margin over `sigma_z / sqrt 2`.
pub fn sminr_amp(
    w: &BeamVector,
    h: &ChannelMatrix,
    k: usize,
    constellations: &[Constellation],
    sigma_z: f64,
) -> Result<f64> {
    check_setup(w, h, k, constellations)?;
    check_noise(sigma_z)?;
    let g = w.real_gains(h);
    Ok(reduced_margin_from_gains(&g, k, constellations) / (sigma_z / SQRT_2))
}

/// Power SMINR:
/// `((g_k a)^2 - sum_{j != k} (g_j s_j(L_j))^2) / (sigma_z^2 / 2)`. May be negative.
pub fn sminr_power(
    w: &BeamVector,
    h: &ChannelMatrix,
    k: usize,
    constellations: &[Constellation],
    sigma_z: f64,
) -> Result<f64> {
    check_setup(w, h, k, constellations)?;
    check_noise(sigma_z)?;
    let g = w.real_gains(h);
    let signal = (g[k] * constellations[k].scaled_half_spacing()).powi(2);
    let interference: f64 = constellations
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(j, c)| (g[j] * c.peak_symbol()).powi(2))
        .sum();
    Ok((signal - interference) / (sigma_z * sigma_z / 2.0))
}

/// High-power limit `(L_k - 1) / N_b` reached when a tuple margin is negative.
pub fn error_floor(k: usize, constellations: &[Constellation]) -> Result<f64> {
    check_user(k, constellations.len())?;
    let nb: f64 = constellations.iter().map(|c| c.order() as f64).product();
    Ok((constellations[k].order() as f64 - 1.0) / nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_channel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bpsk() -> Constellation {
        Constellation::new(2, 1.0, 1.0).unwrap()
    }

    /// erfc via the Maclaurin series of erf, independent of the library call.
    fn q_series(x: f64) -> f64 {
        let z = x / SQRT_2;
        let mut term = z;
        let mut sum = z;
        for n in 1..200 {
            term *= -z * z / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        0.5 * (1.0 - 2.0 / PI.sqrt() * sum)
    }

    #[test]
    fn q_function_values() {
        assert_eq!(q_function(0.0), 0.5);
        assert!((q_function(1.0) - q_series(1.0)).abs() < 1e-14);
        assert!((q_function(1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
        assert!((q_function(-1.0) - (1.0 - q_function(1.0))).abs() < 1e-15);
        assert!((q_function(2.0) - q_series(2.0)).abs() < 1e-13);
        let mut prev = q_function(-8.0);
        for i in -79..=80 {
            let v = q_function(i as f64 * 0.1);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn log_q_is_continuous_at_switch() {
        let below = q_function(29.999_999).ln();
        let above = log_q(30.000_001);
        assert!((below - above).abs() < 1e-4);
        assert!((log_q(30.0) - q_function(30.0).ln()).abs() < 1e-8);
        assert!(log_q(100.0).is_finite());
        assert!((log_q(-3.0) - q_function(-3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn exact_pe_single_user() {
        let h = ChannelMatrix::from_real_rows(&[&[1.0]]).unwrap();
        let w = BeamVector::from_real(&[1.0]).unwrap();
        let pe = exact_pe(&w, &h, 0, &[bpsk()], SQRT_2).unwrap();
        assert!((pe - q_function(1.0)).abs() < 1e-15);
        assert!((pe - 0.158655).abs() < 1e-6);
    }

    #[test]
    fn exact_pe_orthogonal_interferer() {
        let h = ChannelMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let w = BeamVector::from_real(&[1.0, 0.0]).unwrap();
        let pe = exact_pe(&w, &h, 0, &[bpsk(); 2], 1.0).unwrap();
        assert!((pe - q_function(SQRT_2)).abs() < 1e-15);
        assert!((pe - 0.078650).abs() < 1e-6);
    }

    #[test]
    fn exact_pe_identical_channels() {
        let h = ChannelMatrix::from_real_rows(&[&[1.0, 1.0]]).unwrap();
        let w = BeamVector::from_real(&[1.0]).unwrap();
        for a in [0.5, 1.0, 3.0, 1e3] {
            let c = Constellation::new(2, a, 1.0).unwrap();
            let pe = exact_pe(&w, &h, 0, &[c; 2], 1.0).unwrap();
            let direct = 0.5 * (q_function(0.0) + q_function(2.0 * SQRT_2 * a));
            assert!((pe - direct).abs() < 1e-15);
        }
        let c = Constellation::new(2, 1e3, 1.0).unwrap();
        let pe = exact_pe(&w, &h, 0, &[c; 2], 1.0).unwrap();
        assert!((pe - 0.25).abs() < 1e-12);
    }

    #[test]
    fn exact_pe_errors() {
        let h = ChannelMatrix::from_real_rows(&[&[1.0]]).unwrap();
        let zero = BeamVector::from_real(&[0.0]).unwrap();
        let w = BeamVector::from_real(&[1.0]).unwrap();
        assert!(matches!(exact_pe(&zero, &h, 0, &[bpsk()], 1.0), Err(Error::ZeroWeights)));
        assert!(matches!(exact_pe(&w, &h, 0, &[bpsk()], 0.0), Err(Error::InvalidNoise(_))));
        assert!(matches!(exact_pe(&w, &h, 0, &[bpsk()], -1.0), Err(Error::InvalidNoise(_))));
        assert!(exact_pe(&w, &h, 1, &[bpsk()], 1.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            exact_pe_bruteforce(&w, &h, 0, &[bpsk()], 1.0, 0, &mut rng),
            Err(Error::ZeroSamples)
        ));
    }

    #[test]
    fn bruteforce_agrees_simple_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = ChannelMatrix::from_real_rows(&[&[1.0]]).unwrap();
        let w = BeamVector::from_real(&[1.0]).unwrap();
        let exact = exact_pe(&w, &h, 0, &[bpsk()], SQRT_2).unwrap();
        let mc = exact_pe_bruteforce(&w, &h, 0, &[bpsk()], SQRT_2, 1_000_000, &mut rng).unwrap();
        assert!((mc.estimate - exact).abs() <= 3.0 * binomial_sigma(exact, mc.trials));

        let h = ChannelMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let w = BeamVector::from_real(&[1.0, 0.0]).unwrap();
        let exact = exact_pe(&w, &h, 0, &[bpsk(); 2], 1.0).unwrap();
        let mc = exact_pe_bruteforce(&w, &h, 0, &[bpsk(); 2], 1.0, 1_000_000, &mut rng).unwrap();
        assert!((mc.estimate - exact).abs() <= 3.0 * binomial_sigma(exact, mc.trials));
    }

    #[test]
    fn upper_bound_examples() {
        let h = ChannelMatrix::from_real_rows(&[&[1.0, 1.0]]).unwrap();
        let w = BeamVector::from_real(&[1.0]).unwrap();
        let bound = pe_upper_bound(&w, &h, 0, &[bpsk(); 2], 1.0).unwrap();
        let exact = exact_pe(&w, &h, 0, &[bpsk(); 2], 1.0).unwrap();
        assert_eq!(bound, 0.5);
        let direct = 0.5 * (q_function(0.0) + q_function(2.0 * SQRT_2));
        assert!((exact - direct).abs() < 1e-15);
        assert!((exact - 0.2512).abs() < 1e-4);
        assert!(bound >= exact);

        let ortho = ChannelMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let w = BeamVector::from_real(&[0.6, 0.0]).unwrap();
        let c8 = Constellation::unit_energy(8).unwrap();
        let b = pe_upper_bound(&w, &ortho, 0, &[c8; 2], 0.3).unwrap();
        let e = exact_pe(&w, &ortho, 0, &[c8; 2], 0.3).unwrap();
        assert!((b - e).abs() < 1e-15);
    }

    #[test]
    fn upper_bound_dominates_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for i in 0..10_000 {
            let n = 1 + i % 4;
            let users = 1 + (i / 4) % 3;
            let cons: Vec<Constellation> = (0..users)
                .map(|j| Constellation::unit_energy(2 + (i + j) % 4).unwrap())
                .collect();
            let h = sample_channel(n, users, &mut rng).unwrap();
            let w = BeamVector::new(
                (0..n).map(|_| crate::channel::cscg(&mut rng, 1.0)).collect(),
            )
            .unwrap();
            let sigma = 10f64.powf(rng.gen_range(-2.0..0.5));
            let k = i % users;
            let exact = exact_pe(&w, &h, k, &cons, sigma).unwrap();
            let bound = pe_upper_bound(&w, &h, k, &cons, sigma).unwrap();
            assert!(bound - exact >= -1e-15, "instance {i}: {bound} < {exact}");
        }
    }

    #[test]
    fn margin_examples() {
        let h = ChannelMatrix::from_real_rows(&[&[1.0, 0.5]]).unwrap();
        let w = BeamVector::from_real(&[1.0]).unwrap();
        let m = feasibility_margins(&w, &h, 0, &[bpsk(); 2]).unwrap();
        assert_eq!(m.full, vec![1.5, 0.5]);
        assert_eq!(m.reduced, 0.5);
        assert_eq!(m.min_full(), m.reduced);

        let single = ChannelMatrix::from_real_rows(&[&[2.0]]).unwrap();
        let m = feasibility_margins(&w, &single, 0, &[bpsk()]).unwrap();
        assert_eq!(m.full, vec![2.0]);
        assert_eq!(m.reduced, 2.0);
    }

    #[test]
    fn reduced_margin_is_min_of_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for i in 0..10_000 {
            let users = 1 + i % 3;
            let n = 1 + (i / 3) % 4;
            let cons: Vec<Constellation> = (0..users)
                .map(|j| Constellation::unit_energy(2 + (i * 7 + j) % 3).unwrap())
                .collect();
            let h = sample_channel(n, users, &mut rng).unwrap();
            let w = BeamVector::new(
                (0..n).map(|_| crate::channel::cscg(&mut rng, 1.0)).collect(),
            )
            .unwrap();
            let k = (i / 12) % users;
            let m = feasibility_margins(&w, &h, k, &cons).unwrap();
            assert!((m.min_full() - m.reduced).abs() <= 1e-12, "instance {i}");
        }
    }

    #[test]
    fn sminr_examples() {
        let h = ChannelMatrix::from_real_rows(&[&[1.0, 0.5]]).unwrap();
        let w = BeamVector::from_real(&[1.0]).unwrap();
        let amp = sminr_amp(&w, &h, 0, &[bpsk(); 2], SQRT_2).unwrap();
        assert!((amp - 0.5).abs() < 1e-15);
        let amp2 = sminr_amp(&w, &h, 0, &[bpsk(); 2], 2.0 * SQRT_2).unwrap();
        assert!((amp2 - 0.25).abs() < 1e-15);
        let pow = sminr_power(&w, &h, 0, &[bpsk(); 2], SQRT_2).unwrap();
        assert!((pow - 0.75).abs() < 1e-15);

        // Interference-free, real self gain g.
        let ortho = ChannelMatrix::from_real_rows(&[&[3.0, 0.0], &[0.0, 1.0]]).unwrap();
        let w = BeamVector::from_real(&[1.0, 0.0]).unwrap();
        let c = Constellation::new(4, 0.4, 2.0).unwrap();
        let amp = sminr_amp(&w, &ortho, 0, &[c; 2], 0.5).unwrap();
        assert!((amp - 3.0 * 0.4 * 2f64.sqrt() * SQRT_2 / 0.5).abs() < 1e-12);

        // Matched filter, K = 1.
        let hk = [Complex64::new(0.3, -1.1), Complex64::new(2.0, 0.5)];
        let single = ChannelMatrix::from_columns(&[hk.to_vec()]).unwrap();
        let wm = BeamVector::new(hk.iter().map(|z| z.conj()).collect())
            .unwrap()
            .normalized()
            .unwrap();
        let hn2: f64 = hk.iter().map(|z| z.norm_sqr()).sum();
        let c = Constellation::new(8, 0.3, 1.5).unwrap();
        let p = sminr_power(&wm, &single, 0, &[c], 0.2).unwrap();
        let expected = 0.09 * 1.5 * hn2 * 2.0 / 0.04;
        assert!((p - expected).abs() < 1e-10 * expected);

        // Orthogonal real part to h_k but not to h_j.
        let h = ChannelMatrix::from_real_rows(&[&[1.0, 1.0], &[0.0, 1.0]]).unwrap();
        let w = BeamVector::from_real(&[0.0, 1.0]).unwrap();
        assert!(sminr_power(&w, &h, 0, &[bpsk(); 2], 1.0).unwrap() < 0.0);
    }

    #[test]
    fn error_floor_values() {
        assert_eq!(error_floor(0, &[bpsk(); 2]).unwrap(), 0.25);
        let c8 = Constellation::unit_energy(8).unwrap();
        assert!((error_floor(2, &[c8; 4]).unwrap() - 7.0 / 4096.0).abs() < 1e-18);
        for l in 2..10 {
            let c = Constellation::unit_energy(l).unwrap();
            assert!(
                (error_floor(0, &[c]).unwrap() - (l as f64 - 1.0) / l as f64).abs() < 1e-15
            );
        }
        assert!(error_floor(3, &[c8; 2]).is_err());
    }

    #[test]
    fn floor_is_attained() {
        let h = ChannelMatrix::from_real_rows(&[&[1.0, 1.0]]).unwrap();
        let w = BeamVector::from_real(&[1.0]).unwrap();
        let c = Constellation::new(2, 1e6, 1.0).unwrap();
        let pe = exact_pe(&w, &h, 0, &[c; 2], 1.0).unwrap();
        assert!((pe - error_floor(0, &[c; 2]).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn effective_gains_match_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let h = sample_channel(3, 3, &mut rng).unwrap();
        let w = BeamVector::new((0..3).map(|_| crate::channel::cscg(&mut rng, 1.0)).collect())
            .unwrap();
        let g = EffectiveGains::compute(&w, &h, 1).unwrap();
        assert_eq!(g.self_gain, w.response(&h, 1));
        assert_eq!(g.cross_gains, vec![w.response(&h, 0), w.response(&h, 2)]);
    }

    #[test]
    fn convex_on_feasible_set() {
        // Fixed-denominator objective along normalized chords between feasible points.
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let cons = [Constellation::unit_energy(4).unwrap(); 2];
        let mut checked = 0;
        while checked < 200 {
            let h = sample_channel(3, 2, &mut rng).unwrap();
            let draw = |rng: &mut ChaCha8Rng| {
                BeamVector::new((0..3).map(|_| crate::channel::cscg(rng, 1.0)).collect())
                    .unwrap()
                    .normalized()
                    .unwrap()
            };
            let feasible = |w: &BeamVector| feasibility_margins(w, &h, 0, &cons).unwrap().reduced >= 0.0;
            let (w1, w2) = (draw(&mut rng), draw(&mut rng));
            if !feasible(&w1) || !feasible(&w2) {
                continue;
            }
            checked += 1;
            let sigma = 0.3;
            let f1 = mpe_objective(&w1, &h, 0, &cons, sigma).unwrap();
            let f2 = mpe_objective(&w2, &h, 0, &cons, sigma).unwrap();
            for a in 1..10 {
                let alpha = a as f64 / 10.0;
                let mix = BeamVector::new(
                    w1.weights()
                        .iter()
                        .zip(w2.weights())
                        .map(|(x, y)| x * alpha + y * (1.0 - alpha))
                        .collect(),
                )
                .unwrap()
                .normalized()
                .unwrap();
                let f0 = mpe_objective(&mix, &h, 0, &cons, sigma).unwrap();
                assert!(f0 <= alpha * f1 + (1.0 - alpha) * f2 + 1e-10);
            }
        }
    }

    fn random_instance(seed: u64) -> (ChannelMatrix, BeamVector, Vec<Constellation>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let users = 1 + (seed % 3) as usize;
        let n = 1 + (seed % 4) as usize;
        let cons = (0..users)
            .map(|j| Constellation::unit_energy(2 + (seed as usize + j) % 7).unwrap())
            .collect();
        let h = sample_channel(n, users, &mut rng).unwrap();
        let w = BeamVector::new((0..n).map(|_| crate::channel::cscg(&mut rng, 1.0)).collect())
            .unwrap();
        (h, w, cons)
    }

    proptest! {
        #[test]
        fn scale_invariance(seed in any::<u64>(), c in 1e-3f64..1e3, sigma in 0.05f64..2.0) {
            let (h, w, cons) = random_instance(seed);
            let a = exact_pe(&w, &h, 0, &cons, sigma).unwrap();
            let b = exact_pe(&w.scaled(Complex64::new(c, 0.0)), &h, 0, &cons, sigma).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }

        #[test]
        fn q_sum_sign_symmetry(seed in any::<u64>(), sigma in 0.05f64..2.0) {
            let (h, w, cons) = random_instance(seed);
            let minus = q_sum(&w, &h, 0, &cons, sigma, InterferenceSign::Minus).unwrap();
            let plus = q_sum(&w, &h, 0, &cons, sigma, InterferenceSign::Plus).unwrap();
            prop_assert!((minus - plus).abs() <= 1e-12 * minus.max(1e-300));
        }

        #[test]
        fn lifting_round_trip(seed in any::<u64>()) {
            let (_, w, _) = random_instance(seed);
            let back = BeamVector::from_lifted(&w.lifted()).unwrap();
            prop_assert_eq!(back, w);
        }
    }
}
