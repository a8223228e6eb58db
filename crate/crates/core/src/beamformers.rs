//! Closed-form receive beamformers.
//!
//! ZF and MMSE are the classical baselines; both are rotated so that
//! `w h_k` is real and positive before the one-dimensional detector is
//! applied. The maximum-SMINR beamformer works in the real lifted domain
//! where `Re{w h} = w_bar . h_tilde` with `w_bar = [Re w, Im w]` and
//! `h_tilde = [Re h; -Im h]`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::analysis::BeamVector;
use crate::channel::ChannelMatrix;
use crate::eigen::max_eigvec_symmetric;
use crate::modem::Constellation;
use crate::{Error, Result};

/// Smallest singular value ratio accepted by [`zf`].
pub const ZF_RANK_TOL: f64 = 1e-12;

/// Lifted user channels `h_tilde_j = [Re h_j; -Im h_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealLiftedChannel {
    n_antennas: usize,
    columns: Vec<Vec<f64>>,
}

impl RealLiftedChannel {
    pub fn new(h: &ChannelMatrix) -> Self {
        let n = h.n_antennas();
        let columns = (0..h.n_users())
            .map(|j| lift_channel(&h.column(j)))
            .collect();
        Self {
            n_antennas: n,
            columns,
        }
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    /// Lifted dimension `2N`.
    pub fn dim(&self) -> usize {
        2 * self.n_antennas
    }

    pub fn n_users(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    /// `w_bar . h_tilde_j`, equal to `Re{w h_j}`.
    pub fn dot(&self, lifted_w: &[f64], j: usize) -> f64 {
        lifted_w.iter().zip(&self.columns[j]).map(|(a, b)| a * b).sum()
    }
}

pub fn lift_channel(h: &[Complex64]) -> Vec<f64> {
    h.iter()
        .map(|z| z.re)
        .chain(h.iter().map(|z| -z.im))
        .collect()
}

/// Inverse of [`lift_channel`].
pub fn unlift_channel(lifted: &[f64]) -> Vec<Complex64> {
    let n = lifted.len() / 2;
    (0..n)
        .map(|i| Complex64::new(lifted[i], -lifted[n + i]))
        .collect()
}

/// Rotates `w` by `exp(-i arg(w h_k))` so that `w h_k` is real positive.
pub fn align_phase(w: &BeamVector, h_k: &[Complex64]) -> Result<BeamVector> {
    if w.len() != h_k.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} antennas",
            w.len(),
            h_k.len()
        )));
    }
    let z: Complex64 = w.weights().iter().zip(h_k).map(|(a, b)| a * b).sum();
    if z.norm() == 0.0 {
        return Err(Error::DegenerateOrientation);
    }
    Ok(w.scaled(z.conj() / z.norm()))
}

/// Row `k` of the pseudo-inverse `(H^H H)^{-1} H^H`, phase aligned and unit norm.
pub fn zf(h: &ChannelMatrix, k: usize) -> Result<BeamVector> {
    let (n, users) = (h.n_antennas(), h.n_users());
    if k >= users {
        return Err(Error::UserOutOfRange { user: k, users });
    }
    if n < users {
        return Err(Error::Singular(f64::INFINITY));
    }
    let svd = h.matrix().clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > ZF_RANK_TOL * smax) {
        return Err(Error::Singular(smax / smin));
    }
    let pinv = svd
        .pseudo_inverse(0.0)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let w = BeamVector::new(pinv.row(k).iter().copied().collect())?;
    align_phase(&w.normalized()?, &h.column(k))
}

/// Linear MMSE receiver `h_k^H (H diag(E_s) H^H + sigma_z^2 I)^{-1}`,
/// phase aligned and unit norm.
pub fn mmse(
    h: &ChannelMatrix,
    k: usize,
    sigma_z: f64,
    symbol_energies: &[f64],
) -> Result<BeamVector> {
    let (n, users) = (h.n_antennas(), h.n_users());
    if k >= users {
        return Err(Error::UserOutOfRange { user: k, users });
    }
    if !(sigma_z > 0.0 && sigma_z.is_finite()) {
        return Err(Error::InvalidNoise(sigma_z));
    }
    if symbol_energies.len() != users {
        return Err(Error::DimensionMismatch(format!(
            "{} symbol energies for {users} users",
            symbol_energies.len()
        )));
    }
    let hm = h.matrix();
    let energies = DVector::from_iterator(
        users,
        symbol_energies.iter().map(|&e| Complex64::new(e, 0.0)),
    );
    let cov = hm * DMatrix::from_diagonal(&energies) * hm.adjoint()
        + DMatrix::<Complex64>::identity(n, n) * Complex64::new(sigma_z * sigma_z, 0.0);
    let hk = hm.column(k).into_owned();
    let x = cov
        .cholesky()
        .ok_or_else(|| Error::Numerical("MMSE covariance not positive definite".into()))?
        .solve(&hk);
    // The covariance is Hermitian, so h_k^H C^{-1} = (C^{-1} h_k)^H.
    let w = BeamVector::new(x.iter().map(|z| z.conj()).collect())?;
    align_phase(&w.normalized()?, &h.column(k))
}

/// `d^2 E_g h_k h_k^T - sum_{j != k} s_j(L_j)^2 h_j h_j^T` on lifted channels.
pub fn sminr_matrix(
    h: &ChannelMatrix,
    k: usize,
    constellations: &[Constellation],
) -> Result<DMatrix<f64>> {
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
    let lifted = RealLiftedChannel::new(h);
    let dim = lifted.dim();
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    for (j, c) in constellations.iter().enumerate() {
        let weight = if j == k {
            c.scaled_half_spacing().powi(2)
        } else {
            -c.peak_symbol().powi(2)
        };
        let v = DVector::from_column_slice(lifted.column(j));
        m += &v * v.transpose() * weight;
    }
    Ok(m)
}

/// Maximum power-SMINR beamformer: the unit eigenvector of [`sminr_matrix`]
/// for its largest eigenvalue, mapped back to complex weights.
///
/// The sign is chosen so that `Re{w h_k} > 0`; when that is zero the first
/// nonzero lifted coordinate is made positive. No phase rotation is applied,
/// since it would change `Re{w h_j}` and leave the Rayleigh-quotient optimum.
pub fn sminr_closed_form(
    h: &ChannelMatrix,
    k: usize,
    constellations: &[Constellation],
    sigma_z: f64,
) -> Result<BeamVector> {
    if !(sigma_z > 0.0 && sigma_z.is_finite()) {
        return Err(Error::InvalidNoise(sigma_z));
    }
    let m = sminr_matrix(h, k, constellations)?;
    let (_, v) = max_eigvec_symmetric(&m)?;
    let mut lifted: Vec<f64> = v.iter().copied().collect();
    let lifted_h = lift_channel(&h.column(k));
    let gain: f64 = lifted.iter().zip(&lifted_h).map(|(a, b)| a * b).sum();
    let flip = if gain.abs() > 1e-14 * m.norm().max(f64::MIN_POSITIVE).sqrt() {
        gain < 0.0
    } else {
        lifted.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)
    };
    if flip {
        lifted.iter_mut().for_each(|x| *x = -*x);
    }
    BeamVector::from_lifted(&lifted)
}
