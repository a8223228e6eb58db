//! Flat Rayleigh channels, CSI error injection and received signals.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// `N x K` complex channel; column `k` is user `k`'s channel to the array.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    entries: DMatrix<Complex64>,
}

/// One circularly symmetric complex Gaussian sample with total variance `var`.
#[inline]
pub fn cscg<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let scale = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(scale * re, scale * im)
}

impl ChannelMatrix {
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::DimensionMismatch(
                "channel needs at least one antenna and one user".into(),
            ));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerical("channel has non-finite entries".into()));
        }
        Ok(Self { entries })
    }

    /// Builds `H` from per-user columns `h_k`.
    pub fn from_columns(columns: &[Vec<Complex64>]) -> Result<Self> {
        let k = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::DimensionMismatch("ragged channel columns".into()));
        }
        Self::new(DMatrix::from_fn(n, k, |i, j| columns[j][i]))
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::DimensionMismatch("ragged channel rows".into()));
        }
        Self::new(DMatrix::from_fn(n, k, |i, j| Complex64::new(rows[i][j], 0.0)))
    }

    pub fn n_antennas(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.entries.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn get(&self, antenna: usize, user: usize) -> Complex64 {
        self.entries[(antenna, user)]
    }

    pub fn column(&self, k: usize) -> Vec<Complex64> {
        self.entries.column(k).iter().copied().collect()
    }

    /// Row-major nested JSON: `N` rows of `K` `[re, im]` pairs.
    pub fn to_json(&self) -> String {
        let rows: Vec<Vec<[f64; 2]>> = (0..self.n_antennas())
            .map(|i| {
                (0..self.n_users())
                    .map(|j| {
                        let z = self.entries[(i, j)];
                        [z.re, z.im]
                    })
                    .collect()
            })
            .collect();
        serde_json::to_string(&rows).expect("plain numeric arrays always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rows: Vec<Vec<[f64; 2]>> = serde_json::from_str(text)?;
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::DimensionMismatch("ragged channel rows".into()));
        }
        Self::new(DMatrix::from_fn(n, k, |i, j| {
            Complex64::new(rows[i][j][0], rows[i][j][1])
        }))
    }
}

/// I.i.d. CSCG entries with zero mean and unit variance.
pub fn sample_channel<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<ChannelMatrix> {
    // Column-major draw order so that column j only depends on draws before it.
    let mut entries = DMatrix::zeros(n, k);
    for j in 0..k {
        for i in 0..n {
            entries[(i, j)] = cscg(rng, 1.0);
        }
    }
    ChannelMatrix::new(entries)
}

/// Returns `H + E` with `E` i.i.d. CSCG of variance `var_ce`.
pub fn perturb_csi<R: Rng + ?Sized>(
    h: &ChannelMatrix,
    var_ce: f64,
    rng: &mut R,
) -> Result<ChannelMatrix> {
    if !(var_ce >= 0.0) {
        return Err(Error::NegativeVariance(var_ce));
    }
    if var_ce == 0.0 {
        return Ok(h.clone());
    }
    let mut entries = h.entries.clone();
    for j in 0..entries.ncols() {
        for i in 0..entries.nrows() {
            entries[(i, j)] += cscg(rng, var_ce);
        }
    }
    ChannelMatrix::new(entries)
}

/// `r = H s + z` with CSCG noise of variance `sigma_z^2` per antenna.
///
/// `sigma_z = 0` gives the noise-free signal and consumes no randomness.
pub fn received_signal<R: Rng + ?Sized>(
    h: &ChannelMatrix,
    s: &[f64],
    sigma_z: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    if s.len() != h.n_users() {
        return Err(Error::DimensionMismatch(format!(
            "{} symbols for {} users",
            s.len(),
            h.n_users()
        )));
    }
    if !(sigma_z >= 0.0) {
        return Err(Error::InvalidNoise(sigma_z));
    }
    let var = sigma_z * sigma_z;
    Ok((0..h.n_antennas())
        .map(|i| {
            let clean: Complex64 = (0..h.n_users()).map(|j| h.entries[(i, j)] * s[j]).sum();
            if var > 0.0 {
                clean + cscg(rng, var)
            } else {
                clean
            }
        })
        .collect())
}
