//! PAM alphabets, interferer enumeration and the threshold detector.
//!
//! Symbol indices follow the 1-based convention `1..=L` used for the
//! amplitude set `{(2l - 1 - L) d}`; user indices are 0-based slice positions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-user L-PAM alphabet with half-spacing `d` and pulse energy `E_g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    order: usize,
    half_spacing: f64,
    pulse_energy: f64,
}

impl Constellation {
    pub fn new(order: usize, half_spacing: f64, pulse_energy: f64) -> Result<Self> {
        if order < 2 {
            return Err(Error::InvalidOrder(order));
        }
        if !(half_spacing.is_finite() && half_spacing > 0.0) {
            return Err(Error::InvalidConstellation(format!(
                "half spacing must be positive, got {half_spacing}"
            )));
        }
        if !(pulse_energy.is_finite() && pulse_energy > 0.0) {
            return Err(Error::InvalidConstellation(format!(
                "pulse energy must be positive, got {pulse_energy}"
            )));
        }
        Ok(Self {
            order,
            half_spacing,
            pulse_energy,
        })
    }

    /// L-PAM with `E_g = 1` and `d = sqrt(3 / (L^2 - 1))`, so the average
    /// symbol energy is one.
    pub fn unit_energy(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::InvalidOrder(order));
        }
        let l = order as f64;
        Self::new(order, (3.0 / (l * l - 1.0)).sqrt(), 1.0)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn half_spacing(&self) -> f64 {
        self.half_spacing
    }

    pub fn pulse_energy(&self) -> f64 {
        self.pulse_energy
    }

    /// `(2l - 1 - L) d` for `1 <= l <= L`.
    pub fn amplitude(&self, l: usize) -> Result<f64> {
        if l == 0 || l > self.order {
            return Err(Error::IndexOutOfRange {
                index: l,
                order: self.order,
            });
        }
        Ok(self.amplitude_unchecked(l))
    }

    #[inline]
    fn amplitude_unchecked(&self, l: usize) -> f64 {
        (2.0 * l as f64 - 1.0 - self.order as f64) * self.half_spacing
    }

    /// Transmitted symbol value `sqrt(E_g) * A(l)`.
    pub fn symbol(&self, l: usize) -> Result<f64> {
        Ok(self.pulse_energy.sqrt() * self.amplitude(l)?)
    }

    /// All symbol values in index order.
    pub fn symbols(&self) -> Vec<f64> {
        let g = self.pulse_energy.sqrt();
        (1..=self.order)
            .map(|l| g * self.amplitude_unchecked(l))
            .collect()
    }

    /// Largest symbol `s(L) = sqrt(E_g) (L - 1) d`.
    pub fn peak_symbol(&self) -> f64 {
        self.pulse_energy.sqrt() * (self.order as f64 - 1.0) * self.half_spacing
    }

    /// `d sqrt(E_g)`: half the distance between adjacent transmitted symbols.
    pub fn scaled_half_spacing(&self) -> f64 {
        self.half_spacing * self.pulse_energy.sqrt()
    }

    pub fn average_energy(&self) -> f64 {
        let l = self.order as f64;
        self.half_spacing * self.half_spacing * self.pulse_energy * (l * l - 1.0) / 3.0
    }

    pub fn bits_per_symbol(&self) -> f64 {
        (self.order as f64).log2()
    }
}

/// Shorthand for [`Constellation::unit_energy`].
pub fn normalize_unit_energy(order: usize) -> Result<Constellation> {
    Constellation::unit_energy(order)
}

/// Threshold detector on the real part of the beamformer output.
///
/// `gain` is the per-unit-amplitude effective gain `Re{w h_k} sqrt(E_g)`.
/// Bin 1 is `y <= g (A(1) + d)`, interior bins are `(g (A(l) - d), g (A(l) + d)]`
/// and the top bin is `y > g (A(L) - d)`. For `gain <= 0` the rule is
/// evaluated branch by branch as written and degenerates; inputs that match
/// no branch fall into the top bin.
pub fn decide(y_real: f64, gain: f64, c: &Constellation) -> usize {
    let order = c.order;
    let d = c.half_spacing;
    if gain > 0.0 {
        // Nearest-point quantization with boundaries assigned to the lower bin.
        let x = y_real / gain;
        let idx = (x / (2.0 * d) + order as f64 / 2.0).ceil();
        return if idx <= 1.0 {
            1
        } else if idx >= order as f64 {
            order
        } else {
            idx as usize
        };
    }
    if y_real <= gain * (c.amplitude_unchecked(1) + d) {
        return 1;
    }
    for l in 2..order {
        let a = c.amplitude_unchecked(l);
        if gain * (a - d) < y_real && y_real <= gain * (a + d) {
            return l;
        }
    }
    order
}

/// Every joint symbol assignment of the users other than `k`.
///
/// Tuples are stored row-major with stride `K - 1`; users keep ascending
/// order and the last interferer varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfererTupleSet {
    user: usize,
    width: usize,
    values: Vec<f64>,
}

impl InterfererTupleSet {
    pub fn user(&self) -> usize {
        self.user
    }

    /// Number of interferers, `K - 1`.
    pub fn width(&self) -> usize {
        self.width
    }

    /// `N_p = prod_{j != k} L_j`.
    pub fn count(&self) -> usize {
        self.values.len().checked_div(self.width).unwrap_or(1)
    }

    pub fn tuple(&self, b: usize) -> &[f64] {
        &self.values[b * self.width..(b + 1) * self.width]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.count()).map(move |b| self.tuple(b))
    }
}

/// Enumerates the `N_p` interferer tuples seen by user `k`.
pub fn enumerate_interferers(
    constellations: &[Constellation],
    k: usize,
) -> Result<InterfererTupleSet> {
    if k >= constellations.len() {
        return Err(Error::UserOutOfRange {
            user: k,
            users: constellations.len(),
        });
    }
    let alphabets: Vec<Vec<f64>> = constellations
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, c)| c.symbols())
        .collect();
    let width = alphabets.len();
    let count: usize = alphabets.iter().map(Vec::len).product();
    let mut values = Vec::with_capacity(count * width);
    let mut digits = vec![0usize; width];
    for _ in 0..count {
        values.extend(digits.iter().zip(&alphabets).map(|(&i, a)| a[i]));
        for pos in (0..width).rev() {
            digits[pos] += 1;
            if digits[pos] < alphabets[pos].len() {
                break;
            }
            digits[pos] = 0;
        }
    }
    Ok(InterfererTupleSet {
        user: k,
        width,
        values,
    })
}

/// Draws one symbol per user, uniform over each alphabet.
pub fn draw_symbols<R: Rng + ?Sized>(
    constellations: &[Constellation],
    rng: &mut R,
) -> Vec<(usize, f64)> {
    constellations
        .iter()
        .map(|c| {
            let l = rng.gen_range(1..=c.order);
            (l, c.pulse_energy.sqrt() * c.amplitude_unchecked(l))
        })
        .collect()
}
