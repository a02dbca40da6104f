//! Baseband beamforming over the effective channels.
//!
//! `H` stacks the effective rows `e_k` (`K x N`); `W` holds one column
//! `w_k` per user (`N x K`).

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeamformingError {
    #[error("effective channel is zero (user fully blocked)")]
    DegenerateChannel,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("invalid power parameter `{name}` = {value}")]
    InvalidPower { name: &'static str, value: f64 },
}

/// `10^((dBm - 30) / 10)` watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Transmit budget, noise and per-user allocation, all linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerConfig {
    pub p_max: f64,
    pub noise: f64,
    pub alpha: Vec<f64>,
}

impl PowerConfig {
    pub fn new(p_max: f64, noise: f64, alpha: Vec<f64>) -> Result<Self, BeamformingError> {
        if !(p_max.is_finite() && p_max > 0.0) {
            return Err(BeamformingError::InvalidPower { name: "p_max", value: p_max });
        }
        if !(noise.is_finite() && noise > 0.0) {
            return Err(BeamformingError::InvalidPower { name: "noise", value: noise });
        }
        if alpha.is_empty() {
            return Err(BeamformingError::Dimension("empty allocation".into()));
        }
        let single = alpha.len() == 1;
        for &a in &alpha {
            let ok = if single { a > 0.0 && a <= 1.0 } else { a > 0.0 && a < 1.0 };
            if !ok {
                return Err(BeamformingError::InvalidPower { name: "alpha", value: a });
            }
        }
        let total: f64 = alpha.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(BeamformingError::InvalidPower {
                name: "sum(alpha)",
                value: total,
            });
        }
        Ok(Self { p_max, noise, alpha })
    }

    /// Uniform allocation `1/K`.
    pub fn uniform(p_max: f64, noise: f64, users: usize) -> Result<Self, BeamformingError> {
        Self::new(p_max, noise, vec![1.0 / users.max(1) as f64; users.max(1)])
    }

    pub fn users(&self) -> usize {
        self.alpha.len()
    }

    /// Same allocation with a different budget.
    pub fn with_p_max(&self, p_max: f64) -> Self {
        Self {
            p_max,
            ..self.clone()
        }
    }
}

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// `√p · e^H / ‖e‖`.
pub fn mrt_weights(e: &RowDVector<Complex64>, p_max: f64) -> Result<DVector<Complex64>, BeamformingError> {
    let norm = e.norm();
    if !norm.is_finite() {
        return Err(BeamformingError::NonFinite("mrt_weights"));
    }
    if norm == 0.0 {
        return Err(BeamformingError::DegenerateChannel);
    }
    Ok(e.adjoint() * Complex64::new(p_max.sqrt() / norm, 0.0))
}

/// `H^H (H H^H + σ² I)^{-1} diag(√P)` without the budget rescaling.
pub fn mmse_weights_unscaled(
    h: &DMatrix<Complex64>,
    noise: f64,
    powers: &[f64],
) -> Result<DMatrix<Complex64>, BeamformingError> {
    let k = h.nrows();
    if powers.len() != k {
        return Err(BeamformingError::Dimension(format!(
            "{} powers for {} users",
            powers.len(),
            k
        )));
    }
    if h.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) || !noise.is_finite() {
        return Err(BeamformingError::NonFinite("mmse_weights"));
    }
    if !(noise > 0.0) {
        return Err(BeamformingError::InvalidPower { name: "noise", value: noise });
    }
    let hh = h.adjoint();
    let mut gram = h * &hh;
    for i in 0..k {
        gram[(i, i)] += Complex64::new(noise, 0.0);
    }
    let inverse = gram
        .cholesky()
        .ok_or(BeamformingError::NonFinite("mmse_weights"))?
        .inverse();
    let mut w = hh * inverse;
    for (j, &p) in powers.iter().enumerate() {
        let s = Complex64::new(p.max(0.0).sqrt(), 0.0);
        for v in w.column_mut(j).iter_mut() {
            *v *= s;
        }
    }
    Ok(w)
}

/// MMSE weights with `P = P_max·α`, rescaled so that `Σ‖w_k‖² = P_max`.
///
/// An all-zero channel yields all-zero weights.
pub fn mmse_weights(h: &DMatrix<Complex64>, power: &PowerConfig) -> Result<DMatrix<Complex64>, BeamformingError> {
    let powers: Vec<f64> = power.alpha.iter().map(|a| a * power.p_max).collect();
    let mut w = mmse_weights_unscaled(h, power.noise, &powers)?;
    let used = w.norm_squared();
    if used > 0.0 {
        w *= Complex64::new((power.p_max / used).sqrt(), 0.0);
    }
    Ok(w)
}

/// `|e·w|²`.
pub fn beamforming_gain(e: &RowDVector<Complex64>, w: &DVector<Complex64>) -> f64 {
    e.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<Complex64>().norm_sqr()
}

/// Per-user SINR with `H` already blockage-masked.
pub fn sinr(h: &DMatrix<Complex64>, w: &DMatrix<Complex64>, alpha: &[f64], noise: f64) -> Vec<f64> {
    let k = h.nrows();
    let hw = h * w;
    (0..k)
        .map(|u| {
            let signal = alpha[u] * hw[(u, u)].norm_sqr();
            let interference: f64 = (0..k).filter(|&i| i != u).map(|i| alpha[i] * hw[(u, i)].norm_sqr()).sum();
            signal / (interference + noise)
        })
        .collect()
}

/// `log2(1 + SINR)` per user and their sum.
pub fn rates_and_sum(sinr: &[f64]) -> (Vec<f64>, f64) {
    let rates: Vec<f64> = sinr.iter().map(|s| (1.0 + s).log2()).collect();
    let sum = rates.iter().sum();
    (rates, sum)
}

/// Weights and the link metrics they achieve.
#[derive(Debug, Clone)]
pub struct BeamformingSolution {
    pub w: DMatrix<Complex64>,
    pub sinr: Vec<f64>,
    pub rates: Vec<f64>,
    pub sum_rate: f64,
}

impl BeamformingSolution {
    pub fn evaluate(h: &DMatrix<Complex64>, w: DMatrix<Complex64>, power: &PowerConfig) -> Self {
        let sinr = sinr(h, &w, &power.alpha, power.noise);
        let (rates, sum_rate) = rates_and_sum(&sinr);
        Self {
            w,
            sinr,
            rates,
            sum_rate,
        }
    }

    /// Budget-tight MMSE solution.
    pub fn mmse(h: &DMatrix<Complex64>, power: &PowerConfig) -> Result<Self, BeamformingError> {
        if h.nrows() != power.users() {
            return Err(BeamformingError::Dimension(format!(
                "{} channels for {} allocations",
                h.nrows(),
                power.users()
            )));
        }
        let w = mmse_weights(h, power)?;
        Ok(Self::evaluate(h, w, power))
    }

    /// Transmit power `Σ‖w_k‖²`.
    pub fn power_used(&self) -> f64 {
        self.w.norm_squared()
    }

    /// Users whose rate falls short of their floor.
    pub fn rate_floor_violations(&self, floors: &[f64]) -> Vec<usize> {
        self.rates
            .iter()
            .zip(floors)
            .enumerate()
            .filter(|(_, (r, f))| r < f)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Smallest total transmit power reaching `SINR_k ≥ gamma` for every user
/// with beam directions fixed to the normalized columns of `w`.
///
/// Solves `α_k q_k a_kk − γ Σ_{i≠k} α_i q_i a_ki = γσ²` for the per-beam
/// powers `q`, with `a_ki = |e_k u_i|²`. Returns `None` when no
/// non-negative solution exists.
pub fn min_power_for_sinr(
    h: &DMatrix<Complex64>,
    w: &DMatrix<Complex64>,
    alpha: &[f64],
    noise: f64,
    gamma: f64,
) -> Option<f64> {
    let k = h.nrows();
    let mut dirs = w.clone();
    for mut col in dirs.column_iter_mut() {
        let n = col.norm();
        if n == 0.0 {
            return None;
        }
        col.unscale_mut(n);
    }
    let a = (h * &dirs).map(|v| v.norm_sqr());
    let mut m = DMatrix::<f64>::zeros(k, k);
    for r in 0..k {
        for c in 0..k {
            m[(r, c)] = if r == c { a[(r, r)] } else { -gamma * a[(r, c)] };
        }
    }
    let rhs = DVector::from_element(k, gamma * noise);
    let x = m.lu().solve(&rhs)?;
    if x.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
        return None;
    }
    Some(x.iter().zip(alpha).map(|(xi, ai)| xi / ai).sum())
}

/// Zero matrix helper for callers that need a placeholder `W`.
pub fn zero_weights(antennas: usize, users: usize) -> DMatrix<Complex64> {
    DMatrix::from_element(antennas, users, zero())
}
