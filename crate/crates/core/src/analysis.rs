//! Single-user outage probability.
//!
//! A user stands at `[x1, y, 0]` with `y ~ U[0, y_max]`. It is served by its
//! nearest antenna at distance `d(y)`; the link is in outage when that
//! antenna is blocked (probability `1 − e^{−φ d}`) or when the SNR
//! `p η² / (d² σ²)` falls below `ε = 2^R − 1`.
//!
//! With movable antennas one antenna per waveguide can sit at `x1`, so
//! `d(y) = √(d0² + min_n (y − y_n)²)`. A conventional fixed antenna at `ψ_C`
//! gives `d(y) = ‖[x1, y, 0] − ψ_C‖`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{distance, Point3, SystemGeometry};
use crate::rng::substream;

/// Default absolute tolerance of [`adaptive_simpson`].
pub const QUADRATURE_TOL: f64 = 1e-8;
const MAX_DEPTH: usize = 50;
const MC_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("quadrature did not converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },
    #[error("invalid outage parameter `{name}` = {value}")]
    Invalid { name: &'static str, value: f64 },
}

/// Composite adaptive Simpson quadrature of `f` on `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64, AnalysisError> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: usize) -> Result<f64, AnalysisError> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(AnalysisError::Quadrature { a, b });
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageSpec {
    /// Rate threshold `R` in bits/s/Hz.
    pub rate_threshold: f64,
    /// Blockage density `φ` in 1/m.
    pub density: f64,
    /// Fixed user x-coordinate.
    pub user_x: f64,
    pub trials: usize,
    /// Site of the conventional fixed antenna.
    pub conventional_site: Point3,
}

impl OutageSpec {
    /// SNR threshold `ε = 2^R − 1`.
    pub fn snr_threshold(&self) -> f64 {
        self.rate_threshold.exp2() - 1.0
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.rate_threshold > 0.0) {
            return Err(AnalysisError::Invalid {
                name: "rate_threshold",
                value: self.rate_threshold,
            });
        }
        if !(self.density >= 0.0) {
            return Err(AnalysisError::Invalid {
                name: "density",
                value: self.density,
            });
        }
        if self.trials == 0 {
            return Err(AnalysisError::Invalid { name: "trials", value: 0.0 });
        }
        Ok(())
    }
}

/// Where the serving antennas are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AntennaPolicy {
    /// One antenna per waveguide moved to the user's x-coordinate.
    Movable,
    /// Antennas at fixed points.
    Fixed(Vec<Point3>),
}

impl AntennaPolicy {
    /// Distance from `[x, y, 0]` to the nearest antenna.
    pub fn distance(&self, geometry: &SystemGeometry, x: f64, y: f64) -> f64 {
        match self {
            AntennaPolicy::Movable => {
                let dy = (0..geometry.num_waveguides)
                    .map(|n| (y - geometry.waveguide_y(n)).abs())
                    .fold(f64::INFINITY, f64::min);
                (geometry.mount_height.powi(2) + dy * dy).sqrt()
            }
            AntennaPolicy::Fixed(points) => points.iter().map(|p| distance(p, &[x, y, 0.0])).fold(f64::INFINITY, f64::min),
        }
    }
}

/// Link budget of the single-antenna link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub p_max: f64,
    pub noise: f64,
    /// Free-space amplitude `η`.
    pub gain: f64,
}

impl LinkBudget {
    pub fn snr(&self, d: f64) -> f64 {
        self.p_max * self.gain * self.gain / (d * d * self.noise)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutageEstimate {
    pub estimate: f64,
    /// `1.96·√(p̂(1−p̂)/trials)`.
    pub half_width: f64,
    pub trials: usize,
}

impl OutageEstimate {
    fn from_counts(outages: usize, trials: usize) -> Self {
        let p = outages as f64 / trials as f64;
        Self {
            estimate: p,
            half_width: 1.96 * (p * (1.0 - p) / trials as f64).sqrt(),
            trials,
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        (self.estimate - value).abs() <= self.half_width
    }
}

/// Monte Carlo outage. Trials are processed in chunks seeded by
/// `(seed, "outage-mc", chunk)`, so the result does not depend on threads.
pub fn outage_monte_carlo(
    spec: &OutageSpec,
    geometry: &SystemGeometry,
    policy: &AntennaPolicy,
    link: &LinkBudget,
    seed: u64,
) -> Result<OutageEstimate, AnalysisError> {
    spec.validate()?;
    let eps = spec.snr_threshold();
    let chunks = spec.trials.div_ceil(MC_CHUNK);
    let outages: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, "outage-mc", c as u64);
            let n = MC_CHUNK.min(spec.trials - c * MC_CHUNK);
            (0..n)
                .filter(|_| {
                    let y = rng.random_range(0.0..=geometry.region_depth);
                    let d = policy.distance(geometry, spec.user_x, y);
                    let los = rng.random::<f64>() < (-spec.density * d).exp();
                    !los || link.snr(d) < eps
                })
                .count()
        })
        .sum();
    Ok(OutageEstimate::from_counts(outages, spec.trials))
}

/// High-SNR outage `1 − (1/y_max)∫ e^{−φ d(y)} dy`.
pub fn outage_closed_form<D: Fn(f64) -> f64>(spec: &OutageSpec, geometry: &SystemGeometry, d: D) -> Result<f64, AnalysisError> {
    if spec.density == 0.0 {
        return Ok(0.0);
    }
    let y_max = geometry.region_depth;
    let integral = adaptive_simpson(&|y| (-spec.density * d(y)).exp(), 0.0, y_max, QUADRATURE_TOL)?;
    Ok((1.0 - integral / y_max).clamp(0.0, 1.0))
}

/// [`outage_closed_form`] for a policy.
pub fn policy_closed_form(spec: &OutageSpec, geometry: &SystemGeometry, policy: &AntennaPolicy) -> Result<f64, AnalysisError> {
    outage_closed_form(spec, geometry, |y| policy.distance(geometry, spec.user_x, y))
}

/// Closed form with one fixed antenna at the conventional site.
pub fn conventional_outage(spec: &OutageSpec, geometry: &SystemGeometry) -> Result<f64, AnalysisError> {
    policy_closed_form(spec, geometry, &AntennaPolicy::Fixed(vec![spec.conventional_site]))
}

/// Outage including SNR shortfall:
/// `1 − (1/y_max)∫ e^{−φ d(y)} 1{snr(d(y)) ≥ ε} dy`.
///
/// The indicator's switching points are located by bisection on a grid
/// and the smooth pieces are integrated separately.
pub fn outage_full_regime(spec: &OutageSpec, geometry: &SystemGeometry, policy: &AntennaPolicy, link: &LinkBudget) -> Result<f64, AnalysisError> {
    const GRID: usize = 4000;
    let eps = spec.snr_threshold();
    let y_max = geometry.region_depth;
    let d = |y: f64| policy.distance(geometry, spec.user_x, y);
    let served = |y: f64| link.snr(d(y)) >= eps;
    let mut cuts = vec![0.0];
    let mut prev = served(0.0);
    for i in 1..=GRID {
        let y = y_max * i as f64 / GRID as f64;
        let now = served(y);
        if now != prev {
            let (mut lo, mut hi) = (y_max * (i - 1) as f64 / GRID as f64, y);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if served(mid) == prev {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            cuts.push(0.5 * (lo + hi));
            prev = now;
        }
    }
    cuts.push(y_max);
    let mut integral = 0.0;
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        if served(mid) {
            integral += adaptive_simpson(&|y| (-spec.density * d(y)).exp(), w[0], w[1], QUADRATURE_TOL)?;
        }
    }
    Ok((1.0 - integral / y_max).clamp(0.0, 1.0))
}

/// Smallest budget at which every position of the segment meets `ε`:
/// `ε σ² max_y d(y)² / η²`.
pub fn threshold_critical_power(spec: &OutageSpec, geometry: &SystemGeometry, policy: &AntennaPolicy, noise: f64, gain: f64) -> f64 {
    const GRID: usize = 4000;
    let d_max = (0..=GRID)
        .map(|i| policy.distance(geometry, spec.user_x, geometry.region_depth * i as f64 / GRID as f64))
        .fold(0.0, f64::max);
    spec.snr_threshold() * noise * d_max * d_max / (gain * gain)
}

/// Movable-antenna versus conventional closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub pass: f64,
    pub conventional: f64,
    /// `conventional − pass`.
    pub gap: f64,
    /// `pass ≤ conventional` (within quadrature tolerance).
    pub holds: bool,
    /// `pass < conventional` beyond quadrature tolerance.
    pub strict: bool,
}

pub fn outage_ordering_check(spec: &OutageSpec, geometry: &SystemGeometry, policy: &AntennaPolicy) -> Result<OrderingReport, AnalysisError> {
    let pass = policy_closed_form(spec, geometry, policy)?;
    let conventional = conventional_outage(spec, geometry)?;
    let gap = conventional - pass;
    let slack = 1e-7;
    Ok(OrderingReport {
        pass,
        conventional,
        gap,
        holds: gap >= -slack,
        strict: gap > slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> SystemGeometry {
        SystemGeometry::new(4, 16, 30.0, 12.0, 10.0, 3.0, 0.01).unwrap()
    }

    fn spec(density: f64) -> OutageSpec {
        OutageSpec {
            rate_threshold: 1.0,
            density,
            user_x: 15.0,
            trials: 100_000,
            conventional_site: geometry().region_center(),
        }
    }

    fn link(p_max: f64) -> LinkBudget {
        LinkBudget {
            p_max,
            noise: 1e-11,
            gain: 0.02 / (4.0 * std::f64::consts::PI),
        }
    }

    #[test]
    fn simpson_integrates_polynomials_and_kinks() {
        assert!((adaptive_simpson(&|x| x * x * x, 0.0, 2.0, 1e-12).unwrap() - 4.0).abs() < 1e-12);
        let v = adaptive_simpson(&|x: f64| (x - 1.0).abs(), 0.0, 3.0, 1e-10).unwrap();
        assert!((v - 2.5).abs() < 1e-9);
        assert!(adaptive_simpson(&|x: f64| (1.0 / x).sin(), 1e-300, 1.0, 1e-14).is_err());
    }

    #[test]
    fn movable_distance_profile() {
        let g = geometry();
        let p = AntennaPolicy::Movable;
        assert_eq!(p.distance(&g, 3.0, 6.0), 10.0);
        assert!((p.distance(&g, 3.0, 4.5) - (100.0f64 + 2.25).sqrt()).abs() < 1e-12);
        assert!((p.distance(&g, 3.0, 12.0) - (100.0f64 + 9.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn closed_form_limits() {
        let g = geometry();
        assert_eq!(outage_closed_form(&spec(0.0), &g, |_| 10.0).unwrap(), 0.0);
        let v = outage_closed_form(&spec(0.05), &g, |_| 10.0).unwrap();
        assert!((v - (1.0 - (-0.5f64).exp())).abs() < 1e-12);
        assert_eq!(conventional_outage(&spec(0.0), &g).unwrap(), 0.0);
    }

    #[test]
    fn monte_carlo_limits() {
        let g = geometry();
        let mut s = spec(0.0);
        s.trials = 20_000;
        let e = outage_monte_carlo(&s, &g, &AntennaPolicy::Movable, &link(1e3), 1).unwrap();
        assert_eq!(e.estimate, 0.0);
        s.density = 1e3;
        let e = outage_monte_carlo(&s, &g, &AntennaPolicy::Movable, &link(1e3), 1).unwrap();
        assert_eq!(e.estimate, 1.0);
    }

    #[test]
    fn constant_distance_monte_carlo() {
        // A single antenna row directly above the user line: d ≡ 10.
        let g = SystemGeometry::new(1, 1, 30.0, 12.0, 10.0, 3.0, 0.0).unwrap();
        let points: Vec<Point3> = (0..=1200).map(|i| [15.0, i as f64 * 0.01, 10.0]).collect();
        let policy = AntennaPolicy::Fixed(points);
        let mut s = spec(0.05);
        s.trials = 100_000;
        let e = outage_monte_carlo(&s, &g, &policy, &link(1e3), 7).unwrap();
        assert!(e.covers(1.0 - (-0.5f64).exp()), "{e:?}");
    }

    #[test]
    fn monte_carlo_agrees_with_closed_form() {
        let g = geometry();
        let s = spec(0.05);
        let closed = policy_closed_form(&s, &g, &AntennaPolicy::Movable).unwrap();
        let e = outage_monte_carlo(&s, &g, &AntennaPolicy::Movable, &link(0.1), 3).unwrap();
        assert!(e.covers(closed), "{e:?} vs {closed}");
        let again = outage_monte_carlo(&s, &g, &AntennaPolicy::Movable, &link(0.1), 3).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn coverage_over_seeds() {
        let g = geometry();
        let mut s = spec(0.1);
        s.trials = 5_000;
        let closed = policy_closed_form(&s, &g, &AntennaPolicy::Movable).unwrap();
        let runs = 200;
        let covered = (0..runs)
            .filter(|&seed| outage_monte_carlo(&s, &g, &AntennaPolicy::Movable, &link(0.1), seed).unwrap().covers(closed))
            .count();
        assert!(covered as f64 >= 0.93 * runs as f64, "{covered}");
    }

    #[test]
    fn ordering_holds_and_degenerates_to_equality() {
        let g = geometry();
        for phi in [0.01, 0.05, 0.1, 0.5] {
            let r = outage_ordering_check(&spec(phi), &g, &AntennaPolicy::Movable).unwrap();
            assert!(r.holds && r.strict, "{phi}: {r:?}");
        }
        let s = spec(0.1);
        let degenerate = AntennaPolicy::Fixed(vec![s.conventional_site]);
        let r = outage_ordering_check(&s, &g, &degenerate).unwrap();
        assert!(r.holds && !r.strict);
        assert_eq!(r.gap, 0.0);
    }

    #[test]
    fn outage_is_monotone_in_density_and_threshold() {
        let g = geometry();
        let mut last = -1.0;
        for phi in [0.0, 0.001, 0.01, 0.05, 0.1, 0.5, 1.0] {
            let v = policy_closed_form(&spec(phi), &g, &AntennaPolicy::Movable).unwrap();
            assert!(v >= last);
            last = v;
        }
        let mut last = -1.0;
        for rate in [0.5, 2.0, 8.0, 12.0, 14.0, 16.0] {
            let mut s = spec(0.05);
            s.rate_threshold = rate;
            let v = outage_full_regime(&s, &g, &AntennaPolicy::Movable, &link(0.1)).unwrap();
            assert!(v >= last - 1e-12, "{rate}: {v} < {last}");
            last = v;
        }
        assert!(last > policy_closed_form(&spec(0.05), &g, &AntennaPolicy::Movable).unwrap());
    }

    #[test]
    fn full_regime_reaches_high_snr_limit() {
        let g = geometry();
        let mut s = spec(0.05);
        s.rate_threshold = 12.0;
        let l = link(1.0);
        let p_crit = threshold_critical_power(&s, &g, &AntennaPolicy::Movable, l.noise, l.gain);
        let high = outage_full_regime(&s, &g, &AntennaPolicy::Movable, &LinkBudget { p_max: 1e3 * p_crit, ..l }).unwrap();
        let closed = policy_closed_form(&s, &g, &AntennaPolicy::Movable).unwrap();
        assert!((high - closed).abs() < 0.01);
        let low = outage_full_regime(&s, &g, &AntennaPolicy::Movable, &LinkBudget { p_max: 0.5 * p_crit, ..l }).unwrap();
        assert!(low > closed + 0.01);
    }

    #[test]
    fn gap_rises_then_falls_with_density() {
        let g = geometry();
        let gaps: Vec<f64> = [0.001, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0]
            .iter()
            .map(|&phi| outage_ordering_check(&spec(phi), &g, &AntennaPolicy::Movable).unwrap().gap)
            .collect();
        let peak = gaps.iter().cloned().fold(0.0, f64::max);
        assert!(gaps[0] < peak && *gaps.last().unwrap() < peak);
    }
}
