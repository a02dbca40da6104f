//! In-waveguide propagation, free-space user channels and LoS blockage.
//!
//! The stacked channel of user `k` is the row `h_k^H` of length `M = N*L`,
//! waveguide-major (`m = n*L + l`). The in-waveguide matrix `G` is `M x N`
//! and block diagonal; the effective channel `e_k = (δ_k ⊙ h_k^H) G` is the
//! `1 x N` row every beamformer works with.

use nalgebra::{DMatrix, RowDVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::geometry::{antenna_positions, distance, GeometryError, PaLayout, Point3, SystemGeometry};

/// Default speed of light used by [`RadioConfig::new`].
pub const LIGHTSPEED: f64 = 2.998e8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("antenna count must be at least 1")]
    NoAntennas,
    #[error("negative in-waveguide distance {0}")]
    NegativeDistance(f64),
    #[error("zero antenna-user distance (singular free-space channel)")]
    Singularity,
    #[error("invalid radio parameter `{name}` = {value}")]
    InvalidRadio { name: &'static str, value: f64 },
    #[error("blockage mask is {antennas}x{users}, expected {expected_antennas}x{expected_users}")]
    MaskShape {
        antennas: usize,
        users: usize,
        expected_antennas: usize,
        expected_users: usize,
    },
    #[error("blockage density must be non-negative, got {0}")]
    InvalidDensity(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Carrier and propagation constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig {
    pub carrier_freq: f64,
    pub lightspeed: f64,
    pub n_eff: f64,
    /// Free-space amplitude gain `η`; the channel magnitude is `η / d`.
    pub gain: f64,
}

impl RadioConfig {
    /// Carrier `carrier_freq` (Hz) over a waveguide of refractive index
    /// `n_eff`, with `c = 2.998e8` and the Friis amplitude `η = λ / 4π`.
    pub fn new(carrier_freq: f64, n_eff: f64) -> Result<Self, ChannelError> {
        Self::with_lightspeed(carrier_freq, n_eff, LIGHTSPEED)
    }

    pub fn with_lightspeed(carrier_freq: f64, n_eff: f64, lightspeed: f64) -> Result<Self, ChannelError> {
        if !(carrier_freq.is_finite() && carrier_freq > 0.0) {
            return Err(ChannelError::InvalidRadio {
                name: "carrier_freq",
                value: carrier_freq,
            });
        }
        if !(n_eff.is_finite() && n_eff >= 1.0) {
            return Err(ChannelError::InvalidRadio { name: "n_eff", value: n_eff });
        }
        if !(lightspeed.is_finite() && lightspeed > 0.0) {
            return Err(ChannelError::InvalidRadio {
                name: "lightspeed",
                value: lightspeed,
            });
        }
        let wavelength = lightspeed / carrier_freq;
        Ok(Self {
            carrier_freq,
            lightspeed,
            n_eff,
            gain: wavelength / (4.0 * PI),
        })
    }

    /// Overrides `η`.
    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn wavelength(&self) -> f64 {
        self.lightspeed / self.carrier_freq
    }

    pub fn guided_wavelength(&self) -> f64 {
        self.wavelength() / self.n_eff
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength()
    }

    pub fn guided_wavenumber(&self) -> f64 {
        2.0 * PI / self.guided_wavelength()
    }
}

/// Response `(1/√L) exp(-i 2π x / λ_g)` of an antenna `x` meters from the feed.
pub fn inwaveguide_response(cfg: &RadioConfig, pas: usize, x: f64) -> Result<Complex64, ChannelError> {
    if pas == 0 {
        return Err(ChannelError::NoAntennas);
    }
    if x < 0.0 {
        return Err(ChannelError::NegativeDistance(x));
    }
    Ok(unchecked_response(cfg, pas, x))
}

fn unchecked_response(cfg: &RadioConfig, pas: usize, x: f64) -> Complex64 {
    Complex64::from_polar(1.0 / (pas as f64).sqrt(), -cfg.guided_wavenumber() * x)
}

/// Block-diagonal `M x N` in-waveguide matrix of a layout.
pub fn build_waveguide_matrix(
    cfg: &RadioConfig,
    geometry: &SystemGeometry,
    layout: &PaLayout,
) -> Result<DMatrix<Complex64>, ChannelError> {
    crate::geometry::validate_layout(geometry, layout)?;
    let pas = layout.pas();
    let mut g = DMatrix::zeros(layout.num_waveguides() * pas, layout.num_waveguides());
    for (n, column) in layout.columns().iter().enumerate() {
        for (l, &x) in column.iter().enumerate() {
            g[(n * pas + l, n)] = unchecked_response(cfg, pas, x);
        }
    }
    Ok(g)
}

/// Entry `η exp(-iκd) / d` of `h^H` between an antenna and a user.
pub fn freespace_channel(cfg: &RadioConfig, pa: &Point3, user: &Point3) -> Result<Complex64, ChannelError> {
    let d = distance(pa, user);
    if d == 0.0 {
        return Err(ChannelError::Singularity);
    }
    Ok(freespace_at(cfg, d))
}

fn freespace_at(cfg: &RadioConfig, d: f64) -> Complex64 {
    Complex64::from_polar(cfg.gain / d, -cfg.wavenumber() * d)
}

/// Per-(antenna, user) LoS indicators; `true` means line of sight.
///
/// Antennas are indexed waveguide-major over all `M` antennas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockageMask {
    antennas: usize,
    users: usize,
    los: Vec<bool>,
}

impl BlockageMask {
    pub fn all_clear(antennas: usize, users: usize) -> Self {
        Self {
            antennas,
            users,
            los: vec![true; antennas * users],
        }
    }

    pub fn all_blocked(antennas: usize, users: usize) -> Self {
        Self {
            antennas,
            users,
            los: vec![false; antennas * users],
        }
    }

    /// Builds a mask from rows indexed by antenna, each holding one flag per user.
    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let users = rows.first().map_or(0, Vec::len);
        Self {
            antennas: rows.len(),
            users,
            los: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn is_los(&self, antenna: usize, user: usize) -> bool {
        self.los[antenna * self.users + user]
    }

    pub fn set(&mut self, antenna: usize, user: usize, los: bool) {
        self.los[antenna * self.users + user] = los;
    }

    /// Fraction of LoS entries.
    pub fn los_fraction(&self) -> f64 {
        self.los.iter().filter(|&&v| v).count() as f64 / self.los.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BlockageMode {
    /// Use the supplied mask verbatim.
    DeterministicMask(BlockageMask),
    /// Independent Bernoulli LoS draw per (antenna, user) with
    /// `P(LoS) = exp(-density * distance)`.
    DistanceExponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockageModel {
    /// Blockage density `φ` in 1/m.
    pub density: f64,
    pub mode: BlockageMode,
}

impl BlockageModel {
    pub fn exponential(density: f64) -> Result<Self, ChannelError> {
        if !(density >= 0.0) {
            return Err(ChannelError::InvalidDensity(density));
        }
        Ok(Self {
            density,
            mode: BlockageMode::DistanceExponential,
        })
    }

    pub fn deterministic(mask: BlockageMask) -> Self {
        Self {
            density: 0.0,
            mode: BlockageMode::DeterministicMask(mask),
        }
    }

    /// LoS probability at distance `d`.
    pub fn los_probability(&self, d: f64) -> f64 {
        (-self.density * d).exp()
    }
}

/// Uniform variates backing one block-fading realization.
///
/// Thresholding the same draw against different layouts gives each layout
/// its correct marginal LoS probability while holding the blockage
/// realization fixed across the codewords evaluated in one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockageDraw {
    antennas: usize,
    users: usize,
    uniforms: Vec<f64>,
}

impl BlockageDraw {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, antennas: usize, users: usize) -> Self {
        Self {
            antennas,
            users,
            uniforms: (0..antennas * users).map(|_| rng.random::<f64>()).collect(),
        }
    }

    /// Mask of this realization for a concrete layout.
    pub fn mask(
        &self,
        model: &BlockageModel,
        geometry: &SystemGeometry,
        layout: &PaLayout,
        users: &[Point3],
    ) -> Result<BlockageMask, ChannelError> {
        let expected_antennas = layout.num_waveguides() * layout.pas();
        match &model.mode {
            BlockageMode::DeterministicMask(mask) => {
                if mask.antennas != expected_antennas || mask.users != users.len() {
                    return Err(ChannelError::MaskShape {
                        antennas: mask.antennas,
                        users: mask.users,
                        expected_antennas,
                        expected_users: users.len(),
                    });
                }
                Ok(mask.clone())
            }
            BlockageMode::DistanceExponential => {
                if self.antennas != expected_antennas || self.users != users.len() {
                    return Err(ChannelError::MaskShape {
                        antennas: self.antennas,
                        users: self.users,
                        expected_antennas,
                        expected_users: users.len(),
                    });
                }
                let mut mask = BlockageMask::all_clear(expected_antennas, users.len());
                for (m, (_, _, pa)) in antenna_positions(geometry, layout).enumerate() {
                    for (k, user) in users.iter().enumerate() {
                        let p = model.los_probability(distance(&pa, user));
                        mask.set(m, k, self.uniforms[m * self.users + k] < p);
                    }
                }
                Ok(mask)
            }
        }
    }
}

/// Draws a fresh blockage mask for `layout`.
pub fn sample_blockage<R: Rng + ?Sized>(
    model: &BlockageModel,
    geometry: &SystemGeometry,
    layout: &PaLayout,
    users: &[Point3],
    rng: &mut R,
) -> Result<BlockageMask, ChannelError> {
    let draw = BlockageDraw::sample(rng, layout.num_waveguides() * layout.pas(), users.len());
    draw.mask(model, geometry, layout, users)
}

/// `(δ_k ⊙ h_k^H) G` by dense matrix product. Reference implementation of
/// the block-structured computation in [`ChannelState`].
pub fn effective_channel(
    h_row: &RowDVector<Complex64>,
    los: &[bool],
    g: &DMatrix<Complex64>,
) -> RowDVector<Complex64> {
    let masked = RowDVector::from_iterator(
        h_row.len(),
        h_row
            .iter()
            .zip(los)
            .map(|(&h, &v)| if v { h } else { Complex64::new(0.0, 0.0) }),
    );
    masked * g
}

/// Channels of every user under one layout and blockage realization.
#[derive(Debug, Clone)]
pub struct ChannelState {
    /// In-waveguide matrix `G`, `M x N`.
    pub waveguide: DMatrix<Complex64>,
    /// Unmasked free-space rows `h_k^H`, `K x M`.
    pub freespace: DMatrix<Complex64>,
    pub mask: BlockageMask,
    /// Effective channels `e_k`, `K x N`.
    pub effective: DMatrix<Complex64>,
}

impl ChannelState {
    pub fn new(
        cfg: &RadioConfig,
        geometry: &SystemGeometry,
        layout: &PaLayout,
        users: &[Point3],
        mask: BlockageMask,
    ) -> Result<Self, ChannelError> {
        let waveguide = build_waveguide_matrix(cfg, geometry, layout)?;
        let m = geometry.total_pas();
        if mask.antennas != m || mask.users != users.len() {
            return Err(ChannelError::MaskShape {
                antennas: mask.antennas,
                users: mask.users,
                expected_antennas: m,
                expected_users: users.len(),
            });
        }
        let mut freespace = DMatrix::zeros(users.len(), m);
        for (idx, (_, _, pa)) in antenna_positions(geometry, layout).enumerate() {
            for (k, user) in users.iter().enumerate() {
                freespace[(k, idx)] = freespace_channel(cfg, &pa, user)?;
            }
        }
        let pas = layout.pas();
        let mut effective = DMatrix::zeros(users.len(), layout.num_waveguides());
        for k in 0..users.len() {
            for n in 0..layout.num_waveguides() {
                let mut acc = Complex64::new(0.0, 0.0);
                for l in 0..pas {
                    let idx = n * pas + l;
                    if mask.is_los(idx, k) {
                        acc += freespace[(k, idx)] * waveguide[(idx, n)];
                    }
                }
                effective[(k, n)] = acc;
            }
        }
        Ok(Self {
            waveguide,
            freespace,
            mask,
            effective,
        })
    }

    /// Channel state with every link in LoS.
    pub fn unblocked(
        cfg: &RadioConfig,
        geometry: &SystemGeometry,
        layout: &PaLayout,
        users: &[Point3],
    ) -> Result<Self, ChannelError> {
        let mask = BlockageMask::all_clear(geometry.total_pas(), users.len());
        Self::new(cfg, geometry, layout, users, mask)
    }

    pub fn users(&self) -> usize {
        self.effective.nrows()
    }

    /// Effective channel row of user `k`.
    pub fn effective_row(&self, k: usize) -> RowDVector<Complex64> {
        self.effective.row(k).into_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx_eq::close;

    mod approx_eq {
        use num_complex::Complex64;
        pub fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
            (a - b).norm() <= tol
        }
    }

    fn exact_radio() -> RadioConfig {
        // c = 3e8 makes λ = 0.02 m exactly at 15 GHz.
        RadioConfig::with_lightspeed(15e9, 1.0, 3e8).unwrap()
    }

    #[test]
    fn response_examples() {
        let cfg = RadioConfig::new(15e9, 1.4).unwrap();
        assert_eq!(inwaveguide_response(&cfg, 1, 0.0).unwrap(), Complex64::new(1.0, 0.0));
        let half = inwaveguide_response(&cfg, 4, cfg.guided_wavelength() / 2.0).unwrap();
        assert!(close(half, Complex64::new(-0.5, 0.0), 1e-12));
        let full = inwaveguide_response(&cfg, 1, cfg.guided_wavelength()).unwrap();
        assert!(full.arg().abs() < 1e-12);
        assert!(((cfg.guided_wavelength()) - LIGHTSPEED / 15e9 / 1.4).abs() < 1e-15);
        assert_eq!(inwaveguide_response(&cfg, 0, 0.0), Err(ChannelError::NoAntennas));
    }

    #[test]
    fn waveguide_matrix_structure() {
        let cfg = RadioConfig::new(15e9, 1.4).unwrap();
        let g2 = SystemGeometry::new(2, 1, 30.0, 12.0, 10.0, 3.0, 0.0).unwrap();
        let layout = PaLayout::uniform(2, 1, 0.0, 1.0);
        let g = build_waveguide_matrix(&cfg, &g2, &layout).unwrap();
        assert_eq!(g, DMatrix::identity(2, 2));

        let g22 = SystemGeometry::new(2, 2, 30.0, 12.0, 10.0, 3.0, 0.0).unwrap();
        let layout = PaLayout::uniform(2, 2, 0.0, 0.0);
        let g = build_waveguide_matrix(&cfg, &g22, &layout).unwrap();
        let s = 0.5f64.sqrt();
        let expected = DMatrix::from_row_slice(
            4,
            2,
            &[s, 0.0, s, 0.0, 0.0, s, 0.0, s].map(|v| Complex64::new(v, 0.0)),
        );
        assert!((g - expected).norm() < 1e-15);
    }

    #[test]
    fn block_columns_have_unit_norm() {
        let cfg = RadioConfig::new(15e9, 1.4).unwrap();
        let geometry = SystemGeometry::new(4, 16, 30.0, 12.0, 10.0, 3.0, 0.01).unwrap();
        let layout = PaLayout::uniform(4, 16, 3.3, 0.37);
        let g = build_waveguide_matrix(&cfg, &geometry, &layout).unwrap();
        for n in 0..4 {
            assert!((g.column(n).norm() - 1.0).abs() < 1e-12);
            for m in 0..64 {
                if m / 16 != n {
                    assert_eq!(g[(m, n)], Complex64::new(0.0, 0.0));
                } else {
                    assert!((g[(m, n)].norm() - 0.25).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn freespace_examples() {
        let cfg = exact_radio();
        let eta = cfg.gain;
        let h = freespace_channel(&cfg, &[0.0, 0.0, 1.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!(close(h, Complex64::new(eta, 0.0), 1e-12 * eta));
        let h2 = freespace_channel(&cfg, &[0.0, 0.0, 2.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!((h2.norm() - eta / 2.0).abs() < 1e-18);
        let h10 = freespace_channel(&cfg, &[5.0, 3.0, 10.0], &[5.0, 3.0, 0.0]).unwrap();
        assert!(close(h10, Complex64::new(eta / 10.0, 0.0), 1e-12 * eta));
        assert_eq!(
            freespace_channel(&cfg, &[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0]),
            Err(ChannelError::Singularity)
        );
    }

    #[test]
    fn blockage_extremes() {
        let geometry = SystemGeometry::new(2, 3, 30.0, 12.0, 10.0, 3.0, 0.0).unwrap();
        let layout = PaLayout::uniform(2, 3, 1.0, 2.0);
        let users = [[4.0, 1.0, 0.0], [20.0, 11.0, 0.0]];
        let mut rng = substream(1, "test", 0);
        let clear = BlockageModel::exponential(0.0).unwrap();
        for _ in 0..20 {
            let mask = sample_blockage(&clear, &geometry, &layout, &users, &mut rng).unwrap();
            assert_eq!(mask.los_fraction(), 1.0);
        }
        let opaque = BlockageModel::exponential(1e6).unwrap();
        let mask = sample_blockage(&opaque, &geometry, &layout, &users, &mut rng).unwrap();
        assert_eq!(mask.los_fraction(), 0.0);
        assert!(BlockageModel::exponential(-1.0).is_err());
    }

    #[test]
    fn deterministic_mask_is_returned_verbatim() {
        let geometry = SystemGeometry::new(1, 2, 30.0, 12.0, 10.0, 3.0, 0.0).unwrap();
        let layout = PaLayout::uniform(1, 2, 1.0, 2.0);
        let mask = BlockageMask::from_rows(&[vec![true], vec![false]]);
        let model = BlockageModel::deterministic(mask.clone());
        let mut rng = substream(1, "test", 0);
        let got = sample_blockage(&model, &geometry, &layout, &[[0.0, 0.0, 0.0]], &mut rng).unwrap();
        assert_eq!(got, mask);
    }

    #[test]
    fn los_frequency_matches_exponential_law() {
        // Single antenna 10 m above the user: P(LoS) = exp(-0.5).
        let geometry = SystemGeometry::new(1, 1, 30.0, 12.0, 10.0, 3.0, 0.0).unwrap();
        let layout = PaLayout::uniform(1, 1, 5.0, 0.0);
        let user = [[5.0, 0.0, 0.0]];
        let model = BlockageModel::exponential(0.05).unwrap();
        let mut rng = substream(11, "blockage-freq", 0);
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| {
                sample_blockage(&model, &geometry, &layout, &user, &mut rng)
                    .unwrap()
                    .is_los(0, 0)
            })
            .count();
        let freq = hits as f64 / trials as f64;
        assert!((freq - (-0.5f64).exp()).abs() < 0.01, "{freq}");
    }

    #[test]
    fn effective_channel_examples() {
        let cfg = exact_radio();
        let geometry = SystemGeometry::new(1, 1, 30.0, 12.0, 10.0, 3.0, 0.0).unwrap();
        let layout = PaLayout::uniform(1, 1, 0.0, 0.0);
        let state = ChannelState::unblocked(&cfg, &geometry, &layout, &[[0.0, 0.0, 0.0]]).unwrap();
        assert!(close(state.effective[(0, 0)], Complex64::new(cfg.gain / 10.0, 0.0), 1e-15));

        let blocked = BlockageMask::all_blocked(1, 1);
        let state = ChannelState::new(&cfg, &geometry, &layout, &[[0.0, 0.0, 0.0]], blocked).unwrap();
        assert_eq!(state.effective[(0, 0)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn block_structured_product_matches_dense_product() {
        let cfg = RadioConfig::new(15e9, 1.4).unwrap();
        let geometry = SystemGeometry::new(3, 4, 30.0, 12.0, 10.0, 3.0, 0.2).unwrap();
        let layout = PaLayout::from_columns(vec![
            vec![0.5, 3.0, 7.0, 11.5],
            vec![2.0, 2.5, 9.0, 29.0],
            vec![0.0, 10.0, 20.0, 30.0],
        ])
        .unwrap();
        let users = [[3.0, 2.0, 0.0], [17.0, 9.5, 0.0]];
        let model = BlockageModel::exponential(0.06).unwrap();
        let mut rng = substream(5, "dense", 0);
        let mask = sample_blockage(&model, &geometry, &layout, &users, &mut rng).unwrap();
        let state = ChannelState::new(&cfg, &geometry, &layout, &users, mask.clone()).unwrap();
        for k in 0..2 {
            let los: Vec<bool> = (0..12).map(|m| mask.is_los(m, k)).collect();
            let h_row = state.freespace.row(k).into_owned();
            let dense = effective_channel(&h_row, &los, &state.waveguide);
            assert!((dense - state.effective_row(k)).norm() < 1e-18);
        }
    }

    #[test]
    fn masking_an_antenna_equals_deleting_it() {
        let cfg = RadioConfig::new(15e9, 1.4).unwrap();
        let geometry = SystemGeometry::new(1, 3, 30.0, 12.0, 10.0, 3.0, 0.0).unwrap();
        let layout = PaLayout::from_columns(vec![vec![1.0, 4.0, 9.0]]).unwrap();
        let user = [[6.0, 2.0, 0.0]];
        let mut mask = BlockageMask::all_clear(3, 1);
        mask.set(1, 0, false);
        let state = ChannelState::new(&cfg, &geometry, &layout, &user, mask).unwrap();

        // Delete row 1 of h and G, keeping the 1/√3 amplitude of the full layout.
        let full = ChannelState::unblocked(&cfg, &geometry, &layout, &user).unwrap();
        let mut acc = Complex64::new(0.0, 0.0);
        for m in [0, 2] {
            acc += full.freespace[(0, m)] * full.waveguide[(m, 0)];
        }
        assert!(close(acc, state.effective[(0, 0)], 1e-18));
    }

    #[test]
    fn amplitude_times_distance_is_eta() {
        let cfg = RadioConfig::new(15e9, 1.4).unwrap();
        let geometry = SystemGeometry::new(2, 3, 30.0, 12.0, 10.0, 3.0, 0.0).unwrap();
        let layout = PaLayout::uniform(2, 3, 2.0, 4.0);
        let users = [[11.0, 5.0, 0.0]];
        let state = ChannelState::unblocked(&cfg, &geometry, &layout, &users).unwrap();
        for (m, (_, _, pa)) in antenna_positions(&geometry, &layout).enumerate() {
            let d = distance(&pa, &users[0]);
            assert!((state.freespace[(0, m)].norm() * d - cfg.gain).abs() < 1e-15);
        }
    }

    #[test]
    fn coherent_phases_attain_the_triangle_bound() {
        // Two antennas at x = 0 and x = λ_g/(1 + ...) chosen so that total
        // phase agrees modulo 2π: search a fine grid for the aligned spot.
        let cfg = exact_radio();
        let geometry = SystemGeometry::new(1, 2, 30.0, 12.0, 10.0, 3.0, 0.0).unwrap();
        let user = [0.0, 0.0, 0.0];
        let phase = |x: f64| {
            let d = (x * x + 100.0).sqrt();
            cfg.guided_wavenumber() * x + cfg.wavenumber() * d
        };
        // Bisect for x in (0.5, 0.6) where the phase gap crosses a multiple of 2π.
        let target = (phase(0.5) / (2.0 * PI)).ceil() * 2.0 * PI;
        let (mut lo, mut hi) = (0.5, 0.6);
        assert!(phase(hi) > target);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if phase(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let aligned = PaLayout::from_columns(vec![vec![0.0, lo]]).unwrap();
        let state = ChannelState::unblocked(&cfg, &geometry, &aligned, &[user]).unwrap();
        let bound: f64 = (0..2)
            .map(|m| (state.freespace[(0, m)] * state.waveguide[(m, 0)]).norm())
            .sum();
        assert!((state.effective[(0, 0)].norm() - bound).abs() < 1e-12 * bound);

        let misaligned = PaLayout::from_columns(vec![vec![0.0, lo + 0.003]]).unwrap();
        let state = ChannelState::unblocked(&cfg, &geometry, &misaligned, &[user]).unwrap();
        assert!(state.effective[(0, 0)].norm() < bound * (1.0 - 1e-6));
    }

    #[test]
    fn effective_channel_is_linear_in_h() {
        let cfg = RadioConfig::new(15e9, 1.4).unwrap();
        let geometry = SystemGeometry::new(2, 2, 30.0, 12.0, 10.0, 3.0, 0.0).unwrap();
        let layout = PaLayout::uniform(2, 2, 1.0, 1.5);
        let state = ChannelState::unblocked(&cfg, &geometry, &layout, &[[3.0, 4.0, 0.0]]).unwrap();
        let scale = Complex64::new(-0.7, 2.1);
        let h = state.freespace.row(0).into_owned();
        let los = vec![true; 4];
        let scaled = effective_channel(&(h.clone() * scale), &los, &state.waveguide);
        let base = effective_channel(&h, &los, &state.waveguide);
        assert!((scaled - base * scale).norm() < 1e-18);
    }
}
