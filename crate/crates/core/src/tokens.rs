//! Bounding-box observations and their tokenization.
//!
//! A trajectory is projected to a `4 x T` series of boxes
//! `(x_center, y_center, width, height)`, each row is instance-normalized,
//! sliced into overlapping patches and projected to tokens.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::Read;
use thiserror::Error;

use crate::geometry::{distance, Point3};

/// Floor on the RevIN standard deviation.
pub const REVIN_EPS: f64 = 1e-8;

/// Box attributes per slot.
pub const ATTRIBUTES: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TokenError {
    #[error("user at y = {user_y} is not in front of the camera plane y = {camera_y}")]
    BehindCamera { user_y: f64, camera_y: f64 },
    #[error("series length {t} shorter than patch length {l_patch}")]
    TooShort { t: usize, l_patch: usize },
    #[error("invalid token dimension `{0}`")]
    InvalidDimension(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty series")]
    Empty,
    #[error("bounding-box CSV: {0}")]
    Csv(String),
}

/// Pinhole-style camera looking along +y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub position: Point3,
    /// Region extent used for the affine center map.
    pub x_extent: f64,
    pub y_extent: f64,
    /// Box side at the reference distance.
    pub s_ref: f64,
    pub d_ref: f64,
}

impl CameraModel {
    /// Camera centered behind the region edge `y = 0`.
    pub fn behind_region(x_extent: f64, y_extent: f64) -> Self {
        Self {
            position: [0.5 * x_extent, -2.0, 3.0],
            x_extent,
            y_extent,
            s_ref: 0.1,
            d_ref: 10.0,
        }
    }

    /// Box of a single ground position.
    pub fn project(&self, user: &Point3) -> Result<[f64; 4], TokenError> {
        if user[1] <= self.position[1] {
            return Err(TokenError::BehindCamera {
                user_y: user[1],
                camera_y: self.position[1],
            });
        }
        let side = self.s_ref * self.d_ref / distance(user, &self.position);
        Ok([user[0] / self.x_extent, user[1] / self.y_extent, side, side])
    }
}

/// `4 x T` box series; `rows[i][t]` is attribute `i` at slot `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBoxSeries {
    pub rows: [Vec<f64>; ATTRIBUTES],
}

impl BoundingBoxSeries {
    pub fn from_columns(columns: &[[f64; 4]]) -> Result<Self, TokenError> {
        if columns.is_empty() {
            return Err(TokenError::Empty);
        }
        let rows = std::array::from_fn(|i| columns.iter().map(|c| c[i]).collect());
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows[0].is_empty()
    }

    pub fn column(&self, t: usize) -> [f64; 4] {
        std::array::from_fn(|i| self.rows[i][t])
    }

    /// Reads a CSV with header `t,x,y,w,h`, one row per slot, ordered by `t`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, TokenError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers().map_err(|e| TokenError::Csv(e.to_string()))?.clone();
        let expected = ["t", "x", "y", "w", "h"];
        if headers.iter().map(str::trim).ne(expected.iter().copied()) {
            return Err(TokenError::Csv(format!("header must be t,x,y,w,h, got {:?}", headers)));
        }
        let mut columns = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| TokenError::Csv(e.to_string()))?;
            let mut values = [0.0; 5];
            for (j, v) in values.iter_mut().enumerate() {
                *v = record
                    .get(j)
                    .ok_or_else(|| TokenError::Csv(format!("row {} has fewer than 5 fields", line + 2)))?
                    .trim()
                    .parse()
                    .map_err(|_| TokenError::Csv(format!("row {} field {} is not a number", line + 2, j + 1)))?;
            }
            if values[0] as usize != line {
                return Err(TokenError::Csv(format!("row {} has t = {}, expected {}", line + 2, values[0], line)));
            }
            if !(values[3] > 0.0 && values[4] > 0.0) {
                return Err(TokenError::Csv(format!("row {} has a non-positive box side", line + 2)));
            }
            columns.push([values[1], values[2], values[3], values[4]]);
        }
        Self::from_columns(&columns)
    }
}

/// Projects every slot of a trajectory.
pub fn synthesize_boxes(trajectory: &[Point3], camera: &CameraModel) -> Result<BoundingBoxSeries, TokenError> {
    let columns = trajectory.iter().map(|p| camera.project(p)).collect::<Result<Vec<_>, _>>()?;
    BoundingBoxSeries::from_columns(&columns)
}

/// Per-row mean and floored population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevinStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// `(row - μ) / max(σ, ε)` for every row.
pub fn revin_normalize(rows: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, RevinStats), TokenError> {
    let mut mean = Vec::with_capacity(rows.len());
    let mut std = Vec::with_capacity(rows.len());
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        if row.is_empty() {
            return Err(TokenError::Empty);
        }
        let t = row.len() as f64;
        let mu = row.iter().sum::<f64>() / t;
        let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / t;
        let sigma = var.sqrt().max(REVIN_EPS);
        out.push(row.iter().map(|v| (v - mu) / sigma).collect());
        mean.push(mu);
        std.push(sigma);
    }
    Ok((out, RevinStats { mean, std }))
}

/// Inverse of [`revin_normalize`].
pub fn revin_denormalize(rows: &[Vec<f64>], stats: &RevinStats) -> Result<Vec<Vec<f64>>, TokenError> {
    if rows.len() != stats.mean.len() || rows.len() != stats.std.len() {
        return Err(TokenError::Shape(format!("{} rows for {} statistics", rows.len(), stats.mean.len())));
    }
    Ok(rows
        .iter()
        .zip(stats.mean.iter().zip(&stats.std))
        .map(|(row, (mu, sigma))| row.iter().map(|v| v * sigma + mu).collect())
        .collect())
}

/// `floor((T - L_patch) / L_full) + 1`.
pub fn num_patches(t: usize, l_patch: usize, l_full: usize) -> Result<usize, TokenError> {
    if l_patch == 0 {
        return Err(TokenError::InvalidDimension("l_patch"));
    }
    if l_full == 0 {
        return Err(TokenError::InvalidDimension("l_full"));
    }
    if t < l_patch {
        return Err(TokenError::TooShort { t, l_patch });
    }
    Ok((t - l_patch) / l_full + 1)
}

/// `N_P x L_patch` matrix whose row `p` is `row[p·L_full .. p·L_full + L_patch]`.
pub fn patchify(row: &[f64], l_patch: usize, l_full: usize) -> Result<DMatrix<f64>, TokenError> {
    let n_p = num_patches(row.len(), l_patch, l_full)?;
    Ok(DMatrix::from_fn(n_p, l_patch, |p, j| row[p * l_full + j]))
}

/// `patches · EM + m`, with `m` added to every row.
pub fn embed_patches(patches: &DMatrix<f64>, em: &DMatrix<f64>, m: &[f64]) -> Result<DMatrix<f64>, TokenError> {
    if patches.ncols() != em.nrows() || em.ncols() != m.len() {
        return Err(TokenError::Shape(format!(
            "patches {}x{}, projection {}x{}, bias {}",
            patches.nrows(),
            patches.ncols(),
            em.nrows(),
            em.ncols(),
            m.len()
        )));
    }
    let mut tokens = patches * em;
    for mut row in tokens.row_iter_mut() {
        for (v, b) in row.iter_mut().zip(m) {
            *v += b;
        }
    }
    Ok(tokens)
}

/// Window and patch sizes of the token pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenDims {
    pub window: usize,
    pub l_patch: usize,
    pub l_full: usize,
    pub s_patch: usize,
}

impl Default for TokenDims {
    fn default() -> Self {
        Self {
            window: 13,
            l_patch: 4,
            l_full: 3,
            s_patch: 16,
        }
    }
}

impl TokenDims {
    pub fn validate(&self) -> Result<(), TokenError> {
        if self.s_patch == 0 {
            return Err(TokenError::InvalidDimension("s_patch"));
        }
        num_patches(self.window, self.l_patch, self.l_full).map(|_| ())
    }

    pub fn num_patches(&self) -> usize {
        num_patches(self.window, self.l_patch, self.l_full).expect("validated dims")
    }

    /// Patch values per attribute, `N_P · L_patch`.
    pub fn patch_len(&self) -> usize {
        self.num_patches() * self.l_patch
    }

    /// Length of [`PatchFeatures::to_vec`].
    pub fn feature_len(&self) -> usize {
        ATTRIBUTES * self.patch_len() + 2 * ATTRIBUTES
    }
}

/// Normalized patches of all four attributes plus their RevIN statistics.
///
/// Normalization strips absolute position from the patches; the statistics
/// carry it, so both are handed to the predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatures {
    pub patches: Vec<DMatrix<f64>>,
    pub stats: RevinStats,
}

impl PatchFeatures {
    /// Tokenizes the last `dims.window` slots of `series`.
    pub fn from_series(series: &BoundingBoxSeries, dims: &TokenDims) -> Result<Self, TokenError> {
        dims.validate()?;
        let t = series.len();
        if t < dims.window {
            return Err(TokenError::TooShort { t, l_patch: dims.window });
        }
        let window: Vec<Vec<f64>> = series.rows.iter().map(|r| r[t - dims.window..].to_vec()).collect();
        let (normalized, stats) = revin_normalize(&window)?;
        let patches = normalized
            .iter()
            .map(|row| patchify(row, dims.l_patch, dims.l_full))
            .collect::<Result<_, _>>()?;
        Ok(Self { patches, stats })
    }

    /// Flat layout: attribute-major row-major patches, then means, then stds.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in &self.patches {
            for r in 0..p.nrows() {
                out.extend(p.row(r).iter());
            }
        }
        out.extend(&self.stats.mean);
        out.extend(&self.stats.std);
        out
    }
}

/// Tokens of one attribute, with the projection that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub patches: DMatrix<f64>,
    pub tokens: DMatrix<f64>,
}

impl TokenSequence {
    pub fn new(patches: DMatrix<f64>, em: &DMatrix<f64>, m: &[f64]) -> Result<Self, TokenError> {
        let tokens = embed_patches(&patches, em, m)?;
        Ok(Self { patches, tokens })
    }
}
