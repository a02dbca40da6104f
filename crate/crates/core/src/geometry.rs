//! Physical layout of waveguides, pinching antennas and users.
//!
//! Waveguide `n` (0-based here, 1-based in every error message) runs along
//! the x-axis at `y = n * waveguide_spacing`, mounted at height
//! `mount_height`. Its feed point is `[0, y_n, d0]`, so the in-waveguide
//! distance to an antenna equals the antenna's x-coordinate. Users stand on
//! the ground plane `z = 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cartesian position in meters.
pub type Point3 = [f64; 3];

/// Absolute slack, in meters, granted to the spacing and bounds checks so
/// that grids built with floating-point steps equal to the minimum spacing
/// are not rejected by rounding.
pub const LAYOUT_TOLERANCE: f64 = 1e-9;

/// Euclidean distance between two points.
pub fn distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid geometry parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("layout shape {rows}x{cols} does not match geometry (L={pas} antennas x N={waveguides} waveguides)")]
    Shape {
        rows: usize,
        cols: usize,
        pas: usize,
        waveguides: usize,
    },
    #[error("{0}")]
    Violation(Violation),
    #[error("index out of range: waveguide {waveguide} of {num_waveguides}, antenna {antenna} of {pas}")]
    IndexOutOfRange {
        waveguide: usize,
        num_waveguides: usize,
        antenna: usize,
        pas: usize,
    },
    #[error("user {user} at [{x}, {y}, {z}] lies outside the deployment region")]
    UserOutsideRegion { user: usize, x: f64, y: f64, z: f64 },
}

/// Which placement constraint a layout breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    /// Antenna lies outside `[0, x_max]`.
    Bounds,
    /// Antenna closer than the minimum spacing to its predecessor.
    Spacing,
}

/// First constraint violation found by [`validate_layout`], 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub waveguide: usize,
    pub antenna: usize,
    pub constraint: Constraint,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let what = match self.constraint {
            Constraint::Bounds => "position outside [0, x_max]",
            Constraint::Spacing => "spacing below the minimum",
        };
        write!(
            f,
            "layout violation on waveguide {}, antenna {}: {}",
            self.waveguide, self.antenna, what
        )
    }
}

/// Waveguide, antenna and region dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemGeometry {
    pub num_waveguides: usize,
    pub pas_per_waveguide: usize,
    pub waveguide_length: f64,
    pub region_depth: f64,
    pub mount_height: f64,
    pub waveguide_spacing: f64,
    pub min_pa_spacing: f64,
}

impl SystemGeometry {
    pub fn new(
        num_waveguides: usize,
        pas_per_waveguide: usize,
        waveguide_length: f64,
        region_depth: f64,
        mount_height: f64,
        waveguide_spacing: f64,
        min_pa_spacing: f64,
    ) -> Result<Self, GeometryError> {
        let geometry = Self {
            num_waveguides,
            pas_per_waveguide,
            waveguide_length,
            region_depth,
            mount_height,
            waveguide_spacing,
            min_pa_spacing,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    /// Checks every invariant of the geometry.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let invalid = |name, value, reason| {
            Err(GeometryError::InvalidParameter {
                name,
                value,
                reason,
            })
        };
        if self.num_waveguides == 0 {
            return invalid("num_waveguides", 0.0, "must be at least 1");
        }
        if self.pas_per_waveguide == 0 {
            return invalid("pas_per_waveguide", 0.0, "must be at least 1");
        }
        for (name, value) in [
            ("waveguide_length", self.waveguide_length),
            ("region_depth", self.region_depth),
            ("mount_height", self.mount_height),
            ("waveguide_spacing", self.waveguide_spacing),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return invalid(name, value, "must be positive and finite");
            }
        }
        if !(self.min_pa_spacing.is_finite() && self.min_pa_spacing >= 0.0) {
            return invalid("min_pa_spacing", self.min_pa_spacing, "must be non-negative");
        }
        let last = (self.num_waveguides - 1) as f64 * self.waveguide_spacing;
        if last > self.region_depth + LAYOUT_TOLERANCE {
            return invalid(
                "waveguide_spacing",
                self.waveguide_spacing,
                "waveguides extend beyond region_depth",
            );
        }
        Ok(())
    }

    /// Total antenna count `M = N * L`.
    pub fn total_pas(&self) -> usize {
        self.num_waveguides * self.pas_per_waveguide
    }

    /// y-coordinate of waveguide `n` (0-based).
    pub fn waveguide_y(&self, n: usize) -> f64 {
        n as f64 * self.waveguide_spacing
    }

    /// Feed point of waveguide `n` (0-based).
    pub fn feed_point(&self, n: usize) -> Point3 {
        [0.0, self.waveguide_y(n), self.mount_height]
    }

    /// Region center at mount height, the default conventional-antenna site.
    pub fn region_center(&self) -> Point3 {
        [
            0.5 * self.waveguide_length,
            0.5 * self.region_depth,
            self.mount_height,
        ]
    }

    /// Whether a ground point lies in the deployment region.
    pub fn contains_user(&self, p: &Point3) -> bool {
        p[2] == 0.0
            && (0.0..=self.waveguide_length).contains(&p[0])
            && (0.0..=self.region_depth).contains(&p[1])
    }
}

/// x-coordinates of every antenna, one column per waveguide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaLayout {
    waveguides: Vec<Vec<f64>>,
}

impl PaLayout {
    /// Builds a layout from per-waveguide position columns. All columns must
    /// have the same length.
    pub fn from_columns(waveguides: Vec<Vec<f64>>) -> Result<Self, GeometryError> {
        let rows = waveguides.first().map_or(0, Vec::len);
        if waveguides.iter().any(|c| c.len() != rows) {
            let bad = waveguides.iter().find(|c| c.len() != rows).map_or(0, Vec::len);
            return Err(GeometryError::Shape {
                rows: bad,
                cols: waveguides.len(),
                pas: rows,
                waveguides: waveguides.len(),
            });
        }
        Ok(Self { waveguides })
    }

    /// Same antenna positions replicated on `num_waveguides` waveguides.
    pub fn replicated(column: &[f64], num_waveguides: usize) -> Self {
        Self {
            waveguides: vec![column.to_vec(); num_waveguides],
        }
    }

    /// Antennas `x_0 + l * step` on every waveguide.
    pub fn uniform(num_waveguides: usize, pas: usize, x_0: f64, step: f64) -> Self {
        let column: Vec<f64> = (0..pas).map(|l| x_0 + l as f64 * step).collect();
        Self::replicated(&column, num_waveguides)
    }

    /// Number of antennas per waveguide (rows).
    pub fn pas(&self) -> usize {
        self.waveguides.first().map_or(0, Vec::len)
    }

    /// Number of waveguides (columns).
    pub fn num_waveguides(&self) -> usize {
        self.waveguides.len()
    }

    /// Position of antenna `l` on waveguide `n`, 0-based.
    pub fn x(&self, n: usize, l: usize) -> f64 {
        self.waveguides[n][l]
    }

    pub fn column(&self, n: usize) -> &[f64] {
        &self.waveguides[n]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.waveguides
    }
}

/// Ground positions (and optional velocities) of the served users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    pub positions: Vec<Point3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocities: Option<Vec<[f64; 2]>>,
}

impl UserState {
    pub fn new(geometry: &SystemGeometry, positions: Vec<Point3>) -> Result<Self, GeometryError> {
        for (k, p) in positions.iter().enumerate() {
            if !geometry.contains_user(p) {
                return Err(GeometryError::UserOutsideRegion {
                    user: k + 1,
                    x: p[0],
                    y: p[1],
                    z: p[2],
                });
            }
        }
        Ok(Self {
            positions,
            velocities: None,
        })
    }

    pub fn with_velocities(mut self, velocities: Vec<[f64; 2]>) -> Self {
        self.velocities = Some(velocities);
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

fn check_shape(geometry: &SystemGeometry, layout: &PaLayout) -> Result<(), GeometryError> {
    if layout.pas() != geometry.pas_per_waveguide
        || layout.num_waveguides() != geometry.num_waveguides
    {
        return Err(GeometryError::Shape {
            rows: layout.pas(),
            cols: layout.num_waveguides(),
            pas: geometry.pas_per_waveguide,
            waveguides: geometry.num_waveguides,
        });
    }
    Ok(())
}

/// Checks the bounds and minimum-spacing constraints of `layout`.
///
/// Waveguides are scanned in order and, within a waveguide, antennas in
/// order; for each antenna the bounds check precedes the spacing check. The
/// first failure is returned as [`GeometryError::Violation`]. Spacing equal
/// to the minimum is accepted.
pub fn validate_layout(geometry: &SystemGeometry, layout: &PaLayout) -> Result<(), GeometryError> {
    check_shape(geometry, layout)?;
    let x_max = geometry.waveguide_length;
    for (n, column) in layout.columns().iter().enumerate() {
        for (l, &x) in column.iter().enumerate() {
            let violation = |constraint| {
                GeometryError::Violation(Violation {
                    waveguide: n + 1,
                    antenna: l + 1,
                    constraint,
                })
            };
            if !x.is_finite() || x < -LAYOUT_TOLERANCE || x > x_max + LAYOUT_TOLERANCE {
                return Err(violation(Constraint::Bounds));
            }
            if l > 0 && x - column[l - 1] < geometry.min_pa_spacing - LAYOUT_TOLERANCE {
                return Err(violation(Constraint::Spacing));
            }
        }
    }
    Ok(())
}

/// Coordinates `[x_{n,l}, y_n, d0]` of antenna `l` on waveguide `n` (0-based).
pub fn pa_coords(
    geometry: &SystemGeometry,
    layout: &PaLayout,
    n: usize,
    l: usize,
) -> Result<Point3, GeometryError> {
    if n >= layout.num_waveguides() || l >= layout.pas() {
        return Err(GeometryError::IndexOutOfRange {
            waveguide: n + 1,
            num_waveguides: layout.num_waveguides(),
            antenna: l + 1,
            pas: layout.pas(),
        });
    }
    Ok([layout.x(n, l), geometry.waveguide_y(n), geometry.mount_height])
}

/// Iterator over `(n, l, position)` for every antenna of the layout,
/// waveguide-major (the row order of the stacked channel vector).
pub fn antenna_positions<'a>(
    geometry: &'a SystemGeometry,
    layout: &'a PaLayout,
) -> impl Iterator<Item = (usize, usize, Point3)> + 'a {
    layout.columns().iter().enumerate().flat_map(move |(n, column)| {
        let y = geometry.waveguide_y(n);
        column
            .iter()
            .enumerate()
            .map(move |(l, &x)| (n, l, [x, y, geometry.mount_height]))
    })
}

/// Smallest antenna-to-user distance over the whole layout.
pub fn min_user_pa_distance(geometry: &SystemGeometry, layout: &PaLayout, user: &Point3) -> f64 {
    antenna_positions(geometry, layout)
        .map(|(_, _, p)| distance(&p, user))
        .fold(f64::INFINITY, f64::min)
}
