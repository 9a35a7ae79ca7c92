//! Probe-centered sector geometry and scan conversion.
//!
//! The probe apex sits at the origin, `z` is depth and `x` is lateral. A 2D
//! sector maps `(beam, sample)` indices to `(x, z)`; a 3D pyramid adds an
//! elevation plane index and the `y` axis.
//!
//! Beamspace frames are laid out `[beam][sample]` (2D) and
//! `[plane][beam][sample]` (3D). Cartesian images are `[z][x]` and volumes
//! `[y][z][x]`, so the `y = 0` slice of a volume lines up with a 2D image.

mod convert2d;
mod convert3d;
mod grid;
pub mod pgm;

pub use convert2d::{inverse_scan_convert_2d, scan_convert_2d, ScanConverter2D};
pub use convert3d::{scan_convert_3d, ScanConverter3D};
pub use grid::{default_grid_3d, default_grid_for, CartesianGrid2D, CartesianGrid3D};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    Invalid(String),
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// Uniformly spaced 2D sector: beam angles `theta0 + i * dtheta`, depths
/// `r0 + j * dr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorGeometry2D {
    pub theta0: f64,
    pub dtheta: f64,
    pub n_beams: usize,
    pub r0: f64,
    pub dr: f64,
    pub n_samples: usize,
}

/// Fractional beamspace position of a Cartesian point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamPosition {
    pub beam: f64,
    pub sample: f64,
    /// Both indices within `[0, n - 1]`.
    pub inside: bool,
}

impl SectorGeometry2D {
    /// Symmetric sector of total opening `span` radians centered on `theta = 0`.
    pub fn symmetric(span: f64, n_beams: usize, r0: f64, depth: f64, n_samples: usize) -> Self {
        let dtheta = span / (n_beams as f64 - 1.0);
        Self {
            theta0: -span / 2.0,
            dtheta,
            n_beams,
            r0,
            dr: (depth - r0) / (n_samples as f64 - 1.0),
            n_samples,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let fail = |msg: &str| Err(GeometryError::Invalid(msg.to_string()));
        if !(self.dtheta.is_finite() && self.dtheta != 0.0) {
            return fail("dtheta must be finite and non-zero");
        }
        if !(self.dr.is_finite() && self.dr > 0.0) {
            return fail("dr must be positive");
        }
        if !(self.r0.is_finite() && self.r0 >= 0.0) {
            return fail("r0 must be non-negative");
        }
        if self.n_beams < 2 || self.n_samples < 2 {
            return fail("n_beams and n_samples must be at least 2");
        }
        if !self.theta0.is_finite() || self.span() >= PI {
            return fail("angular span must be below pi");
        }
        Ok(())
    }

    /// Absolute angular span between the first and last beam.
    pub fn span(&self) -> f64 {
        self.dtheta.abs() * (self.n_beams as f64 - 1.0)
    }

    pub fn theta_at(&self, beam: f64) -> f64 {
        self.theta0 + beam * self.dtheta
    }

    pub fn r_at(&self, sample: f64) -> f64 {
        self.r0 + sample * self.dr
    }

    pub fn max_depth(&self) -> f64 {
        self.r_at(self.n_samples as f64 - 1.0)
    }

    /// `(min, max)` steering angle over all beams.
    pub fn theta_range(&self) -> (f64, f64) {
        let a = self.theta0;
        let b = self.theta_at(self.n_beams as f64 - 1.0);
        (a.min(b), a.max(b))
    }

    pub fn beam_to_cartesian(&self, beam: f64, sample: f64) -> (f64, f64) {
        let theta = self.theta_at(beam);
        let r = self.r_at(sample);
        (r * theta.sin(), r * theta.cos())
    }

    pub fn cartesian_to_beam(&self, x: f64, z: f64) -> BeamPosition {
        let r = x.hypot(z);
        let theta = x.atan2(z);
        let beam = (theta - self.theta0) / self.dtheta;
        let sample = (r - self.r0) / self.dr;
        let inside = (0.0..=(self.n_beams - 1) as f64).contains(&beam)
            && (0.0..=(self.n_samples - 1) as f64).contains(&sample);
        BeamPosition {
            beam,
            sample,
            inside,
        }
    }

    /// Sector footprint used for validity masks: indices within half a cell
    /// of the acquired range.
    pub fn footprint_contains(&self, x: f64, z: f64) -> bool {
        let p = self.cartesian_to_beam(x, z);
        within_half_cell(p.beam, self.n_beams) && within_half_cell(p.sample, self.n_samples)
    }

    pub fn frame_shape(&self) -> [usize; 2] {
        [self.n_beams, self.n_samples]
    }
}

/// Pyramidal 3D geometry: azimuth/radius as in [`SectorGeometry2D`] plus
/// elevation planes at `phi0 + k * dphi`.
///
/// Cartesian mapping: `x = r sin(theta) cos(phi)`, `y = r sin(phi)`,
/// `z = r cos(theta) cos(phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalGeometry3D {
    pub azimuth: SectorGeometry2D,
    pub phi0: f64,
    pub dphi: f64,
    pub n_planes: usize,
}

/// Fractional beamspace position of a Cartesian point in a 3D geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumePosition {
    pub plane: f64,
    pub beam: f64,
    pub sample: f64,
    pub inside: bool,
}

impl SphericalGeometry3D {
    pub fn validate(&self) -> Result<(), GeometryError> {
        self.azimuth.validate()?;
        if !(self.dphi.is_finite() && self.dphi != 0.0) {
            return Err(GeometryError::Invalid("dphi must be finite and non-zero".into()));
        }
        if self.n_planes < 2 {
            return Err(GeometryError::Invalid("n_planes must be at least 2".into()));
        }
        if !self.phi0.is_finite() || self.elevation_span() >= PI {
            return Err(GeometryError::Invalid("elevation span must be below pi".into()));
        }
        Ok(())
    }

    pub fn elevation_span(&self) -> f64 {
        self.dphi.abs() * (self.n_planes as f64 - 1.0)
    }

    pub fn phi_at(&self, plane: f64) -> f64 {
        self.phi0 + plane * self.dphi
    }

    pub fn phi_range(&self) -> (f64, f64) {
        let a = self.phi0;
        let b = self.phi_at(self.n_planes as f64 - 1.0);
        (a.min(b), a.max(b))
    }

    pub fn to_cartesian(&self, plane: f64, beam: f64, sample: f64) -> (f64, f64, f64) {
        let theta = self.azimuth.theta_at(beam);
        let phi = self.phi_at(plane);
        let r = self.azimuth.r_at(sample);
        (
            r * theta.sin() * phi.cos(),
            r * phi.sin(),
            r * theta.cos() * phi.cos(),
        )
    }

    pub fn from_cartesian(&self, x: f64, y: f64, z: f64) -> VolumePosition {
        let r = (x * x + y * y + z * z).sqrt();
        let phi = if r > 0.0 { (y / r).clamp(-1.0, 1.0).asin() } else { 0.0 };
        let theta = x.atan2(z);
        let g = &self.azimuth;
        let plane = (phi - self.phi0) / self.dphi;
        let beam = (theta - g.theta0) / g.dtheta;
        let sample = (r - g.r0) / g.dr;
        let inside = (0.0..=(self.n_planes - 1) as f64).contains(&plane)
            && (0.0..=(g.n_beams - 1) as f64).contains(&beam)
            && (0.0..=(g.n_samples - 1) as f64).contains(&sample);
        VolumePosition {
            plane,
            beam,
            sample,
            inside,
        }
    }

    pub fn footprint_contains(&self, x: f64, y: f64, z: f64) -> bool {
        let p = self.from_cartesian(x, y, z);
        within_half_cell(p.plane, self.n_planes)
            && within_half_cell(p.beam, self.azimuth.n_beams)
            && within_half_cell(p.sample, self.azimuth.n_samples)
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        [self.n_planes, self.azimuth.n_beams, self.azimuth.n_samples]
    }
}

pub(crate) fn within_half_cell(idx: f64, n: usize) -> bool {
    idx >= -0.5 && idx <= n as f64 - 0.5
}

/// Clamp a fractional index into `[0, n-1]` and split it into the two
/// neighbouring cells and the interpolation weight toward the upper one.
#[inline]
pub(crate) fn cell(idx: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let max = (n - 1) as f64;
    let c = idx.clamp(0.0, max);
    let i0 = (c.floor() as usize).min(n - 2);
    (i0, i0 + 1, c - i0 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sector() -> SectorGeometry2D {
        SectorGeometry2D::symmetric(PI / 2.0, 65, 0.0, 0.12, 257)
    }

    #[test]
    fn on_axis_point() {
        let g = SectorGeometry2D {
            theta0: 0.0,
            dtheta: 0.01,
            n_beams: 10,
            r0: 0.05,
            dr: 0.001,
            n_samples: 10,
        };
        let (x, z) = g.beam_to_cartesian(0.0, 0.0);
        assert_eq!((x, z), (0.0, 0.05));
    }

    #[test]
    fn thirty_degree_point() {
        let g = SectorGeometry2D {
            theta0: PI / 6.0,
            dtheta: 0.01,
            n_beams: 10,
            r0: 0.05,
            dr: 0.001,
            n_samples: 10,
        };
        let (x, z) = g.beam_to_cartesian(0.0, 0.0);
        // 0.05 * sin(pi/6), 0.05 * cos(pi/6) evaluated with mpmath at 30 digits
        assert!((x - 0.025).abs() < 1e-15);
        assert!((z - 0.043_301_270_189_221_93).abs() < 1e-15);
    }

    #[test]
    fn apex_degeneracy() {
        let g = sector();
        for b in [0.0, 10.5, 64.0] {
            let (x, z) = g.beam_to_cartesian(b, 0.0);
            assert_eq!(x.abs(), 0.0);
            assert_eq!(z, 0.0);
        }
    }

    #[test]
    fn behind_probe_is_outside() {
        let g = sector();
        let p = g.cartesian_to_beam(0.01, -0.05);
        assert!(!p.inside);
        let p = g.cartesian_to_beam(0.0, -0.05);
        assert!(!p.inside);
        assert!(!g.footprint_contains(0.0, -0.05));
    }

    #[test]
    fn axis_point_maps_to_center_beam() {
        let g = SectorGeometry2D {
            theta0: -0.5,
            dtheta: 0.25,
            n_beams: 5,
            r0: 0.02,
            dr: 0.001,
            n_samples: 20,
        };
        let p = g.cartesian_to_beam(0.0, 0.02);
        assert!((p.beam - 2.0).abs() < 1e-12);
        assert!(p.sample.abs() < 1e-12);
        assert!(p.inside);
    }

    #[test]
    fn validation_rejects_bad_geometry() {
        let mut g = sector();
        g.dr = 0.0;
        assert!(g.validate().is_err());
        let mut g = sector();
        g.dtheta = 0.0;
        assert!(g.validate().is_err());
        let mut g = sector();
        g.n_beams = 1;
        assert!(g.validate().is_err());
        let mut g = sector();
        g.dtheta = PI / 64.0 * 1.01;
        assert!(g.validate().is_err());
        assert!(sector().validate().is_ok());
    }

    #[test]
    fn spherical_round_trip() {
        let g = SphericalGeometry3D {
            azimuth: SectorGeometry2D::symmetric(1.2, 33, 0.01, 0.1, 65),
            phi0: -0.4,
            dphi: 0.05,
            n_planes: 17,
        };
        g.validate().unwrap();
        for &(k, i, j) in &[(0.0, 0.0, 0.0), (3.3, 17.2, 40.9), (16.0, 32.0, 64.0)] {
            let (x, y, z) = g.to_cartesian(k, i, j);
            let p = g.from_cartesian(x, y, z);
            assert!((p.plane - k).abs() < 1e-10);
            assert!((p.beam - i).abs() < 1e-10);
            assert!((p.sample - j).abs() < 1e-10);
            assert!(p.inside);
        }
    }

    #[test]
    fn cell_clamps_edges() {
        assert_eq!(cell(-0.3, 4), (0, 1, 0.0));
        assert_eq!(cell(3.4, 4), (2, 3, 1.0));
        assert_eq!(cell(0.7, 1), (0, 0, 0.0));
        let (i, _, w) = cell(1.25, 4);
        assert_eq!(i, 1);
        assert!((w - 0.25).abs() < 1e-15);
    }
}
