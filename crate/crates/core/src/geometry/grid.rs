use super::{GeometryError, SectorGeometry2D, SphericalGeometry3D};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

/// Isotropic Cartesian pixel grid. Pixel `(row, col)` is centered at
/// `(origin_x + col * spacing, origin_z + row * spacing)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianGrid2D {
    pub origin_x: f64,
    pub origin_z: f64,
    pub spacing: f64,
    pub width: usize,
    pub height: usize,
}

impl CartesianGrid2D {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(GeometryError::Invalid("grid spacing must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::Invalid("grid must have at least one pixel".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + col as f64 * self.spacing,
            self.origin_z + row as f64 * self.spacing,
        )
    }

    /// Fractional `(row, col)` of a physical point.
    #[inline]
    pub fn to_pixel(&self, x: f64, z: f64) -> (f64, f64) {
        (
            (z - self.origin_z) / self.spacing,
            (x - self.origin_x) / self.spacing,
        )
    }

    /// `[height, width]`, the image array shape.
    pub fn shape(&self) -> [usize; 2] {
        [self.height, self.width]
    }
}

/// Isotropic Cartesian voxel grid; arrays are laid out `[y][z][x]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianGrid3D {
    pub origin: [f64; 3],
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl CartesianGrid3D {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(GeometryError::Invalid("grid spacing must be positive".into()));
        }
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(GeometryError::Invalid("grid must have at least one voxel".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn voxel_center(&self, iy: usize, iz: usize, ix: usize) -> (f64, f64, f64) {
        (
            self.origin[0] + ix as f64 * self.spacing,
            self.origin[1] + iy as f64 * self.spacing,
            self.origin[2] + iz as f64 * self.spacing,
        )
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.ny, self.nz, self.nx]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.powi(3)
    }

    /// Outer bounds `(min, max)` per axis `[x, y, z]`, including half a voxel
    /// around the outermost centers.
    pub fn bounds(&self) -> [(f64, f64); 3] {
        let half = self.spacing / 2.0;
        let n = [self.nx, self.ny, self.nz];
        std::array::from_fn(|a| {
            (
                self.origin[a] - half,
                self.origin[a] + (n[a] as f64 - 1.0) * self.spacing + half,
            )
        })
    }

    /// The 2D grid of one `y` plane.
    pub fn plane(&self) -> CartesianGrid2D {
        CartesianGrid2D {
            origin_x: self.origin[0],
            origin_z: self.origin[2],
            spacing: self.spacing,
            width: self.nx,
            height: self.nz,
        }
    }
}

/// Axis-aligned bounds `(x_min, x_max, z_min, z_max)` of the annular sector
/// between `r0` and the maximum depth.
pub(crate) fn sector_bounds(geom: &SectorGeometry2D) -> (f64, f64, f64, f64) {
    let (t_lo, t_hi) = geom.theta_range();
    let radii = [geom.r0, geom.max_depth()];
    let mut angles = vec![t_lo, t_hi];
    for special in [-FRAC_PI_2, 0.0, FRAC_PI_2] {
        if special > t_lo && special < t_hi {
            angles.push(special);
        }
    }
    let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &r in &radii {
        for &t in &angles {
            let (x, z) = (r * t.sin(), r * t.cos());
            b.0 = b.0.min(x);
            b.1 = b.1.max(x);
            b.2 = b.2.min(z);
            b.3 = b.3.max(z);
        }
    }
    b
}

/// Smallest square grid of `size × size` pixels whose pixel centers span the
/// sector bounding box, centered on that box.
pub fn default_grid_for(geom: &SectorGeometry2D, size: usize) -> Result<CartesianGrid2D, GeometryError> {
    if size < 2 {
        return Err(GeometryError::Invalid("grid size must be at least 2".into()));
    }
    geom.validate()?;
    let (x0, x1, z0, z1) = sector_bounds(geom);
    let extent = (x1 - x0).max(z1 - z0);
    let spacing = extent / (size as f64 - 1.0);
    let half = spacing * (size as f64 - 1.0) / 2.0;
    Ok(CartesianGrid2D {
        origin_x: (x0 + x1) / 2.0 - half,
        origin_z: (z0 + z1) / 2.0 - half,
        spacing,
        width: size,
        height: size,
    })
}

/// Cubic `size³` grid covering the pyramid's bounding box.
pub fn default_grid_3d(geom: &SphericalGeometry3D, size: usize) -> Result<CartesianGrid3D, GeometryError> {
    if size < 2 {
        return Err(GeometryError::Invalid("grid size must be at least 2".into()));
    }
    geom.validate()?;
    // Dense sampling of the boundary surfaces is enough here: the box only
    // has to contain the footprint, and we pad by one sample step.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let steps = 64;
    let g = &geom.azimuth;
    for k in 0..=steps {
        let plane = (geom.n_planes - 1) as f64 * k as f64 / steps as f64;
        for i in 0..=steps {
            let beam = (g.n_beams - 1) as f64 * i as f64 / steps as f64;
            for sample in [0.0, (g.n_samples - 1) as f64] {
                let p = geom.to_cartesian(plane, beam, sample);
                let p = [p.0, p.1, p.2];
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    let spacing = extent / (size as f64 - 1.0);
    let half = spacing * (size as f64 - 1.0) / 2.0;
    Ok(CartesianGrid3D {
        origin: std::array::from_fn(|a| (lo[a] + hi[a]) / 2.0 - half),
        spacing,
        nx: size,
        ny: size,
        nz: size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn symmetric_sector_is_centered_on_axis() {
        let g = SectorGeometry2D::symmetric(1.2, 64, 0.005, 0.15, 400);
        let grid = default_grid_for(&g, 256).unwrap();
        assert_eq!((grid.width, grid.height), (256, 256));
        let center = grid.origin_x + grid.spacing * 255.0 / 2.0;
        assert!(center.abs() < 1e-15);
    }

    #[test]
    fn ninety_degree_sector_spacing() {
        // Span 90 degrees from r = 0 to 0.12 m. Bounding box by hand:
        // x in [-0.12 sin 45, 0.12 sin 45] -> width 0.169705627...
        // z in [0, 0.12] -> height 0.12. Larger extent is x.
        let g = SectorGeometry2D::symmetric(PI / 2.0, 128, 0.0, 0.12, 512);
        let grid = default_grid_for(&g, 256).unwrap();
        let expected = 0.169_705_627_484_771_4 / 255.0;
        assert!((grid.spacing - expected).abs() < 1e-15);
        // vertical centering on z in [0, 0.12]
        let zc = grid.origin_z + grid.spacing * 127.5;
        assert!((zc - 0.06).abs() < 1e-15);
    }

    #[test]
    fn size_below_two_is_rejected() {
        let g = SectorGeometry2D::symmetric(1.0, 16, 0.0, 0.1, 64);
        assert!(default_grid_for(&g, 1).is_err());
    }

    #[test]
    fn grid_3d_contains_corners() {
        let geom = SphericalGeometry3D {
            azimuth: SectorGeometry2D::symmetric(1.0, 16, 0.01, 0.1, 32),
            phi0: -0.3,
            dphi: 0.04,
            n_planes: 16,
        };
        let grid = default_grid_3d(&geom, 48).unwrap();
        let b = grid.bounds();
        for &(k, i, j) in &[(0.0, 0.0, 31.0), (15.0, 15.0, 31.0), (0.0, 15.0, 0.0)] {
            let (x, y, z) = geom.to_cartesian(k, i, j);
            assert!(x >= b[0].0 && x <= b[0].1);
            assert!(y >= b[1].0 && y <= b[1].1);
            assert!(z >= b[2].0 && z <= b[2].1);
        }
    }
}
