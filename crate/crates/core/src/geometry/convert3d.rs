use super::convert2d::lerp;
use super::{cell, within_half_cell, CartesianGrid3D, GeometryError, SphericalGeometry3D};
use ndarray::{Array3, ArrayView3};

#[derive(Debug, Clone, Copy)]
struct Tap {
    voxel: usize,
    k: [usize; 2],
    b: [usize; 2],
    s: [usize; 2],
    wk: f64,
    wb: f64,
    ws: f64,
}

/// Trilinear `[plane][beam][sample]` → `[y][z][x]` resampling plan.
#[derive(Debug, Clone)]
pub struct ScanConverter3D {
    geom: SphericalGeometry3D,
    grid: CartesianGrid3D,
    taps: Vec<Tap>,
    mask: Array3<bool>,
}

impl ScanConverter3D {
    pub fn new(geom: &SphericalGeometry3D, grid: &CartesianGrid3D) -> Result<Self, GeometryError> {
        geom.validate()?;
        grid.validate()?;
        let az = &geom.azimuth;
        let mut taps = Vec::new();
        let mut mask = Array3::from_elem(grid.shape(), false);
        for iy in 0..grid.ny {
            for iz in 0..grid.nz {
                for ix in 0..grid.nx {
                    let (x, y, z) = grid.voxel_center(iy, iz, ix);
                    let p = geom.from_cartesian(x, y, z);
                    if !(within_half_cell(p.plane, geom.n_planes)
                        && within_half_cell(p.beam, az.n_beams)
                        && within_half_cell(p.sample, az.n_samples))
                    {
                        continue;
                    }
                    mask[[iy, iz, ix]] = true;
                    let (k0, k1, wk) = cell(p.plane, geom.n_planes);
                    let (b0, b1, wb) = cell(p.beam, az.n_beams);
                    let (s0, s1, ws) = cell(p.sample, az.n_samples);
                    taps.push(Tap {
                        voxel: (iy * grid.nz + iz) * grid.nx + ix,
                        k: [k0, k1],
                        b: [b0, b1],
                        s: [s0, s1],
                        wk,
                        wb,
                        ws,
                    });
                }
            }
        }
        Ok(Self {
            geom: *geom,
            grid: *grid,
            taps,
            mask,
        })
    }

    pub fn mask(&self) -> &Array3<bool> {
        &self.mask
    }

    pub fn grid(&self) -> &CartesianGrid3D {
        &self.grid
    }

    pub fn convert(&self, volume: ArrayView3<f64>) -> Result<Array3<f64>, GeometryError> {
        let expected = self.geom.frame_shape();
        if volume.shape() != expected {
            return Err(GeometryError::ShapeMismatch {
                expected: expected.to_vec(),
                found: volume.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; self.grid.nx * self.grid.ny * self.grid.nz];
        for t in &self.taps {
            let plane = |k: usize| {
                let near = lerp(volume[[k, t.b[0], t.s[0]]], volume[[k, t.b[0], t.s[1]]], t.ws);
                let far = lerp(volume[[k, t.b[1], t.s[0]]], volume[[k, t.b[1], t.s[1]]], t.ws);
                lerp(near, far, t.wb)
            };
            let lo = plane(t.k[0]);
            out[t.voxel] = if t.wk == 0.0 { lo } else { lerp(lo, plane(t.k[1]), t.wk) };
        }
        Ok(Array3::from_shape_vec(self.grid.shape(), out).expect("grid shape"))
    }
}

pub fn scan_convert_3d(
    volume: ArrayView3<f64>,
    geom: &SphericalGeometry3D,
    grid: &CartesianGrid3D,
) -> Result<(Array3<f64>, Array3<bool>), GeometryError> {
    let conv = ScanConverter3D::new(geom, grid)?;
    let out = conv.convert(volume)?;
    Ok((out, conv.mask))
}
