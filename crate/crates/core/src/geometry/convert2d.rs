use super::{cell, within_half_cell, CartesianGrid2D, GeometryError, SectorGeometry2D};
use ndarray::{Array2, ArrayView2};

#[derive(Debug, Clone, Copy)]
struct Tap {
    pixel: usize,
    b0: usize,
    b1: usize,
    s0: usize,
    s1: usize,
    wb: f64,
    ws: f64,
}

/// Precomputed beamspace → Cartesian resampling plan for one
/// (geometry, grid) pair. Building the plan costs one `atan2`/`hypot` per
/// pixel; applying it to a frame is four loads and three lerps per valid
/// pixel.
#[derive(Debug, Clone)]
pub struct ScanConverter2D {
    geom: SectorGeometry2D,
    grid: CartesianGrid2D,
    taps: Vec<Tap>,
    mask: Array2<bool>,
}

impl ScanConverter2D {
    pub fn new(geom: &SectorGeometry2D, grid: &CartesianGrid2D) -> Result<Self, GeometryError> {
        geom.validate()?;
        grid.validate()?;
        let mut taps = Vec::new();
        let mut mask = Array2::from_elem(grid.shape(), false);
        for row in 0..grid.height {
            for col in 0..grid.width {
                let (x, z) = grid.pixel_center(row, col);
                let p = geom.cartesian_to_beam(x, z);
                if !(within_half_cell(p.beam, geom.n_beams) && within_half_cell(p.sample, geom.n_samples)) {
                    continue;
                }
                mask[[row, col]] = true;
                let (b0, b1, wb) = cell(p.beam, geom.n_beams);
                let (s0, s1, ws) = cell(p.sample, geom.n_samples);
                taps.push(Tap {
                    pixel: row * grid.width + col,
                    b0,
                    b1,
                    s0,
                    s1,
                    wb,
                    ws,
                });
            }
        }
        Ok(Self {
            geom: *geom,
            grid: *grid,
            taps,
            mask,
        })
    }

    pub fn geometry(&self) -> &SectorGeometry2D {
        &self.geom
    }

    pub fn grid(&self) -> &CartesianGrid2D {
        &self.grid
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    /// Bilinearly resample a `[beam][sample]` frame onto the grid. Pixels
    /// outside the sector are zero.
    pub fn convert(&self, frame: ArrayView2<f64>) -> Result<Array2<f64>, GeometryError> {
        let expected = self.geom.frame_shape();
        if frame.shape() != expected {
            return Err(GeometryError::ShapeMismatch {
                expected: expected.to_vec(),
                found: frame.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; self.grid.width * self.grid.height];
        for t in &self.taps {
            let top = lerp(frame[[t.b0, t.s0]], frame[[t.b0, t.s1]], t.ws);
            let bottom = lerp(frame[[t.b1, t.s0]], frame[[t.b1, t.s1]], t.ws);
            out[t.pixel] = lerp(top, bottom, t.wb);
        }
        Ok(Array2::from_shape_vec(self.grid.shape(), out).expect("grid shape"))
    }
}

#[inline]
pub(crate) fn lerp(a: f64, b: f64, w: f64) -> f64 {
    if w == 0.0 {
        a
    } else {
        a + (b - a) * w
    }
}

/// One-shot 2D scan conversion returning the image and its validity mask.
pub fn scan_convert_2d(
    frame: ArrayView2<f64>,
    geom: &SectorGeometry2D,
    grid: &CartesianGrid2D,
) -> Result<(Array2<f64>, Array2<bool>), GeometryError> {
    let conv = ScanConverter2D::new(geom, grid)?;
    let image = conv.convert(frame)?;
    Ok((image, conv.mask))
}

/// Resample a Cartesian image back to beamspace.
///
/// Each `(beam, sample)` position takes the bilinear interpolation of the
/// image over the four surrounding pixels, renormalised over those that
/// are valid in `mask`. Positions outside the grid, or whose neighbourhood
/// holds no valid pixel, are zero.
pub fn inverse_scan_convert_2d(
    image: ArrayView2<f64>,
    mask: ArrayView2<bool>,
    geom: &SectorGeometry2D,
    grid: &CartesianGrid2D,
) -> Result<Array2<f64>, GeometryError> {
    geom.validate()?;
    grid.validate()?;
    for found in [image.shape(), mask.shape()] {
        if found != grid.shape() {
            return Err(GeometryError::ShapeMismatch {
                expected: grid.shape().to_vec(),
                found: found.to_vec(),
            });
        }
    }
    let mut out = Array2::zeros(geom.frame_shape());
    for beam in 0..geom.n_beams {
        for sample in 0..geom.n_samples {
            let (x, z) = geom.beam_to_cartesian(beam as f64, sample as f64);
            let (row, col) = grid.to_pixel(x, z);
            if !(within_half_cell(row, grid.height) && within_half_cell(col, grid.width)) {
                continue;
            }
            let (r0, r1, wr) = cell(row, grid.height);
            let (c0, c1, wc) = cell(col, grid.width);
            // offsets from the first valid pixel keep constant patches exact
            let mut anchor = None;
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (r, w_r) in [(r0, 1.0 - wr), (r1, wr)] {
                for (c, w_c) in [(c0, 1.0 - wc), (c1, wc)] {
                    let w = w_r * w_c;
                    if w > 0.0 && mask[[r, c]] {
                        let v = image[[r, c]];
                        let a = *anchor.get_or_insert(v);
                        acc += w * (v - a);
                        wsum += w;
                    }
                }
            }
            if let Some(a) = anchor {
                out[[beam, sample]] = a + acc / wsum;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::default_grid_for;
    use std::f64::consts::PI;

    fn geom() -> SectorGeometry2D {
        SectorGeometry2D::symmetric(PI / 2.0, 48, 0.004, 0.12, 160)
    }

    #[test]
    fn constant_frame_is_preserved() {
        let g = geom();
        let grid = default_grid_for(&g, 96).unwrap();
        let frame = Array2::from_elem(g.frame_shape(), 0.37);
        let (img, mask) = scan_convert_2d(frame.view(), &g, &grid).unwrap();
        assert!(mask.iter().any(|&m| m));
        for (v, m) in img.iter().zip(mask.iter()) {
            if *m {
                assert_eq!(*v, 0.37);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn grid_outside_sector_gives_zero_image() {
        let g = geom();
        let grid = CartesianGrid2D {
            origin_x: 0.0,
            origin_z: -0.2,
            spacing: 0.001,
            width: 20,
            height: 20,
        };
        let frame = Array2::from_elem(g.frame_shape(), 1.0);
        let (img, mask) = scan_convert_2d(frame.view(), &g, &grid).unwrap();
        assert!(mask.iter().all(|&m| !m));
        assert!(img.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let g = geom();
        let grid = default_grid_for(&g, 32).unwrap();
        let frame = Array2::zeros((3, 3));
        assert!(matches!(
            scan_convert_2d(frame.view(), &g, &grid),
            Err(GeometryError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn inverse_of_constant_image_is_constant() {
        let g = geom();
        let grid = default_grid_for(&g, 128).unwrap();
        let conv = ScanConverter2D::new(&g, &grid).unwrap();
        let image = Array2::from_elem(grid.shape(), 2.5);
        let back = inverse_scan_convert_2d(image.view(), conv.mask().view(), &g, &grid).unwrap();
        for v in back.iter() {
            assert!((v - 2.5).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn inverse_with_disjoint_grid_is_zero() {
        let g = geom();
        let grid = CartesianGrid2D {
            origin_x: 1.0,
            origin_z: 1.0,
            spacing: 0.001,
            width: 16,
            height: 16,
        };
        let image = Array2::from_elem(grid.shape(), 1.0);
        let mask = Array2::from_elem(grid.shape(), true);
        let back = inverse_scan_convert_2d(image.view(), mask.view(), &g, &grid).unwrap();
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn monotone_ray_stays_monotone() {
        let g = geom();
        let grid = default_grid_for(&g, 128).unwrap();
        let frame = Array2::from_shape_fn(g.frame_shape(), |(_, s)| (s as f64).sqrt());
        let (img, mask) = scan_convert_2d(frame.view(), &g, &grid).unwrap();
        // centre column is the theta = 0 ray only approximately; instead
        // check that values never exceed the beamspace range.
        let max = frame.iter().cloned().fold(f64::MIN, f64::max);
        for (v, m) in img.iter().zip(mask.iter()) {
            if *m {
                assert!(*v >= 0.0 && *v <= max + 1e-12);
            }
        }
    }
}
