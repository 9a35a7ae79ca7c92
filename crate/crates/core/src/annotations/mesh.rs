use super::{AnnotationError, Mesh3D};
use crate::geometry::CartesianGrid3D;
use crate::timing::RPeakList;
use ndarray::Array3;
use std::collections::HashMap;

const M3_TO_ML: f64 = 1e6;

/// Every edge must be shared by exactly two triangles that traverse it in
/// opposite directions.
pub fn check_closed(mesh: &Mesh3D) -> Result<(), AnnotationError> {
    if mesh.triangles.is_empty() {
        return Err(AnnotationError::Invalid("mesh has no triangles".into()));
    }
    let nv = mesh.vertices.len() as u32;
    let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
    for t in &mesh.triangles {
        if t.iter().any(|&i| i >= nv) {
            return Err(AnnotationError::Invalid("triangle index out of range".into()));
        }
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            return Err(AnnotationError::Invalid("degenerate triangle".into()));
        }
        for k in 0..3 {
            *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
        }
    }
    let mut keys: Vec<_> = directed.keys().copied().collect();
    keys.sort_unstable();
    for (a, b) in keys {
        let fwd = directed[&(a, b)];
        let back = directed.get(&(b, a)).copied().unwrap_or(0);
        if fwd + back > 2 {
            return Err(AnnotationError::NonManifold(a.min(b), a.max(b)));
        }
        if fwd > 1 {
            return Err(AnnotationError::InconsistentWinding(a, b));
        }
        if back == 0 {
            return Err(AnnotationError::OpenMesh(a, b));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshVolume {
    /// Enclosed volume in milliliters.
    pub ml: f64,
    /// Triangles wind counter-clockwise seen from outside.
    pub outward: bool,
}

/// Enclosed volume by the divergence theorem, `Σ det(v0, v1, v2) / 6`,
/// evaluated relative to the vertex centroid.
pub fn mesh_volume(mesh: &Mesh3D) -> Result<MeshVolume, AnnotationError> {
    check_closed(mesh)?;
    let n = mesh.vertices.len() as f64;
    let mut c = [0.0; 3];
    for v in &mesh.vertices {
        for a in 0..3 {
            c[a] += v[a] / n;
        }
    }
    let rel = |i: u32| {
        let v = mesh.vertices[i as usize];
        [v[0] - c[0], v[1] - c[1], v[2] - c[2]]
    };
    let mut six_v = 0.0;
    for t in &mesh.triangles {
        let (a, b, d) = (rel(t[0]), rel(t[1]), rel(t[2]));
        six_v += a[0] * (b[1] * d[2] - b[2] * d[1]) - a[1] * (b[0] * d[2] - b[2] * d[0])
            + a[2] * (b[0] * d[1] - b[1] * d[0]);
    }
    let signed = six_v / 6.0;
    Ok(MeshVolume {
        ml: signed.abs() * M3_TO_ML,
        outward: signed > 0.0,
    })
}

type P2 = [f64; 2];

/// Edge function evaluated with the edge endpoints in canonical order so
/// that the two triangles sharing an edge see exactly opposite values.
#[inline]
fn edge_fn(a: P2, b: P2, p: P2) -> f64 {
    if (a[0], a[1]) <= (b[0], b[1]) {
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
    } else {
        -((a[0] - b[0]) * (p[1] - b[1]) - (a[1] - b[1]) * (p[0] - b[0]))
    }
}

/// Top-left fill convention: of an edge and its reverse exactly one owns
/// the points lying on it.
#[inline]
fn owns_edge(a: P2, b: P2) -> bool {
    let d = [b[0] - a[0], b[1] - a[1]];
    d[1] > 0.0 || (d[1] == 0.0 && d[0] < 0.0)
}

/// Binary occupancy `[y][z][x]`: voxel centers inside the closed surface.
///
/// Rays run along `+x` through every `(y, z)` voxel row; each triangle
/// is tested in the `(y, z)` projection with a top-left tie rule so that a
/// ray through a shared edge or vertex crosses the surface exactly once
/// per sheet. A center is inside when an odd number of crossings lie
/// strictly before it.
pub fn voxelize_mesh(mesh: &Mesh3D, grid: &CartesianGrid3D) -> Result<Array3<bool>, AnnotationError> {
    grid.validate()
        .map_err(|e| AnnotationError::Invalid(e.to_string()))?;
    check_closed(mesh)?;
    let bounds = grid.bounds();
    if mesh
        .vertices
        .iter()
        .any(|v| (0..3).any(|a| v[a] < bounds[a].0 || v[a] > bounds[a].1))
    {
        return Err(AnnotationError::OutOfBounds);
    }

    let (ny, nz, nx) = (grid.ny, grid.nz, grid.nx);
    let mut hits: Vec<Vec<f64>> = vec![Vec::new(); ny * nz];
    let s = grid.spacing;
    let [ox, oy, oz] = grid.origin;
    for t in &mesh.triangles {
        let v = t.map(|i| mesh.vertices[i as usize]);
        let mut a = [v[0][1], v[0][2]];
        let mut b = [v[1][1], v[1][2]];
        let c = [v[2][1], v[2][2]];
        let (mut xa, mut xb, xc) = (v[0][0], v[1][0], v[2][0]);
        let area = edge_fn(a, b, c);
        if area == 0.0 {
            continue;
        }
        if area < 0.0 {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut xa, &mut xb);
        }
        let area = area.abs();
        let lo_y = ((a[0].min(b[0]).min(c[0]) - oy) / s).ceil().max(0.0) as usize;
        let hi_y = ((a[0].max(b[0]).max(c[0]) - oy) / s).floor();
        let lo_z = ((a[1].min(b[1]).min(c[1]) - oz) / s).ceil().max(0.0) as usize;
        let hi_z = ((a[1].max(b[1]).max(c[1]) - oz) / s).floor();
        if hi_y < 0.0 || hi_z < 0.0 {
            continue;
        }
        let hi_y = (hi_y as usize).min(ny - 1);
        let hi_z = (hi_z as usize).min(nz - 1);
        for iy in lo_y..=hi_y {
            for iz in lo_z..=hi_z {
                let p = [oy + iy as f64 * s, oz + iz as f64 * s];
                let w = [edge_fn(b, c, p), edge_fn(c, a, p), edge_fn(a, b, p)];
                let own = [owns_edge(b, c), owns_edge(c, a), owns_edge(a, b)];
                if (0..3).all(|k| w[k] > 0.0 || (w[k] == 0.0 && own[k])) {
                    let x = (w[0] * xa + w[1] * xb + w[2] * xc) / area;
                    hits[iy * nz + iz].push(x);
                }
            }
        }
    }

    let mut out = Array3::from_elem((ny, nz, nx), false);
    for iy in 0..ny {
        for iz in 0..nz {
            let row = &mut hits[iy * nz + iz];
            if row.is_empty() {
                continue;
            }
            row.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut k = 0;
            for ix in 0..nx {
                let x = ox + ix as f64 * s;
                while k < row.len() && row[k] < x {
                    k += 1;
                }
                if k % 2 == 1 {
                    out[[iy, iz, ix]] = true;
                }
            }
        }
    }
    Ok(out)
}

/// ED (maximum) and ES (minimum) volume frames of one beat; ties resolve
/// to the earliest frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeatExtrema {
    /// First and one-past-last frame of the beat.
    pub frames: (usize, usize),
    pub ed: usize,
    pub es: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeCurve {
    pub times: Vec<f64>,
    pub volumes_ml: Vec<f64>,
    pub beats: Vec<BeatExtrema>,
}

/// Volume–time curve with per-beat ED/ES. Beats are delimited by `peaks`
/// when given (frames before the first and after the last peak form their
/// own partial beats); otherwise the whole series is one beat.
pub fn volume_curve(
    meshes: &[Mesh3D],
    times: &[f64],
    peaks: Option<&RPeakList>,
) -> Result<VolumeCurve, AnnotationError> {
    if meshes.len() < 2 || meshes.len() != times.len() {
        return Err(AnnotationError::Invalid(
            "volume curve needs at least 2 frames with one time each".into(),
        ));
    }
    let volumes_ml = meshes
        .iter()
        .map(|m| mesh_volume(m).map(|v| v.ml))
        .collect::<Result<Vec<_>, _>>()?;
    let beat_id = |t: f64| peaks.map_or(0, |p| p.times().partition_point(|&q| q <= t));
    let mut beats = Vec::new();
    let mut start = 0;
    for i in 1..=times.len() {
        if i == times.len() || beat_id(times[i]) != beat_id(times[start]) {
            let range = start..i;
            let mut ed = start;
            let mut es = start;
            for f in range {
                if volumes_ml[f] > volumes_ml[ed] {
                    ed = f;
                }
                if volumes_ml[f] < volumes_ml[es] {
                    es = f;
                }
            }
            beats.push(BeatExtrema {
                frames: (start, i),
                ed,
                es,
            });
            start = i;
        }
    }
    Ok(VolumeCurve {
        times: times.to_vec(),
        volumes_ml,
        beats,
    })
}

/// Icosahedron subdivided `level` times and projected onto a sphere;
/// `20 * 4^level` outward-wound triangles.
pub fn icosphere(center: [f64; 3], radius: f64, level: u32) -> Mesh3D {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = vec![
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let mut tris: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let unit = |v: [f64; 3]| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    };
    for v in verts.iter_mut() {
        *v = unit(*v);
    }
    for _ in 0..level {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(tris.len() * 4);
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<[f64; 3]>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                let (p, q) = (verts[a as usize], verts[b as usize]);
                verts.push(unit([(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0]));
                verts.len() as u32 - 1
            })
        };
        for &[a, b, c] in &tris {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    Mesh3D {
        vertices: verts
            .into_iter()
            .map(|v| [center[0] + radius * v[0], center[1] + radius * v[1], center[2] + radius * v[2]])
            .collect(),
        triangles: tris,
    }
}

/// Icosphere stretched to semi-axes `(ax, ay, az)`.
pub fn ellipsoid_mesh(center: [f64; 3], semi_axes: [f64; 3], level: u32) -> Mesh3D {
    let mut m = icosphere([0.0; 3], 1.0, level);
    for v in m.vertices.iter_mut() {
        *v = std::array::from_fn(|a| center[a] + semi_axes[a] * v[a]);
    }
    m
}

/// Axis-aligned box `[lo, hi]` as 12 outward-wound triangles.
pub fn box_mesh(lo: [f64; 3], hi: [f64; 3]) -> Mesh3D {
    let vertices = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { lo[0] } else { hi[0] },
                if i & 2 == 0 { lo[1] } else { hi[1] },
                if i & 4 == 0 { lo[2] } else { hi[2] },
            ]
        })
        .collect();
    let triangles = vec![
        [0, 2, 1],
        [1, 2, 3],
        [4, 5, 6],
        [5, 7, 6],
        [0, 1, 4],
        [1, 5, 4],
        [2, 6, 3],
        [3, 6, 7],
        [0, 4, 2],
        [2, 4, 6],
        [1, 3, 5],
        [3, 7, 5],
    ];
    Mesh3D {
        vertices,
        triangles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_tetrahedron_in_cm() {
        let cm = 0.01;
        let m = Mesh3D {
            vertices: vec![[0.0, 0.0, 0.0], [cm, 0.0, 0.0], [0.0, cm, 0.0], [0.0, 0.0, cm]],
            triangles: vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        };
        let v = mesh_volume(&m).unwrap();
        assert!((v.ml - 1.0 / 6.0).abs() < 1e-12);
        assert!(v.outward);
    }

    #[test]
    fn removing_a_triangle_opens_the_mesh() {
        let mut m = icosphere([0.0; 3], 0.02, 2);
        m.triangles.pop();
        assert!(matches!(mesh_volume(&m), Err(AnnotationError::OpenMesh(..))));
    }

    #[test]
    fn flipped_triangle_is_inconsistent() {
        let mut m = box_mesh([0.0; 3], [1.0; 3]);
        m.triangles[0].swap(1, 2);
        assert!(matches!(check_closed(&m), Err(AnnotationError::InconsistentWinding(..))));
    }

    #[test]
    fn box_and_sphere_are_closed_and_outward() {
        let b = box_mesh([0.0; 3], [0.01, 0.02, 0.03]);
        let v = mesh_volume(&b).unwrap();
        assert!((v.ml - 6.0).abs() < 1e-12);
        assert!(v.outward);
        let s = icosphere([0.0; 3], 0.02, 4);
        assert_eq!(s.triangles.len(), 5120);
        assert!(mesh_volume(&s).unwrap().outward);
    }

    #[test]
    fn snapped_box_voxel_count_is_exact() {
        // 1 mm voxels centered on integer mm; box faces on half-mm planes.
        let grid = CartesianGrid3D {
            origin: [0.0; 3],
            spacing: 0.001,
            nx: 20,
            ny: 20,
            nz: 20,
        };
        let b = box_mesh([0.0025, 0.0035, 0.0045], [0.0125, 0.0085, 0.0145]);
        let vox = voxelize_mesh(&b, &grid).unwrap();
        // x: centers 3..=12 (10), y: 4..=8 (5), z: 5..=14 (10)
        assert_eq!(vox.iter().filter(|&&v| v).count(), 10 * 5 * 10);
        assert!(vox[[4, 5, 3]]);
        assert!(!vox[[3, 5, 3]]);
    }

    #[test]
    fn mesh_outside_grid_is_rejected() {
        let grid = CartesianGrid3D {
            origin: [0.0; 3],
            spacing: 0.001,
            nx: 4,
            ny: 4,
            nz: 4,
        };
        let b = box_mesh([0.0; 3], [0.01; 3]);
        assert_eq!(voxelize_mesh(&b, &grid), Err(AnnotationError::OutOfBounds));
    }

    #[test]
    fn empty_region_voxelizes_to_zero() {
        let grid = CartesianGrid3D {
            origin: [0.0; 3],
            spacing: 0.001,
            nx: 30,
            ny: 30,
            nz: 30,
        };
        let b = box_mesh([0.0201, 0.0201, 0.0201], [0.0249, 0.0249, 0.0249]);
        let vox = voxelize_mesh(&b, &grid).unwrap();
        // box spans centers 21..=24 only
        assert_eq!(vox.iter().filter(|&&v| v).count(), 64);
        assert!(!vox[[0, 0, 0]] && !vox[[10, 10, 10]]);
    }

    fn scaled_sphere(r: f64) -> Mesh3D {
        icosphere([0.0, 0.0, 0.05], r, 2)
    }

    #[test]
    fn shrink_then_recover_cycle() {
        let radii = [0.02, 0.019, 0.017, 0.016, 0.0175, 0.0195];
        let meshes: Vec<_> = radii.iter().map(|&r| scaled_sphere(r)).collect();
        let times: Vec<f64> = (0..6).map(|i| i as f64 * 0.1).collect();
        let c = volume_curve(&meshes, &times, None).unwrap();
        assert_eq!(c.beats.len(), 1);
        assert_eq!(c.beats[0].ed, 0);
        assert_eq!(c.beats[0].es, 3);
    }

    #[test]
    fn constant_mesh_ties_to_first_frame() {
        let meshes = vec![scaled_sphere(0.02); 4];
        let c = volume_curve(&meshes, &[0.0, 0.1, 0.2, 0.3], None).unwrap();
        assert_eq!((c.beats[0].ed, c.beats[0].es), (0, 0));
    }

    #[test]
    fn beats_split_at_peaks() {
        let radii = [0.02, 0.015, 0.021, 0.014, 0.02];
        let meshes: Vec<_> = radii.iter().map(|&r| scaled_sphere(r)).collect();
        let peaks = RPeakList::new(vec![0.0, 0.5]).unwrap();
        let times = [0.0, 0.25, 0.5, 0.75, 0.9];
        let c = volume_curve(&meshes, &times, Some(&peaks)).unwrap();
        assert_eq!(c.beats.len(), 2);
        assert_eq!(c.beats[0], BeatExtrema { frames: (0, 2), ed: 0, es: 1 });
        assert_eq!(c.beats[1], BeatExtrema { frames: (2, 5), ed: 2, es: 3 });
        for b in &c.beats {
            assert!(c.volumes_ml[b.ed] >= c.volumes_ml[b.es]);
        }
    }

    #[test]
    fn faces_through_voxel_centers_count_half_open() {
        // every ray through a shared edge or vertex must cross once per sheet
        let g = CartesianGrid3D { origin: [0.0; 3], spacing: 1.0, nx: 10, ny: 10, nz: 10 };
        let vox = voxelize_mesh(&box_mesh([2.0; 3], [5.0; 3]), &g).unwrap();
        assert_eq!(vox.iter().filter(|&&v| v).count(), 27);
        let vox = voxelize_mesh(&icosphere([4.5; 3], 3.0, 1), &g).unwrap();
        for iy in 0..10 {
            for iz in 0..10 {
                assert!(!vox[[iy, iz, 9]], "row ({iy},{iz}) leaks to the far edge");
            }
        }
    }

    fn cube_grid(spacing: f64, half_width: f64, center: [f64; 3]) -> CartesianGrid3D {
        let n = (2.0 * half_width / spacing).round() as usize + 1;
        CartesianGrid3D {
            origin: center.map(|c| c - half_width),
            spacing,
            nx: n,
            ny: n,
            nz: n,
        }
    }

    #[test]
    fn sphere_volume_matches_closed_form() {
        let r: f64 = 0.02;
        let exact = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3) * 1e6;
        let v = mesh_volume(&icosphere([0.0; 3], r, 4)).unwrap().ml;
        assert!((v - exact).abs() / exact < 0.005, "{v} vs {exact}");
    }

    #[test]
    fn voxel_count_converges_to_mesh_volume() {
        let c = [0.001, -0.002, 0.06];
        let m = ellipsoid_mesh(c, [0.02, 0.015, 0.03], 4);
        let mv = mesh_volume(&m).unwrap().ml;
        for (spacing, tol) in [(0.001, 0.02), (0.0005, 0.01)] {
            let g = cube_grid(spacing, 0.035, c);
            let vox = voxelize_mesh(&m, &g).unwrap();
            let vv = vox.iter().filter(|&&v| v).count() as f64 * g.voxel_volume() * 1e6;
            assert!((vv - mv).abs() / mv < tol, "spacing {spacing}: {vv} vs {mv}");
        }
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn volume_is_translation_invariant(dx in -0.1f64..0.1, dy in -0.1f64..0.1, dz in -0.1f64..0.1) {
            let a = mesh_volume(&icosphere([0.0; 3], 0.02, 2)).unwrap().ml;
            let b = mesh_volume(&icosphere([dx, dy, dz], 0.02, 2)).unwrap().ml;
            prop_assert!((a - b).abs() <= 1e-9 * a);
        }

        #[test]
        fn volume_scales_with_cube(k in 0.2f64..5.0) {
            let a = mesh_volume(&icosphere([0.0; 3], 0.01, 2)).unwrap().ml;
            let b = mesh_volume(&icosphere([0.0; 3], 0.01 * k, 2)).unwrap().ml;
            prop_assert!((b - a * k.powi(3)).abs() <= 1e-9 * b);
        }

        #[test]
        fn aligned_boxes_voxelize_exactly(
            x0 in 0usize..8, y0 in 0usize..8, z0 in 0usize..8,
            wx in 1usize..8, wy in 1usize..8, wz in 1usize..8,
        ) {
            let g = CartesianGrid3D { origin: [0.0; 3], spacing: 1.0, nx: 16, ny: 16, nz: 16 };
            let lo = [x0 as f64 - 0.5, y0 as f64 - 0.5, z0 as f64 - 0.5];
            let hi = [lo[0] + wx as f64, lo[1] + wy as f64, lo[2] + wz as f64];
            let vox = voxelize_mesh(&box_mesh(lo, hi), &g).unwrap();
            prop_assert_eq!(vox.iter().filter(|&&v| v).count(), wx * wy * wz);
        }
    }
}
