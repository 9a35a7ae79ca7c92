use super::{AnnotationError, Contour2D};
use crate::geometry::CartesianGrid2D;
use ndarray::Array2;

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_MYOCARDIUM: u8 = 1;
pub const LABEL_CAVITY: u8 = 2;

type P = [f64; 2];

#[inline]
fn cross(o: P, a: P, b: P) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

#[inline]
fn on_segment(p: P, a: P, b: P) -> bool {
    cross(a, b, p) == 0.0
        && p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: P, b: P, c: P, d: P) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

fn edges(c: &Contour2D) -> impl Iterator<Item = (P, P)> + '_ {
    let n = c.vertices.len();
    let m = if c.closed { n } else { n - 1 };
    (0..m).map(move |i| (c.vertices[i], c.vertices[(i + 1) % n]))
}

/// No two non-adjacent edges touch, and no vertex repeats.
pub fn is_simple(contour: &Contour2D) -> bool {
    let n = contour.vertices.len();
    if n < 3 {
        return false;
    }
    let e: Vec<(P, P)> = edges(contour).collect();
    let m = e.len();
    for i in 0..m {
        if e[i].0 == e[i].1 {
            return false;
        }
        for j in i + 1..m {
            let adjacent = j == i + 1 || (contour.closed && i == 0 && j == m - 1);
            if adjacent {
                // adjacent edges may only share their common vertex
                let (a, b) = e[i];
                let (c, d) = e[j];
                let (other_i, other_j) = if j == i + 1 { (a, d) } else { (b, c) };
                if on_segment(other_j, a, b) || on_segment(other_i, c, d) {
                    return false;
                }
                continue;
            }
            if segments_intersect(e[i].0, e[i].1, e[j].0, e[j].1) {
                return false;
            }
        }
    }
    true
}

/// Even–odd test with the half-open crossing rule; points exactly on an
/// edge count as inside.
pub fn point_in_polygon(p: P, poly: &[P]) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if on_segment(p, a, b) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = crossing_x(a, b, p[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

#[inline]
fn crossing_x(a: P, b: P, z: f64) -> f64 {
    a[0] + (z - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
}

fn check_polygon(c: &Contour2D) -> Result<(), AnnotationError> {
    if c.vertices.len() < 3 {
        return Err(AnnotationError::TooFewVertices(c.vertices.len()));
    }
    if !c.closed {
        return Err(AnnotationError::NotClosed);
    }
    if !is_simple(c) {
        return Err(AnnotationError::SelfIntersecting);
    }
    Ok(())
}

/// Scanline fill of one polygon at pixel centers.
fn fill(poly: &[P], grid: &CartesianGrid2D) -> Array2<bool> {
    let mut out = Array2::from_elem(grid.shape(), false);
    let n = poly.len();
    let mut xs: Vec<f64> = Vec::new();
    for row in 0..grid.height {
        let z = grid.origin_z + row as f64 * grid.spacing;
        xs.clear();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            if (a[1] > z) != (b[1] > z) {
                xs.push(crossing_x(a, b, z));
            }
        }
        if xs.is_empty() {
            continue;
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // inside iff an odd number of crossings lie strictly right of x
        let mut right = xs.len();
        let mut k = 0;
        for col in 0..grid.width {
            let x = grid.origin_x + col as f64 * grid.spacing;
            while k < xs.len() && xs[k] <= x {
                k += 1;
                right -= 1;
            }
            if right % 2 == 1 {
                out[[row, col]] = true;
            }
        }
    }
    // pixel centers lying exactly on an edge belong to the region
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (r0, c0) = grid.to_pixel(a[0].min(b[0]), a[1].min(b[1]));
        let (r1, c1) = grid.to_pixel(a[0].max(b[0]), a[1].max(b[1]));
        let (Some(rows), Some(cols)) = (index_range(r0, r1, grid.height), index_range(c0, c1, grid.width)) else {
            continue;
        };
        for row in rows {
            for col in cols.clone() {
                if on_segment(grid.pixel_center(row, col).into(), a, b) {
                    out[[row, col]] = true;
                }
            }
        }
    }
    out
}

fn index_range(lo: f64, hi: f64, n: usize) -> Option<std::ops::RangeInclusive<usize>> {
    let a = lo.ceil().max(0.0);
    let b = hi.floor().min(n as f64 - 1.0);
    (a <= b).then(|| a as usize..=b as usize)
}

/// Label mask `{0 background, 1 myocardium, 2 cavity}` at pixel centers.
pub fn rasterize_contours(
    endo: &Contour2D,
    epi: Option<&Contour2D>,
    grid: &CartesianGrid2D,
) -> Result<Array2<u8>, AnnotationError> {
    grid.validate()
        .map_err(|e| AnnotationError::Invalid(e.to_string()))?;
    check_polygon(endo)?;
    if let Some(epi) = epi {
        check_polygon(epi)?;
        let encloses = endo.vertices.iter().all(|&v| point_in_polygon(v, &epi.vertices))
            && !edges(endo).any(|(a, b)| edges(epi).any(|(c, d)| segments_intersect(a, b, c, d)));
        if !encloses {
            return Err(AnnotationError::EpiNotEnclosing);
        }
    }
    let cavity = fill(&endo.vertices, grid);
    let mut mask = Array2::from_elem(grid.shape(), LABEL_BACKGROUND);
    if let Some(epi) = epi {
        let outer = fill(&epi.vertices, grid);
        mask.zip_mut_with(&outer, |m, &o| {
            if o {
                *m = LABEL_MYOCARDIUM;
            }
        });
    }
    mask.zip_mut_with(&cavity, |m, &c| {
        if c {
            *m = LABEL_CAVITY;
        }
    });
    Ok(mask)
}

/// Polyline length, including the closing edge for closed contours.
pub fn arc_length(contour: &Contour2D) -> f64 {
    edges(contour)
        .map(|(a, b)| (b[0] - a[0]).hypot(b[1] - a[1]))
        .sum()
}

fn check_correspondence(frames: &[Contour2D], reference: usize) -> Result<(), AnnotationError> {
    let Some(r) = frames.get(reference) else {
        return Err(AnnotationError::Invalid(format!(
            "reference frame {reference} out of range"
        )));
    };
    let expected = r.vertices.len();
    if expected < 2 {
        return Err(AnnotationError::TooFewVertices(expected));
    }
    for (frame, c) in frames.iter().enumerate() {
        if c.vertices.len() != expected {
            return Err(AnnotationError::VertexCountMismatch {
                frame,
                expected,
                found: c.vertices.len(),
            });
        }
    }
    Ok(())
}

/// Global strain in percent: `100 (L(t) - L(ref)) / L(ref)` with `L` the
/// contour arc length.
pub fn strain_curve(frames: &[Contour2D], reference: usize) -> Result<Vec<f64>, AnnotationError> {
    check_correspondence(frames, reference)?;
    let l_ref = arc_length(&frames[reference]);
    Ok(frames
        .iter()
        .map(|c| 100.0 * (arc_length(c) - l_ref) / l_ref)
        .collect())
}

/// Segmental strain: the reference contour is split into `n_segments`
/// pieces of equal arc length; the split points ride along their edges in
/// every other frame. Returns `[frame][segment]` in percent.
pub fn segmental_strain(
    frames: &[Contour2D],
    reference: usize,
    n_segments: usize,
) -> Result<Vec<Vec<f64>>, AnnotationError> {
    check_correspondence(frames, reference)?;
    if n_segments == 0 {
        return Err(AnnotationError::Invalid("n_segments must be positive".into()));
    }
    let r = &frames[reference];
    let lens: Vec<f64> = edges(r).map(|(a, b)| (b[0] - a[0]).hypot(b[1] - a[1])).collect();
    let total: f64 = lens.iter().sum();
    // split points as (edge, fraction along edge)
    let mut cuts = vec![(0usize, 0.0f64)];
    let mut acc = 0.0;
    let mut e = 0;
    for k in 1..n_segments {
        let target = total * k as f64 / n_segments as f64;
        while e < lens.len() - 1 && acc + lens[e] < target {
            acc += lens[e];
            e += 1;
        }
        cuts.push((e, ((target - acc) / lens[e]).clamp(0.0, 1.0)));
    }
    cuts.push((lens.len() - 1, 1.0));

    let seg_len = |c: &Contour2D, from: (usize, f64), to: (usize, f64)| -> f64 {
        let n = c.vertices.len();
        let at = |e: usize, f: f64| {
            let a = c.vertices[e];
            let b = c.vertices[(e + 1) % n];
            [a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f]
        };
        let dist = |p: P, q: P| (q[0] - p[0]).hypot(q[1] - p[1]);
        if from.0 == to.0 {
            return dist(at(from.0, from.1), at(to.0, to.1));
        }
        let mut l = dist(at(from.0, from.1), c.vertices[(from.0 + 1) % n]);
        for e in from.0 + 1..to.0 {
            l += dist(c.vertices[e], c.vertices[(e + 1) % n]);
        }
        l + dist(c.vertices[to.0], at(to.0, to.1))
    };
    let ref_lens: Vec<f64> = cuts.windows(2).map(|w| seg_len(r, w[0], w[1])).collect();
    Ok(frames
        .iter()
        .map(|c| {
            cuts.windows(2)
                .zip(&ref_lens)
                .map(|(w, l0)| 100.0 * (seg_len(c, w[0], w[1]) - l0) / l0)
                .collect()
        })
        .collect())
}
