use super::{check_regular, phase_of, RPeakList, TimingError};
use ndarray::{s, Array4, ArrayView3, Axis, Zip};

/// One ECG-gated sub-sector: frames `[time][plane][beam][sample]` covering
/// beams `beam_offset .. beam_offset + n_beams` of the full sector.
#[derive(Debug, Clone, PartialEq)]
pub struct SubAcquisition {
    pub frames: Array4<f64>,
    pub timestamps: Vec<f64>,
    pub beam_offset: usize,
}

impl SubAcquisition {
    pub fn n_beams(&self) -> usize {
        self.frames.dim().2
    }
}

/// A wide-sector series spanning one cardiac cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct StitchedSeries {
    pub frames: Array4<f64>,
    /// Cardiac phase of each output frame.
    pub phases: Vec<f64>,
    pub beam_offset: usize,
}

const MAX_SUBACQUISITIONS: usize = 6;

/// Assemble a wide-sector cycle from azimuth sub-sectors gated to
/// different beats.
///
/// Each sub-acquisition keeps the frames that fall in the beat containing
/// its first frame, expressed in that beat's phase. All of them are
/// resampled onto the phase grid `j / L`, `L` being the largest per-beat
/// frame count, by linear interpolation that wraps around the cycle, then
/// concatenated along the beam axis in azimuth order. A single
/// sub-acquisition is returned with its frames untouched.
pub fn stitch_multibeat(
    subacqs: &[SubAcquisition],
    peaks: &RPeakList,
    max_cv: f64,
) -> Result<StitchedSeries, TimingError> {
    if subacqs.is_empty() || subacqs.len() > MAX_SUBACQUISITIONS {
        return Err(TimingError::Invalid(format!(
            "expected 1 to {MAX_SUBACQUISITIONS} sub-acquisitions, got {}",
            subacqs.len()
        )));
    }
    for (i, sa) in subacqs.iter().enumerate() {
        if sa.frames.dim().0 != sa.timestamps.len() || sa.timestamps.is_empty() {
            return Err(TimingError::Invalid(format!(
                "sub-acquisition {i}: frame count does not match timestamps"
            )));
        }
        if sa.timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(TimingError::Invalid(format!(
                "sub-acquisition {i}: timestamps not strictly increasing"
            )));
        }
    }
    check_regular(peaks, max_cv)?;

    if subacqs.len() == 1 {
        let sa = &subacqs[0];
        return Ok(StitchedSeries {
            frames: sa.frames.clone(),
            phases: sa
                .timestamps
                .iter()
                .map(|&t| phase_of(t, peaks).unwrap_or(f64::NAN))
                .collect(),
            beam_offset: sa.beam_offset,
        });
    }

    let (_, planes, _, samples) = subacqs[0].frames.dim();
    if subacqs.iter().any(|sa| {
        let d = sa.frames.dim();
        d.1 != planes || d.3 != samples
    }) {
        return Err(TimingError::Invalid(
            "sub-acquisitions differ in plane or sample count".into(),
        ));
    }

    let mut order: Vec<usize> = (0..subacqs.len()).collect();
    order.sort_by_key(|&i| subacqs[i].beam_offset);
    for w in order.windows(2) {
        let (a, b) = (&subacqs[w[0]], &subacqs[w[1]]);
        let end = a.beam_offset + a.n_beams();
        if end != b.beam_offset {
            let kind = if end > b.beam_offset { "overlap" } else { "gap" };
            return Err(TimingError::AzimuthLayout(format!(
                "{kind} between beams {} and {}",
                end, b.beam_offset
            )));
        }
    }

    // frames and phases of each sub-acquisition's own beat
    let mut gated = Vec::with_capacity(subacqs.len());
    for (i, sa) in subacqs.iter().enumerate() {
        let beat = peaks.beat_of(sa.timestamps[0]).ok_or_else(|| {
            TimingError::Invalid(format!("sub-acquisition {i} starts outside the detected beats"))
        })?;
        let (start, end) = (peaks.times()[beat], peaks.times()[beat + 1]);
        let idx: Vec<usize> = (0..sa.timestamps.len())
            .filter(|&f| sa.timestamps[f] >= start && sa.timestamps[f] < end)
            .collect();
        let phases: Vec<f64> = idx
            .iter()
            .map(|&f| phase_of(sa.timestamps[f], peaks).expect("inside beat"))
            .collect();
        gated.push((idx, phases));
    }
    let len = gated.iter().map(|(idx, _)| idx.len()).max().unwrap();
    let grid: Vec<f64> = (0..len).map(|j| j as f64 / len as f64).collect();

    let total_beams: usize = subacqs.iter().map(SubAcquisition::n_beams).sum();
    let mut out = Array4::zeros((len, planes, total_beams, samples));
    for &i in &order {
        let sa = &subacqs[i];
        let (idx, phases) = &gated[i];
        let lo = sa.beam_offset - subacqs[order[0]].beam_offset;
        for (j, &p) in grid.iter().enumerate() {
            let (f0, f1, w) = cyclic_bracket(phases, p);
            let a = sa.frames.index_axis(Axis(0), idx[f0]);
            let b = sa.frames.index_axis(Axis(0), idx[f1]);
            let mut dst = out.slice_mut(s![j, .., lo..lo + sa.n_beams(), ..]);
            blend(&mut dst, a, b, w);
        }
    }
    Ok(StitchedSeries {
        frames: out,
        phases: grid,
        beam_offset: subacqs[order[0]].beam_offset,
    })
}

fn blend(dst: &mut ndarray::ArrayViewMut3<f64>, a: ArrayView3<f64>, b: ArrayView3<f64>, w: f64) {
    Zip::from(dst).and(&a).and(&b).for_each(|d, &x, &y| {
        *d = if w == 0.0 { x } else { x + (y - x) * w };
    });
}

/// Frames bracketing phase `p` on a periodic axis, and the weight of the
/// second one.
fn cyclic_bracket(phases: &[f64], p: f64) -> (usize, usize, f64) {
    let m = phases.len();
    if m == 1 {
        return (0, 0, 0.0);
    }
    let k = phases.partition_point(|&q| q <= p);
    let (i0, i1, q0, q1) = if k == 0 {
        (m - 1, 0, phases[m - 1] - 1.0, phases[0])
    } else if k == m {
        (m - 1, 0, phases[m - 1], phases[0] + 1.0)
    } else {
        (k - 1, k, phases[k - 1], phases[k])
    };
    (i0, i1, (p - q0) / (q1 - q0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn regular_peaks(n: usize, rr: f64) -> RPeakList {
        RPeakList::new((0..n).map(|k| k as f64 * rr).collect()).unwrap()
    }

    fn sub(offset: usize, beams: usize, t0: f64, n: usize, dt: f64) -> SubAcquisition {
        let ts: Vec<f64> = (0..n).map(|i| t0 + i as f64 * dt).collect();
        let frames = Array4::from_shape_fn((n, 2, beams, 3), |(f, _, b, _)| (f + 10 * (b + offset)) as f64);
        SubAcquisition {
            frames,
            timestamps: ts,
            beam_offset: offset,
        }
    }

    #[test]
    fn single_full_sector_is_identity() {
        let sa = sub(0, 8, 0.0, 10, 0.1);
        let out = stitch_multibeat(std::slice::from_ref(&sa), &regular_peaks(4, 1.0), 0.1).unwrap();
        assert_eq!(out.frames, sa.frames);
    }

    #[test]
    fn output_shape_follows_longest_subacquisition() {
        let peaks = regular_peaks(5, 1.0);
        let parts = [sub(0, 4, 0.0, 10, 0.1), sub(4, 3, 1.0, 8, 0.125), sub(7, 5, 2.0, 20, 0.05)];
        let out = stitch_multibeat(&parts, &peaks, 0.1).unwrap();
        assert_eq!(out.frames.dim(), (20, 2, 12, 3));
        assert_eq!(out.phases.len(), 20);
        // sub-acquisition on the common grid is reproduced exactly
        let frames = &parts[2].frames;
        let diff = (&out.frames.slice(s![.., .., 7.., ..]) - frames)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn irregular_rhythm_is_refused() {
        // RR alternating 0.6 / 1.4 -> CV = 0.4
        let peaks = RPeakList::new(vec![0.0, 0.6, 2.0, 2.6, 4.0]).unwrap();
        let parts = [sub(0, 4, 0.0, 5, 0.1), sub(4, 4, 0.6, 5, 0.1)];
        assert!(matches!(
            stitch_multibeat(&parts, &peaks, 0.1),
            Err(TimingError::IrregularRhythm { .. })
        ));
    }

    #[test]
    fn gaps_and_overlaps_are_rejected() {
        let peaks = regular_peaks(4, 1.0);
        let gap = [sub(0, 4, 0.0, 5, 0.1), sub(5, 4, 1.0, 5, 0.1)];
        assert!(matches!(stitch_multibeat(&gap, &peaks, 0.1), Err(TimingError::AzimuthLayout(_))));
        let overlap = [sub(0, 4, 0.0, 5, 0.1), sub(3, 4, 1.0, 5, 0.1)];
        assert!(matches!(stitch_multibeat(&overlap, &peaks, 0.1), Err(TimingError::AzimuthLayout(_))));
    }

    #[test]
    fn cyclic_bracket_wraps() {
        let ph = [0.1, 0.4, 0.7];
        assert_eq!(cyclic_bracket(&ph, 0.4), (1, 2, 0.0));
        let (a, b, w) = cyclic_bracket(&ph, 0.9);
        assert_eq!((a, b), (2, 0));
        assert!((w - 0.5).abs() < 1e-12);
        let (a, b, w) = cyclic_bracket(&ph, 0.0);
        assert_eq!((a, b), (2, 0));
        // from phase -0.3 to 0.1
        assert!((w - 0.75).abs() < 1e-12);
    }
}
