use super::{check_regular, phase_of, RPeakList, TimingError};

/// An annotation replicated over a full recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagated<T> {
    /// One entry per target frame; `None` where the phase is undefined.
    pub frames: Vec<Option<T>>,
    /// Source annotation frame index and its phase, per target frame.
    pub provenance: Vec<Option<(usize, f64)>>,
}

/// Replicate a one-beat annotation onto every detected beat.
///
/// Source frames are indexed by cardiac phase; each target frame with a
/// defined phase receives the source frame nearest in phase, with distance
/// measured around the cycle (ties go to the earlier source frame).
pub fn propagate_cycle_annotation<T: Clone>(
    annotation: &[T],
    annotation_times: &[f64],
    peaks: &RPeakList,
    target_times: &[f64],
    max_cv: f64,
) -> Result<Propagated<T>, TimingError> {
    if annotation.is_empty() || annotation.len() != annotation_times.len() {
        return Err(TimingError::Invalid(
            "annotation frames and times must be non-empty and of equal length".into(),
        ));
    }
    check_regular(peaks, max_cv)?;
    let beat = peaks.beat_of(annotation_times[0]);
    if beat.is_none() || annotation_times.iter().any(|&t| peaks.beat_of(t) != beat) {
        return Err(TimingError::Invalid(
            "annotation must lie within a single beat".into(),
        ));
    }
    let src: Vec<f64> = annotation_times
        .iter()
        .map(|&t| phase_of(t, peaks).expect("inside beat"))
        .collect();

    let mut frames = Vec::with_capacity(target_times.len());
    let mut provenance = Vec::with_capacity(target_times.len());
    for &t in target_times {
        match phase_of(t, peaks) {
            Some(p) => {
                let (best, _) = src
                    .iter()
                    .enumerate()
                    .map(|(i, &q)| {
                        let d = (p - q).abs();
                        (i, d.min(1.0 - d))
                    })
                    .fold((0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
                frames.push(Some(annotation[best].clone()));
                provenance.push(Some((best, src[best])));
            }
            None => {
                frames.push(None);
                provenance.push(None);
            }
        }
    }
    Ok(Propagated { frames, provenance })
}
