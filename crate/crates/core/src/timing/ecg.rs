//! Derivative / square / integrate beat detection with an adaptive threshold.

use super::{EcgTrace, RPeakList, TimingError, REFRACTORY_S};

/// Moving-window integration length, seconds.
const INTEGRATION_S: f64 = 0.150;
/// Accepted candidates must exceed this fraction of the running peak median.
const THRESHOLD_FRACTION: f64 = 0.5;
/// Number of recent accepted peaks in the running median.
const MEDIAN_DEPTH: usize = 8;
/// Initial threshold reference is taken over this leading span.
const LEARNING_S: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PeakDetection {
    pub peaks: RPeakList,
    /// Set when the trace carried no usable QRS energy.
    pub no_peaks: bool,
}

/// Detect R-peaks.
///
/// The trace is mean-centred, differentiated with the five-point derivative,
/// squared and integrated over a centred 150 ms window. Local maxima of the
/// integrated signal above half the running median of accepted peaks (the
/// median is seeded from the largest value in the first two seconds) become
/// beats; a candidate within the 250 ms refractory period of the previous
/// beat replaces it only if larger. Each beat is then placed on the raw
/// signal maximum within half a window of the integrated peak.
///
/// All thresholds are relative, so the detector does not depend on the
/// trace's amplitude calibration.
pub fn detect_r_peaks(ecg: &EcgTrace) -> Result<PeakDetection, TimingError> {
    ecg.validate()?;
    if ecg.duration() < 1.0 {
        return Err(TimingError::TraceTooShort(ecg.duration()));
    }
    let n = ecg.samples.len();
    let mean = ecg.samples.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let x: Vec<f64> = ecg.samples.iter().map(|&v| v as f64 - mean).collect();

    let mut deriv = vec![0.0; n];
    for i in 2..n.saturating_sub(2) {
        deriv[i] = (-x[i + 2] + 8.0 * x[i + 1] - 8.0 * x[i - 1] + x[i - 2]) * ecg.rate / 12.0;
    }
    let energy: Vec<f64> = deriv.iter().map(|d| d * d).collect();
    let window = ((INTEGRATION_S * ecg.rate).round() as usize).max(1);
    let mwi = centred_mean(&energy, window);

    // Near the ends the window is cut short, which can inflate a beat's
    // integrated energy up to twofold; such beats are detected but kept out
    // of the running median.
    let half = window / 2 + 1;
    let interior = |i: usize| i >= half && i + half < n;
    let learn_end = ((LEARNING_S * ecg.rate) as usize).min(n);
    let seed = (0..learn_end)
        .filter(|&i| interior(i))
        .map(|i| mwi[i])
        .fold(0.0, f64::max);
    if !(seed > 0.0) {
        return Ok(PeakDetection {
            peaks: RPeakList::default(),
            no_peaks: true,
        });
    }

    let refractory = (REFRACTORY_S * ecg.rate).round() as usize;
    let mut recent: Vec<f64> = vec![seed];
    let mut seeded = true;
    let mut remember = |recent: &mut Vec<f64>, v: f64| {
        if std::mem::take(&mut seeded) {
            recent.clear();
        }
        recent.push(v);
        if recent.len() > MEDIAN_DEPTH {
            recent.remove(0);
        }
    };
    // (index, value, counted in the median)
    let mut accepted: Vec<(usize, f64, bool)> = Vec::new();
    for i in 0..n {
        let v = mwi[i];
        if !((i == 0 || v > mwi[i - 1]) && (i + 1 == n || v >= mwi[i + 1])) {
            continue;
        }
        if v < THRESHOLD_FRACTION * median(&recent) {
            continue;
        }
        let counted = interior(i);
        match accepted.last_mut() {
            Some(last) if i - last.0 < refractory => {
                if v > last.1 {
                    match (last.2, counted) {
                        (true, true) => *recent.last_mut().unwrap() = v,
                        (false, true) => remember(&mut recent, v),
                        _ => {}
                    }
                    *last = (i, v, counted || last.2);
                }
            }
            _ => {
                accepted.push((i, v, counted));
                if counted {
                    remember(&mut recent, v);
                }
            }
        }
    }

    let mut times: Vec<f64> = Vec::new();
    for (i, _, _) in accepted {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        let best = (lo..=hi)
            .max_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap().then(b.cmp(&a)))
            .unwrap();
        let t = ecg.time_of(best);
        if times.last().is_none_or(|&prev| t - prev >= REFRACTORY_S) {
            times.push(t);
        }
    }
    let no_peaks = times.is_empty();
    Ok(PeakDetection {
        peaks: RPeakList::new(times)?,
        no_peaks,
    })
}

/// Centred moving average; windows cut by the ends average what is left.
fn centred_mean(x: &[f64], window: usize) -> Vec<f64> {
    let mut prefix = vec![0.0; x.len() + 1];
    for (i, v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let before = window / 2;
    let after = window - before;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = s.len() / 2;
    if s.len() % 2 == 0 {
        (s[m - 1] + s[m]) / 2.0
    } else {
        s[m]
    }
}

/// Beat-by-beat agreement between detected and reference peaks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl DetectionScore {
    pub fn precision(&self) -> f64 {
        let d = self.true_positives + self.false_positives;
        if d == 0 {
            1.0
        } else {
            self.true_positives as f64 / d as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let d = self.true_positives + self.false_negatives;
        if d == 0 {
            1.0
        } else {
            self.true_positives as f64 / d as f64
        }
    }
}

/// Greedy one-to-one matching within `tolerance` seconds.
///
/// Beats and detections closer than `tolerance` to either end of
/// `span = (start, end)` are left out of the score, as in beat-by-beat
/// comparison of annotated records: a beat cut by the record boundary can
/// be neither confirmed nor refuted.
pub fn score_detections(truth: &[f64], detected: &[f64], tolerance: f64, span: (f64, f64)) -> DetectionScore {
    let scored = |t: &f64| *t >= span.0 + tolerance && *t <= span.1 - tolerance;
    let mut used = vec![false; detected.len()];
    let mut tp = 0;
    let mut fn_ = 0;
    for t in truth {
        let best = detected
            .iter()
            .enumerate()
            .filter(|(j, d)| !used[*j] && (*d - t).abs() <= tolerance)
            .min_by(|a, b| (a.1 - t).abs().partial_cmp(&(b.1 - t).abs()).unwrap());
        match best {
            Some((j, _)) => {
                used[j] = true;
                if scored(t) {
                    tp += 1;
                }
            }
            None if scored(t) => fn_ += 1,
            None => {}
        }
    }
    let fp = detected
        .iter()
        .zip(&used)
        .filter(|(d, u)| !**u && scored(d))
        .count();
    DetectionScore {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impulse_train(peaks: &[f64], duration: f64, rate: f64) -> EcgTrace {
        let n = (duration * rate).round() as usize + 1;
        let sigma = 0.008;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                peaks
                    .iter()
                    .map(|p| (-(t - p).powi(2) / (2.0 * sigma * sigma)).exp())
                    .sum::<f64>() as f32
            })
            .collect();
        EcgTrace::new(samples, rate, 0.0).unwrap()
    }

    #[test]
    fn finds_clean_impulses() {
        let ecg = impulse_train(&[1.0, 2.0, 3.0], 4.0, 600.0);
        let d = detect_r_peaks(&ecg).unwrap();
        assert!(!d.no_peaks);
        let t = d.peaks.times();
        assert_eq!(t.len(), 3);
        for (got, want) in t.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1.0 / 600.0, "{got} vs {want}");
        }
    }

    #[test]
    fn edge_beats_are_found() {
        // 60 bpm over a 3 s trace with a beat on each end sample.
        let ecg = impulse_train(&[0.0, 1.0, 2.0, 3.0], 3.0, 600.0);
        let d = detect_r_peaks(&ecg).unwrap();
        assert_eq!(d.peaks.len(), 4, "{:?}", d.peaks.times());
        let ecg = impulse_train(&[0.5, 1.5, 2.5], 3.0, 600.0);
        assert_eq!(detect_r_peaks(&ecg).unwrap().peaks.len(), 3);
    }

    #[test]
    fn flat_trace_has_no_peaks() {
        let ecg = EcgTrace::new(vec![0.0; 1200], 600.0, 0.0).unwrap();
        let d = detect_r_peaks(&ecg).unwrap();
        assert!(d.no_peaks);
        assert!(d.peaks.is_empty());
    }

    #[test]
    fn short_trace_is_rejected() {
        let ecg = EcgTrace::new(vec![0.0; 300], 600.0, 0.0).unwrap();
        assert!(matches!(detect_r_peaks(&ecg), Err(TimingError::TraceTooShort(_))));
    }

    #[test]
    fn amplitude_scale_does_not_matter() {
        let ecg = impulse_train(&[0.7, 1.6, 2.5, 3.4], 4.0, 600.0);
        let scaled = EcgTrace::new(ecg.samples.iter().map(|v| v * 1e-3).collect(), 600.0, 0.0).unwrap();
        assert_eq!(detect_r_peaks(&ecg).unwrap().peaks, detect_r_peaks(&scaled).unwrap().peaks);
    }

    #[test]
    fn scoring_counts_matches() {
        let s = score_detections(&[1.0, 2.0, 3.0], &[1.01, 2.5, 3.0], 0.025, (0.0, 4.0));
        assert_eq!(
            s,
            DetectionScore {
                true_positives: 2,
                false_positives: 1,
                false_negatives: 1
            }
        );
        // boundary beats are not scored
        let s = score_detections(&[0.01], &[], 0.025, (0.0, 4.0));
        assert_eq!(s.false_negatives, 0);
    }
}
