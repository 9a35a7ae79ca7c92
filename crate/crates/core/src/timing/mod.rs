//! ECG beat detection, cardiac phase, interleaved-stream pairing,
//! multi-beat stitching and single-cycle annotation propagation.

mod ecg;
mod pairing;
mod propagate;
mod stitch;

pub use ecg::{detect_r_peaks, score_detections, DetectionScore, PeakDetection};
pub use pairing::{median_spacing, pair_interleaved, StreamPairing};
pub use propagate::{propagate_cycle_annotation, Propagated};
pub use stitch::{stitch_multibeat, StitchedSeries, SubAcquisition};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum spacing between detected beats, seconds.
pub const REFRACTORY_S: f64 = 0.25;
/// Default rhythm-regularity gate (coefficient of variation of RR).
pub const DEFAULT_MAX_CV: f64 = 0.10;

#[derive(Debug, Error, PartialEq)]
pub enum TimingError {
    #[error("ECG trace too short: {0:.3} s (need at least 1 s)")]
    TraceTooShort(f64),
    #[error("invalid ECG trace: {0}")]
    InvalidTrace(String),
    #[error("need at least {needed} R-peaks, found {found}")]
    TooFewPeaks { needed: usize, found: usize },
    #[error("R-peaks must be strictly increasing and at least {REFRACTORY_S} s apart")]
    InvalidPeaks,
    #[error("irregular rhythm: RR coefficient of variation {cv:.4} exceeds {max_cv:.4}")]
    IrregularRhythm { cv: f64, max_cv: f64 },
    #[error("azimuth ranges must be contiguous and disjoint: {0}")]
    AzimuthLayout(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Single-lead ECG sampled at a fixed rate, millivolts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgTrace {
    pub samples: Vec<f32>,
    pub rate: f64,
    pub t0: f64,
}

impl EcgTrace {
    pub fn new(samples: Vec<f32>, rate: f64, t0: f64) -> Result<Self, TimingError> {
        let trace = Self { samples, rate, t0 };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<(), TimingError> {
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(TimingError::InvalidTrace("rate must be positive".into()));
        }
        if self.samples.is_empty() {
            return Err(TimingError::InvalidTrace("trace has no samples".into()));
        }
        if !self.t0.is_finite() {
            return Err(TimingError::InvalidTrace("t0 must be finite".into()));
        }
        Ok(())
    }

    pub fn time_of(&self, index: usize) -> f64 {
        self.t0 + index as f64 / self.rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }

    pub fn timestamps(&self) -> Vec<f64> {
        (0..self.samples.len()).map(|i| self.time_of(i)).collect()
    }
}

/// Ascending beat anchor times in seconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RPeakList(Vec<f64>);

impl RPeakList {
    pub fn new(times: Vec<f64>) -> Result<Self, TimingError> {
        let ok = times.iter().all(|t| t.is_finite())
            && times.windows(2).all(|w| w[1] - w[0] >= REFRACTORY_S - 1e-12);
        if ok {
            Ok(Self(times))
        } else {
            Err(TimingError::InvalidPeaks)
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn rr_intervals(&self) -> Vec<f64> {
        self.0.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Index `k` of the beat `[peak_k, peak_{k+1})` containing `t`.
    pub fn beat_of(&self, t: f64) -> Option<usize> {
        if self.0.len() < 2 || t < self.0[0] || t >= *self.0.last().unwrap() {
            return None;
        }
        // last k with peak_k <= t
        Some(self.0.partition_point(|&p| p <= t) - 1)
    }

    /// CSV with a `time_s` header and one row per peak.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_s\n");
        for t in &self.0 {
            s.push_str(&format!("{t}\n"));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, TimingError> {
        let mut times = Vec::new();
        for line in text.lines().skip(1) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let t = line
                .parse::<f64>()
                .map_err(|e| TimingError::Invalid(format!("bad peak time {line:?}: {e}")))?;
            times.push(t);
        }
        Self::new(times)
    }
}

/// Coefficient of variation of RR intervals (sample standard deviation over
/// mean).
pub fn rr_regularity(peaks: &RPeakList) -> Result<f64, TimingError> {
    if peaks.len() < 3 {
        return Err(TimingError::TooFewPeaks {
            needed: 3,
            found: peaks.len(),
        });
    }
    let rr = peaks.rr_intervals();
    let n = rr.len() as f64;
    let mean = rr.iter().sum::<f64>() / n;
    let var = rr.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt() / mean)
}

/// Refuse when the rhythm is too irregular for phase-based replication.
pub(crate) fn check_regular(peaks: &RPeakList, max_cv: f64) -> Result<f64, TimingError> {
    let cv = rr_regularity(peaks)?;
    if cv > max_cv {
        return Err(TimingError::IrregularRhythm { cv, max_cv });
    }
    Ok(cv)
}

/// Cardiac phase in `[0, 1)` of `t`, or `None` outside `[first, last)` peak.
pub fn phase_of(t: f64, peaks: &RPeakList) -> Option<f64> {
    let k = peaks.beat_of(t)?;
    let p = peaks.times();
    let phase = (t - p[k]) / (p[k + 1] - p[k]);
    // rounding can land exactly on 1 for t just below the next peak
    Some(if phase >= 1.0 { f64::from_bits(1.0f64.to_bits() - 1) } else { phase })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn peaks(t: &[f64]) -> RPeakList {
        RPeakList::new(t.to_vec()).unwrap()
    }

    #[test]
    fn regular_rhythm_has_zero_cv() {
        assert_eq!(rr_regularity(&peaks(&[0.0, 1.0, 2.0, 3.0])).unwrap(), 0.0);
    }

    #[test]
    fn two_interval_cv() {
        // RR = {0.8, 1.2}: mean 1.0, sample std sqrt(0.08) = 0.282842712...
        let cv = rr_regularity(&peaks(&[0.0, 0.8, 2.0])).unwrap();
        assert!((cv - 0.282_842_712_474_619).abs() < 1e-12);
    }

    #[test]
    fn cv_needs_three_peaks() {
        assert_eq!(
            rr_regularity(&peaks(&[0.0, 1.0])),
            Err(TimingError::TooFewPeaks { needed: 3, found: 2 })
        );
    }

    #[test]
    fn phase_examples() {
        let p = peaks(&[0.0, 1.0, 2.0]);
        assert_eq!(phase_of(1.0, &p), Some(0.0));
        assert_eq!(phase_of(0.5, &p), Some(0.5));
        assert_eq!(phase_of(2.0, &p), None);
        assert_eq!(phase_of(-0.1, &p), None);
        let irregular = peaks(&[0.0, 0.8, 2.0]);
        assert!((phase_of(1.4, &irregular).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn peaks_reject_refractory_violation() {
        assert!(RPeakList::new(vec![0.0, 0.1]).is_err());
        assert!(RPeakList::new(vec![1.0, 0.5]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let p = peaks(&[0.125, 1.0, 1.875]);
        assert_eq!(RPeakList::from_csv(&p.to_csv()).unwrap(), p);
    }

    proptest! {
        #[test]
        fn phase_is_zero_at_peaks_and_in_unit_interval(
            gaps in prop::collection::vec(0.3f64..2.0, 2..8),
            start in -5.0f64..5.0,
            u in 0.0f64..1.0,
        ) {
            let mut t = vec![start];
            for g in &gaps { t.push(t.last().unwrap() + g); }
            let p = RPeakList::new(t.clone()).unwrap();
            for &pk in &t[..t.len() - 1] {
                prop_assert_eq!(phase_of(pk, &p), Some(0.0));
            }
            let q = start + u * (t.last().unwrap() - start);
            if let Some(ph) = phase_of(q, &p) {
                prop_assert!((0.0..1.0).contains(&ph));
            }
        }

        #[test]
        fn phase_is_continuous_inside_beats(
            gaps in prop::collection::vec(0.3f64..2.0, 1..6),
            u in 0.01f64..0.99,
        ) {
            let mut t = vec![0.0];
            for g in &gaps { t.push(t.last().unwrap() + g); }
            let p = RPeakList::new(t.clone()).unwrap();
            let q = u * t.last().unwrap();
            let h = 1e-9;
            if let (Some(a), Some(b)) = (phase_of(q, &p), phase_of(q + h, &p)) {
                // same beat: slope is 1/RR
                if b > a { prop_assert!(b - a < 1e-8); }
            }
        }
    }
}
