//! Benchmark losses with their masking, weighting and reporting rules.
//!
//! Every loss takes an optional `region`: when predictions are scored on a
//! Cartesian grid, only pixels inside the validity mask contribute.

mod filters;
mod folds;

pub use filters::{filter_recording, sample_clips, FilterDecision, FilterParams, Task};
pub use folds::{aggregate_folds, make_patient_folds, CaseValue, FoldAssignment, FoldRow, FoldSummary, MetricReport};

use ndarray::{Array, Array3, ArrayView, ArrayView3, ArrayView4, Axis, Dimension, Zip};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("nyquist velocity must be positive, got {0}")]
    InvalidNyquist(f64),
    #[error("{what}: shape {found:?} differs from {expected:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("no annotated frames")]
    NoAnnotatedFrames,
    #[error("scoring region is empty")]
    EmptyRegion,
    #[error("expected {expected} fold values, got {found}")]
    FoldCount { expected: usize, found: usize },
    #[error("exam {0} has no patient_key")]
    MissingPatientKey(String),
    #[error("recording has no {0} stream")]
    MissingStream(&'static str),
    #[error("beamspace predictions must be scan-converted before scoring")]
    BeamspaceInput,
    #[error("invalid input: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, MetricsError>;

/// Where a prediction lives. Scores are only defined on Cartesian grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Beamspace,
    Cartesian,
}

pub fn require_cartesian(domain: Domain) -> Result<()> {
    match domain {
        Domain::Cartesian => Ok(()),
        Domain::Beamspace => Err(MetricsError::BeamspaceInput),
    }
}

fn same_shape(what: &'static str, expected: &[usize], found: &[usize]) -> Result<()> {
    if expected != found {
        return Err(MetricsError::ShapeMismatch {
            what,
            expected: expected.to_vec(),
            found: found.to_vec(),
        });
    }
    Ok(())
}

fn check_nyquist(nyquist: f64) -> Result<()> {
    if !(nyquist.is_finite() && nyquist > 0.0) {
        return Err(MetricsError::InvalidNyquist(nyquist));
    }
    Ok(())
}

#[inline]
fn alias_unchecked(a: f64, b: f64, nyquist: f64) -> f64 {
    let period = 2.0 * nyquist;
    let r = (a - b).rem_euclid(period);
    (r.min(period - r) / nyquist).clamp(0.0, 1.0)
}

/// Distance between two velocities modulo `2ν`, normalised by `ν`:
/// `min_k |a − b + 2kν| / ν`, in `[0, 1]`.
pub fn alias_distance(a: f64, b: f64, nyquist: f64) -> Result<f64> {
    check_nyquist(nyquist)?;
    Ok(alias_unchecked(a, b, nyquist))
}

/// Mean alias distance over all pixels and frames (or over `region`).
pub fn task1_loss<D: Dimension>(
    pred: ArrayView<f64, D>,
    target: ArrayView<f64, D>,
    nyquist: f64,
    region: Option<ArrayView<bool, D>>,
) -> Result<f64> {
    check_nyquist(nyquist)?;
    same_shape("prediction", target.shape(), pred.shape())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    match region {
        None => {
            Zip::from(&pred).and(&target).for_each(|&p, &t| sum += alias_unchecked(p, t, nyquist));
            n = pred.len();
        }
        Some(r) => {
            same_shape("region", target.shape(), r.shape())?;
            Zip::from(&pred).and(&target).and(&r).for_each(|&p, &t, &inside| {
                if inside {
                    sum += alias_unchecked(p, t, nyquist);
                    n += 1;
                }
            });
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyRegion);
    }
    Ok(sum / n as f64)
}

/// Local velocity variation: population standard deviation over the 3×3
/// neighbourhood of every pixel, borders replicated. Input `[frame][row][col]`.
pub fn turbulence_proxy(v: ArrayView3<f64>) -> Array3<f64> {
    let (t, h, w) = v.dim();
    let mut out = Array3::zeros((t, h, w));
    if h == 0 || w == 0 {
        return out;
    }
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    for f in 0..t {
        let frame = v.index_axis(Axis(0), f);
        for r in 0..h {
            for c in 0..w {
                // shifted by the center value so constant windows give exactly 0
                let center = frame[[r, c]];
                let mut win = [0.0; 9];
                let mut k = 0;
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        win[k] = frame[[clamp(r as isize + dr, h), clamp(c as isize + dc, w)]] - center;
                        k += 1;
                    }
                }
                let mean = win.iter().sum::<f64>() / 9.0;
                let var = win.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 9.0;
                out[[f, r, c]] = var.sqrt();
            }
        }
    }
    out
}

/// Thresholds of the valid-velocity mask and the training weight map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskParams {
    pub tau_power: f64,
    pub tau_bmode: f64,
    pub inside_floor: f64,
    pub outside_weight: f64,
    /// Use `P > τ_P` and `B < τ_B` instead of the closed comparisons.
    pub strict: bool,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            tau_power: 0.3,
            tau_bmode: 0.4,
            inside_floor: 0.01,
            outside_weight: 0.01,
            strict: false,
        }
    }
}

impl MaskParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.tau_power, self.tau_bmode, self.inside_floor, self.outside_weight];
        if all.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(MetricsError::Invalid("mask parameters must lie in [0, 1]".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn reliable(&self, power: f64, bmode: f64) -> bool {
        if self.strict {
            power > self.tau_power && bmode < self.tau_bmode
        } else {
            power >= self.tau_power && bmode <= self.tau_bmode
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityMask<D: Dimension> {
    /// `box ∧ power ≥ τ_P ∧ bmode ≤ τ_B`.
    pub binary: Array<bool, D>,
    /// Training weights: `m + inside_floor` inside the box, `outside_weight`
    /// outside it.
    pub weight: Array<f64, D>,
}

pub fn valid_velocity_mask<D: Dimension>(
    color_box: ArrayView<bool, D>,
    power: ArrayView<f64, D>,
    bmode: ArrayView<f64, D>,
    params: &MaskParams,
) -> Result<VelocityMask<D>> {
    params.validate()?;
    same_shape("power", color_box.shape(), power.shape())?;
    same_shape("bmode", color_box.shape(), bmode.shape())?;
    let binary = Zip::from(&color_box)
        .and(&power)
        .and(&bmode)
        .map_collect(|&c, &p, &b| c && params.reliable(p, b));
    let weight = Zip::from(&color_box).and(&binary).map_collect(|&c, &m| {
        if c {
            m as u8 as f64 + params.inside_floor
        } else {
            params.outside_weight
        }
    });
    Ok(VelocityMask { binary, weight })
}

/// Predicted or target fields of the color-Doppler task.
#[derive(Debug, Clone, Copy)]
pub struct FlowFields<'a, D: Dimension> {
    pub velocity: ArrayView<'a, f64, D>,
    pub power: ArrayView<'a, f64, D>,
    pub variation: ArrayView<'a, f64, D>,
}

/// Plain L1 terms of the color-Doppler task. Velocity and variation are
/// averaged over the valid-velocity mask only and are `None` when it is
/// empty; power is averaged over every pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowLoss {
    pub velocity: Option<f64>,
    pub power: f64,
    pub variation: Option<f64>,
}

pub fn task2_loss<D: Dimension>(
    pred: &FlowFields<D>,
    target: &FlowFields<D>,
    mask: ArrayView<bool, D>,
    region: Option<ArrayView<bool, D>>,
) -> Result<FlowLoss> {
    let shape = target.velocity.shape();
    for (what, a) in [
        ("target power", target.power.shape()),
        ("target variation", target.variation.shape()),
        ("predicted velocity", pred.velocity.shape()),
        ("predicted power", pred.power.shape()),
        ("predicted variation", pred.variation.shape()),
        ("mask", mask.shape()),
    ] {
        same_shape(what, shape, a)?;
    }
    let region = match region {
        Some(r) => {
            same_shape("region", shape, r.shape())?;
            r.to_owned()
        }
        None => Array::from_elem(mask.raw_dim(), true),
    };
    let (mut sv, mut sp, mut ss) = (0.0, 0.0, 0.0);
    let (mut nm, mut np) = (0usize, 0usize);
    Zip::from(&pred.velocity)
        .and(&target.velocity)
        .and(&mask)
        .and(&region)
        .for_each(|&p, &t, &m, &r| {
            if m && r {
                sv += (p - t).abs();
                nm += 1;
            }
        });
    Zip::from(&pred.variation)
        .and(&target.variation)
        .and(&mask)
        .and(&region)
        .for_each(|&p, &t, &m, &r| {
            if m && r {
                ss += (p - t).abs();
            }
        });
    Zip::from(&pred.power).and(&target.power).and(&region).for_each(|&p, &t, &r| {
        if r {
            sp += (p - t).abs();
            np += 1;
        }
    });
    if np == 0 {
        return Err(MetricsError::EmptyRegion);
    }
    let masked = |s: f64| (nm > 0).then(|| s / nm as f64);
    Ok(FlowLoss {
        velocity: masked(sv),
        power: sp / np as f64,
        variation: masked(ss),
    })
}

pub const DICE_EPS: f64 = 1e-6;

fn annotated_frames(annotated: &[bool], n_frames: usize) -> Result<Vec<usize>> {
    if annotated.len() != n_frames {
        return Err(MetricsError::ShapeMismatch {
            what: "annotated flags",
            expected: vec![n_frames],
            found: vec![annotated.len()],
        });
    }
    let frames: Vec<usize> = (0..n_frames).filter(|&f| annotated[f]).collect();
    if frames.is_empty() {
        return Err(MetricsError::NoAnnotatedFrames);
    }
    Ok(frames)
}

/// Soft Dice loss over the two foreground classes. `probs` is
/// `[frame][class][row][col]` with 3 classes; `labels` is `[frame][row][col]`
/// in `{0, 1, 2}`. Frames not flagged in `annotated` are ignored.
pub fn masked_dice_loss(probs: ArrayView4<f64>, labels: ArrayView3<u8>, annotated: &[bool]) -> Result<f64> {
    let (t, c, h, w) = probs.dim();
    if c != 3 {
        return Err(MetricsError::Invalid(format!("expected 3 class channels, got {c}")));
    }
    same_shape("labels", &[t, h, w], labels.shape())?;
    let frames = annotated_frames(annotated, t)?;
    let mut total = 0.0;
    for &f in &frames {
        let lab = labels.index_axis(Axis(0), f);
        let mut dice = 0.0;
        for class in 1..=2u8 {
            let p = probs.slice(ndarray::s![f, class as usize, .., ..]);
            let (mut inter, mut sp, mut sr) = (0.0, 0.0, 0.0);
            Zip::from(&p).and(&lab).for_each(|&p, &l| {
                let r = (l == class) as u8 as f64;
                inter += p * r;
                sp += p;
                sr += r;
            });
            dice += (2.0 * inter + DICE_EPS) / (sp + sr + DICE_EPS);
        }
        total += 1.0 - dice / 2.0;
    }
    Ok(total / frames.len() as f64)
}

/// Hard-label foreground Dice in percent, averaged over annotated frames
/// and the two foreground classes. A class absent from both prediction and
/// reference scores 100.
pub fn dice_score(pred: ArrayView3<u8>, labels: ArrayView3<u8>, annotated: &[bool]) -> Result<f64> {
    same_shape("prediction", labels.shape(), pred.shape())?;
    let frames = annotated_frames(annotated, labels.dim().0)?;
    let mut total = 0.0;
    for &f in &frames {
        for class in 1..=2u8 {
            let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
            Zip::from(pred.index_axis(Axis(0), f))
                .and(labels.index_axis(Axis(0), f))
                .for_each(|&p, &l| {
                    let (ip, il) = (p == class, l == class);
                    inter += (ip && il) as usize;
                    a += ip as usize;
                    b += il as usize;
                });
            total += if a + b == 0 { 1.0 } else { 2.0 * inter as f64 / (a + b) as f64 };
        }
    }
    Ok(100.0 * total / (2 * frames.len()) as f64)
}

/// Per-class argmax of `[frame][class][row][col]` probabilities; ties go
/// to the lower class.
pub fn argmax_labels(probs: ArrayView4<f64>) -> Array3<u8> {
    let (t, c, h, w) = probs.dim();
    Array3::from_shape_fn((t, h, w), |(f, r, col)| {
        (1..c).fold(0, |best, k| if probs[[f, k, r, col]] > probs[[f, best, r, col]] { k } else { best }) as u8
    })
}

/// Depth weights growing linearly from 0.001 at the probe to 1.999 at the
/// deepest row, mean 1. Rows mirrored about the middle sum to 2.
pub fn radial_weights(n_rows: usize) -> Result<Vec<f64>> {
    if n_rows < 2 {
        return Err(MetricsError::Invalid("radial weights need at least 2 rows".into()));
    }
    let last = (n_rows - 1) as f64;
    let mut w = vec![1.0; n_rows];
    for i in 0..n_rows / 2 {
        let j = n_rows - 1 - i;
        let t = (j as f64 - i as f64) / last;
        let hi = 1.0 + 0.999 * t;
        w[j] = hi;
        // exact by Sterbenz: hi lies in [1, 2]
        w[i] = 2.0 - hi;
    }
    w[0] = 0.001;
    w[n_rows - 1] = 1.999;
    Ok(w)
}

/// Every output frame is the per-pixel mean over the input frames.
pub fn temporal_mean_baseline<D: Dimension + ndarray::RemoveAxis>(target: ArrayView<f64, D>) -> Result<Array<f64, D>> {
    let n = target.len_of(Axis(0));
    if n == 0 || target.ndim() == 0 {
        return Err(MetricsError::Invalid("baseline needs at least one frame".into()));
    }
    let mean = target.sum_axis(Axis(0)) / n as f64;
    let mut out = Array::zeros(target.raw_dim());
    for mut frame in out.axis_iter_mut(Axis(0)) {
        frame.assign(&mean);
    }
    Ok(out)
}

/// Per-pixel mean over every frame of every training case, for the
/// training-set variant of the baseline.
pub fn training_set_mean<D: Dimension + ndarray::RemoveAxis>(
    cases: &[ArrayView<f64, D>],
) -> Result<Array<f64, D::Smaller>> {
    let first = cases
        .first()
        .ok_or_else(|| MetricsError::Invalid("training set is empty".into()))?;
    let frame_shape = &first.shape()[1..];
    let mut sum = Array::<f64, D::Smaller>::zeros(first.raw_dim().remove_axis(Axis(0)));
    let mut n = 0usize;
    for c in cases {
        same_shape("training frame", frame_shape, &c.shape()[1..])?;
        sum += &c.sum_axis(Axis(0));
        n += c.len_of(Axis(0));
    }
    if n == 0 {
        return Err(MetricsError::Invalid("training set has no frames".into()));
    }
    Ok(sum / n as f64)
}

/// Factor turning radial displacement in samples per frame into m/s.
pub fn velocity_scale(dr: f64, fps: f64) -> Result<f64> {
    if !(dr.is_finite() && dr > 0.0 && fps.is_finite() && fps > 0.0) {
        return Err(MetricsError::Invalid(format!(
            "sample spacing and frame rate must be positive, got dr = {dr}, fps = {fps}"
        )));
    }
    Ok(dr * fps)
}
