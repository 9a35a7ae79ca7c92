use super::{MetricsError, Result};
use crate::container::{Modality, Recording, Stream};
use crate::timing::pair_interleaved;
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    /// Tissue Doppler from B-mode.
    Tissue = 1,
    /// Color Doppler velocity, power and variation.
    Color = 2,
    /// Myocardium and cavity segmentation.
    Segmentation = 3,
}

impl Task {
    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Self::Tissue),
            2 => Some(Self::Color),
            3 => Some(Self::Segmentation),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        self as u8
    }

    /// Stride of sliding clips for this task.
    pub fn clip_stride(self) -> usize {
        match self {
            Self::Tissue | Self::Color => 16,
            Self::Segmentation => 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    pub tissue_fps: (f64, f64),
    pub color_bmode_fps: (f64, f64),
    pub color_ratio: (f64, f64),
    pub color_nyquist: (f64, f64),
    pub slack_factor: f64,
    pub min_frames: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            tissue_fps: (26.0, 33.0),
            color_bmode_fps: (9.0, 13.0),
            color_ratio: (0.45, 1.1),
            color_nyquist: (0.60, 0.61),
            slack_factor: 1.5,
            min_frames: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterDecision {
    pub accept: bool,
    /// Failed predicates, empty when accepted.
    pub reasons: Vec<String>,
}

fn within(x: f64, (lo, hi): (f64, f64)) -> bool {
    x >= lo && x <= hi
}

fn fps_of(s: &Stream) -> f64 {
    s.header.frame_rate().unwrap_or(0.0)
}

/// Task-specific recording predicates: frame rate, Doppler to B-mode frame
/// ratio, Nyquist range, interleave slack and minimum length.
pub fn filter_recording(rec: &Recording, task: Task, params: &FilterParams) -> Result<FilterDecision> {
    let bmode = rec.first_of(Modality::Bmode2d).ok_or(MetricsError::MissingStream("bmode2d"))?;
    let mut reasons = Vec::new();
    let short = |s: &Stream, name: &str, reasons: &mut Vec<String>| {
        if s.header.n_frames() < params.min_frames {
            reasons.push(format!("{name} below {} frames", params.min_frames));
        }
    };
    short(bmode, "B-mode", &mut reasons);
    let fps = fps_of(bmode);
    match task {
        Task::Tissue => {
            let tdi = rec.first_of(Modality::Tdi2d).ok_or(MetricsError::MissingStream("tdi2d"))?;
            short(tdi, "TDI", &mut reasons);
            if !within(fps, params.tissue_fps) {
                reasons.push(format!(
                    "B-mode FPS {fps:.2} out of [{}, {}]",
                    params.tissue_fps.0, params.tissue_fps.1
                ));
            }
            let pairing = pair_interleaved(&bmode.header.timestamps, &tdi.header.timestamps, params.slack_factor)
                .map_err(|e| MetricsError::Invalid(e.to_string()))?;
            if !pairing.all_matched() {
                reasons.push(format!(
                    "{} TDI frames exceed slack {}x median dt",
                    pairing.n_unmatched(),
                    params.slack_factor
                ));
            }
        }
        Task::Color => {
            let color = rec.first_of(Modality::Color2d).ok_or(MetricsError::MissingStream("color2d"))?;
            short(color, "color Doppler", &mut reasons);
            let ratio = color.header.n_frames() as f64 / bmode.header.n_frames() as f64;
            if !within(ratio, params.color_ratio) {
                reasons.push(format!(
                    "Doppler:B-mode frame ratio {ratio:.3} out of [{}, {}]",
                    params.color_ratio.0, params.color_ratio.1
                ));
            }
            if !within(fps, params.color_bmode_fps) {
                reasons.push(format!(
                    "B-mode FPS {fps:.2} out of [{}, {}]",
                    params.color_bmode_fps.0, params.color_bmode_fps.1
                ));
            }
            let nyq = color.header.nyquist_velocity.unwrap_or(f64::NAN);
            if !within(nyq, params.color_nyquist) {
                reasons.push(format!(
                    "Nyquist {nyq} out of [{}, {}]",
                    params.color_nyquist.0, params.color_nyquist.1
                ));
            }
        }
        Task::Segmentation => {
            if rec.annotations.contours.is_empty() {
                reasons.push("no segmentation contours".into());
            }
        }
    }
    Ok(FilterDecision {
        accept: reasons.is_empty(),
        reasons,
    })
}

/// Sliding clip windows `start..start + clip_len` for starts `0, stride,
/// 2 stride, …` that fit inside `n_frames`.
pub fn sample_clips(n_frames: usize, clip_len: usize, stride: usize) -> Vec<Range<usize>> {
    if clip_len == 0 || stride == 0 {
        return Vec::new();
    }
    (0..)
        .map(|k| k * stride)
        .take_while(|&s| s + clip_len <= n_frames)
        .map(|s| s..s + clip_len)
        .collect()
}
