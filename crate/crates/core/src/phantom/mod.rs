//! Synthetic exams with known truth: a contracting ellipsoidal left
//! ventricle imaged in B-mode and tissue Doppler, a pulsed jet in color
//! Doppler, an optional 3D volume with cavity meshes and an optional
//! ECG-gated set of 3D sub-sectors for stitching.

mod heart;
mod signal;
mod truth_loss;

pub use heart::{contraction, radial, wrap, Beats, Heart, Jet, Texture};
pub use signal::{band_limited_noise, beat_schedule, ecg_value, rms, synth_ecg};
pub use truth_loss::{ground_truth_loss, GroundTruthLoss, PredictedFields, TruthFields};

use crate::annotations::{
    curve_csv, AnnotationSet, Chamber, ContourSeries, CoordinateFrame, Layer, MarkerKind, MeshSeries, SparseMarker,
    View,
};
use crate::container::{
    decode_stream, encode_stream, write_atomic, BeamBox, ContainerError, Exam, ExamManifest, Geometry, Modality,
    Recording, Stream,
};
use crate::geometry::{SectorGeometry2D, SphericalGeometry3D};
use crate::timing::{RPeakList, TimingError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom: {0}")]
    Invalid(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Timing(#[from] TimingError),
}

pub type Result<T> = std::result::Result<T, PhantomError>;

pub const TISSUE_ID: &str = "tissue";
pub const COLOR_ID: &str = "color";
pub const VOLUME_ID: &str = "volume";
pub const STITCH_ID: &str = "stitch";

/// Vertices per annotated contour.
pub const CONTOUR_VERTICES: usize = 64;
/// Subdivision level of the cavity meshes (1280 triangles).
pub const MESH_LEVEL: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub seed: u64,
    pub exam_id: String,
    pub patient_key: String,
    pub sector: SectorGeometry2D,
    pub volume: SphericalGeometry3D,
    pub heart_rate_bpm: f64,
    /// Length of the 2D recordings in mean RR intervals.
    pub n_beats: usize,
    /// Relative spread of RR intervals.
    pub rr_jitter: f64,
    pub tissue_fps: f64,
    pub color_bmode_fps: f64,
    /// B-mode frames per color-Doppler frame.
    pub color_interleave: usize,
    pub volume_fps: f64,
    pub volume_beats: usize,
    /// Inward endocardial displacement at peak contraction, metres.
    pub motion_amplitude: f64,
    /// Peak jet speed, m/s.
    pub jet_peak: f64,
    pub tdi_nyquist: f64,
    pub color_nyquist: f64,
    /// Image noise relative to each stream's power; `None` for noiseless.
    pub snr_db: Option<f64>,
    pub ecg_rate: f64,
    pub ecg_snr_db: Option<f64>,
    pub include_volume: bool,
    /// Number of gated 3D sub-sectors; 0 leaves out the stitching recording.
    pub stitch_subsectors: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let span_el = 50f64.to_radians();
        Self {
            seed: 0,
            exam_id: "phantom".into(),
            patient_key: "phantom".into(),
            sector: SectorGeometry2D::symmetric(75f64.to_radians(), 64, 0.002, 0.12, 192),
            volume: SphericalGeometry3D {
                azimuth: SectorGeometry2D::symmetric(60f64.to_radians(), 24, 0.002, 0.12, 64),
                phi0: -span_el / 2.0,
                dphi: span_el / 11.0,
                n_planes: 12,
            },
            heart_rate_bpm: 75.0,
            n_beats: 8,
            rr_jitter: 0.0,
            tissue_fps: 30.0,
            color_bmode_fps: 12.0,
            color_interleave: 2,
            volume_fps: 20.0,
            volume_beats: 2,
            motion_amplitude: 0.006,
            jet_peak: 0.9,
            tdi_nyquist: 0.05,
            color_nyquist: 0.6,
            snr_db: Some(30.0),
            ecg_rate: 600.0,
            ecg_snr_db: Some(30.0),
            include_volume: true,
            stitch_subsectors: 3,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PhantomError::Invalid(m));
        if !(30.0..=180.0).contains(&self.heart_rate_bpm) {
            return bad(format!("heart rate {} bpm out of [30, 180]", self.heart_rate_bpm));
        }
        if self.n_beats < 2 || self.volume_beats < 1 {
            return bad("need at least 2 beats per 2D recording and 1 per volume".into());
        }
        for (name, v) in [
            ("tissue_fps", self.tissue_fps),
            ("color_bmode_fps", self.color_bmode_fps),
            ("volume_fps", self.volume_fps),
            ("ecg_rate", self.ecg_rate),
            ("tdi_nyquist", self.tdi_nyquist),
            ("color_nyquist", self.color_nyquist),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.color_interleave == 0 {
            return bad("color_interleave must be at least 1".into());
        }
        if !(0.0..=Heart::MAX_AMPLITUDE).contains(&self.motion_amplitude) {
            return bad(format!(
                "motion amplitude {} m out of [0, {}]",
                self.motion_amplitude,
                Heart::MAX_AMPLITUDE
            ));
        }
        if !(self.jet_peak.is_finite() && self.jet_peak >= 0.0) {
            return bad("jet peak must be non-negative".into());
        }
        if !(0.0..=0.5).contains(&self.rr_jitter) {
            return bad("rr_jitter out of [0, 0.5]".into());
        }
        if self.snr_db.is_some_and(|v| !v.is_finite()) || self.ecg_snr_db.is_some_and(|v| !v.is_finite()) {
            return bad("SNR must be finite".into());
        }
        self.sector.validate().map_err(|e| PhantomError::Invalid(e.to_string()))?;
        self.volume.validate().map_err(|e| PhantomError::Invalid(e.to_string()))?;
        if self.stitch_subsectors > 6 || self.stitch_subsectors > self.volume.azimuth.n_beams {
            return bad("stitch_subsectors must be at most 6 and at most the beam count".into());
        }
        if !crate::container::is_safe_name(&self.exam_id) {
            return bad(format!("exam id {:?} is not file-name safe", self.exam_id));
        }
        Ok(())
    }

    pub fn rr(&self) -> f64 {
        60.0 / self.heart_rate_bpm
    }
}

/// Truth of one recording: noiseless fields stored like streams, the R-peak
/// times and per-frame analytic curves.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecording {
    pub id: String,
    pub r_peaks: RPeakList,
    pub fields: BTreeMap<String, Stream>,
    /// Curve name to `(times, values)`.
    pub curves: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub recordings: Vec<TruthRecording>,
}

impl GroundTruth {
    pub fn recording(&self, id: &str) -> Option<&TruthRecording> {
        self.recordings.iter().find(|r| r.id == id)
    }

    /// Write `dir/<recording>/{r_peaks.csv, <field>.exfl, <curve>.csv}`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for r in &self.recordings {
            let d = dir.join(&r.id);
            std::fs::create_dir_all(&d).map_err(|e| ContainerError::Io {
                path: d.clone(),
                source: e,
            })?;
            write_atomic(&d.join("r_peaks.csv"), r.r_peaks.to_csv().as_bytes())?;
            for (name, s) in &r.fields {
                write_atomic(&d.join(format!("{name}.exfl")), &encode_stream(&s.header, &s.payload))?;
            }
            for (name, (t, v)) in &r.curves {
                write_atomic(&d.join(format!("{name}.csv")), curve_csv(t, v).as_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let io = |path: &Path, e| ContainerError::Io {
            path: path.to_owned(),
            source: e,
        };
        let mut recordings = Vec::new();
        let mut subdirs: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        for d in subdirs {
            let id = d.file_name().unwrap().to_string_lossy().into_owned();
            let peaks_path = d.join("r_peaks.csv");
            let text = std::fs::read_to_string(&peaks_path).map_err(|e| io(&peaks_path, e))?;
            let r_peaks = RPeakList::from_csv(&text)?;
            let mut fields = BTreeMap::new();
            let mut curves = BTreeMap::new();
            let mut files: Vec<_> = std::fs::read_dir(&d)
                .map_err(|e| io(&d, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            files.sort();
            for f in files {
                let stem = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                match f.extension().and_then(|e| e.to_str()) {
                    Some("exfl") => {
                        let bytes = std::fs::read(&f).map_err(|e| io(&f, e))?;
                        let (header, payload) = decode_stream(&bytes, &f)?;
                        fields.insert(
                            stem,
                            Stream {
                                header,
                                payload,
                                color_box: None,
                            },
                        );
                    }
                    Some("csv") if stem != "r_peaks" => {
                        let text = std::fs::read_to_string(&f).map_err(|e| io(&f, e))?;
                        curves.insert(stem, parse_curve(&text).map_err(PhantomError::Invalid)?);
                    }
                    _ => {}
                }
            }
            recordings.push(TruthRecording {
                id,
                r_peaks,
                fields,
                curves,
            });
        }
        Ok(Self { recordings })
    }
}

fn parse_curve(text: &str) -> std::result::Result<(Vec<f64>, Vec<f64>), String> {
    let mut t = Vec::new();
    let mut v = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(format!("bad curve row {line:?}"));
        }
        let p = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
        t.push(p(cols[1])?);
        v.push(p(cols[2])?);
    }
    Ok((t, v))
}

/// Ellipse perimeter by Ramanujan's second approximation.
pub fn ellipse_perimeter(a: f64, b: f64) -> f64 {
    let h = ((a - b) / (a + b)).powi(2);
    PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()))
}

fn frame_times(fps: f64, offset: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + offset) / fps).collect()
}

fn sector_points(g: &SectorGeometry2D) -> Vec<[f64; 3]> {
    let mut v = Vec::with_capacity(g.n_beams * g.n_samples);
    for b in 0..g.n_beams {
        for s in 0..g.n_samples {
            let (x, z) = g.beam_to_cartesian(b as f64, s as f64);
            v.push([x, 0.0, z]);
        }
    }
    v
}

fn volume_points(g: &SphericalGeometry3D, beams: std::ops::Range<usize>) -> Vec<[f64; 3]> {
    let mut v = Vec::new();
    for p in 0..g.n_planes {
        for b in beams.clone() {
            for s in 0..g.azimuth.n_samples {
                let (x, y, z) = g.to_cartesian(p as f64, b as f64, s as f64);
                v.push([x, y, z]);
            }
        }
    }
    v
}

fn sample<F: Fn([f64; 3], f64) -> f64>(points: &[[f64; 3]], times: &[f64], f: F) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len() * times.len());
    for &t in times {
        out.extend(points.iter().map(|&p| f(p, t)));
    }
    out
}

/// Band-limited noise for `n_frames` frames of `frame` size scaled to
/// `snr_db` below the power of `clean`; zeros when `snr_db` is `None`.
fn noise_for<R: Rng>(rng: &mut R, clean: &[f64], frame: (usize, usize), snr_db: Option<f64>) -> Vec<f64> {
    let Some(db) = snr_db else {
        return vec![0.0; clean.len()];
    };
    let sigma = rms(clean) / 10f64.powf(db / 20.0);
    let per = frame.0 * frame.1;
    let mut out = Vec::with_capacity(clean.len());
    for _ in 0..clean.len() / per {
        out.extend(band_limited_noise(rng, frame).iter().map(|v| v * sigma));
    }
    out
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn with_shape(n_frames: usize, frame: &[usize]) -> Vec<usize> {
    let mut s = vec![n_frames];
    s.extend_from_slice(frame);
    s
}

fn schedule<R: Rng>(rng: &mut R, cfg: &PhantomConfig, duration: f64) -> Beats {
    let rr = cfg.rr();
    let offset = rng.random_range(0.1..0.9) * rr;
    beat_schedule(rng, rr, cfg.rr_jitter, offset, duration)
}

fn peaks_inside(beats: &Beats, duration: f64) -> Result<RPeakList> {
    Ok(RPeakList::new(beats.inside(duration))?)
}

/// Generate a full exam and its truth. The same configuration always gives
/// identical bytes.
pub fn generate_exam(cfg: &PhantomConfig) -> Result<(Exam, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let texture = Texture::random(&mut rng, 32);
    let mut recordings = Vec::new();
    let mut truth = Vec::new();

    let (r, t) = tissue_recording(&mut rng, cfg, &texture)?;
    recordings.push(r);
    truth.push(t);
    let (r, t) = color_recording(&mut rng, cfg, &texture)?;
    recordings.push(r);
    truth.push(t);
    if cfg.include_volume {
        let (r, t) = volume_recording(&mut rng, cfg, &texture)?;
        recordings.push(r);
        truth.push(t);
    }
    if cfg.stitch_subsectors > 0 {
        let (r, t) = stitch_recording(&mut rng, cfg, &texture)?;
        recordings.push(r);
        truth.push(t);
    }
    let manifest = ExamManifest {
        exam_id: cfg.exam_id.clone(),
        recording_ids: recordings.iter().map(|r| r.id.clone()).collect(),
        patient_key: Some(cfg.patient_key.clone()),
        fold: None,
    };
    Ok((Exam { manifest, recordings }, GroundTruth { recordings: truth }))
}

fn tissue_recording(rng: &mut ChaCha8Rng, cfg: &PhantomConfig, tex: &Texture) -> Result<(Recording, TruthRecording)> {
    let duration = cfg.n_beats as f64 * cfg.rr();
    let beats = schedule(rng, cfg, duration);
    let heart = Heart::new(cfg.motion_amplitude, beats.clone(), tex.clone());
    let g = &cfg.sector;
    let n = (duration * cfg.tissue_fps).floor() as usize;
    let tb = frame_times(cfg.tissue_fps, 0.0, n);
    let td = frame_times(cfg.tissue_fps, 0.25, n);
    let pts = sector_points(g);
    let frame = (g.n_beams, g.n_samples);
    let shape = with_shape(n, &g.frame_shape());

    let b_clean = sample(&pts, &tb, |p, t| heart.bmode(p, t));
    let b_noise = noise_for(rng, &b_clean, frame, cfg.snr_db);
    let b_meas: Vec<f64> = b_clean.iter().zip(&b_noise).map(|(c, e)| (c + e).clamp(0.0, 1.0)).collect();
    let v = sample(&pts, &td, |p, t| heart.tissue_doppler(p, t));
    let v_noise = noise_for(rng, &v, frame, cfg.snr_db);
    let nu = cfg.tdi_nyquist;
    let v_meas: Vec<f64> = v.iter().zip(&v_noise).map(|(c, e)| wrap(c + e, nu)).collect();
    let v_wrapped: Vec<f64> = v.iter().map(|&c| wrap(c, nu)).collect();

    let stream = |m, ts: &Vec<f64>, data: &[f64], nyq| Stream::new_f32(m, shape.clone(), ts.clone(), to_f32(data), nyq, Some(0));
    let streams = vec![
        stream(Modality::Bmode2d, &tb, &b_meas, None),
        stream(Modality::Tdi2d, &td, &v_meas, Some(nu)),
    ];

    let peaks = peaks_inside(&beats, duration)?;
    let p = peaks.times();
    if p.len() < 2 {
        return Err(PhantomError::Invalid("tissue recording holds fewer than two R-peaks".into()));
    }
    let k = if p.len() >= 3 { 1 } else { 0 };
    let annotated: Vec<u32> = (0..n).filter(|&i| tb[i] >= p[k] && tb[i] < p[k + 1]).map(|i| i as u32).collect();
    let series = |layer, epi| ContourSeries {
        chamber: Chamber::Lv,
        layer,
        view: View::A4c,
        stream: 0,
        frame_indices: annotated.clone(),
        frames: annotated
            .iter()
            .map(|&i| heart.contour(tb[i as usize], epi, CONTOUR_VERTICES))
            .collect(),
    };
    let annotations = AnnotationSet {
        contours: vec![series(Layer::Endocardial, false), series(Layer::Epicardial, true)],
        meshes: Vec::new(),
        markers: vec![SparseMarker {
            kind: MarkerKind::SampleVolume,
            frame: CoordinateFrame::Cartesian,
            coords: vec![0.0, Heart::CENTER[2] - (Heart::R_IN[2] + Heart::R_OUT[2]) / 2.0],
            label: "apical wall".into(),
            stream: 1,
            frame_index: None,
        }],
    };
    let ecg = synth_ecg(rng, &beats, duration, cfg.ecg_rate, cfg.ecg_snr_db);

    let perimeter = |t: f64| {
        let (a, b) = heart.endo_axes_2d(t);
        ellipse_perimeter(a, b)
    };
    let p_ref = perimeter(tb[annotated[0] as usize]);
    let strain: Vec<f64> = tb.iter().map(|&t| 100.0 * (perimeter(t) - p_ref) / p_ref).collect();
    let mut curves = BTreeMap::new();
    curves.insert("strain_pct".to_owned(), (tb.clone(), strain));
    let mut fields = BTreeMap::new();
    fields.insert("bmode".to_owned(), stream(Modality::Bmode2d, &tb, &b_clean, None));
    fields.insert("tdi".to_owned(), stream(Modality::Tdi2d, &td, &v_wrapped, Some(nu)));
    fields.insert("tdi_unwrapped".to_owned(), stream(Modality::Tdi2d, &td, &v, Some(nu)));

    let rec = Recording {
        id: TISSUE_ID.into(),
        streams,
        ecg,
        geometries: vec![Geometry::Sector2d(*g)],
        annotations,
    };
    Ok((
        rec,
        TruthRecording {
            id: TISSUE_ID.into(),
            r_peaks: peaks,
            fields,
            curves,
        },
    ))
}

/// Beamspace box enclosing the jet with a few millimetres of margin.
fn jet_box(g: &SectorGeometry2D, jet: &Jet) -> BeamBox {
    let (mut b0, mut b1, mut s0, mut s1) = (usize::MAX, 0, usize::MAX, 0);
    for b in 0..g.n_beams {
        for s in 0..g.n_samples {
            let (x, z) = g.beam_to_cartesian(b as f64, s as f64);
            if x.abs() <= 2.0 * jet.half_width && (z - jet.center_z).abs() <= jet.half_length + 0.004 {
                b0 = b0.min(b);
                b1 = b1.max(b + 1);
                s0 = s0.min(s);
                s1 = s1.max(s + 1);
            }
        }
    }
    BeamBox {
        beams: (b0, b1),
        samples: (s0, s1),
    }
}

fn color_recording(rng: &mut ChaCha8Rng, cfg: &PhantomConfig, tex: &Texture) -> Result<(Recording, TruthRecording)> {
    let duration = cfg.n_beats as f64 * cfg.rr();
    let beats = schedule(rng, cfg, duration);
    let heart = Heart::new(cfg.motion_amplitude, beats.clone(), tex.clone());
    let jet = Jet::for_heart(&heart, cfg.jet_peak);
    let g = &cfg.sector;
    let nb = (duration * cfg.color_bmode_fps).floor() as usize;
    let k = cfg.color_interleave;
    let nc = nb / k;
    if nc == 0 {
        return Err(PhantomError::Invalid("color recording too short for one Doppler frame".into()));
    }
    let tb = frame_times(cfg.color_bmode_fps, 0.0, nb);
    let tc: Vec<f64> = (0..nc).map(|j| (k as f64 * j as f64 + 0.25) / cfg.color_bmode_fps).collect();
    let pts = sector_points(g);
    let frame = (g.n_beams, g.n_samples);
    let bx = jet_box(g, &jet);
    let in_box: Vec<bool> = (0..pts.len()).map(|i| bx.contains(i / g.n_samples, i % g.n_samples)).collect();

    let b_clean = sample(&pts, &tb, |p, t| heart.bmode(p, t));
    let b_noise = noise_for(rng, &b_clean, frame, cfg.snr_db);
    let b_meas: Vec<f64> = b_clean.iter().zip(&b_noise).map(|(c, e)| (c + e).clamp(0.0, 1.0)).collect();

    let per = pts.len();
    let idx = |i: usize| i % per;
    let vel = sample(&pts, &tc, |p, t| radial(p, jet.velocity(p, heart.beats.phase(t).0)));
    let vel: Vec<f64> = vel.iter().enumerate().map(|(i, &v)| if in_box[idx(i)] { v } else { 0.0 }).collect();
    let pow = sample(&pts, &tc, |p, _| {
        if jet.contains(p) {
            let l = (p[0] * p[0] + p[1] * p[1]) / (jet.half_width * jet.half_width);
            0.8 + 0.15 * (1.0 - l)
        } else {
            0.05
        }
    });
    let pow: Vec<f64> = pow.iter().enumerate().map(|(i, &v)| if in_box[idx(i)] { v } else { 0.0 }).collect();
    let v_noise = noise_for(rng, &vel, frame, cfg.snr_db);
    let p_noise = noise_for(rng, &pow, frame, cfg.snr_db);
    let nu = cfg.color_nyquist;
    let interleave = |v: &[f64], p: &[f64]| -> Vec<f32> {
        let mut out = Vec::with_capacity(2 * v.len());
        for f in 0..nc {
            out.extend(v[f * per..(f + 1) * per].iter().map(|&x| x as f32));
            out.extend(p[f * per..(f + 1) * per].iter().map(|&x| x as f32));
        }
        out
    };
    let boxed = |i: usize, x: f64| if in_box[idx(i)] { x } else { 0.0 };
    let v_meas: Vec<f64> = (0..vel.len()).map(|i| boxed(i, wrap(vel[i] + v_noise[i], nu))).collect();
    let p_meas: Vec<f64> = (0..pow.len()).map(|i| boxed(i, (pow[i] + p_noise[i]).max(0.0))).collect();
    let v_wrapped: Vec<f64> = (0..vel.len()).map(|i| boxed(i, wrap(vel[i], nu))).collect();

    let c_shape = with_shape(nc, &[2, g.n_beams, g.n_samples]);
    let color = |data: Vec<f32>| {
        let mut s = Stream::new_f32(Modality::Color2d, c_shape.clone(), tc.clone(), data, Some(nu), Some(0));
        s.color_box = Some(bx);
        s
    };
    let b_shape = with_shape(nb, &g.frame_shape());
    let bmode = |data: &[f64]| Stream::new_f32(Modality::Bmode2d, b_shape.clone(), tb.clone(), to_f32(data), None, Some(0));
    let streams = vec![bmode(&b_meas), color(interleave(&v_meas, &p_meas))];
    let ecg = synth_ecg(rng, &beats, duration, cfg.ecg_rate, cfg.ecg_snr_db);
    let mut fields = BTreeMap::new();
    fields.insert("bmode".to_owned(), bmode(&b_clean));
    fields.insert("color".to_owned(), color(interleave(&v_wrapped, &pow)));
    fields.insert("color_unwrapped".to_owned(), color(interleave(&vel, &pow)));
    let rec = Recording {
        id: COLOR_ID.into(),
        streams,
        ecg,
        geometries: vec![Geometry::Sector2d(*g)],
        annotations: AnnotationSet::default(),
    };
    Ok((
        rec,
        TruthRecording {
            id: COLOR_ID.into(),
            r_peaks: peaks_inside(&beats, duration)?,
            fields,
            curves: BTreeMap::new(),
        },
    ))
}

fn volume_recording(rng: &mut ChaCha8Rng, cfg: &PhantomConfig, tex: &Texture) -> Result<(Recording, TruthRecording)> {
    let duration = cfg.volume_beats as f64 * cfg.rr();
    let beats = schedule(rng, cfg, duration);
    let heart = Heart::new(cfg.motion_amplitude, beats.clone(), tex.clone());
    let g = &cfg.volume;
    let n = ((duration * cfg.volume_fps).floor() as usize).max(2);
    let ts = frame_times(cfg.volume_fps, 0.0, n);
    let pts = volume_points(g, 0..g.azimuth.n_beams);
    let clean = sample(&pts, &ts, |p, t| heart.bmode(p, t));
    let noise = noise_for(rng, &clean, (g.n_planes * g.azimuth.n_beams, g.azimuth.n_samples), cfg.snr_db);
    let meas: Vec<f64> = clean.iter().zip(&noise).map(|(c, e)| (c + e).clamp(0.0, 1.0)).collect();
    let shape = with_shape(n, &g.frame_shape());
    let stream = |d: &[f64]| Stream::new_f32(Modality::Bmode3d, shape.clone(), ts.clone(), to_f32(d), None, Some(0));
    let meshes = MeshSeries {
        chamber: Chamber::Lv,
        stream: 0,
        frame_indices: (0..n as u32).collect(),
        frames: ts.iter().map(|&t| heart.cavity_mesh(t, MESH_LEVEL)).collect(),
    };
    let ecg = synth_ecg(rng, &beats, duration, cfg.ecg_rate, cfg.ecg_snr_db);
    let mut fields = BTreeMap::new();
    fields.insert("bmode".to_owned(), stream(&clean));
    let mut curves = BTreeMap::new();
    curves.insert(
        "volume_ml".to_owned(),
        (ts.clone(), ts.iter().map(|&t| heart.cavity_volume_ml(t)).collect()),
    );
    let rec = Recording {
        id: VOLUME_ID.into(),
        streams: vec![stream(&meas)],
        ecg,
        geometries: vec![Geometry::Spherical3d(*g)],
        annotations: AnnotationSet {
            meshes: vec![meshes],
            ..Default::default()
        },
    };
    Ok((
        rec,
        TruthRecording {
            id: VOLUME_ID.into(),
            r_peaks: peaks_inside(&beats, duration)?,
            fields,
            curves,
        },
    ))
}

/// Contiguous beam ranges splitting `n` beams into `k` near-equal parts.
pub fn split_beams(n: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    (0..k).map(|i| (i * n / k)..((i + 1) * n / k)).collect()
}

/// Geometry of beams `range` of `g`.
pub fn sub_sector(g: &SphericalGeometry3D, range: std::ops::Range<usize>) -> SphericalGeometry3D {
    let mut s = *g;
    s.azimuth.theta0 = g.azimuth.theta_at(range.start as f64);
    s.azimuth.n_beams = range.len();
    s
}

/// One sub-sector per beat: sub-sector `i` is acquired over the beat that
/// starts at the `i`-th R-peak inside the recording. The truth field
/// `direct` is the wide sector sampled at the stitching phase grid.
fn stitch_recording(rng: &mut ChaCha8Rng, cfg: &PhantomConfig, tex: &Texture) -> Result<(Recording, TruthRecording)> {
    let k = cfg.stitch_subsectors;
    let rr = cfg.rr();
    let long = (k as f64 + 3.0) * rr * 4.0;
    let mut beats = schedule(rng, cfg, long);
    let first = beats.times.iter().position(|&t| t >= 0.0).unwrap();
    let duration = beats.times[first + k] + 0.5 * (beats.times[first + k + 1] - beats.times[first + k]);
    let keep = beats.times.partition_point(|&t| t < duration) + 1;
    beats.times.truncate(keep);
    let heart = Heart::new(cfg.motion_amplitude, beats.clone(), tex.clone());
    let g = &cfg.volume;
    let ranges = split_beams(g.azimuth.n_beams, k);

    let mut streams = Vec::new();
    let mut geometries = Vec::new();
    let mut frames_per_beat = 0;
    for (i, range) in ranges.iter().enumerate() {
        let (t0, t1) = (beats.times[first + i], beats.times[first + i + 1]);
        let m0 = (t0 * cfg.volume_fps).ceil() as usize;
        let ts: Vec<f64> = (m0..)
            .map(|m| m as f64 / cfg.volume_fps)
            .take_while(|&t| t < t1)
            .filter(|&t| t >= t0)
            .collect();
        frames_per_beat = frames_per_beat.max(ts.len());
        let sub = sub_sector(g, range.clone());
        let pts = volume_points(g, range.clone());
        let clean = sample(&pts, &ts, |p, t| heart.bmode(p, t));
        let noise = noise_for(rng, &clean, (g.n_planes * range.len(), g.azimuth.n_samples), cfg.snr_db);
        let meas: Vec<f64> = clean.iter().zip(&noise).map(|(c, e)| (c + e).clamp(0.0, 1.0)).collect();
        streams.push(Stream::new_f32(
            Modality::Bmode3d,
            with_shape(ts.len(), &sub.frame_shape()),
            ts,
            to_f32(&meas),
            None,
            Some(i as u32),
        ));
        geometries.push(Geometry::Spherical3d(sub));
    }
    geometries.push(Geometry::Spherical3d(*g));
    let l = frames_per_beat;
    let (b0, b1) = (beats.times[first], beats.times[first + 1]);
    let phases: Vec<f64> = (0..l).map(|j| j as f64 / l as f64).collect();
    let direct_t: Vec<f64> = phases.iter().map(|ph| b0 + ph * (b1 - b0)).collect();
    let pts = volume_points(g, 0..g.azimuth.n_beams);
    let direct = sample(&pts, &direct_t, |p, t| heart.bmode(p, t));
    let mut fields = BTreeMap::new();
    fields.insert(
        "direct".to_owned(),
        Stream::new_f32(
            Modality::Bmode3d,
            with_shape(l, &g.frame_shape()),
            phases,
            to_f32(&direct),
            None,
            Some(k as u32),
        ),
    );
    let ecg = synth_ecg(rng, &beats, duration, cfg.ecg_rate, cfg.ecg_snr_db);
    let rec = Recording {
        id: STITCH_ID.into(),
        streams,
        ecg,
        geometries,
        annotations: AnnotationSet::default(),
    };
    Ok((
        rec,
        TruthRecording {
            id: STITCH_ID.into(),
            r_peaks: peaks_inside(&beats, duration)?,
            fields,
            curves: BTreeMap::new(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{mesh_volume, strain_curve};
    use crate::container::validate_recording;
    use crate::timing::detect_r_peaks;

    fn small(seed: u64) -> PhantomConfig {
        PhantomConfig {
            seed,
            sector: SectorGeometry2D::symmetric(75f64.to_radians(), 32, 0.002, 0.12, 96),
            n_beats: 4,
            include_volume: false,
            stitch_subsectors: 0,
            ..Default::default()
        }
    }

    fn field(t: &GroundTruth, rec: &str, name: &str) -> Vec<f32> {
        t.recording(rec).unwrap().fields[name].to_f32()
    }

    #[test]
    fn recordings_validate() {
        let (exam, truth) = generate_exam(&PhantomConfig {
            include_volume: true,
            stitch_subsectors: 3,
            ..small(1)
        })
        .unwrap();
        assert_eq!(exam.recordings.len(), 4);
        for r in &exam.recordings {
            assert!(validate_recording(r).is_empty(), "{}: {:?}", r.id, validate_recording(r));
        }
        assert_eq!(truth.recordings.len(), 4);
    }

    #[test]
    fn no_motion_means_no_tissue_doppler_and_no_strain() {
        let (exam, truth) = generate_exam(&PhantomConfig {
            motion_amplitude: 0.0,
            snr_db: None,
            ..small(2)
        })
        .unwrap();
        assert!(field(&truth, TISSUE_ID, "tdi_unwrapped").iter().all(|&v| v == 0.0));
        let endo = &exam.recordings[0].annotations.contours[0];
        assert!(strain_curve(&endo.frames, 0).unwrap().iter().all(|&s| s == 0.0));
        let (_, strain) = &truth.recording(TISSUE_ID).unwrap().curves["strain_pct"];
        assert!(strain.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn noiseless_streams_equal_truth() {
        let (exam, truth) = generate_exam(&PhantomConfig {
            snr_db: None,
            ..small(3)
        })
        .unwrap();
        assert_eq!(exam.recordings[0].streams[1].to_f32(), field(&truth, TISSUE_ID, "tdi"));
        assert_eq!(exam.recordings[1].streams[1].to_f32(), field(&truth, COLOR_ID, "color"));
    }

    #[test]
    fn jet_wraps_and_unwraps() {
        let cfg = PhantomConfig {
            jet_peak: 1.2,
            snr_db: None,
            ..small(4)
        };
        let (_, truth) = generate_exam(&cfg).unwrap();
        let w = field(&truth, COLOR_ID, "color");
        let u = field(&truth, COLOR_ID, "color_unwrapped");
        let nu = cfg.color_nyquist;
        let per = cfg.sector.n_beams * cfg.sector.n_samples;
        let velocity = |v: &[f32]| -> Vec<f32> { v.chunks(per).step_by(2).flatten().copied().collect() };
        let (w, u) = (velocity(&w), velocity(&u));
        let mut aliased = 0;
        for (a, b) in w.iter().zip(&u) {
            let (a, b) = (*a as f64, *b as f64);
            assert!((-nu..nu).contains(&a) || a == 0.0);
            let k = ((b - a) / (2.0 * nu)).round();
            assert!((b - a - 2.0 * k * nu).abs() < 1e-6);
            aliased += (k != 0.0) as usize;
        }
        assert!(aliased > 0);
    }

    #[test]
    fn doppler_is_radial_projection_of_the_field() {
        let cfg = PhantomConfig {
            snr_db: None,
            ..small(5)
        };
        let (exam, truth) = generate_exam(&cfg).unwrap();
        let rec = &exam.recordings[0];
        let u = field(&truth, TISSUE_ID, "tdi_unwrapped");
        let ts = &rec.streams[1].header.timestamps;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let tex = Texture::random(&mut rng, 32);
        let beats = schedule(&mut rng, &cfg, cfg.n_beats as f64 * cfg.rr());
        let heart = Heart::new(cfg.motion_amplitude, beats, tex);
        let g = &cfg.sector;
        let mut nonzero = 0;
        for f in [0usize, 7, 19] {
            for b in (0..g.n_beams).step_by(3) {
                for s in (0..g.n_samples).step_by(5) {
                    let (x, z) = g.beam_to_cartesian(b as f64, s as f64);
                    let p = [x, 0.0, z];
                    let t = ts[f];
                    let want = if heart.in_myocardium(p, t) {
                        let v = heart.velocity(p, t);
                        (v[0] * x + v[2] * z) / (x * x + z * z).sqrt()
                    } else {
                        0.0
                    };
                    let got = u[(f * g.n_beams + b) * g.n_samples + s] as f64;
                    assert!((got - want).abs() < 1e-6, "{got} {want}");
                    nonzero += (want != 0.0) as usize;
                }
            }
        }
        assert!(nonzero > 10);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_exam(&small(7)).unwrap();
        let b = generate_exam(&small(7)).unwrap();
        assert_eq!(a.0.recordings, b.0.recordings);
        assert_eq!(a.1, b.1);
        let c = generate_exam(&small(8)).unwrap();
        assert_ne!(a.0.recordings[0].streams[0], c.0.recordings[0].streams[0]);
    }

    #[test]
    fn stored_peaks_sit_on_the_ecg_maximum() {
        let cfg = PhantomConfig {
            ecg_snr_db: None,
            ..small(9)
        };
        let (exam, truth) = generate_exam(&cfg).unwrap();
        let ecg = &exam.recordings[0].ecg;
        for &r in truth.recording(TISSUE_ID).unwrap().r_peaks.times() {
            let i = (r * ecg.rate).round() as usize;
            let lo = i.saturating_sub(30);
            let hi = (i + 30).min(ecg.samples.len() - 1);
            let best = (lo..=hi).max_by(|&a, &b| ecg.samples[a].total_cmp(&ecg.samples[b])).unwrap();
            assert!(best.abs_diff(i) <= 1, "{r}");
        }
        let det = detect_r_peaks(ecg).unwrap();
        assert_eq!(det.peaks.len(), truth.recording(TISSUE_ID).unwrap().r_peaks.len());
    }

    #[test]
    fn contour_strain_follows_the_ellipse() {
        let (exam, truth) = generate_exam(&small(10)).unwrap();
        let endo = &exam.recordings[0].annotations.contours[0];
        let measured = strain_curve(&endo.frames, 0).unwrap();
        let (_, analytic) = &truth.recording(TISSUE_ID).unwrap().curves["strain_pct"];
        for (i, &f) in endo.frame_indices.iter().enumerate() {
            assert!((measured[i] - analytic[f as usize]).abs() < 0.05);
        }
        assert!(measured.iter().cloned().fold(0.0, f64::min) < -10.0);
    }

    #[test]
    fn mesh_volume_follows_the_ellipsoid() {
        let (exam, truth) = generate_exam(&PhantomConfig {
            include_volume: true,
            ..small(11)
        })
        .unwrap();
        let meshes = &exam.recordings[2].annotations.meshes[0];
        let (_, analytic) = &truth.recording(VOLUME_ID).unwrap().curves["volume_ml"];
        for (m, v) in meshes.frames.iter().zip(analytic) {
            let got = mesh_volume(m).unwrap().ml;
            assert!((got - v).abs() / v < 0.02, "{got} {v}");
        }
    }

    #[test]
    fn truth_round_trips_through_disk() {
        let (_, truth) = generate_exam(&small(12)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        truth.save(dir.path()).unwrap();
        let back = GroundTruth::load(dir.path()).unwrap();
        assert_eq!(back.recordings.len(), truth.recordings.len());
        for b in &truth.recordings {
            let a = back.recording(&b.id).unwrap();
            assert_eq!(a.r_peaks, b.r_peaks);
            assert_eq!(a.curves, b.curves);
            for (k, s) in &b.fields {
                assert_eq!(a.fields[k].header, s.header);
                assert_eq!(a.fields[k].payload, s.payload);
            }
        }
    }

    #[test]
    fn config_limits() {
        let bad = PhantomConfig {
            heart_rate_bpm: 200.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(PhantomConfig::default().validate().is_ok());
    }

    #[test]
    fn perimeter_of_circle() {
        assert!((ellipse_perimeter(1.0, 1.0) - 2.0 * PI).abs() < 1e-15);
    }
}
