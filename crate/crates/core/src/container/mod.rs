//! The EXFL container: exams, recordings, modality streams, ECG traces and
//! annotations stored as little-endian blobs plus JSON manifests.
//!
//! An exam directory holds `exam.json` and one sub-directory per recording.
//! A recording directory holds `manifest.json`, one `.exfl` blob per stream,
//! `ecg.exfl`, and annotation blobs under `annotations/`.

mod blob;
mod store;

pub use blob::{
    decode_contours, decode_meshes, decode_stream, encode_contours, encode_meshes, encode_stream,
    header_len, MAGIC, VERSION,
};
pub use store::{
    read_exam, read_exam_manifest, read_recording, set_exam_fold, write_atomic, write_exam, write_recording, ContourEntry,
    DeclaredHeader, EcgEntry, MeshEntry, RecordingManifest, StreamEntry, EXAM_FILE, MANIFEST_FILE,
};

use crate::annotations::AnnotationSet;
use crate::geometry::{CartesianGrid2D, SectorGeometry2D, SphericalGeometry3D};
use crate::timing::EcgTrace;
use ndarray::{ArrayViewD, IxDyn};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: bad magic")]
    BadMagic(PathBuf),
    #[error("{path}: unsupported version {found} (expected {VERSION})")]
    Version { path: PathBuf, found: u16 },
    #[error("{path}: truncated payload ({found} of {expected} bytes)")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: {extra} trailing bytes after payload")]
    TrailingBytes { path: PathBuf, extra: usize },
    #[error("{path}: bad header: {reason}")]
    Header { path: PathBuf, reason: String },
    #[error("{path}: manifest: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("empty recording")]
    EmptyRecording,
    #[error("invalid recording: {}", join(.0))]
    Invalid(Vec<Violation>),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl ContainerError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Bmode1d,
    Bmode2d,
    Bmode3d,
    Tdi2d,
    Color2d,
    Pw1d,
    Cw1d,
    Ecg,
}

impl Modality {
    pub const ALL: [Modality; 8] = [
        Self::Bmode1d,
        Self::Bmode2d,
        Self::Bmode3d,
        Self::Tdi2d,
        Self::Color2d,
        Self::Pw1d,
        Self::Cw1d,
        Self::Ecg,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn is_doppler(self) -> bool {
        matches!(self, Self::Tdi2d | Self::Color2d | Self::Pw1d | Self::Cw1d)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Bmode1d => "bmode1d",
            Self::Bmode2d => "bmode2d",
            Self::Bmode3d => "bmode3d",
            Self::Tdi2d => "tdi2d",
            Self::Color2d => "color2d",
            Self::Pw1d => "pw1d",
            Self::Cw1d => "cw1d",
            Self::Ecg => "ecg",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    U8,
}

impl DType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::F32),
            1 => Some(Self::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::U8 => 1,
        }
    }
}

/// Entry of a recording's geometry table. `Cartesian2d` marks streams that
/// already live on a display grid (for example exported predictions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Sector2d(SectorGeometry2D),
    Spherical3d(SphericalGeometry3D),
    Cartesian2d(CartesianGrid2D),
}

impl Geometry {
    fn validate(&self) -> Result<(), String> {
        match self {
            Self::Sector2d(g) => g.validate(),
            Self::Spherical3d(g) => g.validate(),
            Self::Cartesian2d(g) => g.validate(),
        }
        .map_err(|e| e.to_string())
    }

    /// Shape of one frame: `[beam, sample]`, `[plane, beam, sample]` or
    /// `[row, col]`.
    pub fn frame_shape(&self) -> Vec<usize> {
        match self {
            Self::Sector2d(g) => g.frame_shape().to_vec(),
            Self::Spherical3d(g) => g.frame_shape().to_vec(),
            Self::Cartesian2d(g) => g.shape().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub modality: Modality,
    pub dtype: DType,
    /// Frame-major dimension sizes.
    pub shape: Vec<usize>,
    /// Seconds since recording start, one per frame.
    pub timestamps: Vec<f64>,
    pub nyquist_velocity: Option<f64>,
    pub geometry_id: Option<u32>,
}

impl StreamHeader {
    pub fn n_frames(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn n_elements(&self) -> usize {
        self.shape.iter().product()
    }

    /// Median frame rate from the timestamps.
    pub fn frame_rate(&self) -> Option<f64> {
        crate::timing::median_spacing(&self.timestamps).map(|dt| 1.0 / dt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Self::F32(v) => v.len(),
            Self::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            Self::F32(_) => DType::F32,
            Self::U8(_) => DType::U8,
        }
    }
}

/// Half-open beamspace index ranges of a color-Doppler box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamBox {
    pub beams: (usize, usize),
    pub samples: (usize, usize),
}

impl BeamBox {
    pub fn contains(&self, beam: usize, sample: usize) -> bool {
        (self.beams.0..self.beams.1).contains(&beam) && (self.samples.0..self.samples.1).contains(&sample)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub header: StreamHeader,
    pub payload: Payload,
    /// Operator color box; only meaningful on `color2d` streams.
    pub color_box: Option<BeamBox>,
}

impl Stream {
    /// Float stream with a timestamp per frame. Frame-major `data`.
    pub fn new_f32(
        modality: Modality,
        shape: Vec<usize>,
        timestamps: Vec<f64>,
        data: Vec<f32>,
        nyquist_velocity: Option<f64>,
        geometry_id: Option<u32>,
    ) -> Self {
        Self {
            header: StreamHeader {
                modality,
                dtype: DType::F32,
                shape,
                timestamps,
                nyquist_velocity,
                geometry_id,
            },
            payload: Payload::F32(data),
            color_box: None,
        }
    }

    pub fn view_f32(&self) -> Option<ArrayViewD<'_, f32>> {
        match &self.payload {
            Payload::F32(v) => ArrayViewD::from_shape(IxDyn(&self.header.shape), v).ok(),
            Payload::U8(_) => None,
        }
    }

    /// Payload as f32 whatever the stored dtype; `u8` maps to `[0, 1]`.
    pub fn to_f32(&self) -> Vec<f32> {
        match &self.payload {
            Payload::F32(v) => v.clone(),
            Payload::U8(v) => v.iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub streams: Vec<Stream>,
    pub ecg: EcgTrace,
    pub geometries: Vec<Geometry>,
    pub annotations: AnnotationSet,
}

impl Recording {
    pub fn streams_of(&self, modality: Modality) -> impl Iterator<Item = (usize, &Stream)> {
        self.streams
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.header.modality == modality)
    }

    pub fn first_of(&self, modality: Modality) -> Option<&Stream> {
        self.streams_of(modality).next().map(|(_, s)| s)
    }

    pub fn geometry_of(&self, stream: &Stream) -> Option<&Geometry> {
        stream
            .header
            .geometry_id
            .and_then(|id| self.geometries.get(id as usize))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamManifest {
    pub exam_id: String,
    pub recording_ids: Vec<String>,
    /// Opaque grouping key for patient-level folds.
    pub patient_key: Option<String>,
    pub fold: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exam {
    pub manifest: ExamManifest,
    pub recordings: Vec<Recording>,
}

/// One broken invariant: `Type.field rule`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub ty: &'static str,
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(ty: &'static str, field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            ty,
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{} {}", self.ty, self.field, self.rule)
    }
}

pub(crate) fn is_safe_name(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('.')
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Header-level invariants of one stream, independent of the recording.
pub fn validate_header(h: &StreamHeader) -> Vec<Violation> {
    let mut v = Vec::new();
    let ty = "StreamHeader";
    if h.shape.is_empty() {
        v.push(Violation::new(ty, "shape", "empty"));
    } else if h.shape.iter().any(|&d| d == 0) {
        v.push(Violation::new(ty, "shape", "has a zero dimension"));
    } else if h.shape.iter().any(|&d| d > u32::MAX as usize) {
        v.push(Violation::new(ty, "shape", "dimension exceeds u32"));
    }
    if h.shape.len() > u8::MAX as usize {
        v.push(Violation::new(ty, "shape", "more than 255 dimensions"));
    }
    if h.shape.first() != Some(&h.timestamps.len()) {
        v.push(Violation::new(ty, "timestamps", "length differs from shape[0]"));
    }
    if h.timestamps.iter().any(|t| !t.is_finite()) {
        v.push(Violation::new(ty, "timestamps", "not finite"));
    } else if h.timestamps.windows(2).any(|w| !(w[1] > w[0])) {
        v.push(Violation::new(ty, "timestamps", "not strictly increasing"));
    }
    match (h.modality.is_doppler(), h.nyquist_velocity) {
        (true, None) => v.push(Violation::new(ty, "nyquist_velocity", "missing")),
        (true, Some(n)) if !(n.is_finite() && n > 0.0) => {
            v.push(Violation::new(ty, "nyquist_velocity", "not positive"))
        }
        (false, Some(_)) => v.push(Violation::new(ty, "nyquist_velocity", "set on a non-Doppler stream")),
        _ => {}
    }
    if h.geometry_id == Some(u32::MAX) {
        v.push(Violation::new(ty, "geometry_id", "reserved value"));
    }
    v
}

/// Every invariant of a recording; empty iff the recording is valid.
pub fn validate_recording(rec: &Recording) -> Vec<Violation> {
    let mut v = Vec::new();
    if !is_safe_name(&rec.id) {
        v.push(Violation::new("Recording", "id", "not a file-name-safe string"));
    }
    if rec.streams.is_empty() {
        v.push(Violation::new("Recording", "streams", "empty"));
    }
    if rec.ecg.validate().is_err() {
        v.push(Violation::new("EcgTrace", "samples", "empty or with invalid rate"));
    }
    for (i, g) in rec.geometries.iter().enumerate() {
        if let Err(e) = g.validate() {
            v.push(Violation::new("Recording", format!("geometries[{i}]"), e));
        }
    }
    for (i, s) in rec.streams.iter().enumerate() {
        let h = &s.header;
        v.extend(validate_header(h).into_iter().map(|mut x| {
            x.field = format!("{}[stream {i}]", x.field);
            x
        }));
        let ty = "StreamHeader";
        if h.modality == Modality::Ecg {
            v.push(Violation::new("Recording", "ecg", format!("second ECG stream at index {i}")));
        }
        if h.dtype != s.payload.dtype() {
            v.push(Violation::new(ty, format!("dtype[stream {i}]"), "differs from payload"));
        }
        if !h.shape.is_empty() && s.payload.len() != h.n_elements() {
            v.push(Violation::new(
                "Stream",
                format!("payload[stream {i}]"),
                format!("has {} elements, shape declares {}", s.payload.len(), h.n_elements()),
            ));
        }
        match h.geometry_id.map(|id| rec.geometries.get(id as usize)) {
            Some(None) => v.push(Violation::new(
                ty,
                format!("geometry_id[stream {i}]"),
                "not in geometry table",
            )),
            Some(Some(g)) => {
                if let Some(rule) = shape_rule(h, g) {
                    v.push(Violation::new(ty, format!("shape[stream {i}]"), rule));
                }
            }
            None => {
                if matches!(h.modality, Modality::Bmode2d | Modality::Bmode3d | Modality::Tdi2d | Modality::Color2d) {
                    v.push(Violation::new(ty, format!("geometry_id[stream {i}]"), "missing on an imaging stream"));
                }
            }
        }
        if let Some(b) = s.color_box {
            let fits = h.modality == Modality::Color2d
                && h.shape.len() == 4
                && b.beams.0 < b.beams.1
                && b.samples.0 < b.samples.1
                && b.beams.1 <= h.shape[2]
                && b.samples.1 <= h.shape[3];
            if !fits {
                v.push(Violation::new("Stream", format!("color_box[stream {i}]"), "outside a color2d frame"));
            }
        }
    }
    let n_streams = rec.streams.len() as u32;
    for (i, c) in rec.annotations.contours.iter().enumerate() {
        if c.stream >= n_streams {
            v.push(Violation::new("ContourSeries", format!("stream[{i}]"), "not in recording"));
        }
        if c.frames.is_empty() || c.frame_indices.len() != c.frames.len() {
            v.push(Violation::new("ContourSeries", format!("frame_indices[{i}]"), "length differs from frames"));
        }
        if c.frames.iter().any(|f| f.closed != c.frames[0].closed) {
            v.push(Violation::new("ContourSeries", format!("frames[{i}]"), "mix open and closed contours"));
        }
        for f in &c.frames {
            if f.vertices.len() < 3 || f.vertices.iter().flatten().any(|x| !x.is_finite()) {
                v.push(Violation::new("Contour2D", format!("vertices[{i}]"), "fewer than 3 or not finite"));
                break;
            }
        }
    }
    for (i, m) in rec.annotations.meshes.iter().enumerate() {
        if m.stream >= n_streams {
            v.push(Violation::new("MeshSeries", format!("stream[{i}]"), "not in recording"));
        }
        if m.frames.is_empty() || m.frame_indices.len() != m.frames.len() {
            v.push(Violation::new("MeshSeries", format!("frame_indices[{i}]"), "length differs from frames"));
        }
        for f in &m.frames {
            if let Err(e) = crate::annotations::check_closed(f) {
                v.push(Violation::new("Mesh3D", format!("triangles[{i}]"), e.to_string()));
                break;
            }
        }
    }
    for (i, m) in rec.annotations.markers.iter().enumerate() {
        if m.validate().is_err() {
            v.push(Violation::new("SparseMarker", format!("coords[{i}]"), "not finite"));
        }
    }
    v
}

fn shape_rule(h: &StreamHeader, g: &Geometry) -> Option<String> {
    let frame = g.frame_shape();
    let body = h.shape.get(1..).unwrap_or(&[]);
    let expected: Vec<usize> = match (h.modality, g) {
        (Modality::Color2d, Geometry::Sector2d(_) | Geometry::Cartesian2d(_)) => {
            std::iter::once(2).chain(frame).collect()
        }
        (Modality::Bmode2d | Modality::Tdi2d, Geometry::Sector2d(_) | Geometry::Cartesian2d(_)) => frame,
        (Modality::Bmode3d, Geometry::Spherical3d(_)) => frame,
        (Modality::Bmode1d | Modality::Pw1d | Modality::Cw1d, _) => return None,
        _ => return Some(format!("{} stream cannot use this geometry kind", h.modality)),
    };
    (body != expected.as_slice()).then(|| format!("frame shape {body:?} differs from geometry {expected:?}"))
}

/// Exam-level invariants.
pub fn validate_exam_manifest(m: &ExamManifest) -> Vec<Violation> {
    let mut v = Vec::new();
    if m.recording_ids.is_empty() {
        v.push(Violation::new("ExamManifest", "recording_ids", "empty"));
    }
    let unique: HashSet<_> = m.recording_ids.iter().collect();
    if unique.len() != m.recording_ids.len() {
        v.push(Violation::new("ExamManifest", "recording_ids", "not unique"));
    }
    if !is_safe_name(&m.exam_id) {
        v.push(Violation::new("ExamManifest", "exam_id", "not a file-name-safe string"));
    }
    if m.fold.is_some_and(|f| f > 4) {
        v.push(Violation::new("ExamManifest", "fold", "outside 0..=4"));
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(modality: Modality, ts: Vec<f64>) -> StreamHeader {
        StreamHeader {
            modality,
            dtype: DType::F32,
            shape: vec![ts.len(), 4],
            timestamps: ts,
            nyquist_velocity: None,
            geometry_id: None,
        }
    }

    #[test]
    fn codes_follow_enum_order() {
        for (i, m) in Modality::ALL.iter().enumerate() {
            assert_eq!(m.code() as usize, i);
            assert_eq!(Modality::from_code(i as u8), Some(*m));
        }
        assert_eq!(Modality::from_code(8), None);
        assert_eq!(DType::from_code(2), None);
    }

    #[test]
    fn doppler_without_nyquist() {
        let v = validate_header(&header(Modality::Pw1d, vec![0.0, 0.1]));
        let text: Vec<String> = v.iter().map(ToString::to_string).collect();
        assert_eq!(text, ["StreamHeader.nyquist_velocity missing"]);
    }

    #[test]
    fn repeated_timestamp() {
        let v = validate_header(&header(Modality::Bmode1d, vec![0.0, 0.0]));
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().ends_with("timestamps not strictly increasing"));
    }

    #[test]
    fn nyquist_on_bmode_is_flagged() {
        let mut h = header(Modality::Bmode1d, vec![0.0]);
        h.nyquist_velocity = Some(0.6);
        assert_eq!(validate_header(&h)[0].field, "nyquist_velocity");
    }

    #[test]
    fn exam_ids_must_be_unique() {
        let m = ExamManifest {
            exam_id: "e1".into(),
            recording_ids: vec!["a".into(), "a".into()],
            patient_key: None,
            fold: Some(5),
        };
        assert_eq!(validate_exam_manifest(&m).len(), 2);
    }
}
