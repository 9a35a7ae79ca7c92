use super::blob::{decode_contours, decode_meshes, decode_stream, encode_contours, encode_meshes, encode_stream, header_len};
use super::{
    is_safe_name, validate_exam_manifest, validate_recording, BeamBox, ContainerError, DType, Exam, ExamManifest,
    Geometry, Modality, Payload, Recording, Stream, StreamHeader, Violation,
};
use crate::annotations::{AnnotationSet, Chamber, ContourSeries, Layer, MeshSeries, SparseMarker, View};
use crate::timing::EcgTrace;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EXAM_FILE: &str = "exam.json";
const ECG_FILE: &str = "ecg.exfl";
const ANNOTATION_DIR: &str = "annotations";

/// Write `bytes` to `path` through a temporary sibling and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ContainerError> {
    static COUNTER: AtomicUsize = AtomicUsize::new(0);
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes))
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(ContainerError::io(path, e));
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>, ContainerError> {
    fs::read(path).map_err(|e| ContainerError::io(path, e))
}

fn manifest_err(path: &Path, reason: impl Into<String>) -> ContainerError {
    ContainerError::Manifest {
        path: path.to_owned(),
        reason: reason.into(),
    }
}

/// Stream header as declared in the manifest, for cross-checking the blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeclaredHeader {
    pub modality: Modality,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub n_timestamps: usize,
    pub nyquist_velocity: Option<f64>,
    pub geometry_id: Option<u32>,
    /// Total blob size: header plus payload.
    pub bytes: usize,
}

impl DeclaredHeader {
    fn of(h: &StreamHeader) -> Self {
        Self {
            modality: h.modality,
            dtype: h.dtype,
            shape: h.shape.clone(),
            n_timestamps: h.timestamps.len(),
            nyquist_velocity: h.nyquist_velocity,
            geometry_id: h.geometry_id,
            bytes: header_len(h.shape.len(), h.timestamps.len()) + h.n_elements() * h.dtype.size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEntry {
    pub file: String,
    pub header: DeclaredHeader,
    pub color_box: Option<BeamBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgEntry {
    pub file: String,
    pub rate: f64,
    pub t0: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourEntry {
    pub file: String,
    pub chamber: Chamber,
    pub layer: Layer,
    pub view: View,
    pub stream: u32,
    pub frame_indices: Vec<u32>,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshEntry {
    pub file: String,
    pub chamber: Chamber,
    pub stream: u32,
    pub frame_indices: Vec<u32>,
}

/// `manifest.json` of one recording directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingManifest {
    pub format: String,
    pub version: u16,
    pub recording_id: String,
    pub exam_id: Option<String>,
    pub patient_key: Option<String>,
    pub fold: Option<u8>,
    pub geometries: Vec<Geometry>,
    pub ecg: EcgEntry,
    pub streams: Vec<StreamEntry>,
    pub contours: Vec<ContourEntry>,
    pub meshes: Vec<MeshEntry>,
    pub markers: Vec<SparseMarker>,
}

impl RecordingManifest {
    pub fn read(dir: &Path) -> Result<Self, ContainerError> {
        let path = dir.join(MANIFEST_FILE);
        let text = read_file(&path)?;
        let m: Self = serde_json::from_slice(&text).map_err(|e| manifest_err(&path, e.to_string()))?;
        if m.format != "EXFL" || m.version != super::VERSION {
            return Err(manifest_err(&path, format!("unsupported format {} v{}", m.format, m.version)));
        }
        Ok(m)
    }
}

fn stream_file(i: usize, m: Modality) -> String {
    format!("stream_{i:02}_{m}.exfl")
}

fn ecg_header(ecg: &EcgTrace) -> StreamHeader {
    StreamHeader {
        modality: Modality::Ecg,
        dtype: DType::F32,
        shape: vec![ecg.samples.len()],
        timestamps: ecg.timestamps(),
        nyquist_velocity: None,
        geometry_id: None,
    }
}

struct ExamContext<'a> {
    exam_id: &'a str,
    patient_key: Option<&'a str>,
    fold: Option<u8>,
}

/// Write a recording directory. The recording is validated first; nothing
/// is written when it violates an invariant.
pub fn write_recording(rec: &Recording, dir: &Path) -> Result<(), ContainerError> {
    write_recording_in(rec, dir, None)
}

fn write_recording_in(rec: &Recording, dir: &Path, exam: Option<&ExamContext>) -> Result<(), ContainerError> {
    if rec.streams.is_empty() {
        return Err(ContainerError::EmptyRecording);
    }
    let violations = validate_recording(rec);
    if !violations.is_empty() {
        return Err(ContainerError::Invalid(violations));
    }
    let ann_dir = dir.join(ANNOTATION_DIR);
    let has_blobs = !rec.annotations.contours.is_empty() || !rec.annotations.meshes.is_empty();
    fs::create_dir_all(if has_blobs { &ann_dir } else { dir }).map_err(|e| ContainerError::io(dir, e))?;

    let mut streams = Vec::with_capacity(rec.streams.len());
    for (i, s) in rec.streams.iter().enumerate() {
        let file = stream_file(i, s.header.modality);
        write_atomic(&dir.join(&file), &encode_stream(&s.header, &s.payload))?;
        streams.push(StreamEntry {
            file,
            header: DeclaredHeader::of(&s.header),
            color_box: s.color_box,
        });
    }
    write_atomic(
        &dir.join(ECG_FILE),
        &encode_stream(&ecg_header(&rec.ecg), &Payload::F32(rec.ecg.samples.clone())),
    )?;

    let mut contours = Vec::new();
    for (i, c) in rec.annotations.contours.iter().enumerate() {
        let file = format!("{ANNOTATION_DIR}/contour_{i:02}.bin");
        write_atomic(&dir.join(&file), &encode_contours(&c.frames))?;
        contours.push(ContourEntry {
            file,
            chamber: c.chamber,
            layer: c.layer,
            view: c.view,
            stream: c.stream,
            frame_indices: c.frame_indices.clone(),
            closed: c.frames[0].closed,
        });
    }
    let mut meshes = Vec::new();
    for (i, m) in rec.annotations.meshes.iter().enumerate() {
        let file = format!("{ANNOTATION_DIR}/mesh_{i:02}.bin");
        write_atomic(&dir.join(&file), &encode_meshes(&m.frames))?;
        meshes.push(MeshEntry {
            file,
            chamber: m.chamber,
            stream: m.stream,
            frame_indices: m.frame_indices.clone(),
        });
    }

    let manifest = RecordingManifest {
        format: "EXFL".into(),
        version: super::VERSION,
        recording_id: rec.id.clone(),
        exam_id: exam.map(|e| e.exam_id.to_owned()),
        patient_key: exam.and_then(|e| e.patient_key.map(str::to_owned)),
        fold: exam.and_then(|e| e.fold),
        geometries: rec.geometries.clone(),
        ecg: EcgEntry {
            file: ECG_FILE.into(),
            rate: rec.ecg.rate,
            t0: rec.ecg.t0,
            n_samples: rec.ecg.samples.len(),
        },
        streams,
        contours,
        meshes,
        markers: rec.annotations.markers.clone(),
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(&dir.join(MANIFEST_FILE), &json)
}

fn checked_path(dir: &Path, file: &str, manifest: &Path) -> Result<PathBuf, ContainerError> {
    let rel = Path::new(file);
    if rel.is_absolute() || rel.components().any(|c| !matches!(c, std::path::Component::Normal(_))) {
        return Err(manifest_err(manifest, format!("file {file:?} escapes the recording directory")));
    }
    Ok(dir.join(rel))
}

/// Read and validate a recording directory.
pub fn read_recording(dir: &Path) -> Result<Recording, ContainerError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let m = RecordingManifest::read(dir)?;

    let mut streams = Vec::with_capacity(m.streams.len());
    for (i, entry) in m.streams.iter().enumerate() {
        let path = checked_path(dir, &entry.file, &manifest_path)?;
        let bytes = read_file(&path)?;
        let (header, payload) = decode_stream(&bytes, &path)?;
        if DeclaredHeader::of(&header) != entry.header {
            return Err(manifest_err(&manifest_path, format!("stream {i} header differs from {}", entry.file)));
        }
        streams.push(Stream {
            header,
            payload,
            color_box: entry.color_box,
        });
    }

    let ecg_path = checked_path(dir, &m.ecg.file, &manifest_path)?;
    let (ecg_h, ecg_p) = decode_stream(&read_file(&ecg_path)?, &ecg_path)?;
    let samples = match ecg_p {
        Payload::F32(v) if ecg_h.modality == Modality::Ecg => v,
        _ => return Err(manifest_err(&manifest_path, "ECG blob is not an f32 ecg stream")),
    };
    let ecg = EcgTrace {
        samples,
        rate: m.ecg.rate,
        t0: m.ecg.t0,
    };
    if ecg.samples.len() != m.ecg.n_samples || ecg_h != ecg_header(&ecg) {
        return Err(manifest_err(&manifest_path, "ECG blob differs from its manifest entry"));
    }

    let mut annotations = AnnotationSet {
        markers: m.markers.clone(),
        ..Default::default()
    };
    for c in &m.contours {
        let path = checked_path(dir, &c.file, &manifest_path)?;
        let mut frames = decode_contours(&read_file(&path)?, &path)?;
        frames.iter_mut().for_each(|f| f.closed = c.closed);
        annotations.contours.push(ContourSeries {
            chamber: c.chamber,
            layer: c.layer,
            view: c.view,
            stream: c.stream,
            frame_indices: c.frame_indices.clone(),
            frames,
        });
    }
    for e in &m.meshes {
        let path = checked_path(dir, &e.file, &manifest_path)?;
        annotations.meshes.push(MeshSeries {
            chamber: e.chamber,
            stream: e.stream,
            frame_indices: e.frame_indices.clone(),
            frames: decode_meshes(&read_file(&path)?, &path)?,
        });
    }

    let rec = Recording {
        id: m.recording_id,
        streams,
        ecg,
        geometries: m.geometries,
        annotations,
    };
    if rec.streams.is_empty() {
        return Err(ContainerError::EmptyRecording);
    }
    let violations = validate_recording(&rec);
    if !violations.is_empty() {
        return Err(ContainerError::Invalid(violations));
    }
    Ok(rec)
}

/// Write `exam.json` and one sub-directory per recording.
pub fn write_exam(exam: &Exam, dir: &Path) -> Result<(), ContainerError> {
    let mut v = validate_exam_manifest(&exam.manifest);
    let ids: Vec<&String> = exam.recordings.iter().map(|r| &r.id).collect();
    if ids != exam.manifest.recording_ids.iter().collect::<Vec<_>>() {
        v.push(Violation {
            ty: "ExamManifest",
            field: "recording_ids".into(),
            rule: "differ from the recordings supplied".into(),
        });
    }
    if !v.is_empty() {
        return Err(ContainerError::Invalid(v));
    }
    fs::create_dir_all(dir).map_err(|e| ContainerError::io(dir, e))?;
    let ctx = ExamContext {
        exam_id: &exam.manifest.exam_id,
        patient_key: exam.manifest.patient_key.as_deref(),
        fold: exam.manifest.fold,
    };
    for rec in &exam.recordings {
        write_recording_in(rec, &dir.join(&rec.id), Some(&ctx))?;
    }
    let mut json = serde_json::to_vec_pretty(&exam.manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(&dir.join(EXAM_FILE), &json)
}

pub fn read_exam_manifest(dir: &Path) -> Result<ExamManifest, ContainerError> {
    let path = dir.join(EXAM_FILE);
    let m: ExamManifest = serde_json::from_slice(&read_file(&path)?).map_err(|e| manifest_err(&path, e.to_string()))?;
    let v = validate_exam_manifest(&m);
    if !v.is_empty() {
        return Err(ContainerError::Invalid(v));
    }
    if let Some(bad) = m.recording_ids.iter().find(|id| !is_safe_name(id)) {
        return Err(manifest_err(&path, format!("recording id {bad:?} is not a directory name")));
    }
    Ok(m)
}

/// Set the fold of the exam at `dir`, in `exam.json` and in the copy each
/// recording manifest carries. Blobs are left untouched.
pub fn set_exam_fold(dir: &Path, fold: Option<u8>) -> Result<ExamManifest, ContainerError> {
    let mut exam = read_exam_manifest(dir)?;
    exam.fold = fold;
    let v = validate_exam_manifest(&exam);
    if !v.is_empty() {
        return Err(ContainerError::Invalid(v));
    }
    for id in &exam.recording_ids {
        let rdir = dir.join(id);
        let mut m = RecordingManifest::read(&rdir)?;
        m.fold = fold;
        let mut json = serde_json::to_vec_pretty(&m).expect("manifest serializes");
        json.push(b'\n');
        write_atomic(&rdir.join(MANIFEST_FILE), &json)?;
    }
    let mut json = serde_json::to_vec_pretty(&exam).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(&dir.join(EXAM_FILE), &json)?;
    Ok(exam)
}

pub fn read_exam(dir: &Path) -> Result<Exam, ContainerError> {
    let manifest = read_exam_manifest(dir)?;
    let recordings = manifest
        .recording_ids
        .iter()
        .map(|id| read_recording(&dir.join(id)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Exam { manifest, recordings })
}
