use crate::{CliError, Result};
use exflow::container::{read_exam_manifest, write_atomic, ExamManifest, EXAM_FILE, MANIFEST_FILE};
use std::path::{Path, PathBuf};

/// One recording to process, with its exam when it belongs to one.
#[derive(Debug, Clone)]
pub struct Case {
    pub exam: Option<ExamManifest>,
    pub rec_id: String,
    pub dir: PathBuf,
}

impl Case {
    /// `exam/recording`, or the recording id alone.
    pub fn id(&self) -> String {
        match &self.exam {
            Some(m) => format!("{}/{}", m.exam_id, self.rec_id),
            None => self.rec_id.clone(),
        }
    }

    /// Output directory of this case under `root`.
    pub fn out_dir(&self, root: &Path) -> PathBuf {
        match &self.exam {
            Some(m) => root.join(&m.exam_id).join(&self.rec_id),
            None => root.join(&self.rec_id),
        }
    }
}

/// Exam directories under `input`: `input` itself when it holds
/// `exam.json`, otherwise its sub-directories that do, sorted by name.
pub fn exam_dirs(input: &Path) -> Result<Vec<PathBuf>> {
    require_exists(input)?;
    if input.join(EXAM_FILE).is_file() {
        return Ok(vec![input.to_owned()]);
    }
    let mut out: Vec<PathBuf> = subdirs(input)?.into_iter().filter(|d| d.join(EXAM_FILE).is_file()).collect();
    out.sort();
    Ok(out)
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut v: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    v.sort();
    Ok(v)
}

fn require_exists(p: &Path) -> Result<()> {
    if !p.exists() {
        return Err(CliError::Usage(format!("input {} does not exist", p.display())));
    }
    Ok(())
}

/// Every recording reachable from `input`: a recording directory, an exam
/// directory, or a directory of either.
pub fn discover(input: &Path) -> Result<Vec<Case>> {
    require_exists(input)?;
    if input.join(MANIFEST_FILE).is_file() {
        return Ok(vec![single(input)]);
    }
    let mut cases = Vec::new();
    let exams = exam_dirs(input)?;
    if !exams.is_empty() {
        for d in exams {
            let m = read_exam_manifest(&d)?;
            for r in &m.recording_ids {
                cases.push(Case {
                    exam: Some(m.clone()),
                    rec_id: r.clone(),
                    dir: d.join(r),
                });
            }
        }
    } else {
        cases.extend(
            subdirs(input)?
                .into_iter()
                .filter(|d| d.join(MANIFEST_FILE).is_file())
                .map(|d| single(&d)),
        );
    }
    if cases.is_empty() {
        return Err(CliError::Data(format!("no exams or recordings under {}", input.display())));
    }
    Ok(cases)
}

fn single(dir: &Path) -> Case {
    Case {
        exam: None,
        rec_id: dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        dir: dir.to_owned(),
    }
}

/// Atomic write, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    }
    write_atomic(path, bytes)?;
    Ok(())
}

/// Shortest round-trip float formatting used in every CSV.
pub fn num(v: f64) -> String {
    format!("{v}")
}
