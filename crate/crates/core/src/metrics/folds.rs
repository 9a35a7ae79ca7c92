use super::{MetricsError, Result};
use crate::container::ExamManifest;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldSummary {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
}

/// Mean and sample standard deviation of one value per fold.
pub fn aggregate_folds(values: &[f64], n_folds: usize) -> Result<FoldSummary> {
    if values.len() != n_folds {
        return Err(MetricsError::FoldCount {
            expected: n_folds,
            found: values.len(),
        });
    }
    if n_folds < 2 {
        return Err(MetricsError::Invalid("need at least 2 folds for a standard deviation".into()));
    }
    let n = n_folds as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(FoldSummary { mean, std: var.sqrt() })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub by_patient: BTreeMap<String, u8>,
    pub by_exam: BTreeMap<String, u8>,
}

/// Patient-level folds: distinct patient keys are sorted, shuffled with a
/// seeded ChaCha generator and dealt round-robin, so every patient's exams
/// share a fold and fold sizes differ by at most one patient. The result
/// does not depend on the order of `manifests`.
pub fn make_patient_folds(manifests: &[ExamManifest], n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    if n_folds == 0 || n_folds > u8::MAX as usize {
        return Err(MetricsError::Invalid(format!("fold count {n_folds} out of range")));
    }
    let mut patients = BTreeSet::new();
    for m in manifests {
        match &m.patient_key {
            Some(k) => {
                patients.insert(k.clone());
            }
            None => return Err(MetricsError::MissingPatientKey(m.exam_id.clone())),
        }
    }
    let mut order: Vec<String> = patients.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let by_patient: BTreeMap<String, u8> = order
        .into_iter()
        .enumerate()
        .map(|(i, k)| (k, (i % n_folds) as u8))
        .collect();
    let by_exam = manifests
        .iter()
        .map(|m| (m.exam_id.clone(), by_patient[m.patient_key.as_ref().unwrap()]))
        .collect();
    Ok(FoldAssignment { by_patient, by_exam })
}

/// One scored term of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseValue {
    pub case_id: String,
    pub fold: Option<u8>,
    pub task: u8,
    pub term: String,
    /// `None` when the term is undefined for the case (empty mask).
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldRow {
    /// Fold index, or `None` for the across-fold row.
    pub fold: Option<u8>,
    pub term: String,
    pub mean: f64,
    pub std: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub cases: Vec<CaseValue>,
}

fn sample_std(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    Some((v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt())
}

impl MetricReport {
    pub fn push(&mut self, case_id: &str, fold: Option<u8>, task: u8, term: &str, value: Option<f64>) {
        self.cases.push(CaseValue {
            case_id: case_id.to_owned(),
            fold,
            task,
            term: term.to_owned(),
            value,
        });
    }

    /// Per-fold mean (and spread over cases) of every term, then one
    /// across-fold row per term when all `n_folds` folds have values.
    /// Undefined case values are skipped.
    pub fn fold_summary(&self, n_folds: usize) -> Vec<FoldRow> {
        let mut groups: BTreeMap<(String, u8), Vec<f64>> = BTreeMap::new();
        for c in &self.cases {
            if let (Some(f), Some(v)) = (c.fold, c.value) {
                groups.entry((c.term.clone(), f)).or_default().push(v);
            }
        }
        let mut rows = Vec::new();
        let mut per_term: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for ((term, fold), vals) in &groups {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            per_term.entry(term.clone()).or_default().push(mean);
            rows.push(FoldRow {
                fold: Some(*fold),
                term: term.clone(),
                mean,
                std: sample_std(vals),
                n: vals.len(),
            });
        }
        for (term, means) in per_term {
            if let Ok(s) = aggregate_folds(&means, n_folds) {
                rows.push(FoldRow {
                    fold: None,
                    term,
                    mean: s.mean,
                    std: Some(s.std),
                    n: n_folds,
                });
            }
        }
        rows
    }

    /// `case_id,task,term,value`; undefined values are left empty.
    pub fn cases_csv(&self) -> String {
        let mut s = String::from("case_id,task,term,value\n");
        for c in &self.cases {
            let v = c.value.map(|v| format!("{v}")).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", c.case_id, c.task, c.term, v));
        }
        s
    }

    /// `fold,term,mean,std`; the across-fold row uses fold `all`.
    pub fn folds_csv(&self, n_folds: usize) -> String {
        let mut s = String::from("fold,term,mean,std\n");
        for r in self.fold_summary(n_folds) {
            let fold = r.fold.map_or_else(|| "all".to_owned(), |f| f.to_string());
            let std = r.std.map(|v| format!("{v}")).unwrap_or_default();
            s.push_str(&format!("{fold},{},{},{std}\n", r.term, r.mean));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exam(id: &str, patient: &str) -> ExamManifest {
        ExamManifest {
            exam_id: id.into(),
            recording_ids: vec!["r0".into()],
            patient_key: Some(patient.into()),
            fold: None,
        }
    }

    #[test]
    fn fold_statistics() {
        let s = aggregate_folds(&[1.0, 2.0, 3.0, 4.0, 5.0], 5).unwrap();
        assert_eq!(s.mean, 3.0);
        assert!((s.std - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(aggregate_folds(&[0.4; 5], 5).unwrap().std, 0.0);
        assert_eq!(
            aggregate_folds(&[1.0; 4], 5),
            Err(MetricsError::FoldCount { expected: 5, found: 4 })
        );
    }

    #[test]
    fn ten_patients_two_per_fold() {
        let ms: Vec<_> = (0..10).map(|i| exam(&format!("e{i}"), &format!("p{i}"))).collect();
        let a = make_patient_folds(&ms, 5, 1).unwrap();
        let mut counts = [0; 5];
        a.by_patient.values().for_each(|&f| counts[f as usize] += 1);
        assert_eq!(counts, [2; 5]);
        assert_eq!(a, make_patient_folds(&ms, 5, 1).unwrap());
    }

    #[test]
    fn exams_of_one_patient_share_a_fold() {
        let ms = vec![exam("a", "p1"), exam("b", "p2"), exam("c", "p1")];
        let a = make_patient_folds(&ms, 5, 9).unwrap();
        assert_eq!(a.by_exam["a"], a.by_exam["c"]);
        let mut missing = ms.clone();
        missing[1].patient_key = None;
        assert_eq!(
            make_patient_folds(&missing, 5, 9),
            Err(MetricsError::MissingPatientKey("b".into()))
        );
    }

    #[test]
    fn summary_rows() {
        let mut r = MetricReport::default();
        for f in 0..5u8 {
            r.push(&format!("c{f}a"), Some(f), 1, "alias", Some(f as f64));
            r.push(&format!("c{f}b"), Some(f), 1, "alias", Some(f as f64 + 2.0));
        }
        r.push("x", Some(0), 2, "velocity", None);
        let rows = r.fold_summary(5);
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].mean, 1.0);
        assert_eq!(rows[5].fold, None);
        assert_eq!(rows[5].mean, 3.0);
        assert!(r.cases_csv().lines().last().unwrap().ends_with("velocity,"));
    }
}
