use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn exflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exflow"))
        .args(args)
        .env_remove("EXFLOW_OUT")
        .output()
        .expect("run exflow")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small noisy phantom exam under `root/exam`.
fn phantom(root: &Path, extra: &[&str]) -> PathBuf {
    let exam = root.join("exam");
    let mut args = vec!["-o", s(&exam), "phantom", "--beams", "16", "--samples", "48", "--no-volume"];
    args.extend_from_slice(extra);
    let o = exflow(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    exam
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out
}

fn first_line(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap().lines().next().unwrap_or_default().to_owned()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&exflow(&[])), 2);
    assert_eq!(code(&exflow(&["frobnicate"])), 2);
    assert_eq!(code(&exflow(&["inspect", "/definitely/not/here"])), 2);
    assert_eq!(code(&exflow(&["evaluate", "--task", "4", "."])), 2);
    assert_eq!(code(&exflow(&["--grid", "1", "inspect", "."])), 2);
    assert_eq!(code(&exflow(&["phantom", "--snr", "loud"])), 2);
    assert_eq!(code(&exflow(&["--help"])), 0);
}

#[test]
fn broken_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec");
    std::fs::create_dir(&rec).unwrap();
    std::fs::write(rec.join("manifest.json"), "{").unwrap();
    let o = exflow(&["inspect", s(&rec)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("exflow: "));

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(code(&exflow(&["align", s(&empty)])), 3);
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_exflow"))
        .args(["phantom", "--beams", "8", "--samples", "16", "--no-volume", "--subsectors", "0"])
        .env("EXFLOW_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("exam.json").is_file());
    assert!(out.join("truth").join("tissue").join("tdi.exfl").is_file());
}

#[test]
fn inspect_lists_every_stream() {
    let dir = tempfile::tempdir().unwrap();
    let exam = phantom(dir.path(), &["--subsectors", "2"]);
    let o = exflow(&["inspect", s(&exam)]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for needle in ["tdi2d", "color2d", "bmode3d", "phantom/stitch", "0.05"] {
        assert!(text.contains(needle), "missing {needle} in\n{text}");
    }
}

#[test]
fn align_writes_peaks_and_pairings() {
    let dir = tempfile::tempdir().unwrap();
    let exam = phantom(dir.path(), &["--subsectors", "0"]);
    let out = dir.path().join("out");
    assert_eq!(code(&exflow(&["-o", s(&out), "align", s(&exam)])), 0);
    let tissue = out.join("phantom").join("tissue");
    assert_eq!(first_line(&tissue.join("r_peaks.csv")), "time_s");
    let pairing = std::fs::read_to_string(tissue.join("pairing_01_00.csv")).unwrap();
    let mut lines = pairing.lines();
    assert_eq!(lines.next(), Some("frame,time_s,bmode_frame,bmode_time_s,dt_s"));
    for (k, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        // TDI frames trail their B-mode frame by a quarter period
        assert_eq!(f[2], k.to_string(), "{line}");
    }
    assert!(out.join("phantom").join("color").join("pairing_01_00.csv").is_file());
}

#[test]
fn convert_writes_images_masks_and_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let exam = phantom(dir.path(), &["--subsectors", "0"]);
    let out = dir.path().join("out");
    let o = exflow(&["-o", s(&out), "--grid", "32", "convert", "--every", "10", s(&exam)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let color = out.join("phantom").join("color");
    for d in ["stream_00_bmode2d", "stream_01_color2d_velocity", "stream_01_color2d_power"] {
        let p = color.join(d);
        assert!(p.join("mask.pgm").is_file(), "{d}");
        let frame = std::fs::read(p.join("frame_0000.pgm")).unwrap();
        assert!(frame.starts_with(b"P5\n32 32\n255\n"), "{d}");
        assert_eq!(frame.len(), b"P5\n32 32\n255\n".len() + 32 * 32);
        assert!(p.join("frame_0000.txt").is_file());
        assert!(!p.join("frame_0005.pgm").exists());
    }
}

#[test]
fn writes_leave_no_temporaries() {
    let dir = tempfile::tempdir().unwrap();
    let exam = phantom(dir.path(), &["--subsectors", "2"]);
    let out = dir.path().join("out");
    for cmd in [&["align"][..], &["rasterize"], &["stitch"], &["evaluate", "--task", "1"]] {
        let mut args = vec!["-o", s(&out), "--jobs", "2"];
        args.extend_from_slice(cmd);
        args.push(s(&exam));
        let o = exflow(&args);
        assert_eq!(code(&o), 0, "{cmd:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for p in files_under(&out).into_iter().chain(files_under(&exam)) {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        assert!(!name.starts_with('.') && !name.ends_with(".tmp"), "left behind {}", p.display());
    }
}

#[test]
fn rasterize_writes_labels_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let exam = dir.path().join("exam");
    let o = exflow(&["-o", s(&exam), "phantom", "--beams", "16", "--samples", "48", "--subsectors", "0", "--beats", "3"]);
    assert_eq!(code(&o), 0);
    let out = dir.path().join("out");
    assert_eq!(code(&exflow(&["-o", s(&out), "--grid", "48", "rasterize", "--propagate", s(&exam)])), 0);
    let tissue = out.join("phantom").join("tissue");
    assert_eq!(first_line(&tissue.join("strain.csv")), "frame,time_s,value");
    assert_eq!(first_line(&tissue.join("segmental_strain.csv")), "frame,time_s,segment,value");
    assert_eq!(first_line(&tissue.join("propagation.csv")), "frame,source_frame,phase");
    let labels = std::fs::read_dir(tissue.join("labels")).unwrap().count();
    assert!(labels > 2 * 24, "{labels} label files");
    let volume = out.join("phantom").join("volume");
    assert_eq!(first_line(&volume.join("volume.csv")), "frame,time_s,value");
    assert_eq!(
        first_line(&volume.join("volume_beats.csv")),
        "beat,first_frame,end_frame,ed_frame,es_frame,edv_ml,esv_ml"
    );
}

#[test]
fn stitch_refuses_irregular_rhythm() {
    let dir = tempfile::tempdir().unwrap();
    let exam = dir.path().join("exam");
    let o = exflow(&[
        "-o", s(&exam), "phantom", "--beams", "8", "--samples", "16", "--no-volume", "--jitter", "0.4", "--seed", "3",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = exflow(&["-o", s(&dir.path().join("out")), "stitch", s(&exam)]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    // a looser gate lets the same exam through
    let o = exflow(&["-o", s(&dir.path().join("out")), "--max-cv", "1", "stitch", s(&exam)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn stitch_needs_sub_sectors() {
    let dir = tempfile::tempdir().unwrap();
    let exam = phantom(dir.path(), &["--subsectors", "0"]);
    assert_eq!(code(&exflow(&["-o", s(&dir.path().join("out")), "stitch", s(&exam)])), 3);
}

fn cases(csv: &Path) -> Vec<(String, String, f64)> {
    std::fs::read_to_string(csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_owned(), f[2].to_owned(), f[3].parse().unwrap())
        })
        .collect()
}

#[test]
fn written_baselines_score_like_inline_ones() {
    let dir = tempfile::tempdir().unwrap();
    let exam = phantom(dir.path(), &["--subsectors", "0"]);
    for task in ["1", "2"] {
        for domain in ["beamspace", "cartesian"] {
            let inline = dir.path().join(format!("inline_{task}_{domain}"));
            let pred = dir.path().join(format!("pred_{task}_{domain}"));
            let scored = dir.path().join(format!("scored_{task}_{domain}"));
            let run = |args: &[&str]| {
                let o = exflow(args);
                assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
            };
            run(&["-o", s(&inline), "evaluate", "--task", task, "--domain", domain, s(&exam)]);
            run(&["-o", s(&pred), "baseline", "--task", task, "--domain", domain, s(&exam)]);
            let mut args = vec!["-o", s(&scored), "evaluate", "--task", task, "--pred", s(&pred)];
            if domain == "beamspace" {
                args.push("--convert");
            }
            args.push(s(&exam));
            run(&args);
            let name = format!("task{task}_cases.csv");
            let (a, b) = (cases(&inline.join(&name)), cases(&scored.join(&name)));
            assert_eq!(a.len(), b.len());
            assert!(!a.is_empty());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!((&x.0, &x.1), (&y.0, &y.1));
                // a written prediction's variation comes from its own velocity
                if x.1 == "variation" {
                    continue;
                }
                // predictions are stored as f32
                assert!((x.2 - y.2).abs() <= 1e-5 * (1.0 + x.2.abs()), "{x:?} vs {y:?}");
            }
        }
    }
}

#[test]
fn beamspace_predictions_need_explicit_conversion() {
    let dir = tempfile::tempdir().unwrap();
    let exam = phantom(dir.path(), &["--subsectors", "0"]);
    let pred = dir.path().join("pred");
    assert_eq!(code(&exflow(&["-o", s(&pred), "baseline", "--task", "1", "--domain", "beamspace", s(&exam)])), 0);
    let o = exflow(&["-o", s(&dir.path().join("scored")), "evaluate", "--task", "1", "--pred", s(&pred), s(&exam)]);
    assert_eq!(code(&o), 4);
}

#[test]
fn segmentation_baseline_scores_the_tissue_recording() {
    let dir = tempfile::tempdir().unwrap();
    let exam = phantom(dir.path(), &["--subsectors", "0"]);
    let out = dir.path().join("out");
    assert_eq!(code(&exflow(&["-o", s(&out), "--grid", "64", "evaluate", "--task", "3", s(&exam)])), 0);
    let rows = cases(&out.join("task3_cases.csv"));
    let dice = rows.iter().find(|r| r.1 == "dice_score").unwrap().2;
    let loss = rows.iter().find(|r| r.1 == "dice_loss").unwrap().2;
    assert!((0.0..=100.0).contains(&dice) && dice > 50.0, "{dice}");
    assert!((0.0..=1.0).contains(&loss), "{loss}");
    assert_eq!(first_line(&out.join("task3_folds.csv")), "fold,term,mean,std");
}

#[test]
fn short_recordings_are_excluded_not_scored() {
    let dir = tempfile::tempdir().unwrap();
    // 2 beats at 75 bpm give 48 tissue frames but only 10 color frames
    let exam = phantom(dir.path(), &["--subsectors", "0", "--beats", "2"]);
    let out = dir.path().join("out");
    assert_eq!(code(&exflow(&["-o", s(&out), "evaluate", "--task", "2", s(&exam)])), 3);
    assert!(!out.join("task2_cases.csv").exists());
    let excluded = std::fs::read_to_string(out.join("task2_excluded.csv")).unwrap();
    assert!(excluded.lines().nth(1).unwrap().starts_with("phantom/color,2,"), "{excluded}");
}

#[test]
fn folds_group_patients_and_can_be_written_back() {
    let dir = tempfile::tempdir().unwrap();
    let exams = dir.path().join("exams");
    let o = exflow(&[
        "-o", s(&exams), "phantom", "--exams", "4", "--patients", "2", "--beams", "8", "--samples", "16",
        "--no-volume", "--subsectors", "0", "--beats", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    assert_eq!(code(&exflow(&["-o", s(&out), "--folds", "2", "folds", "--write", s(&exams)])), 0);
    let text = std::fs::read_to_string(out.join("folds.csv")).unwrap();
    let mut by_patient = std::collections::BTreeMap::new();
    for l in text.lines().skip(1) {
        let f: Vec<&str> = l.split(',').collect();
        let prev = by_patient.insert(f[1].to_owned(), f[2].to_owned());
        assert!(prev.is_none_or(|p| p == f[2]), "patient {} split across folds", f[1]);
    }
    assert_eq!(by_patient.len(), 2);
    let exam0 = std::fs::read_to_string(exams.join("phantom_000").join("exam.json")).unwrap();
    assert!(exam0.contains("\"fold\""), "{exam0}");
    assert_eq!(first_line(&out.join("filters.csv")), "case_id,task,accept,reasons");
    // manifests hold folds 0 to 4 only
    assert_eq!(code(&exflow(&["-o", s(&out), "--folds", "6", "folds", "--write", s(&exams)])), 2);
}
