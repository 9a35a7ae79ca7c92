use crate::data::{discover, exam_dirs, num, write_file, Case};
use crate::eval::reference_labels;
use crate::{CliError, Result, Settings};
use clap::Args;
use exflow::annotations::{
    rasterize_contours, segmental_strain, strain_curve, volume_curve, Contour2D, Layer,
};
use exflow::container::{
    read_exam_manifest, read_recording, set_exam_fold, write_exam, write_recording, Geometry, Modality, Recording,
    Stream,
};
use exflow::geometry::pgm::{encode, sidecar, Window};
use exflow::geometry::{default_grid_3d, default_grid_for, ScanConverter2D, ScanConverter3D, SectorGeometry2D, SphericalGeometry3D};
use exflow::metrics::{filter_recording, make_patient_folds, FilterParams, Task};
use exflow::phantom::{generate_exam, PhantomConfig};
use exflow::timing::{detect_r_peaks, pair_interleaved, propagate_cycle_annotation, rr_regularity, stitch_multibeat, RPeakList, SubAcquisition};
use ndarray::{Array2, Array4, ArrayView2, Axis};
use rayon::prelude::*;
use std::path::Path;

/// Run `f` over every case in parallel; results keep the case order.
fn per_case<T: Send>(cases: &[Case], f: impl Fn(&Case, Recording) -> Result<T> + Sync) -> Result<Vec<T>> {
    cases
        .par_iter()
        .map(|c| f(c, read_recording(&c.dir)?))
        .collect()
}

pub fn inspect(input: &Path) -> Result<()> {
    let cases = discover(input)?;
    let lines = per_case(&cases, |c, rec| {
        let mut out = Vec::new();
        for (i, st) in rec.streams.iter().enumerate() {
            let h = &st.header;
            let fps = h.frame_rate().map(|f| format!("{f:.3}")).unwrap_or_else(|| "-".into());
            let nyq = h.nyquist_velocity.map(|v| format!("{v}")).unwrap_or_else(|| "-".into());
            let geom = match rec.geometry_of(st) {
                Some(Geometry::Sector2d(_)) => "sector2d",
                Some(Geometry::Spherical3d(_)) => "spherical3d",
                Some(Geometry::Cartesian2d(_)) => "cartesian2d",
                None => "-",
            };
            let shape: Vec<String> = h.shape.iter().map(|d| d.to_string()).collect();
            out.push(format!(
                "{}\t{i}\t{}\t{:?}\t{}\t{}\t{fps}\t{nyq}\t{geom}",
                c.id(),
                h.modality,
                h.dtype,
                shape.join("x"),
                h.n_frames()
            ));
        }
        let a = &rec.annotations;
        out.push(format!(
            "{}\tecg\t{} samples at {} Hz\tcontours {}\tmeshes {}\tmarkers {}",
            c.id(),
            rec.ecg.samples.len(),
            rec.ecg.rate,
            a.contours.len(),
            a.meshes.len(),
            a.markers.len()
        ));
        Ok(out)
    })?;
    println!("case\tstream\tmodality\tdtype\tshape\tframes\tfps\tnyquist\tgeometry");
    for l in lines.into_iter().flatten() {
        println!("{l}");
    }
    Ok(())
}

fn write_pgm_pair(path: &Path, image: ArrayView2<f64>, window: Window) -> Result<()> {
    let (bytes, w) = encode(image, Some(window));
    write_file(path, &bytes)?;
    write_file(&path.with_extension("txt"), sidecar(&w).as_bytes())
}

fn mask_image(m: &Array2<bool>) -> Array2<f64> {
    m.mapv(|b| b as u8 as f64)
}

/// Frames of a 2D stream as `[frame][beam][sample]` views, channel by channel.
fn stream_frames(st: &Stream) -> Vec<(String, Vec<Array2<f64>>)> {
    let h = &st.header;
    let data: Vec<f64> = st.to_f32().iter().map(|&x| x as f64).collect();
    match h.shape.len() {
        3 => {
            let per = h.shape[1] * h.shape[2];
            let frames = data
                .chunks(per)
                .map(|c| Array2::from_shape_vec((h.shape[1], h.shape[2]), c.to_vec()).unwrap())
                .collect();
            vec![(String::new(), frames)]
        }
        4 if h.modality == Modality::Color2d => {
            let per = h.shape[2] * h.shape[3];
            let mut chans = vec![("_velocity".to_owned(), Vec::new()), ("_power".to_owned(), Vec::new())];
            for (i, c) in data.chunks(per).enumerate() {
                chans[i % 2]
                    .1
                    .push(Array2::from_shape_vec((h.shape[2], h.shape[3]), c.to_vec()).unwrap());
            }
            chans
        }
        _ => Vec::new(),
    }
}

fn convert_sector(s: &Settings, out: &Path, st: &Stream, g: &SectorGeometry2D, every: usize, stem: &str) -> Result<usize> {
    let grid = default_grid_for(g, s.grid)?;
    let conv = ScanConverter2D::new(g, &grid)?;
    let mut n = 0;
    for (suffix, frames) in stream_frames(st) {
        let dir = out.join(format!("{stem}{suffix}"));
        let window = Window::of(frames.iter().flat_map(|f| f.iter().copied()));
        write_pgm_pair(&dir.join("mask.pgm"), mask_image(conv.mask()).view(), Window { min: 0.0, max: 1.0 })?;
        for (i, f) in frames.iter().enumerate().step_by(every) {
            let img = conv.convert(f.view())?;
            write_pgm_pair(&dir.join(format!("frame_{i:04}.pgm")), img.view(), window)?;
            n += 1;
        }
    }
    Ok(n)
}

/// 3D streams export the central elevation slice of a Cartesian volume of
/// at most 64 voxels per side.
fn convert_volume(s: &Settings, out: &Path, st: &Stream, g: &SphericalGeometry3D, every: usize, stem: &str) -> Result<usize> {
    let grid = default_grid_3d(g, s.grid.min(64))?;
    let conv = ScanConverter3D::new(g, &grid)?;
    let h = &st.header;
    let data: Vec<f64> = st.to_f32().iter().map(|&x| x as f64).collect();
    let vols = Array4::from_shape_vec((h.shape[0], h.shape[1], h.shape[2], h.shape[3]), data)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let window = Window::of(vols.iter().copied());
    let mid = grid.ny / 2;
    let dir = out.join(stem);
    let mask = mask_image(&conv.mask().index_axis(Axis(0), mid).to_owned());
    write_pgm_pair(&dir.join("mask.pgm"), mask.view(), Window { min: 0.0, max: 1.0 })?;
    let mut n = 0;
    for i in (0..h.shape[0]).step_by(every) {
        let v = conv.convert(vols.index_axis(Axis(0), i))?;
        write_pgm_pair(&dir.join(format!("frame_{i:04}.pgm")), v.index_axis(Axis(0), mid), window)?;
        n += 1;
    }
    Ok(n)
}

pub fn convert(s: &Settings, input: &Path, every: usize) -> Result<()> {
    if every == 0 {
        return Err(CliError::Usage("--every must be at least 1".into()));
    }
    let cases = discover(input)?;
    let counts = per_case(&cases, |c, rec| {
        let out = c.out_dir(&s.out);
        let mut n = 0;
        for (i, st) in rec.streams.iter().enumerate() {
            let stem = format!("stream_{i:02}_{}", st.header.modality);
            n += match rec.geometry_of(st) {
                Some(Geometry::Sector2d(g)) => convert_sector(s, &out, st, g, every, &stem)?,
                Some(Geometry::Spherical3d(g)) => convert_volume(s, &out, st, g, every, &stem)?,
                _ => 0,
            };
        }
        Ok(n)
    })?;
    for (c, n) in cases.iter().zip(counts) {
        println!("{}\t{n} images", c.id());
    }
    Ok(())
}

fn detect(rec: &Recording) -> Result<RPeakList> {
    Ok(detect_r_peaks(&rec.ecg)?.peaks)
}

pub fn align(s: &Settings, input: &Path) -> Result<()> {
    let cases = discover(input)?;
    let lines = per_case(&cases, |c, rec| {
        let out = c.out_dir(&s.out);
        let peaks = detect(&rec)?;
        write_file(&out.join("r_peaks.csv"), peaks.to_csv().as_bytes())?;
        let cv = rr_regularity(&peaks).map(|v| format!("{v:.4}")).unwrap_or_else(|_| "-".into());
        let mut line = format!("{}\tpeaks {}\trr_cv {cv}", c.id(), peaks.len());
        let Some((bi, bmode)) = rec
            .streams_of(Modality::Bmode2d)
            .next()
            .or_else(|| rec.streams_of(Modality::Bmode3d).next())
        else {
            return Ok(line);
        };
        let tb = &bmode.header.timestamps;
        for (i, st) in rec.streams.iter().enumerate().filter(|(_, st)| st.header.modality.is_doppler()) {
            let ts = &st.header.timestamps;
            let p = pair_interleaved(tb, ts, s.slack)?;
            let mut csv = String::from("frame,time_s,bmode_frame,bmode_time_s,dt_s\n");
            for (k, m) in p.matches.iter().enumerate() {
                match m {
                    Some(j) => csv.push_str(&format!("{k},{},{j},{},{}\n", ts[k], tb[*j], ts[k] - tb[*j])),
                    None => csv.push_str(&format!("{k},{},,,\n", ts[k])),
                }
            }
            write_file(&out.join(format!("pairing_{i:02}_{bi:02}.csv")), csv.as_bytes())?;
            line.push_str(&format!("\tstream {i}: {} unmatched", p.n_unmatched()));
        }
        Ok(line)
    })?;
    for l in lines {
        println!("{l}");
    }
    Ok(())
}

fn same_grid(a: &SphericalGeometry3D, b: &SphericalGeometry3D) -> bool {
    let (x, y) = (&a.azimuth, &b.azimuth);
    x.dtheta == y.dtheta
        && x.r0 == y.r0
        && x.dr == y.dr
        && x.n_samples == y.n_samples
        && a.phi0 == b.phi0
        && a.dphi == b.dphi
        && a.n_planes == b.n_planes
}

/// Gated 3D sub-sectors of a recording with their beam offsets in the
/// union sector, whose geometry is returned alongside.
fn subacquisitions(rec: &Recording) -> Result<(Vec<SubAcquisition>, SphericalGeometry3D)> {
    let mut parts = Vec::new();
    for (_, st) in rec.streams_of(Modality::Bmode3d) {
        let Some(Geometry::Spherical3d(g)) = rec.geometry_of(st) else {
            return Err(CliError::Data(format!("{}: 3D stream without spherical geometry", rec.id)));
        };
        parts.push((st, *g));
    }
    if parts.len() < 2 {
        return Err(CliError::Data(format!("{}: need at least two 3D sub-sectors", rec.id)));
    }
    let first = parts[0].1;
    let theta0 = parts.iter().map(|p| p.1.azimuth.theta0).fold(f64::INFINITY, f64::min);
    let d = first.azimuth.dtheta;
    let mut subs = Vec::new();
    let mut end = 0;
    for (st, g) in &parts {
        if !same_grid(g, &first) {
            return Err(CliError::Data(format!("{}: sub-sectors differ in sampling", rec.id)));
        }
        let off = (g.azimuth.theta0 - theta0) / d;
        if (off - off.round()).abs() > 1e-6 {
            return Err(CliError::Data(format!("{}: sub-sector not aligned to the beam grid", rec.id)));
        }
        let off = off.round() as usize;
        end = end.max(off + g.azimuth.n_beams);
        let h = &st.header;
        let data: Vec<f64> = st.to_f32().iter().map(|&x| x as f64).collect();
        subs.push(SubAcquisition {
            frames: Array4::from_shape_vec((h.shape[0], h.shape[1], h.shape[2], h.shape[3]), data)
                .map_err(|e| CliError::Data(e.to_string()))?,
            timestamps: h.timestamps.clone(),
            beam_offset: off,
        });
    }
    let mut wide = first;
    wide.azimuth.theta0 = theta0;
    wide.azimuth.n_beams = end;
    Ok((subs, wide))
}

pub fn stitch(s: &Settings, input: &Path, peaks: Option<&Path>) -> Result<()> {
    let cases = discover(input)?;
    let given = match peaks {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("--peaks {}: {e}", p.display())))?;
            Some(RPeakList::from_csv(&text)?)
        }
        None => None,
    };
    let lines = per_case(&cases, |c, rec| {
        if rec.streams_of(Modality::Bmode3d).count() < 2 {
            return Ok(None);
        }
        let (subs, wide) = subacquisitions(&rec)?;
        let peaks = match &given {
            Some(p) => p.clone(),
            None => detect(&rec)?,
        };
        let st = stitch_multibeat(&subs, &peaks, s.max_cv)?;
        let rr = peaks.rr_intervals();
        let mean_rr = rr.iter().sum::<f64>() / rr.len() as f64;
        let (n, p, b, k) = st.frames.dim();
        let mut geom = wide;
        geom.azimuth.theta0 = wide.azimuth.theta_at(st.beam_offset as f64);
        geom.azimuth.n_beams = b;
        let stream = Stream::new_f32(
            Modality::Bmode3d,
            vec![n, p, b, k],
            st.phases.iter().map(|ph| ph * mean_rr).collect(),
            st.frames.iter().map(|&v| v as f32).collect(),
            None,
            Some(0),
        );
        let out = Recording {
            id: rec.id.clone(),
            streams: vec![stream],
            ecg: rec.ecg.clone(),
            geometries: vec![Geometry::Spherical3d(geom)],
            annotations: Default::default(),
        };
        write_recording(&out, &c.out_dir(&s.out).join("stitched"))?;
        Ok(Some(format!("{}\t{} sub-sectors\t{n} frames\t{b} beams", c.id(), subs.len())))
    })?;
    let lines: Vec<String> = lines.into_iter().flatten().collect();
    if lines.is_empty() {
        return Err(CliError::Data(format!("no multi-sector 3D recording under {}", input.display())));
    }
    for l in lines {
        println!("{l}");
    }
    Ok(())
}

fn curve_rows(frames: &[u32], times: &[f64], values: &[f64]) -> String {
    let mut csv = String::from("frame,time_s,value\n");
    for ((f, t), v) in frames.iter().zip(times).zip(values) {
        csv.push_str(&format!("{f},{},{}\n", num(*t), num(*v)));
    }
    csv
}

fn label_window() -> Window {
    Window { min: 0.0, max: 2.0 }
}

fn rasterize_contours_of(s: &Settings, out: &Path, rec: &Recording, propagate: bool) -> Result<usize> {
    let (labels, annotated, grid) = reference_labels(rec, s.grid)?;
    let c = &rec.annotations.contours;
    let endo = c.iter().find(|x| x.layer == Layer::Endocardial).expect("reference labels found one");
    let stream = &rec.streams[endo.stream as usize];
    let ts = &stream.header.timestamps;
    let times: Vec<f64> = endo.frame_indices.iter().map(|&f| ts[f as usize]).collect();

    let strain = strain_curve(&endo.frames, 0)?;
    write_file(&out.join("strain.csv"), curve_rows(&endo.frame_indices, &times, &strain).as_bytes())?;
    let seg = segmental_strain(&endo.frames, 0, 6)?;
    let mut csv = String::from("frame,time_s,segment,value\n");
    for (k, row) in seg.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            csv.push_str(&format!("{},{},{j},{}\n", endo.frame_indices[k], num(times[k]), num(*v)));
        }
    }
    write_file(&out.join("segmental_strain.csv"), csv.as_bytes())?;

    let mut n = 0;
    if propagate {
        let epi = c
            .iter()
            .find(|x| x.layer == Layer::Epicardial && x.stream == endo.stream && x.frame_indices == endo.frame_indices);
        let pairs: Vec<(Contour2D, Option<Contour2D>)> = (0..endo.frames.len())
            .map(|k| (endo.frames[k].clone(), epi.map(|e| e.frames[k].clone())))
            .collect();
        let peaks = detect(rec)?;
        let prop = propagate_cycle_annotation(&pairs, &times, &peaks, ts, s.max_cv)?;
        let mut csv = String::from("frame,source_frame,phase\n");
        for (i, (f, src)) in prop.frames.iter().zip(&prop.provenance).enumerate() {
            if let (Some((endo_c, epi_c)), Some((k, ph))) = (f, src) {
                let m = rasterize_contours(endo_c, epi_c.as_ref(), &grid)?;
                write_pgm_pair(&out.join("labels").join(format!("frame_{i:04}.pgm")), m.mapv(f64::from).view(), label_window())?;
                csv.push_str(&format!("{i},{},{}\n", endo.frame_indices[*k], num(*ph)));
                n += 1;
            }
        }
        write_file(&out.join("propagation.csv"), csv.as_bytes())?;
    } else {
        for (i, _) in annotated.iter().enumerate().filter(|(_, a)| **a) {
            let m = labels.index_axis(Axis(0), i).mapv(f64::from);
            write_pgm_pair(&out.join("labels").join(format!("frame_{i:04}.pgm")), m.view(), label_window())?;
            n += 1;
        }
    }
    Ok(n)
}

fn rasterize_meshes_of(out: &Path, rec: &Recording) -> Result<()> {
    let series = &rec.annotations.meshes[0];
    let ts = &rec.streams[series.stream as usize].header.timestamps;
    let times: Vec<f64> = series.frame_indices.iter().map(|&f| ts[f as usize]).collect();
    let peaks = detect(rec).ok().filter(|p| !p.is_empty());
    let vc = volume_curve(&series.frames, &times, peaks.as_ref())?;
    write_file(&out.join("volume.csv"), curve_rows(&series.frame_indices, &times, &vc.volumes_ml).as_bytes())?;
    let mut csv = String::from("beat,first_frame,end_frame,ed_frame,es_frame,edv_ml,esv_ml\n");
    for (k, b) in vc.beats.iter().enumerate() {
        let fi = |i: usize| series.frame_indices[i];
        let end = if b.frames.1 < series.frame_indices.len() {
            fi(b.frames.1).to_string()
        } else {
            (fi(b.frames.1 - 1) + 1).to_string()
        };
        csv.push_str(&format!(
            "{k},{},{end},{},{},{},{}\n",
            fi(b.frames.0),
            fi(b.ed),
            fi(b.es),
            num(vc.volumes_ml[b.ed]),
            num(vc.volumes_ml[b.es])
        ));
    }
    write_file(&out.join("volume_beats.csv"), csv.as_bytes())
}

pub fn rasterize(s: &Settings, input: &Path, propagate: bool) -> Result<()> {
    let cases = discover(input)?;
    let lines = per_case(&cases, |c, rec| {
        let out = c.out_dir(&s.out);
        let a = &rec.annotations;
        let mut line = Vec::new();
        if a.contours.iter().any(|x| x.layer == Layer::Endocardial) {
            let n = rasterize_contours_of(s, &out, &rec, propagate)?;
            line.push(format!("{n} label maps"));
        }
        if !a.meshes.is_empty() {
            rasterize_meshes_of(&out, &rec)?;
            line.push("volume curve".into());
        }
        Ok((!line.is_empty()).then(|| format!("{}\t{}", c.id(), line.join("\t"))))
    })?;
    for l in lines.into_iter().flatten() {
        println!("{l}");
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct PhantomArgs {
    /// Number of exams; more than one writes one sub-directory per exam.
    #[arg(long, default_value_t = 1)]
    pub exams: usize,
    /// Number of distinct patients the exams are spread over.
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long, default_value = "phantom")]
    pub prefix: String,
    /// Image SNR in dB, or `none`.
    #[arg(long, default_value = "30")]
    pub snr: String,
    /// ECG SNR in dB, or `none`.
    #[arg(long = "ecg-snr", default_value = "30")]
    pub ecg_snr: String,
    #[arg(long, default_value_t = 75.0)]
    pub hr: f64,
    #[arg(long, default_value_t = 8)]
    pub beats: usize,
    /// Relative RR spread.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    /// Endocardial displacement at peak contraction, metres.
    #[arg(long, default_value_t = 0.006)]
    pub amplitude: f64,
    #[arg(long = "jet-peak", default_value_t = 0.9)]
    pub jet_peak: f64,
    #[arg(long = "beams", default_value_t = 64)]
    pub beams: usize,
    #[arg(long = "samples", default_value_t = 192)]
    pub samples: usize,
    /// Gated 3D sub-sectors in the stitching recording; 0 leaves it out.
    #[arg(long, default_value_t = 3)]
    pub subsectors: usize,
    #[arg(long = "no-volume")]
    pub no_volume: bool,
}

fn snr(v: &str, flag: &str) -> Result<Option<f64>> {
    if v == "none" {
        return Ok(None);
    }
    v.parse::<f64>()
        .map(Some)
        .map_err(|_| CliError::Usage(format!("--{flag} expects a number or `none`, got {v:?}")))
}

pub fn phantom(s: &Settings, a: &PhantomArgs) -> Result<()> {
    if a.exams == 0 {
        return Err(CliError::Usage("--exams must be at least 1".into()));
    }
    let patients = a.patients.unwrap_or(a.exams);
    if patients == 0 || patients > a.exams {
        return Err(CliError::Usage("--patients must be between 1 and --exams".into()));
    }
    let (snr_db, ecg_snr_db) = (snr(&a.snr, "snr")?, snr(&a.ecg_snr, "ecg-snr")?);
    let base = PhantomConfig::default();
    let configs: Vec<(PhantomConfig, std::path::PathBuf)> = (0..a.exams)
        .map(|k| {
            let (id, dir) = if a.exams == 1 {
                (a.prefix.clone(), s.out.clone())
            } else {
                let id = format!("{}_{k:03}", a.prefix);
                (id.clone(), s.out.join(id))
            };
            let mut sector = base.sector;
            sector = SectorGeometry2D::symmetric(sector.span(), a.beams, sector.r0, sector.max_depth(), a.samples);
            let cfg = PhantomConfig {
                seed: s.seed.wrapping_add(k as u64),
                exam_id: id,
                patient_key: format!("{}_p{:03}", a.prefix, k % patients),
                sector,
                heart_rate_bpm: a.hr,
                n_beats: a.beats,
                rr_jitter: a.jitter,
                motion_amplitude: a.amplitude,
                jet_peak: a.jet_peak,
                snr_db,
                ecg_snr_db,
                include_volume: !a.no_volume,
                stitch_subsectors: a.subsectors,
                ..base.clone()
            };
            (cfg, dir)
        })
        .collect();
    for (cfg, _) in &configs {
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let ids: Vec<String> = configs
        .par_iter()
        .map(|(cfg, dir)| -> Result<String> {
            let (exam, truth) = generate_exam(cfg)?;
            write_exam(&exam, dir)?;
            truth.save(&dir.join("truth"))?;
            Ok(format!("{}\t{}", exam.manifest.exam_id, dir.display()))
        })
        .collect::<Result<_>>()?;
    for l in ids {
        println!("{l}");
    }
    Ok(())
}

pub fn folds(s: &Settings, input: &Path, write: bool) -> Result<()> {
    let dirs = exam_dirs(input)?;
    if dirs.is_empty() {
        return Err(CliError::Data(format!("no exams under {}", input.display())));
    }
    let manifests = dirs.iter().map(|d| read_exam_manifest(d)).collect::<std::result::Result<Vec<_>, _>>()?;
    let assignment = make_patient_folds(&manifests, s.folds, s.seed)?;
    let mut csv = String::from("exam_id,patient_key,fold\n");
    for m in &manifests {
        let key = m.patient_key.as_deref().unwrap_or_default();
        csv.push_str(&format!("{},{key},{}\n", m.exam_id, assignment.by_exam[&m.exam_id]));
    }
    write_file(&s.out.join("folds.csv"), csv.as_bytes())?;
    if write {
        if s.folds > 5 {
            return Err(CliError::Usage("exam manifests hold folds 0 to 4; --write needs --folds 5 or fewer".into()));
        }
        for (d, m) in dirs.iter().zip(&manifests) {
            set_exam_fold(d, Some(assignment.by_exam[&m.exam_id]))?;
        }
    }

    let cases = discover(input)?;
    let params = FilterParams {
        slack_factor: s.slack,
        ..FilterParams::default()
    };
    let rows = per_case(&cases, |c, rec| {
        let mut rows = Vec::new();
        for task in [Task::Tissue, Task::Color, Task::Segmentation] {
            let applies = match task {
                Task::Tissue => rec.first_of(Modality::Tdi2d).is_some(),
                Task::Color => rec.first_of(Modality::Color2d).is_some(),
                Task::Segmentation => !rec.annotations.contours.is_empty(),
            };
            if !applies {
                continue;
            }
            let d = filter_recording(&rec, task, &params)?;
            rows.push(format!(
                "{},{},{},{}\n",
                c.id(),
                task.number(),
                d.accept,
                d.reasons.join("; ").replace(',', ";")
            ));
        }
        Ok(rows)
    })?;
    let mut f = String::from("case_id,task,accept,reasons\n");
    f.extend(rows.into_iter().flatten());
    write_file(&s.out.join("filters.csv"), f.as_bytes())?;
    print!("{csv}");
    Ok(())
}
