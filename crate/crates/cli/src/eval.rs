//! Task scoring in the Cartesian domain and temporal-mean baselines.

use crate::data::{discover, write_file, Case};
use crate::{CliError, DomainArg, Result, Settings};
use exflow::annotations::{rasterize_contours, Layer};
use exflow::container::{read_recording, write_recording, BeamBox, Geometry, Modality, Recording, Stream};
use exflow::geometry::{default_grid_for, CartesianGrid2D, ScanConverter2D, SectorGeometry2D};
use exflow::metrics::{
    argmax_labels, dice_score, filter_recording, make_patient_folds, masked_dice_loss, task1_loss, task2_loss,
    temporal_mean_baseline, turbulence_proxy, valid_velocity_mask, FilterParams, FlowFields, MetricReport, Task,
};
use exflow::timing::pair_interleaved;
use ndarray::{s, Array2, Array3, Array4, ArrayView3, Axis};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;

/// Source of predictions for `evaluate`.
enum Pred<'a> {
    Baseline(DomainArg),
    Dir { root: &'a Path, convert: bool },
}

fn sector_of(rec: &Recording, stream: &Stream) -> Result<SectorGeometry2D> {
    match rec.geometry_of(stream) {
        Some(Geometry::Sector2d(g)) => Ok(*g),
        _ => Err(CliError::Data(format!(
            "{}: {} stream has no 2D sector geometry",
            rec.id, stream.header.modality
        ))),
    }
}

fn frames(stream: &Stream) -> Result<Array3<f64>> {
    let h = &stream.header;
    if h.shape.len() != 3 {
        return Err(CliError::Data(format!("{} stream is not [frame][row][col]", h.modality)));
    }
    let v: Vec<f64> = stream.to_f32().iter().map(|&x| x as f64).collect();
    Ok(Array3::from_shape_vec((h.shape[0], h.shape[1], h.shape[2]), v).expect("validated shape"))
}

/// Channel `c` of a `[frame][channel][beam][sample]` color stream.
fn channel(stream: &Stream, c: usize) -> Result<Array3<f64>> {
    let h = &stream.header;
    if h.shape.len() != 4 || h.shape[1] != 2 {
        return Err(CliError::Data("color stream is not [frame][2][row][col]".into()));
    }
    let v: Vec<f64> = stream.to_f32().iter().map(|&x| x as f64).collect();
    let a = Array4::from_shape_vec((h.shape[0], 2, h.shape[2], h.shape[3]), v).expect("validated shape");
    Ok(a.index_axis(Axis(1), c).to_owned())
}

struct Cartesian {
    conv: ScanConverter2D,
    grid: CartesianGrid2D,
}

impl Cartesian {
    fn new(geom: &SectorGeometry2D, size: usize) -> Result<Self> {
        let grid = default_grid_for(geom, size)?;
        Ok(Self {
            conv: ScanConverter2D::new(geom, &grid)?,
            grid,
        })
    }

    fn convert(&self, f: ArrayView3<f64>) -> Result<Array3<f64>> {
        let views: Vec<_> = f.axis_iter(Axis(0)).collect();
        let out: Vec<Array2<f64>> = views
            .into_par_iter()
            .map(|fr| self.conv.convert(fr))
            .collect::<std::result::Result<_, _>>()?;
        let [h, w] = self.grid.shape();
        let mut a = Array3::zeros((out.len(), h, w));
        for (i, fr) in out.iter().enumerate() {
            a.index_axis_mut(Axis(0), i).assign(fr);
        }
        Ok(a)
    }

    fn region(&self, n: usize) -> Array3<bool> {
        broadcast(self.conv.mask(), n)
    }

    /// Grid pixels whose beamspace position falls inside the box cells.
    fn box_mask(&self, bx: &BeamBox) -> Array2<bool> {
        let g = self.conv.geometry();
        let [h, w] = self.grid.shape();
        Array2::from_shape_fn((h, w), |(r, c)| {
            if !self.conv.mask()[[r, c]] {
                return false;
            }
            let (x, z) = self.grid.pixel_center(r, c);
            let p = g.cartesian_to_beam(x, z);
            p.beam >= bx.beams.0 as f64 - 0.5
                && p.beam <= bx.beams.1 as f64 - 0.5
                && p.sample >= bx.samples.0 as f64 - 0.5
                && p.sample <= bx.samples.1 as f64 - 0.5
        })
    }
}

fn broadcast<T: Clone>(m: &Array2<T>, n: usize) -> Array3<T> {
    m.broadcast((n, m.dim().0, m.dim().1)).expect("broadcast").to_owned()
}

fn task_applies(rec: &Recording, task: Task) -> bool {
    match task {
        Task::Tissue => rec.first_of(Modality::Tdi2d).is_some(),
        Task::Color => rec.first_of(Modality::Color2d).is_some(),
        Task::Segmentation => !rec.annotations.contours.is_empty(),
    }
}

fn load_prediction(root: &Path, case: &Case) -> Result<Recording> {
    let dir = case.out_dir(root);
    if !dir.exists() {
        return Err(CliError::Data(format!("no prediction for {} at {}", case.id(), dir.display())));
    }
    Ok(read_recording(&dir)?)
}

/// Predicted frames of `modality` on the scoring grid.
fn predicted(pred: &Recording, modality: Modality, cart: &Cartesian, convert: bool, chan: Option<usize>) -> Result<Array3<f64>> {
    let st = pred
        .first_of(modality)
        .ok_or_else(|| CliError::Data(format!("{}: prediction has no {modality} stream", pred.id)))?;
    let f = match chan {
        Some(c) => channel(st, c)?,
        None => frames(st)?,
    };
    match pred.geometry_of(st) {
        Some(Geometry::Sector2d(g)) => {
            if !convert {
                return Err(CliError::Refused(format!(
                    "{}: prediction is in beamspace; scores are computed on the Cartesian grid, pass --convert",
                    pred.id
                )));
            }
            if g != cart.conv.geometry() {
                return Err(CliError::Data(format!("{}: prediction geometry differs from the target", pred.id)));
            }
            cart.convert(f.view())
        }
        Some(Geometry::Cartesian2d(g)) if *g == cart.grid => Ok(f),
        Some(Geometry::Cartesian2d(_)) => Err(CliError::Data(format!(
            "{}: prediction grid differs from the scoring grid",
            pred.id
        ))),
        _ => Err(CliError::Data(format!("{}: prediction has no usable geometry", pred.id))),
    }
}

fn mean(a: ArrayView3<f64>) -> Result<Array3<f64>> {
    Ok(temporal_mean_baseline(a)?)
}

type Terms = Vec<(&'static str, Option<f64>)>;

fn tissue_case(s: &Settings, case: &Case, rec: &Recording, pred: &Pred) -> Result<Terms> {
    let tdi = rec.first_of(Modality::Tdi2d).expect("task applies");
    let nyq = tdi.header.nyquist_velocity.expect("validated Doppler stream");
    let cart = Cartesian::new(&sector_of(rec, tdi)?, s.grid)?;
    let target_b = frames(tdi)?;
    let target = cart.convert(target_b.view())?;
    let p = match pred {
        Pred::Baseline(DomainArg::Beamspace) => cart.convert(mean(target_b.view())?.view())?,
        Pred::Baseline(DomainArg::Cartesian) => mean(target.view())?,
        Pred::Dir { root, convert } => {
            predicted(&load_prediction(root, case)?, Modality::Tdi2d, &cart, *convert, None)?
        }
    };
    same_frames(&p, &target)?;
    let region = cart.region(target.dim().0);
    let loss = task1_loss(p.view(), target.view(), nyq, Some(region.view()))?;
    Ok(vec![("alias", Some(loss))])
}

fn same_frames(p: &Array3<f64>, t: &Array3<f64>) -> Result<()> {
    if p.dim() != t.dim() {
        return Err(CliError::Data(format!("prediction shape {:?} differs from target {:?}", p.dim(), t.dim())));
    }
    Ok(())
}

/// B-mode frames paired to each color frame, plus the color stream.
fn color_inputs<'r>(s: &Settings, rec: &'r Recording) -> Result<(&'r Stream, Array3<f64>)> {
    let color = rec.first_of(Modality::Color2d).expect("task applies");
    let bmode = rec
        .first_of(Modality::Bmode2d)
        .ok_or_else(|| CliError::Data(format!("{}: color task needs a B-mode stream", rec.id)))?;
    if sector_of(rec, bmode)? != sector_of(rec, color)? {
        return Err(CliError::Data(format!("{}: B-mode and color geometries differ", rec.id)));
    }
    let pairing = pair_interleaved(&bmode.header.timestamps, &color.header.timestamps, s.slack)?;
    let b = frames(bmode)?;
    let mut paired = Array3::zeros((pairing.matches.len(), b.dim().1, b.dim().2));
    for (i, m) in pairing.matches.iter().enumerate() {
        let j = m.ok_or_else(|| {
            CliError::Data(format!("{}: color frame {i} has no B-mode frame within slack", rec.id))
        })?;
        paired.index_axis_mut(Axis(0), i).assign(&b.index_axis(Axis(0), j));
    }
    Ok((color, paired))
}

fn color_case(s: &Settings, case: &Case, rec: &Recording, pred: &Pred) -> Result<Terms> {
    let (color, paired) = color_inputs(s, rec)?;
    let cart = Cartesian::new(&sector_of(rec, color)?, s.grid)?;
    let (vel_b, pow_b) = (channel(color, 0)?, channel(color, 1)?);
    let vel = cart.convert(vel_b.view())?;
    let pow = cart.convert(pow_b.view())?;
    let bm = cart.convert(paired.view())?;
    let var = turbulence_proxy(vel.view());
    let n = vel.dim().0;
    let bx = match color.color_box {
        Some(b) => cart.box_mask(&b),
        None => cart.conv.mask().clone(),
    };
    let mask = valid_velocity_mask(broadcast(&bx, n).view(), pow.view(), bm.view(), &s.mask_params())?;
    let (pv, pp, ps) = match pred {
        Pred::Baseline(DomainArg::Beamspace) => (
            cart.convert(mean(vel_b.view())?.view())?,
            cart.convert(mean(pow_b.view())?.view())?,
            cart.convert(mean(turbulence_proxy(vel_b.view()).view())?.view())?,
        ),
        Pred::Baseline(DomainArg::Cartesian) => (mean(vel.view())?, mean(pow.view())?, mean(var.view())?),
        Pred::Dir { root, convert } => {
            let p = load_prediction(root, case)?;
            let pv = predicted(&p, Modality::Color2d, &cart, *convert, Some(0))?;
            let pp = predicted(&p, Modality::Color2d, &cart, *convert, Some(1))?;
            let ps = turbulence_proxy(pv.view());
            (pv, pp, ps)
        }
    };
    same_frames(&pv, &vel)?;
    let region = cart.region(n);
    let l = task2_loss(
        &FlowFields {
            velocity: pv.view(),
            power: pp.view(),
            variation: ps.view(),
        },
        &FlowFields {
            velocity: vel.view(),
            power: pow.view(),
            variation: var.view(),
        },
        mask.binary.view(),
        Some(region.view()),
    )?;
    Ok(vec![("velocity", l.velocity), ("power", Some(l.power)), ("variation", l.variation)])
}

/// Reference labels `[frame][row][col]` and annotated-frame flags of the
/// first left-ventricular endocardial series.
pub(crate) fn reference_labels(rec: &Recording, grid_size: usize) -> Result<(Array3<u8>, Vec<bool>, CartesianGrid2D)> {
    let c = &rec.annotations.contours;
    let endo = c
        .iter()
        .find(|x| x.layer == Layer::Endocardial)
        .ok_or_else(|| CliError::Data(format!("{}: no endocardial contours", rec.id)))?;
    let epi = c
        .iter()
        .find(|x| x.layer == Layer::Epicardial && x.stream == endo.stream && x.frame_indices == endo.frame_indices);
    let stream = &rec.streams[endo.stream as usize];
    let grid = default_grid_for(&sector_of(rec, stream)?, grid_size)?;
    let n = stream.header.n_frames();
    let [h, w] = grid.shape();
    let mut labels = Array3::zeros((n, h, w));
    let mut annotated = vec![false; n];
    for (k, &fi) in endo.frame_indices.iter().enumerate() {
        let m = rasterize_contours(&endo.frames[k], epi.map(|e| &e.frames[k]), &grid)?;
        labels.index_axis_mut(Axis(0), fi as usize).assign(&m);
        annotated[fi as usize] = true;
    }
    Ok((labels, annotated, grid))
}

fn segmentation_case(s: &Settings, _case: &Case, rec: &Recording, pred: &Pred) -> Result<Terms> {
    if let Pred::Dir { .. } = pred {
        return Err(CliError::Usage("task 3 is scored against the inline baseline only".into()));
    }
    let (labels, annotated, _) = reference_labels(rec, s.grid)?;
    let (n, h, w) = labels.dim();
    let k = annotated.iter().filter(|&&a| a).count() as f64;
    let mut freq = Array3::<f64>::zeros((3, h, w));
    for (f, _) in annotated.iter().enumerate().filter(|(_, a)| **a) {
        for ((r, c), &l) in labels.index_axis(Axis(0), f).indexed_iter() {
            freq[[l as usize, r, c]] += 1.0;
        }
    }
    freq /= k;
    let probs = freq.broadcast((n, 3, h, w)).expect("broadcast").to_owned();
    let loss = masked_dice_loss(probs.view(), labels.view(), &annotated)?;
    let score = dice_score(argmax_labels(probs.view()).view(), labels.view(), &annotated)?;
    Ok(vec![("dice_loss", Some(loss)), ("dice_score", Some(score))])
}

/// Folds from each exam's manifest, or assigned from patient keys when
/// manifests carry none.
fn case_folds(s: &Settings, cases: &[Case]) -> BTreeMap<String, Option<u8>> {
    let mut exams: BTreeMap<String, _> = BTreeMap::new();
    for c in cases {
        if let Some(m) = &c.exam {
            exams.insert(m.exam_id.clone(), m.clone());
        }
    }
    let manifests: Vec<_> = exams.values().cloned().collect();
    let assigned = make_patient_folds(&manifests, s.folds, s.seed).ok();
    cases
        .iter()
        .map(|c| {
            let f = c.exam.as_ref().and_then(|m| {
                m.fold
                    .or_else(|| assigned.as_ref().map(|a| a.by_exam[&m.exam_id]))
            });
            (c.id(), f)
        })
        .collect()
}

enum Outcome {
    Skip,
    Excluded(Vec<String>),
    Scored(Terms),
}

pub fn evaluate(s: &Settings, input: &Path, task: u8, pred: &str, domain: DomainArg, convert: bool) -> Result<()> {
    let task = Task::from_number(task).ok_or_else(|| CliError::Usage(format!("unknown task {task}")))?;
    let root;
    let pred = if pred == "baseline" {
        Pred::Baseline(domain)
    } else {
        root = std::path::PathBuf::from(pred);
        if !root.is_dir() {
            return Err(CliError::Usage(format!("--pred {pred}: not a directory")));
        }
        Pred::Dir { root: &root, convert }
    };
    let cases = discover(input)?;
    let folds = case_folds(s, &cases);
    let params = FilterParams {
        slack_factor: s.slack,
        ..FilterParams::default()
    };
    let outcomes: Vec<Outcome> = cases
        .par_iter()
        .map(|c| -> Result<Outcome> {
            let rec = read_recording(&c.dir)?;
            if !task_applies(&rec, task) {
                return Ok(Outcome::Skip);
            }
            let d = filter_recording(&rec, task, &params)?;
            if !d.accept {
                return Ok(Outcome::Excluded(d.reasons));
            }
            let terms = match task {
                Task::Tissue => tissue_case(s, c, &rec, &pred),
                Task::Color => color_case(s, c, &rec, &pred),
                Task::Segmentation => segmentation_case(s, c, &rec, &pred),
            }?;
            Ok(Outcome::Scored(terms))
        })
        .collect::<Result<_>>()?;

    let mut report = MetricReport::default();
    let mut excluded = String::from("case_id,task,reason\n");
    let n = task.number();
    for (c, o) in cases.iter().zip(outcomes) {
        match o {
            Outcome::Skip => {}
            Outcome::Excluded(reasons) => {
                for r in reasons {
                    excluded.push_str(&format!("{},{n},{}\n", c.id(), r.replace(',', ";")));
                }
            }
            Outcome::Scored(terms) => {
                for (term, v) in terms {
                    report.push(&c.id(), folds[&c.id()], n, term, v);
                }
            }
        }
    }
    // exclusions are worth keeping even when nothing was scored
    write_file(&s.out.join(format!("task{n}_excluded.csv")), excluded.as_bytes())?;
    if report.cases.is_empty() {
        return Err(CliError::Data(format!("no recording under {} qualifies for task {n}", input.display())));
    }
    write_file(&s.out.join(format!("task{n}_cases.csv")), report.cases_csv().as_bytes())?;
    write_file(&s.out.join(format!("task{n}_folds.csv")), report.folds_csv(s.folds).as_bytes())?;
    print!("{}", report.cases_csv());
    Ok(())
}

fn prediction_recording(rec: &Recording, stream: Stream, geometry: Geometry) -> Recording {
    Recording {
        id: rec.id.clone(),
        streams: vec![stream],
        ecg: rec.ecg.clone(),
        geometries: vec![geometry],
        annotations: Default::default(),
    }
}

fn to_f32(a: &Array3<f64>) -> Vec<f32> {
    a.iter().map(|&v| v as f32).collect()
}

fn stack_channels(v: &Array3<f64>, p: &Array3<f64>) -> Vec<f32> {
    let (n, h, w) = v.dim();
    let mut out = Vec::with_capacity(2 * n * h * w);
    for f in 0..n {
        out.extend(v.slice(s![f, .., ..]).iter().map(|&x| x as f32));
        out.extend(p.slice(s![f, .., ..]).iter().map(|&x| x as f32));
    }
    out
}

pub fn baseline(s: &Settings, input: &Path, task: u8, domain: DomainArg) -> Result<()> {
    let task = Task::from_number(task).ok_or_else(|| CliError::Usage(format!("unknown task {task}")))?;
    let cases = discover(input)?;
    let written: Vec<Option<String>> = cases
        .par_iter()
        .map(|c| -> Result<Option<String>> {
            let rec = read_recording(&c.dir)?;
            if !task_applies(&rec, task) {
                return Ok(None);
            }
            let (modality, src) = match task {
                Task::Tissue => (Modality::Tdi2d, rec.first_of(Modality::Tdi2d).unwrap()),
                _ => (Modality::Color2d, rec.first_of(Modality::Color2d).unwrap()),
            };
            let geom = sector_of(&rec, src)?;
            let h = &src.header;
            let chans: Vec<Array3<f64>> = match task {
                Task::Tissue => vec![frames(src)?],
                _ => vec![channel(src, 0)?, channel(src, 1)?],
            };
            let (chans, geometry, frame_shape) = match domain {
                DomainArg::Beamspace => (
                    chans.iter().map(|a| mean(a.view())).collect::<Result<Vec<_>>>()?,
                    Geometry::Sector2d(geom),
                    geom.frame_shape(),
                ),
                DomainArg::Cartesian => {
                    let cart = Cartesian::new(&geom, s.grid)?;
                    let conv = chans
                        .iter()
                        .map(|a| cart.convert(a.view()).and_then(|c| mean(c.view())))
                        .collect::<Result<Vec<_>>>()?;
                    (conv, Geometry::Cartesian2d(cart.grid), cart.grid.shape())
                }
            };
            let (shape, data) = if chans.len() == 1 {
                (vec![h.n_frames(), frame_shape[0], frame_shape[1]], to_f32(&chans[0]))
            } else {
                (
                    vec![h.n_frames(), 2, frame_shape[0], frame_shape[1]],
                    stack_channels(&chans[0], &chans[1]),
                )
            };
            let mut st = Stream::new_f32(modality, shape, h.timestamps.clone(), data, h.nyquist_velocity, Some(0));
            if domain == DomainArg::Beamspace {
                st.color_box = src.color_box;
            }
            let out = c.out_dir(&s.out);
            write_recording(&prediction_recording(&rec, st, geometry), &out)?;
            Ok(Some(c.id()))
        })
        .collect::<Result<_>>()?;
    let written: Vec<String> = written.into_iter().flatten().collect();
    if written.is_empty() {
        return Err(CliError::Data(format!("no recording under {} qualifies for task {}", input.display(), task.number())));
    }
    for id in written {
        println!("{id}");
    }
    Ok(())
}
