use exflow::annotations::AnnotationSet;
use exflow::container::{
    header_len, read_exam, read_recording, write_exam, write_recording, Geometry, Modality, Payload, Recording,
    Stream, StreamHeader,
};
use exflow::geometry::SectorGeometry2D;
use exflow::phantom::{generate_exam, PhantomConfig};
use exflow::timing::EcgTrace;
use proptest::prelude::*;
use std::path::Path;

fn recording(n_frames: usize, beams: usize, samples: usize, data: Vec<f32>, with_tdi: bool) -> Recording {
    let g = SectorGeometry2D::symmetric(1.2, beams, 0.001, 0.1, samples);
    let ts: Vec<f64> = (0..n_frames).map(|i| i as f64 / 30.0).collect();
    let shape = vec![n_frames, beams, samples];
    let mut streams = vec![Stream::new_f32(Modality::Bmode2d, shape.clone(), ts.clone(), data.clone(), None, Some(0))];
    if with_tdi {
        let td = ts.iter().map(|t| t + 0.01).collect();
        streams.push(Stream::new_f32(Modality::Tdi2d, shape, td, data, Some(0.2), Some(0)));
    }
    Recording {
        id: "rec".into(),
        streams,
        ecg: EcgTrace {
            samples: vec![0.0, 0.5, 1.0, 0.25],
            rate: 500.0,
            t0: -0.002,
        },
        geometries: vec![Geometry::Sector2d(g)],
        annotations: AnnotationSet::default(),
    }
}

fn all_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_recordings_round_trip(
        n_frames in 1usize..5,
        beams in 2usize..6,
        samples in 2usize..7,
        seed in any::<u64>(),
        with_tdi in any::<bool>(),
    ) {
        let n = n_frames * beams * samples;
        let data: Vec<f32> = (0..n).map(|i| ((seed.wrapping_mul(i as u64 + 1) % 1000) as f32 - 500.0) / 7.0).collect();
        let rec = recording(n_frames, beams, samples, data, with_tdi);
        let dir = tempfile::tempdir().unwrap();
        write_recording(&rec, dir.path()).unwrap();
        let back = read_recording(dir.path()).unwrap();
        prop_assert_eq!(back, rec);
    }
}

#[test]
fn writes_are_byte_deterministic() {
    let rec = recording(3, 4, 5, (0..60).map(|i| i as f32 * 0.25).collect(), true);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_recording(&rec, a.path()).unwrap();
    write_recording(&rec, b.path()).unwrap();
    assert_eq!(all_bytes(a.path()), all_bytes(b.path()));
}

fn predicted_size(h: &StreamHeader) -> u64 {
    (header_len(h.shape.len(), h.timestamps.len()) + h.n_elements() * h.dtype.size()) as u64
}

#[test]
fn phantom_exam_sizes_match_headers() {
    let cfg = PhantomConfig {
        sector: SectorGeometry2D::symmetric(1.3, 24, 0.002, 0.12, 64),
        n_beats: 3,
        stitch_subsectors: 2,
        ..Default::default()
    };
    let (exam, _) = generate_exam(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_exam(&exam, dir.path()).unwrap();
    for rec in &exam.recordings {
        for (i, s) in rec.streams.iter().enumerate() {
            let name = format!("stream_{i:02}_{}.exfl", s.header.modality);
            let len = std::fs::metadata(dir.path().join(&rec.id).join(name)).unwrap().len();
            assert_eq!(len, predicted_size(&s.header));
        }
        let ecg = &rec.ecg;
        let h = StreamHeader {
            modality: Modality::Ecg,
            dtype: exflow::container::DType::F32,
            shape: vec![ecg.samples.len()],
            timestamps: ecg.timestamps(),
            nyquist_velocity: None,
            geometry_id: None,
        };
        let len = std::fs::metadata(dir.path().join(&rec.id).join("ecg.exfl")).unwrap().len();
        assert_eq!(len, predicted_size(&h));
    }
    let back = read_exam(dir.path()).unwrap();
    assert_eq!(back.manifest, exam.manifest);
    assert_eq!(back.recordings, exam.recordings);
}

#[test]
fn u8_payloads_round_trip() {
    let mut rec = recording(2, 2, 3, vec![0.0; 12], false);
    rec.streams[0].header.dtype = exflow::container::DType::U8;
    rec.streams[0].payload = Payload::U8((0..12).map(|i| i * 20).collect());
    let dir = tempfile::tempdir().unwrap();
    write_recording(&rec, dir.path()).unwrap();
    assert_eq!(read_recording(dir.path()).unwrap(), rec);
}
