use super::heart::Beats;
use crate::timing::EcgTrace;
use ndarray::{Array2, ArrayViewMut2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// `(offset s, amplitude, width s)` of the P, Q, R, S and T waves relative
/// to the R-peak. The T offset is scaled with the square root of RR.
const WAVES: [(f64, f64, f64); 5] = [
    (-0.16, 0.12, 0.025),
    (-0.03, -0.10, 0.010),
    (0.0, 1.0, 0.008),
    (0.03, -0.22, 0.010),
    (0.26, 0.28, 0.045),
];

/// Beat schedule starting `offset` seconds into the recording, with RR
/// intervals drawn around `rr` with relative spread `jitter`, extended by
/// one beat before zero and past `duration`.
pub fn beat_schedule<R: Rng>(rng: &mut R, rr: f64, jitter: f64, offset: f64, duration: f64) -> Beats {
    let next_rr = |rng: &mut R| {
        let z: f64 = StandardNormal.sample(rng);
        (rr * (1.0 + jitter * z)).clamp(0.3, 3.0)
    };
    let mut times = vec![offset];
    while times[0] >= 0.0 {
        let rr0 = next_rr(rng);
        times.insert(0, times[0] - rr0);
    }
    while *times.last().unwrap() < duration {
        let rr_k = next_rr(rng);
        times.push(times.last().unwrap() + rr_k);
    }
    Beats { times }
}

/// Noiseless ECG value at `t` for the given beats.
pub fn ecg_value(beats: &Beats, t: f64) -> f64 {
    let mut v = 0.0;
    for (k, &r) in beats.times.iter().enumerate() {
        if (t - r).abs() > 1.0 {
            continue;
        }
        let rr = if k + 1 < beats.times.len() {
            beats.times[k + 1] - r
        } else {
            r - beats.times[k - 1]
        };
        for (i, &(off, amp, w)) in WAVES.iter().enumerate() {
            let off = if i == 4 { off * (rr / 0.8).sqrt() } else { off };
            let d = t - r - off;
            v += amp * (-d * d / (2.0 * w * w)).exp();
        }
    }
    v
}

/// Sampled ECG over `[0, duration)`, with optional white noise at `snr_db`
/// relative to the trace power.
pub fn synth_ecg<R: Rng>(rng: &mut R, beats: &Beats, duration: f64, rate: f64, snr_db: Option<f64>) -> EcgTrace {
    let n = (duration * rate).ceil() as usize;
    let clean: Vec<f64> = (0..n).map(|i| ecg_value(beats, i as f64 / rate)).collect();
    let samples = match snr_db {
        None => clean.iter().map(|&v| v as f32).collect(),
        Some(db) => {
            let sigma = rms(&clean) / 10f64.powf(db / 20.0);
            clean
                .iter()
                .map(|&v| {
                    let z: f64 = StandardNormal.sample(rng);
                    (v + sigma * z) as f32
                })
                .collect()
        }
    };
    EcgTrace {
        samples,
        rate,
        t0: 0.0,
    }
}

pub fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Unit-variance noise smoothed by a separable `[1, 2, 1] / 4` kernel with
/// edge replication.
pub fn band_limited_noise<R: Rng>(rng: &mut R, shape: (usize, usize)) -> Array2<f64> {
    let white = Array2::from_shape_simple_fn(shape, || StandardNormal.sample(rng));
    let mut out = white.clone();
    smooth_axis(white.view(), out.view_mut(), 0);
    let tmp = out.clone();
    smooth_axis(tmp.view(), out.view_mut(), 1);
    // Each pass scales the variance by (1 + 4 + 1) / 16.
    out /= 0.375;
    out
}

fn smooth_axis(src: ndarray::ArrayView2<f64>, mut dst: ArrayViewMut2<f64>, axis: usize) {
    let (h, w) = src.dim();
    for i in 0..h {
        for j in 0..w {
            let (a, b) = if axis == 0 {
                (src[[i.saturating_sub(1), j]], src[[(i + 1).min(h - 1), j]])
            } else {
                (src[[i, j.saturating_sub(1)]], src[[i, (j + 1).min(w - 1)]])
            };
            dst[[i, j]] = (a + 2.0 * src[[i, j]] + b) / 4.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_covers_recording() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = beat_schedule(&mut rng, 0.8, 0.05, 0.2, 5.0);
        assert!(b.times[0] < 0.0);
        assert!(*b.times.last().unwrap() >= 5.0);
        assert!(b.times.contains(&0.2));
    }

    #[test]
    fn r_wave_is_the_trace_maximum_near_each_peak() {
        let beats = Beats {
            times: vec![-0.6, 0.25, 1.05, 1.9, 2.7],
        };
        let e = synth_ecg(&mut ChaCha8Rng::seed_from_u64(0), &beats, 2.5, 600.0, None);
        for &r in &beats.times[1..4] {
            let i = (r * 600.0).round() as usize;
            let lo = i - 60;
            let best = (lo..i + 60).max_by(|&a, &b| e.samples[a].total_cmp(&e.samples[b])).unwrap();
            assert!(best.abs_diff(i) <= 1);
        }
    }

    #[test]
    fn noise_has_unit_variance() {
        let n = band_limited_noise(&mut ChaCha8Rng::seed_from_u64(5), (200, 200));
        let var = n.iter().map(|v| v * v).sum::<f64>() / n.len() as f64;
        assert!((var - 1.0).abs() < 0.1, "{var}");
    }
}
