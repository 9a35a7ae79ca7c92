//! Reference scoring against phantom truth, written with plain loops over
//! flat buffers. It is kept separate from the metrics module on purpose so
//! the two can check each other.

use super::PhantomError;

/// Truth fields of `shape = [frames, rows, cols]`, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthFields {
    pub shape: [usize; 3],
    pub nyquist: f64,
    pub velocity: Vec<f64>,
    /// Color-Doppler power, B-mode (paired to each Doppler frame) and box
    /// flags; all three are needed for the color-Doppler terms.
    pub power: Option<Vec<f64>>,
    pub bmode: Option<Vec<f64>>,
    pub color_box: Option<Vec<bool>>,
    /// Pixels that take part in scoring, `[rows][cols]`; all when absent.
    pub region: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedFields {
    pub velocity: Vec<f64>,
    pub power: Option<Vec<f64>>,
    pub variation: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthLoss {
    /// Mean alias-aware distance over `nu`.
    pub alias: f64,
    /// Plain L1 velocity over reliable pixels.
    pub velocity: Option<f64>,
    pub power: Option<f64>,
    pub variation: Option<f64>,
}

const TAU_POWER: f64 = 0.3;
const TAU_BMODE: f64 = 0.4;

fn local_std(v: &[f64], f: usize, r: usize, c: usize, h: usize, w: usize) -> f64 {
    let mut vals = Vec::with_capacity(9);
    for dr in [-1i64, 0, 1] {
        for dc in [-1i64, 0, 1] {
            let rr = (r as i64 + dr).max(0).min(h as i64 - 1) as usize;
            let cc = (c as i64 + dc).max(0).min(w as i64 - 1) as usize;
            vals.push(v[f * h * w + rr * w + cc]);
        }
    }
    let m = vals.iter().sum::<f64>() / 9.0;
    (vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 9.0).sqrt()
}

/// Score `pred` against phantom truth. The alias term folds each
/// difference by the nearest multiple of `2 nu`; the color-Doppler terms
/// are filled in when the truth carries power, B-mode and box.
pub fn ground_truth_loss(truth: &TruthFields, pred: &PredictedFields) -> Result<GroundTruthLoss, PhantomError> {
    let [t, h, w] = truth.shape;
    let n = t * h * w;
    let bad = |what: &str| PhantomError::Invalid(format!("{what} length does not match {:?}", truth.shape));
    if truth.velocity.len() != n || pred.velocity.len() != n {
        return Err(bad("velocity"));
    }
    if !(truth.nyquist > 0.0) {
        return Err(PhantomError::Invalid("Nyquist velocity must be positive".into()));
    }
    let nu = truth.nyquist;
    let in_region = |i: usize| truth.region.as_ref().is_none_or(|r| r[i % (h * w)]);

    let mut alias_sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        if in_region(i) {
            let d = pred.velocity[i] - truth.velocity[i];
            let k = (d / (2.0 * nu)).round();
            alias_sum += (d - 2.0 * k * nu).abs() / nu;
            count += 1;
        }
    }
    if count == 0 {
        return Err(PhantomError::Invalid("scoring region is empty".into()));
    }
    let mut out = GroundTruthLoss {
        alias: alias_sum / count as f64,
        velocity: None,
        power: None,
        variation: None,
    };

    let (Some(tp), Some(tb), Some(bx)) = (&truth.power, &truth.bmode, &truth.color_box) else {
        return Ok(out);
    };
    if tp.len() != n || tb.len() != n || bx.len() != n {
        return Err(bad("power, B-mode or box"));
    }
    let mut vel = (0.0, 0usize);
    let mut var = 0.0;
    let mut pow = (0.0, 0usize);
    for f in 0..t {
        for r in 0..h {
            for c in 0..w {
                let i = f * h * w + r * w + c;
                if !in_region(i) {
                    continue;
                }
                if let Some(pp) = &pred.power {
                    pow.0 += (pp[i] - tp[i]).abs();
                    pow.1 += 1;
                }
                if bx[i] && tp[i] >= TAU_POWER && tb[i] <= TAU_BMODE {
                    vel.0 += (pred.velocity[i] - truth.velocity[i]).abs();
                    vel.1 += 1;
                    if let Some(pv) = &pred.variation {
                        var += (pv[i] - local_std(&truth.velocity, f, r, c, h, w)).abs();
                    }
                }
            }
        }
    }
    if pow.1 > 0 {
        out.power = Some(pow.0 / pow.1 as f64);
    }
    if vel.1 > 0 {
        out.velocity = Some(vel.0 / vel.1 as f64);
        if pred.variation.is_some() {
            out.variation = Some(var / vel.1 as f64);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(v: Vec<f64>) -> TruthFields {
        let n = v.len();
        TruthFields {
            shape: [1, 1, n],
            nyquist: 0.6,
            velocity: v,
            power: Some(vec![0.9; n]),
            bmode: Some(vec![0.1; n]),
            color_box: Some(vec![true; n]),
            region: None,
        }
    }

    #[test]
    fn shift_by_two_nyquist() {
        let gt = truth(vec![0.1, -0.5, 0.3]);
        let pred = PredictedFields {
            velocity: gt.velocity.iter().map(|v| v + 1.2).collect(),
            power: Some(vec![0.9; 3]),
            variation: None,
        };
        let l = ground_truth_loss(&gt, &pred).unwrap();
        assert!(l.alias < 1e-12);
        assert!((l.velocity.unwrap() - 1.2).abs() < 1e-12);
        assert_eq!(l.power, Some(0.0));
    }

    #[test]
    fn region_restricts_alias_term() {
        let mut gt = truth(vec![0.0, 0.0]);
        gt.region = Some(vec![true, false]);
        let pred = PredictedFields {
            velocity: vec![0.3, 0.6],
            power: None,
            variation: None,
        };
        assert!((ground_truth_loss(&gt, &pred).unwrap().alias - 0.5).abs() < 1e-12);
    }
}
