use super::TimingError;

/// Frame matching between a reference stream `a` and an interleaved
/// stream `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamPairing {
    /// For each frame of `b`, the matched frame of `a`.
    pub matches: Vec<Option<usize>>,
    /// Maximum allowed `|t_b - t_a|`.
    pub bound: f64,
    /// Largest `|Δt|` among matched pairs.
    pub max_slack: f64,
    pub mean_slack: f64,
}

impl StreamPairing {
    pub fn n_unmatched(&self) -> usize {
        self.matches.iter().filter(|m| m.is_none()).count()
    }

    pub fn all_matched(&self) -> bool {
        self.matches.iter().all(Option::is_some)
    }
}

/// Median of consecutive differences; `None` for fewer than two stamps.
pub fn median_spacing(ts: &[f64]) -> Option<f64> {
    if ts.len() < 2 {
        return None;
    }
    let mut d: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = d.len() / 2;
    Some(if d.len() % 2 == 0 { (d[m - 1] + d[m]) / 2.0 } else { d[m] })
}

fn check_increasing(ts: &[f64], name: &str) -> Result<(), TimingError> {
    if ts.is_empty() {
        return Err(TimingError::Invalid(format!("{name} timestamps are empty")));
    }
    if ts.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(TimingError::Invalid(format!(
            "{name} timestamps not strictly increasing"
        )));
    }
    Ok(())
}

/// Match every frame of `ts_b` to the nearest frame of `ts_a` (ties go to
/// the earlier `a` frame). A match is kept when `|Δt|` is at most
/// `slack_factor` times the median frame spacing of `a`; when `a` has a
/// single frame the spacing of `b` is used, and with one frame each only
/// exact coincidence matches.
pub fn pair_interleaved(ts_a: &[f64], ts_b: &[f64], slack_factor: f64) -> Result<StreamPairing, TimingError> {
    check_increasing(ts_a, "reference")?;
    check_increasing(ts_b, "paired")?;
    if !(slack_factor >= 0.0) {
        return Err(TimingError::Invalid("slack factor must be non-negative".into()));
    }
    let spacing = median_spacing(ts_a).or_else(|| median_spacing(ts_b)).unwrap_or(0.0);
    let bound = slack_factor * spacing;

    let mut matches = Vec::with_capacity(ts_b.len());
    let (mut max_slack, mut sum, mut count) = (0.0f64, 0.0, 0usize);
    for &t in ts_b {
        let j = ts_a.partition_point(|&a| a < t);
        let mut best: Option<(usize, f64)> = None;
        for cand in [j.checked_sub(1), (j < ts_a.len()).then_some(j)].into_iter().flatten() {
            let dt = (ts_a[cand] - t).abs();
            if best.is_none_or(|(_, d)| dt < d) {
                best = Some((cand, dt));
            }
        }
        let (idx, dt) = best.expect("reference is non-empty");
        if dt <= bound {
            matches.push(Some(idx));
            max_slack = max_slack.max(dt);
            sum += dt;
            count += 1;
        } else {
            matches.push(None);
        }
    }
    Ok(StreamPairing {
        matches,
        bound,
        max_slack,
        mean_slack: if count > 0 { sum / count as f64 } else { 0.0 },
    })
}
