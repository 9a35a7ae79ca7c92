//! Analytic contracting heart: an ellipsoidal myocardial shell whose
//! reference coordinates are scaled about a fixed center, one scale per
//! axis. The 2D views are the `y = 0` slice.

use crate::annotations::{ellipsoid_mesh, Contour2D, Mesh3D};
use rand::Rng;
use std::f64::consts::PI;

/// Plane-wave speckle texture in reference coordinates, unit variance.
#[derive(Debug, Clone)]
pub struct Texture {
    waves: Vec<([f64; 3], f64)>,
}

impl Texture {
    pub fn random<R: Rng>(rng: &mut R, n_waves: usize) -> Self {
        let waves = (0..n_waves)
            .map(|_| {
                let u: f64 = rng.random_range(-1.0..1.0);
                let az: f64 = rng.random_range(0.0..2.0 * PI);
                let s = (1.0 - u * u).sqrt();
                let wavelength: f64 = rng.random_range(0.003..0.008);
                let k = 2.0 * PI / wavelength;
                ([k * s * az.cos(), k * s * az.sin(), k * u], rng.random_range(0.0..2.0 * PI))
            })
            .collect();
        Self { waves }
    }

    pub fn eval(&self, p: [f64; 3]) -> f64 {
        if self.waves.is_empty() {
            return 0.0;
        }
        let amp = (2.0 / self.waves.len() as f64).sqrt();
        self.waves
            .iter()
            .map(|(k, ph)| (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).cos())
            .sum::<f64>()
            * amp
    }
}

/// Beat schedule covering the whole recording plus one virtual beat on
/// either side, so phase is defined everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Beats {
    pub times: Vec<f64>,
}

impl Beats {
    /// Index `k` with `times[k] <= t < times[k + 1]`, clamped to the schedule.
    fn beat(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&q| q <= t);
        k.saturating_sub(1).min(self.times.len() - 2)
    }

    /// Cardiac phase in `[0, 1)` and the RR interval of the beat.
    pub fn phase(&self, t: f64) -> (f64, f64) {
        let k = self.beat(t);
        let rr = self.times[k + 1] - self.times[k];
        (((t - self.times[k]) / rr).clamp(0.0, 1.0 - 1e-15), rr)
    }

    /// R-peaks inside `[0, duration)`.
    pub fn inside(&self, duration: f64) -> Vec<f64> {
        self.times.iter().copied().filter(|&t| t >= 0.0 && t < duration).collect()
    }
}

/// Contraction level `s = (1 - cos 2 pi phase) / 2`, zero at the R-peak.
pub fn contraction(phase: f64) -> f64 {
    (1.0 - (2.0 * PI * phase).cos()) / 2.0
}

#[derive(Debug, Clone)]
pub struct Heart {
    pub center: [f64; 3],
    /// Endocardial semi-axes at end-diastole.
    pub r_in: [f64; 3],
    /// Epicardial semi-axes at end-diastole.
    pub r_out: [f64; 3],
    /// Fractional shortening of each axis at peak contraction.
    pub eps: [f64; 3],
    pub beats: Beats,
    pub texture: Texture,
}

/// Logistic edge width in normalized radius.
const EDGE: f64 = 0.03;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Heart {
    pub const CENTER: [f64; 3] = [0.0, 0.0, 0.07];
    pub const R_IN: [f64; 3] = [0.02, 0.02, 0.03];
    pub const R_OUT: [f64; 3] = [0.028, 0.028, 0.038];

    /// Largest admissible endocardial displacement, metres.
    pub const MAX_AMPLITUDE: f64 = 0.008;

    /// Heart whose lateral endocardium moves inward by `amplitude` metres at
    /// peak contraction; the long axis shortens by 60 % of that.
    pub fn new(amplitude: f64, beats: Beats, texture: Texture) -> Self {
        let eps = [
            amplitude / Self::R_IN[0],
            amplitude / Self::R_IN[1],
            0.6 * amplitude / Self::R_IN[2],
        ];
        Self {
            center: Self::CENTER,
            r_in: Self::R_IN,
            r_out: Self::R_OUT,
            eps,
            beats,
            texture,
        }
    }

    pub fn level(&self, t: f64) -> f64 {
        contraction(self.beats.phase(t).0)
    }

    /// Time derivative of the contraction level.
    pub fn level_rate(&self, t: f64) -> f64 {
        let (ph, rr) = self.beats.phase(t);
        PI * (2.0 * PI * ph).sin() / rr
    }

    pub fn scale(&self, t: f64) -> [f64; 3] {
        let s = self.level(t);
        [1.0 - self.eps[0] * s, 1.0 - self.eps[1] * s, 1.0 - self.eps[2] * s]
    }

    pub fn to_reference(&self, p: [f64; 3], t: f64) -> [f64; 3] {
        let k = self.scale(t);
        std::array::from_fn(|a| self.center[a] + (p[a] - self.center[a]) / k[a])
    }

    /// Displacement of the material point whose reference position is `x`.
    pub fn displacement(&self, x: [f64; 3], t: f64) -> [f64; 3] {
        let s = self.level(t);
        std::array::from_fn(|a| -self.eps[a] * s * (x[a] - self.center[a]))
    }

    /// Eulerian tissue velocity at `p`.
    pub fn velocity(&self, p: [f64; 3], t: f64) -> [f64; 3] {
        let k = self.scale(t);
        let ds = self.level_rate(t);
        std::array::from_fn(|a| -self.eps[a] * ds * (p[a] - self.center[a]) / k[a])
    }

    fn norm_radius(&self, x: [f64; 3], axes: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| ((x[a] - self.center[a]) / axes[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Whether `p` lies in the myocardial shell at time `t`.
    pub fn in_myocardium(&self, p: [f64; 3], t: f64) -> bool {
        let x = self.to_reference(p, t);
        self.norm_radius(x, self.r_in) >= 1.0 && self.norm_radius(x, self.r_out) < 1.0
    }

    /// Noiseless B-mode brightness in `[0, 1]`.
    pub fn bmode(&self, p: [f64; 3], t: f64) -> f64 {
        let x = self.to_reference(p, t);
        let w_cav = sigmoid((1.0 - self.norm_radius(x, self.r_in)) / EDGE);
        let w_out = sigmoid((self.norm_radius(x, self.r_out) - 1.0) / EDGE);
        let w_myo = (1.0 - w_cav - w_out).max(0.0);
        let tex = self.texture.eval(x);
        let v = w_cav * (0.08 + 0.03 * tex) + w_myo * (0.72 + 0.12 * tex) + w_out * (0.32 + 0.08 * tex);
        v.clamp(0.0, 1.0)
    }

    /// Tissue Doppler: velocity projected on the beam direction (positive
    /// away from the transducer) inside the myocardium, zero elsewhere.
    pub fn tissue_doppler(&self, p: [f64; 3], t: f64) -> f64 {
        if !self.in_myocardium(p, t) {
            return 0.0;
        }
        radial(p, self.velocity(p, t))
    }

    /// Endocardial (`epi = false`) or epicardial contour in the `y = 0`
    /// plane, `n` vertices as `(x, z)`.
    pub fn contour(&self, t: f64, epi: bool, n: usize) -> Contour2D {
        let k = self.scale(t);
        let r = if epi { self.r_out } else { self.r_in };
        let (ax, az) = (k[0] * r[0], k[2] * r[2]);
        let v = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                [self.center[0] + ax * a.cos(), self.center[2] + az * a.sin()]
            })
            .collect();
        Contour2D::closed(v)
    }

    /// Endocardial semi-axes `(x, z)` of the 2D view at `t`.
    pub fn endo_axes_2d(&self, t: f64) -> (f64, f64) {
        let k = self.scale(t);
        (k[0] * self.r_in[0], k[2] * self.r_in[2])
    }

    pub fn cavity_mesh(&self, t: f64, level: u32) -> Mesh3D {
        let k = self.scale(t);
        ellipsoid_mesh(self.center, std::array::from_fn(|a| k[a] * self.r_in[a]), level)
    }

    /// Analytic cavity volume in millilitres.
    pub fn cavity_volume_ml(&self, t: f64) -> f64 {
        let k = self.scale(t);
        4.0 / 3.0 * PI * (0..3).map(|a| k[a] * self.r_in[a]).product::<f64>() * 1e6
    }
}

/// Projection of `v` on the unit vector from the origin to `p`.
pub fn radial(p: [f64; 3], v: [f64; 3]) -> f64 {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    if r == 0.0 {
        return 0.0;
    }
    (p[0] * v[0] + p[1] * v[1] + p[2] * v[2]) / r
}

/// Pulsed parabolic jet on the cavity axis, flowing toward the transducer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub center_z: f64,
    pub half_width: f64,
    pub half_length: f64,
    pub peak: f64,
}

impl Jet {
    pub fn for_heart(h: &Heart, peak: f64) -> Self {
        Self {
            center_z: h.center[2],
            half_width: 0.003,
            half_length: 0.012,
            peak,
        }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        p[0].abs() < self.half_width && p[1].abs() < self.half_width && (p[2] - self.center_z).abs() < self.half_length
    }

    /// Velocity vector at `p` for cardiac phase `phase`.
    pub fn velocity(&self, p: [f64; 3], phase: f64) -> [f64; 3] {
        if !self.contains(p) {
            return [0.0; 3];
        }
        let lateral = (p[0] * p[0] + p[1] * p[1]) / (self.half_width * self.half_width);
        let pulse = (PI * phase).sin().powi(2);
        [0.0, 0.0, -self.peak * pulse * (1.0 - lateral).max(0.0)]
    }
}

/// Fold `v` into `[-nu, nu)`.
pub fn wrap(v: f64, nu: f64) -> f64 {
    v - 2.0 * nu * ((v + nu) / (2.0 * nu)).floor()
}
