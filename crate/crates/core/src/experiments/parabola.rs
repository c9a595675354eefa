use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::cloth::ClothMesh;
use crate::Control;

/// A tilted parabolic grasp path, traversed with a minimum-jerk time profile.
///
/// The grasp moves during `motion_duration`, optionally stopping for
/// `pause_duration` once it has covered `pause_at` of the path, and then holds
/// still until `duration`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParabolaSpec {
    pub start: Vector3<f64>,
    pub end: Vector3<f64>,
    /// Peak height above the table (m).
    pub apex_height: f64,
    /// Peak sideways offset toward the cloth center, as a fraction of the cloth width in y.
    pub tilt_toward_center: f64,
    pub motion_duration: f64,
    /// Path fraction at which the grasp stops; ignored when `pause_duration` is zero.
    pub pause_at: f64,
    pub pause_duration: f64,
    /// Standard deviation of a random position dither added while moving (m).
    pub dither: f64,
    pub dither_seed: u64,
    pub duration: f64,
    pub dt: f64,
}

/// Sampling ranges for training parabolas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParabolaRanges {
    /// Landing point spread around the folded-corner landing, as a fraction of the cloth size.
    pub landing_spread: f64,
    #[serde(rename = "apex_height_m")]
    pub apex_height: [f64; 2],
    pub tilt_toward_center: [f64; 2],
    #[serde(rename = "motion_duration_s")]
    pub motion_duration: [f64; 2],
    /// Chance that a trajectory stops once along the way.
    pub pause_probability: f64,
    pub pause_at: [f64; 2],
    #[serde(rename = "pause_duration_s")]
    pub pause_duration: [f64; 2],
    /// Excitation added to the grasp path so the input response is identifiable.
    #[serde(rename = "dither_m")]
    pub dither: f64,
    #[serde(rename = "duration_s")]
    pub duration: f64,
}

impl Default for ParabolaRanges {
    fn default() -> Self {
        Self {
            landing_spread: 0.2,
            apex_height: [0.15, 0.35],
            tilt_toward_center: [0.1, 0.3],
            motion_duration: [0.7, 1.1],
            pause_probability: 0.0,
            pause_at: [0.3, 0.7],
            pause_duration: [0.1, 0.3],
            dither: 0.001,
            duration: 1.5,
        }
    }
}

fn min_jerk(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

/// Whole number of steps in `duration`, rejecting durations that are not multiples of `dt`.
pub(crate) fn step_count(duration: f64, dt: f64) -> Result<usize, ExperimentError> {
    let k = (duration / dt).round();
    if !(dt > 0.0) || k < 1.0 || (k * dt - duration).abs() > 1e-9 * duration.max(1.0) {
        return Err(ExperimentError::InvalidConfig(format!("duration {duration} s is not a multiple of dt {dt} s")));
    }
    Ok(k as usize)
}

impl ParabolaSpec {
    /// Random fold of corner `(0, 0)` toward `(W, 0)`.
    pub fn sample<R: Rng>(rng: &mut R, mesh: &ClothMesh, ranges: &ParabolaRanges, dt: f64) -> Self {
        let (w, h) = (mesh.width, mesh.height);
        let s = ranges.landing_spread;
        let end = Vector3::new(w * (1.0 + rng.gen_range(-s..=s)), h * rng.gen_range(-s..=s), 0.0);
        let uniform = |rng: &mut R, [lo, hi]: [f64; 2]| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let apex_height = uniform(rng, ranges.apex_height);
        let tilt = uniform(rng, ranges.tilt_toward_center);
        // Motion time is drawn on the step grid.
        let motion = ((uniform(rng, ranges.motion_duration) / dt).round() * dt).min(ranges.duration);
        let pause_at = uniform(rng, ranges.pause_at);
        let pause = if rng.gen_bool(ranges.pause_probability.clamp(0.0, 1.0)) {
            ((uniform(rng, ranges.pause_duration) / dt).round() * dt).min(ranges.duration - motion)
        } else {
            0.0
        };
        Self {
            start: Vector3::zeros(),
            end,
            apex_height,
            tilt_toward_center: tilt,
            motion_duration: motion,
            pause_at,
            pause_duration: pause.max(0.0),
            dither: ranges.dither,
            dither_seed: rng.gen(),
            duration: ranges.duration,
            dt,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        step_count(self.duration, self.dt)?;
        step_count(self.motion_duration, self.dt)?;
        if self.pause_duration > 0.0 {
            step_count(self.pause_duration, self.dt)?;
            if !(self.pause_at > 0.0 && self.pause_at < 1.0) {
                return Err(ExperimentError::InvalidConfig("pause must fall strictly inside the path".into()));
            }
        } else if self.pause_duration < 0.0 {
            return Err(ExperimentError::InvalidConfig("pause duration must be non-negative".into()));
        }
        if !(self.dither >= 0.0 && self.dither.is_finite()) {
            return Err(ExperimentError::InvalidConfig("dither must be non-negative".into()));
        }
        if self.motion_duration + self.pause_duration > self.duration + 1e-12 {
            return Err(ExperimentError::InvalidConfig("motion outlasts the trajectory".into()));
        }
        if !(self.apex_height > self.start.z.max(self.end.z)) {
            return Err(ExperimentError::InvalidConfig("apex must be above both endpoints".into()));
        }
        Ok(())
    }

    /// Path point at normalized arc parameter `s ∈ [0, 1]`; `width_y` scales the tilt.
    pub fn point(&self, s: f64, width_y: f64) -> Vector3<f64> {
        let bump = 4.0 * s * (1.0 - s);
        let mut p = self.start + (self.end - self.start) * s;
        p.z += bump * (self.apex_height - 0.5 * (self.start.z + self.end.z));
        p.y += bump * self.tilt_toward_center * width_y;
        p
    }

    /// Per-step first differences of the sampled path, duplicated for both grasped points.
    pub fn controls(&self, width_y: f64) -> Result<Vec<Control>, ExperimentError> {
        self.validate()?;
        let total = step_count(self.duration, self.dt)?;
        let moving = step_count(self.motion_duration, self.dt)?;
        let (first, paused) = if self.pause_duration > 0.0 {
            let first = ((moving as f64 * self.pause_at).round() as usize).clamp(1, moving.saturating_sub(1).max(1));
            (first, step_count(self.pause_duration, self.dt)?)
        } else {
            (moving, 0)
        };
        let second = moving - first;
        // Path fraction after `j` steps: min-jerk to the pause point, hold, min-jerk to the end.
        let progress = |j: usize| {
            let reach = if paused > 0 { self.pause_at } else { 1.0 };
            if j < first {
                reach * min_jerk(j as f64 / first as f64)
            } else if j <= first + paused || second == 0 {
                reach
            } else {
                let k = j - first - paused;
                self.pause_at + (1.0 - self.pause_at) * min_jerk(k as f64 / second as f64)
            }
        };
        // Zero at both ends of the motion, so the displacements still telescope to `end - start`.
        let mut rng = ChaCha8Rng::seed_from_u64(self.dither_seed);
        let half_width = self.dither * 3f64.sqrt();
        let mut jitter = || {
            if half_width > 0.0 {
                Vector3::from_fn(|_, _| rng.gen_range(-half_width..half_width))
            } else {
                Vector3::zeros()
            }
        };
        let mut prev = self.point(0.0, width_y);
        let mut out = Vec::with_capacity(total);
        for j in 1..=total {
            let p = if j >= moving + paused { self.end } else { self.point(progress(j), width_y) + jitter() };
            let d = p - prev;
            out.push([d.x, d.y, d.z, d.x, d.y, d.z]);
            prev = p;
        }
        Ok(out)
    }
}
