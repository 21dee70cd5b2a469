//! Trajectory kinematics, dataset percentile thresholds and ground-truth
//! meta-action labels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Direction, EgoStatus, MetaAction, Speed, Trajectory};

/// Displacements shorter than this carry no usable heading.
pub const MIN_HEADING_STEP: f64 = 1e-3;

/// Below this many trajectories the fitted percentiles are noisy.
pub const MIN_FIT_SAMPLES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("trajectory needs at least 2 points, got {0}")]
    DegenerateTrajectory(usize),
    #[error("no {0} trajectories in the dataset")]
    EmptyPopulation(&'static str),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicsProfile {
    /// m/s, one per sample.
    pub speeds: Vec<f64>,
    /// m/s², forward differences of `speeds`.
    pub accels: Vec<f64>,
    /// Signed, left-positive, radians.
    pub heading_change_total: f64,
    /// Signed, left-positive, meters.
    pub lateral_disp_final: f64,
    pub path_length: f64,
}

impl KinematicsProfile {
    pub fn mean_accel(&self) -> f64 {
        if self.accels.is_empty() {
            0.0
        } else {
            self.accels.iter().sum::<f64>() / self.accels.len() as f64
        }
    }

    pub fn initial_speed(&self) -> f64 {
        self.speeds.first().copied().unwrap_or(0.0)
    }

    pub fn final_speed(&self) -> f64 {
        self.speeds.last().copied().unwrap_or(0.0)
    }
}

/// Kinematics of the listed waypoints.
///
/// Speeds are magnitudes of finite-difference velocities, exact for
/// constant acceleration along a line. With `ego`, its measured velocity is prepended as the
/// t=0 speed sample, so the profile also covers the step from the present
/// into the first waypoint.
///
/// Each chord between consecutive waypoints approximates the tangent at its
/// midpoint, so the summed turn between chords is extended by half the first
/// and last turn increments to reach the endpoint tangents. This is exact
/// for uniformly sampled circular arcs.
pub fn compute_kinematics(
    traj: &Trajectory,
    ego: Option<&EgoStatus>,
) -> Result<KinematicsProfile, KinematicsError> {
    let pts = traj.points();
    let n = pts.len();
    if n < 2 {
        return Err(KinematicsError::DegenerateTrajectory(n));
    }
    let dt = traj.dt();

    let mut speeds = Vec::with_capacity(n + 1);
    if let Some(ego) = ego {
        speeds.push(ego.velocity);
    }
    // Velocity vectors: central differences inside, second-order one-sided
    // differences at the ends (first-order when only two points exist).
    let diff = |a: f64, b: f64, c: f64| (-3.0 * a + 4.0 * b - c) / (2.0 * dt);
    for i in 0..n {
        let (vx, vy) = if n == 2 {
            ((pts[1].x - pts[0].x) / dt, (pts[1].y - pts[0].y) / dt)
        } else if i == 0 {
            (diff(pts[0].x, pts[1].x, pts[2].x), diff(pts[0].y, pts[1].y, pts[2].y))
        } else if i == n - 1 {
            let (a, b, c) = (pts[n - 1], pts[n - 2], pts[n - 3]);
            (-diff(a.x, b.x, c.x), -diff(a.y, b.y, c.y))
        } else {
            (
                (pts[i + 1].x - pts[i - 1].x) / (2.0 * dt),
                (pts[i + 1].y - pts[i - 1].y) / (2.0 * dt),
            )
        };
        speeds.push(vx.hypot(vy));
    }
    let accels = speeds.windows(2).map(|w| (w[1] - w[0]) / dt).collect();

    let chords: Vec<(f64, f64)> = pts
        .windows(2)
        .map(|w| (w[1].x - w[0].x, w[1].y - w[0].y))
        .collect();
    let path_length = chords.iter().map(|(dx, dy)| dx.hypot(*dy)).sum();
    let heading_chords: Vec<&(f64, f64)> = chords
        .iter()
        .filter(|(dx, dy)| dx.hypot(*dy) >= MIN_HEADING_STEP)
        .collect();
    let turns: Vec<f64> = heading_chords
        .windows(2)
        .map(|w| {
            let (ax, ay) = *w[0];
            let (bx, by) = *w[1];
            (ax * by - ay * bx).atan2(ax * bx + ay * by)
        })
        .collect();
    let heading_change_total = match (turns.first(), turns.last()) {
        (Some(first), Some(last)) => turns.iter().sum::<f64>() + 0.5 * (first + last),
        _ => 0.0,
    };

    Ok(KinematicsProfile {
        speeds,
        accels,
        heading_change_total,
        lateral_disp_final: pts[n - 1].y - pts[0].y,
        path_length,
    })
}

/// Geometric thresholds that are configured rather than fitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub turn_heading_min: f64,
    pub lane_change_lateral_min: f64,
    pub stop_speed_eps: f64,
    pub stationary_disp_eps: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            turn_heading_min: 0.3,
            lane_change_lateral_min: 1.5,
            stop_speed_eps: 0.2,
            stationary_disp_eps: 0.3,
        }
    }
}

/// Percentile band boundaries plus the configured geometric thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSet {
    pub accel_p30: f64,
    pub accel_p60: f64,
    /// Magnitudes.
    pub decel_p30: f64,
    pub decel_p60: f64,
    pub turn_heading_min: f64,
    pub lane_change_lateral_min: f64,
    pub stop_speed_eps: f64,
    pub stationary_disp_eps: f64,
    /// Percentiles of |heading change| over turning trajectories. Reported
    /// for inspection; turns are not split by intensity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_p30: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_p60: Option<f64>,
    /// Trajectories the set was fitted on.
    #[serde(default)]
    pub fitted_on: usize,
}

impl ThresholdSet {
    pub fn from_bands(accel: (f64, f64), decel: (f64, f64), cfg: ThresholdConfig) -> Self {
        Self {
            accel_p30: accel.0,
            accel_p60: accel.1,
            decel_p30: decel.0,
            decel_p60: decel.1,
            turn_heading_min: cfg.turn_heading_min,
            lane_change_lateral_min: cfg.lane_change_lateral_min,
            stop_speed_eps: cfg.stop_speed_eps,
            stationary_disp_eps: cfg.stationary_disp_eps,
            turn_p30: None,
            turn_p60: None,
            fitted_on: 0,
        }
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let bad = |m: &str| Err(KinematicsError::InvalidThresholds(m.to_string()));
        let all = [
            self.accel_p30,
            self.accel_p60,
            self.decel_p30,
            self.decel_p60,
            self.turn_heading_min,
            self.lane_change_lateral_min,
            self.stop_speed_eps,
            self.stationary_disp_eps,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite threshold");
        }
        if self.accel_p30 > self.accel_p60 || self.decel_p30 > self.decel_p60 {
            return bad("p30 must not exceed p60");
        }
        if self.turn_heading_min <= 0.0
            || self.lane_change_lateral_min <= 0.0
            || self.stop_speed_eps <= 0.0
            || self.stationary_disp_eps <= 0.0
        {
            return bad("geometric thresholds must be > 0");
        }
        Ok(())
    }
}

/// Linear interpolation between order statistics (rank `p/100 * (n-1)`).
/// `sorted` must be ascending and non-empty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn band(mut samples: Vec<f64>) -> (f64, f64) {
    samples.sort_by(f64::total_cmp);
    (percentile(&samples, 30.0), percentile(&samples, 60.0))
}

/// Collects per-trajectory statistics for [`fit_thresholds`].
///
/// Shards can be accumulated independently and combined with
/// [`merge`](Self::merge); samples are kept, so merged percentiles are exact.
#[derive(Debug, Clone, Default)]
pub struct ThresholdAccumulator {
    accel: Vec<f64>,
    decel: Vec<f64>,
    turn: Vec<f64>,
    count: usize,
    cfg: ThresholdConfig,
}

impl ThresholdAccumulator {
    pub fn new(cfg: ThresholdConfig) -> Self {
        Self {
            cfg,
            ..Default::default()
        }
    }

    pub fn push(&mut self, traj: &Trajectory) -> Result<(), KinematicsError> {
        let k = compute_kinematics(traj, None)?;
        let a = k.mean_accel();
        if a > 0.0 {
            self.accel.push(a);
        } else if a < 0.0 {
            self.decel.push(-a);
        }
        if k.heading_change_total.abs() > self.cfg.turn_heading_min {
            self.turn.push(k.heading_change_total.abs());
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: ThresholdAccumulator) {
        self.accel.extend(other.accel);
        self.decel.extend(other.decel);
        self.turn.extend(other.turn);
        self.count += other.count;
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn finish(self) -> Result<ThresholdSet, KinematicsError> {
        if self.count < MIN_FIT_SAMPLES {
            tracing::warn!(
                count = self.count,
                "fitting thresholds on fewer than {MIN_FIT_SAMPLES} trajectories"
            );
        }
        if self.accel.is_empty() {
            return Err(KinematicsError::EmptyPopulation("accelerating"));
        }
        if self.decel.is_empty() {
            return Err(KinematicsError::EmptyPopulation("decelerating"));
        }
        let mut set = ThresholdSet::from_bands(band(self.accel), band(self.decel), self.cfg);
        if !self.turn.is_empty() {
            let (p30, p60) = band(self.turn);
            set.turn_p30 = Some(p30);
            set.turn_p60 = Some(p60);
        }
        set.fitted_on = self.count;
        Ok(set)
    }
}

/// Fits acceleration/deceleration bands at the 30th and 60th percentiles of
/// per-trajectory mean signed acceleration.
pub fn fit_thresholds<'a, I>(trajectories: I, cfg: ThresholdConfig) -> Result<ThresholdSet, KinematicsError>
where
    I: IntoIterator<Item = &'a Trajectory>,
{
    let mut acc = ThresholdAccumulator::new(cfg);
    for t in trajectories {
        acc.push(t)?;
    }
    acc.finish()
}

/// Labels a trajectory with its meta-action. Values exactly on a threshold
/// take the milder label.
pub fn classify_action(traj: &Trajectory, th: &ThresholdSet) -> Result<MetaAction, KinematicsError> {
    let k = compute_kinematics(traj, None)?;
    let stationary = k.path_length < th.stationary_disp_eps;

    let direction = if stationary {
        Direction::MaintainCurrentLane
    } else if k.heading_change_total.abs() > th.turn_heading_min {
        if k.heading_change_total > 0.0 {
            Direction::TurnLeft
        } else {
            Direction::TurnRight
        }
    } else if k.lateral_disp_final.abs() > th.lane_change_lateral_min {
        if k.lateral_disp_final > 0.0 {
            Direction::ChangeLaneLeft
        } else {
            Direction::ChangeLaneRight
        }
    } else {
        Direction::MaintainCurrentLane
    };

    let accel = k.mean_accel();
    let speed = if stationary {
        Speed::RemainStationary
    } else if k.final_speed() < th.stop_speed_eps && k.initial_speed() >= th.stop_speed_eps {
        Speed::Stop
    } else if accel > 0.0 {
        if accel > th.accel_p30 {
            Speed::SmoothAcceleration
        } else {
            Speed::MaintainCurrentSpeed
        }
    } else if -accel > th.decel_p60 {
        Speed::EmergencyBrake
    } else if -accel > th.decel_p30 {
        Speed::SmoothDeceleration
    } else {
        Speed::MaintainCurrentSpeed
    };

    Ok(MetaAction::new(direction, speed))
}
