use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::model::{Point, Trajectory};

/// Ego footprint in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoDims {
    pub length: f64,
    pub width: f64,
}

impl Default for EgoDims {
    fn default() -> Self {
        Self {
            length: 4.084,
            width: 1.730,
        }
    }
}

/// An obstacle footprint at one planning step, in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleBox {
    pub center: Point,
    /// Half length along the heading and half width across it.
    pub half_extents: [f64; 2],
    pub heading: f64,
    /// 1-based planning step the box belongs to.
    pub timestep: usize,
}

impl ObstacleBox {
    pub fn validate(&self) -> Result<(), EvalError> {
        let [hl, hw] = self.half_extents;
        if !(hl.is_finite() && hw.is_finite() && hl > 0.0 && hw > 0.0) {
            return Err(EvalError::InvalidBox(format!("half extents must be > 0, got [{hl}, {hw}]")));
        }
        if !self.center.is_finite() {
            return Err(EvalError::InvalidBox("center is not finite".into()));
        }
        if !(self.heading > -PI && self.heading <= PI) {
            return Err(EvalError::InvalidBox(format!("heading {} outside (-pi, pi]", self.heading)));
        }
        if self.timestep == 0 {
            return Err(EvalError::InvalidBox("timestep is 1-based".into()));
        }
        Ok(())
    }

    pub fn oriented(&self) -> OrientedBox {
        OrientedBox {
            center: self.center,
            half_length: self.half_extents[0],
            half_width: self.half_extents[1],
            heading: self.heading,
        }
    }
}

/// Obstacles for one sample, covering steps `1..=num_steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleFrames {
    pub sample_id: String,
    pub num_steps: usize,
    #[serde(default)]
    pub boxes: Vec<ObstacleBox>,
}

impl ObstacleFrames {
    pub fn validate(&self) -> Result<(), EvalError> {
        for b in &self.boxes {
            b.validate()?;
            if b.timestep > self.num_steps {
                return Err(EvalError::InvalidBox(format!(
                    "timestep {} beyond num_steps {}",
                    b.timestep, self.num_steps
                )));
            }
        }
        Ok(())
    }

    pub fn at(&self, step: usize) -> impl Iterator<Item = &ObstacleBox> {
        self.boxes.iter().filter(move |b| b.timestep == step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Point,
    pub half_length: f64,
    pub half_width: f64,
    pub heading: f64,
}

impl OrientedBox {
    fn axes(&self) -> [(f64, f64); 2] {
        let (s, c) = self.heading.sin_cos();
        [(c, s), (-s, c)]
    }

    fn radius_along(&self, axis: (f64, f64)) -> f64 {
        let [u, v] = self.axes();
        self.half_length * (u.0 * axis.0 + u.1 * axis.1).abs()
            + self.half_width * (v.0 * axis.0 + v.1 * axis.1).abs()
    }
}

/// Separating-axis test. Boxes that merely touch count as overlapping.
pub fn boxes_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let d = (b.center.x - a.center.x, b.center.y - a.center.y);
    a.axes().into_iter().chain(b.axes()).all(|axis| {
        let dist = (d.0 * axis.0 + d.1 * axis.1).abs();
        dist <= a.radius_along(axis) + b.radius_along(axis)
    })
}

/// Whether the ego footprint at `point` facing `heading` overlaps any obstacle.
pub fn collision_at<'a, I>(point: Point, heading: f64, ego: EgoDims, obstacles: I) -> bool
where
    I: IntoIterator<Item = &'a ObstacleBox>,
{
    let ego_box = OrientedBox {
        center: point,
        half_length: ego.length / 2.0,
        half_width: ego.width / 2.0,
        heading,
    };
    obstacles.into_iter().any(|o| boxes_overlap(&ego_box, &o.oriented()))
}

/// Heading at each waypoint from the displacement since the previous one
/// (the origin for the first). A step with no displacement keeps the
/// previous heading; the ego starts facing +x.
pub fn ego_headings(traj: &Trajectory) -> Vec<f64> {
    let mut prev = Point::ORIGIN;
    let mut heading = 0.0;
    traj.points()
        .iter()
        .map(|&p| {
            let (dx, dy) = (p.x - prev.x, p.y - prev.y);
            if dx.hypot(dy) > 1e-9 {
                heading = dy.atan2(dx);
            }
            prev = p;
            heading
        })
        .collect()
}

/// Collision flag for each of the first `horizon` steps.
pub fn sample_collisions(
    sample_id: &str,
    pred: &Trajectory,
    frames: &ObstacleFrames,
    ego: EgoDims,
    horizon: usize,
) -> Result<Vec<bool>, EvalError> {
    if frames.num_steps < horizon {
        return Err(EvalError::MissingObstacleFrame {
            sample_id: sample_id.to_string(),
            step: frames.num_steps + 1,
        });
    }
    frames.validate()?;
    let headings = ego_headings(pred);
    Ok((1..=horizon)
        .map(|step| collision_at(pred.points()[step - 1], headings[step - 1], ego, frames.at(step)))
        .collect())
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_4;

    use super::*;

    fn square(x: f64, y: f64, heading: f64) -> OrientedBox {
        OrientedBox {
            center: Point::new(x, y),
            half_length: 0.5,
            half_width: 0.5,
            heading,
        }
    }

    fn obstacle(x: f64, y: f64, timestep: usize) -> ObstacleBox {
        ObstacleBox {
            center: Point::new(x, y),
            half_extents: [2.0, 1.0],
            heading: 0.0,
            timestep,
        }
    }

    #[test]
    fn unit_squares() {
        assert!(boxes_overlap(&square(0.0, 0.0, 0.0), &square(0.5, 0.0, 0.0)));
        assert!(!boxes_overlap(&square(0.0, 0.0, 0.0), &square(2.5, 0.0, 0.0)));
        // A rotated square reaches sqrt(2)/2 along x.
        assert!(boxes_overlap(&square(0.0, 0.0, 0.0), &square(1.2, 0.0, FRAC_PI_4)));
        assert!(!boxes_overlap(&square(0.0, 0.0, 0.0), &square(1.25, 0.0, FRAC_PI_4)));
        // Diagonal miss that only a rotated box axis separates.
        assert!(!boxes_overlap(&square(0.0, 0.0, FRAC_PI_4), &square(1.0, 1.0, FRAC_PI_4)));
    }

    #[test]
    fn far_and_coincident_obstacles() {
        let ego = EgoDims::default();
        assert!(!collision_at(Point::new(0.0, 0.0), 0.0, ego, &[obstacle(50.0, 0.0, 1)]));
        assert!(collision_at(Point::new(3.0, 1.0), 0.3, ego, &[obstacle(3.0, 1.0, 1)]));
    }

    #[test]
    fn headings_follow_displacement() {
        let t = Trajectory::from_xy([(0.0, 1.0), (0.0, 1.0), (1.0, 1.0)]).unwrap();
        let h = ego_headings(&t);
        assert!((h[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(h[1], h[0]);
        assert_eq!(h[2], 0.0);
        let parked = Trajectory::from_xy([(0.0, 0.0)]).unwrap();
        assert_eq!(ego_headings(&parked), vec![0.0]);
    }

    #[test]
    fn missing_frames_and_bad_boxes() {
        let t = Trajectory::from_xy((1..=6).map(|k| (k as f64 * 2.0, 0.0))).unwrap();
        let frames = ObstacleFrames {
            sample_id: "a".into(),
            num_steps: 4,
            boxes: vec![],
        };
        assert!(matches!(
            sample_collisions("a", &t, &frames, EgoDims::default(), 6),
            Err(EvalError::MissingObstacleFrame { step: 5, .. })
        ));
        let mut b = obstacle(0.0, 0.0, 1);
        b.half_extents = [0.0, 1.0];
        assert!(b.validate().is_err());
        b = obstacle(0.0, 0.0, 1);
        b.heading = -PI;
        assert!(b.validate().is_err());
    }

    #[test]
    fn collision_only_at_step_two() {
        let t = Trajectory::from_xy((1..=6).map(|k| (k as f64 * 5.0, 0.0))).unwrap();
        let frames = ObstacleFrames {
            sample_id: "a".into(),
            num_steps: 6,
            boxes: vec![obstacle(10.0, 0.0, 2), obstacle(10.0, 0.0, 3)],
        };
        let flags = sample_collisions("a", &t, &frames, EgoDims::default(), 6).unwrap();
        assert_eq!(flags, vec![false, true, false, false, false, false]);
    }
}
