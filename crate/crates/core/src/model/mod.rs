//! Domain types shared by every stage of the toolkit.
//!
//! Trajectories live in the ego frame at t=0: `x` points forward, `y` points
//! left, the ego sits at the origin with heading +x.

mod cot;
pub mod jsonl;
mod sequence;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cot::{parse_cot, render_cot, ActionDecision, CotText};
pub use sequence::{
    assemble_sequence, parse_answer_points, parse_sequence, AnswerPoints, ParsedSequence,
    SequenceError, SpanFlags, TrainingSequence, ANSWER_CLOSE, ANSWER_OPEN, DREAM_CLOSE,
    DREAM_OPEN, THINK_CLOSE, THINK_OPEN,
};

/// Seconds between consecutive planning waypoints.
pub const DEFAULT_DT: f64 = 0.5;

/// Number of waypoints in a 3 s planning horizon at [`DEFAULT_DT`].
pub const HORIZON_POINTS: usize = 6;

/// Surround-view camera count per annotation sample.
pub const SURROUND_VIEWS: usize = 6;

/// Maximum number of historical front-view frames per annotation sample.
pub const MAX_HISTORY_FRAMES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("trajectory has no points")]
    EmptyTrajectory,
    #[error("trajectory point {index} is not finite")]
    NonFinitePoint { index: usize },
    #[error("trajectory dt must be finite and > 0, got {0}")]
    BadDt(f64),
    #[error("ego velocity must be finite and >= 0, got {0}")]
    BadVelocity(f64),
    #[error("ego acceleration must be finite, got {0}")]
    BadAcceleration(f64),
    #[error("sample {sample_id}: expected {expected} camera images, got {got}")]
    ImageCount {
        sample_id: String,
        expected: usize,
        got: usize,
    },
    #[error("sample {sample_id}: at most {max} history frames allowed, got {got}")]
    HistoryCount {
        sample_id: String,
        max: usize,
        got: usize,
    },
    #[error("sample {sample_id}: ground-truth trajectory must have {expected} points, got {got}")]
    GtPointCount {
        sample_id: String,
        expected: usize,
        got: usize,
    },
}

/// A waypoint in meters, serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

/// Timestamped ego waypoints; point `k` (0-based) is at time `(k + 1) * dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrajectory")]
pub struct Trajectory {
    points: Vec<Point>,
    dt: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrajectory {
    points: Vec<Point>,
    #[serde(default = "default_dt")]
    dt: f64,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

impl TryFrom<RawTrajectory> for Trajectory {
    type Error = ModelError;

    fn try_from(raw: RawTrajectory) -> Result<Self, Self::Error> {
        Trajectory::new(raw.points, raw.dt)
    }
}

impl Trajectory {
    pub fn new(points: Vec<Point>, dt: f64) -> Result<Self, ModelError> {
        if points.is_empty() {
            return Err(ModelError::EmptyTrajectory);
        }
        if let Some(index) = points.iter().position(|p| !p.is_finite()) {
            return Err(ModelError::NonFinitePoint { index });
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(ModelError::BadDt(dt));
        }
        Ok(Self { points, dt })
    }

    /// Builds a trajectory at the default 0.5 s spacing.
    pub fn from_xy<I, P>(points: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = P>,
        P: Into<Point>,
    {
        Self::new(points.into_iter().map(Into::into).collect(), DEFAULT_DT)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Total time covered by the waypoints.
    pub fn duration(&self) -> f64 {
        self.points.len() as f64 * self.dt
    }

    pub fn is_planning_horizon(&self) -> bool {
        self.points.len() == HORIZON_POINTS
    }

    /// Reflects about the x-axis (left becomes right).
    pub fn mirrored(&self) -> Self {
        Self {
            points: self.points.iter().map(|p| Point::new(p.x, -p.y)).collect(),
            dt: self.dt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEgo", deny_unknown_fields)]
pub struct EgoStatus {
    pub velocity: f64,
    pub acceleration: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEgo {
    velocity: f64,
    acceleration: f64,
}

impl TryFrom<RawEgo> for EgoStatus {
    type Error = ModelError;

    fn try_from(raw: RawEgo) -> Result<Self, Self::Error> {
        EgoStatus::new(raw.velocity, raw.acceleration)
    }
}

impl EgoStatus {
    pub fn new(velocity: f64, acceleration: f64) -> Result<Self, ModelError> {
        if !(velocity.is_finite() && velocity >= 0.0) {
            return Err(ModelError::BadVelocity(velocity));
        }
        if !acceleration.is_finite() {
            return Err(ModelError::BadAcceleration(acceleration));
        }
        Ok(Self {
            velocity,
            acceleration,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrivingCommand {
    TurnLeft,
    TurnRight,
    GoStraight,
}

impl DrivingCommand {
    pub fn label(self) -> &'static str {
        match self {
            DrivingCommand::TurnLeft => "Turn Left",
            DrivingCommand::TurnRight => "Turn Right",
            DrivingCommand::GoStraight => "Go Straight",
        }
    }
}

impl fmt::Display for DrivingCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    MaintainCurrentLane,
    ChangeLaneLeft,
    ChangeLaneRight,
    TurnLeft,
    TurnRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speed {
    SmoothDeceleration,
    EmergencyBrake,
    MaintainCurrentSpeed,
    SmoothAcceleration,
    Stop,
    RemainStationary,
}

/// Lowercases and keeps only alphanumeric words, so "Turn-Left." and
/// "turn left" compare equal.
fn normalize_phrase(text: &str) -> String {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl Direction {
    pub const ALL: [Direction; 5] = [
        Direction::MaintainCurrentLane,
        Direction::ChangeLaneLeft,
        Direction::ChangeLaneRight,
        Direction::TurnLeft,
        Direction::TurnRight,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Direction::MaintainCurrentLane => "Maintain Current Lane",
            Direction::ChangeLaneLeft => "Change Lane Left",
            Direction::ChangeLaneRight => "Change Lane Right",
            Direction::TurnLeft => "Turn Left",
            Direction::TurnRight => "Turn Right",
        }
    }

    /// Case-insensitive vocabulary lookup, ignoring punctuation.
    pub fn from_phrase(text: &str) -> Option<Self> {
        let norm = normalize_phrase(text);
        Self::ALL
            .into_iter()
            .find(|d| normalize_phrase(d.label()) == norm)
    }

    /// Left/right swap under reflection about the x-axis.
    pub fn mirrored(self) -> Self {
        match self {
            Direction::ChangeLaneLeft => Direction::ChangeLaneRight,
            Direction::ChangeLaneRight => Direction::ChangeLaneLeft,
            Direction::TurnLeft => Direction::TurnRight,
            Direction::TurnRight => Direction::TurnLeft,
            Direction::MaintainCurrentLane => Direction::MaintainCurrentLane,
        }
    }
}

impl Speed {
    pub const ALL: [Speed; 6] = [
        Speed::SmoothDeceleration,
        Speed::EmergencyBrake,
        Speed::MaintainCurrentSpeed,
        Speed::SmoothAcceleration,
        Speed::Stop,
        Speed::RemainStationary,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Speed::SmoothDeceleration => "Smooth Deceleration",
            Speed::EmergencyBrake => "Emergency Brake",
            Speed::MaintainCurrentSpeed => "Maintain Current Speed",
            Speed::SmoothAcceleration => "Smooth Acceleration",
            Speed::Stop => "Stop",
            Speed::RemainStationary => "Remain Stationary",
        }
    }

    pub fn from_phrase(text: &str) -> Option<Self> {
        let norm = normalize_phrase(text);
        Self::ALL
            .into_iter()
            .find(|s| normalize_phrase(s.label()) == norm)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl fmt::Display for Speed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A discrete (direction, speed) driving decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaAction {
    pub direction: Direction,
    pub speed: Speed,
}

impl MetaAction {
    pub const fn new(direction: Direction, speed: Speed) -> Self {
        Self { direction, speed }
    }

    /// Every (direction, speed) combination.
    pub fn all() -> impl Iterator<Item = MetaAction> {
        Direction::ALL
            .into_iter()
            .flat_map(|d| Speed::ALL.into_iter().map(move |s| MetaAction::new(d, s)))
    }
}

impl fmt::Display for MetaAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {}", self.direction, self.speed)
    }
}

/// One record of an annotation dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSample {
    pub sample_id: String,
    /// Surround-view camera identifiers, front camera first.
    pub image_refs: Vec<String>,
    /// Recent front-view frames, oldest first.
    #[serde(default)]
    pub history_refs: Vec<String>,
    pub command: DrivingCommand,
    pub ego: EgoStatus,
    pub gt_trajectory: Trajectory,
    /// Pre-tokenized visual tokens of the ground-truth future front frame.
    #[serde(default)]
    pub gt_dream_tokens: Vec<u32>,
}

impl AnnotationSample {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.image_refs.len() != SURROUND_VIEWS {
            return Err(ModelError::ImageCount {
                sample_id: self.sample_id.clone(),
                expected: SURROUND_VIEWS,
                got: self.image_refs.len(),
            });
        }
        if self.history_refs.len() > MAX_HISTORY_FRAMES {
            return Err(ModelError::HistoryCount {
                sample_id: self.sample_id.clone(),
                max: MAX_HISTORY_FRAMES,
                got: self.history_refs.len(),
            });
        }
        if !self.gt_trajectory.is_planning_horizon() {
            return Err(ModelError::GtPointCount {
                sample_id: self.sample_id.clone(),
                expected: HORIZON_POINTS,
                got: self.gt_trajectory.len(),
            });
        }
        Ok(())
    }
}

/// A trajectory keyed by sample, as used for predictions and ground truth
/// in evaluation files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub sample_id: String,
    pub trajectory: Trajectory,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_rejects_bad_input() {
        assert_eq!(
            Trajectory::new(vec![], 0.5),
            Err(ModelError::EmptyTrajectory)
        );
        assert_eq!(
            Trajectory::new(vec![Point::new(f64::NAN, 0.0)], 0.5),
            Err(ModelError::NonFinitePoint { index: 0 })
        );
        assert!(matches!(
            Trajectory::new(vec![Point::ORIGIN], 0.0),
            Err(ModelError::BadDt(_))
        ));
    }

    #[test]
    fn trajectory_json_defaults_dt_and_validates() {
        let t: Trajectory = serde_json::from_str(r#"{"points":[[1.0,2.0]]}"#).unwrap();
        assert_eq!(t.dt(), DEFAULT_DT);
        assert_eq!(t.points()[0], Point::new(1.0, 2.0));
        assert!(serde_json::from_str::<Trajectory>(r#"{"points":[]}"#).is_err());
        assert!(serde_json::from_str::<Trajectory>(r#"{"points":[[0,0]],"dt":-1}"#).is_err());
    }

    #[test]
    fn ego_status_validation() {
        assert!(EgoStatus::new(3.0, -1.0).is_ok());
        assert!(EgoStatus::new(-0.1, 0.0).is_err());
        assert!(EgoStatus::new(1.0, f64::INFINITY).is_err());
        assert!(serde_json::from_str::<EgoStatus>(r#"{"velocity":-2,"acceleration":0}"#).is_err());
    }

    #[test]
    fn phrase_lookup_is_lenient() {
        assert_eq!(Direction::from_phrase("turn left"), Some(Direction::TurnLeft));
        assert_eq!(
            Direction::from_phrase("  **Change Lane Right.** "),
            Some(Direction::ChangeLaneRight)
        );
        assert_eq!(Speed::from_phrase("STOP!"), Some(Speed::Stop));
        assert_eq!(Direction::from_phrase("turn slightly left"), None);
        assert_eq!(Speed::from_phrase(""), None);
    }

    #[test]
    fn every_label_round_trips() {
        for a in MetaAction::all() {
            assert_eq!(Direction::from_phrase(a.direction.label()), Some(a.direction));
            assert_eq!(Speed::from_phrase(a.speed.label()), Some(a.speed));
        }
        assert_eq!(MetaAction::all().count(), 30);
    }

    #[test]
    fn mirror_is_involution() {
        for d in Direction::ALL {
            assert_eq!(d.mirrored().mirrored(), d);
        }
    }
}
