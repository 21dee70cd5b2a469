//! Open-loop planning metrics: L2 error and collision rate under the
//! per-timestep (UniAD) and running-average (ST-P3) conventions, plus the
//! Fréchet distance between feature sets.

mod collision;
pub mod features;
mod fid;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, Trajectory, DEFAULT_DT};

pub use collision::{
    boxes_overlap, collision_at, ego_headings, sample_collisions, EgoDims, ObstacleBox, ObstacleFrames,
    OrientedBox,
};
pub use fid::{frechet_distance, frechet_distance_from_stats, FidError, FidOptions, GaussianStats};

/// Waypoint indices (1-based) reported as the 1 s, 2 s and 3 s horizons.
pub const HORIZON_STEPS: [usize; 3] = [2, 4, 6];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("horizon step {step} is outside the trajectory ({available} points)")]
    HorizonOutOfRange { step: usize, available: usize },
    #[error("sample {sample_id}: no obstacle frame for step {step}")]
    MissingObstacleFrame { sample_id: String, step: usize },
    #[error("invalid obstacle box: {0}")]
    InvalidBox(String),
    #[error("report horizons assume dt = {DEFAULT_DT} s, got {0}")]
    BadDt(f64),
    #[error("sample {0} has no ground truth")]
    UnknownSample(String),
    #[error("no samples to evaluate")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// Running mean over all steps up to the horizon.
    Stp3,
    /// Value at the horizon step only.
    Uniad,
}

impl Convention {
    pub fn name(self) -> &'static str {
        match self {
            Convention::Stp3 => "stp3",
            Convention::Uniad => "uniad",
        }
    }
}

fn check_horizon(pred: &Trajectory, gt: &Trajectory, step: usize) -> Result<(), EvalError> {
    let available = pred.len().min(gt.len());
    if step == 0 || step > available {
        return Err(EvalError::HorizonOutOfRange { step, available });
    }
    Ok(())
}

/// Euclidean error at each step, up to the shorter trajectory.
pub fn per_step_errors(pred: &Trajectory, gt: &Trajectory) -> Vec<f64> {
    pred.points()
        .iter()
        .zip(gt.points())
        .map(|(p, g)| p.distance(*g))
        .collect()
}

/// Error at exactly `step` (1-based).
pub fn l2_uniad(pred: &Trajectory, gt: &Trajectory, step: usize) -> Result<f64, EvalError> {
    check_horizon(pred, gt, step)?;
    Ok(pred.points()[step - 1].distance(gt.points()[step - 1]))
}

/// Mean error over steps `1..=step`.
pub fn l2_stp3(pred: &Trajectory, gt: &Trajectory, step: usize) -> Result<f64, EvalError> {
    check_horizon(pred, gt, step)?;
    let errs = per_step_errors(pred, gt);
    Ok(errs[..step].iter().sum::<f64>() / step as f64)
}

/// How the ST-P3 collision column treats earlier steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stp3Collision {
    /// A sample counts at horizon h if it collides at any step up to h.
    #[default]
    Cumulative,
    /// A sample contributes the fraction of colliding steps up to h.
    Averaged,
}

/// Per-sample collision value at `step` (1-based) in [0, 1].
pub fn collision_value(flags: &[bool], step: usize, convention: Convention, stp3: Stp3Collision) -> f64 {
    let upto = &flags[..step.min(flags.len())];
    match (convention, stp3) {
        (Convention::Uniad, _) => f64::from(u8::from(flags.get(step - 1).copied().unwrap_or(false))),
        (Convention::Stp3, Stp3Collision::Cumulative) => f64::from(u8::from(upto.iter().any(|&c| c))),
        (Convention::Stp3, Stp3Collision::Averaged) => {
            upto.iter().filter(|&&c| c).count() as f64 / step as f64
        }
    }
}

/// Values at the 1 s, 2 s and 3 s horizons and their mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonValues {
    #[serde(rename = "1s")]
    pub s1: f64,
    #[serde(rename = "2s")]
    pub s2: f64,
    #[serde(rename = "3s")]
    pub s3: f64,
    pub avg: f64,
}

impl HorizonValues {
    pub fn new(values: [f64; 3]) -> Self {
        Self {
            s1: values[0],
            s2: values[1],
            s3: values[2],
            avg: values.iter().sum::<f64>() / 3.0,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.s1, self.s2, self.s3, self.avg]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConventionReport {
    pub l2: HorizonValues,
    /// Percentages; absent when no obstacles were supplied.
    pub collision: Option<HorizonValues>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub collision_samples: usize,
    pub conventions: BTreeMap<Convention, ConventionReport>,
}

impl EvalReport {
    /// `convention,metric,1s,2s,3s,avg` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("convention,metric,1s,2s,3s,avg\n");
        for (conv, rep) in &self.conventions {
            let rows = [("l2_m", Some(rep.l2)), ("collision_pct", rep.collision)];
            for (metric, values) in rows {
                if let Some(v) = values {
                    let [a, b, c, d] = v.as_array();
                    let _ = writeln!(out, "{},{metric},{a:.6},{b:.6},{c:.6},{d:.6}", conv.name());
                }
            }
        }
        out
    }
}

/// Per-sample inputs to the dataset report.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMetrics {
    pub errors: Vec<f64>,
    /// Collision flag per step, when obstacles are known.
    pub collisions: Option<Vec<bool>>,
}

impl SampleMetrics {
    pub fn compute(
        sample_id: &str,
        pred: &Trajectory,
        gt: &Trajectory,
        obstacles: Option<&ObstacleFrames>,
        ego: EgoDims,
    ) -> Result<Self, EvalError> {
        for t in [pred, gt] {
            if (t.dt() - DEFAULT_DT).abs() > 1e-9 {
                return Err(EvalError::BadDt(t.dt()));
            }
        }
        let last = HORIZON_STEPS[HORIZON_STEPS.len() - 1];
        check_horizon(pred, gt, last)?;
        let collisions = match obstacles {
            Some(frames) => Some(sample_collisions(sample_id, pred, frames, ego, last)?),
            None => None,
        };
        Ok(Self {
            errors: per_step_errors(pred, gt),
            collisions,
        })
    }
}

/// Averages per-sample metrics into the horizon table.
pub fn build_report(
    samples: &[SampleMetrics],
    conventions: &[Convention],
    stp3: Stp3Collision,
) -> Result<EvalReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let with_collisions: Vec<&Vec<bool>> = samples.iter().filter_map(|s| s.collisions.as_ref()).collect();
    let mut out = BTreeMap::new();
    for &conv in conventions {
        let l2 = HORIZON_STEPS.map(|step| {
            let total: f64 = samples
                .iter()
                .map(|s| match conv {
                    Convention::Uniad => s.errors[step - 1],
                    Convention::Stp3 => s.errors[..step].iter().sum::<f64>() / step as f64,
                })
                .sum();
            total / samples.len() as f64
        });
        let collision = (!with_collisions.is_empty()).then(|| {
            HorizonValues::new(HORIZON_STEPS.map(|step| {
                let hits: f64 = with_collisions
                    .iter()
                    .map(|flags| collision_value(flags, step, conv, stp3))
                    .sum();
                100.0 * hits / with_collisions.len() as f64
            }))
        });
        out.insert(
            conv,
            ConventionReport {
                l2: HorizonValues::new(l2),
                collision,
            },
        );
    }
    Ok(EvalReport {
        samples: samples.len(),
        collision_samples: with_collisions.len(),
        conventions: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn along_x(offsets: &[f64]) -> (Trajectory, Trajectory) {
        let gt = Trajectory::from_xy((1..=6).map(|k| (2.0 * k as f64, 0.0))).unwrap();
        let pred = Trajectory::from_xy((1..=6).map(|k| (2.0 * k as f64, offsets[k - 1]))).unwrap();
        (pred, gt)
    }

    #[test]
    fn conventions_differ_on_growing_error() {
        let (pred, gt) = along_x(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert!((l2_uniad(&pred, &gt, 6).unwrap() - 0.6).abs() < 1e-12);
        assert!((l2_stp3(&pred, &gt, 6).unwrap() - 0.35).abs() < 1e-12);
        assert_eq!(l2_stp3(&pred, &gt, 1).unwrap(), l2_uniad(&pred, &gt, 1).unwrap());
        assert!(matches!(
            l2_uniad(&pred, &gt, 7),
            Err(EvalError::HorizonOutOfRange { step: 7, available: 6 })
        ));
        assert!(l2_stp3(&pred, &gt, 0).is_err());
    }

    #[test]
    fn constant_offset_is_convention_free() {
        let (pred, gt) = along_x(&[0.5; 6]);
        for step in 1..=6 {
            assert!((l2_uniad(&pred, &gt, step).unwrap() - 0.5).abs() < 1e-12);
            assert!((l2_stp3(&pred, &gt, step).unwrap() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn collision_value_conventions() {
        let flags = [false, true, false, false, false, false];
        let uniad: Vec<f64> = HORIZON_STEPS
            .iter()
            .map(|&s| collision_value(&flags, s, Convention::Uniad, Stp3Collision::Cumulative))
            .collect();
        assert_eq!(uniad, vec![1.0, 0.0, 0.0]);
        let stp3: Vec<f64> = HORIZON_STEPS
            .iter()
            .map(|&s| collision_value(&flags, s, Convention::Stp3, Stp3Collision::Cumulative))
            .collect();
        assert_eq!(stp3, vec![1.0, 1.0, 1.0]);
        let avg: Vec<f64> = HORIZON_STEPS
            .iter()
            .map(|&s| collision_value(&flags, s, Convention::Stp3, Stp3Collision::Averaged))
            .collect();
        assert_eq!(avg, vec![0.5, 0.25, 1.0 / 6.0]);
    }

    #[test]
    fn report_and_csv() {
        let (pred, gt) = along_x(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let m = SampleMetrics::compute("s", &pred, &gt, None, EgoDims::default()).unwrap();
        let rep = build_report(&[m], &[Convention::Stp3, Convention::Uniad], Stp3Collision::Cumulative).unwrap();
        let u = rep.conventions[&Convention::Uniad].l2;
        assert!((u.s1 - 0.2).abs() < 1e-12 && (u.s2 - 0.4).abs() < 1e-12 && (u.s3 - 0.6).abs() < 1e-12);
        assert!((u.avg - 0.4).abs() < 1e-12);
        let s = rep.conventions[&Convention::Stp3].l2;
        assert!((s.s1 - 0.15).abs() < 1e-12 && (s.s2 - 0.25).abs() < 1e-12 && (s.s3 - 0.35).abs() < 1e-12);
        assert!(rep.conventions[&Convention::Stp3].collision.is_none());
        let csv = rep.to_csv();
        assert!(csv.starts_with("convention,metric,1s,2s,3s,avg\nstp3,l2_m,0.150000"));
        assert!(build_report(&[], &[Convention::Uniad], Stp3Collision::Cumulative).is_err());
    }

    #[test]
    fn report_rejects_other_dt() {
        let gt = Trajectory::new(
            (1..=6).map(|k| crate::model::Point::new(k as f64, 0.0)).collect(),
            1.0,
        )
        .unwrap();
        assert_eq!(
            SampleMetrics::compute("s", &gt, &gt, None, EgoDims::default()),
            Err(EvalError::BadDt(1.0))
        );
    }
}
