//! Independent oracles and generators shared by the integration tests.
//!
//! The oracles recompute results with plain loops and no library helpers so
//! a bug in the library cannot cancel out in the comparison.

#![allow(dead_code)]

pub mod scenarios;

use drivecot_core::model::{
    ActionDecision, CotText, Direction, MetaAction, Point, Speed, Trajectory, TrainingSequence,
};
use drivecot_core::reward::{Rollout, RolloutGroup};
use rand::rngs::StdRng;
use rand::Rng;

/// Objective recomputed term by term.
pub struct GrpoOracle {
    pub advantages: Vec<f64>,
    pub ratios: Vec<f64>,
    pub kls: Vec<f64>,
    pub objective: f64,
}

pub fn grpo_oracle(group: &RolloutGroup, eps: f64, beta: f64, std_floor: f64) -> GrpoOracle {
    let g = group.rollouts.len();
    let mut mean = 0.0;
    for r in &group.rollouts {
        mean += r.reward;
    }
    mean /= g as f64;
    let mut var = 0.0;
    for r in &group.rollouts {
        var += (r.reward - mean) * (r.reward - mean);
    }
    var /= g as f64;
    let std = var.sqrt();
    let denom = if std > std_floor { std } else { std_floor };

    let mut out = GrpoOracle {
        advantages: Vec::new(),
        ratios: Vec::new(),
        kls: Vec::new(),
        objective: 0.0,
    };
    for r in &group.rollouts {
        let a = (r.reward - mean) / denom;
        let mut cur = 0.0;
        let mut old = 0.0;
        for i in 0..r.token_logps_current.len() {
            cur += r.token_logps_current[i];
            old += r.token_logps_old[i];
        }
        let rho = (cur - old).exp();
        let clipped_rho = if rho < 1.0 - eps {
            1.0 - eps
        } else if rho > 1.0 + eps {
            1.0 + eps
        } else {
            rho
        };
        let unclipped = rho * a;
        let clipped = clipped_rho * a;
        let surrogate = if unclipped < clipped { unclipped } else { clipped };
        let mut kl = 0.0;
        for i in 0..r.token_logps_current.len() {
            let d = r.token_logps_ref[i] - r.token_logps_current[i];
            kl += d.exp() - d - 1.0;
        }
        kl /= r.token_logps_current.len() as f64;
        out.objective += surrogate - beta * kl;
        out.advantages.push(a);
        out.ratios.push(rho);
        out.kls.push(kl);
    }
    out.objective /= g as f64;
    out
}

/// Random group with realistic log-probabilities: the old and reference
/// policies stay within a small per-token perturbation of the current one.
pub fn random_group(rng: &mut StdRng, id: usize) -> RolloutGroup {
    let g = rng.random_range(2..=16);
    let degenerate = rng.random_bool(0.1);
    let rollouts = (0..g)
        .map(|_| {
            let len = rng.random_range(1..=64);
            let cur: Vec<f64> = (0..len).map(|_| -rng.random_range(0.0..4.0)).collect();
            let near = |rng: &mut StdRng, v: &[f64]| -> Vec<f64> {
                v.iter()
                    .map(|x| (x + rng.random_range(-0.05..0.05)).min(0.0))
                    .collect()
            };
            let old = near(rng, &cur);
            let reference = near(rng, &cur);
            Rollout {
                output_text: String::new(),
                reward: if degenerate { 1.5 } else { rng.random_range(-2.0..12.0) },
                components: None,
                token_logps_current: cur,
                token_logps_old: old,
                token_logps_ref: reference,
            }
        })
        .collect();
    RolloutGroup {
        query_id: format!("q{id}"),
        rollouts,
    }
}

/// Population mean and standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Linear-interpolation percentile over a freshly sorted copy.
pub fn percentile_oracle(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = p / 100.0 * (s.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (rank - lo as f64)
}

/// Constant-turn-rate, constant-acceleration motion sampled at 0.5 s,
/// optionally with a lateral drift, starting from the ego pose.
pub fn random_trajectory(rng: &mut StdRng) -> Trajectory {
    let v0 = rng.random_range(0.0..15.0);
    let accel = rng.random_range(-3.0..3.0);
    let yaw_rate = if rng.random_bool(0.5) {
        rng.random_range(-0.4..0.4)
    } else {
        0.0
    };
    let drift = if rng.random_bool(0.3) {
        rng.random_range(-1.5..1.5)
    } else {
        0.0
    };
    let dt = 0.5f64;
    let (mut x, mut y, mut heading, mut v) = (0.0f64, 0.0f64, 0.0f64, v0);
    let mut pts = Vec::with_capacity(6);
    for _ in 0..6 {
        v = (v + accel * dt).max(0.0);
        heading += yaw_rate * dt;
        x += v * heading.cos() * dt;
        y += v * heading.sin() * dt + drift * dt / 3.0;
        pts.push(Point::new(x, y));
    }
    Trajectory::new(pts, dt).unwrap()
}

const WORDS: &[&str] = &[
    "wet", "road", "cyclist", "ahead", "merging", "truck", "signal", "amber", "crosswalk", "empty",
    "pedestrian", "waiting", "curb", "lane", "narrow", "parked", "van", "door", "slow", "keep",
    "distance", "yield", "clear", "intersection", "queue", "bus", "stop", "shoulder", "cone", "glare",
];

fn sentence(rng: &mut StdRng) -> String {
    let n = rng.random_range(1..12);
    let mut words: Vec<&str> = (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
    if rng.random_bool(0.3) {
        words.push("3.5 m/s, (left)");
    }
    words.join(" ")
}

pub fn random_action(rng: &mut StdRng) -> MetaAction {
    MetaAction::new(
        Direction::ALL[rng.random_range(0..Direction::ALL.len())],
        Speed::ALL[rng.random_range(0..Speed::ALL.len())],
    )
}

pub fn random_cot(rng: &mut StdRng) -> CotText {
    CotText {
        scene_analysis: sentence(rng),
        latent_risk: sentence(rng),
        behavior_reasoning: sentence(rng),
        action_decision: ActionDecision::from_action(random_action(rng)),
    }
}

/// A sequence whose waypoints survive two-decimal formatting exactly.
pub fn random_sequence(rng: &mut StdRng) -> TrainingSequence {
    let pts = (0..6)
        .map(|_| {
            Point::new(
                rng.random_range(-4000i32..4000) as f64 / 100.0,
                rng.random_range(-4000i32..4000) as f64 / 100.0,
            )
        })
        .collect();
    let n_tokens = rng.random_range(0..64);
    TrainingSequence {
        cot: random_cot(rng),
        dream_tokens: (0..n_tokens).map(|_| rng.random_range(0..16384)).collect(),
        trajectory: Trajectory::new(pts, 0.5).unwrap(),
    }
}

/// Answer span with `n` coordinate pairs.
pub fn answer_span(n: usize) -> String {
    let pairs: Vec<String> = (0..n)
        .map(|k| format!("({:.2},{:.2})", 1.5 * k as f64, -0.25 * k as f64))
        .collect();
    format!("[{}]", pairs.join(", "))
}
