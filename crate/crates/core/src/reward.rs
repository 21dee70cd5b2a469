//! Rewards and the group-relative policy objective used during reinforcement
//! fine-tuning. Everything here is a pure function of externally supplied
//! embeddings, trajectories and token log-probabilities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{parse_answer_points, Trajectory, ANSWER_CLOSE, ANSWER_OPEN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimMismatch(usize, usize),
    #[error("length mismatch ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("trajectories use different time steps ({0} vs {1})")]
    DtMismatch(f64, f64),
    #[error("stage must be 1 or 2, got {0}")]
    BadStage(u8),
    #[error("group has {0} rollout(s); at least 2 are needed")]
    GroupTooSmall(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("log-probability {value} at token {index} is positive")]
    PositiveLogProb { index: usize, value: f64 },
    #[error("log-probability vector is empty")]
    EmptyLogProbs,
    #[error("invalid reward config: {0}")]
    Config(String),
}

/// How per-token KL terms are reduced to one value per rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlReduction {
    #[default]
    Mean,
    Sum,
}

fn d_lambda_l2() -> f64 {
    10.0
}
fn d_alpha_l2() -> f64 {
    6.0
}
fn d_format_weight() -> f64 {
    10.0
}
fn d_epsilon() -> f64 {
    0.2
}
fn d_beta() -> f64 {
    0.04
}
fn d_std_floor() -> f64 {
    1e-6
}
fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Displacement error (meters) at which the L2 reward reaches zero.
    #[serde(default = "d_lambda_l2")]
    pub lambda_l2: f64,
    #[serde(default = "d_alpha_l2")]
    pub alpha_l2: f64,
    /// Format-reward weight in stage 1.
    #[serde(default = "d_format_weight")]
    pub lambda1: f64,
    /// Format-reward weight in stage 2.
    #[serde(default = "d_format_weight")]
    pub lambda2: f64,
    #[serde(default = "d_epsilon")]
    pub epsilon_clip: f64,
    #[serde(default = "d_beta")]
    pub beta_kl: f64,
    #[serde(default = "d_std_floor")]
    pub std_floor: f64,
    /// Clamp the L2 reward at zero once ADE exceeds `lambda_l2`.
    #[serde(default = "d_true")]
    pub floor_l2_reward: bool,
    #[serde(default)]
    pub kl_reduction: KlReduction,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_l2: d_lambda_l2(),
            alpha_l2: d_alpha_l2(),
            lambda1: d_format_weight(),
            lambda2: d_format_weight(),
            epsilon_clip: d_epsilon(),
            beta_kl: d_beta(),
            std_floor: d_std_floor(),
            floor_l2_reward: true,
            kl_reduction: KlReduction::Mean,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let all = [
            self.lambda_l2,
            self.alpha_l2,
            self.lambda1,
            self.lambda2,
            self.epsilon_clip,
            self.beta_kl,
            self.std_floor,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(RewardError::Config("all weights must be finite".into()));
        }
        if self.alpha_l2 <= 0.0 {
            return Err(RewardError::Config("alpha_l2 must be > 0".into()));
        }
        if !(self.epsilon_clip > 0.0 && self.epsilon_clip < 1.0) {
            return Err(RewardError::Config("epsilon_clip must lie in (0, 1)".into()));
        }
        if self.beta_kl < 0.0 {
            return Err(RewardError::Config("beta_kl must be >= 0".into()));
        }
        if self.std_floor <= 0.0 {
            return Err(RewardError::Config("std_floor must be > 0".into()));
        }
        Ok(())
    }
}

/// Optional breakdown of how a rollout's reward was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardComponents {
    pub stage: u8,
    /// Image reward in stage 1, L2 reward in stage 2.
    pub core: f64,
    pub format: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rollout {
    pub output_text: String,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<RewardComponents>,
    pub token_logps_current: Vec<f64>,
    pub token_logps_old: Vec<f64>,
    pub token_logps_ref: Vec<f64>,
}

fn check_logps(v: &[f64], what: &'static str) -> Result<(), RewardError> {
    if v.is_empty() {
        return Err(RewardError::EmptyLogProbs);
    }
    for (index, &value) in v.iter().enumerate() {
        if !value.is_finite() {
            return Err(RewardError::NonFinite(what));
        }
        if value > 0.0 {
            return Err(RewardError::PositiveLogProb { index, value });
        }
    }
    Ok(())
}

impl Rollout {
    pub fn validate(&self) -> Result<(), RewardError> {
        check_logps(&self.token_logps_current, "token_logps_current")?;
        check_logps(&self.token_logps_old, "token_logps_old")?;
        check_logps(&self.token_logps_ref, "token_logps_ref")?;
        let n = self.token_logps_current.len();
        for other in [&self.token_logps_old, &self.token_logps_ref] {
            if other.len() != n {
                return Err(RewardError::LengthMismatch(n, other.len()));
            }
        }
        if !self.reward.is_finite() {
            return Err(RewardError::NonFinite("reward"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutGroup {
    pub query_id: String,
    pub rollouts: Vec<Rollout>,
}

impl RolloutGroup {
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.rollouts.len() < 2 {
            return Err(RewardError::GroupTooSmall(self.rollouts.len()));
        }
        self.rollouts.iter().try_for_each(Rollout::validate)
    }
}

/// Cosine similarity between a generated-image embedding and the
/// ground-truth one.
pub fn image_reward(e_dream: &[f64], e_gt: &[f64]) -> Result<f64, RewardError> {
    if e_dream.len() != e_gt.len() {
        return Err(RewardError::DimMismatch(e_dream.len(), e_gt.len()));
    }
    if e_dream.iter().chain(e_gt).any(|v| !v.is_finite()) {
        return Err(RewardError::NonFinite("embedding"));
    }
    let na = e_dream.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = e_gt.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(RewardError::ZeroNorm);
    }
    let dot: f64 = e_dream.iter().zip(e_gt).map(|(a, b)| (a / na) * (b / nb)).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// Average displacement error over corresponding waypoints.
pub fn ade(pred: &Trajectory, gt: &Trajectory) -> Result<f64, RewardError> {
    if pred.len() != gt.len() {
        return Err(RewardError::LengthMismatch(pred.len(), gt.len()));
    }
    if (pred.dt() - gt.dt()).abs() > 1e-9 {
        return Err(RewardError::DtMismatch(pred.dt(), gt.dt()));
    }
    let total: f64 = pred
        .points()
        .iter()
        .zip(gt.points())
        .map(|(p, g)| p.distance(*g))
        .sum();
    Ok(total / pred.len() as f64)
}

/// `(lambda_l2 - ade) / alpha_l2`, floored at zero unless disabled.
pub fn l2_reward_from_ade(ade: f64, cfg: &RewardConfig) -> f64 {
    let r = (cfg.lambda_l2 - ade) / cfg.alpha_l2;
    if cfg.floor_l2_reward {
        r.max(0.0)
    } else {
        r
    }
}

pub fn l2_reward(pred: &Trajectory, gt: &Trajectory, cfg: &RewardConfig) -> Result<f64, RewardError> {
    Ok(l2_reward_from_ade(ade(pred, gt)?, cfg))
}

/// 1 when the answer span holds exactly six well-formed `(x, y)` pairs.
pub fn format_reward(answer_span: &str) -> f64 {
    if parse_answer_points(answer_span).is_well_formed_horizon() {
        1.0
    } else {
        0.0
    }
}

/// Format reward of a full model output; 0 without an `<answer>` span.
pub fn format_reward_for_output(text: &str) -> f64 {
    let Some(start) = text.rfind(ANSWER_OPEN) else {
        return 0.0;
    };
    let body = &text[start + ANSWER_OPEN.len()..];
    match body.find(ANSWER_CLOSE) {
        Some(end) => format_reward(&body[..end]),
        None => 0.0,
    }
}

/// Stage 1 adds `lambda1 * r_fmt` to the image reward, stage 2 adds
/// `lambda2 * r_fmt` to the L2 reward.
pub fn stage_reward(stage: u8, r_core: f64, r_fmt: f64, cfg: &RewardConfig) -> Result<f64, RewardError> {
    match stage {
        1 => Ok(r_core + cfg.lambda1 * r_fmt),
        2 => Ok(r_core + cfg.lambda2 * r_fmt),
        other => Err(RewardError::BadStage(other)),
    }
}

/// `(r_i - mean) / max(std, std_floor)` with the population standard deviation.
pub fn group_advantages(rewards: &[f64], cfg: &RewardConfig) -> Result<Vec<f64>, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(RewardError::NonFinite("rewards"));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt().max(cfg.std_floor);
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Probability ratio of the whole sequence under the current and old policies.
pub fn sequence_ratio(logp_cur_sum: f64, logp_old_sum: f64) -> Result<f64, RewardError> {
    if !(logp_cur_sum.is_finite() && logp_old_sum.is_finite()) {
        return Err(RewardError::NonFinite("log-probability sums"));
    }
    Ok((logp_cur_sum - logp_old_sum).exp())
}

/// `min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(
    logp_cur_sum: f64,
    logp_old_sum: f64,
    advantage: f64,
    cfg: &RewardConfig,
) -> Result<f64, RewardError> {
    if !advantage.is_finite() {
        return Err(RewardError::NonFinite("advantage"));
    }
    let rho = sequence_ratio(logp_cur_sum, logp_old_sum)?;
    Ok(clip_objective(rho, advantage, cfg.epsilon_clip))
}

fn clip_objective(rho: f64, advantage: f64, eps: f64) -> f64 {
    if advantage == 0.0 {
        return 0.0;
    }
    let clipped = rho.clamp(1.0 - eps, 1.0 + eps);
    (rho * advantage).min(clipped * advantage)
}

/// Per-token estimator `exp(r) - r - 1` with `r = lref - lcur`, reduced by
/// mean (default) or sum.
pub fn kl_penalty(cur: &[f64], reference: &[f64], reduction: KlReduction) -> Result<f64, RewardError> {
    if cur.len() != reference.len() {
        return Err(RewardError::LengthMismatch(cur.len(), reference.len()));
    }
    if cur.is_empty() {
        return Err(RewardError::EmptyLogProbs);
    }
    let mut total = 0.0;
    for (c, r) in cur.iter().zip(reference) {
        let d = r - c;
        // exp_m1 keeps precision when d is tiny; max guards rounding below 0.
        total += (d.exp_m1() - d).max(0.0);
    }
    if !total.is_finite() {
        return Err(RewardError::NonFinite("kl penalty"));
    }
    Ok(match reduction {
        KlReduction::Mean => total / cur.len() as f64,
        KlReduction::Sum => total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutBreakdown {
    pub reward: f64,
    pub ratio: f64,
    pub advantage: f64,
    pub surrogate: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoReport {
    pub query_id: String,
    pub objective: f64,
    pub rollouts: Vec<RolloutBreakdown>,
}

/// `J = (1/G) * sum_i [surrogate_i - beta * KL_i]`.
pub fn grpo_objective(group: &RolloutGroup, cfg: &RewardConfig) -> Result<GrpoReport, RewardError> {
    group.validate()?;
    let rewards: Vec<f64> = group.rollouts.iter().map(|r| r.reward).collect();
    let advantages = group_advantages(&rewards, cfg)?;
    let mut rollouts = Vec::with_capacity(group.rollouts.len());
    let mut total = 0.0;
    for (r, &advantage) in group.rollouts.iter().zip(&advantages) {
        let cur: f64 = r.token_logps_current.iter().sum();
        let old: f64 = r.token_logps_old.iter().sum();
        let ratio = sequence_ratio(cur, old)?;
        let surrogate = clip_objective(ratio, advantage, cfg.epsilon_clip);
        let kl = kl_penalty(&r.token_logps_current, &r.token_logps_ref, cfg.kl_reduction)?;
        let term = surrogate - cfg.beta_kl * kl;
        if !term.is_finite() {
            return Err(RewardError::NonFinite("objective term"));
        }
        total += term;
        rollouts.push(RolloutBreakdown {
            reward: r.reward,
            ratio,
            advantage,
            surrogate,
            kl,
        });
    }
    Ok(GrpoReport {
        query_id: group.query_id.clone(),
        objective: total / group.rollouts.len() as f64,
        rollouts,
    })
}

/// Negative log-likelihood of a sequence from its token log-probabilities.
pub fn sequence_nll(token_logps: &[f64]) -> Result<f64, RewardError> {
    let mut total = 0.0;
    for (index, &value) in token_logps.iter().enumerate() {
        if !value.is_finite() {
            return Err(RewardError::NonFinite("token log-probabilities"));
        }
        if value > 0.0 {
            return Err(RewardError::PositiveLogProb { index, value });
        }
        total -= value;
    }
    Ok(total)
}

/// Recomputes a rollout's reward from its components when they are present.
/// Returns `None` for rollouts without components.
pub fn recompute_reward(r: &Rollout, cfg: &RewardConfig) -> Option<Result<f64, RewardError>> {
    r.components.map(|c| stage_reward(c.stage, c.core, c.format, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RewardConfig {
        RewardConfig::default()
    }

    #[test]
    fn image_reward_examples() {
        let e = [0.3, -1.2, 2.0];
        assert!((image_reward(&e, &e).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(image_reward(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let neg: Vec<f64> = e.iter().map(|v| -v).collect();
        assert!((image_reward(&e, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(image_reward(&[0.0, 0.0], &[1.0, 0.0]), Err(RewardError::ZeroNorm));
        assert_eq!(image_reward(&[1.0], &[1.0, 0.0]), Err(RewardError::DimMismatch(1, 2)));
    }

    #[test]
    fn l2_reward_uses_published_constants() {
        let c = cfg();
        assert!((l2_reward_from_ade(0.0, &c) - 10.0 / 6.0).abs() < 1e-9);
        assert_eq!(l2_reward_from_ade(10.0, &c), 0.0);
        assert!((l2_reward_from_ade(4.0, &c) - 1.0).abs() < 1e-9);
        assert_eq!(l2_reward_from_ade(16.0, &c), 0.0);
        let unfloored = RewardConfig {
            floor_l2_reward: false,
            ..c
        };
        assert!((l2_reward_from_ade(16.0, &unfloored) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ade_constant_offset() {
        let gt = Trajectory::from_xy((1..=6).map(|k| (k as f64, 0.0))).unwrap();
        let pred = Trajectory::from_xy((1..=6).map(|k| (k as f64, 0.5))).unwrap();
        assert!((ade(&pred, &gt).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(ade(&gt, &gt).unwrap(), 0.0);
        let short = Trajectory::from_xy([(1.0, 0.0)]).unwrap();
        assert_eq!(ade(&short, &gt), Err(RewardError::LengthMismatch(1, 6)));
    }

    #[test]
    fn format_reward_counts_pairs() {
        let six = "[(0.1,0.2), (1,2), (3,4), (5,6), (7,8), (9,10)]";
        assert_eq!(format_reward(six), 1.0);
        assert_eq!(format_reward("[(1,2), (3,4), (5,6), (7,8), (9,10)]"), 0.0);
        assert_eq!(format_reward("[(a,2), (1,2), (3,4), (5,6), (7,8), (9,10)]"), 0.0);
        assert_eq!(format_reward_for_output(&format!("<answer>{six}</answer>")), 1.0);
        assert_eq!(format_reward_for_output(six), 0.0);
        assert_eq!(format_reward_for_output(&format!("<answer>{six}")), 0.0);
    }

    #[test]
    fn stage_reward_examples() {
        let c = cfg();
        assert!((stage_reward(1, 0.8, 1.0, &c).unwrap() - 10.8).abs() < 1e-12);
        assert_eq!(stage_reward(2, 1.5, 0.0, &c).unwrap(), 1.5);
        assert_eq!(stage_reward(2, 0.0, 1.0, &c).unwrap(), 10.0);
        assert_eq!(stage_reward(3, 0.0, 1.0, &c), Err(RewardError::BadStage(3)));
    }

    #[test]
    fn advantages_examples() {
        let a = group_advantages(&[1.0, 2.0, 3.0], &cfg()).unwrap();
        let expected = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((a[0] + expected).abs() < 1e-12 && a[1].abs() < 1e-12 && (a[2] - expected).abs() < 1e-12);
        assert!((a[2] - 1.2247).abs() < 1e-4);
        assert_eq!(group_advantages(&[4.0, 4.0], &cfg()).unwrap(), vec![0.0, 0.0]);
        assert_eq!(group_advantages(&[1.0], &cfg()), Err(RewardError::GroupTooSmall(1)));
    }

    #[test]
    fn surrogate_examples() {
        let c = cfg();
        assert_eq!(clipped_surrogate(-3.0, -3.0, 0.7, &c).unwrap(), 0.7);
        let l15 = 1.5f64.ln();
        assert!((clipped_surrogate(l15, 0.0, 1.0, &c).unwrap() - 1.2).abs() < 1e-12);
        let l05 = 0.5f64.ln();
        assert!((clipped_surrogate(l05, 0.0, -1.0, &c).unwrap() + 0.8).abs() < 1e-12);
        assert!(clipped_surrogate(f64::NAN, 0.0, 1.0, &c).is_err());
    }

    #[test]
    fn kl_examples() {
        let v = [-0.5, -1.0, -2.0];
        assert_eq!(kl_penalty(&v, &v, KlReduction::Mean).unwrap(), 0.0);
        let k = kl_penalty(&[-2.0], &[-1.0], KlReduction::Mean).unwrap();
        assert!((k - (std::f64::consts::E - 2.0)).abs() < 1e-12);
        let sum = kl_penalty(&[-2.0, -2.0], &[-1.0, -1.0], KlReduction::Sum).unwrap();
        assert!((sum - 2.0 * k).abs() < 1e-12);
        assert!(matches!(
            kl_penalty(&[-1.0], &[-1.0, -2.0], KlReduction::Mean),
            Err(RewardError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn nll_examples() {
        let uniform = vec![-(100f64.ln()); 5];
        assert!((sequence_nll(&uniform).unwrap() - 23.0259).abs() < 1e-4);
        assert_eq!(sequence_nll(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(sequence_nll(&[0.1]), Err(RewardError::PositiveLogProb { index: 0, .. })));
    }

    fn rollout(reward: f64, logps: Vec<f64>) -> Rollout {
        Rollout {
            output_text: String::new(),
            reward,
            components: None,
            token_logps_current: logps.clone(),
            token_logps_old: logps.clone(),
            token_logps_ref: logps,
        }
    }

    #[test]
    fn objective_zero_cases() {
        let group = RolloutGroup {
            query_id: "q".into(),
            rollouts: vec![rollout(1.0, vec![-0.1, -0.2]), rollout(1.0, vec![-0.3])],
        };
        assert_eq!(grpo_objective(&group, &cfg()).unwrap().objective, 0.0);

        let group = RolloutGroup {
            query_id: "q".into(),
            rollouts: vec![
                rollout(1.0, vec![-0.1]),
                rollout(2.0, vec![-0.4]),
                rollout(4.0, vec![-0.9, -0.1]),
            ],
        };
        let zero_beta = RewardConfig { beta_kl: 0.0, ..cfg() };
        assert!(grpo_objective(&group, &zero_beta).unwrap().objective.abs() < 1e-12);
    }

    #[test]
    fn group_validation() {
        let mut bad = rollout(1.0, vec![-0.1]);
        bad.token_logps_ref.push(-0.2);
        let group = RolloutGroup {
            query_id: "q".into(),
            rollouts: vec![bad, rollout(0.0, vec![-0.1])],
        };
        assert_eq!(group.validate(), Err(RewardError::LengthMismatch(1, 2)));
        let single = RolloutGroup {
            query_id: "q".into(),
            rollouts: vec![rollout(0.0, vec![-0.1])],
        };
        assert_eq!(single.validate(), Err(RewardError::GroupTooSmall(1)));
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        for bad in [
            RewardConfig { alpha_l2: 0.0, ..cfg() },
            RewardConfig { epsilon_clip: 1.0, ..cfg() },
            RewardConfig { beta_kl: -0.1, ..cfg() },
            RewardConfig { std_floor: 0.0, ..cfg() },
        ] {
            assert!(bad.validate().is_err());
        }
        let parsed: RewardConfig = toml::from_str("beta_kl = 0.1").unwrap();
        assert_eq!(parsed.beta_kl, 0.1);
        assert_eq!(parsed.lambda_l2, 10.0);
        assert!(toml::from_str::<RewardConfig>("betta = 0.1").is_err());
    }
}
