//! Format, decision and logic quality filters plus the re-annotation
//! feedback builder.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{render_prompt, ChatProvider, ChatRequest, PromptError, ProviderError};
use crate::model::{render_cot, CotText, Direction, MetaAction, Speed};

/// Checker replies that fail to parse are re-requested up to this many
/// times in total.
pub const DEFAULT_LOGIC_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStage {
    Format,
    Decision,
    Logic,
}

impl FilterStage {
    pub fn title(self) -> &'static str {
        match self {
            FilterStage::Format => "Format Error",
            FilterStage::Decision => "Decision Error",
            FilterStage::Logic => "Logic Error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterVerdict {
    pub stage: FilterStage,
    pub passed: bool,
    /// Empty iff `passed`.
    pub messages: Vec<String>,
}

impl FilterVerdict {
    pub fn pass(stage: FilterStage) -> Self {
        Self {
            stage,
            passed: true,
            messages: Vec::new(),
        }
    }

    /// A verdict from collected messages: passes iff there are none.
    pub fn from_messages(stage: FilterStage, messages: Vec<String>) -> Self {
        Self {
            stage,
            passed: messages.is_empty(),
            messages,
        }
    }
}

pub fn format_filter(cot: &CotText) -> FilterVerdict {
    let mut messages = Vec::new();
    let sections = [
        (&cot.scene_analysis, "Scene Analysis"),
        (&cot.latent_risk, "Latent Risk Assessment"),
        (&cot.behavior_reasoning, "Behavior Reasoning"),
    ];
    for (text, name) in sections {
        if text.is_empty() {
            messages.push(format!("Missing {name} part"));
        }
    }
    let decision = &cot.action_decision;
    if decision.is_empty() {
        messages.push("Missing Action Decision part".to_string());
    } else {
        if decision.direction_text.is_empty() {
            messages.push("Missing direction decision in Action Decision part".to_string());
        } else if Direction::from_phrase(&decision.direction_text).is_none() {
            messages.push(format!(
                "Unrecognized direction decision \"{}\" in Action Decision part",
                decision.direction_text
            ));
        }
        if decision.speed_text.is_empty() {
            messages.push("Missing speed decision in Action Decision part".to_string());
        } else if Speed::from_phrase(&decision.speed_text).is_none() {
            messages.push(format!(
                "Unrecognized speed decision \"{}\" in Action Decision part",
                decision.speed_text
            ));
        }
    }
    FilterVerdict::from_messages(FilterStage::Format, messages)
}

/// Compares the predicted decision with the trajectory-derived one; an absent
/// prediction mismatches both components and renders as `None`.
pub fn decision_filter(predicted: Option<MetaAction>, gt: MetaAction) -> FilterVerdict {
    let pred_dir = predicted.map_or("None", |p| p.direction.label());
    let pred_speed = predicted.map_or("None", |p| p.speed.label());
    let mut messages = Vec::new();
    if predicted.map(|p| p.direction) != Some(gt.direction) {
        messages.push(format!(
            "Direction decision error(GT: {}; Prediction: {})",
            gt.direction, pred_dir
        ));
    }
    if predicted.map(|p| p.speed) != Some(gt.speed) {
        messages.push(format!(
            "Speed decision error(GT: {}; Prediction: {})",
            gt.speed, pred_speed
        ));
    }
    FilterVerdict::from_messages(FilterStage::Decision, messages)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogicReply {
    Pass,
    Fail(String),
}

/// Reads the checker's first non-blank line: `PASS`, or `FAIL` optionally
/// followed by `:` and a summary (which may continue on later lines).
/// Case-insensitive.
pub fn parse_logic_reply(text: &str) -> Option<LogicReply> {
    let trimmed = text.trim_start();
    let first_end = trimmed.find('\n').unwrap_or(trimmed.len());
    let first = trimmed[..first_end].trim().trim_matches(|c| c == '*' || c == '`');
    let upper = first.to_ascii_uppercase();
    if upper == "PASS" || upper.starts_with("PASS:") || upper.starts_with("PASS.") {
        return Some(LogicReply::Pass);
    }
    let after = upper.strip_prefix("FAIL")?;
    if !(after.is_empty() || after.starts_with([':', ' ', '.', '-'])) {
        return None;
    }
    let mut summary = first["FAIL".len()..]
        .trim_start_matches([':', '.', '-', ' '])
        .trim()
        .to_string();
    let more = trimmed[first_end..].trim();
    if !more.is_empty() {
        if !summary.is_empty() {
            summary.push(' ');
        }
        summary.push_str(&more.split_whitespace().collect::<Vec<_>>().join(" "));
    }
    if summary.is_empty() {
        summary = "Logic check failed without a summary".to_string();
    }
    Some(LogicReply::Fail(summary))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogicFilterError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Asks an independent checker model whether the reasoning holds together.
///
/// Replies that match neither `PASS` nor `FAIL` are re-requested; after
/// `attempts` such replies the call fails with [`ProviderError::Parse`],
/// which is distinct from a `FAIL` verdict.
pub async fn logic_filter(
    cot: &CotText,
    checker: &dyn ChatProvider,
    template: &str,
    attempts: u32,
) -> Result<FilterVerdict, LogicFilterError> {
    let rendered = render_cot(cot);
    let vars: HashMap<&str, &str> = [("cot", rendered.as_str())].into_iter().collect();
    let prompt = render_prompt(template, &vars)?;
    let request = ChatRequest::user(prompt);
    let attempts = attempts.max(1);
    let mut last = String::new();
    for _ in 0..attempts {
        let reply = checker.complete(&request).await?;
        match parse_logic_reply(&reply.text) {
            Some(LogicReply::Pass) => return Ok(FilterVerdict::pass(FilterStage::Logic)),
            Some(LogicReply::Fail(summary)) => {
                return Ok(FilterVerdict::from_messages(FilterStage::Logic, vec![summary]))
            }
            None => last = reply.text,
        }
    }
    Err(ProviderError::Parse {
        attempts,
        message: format!("no PASS/FAIL verdict in checker reply: {last:?}"),
    }
    .into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackContext {
    pub raw_cot: String,
    pub verdicts: Vec<FilterVerdict>,
    /// 1-based round that produced `raw_cot`.
    pub round_index: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeedbackError {
    #[error("every filter passed; there is nothing to feed back")]
    NoFailures,
    #[error("round index must be >= 1")]
    BadRound,
}

/// Re-annotation context: the previous output followed by one block per
/// failed stage, in Format, Decision, Logic order. Deterministic.
pub fn build_feedback(ctx: &FeedbackContext) -> Result<String, FeedbackError> {
    if ctx.round_index == 0 {
        return Err(FeedbackError::BadRound);
    }
    let mut failed: Vec<&FilterVerdict> = ctx.verdicts.iter().filter(|v| !v.passed).collect();
    if failed.is_empty() {
        return Err(FeedbackError::NoFailures);
    }
    failed.sort_by_key(|v| v.stage);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "Your previous annotation (round {}) was rejected by quality control.",
        ctx.round_index
    );
    out.push_str("\nPrevious annotation:\n");
    out.push_str(ctx.raw_cot.trim());
    out.push_str("\n\nError feedback:\n");
    let mut stage = None;
    let mut n = 0;
    for verdict in failed {
        if stage != Some(verdict.stage) {
            let _ = writeln!(out, "[{}]", verdict.stage.title());
            stage = Some(verdict.stage);
            n = 0;
        }
        for msg in &verdict.messages {
            n += 1;
            let _ = writeln!(out, "{n}.{msg}");
        }
    }
    out.push_str(
        "\nRevise the annotation so that every error above is fixed, keeping the four-part format.\n",
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_cot, ActionDecision};

    fn complete() -> CotText {
        CotText {
            scene_analysis: "s".into(),
            latent_risk: "r".into(),
            behavior_reasoning: "b".into(),
            action_decision: ActionDecision::new("Turn Left", "Stop"),
        }
    }

    #[test]
    fn format_passes_complete_cot() {
        let v = format_filter(&complete());
        assert!(v.passed);
        assert!(v.messages.is_empty());
    }

    #[test]
    fn format_names_missing_parts() {
        let mut cot = complete();
        cot.scene_analysis.clear();
        let v = format_filter(&cot);
        assert!(!v.passed);
        assert_eq!(v.messages, vec!["Missing Scene Analysis part"]);

        let v = format_filter(&parse_cot("1. Scene Analysis: x\n2. Latent Risk Assessment: y\n3. Behavior Reasoning: z"));
        assert_eq!(v.messages, vec!["Missing Action Decision part"]);
    }

    #[test]
    fn format_flags_unparseable_speed() {
        let mut cot = complete();
        cot.action_decision = ActionDecision::new("Turn Left", "");
        let v = format_filter(&cot);
        assert!(!v.passed);
        assert!(v.messages.iter().any(|m| m.contains("speed decision")));
        cot.action_decision = ActionDecision::new("Turn Left", "go a bit faster");
        let v = format_filter(&cot);
        assert_eq!(v.messages.len(), 1);
        assert!(v.messages[0].contains("speed decision"));
    }

    #[test]
    fn decision_messages_match_feedback_style() {
        let gt = MetaAction::new(Direction::ChangeLaneRight, Speed::SmoothDeceleration);
        let pred = MetaAction::new(Direction::TurnRight, Speed::MaintainCurrentSpeed);
        let v = decision_filter(Some(pred), gt);
        assert_eq!(
            v.messages,
            vec![
                "Direction decision error(GT: Change Lane Right; Prediction: Turn Right)",
                "Speed decision error(GT: Smooth Deceleration; Prediction: Maintain Current Speed)",
            ]
        );
        let none = decision_filter(None, gt);
        assert_eq!(none.messages.len(), 2);
        assert!(none.messages.iter().all(|m| m.ends_with("Prediction: None)")));
    }

    #[test]
    fn decision_filter_is_reflexive() {
        for a in MetaAction::all() {
            assert!(decision_filter(Some(a), a).passed);
        }
    }

    #[test]
    fn logic_reply_grammar() {
        assert_eq!(parse_logic_reply("PASS"), Some(LogicReply::Pass));
        assert_eq!(parse_logic_reply("  \n pass\nlooks fine"), Some(LogicReply::Pass));
        assert_eq!(
            parse_logic_reply("FAIL: reasoning is discontinuous"),
            Some(LogicReply::Fail("reasoning is discontinuous".into()))
        );
        assert_eq!(
            parse_logic_reply("fail - a\nb"),
            Some(LogicReply::Fail("a b".into()))
        );
        assert!(matches!(parse_logic_reply("FAIL"), Some(LogicReply::Fail(_))));
        assert_eq!(parse_logic_reply("The reasoning passes"), None);
        assert_eq!(parse_logic_reply("FAILURE"), None);
        assert_eq!(parse_logic_reply(""), None);
    }

    fn failing_ctx() -> FeedbackContext {
        FeedbackContext {
            raw_cot: "1. Scene Analysis: empty road".into(),
            verdicts: vec![
                FilterVerdict::from_messages(FilterStage::Logic, vec!["Reasoning is discontinuous".into()]),
                FilterVerdict::from_messages(
                    FilterStage::Decision,
                    vec!["Direction decision error(GT: Turn Left; Prediction: Turn Right)".into()],
                ),
                FilterVerdict::from_messages(FilterStage::Format, vec!["Missing Action Decision part".into()]),
            ],
            round_index: 1,
        }
    }

    #[test]
    fn feedback_orders_stages_and_embeds_messages_once() {
        let ctx = failing_ctx();
        let text = build_feedback(&ctx).unwrap();
        let f = text.find("[Format Error]").unwrap();
        let d = text.find("[Decision Error]").unwrap();
        let l = text.find("[Logic Error]").unwrap();
        assert!(f < d && d < l);
        assert!(text.contains("empty road"));
        for v in &ctx.verdicts {
            for m in &v.messages {
                assert_eq!(text.matches(m.as_str()).count(), 1, "{m}");
            }
        }
        assert_eq!(build_feedback(&ctx).unwrap(), text);
    }

    #[test]
    fn feedback_requires_a_failure() {
        let ctx = FeedbackContext {
            raw_cot: "x".into(),
            verdicts: vec![FilterVerdict::pass(FilterStage::Format)],
            round_index: 1,
        };
        assert_eq!(build_feedback(&ctx), Err(FeedbackError::NoFailures));
        let mut bad = failing_ctx();
        bad.round_index = 0;
        assert_eq!(build_feedback(&bad), Err(FeedbackError::BadRound));
    }
}
