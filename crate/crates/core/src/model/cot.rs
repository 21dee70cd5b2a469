use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{normalize_phrase, Direction, MetaAction, Speed};

/// The decision section of a reasoning text.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionDecision {
    pub direction_text: String,
    pub speed_text: String,
    /// Present iff both phrases name vocabulary members.
    pub parsed: Option<MetaAction>,
}

impl ActionDecision {
    pub fn new(direction_text: impl Into<String>, speed_text: impl Into<String>) -> Self {
        let direction_text = direction_text.into();
        let speed_text = speed_text.into();
        let parsed = match (
            Direction::from_phrase(&direction_text),
            Speed::from_phrase(&speed_text),
        ) {
            (Some(d), Some(s)) => Some(MetaAction::new(d, s)),
            _ => None,
        };
        Self {
            direction_text,
            speed_text,
            parsed,
        }
    }

    pub fn from_action(action: MetaAction) -> Self {
        Self::new(action.direction.label(), action.speed.label())
    }

    pub fn is_empty(&self) -> bool {
        self.direction_text.is_empty() && self.speed_text.is_empty()
    }
}

/// Four-section structured driving rationale.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CotText {
    pub scene_analysis: String,
    pub latent_risk: String,
    pub behavior_reasoning: String,
    pub action_decision: ActionDecision,
}

impl CotText {
    pub fn is_complete(&self) -> bool {
        !self.scene_analysis.is_empty()
            && !self.latent_risk.is_empty()
            && !self.behavior_reasoning.is_empty()
            && !self.action_decision.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Scene,
    Risk,
    Behavior,
    Decision,
}

static HEADER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^[ \t]*(?:#{1,6}[ \t]*)?(?:[*_]{1,2}[ \t]*)?(?:\(?\d+[.)][ \t]*)?(?:[*_]{1,2}[ \t]*)?(?P<name>scene[ \t]+analysis|latent[ \t]+risk(?:[ \t]+assessment)?|behaviou?r[ \t]+reasoning|action[ \t]+decision)(?:[ \t]+part)?[ \t]*(?:[*_]{1,2}[ \t]*)?(?P<colon>[:：])?[ \t]*(?:[*_]{1,2})?[ \t]*",
    )
    .expect("header regex")
});

static DIRECTION_LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\bdirection(?:[ \t]+(?:decision|change))?[ \t]*[*_]*[ \t]*[:：]").expect("direction regex")
});

static SPEED_LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\bspeed(?:[ \t]+(?:decision|change|adjustment))?[ \t]*[*_]*[ \t]*[:：]").expect("speed regex")
});

fn classify_header(name: &str) -> Section {
    let lower = name.to_ascii_lowercase();
    if lower.starts_with("scene") {
        Section::Scene
    } else if lower.starts_with("latent") {
        Section::Risk
    } else if lower.starts_with("behav") {
        Section::Behavior
    } else {
        Section::Decision
    }
}

/// Matches a section header at the start of `line`; returns the section and
/// the byte offset where inline content begins.
fn match_header(line: &str) -> Option<(Section, usize)> {
    let caps = HEADER.captures(line)?;
    let whole = caps.get(0)?;
    let rest = &line[whole.end()..];
    // Without a colon the header must stand alone on its line, so prose such
    // as "Scene analysis shows ..." is not mistaken for a header.
    if caps.name("colon").is_none() && !rest.trim_matches(|c: char| c == '*' || c == '_' || c.is_whitespace()).is_empty() {
        return None;
    }
    Some((classify_header(&caps["name"]), whole.end()))
}

fn trim_phrase(text: &str) -> &str {
    text.trim_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '_' | '.' | ',' | ';' | ':' | '-' | '"' | '\'' | '`' | '(' | ')' | '[' | ']'))
}

/// Value following a label, up to the next line break or `;`, or the start of
/// `stop_at` if that comes first.
fn labeled_value(text: &str, start: usize, stop_at: Option<usize>) -> &str {
    let tail = &text[start..];
    let mut end = tail.find(['\n', ';']).unwrap_or(tail.len());
    if let Some(stop) = stop_at {
        if stop > start {
            end = end.min(stop - start);
        }
    }
    trim_phrase(&tail[..end])
}

fn find_vocab<T: Copy>(haystack: &str, items: &[T], label: impl Fn(T) -> &'static str) -> Option<T> {
    let padded = format!(" {haystack} ");
    items
        .iter()
        .copied()
        .filter_map(|item| {
            let needle = format!(" {} ", normalize_phrase(label(item)));
            padded.find(&needle).map(|pos| (pos, item))
        })
        .min_by_key(|(pos, _)| *pos)
        .map(|(_, item)| item)
}

fn parse_decision(content: &str) -> ActionDecision {
    let content = content.trim();
    if content.is_empty() {
        return ActionDecision::default();
    }

    let dir_label = DIRECTION_LABEL.find(content);
    let speed_label = SPEED_LABEL.find(content);
    if dir_label.is_some() || speed_label.is_some() {
        let direction = dir_label
            .map(|m| labeled_value(content, m.end(), speed_label.map(|s| s.start())))
            .unwrap_or_default();
        let speed = speed_label
            .map(|m| labeled_value(content, m.end(), dir_label.map(|d| d.start())))
            .unwrap_or_default();
        return ActionDecision::new(direction, speed);
    }

    // Unlabeled forms such as "Turn Left / Smooth Deceleration".
    let first_line = content.lines().next().unwrap_or_default();
    let split = first_line
        .split_once(['/', ';', ',', '|'])
        .or_else(|| content.split_once('\n'))
        .or_else(|| first_line.split_once(" and "));
    let decision = match split {
        Some((a, b)) => ActionDecision::new(trim_phrase(a), trim_phrase(b.lines().next().unwrap_or_default())),
        None => ActionDecision::new(trim_phrase(content), ""),
    };
    if decision.parsed.is_some() {
        return decision;
    }

    // Fall back to locating vocabulary phrases anywhere in the section.
    let norm = normalize_phrase(content);
    let direction = find_vocab(&norm, &Direction::ALL, Direction::label);
    let speed = find_vocab(&norm, &Speed::ALL, Speed::label);
    match (direction, speed) {
        (Some(d), Some(s)) => ActionDecision::from_action(MetaAction::new(d, s)),
        _ => decision,
    }
}

/// Splits raw annotator output into its four sections.
///
/// Never fails: sections that cannot be located come back empty. When a
/// header repeats, the first occurrence wins.
pub fn parse_cot(text: &str) -> CotText {
    let mut bodies: [Option<String>; 4] = Default::default();
    let mut current: Option<(Section, String)> = None;

    let flush = |current: &mut Option<(Section, String)>, bodies: &mut [Option<String>; 4]| {
        if let Some((section, body)) = current.take() {
            let slot = &mut bodies[section as usize];
            if slot.is_none() {
                *slot = Some(body.trim().to_string());
            }
        }
    };

    for line in text.lines() {
        if let Some((section, offset)) = match_header(line) {
            flush(&mut current, &mut bodies);
            current = Some((section, line[offset..].to_string()));
        } else if let Some((_, body)) = current.as_mut() {
            body.push('\n');
            body.push_str(line);
        }
    }
    flush(&mut current, &mut bodies);

    let [scene, risk, behavior, decision] = bodies;
    CotText {
        scene_analysis: scene.unwrap_or_default(),
        latent_risk: risk.unwrap_or_default(),
        behavior_reasoning: behavior.unwrap_or_default(),
        action_decision: parse_decision(decision.as_deref().unwrap_or_default()),
    }
}

/// Canonical text form; `parse_cot(&render_cot(c)) == c` for section texts
/// that contain no headers of their own.
pub fn render_cot(cot: &CotText) -> String {
    let decision = &cot.action_decision;
    let decision_line = if decision.is_empty() {
        String::new()
    } else {
        format!(
            " Direction: {}; Speed: {}",
            decision.direction_text, decision.speed_text
        )
    };
    format!(
        "1. Scene Analysis: {}\n2. Latent Risk Assessment: {}\n3. Behavior Reasoning: {}\n4. Action Decision:{}",
        cot.scene_analysis, cot.latent_risk, cot.behavior_reasoning, decision_line
    )
}
