use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{parse_cot, render_cot, CotText, Point, Trajectory, DEFAULT_DT, HORIZON_POINTS};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const DREAM_OPEN: &str = "<dream>";
pub const DREAM_CLOSE: &str = "</dream>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("reasoning text is incomplete")]
    IncompleteCot,
    #[error("answer trajectory must have {HORIZON_POINTS} points at dt={DEFAULT_DT}: {0}")]
    BadTrajectory(String),
    #[error("malformed delimiters: {0}")]
    MalformedDelimiters(String),
    #[error("visual token {0:?} is not a non-negative integer")]
    BadDreamToken(String),
    #[error("missing <{0}> span")]
    MissingSpan(&'static str),
}

/// `<think>` reasoning, `<dream>` visual tokens and `<answer>` trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSequence {
    pub cot: CotText,
    /// Empty only for text-only ablation records.
    #[serde(default)]
    pub dream_tokens: Vec<u32>,
    pub trajectory: Trajectory,
}

impl TrainingSequence {
    pub fn to_text(&self) -> Result<String, SequenceError> {
        assemble_sequence(&self.cot, &self.dream_tokens, &self.trajectory)
    }
}

fn render_answer(traj: &Trajectory) -> String {
    let mut out = String::from("[");
    for (i, p) in traj.points().iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "({:.2},{:.2})", p.x, p.y);
    }
    out.push(']');
    out
}

/// Serializes one training record with the three delimited spans.
pub fn assemble_sequence(
    cot: &CotText,
    dream_tokens: &[u32],
    traj: &Trajectory,
) -> Result<String, SequenceError> {
    if !cot.is_complete() {
        return Err(SequenceError::IncompleteCot);
    }
    if traj.len() != HORIZON_POINTS {
        return Err(SequenceError::BadTrajectory(format!(
            "got {} points",
            traj.len()
        )));
    }
    if traj.dt() != DEFAULT_DT {
        return Err(SequenceError::BadTrajectory(format!("got dt={}", traj.dt())));
    }
    let dream = dream_tokens
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(" ");
    Ok(format!(
        "{THINK_OPEN}\n{}\n{THINK_CLOSE}{DREAM_OPEN}{dream}{DREAM_CLOSE}{ANSWER_OPEN}{}{ANSWER_CLOSE}",
        render_cot(cot),
        render_answer(traj)
    ))
}

/// Which delimited spans were present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpanFlags {
    pub think: bool,
    pub dream: bool,
    pub answer: bool,
}

/// Coordinate pairs recovered from an `<answer>` span.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnswerPoints {
    pub points: Vec<Point>,
    /// Parenthesized groups that were not two finite numbers.
    pub malformed: usize,
}

impl AnswerPoints {
    pub fn is_well_formed_horizon(&self) -> bool {
        self.malformed == 0 && self.points.len() == HORIZON_POINTS
    }
}

static PAIR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([^()]*)\)").expect("pair regex"));

fn parse_coord(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Extracts every `(x, y)` group; whitespace around numbers is tolerated.
pub fn parse_answer_points(span: &str) -> AnswerPoints {
    let mut out = AnswerPoints::default();
    for caps in PAIR.captures_iter(span) {
        let mut parts = caps[1].split(',');
        let pair = match (parts.next(), parts.next(), parts.next()) {
            (Some(x), Some(y), None) => parse_coord(x).zip(parse_coord(y)),
            _ => None,
        };
        match pair {
            Some((x, y)) => out.points.push(Point::new(x, y)),
            None => out.malformed += 1,
        }
    }
    out
}

/// Result of splitting a model output into its spans.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSequence {
    pub spans: SpanFlags,
    pub think_text: Option<String>,
    pub answer_text: Option<String>,
    pub cot: CotText,
    pub dream_tokens: Vec<u32>,
    pub answer: AnswerPoints,
}

impl ParsedSequence {
    /// Trajectory from the answer span, if any point parsed.
    pub fn trajectory(&self) -> Option<Trajectory> {
        Trajectory::new(self.answer.points.clone(), DEFAULT_DT).ok()
    }

    pub fn into_sequence(self) -> Result<TrainingSequence, SequenceError> {
        if !self.spans.think {
            return Err(SequenceError::MissingSpan("think"));
        }
        if !self.spans.answer {
            return Err(SequenceError::MissingSpan("answer"));
        }
        if !self.answer.is_well_formed_horizon() {
            return Err(SequenceError::BadTrajectory(format!(
                "parsed {} points, {} malformed",
                self.answer.points.len(),
                self.answer.malformed
            )));
        }
        let trajectory = Trajectory::new(self.answer.points, DEFAULT_DT)
            .map_err(|e| SequenceError::BadTrajectory(e.to_string()))?;
        Ok(TrainingSequence {
            cot: self.cot,
            dream_tokens: self.dream_tokens,
            trajectory,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Span {
    Think,
    Dream,
    Answer,
}

impl Span {
    fn name(self) -> &'static str {
        match self {
            Span::Think => "think",
            Span::Dream => "dream",
            Span::Answer => "answer",
        }
    }
}

static TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"<(/?)(think|dream|answer)>").expect("tag regex"));

/// Splits text into `<think>`, `<dream>` and `<answer>` spans.
///
/// Each span may appear at most once, in that order, without nesting. Absent
/// spans are reported through [`SpanFlags`]; text outside spans is ignored.
pub fn parse_sequence(text: &str) -> Result<ParsedSequence, SequenceError> {
    let mut bodies: [Option<&str>; 3] = [None; 3];
    let mut open: Option<(Span, usize)> = None;
    let mut last: Option<Span> = None;

    for caps in TAG.captures_iter(text) {
        let whole = caps.get(0).expect("match");
        let span = match &caps[2] {
            "think" => Span::Think,
            "dream" => Span::Dream,
            _ => Span::Answer,
        };
        let closing = !caps[1].is_empty();
        match (closing, open) {
            (false, Some((outer, _))) => {
                return Err(SequenceError::MalformedDelimiters(format!(
                    "<{}> nested inside <{}>",
                    span.name(),
                    outer.name()
                )))
            }
            (false, None) => {
                if bodies[span as usize].is_some() {
                    return Err(SequenceError::MalformedDelimiters(format!(
                        "duplicate <{}>",
                        span.name()
                    )));
                }
                if let Some(prev) = last {
                    if span as usize <= prev as usize {
                        return Err(SequenceError::MalformedDelimiters(format!(
                            "<{}> after <{}>",
                            span.name(),
                            prev.name()
                        )));
                    }
                }
                open = Some((span, whole.end()));
            }
            (true, Some((current, start))) if current == span => {
                bodies[span as usize] = Some(&text[start..whole.start()]);
                last = Some(span);
                open = None;
            }
            (true, _) => {
                return Err(SequenceError::MalformedDelimiters(format!(
                    "unexpected </{}>",
                    span.name()
                )))
            }
        }
    }
    if let Some((span, _)) = open {
        return Err(SequenceError::MalformedDelimiters(format!(
            "<{}> is never closed",
            span.name()
        )));
    }

    let [think, dream, answer] = bodies;
    let dream_tokens = dream
        .unwrap_or_default()
        .split_whitespace()
        .map(|tok| {
            tok.parse::<u32>()
                .map_err(|_| SequenceError::BadDreamToken(tok.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(ParsedSequence {
        spans: SpanFlags {
            think: think.is_some(),
            dream: dream.is_some(),
            answer: answer.is_some(),
        },
        think_text: think.map(|t| t.trim().to_string()),
        answer_text: answer.map(|a| a.trim().to_string()),
        cot: think.map(parse_cot).unwrap_or_default(),
        dream_tokens,
        answer: answer.map(parse_answer_points).unwrap_or_default(),
    })
}
