//! Feedback-guided annotation: generate a rationale, run the three filters,
//! feed failures back to the annotator, and emit accepted training records.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::sync::Arc;

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::{
    build_feedback, decision_filter, format_filter, logic_filter, FeedbackContext, FilterStage,
    FilterVerdict, LogicFilterError, DEFAULT_LOGIC_ATTEMPTS,
};
use crate::gateway::{render_prompt, ChatProvider, ChatRequest, PromptError, PromptTemplates, ProviderError};
use crate::kinematics::{classify_action, KinematicsError, ThresholdSet};
use crate::model::jsonl::write_jsonl_record;
use crate::model::{
    assemble_sequence, parse_cot, AnnotationSample, CotText, MetaAction, SequenceError, TrainingSequence,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("input line {line}: {message}")]
    BadInput { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<LogicFilterError> for PipelineError {
    fn from(e: LogicFilterError) -> Self {
        match e {
            LogicFilterError::Provider(p) => PipelineError::Provider(p),
            LogicFilterError::Prompt(p) => PipelineError::Prompt(p),
        }
    }
}

fn default_max_rounds() -> u32 {
    3
}
fn default_concurrency() -> usize {
    4
}
fn default_true() -> bool {
    true
}
fn default_logic_attempts() -> u32 {
    DEFAULT_LOGIC_ATTEMPTS
}

/// Prompt template overrides; unset entries use the built-in text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatePaths {
    pub annotator: Option<PathBuf>,
    pub logic_check: Option<PathBuf>,
    pub reannotate: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
    /// Samples annotated concurrently.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Skip the decision and logic filters when the format filter fails.
    #[serde(default = "default_true")]
    pub short_circuit_format: bool,
    #[serde(default = "default_logic_attempts")]
    pub logic_attempts: u32,
    /// Count and skip malformed input lines instead of aborting.
    #[serde(default)]
    pub skip_bad: bool,
    #[serde(default)]
    pub threshold_file: Option<PathBuf>,
    #[serde(default)]
    pub templates: TemplatePaths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_rounds: default_max_rounds(),
            concurrency: default_concurrency(),
            short_circuit_format: true,
            logic_attempts: default_logic_attempts(),
            skip_bad: false,
            threshold_file: None,
            templates: TemplatePaths::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.max_rounds < 1 {
            return Err(PipelineError::Config("max_rounds must be >= 1".into()));
        }
        if self.concurrency < 1 {
            return Err(PipelineError::Config("concurrency must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Accepted,
    /// Quality failures in every round.
    Rejected,
    /// A provider failure ended the sample early; safe to retry.
    Errored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationOutcome {
    pub sample_id: String,
    pub status: OutcomeStatus,
    /// For `Errored`, the round that was in progress.
    pub rounds_used: u32,
    pub gt_action: Option<MetaAction>,
    pub final_cot: Option<CotText>,
    pub verdict_history: Vec<Vec<FilterVerdict>>,
    pub sequence: Option<TrainingSequence>,
    /// `sequence` in its delimited text form.
    pub sequence_text: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterFailureCounts {
    pub format: usize,
    pub decision: usize,
    pub logic: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub total: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub errored: usize,
    pub skipped_bad: usize,
    /// Failed verdicts summed over every round of every sample.
    pub filter_failures: FilterFailureCounts,
    /// Round in which accepted samples passed.
    pub accepted_by_round: BTreeMap<u32, usize>,
}

impl PipelineStats {
    pub fn record(&mut self, outcome: &AnnotationOutcome) {
        self.total += 1;
        match outcome.status {
            OutcomeStatus::Accepted => {
                self.accepted += 1;
                *self.accepted_by_round.entry(outcome.rounds_used).or_default() += 1;
            }
            OutcomeStatus::Rejected => self.rejected += 1,
            OutcomeStatus::Errored => self.errored += 1,
        }
        for v in outcome.verdict_history.iter().flatten().filter(|v| !v.passed) {
            match v.stage {
                FilterStage::Format => self.filter_failures.format += 1,
                FilterStage::Decision => self.filter_failures.decision += 1,
                FilterStage::Logic => self.filter_failures.logic += 1,
            }
        }
    }
}

/// Everything needed to annotate samples.
pub struct AnnotationPipeline {
    annotator: Arc<dyn ChatProvider>,
    checker: Arc<dyn ChatProvider>,
    thresholds: ThresholdSet,
    templates: PromptTemplates,
    cfg: PipelineConfig,
}

struct SampleRun {
    history: Vec<Vec<FilterVerdict>>,
    gt: MetaAction,
}

impl AnnotationPipeline {
    pub fn new(
        annotator: Arc<dyn ChatProvider>,
        checker: Arc<dyn ChatProvider>,
        thresholds: ThresholdSet,
        templates: PromptTemplates,
        cfg: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        cfg.validate()?;
        thresholds.validate()?;
        // Surface placeholder mistakes before any sample is sent.
        let probe: HashMap<&str, &str> = [
            ("camera_order", ""),
            ("history_count", ""),
            ("command", ""),
            ("velocity", ""),
            ("acceleration", ""),
            ("cot", ""),
            ("feedback", ""),
            ("task", ""),
        ]
        .into_iter()
        .collect();
        for tpl in [&templates.annotator, &templates.logic_check, &templates.reannotate] {
            render_prompt(tpl, &probe)?;
        }
        Ok(Self {
            annotator,
            checker,
            thresholds,
            templates,
            cfg,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn task_prompt(&self, sample: &AnnotationSample) -> Result<String, PromptError> {
        let camera_order = sample.image_refs.join(", ");
        let history_count = sample.history_refs.len().to_string();
        let velocity = format!("{:.2}", sample.ego.velocity);
        let acceleration = format!("{:.2}", sample.ego.acceleration);
        let vars: HashMap<&str, &str> = [
            ("camera_order", camera_order.as_str()),
            ("history_count", history_count.as_str()),
            ("command", sample.command.label()),
            ("velocity", velocity.as_str()),
            ("acceleration", acceleration.as_str()),
        ]
        .into_iter()
        .collect();
        render_prompt(&self.templates.annotator, &vars)
    }

    /// Runs the filters in Format, Decision, Logic order.
    pub async fn run_filters(
        &self,
        cot: &CotText,
        gt: MetaAction,
    ) -> Result<Vec<FilterVerdict>, LogicFilterError> {
        let format = format_filter(cot);
        if !format.passed && self.cfg.short_circuit_format {
            return Ok(vec![format]);
        }
        let decision = decision_filter(cot.action_decision.parsed, gt);
        let logic = logic_filter(
            cot,
            self.checker.as_ref(),
            &self.templates.logic_check,
            self.cfg.logic_attempts,
        )
        .await?;
        Ok(vec![format, decision, logic])
    }

    /// Annotates one sample; provider failures become an `Errored` outcome.
    pub async fn annotate_sample(&self, sample: &AnnotationSample) -> AnnotationOutcome {
        let mut run = SampleRun {
            history: Vec::new(),
            gt: MetaAction::new(
                crate::model::Direction::MaintainCurrentLane,
                crate::model::Speed::MaintainCurrentSpeed,
            ),
        };
        let mut outcome = match self.annotate_rounds(sample, &mut run).await {
            Ok(outcome) => outcome,
            Err(err) => {
                tracing::warn!(sample = %sample.sample_id, error = %err, "annotation errored");
                AnnotationOutcome {
                    sample_id: sample.sample_id.clone(),
                    status: OutcomeStatus::Errored,
                    rounds_used: (run.history.len() as u32 + 1).min(self.cfg.max_rounds),
                    gt_action: None,
                    final_cot: None,
                    verdict_history: std::mem::take(&mut run.history),
                    sequence: None,
                    sequence_text: None,
                    error: Some(err.to_string()),
                }
            }
        };
        if outcome.status == OutcomeStatus::Errored && !run.history.is_empty() {
            outcome.gt_action = Some(run.gt);
        }
        outcome
    }

    async fn annotate_rounds(
        &self,
        sample: &AnnotationSample,
        run: &mut SampleRun,
    ) -> Result<AnnotationOutcome, PipelineError> {
        run.gt = classify_action(&sample.gt_trajectory, &self.thresholds)?;
        let task = self.task_prompt(sample)?;
        let images: Vec<String> = sample
            .image_refs
            .iter()
            .chain(&sample.history_refs)
            .cloned()
            .collect();

        let mut feedback: Option<String> = None;
        let mut last_cot = None;
        for round in 1..=self.cfg.max_rounds {
            let prompt = match &feedback {
                None => task.clone(),
                Some(fb) => {
                    let vars: HashMap<&str, &str> =
                        [("feedback", fb.as_str()), ("task", task.as_str())].into_iter().collect();
                    render_prompt(&self.templates.reannotate, &vars)?
                }
            };
            let request = ChatRequest::user(prompt).with_images(images.iter().cloned());
            let raw = self.annotator.complete(&request).await?.text;
            let cot = parse_cot(&raw);
            let verdicts = self.run_filters(&cot, run.gt).await?;
            let all_passed = verdicts.iter().all(|v| v.passed);
            run.history.push(verdicts.clone());

            if all_passed {
                let text = assemble_sequence(&cot, &sample.gt_dream_tokens, &sample.gt_trajectory)?;
                return Ok(AnnotationOutcome {
                    sample_id: sample.sample_id.clone(),
                    status: OutcomeStatus::Accepted,
                    rounds_used: round,
                    gt_action: Some(run.gt),
                    sequence: Some(TrainingSequence {
                        cot: cot.clone(),
                        dream_tokens: sample.gt_dream_tokens.clone(),
                        trajectory: sample.gt_trajectory.clone(),
                    }),
                    final_cot: Some(cot),
                    verdict_history: std::mem::take(&mut run.history),
                    sequence_text: Some(text),
                    error: None,
                });
            }
            let ctx = FeedbackContext {
                raw_cot: raw,
                verdicts,
                round_index: round,
            };
            feedback = Some(build_feedback(&ctx).expect("a filter failed"));
            last_cot = Some(cot);
        }

        Ok(AnnotationOutcome {
            sample_id: sample.sample_id.clone(),
            status: OutcomeStatus::Rejected,
            rounds_used: self.cfg.max_rounds,
            gt_action: Some(run.gt),
            final_cot: last_cot,
            verdict_history: std::mem::take(&mut run.history),
            sequence: None,
            sequence_text: None,
            error: None,
        })
    }

    /// Annotates every sample of a JSONL stream, writing one outcome per line
    /// in input order. At most `concurrency` samples are in flight; finished
    /// outcomes wait in order until all earlier ones are written.
    pub async fn run<R: BufRead, W: Write>(
        &self,
        input: R,
        output: &mut W,
    ) -> Result<PipelineStats, PipelineError> {
        enum Item {
            Blank,
            Bad { line: usize, message: String },
            Io(io::Error),
            Done(Box<AnnotationOutcome>),
        }

        let mut stream = futures::stream::iter(input.lines().enumerate())
            .map(|(idx, line)| async move {
                let line_no = idx + 1;
                let line = match line {
                    Ok(l) => l,
                    Err(e) => return Item::Io(e),
                };
                if line.trim().is_empty() {
                    return Item::Blank;
                }
                let sample = match serde_json::from_str::<AnnotationSample>(&line) {
                    Ok(s) => s,
                    Err(e) => {
                        return Item::Bad {
                            line: line_no,
                            message: e.to_string(),
                        }
                    }
                };
                if let Err(e) = sample.validate() {
                    return Item::Bad {
                        line: line_no,
                        message: e.to_string(),
                    };
                }
                Item::Done(Box::new(self.annotate_sample(&sample).await))
            })
            .buffered(self.cfg.concurrency);

        let mut stats = PipelineStats::default();
        while let Some(item) = stream.next().await {
            match item {
                Item::Blank => {}
                Item::Io(e) => return Err(e.into()),
                Item::Bad { line, message } => {
                    if !self.cfg.skip_bad {
                        return Err(PipelineError::BadInput { line, message });
                    }
                    tracing::warn!(line, %message, "skipping malformed sample");
                    stats.skipped_bad += 1;
                }
                Item::Done(outcome) => {
                    stats.record(&outcome);
                    write_jsonl_record(output, &*outcome)?;
                }
            }
        }
        output.flush()?;
        Ok(stats)
    }
}
