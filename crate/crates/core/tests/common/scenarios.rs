//! Stub-endpoint scenarios for the annotation pipeline.
//!
//! Sample ids encode behavior: `good-*` answers correctly at once, `fix-*`
//! gets the decision wrong until it sees feedback, `bad-*` never produces a
//! parseable rationale.

use std::sync::Arc;
use std::time::Duration;

use drivecot_core::gateway::{EndpointConfig, HttpChatClient, PromptTemplates};
use drivecot_core::kinematics::{ThresholdConfig, ThresholdSet};
use drivecot_core::model::jsonl::write_jsonl;
use drivecot_core::model::{AnnotationSample, DrivingCommand, EgoStatus, Trajectory};
use drivecot_core::pipeline::{AnnotationPipeline, PipelineConfig, PipelineStats};
use drivecot_stub::{user_text, Reply, StubServer};
use serde_json::Value;

pub fn thresholds() -> ThresholdSet {
    ThresholdSet::from_bands((0.3, 0.8), (0.3, 0.9), ThresholdConfig::default())
}

/// Straight at 5 m/s: Maintain Current Lane / Maintain Current Speed.
pub fn sample(id: &str) -> AnnotationSample {
    AnnotationSample {
        sample_id: id.to_string(),
        image_refs: ["FRONT", "FRONT_RIGHT", "FRONT_LEFT", "BACK", "BACK_LEFT", "BACK_RIGHT"]
            .iter()
            .map(|c| format!("{id}/CAM_{c}.jpg"))
            .collect(),
        history_refs: vec![format!("{id}/prev_1.jpg"), format!("{id}/prev_0.jpg")],
        command: DrivingCommand::GoStraight,
        ego: EgoStatus::new(5.0, 0.0).unwrap(),
        gt_trajectory: Trajectory::from_xy((1..=6).map(|k| (2.5 * k as f64, 0.0))).unwrap(),
        gt_dream_tokens: vec![11, 42, 7],
    }
}

pub fn samples_jsonl(ids: &[String]) -> Vec<u8> {
    let samples: Vec<AnnotationSample> = ids.iter().map(|id| sample(id)).collect();
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &samples).unwrap();
    buf
}

pub fn rationale(id: &str, direction: &str, speed: &str) -> String {
    format!(
        "1. Scene Analysis: Sample {id}. Open straight road, light traffic.\n\
         2. Latent Risk Assessment: A parked car on the right could pull out.\n\
         3. Behavior Reasoning: The lane ahead is clear, so keep lane and pace.\n\
         4. Action Decision: Direction: {direction}; Speed: {speed}"
    )
}

fn sample_id(prompt: &str) -> Option<String> {
    let end = prompt.find("/CAM_FRONT.jpg")?;
    let start = prompt[..end].rfind(|c: char| c.is_whitespace() || c == ',').map_or(0, |i| i + 1);
    Some(prompt[start..end].to_string())
}

pub fn annotator_reply(body: &Value) -> Reply {
    let prompt = user_text(body);
    let Some(id) = sample_id(&prompt) else {
        return Reply::Status(400, "no sample id in prompt".into());
    };
    let after_feedback = prompt.contains("Error feedback:");
    let correct = rationale(&id, "Maintain Current Lane", "Maintain Current Speed");
    if id.starts_with("good") {
        Reply::Text(correct)
    } else if id.starts_with("fix") {
        if after_feedback {
            Reply::Text(correct)
        } else {
            Reply::Text(rationale(&id, "Turn Right", "Maintain Current Speed"))
        }
    } else {
        Reply::text("Sorry, the images did not load.")
    }
}

pub fn checker_reply(_: &Value) -> Reply {
    Reply::text("PASS\nThe reasoning is consistent.")
}

pub fn endpoint(stub: &StubServer, model: &str) -> EndpointConfig {
    let mut cfg = EndpointConfig::new(stub.base_url(), model);
    cfg.backoff_base_secs = 0.001;
    cfg.max_retries = 2;
    cfg.timeout_secs = 10.0;
    cfg
}

pub struct Run {
    pub output: Vec<u8>,
    pub stats: PipelineStats,
    pub annotator_requests: Vec<Value>,
    pub annotator_peak: usize,
}

/// Runs the pipeline over `ids` against fresh stub endpoints.
pub async fn run(ids: &[String], concurrency: usize, delay: Duration) -> Run {
    let annotator = StubServer::start_with_delay(annotator_reply, delay).await.unwrap();
    let checker = StubServer::start(checker_reply).await.unwrap();
    let cfg = PipelineConfig {
        concurrency,
        ..Default::default()
    };
    let pipeline = AnnotationPipeline::new(
        Arc::new(HttpChatClient::with_seed(endpoint(&annotator, "annotator"), 1).unwrap()),
        Arc::new(HttpChatClient::with_seed(endpoint(&checker, "checker"), 2).unwrap()),
        thresholds(),
        PromptTemplates::default(),
        cfg,
    )
    .unwrap();
    let input = samples_jsonl(ids);
    let mut output = Vec::new();
    let stats = pipeline.run(input.as_slice(), &mut output).await.unwrap();
    Run {
        output,
        stats,
        annotator_requests: annotator.requests(),
        annotator_peak: annotator.peak_in_flight(),
    }
}

/// Mixed ids in a fixed order.
pub fn mixed_ids(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match i % 3 {
            0 => format!("good-{i}"),
            1 => format!("fix-{i}"),
            _ => format!("bad-{i}"),
        })
        .collect()
}
