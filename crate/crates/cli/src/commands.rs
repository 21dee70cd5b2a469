use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use drivecot_core::config::AppConfig;
use drivecot_core::eval::features::read_features;
use drivecot_core::eval::{
    build_report, frechet_distance, Convention, FidOptions, ObstacleFrames, SampleMetrics, Stp3Collision,
};
use drivecot_core::gateway::{ChatProvider, EndpointConfig, HttpChatClient, PromptTemplates};
use drivecot_core::kinematics::{classify_action, ThresholdAccumulator, ThresholdSet};
use drivecot_core::model::jsonl::{read_jsonl, write_jsonl_record};
use drivecot_core::model::{AnnotationSample, MetaAction, Trajectory, TrajectoryRecord};
use drivecot_core::pipeline::{AnnotationPipeline, PipelineError};
use drivecot_core::reward::{grpo_objective, recompute_reward, RolloutGroup};
use serde::Serialize;
use serde_json::Value;

use crate::failure::{Classify, Failure, Kind};
use crate::{init_logging, AnnotateArgs, ConventionArg, DeriveArgs, EvalArgs, FidArgs, GrpoArgs, ReportFormat};

type CmdResult = Result<(), Failure>;

fn load_config(path: Option<&Path>, log: Option<&str>) -> Result<AppConfig, Failure> {
    let cfg = match path {
        Some(p) => AppConfig::load(p).config()?,
        None => AppConfig::default(),
    };
    init_logging(log.or(Some(cfg.log_level.as_str())));
    Ok(cfg)
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("cannot open {}", path.display()))
        .data()
}

/// Writes to `path`, or stdout when absent.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p)
                .with_context(|| format!("cannot create {}", p.display()))
                .data()?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn finish(mut out: Box<dyn Write>) -> CmdResult {
    out.flush().context("writing output").data()
}

fn read_thresholds(path: &Path) -> Result<ThresholdSet, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read thresholds {}", path.display()))
        .config()?;
    let set: ThresholdSet = serde_json::from_str(&text)
        .with_context(|| format!("invalid thresholds {}", path.display()))
        .config()?;
    set.validate().config()?;
    Ok(set)
}

fn endpoint(cfg: &Option<EndpointConfig>, name: &str) -> Result<EndpointConfig, Failure> {
    cfg.clone()
        .ok_or_else(|| anyhow!("config has no [{name}] endpoint"))
        .config()
}

fn client(cfg: EndpointConfig, seed: Option<u64>) -> Result<Arc<dyn ChatProvider>, Failure> {
    let c = match seed {
        Some(s) => HttpChatClient::with_seed(cfg, s),
        None => HttpChatClient::new(cfg),
    };
    Ok(Arc::new(c.config()?))
}

pub fn annotate(args: AnnotateArgs, log: Option<&str>) -> CmdResult {
    let mut cfg = load_config(Some(&args.config), log)?;
    if let Some(n) = args.concurrency {
        cfg.pipeline.concurrency = n;
    }
    cfg.pipeline.skip_bad |= args.skip_bad;

    let thresholds = match &cfg.pipeline.threshold_file {
        Some(p) => read_thresholds(p)?,
        None => {
            tracing::info!("no threshold_file configured; fitting on the input trajectories");
            let mut acc = ThresholdAccumulator::new(cfg.thresholds);
            for line in open(&args.input)?.lines() {
                let line = line.context("reading input").data()?;
                // Malformed lines are reported by the pipeline pass.
                if let Ok(s) = serde_json::from_str::<AnnotationSample>(&line) {
                    acc.push(&s.gt_trajectory).data()?;
                }
            }
            acc.finish()
                .context("cannot fit action thresholds; set pipeline.threshold_file")
                .config()?
        }
    };
    let t = &cfg.pipeline.templates;
    let templates = PromptTemplates::load(t.annotator.as_deref(), t.logic_check.as_deref(), t.reannotate.as_deref())
        .context("reading prompt templates")
        .config()?;
    let annotator = client(endpoint(&cfg.annotator, "annotator")?, args.seed)?;
    let checker = client(endpoint(&cfg.checker, "checker")?, args.seed.map(|s| s.wrapping_add(1)))?;
    let pipeline = AnnotationPipeline::new(annotator, checker, thresholds, templates, cfg.pipeline.clone()).config()?;

    let input = open(&args.input)?;
    let mut output = BufWriter::new(
        File::create(&args.output)
            .with_context(|| format!("cannot create {}", args.output.display()))
            .data()?,
    );
    let runtime = tokio::runtime::Runtime::new().context("starting runtime").config()?;
    let stats = runtime
        .block_on(pipeline.run(input, &mut output))
        .map_err(|e| match e {
            PipelineError::Config(_) | PipelineError::Prompt(_) => Failure::new(Kind::Config, e),
            PipelineError::Provider(_) => Failure::new(Kind::Provider, e),
            other => Failure::new(Kind::Data, other),
        })?;
    println!(
        "{}",
        serde_json::to_string_pretty(&stats).expect("stats serialize")
    );
    if stats.errored > 0 {
        return Err(Failure::new(
            Kind::Provider,
            anyhow!("{} of {} sample(s) errored on provider failures", stats.errored, stats.total),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct ActionRecord<'a> {
    sample_id: &'a str,
    action: MetaAction,
}

/// Reads `(sample_id, trajectory)` pairs from either annotation samples or
/// trajectory records.
fn read_trajectories(path: &Path, skip_bad: bool) -> Result<Vec<(String, Trajectory)>, Failure> {
    let mut out = Vec::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line.context("reading input").data()?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Value>(&line).map_err(anyhow::Error::from).and_then(|v| {
            if v.get("gt_trajectory").is_some() {
                let s: AnnotationSample = serde_json::from_value(v)?;
                Ok((s.sample_id, s.gt_trajectory))
            } else {
                let r: TrajectoryRecord = serde_json::from_value(v)?;
                Ok((r.sample_id, r.trajectory))
            }
        });
        match parsed {
            Ok(p) => out.push(p),
            Err(e) if skip_bad => tracing::warn!(line = idx + 1, error = %e, "skipping malformed line"),
            Err(e) => return Err(Failure::new(Kind::Data, e.context(format!("{} line {}", path.display(), idx + 1)))),
        }
    }
    Ok(out)
}

pub fn derive_actions(args: DeriveArgs, log: Option<&str>) -> CmdResult {
    let cfg = load_config(args.config.as_deref(), log)?;
    let records = read_trajectories(&args.input, args.skip_bad)?;
    let thresholds = match &args.thresholds {
        Some(p) => read_thresholds(p)?,
        None => {
            let mut acc = ThresholdAccumulator::new(cfg.thresholds);
            for (id, t) in &records {
                acc.push(t).with_context(|| format!("sample {id}")).data()?;
            }
            acc.finish().data()?
        }
    };
    if let Some(p) = &args.fit_output {
        let text = serde_json::to_string_pretty(&thresholds).expect("thresholds serialize");
        fs::write(p, text + "\n")
            .with_context(|| format!("cannot write {}", p.display()))
            .data()?;
    }
    let mut out = sink(args.output.as_deref())?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (id, t) in &records {
        let action = classify_action(t, &thresholds)
            .with_context(|| format!("sample {id}"))
            .data()?;
        *counts.entry(action.to_string()).or_default() += 1;
        write_jsonl_record(&mut out, &ActionRecord { sample_id: id, action })
            .context("writing output")
            .data()?;
    }
    finish(out)?;
    tracing::info!(?counts, "labelled {} trajectories", records.len());
    Ok(())
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    read_jsonl(open(path)?)
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| path.display().to_string())
        .data()
}

pub fn eval_openloop(args: EvalArgs, log: Option<&str>) -> CmdResult {
    let cfg = load_config(args.config.as_deref(), log)?;
    let preds: Vec<TrajectoryRecord> = read_records(&args.pred)?;
    let gts: HashMap<String, Trajectory> = read_records::<TrajectoryRecord>(&args.gt)?
        .into_iter()
        .map(|r| (r.sample_id, r.trajectory))
        .collect();
    let obstacles: Option<HashMap<String, ObstacleFrames>> = match &args.obstacles {
        Some(p) => Some(
            read_records::<ObstacleFrames>(p)?
                .into_iter()
                .map(|f| (f.sample_id.clone(), f))
                .collect(),
        ),
        None => None,
    };

    let mut metrics = Vec::with_capacity(preds.len());
    for rec in &preds {
        let id = &rec.sample_id;
        let gt = gts
            .get(id)
            .ok_or_else(|| anyhow!("prediction {id} has no ground truth"))
            .data()?;
        let frames = match &obstacles {
            Some(map) => Some(
                map.get(id)
                    .ok_or_else(|| anyhow!("sample {id} has no obstacle frames"))
                    .data()?,
            ),
            None => None,
        };
        metrics.push(
            SampleMetrics::compute(id, &rec.trajectory, gt, frames, cfg.eval.ego)
                .with_context(|| format!("sample {id}"))
                .data()?,
        );
    }
    let conventions: &[Convention] = match args.convention {
        ConventionArg::Stp3 => &[Convention::Stp3],
        ConventionArg::Uniad => &[Convention::Uniad],
        ConventionArg::Both => &[Convention::Stp3, Convention::Uniad],
    };
    let stp3 = if args.averaged_collision {
        Stp3Collision::Averaged
    } else {
        cfg.eval.stp3_collision
    };
    let report = build_report(&metrics, conventions, stp3).data()?;
    let mut out = sink(args.output.as_deref())?;
    let text = match args.format {
        ReportFormat::Json => serde_json::to_string_pretty(&report).expect("report serialize") + "\n",
        ReportFormat::Csv => report.to_csv(),
    };
    out.write_all(text.as_bytes()).context("writing output").data()?;
    finish(out)
}

#[derive(Serialize)]
struct FidReport {
    fid: f64,
    dim: usize,
    n_a: usize,
    n_b: usize,
}

pub fn fid(args: FidArgs, log: Option<&str>) -> CmdResult {
    init_logging(log);
    let read = |p: &Path| {
        read_features(p)
            .with_context(|| p.display().to_string())
            .data()
    };
    let a = read(&args.features_a)?;
    let b = read(&args.features_b)?;
    let opts = FidOptions {
        diagonal_fallback: args.diagonal_fallback,
    };
    let fid = frechet_distance(&a, &b, opts).data()?;
    let report = FidReport {
        fid,
        dim: a.dim(),
        n_a: a.len(),
        n_b: b.len(),
    };
    let mut out = sink(args.output.as_deref())?;
    writeln!(out, "{}", serde_json::to_string(&report).expect("report serialize"))
        .context("writing output")
        .data()?;
    finish(out)
}

pub fn grpo_check(args: GrpoArgs, log: Option<&str>) -> CmdResult {
    let cfg = load_config(args.config.as_deref(), log)?;
    let groups: Vec<RolloutGroup> = read_records(&args.groups)?;
    let mut out = sink(args.output.as_deref())?;
    for group in &groups {
        for (i, r) in group.rollouts.iter().enumerate() {
            if let Some(expected) = recompute_reward(r, &cfg.rewards) {
                let expected = expected
                    .with_context(|| format!("group {} rollout {i}", group.query_id))
                    .data()?;
                if (expected - r.reward).abs() > 1e-9 {
                    return Err(Failure::new(
                        Kind::Data,
                        anyhow!(
                            "group {} rollout {i}: reward {} disagrees with its components ({expected})",
                            group.query_id,
                            r.reward
                        ),
                    ));
                }
            }
        }
        let report = grpo_objective(group, &cfg.rewards)
            .with_context(|| format!("group {}", group.query_id))
            .data()?;
        write_jsonl_record(&mut out, &report).context("writing output").data()?;
    }
    if groups.is_empty() {
        return Err(Failure::new(Kind::Data, anyhow!("no rollout groups in input")));
    }
    finish(out)
}
