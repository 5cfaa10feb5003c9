//! Evaluation harness: answer accuracy, temporal-grounding IoU, token-usage
//! comparison against the single-pass vanilla baseline, and trace rendering.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::ModelBackend;
use crate::config::PlannerConfig;
use crate::embed::ClipIndex;
use crate::interval::{intersection_length, merge_intervals, union_length, TimeInterval};
use crate::perception::{perceive, FrameProvider, PerceptionRequest, SampleMode};
use crate::planner::run_episode;
use crate::task::{match_answer, Task};
use crate::trajectory::{Block, Trajectory, TrajectoryError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Which answering pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Full planner episodes.
    Explorer,
    /// One coarse frame-capped perception pass over the whole video; the VLM
    /// answer is taken directly.
    Vanilla,
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalMode::Explorer => write!(f, "explorer"),
            EvalMode::Vanilla => write!(f, "vanilla"),
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "explorer" => Ok(EvalMode::Explorer),
            "vanilla" => Ok(EvalMode::Vanilla),
            other => Err(format!("unknown mode {other:?}; expected explorer or vanilla")),
        }
    }
}

/// Intersection-over-union of two interval sets, computed on their unions.
///
/// Empty prediction against non-empty gold scores 0; both empty is undefined
/// and reported as `None` (excluded from aggregates, never counted as zero).
pub fn union_iou(pred: &[TimeInterval], gold: &[TimeInterval]) -> Option<f64> {
    if pred.is_empty() && gold.is_empty() {
        return None;
    }
    if pred.is_empty() || gold.is_empty() {
        return Some(0.0);
    }
    let inter = intersection_length(pred, gold);
    let union = union_length(pred) + union_length(gold) - inter;
    Some(inter / union)
}

/// The intervals a trajectory grounded: every validated span from grounding
/// blocks, plus every perception interval queried after grounding began,
/// merged and deduplicated.
pub fn grounded_intervals(traj: &Trajectory) -> Vec<TimeInterval> {
    let first_ground = traj.blocks.iter().position(|b| matches!(b, Block::Grounding { .. }));
    let mut intervals = Vec::new();
    for (i, block) in traj.blocks.iter().enumerate() {
        match block {
            Block::Grounding { result } => {
                intervals.extend(result.spans.iter().map(|s| s.interval));
            }
            Block::Perception { interval, .. } if first_ground.is_some_and(|g| i > g) => {
                intervals.push(*interval);
            }
            _ => {}
        }
    }
    merge_intervals(&intervals)
}

/// Aggregate metrics for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub n_tasks: usize,
    pub n_answered: usize,
    pub n_skipped: usize,
    pub accuracy: f64,
    /// Mean IoU over tasks that carry gold intervals; absent when none do.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_iou: Option<f64>,
    /// IoU@0.1 rate over tasks that carry gold intervals.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou_at_01_rate: Option<f64>,
    pub total_visual_tokens: u64,
    pub total_text_tokens: u64,
    pub total_frames: u64,
    pub per_task: Vec<TaskOutcome>,
    pub config_echo: ConfigEcho,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

/// One row per task, sorted by task id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    pub visual_tokens: u64,
    pub turn_count: u32,
    pub aborted: bool,
}

/// Knobs echoed into every report so numbers are interpretable later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub tokens_per_frame: u64,
    pub top_k: usize,
    pub frame_cap: u32,
    pub max_turns: u32,
    pub fps: f64,
}

impl From<&PlannerConfig> for ConfigEcho {
    fn from(cfg: &PlannerConfig) -> Self {
        Self {
            tokens_per_frame: cfg.tokens_per_frame,
            top_k: cfg.top_k,
            frame_cap: cfg.frame_cap,
            max_turns: cfg.max_turns,
            fps: cfg.fps,
        }
    }
}

/// Run one vanilla-baseline "episode": a single coarse perception pass over
/// the whole video, its answer taken verbatim.
pub fn vanilla_episode(
    task: &Task,
    backend: &dyn ModelBackend,
    frames: &dyn FrameProvider,
    cfg: &PlannerConfig,
) -> Trajectory {
    let mut traj = Trajectory::new(task.id.clone(), backend.backend_id().to_string());
    let interval = match TimeInterval::new(0.0, task.video.duration_s) {
        Ok(iv) => iv,
        Err(e) => {
            traj.aborted = true;
            traj.abort_reason = Some(format!("empty video: {e}"));
            return traj;
        }
    };
    let req = PerceptionRequest {
        interval,
        mode: SampleMode::Coarse,
        question: task.question.clone(),
        frame_cap: cfg.frame_cap,
    };
    match perceive(
        &req,
        &task.video,
        backend,
        frames,
        cfg.fps,
        cfg.tokens_per_frame,
        &mut traj.token_ledger,
    ) {
        Ok(result) => {
            let answer = result.answer.clone();
            traj.blocks.push(Block::Perception {
                interval,
                mode: SampleMode::Coarse,
                question: task.question.clone(),
                result,
            });
            traj.blocks.push(Block::Answer { text: answer.clone(), forced: false });
            traj.final_answer = Some(answer);
        }
        Err(e) => {
            traj.aborted = true;
            traj.abort_reason = Some(format!("vanilla perception failed: {e}"));
        }
    }
    if let Some(answer) = &traj.final_answer {
        traj.correct = match_answer(task, answer);
    }
    traj
}

/// Evaluate a task set. Tasks run concurrently up to `parallel` workers;
/// the report and trajectories are assembled in task-id order so output is
/// independent of scheduling.
pub fn run_benchmark(
    tasks: &[Task],
    indexes: &BTreeMap<String, ClipIndex>,
    backend: &dyn ModelBackend,
    frames: &dyn FrameProvider,
    cfg: &PlannerConfig,
    mode: EvalMode,
    parallel: usize,
) -> Result<(EvalReport, Vec<Trajectory>), EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .expect("pool construction");

    enum Ran {
        Done(Box<Trajectory>),
        Skipped(String),
    }

    let mut outcomes: Vec<(String, Ran)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|task| {
                let ran = match mode {
                    EvalMode::Explorer => match indexes.get(&task.video.id) {
                        Some(index) => {
                            Ran::Done(Box::new(run_episode(task, index, backend, frames, cfg)))
                        }
                        None => Ran::Skipped(format!(
                            "task {}: no index for video {:?}",
                            task.id, task.video.id
                        )),
                    },
                    EvalMode::Vanilla => {
                        Ran::Done(Box::new(vanilla_episode(task, backend, frames, cfg)))
                    }
                };
                (task.id.clone(), ran)
            })
            .collect()
    });
    outcomes.sort_by(|a, b| a.0.cmp(&b.0));

    let tasks_by_id: BTreeMap<&str, &Task> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut report = EvalReport {
        mode,
        n_tasks: tasks.len(),
        n_answered: 0,
        n_skipped: 0,
        accuracy: 0.0,
        mean_iou: None,
        iou_at_01_rate: None,
        total_visual_tokens: 0,
        total_text_tokens: 0,
        total_frames: 0,
        per_task: Vec::with_capacity(tasks.len()),
        config_echo: ConfigEcho::from(cfg),
        errors: Vec::new(),
    };
    let mut trajectories = Vec::with_capacity(tasks.len());
    let mut n_correct = 0usize;
    let mut n_judged = 0usize;
    let mut iou_values = Vec::new();

    for (task_id, ran) in outcomes {
        let traj = match ran {
            Ran::Done(t) => *t,
            Ran::Skipped(why) => {
                report.n_skipped += 1;
                report.errors.push(why);
                continue;
            }
        };
        let task = tasks_by_id[task_id.as_str()];
        let iou = task
            .gold_intervals
            .as_ref()
            .and_then(|gold| union_iou(&grounded_intervals(&traj), gold));
        if let Some(v) = iou {
            iou_values.push(v);
        }
        if traj.final_answer.is_some() {
            report.n_answered += 1;
        }
        if let Some(correct) = traj.correct {
            n_judged += 1;
            if correct {
                n_correct += 1;
            }
        }
        report.total_visual_tokens += traj.token_ledger.visual_tokens;
        report.total_text_tokens += traj.token_ledger.text_tokens;
        report.total_frames += traj.token_ledger.frames_consumed;
        report.per_task.push(TaskOutcome {
            task_id,
            correct: traj.correct,
            iou,
            visual_tokens: traj.token_ledger.visual_tokens,
            turn_count: traj.turn_count,
            aborted: traj.aborted,
        });
        trajectories.push(traj);
    }
    if n_judged > 0 {
        report.accuracy = n_correct as f64 / n_judged as f64;
    }
    if !iou_values.is_empty() {
        report.mean_iou = Some(iou_values.iter().sum::<f64>() / iou_values.len() as f64);
        report.iou_at_01_rate =
            Some(iou_values.iter().filter(|&&v| v >= 0.1).count() as f64 / iou_values.len() as f64);
    }
    Ok((report, trajectories))
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Render a stored trajectory as a stable human-readable transcript.
pub fn trace_dump(path: &Path) -> Result<String, EvalError> {
    let traj = Trajectory::read_json(path)?;
    Ok(render_trace(&traj))
}

pub fn render_trace(traj: &Trajectory) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "trajectory {} | backend {} | turns {} | blocks {}\n",
        traj.task_id,
        traj.backend_id,
        traj.turn_count,
        traj.blocks.len()
    ));
    out.push_str(&format!(
        "tokens: visual {} (frames {}), text {}\n",
        traj.token_ledger.visual_tokens,
        traj.token_ledger.frames_consumed,
        traj.token_ledger.text_tokens
    ));
    if traj.forced {
        out.push_str("warning: answer was forced at the turn limit\n");
    }
    if traj.aborted {
        out.push_str(&format!(
            "warning: episode aborted: {}\n",
            traj.abort_reason.as_deref().unwrap_or("unknown")
        ));
    }
    for (i, block) in traj.blocks.iter().enumerate() {
        out.push_str(&format!("--- block {} [{}] ---\n", i + 1, block.kind()));
        match block {
            Block::Thinking { text } => out.push_str(&format!("{text}\n")),
            Block::Grounding { result } => {
                out.push_str(&format!("query: {}\n", result.query.text));
                if result.spans.is_empty() {
                    out.push_str("spans: none\n");
                }
                for span in &result.spans {
                    out.push_str(&format!("span {}: {}\n", span.interval, span.summary));
                }
                out.push_str(&format!(
                    "examined {} candidates, validated {}, rejected {}\n",
                    result.candidates_examined, result.validated_count, result.rejected_count
                ));
            }
            Block::Perception { interval, mode, question, result } => {
                out.push_str(&format!("interval {interval} mode {mode}\n"));
                out.push_str(&format!("q: {question}\n"));
                out.push_str(&format!("a: {} ({} frames)\n", result.answer, result.frames_used));
            }
            Block::Answer { text, forced } => {
                let mark = if *forced { " (forced)" } else { "" };
                out.push_str(&format!("answer{mark}: {text}\n"));
            }
        }
    }
    if let Some(answer) = &traj.final_answer {
        let verdict = match traj.correct {
            Some(true) => " [correct]",
            Some(false) => " [incorrect]",
            None => "",
        };
        out.push_str(&format!("final: {answer}{verdict}\n"));
    }
    out
}
