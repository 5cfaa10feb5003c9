//! The central reasoning loop: render the transcript, ask the LLM for the
//! next cognitive block, dispatch it to the grounder or perception, and stop
//! on an answer or at the turn limit.
//!
//! One completion yields one action. Untagged prose before the first tag
//! becomes an implicit thinking block, so a turn can add up to two blocks;
//! `turn_count` counts LLM calls, not blocks.

use thiserror::Error;

use crate::backends::ModelBackend;
use crate::config::PlannerConfig;
use crate::embed::{ClipIndex, GroundingQuery, ImageRef};
use crate::grounder::ground;
use crate::interval::{clamp_interval, TimeInterval};
use crate::perception::{perceive, FrameProvider, PerceptionRequest, PerceptionResult, SampleMode};
use crate::task::{match_answer, Task};
use crate::trajectory::{approx_text_tokens, Block, Trajectory};

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("no recognizable action tag in model output")]
    NoTag,
    #[error("unterminated <{tag}> block")]
    Unterminated { tag: &'static str },
    #[error("malformed search payload: {0}")]
    BadSearchJson(String),
    #[error("search text must be non-empty")]
    EmptySearchText,
    #[error("bad perceive attributes: {0}")]
    BadPerceiveAttrs(String),
    #[error("bad perceive interval: start={start}, end={end}")]
    BadPerceiveInterval { start: f64, end: f64 },
}

/// The action requested by one model completion.
#[derive(Debug, Clone, PartialEq)]
pub enum PlannerAction {
    Think(String),
    Ground { text: String, image_ts: Option<f64> },
    Perceive { interval: TimeInterval, mode: SampleMode, question: String },
    Answer(String),
}

/// A parsed completion: optional untagged prose folded into a thinking
/// prefix, plus the first recognized action.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedBlock {
    pub thinking_prefix: Option<String>,
    pub action: PlannerAction,
}

#[derive(serde::Deserialize)]
struct SearchPayload {
    text: String,
    #[serde(default)]
    image_ts: Option<f64>,
}

/// Parse one model completion against the block grammar. The first
/// recognized tagged region wins; prose before it becomes a thinking prefix.
pub fn parse_block(model_text: &str) -> Result<ParsedBlock, ParseError> {
    const OPENERS: [(&str, &str); 4] =
        [("think", "<think>"), ("search", "<search>"), ("perceive", "<perceive"), ("answer", "<answer>")];
    let first = OPENERS
        .iter()
        .filter_map(|(name, open)| model_text.find(open).map(|pos| (pos, *name, *open)))
        .min_by_key(|(pos, _, _)| *pos);
    let Some((pos, name, open)) = first else {
        return Err(ParseError::NoTag);
    };

    let prefix = model_text[..pos].trim();
    let thinking_prefix = if prefix.is_empty() { None } else { Some(prefix.to_string()) };

    let rest = &model_text[pos + open.len()..];
    let action = match name {
        "think" => {
            let body = close_of(rest, "</think>", "think")?;
            PlannerAction::Think(body.trim().to_string())
        }
        "search" => {
            let body = close_of(rest, "</search>", "search")?;
            let payload: SearchPayload = serde_json::from_str(body.trim())
                .map_err(|e| ParseError::BadSearchJson(e.to_string()))?;
            if payload.text.trim().is_empty() {
                return Err(ParseError::EmptySearchText);
            }
            PlannerAction::Ground { text: payload.text, image_ts: payload.image_ts }
        }
        "perceive" => {
            let attr_end = rest.find('>').ok_or(ParseError::Unterminated { tag: "perceive" })?;
            let (start, end, mode) = parse_perceive_attrs(&rest[..attr_end])?;
            let body = close_of(&rest[attr_end + 1..], "</perceive>", "perceive")?;
            if end <= start || end.is_nan() || start.is_nan() {
                return Err(ParseError::BadPerceiveInterval { start, end });
            }
            let interval = TimeInterval::new(start, end)
                .map_err(|_| ParseError::BadPerceiveInterval { start, end })?;
            PlannerAction::Perceive { interval, mode, question: body.trim().to_string() }
        }
        "answer" => {
            let body = close_of(rest, "</answer>", "answer")?;
            PlannerAction::Answer(body.trim().to_string())
        }
        _ => unreachable!(),
    };
    Ok(ParsedBlock { thinking_prefix, action })
}

fn close_of<'t>(rest: &'t str, close: &str, tag: &'static str) -> Result<&'t str, ParseError> {
    rest.find(close).map(|end| &rest[..end]).ok_or(ParseError::Unterminated { tag })
}

fn parse_perceive_attrs(attrs: &str) -> Result<(f64, f64, SampleMode), ParseError> {
    let mut start = None;
    let mut end = None;
    let mut mode = None;
    for token in attrs.split_whitespace() {
        let Some((key, value)) = token.split_once('=') else {
            return Err(ParseError::BadPerceiveAttrs(format!("expected key=value, got {token:?}")));
        };
        let value = value.trim_matches('"');
        match key {
            "start" => {
                start = Some(value.parse::<f64>().map_err(|_| {
                    ParseError::BadPerceiveAttrs(format!("start is not a number: {value:?}"))
                })?)
            }
            "end" => {
                end = Some(value.parse::<f64>().map_err(|_| {
                    ParseError::BadPerceiveAttrs(format!("end is not a number: {value:?}"))
                })?)
            }
            "mode" => {
                mode = Some(value.parse::<SampleMode>().map_err(ParseError::BadPerceiveAttrs)?)
            }
            other => {
                return Err(ParseError::BadPerceiveAttrs(format!("unknown attribute {other:?}")))
            }
        }
    }
    match (start, end, mode) {
        (Some(s), Some(e), Some(m)) => Ok((s, e, m)),
        _ => Err(ParseError::BadPerceiveAttrs("start, end, and mode are all required".into())),
    }
}

/// Deterministically render the planner prompt: system instructions, the
/// task, then each prior block as one compact transcript line.
pub fn render_context(task: &Task, blocks_so_far: &[Block], cfg: &PlannerConfig) -> String {
    let mut out = String::new();
    out.push_str(&cfg.prompts.system);
    out.push('\n');
    out.push_str(&format!(
        "Transcript format: {}. Budgets: max {} turns, {} frames per perception call.\n\n",
        cfg.transcript_version, cfg.max_turns, cfg.frame_cap
    ));
    out.push_str(&format!("Video: {} ({:.2}s)\n", task.video.id, task.video.duration_s));
    out.push_str(&format!("Question: {}\n", single_line(&task.question)));
    if let Some(choices) = &task.choices {
        out.push_str("Choices:\n");
        for (i, choice) in choices.iter().enumerate() {
            out.push_str(&format!("  {}. {}\n", letter(i), single_line(choice)));
        }
    }
    if !blocks_so_far.is_empty() {
        out.push_str("\nTranscript:\n");
        for (i, block) in blocks_so_far.iter().enumerate() {
            out.push_str(&render_block_line(i + 1, block));
            out.push('\n');
        }
    }
    out.push_str("\nNext action:\n");
    out
}

fn render_block_line(i: usize, block: &Block) -> String {
    match block {
        Block::Thinking { text } => format!("[{i} think] {}", single_line(text)),
        Block::Grounding { result } => {
            let spans = if result.spans.is_empty() {
                "(none)".to_string()
            } else {
                result
                    .spans
                    .iter()
                    .map(|s| format!("{} \"{}\"", s.interval, single_line(&s.summary)))
                    .collect::<Vec<_>>()
                    .join("; ")
            };
            let image = match &result.query.image_ref {
                Some(ImageRef::VideoFrame { timestamp_s, .. }) => format!(" image_ts={timestamp_s:.2}"),
                Some(ImageRef::Raw(_)) => " image=raw".to_string(),
                None => String::new(),
            };
            format!(
                "[{i} ground] query=\"{}\"{image} spans: {spans}; rejected {}/{}",
                single_line(&result.query.text),
                result.rejected_count,
                result.candidates_examined
            )
        }
        Block::Perception { interval, mode, question, result } => format!(
            "[{i} perceive {:.2}-{:.2} {mode}] q=\"{}\" -> \"{}\" ({} frames)",
            interval.start_s(),
            interval.end_s(),
            single_line(question),
            single_line(&result.answer),
            result.frames_used
        ),
        Block::Answer { text, forced } => {
            let mark = if *forced { " (forced)" } else { "" };
            format!("[{i} answer]{mark} {}", single_line(text))
        }
    }
}

fn single_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub(crate) fn letter(i: usize) -> char {
    (b'A' + (i as u8 % 26)) as char
}

/// Run one episode to completion.
///
/// The loop never panics on a misbehaving backend: transport failures and
/// repeated parse failures abort the episode (recorded on the trajectory),
/// and hitting the turn limit triggers one forced-answer completion.
pub fn run_episode(
    task: &Task,
    index: &ClipIndex,
    backend: &dyn ModelBackend,
    frames: &dyn FrameProvider,
    cfg: &PlannerConfig,
) -> Trajectory {
    let mut traj = Trajectory::new(task.id.clone(), backend.backend_id().to_string());
    let mut consecutive_parse_failures = 0u32;
    let mut pending_notice: Option<String> = None;

    loop {
        if traj.turn_count >= cfg.max_turns {
            force_answer(task, backend, cfg, &mut traj);
            break;
        }
        let mut prompt = render_context(task, &traj.blocks, cfg);
        if let Some(notice) = pending_notice.take() {
            prompt.push_str(&notice);
            prompt.push('\n');
        }
        let completion = match backend.complete(&prompt) {
            Ok(c) => c,
            Err(e) => {
                traj.aborted = true;
                traj.abort_reason = Some(format!("backend transport failure: {e}"));
                break;
            }
        };
        traj.turn_count += 1;
        traj.token_ledger.charge_text(approx_text_tokens(&prompt));
        traj.token_ledger.charge_text(approx_text_tokens(&completion));

        let parsed = match parse_block(&completion) {
            Ok(p) => p,
            Err(e) => {
                consecutive_parse_failures += 1;
                if consecutive_parse_failures >= 2 {
                    traj.aborted = true;
                    traj.abort_reason = Some(format!("two consecutive parse failures; last: {e}"));
                    break;
                }
                pending_notice = Some(format!("{} ({e})", cfg.prompts.parse_error_notice));
                continue;
            }
        };
        consecutive_parse_failures = 0;
        if let Some(prefix) = parsed.thinking_prefix {
            traj.blocks.push(Block::Thinking { text: prefix });
        }
        match parsed.action {
            PlannerAction::Think(text) => traj.blocks.push(Block::Thinking { text }),
            PlannerAction::Ground { text, image_ts } => {
                let query = GroundingQuery {
                    text,
                    image_ref: image_ts.map(|timestamp_s| ImageRef::VideoFrame {
                        video_id: task.video.id.clone(),
                        timestamp_s,
                    }),
                };
                match ground(&query, index, &task.video, backend, frames, cfg, &mut traj.token_ledger) {
                    Ok(result) => traj.blocks.push(Block::Grounding { result }),
                    Err(e) => {
                        traj.aborted = true;
                        traj.abort_reason = Some(format!("grounding failed: {e}"));
                        break;
                    }
                }
            }
            PlannerAction::Perceive { interval, mode, question } => {
                let block = match clamp_interval(interval, &task.video) {
                    Ok(clamped) => {
                        let req = PerceptionRequest {
                            interval: clamped,
                            mode,
                            question: question.clone(),
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
                                Block::Perception { interval: clamped, mode, question, result }
                            }
                            Err(e) => failed_perception(clamped, mode, question, &e.to_string()),
                        }
                    }
                    Err(e) => failed_perception(interval, mode, question, &e.to_string()),
                };
                traj.blocks.push(block);
            }
            PlannerAction::Answer(text) => {
                traj.blocks.push(Block::Answer { text: text.clone(), forced: false });
                traj.final_answer = Some(text);
                break;
            }
        }
    }

    if let Some(answer) = &traj.final_answer {
        traj.correct = match_answer(task, answer);
    }
    traj
}

fn failed_perception(interval: TimeInterval, mode: SampleMode, question: String, err: &str) -> Block {
    Block::Perception {
        interval,
        mode,
        question,
        result: PerceptionResult {
            answer: format!("[perception failed: {err}]"),
            timestamps: Vec::new(),
            frames_used: 0,
        },
    }
}

fn force_answer(task: &Task, backend: &dyn ModelBackend, cfg: &PlannerConfig, traj: &mut Trajectory) {
    let mut prompt = render_context(task, &traj.blocks, cfg);
    prompt.push_str(&cfg.prompts.forced_answer);
    prompt.push('\n');
    match backend.complete(&prompt) {
        Ok(completion) => {
            traj.turn_count += 1;
            traj.token_ledger.charge_text(approx_text_tokens(&prompt));
            traj.token_ledger.charge_text(approx_text_tokens(&completion));
            let text = match parse_block(&completion) {
                Ok(ParsedBlock { action: PlannerAction::Answer(text), .. }) => text,
                _ => completion.trim().to_string(),
            };
            traj.blocks.push(Block::Answer { text: text.clone(), forced: true });
            traj.final_answer = Some(text);
            traj.forced = true;
        }
        Err(e) => {
            traj.aborted = true;
            traj.abort_reason = Some(format!("backend transport failure on forced answer: {e}"));
        }
    }
}
