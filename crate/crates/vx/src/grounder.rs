//! The decoupled temporal grounder: retrieve candidate clips for a sub-query,
//! verify each with the VLM, merge the survivors into spans, and summarize
//! each span for the planner.
//!
//! The pipeline is deterministic given a deterministic backend; the planner
//! reformulates on its next turn when nothing survives verification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::ModelBackend;
use crate::config::PlannerConfig;
use crate::embed::{embed_query, retrieve, ClipIndex, ClipMeta, GroundingQuery, IndexError};
use crate::interval::{merge_intervals, TimeInterval};
use crate::perception::{perceive_tagged, FrameProvider, PerceiveError, PerceptionRequest, SampleMode};
use crate::task::VideoRef;
use crate::trajectory::{ChargeSource, TokenLedger};

#[derive(Debug, Error)]
pub enum GroundError {
    #[error(transparent)]
    Embedding(#[from] IndexError),
}

/// One validated span with its summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub interval: TimeInterval,
    pub summary: String,
}

/// Outcome of one grounding call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub query: GroundingQuery,
    /// Disjoint, sorted by start; empty is a valid "nothing found".
    pub spans: Vec<Span>,
    pub rejected_count: u32,
    pub validated_count: u32,
    pub candidates_examined: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Merge a run of clips into maximal intervals: clips that touch or overlap
/// become one span, gaps are preserved.
pub fn merge_adjacent(clips: &[ClipMeta]) -> Vec<TimeInterval> {
    let intervals: Vec<TimeInterval> = clips.iter().map(|c| c.interval).collect();
    merge_intervals(&intervals)
}

/// Ask the VLM whether a candidate clip is relevant to the query.
///
/// Samples frames under the verification budget, charges the ledger, and
/// parses a leading yes/no. Anything else counts as not relevant.
pub fn verify_clip(
    clip: &ClipMeta,
    query: &GroundingQuery,
    video: &VideoRef,
    backend: &dyn ModelBackend,
    frames: &dyn FrameProvider,
    cfg: &PlannerConfig,
    ledger: &mut TokenLedger,
) -> Result<(bool, String), PerceiveError> {
    let question = cfg.grounder.verify_prompt.replace("{query}", &query.text);
    let req = PerceptionRequest::new(clip.interval, SampleMode::Dense, question)
        .with_frame_cap(cfg.grounder.verify_frame_cap);
    let res = perceive_tagged(
        &req,
        video,
        backend,
        frames,
        cfg.fps,
        cfg.tokens_per_frame,
        ledger,
        ChargeSource::Grounding,
    )?;
    let verdict = res.answer.trim();
    let lowered = verdict.to_lowercase();
    let word: String = lowered.chars().take_while(|c| c.is_alphabetic()).collect();
    match word.as_str() {
        "yes" => Ok((true, verdict.to_string())),
        "no" => Ok((false, verdict.to_string())),
        _ => Ok((false, format!("unparseable verdict: {verdict:?}"))),
    }
}

/// Ground a sub-query: embed, retrieve top-k, verify each candidate, merge
/// validated clips into spans, and summarize each span.
pub fn ground(
    query: &GroundingQuery,
    index: &ClipIndex,
    video: &VideoRef,
    backend: &dyn ModelBackend,
    frames: &dyn FrameProvider,
    cfg: &PlannerConfig,
    ledger: &mut TokenLedger,
) -> Result<GroundingResult, GroundError> {
    let query_emb = embed_query(query, backend, &|video_id, t| {
        frames
            .frame_at(video_id, t)
            .map_err(|e| crate::backends::BackendError::Other(e.to_string()))
    })?;
    let candidates = retrieve(index, &query_emb, cfg.top_k)?;

    let mut notes = Vec::new();
    let mut validated: Vec<ClipMeta> = Vec::new();
    let mut rejected_count = 0u32;
    for (clip, _score) in &candidates {
        match verify_clip(clip, query, video, backend, frames, cfg, ledger) {
            Ok((true, _rationale)) => validated.push(clip.clone()),
            Ok((false, _rationale)) => rejected_count += 1,
            Err(e) => {
                rejected_count += 1;
                notes.push(format!("verification failed for clip {}: {e}", clip.ordinal));
            }
        }
    }
    let validated_count = validated.len() as u32;
    validated.sort_by(|a, b| a.video_id.cmp(&b.video_id).then(a.ordinal.cmp(&b.ordinal)));
    let merged = merge_adjacent(&validated);

    let mut spans = Vec::with_capacity(merged.len());
    for interval in merged {
        let question = cfg.grounder.summarize_prompt.replace("{query}", &query.text);
        let req = PerceptionRequest::new(interval, SampleMode::Dense, question)
            .with_frame_cap(cfg.frame_cap);
        let summary = match perceive_tagged(
            &req,
            video,
            backend,
            frames,
            cfg.fps,
            cfg.tokens_per_frame,
            ledger,
            ChargeSource::Grounding,
        ) {
            Ok(res) => res.answer,
            Err(e) => {
                notes.push(format!("summarization failed for {interval}: {e}"));
                "(summary unavailable)".to_string()
            }
        };
        spans.push(Span { interval, summary });
    }

    Ok(GroundingResult {
        query: query.clone(),
        spans,
        rejected_count,
        validated_count,
        candidates_examined: candidates.len() as u32,
        notes,
    })
}
