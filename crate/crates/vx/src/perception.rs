//! Temporal-scalable perception: pick frame timestamps inside an interval
//! under a hard frame budget, ask the VLM one question, charge the ledger.
//!
//! Short intervals are sampled densely on the native frame grid; long
//! intervals fall back to midpoint-stratified coarse sampling so adjacent
//! spans never duplicate boundary frames.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Frame, FrameSource, ModelBackend};
use crate::interval::{clamp_interval, IntervalError, TimeInterval};
use crate::task::VideoRef;
use crate::trajectory::{ChargeSource, TokenLedger};

/// Default per-call frame budget.
pub const DEFAULT_FRAME_CAP: u32 = 32;
/// Default visual tokens charged per frame. A modeling knob, not a tokenizer:
/// reports echo the value used.
pub const DEFAULT_TOKENS_PER_FRAME: u64 = 256;
/// Default sampling rate for dense perception.
pub const DEFAULT_FPS: f64 = 1.0;

#[derive(Debug, Error)]
pub enum PerceiveError {
    #[error(transparent)]
    Interval(#[from] IntervalError),
    #[error("frame provider failed at t={timestamp_s}s: {message}")]
    FrameProvider { timestamp_s: f64, message: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Declared sampling granularity. The actual schedule is budget-driven (see
/// [`plan_samples`]); the mode records the planner's intent in the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Dense,
    Coarse,
}

impl std::fmt::Display for SampleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SampleMode::Dense => write!(f, "dense"),
            SampleMode::Coarse => write!(f, "coarse"),
        }
    }
}

impl std::str::FromStr for SampleMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dense" => Ok(SampleMode::Dense),
            "coarse" => Ok(SampleMode::Coarse),
            other => Err(format!("unknown sample mode {other:?}")),
        }
    }
}

/// One perception call: an interval, a question, and a budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionRequest {
    pub interval: TimeInterval,
    pub mode: SampleMode,
    pub question: String,
    pub frame_cap: u32,
}

impl PerceptionRequest {
    pub fn new(interval: TimeInterval, mode: SampleMode, question: impl Into<String>) -> Self {
        Self { interval, mode, question: question.into(), frame_cap: DEFAULT_FRAME_CAP }
    }

    pub fn with_frame_cap(mut self, frame_cap: u32) -> Self {
        self.frame_cap = frame_cap.max(1);
        self
    }
}

/// What came back: the VLM answer plus the exact timestamps consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionResult {
    pub answer: String,
    pub timestamps: Vec<f64>,
    pub frames_used: u32,
}

/// Choose frame timestamps for an interval under a budget.
///
/// With `n_avail = floor(length * fps)` frames on the native grid:
/// - `n_avail <= frame_cap`: dense, `start + i/fps` for `i in 0..n_avail`
///   (a single midpoint sample when `n_avail == 0`);
/// - otherwise: coarse, `frame_cap` midpoint-stratified samples
///   `start + (i + 0.5) * length / n`.
pub fn plan_samples(
    interval: TimeInterval,
    fps: f64,
    frame_cap: u32,
) -> Result<Vec<f64>, PerceiveError> {
    let length = interval.length_s();
    if length <= 0.0 {
        return Err(PerceiveError::Interval(IntervalError::Invalid {
            start_s: interval.start_s(),
            end_s: interval.end_s(),
        }));
    }
    let cap = frame_cap.max(1) as u64;
    let n_avail = (length * fps).floor() as u64;
    if n_avail == 0 {
        return Ok(vec![interval.midpoint_s()]);
    }
    if n_avail <= cap {
        return Ok((0..n_avail).map(|i| interval.start_s() + i as f64 / fps).collect());
    }
    let n = cap;
    Ok((0..n)
        .map(|i| interval.start_s() + (i as f64 + 0.5) * length / n as f64)
        .collect())
}

/// Provides frame handles by `(video_id, timestamp)`.
pub trait FrameProvider: Send + Sync {
    fn frame_at(&self, video_id: &str, timestamp_s: f64) -> Result<Frame, PerceiveError>;
}

/// Fabricates frame descriptors; the synthetic-world stand-in for a decoder.
#[derive(Debug, Clone, Default)]
pub struct SyntheticFrames;

impl FrameProvider for SyntheticFrames {
    fn frame_at(&self, video_id: &str, timestamp_s: f64) -> Result<Frame, PerceiveError> {
        Ok(Frame {
            video_id: video_id.to_string(),
            timestamp_s,
            source: FrameSource::Synthetic {
                descriptor: format!("{video_id}@{timestamp_s:.3}s"),
            },
        })
    }
}

/// Serves pre-extracted frames from `<root>/<video_id>/<timestamp_ms>.png`,
/// falling back to the nearest available file within `1/(2*fps)` seconds.
#[derive(Debug, Clone)]
pub struct DirFrames {
    root: std::path::PathBuf,
    fps: f64,
}

impl DirFrames {
    pub fn new(root: impl Into<std::path::PathBuf>, fps: f64) -> Self {
        Self { root: root.into(), fps }
    }
}

impl FrameProvider for DirFrames {
    fn frame_at(&self, video_id: &str, timestamp_s: f64) -> Result<Frame, PerceiveError> {
        let dir = self.root.join(video_id);
        let want_ms = (timestamp_s * 1000.0).round() as i64;
        let exact = dir.join(format!("{want_ms}.png"));
        let tol_ms = (1000.0 / (2.0 * self.fps)).ceil() as i64;
        let path = if exact.is_file() {
            exact
        } else {
            let mut best: Option<(i64, std::path::PathBuf)> = None;
            let entries = std::fs::read_dir(&dir).map_err(|e| PerceiveError::FrameProvider {
                timestamp_s,
                message: format!("reading {}: {e}", dir.display()),
            })?;
            for entry in entries.flatten() {
                let path = entry.path();
                let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
                let Ok(ms) = stem.parse::<i64>() else { continue };
                let dist = (ms - want_ms).abs();
                if dist <= tol_ms && best.as_ref().is_none_or(|(d, _)| dist < *d) {
                    best = Some((dist, path));
                }
            }
            best.map(|(_, p)| p).ok_or_else(|| PerceiveError::FrameProvider {
                timestamp_s,
                message: format!("no frame within {tol_ms}ms in {}", dir.display()),
            })?
        };
        Ok(Frame {
            video_id: video_id.to_string(),
            timestamp_s,
            source: FrameSource::File { path: path.to_string_lossy().into_owned() },
        })
    }
}

/// Run one perception call: clamp the interval to the video, sample under the
/// budget, fetch frames, ask the VLM, and charge the ledger.
pub fn perceive(
    req: &PerceptionRequest,
    video: &VideoRef,
    backend: &dyn ModelBackend,
    frames: &dyn FrameProvider,
    fps: f64,
    tokens_per_frame: u64,
    ledger: &mut TokenLedger,
) -> Result<PerceptionResult, PerceiveError> {
    perceive_tagged(req, video, backend, frames, fps, tokens_per_frame, ledger, ChargeSource::Perception)
}

/// Like [`perceive`] but attributing the visual charge to a specific source;
/// the grounder routes its verification and summarization calls through here.
#[allow(clippy::too_many_arguments)]
pub(crate) fn perceive_tagged(
    req: &PerceptionRequest,
    video: &VideoRef,
    backend: &dyn ModelBackend,
    frames: &dyn FrameProvider,
    fps: f64,
    tokens_per_frame: u64,
    ledger: &mut TokenLedger,
    source: ChargeSource,
) -> Result<PerceptionResult, PerceiveError> {
    let clamped = clamp_interval(req.interval, video)?;
    let timestamps = plan_samples(clamped, fps, req.frame_cap)?;
    let mut fetched = Vec::with_capacity(timestamps.len());
    for &t in &timestamps {
        fetched.push(frames.frame_at(&video.id, t)?);
    }
    let answer = backend.vision_answer(&fetched, &req.question)?;
    let frames_used = fetched.len() as u32;
    ledger.charge_frames(source, frames_used as u64, tokens_per_frame);
    ledger.charge_text(crate::trajectory::approx_text_tokens(&req.question));
    ledger.charge_text(crate::trajectory::approx_text_tokens(&answer));
    Ok(PerceptionResult { answer, timestamps, frames_used })
}
