//! vx: a long-video reasoning engine.
//!
//! The engine answers questions about long videos by thinking in steps
//! instead of downsampling once: a planner iteratively emits cognitive
//! blocks (thinking, grounding, perception, answer), a decoupled temporal
//! grounder retrieves and verifies candidate clips from an offline embedding
//! index, and a budget-capped perception layer samples frames densely inside
//! short intervals or coarsely across long ones. Episodes record every block
//! and every token charged, so accuracy, grounding IoU, and visual-token
//! cost are all measurable.
//!
//! Model access goes through the [`backends::ModelBackend`] trait: an HTTP
//! client for real services, a scripted backend for deterministic tests, and
//! a synthetic-world oracle that makes full end-to-end runs possible on a
//! laptop with no model weights. On top of the engine sit a
//! difficulty-adaptive trajectory dataset pipeline ([`datagen`]) and
//! desk-scale training objectives with verified gradients ([`learn`]).
//!
//! Each major capability has a runnable example under `examples/`; the thin
//! `vx` binary exposes the same operations as subcommands.

pub mod backends;
pub mod config;
pub mod datagen;
pub mod embed;
pub mod eval;
pub mod grounder;
pub mod interval;
pub mod learn;
pub mod perception;
pub mod planner;
pub mod task;
pub mod trajectory;

pub use backends::{backend_from_spec, Frame, ModelBackend};
pub use config::PlannerConfig;
pub use embed::{build_index, read_index, retrieve, segment_video, write_index, ClipIndex, Embedding, GroundingQuery};
pub use eval::{run_benchmark, union_iou, EvalMode, EvalReport};
pub use grounder::{ground, GroundingResult};
pub use interval::{clamp_interval, TimeInterval};
pub use perception::{perceive, plan_samples, FrameProvider, PerceptionRequest, PerceptionResult, SampleMode, SyntheticFrames};
pub use planner::{parse_block, render_context, run_episode};
pub use task::{Task, VideoRef};
pub use trajectory::{Block, TokenLedger, Trajectory};
