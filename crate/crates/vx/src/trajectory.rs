//! Cognitive blocks, episode trajectories, and the token ledger.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounder::GroundingResult;
use crate::interval::TimeInterval;
use crate::perception::{PerceptionResult, SampleMode};

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("block {index}: Answer must be the final block")]
    AnswerNotTerminal { index: usize },
    #[error("final_answer must be set exactly when the last block is an Answer")]
    FinalAnswerMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Where a visual charge originated. The planner itself never samples frames;
/// every frame flows through one of these two paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ChargeSource {
    Grounding,
    Perception,
}

impl ChargeSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChargeSource::Grounding => "grounding",
            ChargeSource::Perception => "perception",
        }
    }
}

/// Monotone per-episode resource counters.
///
/// `visual_tokens` is always `frames_consumed * tokens_per_frame`; the ledger
/// enforces this by charging frames and tokens in one step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenLedger {
    pub visual_tokens: u64,
    pub text_tokens: u64,
    pub frames_consumed: u64,
    #[serde(default)]
    pub frames_by_source: BTreeMap<String, u64>,
}

impl TokenLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge_frames(&mut self, source: ChargeSource, frames: u64, tokens_per_frame: u64) {
        self.frames_consumed += frames;
        self.visual_tokens += frames * tokens_per_frame;
        *self.frames_by_source.entry(source.as_str().to_string()).or_insert(0) += frames;
    }

    pub fn charge_text(&mut self, tokens: u64) {
        self.text_tokens += tokens;
    }
}

/// Rough deterministic token count for ledger accounting: whitespace-separated
/// words. Tokens are accounted, not computed from a real tokenizer.
pub fn approx_text_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// One cognitive step in an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Block {
    Thinking {
        text: String,
    },
    Grounding {
        result: GroundingResult,
    },
    Perception {
        interval: TimeInterval,
        mode: SampleMode,
        question: String,
        result: PerceptionResult,
    },
    Answer {
        text: String,
        #[serde(default)]
        forced: bool,
    },
}

impl Block {
    pub fn kind(&self) -> &'static str {
        match self {
            Block::Thinking { .. } => "think",
            Block::Grounding { .. } => "ground",
            Block::Perception { .. } => "perceive",
            Block::Answer { .. } => "answer",
        }
    }
}

/// The ordered record of one episode.
///
/// `turn_count` counts planner LLM calls, which can be fewer than the number
/// of blocks (a single completion may yield a thinking prefix plus an action).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub backend_id: String,
    pub blocks: Vec<Block>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    pub token_ledger: TokenLedger,
    pub turn_count: u32,
    #[serde(default)]
    pub forced: bool,
    #[serde(default)]
    pub aborted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
}

impl Trajectory {
    pub fn new(task_id: impl Into<String>, backend_id: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            backend_id: backend_id.into(),
            blocks: Vec::new(),
            final_answer: None,
            correct: None,
            token_ledger: TokenLedger::new(),
            turn_count: 0,
            forced: false,
            aborted: false,
            abort_reason: None,
        }
    }

    /// Structural invariants: Answer appears at most once and only last;
    /// `final_answer` is set exactly when the episode ended on an Answer.
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        for (index, block) in self.blocks.iter().enumerate() {
            if matches!(block, Block::Answer { .. }) && index + 1 != self.blocks.len() {
                return Err(TrajectoryError::AnswerNotTerminal { index });
            }
        }
        let ends_on_answer = matches!(self.blocks.last(), Some(Block::Answer { .. }));
        if ends_on_answer != self.final_answer.is_some() {
            return Err(TrajectoryError::FinalAnswerMismatch);
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, TrajectoryError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), TrajectoryError> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, TrajectoryError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_ties_visual_tokens_to_frames() {
        let mut ledger = TokenLedger::new();
        ledger.charge_frames(ChargeSource::Perception, 10, 256);
        assert_eq!(ledger.frames_consumed, 10);
        assert_eq!(ledger.visual_tokens, 2560);
        ledger.charge_frames(ChargeSource::Grounding, 2, 256);
        assert_eq!(ledger.visual_tokens, 12 * 256);
        assert_eq!(ledger.frames_by_source["grounding"], 2);
        assert_eq!(ledger.frames_by_source["perception"], 10);
    }

    #[test]
    fn answer_must_be_terminal() {
        let mut t = Trajectory::new("t1", "test");
        t.blocks.push(Block::Answer { text: "A".into(), forced: false });
        t.blocks.push(Block::Thinking { text: "oops".into() });
        assert!(t.validate().is_err());
    }

    #[test]
    fn final_answer_matches_last_block() {
        let mut t = Trajectory::new("t1", "test");
        t.blocks.push(Block::Answer { text: "A".into(), forced: false });
        assert!(t.validate().is_err());
        t.final_answer = Some("A".into());
        t.validate().unwrap();
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut t = Trajectory::new("t1", "test");
        t.blocks.push(Block::Thinking { text: "look at the start".into() });
        t.blocks.push(Block::Answer { text: "B".into(), forced: true });
        t.final_answer = Some("B".into());
        t.forced = true;
        t.turn_count = 2;
        t.token_ledger.charge_text(12);
        let json = t.to_json().unwrap();
        let back: Trajectory = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_json().unwrap(), json);
    }

    mod properties {
        use super::*;
        use crate::embed::GroundingQuery;
        use crate::grounder::{GroundingResult, Span};
        use crate::interval::TimeInterval;
        use crate::perception::{PerceptionResult, SampleMode};
        use proptest::prelude::*;

        fn arb_interval() -> impl Strategy<Value = TimeInterval> {
            (0u32..10_000, 1u32..5_000).prop_map(|(s, l)| {
                TimeInterval::new(s as f64 * 0.1, (s + l) as f64 * 0.1).unwrap()
            })
        }

        fn arb_block() -> impl Strategy<Value = Block> {
            prop_oneof![
                "[ -~]{0,40}".prop_map(|text| Block::Thinking { text }),
                ("[ -~]{1,20}", proptest::collection::vec((arb_interval(), "[ -~]{0,20}"), 0..3), 0u32..10, 0u32..10)
                    .prop_map(|(text, spans, rejected, validated)| Block::Grounding {
                        result: GroundingResult {
                            query: GroundingQuery::text_only(text),
                            spans: spans
                                .into_iter()
                                .map(|(interval, summary)| Span { interval, summary })
                                .collect(),
                            rejected_count: rejected,
                            validated_count: validated,
                            candidates_examined: rejected + validated,
                            notes: vec![],
                        },
                    }),
                (arb_interval(), any::<bool>(), "[ -~]{0,30}", proptest::collection::vec(0.0f64..100.0, 0..5))
                    .prop_map(|(interval, dense, question, timestamps)| Block::Perception {
                        interval,
                        mode: if dense { SampleMode::Dense } else { SampleMode::Coarse },
                        question,
                        result: PerceptionResult {
                            answer: "seen".into(),
                            frames_used: timestamps.len() as u32,
                            timestamps,
                        },
                    }),
            ]
        }

        proptest! {
            #[test]
            fn serialization_round_trips_bit_exactly(
                blocks in proptest::collection::vec(arb_block(), 0..6),
                answer in proptest::option::of("[ -~]{0,10}"),
                turn_count in 0u32..25,
                frames in 0u64..200,
            ) {
                let mut t = Trajectory::new("prop", "prop-backend");
                t.blocks = blocks;
                t.turn_count = turn_count;
                t.token_ledger.charge_frames(ChargeSource::Perception, frames, 256);
                if let Some(answer) = answer {
                    t.blocks.push(Block::Answer { text: answer.clone(), forced: false });
                    t.final_answer = Some(answer);
                }
                let json = t.to_json().unwrap();
                let back: Trajectory = serde_json::from_str(&json).unwrap();
                prop_assert_eq!(&back, &t);
                prop_assert_eq!(back.to_json().unwrap(), json);
            }
        }
    }
}
