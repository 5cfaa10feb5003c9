//! Videos, questions, and the task JSONL format.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::TimeInterval;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid video {id:?}: duration_s must be >= 0 and native fps > 0")]
    InvalidVideo { id: String },
    #[error("task {id:?}: gold answer index {index} out of range for {n_choices} choices")]
    GoldOutOfRange {
        id: String,
        index: usize,
        n_choices: usize,
    },
    #[error("task {id:?}: gold interval {interval} extends past video duration {duration_s}s")]
    GoldIntervalOutOfBounds {
        id: String,
        interval: TimeInterval,
        duration_s: f64,
    },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A reference to one video: identity plus the two numbers the engine needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRef {
    pub id: String,
    pub duration_s: f64,
    #[serde(rename = "fps")]
    pub native_fps: f64,
}

impl VideoRef {
    pub fn new(id: impl Into<String>, duration_s: f64, native_fps: f64) -> Result<Self, TaskError> {
        let id = id.into();
        if !(duration_s >= 0.0 && duration_s.is_finite() && native_fps > 0.0 && native_fps.is_finite())
        {
            return Err(TaskError::InvalidVideo { id });
        }
        Ok(Self {
            id,
            duration_s,
            native_fps,
        })
    }
}

/// Gold answer: an index into `choices` or free text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GoldAnswer {
    Index(usize),
    Text(String),
}

/// A question over one video, with optional supervision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub video: VideoRef,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<GoldAnswer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_intervals: Option<Vec<TimeInterval>>,
}

impl Task {
    /// Check the cross-field invariants that serde cannot express.
    pub fn validate(&self) -> Result<(), TaskError> {
        if let (Some(choices), Some(GoldAnswer::Index(i))) = (&self.choices, &self.gold_answer) {
            if *i >= choices.len() {
                return Err(TaskError::GoldOutOfRange {
                    id: self.id.clone(),
                    index: *i,
                    n_choices: choices.len(),
                });
            }
        }
        if let Some(golds) = &self.gold_intervals {
            for g in golds {
                if g.end_s() > self.video.duration_s {
                    return Err(TaskError::GoldIntervalOutOfBounds {
                        id: self.id.clone(),
                        interval: *g,
                        duration_s: self.video.duration_s,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Fold text for answer comparison: lowercase, trim, collapse whitespace.
fn fold(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Resolve an answer string to a choice index: a bare option letter
/// (`"B"`, `"b."`) or the exact option text after case/whitespace folding.
pub fn resolve_choice(choices: &[String], answer: &str) -> Option<usize> {
    let folded = fold(answer);
    let stripped: String = folded.chars().filter(|c| c.is_alphanumeric()).collect();
    if stripped.len() == 1 {
        if let Some(c) = stripped.chars().next() {
            if c.is_ascii_alphabetic() {
                let idx = (c as u8 - b'a') as usize;
                if idx < choices.len() {
                    return Some(idx);
                }
            }
        }
    }
    choices.iter().position(|c| fold(c) == folded)
}

/// Judge an answer against the task's gold label.
///
/// Returns `None` when the task carries no usable gold answer. Multiple-choice
/// answers match by option letter or exact option text; free-text answers
/// match by exact fold. No model-based judging.
pub fn match_answer(task: &Task, answer: &str) -> Option<bool> {
    let gold = task.gold_answer.as_ref()?;
    match (&task.choices, gold) {
        (Some(choices), GoldAnswer::Index(gold_idx)) => {
            let answered = resolve_choice(choices, answer);
            Some(answered == Some(*gold_idx))
        }
        (Some(choices), GoldAnswer::Text(text)) => {
            let gold_idx = resolve_choice(choices, text)?;
            Some(resolve_choice(choices, answer) == Some(gold_idx))
        }
        (None, GoldAnswer::Text(text)) => Some(fold(answer) == fold(text)),
        (None, GoldAnswer::Index(_)) => None,
    }
}

/// Read tasks from a JSONL file, one record per line; blank lines are skipped.
pub fn read_tasks_jsonl(path: &Path) -> Result<Vec<Task>, TaskError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut tasks = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let task: Task =
            serde_json::from_str(&line).map_err(|source| TaskError::Parse { line: idx + 1, source })?;
        task.validate()?;
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn write_tasks_jsonl(path: &Path, tasks: &[Task]) -> Result<(), TaskError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for task in tasks {
        serde_json::to_writer(&mut out, task).map_err(|source| TaskError::Parse { line: 0, source })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn video_json_uses_fps_key() {
        let v = VideoRef::new("clip01", 120.0, 30.0).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"{"id":"clip01","duration_s":120.0,"fps":30.0}"#);
    }

    #[test]
    fn rejects_nonpositive_fps() {
        assert!(VideoRef::new("v", 10.0, 0.0).is_err());
        assert!(VideoRef::new("v", -1.0, 1.0).is_err());
    }

    #[test]
    fn task_record_round_trips() {
        let raw = r#"{"id":"t1","video":{"id":"v","duration_s":60.0,"fps":1.0},"question":"What color?","choices":["red","blue"],"gold_answer":1,"gold_intervals":[[4.0,8.0]]}"#;
        let task: Task = serde_json::from_str(raw).unwrap();
        task.validate().unwrap();
        assert_eq!(task.gold_answer, Some(GoldAnswer::Index(1)));
        assert_eq!(serde_json::to_string(&task).unwrap(), raw);
    }

    #[test]
    fn answer_matching_by_letter_and_text() {
        let task = Task {
            id: "t".into(),
            video: VideoRef::new("v", 10.0, 1.0).unwrap(),
            question: "q".into(),
            choices: Some(vec!["red".into(), "Deep Blue".into()]),
            gold_answer: Some(GoldAnswer::Index(1)),
            gold_intervals: None,
        };
        assert_eq!(match_answer(&task, "B"), Some(true));
        assert_eq!(match_answer(&task, "b."), Some(true));
        assert_eq!(match_answer(&task, "deep  blue"), Some(true));
        assert_eq!(match_answer(&task, "red"), Some(false));
        assert_eq!(match_answer(&task, "not visible"), Some(false));

        let free = Task {
            id: "t".into(),
            video: VideoRef::new("v", 10.0, 1.0).unwrap(),
            question: "q".into(),
            choices: None,
            gold_answer: Some(GoldAnswer::Text("seven".into())),
            gold_intervals: None,
        };
        assert_eq!(match_answer(&free, " Seven "), Some(true));
        assert_eq!(match_answer(&free, "7"), Some(false));

        let ungraded = Task { gold_answer: None, ..free.clone() };
        assert_eq!(match_answer(&ungraded, "anything"), None);
    }

    #[test]
    fn validate_catches_bad_gold() {
        let raw = r#"{"id":"t1","video":{"id":"v","duration_s":60.0,"fps":1.0},"question":"q","choices":["a"],"gold_answer":3}"#;
        let task: Task = serde_json::from_str(raw).unwrap();
        assert!(task.validate().is_err());

        let raw = r#"{"id":"t2","video":{"id":"v","duration_s":60.0,"fps":1.0},"question":"q","gold_intervals":[[50.0,70.0]]}"#;
        let task: Task = serde_json::from_str(raw).unwrap();
        assert!(task.validate().is_err());
    }
}
