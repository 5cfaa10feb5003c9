//! Difficulty-adaptive trajectory dataset construction: a uniform first
//! round, per-task accuracy, hard-case re-sampling, correct-only SFT
//! retention, and preference-pair emission.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PlannerConfig;
use crate::embed::ClipIndex;
use crate::perception::FrameProvider;
use crate::planner::{render_context, run_episode};
use crate::task::{GoldAnswer, Task};
use crate::trajectory::{Block, Trajectory};

/// Default cap on preference pairs emitted per task.
pub const DEFAULT_PAIRS_PER_TASK: usize = 4;
/// Default accuracy-weight floor so easy tasks stay represented.
pub const DEFAULT_WEIGHT_FLOOR: f64 = 0.05;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("n_per_task must be >= 1")]
    BadAttemptCount,
    #[error("resample budget must be >= 1")]
    BadBudget,
    #[error("difficulty weights need a non-empty accuracy list")]
    EmptyAccuracies,
    #[error("weights and tasks must align: {weights} weights for {tasks} tasks")]
    WeightMismatch { weights: usize, tasks: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// First-round outcome for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub task_id: String,
    pub attempts: u32,
    pub correct: u32,
    pub accuracy: f64,
}

/// One labeled episode in a trajectory pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub task_id: String,
    pub attempt: u32,
    pub correct: bool,
    pub trajectory: Trajectory,
}

/// A chosen/rejected trajectory pair for preference optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub task_id: String,
    pub chosen: Trajectory,
    pub rejected: Trajectory,
}

/// Runs one episode for a task. `episode_seed` distinguishes repeated
/// attempts; deterministic runners may ignore it.
pub trait EpisodeRunner: Sync {
    fn run(&self, task: &Task, episode_seed: u64) -> Trajectory;
}

/// The standard runner: a planner episode against per-video indexes.
pub struct EngineRunner<'a> {
    pub indexes: &'a BTreeMap<String, ClipIndex>,
    pub backend: &'a dyn crate::backends::ModelBackend,
    pub frames: &'a dyn FrameProvider,
    pub cfg: &'a PlannerConfig,
}

impl EpisodeRunner for EngineRunner<'_> {
    fn run(&self, task: &Task, _episode_seed: u64) -> Trajectory {
        match self.indexes.get(&task.video.id) {
            Some(index) => run_episode(task, index, self.backend, self.frames, self.cfg),
            None => {
                let mut traj = Trajectory::new(task.id.clone(), self.backend.backend_id());
                traj.aborted = true;
                traj.abort_reason = Some(format!("no index for video {:?}", task.video.id));
                traj
            }
        }
    }
}

/// Wraps a runner and deterministically corrupts a fraction of episodes into
/// wrong answers, giving the pipeline incorrect trajectories to pair against
/// even when the underlying backend is a perfect oracle.
pub struct FallibleRunner<R> {
    pub inner: R,
    pub slip_rate: f64,
    pub salt: u64,
}

impl<R: EpisodeRunner> EpisodeRunner for FallibleRunner<R> {
    fn run(&self, task: &Task, episode_seed: u64) -> Trajectory {
        let mut traj = self.inner.run(task, episode_seed);
        let draw = stable_unit(self.salt ^ episode_seed);
        if draw >= self.slip_rate || traj.aborted || traj.final_answer.is_none() {
            return traj;
        }
        let wrong = match (&task.choices, &task.gold_answer) {
            (Some(choices), Some(GoldAnswer::Index(gold))) if choices.len() > 1 => {
                crate::planner::letter((gold + 1) % choices.len()).to_string()
            }
            _ => format!("{} (slipped)", traj.final_answer.as_deref().unwrap_or_default()),
        };
        if let Some(Block::Answer { text, .. }) = traj.blocks.last_mut() {
            *text = wrong.clone();
        }
        traj.final_answer = Some(wrong);
        traj.correct = traj.final_answer.as_deref().and_then(|a| crate::task::match_answer(task, a));
        traj
    }
}

fn stable_unit(seed: u64) -> f64 {
    let mut x = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    ((x >> 11) as f64) / ((1u64 << 53) as f64)
}

fn episode_seed(salt: u64, task_id: &str, attempt: u32) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64 ^ salt;
    for b in task_id.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash ^ (attempt as u64) << 32
}

/// Attempt every task `n_per_task` times with distinct episode seeds.
///
/// Episodes run in parallel; the returned pool is sorted by
/// `(task_id, attempt)` so output is independent of scheduling. Aborted
/// episodes count as incorrect attempts.
pub fn first_round(
    tasks: &[Task],
    runner: &dyn EpisodeRunner,
    n_per_task: u32,
) -> Result<(Vec<TaskAccuracy>, Vec<PoolEntry>), DatagenError> {
    if n_per_task < 1 {
        return Err(DatagenError::BadAttemptCount);
    }
    let jobs: Vec<(&Task, u32)> =
        tasks.iter().flat_map(|t| (0..n_per_task).map(move |a| (t, a))).collect();
    let mut pool: Vec<PoolEntry> = jobs
        .par_iter()
        .map(|(task, attempt)| {
            let seed = episode_seed(0x0066_6972_7374_u64, &task.id, *attempt);
            let trajectory = runner.run(task, seed);
            PoolEntry {
                task_id: task.id.clone(),
                attempt: *attempt,
                correct: trajectory.correct == Some(true),
                trajectory,
            }
        })
        .collect();
    pool.sort_by(|a, b| a.task_id.cmp(&b.task_id).then(a.attempt.cmp(&b.attempt)));

    let mut accuracies = Vec::with_capacity(tasks.len());
    for task in tasks {
        let hits =
            pool.iter().filter(|e| e.task_id == task.id && e.correct).count() as u32;
        accuracies.push(TaskAccuracy {
            task_id: task.id.clone(),
            attempts: n_per_task,
            correct: hits,
            accuracy: hits as f64 / n_per_task as f64,
        });
    }
    Ok((accuracies, pool))
}

/// Normalized re-sampling weights: `w_i  proportional to  max(1 - accuracy_i, floor)`.
pub fn difficulty_weights(accuracies: &[TaskAccuracy], floor: f64) -> Result<Vec<f64>, DatagenError> {
    if accuracies.is_empty() {
        return Err(DatagenError::EmptyAccuracies);
    }
    let raw: Vec<f64> = accuracies.iter().map(|a| (1.0 - a.accuracy).max(floor)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Draw `budget` episodes i.i.d. from the weighted task distribution.
///
/// Draws come from a seeded generator; the pool is sorted by
/// `(task_id, attempt)` where `attempt` is the draw index.
pub fn resample_hard(
    tasks: &[Task],
    weights: &[f64],
    runner: &dyn EpisodeRunner,
    budget: u32,
    seed: u64,
) -> Result<Vec<PoolEntry>, DatagenError> {
    if budget < 1 {
        return Err(DatagenError::BadBudget);
    }
    if tasks.len() != weights.len() {
        return Err(DatagenError::WeightMismatch { weights: weights.len(), tasks: tasks.len() });
    }
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cumulative.push(acc);
    }
    let total = acc;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(usize, u32)> = (0..budget)
        .map(|i| {
            let r = rng.gen::<f64>() * total;
            let idx = cumulative.partition_point(|&c| c < r).min(tasks.len() - 1);
            (idx, i)
        })
        .collect();
    let mut pool: Vec<PoolEntry> = draws
        .par_iter()
        .map(|(task_idx, draw)| {
            let task = &tasks[*task_idx];
            let eseed = episode_seed(seed ^ 0x0072_6573_616d_7030, &task.id, *draw);
            let trajectory = runner.run(task, eseed);
            PoolEntry {
                task_id: task.id.clone(),
                attempt: *draw,
                correct: trajectory.correct == Some(true),
                trajectory,
            }
        })
        .collect();
    pool.sort_by(|a, b| a.task_id.cmp(&b.task_id).then(a.attempt.cmp(&b.attempt)));
    Ok(pool)
}

/// One SFT supervision record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub task_id: String,
    pub role: String,
    pub input: String,
    pub target: String,
    pub answer: String,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SftStats {
    pub planner_records: usize,
    pub grounder_records: usize,
    pub dropped_incorrect: usize,
}

/// Reconstruct the wire-format action sequence a planner would have emitted.
pub fn blocks_to_wire(blocks: &[Block]) -> String {
    let mut lines = Vec::with_capacity(blocks.len());
    for block in blocks {
        match block {
            Block::Thinking { text } => lines.push(format!("<think>{text}</think>")),
            Block::Grounding { result } => {
                let mut payload = serde_json::Map::new();
                payload.insert("text".into(), result.query.text.clone().into());
                if let Some(crate::embed::ImageRef::VideoFrame { timestamp_s, .. }) =
                    &result.query.image_ref
                {
                    payload.insert(
                        "image_ts".into(),
                        serde_json::Number::from_f64(*timestamp_s)
                            .map(serde_json::Value::Number)
                            .unwrap_or(serde_json::Value::Null),
                    );
                }
                lines.push(format!(
                    "<search>{}</search>",
                    serde_json::Value::Object(payload)
                ));
            }
            Block::Perception { interval, mode, question, .. } => lines.push(format!(
                "<perceive start={} end={} mode={mode}>{question}</perceive>",
                interval.start_s(),
                interval.end_s()
            )),
            Block::Answer { text, .. } => lines.push(format!("<answer>{text}</answer>")),
        }
    }
    lines.join("\n")
}

/// Emit the SFT dataset: only correct trajectories are retained. Each keeps
/// one planner-view record (full action sequence as the target) and one
/// grounder-view record per grounding block (the validated result as the
/// target).
pub fn emit_sft(
    pool: &[PoolEntry],
    tasks_by_id: &BTreeMap<String, Task>,
    cfg: &PlannerConfig,
    out: &Path,
) -> Result<SftStats, DatagenError> {
    let mut stats = SftStats::default();
    let mut file = std::io::BufWriter::new(std::fs::File::create(out)?);
    for entry in pool {
        if !entry.correct {
            stats.dropped_incorrect += 1;
            continue;
        }
        let Some(task) = tasks_by_id.get(&entry.task_id) else {
            stats.dropped_incorrect += 1;
            continue;
        };
        let answer = entry.trajectory.final_answer.clone().unwrap_or_default();
        let planner_record = SftRecord {
            task_id: entry.task_id.clone(),
            role: "planner".to_string(),
            input: render_context(task, &[], cfg),
            target: blocks_to_wire(&entry.trajectory.blocks),
            answer: answer.clone(),
        };
        serde_json::to_writer(&mut file, &planner_record)?;
        file.write_all(b"\n")?;
        stats.planner_records += 1;

        for (i, block) in entry.trajectory.blocks.iter().enumerate() {
            let Block::Grounding { result } = block else { continue };
            let record = SftRecord {
                task_id: entry.task_id.clone(),
                role: "grounder".to_string(),
                input: format!(
                    "{}Ground this sub-query: {}",
                    render_context(task, &entry.trajectory.blocks[..i], cfg),
                    serde_json::to_string(&result.query)?
                ),
                target: serde_json::to_string(result)?,
                answer: answer.clone(),
            };
            serde_json::to_writer(&mut file, &record)?;
            file.write_all(b"\n")?;
            stats.grounder_records += 1;
        }
    }
    file.flush()?;
    Ok(stats)
}

/// Pair every correct trajectory with the incorrect (non-aborted) trajectory
/// of closest turn count, earliest attempt on ties, up to `pairs_per_task`
/// pairs per task. Tasks without a gold answer contribute nothing.
pub fn emit_pairs(pool: &[PoolEntry], pairs_per_task: usize) -> Vec<PreferencePair> {
    let mut by_task: BTreeMap<&str, (Vec<&PoolEntry>, Vec<&PoolEntry>)> = BTreeMap::new();
    for entry in pool {
        let slot = by_task.entry(entry.task_id.as_str()).or_default();
        if entry.correct {
            slot.0.push(entry);
        } else if !entry.trajectory.aborted && entry.trajectory.correct == Some(false) {
            slot.1.push(entry);
        }
    }
    let mut pairs = Vec::new();
    for (task_id, (chosen_list, rejected_list)) in by_task {
        if chosen_list.is_empty() || rejected_list.is_empty() {
            continue;
        }
        for chosen in chosen_list.into_iter().take(pairs_per_task) {
            let rejected = rejected_list
                .iter()
                .min_by_key(|r| {
                    let gap =
                        (r.trajectory.turn_count as i64 - chosen.trajectory.turn_count as i64).abs();
                    (gap, r.attempt)
                })
                .expect("rejected list is non-empty");
            pairs.push(PreferencePair {
                task_id: task_id.to_string(),
                chosen: chosen.trajectory.clone(),
                rejected: rejected.trajectory.clone(),
            });
        }
    }
    pairs
}

pub fn write_pairs_jsonl(pairs: &[PreferencePair], out: &Path) -> Result<(), DatagenError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(out)?);
    for pair in pairs {
        serde_json::to_writer(&mut file, pair)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<PreferencePair>, DatagenError> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(serde_json::from_str(line)?);
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::VideoRef;

    fn task(id: &str) -> Task {
        Task {
            id: id.into(),
            video: VideoRef::new("v", 60.0, 1.0).unwrap(),
            question: "q".into(),
            choices: Some(vec!["red".into(), "blue".into()]),
            gold_answer: Some(GoldAnswer::Index(0)),
            gold_intervals: None,
        }
    }

    /// Answers correctly iff the task id is in the `solves` list; turn_count
    /// is settable per entry for pairing tests.
    struct StubRunner {
        solves: Vec<String>,
        turns: u32,
    }

    impl EpisodeRunner for StubRunner {
        fn run(&self, task: &Task, _seed: u64) -> Trajectory {
            let answer = if self.solves.contains(&task.id) { "red" } else { "blue" };
            let mut traj = Trajectory::new(task.id.clone(), "stub");
            traj.blocks.push(Block::Answer { text: answer.into(), forced: false });
            traj.final_answer = Some(answer.into());
            traj.turn_count = self.turns;
            traj.correct = crate::task::match_answer(task, answer);
            traj
        }
    }

    #[test]
    fn first_round_counts() {
        let tasks = vec![task("a"), task("b")];
        let runner = StubRunner { solves: vec!["a".into()], turns: 1 };
        let (accs, pool) = first_round(&tasks, &runner, 3).unwrap();
        assert_eq!(pool.len(), 6);
        assert_eq!(accs.len(), 2);
        assert_eq!(accs[0].accuracy, 1.0);
        assert_eq!(accs[1].accuracy, 0.0);
        assert!(first_round(&tasks, &runner, 0).is_err());
    }

    #[test]
    fn weights_match_hand_arithmetic() {
        let accs = vec![
            TaskAccuracy { task_id: "easy".into(), attempts: 4, correct: 4, accuracy: 1.0 },
            TaskAccuracy { task_id: "hard".into(), attempts: 4, correct: 0, accuracy: 0.0 },
        ];
        let w = difficulty_weights(&accs, 0.05).unwrap();
        assert!((w[0] - 0.05 / 1.05).abs() < 1e-9);
        assert!((w[1] - 1.0 / 1.05).abs() < 1e-9);
        assert!((w[0] - 0.047619).abs() < 1e-6);
        assert!((w[1] - 0.952381).abs() < 1e-6);

        let equal = vec![
            TaskAccuracy { task_id: "x".into(), attempts: 1, correct: 1, accuracy: 0.5 },
            TaskAccuracy { task_id: "y".into(), attempts: 1, correct: 1, accuracy: 0.5 },
        ];
        let w = difficulty_weights(&equal, 0.05).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);

        let single =
            vec![TaskAccuracy { task_id: "x".into(), attempts: 1, correct: 0, accuracy: 0.0 }];
        assert_eq!(difficulty_weights(&single, 0.05).unwrap(), vec![1.0]);
    }

    #[test]
    fn resample_is_seed_deterministic() {
        let tasks = vec![task("a"), task("b")];
        let runner = StubRunner { solves: vec![], turns: 1 };
        let p1 = resample_hard(&tasks, &[0.3, 0.7], &runner, 50, 17).unwrap();
        let p2 = resample_hard(&tasks, &[0.3, 0.7], &runner, 50, 17).unwrap();
        assert_eq!(p1, p2);
        assert!(resample_hard(&tasks, &[0.3, 0.7], &runner, 0, 17).is_err());
    }

    fn pool_entry(task_id: &str, attempt: u32, correct: bool, turns: u32) -> PoolEntry {
        let mut traj = Trajectory::new(task_id.to_string(), "stub");
        let answer = if correct { "red" } else { "blue" };
        traj.blocks.push(Block::Answer { text: answer.into(), forced: false });
        traj.final_answer = Some(answer.into());
        traj.correct = Some(correct);
        traj.turn_count = turns;
        PoolEntry { task_id: task_id.into(), attempt, correct, trajectory: traj }
    }

    #[test]
    fn closest_turn_count_pairing() {
        let pool = vec![
            pool_entry("t", 0, true, 4),
            pool_entry("t", 1, true, 9),
            pool_entry("t", 2, false, 5),
            pool_entry("t", 3, false, 10),
        ];
        let pairs = emit_pairs(&pool, 4);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].chosen.turn_count, 4);
        assert_eq!(pairs[0].rejected.turn_count, 5);
        assert_eq!(pairs[1].chosen.turn_count, 9);
        assert_eq!(pairs[1].rejected.turn_count, 10);
    }

    #[test]
    fn two_correct_share_one_rejected() {
        let pool = vec![
            pool_entry("t", 0, true, 3),
            pool_entry("t", 1, true, 3),
            pool_entry("t", 2, false, 3),
        ];
        let pairs = emit_pairs(&pool, 4);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].rejected, pairs[1].rejected);
    }

    #[test]
    fn all_correct_yields_no_pairs() {
        let pool = vec![pool_entry("t", 0, true, 3), pool_entry("t", 1, true, 4)];
        assert!(emit_pairs(&pool, 4).is_empty());
    }

    #[test]
    fn sft_retains_only_correct() {
        let tasks: BTreeMap<String, Task> = [("t".to_string(), task("t"))].into();
        let pool = vec![
            pool_entry("t", 0, true, 3),
            pool_entry("t", 1, true, 3),
            pool_entry("t", 2, true, 3),
            pool_entry("t", 3, false, 3),
            pool_entry("t", 4, false, 3),
        ];
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sft.jsonl");
        let stats = emit_sft(&pool, &tasks, &PlannerConfig::default(), &out).unwrap();
        assert_eq!(stats.planner_records, 3);
        assert_eq!(stats.dropped_incorrect, 2);
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 3);
        for line in text.lines() {
            let record: SftRecord = serde_json::from_str(line).unwrap();
            assert_eq!(record.role, "planner");
            assert_eq!(record.answer, "red");
        }

        let empty_pool = vec![pool_entry("t", 0, false, 3)];
        let out2 = dir.path().join("empty.jsonl");
        let stats = emit_sft(&empty_pool, &tasks, &PlannerConfig::default(), &out2).unwrap();
        assert_eq!(stats.planner_records + stats.grounder_records, 0);
        assert_eq!(std::fs::read_to_string(&out2).unwrap(), "");
    }

    #[test]
    fn one_grounder_record_per_grounding_block() {
        use crate::embed::GroundingQuery;
        use crate::grounder::{GroundingResult, Span};
        use crate::interval::TimeInterval;

        let ground_block = |s: f64| Block::Grounding {
            result: GroundingResult {
                query: GroundingQuery::text_only("the banner"),
                spans: vec![Span {
                    interval: TimeInterval::new(s, s + 4.0).unwrap(),
                    summary: "seen".into(),
                }],
                rejected_count: 1,
                validated_count: 1,
                candidates_examined: 2,
                notes: vec![],
            },
        };
        let mut entry = pool_entry("t", 0, true, 3);
        entry.trajectory.blocks.insert(0, ground_block(0.0));
        entry.trajectory.blocks.insert(1, ground_block(8.0));

        let tasks: BTreeMap<String, Task> = [("t".to_string(), task("t"))].into();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sft.jsonl");
        let stats = emit_sft(&[entry], &tasks, &PlannerConfig::default(), &out).unwrap();
        assert_eq!(stats.planner_records, 1);
        assert_eq!(stats.grounder_records, 2);
        let text = std::fs::read_to_string(&out).unwrap();
        let roles: Vec<String> = text
            .lines()
            .map(|l| serde_json::from_str::<SftRecord>(l).unwrap().role)
            .collect();
        assert_eq!(roles, vec!["planner", "grounder", "grounder"]);
        // The planner target is the wire-format action sequence.
        let planner: SftRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert!(planner.target.contains("<search>{\"text\":\"the banner\"}</search>"));
        assert!(planner.target.ends_with("<answer>red</answer>"));
    }
}
