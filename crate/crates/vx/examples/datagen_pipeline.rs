//! The difficulty-adaptive dataset pipeline end to end: uniform first round,
//! accuracy-driven re-sampling weights, hard-case re-sampling, correct-only
//! SFT emission, and preference-pair construction.
//!
//! Run with: cargo run -p vx --example datagen_pipeline

use std::collections::BTreeMap;
use std::sync::Arc;

use vx::backends::synth::{synth_world_generate, OracleBackend};
use vx::datagen::{
    difficulty_weights, emit_pairs, emit_sft, first_round, resample_hard, EngineRunner,
    FallibleRunner,
};
use vx::perception::SyntheticFrames;
use vx::{PlannerConfig, Task};

fn main() -> anyhow::Result<()> {
    let (world, tasks) = synth_world_generate(17, 480.0, 4, 4.0)?;
    let tasks: Vec<Task> = tasks.into_iter().take(12).collect();
    let backend = OracleBackend::new(Arc::new(world.clone()));
    let index = vx::build_index(&world.video, 4.0, &backend)?;
    let indexes: BTreeMap<String, vx::ClipIndex> = [(world.video.id.clone(), index)].into();
    let cfg = PlannerConfig::default();

    // The oracle is perfect, so a slip wrapper corrupts a third of episodes
    // into wrong answers; otherwise there is nothing to pair against.
    let runner = FallibleRunner {
        inner: EngineRunner { indexes: &indexes, backend: &backend, frames: &SyntheticFrames, cfg: &cfg },
        slip_rate: 0.34,
        salt: 99,
    };

    let (accuracies, mut pool) = first_round(&tasks, &runner, 4)?;
    println!("first round ({} episodes):", pool.len());
    for acc in &accuracies {
        println!("  {}: {}/{} correct", acc.task_id, acc.correct, acc.attempts);
    }

    let weights = difficulty_weights(&accuracies, 0.05)?;
    println!("\nre-sampling weights (floor 0.05):");
    for (acc, w) in accuracies.iter().zip(&weights) {
        println!("  {}: weight {:.4}", acc.task_id, w);
    }

    let resampled = resample_hard(&tasks, &weights, &runner, 48, 17)?;
    println!("\nre-sampled 48 episodes, {} correct", resampled.iter().filter(|e| e.correct).count());
    pool.extend(resampled);

    let dir = tempfile::tempdir()?;
    let tasks_by_id: BTreeMap<String, Task> = tasks.iter().map(|t| (t.id.clone(), t.clone())).collect();
    let sft_path = dir.path().join("sft.jsonl");
    let stats = emit_sft(&pool, &tasks_by_id, &cfg, &sft_path)?;
    println!(
        "\nSFT: {} planner + {} grounder records ({} incorrect dropped)",
        stats.planner_records, stats.grounder_records, stats.dropped_incorrect
    );

    let pairs = emit_pairs(&pool, 4);
    println!("preference pairs: {}", pairs.len());
    if let Some(pair) = pairs.first() {
        println!(
            "  e.g. task {}: chosen answered {:?} in {} turns, rejected {:?} in {} turns",
            pair.task_id,
            pair.chosen.final_answer.as_deref().unwrap_or("-"),
            pair.chosen.turn_count,
            pair.rejected.final_answer.as_deref().unwrap_or("-"),
            pair.rejected.turn_count
        );
    }
    Ok(())
}
