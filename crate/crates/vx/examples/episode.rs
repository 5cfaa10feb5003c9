//! Run one full planner episode on a synthetic world and print the trace:
//! the planner searches for the queried moment, perceives it densely, and
//! answers from what it saw.
//!
//! Run with: cargo run -p vx --example episode

use std::sync::Arc;

use vx::backends::synth::{synth_world_generate, OracleBackend};
use vx::eval::render_trace;
use vx::perception::SyntheticFrames;
use vx::{run_episode, PlannerConfig};

fn main() -> anyhow::Result<()> {
    let (world, tasks) = synth_world_generate(7, 600.0, 5, 4.0)?;
    let backend = OracleBackend::new(Arc::new(world.clone()));
    let index = vx::build_index(&world.video, 4.0, &backend)?;
    let cfg = PlannerConfig::default();

    // A multi-hop task: "what is the X of the moment immediately before ...".
    let task = tasks
        .iter()
        .find(|t| t.question.contains("immediately before"))
        .expect("suite contains multi-hop tasks");
    println!("question: {}", task.question);
    if let Some(choices) = &task.choices {
        for (i, c) in choices.iter().enumerate() {
            println!("  {}. {c}", char::from(b'A' + i as u8));
        }
    }
    println!();

    let traj = run_episode(task, &index, &backend, &SyntheticFrames, &cfg);
    print!("{}", render_trace(&traj));
    Ok(())
}
