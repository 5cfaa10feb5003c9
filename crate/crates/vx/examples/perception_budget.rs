//! Temporal-scalable sampling under a hard frame budget: dense on the native
//! grid inside short intervals, midpoint-stratified coarse over long ones,
//! with exact token accounting either way.
//!
//! Run with: cargo run -p vx --example perception_budget

use std::sync::Arc;

use vx::backends::synth::{synth_world_generate, OracleBackend};
use vx::perception::SyntheticFrames;
use vx::{perceive, plan_samples, PerceptionRequest, SampleMode, TimeInterval, TokenLedger};

fn main() -> anyhow::Result<()> {
    // Sampling schedules are pure arithmetic; no backend involved.
    let short = TimeInterval::new(40.0, 50.0)?;
    let ts = plan_samples(short, 1.0, 32)?;
    println!("{short} at 1 fps, cap 32 -> dense, {} frames: {ts:?}", ts.len());

    let long = TimeInterval::new(0.0, 640.0)?;
    let ts = plan_samples(long, 1.0, 32)?;
    println!(
        "{long} at 1 fps, cap 32 -> coarse, {} frames: {:?} ... {:?}",
        ts.len(),
        &ts[..3],
        &ts[ts.len() - 2..]
    );

    let sliver = TimeInterval::new(5.0, 5.4)?;
    let ts = plan_samples(sliver, 1.0, 32)?;
    println!("{sliver} has no native frame -> single midpoint sample: {ts:?}");

    // A full perception call charges the ledger exactly frames x tokens/frame.
    let (world, _) = synth_world_generate(3, 300.0, 2, 4.0)?;
    let backend = OracleBackend::new(Arc::new(world.clone()));
    let event = &world.events[0];
    let req = PerceptionRequest::new(
        event.interval,
        SampleMode::Dense,
        "What is the badge_color?".to_string(),
    );
    let mut ledger = TokenLedger::new();
    let result =
        perceive(&req, &world.video, &backend, &SyntheticFrames, 1.0, 256, &mut ledger)?;
    println!("\nperceive {} -> {:?}", event.interval, result.answer);
    println!(
        "ledger: {} frames, {} visual tokens ({} per frame), {} text tokens",
        ledger.frames_consumed, ledger.visual_tokens, 256, ledger.text_tokens
    );
    Ok(())
}
