//! Ground a sub-query against a synthetic world: retrieve candidate clips,
//! verify each with the oracle VLM, merge survivors, summarize.
//!
//! Run with: cargo run -p vx --example grounding

use std::sync::Arc;

use vx::backends::synth::{synth_world_generate, OracleBackend};
use vx::perception::SyntheticFrames;
use vx::{ground, GroundingQuery, PlannerConfig, TokenLedger};

fn main() -> anyhow::Result<()> {
    let (world, _) = synth_world_generate(11, 480.0, 4, 4.0)?;
    let backend = OracleBackend::new(Arc::new(world.clone()));
    let index = vx::build_index(&world.video, 4.0, &backend)?;
    let cfg = PlannerConfig::default();

    println!("planted events:");
    for event in &world.events {
        println!("  {} {}", event.interval, event.description);
    }

    // A query matching a planted event validates exactly that event's clips.
    let target = &world.events[1];
    let query = GroundingQuery::text_only(target.description.clone());
    let mut ledger = TokenLedger::new();
    let result = ground(&query, &index, &world.video, &backend, &SyntheticFrames, &cfg, &mut ledger)?;
    println!("\nquery {:?}", query.text);
    println!(
        "examined {} candidates, validated {}, rejected {}",
        result.candidates_examined, result.validated_count, result.rejected_count
    );
    for span in &result.spans {
        println!("  span {} -> {}", span.interval, span.summary);
    }
    println!("grounding cost: {} frames, {} visual tokens", ledger.frames_consumed, ledger.visual_tokens);

    // A query matching nothing comes back empty: a valid "not found".
    let mut ledger = TokenLedger::new();
    let nothing = GroundingQuery::text_only("a purple submarine surfaces in the desert");
    let result = ground(&nothing, &index, &world.video, &backend, &SyntheticFrames, &cfg, &mut ledger)?;
    println!("\nquery {:?}", nothing.text);
    println!("spans: {} (rejected {}/{})", result.spans.len(), result.rejected_count, result.candidates_examined);
    Ok(())
}
