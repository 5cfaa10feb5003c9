//! Build a clip-embedding index over a synthetic video, save it, reload it,
//! and run a top-k retrieval.
//!
//! Run with: cargo run -p vx --example clip_index

use std::sync::Arc;

use vx::backends::synth::{synth_world_generate, OracleBackend};
use vx::{retrieve, GroundingQuery};

fn main() -> anyhow::Result<()> {
    let (world, _tasks) = synth_world_generate(7, 600.0, 5, 4.0)?;
    let backend = OracleBackend::new(Arc::new(world.clone()));

    // Offline stage: segment the video into 4s clips and embed each one.
    let index = vx::build_index(&world.video, 4.0, &backend)?;
    println!("indexed {} clips of {} ({} dims)", index.len(), world.video.id, index.dim());

    // The index round-trips through its binary file format.
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("demo.vxix");
    vx::write_index(&index, &path)?;
    let index = vx::read_index(&path)?;
    println!("reloaded from {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());

    // Online stage: embed a text query and scan for the closest clips.
    let event = &world.events[2];
    let query = GroundingQuery::text_only(event.description.clone());
    let query_emb = vx::embed::embed_query(&query, &backend, &|_, _| unreachable!("text-only"))?;
    println!("\nquery: {:?}", query.text);
    println!("event truly spans {}", event.interval);
    for (rank, (clip, score)) in retrieve(&index, &query_emb, 5)?.iter().enumerate() {
        println!("  #{} clip {:>3} {} cosine {:+.4}", rank + 1, clip.ordinal, clip.interval, score);
    }
    Ok(())
}
