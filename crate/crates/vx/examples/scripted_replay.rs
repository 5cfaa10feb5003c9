//! Drive the planner with a scripted backend: canned completions consumed in
//! order make the whole episode deterministic and replayable, which is how
//! the engine is tested without any model.
//!
//! Run with: cargo run -p vx --example scripted_replay

use vx::backends::scripted::{Matcher, Rule, RuleOp, ScriptedBackend};
use vx::embed::ClipMeta;
use vx::perception::SyntheticFrames;
use vx::task::GoldAnswer;
use vx::{run_episode, ClipIndex, Embedding, PlannerConfig, Task, TimeInterval, VideoRef};

fn scripted() -> ScriptedBackend {
    ScriptedBackend::new(
        "replay-demo",
        vec![
            Rule {
                op: RuleOp::Complete,
                matcher: Matcher::Prefix(String::new()),
                responses: vec![
                    "<think>the question is about the banner; search for it</think>".into(),
                    "<search>{\"text\":\"the banner being raised\"}</search>".into(),
                    "<perceive start=0 end=8 mode=dense>What color is the banner?</perceive>".into(),
                    "<answer>blue</answer>".into(),
                ],
                embeddings: vec![],
            },
            Rule {
                // Verification verdicts, one per retrieved candidate in rank
                // order; the two accepted clips are adjacent and merge.
                op: RuleOp::VisionAnswer,
                matcher: Matcher::Prefix("Does this video segment show".into()),
                responses: vec!["yes, banner visible".into(), "no".into(), "yes".into(), "no".into()],
                embeddings: vec![],
            },
            Rule {
                op: RuleOp::VisionAnswer,
                matcher: Matcher::Prefix(String::new()),
                responses: vec!["the banner segment".into(), "blue".into()],
                embeddings: vec![],
            },
            Rule {
                op: RuleOp::EmbedText,
                matcher: Matcher::Prefix(String::new()),
                embeddings: vec![vec![1.0, 0.2, 0.0, 0.0]],
                responses: vec![],
            },
        ],
    )
}

fn main() -> anyhow::Result<()> {
    let video = VideoRef::new("demo", 32.0, 1.0)?;
    let mut index = ClipIndex::new(4, 4.0);
    for i in 0..8u32 {
        let mut v = vec![0.1f32; 4];
        v[(i % 4) as usize] = 1.0;
        index.push(
            ClipMeta {
                video_id: video.id.clone(),
                interval: TimeInterval::new(i as f64 * 4.0, (i + 1) as f64 * 4.0)?,
                ordinal: i,
            },
            Embedding::unit(v)?,
        )?;
    }
    let task = Task {
        id: "replay-1".into(),
        video,
        question: "What color is the banner?".into(),
        choices: Some(vec!["red".into(), "blue".into(), "green".into()]),
        gold_answer: Some(GoldAnswer::Index(1)),
        gold_intervals: None,
    };
    let cfg = PlannerConfig { top_k: 4, ..PlannerConfig::default() };

    let traj = run_episode(&task, &index, &scripted(), &SyntheticFrames, &cfg);
    println!("{}", vx::eval::render_trace(&traj));

    // Same transcript, same bytes: replay is exact.
    let again = run_episode(&task, &index, &scripted(), &SyntheticFrames, &cfg);
    println!("byte-identical on replay: {}", traj.to_json()? == again.to_json()?);
    Ok(())
}
