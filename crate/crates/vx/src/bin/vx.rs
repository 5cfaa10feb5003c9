//! Thin command-line front end over the vx library.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use vx::backends::synth::{synth_world_generate, OracleBackend};
use vx::backends::backend_from_spec;
use vx::config::PlannerConfig;
use vx::datagen::{
    difficulty_weights, emit_pairs, emit_sft, first_round, read_pairs_jsonl, resample_hard,
    write_pairs_jsonl, EngineRunner, FallibleRunner,
};
use vx::eval::{run_benchmark, trace_dump, EvalMode};
use vx::learn::{pairs_to_sequences, toy_train, TdpoConfig};
use vx::perception::{DirFrames, FrameProvider, SyntheticFrames};
use vx::task::{read_tasks_jsonl, Task, VideoRef};

#[derive(Parser)]
#[command(name = "vx", version, about = "Long-video reasoning engine: plan, ground, perceive, answer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clip-index operations.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Run one planner episode on a task and write the trajectory.
    Ask {
        /// Task JSON file.
        #[arg(long)]
        task: PathBuf,
        /// Clip index file (.vxix).
        #[arg(long)]
        index: PathBuf,
        /// Backend spec: url | script:<file> | synth:<seed> | world:<file>.
        #[arg(long, env = "VX_BACKEND_URL")]
        backend: String,
        /// Optional engine config TOML.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the trajectory JSON.
        #[arg(long)]
        trace: PathBuf,
        /// Optional directory of pre-extracted frames.
        #[arg(long)]
        frames: Option<PathBuf>,
    },
    /// Difficulty-adaptive dataset construction.
    Datagen {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        index_dir: PathBuf,
        #[arg(long, env = "VX_BACKEND_URL")]
        backend: String,
        /// Uniform first-round attempts per task.
        #[arg(long, default_value_t = 4)]
        n_first: u32,
        /// Re-sampling episode budget.
        #[arg(long, default_value_t = 1000)]
        budget: u32,
        /// Difficulty-weight floor.
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long)]
        out_sft: PathBuf,
        #[arg(long)]
        out_pairs: PathBuf,
        /// Deterministically corrupt this fraction of episodes into wrong
        /// answers (gives the pairer rejected trajectories even with a
        /// perfect oracle backend).
        #[arg(long, default_value_t = 0.0)]
        slip: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Preference-train the toy policy on a pairs file.
    TrainToy {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        /// Output CSV: step, loss, mean_margin, mean_ref_drift.
        #[arg(long)]
        report: PathBuf,
    },
    /// Evaluate a task set in explorer or vanilla mode.
    Eval {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        index_dir: PathBuf,
        #[arg(long, env = "VX_BACKEND_URL")]
        backend: String,
        #[arg(long, default_value = "explorer")]
        mode: EvalMode,
        #[arg(long, default_value_t = 8)]
        parallel: usize,
        #[arg(long)]
        report: PathBuf,
        /// Optional directory to write one trajectory JSON per task.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        frames: Option<PathBuf>,
    },
    /// Generate a synthetic world: world.json, tasks.jsonl, and the index.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 600.0)]
        duration: f64,
        #[arg(long, default_value_t = 5)]
        events: usize,
        #[arg(long, default_value_t = 4.0)]
        clip_len: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Pretty-print a stored trajectory.
    Trace { file: PathBuf },
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Segment a video and embed every clip.
    Build {
        /// Video metadata JSON: {"id", "duration_s", "fps"}.
        #[arg(long)]
        video: PathBuf,
        #[arg(long, default_value_t = 4.0)]
        clip_len: f64,
        #[arg(long, env = "VX_BACKEND_URL")]
        backend: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Index { command: IndexCommand::Build { video, clip_len, backend, out } } => {
            let video: VideoRef = serde_json::from_str(
                &std::fs::read_to_string(&video).with_context(|| format!("reading {}", video.display()))?,
            )?;
            let backend = backend_from_spec(&backend)?;
            let index = vx::build_index(&video, clip_len, backend.as_ref())?;
            vx::write_index(&index, &out)?;
            println!("indexed {} clips of {} into {}", index.len(), video.id, out.display());
        }
        Command::Ask { task, index, backend, config, trace, frames } => {
            let task: Task = serde_json::from_str(
                &std::fs::read_to_string(&task).with_context(|| format!("reading {}", task.display()))?,
            )?;
            task.validate()?;
            let index = vx::read_index(&index)?;
            let backend = backend_from_spec(&backend)?;
            let cfg = load_config(config.as_deref())?;
            let frames = frame_provider(frames.as_deref(), &cfg);
            let traj = vx::run_episode(&task, &index, backend.as_ref(), frames.as_ref(), &cfg);
            traj.write_json(&trace)?;
            println!("{}", vx::eval::render_trace(&traj));
            println!("trace written to {}", trace.display());
        }
        Command::Datagen {
            tasks,
            index_dir,
            backend,
            n_first,
            budget,
            eps,
            seed,
            out_sft,
            out_pairs,
            slip,
            config,
        } => {
            let tasks = read_tasks_jsonl(&tasks)?;
            let indexes = load_index_dir(&index_dir)?;
            let backend = backend_from_spec(&backend)?;
            let cfg = load_config(config.as_deref())?;
            let frames = frame_provider(None, &cfg);
            let engine = EngineRunner {
                indexes: &indexes,
                backend: backend.as_ref(),
                frames: frames.as_ref(),
                cfg: &cfg,
            };
            let runner = FallibleRunner { inner: engine, slip_rate: slip, salt: seed };

            let (accuracies, mut pool) = first_round(&tasks, &runner, n_first)?;
            let weights = difficulty_weights(&accuracies, eps)?;
            let resampled = resample_hard(&tasks, &weights, &runner, budget, seed)?;
            pool.extend(resampled);

            let tasks_by_id: BTreeMap<String, Task> =
                tasks.iter().map(|t| (t.id.clone(), t.clone())).collect();
            let stats = emit_sft(&pool, &tasks_by_id, &cfg, &out_sft)?;
            if stats.planner_records == 0 {
                eprintln!("warning: no correct trajectories; SFT file is empty");
            }
            let pairs = emit_pairs(&pool, vx::datagen::DEFAULT_PAIRS_PER_TASK);
            write_pairs_jsonl(&pairs, &out_pairs)?;
            println!(
                "pool {} episodes | sft {} planner + {} grounder records | {} preference pairs",
                pool.len(),
                stats.planner_records,
                stats.grounder_records,
                pairs.len()
            );
        }
        Command::TrainToy { pairs, beta, lr, steps, report } => {
            let pairs = read_pairs_jsonl(&pairs)?;
            if pairs.is_empty() {
                bail!("pairs file is empty");
            }
            let sequences = pairs_to_sequences(&pairs);
            let cfg = TdpoConfig { beta, learning_rate: lr, steps };
            let result = toy_train(&sequences, &cfg)?;
            result.write_csv(&report)?;
            let last = result.rows.last().expect("steps >= 1");
            println!(
                "trained {} steps on {} pairs | loss {:.6} | mean margin {:.6}",
                steps,
                sequences.len(),
                last.loss,
                last.mean_margin
            );
            println!("report written to {}", report.display());
        }
        Command::Eval { tasks, index_dir, backend, mode, parallel, report, trace_dir, config, frames } => {
            let tasks = read_tasks_jsonl(&tasks)?;
            let indexes = load_index_dir(&index_dir)?;
            let backend = backend_from_spec(&backend)?;
            let cfg = load_config(config.as_deref())?;
            let frames = frame_provider(frames.as_deref(), &cfg);
            let (result, trajectories) =
                run_benchmark(&tasks, &indexes, backend.as_ref(), frames.as_ref(), &cfg, mode, parallel)?;
            result.write_json(&report)?;
            if let Some(dir) = trace_dir {
                std::fs::create_dir_all(&dir)?;
                for traj in &trajectories {
                    traj.write_json(&dir.join(format!("{}.json", traj.task_id)))?;
                }
            }
            println!(
                "{mode}: {}/{} answered | accuracy {:.3} | iou@0.1 {} | visual tokens {}",
                result.n_answered,
                result.n_tasks,
                result.accuracy,
                result
                    .iou_at_01_rate
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "n/a".to_string()),
                result.total_visual_tokens
            );
            println!("report written to {}", report.display());
        }
        Command::Synth { seed, duration, events, clip_len, out_dir } => {
            let (world, tasks) = synth_world_generate(seed, duration, events, clip_len)?;
            std::fs::create_dir_all(&out_dir)?;
            world.write_json(&out_dir.join("world.json"))?;
            vx::task::write_tasks_jsonl(&out_dir.join("tasks.jsonl"), &tasks)?;
            std::fs::write(
                out_dir.join("video.json"),
                serde_json::to_string_pretty(&world.video)? + "\n",
            )?;
            let oracle = OracleBackend::new(Arc::new(world.clone()));
            let index = vx::build_index(&world.video, clip_len, &oracle)?;
            let index_path = out_dir.join(format!("{}.vxix", world.video.id));
            vx::write_index(&index, &index_path)?;
            println!(
                "world seed {seed}: {} events, {} tasks, {} clips indexed -> {}",
                world.events.len(),
                tasks.len(),
                index.len(),
                out_dir.display()
            );
        }
        Command::Trace { file } => {
            print!("{}", trace_dump(&file)?);
        }
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<PlannerConfig> {
    Ok(match path {
        Some(p) => PlannerConfig::load_toml(p).with_context(|| format!("loading {}", p.display()))?,
        None => PlannerConfig::default(),
    })
}

fn frame_provider(dir: Option<&Path>, cfg: &PlannerConfig) -> Arc<dyn FrameProvider> {
    match dir {
        Some(d) => Arc::new(DirFrames::new(d, cfg.fps)),
        None => Arc::new(SyntheticFrames),
    }
}

fn load_index_dir(dir: &Path) -> Result<BTreeMap<String, vx::ClipIndex>> {
    let mut indexes = BTreeMap::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("vxix") {
            continue;
        }
        let index = vx::read_index(&path)?;
        let ids: std::collections::BTreeSet<String> =
            index.entries().iter().map(|(m, _)| m.video_id.clone()).collect();
        for id in ids {
            indexes.insert(id, index.clone());
        }
    }
    if indexes.is_empty() {
        bail!("no .vxix index files found in {}", dir.display());
    }
    Ok(indexes)
}
