use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use interlock::datagen::{collect, collect_transitions, CollectionConfig, NoTraining, TransitionConfig};
use interlock::harness::{
    bench, generate_split, learner_factory, read_task_set, read_trajectory, render_trajectory, run_eval,
    to_pretty_json, write_eval, write_file, write_task_set, AgentParams, AgentSpec, EvalConfig, HarnessError,
    TaskSplit,
};
use interlock::GenParams;
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "interlock", version, about = "Interlocking-assembly planning experiments")]
struct Cli {
    /// Worker threads for episode-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a task set.
    Gen {
        #[arg(long, default_value = "eval")]
        split: TaskSplit,
        #[arg(long, default_value_t = 100)]
        boards: usize,
        /// Starting configurations per board.
        #[arg(long, default_value_t = 1)]
        inits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON file with generator parameters.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out the expert on every task and log trajectories.
    ExpertRollout {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate an agent over a task set.
    Eval {
        #[arg(long)]
        agent: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate the tree-search baseline.
    MctsEval {
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        cexplore: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Proposals per node.
        #[arg(long)]
        width: Option<usize>,
        /// `scripted` or `expert`.
        #[arg(long, default_value = "scripted")]
        proposer: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Interactive data collection with relabeling.
    Collect {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        per_iter: Option<usize>,
        #[arg(long)]
        demonstrations: Option<usize>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        episode_len: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// `scripted`, `noised:P` or `external:ENDPOINT`.
        #[arg(long, default_value = "scripted")]
        learner: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Noised-expert transitions for dynamics-model training.
    CollectTransitions {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        boards: Option<usize>,
        #[arg(long)]
        episodes_per_level: Option<usize>,
        /// Comma-separated noise levels.
        #[arg(long, value_delimiter = ',')]
        noise_levels: Option<Vec<f64>>,
        #[arg(long)]
        max_len: Option<u32>,
        #[arg(long)]
        eval_records: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-step latency of several agents on the same tasks.
    Bench {
        #[arg(long)]
        tasks: PathBuf,
        /// Use only the first N tasks.
        #[arg(long, default_value_t = 20)]
        limit: usize,
        #[arg(long, value_delimiter = ',', default_value = "scripted,scripted+reflect:sim,mcts")]
        agents: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render a trajectory log as text.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Options shared by the evaluation verbs; each overrides the config file.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    episode_len: Option<u32>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    trajectories: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<EvalConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => EvalConfig::from_json_file(path)?,
            None => EvalConfig::default(),
        };
        if let Some(v) = &self.tasks {
            cfg.tasks = v.clone();
        }
        if let Some(v) = self.seeds {
            cfg.seeds = v;
        }
        if let Some(v) = self.seed {
            cfg.episode.master_seed = v;
        }
        if let Some(v) = self.epsilon {
            cfg.episode.epsilon = v;
        }
        if let Some(v) = self.episode_len {
            cfg.episode.episode_len = v;
        }
        if let Some(v) = self.horizon {
            cfg.episode.agent.horizon = v;
        }
        if self.trajectories {
            cfg.trajectories = true;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        Ok(cfg)
    }
}

fn load_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, HarnessError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn evaluate(cfg: &EvalConfig, workers: usize) -> Result<(), HarnessError> {
    let out = run_eval(cfg, workers)?;
    write_eval(&out, &cfg.out)?;
    print!("{}", out.report.table());
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let workers = cli.workers;
    match cli.command {
        Command::Gen {
            split,
            boards,
            inits,
            seed,
            params,
            out,
        } => {
            let params: GenParams = load_json(params.as_deref())?;
            let tasks = generate_split(split, boards, inits, &params, seed)?;
            write_task_set(&out, &tasks)?;
            println!("wrote {} tasks to {}", tasks.len(), out.display());
        }
        Command::ExpertRollout { run } => {
            let mut cfg = run.resolve()?;
            cfg.agent = "expert".into();
            if run.seeds.is_none() {
                cfg.seeds = 1;
            }
            cfg.trajectories = true;
            evaluate(&cfg, workers)?;
        }
        Command::Eval { agent, run } => {
            let mut cfg = run.resolve()?;
            if let Some(a) = agent {
                cfg.agent = a;
            }
            evaluate(&cfg, workers)?;
        }
        Command::MctsEval {
            iters,
            cexplore,
            lambda,
            width,
            proposer,
            run,
        } => {
            let mut cfg = run.resolve()?;
            cfg.agent = match proposer.as_str() {
                "scripted" => "mcts".into(),
                "expert" => "mcts:expert".into(),
                other => return Err(HarnessError::Config(format!("unknown proposer {other:?}"))),
            };
            let search = &mut cfg.episode.agent.search;
            if let Some(v) = iters {
                search.iterations = v;
            }
            if let Some(v) = cexplore {
                search.c_explore = v;
            }
            if let Some(v) = lambda {
                search.lambda = v;
            }
            if let Some(v) = width {
                search.k = v;
            }
            evaluate(&cfg, workers)?;
        }
        Command::Collect {
            tasks,
            config,
            iterations,
            per_iter,
            demonstrations,
            p,
            horizon,
            episode_len,
            seed,
            learner,
            out,
        } => {
            let mut cfg: CollectionConfig = load_json(config.as_deref())?;
            cfg.iterations = iterations.unwrap_or(cfg.iterations);
            cfg.per_iter = per_iter.unwrap_or(cfg.per_iter);
            cfg.demonstrations = demonstrations.unwrap_or(cfg.demonstrations);
            cfg.p = p.unwrap_or(cfg.p);
            cfg.horizon = horizon.unwrap_or(cfg.horizon);
            cfg.episode_len = episode_len.unwrap_or(cfg.episode_len);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let spec: AgentSpec = learner.parse().map_err(|e| HarnessError::AgentSpec(learner.clone(), e))?;
            let factory = learner_factory(&spec, &AgentParams::default(), cfg.seed)?;
            let tasks = read_task_set(&tasks)?;
            let c = collect(&tasks, &*factory, &cfg, workers, &mut NoTraining)?;
            c.dataset.write(&out).map_err(|source| HarnessError::Io {
                path: out.clone(),
                source,
            })?;
            let summary = serde_json::json!({
                "config": cfg,
                "learner": learner,
                "sizes": c.sizes,
                "episodes": c.dataset.episodes.len(),
                "observations": c.dataset.store.len(),
            });
            write_file(&out.join("summary.json"), &to_pretty_json(&summary))?;
            println!(
                "{} examples from {} episodes in {}",
                c.dataset.len(),
                c.dataset.episodes.len(),
                out.display()
            );
        }
        Command::CollectTransitions {
            config,
            boards,
            episodes_per_level,
            noise_levels,
            max_len,
            eval_records,
            seed,
            out,
        } => {
            let mut cfg: TransitionConfig = load_json(config.as_deref())?;
            cfg.boards = boards.unwrap_or(cfg.boards);
            cfg.episodes_per_level = episodes_per_level.unwrap_or(cfg.episodes_per_level);
            if let Some(v) = noise_levels {
                cfg.noise_levels = v;
            }
            cfg.max_len = max_len.unwrap_or(cfg.max_len);
            cfg.eval_records = eval_records.unwrap_or(cfg.eval_records);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let d = collect_transitions(&cfg, workers)?;
            d.write(&out).map_err(|source| HarnessError::Io {
                path: out.clone(),
                source,
            })?;
            let summary = serde_json::json!({
                "config": cfg,
                "records": d.records.len(),
                "episodes": d.episode_lengths.len(),
                "observations": d.store.len(),
            });
            write_file(&out.join("summary.json"), &to_pretty_json(&summary))?;
            println!("{} transitions in {}", d.records.len(), out.display());
        }
        Command::Bench {
            tasks,
            limit,
            agents,
            seed,
            out,
        } => {
            let mut tasks = read_task_set(&tasks)?;
            tasks.truncate(limit);
            let cfg = interlock::harness::EpisodeConfig {
                master_seed: seed,
                ..Default::default()
            };
            let (plans, entries) = bench(&tasks, &agents, &cfg, workers)?;
            write_file(&out.join("bench_plan.json"), &to_pretty_json(&plans))?;
            write_file(&out.join("bench.json"), &to_pretty_json(&entries))?;
            println!("{:<34}{:>8}{:>14}{:>14}", "agent", "steps", "mean s/step", "p90 s/step");
            for e in &entries {
                println!(
                    "{:<34}{:>8}{:>14.6}{:>14.6}",
                    e.agent, e.timing.steps, e.timing.mean, e.timing.p90
                );
                if let Some(share) = e.search_share {
                    println!("{:<34}expand + rollout share of search time: {:.1}%", "", 100.0 * share);
                }
            }
        }
        Command::Replay { log, out } => {
            let text = render_trajectory(&read_trajectory(&log)?);
            match out {
                Some(path) => write_file(&path, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
