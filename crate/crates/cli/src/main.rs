use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use objsearch::bench::{aggregate, joint_success_filter};
use objsearch::bench::{
    generate_map, records_to_csv, trace_to_csv, train_log_to_csv, Evaluator, Manifest, Method, RunRecord, ScenarioSpec,
};
use objsearch::rl::{checkpoint, run_training, QNetwork};

#[derive(Parser)]
#[command(name = "objsearch", version, about = "Grid-world object search benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a connected room-and-corridor map.
    Genmap {
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long, default_value_t = 4)]
        rooms: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output map file; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the goal-selection network on the scenario's training targets.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training episodes (defaults to the scenario value).
        #[arg(long)]
        episodes: Option<usize>,
        /// Overrides the scenario's training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate one or more methods on the start-pose suite.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        suite: Suite,
        /// Methods to run (repeatable); all four when omitted.
        #[arg(long = "method")]
        methods: Vec<Method>,
        /// Trained network, required for bbdps.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train (unless a checkpoint is given) and evaluate all four methods.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        suite: Suite,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Training episodes when no checkpoint is given.
        #[arg(long)]
        train_episodes: Option<usize>,
    },
    /// Re-run one episode and dump its trace and per-step belief maps.
    Replay {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        suite: Suite,
        #[arg(long)]
        method: Method,
        /// Episode index within the start-pose suite.
        #[arg(long)]
        episode: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Suite {
    /// Number of start poses (defaults to the scenario value).
    #[arg(long)]
    episodes: Option<usize>,
    /// Overrides the scenario's evaluation seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let command_line = std::env::args().collect::<Vec<_>>().join(" ");
    match cli.command {
        Command::Genmap {
            width,
            height,
            rooms,
            seed,
            out,
        } => {
            let map = generate_map(width, height, rooms, seed)?;
            match out {
                Some(p) => write(&p, &map.to_text())?,
                None => print!("{}", map.to_text()),
            }
        }
        Command::Train { common, episodes, seed } => {
            let mut scenario = load_scenario(&common.scenario)?;
            if let Some(n) = episodes {
                scenario.file.training.config.episodes = n;
            }
            if let Some(s) = seed {
                scenario.file.training.seed = s;
            }
            fs::create_dir_all(&common.out)?;
            let evaluator = Evaluator::new(&scenario, None)?;
            let mut outputs = vec![];
            train(&evaluator, &common.out, &mut outputs)?;
            write_manifest(&common, &command_line, &evaluator, &[], None, outputs)?;
        }
        Command::Eval {
            common,
            suite,
            methods,
            checkpoint,
        } => {
            let evaluator = suite_evaluator(&common, &suite)?;
            let methods = if methods.is_empty() {
                Method::ALL.to_vec()
            } else {
                dedup(methods)
            };
            let net = match &checkpoint {
                Some(p) => Some(load_checkpoint(p)?),
                None if methods.contains(&Method::Bbdps) => bail!("bbdps needs --checkpoint"),
                None => None,
            };
            let mut records: Vec<RunRecord> = vec![];
            for m in &methods {
                log::info!("evaluating {m} on {} episodes", evaluator.episodes());
                records.extend(evaluator.run_method(*m, net.as_ref())?);
            }
            let outputs = write_results(&evaluator, &common.out, &records)?;
            write_manifest(
                &common,
                &command_line,
                &evaluator,
                &methods,
                checkpoint.as_deref(),
                outputs,
            )?;
        }
        Command::Bench {
            common,
            suite,
            checkpoint,
            train_episodes,
        } => {
            let mut evaluator = suite_evaluator(&common, &suite)?;
            let mut outputs = vec![];
            let (net, ckpt) = match checkpoint {
                Some(p) => (load_checkpoint(&p)?, p),
                None => {
                    if let Some(n) = train_episodes {
                        let mut scenario = evaluator.scenario().clone();
                        scenario.file.training.config.episodes = n;
                        evaluator = Evaluator::new(&scenario, suite.episodes)?;
                    }
                    let net = train(&evaluator, &common.out, &mut outputs)?;
                    (net, common.out.join("checkpoint.osqn"))
                }
            };
            let result = evaluator.run_bench(&net)?;
            outputs.extend(write_results(&evaluator, &common.out, &result.records)?);
            print!("{}", result.table.to_text(evaluator.scenario().name()));
            write_manifest(&common, &command_line, &evaluator, &Method::ALL, Some(&ckpt), outputs)?;
        }
        Command::Replay {
            common,
            suite,
            method,
            episode,
            checkpoint,
        } => {
            let evaluator = suite_evaluator(&common, &suite)?;
            let net = match &checkpoint {
                Some(p) => Some(load_checkpoint(p)?),
                None if method == Method::Bbdps => bail!("bbdps needs --checkpoint"),
                None => None,
            };
            let (record, trace) = evaluator.replay(method, episode, net.as_ref())?;
            let belief_dir = common.out.join("belief");
            fs::create_dir_all(&belief_dir)?;
            let mut outputs = vec!["trace.csv".to_string()];
            write(&common.out.join("trace.csv"), &trace_to_csv(&trace))?;
            for t in &trace {
                let name = format!("belief/step_{:05}.csv", t.step);
                write(&common.out.join(&name), &t.belief_csv)?;
                outputs.push(name);
            }
            println!(
                "{} episode {}: {} after {} primitives, {:.2} m",
                method.label(),
                episode,
                record.outcome.as_str(),
                record.actions,
                record.distance
            );
            write_manifest(
                &common,
                &command_line,
                &evaluator,
                &[method],
                checkpoint.as_deref(),
                outputs,
            )?;
        }
    }
    Ok(())
}

fn load_scenario(path: &Path) -> Result<ScenarioSpec> {
    ScenarioSpec::load(path).with_context(|| format!("loading scenario {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<QNetwork> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn suite_evaluator(common: &Common, suite: &Suite) -> Result<Evaluator> {
    let mut scenario = load_scenario(&common.scenario)?;
    if let Some(s) = suite.seed {
        scenario.file.evaluation.seed = s;
    }
    fs::create_dir_all(&common.out)?;
    Ok(Evaluator::new(&scenario, suite.episodes)?)
}

fn dedup(methods: Vec<Method>) -> Vec<Method> {
    let mut out: Vec<Method> = vec![];
    for m in methods {
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn train(evaluator: &Evaluator, out: &Path, outputs: &mut Vec<String>) -> Result<QNetwork> {
    let training = &evaluator.scenario().file.training;
    log::info!("training for {} episodes", training.config.episodes);
    let started = Instant::now();
    let (net, rows) = run_training(&evaluator.training_setup(), &training.config, training.seed)?;
    log::info!("training finished in {:.1} s", started.elapsed().as_secs_f64());
    checkpoint::save(&net, &out.join("checkpoint.osqn"))?;
    write(&out.join("train_log.csv"), &train_log_to_csv(&rows)?)?;
    outputs.extend(["checkpoint.osqn".to_string(), "train_log.csv".to_string()]);
    Ok(net)
}

fn write_results(evaluator: &Evaluator, out: &Path, records: &[RunRecord]) -> Result<Vec<String>> {
    let joint = joint_success_filter(records)?;
    let table = aggregate(records, &joint);
    write(&out.join("records.csv"), &records_to_csv(records)?)?;
    write(&out.join("metrics.csv"), &table.to_csv()?)?;
    write(&out.join("tables.txt"), &table.to_text(evaluator.scenario().name()))?;
    Ok(vec!["records.csv".into(), "metrics.csv".into(), "tables.txt".into()])
}

fn write_manifest(
    common: &Common,
    command_line: &str,
    evaluator: &Evaluator,
    methods: &[Method],
    checkpoint: Option<&Path>,
    mut outputs: Vec<String>,
) -> Result<()> {
    let scenario = evaluator.scenario();
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command_line.into(),
        scenario: common.scenario.display().to_string(),
        scenario_name: scenario.name().into(),
        scenario_sha256: scenario.sha256.clone(),
        evaluation_seed: scenario.file.evaluation.seed,
        suite_seed: scenario.file.evaluation.suite_seed,
        training_seed: scenario.file.training.seed,
        episodes: evaluator.episodes(),
        horizon: scenario.horizon(),
        methods: methods.to_vec(),
        checkpoint: checkpoint.map(|p| p.display().to_string()),
        config: serde_json::to_value(&scenario.file)?,
        start_poses: evaluator.setups(),
        outputs,
    };
    write(
        &common.out.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest)?,
    )
}
