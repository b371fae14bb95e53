use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use paraskill::arm_sim::{simulate_throw, Task, TraceOptions};
use paraskill::exec::ExecMode;
use paraskill::pipeline::{self, ExperimentConfig, ExperimentReport};
use paraskill::skill::{load_skill, save_skill};
use paraskill::Error;

#[derive(Parser)]
#[command(name = "paraskill", version, about = "Learn a parameterized throwing skill from a few solved tasks")]
struct Cli {
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw the training and held-out task bearings.
    SampleTasks {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, short, default_value = "tasks.csv")]
        out: PathBuf,
    },
    /// Learn a policy for every training task.
    LearnPolicy {
        #[command(flatten)]
        config: ConfigArg,
        /// Task table from `sample-tasks`; its `train` rows are learned.
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long, short, default_value = "training_tasks.csv")]
        out: PathBuf,
    },
    /// Find the charts of a set of learned policies and their dimension.
    AnalyzeManifold {
        #[command(flatten)]
        config: ConfigArg,
        /// Policy table from `learn-policy`.
        #[arg(long)]
        policies: PathBuf,
        /// Policy table with the chart column filled in.
        #[arg(long, short, default_value = "charts.csv")]
        out: PathBuf,
    },
    /// Fit the classifier and per-chart regressors and save the skill.
    TrainSkill {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        policies: PathBuf,
        #[arg(long, short, default_value = "skill.txt")]
        out: PathBuf,
    },
    /// Print the chart and policy the skill gives for each bearing.
    Predict {
        #[arg(long)]
        skill: PathBuf,
        /// Target bearings in radians.
        #[arg(long = "angle", required = true, num_args = 1..)]
        angles: Vec<f64>,
        /// Also simulate each predicted throw with this configuration's arm.
        #[arg(long)]
        simulate: bool,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Score a saved skill on the held-out tasks.
    Evaluate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        skill: PathBuf,
        /// Policy table whose converged policies set the error scale and
        /// whose absence skips the reference searches.
        #[arg(long)]
        policies: Option<PathBuf>,
        #[arg(long, short, default_value = "evaluation.csv")]
        out: PathBuf,
    },
    /// Run the whole protocol and write every output file.
    RunExperiment {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory; overrides the configuration's `output_dir`.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Rewrite the figure tables and plots from a saved report.
    EmitFigures {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::SampleTasks { .. } => "sample-tasks",
            Command::LearnPolicy { .. } => "learn-policy",
            Command::AnalyzeManifold { .. } => "analyze-manifold",
            Command::TrainSkill { .. } => "train-skill",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::RunExperiment { .. } => "run-experiment",
            Command::EmitFigures { .. } => "emit-figures",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    let stage = cli.command.stage();
    match run(cli.command, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let stage = match e.downcast_ref::<Error>() {
                Some(Error::Stage { stage, .. }) => stage,
                _ => stage,
            };
            eprintln!("error in {stage}: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn fmt_theta(theta: &[f64]) -> String {
    theta.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" ")
}

fn run(command: Command, exec: ExecMode) -> anyhow::Result<()> {
    match command {
        Command::SampleTasks { config, out } => {
            let cfg = config.load()?;
            let hash = cfg.hash()?;
            let train = pipeline::training_tasks(&cfg)?;
            let eval = pipeline::eval_tasks(&cfg, &train)?;
            ensure_parent(&out)?;
            pipeline::write_tasks_csv(&out, &hash, &train, &eval)?;
            println!("{} training and {} held-out tasks -> {}", train.len(), eval.len(), out.display());
        }
        Command::LearnPolicy { config, tasks, out } => {
            let cfg = config.load()?;
            let hash = cfg.hash()?;
            let train = match &tasks {
                Some(p) => pipeline::read_tasks_csv(p, Some("train"), &cfg.arm)?,
                None => pipeline::training_tasks(&cfg)?,
            };
            let records = pipeline::build_training_set(&train, &cfg, exec)?;
            ensure_parent(&out)?;
            pipeline::write_training_csv(&out, &hash, &records, &[])?;
            let ok = records.iter().filter(|r| r.converged).count();
            let updates: usize = records.iter().map(|r| r.updates).sum();
            println!("{ok} of {} tasks solved in {updates} updates -> {}", records.len(), out.display());
        }
        Command::AnalyzeManifold { config, policies, out } => {
            let cfg = config.load()?;
            let hash = cfg.hash()?;
            let records = pipeline::read_training_csv(&policies, &cfg.arm)?;
            let fitted = pipeline::fit_skill(&records, &cfg, &hash, exec)?;
            let charts: Vec<Option<usize>> = records
                .iter()
                .map(|r| {
                    fitted
                        .manifold
                        .charts
                        .iter()
                        .find(|c| c.members.contains(&r.index))
                        .map(|c| c.chart)
                })
                .collect();
            ensure_parent(&out)?;
            pipeline::write_training_csv(&out, &hash, &records, &charts)?;
            let m = &fitted.manifold;
            println!("charts: {} (k = {})", m.num_charts, m.k);
            for c in &m.charts {
                println!(
                    "chart {}: {} policies, bearings {:.3}..{:.3}, dimension {}, residual variance {}",
                    c.chart,
                    c.size,
                    c.angle_min,
                    c.angle_max,
                    c.dimension,
                    fmt_theta(&c.residual_curve)
                );
            }
            println!("chart boundaries (rad): {}", fmt_theta(&m.boundaries));
        }
        Command::TrainSkill { config, policies, out } => {
            let cfg = config.load()?;
            let hash = cfg.hash()?;
            let records = pipeline::read_training_csv(&policies, &cfg.arm)?;
            let fitted = pipeline::fit_skill(&records, &cfg, &hash, exec)?;
            ensure_parent(&out)?;
            save_skill(&fitted.skill, &out)?;
            println!(
                "skill with {} chart(s) from {} policies -> {}",
                fitted.skill.num_charts(),
                fitted.training.tasks.len(),
                out.display()
            );
        }
        Command::Predict {
            skill,
            angles,
            simulate,
            config,
        } => {
            let model = load_skill(&skill)?;
            let cfg = config.load()?;
            let ctx = cfg.sim_context();
            for a in angles {
                let task = Task::from_angle(a, &cfg.arm)?;
                let chart = model.classifier.classify(&task);
                let theta = model.predict(&task);
                let mut line = format!("angle {a} chart {chart}");
                if simulate {
                    let throw = simulate_throw(&theta, &task, &ctx, TraceOptions::default())?;
                    line += &format!(" distance {:.6}", throw.distance_to_target);
                }
                println!("{line} theta {}", fmt_theta(theta.as_slice()));
            }
        }
        Command::Evaluate {
            config,
            skill,
            policies,
            out,
        } => {
            let cfg = config.load()?;
            let model = load_skill(&skill)?;
            let train = pipeline::training_tasks(&cfg)?;
            let eval = pipeline::eval_tasks(&cfg, &train)?;
            let (references, scales) = match &policies {
                Some(p) => {
                    let records = pipeline::read_training_csv(p, &cfg.arm)?;
                    let solved: Vec<_> = records.iter().filter(|r| r.converged).map(|r| r.theta).collect();
                    let refs = pipeline::learn_references(&eval, &cfg, exec)?;
                    (Some(refs), pipeline::parameter_scales(&solved))
                }
                None => (None, [0.0; paraskill::dmp::POLICY_DIM]),
            };
            let evals = pipeline::evaluate_skill(&model, &eval, references.as_deref(), &scales, &cfg, 0, exec)?;
            ensure_parent(&out)?;
            let mut w = csv::Writer::from_path(&out).with_context(|| format!("writing {}", out.display()))?;
            w.write_record([
                "config_hash", "eval_index", "angle", "chart", "zero_shot_distance", "parameter_error",
                "fine_tune_updates", "fine_tune_converged", "fine_tune_restarted",
            ])?;
            for e in &evals {
                w.write_record([
                    model.metadata.config_hash.clone(),
                    e.index.to_string(),
                    e.task.angle.to_string(),
                    e.chart.to_string(),
                    e.zero_shot_distance.to_string(),
                    e.parameter_error.map_or_else(String::new, |v| v.to_string()),
                    e.fine_tune_updates.to_string(),
                    e.fine_tune_converged.to_string(),
                    e.fine_tune_restarted.to_string(),
                ])?;
            }
            w.flush()?;
            let n = evals.len() as f64;
            println!(
                "mean zero-shot distance {:.4} m, mean fine-tune updates {:.2} -> {}",
                evals.iter().map(|e| e.zero_shot_distance).sum::<f64>() / n,
                evals.iter().map(|e| e.fine_tune_updates as f64).sum::<f64>() / n,
                out.display()
            );
        }
        Command::RunExperiment { config, out } => {
            let mut cfg = config.load()?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            pipeline::prepare_output_dir(&cfg.output_dir, &cfg.hash()?)?;
            let start = Instant::now();
            let (report, skill) = pipeline::run_experiment(&cfg, exec)?;
            let seconds = start.elapsed().as_secs_f64();
            let files = pipeline::write_outputs(&cfg, &report, &skill, &cfg.output_dir, seconds)?;
            for p in &report.sweep {
                println!(
                    "|K| {:>3}: charts {} error {} zero-shot {} m fine-tune {} updates (cold {})",
                    p.num_tasks,
                    p.manifold.num_charts,
                    show(p.mean_parameter_error),
                    show(p.mean_zero_shot_distance),
                    show(p.mean_fine_tune_updates),
                    show(p.mean_cold_start_updates),
                );
            }
            println!(
                "{} files in {} ({seconds:.1} s, {} rollouts)",
                files.len(),
                cfg.output_dir.display(),
                report.total_rollouts
            );
        }
        Command::EmitFigures { report, out } => {
            let loaded = ExperimentReport::load(&report)?;
            let dir = match out {
                Some(d) => d,
                None => report
                    .parent()
                    .map(Path::to_path_buf)
                    .ok_or_else(|| anyhow!("no output directory"))?,
            };
            let files = pipeline::emit_figures(&loaded, &dir)?;
            println!("{} figure files -> {}", files.len(), dir.display());
        }
    }
    Ok(())
}

fn show(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}
