use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use accr_core::data::Background;
use accr_core::eval::{speed_benchmark, SpeedOptions};
use accr_core::experiment::{
    desk_classifier, evaluate_state, run_plan, summarize, write_summary, EvalOptions, ExperimentPlan, TaskData,
    TaskSpec, CONFIG_FILE,
};
use accr_core::training::{
    latest_checkpoint, load_classifier, save_classifier, train, train_classifier, TrainConfig, TrainState, Variant,
};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "accr", version, about = "Unpaired image translation with augmented consistency regularization")]
struct Cli {
    /// Root for outputs when a command's own output flag is absent.
    #[arg(long, env = "ACCR_OUTPUT_DIR", global = true)]
    output_dir: Option<PathBuf>,
    /// Compute device; only `cpu` is available.
    #[arg(long, env = "ACCR_DEVICE", default_value = "cpu", global = true)]
    device: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskKind {
    Digits,
    Paired,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a task's datasets and write them as caches.
    PrepareData {
        #[arg(long, value_enum, default_value = "digits")]
        task: TaskKind,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 4000)]
        n_train: usize,
        #[arg(long, default_value_t = 500)]
        n_test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory of PNG photos to crop digit backgrounds from.
        #[arg(long)]
        patches: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model pair on prepared data; resumes from the newest checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        overrides: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the digit classifier used for fake-sample accuracy.
    TrainClassifier {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained run on the test split; prints JSON.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Discriminator updates per second for each variant.
    BenchmarkSpeed {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        overrides: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "baseline,cr,accr,gp")]
        variants: Vec<String>,
        #[arg(long, default_value_t = 40)]
        steps: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Run every (variant, seed) cell of a plan and write the summary.
    RunPlan {
        #[arg(long)]
        plan: PathBuf,
        /// Replace the plan's seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Re-aggregate a plan directory and print its tables.
    Report {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML file with training configuration fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    epochs_constant: Option<usize>,
    #[arg(long)]
    epochs_decay: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_g: Option<f64>,
    #[arg(long)]
    lr_d: Option<f64>,
    #[arg(long)]
    lambda_real: Option<f64>,
    #[arg(long)]
    lambda_fake: Option<f64>,
    #[arg(long)]
    lambda_rec: Option<f64>,
    #[arg(long)]
    max_steps_per_epoch: Option<usize>,
}

const TASK_FILE: &str = "task_spec.json";

fn read_task(data: &Path) -> Result<Option<TaskSpec>> {
    let path = data.join(TASK_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
}

impl ConfigArgs {
    /// File values (or the task's desk defaults), then flags on top.
    fn resolve(&self, task: Option<&TaskSpec>) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => task.map_or_else(TrainConfig::default, |t| t.desk_config(Variant::Accr, 0)),
        };
        if let Some(v) = &self.variant {
            cfg.variant = v.parse()?;
        }
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        set!(seed, data_seed, epochs_constant, epochs_decay, batch_size, lr_g, lr_d);
        if let Some(v) = self.lambda_real {
            cfg.weights.lambda_real = v;
        }
        if let Some(v) = self.lambda_fake {
            cfg.weights.lambda_fake = v;
        }
        if let Some(v) = self.lambda_rec {
            cfg.weights.lambda_rec = v;
        }
        if self.max_steps_per_epoch.is_some() {
            cfg.max_steps_per_epoch = self.max_steps_per_epoch;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn output(cli_root: &Option<PathBuf>, explicit: &Option<PathBuf>, default: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| cli_root.clone().unwrap_or_else(|| PathBuf::from("runs")).join(default))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<bool> {
    if cli.device != "cpu" {
        bail!("device {:?} is not available; only cpu is supported", cli.device);
    }
    match cli.command {
        Command::PrepareData { task, size, n_train, n_test, seed, patches, out } => {
            let spec = match task {
                TaskKind::Digits => TaskSpec::Digits {
                    size,
                    n_train,
                    n_test,
                    n_classifier: 3000,
                    seed,
                    background: match patches {
                        Some(dir) => Background::Patches { source: Some(dir) },
                        None => Background::Procedural,
                    },
                },
                TaskKind::Paired => TaskSpec::Paired { size, n_train, n_test, seed },
            };
            let out = output(&cli.output_dir, &out, "data");
            fs::create_dir_all(&out)?;
            spec.build()?.save(&out)?;
            write_json(&out.join(TASK_FILE), &spec)?;
            println!("wrote {} to {}", spec.name(), out.display());
        }
        Command::Train { data, overrides, out } => {
            let cfg = overrides.resolve(read_task(&data)?.as_ref())?;
            let out = output(&cli.output_dir, &out, &format!("{}-seed{}", cfg.variant.name(), cfg.seed));
            let task = TaskData::load(&data)?;
            write_json(&out.join(CONFIG_FILE), &cfg)?;
            let state = train(&cfg, &task.train, Some(&out))?;
            println!("trained {} epochs ({} steps) into {}", state.epoch, state.step, out.display());
        }
        Command::TrainClassifier { data, out } => {
            let task = TaskData::load(&data)?;
            let set = task.classifier_data.context("prepared data has no classifier split")?;
            let trained = train_classifier(&set, &desk_classifier())?;
            save_classifier(&trained.net, &out)?;
            println!("validation accuracy {:.2}%", 100.0 * trained.val_accuracy);
        }
        Command::Evaluate { run, data, classifier } => {
            let text = fs::read_to_string(run.join(CONFIG_FILE)).context("run directory has no config.json")?;
            let cfg: TrainConfig = serde_json::from_str(&text)?;
            let ckpt = latest_checkpoint(&run).context("run directory has no checkpoint")?;
            let state = TrainState::load(&ckpt, &cfg)?;
            let task = TaskData::load(&data)?;
            let classifier = classifier.map(|p| load_classifier(&p)).transpose()?;
            let metrics = evaluate_state(&state, &cfg, &task, classifier.as_ref(), &EvalOptions::default())?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Command::BenchmarkSpeed { data, overrides, variants, steps, repeats } => {
            let base = overrides.resolve(read_task(&data)?.as_ref())?;
            let task = TaskData::load(&data)?;
            for name in variants {
                let cfg = TrainConfig { variant: name.parse()?, ..base.clone() };
                let r = speed_benchmark(&cfg, &task.train, steps, SpeedOptions { repeats, ..Default::default() })?;
                let std = r.steps_per_sec_std.map_or(String::new(), |s| format!(" ± {s:.3}"));
                println!("{name:<10} {:.3}{std} steps/s", r.steps_per_sec_mean);
            }
        }
        Command::RunPlan { plan, seeds } => {
            let text = fs::read_to_string(&plan).with_context(|| format!("reading {}", plan.display()))?;
            let mut plan: ExperimentPlan =
                toml::from_str(&text).with_context(|| format!("parsing {}", plan.display()))?;
            if let Some(seeds) = seeds {
                plan.seeds = seeds;
            }
            if let Some(root) = &cli.output_dir {
                plan.output_dir = root.clone();
            }
            let summary = run_plan(&plan)?;
            print!("{}", accr_core::experiment::render_report(&summary).text);
            return Ok(summary.all_succeeded());
        }
        Command::Report { dir } => {
            let dir = dir.or(cli.output_dir).context("pass --dir or set ACCR_OUTPUT_DIR")?;
            let summary = summarize(&dir)?;
            print!("{}", write_summary(&dir, &summary)?.text);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
