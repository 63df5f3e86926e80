use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ngen_core::instrumentation::grad_check;
use ngen_core::network::{InitScheme, Network};
use ngen_lab::cifar;
use ngen_lab::config::{init_name, ExperimentConfig, RawConfig};
use ngen_lab::data;
use ngen_lab::experiments::{run_experiment, Summary};
use ngen_lab::output::WriteMode;

const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
const GRAD_CHECK_BATCH: usize = 8;

#[derive(Parser)]
#[command(name = "ngen", version, about = "Train and probe networks with shifted activations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[command(flatten)]
        common: Common,
        /// Append to existing CSV files instead of replacing them.
        #[arg(long)]
        append: bool,
    },
    /// Repeat the experiment once per value of one config key, appending
    /// every run to the same tables.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        key: String,
        /// Comma-separated values for `--key`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Compare analytic gradients of the configured model with central
    /// differences on a few training samples.
    GradCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Summarize a CIFAR-10 binary batch file.
    InspectCifar { path: PathBuf },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value`, applied after the config file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn raw(&self) -> anyhow::Result<RawConfig> {
        let mut raw = RawConfig::load(&self.config)?;
        for o in &self.overrides {
            raw.assign(o).map_err(anyhow::Error::msg).context("bad --override")?;
        }
        if let Some(seed) = self.seed {
            raw.set("seed", seed);
        }
        Ok(raw)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| cfg.out.clone())
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { common, append } => {
            let cfg = ExperimentConfig::from_raw(&common.raw()?)?;
            let dir = common.out_dir(&cfg);
            let mode = if append { WriteMode::Append } else { WriteMode::Create };
            let summary = run_experiment(&cfg, &dir, mode, "")?;
            print_summary(&summary);
            println!("wrote {}", dir.display());
        }
        Command::Sweep { common, key, values } => {
            let base = common.raw()?;
            let mut dir = None;
            for value in &values {
                let mut raw = base.clone();
                raw.set(&key, value);
                let cfg = ExperimentConfig::from_raw(&raw).with_context(|| format!("{key}={value}"))?;
                let out = dir.get_or_insert_with(|| common.out_dir(&cfg)).clone();
                println!("== {key}={value}");
                let summary = run_experiment(&cfg, &out, WriteMode::Append, &format!("{key}={value}:"))?;
                print_summary(&summary);
            }
            if let Some(dir) = dir {
                println!("wrote {}", dir.display());
            }
        }
        Command::GradCheck { common } => return grad_check_cmd(&common),
        Command::InspectCifar { path } => inspect_cifar(&path)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn grad_check_cmd(common: &Common) -> anyhow::Result<ExitCode> {
    let cfg = ExperimentConfig::from_raw(&common.raw()?)?;
    let splits = data::load(&cfg.data, cfg.data_seed())?;
    let spec = cfg.model.build(splits.train.sample_shape(), cfg.classes(), cfg.activation)?;
    let net = Network::new(spec)?;
    let params = net.init_params(InitScheme::new(cfg.init, cfg.seed));
    let idx: Vec<usize> = (0..splits.train.len().min(GRAD_CHECK_BATCH)).collect();
    if idx.is_empty() {
        bail!("no training samples");
    }
    let (x, y) = splits.train.batch(&idx);
    let report = grad_check(&net, &params, &x, &y, GRAD_CHECK_TOLERANCE)?;
    println!("{:<10} {:>12} {:>12} {:>8} {:>8}", "group", "max_rel", "max_abs", "checked", "excluded");
    for (name, g) in &report.groups {
        println!(
            "{:<10} {:>12.3e} {:>12.3e} {:>8} {:>8}",
            name, g.max_rel_error, g.max_abs_error, g.checked, g.excluded
        );
    }
    let worst = report.max_rel_error();
    if worst < GRAD_CHECK_TOLERANCE {
        println!("ok: max relative error {worst:.3e}");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("failed: max relative error {worst:.3e} >= {GRAD_CHECK_TOLERANCE:e}");
        Ok(ExitCode::FAILURE)
    }
}

fn inspect_cifar(path: &Path) -> anyhow::Result<()> {
    let records = cifar::read_records(path)?;
    println!("{}: {} records", path.display(), records.labels.len());
    let mut counts = [0usize; cifar::CLASSES];
    for &l in &records.labels {
        counts[l as usize] += 1;
    }
    for (class, n) in counts.iter().enumerate() {
        println!("  class {class}: {n}");
    }
    Ok(())
}

fn print_summary(summary: &Summary) {
    match summary {
        Summary::Single { run_id, converged, final_train_acc, final_test_acc } => {
            println!("{run_id}: train {final_train_acc:.4} test {final_test_acc:.4} converged {converged}");
        }
        Summary::Capacity(rows) => {
            for r in rows {
                let t = r.final_t_mean.map_or("-".to_string(), |t| format!("{t:.4}"));
                println!("{:<24} max train acc {:.4}  final mean t {t}", r.setting, r.max_train_acc);
            }
        }
        Summary::CriticalDepth(ladders) => {
            for l in ladders {
                let depths: Vec<String> = l
                    .steps
                    .iter()
                    .map(|s| format!("{}:{}", s.depth, if s.converged { "ok" } else { "x" }))
                    .collect();
                let crit = l.critical_depth.map_or("none".to_string(), |d| d.to_string());
                println!("{:<10} critical depth {crit}  [{}]", l.variant, depths.join(" "));
            }
        }
        Summary::LearningBehavior(grids) => {
            for g in grids {
                let cells: Vec<String> = g
                    .cells
                    .iter()
                    .map(|c| format!("{}={}", init_name(c.init), c.epochs_to_threshold))
                    .collect();
                println!("{:<10} epochs to threshold {}  spread {}", g.variant, cells.join(" "), g.spread());
            }
        }
        Summary::VarianceStudy(rows) => {
            for r in rows {
                println!(
                    "{:<10} stability {:.4}  sandwich {}/{}",
                    r.variant, r.stability_score, r.sandwich_holds, r.sandwich_probes
                );
            }
        }
    }
}
