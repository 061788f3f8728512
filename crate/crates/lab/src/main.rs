use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uda_core::trainer::{Method, RunConfig};
use uda_lab::checkpoint::Checkpoint;
use uda_lab::commands::{self, AnalyzeOptions, Diagnostic};
use uda_lab::{config, dataset_for, LabError, Result};

#[derive(Parser)]
#[command(name = "uda-lab", version, about = "Desk-scale unsupervised domain adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// JSON run config
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Start from a built-in preset instead of a file: `<method>` for two
    /// moons, `glyphs:<method>` for glyph images
    #[arg(long)]
    preset: Option<String>,
    /// Dotted-path override, e.g. `seed.model=7`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        match (&self.config, &self.preset) {
            (Some(path), _) => config::load(path, &self.overrides),
            (None, Some(p)) => {
                let (glyphs, method) = match p.strip_prefix("glyphs:") {
                    Some(m) => (true, m),
                    None => (false, p.as_str()),
                };
                let m: Method = method.parse().map_err(|e: uda_core::Error| LabError::Config(e.to_string()))?;
                let base = if glyphs { RunConfig::glyphs(m, 0) } else { RunConfig::two_moons(m, 0) };
                config::with_overrides(&base, &self.overrides)
            }
            (None, None) => Err(LabError::Config("pass --config or --preset".into())),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset as CSV
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one run and write metrics.csv, checkpoint.json and config.json
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory (default: <output root>/<config hash>-<timestamp>)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Run diagnostics on a checkpoint
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset CSV; defaults to regenerating the checkpoint's dataset
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated: jacobian, trajectory, fourier, adaptability, embeddings, all
        #[arg(long, default_value = "all")]
        which: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        fourier_norm: f64,
        #[arg(long, default_value_t = 64)]
        trajectory_points: usize,
        /// Target error of a reference model, enabling the ρ estimate
        #[arg(long)]
        baseline_error: Option<f64>,
    },
    /// Train several method presets with shared seeds and summarize
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated presets
        #[arg(long, default_value = "source_only,dann,dann+tc,cliv,cliv+tc")]
        presets: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Finite-difference check of every loss
    GradCheck,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { cfg, out } => {
            let cfg = cfg.load()?;
            let pair = commands::gen_data(&cfg, &out)?;
            println!(
                "wrote {} ({} source, {} target rows)",
                out.display(),
                pair.x_s().rows(),
                pair.x_t().rows()
            );
        }
        Command::Train { cfg, out, quiet } => {
            let cfg = cfg.load()?;
            let dir = out.unwrap_or_else(|| commands::fresh_run_dir(&commands::output_root(), &cfg));
            println!("training {} into {}", cfg.method, dir.display());
            let run = commands::train_run(&cfg, &dir, |r| {
                if !quiet {
                    let tgt = r.target_acc.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
                    println!(
                        "epoch {:>4}  loss {:.4}  src {:.3}  tgt {tgt}",
                        r.epoch, r.losses.total, r.source_acc
                    );
                }
            })?;
            if let Some(last) = run.history.last() {
                let tgt = last.target_acc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
                println!("done: source acc {:.4}, target acc {tgt}", last.source_acc);
            }
        }
        Command::Analyze { checkpoint, data, which, out, seed, fourier_norm, trajectory_points, baseline_error } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let bundle = ckpt.restore()?;
            let pair = dataset_for(&ckpt, data.as_deref())?;
            let which = Diagnostic::parse_list(&which, pair.modality())?;
            let dir = out.unwrap_or_else(|| {
                checkpoint.parent().map(|p| p.join("analysis")).unwrap_or_else(|| PathBuf::from("analysis"))
            });
            let opts = AnalyzeOptions {
                seed,
                fourier_norm,
                trajectory_points,
                baseline_target_error: baseline_error,
                ..AnalyzeOptions::default()
            };
            for p in commands::analyze(&bundle, &pair, &which, &opts, &dir)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Sweep { cfg, presets, out, parallel } => {
            let base = cfg.load()?;
            let presets = presets
                .split(',')
                .map(|s| s.parse::<Method>().map_err(|e| LabError::Config(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            let root = out.unwrap_or_else(|| commands::fresh_run_dir(&commands::output_root(), &base));
            let rows = commands::sweep(&base, &presets, &root, parallel, &Default::default())?;
            let mut failed = 0;
            for r in &rows {
                match &r.outcome {
                    Ok(m) => println!(
                        "{:<14} src {:.3}  tgt {:.3}  d_A {:.3}  lambda {:.3}",
                        r.preset.to_string(),
                        m.source_acc,
                        m.target_acc,
                        m.d_a,
                        m.lambda
                    ),
                    Err(e) => {
                        failed += 1;
                        println!("{:<14} failed: {e}", r.preset.to_string());
                    }
                }
            }
            println!("summary: {}", root.join(commands::SUMMARY_FILE).display());
            if failed > 0 {
                return Err(LabError::Sweep { failed, total: rows.len() });
            }
        }
        Command::GradCheck => {
            let lines = commands::default_grad_check();
            print!("{}", commands::grad_check_table(&lines));
            commands::grad_check_verdict(&lines)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
