use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use gatefuse::commands::{self, RunConfig};
use gatefuse::nn::Variant;
use gatefuse::pipeline::SplitName;

/// Ventilation risk models over EHR time series and chest-radiograph embeddings.
#[derive(Parser)]
#[command(name = "gatefuse", version)]
struct Cli {
    /// Run file (TOML). Relative paths inside it resolve against its directory,
    /// or against GATEFUSE_OUT_DIR when that is set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the run file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and its radiograph embeddings.
    Gen {
        #[arg(long)]
        n_encounters: Option<usize>,
        #[arg(long)]
        event_rate: Option<f64>,
    },
    /// Build feature and alignment caches from the cohort.
    Featurize,
    /// Train one model variant and freeze its validation threshold.
    Train {
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Compare analytic and finite-difference gradients for every variant.
    Gradcheck {
        /// Random configurations per variant.
        #[arg(long, default_value_t = 4)]
        configs: usize,
    },
    /// Seeded random hyperparameter search for one variant.
    Search {
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Evaluate trained variants on the test split, plus physician calls if configured.
    Eval {
        /// Variants to evaluate; defaults to the run file's list.
        #[arg(long)]
        variant: Vec<Variant>,
        /// Checkpoint to use instead of the default location (single variant only).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Only evaluate the physician calls file.
        #[arg(long, conflicts_with_all = ["variant", "checkpoint"])]
        physician_only: bool,
    },
    /// Build the comparison table from evaluation reports.
    Compare {
        /// Report files; defaults to every report in the reports directory.
        reports: Vec<PathBuf>,
    },
    /// Write a markdown summary of the run.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("reading run file {}", path.display()))?,
        None => RunConfig::default().resolved(Path::new(".")),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
        cfg.search.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Gen { n_encounters, event_rate } => {
            if let Some(n) = n_encounters {
                cfg.synth.n_encounters = n;
            }
            if let Some(r) = event_rate {
                cfg.synth.event_rate = r;
            }
            let summary = commands::cmd_gen(&cfg)?;
            println!("wrote {} and {}", cfg.paths.cohort.display(), cfg.paths.embeddings.display());
            print!("{}", summary.to_markdown());
        }
        Command::Featurize => {
            let a = commands::cmd_featurize(&cfg)?;
            println!(
                "encounters: {} included, {} excluded",
                a.encounters_included, a.encounters_excluded
            );
            println!(
                "rows: {} candidate, {} dropped by inclusion, {} dropped without radiograph, {} retained",
                a.rows_candidate, a.rows_dropped_inclusion, a.rows_dropped_unmatched_cxr, a.rows_retained
            );
            for split in SplitName::ALL {
                println!(
                    "  {}: {} rows, {} positive",
                    split.name(),
                    a.rows_by_split.get(&split).copied().unwrap_or(0),
                    a.positive_rows_by_split.get(&split).copied().unwrap_or(0)
                );
            }
        }
        Command::Train { variant, max_epochs } => {
            if let Some(e) = max_epochs {
                cfg.train.max_epochs = e;
            }
            let s = commands::cmd_train(&cfg, variant)?;
            println!(
                "{variant}: best epoch {} of {}, validation AUROC {:.4}, threshold {:.6}",
                s.best_epoch, s.epochs_run, s.best_val_auroc, s.threshold
            );
            println!("wrote {}", s.checkpoint.display());
        }
        Command::Gradcheck { configs } => {
            let reports = commands::cmd_gradcheck(&cfg, configs)?;
            for r in &reports {
                println!(
                    "{:<10} seed {:>3} params {:>5} max relative error {:.3e}",
                    r.variant.name(),
                    r.seed,
                    r.parameters,
                    r.max_relative_error
                );
            }
            println!("{} configurations passed", reports.len());
        }
        Command::Search { variant, trials } => {
            if let Some(t) = trials {
                cfg.search.trials = t;
            }
            let r = commands::cmd_search(&cfg, variant)?;
            println!("{variant}: best trial {} with validation AUROC {:.4}", r.trial_id, r.val_auroc);
        }
        Command::Eval { variant, checkpoint, physician_only } => {
            if physician_only && cfg.paths.physician_calls.is_none() {
                anyhow::bail!("no physician_calls path in the run file");
            }
            let variants = match (physician_only, variant.is_empty()) {
                (true, _) => Vec::new(),
                (false, true) => cfg.variants.clone(),
                (false, false) => variant,
            };
            if checkpoint.is_some() && variants.len() != 1 {
                anyhow::bail!("--checkpoint needs exactly one --variant");
            }
            for v in variants {
                let r = commands::cmd_eval(&cfg, v, checkpoint.as_deref())?;
                println!(
                    "{v}: AUROC {:.4}, sensitivity {:.3}, specificity {:.3}",
                    r.auroc.unwrap_or(f64::NAN),
                    r.sensitivity.unwrap_or(f64::NAN),
                    r.specificity.unwrap_or(f64::NAN)
                );
            }
            if let Some(r) = commands::cmd_eval_physician(&cfg)? {
                println!(
                    "physician: sensitivity {:.3}, specificity {:.3}",
                    r.sensitivity.unwrap_or(f64::NAN),
                    r.specificity.unwrap_or(f64::NAN)
                );
            }
        }
        Command::Compare { reports } => {
            let out = commands::cmd_compare(&cfg, &reports)?;
            print!("{}", out.table);
            println!("wrote {}, {} and {}", out.markdown.display(), out.csv.display(), out.auroc_bars.display());
        }
        Command::Report => {
            let path = commands::cmd_report(&cfg)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
