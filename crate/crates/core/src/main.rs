//! latefuse command line: curation, classification, and trend analysis
//! over JSONL post exports.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error. Every
//! subcommand emits a reproducibility manifest next to its primary
//! output (override with --manifest).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use latefuse::error::Error;
use latefuse::pipeline::{self, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "latefuse",
    version,
    about = "Curation, late-fusion classification, and trend analysis for multimodal posts"
)]
struct Cli {
    /// TOML config file; flags override individual fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Manifest path (default: <primary output>.manifest.json).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Seed for every random draw in the subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScoreArgs {
    /// CSV of precomputed text scores (id,s0,s1,s2) replacing the stub encoder.
    #[arg(long)]
    text_scores: Option<PathBuf>,

    /// CSV of precomputed image scores (id,s0,s1,s2) replacing the stub encoder.
    #[arg(long)]
    image_scores: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load a JSONL export, sanitize text, keep multimodal posts.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Optional JSON ingest report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Remove duplicate posts (same id, same text, or near-identical image).
    Dedupe {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Optional JSON dedup report.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Image similarity above this fraction counts as a duplicate.
        #[arg(long)]
        near_threshold: Option<f64>,
    },
    /// Flag posts whose nearest neighbors disagree with their label.
    Audit {
        #[arg(long)]
        input: PathBuf,
        /// Flat binary embeddings (little-endian f32, 768 per record,
        /// record order = dataset order); defaults to stub embeddings.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Flag report JSON.
        #[arg(long)]
        report: PathBuf,
        /// Removal list (one post id per line) to apply after review.
        #[arg(long)]
        apply: Option<PathBuf>,
        /// Cleaned dataset output (required with --apply).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        tables: Option<u16>,
        #[arg(long)]
        bits: Option<u32>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        flag_min_disagree: Option<usize>,
    },
    /// Undersample every class to the minority class size.
    Balance {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Stratified train/val/test membership CSV.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Comma-separated train,val,test fractions (default 0.6,0.2,0.2).
        #[arg(long)]
        fractions: Option<String>,
    },
    /// Train the fusion head on the train split with early stopping on val.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        scores: ScoreArgs,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Evaluate a trained head on the test split.
    Eval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        head: PathBuf,
        /// Metrics JSON (confusion matrix + accuracy/precision/recall/F1).
        #[arg(long)]
        output: PathBuf,
        /// ROC curve points CSV (class,threshold,x,y).
        #[arg(long)]
        roc: Option<PathBuf>,
        /// Precision-recall curve points CSV (class,threshold,x,y).
        #[arg(long)]
        pr: Option<PathBuf>,
        #[command(flatten)]
        scores: ScoreArgs,
    },
    /// Classify every post, emitting predictions CSV.
    Classify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        scores: ScoreArgs,
    },
    /// Classify posts, aggregate monthly abundance per source, fit trends.
    Trend {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        head: PathBuf,
        /// Monthly series CSV (series_id,year,month,examined,pro_ed,abundance).
        #[arg(long)]
        series: PathBuf,
        /// Fit CSV (series_id,degree,c0..c3,rss,r2,p_value).
        #[arg(long)]
        fits: PathBuf,
        /// Restrict the linear refit to months at or after this (YYYY-MM).
        #[arg(long)]
        from: Option<String>,
        /// Optional per-month sampling schedule CSV.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[command(flatten)]
        scores: ScoreArgs,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap usage problems are configuration errors.
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn parse_fractions(raw: &str) -> Result<[f64; 3], Error> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "fractions must be three comma-separated numbers, got {raw:?}"
        )));
    }
    let mut fractions = [0.0; 3];
    for (slot, part) in fractions.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("fractions: {part:?} is not a number")))?;
    }
    Ok(fractions)
}

fn manifest_path(explicit: Option<&Path>, primary_output: &Path) -> PathBuf {
    match explicit {
        Some(path) => path.to_path_buf(),
        None => {
            let mut path = primary_output.as_os_str().to_owned();
            path.push(".manifest.json");
            PathBuf::from(path)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut config = pipeline::load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    match &cli.command {
        Command::Ingest {
            input,
            output,
            report,
        } => {
            require_input(input)?;
            let summary = pipeline::run_ingest(input, output, report.as_deref())?;
            emit_manifest(&cli, &config, "ingest", &[input], output)?;
            eprintln!(
                "ingest: {} loaded, {} malformed lines skipped, {} kept",
                summary.loaded, summary.skipped_lines, summary.filter.kept
            );
        }
        Command::Dedupe {
            input,
            output,
            report,
            near_threshold,
        } => {
            require_input(input)?;
            if let Some(threshold) = near_threshold {
                config.near_threshold = *threshold;
                config.validate()?;
            }
            let summary =
                pipeline::run_dedupe(input, output, report.as_deref(), config.near_threshold)?;
            emit_manifest(&cli, &config, "dedupe", &[input], output)?;
            eprintln!(
                "dedupe: kept {}, removed {} by id, {} by text, {} by image",
                summary.kept,
                summary.removed_exact_id,
                summary.removed_exact_text,
                summary.removed_near_image
            );
        }
        Command::Audit {
            input,
            embeddings,
            report,
            apply,
            output,
            tables,
            bits,
            k,
            flag_min_disagree,
        } => {
            require_input(input)?;
            if let Some(v) = tables {
                config.audit.tables = *v;
            }
            if let Some(v) = bits {
                config.audit.bits = *v;
            }
            if let Some(v) = k {
                config.audit.k = *v;
            }
            if let Some(v) = flag_min_disagree {
                config.audit.flag_min_disagree = *v;
            }
            config.validate()?;
            let flags = pipeline::run_audit(
                input,
                embeddings.as_deref(),
                report,
                apply.as_deref(),
                output.as_deref(),
                &config,
            )?;
            let mut inputs: Vec<&Path> = vec![input];
            if let Some(e) = embeddings {
                inputs.push(e);
            }
            if let Some(a) = apply {
                inputs.push(a);
            }
            emit_manifest(&cli, &config, "audit", &inputs, report)?;
            eprintln!("audit: {} posts flagged", flags.flagged.len());
        }
        Command::Balance { input, output } => {
            require_input(input)?;
            pipeline::run_balance(input, output, config.seed)?;
            emit_manifest(&cli, &config, "balance", &[input], output)?;
        }
        Command::Split {
            input,
            output,
            fractions,
        } => {
            require_input(input)?;
            if let Some(raw) = fractions {
                config.fractions = parse_fractions(raw)?;
            }
            let spec = config.split_spec()?;
            pipeline::run_split(input, output, &spec)?;
            emit_manifest(&cli, &config, "split", &[input], output)?;
        }
        Command::Train {
            input,
            splits,
            output,
            scores,
            learning_rate,
            max_epochs,
            batch_size,
            patience,
        } => {
            require_input(input)?;
            require_input(splits)?;
            if let Some(v) = learning_rate {
                config.train.learning_rate = *v;
            }
            if let Some(v) = max_epochs {
                config.train.max_epochs = *v;
            }
            if let Some(v) = batch_size {
                config.train.batch_size = *v;
            }
            if let Some(v) = patience {
                config.train.patience = *v;
            }
            config.validate()?;
            let head = pipeline::run_train(
                input,
                splits,
                output,
                scores.text_scores.as_deref(),
                scores.image_scores.as_deref(),
                &config,
            )?;
            let inputs = score_inputs(&[input, splits], scores);
            emit_manifest(&cli, &config, "train", &inputs, output)?;
            eprintln!(
                "train: {} epochs, best validation loss {:.6}",
                head.meta.epochs_run, head.meta.best_val_loss
            );
        }
        Command::Eval {
            input,
            splits,
            head,
            output,
            roc,
            pr,
            scores,
        } => {
            require_input(input)?;
            require_input(splits)?;
            require_input(head)?;
            let artifacts = pipeline::run_eval(
                input,
                splits,
                head,
                output,
                roc.as_deref(),
                pr.as_deref(),
                scores.text_scores.as_deref(),
                scores.image_scores.as_deref(),
                &config,
            )?;
            let inputs = score_inputs(&[input, splits, head], scores);
            emit_manifest(&cli, &config, "eval", &inputs, output)?;
            eprintln!(
                "eval: accuracy {:.4}, macro F1 {:.4}",
                artifacts.metrics.accuracy, artifacts.metrics.macro_f1
            );
        }
        Command::Classify {
            input,
            head,
            output,
            scores,
        } => {
            require_input(input)?;
            require_input(head)?;
            let count = pipeline::run_classify(
                input,
                head,
                output,
                scores.text_scores.as_deref(),
                scores.image_scores.as_deref(),
                &config,
            )?;
            let inputs = score_inputs(&[input, head], scores);
            emit_manifest(&cli, &config, "classify", &inputs, output)?;
            eprintln!("classify: {count} posts");
        }
        Command::Trend {
            input,
            head,
            series,
            fits,
            from,
            schedule,
            scores,
        } => {
            require_input(input)?;
            require_input(head)?;
            if let Some(from) = from {
                config.trend_from = from.clone();
                config.validate()?;
            }
            let artifacts = pipeline::run_trend(
                input,
                head,
                series,
                fits,
                schedule.as_deref(),
                scores.text_scores.as_deref(),
                scores.image_scores.as_deref(),
                &config,
            )?;
            let inputs = score_inputs(&[input, head], scores);
            emit_manifest(&cli, &config, "trend", &inputs, series)?;
            eprintln!(
                "trend: {} series, {} fits",
                artifacts.series.len(),
                artifacts.fits.len()
            );
        }
    }
    Ok(())
}

fn require_input(path: &Path) -> Result<(), Error> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "input path does not exist: {}",
            path.display()
        )));
    }
    Ok(())
}

fn score_inputs<'a>(base: &[&'a Path], scores: &'a ScoreArgs) -> Vec<&'a Path> {
    let mut inputs: Vec<&Path> = base.to_vec();
    if let Some(p) = &scores.text_scores {
        inputs.push(p);
    }
    if let Some(p) = &scores.image_scores {
        inputs.push(p);
    }
    inputs
}

fn emit_manifest(
    cli: &Cli,
    config: &PipelineConfig,
    command: &str,
    inputs: &[&Path],
    primary_output: &Path,
) -> Result<(), Error> {
    let path = manifest_path(cli.manifest.as_deref(), primary_output);
    pipeline::emit_run_manifest(command, config, inputs, &path)?;
    Ok(())
}
