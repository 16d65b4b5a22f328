use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use kws_core::datagen::{build_pairs, read_corpus, read_pairs, synth_corpus, write_corpus, write_pairs, PairConfig, PairMode, Split, SynthConfig};
use kws_core::harness::{
    aggregate_runs, curve_of, evaluate_scored, run_pretrain, run_train, score_pairs, EvalReport, PretrainRunConfig,
    TrainRunConfig,
};
use kws_core::model::KwsModel;

mod plot;

#[derive(Parser)]
#[command(name = "kws", about = "Text-enrolled keyword spotting: data, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Libriphrase,
    AnchorAll,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (manifest, features, lexicon).
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build evaluation pairs from a manifest.
    Pairs {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
        /// Anchor split; all splits when omitted.
        #[arg(long)]
        split: Option<String>,
        #[arg(long, default_value_t = 2)]
        hard_threshold: usize,
        #[arg(long, default_value_t = 5)]
        easy_threshold: usize,
        #[arg(long, default_value_t = 1)]
        negatives_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// CTC-pretrain the speech embedder.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the detector; writes checkpoints and logs into a directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Select the checkpoint on the test pairs from the config.
        #[arg(long)]
        select_on_test: bool,
    },
    /// Score pairs with a checkpoint and write a report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Manifest holding the pairs' audio.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "eval")]
        dataset: String,
        /// Training log directory whose epochs.jsonl becomes the report's loss curve.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
    },
    /// Pool per-seed reports into mean ± std.
    Aggregate {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Draw ROC and loss curves of a report (.svg or .png).
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn csv_path(report: &Path) -> PathBuf {
    report.with_extension("csv")
}

fn load_curve(dir: &Path) -> Result<Vec<kws_core::harness::CurvePoint>> {
    let path = dir.join("epochs.jsonl");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let epochs = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(curve_of(&epochs))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg: SynthConfig = match config {
                Some(p) => read_json(&p)?,
                None => SynthConfig::default(),
            };
            let sc = synth_corpus(&cfg)?;
            let manifest = write_corpus(&out, &sc.corpus.lexicon, &sc.corpus.utterances)?;
            std::fs::write(out.join("synth_config.json"), serde_json::to_vec_pretty(&cfg)?)?;
            println!("{} utterances, {} keywords -> {}", sc.corpus.utterances.len(), sc.keywords.len(), manifest.display());
        }
        Command::Pairs {
            manifest,
            mode,
            out,
            split,
            hard_threshold,
            easy_threshold,
            negatives_per_class,
            seed,
        } => {
            let corpus = read_corpus(&manifest)?;
            let split: Option<Split> = split.map(|s| s.parse()).transpose()?;
            let records: Vec<_> = corpus
                .utterances
                .iter()
                .filter(|u| split.is_none_or(|s| u.record.split == s))
                .map(|u| u.record.clone())
                .collect();
            let cfg = PairConfig {
                mode: match mode {
                    ModeArg::Libriphrase => PairMode::Libriphrase,
                    ModeArg::AnchorAll => PairMode::AnchorAll,
                },
                hard_threshold,
                easy_threshold,
                negatives_per_class,
                seed,
            };
            let pairs = build_pairs(&records, &records, &cfg)?;
            write_pairs(&out, &pairs)?;
            println!("{} pairs -> {}", pairs.len(), out.display());
        }
        Command::Pretrain { config, out } => {
            let cfg: PretrainRunConfig = read_json(&config)?;
            let (outcome, acc) = run_pretrain(&cfg, &out)?;
            println!("{} epochs, {} utterances skipped", outcome.log.len(), outcome.skipped.len());
            if let Some(a) = acc {
                println!("frame accuracy {:.2}% (input rate {:.2}%)", 100.0 * a.raw, 100.0 * a.input_rate);
            }
        }
        Command::Train { config, out, select_on_test } => {
            let mut cfg: TrainRunConfig = read_json(&config)?;
            cfg.train.select_on_test |= select_on_test;
            let (_, outcome) = run_train(&cfg, &out)?;
            println!(
                "{} steps over {} epochs; best epoch {} (selection EER {})",
                outcome.steps.len(),
                outcome.epochs.len(),
                outcome.best_epoch,
                outcome.best_eer.map_or("n/a".into(), |e| format!("{e:.2}%"))
            );
        }
        Command::Eval {
            checkpoint,
            pairs,
            manifest,
            report,
            dataset,
            run_dir,
            batch_size,
        } => {
            let (model, lexicon) = KwsModel::load(&checkpoint)?;
            let corpus = read_corpus(&manifest)?;
            let pairs = read_pairs(&pairs)?;
            let scored = score_pairs(&model, &lexicon, &corpus, &pairs, batch_size)?;
            let header = kws_core::checkpoint::Checkpoint::load(&checkpoint)?.header;
            let mut r = EvalReport::single(header.seed, evaluate_scored(&dataset, &scored)?);
            r.skipped = scored.iter().filter_map(|s| s.skipped.clone()).collect();
            if let Some(dir) = run_dir {
                r.curve = load_curve(&dir)?;
            }
            r.save(&report)?;
            std::fs::write(csv_path(&report), r.to_csv())?;
            println!("{}", r.table());
            if !r.skipped.is_empty() {
                println!("{} pairs skipped", r.skipped.len());
            }
        }
        Command::Aggregate { reports, out, csv } => {
            if reports.len() < 2 {
                bail!("aggregate needs at least two reports");
            }
            let loaded = reports.iter().map(|p| EvalReport::load(p)).collect::<kws_core::Result<Vec<_>>>()?;
            let agg = aggregate_runs(&loaded)?;
            println!("{}", agg.table());
            if let Some(p) = &out {
                agg.save(p)?;
            }
            if let Some(p) = csv.or_else(|| out.as_deref().map(csv_path)) {
                std::fs::write(p, agg.to_csv())?;
            }
        }
        Command::Plot { report, out } => {
            let r = EvalReport::load(&report)?;
            plot::draw(&r, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
