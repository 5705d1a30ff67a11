//! Command-line entry point: dataset synthesis, training, generation,
//! evaluation, the ablation grid, and segmentation inspection.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use sspg::checkpoint::{self, AnyModel};
use sspg::config::Config;
use sspg::corpus::{make_synthetic, Dataset, Split};
use sspg::eval;
use sspg::model::ModelKind;
use sspg::objective;
use sspg::train::{self, DecoderKind};

#[derive(Parser)]
#[command(name = "sspg", about = "Subword segmental pointer generator for data-to-text")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_model_kind(s: &str) -> Result<ModelKind, String> {
    match s {
        "sspg" => Ok(ModelKind::Sspg),
        "ssd" => Ok(ModelKind::Ssd),
        "pg" => Ok(ModelKind::Pg),
        other => Err(format!("unknown model `{other}` (expected sspg|ssd|pg)")),
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split `{other}` (expected train|valid|test)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic copy/translate dataset into a directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 600)]
        train_examples: usize,
        #[arg(long, default_value_t = 120)]
        eval_examples: usize,
    },
    /// Train a model and write the best checkpoint plus a JSONL epoch log.
    Train {
        /// JSON config file; defaults are the per-model presets.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory (train/valid/test.jsonl) or a single JSONL file.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path; the epoch log goes to <out>.log.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Model kind override: sspg|ssd|pg.
        #[arg(long, value_parser = parse_model_kind)]
        model: Option<ModelKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Decode a split and write one line per example, with a component
    /// attribution sidecar at <out>.attrib.jsonl.
    Generate {
        /// Checkpoint path.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// unmixed|dynamic|beam; defaults to the model's natural decoder.
        #[arg(long)]
        decoder: Option<DecoderKind>,
        #[arg(long)]
        beam_k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a generations file against a dataset split; writes a JSON report.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// One generation per line, aligned with the split's examples.
        #[arg(long)]
        generations: PathBuf,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the five-cell grid (PG; SSD/SSPG x unmixed/dynamic) and report
    /// validation chrF++/BLEU as Markdown (stdout) and JSON (--out).
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Viterbi-segment each line of a text file; segments joined by "|".
    Segment {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input text file, one string per line.
        #[arg(long)]
        input: PathBuf,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(
    path: &Option<PathBuf>,
    model: Option<ModelKind>,
    seed: Option<u64>,
    epochs: Option<usize>,
) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => Config::defaults_for(model.unwrap_or(ModelKind::Sspg)),
    };
    if let Some(m) = model {
        cfg.model = m;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.validate().map_err(anyhow::Error::msg)?;
    Ok(cfg)
}

fn write_or_print(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, content).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{content}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth { out, seed, train_examples, eval_examples } => {
            let dataset = make_synthetic(seed, train_examples, eval_examples);
            dataset.save(&out)?;
            println!(
                "wrote {} train / {} valid / {} test examples to {}",
                dataset.count(Split::Train),
                dataset.count(Split::Valid),
                dataset.count(Split::Test),
                out.display()
            );
        }
        Command::Train { config, data, out, model, seed, epochs } => {
            let cfg = load_config(&config, model, seed, epochs)?;
            let dataset = Dataset::load(&data)?;
            let result = train::train(&cfg, &dataset)?;
            checkpoint::save(&out, &result.model, &cfg)?;
            let mut log = String::new();
            for entry in &result.log {
                log.push_str(&serde_json::to_string(entry)?);
                log.push('\n');
            }
            let log_path = out.with_extension("log.jsonl");
            fs::write(&log_path, log)?;
            let best = &result.log[result.best_epoch - 1];
            println!(
                "best epoch {} (valid chrF++ {:.2}); checkpoint {}, log {}",
                result.best_epoch,
                best.valid_chrf_pp,
                out.display(),
                log_path.display()
            );
        }
        Command::Generate { checkpoint: ckpt, data, split, decoder, beam_k, out } => {
            let (model, cfg) = checkpoint::load(&ckpt)?;
            let dataset = Dataset::load(&data)?;
            let decoder = decoder.unwrap_or_else(|| DecoderKind::default_for(model.kind()));
            let k = beam_k.unwrap_or(cfg.beam_k);
            let outputs = train::decode_split(
                &model,
                decoder,
                &dataset,
                split,
                k,
                sspg::decode::DEFAULT_MAX_CHARS,
            )?;
            let mut text = String::new();
            let mut sidecar = String::new();
            for o in &outputs {
                text.push_str(&o.text);
                text.push('\n');
                sidecar.push_str(&serde_json::to_string(o)?);
                sidecar.push('\n');
            }
            fs::write(&out, text)?;
            let side_path = PathBuf::from(format!("{}.attrib.jsonl", out.display()));
            fs::write(&side_path, sidecar)?;
            println!("wrote {} generations to {} (+ {})", outputs.len(), out.display(), side_path.display());
        }
        Command::Evaluate { data, split, generations, out } => {
            let dataset = Dataset::load(&data)?;
            let text = fs::read_to_string(&generations)
                .with_context(|| format!("reading {}", generations.display()))?;
            let hyps: Vec<String> = text.lines().map(str::to_string).collect();
            let report = eval::evaluate_all(&dataset, split, &hyps)?;
            let json = serde_json::to_string_pretty(&report)?;
            write_or_print(&out, &format!("{json}\n"))?;
        }
        Command::Ablate { config, data, out, seed, epochs } => {
            let cfg = load_config(&config, None, seed, epochs)?;
            let dataset = Dataset::load(&data)?;
            let rows = train::ablation_grid(&cfg, &dataset)?;
            let mut md = String::from("| model | decoder | chrF++ | BLEU |\n|---|---|---|---|\n");
            for r in &rows {
                md.push_str(&format!(
                    "| {} | {} | {:.2} | {:.2} |\n",
                    r.model.as_str(),
                    r.decoder,
                    r.chrf_pp,
                    r.bleu
                ));
            }
            print!("{md}");
            if out.is_some() {
                write_or_print(&out, &format!("{}\n", serde_json::to_string_pretty(&rows)?))?;
            }
        }
        Command::Segment { checkpoint: ckpt, input, out } => {
            let (model, _) = checkpoint::load(&ckpt)?;
            let model = match model {
                AnyModel::Sspg(m) => m,
                AnyModel::Pg(_) => bail!("segment requires an SSPG/SSD checkpoint, got a PG one"),
            };
            let text = fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let mut result = String::new();
            for line in text.lines() {
                if line.is_empty() {
                    result.push('\n');
                    continue;
                }
                let src = model.bpe.encode(line);
                let segments = objective::viterbi_segment(&model, &src, line)?;
                result.push_str(&segments.join("|"));
                result.push('\n');
            }
            write_or_print(&out, &result)?;
        }
    }
    Ok(())
}
