use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use graphllm_core::baselines::{build_prompt, default_exemplar, graphllm_context_tokens, GraphTextFormat, PromptMode};
use graphllm_core::prefixlm::{pretrain_and_freeze, BackboneLm};
use graphllm_core::task::{emit_jsonl, load_jsonl, to_jsonl_string, GenConfig, TaskInstance, TaskKind};
use graphllm_harness::checkpoint::Checkpoint;
use graphllm_harness::config::TrainConfig;
use graphllm_harness::data::{build_tokenizer, examples, pretrain_corpus};
use graphllm_harness::eval::evaluate;
use graphllm_harness::experiment::mini_counting_config;
use graphllm_harness::gradsuite::{run_suite, TOLERANCE};
use graphllm_harness::metrics::{csv_report, markdown_report, read_metrics, write_metrics, write_scaling, MetricsRow};
use graphllm_harness::scaling::scaling_experiment;
use graphllm_harness::train::Trainer;
use graphllm_harness::HarnessError;
use graphllm_tensor::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "graphllm", version, about = "Graph reasoning with graph-conditioned prefix tuning")]
struct Cli {
    /// Key = value configuration file; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a task dataset as JSONL.
    Gen {
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        count: usize,
        /// Node count; defaults to the task's reference size.
        #[arg(long)]
        nodes: Option<usize>,
        /// Use the small counting benchmark settings (6 to 10 atoms).
        #[arg(long)]
        mini: bool,
        /// Index of the first instance, for disjoint splits.
        #[arg(long, default_value_t = 0)]
        offset: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretrain and freeze a backbone on dataset text.
    Pretrain {
        /// The vocabulary covers every file; only the first is pretrained on.
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune a prefix method on a frozen backbone.
    Train {
        #[arg(long, required_unless_present = "resume")]
        backbone: Option<PathBuf>,
        /// Continue a saved run instead of starting from a backbone.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stop after this many optimiser steps in total.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Exact-match accuracy of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write a metrics CSV with one row.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Print Graph2Text prompts for a dataset.
    Serialize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Adjacency)]
        format: Format,
        #[arg(long, value_enum, default_value_t = Mode::ZeroShot)]
        mode: Mode,
    },
    /// Context length of Graph2Text and GraphLLM as graphs grow.
    Scale {
        #[arg(long)]
        task: TaskKind,
        #[arg(long, value_delimiter = ',', default_values_t = [15, 25, 35, 45])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        per_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every registered finite-difference gradient check.
    Gradcheck,
    /// Summarise a metrics CSV.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Markdown)]
        format: ReportFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Adjacency,
    Edges,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    ZeroShot,
    FewShot,
    FewShotCot,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Markdown,
    Csv,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, HarnessError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn load_data(path: &Path) -> Result<Vec<TaskInstance>, HarnessError> {
    let insts = load_jsonl(path)?;
    if insts.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    Ok(insts)
}

/// Take the backbone dimensions from the checkpoint so a training config
/// need not repeat them.
fn adopt_backbone(cfg: &mut TrainConfig, from: &TrainConfig) {
    cfg.lm_layers = from.lm_layers;
    cfg.d_model = from.d_model;
    cfg.lm_heads = from.lm_heads;
    cfg.lm_max_len = from.lm_max_len;
    cfg.ffn_mult = from.ffn_mult;
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Gen { task, count, nodes, mini, offset, out } => {
            let gen = match (mini, nodes) {
                (true, _) if task != TaskKind::SubstructureCounting => {
                    return Err(HarnessError::InvalidConfig("--mini applies to substructure_counting only".into()))
                }
                (true, _) => mini_counting_config(),
                (false, Some(n)) => GenConfig::new(task, n),
                (false, None) => GenConfig::reference(task),
            };
            let insts = gen.generate_range(offset, count, cfg.seed)?;
            match out {
                Some(p) => emit_jsonl(&insts, &p)?,
                None => {
                    let mut w = output(None)?;
                    w.write_all(to_jsonl_string(&insts).as_bytes())?;
                    w.flush()?;
                }
            }
        }
        Command::Pretrain { data, out } => {
            let sets = data.iter().map(|p| load_data(p)).collect::<Result<Vec<_>, _>>()?;
            let tok = build_tokenizer(sets.iter().flatten());
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let lm = BackboneLm::new(&mut store, &mut rng, cfg.backbone(tok.vocab_size()))?;
            let report = pretrain_and_freeze(&lm, &mut store, &pretrain_corpus(&tok, &sets[0]), &cfg.pretrain())?;
            Checkpoint::backbone(&cfg, &tok, &store).save(&out)?;
            eprintln!(
                "pretrained {} steps, final loss {:.4}",
                report.losses.len(),
                report.losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Train { backbone, resume, data, out, steps } => {
            let (mut trainer, tok) = match (resume, backbone) {
                (Some(r), _) => Checkpoint::load(&r)?.into_trainer()?,
                (None, Some(b)) => {
                    let ck = Checkpoint::load(&b)?;
                    adopt_backbone(&mut cfg, &ck.config);
                    let (lm, store) = ck.load_backbone()?;
                    (Trainer::new(cfg, lm, store)?, ck.tokenizer)
                }
                (None, None) => unreachable!("clap requires one of them"),
            };
            let insts = load_data(&data)?;
            let ex = examples(&trainer.cfg, &tok, &insts)?;
            let losses = trainer.fit(&ex, steps)?;
            Checkpoint::from_trainer(&trainer, &tok).save(&out)?;
            eprintln!(
                "trained to step {}, last loss {:.4}",
                trainer.step,
                losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Eval { checkpoint, data, metrics } => {
            let start = Instant::now();
            let (trainer, tok) = Checkpoint::load(&checkpoint)?.into_trainer()?;
            let insts = load_data(&data)?;
            let ex = examples(&trainer.cfg, &tok, &insts)?;
            let report = evaluate(&trainer.model, &trainer.store, &tok, &ex, trainer.cfg.max_new_tokens)?;
            let context = insts.iter().map(|i| graphllm_context_tokens(i, trainer.cfg.prefix_len) as f64).sum::<f64>()
                / insts.len() as f64;
            let row = MetricsRow {
                task: trainer.cfg.task.as_str().into(),
                method: trainer.cfg.method.as_str().into(),
                seed: trainer.cfg.seed,
                exact_match: report.exact_match,
                mean_context_tokens: context,
                wall_time_s: start.elapsed().as_secs_f64(),
            };
            println!("exact_match {:.4} over {} instances", report.exact_match, insts.len());
            if let Some(p) = metrics {
                write_metrics(File::create(p)?, &[row])?;
            }
        }
        Command::Serialize { data, format, mode } => {
            let insts = load_data(&data)?;
            let mut w = output(None)?;
            for (i, inst) in insts.iter().enumerate() {
                let format = match format {
                    Format::Adjacency => GraphTextFormat::AdjacencyList,
                    Format::Edges => GraphTextFormat::EdgeListRandom { seed: cfg.seed ^ inst.seed },
                };
                let (mode, ex) = match mode {
                    Mode::ZeroShot => (PromptMode::ZeroShot, None),
                    Mode::FewShot => (PromptMode::FewShot, Some(default_exemplar(inst.task))),
                    Mode::FewShotCot => (PromptMode::FewShotCot, Some(default_exemplar(inst.task))),
                };
                if i > 0 {
                    writeln!(w, "\n----------\n")?;
                }
                writeln!(w, "{}", build_prompt(inst, format, mode, ex.as_ref())?)?;
            }
            w.flush()?;
        }
        Command::Scale { task, sizes, per_size, out } => {
            let rows = scaling_experiment(task, &sizes, cfg.prefix_len, per_size, cfg.seed)?;
            write_scaling(output(out.as_deref())?, &rows)?;
        }
        Command::Gradcheck => {
            let results = run_suite(cfg.seed)?;
            let mut failed = 0;
            for r in &results {
                let status = if r.passed() { "ok" } else { "FAIL" };
                println!("{status:4} {:40} {:.3e}", r.name, r.max_relative_error);
                failed += usize::from(!r.passed());
            }
            if failed > 0 {
                return Err(HarnessError::InvalidConfig(format!(
                    "{failed} of {} gradient checks exceeded {TOLERANCE:e}",
                    results.len()
                )));
            }
        }
        Command::Report { metrics, format } => {
            let rows = read_metrics(File::open(metrics)?)?;
            let text = match format {
                ReportFormat::Markdown => markdown_report(&rows),
                ReportFormat::Csv => csv_report(&rows),
            };
            print!("{text}");
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
