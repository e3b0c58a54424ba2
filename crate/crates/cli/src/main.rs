use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use fitrag::corpus::{load_qa, QaRecord, WhitespacePunctTokenizer};
use fitrag::pipeline::{Ablation, PipelineConfig};
use fitrag::recognizer::build_nn_reference;
use fitrag::reducer::{build_detector_dataset, load_examples, save_examples, train_detector};
use fitrag::scorer::{build_training_set, load_pairs, save_pairs, train_scorer, ScorerModel};
use fitrag::{Scorer, TemplateKind, VectorIndex};

#[derive(Parser)]
#[command(name = "fitrag", version, about = "Retrieval-augmented QA with bi-label scoring and token reduction")]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true, default_value = "fitrag.json")]
    config: PathBuf,
    /// Override the root seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the prompt template: comprehensive, simple or cot.
    #[arg(long, global = true)]
    template: Option<TemplateKind>,
    /// Write the command's JSON output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed the corpus and save the vector index.
    Index,
    /// Label retrieved (question, document) pairs for scorer training.
    Annotate,
    /// Train the bi-label scorer on the annotated pairs.
    TrainScorer {
        /// Keep the class weight fixed and save to `paths.fixed_w_scorer`.
        #[arg(long)]
        fixed_w: bool,
    },
    /// Sample and label sub-document combinations for the eligibility detector.
    BuildDetectorData,
    /// Train the eligibility detector.
    TrainDetector,
    /// Record which training questions the LLM answers without retrieval.
    BuildNnRef,
    /// Answer one question and print its trace.
    Query {
        question: String,
        #[arg(long, default_value = "q")]
        id: String,
        /// Gold answers, for a correctness check in the trace.
        #[arg(long = "answer")]
        answers: Vec<String>,
    },
    /// Evaluate on a QA file and print the report.
    Eval {
        /// JSONL questions; defaults to `paths.train_qa`.
        #[arg(long)]
        qa: Option<PathBuf>,
        /// no_recognizer, no_reducer, fixed_w or template=<name>; repeatable.
        #[arg(long = "ablation", value_parser = parse_ablation)]
        ablations: Vec<Ablation>,
    },
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse()
}

/// Problems with the invocation itself, reported with exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<Usage>().is_some() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(t) = cli.template {
        cfg.template = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_path(cli: &Cli, configured: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    cli.out
        .clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| anyhow!("nowhere to write the {what}: set `paths.{what}` or pass --out"))
}

fn emit(cli: &Cli, json: &str) -> anyhow::Result<()> {
    match &cli.out {
        Some(p) => std::fs::write(p, format!("{json}\n")).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn train_questions(cfg: &PipelineConfig) -> anyhow::Result<Vec<QaRecord>> {
    let p = cfg.require(&cfg.paths.train_qa, "train_qa")?;
    read_questions(p)
}

fn read_questions(p: &Path) -> anyhow::Result<Vec<QaRecord>> {
    let qa = load_qa(p)?;
    if qa.is_empty() {
        return Err(Usage(format!("{} holds no questions", p.display())).into());
    }
    Ok(qa)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let tok = WhitespacePunctTokenizer;
    match &cli.command {
        Command::Index => {
            let provider = cfg.provider()?;
            let corpus = cfg.corpus()?;
            let index = VectorIndex::build(&corpus, provider.as_ref())?;
            let out = output_path(cli, &cfg.paths.index, "index")?;
            index.save(&out)?;
            log::info!("indexed {} documents into {}", corpus.len(), out.display());
        }
        Command::Annotate => {
            let qa = train_questions(&cfg)?;
            let retriever = cfg.retriever(cfg.provider()?)?;
            let llm = cfg.llm_client()?;
            let set = build_training_set(&qa, &retriever, llm.as_ref(), &cfg.templates, &tok, cfg.annotate_k)?;
            let out = output_path(cli, &cfg.paths.training_pairs, "training_pairs")?;
            save_pairs(&out, &set.pairs)?;
            log::info!(
                "{} pairs ({} matched) written to {}",
                set.pairs.len(),
                set.matched_count(),
                out.display()
            );
        }
        Command::TrainScorer { fixed_w } => {
            let pairs = load_pairs(cfg.require(&cfg.paths.training_pairs, "training_pairs")?)?;
            let mut train_cfg = cfg.scorer_training.clone();
            train_cfg.learn_w = !fixed_w;
            let samples: Vec<_> = pairs.iter().map(|p| p.sample(train_cfg.feature_mode)).collect();
            let trained = train_scorer(&samples, &cfg.provider()?.fingerprint(), &train_cfg)?;
            let target = if *fixed_w { &cfg.paths.fixed_w_scorer } else { &cfg.paths.scorer };
            let out = output_path(cli, target, if *fixed_w { "fixed_w_scorer" } else { "scorer" })?;
            trained.model.save(&out)?;
            log::info!(
                "scorer saved to {} (w = {:.4}, validation objective {:.4})",
                out.display(),
                trained.w_final,
                trained.final_val_objective()
            );
        }
        Command::BuildDetectorData => {
            if cfg.detector_data.max_docs != cfg.reducer.max_docs {
                return Err(Usage(format!(
                    "detector_data.max_docs ({}) differs from reducer.max_docs ({})",
                    cfg.detector_data.max_docs, cfg.reducer.max_docs
                ))
                .into());
            }
            let qa = train_questions(&cfg)?;
            let provider = cfg.provider()?;
            let retriever = cfg.retriever(Arc::clone(&provider))?;
            let model = ScorerModel::load(cfg.require(&cfg.paths.scorer, "scorer")?)?;
            let scorer = Scorer::new(model, provider)?;
            let llm = cfg.llm_client()?;
            let data = build_detector_dataset(
                &qa,
                &retriever,
                &scorer,
                llm.as_ref(),
                &cfg.templates,
                &tok,
                &cfg.detector_data,
            )?;
            let out = output_path(cli, &cfg.paths.detector_data, "detector_data")?;
            save_examples(&out, &data.examples)?;
            log::info!(
                "{} combinations from {} questions ({} skipped) written to {}",
                data.examples.len(),
                qa.len() - data.skipped_questions.len(),
                data.skipped_questions.len(),
                out.display()
            );
        }
        Command::TrainDetector => {
            let examples = load_examples(cfg.require(&cfg.paths.detector_data, "detector_data")?)?;
            let trained = train_detector(&examples, &cfg.detector_training)?;
            let out = output_path(cli, &cfg.paths.detector, "detector")?;
            trained.model.save(&out)?;
            log::info!(
                "detector saved to {} (holdout accuracy {:.4} on {})",
                out.display(),
                trained.holdout_accuracy,
                trained.holdout_size
            );
        }
        Command::BuildNnRef => {
            let qa = train_questions(&cfg)?;
            let provider = cfg.provider()?;
            let llm = cfg.llm_client()?;
            let built = build_nn_reference(&qa, llm.as_ref(), provider.as_ref(), &cfg.templates, &tok)?;
            let out = output_path(cli, &cfg.paths.nn_reference, "nn_reference")?;
            built.reference.save(&out)?;
            log::info!(
                "{} reference questions ({} answered unaided) written to {}",
                built.reference.len(),
                built.reference.correct_count(),
                out.display()
            );
        }
        Command::Query { question, id, answers } => {
            let pipeline = cfg.build_pipeline()?;
            let gold = (!answers.is_empty()).then_some(answers.as_slice());
            let trace = pipeline.answer_question(id, question, gold)?;
            emit(cli, &serde_json::to_string_pretty(&trace)?)?;
        }
        Command::Eval { qa, ablations } => {
            let qa = match qa {
                Some(p) => read_questions(p)?,
                None => train_questions(&cfg)?,
            };
            let pipeline = cfg.build_pipeline()?;
            let report = pipeline.evaluate(&qa, ablations)?;
            emit(cli, &report.to_json())?;
            eprint!("{}", report.to_table());
        }
    }
    Ok(())
}
