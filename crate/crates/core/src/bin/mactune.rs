use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mactune::boundary::{self, ProbeOptions};
use mactune::composer::{self, MultiProblem, PromptTemplate};
use mactune::data_model::{self, LoadOptions, Setting};
use mactune::metrics::{self, CalibrationReport, DiscriminatingTokens, PredictionRecord};
use mactune::model_client::{ConfidenceBehavior, MockModelSpec, ModelClient, ResponseCache};
use mactune::pipeline::{self, BackendSpec, PipelineError, RunConfig, StageName};
use mactune::sft_emitter::{self, QaSource, Stage};

#[derive(Parser)]
#[command(
    name = "mactune",
    version,
    about = "Multi-problem confidence tuning toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset file and list every violation.
    Validate {
        dataset: PathBuf,
        #[arg(long, default_value = "independent")]
        setting: Setting,
        #[arg(long)]
        lenient: bool,
    },
    /// Group problems into multi-problem prompts.
    Compose {
        dataset: PathBuf,
        #[arg(long, default_value = "independent")]
        setting: Setting,
        #[arg(long)]
        lenient: bool,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        exemplar: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ask the model every composed prompt and label each answer.
    Probe {
        #[arg(long)]
        compositions: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write tuning records for one stage.
    Emit {
        #[arg(long)]
        compositions: PathBuf,
        #[arg(long)]
        boundary: PathBuf,
        #[arg(long)]
        stage: Stage,
        #[arg(long, default_value = "model")]
        qa_source: QaSource,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score confidence against probed correctness.
    Evaluate {
        #[arg(long)]
        compositions: Option<PathBuf>,
        #[arg(long)]
        boundary: Option<PathBuf>,
        /// Existing predictions; skips querying the model.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print the results table for a report.json.
    Report {
        report: PathBuf,
        #[arg(long, default_value = "model")]
        model: String,
        #[arg(long, default_value = "dataset")]
        dataset: String,
        /// Also write the calibration bins as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the pipeline from a JSON config. Flags override file values.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<StageName>>,
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        exemplar: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        qa_source: Option<QaSource>,
        #[arg(long)]
        mock_accuracy: Option<f64>,
        #[arg(long)]
        mock_seed: Option<u64>,
        #[arg(long)]
        mock_behavior: Option<ConfidenceBehavior>,
    },
}

#[derive(Args)]
struct BackendArgs {
    /// Remote OpenAI-compatible endpoint; the mock is used when absent.
    #[arg(long, requires = "model")]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    #[arg(long, default_value_t = 1.0)]
    mock_accuracy: f64,
    #[arg(long, default_value_t = 0)]
    mock_seed: u64,
    #[arg(long, default_value = "honest")]
    mock_behavior: ConfidenceBehavior,
    #[arg(long, default_value = "I don't know")]
    mock_wrong: String,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
    #[arg(long, default_value_t = 512)]
    max_tokens: u32,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

impl BackendArgs {
    fn spec(&self) -> BackendSpec {
        match (&self.base_url, &self.model) {
            (Some(base_url), Some(model)) => BackendSpec::Remote {
                base_url: base_url.clone(),
                model: model.clone(),
                api_key_env: self.api_key_env.clone(),
            },
            _ => BackendSpec::Mock(MockModelSpec {
                accuracy: self.mock_accuracy,
                wrong_answer_text: self.mock_wrong.clone(),
                seed: self.mock_seed,
                confidence_behavior: self.mock_behavior,
            }),
        }
    }

    fn client(&self, multis: &[MultiProblem]) -> ModelClient {
        let knowledge: Vec<_> = multis
            .iter()
            .flat_map(|m| m.members.iter().cloned())
            .collect();
        let cache = match &self.cache_dir {
            Some(dir) => ResponseCache::on_disk(dir),
            None => ResponseCache::in_memory(),
        };
        ModelClient::new(pipeline::build_backend(&self.spec(), &knowledge)).with_cache(Some(cache))
    }

    fn options(&self) -> Result<ProbeOptions, PipelineError> {
        if self.parallelism == 0 {
            return Err(PipelineError::Usage(
                "parallelism must be at least 1".into(),
            ));
        }
        Ok(ProbeOptions {
            max_tokens: self.max_tokens,
            parallelism: self.parallelism,
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(format!("{}: {e}", path.display()))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), PipelineError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| data_err(path, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| PipelineError::Data(e.to_string())),
    }
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("record serializes") + "\n")
        .collect()
}

fn write_pretty<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    fs::write(path, text).map_err(|e| data_err(path, e))
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Validate {
            dataset,
            setting,
            lenient,
        } => {
            let ds = data_model::load_dataset_with(&dataset, setting, LoadOptions { lenient })?;
            let violations = data_model::validate(&ds);
            for v in &violations {
                println!("{v}");
            }
            if violations.is_empty() {
                println!("{}: {} problems, ok", ds.name, ds.len());
                Ok(())
            } else {
                Err(PipelineError::Data(format!(
                    "{} violations",
                    violations.len()
                )))
            }
        }
        Command::Compose {
            dataset,
            setting,
            lenient,
            n,
            seed,
            template,
            exemplar,
            out,
        } => {
            let ds = data_model::load_dataset_with(&dataset, setting, LoadOptions { lenient })?;
            let mut tpl = match template {
                Some(path) => PromptTemplate::from_file(path)?,
                None => PromptTemplate::default(),
            };
            if let Some(path) = exemplar {
                tpl = tpl.with_exemplar(fs::read_to_string(&path).map_err(|e| data_err(&path, e))?);
            }
            let multis = composer::compose_with_template(&ds, n, seed, &tpl)?;
            write_output(out.as_deref(), &jsonl(&multis))
        }
        Command::Probe {
            compositions,
            backend,
            out,
        } => {
            let multis = pipeline::read_compositions(&compositions)?;
            let options = backend.options()?;
            let records = boundary::probe(&multis, &backend.client(&multis), options)?;
            write_output(out.as_deref(), &jsonl(&records))
        }
        Command::Emit {
            compositions,
            boundary,
            stage,
            qa_source,
            out,
        } => {
            let multis = pipeline::read_compositions(&compositions)?;
            let records = pipeline::read_boundary(&boundary)?;
            let (answers, confidences) = pipeline::tuning_records(&multis, &records, qa_source)?;
            let chosen = match stage {
                Stage::Qa => answers,
                Stage::QaConf => confidences,
            };
            let count = sft_emitter::emit(&chosen, stage, &out)?;
            eprintln!("wrote {count} records to {}", out.display());
            Ok(())
        }
        Command::Evaluate {
            compositions,
            boundary,
            predictions,
            backend,
            out_dir,
        } => {
            fs::create_dir_all(&out_dir).map_err(|e| data_err(&out_dir, e))?;
            let preds: Vec<PredictionRecord> = match (predictions, compositions, boundary) {
                (Some(path), _, _) => pipeline::read_jsonl(&path)?,
                (None, Some(c), Some(b)) => {
                    let multis = pipeline::read_compositions(&c)?;
                    let records = pipeline::read_boundary(&b)?;
                    let options = backend.options()?;
                    let responses = pipeline::query_confidences(
                        &multis,
                        &records,
                        &backend.client(&multis),
                        options,
                    )?;
                    pipeline::write_jsonl(
                        &out_dir.join(pipeline::CONFIDENCE_RESPONSES_FILE),
                        &responses,
                    )?;
                    let (preds, unparsed) = pipeline::predictions(
                        &multis,
                        &records,
                        &responses,
                        &DiscriminatingTokens::default(),
                    )?;
                    if unparsed > 0 {
                        eprintln!("{unparsed} confidence slots unparseable, scored as unsure");
                    }
                    preds
                }
                _ => {
                    return Err(PipelineError::Usage(
                        "evaluate needs --predictions, or --compositions with --boundary".into(),
                    ))
                }
            };
            pipeline::write_jsonl(&out_dir.join(pipeline::PREDICTIONS_FILE), &preds)?;
            let report = metrics::build_report(&preds)?;
            write_pretty(&out_dir.join(pipeline::REPORT_JSON_FILE), &report)?;
            let table = report.render_table("model", "dataset");
            fs::write(out_dir.join(pipeline::REPORT_TEXT_FILE), &table)
                .map_err(|e| data_err(&out_dir, e))?;
            fs::write(out_dir.join(pipeline::BINS_CSV_FILE), report.bins_csv())
                .map_err(|e| data_err(&out_dir, e))?;
            print!("{table}");
            Ok(())
        }
        Command::Report {
            report,
            model,
            dataset,
            csv,
        } => {
            let text = fs::read_to_string(&report).map_err(|e| data_err(&report, e))?;
            let parsed: CalibrationReport =
                serde_json::from_str(&text).map_err(|e| data_err(&report, e))?;
            print!("{}", parsed.render_table(&model, &dataset));
            if let Some(path) = csv {
                fs::write(&path, parsed.bins_csv()).map_err(|e| data_err(&path, e))?;
            }
            Ok(())
        }
        Command::Run {
            config,
            n,
            seed,
            output_dir,
            stages,
            template,
            exemplar,
            parallelism,
            cache_dir,
            qa_source,
            mock_accuracy,
            mock_seed,
            mock_behavior,
        } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if let Some(v) = n {
                cfg.n = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = output_dir {
                cfg.output_dir = v;
            }
            if let Some(v) = stages {
                cfg.stages = v;
            }
            if template.is_some() {
                cfg.template = template;
            }
            if exemplar.is_some() {
                cfg.exemplar = exemplar;
            }
            if let Some(v) = parallelism {
                cfg.parallelism = v;
            }
            if cache_dir.is_some() {
                cfg.cache_dir = cache_dir;
            }
            if let Some(v) = qa_source {
                cfg.qa_source = v;
            }
            if let BackendSpec::Mock(spec) = &mut cfg.backend {
                if let Some(v) = mock_accuracy {
                    spec.accuracy = v;
                }
                if let Some(v) = mock_seed {
                    spec.seed = v;
                }
                if let Some(v) = mock_behavior {
                    spec.confidence_behavior = v;
                }
            } else if mock_accuracy.is_some() || mock_seed.is_some() || mock_behavior.is_some() {
                return Err(PipelineError::Usage(
                    "mock flags given but the config uses a remote backend".into(),
                ));
            }
            let summary = pipeline::run(&cfg)?;
            for stage in &summary.executed {
                eprintln!("ran {stage}");
            }
            for stage in &summary.skipped {
                eprintln!("skipped {stage} (unchanged)");
            }
            eprintln!("backend calls: {}", summary.backend_calls);
            if let Some(report) = &summary.report {
                print!(
                    "{}",
                    report
                        .render_table(&summary.manifest.backend_id, &summary.manifest.dataset.name)
                );
            }
            Ok(())
        }
    }
}
