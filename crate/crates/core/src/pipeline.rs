//! End-to-end orchestration: ingest, compose, probe, emit, evaluate, report.
//!
//! Every stage writes plain files into the run's output directory and
//! records their SHA-256 in `manifest.json`. A stage whose inputs and
//! outputs are unchanged since the last run is skipped, so re-running a
//! finished configuration touches no files and makes no backend calls.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::{self, BoundaryRecord, ConfidenceLabel, ProbeOptions};
use crate::composer::{self, ComposeError, MultiProblem, PromptTemplate};
use crate::data_model::{self, DataError, Dataset, LoadOptions, Setting};
use crate::hashing;
use crate::metrics::{
    self, CalibrationReport, DiscriminatingTokens, MetricsError, PredictionRecord,
};
use crate::model_client::{
    Backend, CompletionRequest, CompletionResponse, MockModel, MockModelSpec, ModelClient,
    OpenAiBackend, ResponseCache, DEFAULT_MAX_TOKENS,
};
use crate::sft_emitter::{self, EmitError, QaSource, Stage};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const COMPOSITIONS_FILE: &str = "compositions.jsonl";
pub const BOUNDARY_FILE: &str = "boundary.jsonl";
pub const MULTQA_FILE: &str = "multqa.jsonl";
pub const MULTQA_CONF_FILE: &str = "multqa_conf.jsonl";
pub const CONFIDENCE_RESPONSES_FILE: &str = "confidence_responses.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const BINS_CSV_FILE: &str = "bins.csv";

/// Pipeline stages in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageName {
    Compose,
    Probe,
    Emit,
    Evaluate,
    Report,
}

impl StageName {
    pub const ALL: [StageName; 5] = [
        StageName::Compose,
        StageName::Probe,
        StageName::Emit,
        StageName::Evaluate,
        StageName::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Compose => "compose",
            StageName::Probe => "probe",
            StageName::Emit => "emit",
            StageName::Evaluate => "evaluate",
            StageName::Report => "report",
        }
    }

    fn artifacts(self) -> &'static [&'static str] {
        match self {
            StageName::Compose => &[COMPOSITIONS_FILE],
            StageName::Probe => &[BOUNDARY_FILE],
            StageName::Emit => &[MULTQA_FILE, MULTQA_CONF_FILE],
            StageName::Evaluate => &[
                CONFIDENCE_RESPONSES_FILE,
                PREDICTIONS_FILE,
                REPORT_JSON_FILE,
            ],
            StageName::Report => &[REPORT_TEXT_FILE, BINS_CSV_FILE],
        }
    }

    /// Upstream stages whose artifacts this stage reads.
    fn inputs(self) -> &'static [StageName] {
        match self {
            StageName::Compose => &[],
            StageName::Probe => &[StageName::Compose],
            StageName::Emit => &[StageName::Compose, StageName::Probe],
            StageName::Evaluate => &[StageName::Compose, StageName::Probe],
            StageName::Report => &[StageName::Evaluate],
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StageName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StageName::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub setting: Setting,
    #[serde(default)]
    pub lenient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Mock(MockModelSpec),
    Remote {
        base_url: String,
        model: String,
        #[serde(default = "default_api_key_env")]
        api_key_env: String,
    },
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

fn default_parallelism() -> usize {
    4
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

fn default_stages() -> Vec<StageName> {
    StageName::ALL.to_vec()
}

/// One run, as read from a JSON config file. Command-line flags override
/// individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub template: Option<PathBuf>,
    #[serde(default)]
    pub exemplar: Option<PathBuf>,
    pub backend: BackendSpec,
    pub output_dir: PathBuf,
    #[serde(default = "default_stages")]
    pub stages: Vec<StageName>,
    #[serde(default)]
    pub qa_source: QaSource,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub discriminating_tokens: DiscriminatingTokens,
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        if self.n == 0 {
            return Err(PipelineError::Usage("n must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(PipelineError::Usage(
                "parallelism must be at least 1".into(),
            ));
        }
        if self
            .stages
            .iter()
            .enumerate()
            .any(|(i, s)| *s != StageName::ALL[i])
        {
            let names: Vec<_> = self.stages.iter().map(|s| s.as_str()).collect();
            return Err(PipelineError::Usage(format!(
                "stages [{}] must be a prefix of compose, probe, emit, evaluate, report",
                names.join(", ")
            )));
        }
        Ok(())
    }

    /// The configuration minus filesystem locations and settings that cannot
    /// change an artifact. Two runs that differ only in those share this.
    fn portable(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let obj = value.as_object_mut().expect("config is an object");
        for key in [
            "output_dir",
            "cache_dir",
            "template",
            "exemplar",
            "stages",
            "parallelism",
        ] {
            obj.remove(key);
        }
        if let Some(ds) = obj.get_mut("dataset").and_then(|d| d.as_object_mut()) {
            ds.remove("path");
        }
        value
    }

    pub fn load_template(&self) -> Result<PromptTemplate, PipelineError> {
        let mut template = match &self.template {
            Some(path) => PromptTemplate::from_file(path)?,
            None => PromptTemplate::default(),
        };
        if let Some(path) = &self.exemplar {
            let text = fs::read_to_string(path)
                .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
            template = template.with_exemplar(text);
        }
        Ok(template)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Backend(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: StageName,
        #[source]
        source: Box<PipelineError>,
    },
}

impl PipelineError {
    /// Process exit code: 1 usage, 2 data, 3 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Data(_) => 2,
            PipelineError::Backend(_) => 3,
            PipelineError::Stage { source, .. } => source.exit_code(),
        }
    }

    fn in_stage(self, stage: StageName) -> Self {
        PipelineError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

impl From<DataError> for PipelineError {
    fn from(e: DataError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<ComposeError> for PipelineError {
    fn from(e: ComposeError) -> Self {
        match e {
            ComposeError::ZeroN => PipelineError::Usage(e.to_string()),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<EmitError> for PipelineError {
    fn from(e: EmitError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<MetricsError> for PipelineError {
    fn from(e: MetricsError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<boundary::ProbeError> for PipelineError {
    fn from(e: boundary::ProbeError) -> Self {
        PipelineError::Backend(e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Data(format!("{}: {e}", path.display()))
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).expect("record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::Data(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn read_compositions(path: &Path) -> Result<Vec<MultiProblem>, PipelineError> {
    let mut multis: Vec<MultiProblem> = read_jsonl(path)?;
    for m in &mut multis {
        m.relink();
    }
    Ok(multis)
}

pub fn read_boundary(path: &Path) -> Result<Vec<BoundaryRecord>, PipelineError> {
    let records: Vec<BoundaryRecord> = read_jsonl(path)?;
    for r in &records {
        r.check().map_err(PipelineError::Data)?;
    }
    Ok(records)
}

fn pair_records<'a>(
    multis: &'a [MultiProblem],
    records: &'a [BoundaryRecord],
) -> Result<Vec<(&'a MultiProblem, &'a BoundaryRecord)>, PipelineError> {
    if multis.len() != records.len() {
        return Err(PipelineError::Data(format!(
            "{} compositions but {} boundary records",
            multis.len(),
            records.len()
        )));
    }
    multis
        .iter()
        .zip(records)
        .map(|(m, r)| {
            if m.multi_id != r.multi_id {
                Err(PipelineError::Data(format!(
                    "boundary record {} does not line up with composition {}",
                    r.multi_id, m.multi_id
                )))
            } else {
                Ok((m, r))
            }
        })
        .collect()
}

/// Builds the configured backend. A mock learns the dataset's problems.
pub fn build_backend(
    spec: &BackendSpec,
    knowledge: &[crate::data_model::Problem],
) -> Arc<dyn Backend> {
    match spec {
        BackendSpec::Mock(mock) => {
            Arc::new(MockModel::new(mock.clone(), knowledge.iter().cloned()))
        }
        BackendSpec::Remote {
            base_url,
            model,
            api_key_env,
        } => Arc::new(OpenAiBackend::from_env(base_url, model, api_key_env)),
    }
}

/// Answer-stage and confidence-stage tuning records for a probed
/// composition.
pub fn tuning_records(
    multis: &[MultiProblem],
    records: &[BoundaryRecord],
    qa_source: QaSource,
) -> Result<
    (
        Vec<sft_emitter::TuningRecord>,
        Vec<sft_emitter::TuningRecord>,
    ),
    PipelineError,
> {
    let pairs = pair_records(multis, records)?;
    let answers = multis.iter().map(sft_emitter::build_multqa).collect();
    let confidences = pairs
        .into_iter()
        .map(|(m, r)| sft_emitter::build_multqa_conf(m, r, qa_source))
        .collect::<Result<_, _>>()?;
    Ok((answers, confidences))
}

/// A confidence response for one composition, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceResponse {
    pub multi_id: String,
    pub response: CompletionResponse,
}

/// Asks the model how sure it is about each of its probed answers.
pub fn query_confidences(
    multis: &[MultiProblem],
    records: &[BoundaryRecord],
    client: &ModelClient,
    options: ProbeOptions,
) -> Result<Vec<ConfidenceResponse>, PipelineError> {
    let pairs = pair_records(multis, records)?;
    let requests: Vec<CompletionRequest> = pairs
        .iter()
        .map(|(m, r)| {
            CompletionRequest::new(sft_emitter::confidence_prompt(m, &r.answers))
                .with_max_tokens(options.max_tokens)
                .with_logprobs()
        })
        .collect();
    client
        .complete_batch(&requests, options.parallelism)
        .into_iter()
        .zip(pairs)
        .enumerate()
        .map(|(index, (result, (m, _)))| {
            result
                .map(|response| ConfidenceResponse {
                    multi_id: m.multi_id.clone(),
                    response,
                })
                .map_err(|e| {
                    PipelineError::Backend(format!(
                        "confidence query {index} ({}): {e}",
                        m.multi_id
                    ))
                })
        })
        .collect()
}

/// One prediction per sub-question: correctness from probing, confidence
/// from the confidence response. A slot without a confidence phrase counts
/// as "I am unsure" with confidence 0.
pub fn predictions(
    multis: &[MultiProblem],
    records: &[BoundaryRecord],
    responses: &[ConfidenceResponse],
    tokens: &DiscriminatingTokens,
) -> Result<(Vec<PredictionRecord>, usize), PipelineError> {
    let pairs = pair_records(multis, records)?;
    if responses.len() != pairs.len() {
        return Err(PipelineError::Data(format!(
            "{} compositions but {} confidence responses",
            pairs.len(),
            responses.len()
        )));
    }
    let mut out = Vec::new();
    let mut unparsed = 0;
    for ((multi, record), conf) in pairs.into_iter().zip(responses) {
        if conf.multi_id != multi.multi_id {
            return Err(PipelineError::Data(format!(
                "confidence response {} does not line up with composition {}",
                conf.multi_id, multi.multi_id
            )));
        }
        for (i, problem) in multi.members.iter().enumerate() {
            let (label, confidence) =
                match metrics::confidence_score_with(&conf.response, i, tokens) {
                    Ok(score) => (
                        metrics::parse_confidence(&conf.response.text, i)
                            .unwrap_or(ConfidenceLabel::Unsure),
                        score,
                    ),
                    Err(_) => {
                        unparsed += 1;
                        (ConfidenceLabel::Unsure, 0.0)
                    }
                };
            out.push(PredictionRecord {
                question_id: problem.id.clone(),
                correct: record.matches[i],
                confidence,
                label,
            });
        }
    }
    Ok((out, unparsed))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub fingerprint: String,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub setting: Setting,
    pub problems: usize,
    pub sha256: String,
}

/// Everything needed to reproduce a run's artifacts from the input dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub dataset: DatasetInfo,
    pub n: usize,
    pub seed: u64,
    pub template_hash: String,
    pub template: PromptTemplate,
    pub backend_id: String,
    pub discriminating_tokens: DiscriminatingTokens,
    pub stages: BTreeMap<StageName, StageEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub executed: Vec<StageName>,
    pub skipped: Vec<StageName>,
    pub backend_calls: u64,
    pub manifest: RunManifest,
    pub report: Option<CalibrationReport>,
}

fn checksum(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(hashing::hash_bytes(&bytes))
}

fn read_manifest(path: &Path) -> Option<RunManifest> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Runs the configured stages in order.
pub fn run(config: &RunConfig) -> Result<RunSummary, PipelineError> {
    config.check()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;

    let dataset_bytes =
        fs::read(&config.dataset.path).map_err(|e| io_error(&config.dataset.path, e))?;
    let dataset = data_model::load_dataset_with(
        &config.dataset.path,
        config.dataset.setting,
        LoadOptions {
            lenient: config.dataset.lenient,
        },
    )?;
    let template = config.load_template()?;
    let backend = build_backend(&config.backend, &dataset.problems);
    let cache = match &config.cache_dir {
        Some(dir) => ResponseCache::on_disk(dir),
        None => ResponseCache::in_memory(),
    };
    let client = ModelClient::new(backend).with_cache(Some(cache));

    let portable = config.portable();
    let config_hash = hashing::hash_bytes(portable.to_string().as_bytes());
    let manifest_path = out.join(MANIFEST_FILE);
    let previous = read_manifest(&manifest_path);

    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash.clone(),
        config: portable,
        dataset: DatasetInfo {
            name: dataset.name.clone(),
            setting: dataset.setting,
            problems: dataset.len(),
            sha256: hashing::hash_bytes(&dataset_bytes),
        },
        n: config.n,
        seed: config.seed,
        template_hash: template.fingerprint(),
        template: template.clone(),
        backend_id: client.backend_id(),
        discriminating_tokens: config.discriminating_tokens.clone(),
        stages: BTreeMap::new(),
    };
    // Keep entries of stages outside this run's list so a shorter rerun does
    // not forget what a longer one produced.
    if let Some(prev) = &previous {
        if prev.config_hash == manifest.config_hash && prev.dataset == manifest.dataset {
            manifest.stages = prev.stages.clone();
        }
    }

    let ctx = StageContext {
        config,
        dataset: &dataset,
        template: &template,
        client: &client,
        out,
    };
    let mut executed = Vec::new();
    let mut skipped = Vec::new();

    for &stage in &config.stages {
        let mut fingerprint_parts: Vec<String> = vec![
            stage.as_str().to_string(),
            config_hash.clone(),
            manifest.dataset.sha256.clone(),
            manifest.template_hash.clone(),
            manifest.backend_id.clone(),
        ];
        for input in stage.inputs() {
            let entry = manifest.stages.get(input).ok_or_else(|| {
                PipelineError::Usage(format!("stage `{stage}` needs `{input}` to run first"))
                    .in_stage(stage)
            })?;
            fingerprint_parts.extend(entry.artifacts.values().cloned());
        }
        let parts: Vec<&[u8]> = fingerprint_parts.iter().map(|p| p.as_bytes()).collect();
        let fingerprint = hashing::hash_parts(&parts);

        if let Some(entry) = manifest.stages.get(&stage) {
            if entry.fingerprint == fingerprint && artifacts_intact(out, entry) {
                skipped.push(stage);
                continue;
            }
        }

        ctx.execute(stage).map_err(|e| e.in_stage(stage))?;
        let mut artifacts = BTreeMap::new();
        for name in stage.artifacts() {
            artifacts.insert(name.to_string(), checksum(&out.join(name))?);
        }
        manifest.stages.insert(
            stage,
            StageEntry {
                fingerprint,
                artifacts,
            },
        );
        // Drop downstream entries; their inputs may have changed.
        manifest
            .stages
            .retain(|s, _| *s <= stage || !depends_on(*s, stage));
        write_manifest(&manifest_path, &manifest)?;
        executed.push(stage);
    }
    write_manifest(&manifest_path, &manifest)?;

    let report_path = out.join(REPORT_JSON_FILE);
    let report = if manifest.stages.contains_key(&StageName::Evaluate) {
        let text = fs::read_to_string(&report_path).map_err(|e| io_error(&report_path, e))?;
        Some(serde_json::from_str(&text).map_err(|e| PipelineError::Data(e.to_string()))?)
    } else {
        None
    };

    Ok(RunSummary {
        executed,
        skipped,
        backend_calls: client.backend_calls(),
        manifest,
        report,
    })
}

fn depends_on(stage: StageName, upstream: StageName) -> bool {
    stage
        .inputs()
        .iter()
        .any(|&i| i == upstream || depends_on(i, upstream))
}

fn artifacts_intact(out: &Path, entry: &StageEntry) -> bool {
    entry
        .artifacts
        .iter()
        .all(|(name, sum)| checksum(&out.join(name)).is_ok_and(|s| &s == sum))
}

struct StageContext<'a> {
    config: &'a RunConfig,
    dataset: &'a Dataset,
    template: &'a PromptTemplate,
    client: &'a ModelClient,
    out: &'a Path,
}

impl StageContext<'_> {
    fn options(&self) -> ProbeOptions {
        ProbeOptions {
            max_tokens: self.config.max_tokens,
            parallelism: self.config.parallelism,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn execute(&self, stage: StageName) -> Result<(), PipelineError> {
        match stage {
            StageName::Compose => {
                let multis = composer::compose_with_template(
                    self.dataset,
                    self.config.n,
                    self.config.seed,
                    self.template,
                )?;
                write_jsonl(&self.path(COMPOSITIONS_FILE), &multis)
            }
            StageName::Probe => {
                let multis = read_compositions(&self.path(COMPOSITIONS_FILE))?;
                let records = boundary::probe(&multis, self.client, self.options())?;
                write_jsonl(&self.path(BOUNDARY_FILE), &records)
            }
            StageName::Emit => {
                let multis = read_compositions(&self.path(COMPOSITIONS_FILE))?;
                let records = read_boundary(&self.path(BOUNDARY_FILE))?;
                let (answers, confidences) =
                    tuning_records(&multis, &records, self.config.qa_source)?;
                sft_emitter::emit(&answers, Stage::Qa, self.path(MULTQA_FILE))?;
                sft_emitter::emit(&confidences, Stage::QaConf, self.path(MULTQA_CONF_FILE))?;
                Ok(())
            }
            StageName::Evaluate => {
                let multis = read_compositions(&self.path(COMPOSITIONS_FILE))?;
                let records = read_boundary(&self.path(BOUNDARY_FILE))?;
                let responses = query_confidences(&multis, &records, self.client, self.options())?;
                write_jsonl(&self.path(CONFIDENCE_RESPONSES_FILE), &responses)?;
                let (preds, _unparsed) = predictions(
                    &multis,
                    &records,
                    &responses,
                    &self.config.discriminating_tokens,
                )?;
                write_jsonl(&self.path(PREDICTIONS_FILE), &preds)?;
                let report = metrics::build_report(&preds)?;
                let path = self.path(REPORT_JSON_FILE);
                let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
                text.push('\n');
                fs::write(&path, text).map_err(|e| io_error(&path, e))
            }
            StageName::Report => {
                let path = self.path(REPORT_JSON_FILE);
                let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
                let report: CalibrationReport =
                    serde_json::from_str(&text).map_err(|e| PipelineError::Data(e.to_string()))?;
                let label = match &self.config.backend {
                    BackendSpec::Mock(_) => "mock".to_string(),
                    BackendSpec::Remote { model, .. } => model.clone(),
                };
                let table = report.render_table(&label, &self.dataset.name);
                let txt = self.path(REPORT_TEXT_FILE);
                fs::write(&txt, table).map_err(|e| io_error(&txt, e))?;
                let csv = self.path(BINS_CSV_FILE);
                fs::write(&csv, report.bins_csv()).map_err(|e| io_error(&csv, e))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_list_must_be_a_prefix() {
        let mut cfg = RunConfig {
            dataset: DatasetSpec {
                path: "x.jsonl".into(),
                setting: Setting::Independent,
                lenient: false,
            },
            n: 3,
            seed: 0,
            template: None,
            exemplar: None,
            backend: BackendSpec::Mock(MockModelSpec::default()),
            output_dir: "out".into(),
            stages: vec![StageName::Compose, StageName::Probe],
            qa_source: QaSource::Model,
            parallelism: 1,
            max_tokens: 64,
            cache_dir: None,
            discriminating_tokens: DiscriminatingTokens::default(),
        };
        assert!(cfg.check().is_ok());
        cfg.stages = vec![StageName::Probe];
        assert_eq!(cfg.check().unwrap_err().exit_code(), 1);
        cfg.stages = vec![StageName::Compose, StageName::Emit];
        assert!(cfg.check().is_err());
        cfg.stages = vec![StageName::Compose];
        cfg.n = 0;
        assert!(cfg.check().is_err());
    }

    #[test]
    fn portable_config_drops_locations() {
        let text = r#"{"dataset":{"path":"/a/b.jsonl","setting":"independent"},"n":2,"seed":1,
            "backend":{"kind":"mock","accuracy":0.5},"output_dir":"/tmp/x","cache_dir":"/tmp/c"}"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        let p = cfg.portable();
        assert!(p.get("output_dir").is_none());
        assert!(p.get("cache_dir").is_none());
        assert!(p["dataset"].get("path").is_none());
        assert_eq!(p["backend"]["accuracy"], 0.5);
        assert_eq!(cfg.stages, StageName::ALL.to_vec());
    }

    #[test]
    fn downstream_dependencies() {
        assert!(depends_on(StageName::Report, StageName::Compose));
        assert!(depends_on(StageName::Emit, StageName::Probe));
        assert!(!depends_on(StageName::Emit, StageName::Evaluate));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(
            PipelineError::Data("x".into())
                .in_stage(StageName::Probe)
                .exit_code(),
            2
        );
        assert_eq!(PipelineError::Backend("x".into()).exit_code(), 3);
    }
}
