#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mactune::data_model::{Dataset, Problem, Setting};
use mactune::metrics::DiscriminatingTokens;
use mactune::model_client::{ConfidenceBehavior, MockModelSpec};
use mactune::pipeline::{BackendSpec, DatasetSpec, RunConfig, StageName};
use mactune::sft_emitter::QaSource;

/// The three-question fixture shared by the golden tests.
pub fn trio() -> Vec<Problem> {
    vec![
        Problem::qa("fr", "What is the capital of France?", &["Paris"]),
        Problem::qa("mul", "What is 6 times 7?", &["42"]),
        Problem::qa("sky", "What colour is a clear daytime sky?", &["Blue"]),
    ]
}

/// `count` distinct arithmetic questions with ids `p0000`, `p0001`, ...
pub fn synthetic_problems(count: usize) -> Vec<Problem> {
    (0..count)
        .map(|i| {
            Problem::qa(
                format!("p{i:04}"),
                format!("What is {i} plus {}?", i + 1),
                &[&(2 * i + 1).to_string()],
            )
        })
        .collect()
}

pub fn write_dataset(dir: &Path, name: &str, problems: Vec<Problem>) -> PathBuf {
    let path = dir.join(format!("{name}.jsonl"));
    let dataset = Dataset::new(name, Setting::Independent, problems);
    std::fs::write(&path, dataset.to_jsonl()).unwrap();
    path
}

pub fn mock_config(dataset: PathBuf, output_dir: PathBuf, n: usize, accuracy: f64) -> RunConfig {
    RunConfig {
        dataset: DatasetSpec {
            path: dataset,
            setting: Setting::Independent,
            lenient: false,
        },
        n,
        seed: 2024,
        template: None,
        exemplar: None,
        backend: BackendSpec::Mock(MockModelSpec {
            accuracy,
            seed: 5,
            confidence_behavior: ConfidenceBehavior::Honest,
            ..Default::default()
        }),
        output_dir,
        stages: StageName::ALL.to_vec(),
        qa_source: QaSource::Model,
        parallelism: 4,
        max_tokens: 256,
        cache_dir: None,
        discriminating_tokens: DiscriminatingTokens::default(),
    }
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
