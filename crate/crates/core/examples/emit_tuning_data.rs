// Writes both fine-tuning files for a probed composition.
//
// ```bash
// cargo run --example emit_tuning_data
// ```

use std::sync::Arc;

use mactune::boundary::{probe, ProbeOptions};
use mactune::composer::compose;
use mactune::data_model::{Choice, Dataset, Problem, Setting};
use mactune::model_client::{MockModel, MockModelSpec, ModelClient};
use mactune::sft_emitter::{build_multqa, build_multqa_conf, emit, QaSource, Stage};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let problems = vec![
        Problem::qa("q1", "What is the capital of Japan?", &["Tokyo"]),
        Problem::mc(
            "q2",
            "Which planet is closest to the sun?",
            vec![Choice::new("A", "Venus"), Choice::new("B", "Mercury")],
            &["B"],
        ),
        Problem::qa("q3", "What is 7 times 6?", &["42"]),
        Problem::qa("q4", "Who painted the Mona Lisa?", &["Leonardo da Vinci"]),
    ];
    let dataset = Dataset::new("mixed", Setting::Independent, problems);
    let multis = compose(&dataset, 2, 3)?;
    let spec = MockModelSpec {
        accuracy: 0.6,
        ..Default::default()
    };
    let client = ModelClient::new(Arc::new(MockModel::new(spec, dataset.problems.clone())));
    let records = probe(&multis, &client, ProbeOptions::default())?;

    let answers: Vec<_> = multis.iter().map(build_multqa).collect();
    let confidences = multis
        .iter()
        .zip(&records)
        .map(|(m, r)| build_multqa_conf(m, r, QaSource::Model))
        .collect::<Result<Vec<_>, _>>()?;

    let dir = tempfile::tempdir()?;
    let qa_path = dir.path().join("multqa.jsonl");
    let conf_path = dir.path().join("multqa_conf.jsonl");
    emit(&answers, Stage::Qa, &qa_path)?;
    emit(&confidences, Stage::QaConf, &conf_path)?;
    print!("{}", std::fs::read_to_string(&qa_path)?);
    print!("{}", std::fs::read_to_string(&conf_path)?);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("emit example failed");
}
