// Runs every stage against a mock model, then runs again to show that
// finished stages are skipped.
//
// ```bash
// cargo run --example mock_pipeline
// ```

use mactune::data_model::{Dataset, Problem, Setting};
use mactune::metrics::DiscriminatingTokens;
use mactune::model_client::MockModelSpec;
use mactune::pipeline::{run, BackendSpec, DatasetSpec, RunConfig, StageName};
use mactune::sft_emitter::QaSource;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let problems: Vec<Problem> = (0..30)
        .map(|i| {
            Problem::qa(
                format!("p{i:02}"),
                format!("What is {i} plus {i}?"),
                &[&(2 * i).to_string()],
            )
        })
        .collect();
    let data_path = dir.path().join("sums.jsonl");
    std::fs::write(
        &data_path,
        Dataset::new("sums", Setting::Independent, problems).to_jsonl(),
    )?;

    let config = RunConfig {
        dataset: DatasetSpec {
            path: data_path,
            setting: Setting::Independent,
            lenient: false,
        },
        n: 3,
        seed: 1,
        template: None,
        exemplar: None,
        backend: BackendSpec::Mock(MockModelSpec {
            accuracy: 0.7,
            ..Default::default()
        }),
        output_dir: dir.path().join("run"),
        stages: StageName::ALL.to_vec(),
        qa_source: QaSource::Model,
        parallelism: 4,
        max_tokens: 256,
        cache_dir: None,
        discriminating_tokens: DiscriminatingTokens::default(),
    };

    let first = run(&config)?;
    println!(
        "first run: {:?}, {} backend calls",
        first.executed, first.backend_calls
    );
    if let Some(report) = &first.report {
        print!("{}", report.render_table("mock", "sums"));
    }
    let second = run(&config)?;
    println!(
        "second run: skipped {:?}, {} backend calls",
        second.skipped, second.backend_calls
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("pipeline example failed");
}
