// Probes a mock model that knows about half of the problems.
//
// ```bash
// cargo run --example probe_boundary
// ```

use std::sync::Arc;

use mactune::boundary::{probe, ProbeOptions};
use mactune::composer::compose;
use mactune::data_model::{Dataset, Problem, Setting};
use mactune::model_client::{MockModel, MockModelSpec, ModelClient};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let problems: Vec<Problem> = (1..=9)
        .map(|i| {
            Problem::qa(
                format!("q{i}"),
                format!("What is {i} squared?"),
                &[&(i * i).to_string()],
            )
        })
        .collect();
    let dataset = Dataset::new("squares", Setting::Independent, problems);
    let multis = compose(&dataset, 3, 7)?;

    let spec = MockModelSpec {
        accuracy: 0.5,
        seed: 1,
        ..Default::default()
    };
    let client = ModelClient::new(Arc::new(MockModel::new(spec, dataset.problems.clone())));
    let records = probe(&multis, &client, ProbeOptions::default())?;
    for r in &records {
        println!("{}", serde_json::to_string(r)?);
    }
    let sure = records
        .iter()
        .flat_map(|r| &r.labels)
        .filter(|l| l.is_sure())
        .count();
    println!("{sure} of {} sub-answers labeled sure", dataset.len());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("probe example failed");
}
