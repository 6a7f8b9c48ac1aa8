// Scores a handful of predictions: AP, ECE and accuracy among sure answers.
//
// ```bash
// cargo run --example calibration_metrics
// ```

use mactune::boundary::ConfidenceLabel;
use mactune::metrics::{average_precision, build_report, ece, PredictionRecord};

fn record(id: &str, correct: bool, confidence: f64) -> PredictionRecord {
    PredictionRecord {
        question_id: id.to_string(),
        correct,
        confidence,
        label: if confidence >= 0.5 {
            ConfidenceLabel::Sure
        } else {
            ConfidenceLabel::Unsure
        },
    }
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let records = vec![
        record("a", true, 0.95),
        record("b", true, 0.85),
        record("c", false, 0.80),
        record("d", true, 0.60),
        record("e", false, 0.30),
        record("f", false, 0.10),
    ];
    println!("AP  = {:.4}", average_precision(&records)?);
    println!("ECE = {:.4}", ece(&records)?);

    let report = build_report(&records)?;
    print!("{}", report.render_table("toy", "example"));
    print!("{}", report.bins_csv());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("metrics example failed");
}
