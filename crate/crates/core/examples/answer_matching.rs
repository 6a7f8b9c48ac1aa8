// Parses numbered replies and checks sub-answers against gold.
//
// ```bash
// cargo run --example answer_matching
// ```

use mactune::boundary::{extract_choice, match_answer, normalize, parse_answers};
use mactune::data_model::{Choice, Format};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let reply = "1: The Eiffel Tower\n2. 1,000 metres\n3: I think it's (B)";
    let parsed = parse_answers(reply, 3, Format::QA);
    for (k, a) in parsed.answers.iter().enumerate() {
        println!("slot {}: {a:?}", k + 1);
    }

    let cases: [(&str, &[&str]); 5] = [
        ("the Eiffel Tower", &["Eiffel Tower"]),
        ("1,000 metres", &["1000"]),
        ("about $12.50", &["12.5"]),
        ("Paris, France", &["Paris"]),
        ("Lyon", &["Paris"]),
    ];
    for (pred, gold) in cases {
        let gold: Vec<String> = gold.iter().map(|g| g.to_string()).collect();
        println!(
            "{pred:>18} vs {gold:?} -> {} (normalized {:?})",
            match_answer(pred, &gold, Format::QA),
            normalize(pred)
        );
    }

    let choices = [
        Choice::new("A", "Mercury"),
        Choice::new("B", "Venus"),
        Choice::new("C", "Mars"),
    ];
    for slot in ["(B)", "C is my answer", "it must be Venus"] {
        println!("{slot:?} -> {:?}", extract_choice(slot, &choices));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("matching example failed");
}
