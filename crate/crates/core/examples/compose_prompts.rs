// Groups a small dataset into three-question prompts, in both settings.
//
// ```bash
// cargo run --example compose_prompts
// ```

use mactune::composer::{compose, compose_with_template, PromptTemplate};
use mactune::data_model::{Dataset, Problem, Setting};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let problems = vec![
        Problem::qa("q1", "What is the capital of France?", &["Paris"]),
        Problem::qa("q2", "How many legs does a spider have?", &["8", "eight"]),
        Problem::qa("q3", "Who wrote Hamlet?", &["William Shakespeare"]),
        Problem::qa(
            "q4",
            "What gas do plants absorb?",
            &["carbon dioxide", "CO2"],
        ),
        Problem::qa(
            "q5",
            "What is the boiling point of water in Celsius?",
            &["100"],
        ),
    ];
    let dataset = Dataset::new("trivia", Setting::Independent, problems);

    let multis = compose(&dataset, 3, 42)?;
    println!("{} instances from {} problems", multis.len(), dataset.len());
    for m in &multis {
        println!("--- {} ({:?})", m.multi_id, m.member_ids());
        println!("{}", m.prompt);
    }

    let story = "Anna keeps three cats. The oldest is called Miso.";
    let turns = vec![
        Problem::qa("s1-1", "How many cats does Anna keep?", &["three"])
            .with_context(story)
            .with_group("s1"),
        Problem::qa("s1-2", "What is the oldest cat called?", &["Miso"])
            .with_context(story)
            .with_group("s1"),
    ];
    let conversation = Dataset::new("story", Setting::Sequential, turns);
    let template = PromptTemplate::default()
        .with_exemplar("1: What is 2+2?\n2: Name a primary colour.\nAnswers:\n1: 4\n2: red");
    let sequential = compose_with_template(&conversation, 3, 0, &template)?;
    println!("--- sequential, shared context kept once");
    println!("{}", sequential[0].prompt);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("compose example failed");
}
