// Sends one prompt to an OpenAI-compatible endpoint.
//
// Set `MACTUNE_BASE_URL` (for example `http://localhost:8000/v1`) and
// `MACTUNE_MODEL`; the key is read from `OPENAI_API_KEY` when present.
// Without those variables the example only prints what it would do.
//
// ```bash
// MACTUNE_BASE_URL=http://localhost:8000/v1 MACTUNE_MODEL=llama cargo run --example remote_client
// ```

use std::sync::Arc;

use mactune::model_client::{CompletionRequest, ModelClient, OpenAiBackend};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let (Ok(base_url), Ok(model)) = (
        std::env::var("MACTUNE_BASE_URL"),
        std::env::var("MACTUNE_MODEL"),
    ) else {
        println!("MACTUNE_BASE_URL / MACTUNE_MODEL not set; skipping remote call");
        return Ok(());
    };
    let backend = OpenAiBackend::from_env(&base_url, &model, "OPENAI_API_KEY");
    println!("endpoint: {}", backend.endpoint());
    let client = ModelClient::new(Arc::new(backend));
    let request = CompletionRequest::new("1: What is the capital of Italy?\n2: What is 3 + 4?")
        .with_max_tokens(64)
        .with_logprobs();
    let response = client.complete(&request)?;
    println!("{}", response.text);
    if let Some(tokens) = &response.token_logprobs {
        println!("{} tokens with log-probabilities", tokens.len());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("remote example failed");
}
