use aho_corasick::{AhoCorasick, MatchKind};
use serde::{Deserialize, Serialize};

use super::{
    Backend, BackendError, CompletionRequest, CompletionResponse, TokenLogprob, TopLogprob,
};
use crate::boundary::ConfidenceLabel;
use crate::data_model::{Format, Problem};
use crate::hashing;

pub use crate::sft_emitter::CERTAINTY_QUESTION as CONFIDENCE_QUESTION;

/// How the mock answers the certainty question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceBehavior {
    /// "I am sure" exactly for the problems it answers correctly.
    Honest,
    /// Always "I am sure".
    Overconfident,
    /// Always "I am unsure".
    Underconfident,
}

impl std::str::FromStr for ConfidenceBehavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "honest" => Ok(Self::Honest),
            "overconfident" => Ok(Self::Overconfident),
            "underconfident" => Ok(Self::Underconfident),
            other => Err(format!(
                "unknown confidence behavior `{other}` (expected honest|overconfident|underconfident)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockModelSpec {
    pub accuracy: f64,
    pub wrong_answer_text: String,
    pub seed: u64,
    pub confidence_behavior: ConfidenceBehavior,
}

impl Default for MockModelSpec {
    fn default() -> Self {
        Self {
            accuracy: 1.0,
            wrong_answer_text: "I don't know".to_string(),
            seed: 0,
            confidence_behavior: ConfidenceBehavior::Honest,
        }
    }
}

impl MockModelSpec {
    /// Probability mass the mock puts on "sure" at the discriminating token.
    fn sure_probability(&self, sure: bool) -> f64 {
        match (self.confidence_behavior, sure) {
            (ConfidenceBehavior::Honest, true) => 1.0,
            (ConfidenceBehavior::Honest, false) => 0.0,
            (ConfidenceBehavior::Overconfident, _) => 0.95,
            (ConfidenceBehavior::Underconfident, _) => 0.2,
        }
    }
}

/// Deterministic stand-in for a language model.
///
/// The mock knows a fixed set of problems. It finds their question texts in
/// the prompt (leftmost-longest, in prompt order) and answers slot `k` with
/// the gold answer when it "knows" that problem and with
/// `wrong_answer_text` otherwise. Whether it knows a problem depends only on
/// `(seed, problem id)`, so correctness is stable across `n`, prompt layouts
/// and runs. Prompts containing the certainty question get numbered
/// confidence phrases instead.
pub struct MockModel {
    spec: MockModelSpec,
    problems: Vec<Problem>,
    matcher: Option<AhoCorasick>,
    pattern_owner: Vec<usize>,
    id: String,
}

impl MockModel {
    pub fn new(spec: MockModelSpec, knowledge: impl IntoIterator<Item = Problem>) -> Self {
        let problems: Vec<Problem> = knowledge.into_iter().collect();
        let mut patterns: Vec<String> = Vec::new();
        let mut pattern_owner = Vec::new();
        for (i, p) in problems.iter().enumerate() {
            let q = p.question.trim();
            if q.is_empty() || patterns.iter().any(|existing| existing == q) {
                continue;
            }
            patterns.push(q.to_string());
            pattern_owner.push(i);
        }
        let matcher = (!patterns.is_empty()).then(|| {
            AhoCorasick::builder()
                .match_kind(MatchKind::LeftmostLongest)
                .build(&patterns)
                .expect("question automaton builds")
        });

        let mut fingerprint = serde_json::to_string(&spec).expect("spec serializes");
        for p in &problems {
            fingerprint.push_str(&serde_json::to_string(p).expect("problem serializes"));
        }
        let digest = hashing::hash_bytes(fingerprint.as_bytes());
        let id = format!(
            "mock(accuracy={},seed={},{:?})#{}",
            spec.accuracy,
            spec.seed,
            spec.confidence_behavior,
            &digest[..12]
        )
        .to_lowercase();

        Self {
            spec,
            problems,
            matcher,
            pattern_owner,
            id,
        }
    }

    pub fn spec(&self) -> &MockModelSpec {
        &self.spec
    }

    /// Whether the mock answers `problem` correctly.
    pub fn knows(&self, problem: &Problem) -> bool {
        hashing::unit_interval(self.spec.seed, &problem.id) < self.spec.accuracy
    }

    /// Known problems whose questions appear in `prompt`, in prompt order.
    pub fn recognize(&self, prompt: &str) -> Vec<&Problem> {
        let Some(matcher) = &self.matcher else {
            return Vec::new();
        };
        matcher
            .find_iter(prompt)
            .map(|m| &self.problems[self.pattern_owner[m.pattern().as_usize()]])
            .collect()
    }

    fn answer_for(&self, problem: &Problem) -> String {
        if !self.knows(problem) {
            return self.spec.wrong_answer_text.clone();
        }
        match problem.format {
            Format::MC => problem
                .gold_letters()
                .into_iter()
                .next()
                .unwrap_or_else(|| problem.canonical_answer().to_string()),
            Format::QA => problem.canonical_answer().to_string(),
        }
    }

    fn answer_response(&self, problems: &[&Problem], logprobs: bool) -> CompletionResponse {
        let text = problems
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{}: {}", i + 1, self.answer_for(p)))
            .collect::<Vec<_>>()
            .join("\n");
        let token_logprobs = logprobs.then(|| word_tokens(&text));
        CompletionResponse {
            text,
            token_logprobs,
            backend_id: self.id.clone(),
        }
    }

    fn confidence_response(&self, problems: &[&Problem], logprobs: bool) -> CompletionResponse {
        let mut text = String::new();
        let mut tokens = Vec::new();
        for (i, p) in problems.iter().enumerate() {
            let sure = match self.spec.confidence_behavior {
                ConfidenceBehavior::Honest => self.knows(p),
                ConfidenceBehavior::Overconfident => true,
                ConfidenceBehavior::Underconfident => false,
            };
            let label = if sure {
                ConfidenceLabel::Sure
            } else {
                ConfidenceLabel::Unsure
            };
            let lead = if i == 0 { "" } else { " " };
            text.push_str(&format!("{lead}{}: {}", i + 1, label.rendered()));

            let p_sure = self.spec.sure_probability(sure);
            // Zero-probability alternatives are left out, as a real top list would.
            let top: Vec<TopLogprob> = [(" sure", p_sure), (" unsure", 1.0 - p_sure)]
                .into_iter()
                .filter(|&(_, p)| p > 0.0)
                .map(|(token, p)| TopLogprob {
                    token: token.into(),
                    logprob: p.ln(),
                })
                .collect();
            let chosen = if sure { p_sure } else { 1.0 - p_sure };
            tokens.push(TokenLogprob::certain(format!("{lead}{}", i + 1)));
            tokens.push(TokenLogprob::certain(":"));
            tokens.push(TokenLogprob::certain(" I"));
            tokens.push(TokenLogprob::certain(" am"));
            tokens.push(TokenLogprob {
                token: if sure { " sure" } else { " unsure" }.to_string(),
                logprob: chosen.ln(),
                top,
            });
        }
        CompletionResponse {
            text,
            token_logprobs: logprobs.then_some(tokens),
            backend_id: self.id.clone(),
        }
    }
}

/// Whitespace-led word tokens with probability one.
fn word_tokens(text: &str) -> Vec<TokenLogprob> {
    let mut tokens = Vec::new();
    let mut start = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() && in_word {
            tokens.push(TokenLogprob::certain(&text[start..i]));
            start = i;
            in_word = false;
        } else if !c.is_whitespace() {
            in_word = true;
        }
    }
    if start < text.len() {
        tokens.push(TokenLogprob::certain(&text[start..]));
    }
    tokens
}

impl Backend for MockModel {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn generate(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let problems = self.recognize(&request.prompt);
        if request.prompt.contains(CONFIDENCE_QUESTION) {
            Ok(self.confidence_response(&problems, request.logprob_request))
        } else {
            Ok(self.answer_response(&problems, request.logprob_request))
        }
    }
}
