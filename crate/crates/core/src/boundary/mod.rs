//! Knowledge-boundary probing: ask the model every composed prompt, compare
//! each sub-answer with gold, and label it "I am sure" or "I am unsure".

pub mod matching;
pub mod parse;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::composer::MultiProblem;
use crate::data_model::Format;
use crate::model_client::{ClientError, CompletionRequest, ModelClient, DEFAULT_MAX_TOKENS};

pub use matching::{match_answer, match_problem, normalize};
pub use parse::{extract_choice, parse_answers, ParsedAnswers};

pub const SURE_PHRASE: &str = "I am sure";
pub const UNSURE_PHRASE: &str = "I am unsure";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConfidenceLabel {
    Sure,
    Unsure,
}

impl ConfidenceLabel {
    pub fn from_match(matched: bool) -> Self {
        if matched {
            Self::Sure
        } else {
            Self::Unsure
        }
    }

    pub fn rendered(self) -> &'static str {
        match self {
            Self::Sure => SURE_PHRASE,
            Self::Unsure => UNSURE_PHRASE,
        }
    }

    pub fn from_rendered(text: &str) -> Option<Self> {
        match text {
            SURE_PHRASE => Some(Self::Sure),
            UNSURE_PHRASE => Some(Self::Unsure),
            _ => None,
        }
    }

    pub fn is_sure(self) -> bool {
        self == Self::Sure
    }
}

impl fmt::Display for ConfidenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.rendered())
    }
}

impl Serialize for ConfidenceLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.rendered())
    }
}

impl<'de> Deserialize<'de> for ConfidenceLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Self::from_rendered(&text).ok_or_else(|| {
            serde::de::Error::custom(format!(
                "expected \"{SURE_PHRASE}\" or \"{UNSURE_PHRASE}\", got {text:?}"
            ))
        })
    }
}

/// Probe outcome for one multi-problem instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryRecord {
    pub multi_id: String,
    pub answers: Vec<String>,
    pub matches: Vec<bool>,
    pub labels: Vec<ConfidenceLabel>,
    #[serde(skip)]
    pub parse_warnings: Vec<String>,
}

impl BoundaryRecord {
    /// Builds a record whose labels follow the matches.
    pub fn new(multi_id: impl Into<String>, parsed: ParsedAnswers, matches: Vec<bool>) -> Self {
        let labels = matches
            .iter()
            .map(|&m| ConfidenceLabel::from_match(m))
            .collect();
        Self {
            multi_id: multi_id.into(),
            answers: parsed.answers,
            matches,
            labels,
            parse_warnings: parsed.parse_warnings,
        }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Checks lengths and that every label agrees with its match.
    pub fn check(&self) -> Result<(), String> {
        let n = self.labels.len();
        if self.answers.len() != n || self.matches.len() != n {
            return Err(format!(
                "record {}: {} answers, {} matches, {} labels",
                self.multi_id,
                self.answers.len(),
                self.matches.len(),
                n
            ));
        }
        for (i, (&m, &l)) in self.matches.iter().zip(&self.labels).enumerate() {
            if l.is_sure() != m {
                return Err(format!(
                    "record {}: slot {} is labeled {l} but match={m}",
                    self.multi_id,
                    i + 1
                ));
            }
        }
        Ok(())
    }
}

/// Scores one generation against the members of `multi`.
///
/// MC slots are reduced to a choice letter using each member's own choices;
/// an unparseable slot is an empty answer and a mismatch.
pub fn assess_generation(multi: &MultiProblem, generation: &str) -> BoundaryRecord {
    let n = multi.members.len();
    let slots = parse::raw_slots(generation, n);
    let mut parsed = ParsedAnswers::default();
    let mut matches = Vec::with_capacity(n);

    for (i, (slot, problem)) in slots.into_iter().zip(&multi.members).enumerate() {
        let k = i + 1;
        let answer = match (slot, problem.format) {
            (None, _) => {
                parsed
                    .parse_warnings
                    .push(format!("slot {k}: no answer marker found"));
                String::new()
            }
            (Some(text), Format::QA) => text,
            (Some(text), Format::MC) => match extract_choice(&text, problem.choices()) {
                Some(letter) => letter,
                None => {
                    parsed
                        .parse_warnings
                        .push(format!("slot {k}: no choice identified"));
                    String::new()
                }
            },
        };
        matches.push(match_problem(&answer, problem));
        parsed.answers.push(answer);
    }
    BoundaryRecord::new(multi.multi_id.clone(), parsed, matches)
}

#[derive(Debug, Error)]
#[error("probing instance {index} ({multi_id}): {source}")]
pub struct ProbeError {
    pub index: usize,
    pub multi_id: String,
    #[source]
    pub source: ClientError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeOptions {
    pub max_tokens: u32,
    pub parallelism: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
            parallelism: 4,
        }
    }
}

/// Sends every prompt to the model and labels each sub-answer.
pub fn probe(
    multis: &[MultiProblem],
    client: &ModelClient,
    options: ProbeOptions,
) -> Result<Vec<BoundaryRecord>, ProbeError> {
    let requests: Vec<CompletionRequest> = multis
        .iter()
        .map(|m| CompletionRequest::new(m.prompt.clone()).with_max_tokens(options.max_tokens))
        .collect();
    client
        .complete_batch(&requests, options.parallelism)
        .into_iter()
        .zip(multis)
        .enumerate()
        .map(|(index, (result, multi))| {
            result
                .map(|response| assess_generation(multi, &response.text))
                .map_err(|source| ProbeError {
                    index,
                    multi_id: multi.multi_id.clone(),
                    source,
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composer::PromptTemplate;
    use crate::data_model::{Choice, Problem, Setting};

    fn multi(members: Vec<Problem>) -> MultiProblem {
        MultiProblem::new(
            "m0",
            Setting::Independent,
            members,
            &PromptTemplate::default(),
        )
    }

    #[test]
    fn labels_follow_matches() {
        let m = multi(vec![
            Problem::qa("a", "Capital of France?", &["Paris"]),
            Problem::qa("b", "Six times seven?", &["42"]),
            Problem::qa("c", "Sky colour?", &["Blue"]),
        ]);
        let r = assess_generation(&m, "1: Paris 2: 41 3: blue.");
        assert_eq!(r.matches, vec![true, false, true]);
        assert_eq!(
            r.labels,
            vec![
                ConfidenceLabel::Sure,
                ConfidenceLabel::Unsure,
                ConfidenceLabel::Sure
            ]
        );
        r.check().unwrap();
    }

    #[test]
    fn unparseable_slot_is_unsure() {
        let m = multi(vec![
            Problem::qa("a", "q1", &["x"]),
            Problem::qa("b", "q2", &["y"]),
        ]);
        let r = assess_generation(&m, "x and y");
        assert_eq!(r.matches, vec![false, false]);
        assert_eq!(r.parse_warnings.len(), 2);
    }

    #[test]
    fn mc_slot_resolved_with_member_choices() {
        let m = multi(vec![Problem::mc(
            "m",
            "Capital of France?",
            vec![Choice::new("A", "Lyon"), Choice::new("B", "Paris")],
            &["B"],
        )]);
        let r = assess_generation(&m, "1: I believe it is Paris");
        assert_eq!(r.answers, vec!["B"]);
        assert_eq!(r.matches, vec![true]);
    }

    #[test]
    fn label_serializes_as_phrase() {
        assert_eq!(
            serde_json::to_string(&ConfidenceLabel::Unsure).unwrap(),
            "\"I am unsure\""
        );
        assert!(serde_json::from_str::<ConfidenceLabel>("\"maybe\"").is_err());
    }

    #[test]
    fn record_json_shape() {
        let r = BoundaryRecord::new(
            "ds#00000",
            ParsedAnswers {
                answers: vec!["Paris".into()],
                parse_warnings: vec![],
            },
            vec![true],
        );
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"multi_id":"ds#00000","answers":["Paris"],"matches":[true],"labels":["I am sure"]}"#
        );
    }

    #[test]
    fn check_catches_inconsistent_labels() {
        let mut r = BoundaryRecord::new(
            "m",
            ParsedAnswers {
                answers: vec!["a".into()],
                parse_warnings: vec![],
            },
            vec![true],
        );
        r.labels[0] = ConfidenceLabel::Unsure;
        assert!(r.check().is_err());
    }
}
