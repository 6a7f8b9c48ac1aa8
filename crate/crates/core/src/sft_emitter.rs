//! Builds the two supervised tuning sets from one composition: numbered
//! answers for the answer stage and numbered confidence phrases for the
//! confidence stage, and writes them as JSONL.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::{BoundaryRecord, SURE_PHRASE, UNSURE_PHRASE};
use crate::composer::MultiProblem;
use crate::data_model::{Format, Problem};

/// Question appended after the question/answer blocks of a confidence
/// prompt.
pub const CERTAINTY_QUESTION: &str =
    "Are you sure you accurately answered the question based on your internal knowledge?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RecordKind {
    /// Multi-question prompt to numbered gold answers.
    MultQA,
    /// Question/answer blocks to numbered confidence phrases.
    MultQAC,
}

/// Which tuning file is being written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Qa,
    QaConf,
}

impl Stage {
    pub fn kind(self) -> RecordKind {
        match self {
            Stage::Qa => RecordKind::MultQA,
            Stage::QaConf => RecordKind::MultQAC,
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qa" => Ok(Stage::Qa),
            "qa-conf" => Ok(Stage::QaConf),
            other => Err(format!("unknown stage `{other}` (expected qa|qa-conf)")),
        }
    }
}

/// Whose answer the confidence prompt shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QaSource {
    /// The answer the model gave while probing.
    #[default]
    Model,
    /// The first gold answer.
    Gold,
}

impl std::str::FromStr for QaSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "model" => Ok(QaSource::Model),
            "gold" => Ok(QaSource::Gold),
            other => Err(format!(
                "unknown answer source `{other}` (expected model|gold)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TuningRecord {
    pub input: String,
    pub output: String,
    pub kind: RecordKind,
    pub source_ids: Vec<String>,
}

/// One emitted line. Field order is the file format.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    input: String,
    output: String,
    source_ids: Vec<String>,
}

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("record for {multi_id} has {labels} labels but {members} members")]
    LengthMismatch {
        multi_id: String,
        labels: usize,
        members: usize,
    },
    #[error("boundary record {found} does not belong to instance {expected}")]
    WrongRecord { expected: String, found: String },
    #[error("record {index} is {found:?}, stage expects {expected:?}")]
    MixedKinds {
        index: usize,
        expected: RecordKind,
        found: RecordKind,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

/// Answer-stage record: the composed prompt to "1: a1\n2: a2 ...", using each
/// member's first gold answer.
pub fn build_multqa(multi: &MultiProblem) -> TuningRecord {
    let output = multi
        .members
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{}: {}", i + 1, p.canonical_answer()))
        .collect::<Vec<_>>()
        .join("\n");
    TuningRecord {
        input: multi.prompt.clone(),
        output,
        kind: RecordKind::MultQA,
        source_ids: multi.member_ids(),
    }
}

fn confidence_question_text(problem: &Problem) -> String {
    let mut text = problem.question.trim().to_string();
    if problem.format == Format::MC {
        for c in problem.choices() {
            text.push_str(&format!(" ({}) {}", c.letter, c.text));
        }
    }
    text
}

/// The confidence prompt for `multi` showing `answers`.
///
/// `Question: <q>. Answer: <a>.` per member, space separated, followed by the
/// certainty question. A shared context, when present, leads on its own line.
pub fn confidence_prompt(multi: &MultiProblem, answers: &[String]) -> String {
    let mut input = String::new();
    if let Some(ctx) = &multi.shared_context {
        input.push_str(&format!("Context: {}\n", ctx.trim()));
    }
    for (problem, answer) in multi.members.iter().zip(answers) {
        input.push_str(&format!(
            "Question: {}. Answer: {}. ",
            confidence_question_text(problem),
            answer.trim()
        ));
    }
    input.push_str(CERTAINTY_QUESTION);
    input
}

/// Confidence-stage record for a probed instance: question/answer blocks to
/// "1: I am sure 2: I am unsure ...".
pub fn build_multqa_conf(
    multi: &MultiProblem,
    record: &BoundaryRecord,
    qa_source: QaSource,
) -> Result<TuningRecord, EmitError> {
    if record.multi_id != multi.multi_id {
        return Err(EmitError::WrongRecord {
            expected: multi.multi_id.clone(),
            found: record.multi_id.clone(),
        });
    }
    let members = multi.members.len();
    if record.labels.len() != members || record.answers.len() != members {
        return Err(EmitError::LengthMismatch {
            multi_id: multi.multi_id.clone(),
            labels: record.labels.len(),
            members,
        });
    }
    let answers: Vec<String> = match qa_source {
        QaSource::Model => record.answers.clone(),
        QaSource::Gold => multi
            .members
            .iter()
            .map(|p| p.canonical_answer().to_string())
            .collect(),
    };
    let output = record
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{}: {}", i + 1, l.rendered()))
        .collect::<Vec<_>>()
        .join(" ");
    Ok(TuningRecord {
        input: confidence_prompt(multi, &answers),
        output,
        kind: RecordKind::MultQAC,
        source_ids: multi.member_ids(),
    })
}

/// Number of confidence phrases in a confidence-stage output.
pub fn confidence_phrase_count(output: &str) -> usize {
    // "I am sure" is not a substring of "I am unsure", so the counts are
    // disjoint.
    output.matches(SURE_PHRASE).count() + output.matches(UNSURE_PHRASE).count()
}

/// Serializes records for `stage`; every record must be of the stage's kind.
pub fn to_jsonl(records: &[TuningRecord], stage: Stage) -> Result<String, EmitError> {
    let expected = stage.kind();
    let mut out = String::new();
    for (index, r) in records.iter().enumerate() {
        if r.kind != expected {
            return Err(EmitError::MixedKinds {
                index,
                expected,
                found: r.kind,
            });
        }
        let line = Line {
            input: r.input.clone(),
            output: r.output.clone(),
            source_ids: r.source_ids.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("line serializes"));
        out.push('\n');
    }
    Ok(out)
}

/// Writes the stage file and returns the number of lines written.
pub fn emit(
    records: &[TuningRecord],
    stage: Stage,
    path: impl AsRef<Path>,
) -> Result<usize, EmitError> {
    let path = path.as_ref();
    let text = to_jsonl(records, stage)?;
    fs::write(path, text).map_err(|source| EmitError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(records.len())
}

/// Reads a stage file back.
pub fn load_records(path: impl AsRef<Path>, stage: Stage) -> Result<Vec<TuningRecord>, EmitError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| EmitError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line: Line = serde_json::from_str(l).map_err(|e| EmitError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            Ok(TuningRecord {
                input: line.input,
                output: line.output,
                kind: stage.kind(),
                source_ids: line.source_ids,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{assess_generation, ParsedAnswers};
    use crate::composer::PromptTemplate;
    use crate::data_model::Setting;

    fn three() -> MultiProblem {
        MultiProblem::new(
            "d#00000",
            Setting::Independent,
            vec![
                Problem::qa("a", "Capital of France?", &["Paris", "paris"]),
                Problem::qa("b", "Six times seven?", &["42"]),
                Problem::qa("c", "Colour of the sky?", &["Blue"]),
            ],
            &PromptTemplate::default(),
        )
    }

    #[test]
    fn multqa_numbered_gold() {
        let r = build_multqa(&three());
        assert_eq!(r.output, "1: Paris\n2: 42\n3: Blue");
        assert_eq!(r.kind, RecordKind::MultQA);
        assert_eq!(r.source_ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn multqa_single() {
        let m = MultiProblem::new(
            "x",
            Setting::Independent,
            vec![Problem::qa("a", "q?", &["ans"])],
            &PromptTemplate::default(),
        );
        assert_eq!(build_multqa(&m).output, "1: ans");
    }

    #[test]
    fn shared_context_only_in_input() {
        let members = (0..3)
            .map(|i| {
                Problem::qa(format!("s{i}"), format!("step {i}?"), &["x"])
                    .with_context("THE-TABLE")
                    .with_group("g")
            })
            .collect();
        let m = MultiProblem::new(
            "s",
            Setting::Sequential,
            members,
            &PromptTemplate::default(),
        );
        let r = build_multqa(&m);
        assert_eq!(r.input.matches("THE-TABLE").count(), 1);
        assert_eq!(r.output.matches("THE-TABLE").count(), 0);
    }

    #[test]
    fn confidence_output_all_sure() {
        let m = three();
        let rec = assess_generation(&m, "1: Paris 2: 42 3: Blue");
        let r = build_multqa_conf(&m, &rec, QaSource::Model).unwrap();
        assert_eq!(r.output, "1: I am sure 2: I am sure 3: I am sure");
        assert_eq!(confidence_phrase_count(&r.output), 3);
    }

    #[test]
    fn confidence_output_mixed() {
        let m = three();
        let rec = assess_generation(&m, "1: Paris 2: 41 3: Blue");
        let r = build_multqa_conf(&m, &rec, QaSource::Model).unwrap();
        assert_eq!(r.output, "1: I am sure 2: I am unsure 3: I am sure");
        assert!(r.input.contains("Question: Six times seven?. Answer: 41."));
        let gold = build_multqa_conf(&m, &rec, QaSource::Gold).unwrap();
        assert!(gold
            .input
            .contains("Question: Six times seven?. Answer: 42."));
        assert_eq!(gold.output, r.output);
    }

    #[test]
    fn single_block_form() {
        let m = MultiProblem::new(
            "x",
            Setting::Independent,
            vec![Problem::qa("a", "Who wrote Hamlet", &["Shakespeare"])],
            &PromptTemplate::default(),
        );
        let rec = assess_generation(&m, "1: Shakespeare");
        let r = build_multqa_conf(&m, &rec, QaSource::Model).unwrap();
        assert_eq!(
            r.input,
            format!("Question: Who wrote Hamlet. Answer: Shakespeare. {CERTAINTY_QUESTION}")
        );
        assert_eq!(r.output, "1: I am sure");
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let m = three();
        let rec = BoundaryRecord::new(
            m.multi_id.clone(),
            ParsedAnswers {
                answers: vec!["x".into()],
                parse_warnings: vec![],
            },
            vec![true],
        );
        assert!(matches!(
            build_multqa_conf(&m, &rec, QaSource::Model),
            Err(EmitError::LengthMismatch {
                labels: 1,
                members: 3,
                ..
            })
        ));
    }

    #[test]
    fn stage_rejects_other_kind() {
        let r = build_multqa(&three());
        let dir = tempfile::tempdir().unwrap();
        let err = emit(&[r], Stage::QaConf, dir.path().join("x.jsonl")).unwrap_err();
        assert!(matches!(err, EmitError::MixedKinds { index: 0, .. }));
    }

    #[test]
    fn emit_round_trip_and_determinism() {
        let records: Vec<TuningRecord> = (0..100).map(|_| build_multqa(&three())).collect();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        assert_eq!(emit(&records, Stage::Qa, &a).unwrap(), 100);
        emit(&records, Stage::Qa, &b).unwrap();
        let text = fs::read_to_string(&a).unwrap();
        assert_eq!(text.lines().count(), 100);
        assert_eq!(text, fs::read_to_string(&b).unwrap());
        assert_eq!(load_records(&a, Stage::Qa).unwrap(), records);
        assert!(text.starts_with(r#"{"input":"#));
    }
}
