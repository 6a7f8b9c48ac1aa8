//! Domain types for single problems and the datasets they come from, plus
//! ingestion from the normalized JSONL schema.
//!
//! Every source corpus is expected to be pre-converted into one record per
//! line:
//!
//! ```text
//! {"id": "...", "question": "...", "context": null, "gold": ["..."],
//!  "format": "QA", "choices": null, "group_key": null}
//! ```
//!
//! Unknown keys are rejected unless [`LoadOptions::lenient`] is set.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Answer format of a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Format {
    /// Free-form question answering.
    QA,
    /// Multiple choice over lettered options.
    MC,
}

/// How the problems of a dataset relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// Unrelated questions that can be combined arbitrarily.
    Independent,
    /// Questions chained over a shared context, grouped by `group_key`.
    Sequential,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::Independent => f.write_str("independent"),
            Setting::Sequential => f.write_str("sequential"),
        }
    }
}

impl std::str::FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "independent" => Ok(Setting::Independent),
            "sequential" => Ok(Setting::Sequential),
            other => Err(format!(
                "unknown setting `{other}` (expected independent|sequential)"
            )),
        }
    }
}

/// One lettered option of a multiple-choice problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Choice {
    pub letter: String,
    pub text: String,
}

impl Choice {
    pub fn new(letter: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            letter: letter.into(),
            text: text.into(),
        }
    }
}

/// A single question with its accepted answers.
///
/// Field order matches the JSONL schema so that serialization is byte-stable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub id: String,
    pub question: String,
    pub context: Option<String>,
    pub gold: Vec<String>,
    pub format: Format,
    pub choices: Option<Vec<Choice>>,
    pub group_key: Option<String>,
    /// Name of the dataset the problem was loaded from. Not part of the
    /// per-line schema; filled in by the loader.
    #[serde(skip)]
    pub dataset: String,
}

impl Problem {
    /// Convenience constructor for a free-form problem.
    pub fn qa(id: impl Into<String>, question: impl Into<String>, gold: &[&str]) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            context: None,
            gold: gold.iter().map(|g| g.to_string()).collect(),
            format: Format::QA,
            choices: None,
            group_key: None,
            dataset: String::new(),
        }
    }

    /// Convenience constructor for a multiple-choice problem.
    pub fn mc(
        id: impl Into<String>,
        question: impl Into<String>,
        choices: Vec<Choice>,
        gold: &[&str],
    ) -> Self {
        Self {
            format: Format::MC,
            choices: Some(choices),
            ..Self::qa(id, question, gold)
        }
    }

    pub fn with_context(mut self, context: impl Into<String>) -> Self {
        self.context = Some(context.into());
        self
    }

    pub fn with_group(mut self, group_key: impl Into<String>) -> Self {
        self.group_key = Some(group_key.into());
        self
    }

    pub fn choices(&self) -> &[Choice] {
        self.choices.as_deref().unwrap_or(&[])
    }

    /// Letters that count as correct for an MC problem. Gold entries may name
    /// either a letter or the text of a choice.
    pub fn gold_letters(&self) -> Vec<String> {
        let mut letters = Vec::new();
        for g in &self.gold {
            let g = g.trim();
            let hit = self.choices().iter().find(|c| {
                c.letter.eq_ignore_ascii_case(g) || c.text.trim().eq_ignore_ascii_case(g)
            });
            if let Some(c) = hit {
                let letter = c.letter.to_ascii_uppercase();
                if !letters.contains(&letter) {
                    letters.push(letter);
                }
            }
        }
        letters
    }

    /// Canonical answer used when emitting supervised targets.
    pub fn canonical_answer(&self) -> &str {
        self.gold.first().map(String::as_str).unwrap_or("")
    }

    /// Invariant violations for this problem alone.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.id.trim().is_empty() {
            out.push("id is empty".to_string());
        }
        if self.gold.is_empty() {
            out.push("gold is empty".to_string());
        }
        if self.gold.iter().any(|g| g.trim().is_empty()) {
            out.push("gold contains an empty answer".to_string());
        }
        match (self.format, &self.choices) {
            (Format::QA, Some(_)) => out.push("QA problem must not carry choices".to_string()),
            (Format::MC, None) => out.push("MC problem has no choices".to_string()),
            (Format::MC, Some(choices)) => {
                if !(2..=26).contains(&choices.len()) {
                    out.push(format!(
                        "MC problem has {} choices (expected 2-26)",
                        choices.len()
                    ));
                }
                let mut seen = HashSet::new();
                for c in choices {
                    let letter = c.letter.trim().to_ascii_uppercase();
                    if letter.chars().count() != 1
                        || !letter.chars().all(|ch| ch.is_ascii_alphabetic())
                    {
                        out.push(format!(
                            "choice letter `{}` is not a single letter",
                            c.letter
                        ));
                    } else if !seen.insert(letter) {
                        out.push(format!("duplicate choice letter `{}`", c.letter));
                    }
                }
                if !self.gold.is_empty() && self.gold_letters().is_empty() {
                    out.push("no gold answer names a choice letter or choice text".to_string());
                }
            }
            (Format::QA, None) => {}
        }
        out
    }
}

/// An ordered collection of problems sharing a setting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub setting: Setting,
    pub problems: Vec<Problem>,
}

/// One invariant violation, tied to the offending problem when there is one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub problem_id: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.problem_id {
            Some(id) => write!(f, "problem `{id}`: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: problem `{id}` has no group_key (required in the sequential setting)")]
    MissingGroupKey { line: usize, id: String },
    #[error(
        "line {line}: group `{group_key}` resumes after another group (groups must be contiguous)"
    )]
    NonContiguousGroup { line: usize, group_key: String },
    #[error("line {line}: {violation}")]
    Invalid { line: usize, violation: Violation },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Drop unknown keys instead of rejecting the record.
    pub lenient: bool,
}

const SCHEMA_KEYS: [&str; 7] = [
    "id",
    "question",
    "context",
    "gold",
    "format",
    "choices",
    "group_key",
];

impl Dataset {
    pub fn new(name: impl Into<String>, setting: Setting, problems: Vec<Problem>) -> Self {
        let name = name.into();
        let problems = problems
            .into_iter()
            .map(|mut p| {
                p.dataset = name.clone();
                p
            })
            .collect();
        Self {
            name,
            setting,
            problems,
        }
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    /// Parses JSONL text. The dataset name is attached to every problem.
    pub fn from_jsonl(
        name: &str,
        text: &str,
        setting: Setting,
        options: LoadOptions,
    ) -> Result<Self, DataError> {
        let mut problems = Vec::new();
        let mut seen_ids: HashMap<String, usize> = HashMap::new();
        let mut closed_groups: HashSet<String> = HashSet::new();
        let mut current_group: Option<String> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let mut problem = parse_record(raw, options)
                .map_err(|message| DataError::Malformed { line, message })?;
            problem.dataset = name.to_string();

            if let Some(message) = problem.violations().into_iter().next() {
                return Err(DataError::Invalid {
                    line,
                    violation: Violation {
                        problem_id: Some(problem.id.clone()),
                        message,
                    },
                });
            }
            if seen_ids.insert(problem.id.clone(), line).is_some() {
                return Err(DataError::DuplicateId {
                    line,
                    id: problem.id,
                });
            }
            if setting == Setting::Sequential {
                let Some(key) = problem.group_key.clone() else {
                    return Err(DataError::MissingGroupKey {
                        line,
                        id: problem.id,
                    });
                };
                if current_group.as_deref() != Some(key.as_str()) {
                    if closed_groups.contains(&key) {
                        return Err(DataError::NonContiguousGroup {
                            line,
                            group_key: key,
                        });
                    }
                    if let Some(prev) = current_group.replace(key) {
                        closed_groups.insert(prev);
                    }
                }
            }
            problems.push(problem);
        }

        Ok(Self {
            name: name.to_string(),
            setting,
            problems,
        })
    }

    /// Serializes back to the JSONL schema, one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.problems {
            out.push_str(&serde_json::to_string(p).expect("problem serializes"));
            out.push('\n');
        }
        out
    }
}

fn parse_record(raw: &str, options: LoadOptions) -> Result<Problem, String> {
    if options.lenient {
        let mut value: serde_json::Value = serde_json::from_str(raw).map_err(|e| e.to_string())?;
        if let Some(obj) = value.as_object_mut() {
            obj.retain(|k, _| SCHEMA_KEYS.contains(&k.as_str()));
        }
        serde_json::from_value(value).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(raw).map_err(|e| e.to_string())
    }
}

/// Loads a dataset file with strict key checking. The dataset name is the
/// file stem.
pub fn load_dataset(path: impl AsRef<Path>, setting: Setting) -> Result<Dataset, DataError> {
    load_dataset_with(path, setting, LoadOptions::default())
}

pub fn load_dataset_with(
    path: impl AsRef<Path>,
    setting: Setting,
    options: LoadOptions,
) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    Dataset::from_jsonl(&name, &text, setting, options)
}

/// Checks every dataset invariant. An empty result means the dataset is valid.
pub fn validate(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for p in &dataset.problems {
        for message in p.violations() {
            out.push(Violation {
                problem_id: Some(p.id.clone()),
                message,
            });
        }
        if !seen.insert(p.id.as_str()) {
            out.push(Violation {
                problem_id: Some(p.id.clone()),
                message: "duplicate id".to_string(),
            });
        }
    }

    if dataset.setting == Setting::Sequential {
        let mut closed: HashSet<&str> = HashSet::new();
        let mut current: Option<&str> = None;
        for p in &dataset.problems {
            let Some(key) = p.group_key.as_deref() else {
                out.push(Violation {
                    problem_id: Some(p.id.clone()),
                    message: "missing group_key in sequential dataset".to_string(),
                });
                continue;
            };
            if current != Some(key) {
                if closed.contains(key) {
                    out.push(Violation {
                        problem_id: Some(p.id.clone()),
                        message: format!("group `{key}` is not contiguous"),
                    });
                }
                if let Some(prev) = current.replace(key) {
                    closed.insert(prev);
                }
            }
        }
    }
    out
}
