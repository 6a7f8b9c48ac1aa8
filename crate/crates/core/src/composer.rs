//! Combining single problems into multi-problem instances and rendering the
//! prompts a model sees.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{Dataset, Format, Problem, Setting};

/// Default prompt layout. Placeholders: `{exemplar}`, `{context}`,
/// `{questions}` and `{n}`.
pub const DEFAULT_TEMPLATE: &str = include_str!("../templates/multi_problem.txt");

/// Default per-question line. Placeholders: `{index}` and `{question}`.
pub const DEFAULT_ITEM_FORMAT: &str = "{index}: {question}";

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("n must be at least 1")]
    ZeroN,
    #[error("reading template {path}: {source}")]
    Template {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template has no {{questions}} placeholder")]
    MissingQuestions,
}

/// Prompt layout for a multi-problem instance.
///
/// `layout` holds the instruction header, the `{exemplar}`, `{context}` and
/// `{questions}` slots, and the trailing answer directive, in that order for
/// the default template. `item_format` renders each numbered question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub layout: String,
    pub item_format: String,
    pub exemplar: Option<String>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            layout: DEFAULT_TEMPLATE.to_string(),
            item_format: DEFAULT_ITEM_FORMAT.to_string(),
            exemplar: None,
        }
    }
}

impl PromptTemplate {
    pub fn new(layout: impl Into<String>) -> Result<Self, ComposeError> {
        let layout = layout.into();
        if !layout.contains("{questions}") {
            return Err(ComposeError::MissingQuestions);
        }
        Ok(Self {
            layout,
            ..Self::default()
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ComposeError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ComposeError::Template {
            path: path.display().to_string(),
            source,
        })?;
        Self::new(text)
    }

    pub fn with_exemplar(mut self, exemplar: impl Into<String>) -> Self {
        self.exemplar = Some(exemplar.into());
        self
    }

    /// Stable content hash, recorded in run manifests.
    pub fn fingerprint(&self) -> String {
        crate::hashing::hash_parts(&[
            self.layout.as_bytes(),
            self.item_format.as_bytes(),
            self.exemplar.as_deref().unwrap_or("").as_bytes(),
        ])
    }
}

/// An ordered composition of problems answered in a single generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiProblem {
    pub multi_id: String,
    pub dataset: String,
    pub setting: Setting,
    pub n: usize,
    pub shared_context: Option<String>,
    pub members: Vec<Problem>,
    pub prompt: String,
}

impl MultiProblem {
    /// Builds an instance and renders its prompt.
    pub fn new(
        multi_id: impl Into<String>,
        setting: Setting,
        members: Vec<Problem>,
        template: &PromptTemplate,
    ) -> Self {
        let shared_context = common_context(&members);
        let dataset = members
            .first()
            .map(|p| p.dataset.clone())
            .unwrap_or_default();
        let mut multi = Self {
            multi_id: multi_id.into(),
            dataset,
            setting,
            n: members.len(),
            shared_context,
            members,
            prompt: String::new(),
        };
        multi.prompt = render_prompt(&multi, template);
        multi
    }

    pub fn member_ids(&self) -> Vec<String> {
        self.members.iter().map(|p| p.id.clone()).collect()
    }

    /// Restores the loader-only `dataset` field on members after
    /// deserialization.
    pub fn relink(&mut self) {
        for m in &mut self.members {
            m.dataset = self.dataset.clone();
        }
    }
}

fn common_context(members: &[Problem]) -> Option<String> {
    let first = members.first()?.context.as_ref()?;
    if first.trim().is_empty() {
        return None;
    }
    members
        .iter()
        .all(|p| p.context.as_ref() == Some(first))
        .then(|| first.clone())
}

/// Splits a dataset into multi-problem instances of `n` members.
///
/// Independent datasets are shuffled with a ChaCha8 stream seeded by `seed`
/// and chunked; sequential datasets are chunked per group in original order.
/// A trailing chunk shorter than `n` is kept.
pub fn compose(dataset: &Dataset, n: usize, seed: u64) -> Result<Vec<MultiProblem>, ComposeError> {
    compose_with_template(dataset, n, seed, &PromptTemplate::default())
}

pub fn compose_with_template(
    dataset: &Dataset,
    n: usize,
    seed: u64,
    template: &PromptTemplate,
) -> Result<Vec<MultiProblem>, ComposeError> {
    if n == 0 {
        return Err(ComposeError::ZeroN);
    }
    let chunks: Vec<Vec<Problem>> = match dataset.setting {
        Setting::Independent => {
            let mut order: Vec<&Problem> = dataset.problems.iter().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
            order
                .chunks(n)
                .map(|c| c.iter().map(|p| (*p).clone()).collect())
                .collect()
        }
        Setting::Sequential => sequential_groups(&dataset.problems)
            .into_iter()
            .flat_map(|group| group.chunks(n).map(<[Problem]>::to_vec).collect::<Vec<_>>())
            .collect(),
    };

    Ok(chunks
        .into_iter()
        .enumerate()
        .map(|(i, members)| {
            let id = format!("{}#{:05}", dataset.name, i);
            MultiProblem::new(id, dataset.setting, members, template)
        })
        .collect())
}

/// Contiguous runs of problems sharing a group key.
fn sequential_groups(problems: &[Problem]) -> Vec<&[Problem]> {
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=problems.len() {
        if i == problems.len() || problems[i].group_key != problems[start].group_key {
            if start < i {
                groups.push(&problems[start..i]);
            }
            start = i;
        }
    }
    groups
}

/// Text of one question as it appears inside the numbered list.
pub fn question_text(problem: &Problem, with_context: bool) -> String {
    let mut text = problem.question.trim().to_string();
    if problem.format == Format::MC {
        for c in problem.choices() {
            text.push_str(&format!("\n   ({}) {}", c.letter, c.text));
        }
    }
    if with_context {
        if let Some(ctx) = problem.context.as_deref().filter(|c| !c.trim().is_empty()) {
            text.push_str(&format!("\n   Context: {}", ctx.trim()));
        }
    }
    text
}

/// Renders the prompt for `multi`. Pure in its inputs.
pub fn render_prompt(multi: &MultiProblem, template: &PromptTemplate) -> String {
    let per_member_context = multi.shared_context.is_none();
    let questions = multi
        .members
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let index = (i + 1).to_string();
            let question = question_text(p, per_member_context);
            substitute(&template.item_format, |key| match key {
                "index" => Some(index.clone()),
                "question" => Some(question.clone()),
                _ => None,
            })
        })
        .collect::<Vec<_>>()
        .join("\n");

    let exemplar = template
        .exemplar
        .as_deref()
        .filter(|e| !e.trim().is_empty())
        .map(|e| format!("Example:\n{}\n\n", e.trim_end()))
        .unwrap_or_default();
    let context = multi
        .shared_context
        .as_deref()
        .map(|c| format!("Context: {}\n\n", c.trim()))
        .unwrap_or_default();

    substitute(&template.layout, |key| match key {
        "exemplar" => Some(exemplar.clone()),
        "context" => Some(context.clone()),
        "questions" => Some(questions.clone()),
        "n" => Some(multi.n.to_string()),
        _ => None,
    })
}

/// Single-pass `{name}` substitution; inserted text is never rescanned and
/// unknown placeholders are left verbatim.
fn substitute(template: &str, lookup: impl Fn(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close)
                if after[..close]
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_') =>
            {
                let key = &after[..close];
                match lookup(key) {
                    Some(value) => out.push_str(&value),
                    None => {
                        out.push('{');
                        out.push_str(key);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
