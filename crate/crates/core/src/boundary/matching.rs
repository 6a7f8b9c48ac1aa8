//! Answer normalization and gold matching, shared by boundary labeling and
//! evaluation scoring.

use std::sync::OnceLock;

use regex::Regex;

use crate::data_model::{Format, Problem};

/// Lowercase, drop punctuation, drop one leading article, collapse
/// whitespace.
pub fn normalize(text: &str) -> String {
    normalized_tokens(text).join(" ")
}

pub(crate) fn normalized_tokens(text: &str) -> Vec<String> {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let mut tokens: Vec<String> = lowered.split_whitespace().map(str::to_string).collect();
    if tokens.len() > 1 && matches!(tokens[0].as_str(), "a" | "an" | "the") {
        tokens.remove(0);
    }
    tokens
}

/// True when `needle` occurs as a contiguous run inside `haystack`.
pub(crate) fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && needle.len() <= haystack.len()
        && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Exact decimal value as (negative, integer digits, fraction digits), with
/// leading and trailing zeros stripped so equal values compare equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decimal {
    negative: bool,
    int: String,
    frac: String,
}

impl Decimal {
    /// Parses a plain number: optional sign or `$`, thousands separators in
    /// groups of three, optional fraction.
    pub fn parse(text: &str) -> Option<Self> {
        let t = text.trim();
        if !full_number_pattern().is_match(t) {
            return None;
        }
        let t = t.replace(['$', ','], "");
        let (negative, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.as_str()),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() && frac.is_empty() {
            return None;
        }
        if !int.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let int = int.trim_start_matches('0').to_string();
        let frac = frac.trim_end_matches('0').to_string();
        let negative = negative && !(int.is_empty() && frac.is_empty());
        Some(Self {
            negative,
            int,
            frac,
        })
    }
}

const NUMBER: &str = r"-?[0-9]{1,3}(?:,[0-9]{3})+(?:\.[0-9]+)?|-?[0-9]*\.?[0-9]+";

fn number_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(NUMBER).expect("valid number regex"))
}

fn full_number_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(&format!(r"^\$?(?:{NUMBER})$")).expect("valid number regex"))
}

/// The last number written in `text`, if any.
pub fn last_number(text: &str) -> Option<Decimal> {
    number_pattern()
        .find_iter(text)
        .last()
        .and_then(|m| Decimal::parse(m.as_str()))
}

/// Gold answers that are all plain numbers switch matching to numeric mode.
pub fn is_numeric_gold(gold: &[String]) -> bool {
    !gold.is_empty() && gold.iter().all(|g| Decimal::parse(g).is_some())
}

/// Decides whether `predicted` answers a question whose accepted answers are
/// `gold`.
///
/// * QA, numeric gold: the last number in `predicted` equals a gold value.
/// * QA otherwise: normalized equality, or the normalized gold occurs in the
///   normalized prediction on token boundaries.
/// * MC: `predicted` is a choice letter equal to a gold letter.
///
/// An empty prediction never matches.
pub fn match_answer(predicted: &str, gold: &[String], format: Format) -> bool {
    let predicted = predicted.trim();
    if predicted.is_empty() {
        return false;
    }
    match format {
        Format::MC => {
            let letter = predicted
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_ascii_uppercase();
            gold.iter()
                .any(|g| g.trim().eq_ignore_ascii_case(&letter) && !letter.is_empty())
        }
        Format::QA if is_numeric_gold(gold) => match last_number(predicted) {
            Some(value) => gold
                .iter()
                .any(|g| Decimal::parse(g).as_ref() == Some(&value)),
            None => false,
        },
        Format::QA => {
            let pred_tokens = normalized_tokens(predicted);
            gold.iter().any(|g| {
                let gold_tokens = normalized_tokens(g);
                pred_tokens == gold_tokens || contains_run(&pred_tokens, &gold_tokens)
            })
        }
    }
}

/// Matches an answer slot against a problem. MC gold entries written as
/// choice text are resolved to their letters first.
pub fn match_problem(answer: &str, problem: &Problem) -> bool {
    match problem.format {
        Format::MC => match_answer(answer, &problem.gold_letters(), Format::MC),
        Format::QA => match_answer(answer, &problem.gold, Format::QA),
    }
}
