//! Splitting a numbered multi-answer generation into per-question slots.

use serde::{Deserialize, Serialize};

use crate::data_model::{Choice, Format};

/// Answers extracted from one generation, one per sub-question.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedAnswers {
    pub answers: Vec<String>,
    pub parse_warnings: Vec<String>,
}

/// Byte span of each slot's content, or `None` when slot `k` has no marker.
///
/// Markers are `k:` or `k.` for k = 1..n, found in increasing order. A marker
/// must not be glued to a preceding alphanumeric character and must not be
/// followed by a digit, so `11:`, `3:00` and `3.5` are never markers. The
/// colon form is preferred when both appear.
pub fn slot_spans(text: &str, n: usize) -> Vec<Option<(usize, usize)>> {
    let mut found: Vec<Option<(usize, usize)>> = Vec::with_capacity(n);
    let mut from = 0;
    for k in 1..=n {
        match find_marker(text, k, from) {
            Some((marker_start, content_start)) => {
                found.push(Some((marker_start, content_start)));
                from = content_start;
            }
            None => found.push(None),
        }
    }

    let mut spans = vec![None; n];
    for k in 0..n {
        let Some((_, content_start)) = found[k] else {
            continue;
        };
        let end = found[k + 1..]
            .iter()
            .flatten()
            .map(|(marker_start, _)| *marker_start)
            .next()
            .unwrap_or(text.len());
        spans[k] = Some((content_start, end.max(content_start)));
    }
    spans
}

fn find_marker(text: &str, k: usize, from: usize) -> Option<(usize, usize)> {
    [':', '.']
        .into_iter()
        .find_map(|sep| find_marker_with(text, k, sep, from))
}

fn find_marker_with(text: &str, k: usize, sep: char, from: usize) -> Option<(usize, usize)> {
    let needle = format!("{k}{sep}");
    let mut search = from;
    while let Some(rel) = text[search..].find(&needle) {
        let start = search + rel;
        let end = start + needle.len();
        let before_ok = text[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let next = text[end..].chars().next();
        let after_ok = match sep {
            ':' => next.is_none_or(|c| !c.is_ascii_digit()),
            _ => next.is_none_or(char::is_whitespace),
        };
        if before_ok && after_ok {
            return Some((start, end));
        }
        search = end;
    }
    None
}

fn clean_slot(raw: &str) -> String {
    raw.trim().trim_end_matches([',', ';']).trim().to_string()
}

/// Raw slot texts (trimmed), `None` for slots without a marker.
pub fn raw_slots(generation: &str, n: usize) -> Vec<Option<String>> {
    slot_spans(generation, n)
        .into_iter()
        .map(|span| span.map(|(s, e)| clean_slot(&generation[s..e])))
        .collect()
}

/// Extracts `n` answers from a numbered generation.
///
/// For MC the slot is reduced to a bare choice letter (any of A-Z, since no
/// choice list is available here); see [`extract_choice`] for the
/// choice-aware reduction.
pub fn parse_answers(generation: &str, n: usize, format: Format) -> ParsedAnswers {
    let mut parsed = ParsedAnswers::default();
    for (i, slot) in raw_slots(generation, n).into_iter().enumerate() {
        let k = i + 1;
        let Some(slot) = slot else {
            parsed.answers.push(String::new());
            parsed
                .parse_warnings
                .push(format!("slot {k}: no answer marker found"));
            continue;
        };
        match format {
            Format::QA => parsed.answers.push(slot),
            Format::MC => match extract_letter(&slot, &letters_a_to_z()) {
                Some(letter) => parsed.answers.push(letter),
                None => {
                    parsed.answers.push(String::new());
                    parsed
                        .parse_warnings
                        .push(format!("slot {k}: no choice letter found"));
                }
            },
        }
    }
    parsed
}

fn letters_a_to_z() -> Vec<String> {
    ('A'..='Z').map(String::from).collect()
}

/// Picks the choice named in `slot_text`.
///
/// A letter written on its own (`B`, `(B)`, `B.`) wins; otherwise the longest
/// choice text occurring in the slot, compared case-insensitively on token
/// boundaries.
pub fn extract_choice(slot_text: &str, choices: &[Choice]) -> Option<String> {
    let letters: Vec<String> = choices
        .iter()
        .map(|c| c.letter.trim().to_ascii_uppercase())
        .collect();
    if let Some(letter) = extract_letter(slot_text, &letters) {
        return Some(letter);
    }

    let slot_tokens = super::matching::normalized_tokens(slot_text);
    let mut best: Option<(usize, &Choice)> = None;
    for choice in choices {
        let choice_tokens = super::matching::normalized_tokens(&choice.text);
        if choice_tokens.is_empty() || !super::matching::contains_run(&slot_tokens, &choice_tokens)
        {
            continue;
        }
        let len = choice.text.trim().chars().count();
        if best.is_none_or(|(best_len, _)| len > best_len) {
            best = Some((len, choice));
        }
    }
    best.map(|(_, c)| c.letter.trim().to_ascii_uppercase())
}

fn extract_letter(slot_text: &str, letters: &[String]) -> Option<String> {
    let is_letter = |s: &str| letters.iter().any(|l| l == s);

    // (B) or [B]
    let chars: Vec<char> = slot_text.chars().collect();
    for w in chars.windows(3) {
        if matches!(w[0], '(' | '[') && matches!(w[2], ')' | ']') && w[1].is_ascii_alphabetic() {
            let letter = w[1].to_ascii_uppercase().to_string();
            if is_letter(&letter) {
                return Some(letter);
            }
        }
    }

    // Bare uppercase letter token. "A" and "I" double as English words, so
    // they only count with attached punctuation or when they are the whole
    // slot or its last token.
    let tokens: Vec<&str> = slot_text.split_whitespace().collect();
    for (i, raw) in tokens.iter().enumerate() {
        let core = raw.trim_matches(|c: char| !c.is_alphanumeric());
        if core.len() != 1 || !core.chars().all(|c| c.is_ascii_uppercase()) || !is_letter(core) {
            continue;
        }
        let ambiguous = core == "A" || core == "I";
        let decorated = raw.len() > core.len();
        let last = i + 1 == tokens.len();
        if !ambiguous || decorated || last {
            return Some(core.to_string());
        }
    }
    None
}
