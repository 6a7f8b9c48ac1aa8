//! Calibration scoring: average precision over correctness ranked by
//! confidence, expected calibration error over equal-width bins, and accuracy
//! restricted to answers the model was sure about.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::{parse::slot_spans, ConfidenceLabel};
use crate::model_client::CompletionResponse;

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub question_id: String,
    pub correct: bool,
    pub confidence: f64,
    pub label: ConfidenceLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub size: usize,
    pub mean_confidence: f64,
    pub empirical_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub sure: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ap: f64,
    pub ece: f64,
    pub accuracy_among_certain: f64,
    pub bins: Vec<CalibrationBin>,
    pub counts: Counts,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error("no prediction records")]
    Empty,
    #[error("no correct records: recall is undefined")]
    NoPositives,
    #[error("no records labeled \"I am sure\": accuracy among certain answers is undefined")]
    NoSure,
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("record {question_id}: confidence {confidence} is outside [0, 1]")]
    ConfidenceOutOfRange {
        question_id: String,
        confidence: f64,
    },
    #[error("slot {slot}: no \"I am sure\"/\"I am unsure\" phrase")]
    UnparseableConfidence { slot: usize },
}

/// Words whose first differing token separates the two confidence phrases.
/// Tokenizers split these differently, so the choice is recorded with each
/// run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatingTokens {
    pub sure: String,
    pub unsure: String,
}

impl Default for DiscriminatingTokens {
    fn default() -> Self {
        Self {
            sure: "sure".to_string(),
            unsure: "unsure".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Sure,
    Unsure,
}

impl DiscriminatingTokens {
    /// A token fragment belongs to a side when it is a prefix of that side's
    /// word or starts with it.
    fn classify(&self, fragment: &str) -> Option<Side> {
        let f = fragment
            .trim()
            .trim_end_matches(|c: char| !c.is_alphanumeric())
            .to_ascii_lowercase();
        if f.is_empty() {
            return None;
        }
        let hits = |word: &str| word.starts_with(&f) || f.starts_with(word);
        match (hits(&self.sure), hits(&self.unsure)) {
            (true, false) => Some(Side::Sure),
            (false, true) => Some(Side::Unsure),
            _ => None,
        }
    }
}

/// The confidence phrase written in slot `slot_index` (0-based) and the
/// byte offset of its discriminating word.
fn locate_phrase(text: &str, slot_index: usize) -> Option<(ConfidenceLabel, usize)> {
    let (start, end) = slot_spans(text, slot_index + 2)[slot_index]?;
    let slot = text[start..end].to_ascii_lowercase();
    let sure = slot.find("i am sure");
    let unsure = slot.find("i am unsure");
    let (label, at) = match (sure, unsure) {
        (Some(s), Some(u)) if s < u => (ConfidenceLabel::Sure, s),
        (_, Some(u)) => (ConfidenceLabel::Unsure, u),
        (Some(s), None) => (ConfidenceLabel::Sure, s),
        (None, None) => return None,
    };
    Some((label, start + at + "i am ".len()))
}

/// The confidence label stated in slot `slot_index` (0-based), if any.
pub fn parse_confidence(text: &str, slot_index: usize) -> Option<ConfidenceLabel> {
    locate_phrase(text, slot_index).map(|(label, _)| label)
}

/// Confidence in `[0, 1]` for slot `slot_index` (0-based) of a confidence
/// response.
///
/// With token log-probabilities covering the slot's phrase, this is
/// `p_sure / (p_sure + p_unsure)` at the discriminating token. When only one
/// side is visible, the other side gets the remaining mass `1 - p`. Without
/// usable log-probabilities the stated phrase gives 1.0 or 0.0.
pub fn confidence_score(
    response: &CompletionResponse,
    slot_index: usize,
) -> Result<f64, MetricsError> {
    confidence_score_with(response, slot_index, &DiscriminatingTokens::default())
}

pub fn confidence_score_with(
    response: &CompletionResponse,
    slot_index: usize,
    tokens: &DiscriminatingTokens,
) -> Result<f64, MetricsError> {
    let (label, word_at) =
        locate_phrase(&response.text, slot_index).ok_or(MetricsError::UnparseableConfidence {
            slot: slot_index + 1,
        })?;
    let fallback = if label.is_sure() { 1.0 } else { 0.0 };
    Ok(logprob_confidence(response, word_at, tokens).unwrap_or(fallback))
}

fn logprob_confidence(
    response: &CompletionResponse,
    word_at: usize,
    words: &DiscriminatingTokens,
) -> Option<f64> {
    let tokens = response.token_logprobs.as_ref()?;
    let joined: String = tokens.iter().map(|t| t.token.as_str()).collect();
    if joined != response.text {
        return None;
    }

    let mut offset = 0;
    let token = tokens.iter().find(|t| {
        let start = offset;
        offset += t.token.len();
        start <= word_at && word_at < offset
    })?;
    let token_start = offset - token.token.len();
    let lead = &token.token[..word_at - token_start];

    let mut best = [None::<f64>; 2];
    let mut consider = |fragment: &str, logprob: f64| {
        if let Some(side) = words.classify(fragment) {
            let p = logprob.min(0.0).exp();
            let slot = &mut best[side as usize];
            *slot = Some(slot.map_or(p, |q: f64| q.max(p)));
        }
    };
    consider(&token.token[word_at - token_start..], token.logprob);
    for alt in &token.top {
        let fragment = alt
            .token
            .strip_prefix(lead)
            .unwrap_or(alt.token.trim_start());
        consider(fragment, alt.logprob);
    }

    let (p_sure, p_unsure) = match best {
        [Some(s), Some(u)] => (s, u),
        [Some(s), None] => (s, (1.0 - s).max(0.0)),
        [None, Some(u)] => ((1.0 - u).max(0.0), u),
        [None, None] => return None,
    };
    let total = p_sure + p_unsure;
    (total > 0.0).then(|| (p_sure / total).clamp(0.0, 1.0))
}

fn check_records(records: &[PredictionRecord]) -> Result<(), MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    for r in records {
        if !(0.0..=1.0).contains(&r.confidence) {
            return Err(MetricsError::ConfidenceOutOfRange {
                question_id: r.question_id.clone(),
                confidence: r.confidence,
            });
        }
    }
    Ok(())
}

/// Records ordered by descending confidence; equal confidences keep
/// ascending `question_id` order.
pub fn ranked(records: &[PredictionRecord]) -> Vec<&PredictionRecord> {
    let mut order: Vec<&PredictionRecord> = records.iter().collect();
    order.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.question_id.cmp(&b.question_id))
    });
    order
}

/// Non-interpolated average precision, `sum_k (R_k - R_{k-1}) * P_k`, with
/// correct answers as the positive class.
pub fn average_precision(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    check_records(records)?;
    let positives = records.iter().filter(|r| r.correct).count();
    if positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut true_positives = 0usize;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (k, r) in ranked(records).into_iter().enumerate() {
        if r.correct {
            true_positives += 1;
        }
        let precision = true_positives as f64 / (k + 1) as f64;
        let recall = true_positives as f64 / positives as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Bin `m` covers `[m/bins, (m+1)/bins)`; the last bin also takes 1.0.
pub fn bin_index(confidence: f64, bins: usize) -> usize {
    let lower = |m: usize| m as f64 / bins as f64;
    let mut m = ((confidence * bins as f64).floor().max(0.0) as usize).min(bins - 1);
    // Float rounding in the product can land one bin off; settle against the
    // boundaries themselves.
    while m > 0 && confidence < lower(m) {
        m -= 1;
    }
    while m + 1 < bins && confidence >= lower(m + 1) {
        m += 1;
    }
    m
}

pub fn calibration_bins(
    records: &[PredictionRecord],
    bins: usize,
) -> Result<Vec<CalibrationBin>, MetricsError> {
    if bins == 0 {
        return Err(MetricsError::ZeroBins);
    }
    check_records(records)?;
    let mut sums = vec![(0usize, 0.0f64, 0usize); bins];
    for r in records {
        let s = &mut sums[bin_index(r.confidence, bins)];
        s.0 += 1;
        s.1 += r.confidence;
        s.2 += usize::from(r.correct);
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(m, (size, conf_sum, correct))| {
            let (mean_confidence, empirical_accuracy) = if size == 0 {
                (0.0, 0.0)
            } else {
                (conf_sum / size as f64, correct as f64 / size as f64)
            };
            CalibrationBin {
                lower: m as f64 / bins as f64,
                upper: (m + 1) as f64 / bins as f64,
                size,
                mean_confidence,
                empirical_accuracy,
            }
        })
        .collect())
}

fn ece_from_bins(bins: &[CalibrationBin], total: usize) -> f64 {
    bins.iter()
        .filter(|b| b.size > 0)
        .map(|b| b.size as f64 / total as f64 * (b.mean_confidence - b.empirical_accuracy).abs())
        .sum()
}

/// Expected calibration error over ten equal-width bins.
pub fn ece(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    ece_with_bins(records, DEFAULT_BINS)
}

pub fn ece_with_bins(records: &[PredictionRecord], bins: usize) -> Result<f64, MetricsError> {
    let table = calibration_bins(records, bins)?;
    Ok(ece_from_bins(&table, records.len()))
}

/// Fraction correct among records labeled "I am sure".
pub fn accuracy_among_certain(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    let sure = records.iter().filter(|r| r.label.is_sure()).count();
    if sure == 0 {
        return Err(MetricsError::NoSure);
    }
    let correct = records
        .iter()
        .filter(|r| r.label.is_sure() && r.correct)
        .count();
    Ok(correct as f64 / sure as f64)
}

pub fn build_report(records: &[PredictionRecord]) -> Result<CalibrationReport, MetricsError> {
    check_records(records)?;
    let bins = calibration_bins(records, DEFAULT_BINS)?;
    Ok(CalibrationReport {
        ap: average_precision(records)?,
        ece: ece_from_bins(&bins, records.len()),
        accuracy_among_certain: accuracy_among_certain(records)?,
        bins,
        counts: Counts {
            total: records.len(),
            sure: records.iter().filter(|r| r.label.is_sure()).count(),
            correct: records.iter().filter(|r| r.correct).count(),
        },
    })
}

impl CalibrationReport {
    /// Plain-text table with percentages to one decimal.
    pub fn render_table(&self, model: &str, dataset: &str) -> String {
        let width = model.len().max(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:width$} | {}", "", dataset);
        let _ = writeln!(
            out,
            "{:width$} | {:>6} {:>6} {:>6}",
            "Model", "AP", "ECE", "Acc"
        );
        let _ = writeln!(out, "{}-+-{}", "-".repeat(width), "-".repeat(20));
        let _ = writeln!(
            out,
            "{:width$} | {:>6.1} {:>6.1} {:>6.1}",
            model,
            self.ap * 100.0,
            self.ece * 100.0,
            self.accuracy_among_certain * 100.0
        );
        let _ = writeln!(
            out,
            "\n{} predictions, {} sure, {} correct",
            self.counts.total, self.counts.sure, self.counts.correct
        );
        out
    }

    /// Reliability-diagram data, one row per bin.
    pub fn bins_csv(&self) -> String {
        let mut out = String::from("lower,upper,size,mean_confidence,empirical_accuracy\n");
        for b in &self.bins {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                b.lower, b.upper, b.size, b.mean_confidence, b.empirical_accuracy
            );
        }
        out
    }
}
