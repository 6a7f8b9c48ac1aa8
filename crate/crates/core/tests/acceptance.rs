//! One line per acceptance criterion. Each metric is checked against an
//! oracle written here from scratch, not against the library's own helpers.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mactune::boundary::{assess_generation, match_problem, ConfidenceLabel};
use mactune::composer::{compose, MultiProblem, PromptTemplate};
use mactune::data_model::{Choice, Dataset, Problem, Setting};
use mactune::metrics::{average_precision, ece, PredictionRecord};
use mactune::pipeline::{self, run};
use mactune::sft_emitter::{build_multqa_conf, QaSource};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(detail.into())
    }
}

fn record(id: String, correct: bool, confidence: f64) -> PredictionRecord {
    let label = if confidence >= 0.5 {
        ConfidenceLabel::Sure
    } else {
        ConfidenceLabel::Unsure
    };
    PredictionRecord {
        question_id: id,
        correct,
        confidence,
        label,
    }
}

/// Random records with at least one positive. Confidences come from a coarse
/// grid half the time so that ties and bin edges are common.
fn random_records(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<PredictionRecord> {
    let len = rng.gen_range(1..=max_len);
    let coarse = rng.gen_bool(0.5);
    let mut records: Vec<PredictionRecord> = (0..len)
        .map(|i| {
            let confidence = if coarse {
                f64::from(rng.gen_range(0..=10u32)) / 10.0
            } else {
                rng.gen::<f64>()
            };
            record(
                format!("q{:02}", rng.gen_range(0..100) * 10 + i),
                rng.gen_bool(0.5),
                confidence,
            )
        })
        .collect();
    let k = rng.gen_range(0..len);
    records[k].correct = true;
    records
}

/// `a` is ranked ahead of `b`: higher confidence, then smaller id.
fn ahead(a: &PredictionRecord, b: &PredictionRecord) -> bool {
    a.confidence > b.confidence || (a.confidence == b.confidence && a.question_id < b.question_id)
}

/// AP by enumerating every cutoff of the precision-recall curve. Rank and
/// hit counts come from pairwise comparisons, with no sorting involved.
fn ap_oracle(records: &[PredictionRecord]) -> f64 {
    let positives = records.iter().filter(|r| r.correct).count() as f64;
    let mut by_rank = vec![None; records.len()];
    for r in records {
        let rank = records.iter().filter(|o| ahead(o, r)).count();
        by_rank[rank] = Some(r);
    }
    let (mut hits, mut prev_recall, mut ap) = (0.0, 0.0, 0.0);
    for (k, r) in by_rank.iter().enumerate() {
        if r.expect("ranks are a permutation").correct {
            hits += 1.0;
        }
        let precision = hits / (k + 1) as f64;
        let recall = hits / positives;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// ECE by scanning each bin's interval for its members.
fn ece_oracle(records: &[PredictionRecord]) -> f64 {
    let bins = 10;
    let total = records.len() as f64;
    (0..bins)
        .map(|m| {
            let lo = m as f64 / bins as f64;
            let hi = (m + 1) as f64 / bins as f64;
            let members: Vec<&PredictionRecord> = records
                .iter()
                .filter(|r| {
                    r.confidence >= lo
                        && (r.confidence < hi || (m == bins - 1 && r.confidence <= 1.0))
                })
                .collect();
            if members.is_empty() {
                return 0.0;
            }
            let size = members.len() as f64;
            let conf = members.iter().map(|r| r.confidence).sum::<f64>() / size;
            let acc = members.iter().filter(|r| r.correct).count() as f64 / size;
            size / total * (conf - acc).abs()
        })
        .sum()
}

fn ap_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let records = random_records(&mut rng, 8);
        let got = average_precision(&records).map_err(|e| e.to_string())?;
        worst = worst.max((got - ap_oracle(&records)).abs());
    }
    let elapsed = start.elapsed();
    check(worst <= 1e-12, format!("max |AP - oracle| = {worst:e}"))?;
    check(
        elapsed < Duration::from_secs(5),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "1000 lists, max deviation {worst:e}, {elapsed:.2?}"
    ))
}

fn ece_cases() -> Outcome {
    let ids = |n: usize| (0..n).map(|i| format!("r{i}"));
    let single: Vec<_> = ids(10)
        .enumerate()
        .map(|(i, id)| record(id, i < 6, 0.75))
        .collect();
    let got = ece(&single).map_err(|e| e.to_string())?;
    let hand = (0.75f64 - 6.0 / 10.0).abs();
    check(got == hand, format!("single bin: {got} vs {hand}"))?;
    check(
        (got - 0.15).abs() < 1e-15,
        format!("single bin: {got} vs 0.15"),
    )?;

    let perfect: Vec<_> = ids(7).map(|id| record(id, true, 1.0)).collect();
    let got = ece(&perfect).map_err(|e| e.to_string())?;
    check(got == 0.0, format!("all sure and right: {got}"))?;

    let half: Vec<_> = ids(8)
        .enumerate()
        .map(|(i, id)| record(id, i % 2 == 0, 0.5))
        .collect();
    let got = ece(&half).map_err(|e| e.to_string())?;
    check(got == 0.0, format!("half right at 0.5: {got}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let records = random_records(&mut rng, 40);
        let got = ece(&records).map_err(|e| e.to_string())?;
        worst = worst.max((got - ece_oracle(&records)).abs());
    }
    check(worst <= 1e-12, format!("max |ECE - oracle| = {worst:e}"))?;
    Ok(format!(
        "3 hand cases exact, 1000 lists max deviation {worst:e}"
    ))
}

fn ap_rank_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..500 {
        let records = random_records(&mut rng, 30);
        let cubed: Vec<_> = records
            .iter()
            .map(|r| PredictionRecord {
                confidence: r.confidence.powi(3),
                ..r.clone()
            })
            .collect();
        let a = average_precision(&records).map_err(|e| e.to_string())?;
        let b = average_precision(&cubed).map_err(|e| e.to_string())?;
        check(a - b == 0.0, format!("list {i}: {a} vs {b}"))?;
    }
    Ok("500 lists, difference exactly 0".into())
}

fn composition_partition() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pool: Vec<Problem> = (0..500)
        .map(|i| Problem::qa(format!("p{i:03}"), format!("Q{i}?"), &["a"]))
        .collect();
    let mut checked = 0;
    for n in 1..=15usize {
        for _ in 0..50 {
            let seed: u64 = rng.gen();
            let mut sizes = vec![1, 500, n, n + 1, rng.gen_range(1..=500)];
            if n > 1 {
                sizes.push(n - 1);
            }
            for size in sizes {
                let dataset = Dataset::new("d", Setting::Independent, pool[..size].to_vec());
                let multis = compose(&dataset, n, seed).map_err(|e| e.to_string())?;
                let mut ids: Vec<String> =
                    multis.iter().flat_map(MultiProblem::member_ids).collect();
                ids.sort();
                let expected: Vec<String> = dataset.problems.iter().map(|p| p.id.clone()).collect();
                check(
                    ids == expected,
                    format!("size {size}, n {n}, seed {seed}: ids differ"),
                )?;
                checked += 1;
            }

            // Sequential: random group sizes, up to 500 problems.
            let mut problems = Vec::new();
            let mut g = 0;
            let target = rng.gen_range(1..=500);
            while problems.len() < target {
                let len = rng.gen_range(1..=12).min(target - problems.len());
                for t in 0..len {
                    problems.push(
                        Problem::qa(format!("g{g}t{t}"), format!("G{g} T{t}?"), &["a"])
                            .with_group(format!("g{g}")),
                    );
                }
                g += 1;
            }
            let dataset = Dataset::new("s", Setting::Sequential, problems);
            let multis = compose(&dataset, n, seed).map_err(|e| e.to_string())?;
            for m in &multis {
                let keys: HashSet<_> = m.members.iter().map(|p| p.group_key.clone()).collect();
                check(
                    keys.len() == 1,
                    format!("{} mixes groups {keys:?}", m.multi_id),
                )?;
            }
            let order: Vec<String> = multis.iter().flat_map(MultiProblem::member_ids).collect();
            let expected: Vec<String> = dataset.problems.iter().map(|p| p.id.clone()).collect();
            check(order == expected, format!("sequential n {n}: ids differ"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} compositions, {:.2?}", start.elapsed()))
}

fn template_golden() -> Outcome {
    let multi = MultiProblem::new(
        "golden#00000",
        Setting::Independent,
        common::trio(),
        &PromptTemplate::default(),
    );
    let probed = assess_generation(&multi, "1: Paris\n2: 41\n3: Blue");
    let rec = build_multqa_conf(&multi, &probed, QaSource::Model).map_err(|e| e.to_string())?;
    let input = include_str!("golden/multqa_conf_input_n3.txt");
    let output = include_str!("golden/multqa_conf_output_n3.txt");
    check(
        rec.input == input,
        format!("input differs:\n{}\n{}", rec.input, input),
    )?;
    check(
        rec.output == output,
        format!("output differs: {:?}", rec.output),
    )?;
    Ok("input and output byte-identical at n=3".into())
}

fn end_to_end_mock() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = common::write_dataset(dir.path(), "synthetic", common::synthetic_problems(300));
    let config = common::mock_config(data, dir.path().join("out"), 3, 0.7);
    let summary = run(&config).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    // Recompute everything from the prediction file rather than trusting the report.
    let preds: Vec<PredictionRecord> =
        pipeline::read_jsonl(&config.output_dir.join(pipeline::PREDICTIONS_FILE))
            .map_err(|e| e.to_string())?;
    check(preds.len() == 300, format!("{} predictions", preds.len()))?;
    let sure: Vec<_> = preds.iter().filter(|p| p.label.is_sure()).collect();
    let acc = sure.iter().filter(|p| p.correct).count() as f64 / sure.len() as f64;
    let sure_fraction = sure.len() as f64 / preds.len() as f64;
    let e = ece_oracle(&preds);
    let ap = ap_oracle(&preds);
    let report = summary.report.ok_or("no report")?;

    check(acc == 1.0, format!("accuracy among certain {acc}"))?;
    check(
        (sure_fraction - 0.7).abs() <= 0.07,
        format!("sure fraction {sure_fraction}"),
    )?;
    check(e <= 0.05, format!("ECE {e}"))?;
    check(ap >= 0.95, format!("AP {ap}"))?;
    check(
        (report.ap - ap).abs() < 1e-12 && (report.ece - e).abs() < 1e-12,
        "report disagrees with oracle",
    )?;
    check(
        elapsed < Duration::from_secs(30),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "acc {acc}, sure {sure_fraction:.3}, ECE {e:.4}, AP {ap:.4}, {elapsed:.2?}"
    ))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = common::write_dataset(dir.path(), "synthetic", common::synthetic_problems(60));
    let config = common::mock_config(data, dir.path().join("out"), 3, 0.6);
    run(&config).map_err(|e| e.to_string())?;
    let first = snapshot(&config.output_dir);
    fs::remove_dir_all(&config.output_dir).map_err(|e| e.to_string())?;
    run(&config).map_err(|e| e.to_string())?;
    let second = snapshot(&config.output_dir);
    check(first.contains_key(pipeline::MANIFEST_FILE), "no manifest")?;
    check(first == second, "artifacts differ between runs")?;

    let mut elsewhere = config.clone();
    elsewhere.output_dir = dir.path().join("elsewhere");
    run(&elsewhere).map_err(|e| e.to_string())?;
    check(
        snapshot(&elsewhere.output_dir) == first,
        "artifacts depend on the output location",
    )?;
    Ok(format!("{} files byte-identical across runs", first.len()))
}

const WORDS: &[&str] = &[
    "paris", "the", "Paris", "london", "blue", "sky", "42", "4.0", "1,000", "1000", "$3.50", "a",
    "an", "red", "Eiffel", "Tower", "tower", "forty", "-7", ".5", "0.5", "New", "York", "york",
    "(B)", "B", "C",
];

fn phrase(rng: &mut ChaCha8Rng, max: usize) -> String {
    let len = rng.gen_range(0..=max);
    let mut s: Vec<String> = (0..len)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string())
        .collect();
    if rng.gen_bool(0.2) {
        s.push(".".into());
    }
    s.join(" ")
}

fn label_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pairs = 0;
    let mut sure = 0;
    while pairs < 10_000 {
        let n = rng.gen_range(1..=4);
        let members: Vec<Problem> = (0..n)
            .map(|i| {
                let gold = {
                    let mut g = phrase(&mut rng, 3);
                    if !g.chars().any(|c| c.is_ascii_alphanumeric()) {
                        g = "paris".into();
                    }
                    g
                };
                if rng.gen_bool(0.25) {
                    let choices = vec![
                        Choice::new("A", "Paris"),
                        Choice::new("B", "London"),
                        Choice::new("C", "Blue sky"),
                    ];
                    let letter = ["A", "B", "C"][rng.gen_range(0..3)];
                    Problem::mc(
                        format!("m{pairs}-{i}"),
                        format!("Pick {i}?"),
                        choices,
                        &[letter],
                    )
                } else {
                    Problem::qa(
                        format!("q{pairs}-{i}"),
                        format!("Ask {i}?"),
                        &[gold.as_str()],
                    )
                }
            })
            .collect();
        let multi = MultiProblem::new(
            "fuzz",
            Setting::Independent,
            members,
            &PromptTemplate::default(),
        );
        let present: Vec<usize> = (1..=n).filter(|_| rng.gen_bool(0.9)).collect();
        let generation = present
            .into_iter()
            .map(|k| {
                let sep = if rng.gen_bool(0.8) { ":" } else { "." };
                let member = &multi.members[k - 1];
                let body = if rng.gen_bool(0.4) {
                    format!("{} {}", phrase(&mut rng, 1), member.gold[0])
                } else {
                    phrase(&mut rng, 4)
                };
                format!("{k}{sep} {body}")
            })
            .collect::<Vec<_>>()
            .join(if rng.gen_bool(0.5) { "\n" } else { " " });

        let rec = assess_generation(&multi, &generation);
        rec.check().map_err(|e| format!("{generation:?}: {e}"))?;
        for (i, p) in multi.members.iter().enumerate() {
            let matched = match_problem(&rec.answers[i], p);
            check(
                rec.matches[i] == matched && rec.labels[i].is_sure() == matched,
                format!(
                    "{generation:?} slot {}: label {} but match {matched}",
                    i + 1,
                    rec.labels[i]
                ),
            )?;
            sure += usize::from(matched);
            pairs += 1;
        }
        let emitted =
            build_multqa_conf(&multi, &rec, QaSource::Model).map_err(|e| e.to_string())?;
        let expected: Vec<String> = rec
            .matches
            .iter()
            .enumerate()
            .map(|(i, &m)| format!("{}: {}", i + 1, if m { "I am sure" } else { "I am unsure" }))
            .collect();
        check(
            emitted.output == expected.join(" "),
            format!("emitted {:?}", emitted.output),
        )?;
    }
    Ok(format!("{pairs} pairs, {sure} sure, no violation"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (
            "AP matches exhaustive PR-curve oracle",
            ap_oracle_equivalence,
        ),
        ("ECE hand cases and explicit-bin oracle", ece_cases),
        ("AP unchanged under x -> x^3", ap_rank_invariance),
        (
            "composition partitions ids, sequential keeps groups",
            composition_partition,
        ),
        ("confidence record matches golden template", template_golden),
        ("end-to-end mock pipeline", end_to_end_mock),
        ("deterministic artifacts and manifest", determinism),
        ("label soundness fuzz", label_soundness),
    ];
    let mut failed = 0;
    for (name, criterion) in criteria {
        match criterion() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
