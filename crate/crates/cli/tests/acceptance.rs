//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach the output; exits non-zero on any FAIL.

#[path = "../../core/tests/common/mod.rs"]
mod common;
mod support;

use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, TestRunner};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use reqsat::corpus::{cohens_kappa, sample_balanced, split_holdout, Label, Store};
use reqsat::eval::{self, ExperimentConfig};
use reqsat::knowledge::{ConsentAssignment, RequirementId, Rubric, StatementPolarity};
use reqsat::llm::open_replay;
use reqsat::promptkit::{select_demonstrations, Demonstration, TemplateSet};
use reqsat::verdict::{consistency_check, majority_vote, parse_response, Consistency, Extraction, Prediction, Verdict};

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn template_fidelity() -> Check {
    let start = Instant::now();
    let renderings = common::golden_renderings(&TemplateSet::bundled(), &Rubric::bundled());
    ensure!(renderings.len() == 9, "expected 9 renderings, got {}", renderings.len());
    for (name, text) in &renderings {
        let path = common::golden_dir().join(name);
        let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure!(*text == expected, "{name} differs from its golden file");
    }
    let all: String = renderings.iter().map(|(_, t)| t.as_str()).collect();
    ensure!(all.contains("satisifies"), "published spelling \"satisifies\" missing");
    ensure!(all.contains("###"), "\"###\" separator missing");
    ensure!(all.contains("# END"), "\"# END\" marker missing");
    ensure!(start.elapsed() < Duration::from_secs(1), "took {:?}", start.elapsed());
    Ok(())
}

fn parser_suite() -> Check {
    use Extraction::*;
    use Prediction::*;
    let cases: &[(&str, Prediction, Extraction, usize)] = &[
        ("True", True, Uniform, 0),
        ("False", False, Uniform, 0),
        ("TRUE", True, Uniform, 0),
        (" false ", False, Uniform, 0),
        ("\ttrue\n", True, Uniform, 0),
        ("Rationale: the purposes are listed.\n\nAnswer: False", False, AnswerRegex, 1),
        ("Answer: True", True, AnswerRegex, 1),
        ("answer: true", True, AnswerRegex, 1),
        ("The statement \"Data processing is limited to specific purposes\" is false", False, ElaborationRegex, 1),
        ("The requirement is true.", True, ElaborationRegex, 1),
        ("The requirement \"Consent is freely given\" is TRUE", True, ElaborationRegex, 1),
        ("Answer: True. Later on, Answer: False", False, AnswerRegex, 2),
        ("Answer: False\nOn balance the statement is true", True, ElaborationRegex, 2),
        ("The statement is false. Answer: True", True, AnswerRegex, 2),
        ("Apologies, but I cannot fulfill that request.", Unparsable, None, 0),
        ("I'm sorry, but I cannot fulfill that request.", Unparsable, None, 0),
        ("", Unparsable, None, 0),
        ("True or False depends on context.", Unparsable, None, 0),
        ("Answer: maybe", Unparsable, None, 0),
    ];
    for (text, prediction, extraction, count) in cases {
        let want = Verdict { prediction: *prediction, extraction: *extraction, match_count: *count };
        let got = parse_response(text);
        ensure!(got == want, "{text:?}: got {got:?}, want {want:?}");
    }
    ensure!(cases.len() >= 15, "only {} cases", cases.len());
    Ok(())
}

/// Consent iff no power imbalance, no conditionality, and the other six hold.
fn consent_oracle(bits: u8) -> bool {
    let bit = |i: usize| bits & (1 << i) != 0;
    !bit(0) && !bit(1) && (2..8).all(bit)
}

fn consent_formula() -> Check {
    let rubric = Rubric::bundled();
    for bits in 0..=255u8 {
        let got = rubric.evaluate_consent(&ConsentAssignment::from_bits(bits)).map_err(|e| e.to_string())?;
        ensure!(got == consent_oracle(bits), "assignment {bits:08b}");
    }
    let satisfying = 0b1111_1100u8;
    ensure!(rubric.evaluate_consent(&ConsentAssignment::from_bits(satisfying)).unwrap(), "base assignment");
    for i in 0..8 {
        let flipped = ConsentAssignment::from_bits(satisfying ^ (1 << i));
        ensure!(!rubric.evaluate_consent(&flipped).unwrap(), "flipping {} keeps consent", RequirementId::ALL[i]);
    }
    Ok(())
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        RunnerConfig { cases, failure_persistence: None, ..RunnerConfig::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    )
}

fn demonstration_ordering() -> Check {
    let rubric = Rubric::bundled();
    let pool = prop::collection::vec((0usize..8, any::<bool>()), 0..60);
    let strategy = (pool, 0usize..8, 0usize..4, any::<u64>(), any::<bool>());
    runner(1000)
        .run(&strategy, |(items, r, n_pairs, seed, inverted)| {
            let pool: Vec<Demonstration> = items
                .iter()
                .enumerate()
                .map(|(n, (r, sat))| Demonstration {
                    design_practices: format!("1. practice {n}"),
                    statement: format!("statement {n}"),
                    rationale: format!("rationale {n}"),
                    answer: *sat,
                    requirement: RequirementId::ALL[*r],
                    label_class: if *sat { Label::Satisfies } else { Label::Dissatisfies },
                })
                .collect();
            let req = rubric.get(RequirementId::ALL[r]).unwrap();
            let polarity = if inverted { StatementPolarity::Inverted } else { StatementPolarity::Normative };
            let available = |label| pool.iter().filter(|d| d.requirement == req.id && d.label_class == label).count();
            let enough = available(Label::Satisfies) >= n_pairs && available(Label::Dissatisfies) >= n_pairs;
            let Ok(out) = select_demonstrations(&pool, req, n_pairs, polarity, Some(seed)) else {
                prop_assert!(!enough);
                return Ok(());
            };
            prop_assert!(enough);
            let sat = out.iter().filter(|d| d.label_class == Label::Satisfies).count();
            prop_assert_eq!(sat, out.len() - sat);
            prop_assert_eq!(out.len(), 2 * n_pairs);
            for (i, d) in out.iter().enumerate() {
                prop_assert_eq!(d.label_class == Label::Satisfies, i % 2 == 0);
                prop_assert_eq!(d.requirement, req.id);
                let original = pool.iter().find(|p| p.rationale == d.rationale).unwrap();
                prop_assert_eq!(d.answer, original.answer != inverted);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn majority_vote_properties() -> Check {
    let strategy = (prop::collection::vec(any::<bool>(), 1..40), any::<u64>(), any::<u64>());
    runner(1000)
        .run(&strategy, |(votes, seed, shuffle_seed)| {
            let mut shuffled = votes.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
            let a = majority_vote(&votes, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(a, majority_vote(&shuffled, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap());
            prop_assert_eq!(a, majority_vote(&votes, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap());
            let yes = votes.iter().filter(|v| **v).count();
            if 2 * yes != votes.len() {
                prop_assert_eq!(a, 2 * yes > votes.len());
                let other = majority_vote(&votes, &mut ChaCha8Rng::seed_from_u64(!seed)).unwrap();
                prop_assert_eq!(a, other);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Hand-computed slices for the planted transcript: every specification has
/// 18 of 20 trials right, normative accuracy per requirement is
/// `1 - k/10` with k from `planted_normative_errors`.
const PLANTED_SLICES: [(RequirementId, f64, f64); 8] = [
    (RequirementId::P, 1.0, 0.8),
    (RequirementId::C, 0.9, 0.9),
    (RequirementId::G, 0.8, 1.0),
    (RequirementId::D, 1.0, 0.8),
    (RequirementId::S, 0.9, 0.9),
    (RequirementId::I, 0.8, 1.0),
    (RequirementId::U, 1.0, 0.8),
    (RequirementId::W, 0.9, 0.9),
];

fn experiment_accounting() -> Check {
    let start = Instant::now();
    let (c, truth) = support::labeled();
    let test_set = support::test_set(&c, support::SEED);
    ensure!(test_set.len() == 300, "test set has {}", test_set.len());
    let plan = support::plan(&c, &truth, support::SEED);
    let transcript = support::planted_transcript(&plan, |p| match p.polarity {
        StatementPolarity::Normative => support::planted_normative_errors(p.requirement),
        StatementPolarity::Inverted => 2 - support::planted_normative_errors(p.requirement),
    });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("planted.jsonl");
    support::write_transcript(&path, &transcript);
    let replay = open_replay(&path).map_err(|e| e.to_string())?;

    let cfg = ExperimentConfig { seed: support::SEED, parallelism: 4, ..Default::default() };
    let (templates, rubric) = (TemplateSet::bundled(), Rubric::bundled());
    let records =
        eval::run_experiment(&test_set, &truth, &cfg, &templates, &rubric, &[], &replay).map_err(|e| e.to_string())?;
    ensure!(records.len() == 6000, "{} records", records.len());
    ensure!(records.iter().all(|r| r.error.is_none()), "replay miss");
    let correct = records.iter().filter(|r| r.correct).count();
    ensure!(correct == 5400, "{correct} correct trials");

    let report = eval::compute_metrics(&records, &truth, support::SEED).map_err(|e| e.to_string())?;
    ensure!(report.overall.accuracy == 0.9, "overall {}", report.overall.accuracy);
    ensure!((report.overall.correct, report.overall.total) == (5400, 6000), "overall {:?}", report.overall);
    ensure!(report.spec_true.accuracy == 0.9 && report.spec_false.accuracy == 0.9, "spec slices");
    for (req, normative, inverted) in PLANTED_SLICES {
        let r = &report.per_requirement[&req];
        ensure!(r.correct * 10 == r.total * 9, "{req}: {r:?}");
        for (polarity, want) in [(StatementPolarity::Normative, normative), (StatementPolarity::Inverted, inverted)] {
            let s = report
                .per_requirement_polarity
                .iter()
                .find(|s| s.requirement == req && s.polarity == polarity)
                .ok_or(format!("no slice for {req} {polarity}"))?;
            ensure!((s.ratio.accuracy - want).abs() <= 1e-12, "{req} {polarity}: {} vs {want}", s.ratio.accuracy);
        }
    }
    // Normative total from the per-requirement specification counts.
    let mut per_req: HashMap<RequirementId, usize> = HashMap::new();
    for s in &test_set {
        *per_req.entry(s.target_requirement).or_default() += 1;
    }
    let normative_correct: usize =
        PLANTED_SLICES.iter().map(|(r, n, _)| per_req[r] * (n * 10.0).round() as usize).sum();
    ensure!(report.req_normative.correct == normative_correct, "normative {:?}", report.req_normative);
    ensure!(report.req_inverted.correct == 5400 - normative_correct, "inverted {:?}", report.req_inverted);
    ensure!(report.majority.correct == 600, "majority {:?}", report.majority);
    ensure!(start.elapsed() < Duration::from_secs(60), "took {:?}", start.elapsed());
    Ok(())
}

fn consistency_detection() -> Check {
    let t = parse_response("True");
    let f = parse_response("Answer: False");
    let u = parse_response("Apologies, but I cannot fulfill that request.");
    ensure!(consistency_check(&t, &t) == Consistency::Inconsistent, "(True, True)");
    ensure!(consistency_check(&t, &f) == Consistency::Consistent, "(True, False)");
    ensure!(consistency_check(&f, &t) == Consistency::Consistent, "(False, True)");
    for (a, b) in [(&u, &t), (&t, &u), (&u, &u)] {
        ensure!(consistency_check(a, b) == Consistency::Undetermined, "unparsable side");
    }
    Ok(())
}

fn sampling_and_split() -> Check {
    let (c, _) = support::labeled();
    let stores: BTreeSet<Store> = Store::ALL.into_iter().collect();
    let sample = sample_balanced(&c, 24, &stores, support::SEED).map_err(|e| e.to_string())?;
    ensure!(sample.len() == 8 * 2 * 24, "{} sampled", sample.len());
    for req in RequirementId::ALL {
        for label in Label::BOTH {
            let n = sample.iter().filter(|s| s.target_requirement == req && s.intended_polarity == label).count();
            ensure!(n == 24, "cell {req} {label:?} has {n}");
        }
    }
    let split = split_holdout(&sample, 75, 300, support::SEED).map_err(|e| e.to_string())?;
    ensure!(split.train.len() == 75 && split.test.len() == 300, "split sizes");
    ensure!(split.discarded.len() == 9, "{} discarded", split.discarded.len());
    let again = split_holdout(&sample, 75, 300, support::SEED).unwrap();
    ensure!(again.discarded == split.discarded, "discards not deterministic");
    let counts =
        RequirementId::ALL.map(|r| split.train.iter().filter(|id| c.get(id).unwrap().target_requirement == r).count());
    ensure!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1, "train counts {counts:?}");
    Ok(())
}

fn kappa_oracle(a: &[u8], b: &[u8]) -> f64 {
    let n = a.len() as f64;
    let cats: BTreeSet<u8> = a.iter().chain(b).copied().collect();
    let cell = |x: u8, y: u8| a.iter().zip(b).filter(|(p, q)| **p == x && **q == y).count() as f64;
    let p_o: f64 = cats.iter().map(|c| cell(*c, *c)).sum::<f64>() / n;
    let p_e: f64 = cats
        .iter()
        .map(|c| {
            let row: f64 = cats.iter().map(|d| cell(*c, *d)).sum();
            let col: f64 = cats.iter().map(|d| cell(*d, *c)).sum();
            row * col / (n * n)
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        1.0
    } else {
        (p_o - p_e) / (1.0 - p_e)
    }
}

fn kappa() -> Check {
    let yes = [1u8, 0, 1, 0, 1];
    ensure!(cohens_kappa(&yes, &yes).unwrap() == 1.0, "perfect agreement");
    let a = [1u8, 1, 1, 1, 1, 0, 0, 0, 0, 0];
    let b = [1u8, 1, 1, 1, 1, 0, 0, 0, 0, 1];
    let k = cohens_kappa(&a, &b).unwrap();
    ensure!((k - 0.8).abs() < 1e-9 && (k - kappa_oracle(&a, &b)).abs() < 1e-9, "9/10 case gave {k}");
    let strategy = (prop::collection::vec((0u8..3, 0u8..3), 1..60), Just([2u8, 0, 1]).prop_shuffle());
    runner(500)
        .run(&strategy, |(pairs, perm)| {
            let a: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            let k = cohens_kappa(&a, &b).unwrap();
            prop_assert_eq!(k, cohens_kappa(&b, &a).unwrap());
            let rename = |v: &[u8]| v.iter().map(|x| perm[*x as usize]).collect::<Vec<_>>();
            prop_assert!((k - cohens_kappa(&rename(&a), &rename(&b)).unwrap()).abs() < 1e-12);
            prop_assert!((k - kappa_oracle(&a, &b)).abs() < 1e-9);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn end_to_end_reproducibility() -> Check {
    let dir = tempfile::tempdir().unwrap();
    support::write_labeled(dir.path());
    let (c, truth) = support::labeled();
    let plan = support::plan(&c, &truth, support::SEED);
    // Five wrong trials out of ten on every other prompt forces majority ties.
    let transcript = support::planted_transcript(&plan, |p| if p.spec_id.ends_with('0') { 5 } else { 3 });
    support::write_transcript(&dir.path().join("planted.jsonl"), &transcript);
    let config = support::write_config(dir.path(), "kind = \"replay\"\ntranscript = \"planted.jsonl\"");
    let config = config.to_str().unwrap();

    let mut reports = Vec::new();
    for out in ["run-a", "run-b"] {
        let out_dir = dir.path().join(out);
        let output = support::run(&["--config", config, "--output-dir", out_dir.to_str().unwrap(), "evaluate"]);
        ensure!(output.status.success(), "evaluate failed: {}", support::stderr(&output));
        let bytes = std::fs::read(out_dir.join("report.json")).map_err(|e| e.to_string())?;
        reports.push(bytes);
    }
    ensure!(!reports[0].is_empty() && reports[0] == reports[1], "machine reports differ");
    let report: eval::MetricsReport = serde_json::from_slice(&reports[0]).map_err(|e| e.to_string())?;
    ensure!(report.records == 6000 && report.unparsable == 0, "report covers {} records", report.records);
    Ok(())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("template fidelity", template_fidelity),
        ("parser suite", parser_suite),
        ("consent formula", consent_formula),
        ("demonstration ordering", demonstration_ordering),
        ("majority vote", majority_vote_properties),
        ("experiment accounting", experiment_accounting),
        ("consistency detection", consistency_detection),
        ("sampling and splitting", sampling_and_split),
        ("kappa", kappa),
        ("end-to-end reproducibility", end_to_end_reproducibility),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(()) => println!("PASS {:>2} {name}", i + 1),
            Err(why) => {
                println!("FAIL {:>2} {name}: {why}", i + 1);
                failed.push(*name);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
