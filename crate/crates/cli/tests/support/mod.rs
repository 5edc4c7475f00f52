//! Labeled fixture corpus, planted transcripts and config files for the
//! command-line tests.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reqsat::corpus::{self, Corpus, GroundTruth, Specification, Store};
use reqsat::eval::{self, ExperimentConfig, PlannedPrompt};
use reqsat::knowledge::{RequirementId, Rubric};
use reqsat::llm::{ChatResponse, TranscriptRecord};
use reqsat::promptkit::TemplateSet;

pub const SEED: u64 = 7;
pub const TRIALS: usize = 10;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reqsat"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// 640 labeled specifications: 20 per (store, requirement, label).
pub fn labeled() -> (Corpus, GroundTruth) {
    crate::common::synthetic_corpus(20)
}

pub fn write_labeled(dir: &Path) -> (PathBuf, PathBuf) {
    let (c, t) = labeled();
    let corpus_path = dir.join("corpus.jsonl");
    let truth_path = dir.join("truth.jsonl");
    corpus::save_corpus(&c, &corpus_path).unwrap();
    corpus::save_ground_truth(&t, &truth_path).unwrap();
    (corpus_path, truth_path)
}

/// The held-out test set the command line builds from the default
/// evaluation settings: 24 per cell, 75 train, 300 test.
pub fn test_set(c: &Corpus, seed: u64) -> Vec<Specification> {
    let stores: BTreeSet<Store> = Store::ALL.into_iter().collect();
    let sample = corpus::sample_balanced(c, 24, &stores, seed).unwrap();
    let split = corpus::split_holdout(&sample, 75, 300, seed).unwrap();
    c.select(&split.test)
}

pub fn plan(c: &Corpus, truth: &GroundTruth, seed: u64) -> Vec<PlannedPrompt> {
    let cfg = ExperimentConfig { seed, ..Default::default() };
    eval::plan_experiment(&test_set(c, seed), truth, &cfg, &TemplateSet::bundled(), &Rubric::bundled(), &[]).unwrap()
}

/// Incorrect normative trials out of ten per requirement; the inverted
/// prompt of the same specification gets `2 - k`, so every specification
/// has exactly 2 wrong trials out of 20.
pub fn planted_normative_errors(req: RequirementId) -> usize {
    [0, 1, 2, 0, 1, 2, 0, 1][RequirementId::ALL.iter().position(|r| *r == req).unwrap()]
}

fn phrasing(answer: bool, trial: usize) -> String {
    let word = if answer { "True" } else { "False" };
    match trial % 3 {
        0 => word.to_string(),
        1 => format!("Rationale: the practices decide it.\n\nAnswer: {word}"),
        _ => format!("The statement is {}", word.to_lowercase()),
    }
}

/// Transcript where the first `wrong(p)` trials of each planned prompt give
/// the wrong answer.
pub fn planted_transcript(plan: &[PlannedPrompt], wrong: impl Fn(&PlannedPrompt) -> usize) -> Vec<TranscriptRecord> {
    let mut out = Vec::new();
    for p in plan {
        let k = wrong(p);
        for trial in 0..TRIALS {
            let answer = if trial < k { !p.expected } else { p.expected };
            out.push(TranscriptRecord {
                request_digest: p.request.digest(),
                request: p.request.clone(),
                response: ChatResponse::text(phrasing(answer, trial)),
                trial_index: trial,
            });
        }
    }
    out
}

pub fn write_transcript(path: &Path, records: &[TranscriptRecord]) {
    corpus::write_jsonl_file(path, records).unwrap();
}

/// Writes `config.toml` into `dir` pointing at the fixture corpus.
pub fn write_config(dir: &Path, backend: &str) -> PathBuf {
    let path = dir.join("config.toml");
    let text = format!(
        "seed = {SEED}\noutput_dir = \"out\"\n\n[backend]\n{backend}\n\n[evaluate]\ncorpus = \"corpus.jsonl\"\nground_truth = \"truth.jsonl\"\n"
    );
    std::fs::write(&path, text).unwrap();
    path
}

/// Every file below `dir`, relative to it.
pub fn tree(dir: &Path) -> BTreeSet<PathBuf> {
    let mut out = BTreeSet::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out
}
