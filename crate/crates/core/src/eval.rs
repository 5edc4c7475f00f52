//! Experiment runner and accuracy breakdowns.
//!
//! An experiment prompts the backend for every test specification, both
//! statement polarities and `trials` repetitions. Each response becomes one
//! [`TrialRecord`]; calls that fail after retries are recorded as unparsable
//! so the record count is always `|test| × 2 × trials`.
//!
//! The expected answer for a specification labeled *satisfies* is `True` for
//! the normative statement and `False` for the inverted one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{GroundTruth, Label, Specification};
use crate::knowledge::{RequirementId, Rubric, StatementPolarity};
use crate::llm::{ChatBackend, ChatRequest, MockBackend, ModelParams};
use crate::parallel::try_map_ordered;
use crate::promptkit::{self, Demonstration, PromptError, RenderedPrompt, TemplateId, TemplateKind, TemplateSet};
use crate::seed;
use crate::verdict::{
    consistency_check, count_buckets, majority_vote, parse_response_with, Consistency, MatchBuckets, ParseOptions,
    Verdict,
};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrialKey {
    pub spec_id: String,
    pub requirement: RequirementId,
    pub polarity: StatementPolarity,
    pub trial: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub key: TrialKey,
    pub prompt_digest: String,
    pub response: String,
    pub verdict: Verdict,
    pub expected: bool,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// How chain-of-thought demonstrations are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShotMode {
    /// `n_pairs` satisfying plus `n_pairs` dissatisfying demonstrations.
    #[default]
    Pairs,
    /// `n_pairs` demonstrations in total, alternating classes.
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub template: TemplateId,
    pub n_pairs: usize,
    pub shot_mode: ShotMode,
    pub trials: usize,
    pub seed: u64,
    pub model: ModelParams,
    pub parse: ParseOptions,
    pub parallelism: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            template: TemplateId::G,
            n_pairs: 1,
            shot_mode: ShotMode::Pairs,
            trials: 10,
            seed: 0,
            model: ModelParams::default(),
            parse: ParseOptions::default(),
            parallelism: 1,
        }
    }
}

impl ExperimentConfig {
    /// Digest over every setting that can change results, the templates and
    /// the rubric included. Parallelism is excluded.
    pub fn digest(&self, templates: &TemplateSet, rubric: &Rubric) -> String {
        let mut canonical = self.clone();
        canonical.parallelism = 0;
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&canonical).expect("config serializes"));
        hasher.update(templates.digest().as_bytes());
        hasher.update(rubric.to_toml_string().as_bytes());
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Knowledge(#[from] crate::knowledge::KnowledgeError),
    #[error("no ground truth for specifications: {}", .0.join(", "))]
    MissingGroundTruth(Vec<String>),
    #[error("ground truth for {spec} names requirement {label_requirement}, specification targets {target}")]
    RequirementMismatch { spec: String, label_requirement: RequirementId, target: RequirementId },
    #[error("experiment needs at least one trial")]
    NoTrials,
    #[error("cannot write report {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read report {path}: {message}")]
    Load { path: String, message: String },
}

/// One rendered question of an experiment, asked `trials` times.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPrompt {
    pub spec_id: String,
    pub requirement: RequirementId,
    pub polarity: StatementPolarity,
    pub expected: bool,
    pub prompt: RenderedPrompt,
    pub request: ChatRequest,
}

pub fn expected_answer(label: Label, polarity: StatementPolarity) -> bool {
    match polarity {
        StatementPolarity::Normative => label.normative_truth(),
        StatementPolarity::Inverted => !label.normative_truth(),
    }
}

/// Normative demonstrations from labeled training specifications that carry
/// a rationale.
pub fn build_demo_pool(train: &[Specification], truth: &GroundTruth, rubric: &Rubric) -> Vec<Demonstration> {
    train
        .iter()
        .filter_map(|spec| {
            let record = truth.get(&spec.id)?;
            let req = rubric.get(record.requirement).ok()?;
            Demonstration::from_labeled(spec, record, req)
        })
        .collect()
}

fn check_truth(test_set: &[Specification], truth: &GroundTruth) -> Result<(), EvalError> {
    let missing: Vec<String> = test_set.iter().filter(|s| !truth.contains_key(&s.id)).map(|s| s.id.clone()).collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingGroundTruth(missing));
    }
    for spec in test_set {
        let record = &truth[&spec.id];
        if record.requirement != spec.target_requirement {
            return Err(EvalError::RequirementMismatch {
                spec: spec.id.clone(),
                label_requirement: record.requirement,
                target: spec.target_requirement,
            });
        }
    }
    Ok(())
}

/// Renders every prompt of the experiment without calling a backend.
/// Configuration problems, such as a thin demonstration pool, surface here.
pub fn plan_experiment(
    test_set: &[Specification],
    truth: &GroundTruth,
    cfg: &ExperimentConfig,
    templates: &TemplateSet,
    rubric: &Rubric,
    demo_pool: &[Demonstration],
) -> Result<Vec<PlannedPrompt>, EvalError> {
    check_truth(test_set, truth)?;
    let mut plan = Vec::with_capacity(test_set.len() * 2);
    for spec in test_set {
        let req = rubric.get(spec.target_requirement)?;
        let label = truth[&spec.id].label;
        let demo_seed = seed::derive(cfg.seed, &["demos", &spec.id]);
        for polarity in StatementPolarity::BOTH {
            let prompt = match cfg.template {
                TemplateId::R | TemplateId::G => {
                    promptkit::render_satisfiability(templates, cfg.template, spec, req, polarity)?
                }
                TemplateId::CoT => {
                    let demos = match cfg.shot_mode {
                        ShotMode::Pairs => {
                            promptkit::select_demonstrations(demo_pool, req, cfg.n_pairs, polarity, Some(demo_seed))?
                        }
                        ShotMode::Single => {
                            promptkit::select_exemplars(demo_pool, req, cfg.n_pairs, polarity, Some(demo_seed))?
                        }
                    };
                    promptkit::render_cot(templates, spec, req, polarity, &demos)?
                }
            };
            let request = cfg.model.request(&prompt.system_message, &prompt.text);
            plan.push(PlannedPrompt {
                spec_id: spec.id.clone(),
                requirement: spec.target_requirement,
                polarity,
                expected: expected_answer(label, polarity),
                prompt,
                request,
            });
        }
    }
    Ok(plan)
}

/// Runs the full trial matrix. Backend failures become unparsable records.
pub fn run_experiment(
    test_set: &[Specification],
    truth: &GroundTruth,
    cfg: &ExperimentConfig,
    templates: &TemplateSet,
    rubric: &Rubric,
    demo_pool: &[Demonstration],
    backend: &dyn ChatBackend,
) -> Result<Vec<TrialRecord>, EvalError> {
    if cfg.trials == 0 {
        return Err(EvalError::NoTrials);
    }
    let plan = plan_experiment(test_set, truth, cfg, templates, rubric, demo_pool)?;
    let work: Vec<(usize, usize)> = (0..plan.len()).flat_map(|p| (0..cfg.trials).map(move |t| (p, t))).collect();
    let records = try_map_ordered(&work, cfg.parallelism, |_, &(p, trial)| {
        let planned = &plan[p];
        let key = TrialKey {
            spec_id: planned.spec_id.clone(),
            requirement: planned.requirement,
            polarity: planned.polarity,
            trial,
        };
        let (response, verdict, error) = match backend.complete_trial(&planned.request, trial) {
            Ok(r) => {
                let v = parse_response_with(&r.text, &cfg.parse);
                (r.text, v, None)
            }
            Err(e) => {
                log::warn!("{} {} trial {trial}: {e}", planned.spec_id, planned.polarity);
                (String::new(), Verdict::unparsable(), Some(e.to_string()))
            }
        };
        let correct = verdict.prediction.as_bool() == Some(planned.expected);
        Ok::<_, std::convert::Infallible>(TrialRecord {
            key,
            prompt_digest: planned.request.digest(),
            response,
            verdict,
            expected: planned.expected,
            correct,
            error,
        })
    });
    match records {
        Ok(r) => Ok(r),
        Err((_, never)) => match never {},
    }
}

/// Answers every planned question correctly; for harness checks.
pub fn oracle_backend(
    test_set: &[Specification],
    truth: &GroundTruth,
    rubric: &Rubric,
) -> Result<MockBackend, EvalError> {
    check_truth(test_set, truth)?;
    let mut tails: Vec<(Vec<String>, bool)> = Vec::new();
    for spec in test_set {
        let req = rubric.get(spec.target_requirement)?;
        let practices = promptkit::linearize_practices(&spec.design_practices);
        for polarity in StatementPolarity::BOTH {
            let statement = req.statement_for(polarity);
            let expected = expected_answer(truth[&spec.id].label, polarity);
            let forms = [
                format!("{practices}\n\nRequirement: {statement}\n\nAnswer: "),
                format!("{practices}\n\nStatement: {statement}\n\nAnswer: "),
                format!("{practices}\n\nStatement: {statement}\n\n###\n\nRationale:  "),
            ];
            tails.push((forms.to_vec(), expected));
        }
    }
    Ok(MockBackend::new("oracle", move |req| {
        tails
            .iter()
            .find(|(forms, _)| forms.iter().any(|f| req.user_message.ends_with(f.as_str())))
            .map(|(_, answer)| promptkit::answer_text(*answer).to_string())
            .ok_or_else(|| "prompt does not match any planned question".to_string())
    }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl Ratio {
    pub fn new(correct: usize, total: usize) -> Self {
        let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        Ratio { correct, total, accuracy }
    }

    fn add(&mut self, correct: bool) {
        *self = Ratio::new(self.correct + usize::from(correct), self.total + 1);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub consistent: usize,
    pub inconsistent: usize,
    pub undetermined: usize,
    /// consistent / (consistent + inconsistent); `None` when nothing was determined.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRatio {
    pub requirement: RequirementId,
    pub polarity: StatementPolarity,
    pub ratio: Ratio,
}

/// Run settings echoed into reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model: String,
    pub template: Option<TemplateId>,
    pub n_pairs: usize,
    pub trials: usize,
    pub config_digest: String,
    pub template_digest: String,
    pub templates_digest: String,
    pub parse: Option<ParseOptions>,
}

impl ReportMeta {
    pub fn for_experiment(cfg: &ExperimentConfig, templates: &TemplateSet, rubric: &Rubric) -> Self {
        ReportMeta {
            model: cfg.model.model.clone(),
            template: Some(cfg.template),
            n_pairs: cfg.n_pairs,
            trials: cfg.trials,
            config_digest: cfg.digest(templates, rubric),
            template_digest: templates.get(TemplateKind::from(cfg.template)).digest(),
            templates_digest: templates.digest(),
            parse: Some(cfg.parse),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub meta: ReportMeta,
    pub seed: u64,
    pub records: usize,
    pub per_requirement: BTreeMap<RequirementId, Ratio>,
    pub per_requirement_polarity: Vec<SliceRatio>,
    pub spec_true: Ratio,
    pub spec_false: Ratio,
    pub req_normative: Ratio,
    pub req_inverted: Ratio,
    pub overall: Ratio,
    pub per_trial: Vec<Ratio>,
    pub mean_trial_accuracy: f64,
    pub majority: Ratio,
    pub uniform: usize,
    pub unparsable: usize,
    pub nonuniform_buckets: MatchBuckets,
    pub consistency: ConsistencySummary,
}

/// All breakdowns over `records`; independent of record order.
pub fn compute_metrics(records: &[TrialRecord], truth: &GroundTruth, seed: u64) -> Result<MetricsReport, EvalError> {
    let missing: BTreeSet<String> =
        records.iter().filter(|r| !truth.contains_key(&r.key.spec_id)).map(|r| r.key.spec_id.clone()).collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingGroundTruth(missing.into_iter().collect()));
    }

    let mut per_requirement: BTreeMap<RequirementId, Ratio> = BTreeMap::new();
    let mut per_slice: BTreeMap<(RequirementId, StatementPolarity), Ratio> = BTreeMap::new();
    let mut per_trial: BTreeMap<usize, Ratio> = BTreeMap::new();
    let (mut spec_true, mut spec_false) = (Ratio::default(), Ratio::default());
    let (mut req_normative, mut req_inverted) = (Ratio::default(), Ratio::default());
    let mut overall = Ratio::default();
    let mut votes: BTreeMap<(&str, StatementPolarity), (Vec<bool>, bool)> = BTreeMap::new();
    let mut pairs: BTreeMap<(&str, usize), [Option<&Verdict>; 2]> = BTreeMap::new();
    let mut unparsable = 0;

    for r in records {
        let label = truth[&r.key.spec_id].label;
        let expected = expected_answer(label, r.key.polarity);
        let prediction = r.verdict.prediction.as_bool();
        let correct = prediction == Some(expected);
        unparsable += usize::from(prediction.is_none());

        per_requirement.entry(r.key.requirement).or_default().add(correct);
        per_slice.entry((r.key.requirement, r.key.polarity)).or_default().add(correct);
        per_trial.entry(r.key.trial).or_default().add(correct);
        match label {
            Label::Satisfies => spec_true.add(correct),
            Label::Dissatisfies => spec_false.add(correct),
        }
        match r.key.polarity {
            StatementPolarity::Normative => req_normative.add(correct),
            StatementPolarity::Inverted => req_inverted.add(correct),
        }
        overall.add(correct);

        let entry = votes.entry((r.key.spec_id.as_str(), r.key.polarity)).or_insert((Vec::new(), expected));
        if let Some(p) = prediction {
            entry.0.push(p);
        }
        let side = match r.key.polarity {
            StatementPolarity::Normative => 0,
            StatementPolarity::Inverted => 1,
        };
        pairs.entry((r.key.spec_id.as_str(), r.key.trial)).or_default()[side] = Some(&r.verdict);
    }

    let mut majority = Ratio::default();
    for ((spec_id, polarity), (predictions, expected)) in &votes {
        let mut rng = seed::rng(seed, &["majority", spec_id, polarity.as_str()]);
        // all-unparsable trial sets have no vote and count as incorrect
        let correct = majority_vote(predictions, &mut rng).map(|v| v == *expected).unwrap_or(false);
        majority.add(correct);
    }

    let mut consistency = ConsistencySummary::default();
    for pair in pairs.values() {
        if let [Some(n), Some(i)] = pair {
            match consistency_check(n, i) {
                Consistency::Consistent => consistency.consistent += 1,
                Consistency::Inconsistent => consistency.inconsistent += 1,
                Consistency::Undetermined => consistency.undetermined += 1,
            }
        }
    }
    let determined = consistency.consistent + consistency.inconsistent;
    consistency.rate = (determined > 0).then(|| consistency.consistent as f64 / determined as f64);

    let per_trial: Vec<Ratio> = per_trial.into_values().collect();
    let mean_trial_accuracy = if per_trial.is_empty() {
        0.0
    } else {
        per_trial.iter().map(|r| r.accuracy).sum::<f64>() / per_trial.len() as f64
    };
    let verdicts: Vec<&Verdict> = records.iter().map(|r| &r.verdict).collect();

    Ok(MetricsReport {
        meta: ReportMeta::default(),
        seed,
        records: records.len(),
        per_requirement,
        per_requirement_polarity: per_slice
            .into_iter()
            .map(|((requirement, polarity), ratio)| SliceRatio { requirement, polarity, ratio })
            .collect(),
        spec_true,
        spec_false,
        req_normative,
        req_inverted,
        overall,
        per_trial,
        mean_trial_accuracy,
        majority,
        uniform: verdicts.iter().filter(|v| v.is_uniform()).count(),
        unparsable,
        nonuniform_buckets: count_buckets(verdicts.iter().copied()),
        consistency,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    TableText,
    Csv,
    Machine,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::TableText => "txt",
            ReportFormat::Csv => "csv",
            ReportFormat::Machine => "json",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "table-text" | "text" | "table" | "txt" => Ok(ReportFormat::TableText),
            "csv" => Ok(ReportFormat::Csv),
            "machine" | "json" => Ok(ReportFormat::Machine),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

/// Display names for the requirement rows, in table order.
pub fn requirement_row_label(id: RequirementId) -> &'static str {
    match id {
        RequirementId::P => "Power Imbalance",
        RequirementId::C => "Conditionality",
        RequirementId::G => "Granularity",
        RequirementId::D => "Detriment",
        RequirementId::S => "Specificity",
        RequirementId::I => "Informed",
        RequirementId::U => "Unambiguous",
        RequirementId::W => "Withdrawal",
    }
}

fn main_rows(report: &MetricsReport) -> Vec<(String, &str, Ratio)> {
    let mut rows: Vec<(String, &str, Ratio)> = RequirementId::ALL
        .iter()
        .filter_map(|id| report.per_requirement.get(id).map(|r| (requirement_row_label(*id).to_string(), "", *r)))
        .collect();
    rows.push(("Spec. (true)".into(), "spec:true", report.spec_true));
    rows.push(("Spec. (false)".into(), "spec:false", report.spec_false));
    rows.push(("Req.".into(), "req:normative", report.req_normative));
    rows.push(("Req. (inverted)".into(), "req:inverted", report.req_inverted));
    rows.push(("Overall Accuracy".into(), "overall", report.overall));
    rows.push(("Maj. Response".into(), "majority", report.majority));
    rows
}

pub fn render_report(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::TableText => render_text(report),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Machine => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
    }
}

fn render_text(report: &MetricsReport) -> String {
    let m = &report.meta;
    let mut out = String::new();
    let template = m.template.map_or_else(|| "-".to_string(), |t| t.to_string());
    let _ = writeln!(
        out,
        "Model: {}  Template: {}  n_pairs: {}  Trials: {}  Seed: {}",
        m.model, template, m.n_pairs, m.trials, report.seed
    );
    let _ = writeln!(out, "Config digest: {}", m.config_digest);
    let _ = writeln!(out, "Template digest: {}", m.template_digest);
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<20} {:>8} {:>11}", "", "Accuracy", "Correct");
    for (label, _, r) in main_rows(report) {
        let _ = writeln!(out, "{label:<20} {:>8.3} {:>11}", r.accuracy, format!("{}/{}", r.correct, r.total));
    }
    let _ = writeln!(out, "{:<20} {:>8.3}", "Mean of Trials", report.mean_trial_accuracy);
    let _ = writeln!(out);
    let _ = writeln!(out, "By statement polarity");
    for s in &report.per_requirement_polarity {
        let label = format!("{} ({})", requirement_row_label(s.requirement), s.polarity);
        let r = s.ratio;
        let _ = writeln!(out, "{label:<28} {:>8.3} {:>11}", r.accuracy, format!("{}/{}", r.correct, r.total));
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Non-uniform responses among {} total", report.records);
    let _ = writeln!(out, "{:<6} Count", "Ans.");
    for (label, count) in MatchBuckets::LABELS.iter().zip(report.nonuniform_buckets.as_array()) {
        let _ = writeln!(out, "{label:<6} {count}");
    }
    let _ = writeln!(out, "Unparsable: {}", report.unparsable);
    let _ = writeln!(out);
    let c = report.consistency;
    let rate = c.rate.map_or_else(|| "-".to_string(), |r| format!("{r:.3}"));
    let _ = writeln!(
        out,
        "Consistency: {rate} ({} consistent, {} inconsistent, {} undetermined)",
        c.consistent, c.inconsistent, c.undetermined
    );
    out
}

fn render_csv(report: &MetricsReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "value", "numerator", "denominator"]).expect("in-memory csv");
    let mut row = |metric: &str, value: String, numerator: usize, denominator: usize| {
        w.write_record([metric, &value, &numerator.to_string(), &denominator.to_string()]).expect("in-memory csv");
    };
    for (id, r) in &report.per_requirement {
        row(&format!("requirement:{id}"), r.accuracy.to_string(), r.correct, r.total);
    }
    for (_, key, r) in main_rows(report).into_iter().filter(|(_, k, _)| !k.is_empty()) {
        row(key, r.accuracy.to_string(), r.correct, r.total);
    }
    for s in &report.per_requirement_polarity {
        let r = s.ratio;
        row(&format!("requirement:{}:{}", s.requirement, s.polarity), r.accuracy.to_string(), r.correct, r.total);
    }
    for (i, r) in report.per_trial.iter().enumerate() {
        row(&format!("trial:{i}"), r.accuracy.to_string(), r.correct, r.total);
    }
    let nonuniform = report.nonuniform_buckets.total();
    for (label, count) in MatchBuckets::LABELS.iter().zip(report.nonuniform_buckets.as_array()) {
        row(&format!("nonuniform:{label}"), count.to_string(), count, nonuniform);
    }
    row("unparsable", report.unparsable.to_string(), report.unparsable, report.records);
    let c = report.consistency;
    let determined = c.consistent + c.inconsistent;
    row("consistency", c.rate.map_or_else(String::new, |r| r.to_string()), c.consistent, determined);
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

pub fn emit_report(report: &MetricsReport, format: ReportFormat, path: &Path) -> Result<(), EvalError> {
    let io = |source| EvalError::Io { path: path.display().to_string(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, render_report(report, format)).map_err(io)
}

/// Reads a machine-format report.
pub fn load_report(path: &Path) -> Result<MetricsReport, EvalError> {
    let load = |message: String| EvalError::Load { path: path.display().to_string(), message };
    let text = std::fs::read_to_string(path).map_err(|e| load(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| load(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{GroundTruthRecord, Scenario, Store};
    use crate::llm::ReplayBackend;
    use crate::verdict::{Extraction, Prediction};

    fn spec(i: usize, req: RequirementId) -> Specification {
        Specification {
            id: format!("s{i:03}"),
            scenario: Scenario {
                id: format!("sc{i}"),
                store: Store::Apple,
                summary: "Summary.".into(),
                data_practice: "The user does things.".into(),
                data_types: vec!["location".into()],
                narrative: format!("Narrative {i}."),
            },
            design_practices: vec![format!("Practice {i} one."), format!("Practice {i} two.")],
            target_requirement: req,
            intended_polarity: Label::Satisfies,
        }
    }

    fn fixture(n: usize) -> (Vec<Specification>, GroundTruth) {
        let specs: Vec<_> = (0..n).map(|i| spec(i, RequirementId::ALL[i % 8])).collect();
        let truth = specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let label = if (i / 8) % 2 == 0 { Label::Satisfies } else { Label::Dissatisfies };
                (
                    s.id.clone(),
                    GroundTruthRecord {
                        spec_id: s.id.clone(),
                        requirement: s.target_requirement,
                        label,
                        rationale: format!("Because of practice {i}."),
                        annotation_codes: None,
                    },
                )
            })
            .collect();
        (specs, truth)
    }

    fn cfg(trials: usize) -> ExperimentConfig {
        ExperimentConfig { trials, ..Default::default() }
    }

    #[test]
    fn expected_answers() {
        assert!(expected_answer(Label::Satisfies, StatementPolarity::Normative));
        assert!(!expected_answer(Label::Satisfies, StatementPolarity::Inverted));
        assert!(!expected_answer(Label::Dissatisfies, StatementPolarity::Normative));
        assert!(expected_answer(Label::Dissatisfies, StatementPolarity::Inverted));
    }

    #[test]
    fn two_specs_one_trial() {
        let (specs, truth) = fixture(2);
        let rubric = Rubric::bundled();
        let templates = TemplateSet::bundled();
        let oracle = oracle_backend(&specs, &truth, &rubric).unwrap();
        let records = run_experiment(&specs, &truth, &cfg(1), &templates, &rubric, &[], &oracle).unwrap();
        assert_eq!(records.len(), 4);
        let report = compute_metrics(&records, &truth, 0).unwrap();
        assert_eq!(report.overall, Ratio::new(4, 4));
        assert_eq!(report.majority, Ratio::new(4, 4));
        assert_eq!(report.consistency.consistent, 2);
    }

    #[test]
    fn oracle_works_for_every_template() {
        let (specs, truth) = fixture(32);
        let rubric = Rubric::bundled();
        let templates = TemplateSet::bundled();
        let pool = build_demo_pool(&specs, &truth, &rubric);
        let oracle = oracle_backend(&specs, &truth, &rubric).unwrap();
        for template in [TemplateId::R, TemplateId::G, TemplateId::CoT] {
            let c = ExperimentConfig { template, trials: 2, ..Default::default() };
            let records = run_experiment(&specs, &truth, &c, &templates, &rubric, &pool, &oracle).unwrap();
            assert_eq!(records.len(), 128);
            assert!(records.iter().all(|r| r.correct), "{template}");
        }
    }

    #[test]
    fn failures_become_unparsable() {
        let (specs, truth) = fixture(3);
        let rubric = Rubric::bundled();
        let replay = ReplayBackend::default();
        let records = run_experiment(&specs, &truth, &cfg(2), &TemplateSet::bundled(), &rubric, &[], &replay).unwrap();
        assert_eq!(records.len(), 12);
        assert!(records.iter().all(|r| r.verdict == Verdict::unparsable() && !r.correct && r.error.is_some()));
        let report = compute_metrics(&records, &truth, 0).unwrap();
        assert_eq!(report.overall.accuracy, 0.0);
        assert_eq!(report.majority, Ratio::new(0, 6));
        assert_eq!(report.consistency.undetermined, 6);
        assert_eq!(report.consistency.rate, None);
        assert_eq!(report.nonuniform_buckets.zero, 12);
    }

    #[test]
    fn cot_with_empty_pool_names_deficiency() {
        let (specs, truth) = fixture(2);
        let c = ExperimentConfig { template: TemplateId::CoT, ..Default::default() };
        let err = plan_experiment(&specs, &truth, &c, &TemplateSet::bundled(), &Rubric::bundled(), &[]).unwrap_err();
        assert!(err.to_string().contains("demonstration pool for P has 0 satisfies examples"), "{err}");
    }

    #[test]
    fn missing_truth_lists_ids() {
        let (specs, mut truth) = fixture(3);
        truth.remove("s001");
        let err =
            plan_experiment(&specs, &truth, &cfg(1), &TemplateSet::bundled(), &Rubric::bundled(), &[]).unwrap_err();
        assert_eq!(err.to_string(), "no ground truth for specifications: s001");
    }

    fn record(
        spec_id: &str,
        req: RequirementId,
        polarity: StatementPolarity,
        trial: usize,
        answer: Option<bool>,
    ) -> TrialRecord {
        let verdict = match answer {
            Some(b) => {
                Verdict { prediction: Prediction::from_bool(b), extraction: Extraction::Uniform, match_count: 0 }
            }
            None => Verdict::unparsable(),
        };
        TrialRecord {
            key: TrialKey { spec_id: spec_id.into(), requirement: req, polarity, trial },
            prompt_digest: String::new(),
            response: String::new(),
            verdict,
            expected: false,
            correct: false,
            error: None,
        }
    }

    #[test]
    fn weighted_per_requirement_mean_is_overall() {
        let (specs, truth) = fixture(16);
        let mut records = Vec::new();
        for (i, s) in specs.iter().enumerate() {
            for p in StatementPolarity::BOTH {
                for t in 0..3 {
                    let answer = match (i + t) % 4 {
                        0 => None,
                        1 => Some(true),
                        _ => Some(false),
                    };
                    records.push(record(&s.id, s.target_requirement, p, t, answer));
                }
            }
        }
        let report = compute_metrics(&records, &truth, 1).unwrap();
        let weighted: usize = report.per_requirement.values().map(|r| r.correct).sum();
        let total: usize = report.per_requirement.values().map(|r| r.total).sum();
        assert_eq!((weighted, total), (report.overall.correct, report.overall.total));
        records.reverse();
        assert_eq!(compute_metrics(&records, &truth, 1).unwrap(), report);
    }

    #[test]
    fn planted_inconsistency() {
        let (specs, truth) = fixture(1);
        let s = &specs[0];
        let records = vec![
            record(&s.id, s.target_requirement, StatementPolarity::Normative, 0, Some(true)),
            record(&s.id, s.target_requirement, StatementPolarity::Inverted, 0, Some(true)),
            record(&s.id, s.target_requirement, StatementPolarity::Normative, 1, Some(true)),
            record(&s.id, s.target_requirement, StatementPolarity::Inverted, 1, Some(false)),
            record(&s.id, s.target_requirement, StatementPolarity::Normative, 2, None),
            record(&s.id, s.target_requirement, StatementPolarity::Inverted, 2, Some(false)),
        ];
        let c = compute_metrics(&records, &truth, 0).unwrap().consistency;
        assert_eq!((c.consistent, c.inconsistent, c.undetermined), (1, 1, 1));
        assert_eq!(c.rate, Some(0.5));
    }

    #[test]
    fn report_formats() {
        let (specs, truth) = fixture(8);
        let rubric = Rubric::bundled();
        let templates = TemplateSet::bundled();
        let oracle = oracle_backend(&specs, &truth, &rubric).unwrap();
        let c = cfg(2);
        let records = run_experiment(&specs, &truth, &c, &templates, &rubric, &[], &oracle).unwrap();
        let mut report = compute_metrics(&records, &truth, 0).unwrap();
        report.meta = ReportMeta::for_experiment(&c, &templates, &rubric);

        let text = render_report(&report, ReportFormat::TableText);
        let mut last = 0;
        for label in [
            "Power Imbalance",
            "Conditionality",
            "Granularity",
            "Detriment",
            "Specificity",
            "Informed",
            "Unambiguous",
            "Withdrawal",
            "Spec. (true)",
            "Spec. (false)",
            "Req. ",
            "Req. (inverted)",
            "Overall Accuracy",
            "Maj. Response",
        ] {
            let at = text[last..].find(label).unwrap_or_else(|| panic!("{label} missing or out of order")) + last;
            last = at + label.len();
        }
        assert!(text.contains("Ans."));
        assert!(text.contains("4+"));

        let csv = render_report(&report, ReportFormat::Csv);
        assert!(csv.starts_with("metric,value,numerator,denominator\n"));
        assert!(csv.contains("overall,1,32,32\n"));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        emit_report(&report, ReportFormat::Machine, &path).unwrap();
        assert_eq!(load_report(&path).unwrap(), report);
    }

    #[test]
    fn config_digest_ignores_parallelism() {
        let templates = TemplateSet::bundled();
        let rubric = Rubric::bundled();
        let a = cfg(10);
        let b = ExperimentConfig { parallelism: 8, ..cfg(10) };
        assert_eq!(a.digest(&templates, &rubric), b.digest(&templates, &rubric));
        assert_ne!(a.digest(&templates, &rubric), cfg(5).digest(&templates, &rubric));
    }

    #[test]
    fn parallel_run_matches_sequential() {
        let (specs, truth) = fixture(16);
        let rubric = Rubric::bundled();
        let templates = TemplateSet::bundled();
        let flaky = MockBackend::new("alternating", |req: &ChatRequest| {
            Ok(if req.user_message.len() % 3 == 0 { "True".into() } else { "Answer: False".into() })
        });
        let seq = run_experiment(&specs, &truth, &cfg(3), &templates, &rubric, &[], &flaky).unwrap();
        let par = ExperimentConfig { parallelism: 4, ..cfg(3) };
        let par = run_experiment(&specs, &truth, &par, &templates, &rubric, &[], &flaky).unwrap();
        assert_eq!(seq, par);
    }
}
