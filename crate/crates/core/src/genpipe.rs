//! Specification generation from app-store descriptions.
//!
//! 1. summarize each description in one sentence;
//! 2. list the main user and app actions;
//! 3. list the personal data types each action likely uses;
//! 4. rewrite (summary, action, data types) into a short third-person scenario;
//! 5. extend each scenario with design practices that make one requirement
//!    true or false.
//!
//! Actions without data types are dropped after step 3, and so are
//! descriptions left without any action.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, Corpus, CorpusError, Label, Scenario, Specification, Store};
use crate::knowledge::{KnowledgeError, Requirement, RequirementId, Rubric};
use crate::llm::{ChatBackend, LlmError, ModelParams};
use crate::parallel::try_map_ordered;
use crate::promptkit::{RenderedPrompt, TemplateKind, TemplateSet};
use crate::seed;
use crate::template::TemplateError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppDescription {
    pub id: String,
    pub store: Store,
    pub text: String,
}

/// One data practice of an app: shared summary, a single action and the data
/// types the action uses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PracticeTriple {
    pub description_id: String,
    pub store: Store,
    pub action_index: usize,
    pub summary: String,
    pub action: String,
    pub data_types: Vec<String>,
}

impl PracticeTriple {
    pub fn scenario_id(&self) -> String {
        format!("{}-a{}", self.description_id, self.action_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtensionRequest {
    pub scenario_text: String,
    pub requirement: Requirement,
    /// `true` asks for practices that satisfy the requirement.
    pub state: bool,
}

pub fn build_summary_prompt(templates: &TemplateSet, d: &AppDescription) -> Result<RenderedPrompt, TemplateError> {
    templates.render(TemplateKind::SummarizeDescription, BTreeMap::from([("app_desc", d.text.clone())]))
}

pub fn build_actions_prompt(templates: &TemplateSet, d: &AppDescription) -> Result<RenderedPrompt, TemplateError> {
    templates.render(TemplateKind::IdentifyActions, BTreeMap::from([("app_desc", d.text.clone())]))
}

pub fn build_datatypes_prompt(templates: &TemplateSet, action: &str) -> Result<RenderedPrompt, TemplateError> {
    templates.render(TemplateKind::IdentifyDataTypes, BTreeMap::from([("action", action.to_string())]))
}

pub fn build_scenario_prompt(templates: &TemplateSet, t: &PracticeTriple) -> Result<RenderedPrompt, TemplateError> {
    templates.render(
        TemplateKind::RewriteScenario,
        BTreeMap::from([
            ("summary", t.summary.clone()),
            ("action", t.action.clone()),
            ("datatypes", serialize_list(&t.data_types)),
        ]),
    )
}

pub fn build_extension_prompt(
    templates: &TemplateSet,
    req: &ExtensionRequest,
) -> Result<RenderedPrompt, TemplateError> {
    templates.render(
        TemplateKind::ExtendSpecification,
        BTreeMap::from([
            ("property", req.requirement.name.clone()),
            ("state", req.state.to_string()),
            ("axiom", req.requirement.statement.clone()),
            ("definition", req.requirement.definition.clone()),
            ("scenario", req.scenario_text.clone()),
        ]),
    )
}

/// Bracketed, single-quoted list: `['watch history', 'liked videos']`.
/// Items containing a single quote (and no double quote) use double quotes.
pub fn serialize_list(items: &[String]) -> String {
    let quoted: Vec<String> = items
        .iter()
        .map(|s| {
            if s.contains('\'') && !s.contains('"') {
                format!("\"{s}\"")
            } else {
                format!("'{}'", s.replace('\'', "\\'"))
            }
        })
        .collect();
    format!("[{}]", quoted.join(", "))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ListError {
    #[error("no list found")]
    NoList,
    #[error("list item {index} is not a string")]
    NonString { index: usize },
}

/// First bracketed list of strings in `response`, tolerating surrounding prose.
pub fn parse_action_list(response: &str) -> Result<Vec<String>, ListError> {
    for (start, _) in response.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&response[start..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Array(items))) = stream.next() {
            return items
                .into_iter()
                .enumerate()
                .map(|(index, v)| match v {
                    serde_json::Value::String(s) => Ok(s),
                    _ => Err(ListError::NonString { index }),
                })
                .collect();
        }
    }
    Err(ListError::NoList)
}

static LIST_MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(?:\d+[.)]|[-*•])\s*").unwrap());

/// Design practices from an extension response: one per line, list markers
/// stripped, blank lines dropped.
pub fn parse_practice_list(response: &str) -> Vec<String> {
    response.lines().map(|l| LIST_MARKER.replace(l, "").trim().to_string()).filter(|l| !l.is_empty()).collect()
}

/// How step 5 pairs scenarios with (requirement, polarity).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assignment {
    /// Each scenario gets one cell; cells are filled evenly per store.
    #[default]
    Balanced,
    /// Each scenario is extended for every requirement with a random polarity.
    EveryRequirement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Descriptions sampled per store; `None` keeps all.
    pub descriptions_per_store: Option<usize>,
    /// Triples sampled per store before step 4; `None` keeps all.
    pub triples_per_store: Option<usize>,
    pub assignment: Assignment,
    /// Scenarios per (requirement, polarity) cell and store under balanced
    /// assignment; `None` assigns every scenario.
    pub per_cell: Option<usize>,
    pub model: ModelParams,
    pub parallelism: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            descriptions_per_store: Some(200),
            triples_per_store: Some(200),
            assignment: Assignment::Balanced,
            per_cell: None,
            model: ModelParams::default(),
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Complete,
    Failed,
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub status: StageStatus,
    pub input: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub model: ModelParams,
    pub template_digests: BTreeMap<String, String>,
    pub stages: Vec<StageReport>,
    pub descriptions_in: usize,
    pub descriptions_dropped: usize,
    pub actions_without_data_types: usize,
    pub triples: usize,
    pub scenarios: usize,
    pub specifications: usize,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

const STAGES: [&str; 7] = [
    "sample-descriptions",
    "summarize",
    "identify-actions",
    "identify-data-types",
    "sample-triples",
    "rewrite-scenario",
    "extend-specification",
];

impl RunManifest {
    fn new(cfg: &PipelineConfig, templates: &TemplateSet) -> Self {
        RunManifest {
            seed: cfg.seed,
            model: cfg.model.clone(),
            template_digests: templates.digests(),
            stages: STAGES
                .iter()
                .map(|s| StageReport { stage: s.to_string(), status: StageStatus::NotRun, input: 0, output: 0 })
                .collect(),
            descriptions_in: 0,
            descriptions_dropped: 0,
            actions_without_data_types: 0,
            triples: 0,
            scenarios: 0,
            specifications: 0,
            complete: false,
            error: None,
        }
    }

    fn stage(&mut self, name: &str, status: StageStatus, input: usize, output: usize) {
        let s = self.stages.iter_mut().find(|s| s.stage == name).expect("known stage");
        s.status = status;
        s.input = input;
        s.output = output;
    }

    pub fn stage_report(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

/// Everything a run produced, including intermediate stages.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub summaries: BTreeMap<String, String>,
    pub triples: Vec<PracticeTriple>,
    pub scenarios: Vec<Scenario>,
    pub corpus: Corpus,
    pub manifest: RunManifest,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("stage {stage} aborted: {source}")]
    Aborted {
        stage: &'static str,
        #[source]
        source: LlmError,
        partial: Box<PipelineRun>,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

struct Pipeline<'a> {
    cfg: &'a PipelineConfig,
    backend: &'a dyn ChatBackend,
    run: PipelineRun,
}

impl Pipeline<'_> {
    fn ask(&self, prompt: &RenderedPrompt) -> Result<String, LlmError> {
        let req = self.cfg.model.request(&prompt.system_message, &prompt.text);
        Ok(self.backend.complete(&req)?.text)
    }

    /// Runs `f` over `items`; on failure marks `stage` failed and aborts.
    fn fan_out<T: Sync, R: Send>(
        &mut self,
        stage: &'static str,
        items: &[T],
        f: impl Fn(&Self, &T) -> Result<R, LlmError> + Sync,
    ) -> Result<Vec<R>, PipelineError> {
        let this = &*self;
        match try_map_ordered(items, self.cfg.parallelism, |_, item| f(this, item)) {
            Ok(out) => Ok(out),
            Err((_, source)) => {
                self.run.manifest.stage(stage, StageStatus::Failed, items.len(), 0);
                self.run.manifest.error = Some(format!("{stage}: {source}"));
                Err(PipelineError::Aborted { stage, source, partial: Box::new(self.run.clone()) })
            }
        }
    }
}

fn sample_per_store<T: Clone>(
    items: &[T],
    store_of: impl Fn(&T) -> Store,
    limit: Option<usize>,
    seed: u64,
    key: &str,
) -> Vec<T> {
    let Some(limit) = limit else { return items.to_vec() };
    let mut keep = BTreeSet::new();
    for store in Store::ALL {
        let mut idx: Vec<usize> = (0..items.len()).filter(|&i| store_of(&items[i]) == store).collect();
        if idx.len() > limit {
            idx.shuffle(&mut seed::rng(seed, &[key, store.as_str()]));
            idx.truncate(limit);
        }
        keep.extend(idx);
    }
    keep.into_iter().map(|i| items[i].clone()).collect()
}

/// Step-5 work list: (scenario index, requirement, intended polarity).
fn assign_cells(scenarios: &[Scenario], cfg: &PipelineConfig) -> Vec<(usize, RequirementId, Label)> {
    let mut out = Vec::new();
    match cfg.assignment {
        Assignment::Balanced => {
            let cells: Vec<(RequirementId, Label)> = RequirementId::ALL
                .iter()
                .flat_map(|&r| [Label::Satisfies, Label::Dissatisfies].map(|l| (r, l)))
                .collect();
            for store in Store::ALL {
                let mut rng = seed::rng(cfg.seed, &["assign", store.as_str()]);
                let mut idx: Vec<usize> = (0..scenarios.len()).filter(|&i| scenarios[i].store == store).collect();
                idx.shuffle(&mut rng);
                let mut order = cells.clone();
                order.shuffle(&mut rng);
                if let Some(per_cell) = cfg.per_cell {
                    idx.truncate(per_cell * cells.len());
                }
                for (k, i) in idx.into_iter().enumerate() {
                    let (r, l) = order[k % order.len()];
                    out.push((i, r, l));
                }
            }
        }
        Assignment::EveryRequirement => {
            for (i, s) in scenarios.iter().enumerate() {
                for r in RequirementId::ALL {
                    let mut rng = seed::rng(cfg.seed, &["polarity", &s.id, &r.to_string()]);
                    let label = if rng.gen_bool(0.5) { Label::Satisfies } else { Label::Dissatisfies };
                    out.push((i, r, label));
                }
            }
        }
    }
    out.sort();
    out
}

/// Runs steps 1–5. On a backend failure the returned error carries every
/// output completed so far and a manifest marking the failed stage.
pub fn run_pipeline(
    descriptions: &[AppDescription],
    cfg: &PipelineConfig,
    templates: &TemplateSet,
    rubric: &Rubric,
    backend: &dyn ChatBackend,
) -> Result<PipelineRun, PipelineError> {
    let mut p = Pipeline {
        cfg,
        backend,
        run: PipelineRun {
            summaries: BTreeMap::new(),
            triples: Vec::new(),
            scenarios: Vec::new(),
            corpus: Corpus::default(),
            manifest: RunManifest::new(cfg, templates),
        },
    };
    p.run.manifest.descriptions_in = descriptions.len();

    let sampled = sample_per_store(descriptions, |d| d.store, cfg.descriptions_per_store, cfg.seed, "descriptions");
    p.run.manifest.stage("sample-descriptions", StageStatus::Complete, descriptions.len(), sampled.len());

    let summary_prompts = sampled.iter().map(|d| build_summary_prompt(templates, d)).collect::<Result<Vec<_>, _>>()?;
    let summaries = p.fan_out("summarize", &summary_prompts, |p, prompt| Ok(p.ask(prompt)?.trim().to_string()))?;
    for (d, s) in sampled.iter().zip(&summaries) {
        p.run.summaries.insert(d.id.clone(), s.clone());
    }
    p.run.manifest.stage("summarize", StageStatus::Complete, sampled.len(), summaries.len());

    let action_prompts = sampled.iter().map(|d| build_actions_prompt(templates, d)).collect::<Result<Vec<_>, _>>()?;
    let actions = p.fan_out("identify-actions", &action_prompts, |p, prompt| {
        // an unparsable list means the description yields no actions
        Ok(parse_action_list(&p.ask(prompt)?).unwrap_or_default())
    })?;
    let mut candidates = Vec::new();
    for ((d, summary), list) in sampled.iter().zip(&summaries).zip(&actions) {
        for (action_index, action) in list.iter().enumerate().filter(|(_, a)| !a.trim().is_empty()) {
            candidates.push(PracticeTriple {
                description_id: d.id.clone(),
                store: d.store,
                action_index,
                summary: summary.clone(),
                action: action.trim().to_string(),
                data_types: Vec::new(),
            });
        }
    }
    p.run.manifest.stage("identify-actions", StageStatus::Complete, sampled.len(), candidates.len());

    let type_prompts =
        candidates.iter().map(|t| build_datatypes_prompt(templates, &t.action)).collect::<Result<Vec<_>, _>>()?;
    let types = p.fan_out("identify-data-types", &type_prompts, |p, prompt| {
        let list = parse_action_list(&p.ask(prompt)?).unwrap_or_default();
        Ok(list.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect::<Vec<_>>())
    })?;
    let total_actions = candidates.len();
    let triples: Vec<PracticeTriple> = candidates
        .into_iter()
        .zip(types)
        .filter(|(_, types)| !types.is_empty())
        .map(|(t, data_types)| PracticeTriple { data_types, ..t })
        .collect();
    let surviving: BTreeSet<&str> = triples.iter().map(|t| t.description_id.as_str()).collect();
    p.run.manifest.actions_without_data_types = total_actions - triples.len();
    p.run.manifest.descriptions_dropped = sampled.len() - surviving.len();
    p.run.manifest.triples = triples.len();
    p.run.manifest.stage("identify-data-types", StageStatus::Complete, total_actions, triples.len());
    p.run.triples = triples;

    let chosen = sample_per_store(&p.run.triples, |t| t.store, cfg.triples_per_store, cfg.seed, "triples");
    p.run.manifest.stage("sample-triples", StageStatus::Complete, p.run.triples.len(), chosen.len());

    let scenario_prompts = chosen.iter().map(|t| build_scenario_prompt(templates, t)).collect::<Result<Vec<_>, _>>()?;
    let narratives =
        p.fan_out("rewrite-scenario", &scenario_prompts, |p, prompt| Ok(p.ask(prompt)?.trim().to_string()))?;
    p.run.scenarios = chosen
        .iter()
        .zip(narratives)
        .filter(|(_, n)| !n.is_empty())
        .map(|(t, narrative)| Scenario {
            id: t.scenario_id(),
            store: t.store,
            summary: t.summary.clone(),
            data_practice: t.action.clone(),
            data_types: t.data_types.clone(),
            narrative,
        })
        .collect();
    p.run.manifest.scenarios = p.run.scenarios.len();
    p.run.manifest.stage("rewrite-scenario", StageStatus::Complete, chosen.len(), p.run.scenarios.len());

    let work = assign_cells(&p.run.scenarios, cfg);
    let mut requests = Vec::with_capacity(work.len());
    for &(i, r, label) in &work {
        let req = ExtensionRequest {
            scenario_text: p.run.scenarios[i].narrative.clone(),
            requirement: rubric.get(r)?.clone(),
            state: label.normative_truth(),
        };
        requests.push(build_extension_prompt(templates, &req)?);
    }
    let practices =
        p.fan_out("extend-specification", &requests, |p, prompt| Ok(parse_practice_list(&p.ask(prompt)?)))?;
    let specifications: Vec<Specification> = work
        .iter()
        .zip(practices)
        .filter(|(_, d)| !d.is_empty())
        .map(|(&(i, r, label), design_practices)| {
            let scenario = p.run.scenarios[i].clone();
            Specification {
                id: format!("{}-{}", scenario.id, r.code()),
                scenario,
                design_practices,
                target_requirement: r,
                intended_polarity: label,
            }
        })
        .collect();
    p.run.manifest.specifications = specifications.len();
    p.run.manifest.stage("extend-specification", StageStatus::Complete, work.len(), specifications.len());
    p.run.corpus = Corpus { specifications };
    p.run.manifest.complete = true;
    Ok(p.run)
}

pub fn load_descriptions(path: &Path) -> Result<Vec<AppDescription>, CorpusError> {
    let descriptions: Vec<AppDescription> = corpus::read_jsonl_file(path)?;
    for (i, d) in descriptions.iter().enumerate() {
        if d.text.trim().is_empty() {
            return Err(CorpusError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("description {} has empty text", d.id),
            });
        }
    }
    Ok(descriptions)
}

/// Writes `corpus.jsonl`, `triples.jsonl`, `scenarios.jsonl` and
/// `manifest.json` into `dir`.
pub fn write_outputs(run: &PipelineRun, dir: &Path) -> Result<(), PipelineError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| PipelineError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    corpus::save_corpus(&run.corpus, &dir.join("corpus.jsonl"))?;
    corpus::write_jsonl_file(&dir.join("triples.jsonl"), &run.triples)?;
    corpus::write_jsonl_file(&dir.join("scenarios.jsonl"), &run.scenarios)?;
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&run.manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json + "\n").map_err(io(&manifest_path))
}
