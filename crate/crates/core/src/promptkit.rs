//! Prompt templates and rendering for satisfiability checks.
//!
//! Template text is data: the bundled files live under `templates/` and a
//! directory with same-named files can override any of them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{GroundTruthRecord, Label, Specification};
use crate::knowledge::{Requirement, RequirementId, StatementPolarity};
use crate::seed;
use crate::template::{slot_digest, Template, TemplateError};

pub const DEFAULT_SYSTEM_MESSAGE: &str = "You are a helpful assistant.";

/// Satisfiability template variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TemplateId {
    /// Requirements vocabulary ("specification", "requirement").
    R,
    /// Generic vocabulary ("scenario", "statement").
    G,
    /// Chain-of-thought with demonstrations.
    CoT,
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateId::R => "R",
            TemplateId::G => "G",
            TemplateId::CoT => "CoT",
        })
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "r" => Ok(TemplateId::R),
            "g" => Ok(TemplateId::G),
            "cot" => Ok(TemplateId::CoT),
            other => Err(format!("unknown template `{other}` (expected R, G or CoT)")),
        }
    }
}

/// Every template the crate renders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    SatisfiabilityR,
    SatisfiabilityG,
    ChainOfThought,
    ChainOfThoughtExample,
    SummarizeDescription,
    IdentifyActions,
    IdentifyDataTypes,
    RewriteScenario,
    ExtendSpecification,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 9] = [
        TemplateKind::SatisfiabilityR,
        TemplateKind::SatisfiabilityG,
        TemplateKind::ChainOfThought,
        TemplateKind::ChainOfThoughtExample,
        TemplateKind::SummarizeDescription,
        TemplateKind::IdentifyActions,
        TemplateKind::IdentifyDataTypes,
        TemplateKind::RewriteScenario,
        TemplateKind::ExtendSpecification,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateKind::SatisfiabilityR => "satisfiability_r.txt",
            TemplateKind::SatisfiabilityG => "satisfiability_g.txt",
            TemplateKind::ChainOfThought => "cot.txt",
            TemplateKind::ChainOfThoughtExample => "cot_example.txt",
            TemplateKind::SummarizeDescription => "summarize_description.txt",
            TemplateKind::IdentifyActions => "identify_actions.txt",
            TemplateKind::IdentifyDataTypes => "identify_datatypes.txt",
            TemplateKind::RewriteScenario => "rewrite_scenario.txt",
            TemplateKind::ExtendSpecification => "extend_specification.txt",
        }
    }

    fn bundled_source(self) -> &'static str {
        match self {
            TemplateKind::SatisfiabilityR => include_str!("../templates/satisfiability_r.txt"),
            TemplateKind::SatisfiabilityG => include_str!("../templates/satisfiability_g.txt"),
            TemplateKind::ChainOfThought => include_str!("../templates/cot.txt"),
            TemplateKind::ChainOfThoughtExample => include_str!("../templates/cot_example.txt"),
            TemplateKind::SummarizeDescription => include_str!("../templates/summarize_description.txt"),
            TemplateKind::IdentifyActions => include_str!("../templates/identify_actions.txt"),
            TemplateKind::IdentifyDataTypes => include_str!("../templates/identify_datatypes.txt"),
            TemplateKind::RewriteScenario => include_str!("../templates/rewrite_scenario.txt"),
            TemplateKind::ExtendSpecification => include_str!("../templates/extend_specification.txt"),
        }
    }

    fn required_slots(self) -> &'static [&'static str] {
        match self {
            TemplateKind::SatisfiabilityR | TemplateKind::SatisfiabilityG => {
                &["req_name", "definition", "scenario", "design_practices", "requirement"]
            }
            TemplateKind::ChainOfThought => &["req_name", "definition", "examples*", "design_practices", "requirement"],
            TemplateKind::ChainOfThoughtExample => &["design_practices", "requirement", "rationale", "answer"],
            TemplateKind::SummarizeDescription | TemplateKind::IdentifyActions => &["app_desc"],
            TemplateKind::IdentifyDataTypes => &["action"],
            TemplateKind::RewriteScenario => &["summary", "action", "datatypes"],
            TemplateKind::ExtendSpecification => &["property", "state", "axiom", "definition", "scenario"],
        }
    }
}

impl From<TemplateId> for TemplateKind {
    fn from(id: TemplateId) -> Self {
        match id {
            TemplateId::R => TemplateKind::SatisfiabilityR,
            TemplateId::G => TemplateKind::SatisfiabilityG,
            TemplateId::CoT => TemplateKind::ChainOfThought,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub system_message: String,
    pub template: TemplateKind,
    pub slot_digest: String,
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("demonstration pool for {requirement} has {available} {label} examples, {needed} needed (short {})", .needed - .available)]
    InsufficientDemonstrations { requirement: RequirementId, label: Label, needed: usize, available: usize },
    #[error("specification {spec} targets {actual}, not {expected}")]
    RequirementMismatch { spec: String, expected: RequirementId, actual: RequirementId },
}

/// All templates, keyed by kind.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateKind, Template>,
    pub system_message: String,
}

impl TemplateSet {
    pub fn bundled() -> Self {
        let templates = TemplateKind::ALL
            .into_iter()
            .map(|k| (k, Template::parse(k.file_name(), k.bundled_source()).expect("bundled template")))
            .collect();
        TemplateSet { templates, system_message: DEFAULT_SYSTEM_MESSAGE.to_string() }
    }

    /// Bundled templates, overridden by any same-named file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = TemplateSet::bundled();
        for kind in TemplateKind::ALL {
            let path = dir.join(kind.file_name());
            if path.exists() {
                set.replace(kind, Template::load(kind.file_name(), &path)?)?;
            }
        }
        Ok(set)
    }

    /// Swaps one template after checking it declares the slots its renderer fills.
    pub fn replace(&mut self, kind: TemplateKind, template: Template) -> Result<(), TemplateError> {
        template.require_slots(kind.required_slots())?;
        self.templates.insert(kind, template);
        Ok(())
    }

    pub fn get(&self, kind: TemplateKind) -> &Template {
        &self.templates[&kind]
    }

    /// Digest over every template in the set.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (kind, t) in &self.templates {
            hasher.update(kind.file_name().as_bytes());
            hasher.update(t.digest().as_bytes());
        }
        hasher.update(self.system_message.as_bytes());
        hex::encode(hasher.finalize())
    }

    /// Per-file digests, for reports.
    pub fn digests(&self) -> BTreeMap<String, String> {
        self.templates.iter().map(|(k, t)| (k.file_name().to_string(), t.digest())).collect()
    }

    pub(crate) fn render(
        &self,
        kind: TemplateKind,
        values: BTreeMap<&str, String>,
    ) -> Result<RenderedPrompt, TemplateError> {
        let template = self.get(kind);
        let text = template.render(&values)?;
        Ok(RenderedPrompt {
            text,
            system_message: self.system_message.clone(),
            template: kind,
            slot_digest: slot_digest(template, &values),
        })
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet::bundled()
    }
}

/// Numbered list, one practice per line: `1. …\n2. …`.
pub fn linearize_practices(practices: &[String]) -> String {
    practices.iter().enumerate().map(|(i, p)| format!("{}. {}", i + 1, p.trim())).collect::<Vec<_>>().join("\n")
}

pub fn answer_text(answer: bool) -> &'static str {
    if answer {
        "True"
    } else {
        "False"
    }
}

/// Renders template R or G. `CoT` falls back to G's vocabulary without
/// demonstrations; use [`render_cot`] for chain-of-thought prompts.
pub fn render_satisfiability(
    templates: &TemplateSet,
    template: TemplateId,
    spec: &Specification,
    req: &Requirement,
    polarity: StatementPolarity,
) -> Result<RenderedPrompt, PromptError> {
    let kind = match template {
        TemplateId::R => TemplateKind::SatisfiabilityR,
        TemplateId::G | TemplateId::CoT => TemplateKind::SatisfiabilityG,
    };
    let values = BTreeMap::from([
        ("req_name", req.name.clone()),
        ("definition", req.definition.clone()),
        ("scenario", spec.scenario.narrative.clone()),
        ("design_practices", linearize_practices(&spec.design_practices)),
        ("requirement", req.statement_for(polarity).to_string()),
    ]);
    Ok(templates.render(kind, values)?)
}

/// A worked example shown in a chain-of-thought prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    /// Linearized design-practice list.
    pub design_practices: String,
    pub statement: String,
    pub rationale: String,
    pub answer: bool,
    pub requirement: RequirementId,
    pub label_class: Label,
}

impl Demonstration {
    /// Builds a normative-polarity demonstration from a labeled specification.
    /// Returns `None` when the label carries no rationale.
    pub fn from_labeled(spec: &Specification, record: &GroundTruthRecord, req: &Requirement) -> Option<Self> {
        if record.rationale.trim().is_empty() {
            return None;
        }
        Some(Demonstration {
            design_practices: linearize_practices(&spec.design_practices),
            statement: req.statement.clone(),
            rationale: record.rationale.clone(),
            answer: record.label.normative_truth(),
            requirement: record.requirement,
            label_class: record.label,
        })
    }

    fn inverted(mut self, req: &Requirement) -> Self {
        self.statement = req.inverted_statement.clone();
        self.answer = !self.answer;
        self
    }
}

/// Picks `n_pairs` satisfying and `n_pairs` dissatisfying demonstrations for
/// `req` and orders them `e0+, e0-, e1+, e1-, …`. With `seed = None` the pool
/// order is kept. Under inverted polarity statements and answers are flipped.
pub fn select_demonstrations(
    pool: &[Demonstration],
    req: &Requirement,
    n_pairs: usize,
    polarity: StatementPolarity,
    seed: Option<u64>,
) -> Result<Vec<Demonstration>, PromptError> {
    select_alternating(pool, req, n_pairs, n_pairs, polarity, seed)
}

/// Single-exemplar mode: `n` demonstrations alternating classes, starting with
/// a satisfying one.
pub fn select_exemplars(
    pool: &[Demonstration],
    req: &Requirement,
    n: usize,
    polarity: StatementPolarity,
    seed: Option<u64>,
) -> Result<Vec<Demonstration>, PromptError> {
    select_alternating(pool, req, n.div_ceil(2), n / 2, polarity, seed)
}

fn select_alternating(
    pool: &[Demonstration],
    req: &Requirement,
    n_pos: usize,
    n_neg: usize,
    polarity: StatementPolarity,
    seed: Option<u64>,
) -> Result<Vec<Demonstration>, PromptError> {
    let mut classes: Vec<Vec<&Demonstration>> = Vec::with_capacity(2);
    for (label, needed) in [(Label::Satisfies, n_pos), (Label::Dissatisfies, n_neg)] {
        let mut members: Vec<&Demonstration> =
            pool.iter().filter(|d| d.requirement == req.id && d.label_class == label).collect();
        if members.len() < needed {
            return Err(PromptError::InsufficientDemonstrations {
                requirement: req.id,
                label,
                needed,
                available: members.len(),
            });
        }
        if let Some(seed) = seed {
            let mut rng = seed::rng(seed, &["demos", &req.id.to_string(), label.as_str()]);
            members.shuffle(&mut rng);
        }
        members.truncate(needed);
        classes.push(members);
    }
    let mut out = Vec::with_capacity(n_pos + n_neg);
    for i in 0..n_pos.max(n_neg) {
        for class in &classes {
            if let Some(d) = class.get(i) {
                let d = (*d).clone();
                out.push(match polarity {
                    StatementPolarity::Normative => d,
                    StatementPolarity::Inverted => d.inverted(req),
                });
            }
        }
    }
    Ok(out)
}

/// One worked example: the demonstration sub-template filled from `demo`.
pub fn render_demonstration(templates: &TemplateSet, demo: &Demonstration) -> Result<String, TemplateError> {
    let values = BTreeMap::from([
        ("design_practices", demo.design_practices.clone()),
        ("requirement", demo.statement.clone()),
        ("rationale", demo.rationale.clone()),
        ("answer", answer_text(demo.answer).to_string()),
    ]);
    templates.get(TemplateKind::ChainOfThoughtExample).render(&values)
}

/// Chain-of-thought prompt. The question shows only the design practices,
/// never the scenario narrative.
pub fn render_cot(
    templates: &TemplateSet,
    spec: &Specification,
    req: &Requirement,
    polarity: StatementPolarity,
    demos: &[Demonstration],
) -> Result<RenderedPrompt, PromptError> {
    let examples =
        demos.iter().map(|d| render_demonstration(templates, d)).collect::<Result<Vec<_>, _>>()?.join("\n\n");
    let values = BTreeMap::from([
        ("req_name", req.name.clone()),
        ("definition", req.definition.clone()),
        ("examples*", examples),
        ("design_practices", linearize_practices(&spec.design_practices)),
        ("requirement", req.statement_for(polarity).to_string()),
    ]);
    Ok(templates.render(TemplateKind::ChainOfThought, values)?)
}
