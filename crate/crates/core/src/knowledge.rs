//! Consent rubric: requirement definitions, statements and their inversions,
//! plus the consent-validity formula over statement truth values.
//!
//! The rubric is data. A default document is bundled with the crate and any
//! other document in the same TOML layout can be loaded in its place.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The bundled rubric document.
pub const DEFAULT_RUBRIC_TOML: &str = include_str!("../data/rubric.toml");

/// One of the eight consent requirements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RequirementId {
    P,
    C,
    G,
    D,
    S,
    I,
    U,
    W,
}

impl RequirementId {
    /// All requirements in rubric order.
    pub const ALL: [RequirementId; 8] = [
        RequirementId::P,
        RequirementId::C,
        RequirementId::G,
        RequirementId::D,
        RequirementId::S,
        RequirementId::I,
        RequirementId::U,
        RequirementId::W,
    ];

    pub fn code(self) -> char {
        match self {
            RequirementId::P => 'P',
            RequirementId::C => 'C',
            RequirementId::G => 'G',
            RequirementId::D => 'D',
            RequirementId::S => 'S',
            RequirementId::I => 'I',
            RequirementId::U => 'U',
            RequirementId::W => 'W',
        }
    }

    /// Position in [`RequirementId::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RequirementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for RequirementId {
    type Err = KnowledgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "P" | "p" => Ok(RequirementId::P),
            "C" | "c" => Ok(RequirementId::C),
            "G" | "g" => Ok(RequirementId::G),
            "D" | "d" => Ok(RequirementId::D),
            "S" | "s" => Ok(RequirementId::S),
            "I" | "i" => Ok(RequirementId::I),
            "U" | "u" => Ok(RequirementId::U),
            "W" | "w" => Ok(RequirementId::W),
            other => Err(KnowledgeError::UnknownRequirement(other.to_string())),
        }
    }
}

/// Which statement text is used: the indicative requirement or its inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatementPolarity {
    Normative,
    Inverted,
}

impl StatementPolarity {
    pub const BOTH: [StatementPolarity; 2] = [StatementPolarity::Normative, StatementPolarity::Inverted];

    pub fn as_str(self) -> &'static str {
        match self {
            StatementPolarity::Normative => "normative",
            StatementPolarity::Inverted => "inverted",
        }
    }
}

impl fmt::Display for StatementPolarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StatementPolarity {
    type Err = KnowledgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normative" => Ok(StatementPolarity::Normative),
            "inverted" => Ok(StatementPolarity::Inverted),
            other => Err(KnowledgeError::UnknownPolarity(other.to_string())),
        }
    }
}

/// How the truth of a requirement statement enters the consent formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FormulaLiteral {
    #[serde(rename = "as-stated")]
    AsStated,
    #[serde(rename = "negated")]
    Negated,
}

impl FormulaLiteral {
    pub fn apply(self, statement_truth: bool) -> bool {
        match self {
            FormulaLiteral::AsStated => statement_truth,
            FormulaLiteral::Negated => !statement_truth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Requirement {
    pub id: RequirementId,
    pub name: String,
    pub definition: String,
    pub statement: String,
    pub inverted_statement: String,
    pub formula_literal: FormulaLiteral,
}

/// On-disk shape of one requirement; the id is the table key.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RequirementEntry {
    name: String,
    definition: String,
    statement: String,
    inverted_statement: String,
    formula_literal: FormulaLiteral,
}

impl RequirementEntry {
    fn into_requirement(self, id: RequirementId) -> Requirement {
        Requirement {
            id,
            name: self.name,
            definition: self.definition,
            statement: self.statement,
            inverted_statement: self.inverted_statement,
            formula_literal: self.formula_literal,
        }
    }

    fn from_requirement(req: &Requirement) -> Self {
        RequirementEntry {
            name: req.name.clone(),
            definition: req.definition.clone(),
            statement: req.statement.clone(),
            inverted_statement: req.inverted_statement.clone(),
            formula_literal: req.formula_literal,
        }
    }
}

impl Requirement {
    pub fn statement_for(&self, polarity: StatementPolarity) -> &str {
        match polarity {
            StatementPolarity::Normative => &self.statement,
            StatementPolarity::Inverted => &self.inverted_statement,
        }
    }
}

/// The full rubric. Immutable once loaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rubric {
    pub version: String,
    pub requirements: BTreeMap<RequirementId, Requirement>,
}

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeError {
    #[error("cannot read rubric {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse rubric {path}: {message}")]
    Parse { path: String, message: String },
    #[error("rubric {path} is invalid: {}", .violations.join("; "))]
    Invalid { path: String, violations: Vec<String> },
    #[error("unknown requirement `{0}`")]
    UnknownRequirement(String),
    #[error("unknown statement polarity `{0}` (expected normative or inverted)")]
    UnknownPolarity(String),
    #[error("requirement {0} is not in the rubric")]
    MissingRequirement(RequirementId),
    #[error("consent assignment has no truth value for {}", join_ids(.0))]
    IncompleteAssignment(Vec<RequirementId>),
}

fn join_ids(ids: &[RequirementId]) -> String {
    ids.iter().map(|id| id.to_string()).collect::<Vec<_>>().join(", ")
}

/// Raw document shape; keys are kept as strings so that unknown or duplicate
/// codes can be reported instead of rejected by the deserializer.
#[derive(Serialize, Deserialize)]
struct RubricDocument {
    version: String,
    #[serde(default)]
    requirements: BTreeMap<String, RequirementEntry>,
}

impl Rubric {
    /// The rubric bundled with the crate.
    pub fn bundled() -> Rubric {
        Rubric::from_toml_str(DEFAULT_RUBRIC_TOML, "<bundled>").expect("bundled rubric is valid")
    }

    /// Parses and validates a rubric document.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Rubric, KnowledgeError> {
        let doc: RubricDocument = toml::from_str(text)
            .map_err(|e| KnowledgeError::Parse { path: origin.to_string(), message: e.to_string() })?;
        let mut violations = Vec::new();
        let mut requirements = BTreeMap::new();
        for (key, entry) in doc.requirements {
            match key.parse::<RequirementId>() {
                Ok(id) if key.trim() == id.to_string() => {
                    requirements.insert(id, entry.into_requirement(id));
                }
                _ => violations.push(format!("unknown requirement code `{key}`")),
            }
        }
        let rubric = Rubric { version: doc.version, requirements };
        violations.extend(rubric.validate());
        if violations.is_empty() {
            Ok(rubric)
        } else {
            Err(KnowledgeError::Invalid { path: origin.to_string(), violations })
        }
    }

    pub fn to_toml_string(&self) -> String {
        let doc = RubricDocument {
            version: self.version.clone(),
            requirements: self
                .requirements
                .iter()
                .map(|(id, req)| (id.to_string(), RequirementEntry::from_requirement(req)))
                .collect(),
        };
        toml::to_string_pretty(&doc).expect("rubric serializes to TOML")
    }

    /// Returns every invariant violation; empty when the rubric is sound.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        for id in RequirementId::ALL {
            let Some(req) = self.requirements.get(&id) else {
                out.push(format!("missing requirement {id}"));
                continue;
            };
            for (field, value) in [
                ("name", &req.name),
                ("definition", &req.definition),
                ("statement", &req.statement),
                ("inverted_statement", &req.inverted_statement),
            ] {
                if value.trim().is_empty() {
                    out.push(format!("requirement {id}: field `{field}` is empty"));
                }
            }
            if req.statement == req.inverted_statement {
                out.push(format!("requirement {id}: fields `statement` and `inverted_statement` are identical"));
            }
            let expected = expected_literal(id);
            if req.formula_literal != expected {
                out.push(format!(
                    "requirement {id}: field `formula_literal` must be {}",
                    match expected {
                        FormulaLiteral::AsStated => "as-stated",
                        FormulaLiteral::Negated => "negated",
                    }
                ));
            }
            if req.id != id {
                out.push(format!("requirement {id}: stored under a different id"));
            }
        }
        out
    }

    pub fn get(&self, id: RequirementId) -> Result<&Requirement, KnowledgeError> {
        self.requirements.get(&id).ok_or(KnowledgeError::MissingRequirement(id))
    }

    /// Pure lookup of the statement text for a polarity.
    pub fn statement_for(&self, id: RequirementId, polarity: StatementPolarity) -> Result<&str, KnowledgeError> {
        Ok(self.get(id)?.statement_for(polarity))
    }

    /// Evaluates the consent-validity conjunction over statement truth values.
    pub fn evaluate_consent(&self, assignment: &ConsentAssignment) -> Result<bool, KnowledgeError> {
        let missing: Vec<_> = RequirementId::ALL.into_iter().filter(|id| !assignment.truth.contains_key(id)).collect();
        if !missing.is_empty() {
            return Err(KnowledgeError::IncompleteAssignment(missing));
        }
        let mut valid = true;
        for id in RequirementId::ALL {
            let literal = self.get(id)?.formula_literal;
            valid &= literal.apply(assignment.truth[&id]);
        }
        Ok(valid)
    }
}

/// P and C assert the presence of a defect, the rest assert a property.
fn expected_literal(id: RequirementId) -> FormulaLiteral {
    match id {
        RequirementId::P | RequirementId::C => FormulaLiteral::Negated,
        _ => FormulaLiteral::AsStated,
    }
}

/// Truth values of each requirement statement.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentAssignment {
    pub truth: BTreeMap<RequirementId, bool>,
}

impl ConsentAssignment {
    /// Builds a total assignment from a bit mask; bit `i` is requirement `ALL[i]`.
    pub fn from_bits(bits: u8) -> Self {
        let truth = RequirementId::ALL.into_iter().map(|id| (id, bits & (1 << id.index()) != 0)).collect();
        ConsentAssignment { truth }
    }

    pub fn set(mut self, id: RequirementId, value: bool) -> Self {
        self.truth.insert(id, value);
        self
    }
}

/// Loads and validates a rubric file.
pub fn load_rubric(path: &Path) -> Result<Rubric, KnowledgeError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| KnowledgeError::Io { path: path.display().to_string(), source })?;
    Rubric::from_toml_str(&text, &path.display().to_string())
}

pub fn save_rubric(rubric: &Rubric, path: &Path) -> Result<(), KnowledgeError> {
    std::fs::write(path, rubric.to_toml_string())
        .map_err(|source| KnowledgeError::Io { path: path.display().to_string(), source })
}
