//! Scenario/specification records, ground-truth labels, JSONL persistence,
//! balanced sampling, holdout splitting and inter-annotator agreement.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::hash::Hash;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::knowledge::RequirementId;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Store {
    Apple,
    Google,
}

impl Store {
    pub const ALL: [Store; 2] = [Store::Apple, Store::Google];

    pub fn as_str(self) -> &'static str {
        match self {
            Store::Apple => "apple",
            Store::Google => "google",
        }
    }
}

impl fmt::Display for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Store {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "apple" => Ok(Store::Apple),
            "google" => Ok(Store::Google),
            other => Err(format!("unknown store `{other}` (expected apple or google)")),
        }
    }
}

/// Whether a specification satisfies its target requirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Satisfies,
    Dissatisfies,
}

impl Label {
    pub const BOTH: [Label; 2] = [Label::Satisfies, Label::Dissatisfies];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Satisfies => "satisfies",
            Label::Dissatisfies => "dissatisfies",
        }
    }

    /// Truth of the normative requirement statement under this label.
    pub fn normative_truth(self) -> bool {
        self == Label::Satisfies
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "satisfies" | "true" | "yes" => Ok(Label::Satisfies),
            "dissatisfies" | "false" | "no" => Ok(Label::Dissatisfies),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub store: Store,
    pub summary: String,
    pub data_practice: String,
    pub data_types: Vec<String>,
    pub narrative: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specification {
    pub id: String,
    pub scenario: Scenario,
    pub design_practices: Vec<String>,
    pub target_requirement: RequirementId,
    pub intended_polarity: Label,
}

impl Specification {
    /// Invariant violations; empty when the record is well formed.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.design_practices.is_empty() {
            out.push(format!("specification {}: design_practices is empty", self.id));
        }
        if self.scenario.data_types.is_empty() {
            out.push(format!("specification {}: scenario has no data types", self.id));
        }
        if self.scenario.narrative.trim().is_empty() {
            out.push(format!("specification {}: scenario narrative is empty", self.id));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnnotationCode {
    #[serde(rename = "YES")]
    Yes,
    #[serde(rename = "NO")]
    No,
    #[serde(rename = "MIS")]
    Missing,
    #[serde(rename = "IDK")]
    Unclear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub spec_id: String,
    pub requirement: RequirementId,
    pub label: Label,
    #[serde(default)]
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_codes: Option<Vec<AnnotationCode>>,
}

/// Ground-truth labels keyed by specification id.
pub type GroundTruth = BTreeMap<String, GroundTruthRecord>;

pub fn ground_truth_index(records: Vec<GroundTruthRecord>) -> GroundTruth {
    records.into_iter().map(|r| (r.spec_id.clone(), r)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    /// Items left over when train + test is smaller than the dataset.
    #[serde(default)]
    pub discarded: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub specifications: Vec<Specification>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.specifications.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specifications.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Specification> {
        self.specifications.iter().find(|s| s.id == id)
    }

    /// Specifications for the given ids, in id order of the argument.
    pub fn select(&self, ids: &[String]) -> Vec<Specification> {
        let by_id: HashMap<&str, &Specification> = self.specifications.iter().map(|s| (s.id.as_str(), s)).collect();
        ids.iter().filter_map(|id| by_id.get(id.as_str()).map(|s| (*s).clone())).collect()
    }
}

/// A balanced-sampling cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub requirement: RequirementId,
    pub label: Label,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.requirement, self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shortfall {
    pub cell: Cell,
    pub store: Store,
    pub needed: usize,
    pub available: usize,
}

impl fmt::Display for Shortfall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} in {} needs {} but has {} (short {})",
            self.cell,
            self.store,
            self.needed,
            self.available,
            self.needed - self.available
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error("insufficient corpus population: {}", .0.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("; "))]
    InsufficientCells(Vec<Shortfall>),
    #[error("no stores selected for sampling")]
    NoStores,
    #[error("split needs {needed} items (train {train} + test {test}) but dataset has {available}")]
    SplitTooLarge { needed: usize, train: usize, test: usize, available: usize },
    #[error("kappa needs equal-length label lists (got {0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("kappa needs at least one label pair")]
    EmptyLabels,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.display().to_string(), source }
}

/// Reads one JSON record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl Read, origin: &str) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io { path: origin.to_string(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            path: origin.to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(writer: impl Write, records: &[T]) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for record in records {
        serde_json::to_writer(&mut w, record)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_jsonl(file, &path.display().to_string())
}

pub fn write_jsonl_file<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    write_jsonl(file, records).map_err(io_err(path))
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let specifications: Vec<Specification> = read_jsonl_file(path)?;
    Ok(Corpus { specifications })
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    write_jsonl_file(path, &corpus.specifications)
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth, CorpusError> {
    Ok(ground_truth_index(read_jsonl_file(path)?))
}

pub fn save_ground_truth(truth: &GroundTruth, path: &Path) -> Result<(), CorpusError> {
    let records: Vec<_> = truth.values().cloned().collect();
    write_jsonl_file(path, &records)
}

/// Writes `spec_id,requirement,label` rows.
pub fn write_labels_csv(writer: impl Write, truth: &GroundTruth) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["spec_id", "requirement", "label"])?;
    for record in truth.values() {
        w.write_record([record.spec_id.as_str(), &record.requirement.to_string(), record.label.as_str()])?;
    }
    w.flush().map_err(|source| CorpusError::Io { path: "<csv>".into(), source })?;
    Ok(())
}

/// Reads two label columns (first two fields of each row, header skipped).
pub fn read_label_pairs_csv(reader: impl Read) -> Result<(Vec<String>, Vec<String>), CorpusError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (idx, row) in r.records().enumerate() {
        let row = row?;
        if row.len() < 2 {
            return Err(CorpusError::Malformed {
                path: "<csv>".into(),
                line: idx + 2,
                message: "expected two label columns".into(),
            });
        }
        a.push(row[0].trim().to_string());
        b.push(row[1].trim().to_string());
    }
    Ok((a, b))
}

/// Draws `per_cell` specifications for every (requirement, intended polarity)
/// cell, split as evenly as possible across `stores`, preferring specifications
/// whose scenario has not been used yet.
pub fn sample_balanced(
    corpus: &Corpus,
    per_cell: usize,
    stores: &BTreeSet<Store>,
    seed: u64,
) -> Result<Vec<Specification>, CorpusError> {
    if stores.is_empty() {
        return Err(CorpusError::NoStores);
    }
    let stores: Vec<Store> = stores.iter().copied().collect();
    let mut buckets: BTreeMap<(Cell, Store), Vec<&Specification>> = BTreeMap::new();
    for spec in &corpus.specifications {
        if !stores.contains(&spec.scenario.store) {
            continue;
        }
        let cell = Cell { requirement: spec.target_requirement, label: spec.intended_polarity };
        buckets.entry((cell, spec.scenario.store)).or_default().push(spec);
    }

    // Quotas: the per-cell remainder rotates across stores so store totals stay even.
    let mut quotas = Vec::new();
    let mut offset = 0;
    let base = per_cell / stores.len();
    let rem = per_cell % stores.len();
    for requirement in RequirementId::ALL {
        for label in Label::BOTH {
            let cell = Cell { requirement, label };
            for (j, store) in stores.iter().enumerate() {
                let extra = (j + stores.len() - offset) % stores.len() < rem;
                quotas.push((cell, *store, base + usize::from(extra)));
            }
            offset = (offset + rem) % stores.len();
        }
    }

    let shortfalls: Vec<Shortfall> = quotas
        .iter()
        .filter_map(|&(cell, store, needed)| {
            let available = buckets.get(&(cell, store)).map_or(0, Vec::len);
            (available < needed).then_some(Shortfall { cell, store, needed, available })
        })
        .collect();
    if !shortfalls.is_empty() {
        return Err(CorpusError::InsufficientCells(shortfalls));
    }

    let mut used_scenarios: HashSet<&str> = HashSet::new();
    let mut out = Vec::with_capacity(per_cell * 16);
    for (cell, store, needed) in quotas {
        if needed == 0 {
            continue;
        }
        let mut candidates = buckets[&(cell, store)].clone();
        candidates.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = seed::rng(seed, &["sample", &cell.requirement.to_string(), cell.label.as_str(), store.as_str()]);
        candidates.shuffle(&mut rng);
        let (fresh, reused): (Vec<_>, Vec<_>) =
            candidates.into_iter().partition(|s| !used_scenarios.contains(s.scenario.id.as_str()));
        for spec in fresh.into_iter().chain(reused).take(needed) {
            used_scenarios.insert(spec.scenario.id.as_str());
            out.push(spec.clone());
        }
    }
    Ok(out)
}

/// Splits into `train_total` training and `test_total` test items, both spread
/// round-robin across requirements; anything left over is discarded.
pub fn split_holdout(
    dataset: &[Specification],
    train_total: usize,
    test_total: usize,
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    let needed = train_total + test_total;
    if needed > dataset.len() {
        return Err(CorpusError::SplitTooLarge {
            needed,
            train: train_total,
            test: test_total,
            available: dataset.len(),
        });
    }
    let mut queues: Vec<VecDeque<String>> = Vec::new();
    for requirement in RequirementId::ALL {
        let mut by_label: BTreeMap<Label, Vec<&Specification>> = BTreeMap::new();
        for spec in dataset.iter().filter(|s| s.target_requirement == requirement) {
            by_label.entry(spec.intended_polarity).or_default().push(spec);
        }
        let mut rng = seed::rng(seed, &["split", &requirement.to_string()]);
        let mut lanes: Vec<VecDeque<String>> = Label::BOTH
            .iter()
            .map(|label| {
                let mut specs = by_label.remove(label).unwrap_or_default();
                specs.sort_by(|a, b| a.id.cmp(&b.id));
                specs.shuffle(&mut rng);
                specs.into_iter().map(|s| s.id.clone()).collect()
            })
            .collect();
        // alternate polarities so both sides of the split stay balanced
        let mut queue = VecDeque::new();
        while lanes.iter().any(|l| !l.is_empty()) {
            for lane in lanes.iter_mut() {
                if let Some(id) = lane.pop_front() {
                    queue.push_back(id);
                }
            }
        }
        queues.push(queue);
    }

    let mut cursor = 0;
    let train = take_round_robin(&mut queues, train_total, &mut cursor);
    let test = take_round_robin(&mut queues, test_total, &mut cursor);
    let discarded: Vec<String> = queues.into_iter().flatten().collect();
    log::info!("holdout split: {} train, {} test, {} discarded", train.len(), test.len(), discarded.len());
    Ok(DatasetSplit { train, test, discarded })
}

fn take_round_robin(queues: &mut [VecDeque<String>], n: usize, cursor: &mut usize) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n && queues.iter().any(|q| !q.is_empty()) {
        if let Some(id) = queues[*cursor].pop_front() {
            out.push(id);
        }
        *cursor = (*cursor + 1) % queues.len();
    }
    out
}

/// Cohen's kappa over any finite category set.
///
/// Computed from integer counts as `(n·agree − Σ a_k b_k) / (n² − Σ a_k b_k)`,
/// which equals `(p_o − p_e) / (1 − p_e)`. Returns 1 when chance agreement is total.
pub fn cohens_kappa<T: Eq + Hash>(labels_a: &[T], labels_b: &[T]) -> Result<f64, CorpusError> {
    if labels_a.len() != labels_b.len() {
        return Err(CorpusError::LengthMismatch(labels_a.len(), labels_b.len()));
    }
    if labels_a.is_empty() {
        return Err(CorpusError::EmptyLabels);
    }
    let n = labels_a.len() as u128;
    let agree = labels_a.iter().zip(labels_b).filter(|(a, b)| a == b).count() as u128;
    let mut marg_a: HashMap<&T, u128> = HashMap::new();
    let mut marg_b: HashMap<&T, u128> = HashMap::new();
    for (a, b) in labels_a.iter().zip(labels_b) {
        *marg_a.entry(a).or_default() += 1;
        *marg_b.entry(b).or_default() += 1;
    }
    let chance: u128 = marg_a.iter().map(|(k, na)| na * marg_b.get(k).copied().unwrap_or(0)).sum();
    let denom = n * n - chance;
    if denom == 0 {
        return Ok(1.0);
    }
    let numer = (n * agree) as i128 - chance as i128;
    Ok(numer as f64 / denom as f64)
}
