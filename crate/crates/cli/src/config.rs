//! Run configuration: one TOML file, relative paths resolved against the
//! file's directory. The API key never appears here, only the name of the
//! environment variable that holds it.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use reqsat::corpus::Store;
use reqsat::eval::{ReportFormat, ShotMode};
use reqsat::genpipe::Assignment;
use reqsat::llm::{self, ModelParams};
use reqsat::promptkit::TemplateId;
use reqsat::verdict::{LastMatchScope, ParseOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Replay,
    Mock,
    Oracle,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Transcript to replay.
    pub transcript: Option<PathBuf>,
    /// Rule script for the mock backend.
    pub script: Option<PathBuf>,
    /// Constant answer for the mock backend when no script is given.
    pub response: Option<String>,
    /// Append every exchange to `<output_dir>/transcript.jsonl`.
    #[serde(default)]
    pub record: bool,
    /// Serve already-recorded exchanges from `<output_dir>/transcript.jsonl`
    /// and record the rest, so interrupted live runs resume.
    #[serde(default)]
    pub resume: bool,
}

fn default_endpoint() -> String {
    llm::DEFAULT_ENDPOINT.to_string()
}

fn default_api_key_env() -> String {
    llm::DEFAULT_API_KEY_ENV.to_string()
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: default_endpoint(),
            api_key_env: default_api_key_env(),
            transcript: None,
            script: None,
            response: None,
            record: false,
            resume: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub descriptions: Option<PathBuf>,
    pub descriptions_per_store: Option<usize>,
    pub triples_per_store: Option<usize>,
    pub assignment: Assignment,
    pub per_cell: Option<usize>,
    pub parallelism: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            descriptions: None,
            descriptions_per_store: Some(200),
            triples_per_store: Some(200),
            assignment: Assignment::Balanced,
            per_cell: None,
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub corpus: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    /// Specifications per (requirement, polarity) cell; `None` uses the corpus as is.
    pub per_cell: Option<usize>,
    pub stores: Vec<Store>,
    pub train_total: usize,
    pub test_total: usize,
    pub template: TemplateId,
    pub n_pairs: usize,
    pub shot_mode: ShotMode,
    pub trials: usize,
    pub parallelism: usize,
    pub case_insensitive: bool,
    pub last_match: LastMatchScope,
    pub formats: Vec<ReportFormat>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            corpus: None,
            ground_truth: None,
            per_cell: Some(24),
            stores: Store::ALL.to_vec(),
            train_total: 75,
            test_total: 300,
            template: TemplateId::G,
            n_pairs: 1,
            shot_mode: ShotMode::Pairs,
            trials: 10,
            parallelism: 1,
            case_insensitive: true,
            last_match: LastMatchScope::AcrossPatterns,
            formats: vec![ReportFormat::TableText, ReportFormat::Csv, ReportFormat::Machine],
        }
    }
}

impl EvaluateConfig {
    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions { case_insensitive: self.case_insensitive, last_match: self.last_match }
    }

    pub fn store_set(&self) -> BTreeSet<Store> {
        self.stores.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub rubric: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub backend: BackendConfig,
    pub model: ModelParams,
    pub generate: GenerateConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            output_dir: PathBuf::from("out"),
            rubric: None,
            templates: None,
            backend: BackendConfig::default(),
            model: ModelParams::default(),
            generate: GenerateConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        // The parser's own message quotes the offending line; keep config
        // values out of error output.
        let mut cfg: Config = toml::from_str(&text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].lines().count().max(1));
            let at = line.map(|l| format!(" at line {l}")).unwrap_or_default();
            anyhow::anyhow!("invalid config {}{at}: {}", path.display(), e.message())
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
        resolve(base, &mut self.rubric);
        resolve(base, &mut self.templates);
        resolve(base, &mut self.backend.transcript);
        resolve(base, &mut self.backend.script);
        resolve(base, &mut self.generate.descriptions);
        resolve(base, &mut self.evaluate.corpus);
        resolve(base, &mut self.evaluate.ground_truth);
    }

    /// Fails when a path the command relies on does not exist.
    pub fn check_paths(&self) -> Result<()> {
        let named = [
            ("rubric", &self.rubric),
            ("templates", &self.templates),
            ("backend.transcript", &self.backend.transcript),
            ("backend.script", &self.backend.script),
        ];
        for (name, path) in named {
            if let Some(p) = path {
                if !p.exists() {
                    bail!("{name} path {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }

    pub fn transcript_sink(&self) -> PathBuf {
        self.output_dir.join("transcript.jsonl")
    }
}
