use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use reqsat::corpus::{self, Corpus, DatasetSplit, GroundTruth, Specification};
use reqsat::eval::{self, ExperimentConfig, ReportFormat, ReportMeta};
use reqsat::genpipe::{self, PipelineConfig, PipelineError};
use reqsat::knowledge::{self, KnowledgeError, RequirementId, Rubric, StatementPolarity};
use reqsat::llm::{self, CachingBackend, ChatBackend, LiveBackend, MockBackend, MockScript};
use reqsat::promptkit::{self, Demonstration, TemplateId, TemplateSet};
use reqsat::verdict::{self, Consistency};

use crate::config::{BackendKind, Config};

/// Command result: success, or a domain violation that maps to exit status 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Violation,
}

pub fn load_rubric(cfg: &Config) -> Result<Rubric> {
    match &cfg.rubric {
        Some(path) => Ok(knowledge::load_rubric(path)?),
        None => Ok(Rubric::bundled()),
    }
}

pub fn load_templates(cfg: &Config) -> Result<TemplateSet> {
    match &cfg.templates {
        Some(dir) => TemplateSet::load_dir(dir).with_context(|| format!("templates in {}", dir.display())),
        None => Ok(TemplateSet::bundled()),
    }
}

/// Backend named by the config, wrapped for recording or resuming if asked.
/// `oracle` supplies the labeled specifications the oracle backend answers for.
pub fn build_backend(
    cfg: &Config,
    oracle: Option<(&[Specification], &GroundTruth, &Rubric)>,
) -> Result<Box<dyn ChatBackend>> {
    let b = &cfg.backend;
    let base: Box<dyn ChatBackend> = match b.kind {
        BackendKind::Live => Box::new(LiveBackend::from_env(&b.endpoint, &b.api_key_env)?),
        BackendKind::Replay => {
            let path = b.transcript.as_ref().ok_or_else(|| anyhow!("replay backend needs backend.transcript"))?;
            Box::new(llm::open_replay(path)?)
        }
        BackendKind::Mock => match (&b.script, &b.response) {
            (Some(script), _) => Box::new(MockBackend::scripted(MockScript::load(script)?)),
            (None, Some(response)) => Box::new(MockBackend::constant(response.clone())),
            (None, None) => bail!("mock backend needs backend.script or backend.response"),
        },
        BackendKind::Oracle => {
            let (specs, truth, rubric) =
                oracle.ok_or_else(|| anyhow!("oracle backend needs evaluate.corpus and evaluate.ground_truth"))?;
            Box::new(eval::oracle_backend(specs, truth, rubric)?)
        }
    };
    let sink = cfg.transcript_sink();
    if b.resume {
        let cache = CachingBackend::open(base, &sink)?;
        log::info!("resuming with {} recorded exchanges from {}", cache.cached(), sink.display());
        Ok(Box::new(cache))
    } else if b.record {
        Ok(Box::new(llm::record_session(base, &sink)?))
    } else {
        Ok(base)
    }
}

fn create_output_dir(cfg: &Config) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("cannot create output directory {}", cfg.output_dir.display()))?;
    Ok(&cfg.output_dir)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

pub fn rubric_validate(path: Option<&Path>) -> Result<Outcome> {
    let rubric = match path {
        None => Rubric::bundled(),
        Some(path) => match knowledge::load_rubric(path) {
            Ok(r) => r,
            Err(KnowledgeError::Invalid { violations, .. }) => {
                for v in &violations {
                    println!("{v}");
                }
                println!("{} violation(s) in {}", violations.len(), path.display());
                return Ok(Outcome::Violation);
            }
            Err(e @ KnowledgeError::Parse { .. }) => {
                println!("{e}");
                return Ok(Outcome::Violation);
            }
            Err(e) => return Err(e.into()),
        },
    };
    println!("rubric {} is valid: {} requirements", rubric.version, rubric.requirements.len());
    Ok(Outcome::Ok)
}

pub fn generate(cfg: &Config, descriptions: Option<&Path>) -> Result<Outcome> {
    let path = descriptions
        .map(Path::to_path_buf)
        .or_else(|| cfg.generate.descriptions.clone())
        .ok_or_else(|| anyhow!("no descriptions file: pass --descriptions or set generate.descriptions"))?;
    let descriptions = genpipe::load_descriptions(&path)?;
    let rubric = load_rubric(cfg)?;
    let templates = load_templates(cfg)?;
    let out = create_output_dir(cfg)?;
    let backend = build_backend(cfg, None)?;
    let g = &cfg.generate;
    let pcfg = PipelineConfig {
        seed: cfg.seed,
        descriptions_per_store: g.descriptions_per_store,
        triples_per_store: g.triples_per_store,
        assignment: g.assignment,
        per_cell: g.per_cell,
        model: cfg.model.clone(),
        parallelism: g.parallelism,
    };
    match genpipe::run_pipeline(&descriptions, &pcfg, &templates, &rubric, backend.as_ref()) {
        Ok(run) => {
            genpipe::write_outputs(&run, out)?;
            let m = &run.manifest;
            println!(
                "descriptions {} (dropped {}), triples {}, scenarios {}, specifications {}",
                m.descriptions_in, m.descriptions_dropped, m.triples, m.scenarios, m.specifications
            );
            println!("wrote {}", out.join("corpus.jsonl").display());
            Ok(Outcome::Ok)
        }
        Err(PipelineError::Aborted { stage, source, partial }) => {
            genpipe::write_outputs(&partial, out)?;
            Err(anyhow!(source).context(format!("generation aborted at stage {stage}; partial outputs kept")))
        }
        Err(e) => Err(e.into()),
    }
}

/// Loaded corpus, labels and the held-out split an evaluation runs on.
pub struct Prepared {
    pub rubric: Rubric,
    pub templates: TemplateSet,
    pub corpus: Corpus,
    pub truth: GroundTruth,
    pub split: DatasetSplit,
    pub test_set: Vec<Specification>,
    pub pool: Vec<Demonstration>,
    pub experiment: ExperimentConfig,
}

fn load_labeled(cfg: &Config) -> Result<(Corpus, GroundTruth)> {
    let e = &cfg.evaluate;
    let corpus_path = e.corpus.as_ref().ok_or_else(|| anyhow!("evaluate.corpus is not set"))?;
    let truth_path = e.ground_truth.as_ref().ok_or_else(|| anyhow!("evaluate.ground_truth is not set"))?;
    Ok((corpus::load_corpus(corpus_path)?, corpus::load_ground_truth(truth_path)?))
}

pub fn prepare(cfg: &Config) -> Result<Prepared> {
    let rubric = load_rubric(cfg)?;
    let templates = load_templates(cfg)?;
    let (corpus, truth) = load_labeled(cfg)?;
    let e = &cfg.evaluate;
    let dataset = match e.per_cell {
        Some(per_cell) => corpus::sample_balanced(&corpus, per_cell, &e.store_set(), cfg.seed)?,
        None => corpus.specifications.clone(),
    };
    let split = corpus::split_holdout(&dataset, e.train_total, e.test_total, cfg.seed)?;
    let test_set = corpus.select(&split.test);
    let pool = eval::build_demo_pool(&corpus.select(&split.train), &truth, &rubric);
    let experiment = ExperimentConfig {
        template: e.template,
        n_pairs: e.n_pairs,
        shot_mode: e.shot_mode,
        trials: e.trials,
        seed: cfg.seed,
        model: cfg.model.clone(),
        parse: e.parse_options(),
        parallelism: e.parallelism,
    };
    Ok(Prepared { rubric, templates, corpus, truth, split, test_set, pool, experiment })
}

pub fn evaluate(cfg: &Config) -> Result<Outcome> {
    let p = prepare(cfg)?;
    // Plan first so configuration problems surface before any call is made.
    eval::plan_experiment(&p.test_set, &p.truth, &p.experiment, &p.templates, &p.rubric, &p.pool)?;
    let out = create_output_dir(cfg)?;
    let backend = build_backend(cfg, Some((&p.corpus.specifications, &p.truth, &p.rubric)))?;
    let records =
        eval::run_experiment(&p.test_set, &p.truth, &p.experiment, &p.templates, &p.rubric, &p.pool, backend.as_ref())?;
    let mut report = eval::compute_metrics(&records, &p.truth, cfg.seed)?;
    report.meta = ReportMeta::for_experiment(&p.experiment, &p.templates, &p.rubric);

    write_file(&out.join("split.json"), serde_json::to_string_pretty(&p.split)? + "\n")?;
    corpus::write_jsonl_file(&out.join("records.jsonl"), &records)?;
    for format in &cfg.evaluate.formats {
        eval::emit_report(&report, *format, &out.join(format!("report.{}", format.extension())))?;
    }
    print!("{}", eval::render_report(&report, ReportFormat::TableText));
    Ok(Outcome::Ok)
}

pub fn report(cfg: &Config, from: Option<&Path>, records: Option<&Path>, format: ReportFormat) -> Result<Outcome> {
    let report = match (from, records) {
        (Some(path), None) => eval::load_report(path)?,
        (None, Some(path)) => {
            let records: Vec<eval::TrialRecord> = corpus::read_jsonl_file(path)?;
            let truth_path =
                cfg.evaluate.ground_truth.as_ref().ok_or_else(|| anyhow!("evaluate.ground_truth is not set"))?;
            eval::compute_metrics(&records, &corpus::load_ground_truth(truth_path)?, cfg.seed)?
        }
        _ => bail!("pass exactly one of --from or --records"),
    };
    print!("{}", eval::render_report(&report, format));
    Ok(Outcome::Ok)
}

pub struct CheckArgs<'a> {
    pub spec: &'a Path,
    pub spec_id: Option<&'a str>,
    pub requirement: Option<RequirementId>,
    pub template: Option<TemplateId>,
    pub polarities: Vec<StatementPolarity>,
}

fn load_specs(path: &Path) -> Result<Vec<Specification>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if let Ok(single) = serde_json::from_str::<Specification>(&text) {
        return Ok(vec![single]);
    }
    Ok(corpus::read_jsonl(text.as_bytes(), &path.display().to_string())?)
}

pub fn check(cfg: &Config, args: CheckArgs<'_>) -> Result<Outcome> {
    let specs = load_specs(args.spec)?;
    let spec = match args.spec_id {
        Some(id) => specs.iter().find(|s| s.id == id).ok_or_else(|| anyhow!("no specification {id}"))?,
        None if specs.len() == 1 => &specs[0],
        None => bail!("{} holds {} specifications; pick one with --spec-id", args.spec.display(), specs.len()),
    };
    let rubric = load_rubric(cfg)?;
    let templates = load_templates(cfg)?;
    let req = rubric.get(args.requirement.unwrap_or(spec.target_requirement))?;
    let template = args.template.unwrap_or(cfg.evaluate.template);

    let labeled = if template == TemplateId::CoT || cfg.backend.kind == BackendKind::Oracle {
        Some(load_labeled(cfg)?)
    } else {
        None
    };
    let pool = match (&labeled, template) {
        (Some((corpus, truth)), TemplateId::CoT) => {
            let others: Vec<Specification> =
                corpus.specifications.iter().filter(|s| s.id != spec.id).cloned().collect();
            eval::build_demo_pool(&others, truth, &rubric)
        }
        _ => Vec::new(),
    };
    let backend = build_backend(cfg, labeled.as_ref().map(|(c, t)| (c.specifications.as_slice(), t, &rubric)))?;

    let parse = cfg.evaluate.parse_options();
    let mut verdicts = Vec::new();
    for polarity in &args.polarities {
        let prompt = match template {
            TemplateId::CoT => {
                let seed = reqsat::seed::derive(cfg.seed, &["demos", &spec.id]);
                let demos = match cfg.evaluate.shot_mode {
                    eval::ShotMode::Pairs => {
                        promptkit::select_demonstrations(&pool, req, cfg.evaluate.n_pairs, *polarity, Some(seed))?
                    }
                    eval::ShotMode::Single => {
                        promptkit::select_exemplars(&pool, req, cfg.evaluate.n_pairs, *polarity, Some(seed))?
                    }
                };
                promptkit::render_cot(&templates, spec, req, *polarity, &demos)?
            }
            _ => promptkit::render_satisfiability(&templates, template, spec, req, *polarity)?,
        };
        let request = cfg.model.request(&prompt.system_message, &prompt.text);
        let response = backend.complete(&request)?;
        let v = verdict::parse_response_with(&response.text, &parse);
        println!("[{polarity}] prompt digest: {}", request.digest());
        println!("[{polarity}] response: {}", response.text);
        println!(
            "[{polarity}] verdict: {:?} ({}, {} match{})",
            v.prediction,
            serde_json::to_value(v.extraction)?.as_str().unwrap_or_default(),
            v.match_count,
            if v.match_count == 1 { "" } else { "es" }
        );
        verdicts.push((*polarity, v));
    }
    let normative = verdicts.iter().find(|(p, _)| *p == StatementPolarity::Normative);
    let inverted = verdicts.iter().find(|(p, _)| *p == StatementPolarity::Inverted);
    if let (Some((_, n)), Some((_, i))) = (normative, inverted) {
        let c = verdict::consistency_check(n, i);
        println!("consistency: {}", serde_json::to_value(c)?.as_str().unwrap_or_default());
        if c == Consistency::Inconsistent {
            log::warn!("normative and inverted answers agree for {}", spec.id);
        }
    }
    Ok(Outcome::Ok)
}

pub fn transcript_record(cfg: &Config) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    cfg.backend.record = true;
    if cfg.backend.kind == BackendKind::Replay {
        bail!("recording needs a live, mock or oracle backend");
    }
    let outcome = evaluate(&cfg)?;
    println!("transcript: {}", cfg.transcript_sink().display());
    Ok(outcome)
}

/// Checks that `transcript` answers every call the configured evaluation makes.
pub fn transcript_replay(cfg: &Config, transcript: &Path) -> Result<Outcome> {
    let replay = llm::open_replay(transcript)?;
    let p = prepare(cfg)?;
    let plan = eval::plan_experiment(&p.test_set, &p.truth, &p.experiment, &p.templates, &p.rubric, &p.pool)?;
    let mut missing = Vec::new();
    for planned in &plan {
        let digest = planned.request.digest();
        for trial in 0..p.experiment.trials {
            if replay.lookup(&digest, trial).is_none() {
                missing.push(format!("{} {} trial {trial} ({digest})", planned.spec_id, planned.polarity));
            }
        }
    }
    let needed = plan.len() * p.experiment.trials;
    println!("{} recorded responses; {} of {needed} planned calls covered", replay.len(), needed - missing.len());
    for m in missing.iter().take(20) {
        println!("missing: {m}");
    }
    Ok(if missing.is_empty() { Outcome::Ok } else { Outcome::Violation })
}

pub fn kappa(path: &PathBuf) -> Result<Outcome> {
    let file = std::fs::File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let (a, b) = corpus::read_label_pairs_csv(file)?;
    let k = corpus::cohens_kappa(&a, &b)?;
    println!("kappa: {k:.4} (n = {})", a.len());
    Ok(Outcome::Ok)
}
