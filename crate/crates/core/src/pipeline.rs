// SPDX-License-Identifier: Apache-2.0

//! Stage driver with on-disk artifacts.
//!
//! Each stage reads its predecessors' JSONL files from the output directory,
//! writes its own, and records a manifest with the hashes of its inputs,
//! configuration and outputs. A stage whose manifest still matches is skipped.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baselines::{build_isobugs, build_without_ctxbugs, MaskedCode};
use crate::corpus::{load_corpus, AdaptationCase, StdlibAllowlist};
use crate::evaluate::{report, AdaptationInput, EvalRecord, Evaluator, Setting};
use crate::identify::{clean, summarize, summary_csv, BugInstance, Identifier, Verdict};
use crate::llm::oracle::OracleBackend;
use crate::llm::{
    build_infill_prompt, Backend, BackendError, Client, Completion, Generation, HttpBackend, ModelConfig, Prompt,
    StubBackend,
};
use crate::obfuscate::{build_renaming, obfuscate_code, obfuscate_text, RenamingMap, Scope};
use crate::perturb::{perturb_rules, PerturbedTemplate};
use crate::syntax::Grammar;
use crate::testexec::{MockShim, ProcessShim, TestRunner};
use crate::{sha256_hex, Error, Result};

pub const STAGES: [&str; 7] = ["perturb", "obfuscate", "generate", "identify", "baseline", "evaluate", "report"];

pub const EXIT_OK: i32 = 0;
pub const EXIT_STAGE_FAILED: i32 = 1;
pub const EXIT_ITEM_FAILURES: i32 = 3;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub grammar: Grammar,
    pub rules: Vec<u8>,
    pub models: Vec<ModelConfig>,
    pub timeout_secs: f64,
    pub jobs: usize,
    /// Offline mode: fixture backend and mock test runner.
    pub stub: bool,
    /// Canned responses consulted before the fixture backend.
    pub stub_table: Option<PathBuf>,
    /// Test shim command, required unless `stub` is set.
    pub shim: Vec<String>,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(corpus: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            corpus: corpus.into(),
            out: out.into(),
            grammar: Grammar::Python,
            rules: (1..=10).collect(),
            models: vec![ModelConfig::new("stub-model")],
            timeout_secs: crate::testexec::DEFAULT_TIMEOUT.as_secs_f64(),
            jobs: 1,
            stub: true,
            stub_table: None,
            shim: Vec::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rules.is_empty() || self.rules.iter().any(|r| !(1..=10).contains(r)) {
            return Err(Error::Config(format!("rules must be a non-empty subset of 1..=10, got {:?}", self.rules)));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("at least one model is required".into()));
        }
        for m in &self.models {
            m.validate()?;
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(Error::Config("timeout must be positive".into()));
        }
        if !self.stub && self.shim.is_empty() {
            return Err(Error::Config("a test shim command is required outside stub mode".into()));
        }
        Ok(())
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// The part of the configuration that affects a stage's outputs.
    fn stage_config(&self, stage: &str) -> serde_json::Value {
        use serde_json::json;
        let models: Vec<_> =
            self.models.iter().map(|m| json!([m.model_id, m.temperature, m.max_output_tokens])).collect();
        let backend = json!({ "stub": self.stub, "seed": self.seed, "models": models });
        let runner = json!({ "stub": self.stub, "shim": self.shim, "timeout": self.timeout_secs });
        match stage {
            "perturb" => json!({ "grammar": self.grammar, "rules": self.rules }),
            "generate" => backend,
            "identify" => runner,
            "baseline" | "evaluate" => json!({ "backend": backend, "runner": runner }),
            _ => json!({}),
        }
    }
}

/// Hashes and counts recorded after a stage finishes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, usize>,
    pub item_failures: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageReport {
    pub stage: String,
    pub up_to_date: bool,
    pub counts: BTreeMap<String, usize>,
    pub item_failures: usize,
}

impl StageReport {
    pub fn exit_code(&self) -> i32 {
        if self.item_failures > 0 {
            EXIT_ITEM_FAILURES
        } else {
            EXIT_OK
        }
    }
}

/// Exit code for an error raised by a stage.
pub fn exit_code_for(_: &Error) -> i32 {
    EXIT_STAGE_FAILED
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|source| Error::CorpusIo { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

/// Write through a temporary file so readers never see half a file.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(fs::read(path).map_err(|source| Error::CorpusIo { path: path.to_path_buf(), source })?))
}

/// Artifact files and the stage that writes them.
const ARTIFACTS: &[(&str, &str)] = &[
    ("templates.jsonl", "perturb"),
    ("prompts.jsonl", "obfuscate"),
    ("renamings.jsonl", "obfuscate"),
    ("generations.jsonl", "generate"),
    ("classifications.jsonl", "identify"),
    ("ctxbugs.jsonl", "identify"),
    ("summary.csv", "identify"),
    ("masked.jsonl", "baseline"),
    ("isobug_attempts.jsonl", "baseline"),
    ("isobugs.jsonl", "baseline"),
    ("records.jsonl", "evaluate"),
    ("report.csv", "report"),
    ("report.json", "report"),
    ("dataset.csv", "report"),
];

fn producer(file: &str) -> &'static str {
    ARTIFACTS.iter().find(|(f, _)| *f == file).map_or("", |(_, s)| s)
}

fn stage_inputs(stage: &str) -> &'static [&'static str] {
    match stage {
        "perturb" => &[],
        "obfuscate" => &["templates.jsonl"],
        "generate" => &["prompts.jsonl"],
        "identify" => &["templates.jsonl", "generations.jsonl"],
        "baseline" => &["ctxbugs.jsonl"],
        "evaluate" => &["ctxbugs.jsonl", "masked.jsonl", "isobugs.jsonl"],
        "report" => &["records.jsonl", "ctxbugs.jsonl"],
        _ => &[],
    }
}

fn uses_corpus(stage: &str) -> bool {
    !matches!(stage, "generate" | "report")
}

/// An infill prompt for one template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfillJob {
    pub template_id: String,
    pub case_id: String,
    pub prompt: Prompt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenamingRecord {
    pub case_id: String,
    pub map: RenamingMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub template_id: String,
    pub case_id: String,
    pub generation: Generation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub instance_id: String,
    pub case_id: String,
    pub model_id: String,
    pub verdict: Verdict,
    pub details: String,
}

/// Canned table first, then the fixture oracle.
struct FixtureBackend {
    table: Option<StubBackend>,
    oracle: OracleBackend,
}

impl Backend for FixtureBackend {
    fn complete(&self, prompt: &Prompt, cfg: &ModelConfig) -> std::result::Result<Completion, BackendError> {
        if let Some(e) = self.table.as_ref().and_then(|t| t.lookup(&cfg.model_id, &prompt.hash())) {
            return Ok(Completion { text: e.text.clone(), token_probs: e.token_probs.clone(), truncated: false });
        }
        self.oracle.complete(prompt, cfg)
    }
}

pub struct Pipeline {
    cfg: PipelineConfig,
    cases: Vec<AdaptationCase>,
    pool: rayon::ThreadPool,
    runner: Box<dyn TestRunner>,
    backend: Arc<dyn Backend>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        fs::create_dir_all(&cfg.out)?;
        let corpus = load_corpus(&cfg.corpus, &StdlibAllowlist::python310())?;
        for d in &corpus.diagnostics {
            log::warn!("{d}");
        }
        let cases: Vec<AdaptationCase> = corpus.cases.into_iter().filter(|c| c.language == cfg.grammar).collect();
        let pool =
            rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build().map_err(|e| Error::Config(e.to_string()))?;
        let (runner, backend): (Box<dyn TestRunner>, Arc<dyn Backend>) = if cfg.stub {
            let table = cfg.stub_table.as_deref().map(StubBackend::from_file).transpose()?;
            let oracle = OracleBackend::new(&cases).with_seed(cfg.seed);
            (Box::new(MockShim::with_references(&cases)), Arc::new(FixtureBackend { table, oracle }))
        } else {
            (Box::new(ProcessShim::new(cfg.shim.clone())), Arc::new(HttpBackend::from_env()?))
        };
        Ok(Pipeline { cfg, cases, pool, runner, backend })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn path(&self, file: &str) -> PathBuf {
        self.cfg.out.join(file)
    }

    fn manifest_path(&self, stage: &str) -> PathBuf {
        self.path(&format!("{stage}.manifest.json"))
    }

    pub fn manifest(&self, stage: &str) -> Option<Manifest> {
        let text = fs::read_to_string(self.manifest_path(stage)).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn case(&self, id: &str) -> Result<&AdaptationCase> {
        self.cases
            .iter()
            .find(|c| c.case_id == id)
            .ok_or_else(|| Error::Config(format!("case `{id}` is not in the corpus")))
    }

    fn clients(&self) -> Result<Vec<Client>> {
        self.cfg.models.iter().map(|m| Client::new(self.backend.clone(), m.clone())).collect()
    }

    /// Hashes of the stage's inputs; fails if a predecessor has not run.
    fn input_hashes(&self, stage: &str) -> Result<BTreeMap<String, String>> {
        let mut inputs = BTreeMap::new();
        if uses_corpus(stage) {
            inputs.insert("corpus".to_string(), file_hash(&self.cfg.corpus)?);
        }
        for file in stage_inputs(stage) {
            let path = self.path(file);
            if self.manifest(producer(file)).is_none() || !path.exists() {
                let missing = self.first_missing(producer(file));
                return Err(Error::MissingStage { stage: stage.into(), missing: missing.into() });
            }
            inputs.insert(file.to_string(), file_hash(&path)?);
        }
        Ok(inputs)
    }

    /// The earliest stage that has to run before `stage` can.
    fn first_missing(&self, stage: &'static str) -> &'static str {
        stage_inputs(stage)
            .iter()
            .map(|f| producer(f))
            .find(|p| self.manifest(p).is_none())
            .map_or(stage, |p| self.first_missing(p))
    }

    fn config_hash(&self, stage: &str) -> String {
        sha256_hex(self.cfg.stage_config(stage).to_string())
    }

    fn up_to_date(&self, stage: &str, inputs: &BTreeMap<String, String>) -> Option<Manifest> {
        let m = self.manifest(stage)?;
        let outputs_intact = m.outputs.iter().all(|(f, h)| file_hash(&self.path(f)).is_ok_and(|x| &x == h));
        (m.config_hash == self.config_hash(stage) && &m.inputs == inputs && outputs_intact).then_some(m)
    }

    pub fn run_stage(&self, stage: &str) -> Result<StageReport> {
        if !STAGES.contains(&stage) {
            return Err(Error::Config(format!("unknown stage `{stage}`")));
        }
        let inputs = self.input_hashes(stage)?;
        if let Some(m) = self.up_to_date(stage, &inputs) {
            log::info!("{stage}: up-to-date");
            return Ok(StageReport {
                stage: stage.into(),
                up_to_date: true,
                counts: m.counts,
                item_failures: m.item_failures,
            });
        }
        let out = self.pool.install(|| match stage {
            "perturb" => self.perturb(),
            "obfuscate" => self.obfuscate(),
            "generate" => self.generate(),
            "identify" => self.identify(),
            "baseline" => self.baseline(),
            "evaluate" => self.evaluate(),
            _ => self.report(),
        })?;
        let mut outputs = BTreeMap::new();
        for (file, contents) in &out.files {
            write_atomic(&self.path(file), contents)?;
            outputs.insert(file.to_string(), sha256_hex(contents));
        }
        let manifest = Manifest {
            stage: stage.into(),
            config_hash: self.config_hash(stage),
            inputs,
            outputs,
            counts: out.counts.clone(),
            item_failures: out.item_failures,
        };
        write_atomic(&self.manifest_path(stage), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
        Ok(StageReport { stage: stage.into(), up_to_date: false, counts: out.counts, item_failures: out.item_failures })
    }

    /// Run every stage in order, stopping at the first stage failure.
    pub fn run_all(&self) -> Result<Vec<StageReport>> {
        STAGES.iter().map(|s| self.run_stage(s)).collect()
    }

    fn perturb(&self) -> Result<StageOutput> {
        let per_case: Vec<(String, Result<Vec<PerturbedTemplate>>)> =
            self.cases.par_iter().map(|c| (c.case_id.clone(), perturb_rules(c, &self.cfg.rules))).collect();
        let mut out = StageOutput::default();
        let mut templates = Vec::new();
        for (id, r) in per_case {
            match r {
                Ok(t) => templates.extend(t),
                Err(e) => {
                    log::warn!("perturb {id}: {e}");
                    out.item_failures += 1;
                }
            }
        }
        for t in &templates {
            *out.counts.entry(format!("rule_{:02}", t.rule_id)).or_default() += 1;
        }
        out.counts.insert("cases".into(), self.cases.len());
        out.counts.insert("templates".into(), templates.len());
        out.files.push(("templates.jsonl", to_jsonl(&templates)?));
        Ok(out)
    }

    fn obfuscate(&self) -> Result<StageOutput> {
        let templates: Vec<PerturbedTemplate> = read_jsonl(&self.path("templates.jsonl"))?;
        let mut maps = Vec::new();
        for c in &self.cases {
            maps.push(RenamingRecord { case_id: c.case_id.clone(), map: build_renaming(c, Scope::Method)? });
        }
        let by_case: HashMap<&str, (&AdaptationCase, &RenamingMap)> =
            self.cases.iter().zip(&maps).map(|(c, m)| (c.case_id.as_str(), (c, &m.map))).collect();
        let mut jobs = Vec::new();
        let mut out = StageOutput::default();
        for t in &templates {
            let Some(&(case, map)) = by_case.get(t.case_id.as_str()) else {
                return Err(Error::Config(format!("template {} names an unknown case", t.id())));
            };
            let built = obfuscate_code(&t.template_source, map).and_then(|src| {
                let obf = PerturbedTemplate { template_source: src, ..t.clone() };
                build_infill_prompt(&obf, &obfuscate_text(&case.requirement, map), &case.lib_deps)
            });
            match built {
                Ok(prompt) => jobs.push(InfillJob { template_id: t.id(), case_id: t.case_id.clone(), prompt }),
                Err(e) => {
                    log::warn!("obfuscate {}: {e}", t.id());
                    out.item_failures += 1;
                }
            }
        }
        out.counts.insert("prompts".into(), jobs.len());
        out.files.push(("prompts.jsonl", to_jsonl(&jobs)?));
        out.files.push(("renamings.jsonl", to_jsonl(&maps)?));
        Ok(out)
    }

    fn generate(&self) -> Result<StageOutput> {
        let jobs: Vec<InfillJob> = read_jsonl(&self.path("prompts.jsonl"))?;
        let clients = self.clients()?;
        let work: Vec<(&Client, &InfillJob)> = clients.iter().flat_map(|c| jobs.iter().map(move |j| (c, j))).collect();
        let records: Vec<GenerationRecord> = work
            .par_iter()
            .map(|(client, job)| GenerationRecord {
                template_id: job.template_id.clone(),
                case_id: job.case_id.clone(),
                generation: client.generate(&job.prompt),
            })
            .collect();
        let mut out = StageOutput {
            item_failures: records.iter().filter(|r| r.generation.failed()).count(),
            ..Default::default()
        };
        out.counts.insert("generations".into(), records.len());
        out.counts.insert("failed".into(), out.item_failures);
        out.files.push(("generations.jsonl", to_jsonl(&records)?));
        Ok(out)
    }

    fn identify(&self) -> Result<StageOutput> {
        let templates: Vec<PerturbedTemplate> = read_jsonl(&self.path("templates.jsonl"))?;
        let templates: HashMap<String, PerturbedTemplate> = templates.into_iter().map(|t| (t.id(), t)).collect();
        let gens: Vec<GenerationRecord> = read_jsonl(&self.path("generations.jsonl"))?;
        let maps = self.method_maps()?;
        let mut identifier = Identifier::new(self.runner.as_ref());
        identifier.timeout = self.cfg.timeout();
        let results: Vec<Result<(ClassificationRecord, Option<BugInstance>)>> = gens
            .par_iter()
            .map(|g| {
                let case = self.case(&g.case_id)?;
                let t = templates
                    .get(&g.template_id)
                    .ok_or_else(|| Error::Config(format!("generation for unknown template {}", g.template_id)))?;
                let c = identifier.classify_variant(case, t, &g.generation, &maps[&g.case_id]);
                let rec = ClassificationRecord {
                    instance_id: format!("{}@{}", t.id(), g.generation.model_id),
                    case_id: g.case_id.clone(),
                    model_id: g.generation.model_id.clone(),
                    verdict: c.verdict,
                    details: c.details,
                };
                Ok((rec, c.instance))
            })
            .collect();
        let mut records = Vec::new();
        let mut instances = Vec::new();
        for r in results {
            let (rec, inst) = r?;
            records.push(rec);
            instances.extend(inst);
        }
        let kept = clean(instances);
        let kept_ids: std::collections::HashSet<&str> = kept.iter().map(|i| i.id.as_str()).collect();
        for rec in &mut records {
            if rec.verdict == Verdict::Valid && !kept_ids.contains(rec.instance_id.as_str()) {
                rec.verdict = Verdict::Duplicate;
                rec.details = "same tokens as an earlier instance".into();
            }
        }
        let mut out = StageOutput::default();
        for v in Verdict::ALL {
            out.counts.insert(format!("{v:?}").to_lowercase(), records.iter().filter(|r| r.verdict == v).count());
        }
        out.counts.insert("instances".into(), kept.len());
        out.files.push(("classifications.jsonl", to_jsonl(&records)?));
        out.files.push(("ctxbugs.jsonl", to_jsonl(&kept)?));
        out.files.push(("summary.csv", summary_csv(&summarize(&kept))));
        Ok(out)
    }

    fn method_maps(&self) -> Result<HashMap<String, RenamingMap>> {
        self.cases.iter().map(|c| Ok((c.case_id.clone(), build_renaming(c, Scope::Method)?))).collect()
    }

    fn baseline(&self) -> Result<StageOutput> {
        let ctxbugs: Vec<BugInstance> = read_jsonl(&self.path("ctxbugs.jsonl"))?;
        let maps = self.method_maps()?;
        let clients = self.clients()?;
        let mut identifier = Identifier::new(self.runner.as_ref());
        identifier.timeout = self.cfg.timeout();
        let masked: Vec<MaskedCode> =
            ctxbugs.iter().map(|i| build_without_ctxbugs(self.case(&i.case_id)?, i)).collect::<Result<_>>()?;
        let results: Vec<Result<(ClassificationRecord, bool, Vec<BugInstance>)>> = ctxbugs
            .par_iter()
            .map(|inst| {
                // the model that produced the CtxBug also implants the IsoBug
                let client =
                    clients.iter().find(|c| c.config().model_id == inst.generator_model_id).unwrap_or(&clients[0]);
                let case = self.case(&inst.case_id)?;
                let (attempt, kept) = build_isobugs(case, inst, client, &identifier, &maps[&inst.case_id])?;
                let rec = ClassificationRecord {
                    instance_id: format!("{}/iso@{}", inst.id, attempt.generation.model_id),
                    case_id: inst.case_id.clone(),
                    model_id: attempt.generation.model_id.clone(),
                    verdict: attempt.classification.verdict,
                    details: attempt.classification.details,
                };
                Ok((rec, attempt.generation.failed(), kept))
            })
            .collect();
        let mut attempts = Vec::new();
        let mut isobugs = Vec::new();
        let mut out = StageOutput::default();
        for r in results {
            let (rec, failed, kept) = r?;
            out.item_failures += usize::from(failed);
            attempts.push(rec);
            isobugs.extend(kept);
        }
        let isobugs = clean(isobugs);
        out.counts.insert("masked".into(), masked.len());
        out.counts.insert("isobug_attempts".into(), attempts.len());
        out.counts.insert("isobugs".into(), isobugs.len());
        out.files.push(("masked.jsonl", to_jsonl(&masked)?));
        out.files.push(("isobug_attempts.jsonl", to_jsonl(&attempts)?));
        out.files.push(("isobugs.jsonl", to_jsonl(&isobugs)?));
        Ok(out)
    }

    fn evaluate(&self) -> Result<StageOutput> {
        let ctxbugs: Vec<BugInstance> = read_jsonl(&self.path("ctxbugs.jsonl"))?;
        let masked: Vec<MaskedCode> = read_jsonl(&self.path("masked.jsonl"))?;
        let isobugs: Vec<BugInstance> = read_jsonl(&self.path("isobugs.jsonl"))?;
        let masked: HashMap<&str, &MaskedCode> = masked.iter().map(|m| (m.instance_id.as_str(), m)).collect();
        let mut inputs = Vec::new();
        for inst in &ctxbugs {
            inputs.push(AdaptationInput::with_ctxbugs(inst));
            let m =
                masked.get(inst.id.as_str()).ok_or_else(|| Error::Config(format!("no masked code for {}", inst.id)))?;
            inputs.push(AdaptationInput::without_ctxbugs(m, inst));
        }
        inputs.extend(isobugs.iter().map(AdaptationInput::with_isobugs));
        let clients = self.clients()?;
        let mut evaluator = Evaluator::new(self.runner.as_ref());
        evaluator.timeout = self.cfg.timeout();
        let work: Vec<(&Client, &AdaptationInput)> =
            clients.iter().flat_map(|c| inputs.iter().map(move |i| (c, i))).collect();
        let records: Vec<EvalRecord> = work
            .par_iter()
            .map(|(client, input)| {
                let case = self.case(&input.case_id)?;
                Ok(evaluator.run_adaptation(case, input, client).unwrap_or_else(|e| EvalRecord {
                    model_id: client.config().model_id.clone(),
                    setting: input.setting,
                    case_id: input.case_id.clone(),
                    instance_id: input.instance_id.clone(),
                    rule_id: input.rule_id,
                    passed: false,
                    bugs_total: input.locations.len(),
                    bugs_resolved: 0,
                    atp: None,
                    atp_alignment: None,
                    prompt_hash: String::new(),
                    output_method: String::new(),
                    flag: Some(format!("prompt: {e}")),
                }))
            })
            .collect::<Result<_>>()?;
        let failed = records
            .iter()
            .filter(|r| {
                r.flag.as_deref().is_some_and(|f| f.starts_with("generation failed") || f.starts_with("prompt:"))
            })
            .count();
        let mut out = StageOutput { item_failures: failed, ..Default::default() };
        for s in Setting::ALL {
            out.counts.insert(s.name().into(), records.iter().filter(|r| r.setting == s).count());
        }
        out.counts.insert("flagged".into(), records.iter().filter(|r| r.flag.is_some()).count());
        out.files.push(("records.jsonl", to_jsonl(&records)?));
        Ok(out)
    }

    fn report(&self) -> Result<StageOutput> {
        let records: Vec<EvalRecord> = read_jsonl(&self.path("records.jsonl"))?;
        let table = report(&records);
        let bugs: Vec<BugInstance> = read_jsonl(&self.path("ctxbugs.jsonl"))?;
        for n in &table.notes {
            log::info!("report: {n}");
        }
        let mut out = StageOutput::default();
        out.counts.insert("rows".into(), table.rows.len());
        out.files.push(("report.csv", table.to_csv()));
        out.files.push(("report.json", table.to_json()? + "\n"));
        out.files.push(("dataset.csv", summary_csv(&summarize(&bugs))));
        Ok(out)
    }
}

#[derive(Default)]
struct StageOutput {
    files: Vec<(&'static str, String)>,
    counts: BTreeMap<String, usize>,
    item_failures: usize,
}
