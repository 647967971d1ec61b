// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ctxbug::corpus::{self, Severity, StdlibAllowlist};
use ctxbug::llm::ModelConfig;
use ctxbug::pipeline::{self, Pipeline, PipelineConfig, StageReport};

#[derive(Parser)]
#[command(name = "ctxbug", version, about = "Generate, validate and evaluate context adaptation bugs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a corpus file and list skipped records
    ValidateCorpus {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Convert a ClassEval JSON release into a corpus file
    ConvertClasseval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive infill templates from the corpus
    Perturb(StageArgs),
    /// Rename identifiers and build infill prompts
    Obfuscate(StageArgs),
    /// Query the models with the infill prompts
    Generate(StageArgs),
    /// Classify generations into CtxBug instances
    Identify(StageArgs),
    /// Build the masked and IsoBug comparison sets
    Baseline(StageArgs),
    /// Run the adaptation evaluation
    Evaluate(StageArgs),
    /// Write report tables
    Report(StageArgs),
    /// Run every stage in order
    Run(StageArgs),
}

#[derive(Args, Clone)]
struct StageArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Rule ids, e.g. `1,3,5-7`
    #[arg(long, default_value = "1-10")]
    rules: String,
    /// Comma-separated model ids, or a JSON file with a list of model configs
    #[arg(long, default_value = "stub-model")]
    models: String,
    /// Answer offline with the fixture backend and mock test runner
    #[arg(long)]
    stub: bool,
    /// JSONL table of canned responses used before the fixture backend
    #[arg(long, requires = "stub")]
    stub_table: Option<PathBuf>,
    /// Test shim command; the job and result paths are appended
    #[arg(long, env = "CTXBUG_SHIM")]
    shim: Option<String>,
    /// Per-program test timeout in seconds
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_rules(spec: &str) -> anyhow::Result<Vec<u8>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u8, u8) = (a.trim().parse()?, b.trim().parse()?);
                if a > b {
                    bail!("empty rule range `{part}`");
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().with_context(|| format!("bad rule id `{part}`"))?),
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn parse_models(spec: &str) -> anyhow::Result<Vec<ModelConfig>> {
    if spec.ends_with(".json") {
        let text = std::fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
        return Ok(serde_json::from_str(&text)?);
    }
    Ok(spec.split(',').map(str::trim).filter(|m| !m.is_empty()).map(ModelConfig::new).collect())
}

impl StageArgs {
    fn config(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = PipelineConfig::new(&self.corpus, &self.out);
        cfg.rules = parse_rules(&self.rules)?;
        cfg.models = parse_models(&self.models)?;
        cfg.stub = self.stub;
        cfg.stub_table = self.stub_table.clone();
        cfg.shim = self.shim.as_deref().map(|s| s.split_whitespace().map(String::from).collect()).unwrap_or_default();
        cfg.timeout_secs = self.timeout;
        cfg.jobs = self.jobs;
        cfg.seed = self.seed;
        Ok(cfg)
    }
}

fn print_report(r: &StageReport) {
    if r.up_to_date {
        println!("{}: up-to-date", r.stage);
        return;
    }
    let counts: Vec<String> = r.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("{}: {}", r.stage, counts.join(" "));
    if r.item_failures > 0 {
        println!("{}: {} item(s) failed", r.stage, r.item_failures);
    }
}

fn run_stages(args: &StageArgs, stages: &[&str]) -> ExitCode {
    let pipeline = match args.config().and_then(|c| Ok(Pipeline::new(c)?)) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(pipeline::EXIT_STAGE_FAILED as u8);
        }
    };
    let mut code = pipeline::EXIT_OK;
    for stage in stages {
        match pipeline.run_stage(stage) {
            Ok(r) => {
                print_report(&r);
                code = code.max(r.exit_code());
            }
            Err(e) => {
                eprintln!("error: {stage}: {e}");
                return ExitCode::from(pipeline::exit_code_for(&e) as u8);
            }
        }
    }
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let stdlib = StdlibAllowlist::python310();
    match cli.command {
        Command::ValidateCorpus { corpus } => match corpus::load_corpus(&corpus, &stdlib) {
            Ok(c) => {
                for d in &c.diagnostics {
                    println!("{d}");
                }
                println!("{} case(s) valid", c.cases.len());
                let skipped = c.diagnostics.iter().any(|d| d.severity == Severity::Skipped);
                ExitCode::from(if skipped { pipeline::EXIT_ITEM_FAILURES } else { pipeline::EXIT_OK } as u8)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(pipeline::EXIT_STAGE_FAILED as u8)
            }
        },
        Command::ConvertClasseval { input, out } => {
            let result = std::fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))
                .and_then(|json| Ok(corpus::classeval::convert(&json, &stdlib)?))
                .and_then(|c| {
                    let file = std::fs::File::create(&out)?;
                    corpus::write_corpus(&c.cases, std::io::BufWriter::new(file))?;
                    Ok(c)
                });
            match result {
                Ok(c) => {
                    for d in &c.diagnostics {
                        println!("{d}");
                    }
                    println!("{} case(s) written to {}", c.cases.len(), out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(pipeline::EXIT_STAGE_FAILED as u8)
                }
            }
        }
        Command::Perturb(a) => run_stages(&a, &["perturb"]),
        Command::Obfuscate(a) => run_stages(&a, &["obfuscate"]),
        Command::Generate(a) => run_stages(&a, &["generate"]),
        Command::Identify(a) => run_stages(&a, &["identify"]),
        Command::Baseline(a) => run_stages(&a, &["baseline"]),
        Command::Evaluate(a) => run_stages(&a, &["evaluate"]),
        Command::Report(a) => run_stages(&a, &["report"]),
        Command::Run(a) => run_stages(&a, &pipeline::STAGES),
    }
}
