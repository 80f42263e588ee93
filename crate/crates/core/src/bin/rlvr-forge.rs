use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rlvr_forge::config::RunConfig;
use rlvr_forge::corpus::{
    anonymize, assign_difficulty, format_filter, mix_corpus, public_count, verify_labels, FilterOutcome,
    GraphOracleValidator, HttpValidator, KeyEchoValidator, QAItem, RejectReason, Validator,
};
use rlvr_forge::curriculum::{mine_hard_samples, run_training};
use rlvr_forge::distill::{build_sft_dataset, FixtureTeacher, HttpTeacher, PromptTemplates, TeacherClient};
use rlvr_forge::evalharness::{
    macro_report, render_table, run_benchmark, BenchmarkSpec, HttpAdapter, ModelAdapter, ModelReport, PolicyAdapter,
};
use rlvr_forge::grpo::{Checkpoint, Prompt};
use rlvr_forge::kgstore::{ingest_graph, Graph};
use rlvr_forge::{jsonl, rng, synth, toy, Error, Result};

const LOG_ENV: &str = "RLVR_FORGE_LOG";
const EVAL_REPORT: &str = "eval_report.json";

/// Medical reasoning data and RL pipeline: graph-driven question synthesis,
/// corpus refinement, chain-of-thought distillation, curriculum GRPO
/// training and benchmark evaluation.
///
/// Exit codes: 0 success, 2 configuration error, 3 data error, 4 external
/// service error. Set RLVR_FORGE_LOG (error, warn, info, debug, trace) to
/// control logging.
#[derive(Parser)]
#[command(name = "rlvr-forge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run config; its values override flags and defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random choice in the command.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Directory for outputs and the resolved config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate multiple-choice questions from a knowledge graph.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Knowledge-graph JSON-Lines file.
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Questions to generate.
        #[arg(long)]
        count: Option<usize>,
        /// Options per question.
        #[arg(long)]
        options: Option<usize>,
        /// Output corpus (default: <out-dir>/synth.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Filter, verify, anonymize, tier and optionally mix a corpus.
    Refine {
        #[command(flatten)]
        common: Common,
        /// Raw corpus, one JSON record per line.
        #[arg(long = "in", value_name = "FILE")]
        input: Option<PathBuf>,
        /// mock-correct, mock-graph or http.
        #[arg(long)]
        validator: Option<String>,
        /// Graph for the mock-graph validator.
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Synthetic corpus to mix with the verified items.
        #[arg(long)]
        synthetic: Option<PathBuf>,
        /// Items in the mixed corpus (default: largest feasible).
        #[arg(long)]
        mix_size: Option<usize>,
        /// Verified output (default: <out-dir>/refined.jsonl); flagged items
        /// go to <stem>.flagged.jsonl, rejects to <stem>.rejected.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run two-stage curriculum GRPO on a tiered corpus.
    Train {
        #[command(flatten)]
        common: Common,
        /// Tiered corpus (JSON Lines).
        #[arg(long = "in", value_name = "FILE")]
        input: Option<PathBuf>,
    },
    /// Mine items a trained policy repeatedly fails.
    Mine {
        #[command(flatten)]
        common: Common,
        /// Tiered corpus (JSON Lines).
        #[arg(long = "in", value_name = "FILE")]
        input: Option<PathBuf>,
        /// Policy checkpoint written by train.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output pool (default: <out-dir>/hard_pool.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a chain-of-thought SFT set from a teacher.
    Distill {
        #[command(flatten)]
        common: Common,
        /// Items to distill (JSON Lines).
        #[arg(long = "in", value_name = "FILE")]
        input: Option<PathBuf>,
        /// fixture or http.
        #[arg(long)]
        teacher: Option<String>,
        /// Recorded transcript for the fixture teacher.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// SFT output (default: <out-dir>/sft.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a model adapter on benchmark files.
    Eval {
        #[command(flatten)]
        common: Common,
        /// policy or http.
        #[arg(long)]
        adapter: Option<String>,
        /// Policy checkpoint for the policy adapter.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Benchmark file or directory of *.jsonl files; repeatable.
        #[arg(long)]
        bench: Vec<PathBuf>,
        /// Row label in the report table.
        #[arg(long)]
        model: Option<String>,
    },
    /// Compare evaluation runs; the first is the base for the delta column.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run directory containing eval_report.json; repeatable.
        #[arg(long = "in", value_name = "DIR")]
        runs: Vec<PathBuf>,
    },
    /// Write the synthetic linearly realizable training corpus.
    ToyCorpus {
        #[command(flatten)]
        common: Common,
        /// Items in the corpus, adversarial twins excluded.
        #[arg(long)]
        count: Option<usize>,
        /// Indistinguishable item pairs with different keys.
        #[arg(long)]
        adversarial_pairs: Option<usize>,
        /// Output (default: <out-dir>/toy_corpus.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Command-line overrides as a TOML table keyed by dotted config paths.
#[derive(Default)]
struct Overrides(toml::Table);

impl Overrides {
    fn set<V: Into<toml::Value>>(&mut self, key: &str, value: Option<V>) {
        let Some(value) = value else { return };
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().expect("nonempty key");
        let mut table = &mut self.0;
        for p in parts {
            table = table
                .entry(p)
                .or_insert_with(|| toml::Value::Table(Default::default()))
                .as_table_mut()
                .expect("override tables only");
        }
        table.insert(last.to_string(), value.into());
    }

    fn path(&mut self, key: &str, value: Option<&PathBuf>) {
        self.set(key, value.map(|p| p.to_string_lossy().into_owned()));
    }

    fn paths(&mut self, key: &str, values: &[PathBuf]) {
        if !values.is_empty() {
            let arr: Vec<toml::Value> = values.iter().map(|p| p.to_string_lossy().into_owned().into()).collect();
            self.set(key, Some(arr));
        }
    }

    fn usize(&mut self, key: &str, value: Option<usize>) {
        self.set(key, value.map(|v| v as i64));
    }
}

fn resolve(common: &Common, mut ov: Overrides, out: Option<&PathBuf>) -> Result<RunConfig> {
    if let Some(seed) = common.seed {
        let seed = i64::try_from(seed).map_err(|_| Error::ConfigInvalid(format!("seed {seed} exceeds {}", i64::MAX)))?;
        ov.set("seed", Some(seed));
    }
    ov.usize("jobs", common.jobs);
    let out_dir = common
        .out_dir
        .clone()
        .or_else(|| out.and_then(|o| o.parent()).filter(|p| !p.as_os_str().is_empty()).map(Path::to_path_buf));
    ov.path("paths.out_dir", out_dir.as_ref());
    ov.path("paths.out", out);
    let config = RunConfig::resolve(common.config.as_deref(), ov.0)?;
    if config.jobs > 0 {
        // only fails when a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(config.jobs).build_global();
    }
    let text = config.to_toml()?;
    let written = config.write_resolved()?;
    eprintln!("# resolved config ({})\n{text}", written.display());
    Ok(config)
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::ConfigInvalid(format!("missing {what}")))
}

fn load_graph(path: &Path) -> Result<Graph> {
    let ingested = ingest_graph(path)?;
    if ingested.duplicate_edges_dropped > 0 {
        log::warn!("dropped {} duplicate edges", ingested.duplicate_edges_dropped);
    }
    Ok(ingested.graph)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}.jsonl"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_synth(config: &RunConfig) -> Result<()> {
    let graph = load_graph(required(&config.paths.graph, "paths.graph (--graph)")?)?;
    let questions = synth::generate_corpus(&graph, &config.synth, config.count, config.seed)?;
    let items: Vec<QAItem> = questions.into_iter().map(QAItem::from).collect();
    let out = config.out_file("synth.jsonl");
    jsonl::write(&out, &items)?;
    println!("wrote {} items to {}", items.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct RejectRecord {
    line: usize,
    id: Option<String>,
    #[serde(flatten)]
    reason: RejectReason,
}

fn screen(path: &Path) -> Result<(Vec<QAItem>, Vec<RejectRecord>)> {
    let reader = jsonl::open(path)?;
    let (mut accepted, mut rejected) = (Vec::new(), Vec::new());
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (outcome, id) = match serde_json::from_str::<serde_json::Value>(&line) {
            Ok(v) => {
                let id = v.get("id").and_then(|i| i.as_str()).map(str::to_string);
                (format_filter(&v), id)
            }
            Err(e) => (FilterOutcome::Rejected(RejectReason::Malformed(e.to_string())), None),
        };
        match outcome {
            FilterOutcome::Accepted(item) => accepted.push(item),
            FilterOutcome::Rejected(reason) => {
                log::warn!("{}:{}: rejected {:?}: {reason:?}", path.display(), n + 1, id);
                rejected.push(RejectRecord { line: n + 1, id, reason });
            }
        }
    }
    Ok((accepted, rejected))
}

/// Largest mix size whose public and synthetic shares both fit.
fn feasible_mix_size(n_public: usize, n_synth: usize, fraction: f64) -> usize {
    let mut size = n_public + n_synth;
    while size > 0 {
        let p = public_count(size, fraction);
        if p <= n_public && size - p <= n_synth {
            break;
        }
        size -= 1;
    }
    size
}

fn cmd_refine(config: &RunConfig) -> Result<()> {
    let rc = &config.refine;
    let graph;
    let validator: Box<dyn Validator + '_> = match rc.validator.as_str() {
        "mock-correct" => Box::new(KeyEchoValidator),
        "mock-graph" => {
            graph = load_graph(required(&config.paths.graph, "paths.graph for mock-graph")?)?;
            Box::new(GraphOracleValidator { graph: &graph })
        }
        "http" => {
            let endpoint = rc
                .endpoint
                .clone()
                .ok_or_else(|| Error::ConfigInvalid("refine.endpoint required for http validator".into()))?;
            Box::new(HttpValidator::new(endpoint))
        }
        other => {
            return Err(Error::ConfigInvalid(format!(
                "unknown validator mode `{other}` (expected mock-correct, mock-graph or http)"
            )))
        }
    };
    let input = required(&config.paths.input, "paths.input (--in)")?;
    let (mut items, rejected) = screen(input)?;
    if rc.anonymize {
        for item in &mut items {
            item.stem = anonymize(&item.stem);
            for text in item.options.values_mut() {
                *text = anonymize(text);
            }
        }
    }
    let verification = verify_labels(&items, validator.as_ref(), rc.trials)?;
    let mut verified = verification
        .verified
        .iter()
        .map(|i| assign_difficulty(i, &rc.classifier, false))
        .collect::<Result<Vec<_>>>()?;
    if let Some(synthetic_path) = &config.paths.synthetic {
        let synthetic = jsonl::read::<QAItem>(synthetic_path)?
            .iter()
            .map(|i| assign_difficulty(i, &rc.classifier, false))
            .collect::<Result<Vec<_>>>()?;
        let size = rc
            .mix_size
            .unwrap_or_else(|| feasible_mix_size(verified.len(), synthetic.len(), rc.public_fraction));
        let mut mix_rng = rng::stream(config.seed, &[0x313]);
        verified = mix_corpus(&verified, &synthetic, rc.public_fraction, size, &mut mix_rng)?;
    }
    let out = config.out_file("refined.jsonl");
    jsonl::write(&out, &verified)?;
    jsonl::write(&sibling(&out, "flagged"), &verification.flagged)?;
    jsonl::write(&sibling(&out, "rejected"), &rejected)?;
    println!(
        "{} verified, {} flagged, {} rejected -> {}",
        verified.len(),
        verification.flagged.len(),
        rejected.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(config: &RunConfig) -> Result<()> {
    let corpus: Vec<QAItem> = jsonl::read(required(&config.paths.input, "paths.input (--in)")?)?;
    let outcome = run_training(&corpus, &config.train, config.seed)?;
    let dir = &config.paths.out_dir;
    jsonl::write(&dir.join("trace.jsonl"), &outcome.trace)?;
    write_json(&dir.join("train_report.json"), &outcome.report)?;
    let ck = Checkpoint {
        params: outcome.params,
        hash_seed: config.train.grpo.hash_seed,
        config_hash: config.digest()?,
    };
    let ck_path = config.paths.checkpoint.clone().unwrap_or_else(|| dir.join("checkpoint.bin"));
    ck.save(&ck_path)?;
    let r = &outcome.report;
    println!(
        "stage one {} iters, stage two {} iters, transition {:?}; greedy accuracy {:.3} -> {:.3}; final hard pool {}",
        r.iterations_stage1,
        r.iterations_stage2,
        r.transition_iteration,
        r.initial_accuracy.overall,
        r.final_accuracy.overall,
        r.final_hard_pool.len()
    );
    Ok(())
}

fn cmd_mine(config: &RunConfig) -> Result<()> {
    let corpus: Vec<QAItem> = jsonl::read(required(&config.paths.input, "paths.input (--in)")?)?;
    let ck = Checkpoint::load(required(&config.paths.checkpoint, "paths.checkpoint (--checkpoint)")?)?;
    let hasher = ck.hasher();
    let prompts: Vec<Prompt> = corpus.iter().map(|i| Prompt::from_item(i, &hasher)).collect();
    let mut mine_rng = rng::stream(config.seed, &[0x3141]);
    let pool = mine_hard_samples(&ck.params, &corpus, &prompts, &config.train.curriculum, &mut mine_rng)?;
    let out = config.out_file("hard_pool.jsonl");
    jsonl::write(&out, &pool)?;
    println!("{} of {} items in the hard pool -> {}", pool.len(), corpus.len(), out.display());
    Ok(())
}

fn cmd_distill(config: &RunConfig) -> Result<()> {
    let teacher: Box<dyn TeacherClient> = match config.teacher.mode.as_str() {
        "fixture" => Box::new(FixtureTeacher::load(required(
            &config.paths.transcript,
            "paths.transcript (--transcript)",
        )?)?),
        "http" => Box::new(HttpTeacher::new(config.teacher.endpoint.clone().ok_or_else(|| {
            Error::ConfigInvalid("teacher.endpoint required for http teacher".into())
        })?)),
        other => {
            return Err(Error::ConfigInvalid(format!(
                "unknown teacher mode `{other}` (expected fixture or http)"
            )))
        }
    };
    let items: Vec<QAItem> = jsonl::read(required(&config.paths.input, "paths.input (--in)")?)?;
    let dataset = build_sft_dataset(&items, teacher.as_ref(), &config.distill, &PromptTemplates::default())?;
    let out = config.out_file("sft.jsonl");
    jsonl::write(&out, &dataset.records)?;
    write_json(&config.paths.out_dir.join("distill_report.json"), &dataset.report)?;
    let r = &dataset.report;
    println!(
        "passed_first {}, passed_refined {}, dropped {} -> {}",
        r.passed_first,
        r.passed_refined,
        r.dropped,
        out.display()
    );
    Ok(())
}

fn bench_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.display().to_string()));
    }
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

/// Spec for a bare benchmark file: named by its stem, with the widest
/// option set found in the file.
fn inferred_spec(path: &Path) -> Result<BenchmarkSpec> {
    let items: Vec<QAItem> = jsonl::read(path)?;
    let n_options = items.iter().map(|i| i.options.len()).max().unwrap_or(2);
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    BenchmarkSpec::new(name, path, n_options, None)
}

fn cmd_eval(config: &RunConfig) -> Result<()> {
    let ec = &config.eval;
    let adapter: Box<dyn ModelAdapter> = match ec.adapter.as_str() {
        "policy" => Box::new(PolicyAdapter::load(required(
            &config.paths.checkpoint,
            "paths.checkpoint (--checkpoint)",
        )?)?),
        "http" => Box::new(HttpAdapter::new(ec.endpoint.clone().ok_or_else(|| {
            Error::ConfigInvalid("eval.endpoint required for http adapter".into())
        })?)),
        other => {
            return Err(Error::ConfigInvalid(format!(
                "unknown adapter `{other}` (expected policy or http)"
            )))
        }
    };
    let mut specs = ec.benchmarks.clone();
    for p in &config.paths.bench {
        for f in bench_files(p)? {
            specs.push(inferred_spec(&f)?);
        }
    }
    if specs.is_empty() {
        return Err(Error::ConfigInvalid("no benchmarks given (--bench or eval.benchmarks)".into()));
    }
    let dir = &config.paths.out_dir;
    let mut reports = Vec::new();
    for spec in &specs {
        let (report, results) = run_benchmark(adapter.as_ref(), spec)?;
        jsonl::write(&dir.join(format!("{}.results.jsonl", spec.name)), &results)?;
        reports.push(report);
    }
    let model = macro_report(&ec.model, reports)?;
    write_json(&dir.join(EVAL_REPORT), &model)?;
    print!("{}", render_table(std::slice::from_ref(&model), false));
    Ok(())
}

fn cmd_report(config: &RunConfig) -> Result<()> {
    if config.paths.runs.is_empty() {
        return Err(Error::ConfigInvalid("report needs at least one --in run directory".into()));
    }
    let models = config
        .paths
        .runs
        .iter()
        .map(|dir| {
            let path = dir.join(EVAL_REPORT);
            let reader = jsonl::open(&path)?;
            Ok(serde_json::from_reader::<_, ModelReport>(reader)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let table = render_table(&models, true);
    std::fs::write(config.paths.out_dir.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_toy(config: &RunConfig) -> Result<()> {
    let items = toy::toy_corpus(&config.toy, config.seed)?;
    let out = config.out_file("toy_corpus.jsonl");
    jsonl::write(&out, &items)?;
    println!("wrote {} items to {}", items.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut ov = Overrides::default();
    match &cli.command {
        Command::Synth { common, graph, count, options, out } => {
            ov.path("paths.graph", graph.as_ref());
            ov.usize("count", *count);
            ov.usize("synth.n_options", *options);
            cmd_synth(&resolve(common, ov, out.as_ref())?)
        }
        Command::Refine { common, input, validator, graph, synthetic, mix_size, out } => {
            ov.path("paths.input", input.as_ref());
            ov.set("refine.validator", validator.clone());
            ov.path("paths.graph", graph.as_ref());
            ov.path("paths.synthetic", synthetic.as_ref());
            ov.usize("refine.mix_size", *mix_size);
            cmd_refine(&resolve(common, ov, out.as_ref())?)
        }
        Command::Train { common, input } => {
            ov.path("paths.input", input.as_ref());
            cmd_train(&resolve(common, ov, None)?)
        }
        Command::Mine { common, input, checkpoint, out } => {
            ov.path("paths.input", input.as_ref());
            ov.path("paths.checkpoint", checkpoint.as_ref());
            cmd_mine(&resolve(common, ov, out.as_ref())?)
        }
        Command::Distill { common, input, teacher, transcript, out } => {
            ov.path("paths.input", input.as_ref());
            ov.set("teacher.mode", teacher.clone());
            ov.path("paths.transcript", transcript.as_ref());
            cmd_distill(&resolve(common, ov, out.as_ref())?)
        }
        Command::Eval { common, adapter, checkpoint, bench, model } => {
            ov.set("eval.adapter", adapter.clone());
            ov.path("paths.checkpoint", checkpoint.as_ref());
            ov.paths("paths.bench", bench);
            ov.set("eval.model", model.clone());
            cmd_eval(&resolve(common, ov, None)?)
        }
        Command::Report { common, runs } => {
            ov.paths("paths.runs", runs);
            cmd_report(&resolve(common, ov, None)?)
        }
        Command::ToyCorpus { common, count, adversarial_pairs, out } => {
            ov.usize("toy.n_items", *count);
            ov.usize("toy.adversarial_pairs", *adversarial_pairs);
            cmd_toy(&resolve(common, ov, out.as_ref())?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
