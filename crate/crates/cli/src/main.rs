//! Command-line front end for the story-point estimation benchmark.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for data errors
//! (unreadable or malformed datasets and configs), 3 for runtime failures
//! (training, evaluation, or artifact writes going wrong).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use spbench_core::bench::{
    build_project_runs, config_digest, emit_tables, run_experiment, BenchError, ExperimentConfig,
    Method, RunRecord, TableStyle,
};
use spbench_core::corpus::{
    apply_choet_filter, apply_porru_filter, ingest_csv, profile, write_csv, CapMode, IssueDataset,
    Scenario,
};
use spbench_core::deepse::{self, DeepSEConfig};
use spbench_core::stats::{compare_methods, StatConfig};
use spbench_core::tfidf::TfidfSvmModel;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

struct CmdError {
    code: u8,
    message: String,
}

type CmdResult<T> = Result<T, CmdError>;

fn usage_err(message: impl Into<String>) -> CmdError {
    CmdError { code: EXIT_USAGE, message: message.into() }
}

fn data_err(message: impl ToString) -> CmdError {
    CmdError { code: EXIT_DATA, message: message.to_string() }
}

fn runtime_err(message: impl ToString) -> CmdError {
    CmdError { code: EXIT_RUNTIME, message: message.to_string() }
}

#[derive(Parser)]
#[command(
    name = "spbench",
    version,
    about = "Benchmark harness for story-point effort estimators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse dataset CSVs and report their shape and any rejected rows.
    Ingest {
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
    },
    /// Apply a dataset filtering protocol and report or write the result.
    Filter {
        dataset: PathBuf,
        #[arg(long, value_enum)]
        protocol: Protocol,
        /// Write the filtered dataset here instead of only reporting counts.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build and describe the split a scenario would evaluate.
    Split {
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        #[arg(long, default_value = "within_project")]
        scenario: String,
        #[arg(long = "cap-mode", default_value = "none")]
        cap_mode: String,
        /// Write the labelled split plans as JSON.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train one model on a dataset's chronological training part.
    Train {
        dataset: PathBuf,
        /// One of: tfidf_svm, deepse, deepse_nopretrain.
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Config file (JSON or key = value) supplying hyperparameters.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to save the fitted model.
        #[arg(long = "model-out")]
        model_out: Option<PathBuf>,
        /// Where to write the per-epoch training trace (deep models).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a full experiment: split, train, predict, evaluate, compare.
    Evaluate {
        /// Config file (JSON or key = value); flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        datasets: Vec<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
        /// One of: none, train-only, global.
        #[arg(long = "cap-mode")]
        cap_mode: Option<String>,
        #[arg(long = "legacy-offset")]
        legacy_offset: bool,
        /// Repeatable; the first seed is the canonical one.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Comma-separated list, e.g. "random,mean,median,tfidf_svm".
        #[arg(long)]
        methods: Option<String>,
        #[arg(long = "output-dir")]
        output_dir: Option<PathBuf>,
        #[arg(long = "sa-runs")]
        sa_runs: Option<u32>,
    },
    /// Compare prediction CSVs pairwise (rank test plus effect size).
    Stats {
        #[arg(required = true)]
        predictions: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Render the metric and comparison tables of a finished run.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = StyleArg::Markdown)]
        style: StyleArg,
    },
    /// Summarize a dataset: issue types, code snippets, token lengths.
    Profile { dataset: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    /// Keep issues with story points in (0, 100].
    Choet,
    /// Keep planning-poker values on provenance-complete datasets.
    Porru,
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Csv,
    Markdown,
}

impl From<StyleArg> for TableStyle {
    fn from(s: StyleArg) -> TableStyle {
        match s {
            StyleArg::Csv => TableStyle::Csv,
            StyleArg::Markdown => TableStyle::Markdown,
        }
    }
}

fn main() -> ExitCode {
    // die quietly on a closed pipe (`spbench ... | head`) instead of
    // panicking, matching ordinary Unix tool behaviour
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(command: Command) -> CmdResult<()> {
    match command {
        Command::Ingest { datasets } => cmd_ingest(&datasets),
        Command::Filter { dataset, protocol, output } => cmd_filter(&dataset, protocol, output.as_deref()),
        Command::Split { datasets, scenario, cap_mode, output } => {
            cmd_split(&datasets, &scenario, &cap_mode, output.as_deref())
        }
        Command::Train { dataset, method, seed, config, model_out, trace } => {
            cmd_train(&dataset, &method, seed, config.as_deref(), model_out.as_deref(), trace.as_deref())
        }
        Command::Evaluate {
            config,
            datasets,
            scenario,
            cap_mode,
            legacy_offset,
            seeds,
            methods,
            output_dir,
            sa_runs,
        } => {
            let cfg = effective_config(
                config.as_deref(),
                &datasets,
                scenario.as_deref(),
                cap_mode.as_deref(),
                legacy_offset,
                &seeds,
                methods.as_deref(),
                output_dir,
                sa_runs,
            )?;
            cmd_evaluate(&cfg)
        }
        Command::Stats { predictions, alpha } => cmd_stats(&predictions, alpha),
        Command::Report { config, style } => cmd_report(&config, style.into()),
        Command::Profile { dataset } => cmd_profile(&dataset),
    }
}

/// Resolves a dataset path against `SPBENCH_DATA_DIR` when it is relative
/// and does not exist as given.
fn resolve_dataset(path: &Path) -> PathBuf {
    if path.is_absolute() || path.exists() {
        return path.to_path_buf();
    }
    if let Ok(root) = std::env::var("SPBENCH_DATA_DIR") {
        let joined = Path::new(&root).join(path);
        if joined.exists() {
            return joined;
        }
    }
    path.to_path_buf()
}

fn load_dataset(path: &Path) -> CmdResult<IssueDataset> {
    let resolved = resolve_dataset(path);
    let outcome = ingest_csv(&resolved).map_err(data_err)?;
    if let Some(first) = outcome.row_errors.first() {
        return Err(data_err(format!(
            "{}: {} malformed row(s), first at line {}: {}",
            resolved.display(),
            outcome.row_errors.len(),
            first.line,
            first.message
        )));
    }
    Ok(outcome.dataset)
}

fn load_config(path: &Path) -> CmdResult<ExperimentConfig> {
    ExperimentConfig::load(path).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn parse_scenario_flag(s: &str) -> CmdResult<Scenario> {
    Scenario::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Scenario::ALL.iter().map(|v| v.as_str()).collect();
        usage_err(format!("unknown scenario {s:?}; expected one of {}", names.join(", ")))
    })
}

fn parse_cap_flag(s: &str) -> CmdResult<CapMode> {
    CapMode::parse(s)
        .ok_or_else(|| usage_err(format!("unknown cap mode {s:?}; expected none, train-only, or global")))
}

fn parse_method_flag(s: &str) -> CmdResult<Method> {
    Method::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
        usage_err(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
    })
}

fn parse_methods_flag(s: &str) -> CmdResult<Vec<Method>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(parse_method_flag)
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn effective_config(
    config: Option<&Path>,
    datasets: &[PathBuf],
    scenario: Option<&str>,
    cap_mode: Option<&str>,
    legacy_offset: bool,
    seeds: &[u64],
    methods: Option<&str>,
    output_dir: Option<PathBuf>,
    sa_runs: Option<u32>,
) -> CmdResult<ExperimentConfig> {
    let mut cfg = match config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if !datasets.is_empty() {
        cfg.datasets = datasets.to_vec();
    }
    if let Some(s) = scenario {
        cfg.scenario = parse_scenario_flag(s)?;
    }
    if let Some(c) = cap_mode {
        cfg.cap_mode = parse_cap_flag(c)?;
    }
    if legacy_offset {
        cfg.legacy_offset = true;
    }
    if !seeds.is_empty() {
        cfg.seeds = seeds.to_vec();
    }
    if let Some(m) = methods {
        cfg.methods = parse_methods_flag(m)?;
    }
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    if let Some(runs) = sa_runs {
        cfg.sa_runs = runs;
    }
    cfg.datasets = cfg.datasets.iter().map(|p| resolve_dataset(p)).collect();
    Ok(cfg)
}

fn bench_err(e: BenchError) -> CmdError {
    let code = match e {
        BenchError::Config(_) | BenchError::Corpus(_) | BenchError::RunDirCollision(_) => EXIT_DATA,
        _ => EXIT_RUNTIME,
    };
    CmdError { code, message: e.to_string() }
}

fn cmd_ingest(datasets: &[PathBuf]) -> CmdResult<()> {
    let mut rejected = 0usize;
    for path in datasets {
        let resolved = resolve_dataset(path);
        let outcome = ingest_csv(&resolved).map_err(data_err)?;
        println!(
            "{}: project {}, {} issues",
            resolved.display(),
            outcome.dataset.project_key(),
            outcome.dataset.len()
        );
        for err in &outcome.row_errors {
            println!("  rejected line {}: {}", err.line, err.message);
        }
        rejected += outcome.row_errors.len();
    }
    if rejected > 0 {
        return Err(data_err(format!("{rejected} row(s) rejected")));
    }
    Ok(())
}

fn cmd_filter(dataset: &Path, protocol: Protocol, output: Option<&Path>) -> CmdResult<()> {
    let ds = load_dataset(dataset)?;
    let filtered = match protocol {
        Protocol::Choet => apply_choet_filter(&ds),
        Protocol::Porru => apply_porru_filter(&ds).map_err(data_err)?,
    };
    println!(
        "{}: kept {} of {} issues",
        ds.project_key(),
        filtered.len(),
        ds.len()
    );
    if let Some(path) = output {
        write_csv(&filtered, path).map_err(runtime_err)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_split(
    datasets: &[PathBuf],
    scenario: &str,
    cap_mode: &str,
    output: Option<&Path>,
) -> CmdResult<()> {
    let cfg = ExperimentConfig {
        scenario: parse_scenario_flag(scenario)?,
        cap_mode: parse_cap_flag(cap_mode)?,
        datasets: datasets.to_vec(),
        ..ExperimentConfig::default()
    };
    let loaded: Vec<IssueDataset> = datasets
        .iter()
        .map(|p| load_dataset(p))
        .collect::<CmdResult<_>>()?;
    let runs = build_project_runs(&cfg, &loaded).map_err(bench_err)?;
    let mut plans = Vec::new();
    for run in &runs {
        println!(
            "{}: {} train / {} validation / {} test",
            run.label,
            run.plan.train.len(),
            run.plan.validation.len(),
            run.plan.test.len()
        );
        if let Some(cap) = run.plan.cap_value {
            println!("  cap value: {cap}");
        }
        if let Some(boundary) = run.chronology_boundary {
            println!("  chronology boundary: {}", boundary.to_rfc3339());
        }
        plans.push(serde_json::json!({ "label": run.label, "plan": run.plan }));
    }
    if let Some(path) = output {
        let body = serde_json::to_string_pretty(&plans).map_err(runtime_err)?;
        std::fs::write(path, body + "\n").map_err(|e| runtime_err(format!("{}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_train(
    dataset: &Path,
    method: &str,
    seed: u64,
    config: Option<&Path>,
    model_out: Option<&Path>,
    trace: Option<&Path>,
) -> CmdResult<()> {
    let method = parse_method_flag(method)?;
    let cfg = match config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    let ds = load_dataset(dataset)?;
    let split_cfg = ExperimentConfig {
        scenario: Scenario::WithinProject,
        datasets: vec![dataset.to_path_buf()],
        ..ExperimentConfig::default()
    };
    let runs = build_project_runs(&split_cfg, std::slice::from_ref(&ds)).map_err(bench_err)?;
    let run = &runs[0];
    println!(
        "{}: training {} on {} issues",
        run.label,
        method.as_str(),
        run.plan.train.len()
    );
    let started = Instant::now();
    match method {
        Method::TfidfSvm => {
            let train: Vec<_> = run.train_issues().into_iter().cloned().collect();
            let model = TfidfSvmModel::fit(&train, &cfg.tfidf).map_err(runtime_err)?;
            println!("fitted in {:.2}s", started.elapsed().as_secs_f64());
            if let Some(path) = model_out {
                model.save(path).map_err(runtime_err)?;
                println!("wrote {}", path.display());
            }
        }
        Method::Deepse | Method::DeepseNopretrain => {
            let deep_cfg = DeepSEConfig {
                seed,
                pretrain: method == Method::Deepse,
                ..cfg.deepse
            };
            let model = deepse::train(&run.plan, &run.data, &deep_cfg).map_err(runtime_err)?;
            println!(
                "trained {} epoch(s) in {:.2}s, best epoch {}",
                model.trace.len(),
                started.elapsed().as_secs_f64(),
                model.best_epoch
            );
            if let Some(path) = model_out {
                model.save_checkpoint(path).map_err(runtime_err)?;
                println!("wrote {}", path.display());
            }
            if let Some(path) = trace {
                model.export_trace_csv(path).map_err(runtime_err)?;
                println!("wrote {}", path.display());
            }
        }
        other => {
            return Err(usage_err(format!(
                "method {} has no training step; use evaluate instead",
                other.as_str()
            )))
        }
    }
    Ok(())
}

fn cmd_evaluate(cfg: &ExperimentConfig) -> CmdResult<()> {
    let record = run_experiment(cfg).map_err(bench_err)?;
    println!("run directory: {}", record.run_dir.display());
    for row in &record.evals {
        println!(
            "{} {} seed {}: MAE {:.3}, MdAE {:.3}, SA {:.2}",
            row.project,
            row.method.as_str(),
            row.seed,
            row.report.mae,
            row.report.mdae,
            row.report.sa
        );
    }
    for s in &record.stats {
        println!(
            "{} {} vs {}: p={:.4}, A12={:.3}, significant={}",
            s.project,
            s.result.method_a,
            s.result.method_b,
            s.result.p_value,
            s.result.a12,
            s.result.significant
        );
    }
    if !record.is_complete() {
        for f in &record.failures {
            eprintln!("failed {} {} seed {}: {}", f.project, f.method.as_str(), f.seed, f.message);
        }
        return Err(runtime_err(format!(
            "{} cell(s) failed; partial results kept in {}",
            record.failures.len(),
            record.run_dir.display()
        )));
    }
    Ok(())
}

fn read_prediction_errors(path: &Path) -> CmdResult<(String, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    let mut errors = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (_key, actual, predicted) = (parts.next(), parts.next(), parts.next());
        let parse = |field: Option<&str>| -> CmdResult<f64> {
            field
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| data_err(format!("{}: line {} is not issue_key,actual,predicted", path.display(), idx + 1)))
        };
        errors.push((parse(actual)? - parse(predicted)?).abs());
    }
    if errors.is_empty() {
        return Err(data_err(format!("{}: no prediction rows", path.display())));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok((name, errors))
}

fn cmd_stats(predictions: &[PathBuf], alpha: f64) -> CmdResult<()> {
    if predictions.len() < 2 {
        return Err(usage_err("stats needs at least two prediction files"));
    }
    let errors: Vec<(String, Vec<f64>)> = predictions
        .iter()
        .map(|p| read_prediction_errors(&resolve_dataset(p)))
        .collect::<CmdResult<_>>()?;
    let pairs = errors.len() * (errors.len() - 1) / 2;
    let cfg = StatConfig { alpha, k_hypotheses: pairs };
    let results = compare_methods(&errors, &cfg).map_err(runtime_err)?;
    for r in &results {
        println!(
            "{} vs {}: p={:.6}, A12={:.4} ({}), significant at {:.4}: {}",
            r.method_a,
            r.method_b,
            r.p_value,
            r.a12,
            r.magnitude.letter(),
            r.alpha_used,
            r.significant
        );
    }
    Ok(())
}

fn cmd_report(config: &Path, style: TableStyle) -> CmdResult<()> {
    let cfg = load_config(config)?;
    let run_dir = cfg.output_dir.join(config_digest(&cfg));
    let manifest_path = run_dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|_| {
        data_err(format!(
            "{} not found; run `spbench evaluate --config {}` first",
            manifest_path.display(),
            config.display()
        ))
    })?;
    let mut record: RunRecord = serde_json::from_str(&text)
        .map_err(|e| data_err(format!("{}: {e}", manifest_path.display())))?;
    // the tree may have been relocated since the run was recorded
    record.run_dir = run_dir;
    let written = emit_tables(&record, style).map_err(bench_err)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_profile(dataset: &Path) -> CmdResult<()> {
    let ds = load_dataset(dataset)?;
    let prof = profile(&ds);
    println!("{}: {} issues", ds.project_key(), ds.len());
    println!("issue types:");
    for (ty, count) in &prof.issue_type_counts {
        println!("  {ty}: {count}");
    }
    println!("issues containing code snippets:");
    for (ty, count) in &prof.code_snippet_counts {
        println!("  {ty}: {count}");
    }
    println!("description length in tokens (mean / median):");
    for (ty, lengths) in &prof.description_token_length {
        let mut sorted = lengths.clone();
        sorted.sort_unstable();
        let mean = sorted.iter().sum::<usize>() as f64 / sorted.len() as f64;
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2] as f64
        } else {
            (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) as f64 / 2.0
        };
        println!("  {ty}: {mean:.1} / {median:.1}");
    }
    Ok(())
}
