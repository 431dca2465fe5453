//! `canopy`: command-line front end for the street-tree pipeline.
//!
//! Exit status is 0 on success, 1 when input or configuration fails
//! validation, and 2 when a stage fails while running.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use canopy_core::ingest::{fetch_dataset, validate, DatasetKind, FetchError, IngestError};
use canopy_core::pipeline::{
    self, gen_fixture, FixtureSizes, ModelSpec, OutputSink, PipelineError, RunConfig,
};
use canopy_core::Parallelism;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "canopy", version, about = "Street-tree data integration pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run every loop on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse one dataset and print its validation report as JSON.
    Ingest {
        #[arg(value_parser = parse_dataset_kind)]
        kind: DatasetKind,
        path: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-tree or per-sensor enrichment exports.
    Enrich {
        target: EnrichTarget,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Region scores.
    Score {
        target: ScoreTarget,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Regional roll-ups; all configured kinds plus boroughs by default.
    Aggregate {
        #[arg(long)]
        kind: Option<AggregateKind>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Build model tables for the configured models, or for one spec file.
    Table {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fit a model to a table file and print the report.
    Fit {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Directory to write `fits/<name>.*` into.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every stage in order.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Seed recorded in the run report.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the synthetic mini-city fixture set.
    GenFixture {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = FixtureSizes::default().trees)]
        trees: usize,
        #[arg(long, default_value_t = FixtureSizes::default().complaints)]
        complaints: usize,
        #[arg(long, default_value_t = FixtureSizes::default().sensors)]
        sensors: usize,
        #[arg(long, default_value_t = FixtureSizes::default().lots)]
        lots: usize,
        #[arg(long, default_value_t = FixtureSizes::default().taxonomy_coverage)]
        taxonomy_coverage: f64,
    },
    /// Download a dataset, skipping the transfer when the cached copy matches.
    Fetch {
        url: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sha256: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EnrichTarget {
    Trees,
    Sensors,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreTarget {
    Pollen,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregateKind {
    Nta,
    Zip,
    Uhf,
    Borough,
}

fn parse_dataset_kind(s: &str) -> Result<DatasetKind, String> {
    s.parse()
}

/// Error with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn validation(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 1, error: error.into() }
    }

    fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 2, error: error.into() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_validation() {
            Failure::validation(e)
        } else {
            Failure::runtime(e)
        }
    }
}

type Outcome = Result<(), Failure>;

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if args.sequential {
        cfg.parallelism = Parallelism::Sequential;
    }
    Ok(cfg)
}

fn report_written(sink: &OutputSink) {
    let mut stdout = io::stdout().lock();
    for (rel, hash) in sink.hashes() {
        let _ = writeln!(stdout, "{hash}  {}", sink.root().join(rel).display());
    }
}

fn cmd_ingest(kind: DatasetKind, path: &Path, out: Option<&Path>) -> Outcome {
    let file = File::open(path).with_context(|| format!("opening {}", path.display())).map_err(Failure::runtime)?;
    let report = validate(kind, BufReader::new(file)).map_err(|e| match e {
        IngestError::Io { .. } => Failure::runtime(e),
        _ => Failure::validation(e),
    })?;
    let json = serde_json::to_string_pretty(&report).map_err(Failure::runtime)?;
    println!("{json}");
    if let Some(out) = out {
        std::fs::write(out, format!("{json}\n"))
            .with_context(|| format!("writing {}", out.display()))
            .map_err(Failure::runtime)?;
    }
    if report.row_errors.is_empty() {
        Ok(())
    } else {
        Err(Failure::validation(anyhow::anyhow!(
            "{}: {} of {} rows rejected",
            path.display(),
            report.row_errors.len(),
            report.rows_in
        )))
    }
}

fn cmd_enrich(target: EnrichTarget, args: &ConfigArgs) -> Outcome {
    let cfg = load_config(args)?;
    let inputs = pipeline::ingest(&cfg)?;
    let enriched = pipeline::enrich(&cfg, &inputs)?;
    let mut sink = OutputSink::new(&cfg.output_dir);
    match target {
        EnrichTarget::Trees => pipeline::write_enrich_outputs(&mut sink, &enriched, cfg.complaint_window.by_period)?,
        EnrichTarget::Sensors => {
            if cfg.datasets.sensors.is_none() {
                return Err(Failure::validation(anyhow::anyhow!("config has no datasets.sensors")));
            }
            pipeline::write_sensor_outputs(&mut sink, &enriched.contexts)?;
        }
    }
    report_written(&sink);
    Ok(())
}

fn cmd_score(args: &ConfigArgs) -> Outcome {
    let cfg = load_config(args)?;
    let inputs = pipeline::ingest(&cfg)?;
    let enriched = pipeline::enrich(&cfg, &inputs)?;
    let aggregated = pipeline::aggregate(&cfg, &inputs, &enriched)?;
    let kind = cfg.pollen_region_kind;
    let mut sink = OutputSink::new(&cfg.output_dir);
    pipeline::write_pollen_outputs(&mut sink, kind, &aggregated.rollups[&kind].aggregates, &inputs.regions[&kind])?;
    report_written(&sink);
    Ok(())
}

fn cmd_aggregate(kind: Option<AggregateKind>, args: &ConfigArgs) -> Outcome {
    let cfg = load_config(args)?;
    let region_kind = match kind {
        Some(AggregateKind::Nta) => Some(canopy_core::ingest::RegionKind::Nta),
        Some(AggregateKind::Zip) => Some(canopy_core::ingest::RegionKind::Zip),
        Some(AggregateKind::Uhf) => Some(canopy_core::ingest::RegionKind::Uhf),
        Some(AggregateKind::Borough) | None => None,
    };
    if let Some(k) = region_kind {
        if !cfg.datasets.regions.contains_key(&k) {
            return Err(Failure::validation(anyhow::anyhow!("no boundary file configured for '{k}'")));
        }
    }
    let inputs = pipeline::ingest(&cfg)?;
    let enriched = pipeline::enrich(&cfg, &inputs)?;
    let mut aggregated = pipeline::aggregate(&cfg, &inputs, &enriched)?;
    match kind {
        None => {}
        Some(AggregateKind::Borough) => aggregated.rollups.clear(),
        Some(_) => {
            let k = region_kind.expect("region kinds map to Some");
            aggregated.rollups.retain(|key, _| *key == k);
        }
    }
    let mut sink = OutputSink::new(&cfg.output_dir);
    pipeline::write_aggregate_outputs(&mut sink, &aggregated)?;
    report_written(&sink);
    Ok(())
}

fn cmd_table(spec: Option<&Path>, args: &ConfigArgs) -> Outcome {
    let cfg = load_config(args)?;
    let specs = match spec {
        Some(p) => vec![ModelSpec::load(p)?],
        None if cfg.models.is_empty() => {
            return Err(Failure::validation(anyhow::anyhow!("config defines no models; pass --spec")));
        }
        None => cfg.models.clone(),
    };
    let inputs = pipeline::ingest(&cfg)?;
    let enriched = pipeline::enrich(&cfg, &inputs)?;
    let aggregated = pipeline::aggregate(&cfg, &inputs, &enriched)?;
    let mut sink = OutputSink::new(&cfg.output_dir);
    for s in &specs {
        let table = pipeline::build_table(s, &inputs, &enriched, &aggregated)?;
        pipeline::write_table_outputs(&mut sink, &s.name, &table)?;
    }
    report_written(&sink);
    Ok(())
}

fn cmd_fit(table: &Path, spec: &Path, out: Option<&Path>) -> Outcome {
    let spec = ModelSpec::load(spec)?;
    let table = pipeline::load_table(&spec, table)?;
    let fit = pipeline::fit_table(&spec, &table)?;
    print!("{}", fit.text);
    if let Some(dir) = out {
        let mut sink = OutputSink::new(dir);
        pipeline::write_fit_outputs(&mut sink, &spec.name, &fit)?;
    }
    Ok(())
}

fn cmd_run(args: &ConfigArgs, seed: Option<u64>) -> Outcome {
    let mut cfg = load_config(args)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    let report = pipeline::run_pipeline(&cfg)?;
    for (stage, took) in &report.timing {
        eprintln!("{stage:<10} {:>9.3} ms", took.as_secs_f64() * 1e3);
    }
    for (label, r) in &report.ingest {
        if !r.row_errors.is_empty() {
            log::warn!("{label}: {} of {} rows rejected", r.row_errors.len(), r.rows_in);
        }
    }
    println!("{}", cfg.output_dir.join("run_report.json").display());
    Ok(())
}

fn cmd_gen_fixture(seed: u64, out: &Path, sizes: FixtureSizes) -> Outcome {
    let summary = gen_fixture(seed, &sizes, out)?;
    for f in &summary.files {
        println!("{}", out.join(f).display());
    }
    Ok(())
}

fn cmd_fetch(url: &str, out: &Path, sha256: Option<&str>) -> Outcome {
    let outcome = fetch_dataset(url, out, sha256).map_err(|e| match e {
        FetchError::ChecksumMismatch { .. } | FetchError::UnsupportedScheme(_) => Failure::validation(e),
        _ => Failure::runtime(e),
    })?;
    println!("{:?} {} {} bytes sha256={}", outcome.status, outcome.path.display(), outcome.bytes, outcome.sha256);
    Ok(())
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Ingest { kind, path, out } => cmd_ingest(kind, &path, out.as_deref()),
        Command::Enrich { target, cfg } => cmd_enrich(target, &cfg),
        Command::Score { target: ScoreTarget::Pollen, cfg } => cmd_score(&cfg),
        Command::Aggregate { kind, cfg } => cmd_aggregate(kind, &cfg),
        Command::Table { spec, cfg } => cmd_table(spec.as_deref(), &cfg),
        Command::Fit { table, spec, out } => cmd_fit(&table, &spec, out.as_deref()),
        Command::Run { cfg, seed } => cmd_run(&cfg, seed),
        Command::GenFixture { seed, out, trees, complaints, sensors, lots, taxonomy_coverage } => {
            cmd_gen_fixture(seed, &out, FixtureSizes { trees, complaints, sensors, lots, taxonomy_coverage })
        }
        Command::Fetch { url, out, sha256 } => cmd_fetch(&url, &out, sha256.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
