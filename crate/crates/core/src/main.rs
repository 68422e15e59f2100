use std::fs;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dexi::corpus::{self, Corpus, CorpusEntry};
use dexi::index::InstantiationConfig;
use dexi::search::{self, completeness_check, explore_shared, reconstruct_graph, SearchError, SearchOptions};
use dexi::sim::{experiment, ExecutionTrace, RunConfig, SchedulerMode};

#[derive(Parser)]
#[command(name = "dexi", version, about = "Fault-space exploration with distributed execution indexes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List corpus entries.
    List(CorpusArgs),
    /// Explore the fault space of a corpus entry.
    Explore(ExploreArgs),
    /// Measure schedule dependence of index assignment under real threads.
    Nondeterminism(NondetArgs),
    /// Rebuild the service graph from recorded traces.
    Graph(GraphArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus directory or single entry file; defaults to the bundled corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheduler {
    Virtual,
    Threads,
}

#[derive(Args)]
struct ExploreArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Entry to explore. With --table, all entries when omitted.
    #[arg(long)]
    entry: Option<String>,
    #[arg(long, default_value = "full")]
    config: InstantiationConfig,
    #[arg(long)]
    reduction: bool,
    #[arg(long, value_enum, default_value = "virtual")]
    scheduler: Scheduler,
    #[arg(long, default_value_t = 4)]
    pool: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum number of executions.
    #[arg(long, default_value_t = 10_000)]
    budget: usize,
    #[arg(long)]
    max_faults: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write one JSONL trace per execution into this directory.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// Compare execution counts against the expected counts for every
    /// recorded config.
    #[arg(long)]
    table: bool,
    /// Also run the full config and check this report against it.
    #[arg(long)]
    reference: bool,
}

#[derive(Args)]
struct NondetArgs {
    /// Comma-separated RPC counts.
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 64])]
    n: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pool: usize,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    #[arg(long, default_value = "full")]
    config: InstantiationConfig,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GraphArgs {
    /// JSONL trace files.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(args: &CorpusArgs) -> Result<Corpus> {
    Ok(match &args.corpus {
        Some(p) => corpus::load_corpus(p)?,
        None => corpus::bundled()?,
    })
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, format!("{text}\n")).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn options(a: &ExploreArgs, label: &str) -> SearchOptions {
    let scheduler = match a.scheduler {
        Scheduler::Virtual => SchedulerMode::Virtual,
        Scheduler::Threads => SchedulerMode::Threads { pool_size: a.pool },
    };
    SearchOptions {
        run: RunConfig { config: a.config, scheduler, seed: a.seed, ..RunConfig::default() },
        reduction: a.reduction,
        max_faults: a.max_faults,
        budget: a.budget,
        label: label.to_string(),
    }
}

fn table(a: &ExploreArgs, corpus: &Corpus) -> Result<bool> {
    let entries: Vec<&CorpusEntry> = match &a.entry {
        Some(n) => vec![corpus.require(n)?],
        None => corpus.entries().iter().collect(),
    };
    let mut ok = true;
    for e in entries {
        let app = Arc::new(e.app.clone());
        let configs: Vec<InstantiationConfig> = e.expected_counts.keys().copied().collect();
        let got = search::execution_counts(&app, &e.entry, &e.catalog, &configs, &options(a, &e.name))?;
        for (config, want) in &e.expected_counts {
            let n = got[&config.to_string()];
            let mark = if n == *want { "ok" } else { "MISMATCH" };
            ok &= n == *want;
            println!("{:<24} {:<20} {:>4} (expected {want}) {mark}", e.name, config.to_string(), n);
        }
    }
    Ok(ok)
}

fn explore(a: &ExploreArgs) -> Result<bool> {
    let corpus = load(&a.corpus)?;
    if a.table {
        return table(a, &corpus);
    }
    let Some(name) = &a.entry else { bail!("--entry is required unless --table is given") };
    let e = corpus.require(name)?;
    let app = Arc::new(e.app.clone());
    let report = match explore_shared(&app, &e.entry, &e.catalog, &options(a, name)) {
        Ok(r) => r,
        Err(SearchError::BudgetExhausted { budget, pending, partial }) => {
            emit(&a.out, &partial.to_json())?;
            bail!("execution budget of {budget} exhausted with {pending} plans pending");
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(dir) = &a.trace_dir {
        fs::create_dir_all(dir)?;
        for (i, rec) in report.executions.iter().enumerate() {
            fs::write(dir.join(format!("{name}-{i:04}.jsonl")), rec.trace.to_jsonl())?;
        }
    }
    let reference = if a.reference && !a.config.is_full() {
        let mut o = options(a, name);
        o.run.config = InstantiationConfig::FULL;
        o.reduction = false;
        Some(explore_shared(&app, &e.entry, &e.catalog, &o)?)
    } else {
        None
    };
    let violations = completeness_check(&report, &e.catalog, reference.as_ref());
    emit(&a.out, &report.to_json())?;
    eprintln!(
        "{name}: {} executed, {} pruned, {} identifiers, {} violations",
        report.total_executed,
        report.pruned.len(),
        report.discovered_deis.len(),
        violations.len()
    );
    for v in &violations {
        eprintln!("  {:?}: {}", v.kind, v.message);
    }
    Ok(violations.is_empty())
}

fn nondeterminism(a: &NondetArgs) -> Result<bool> {
    let mut reports = Vec::new();
    for &n in &a.n {
        let r = experiment::run_nondeterminism_experiment(n, a.pool, a.iterations, a.config)?;
        eprintln!(
            "n={n} pool={} config={}: order matched {}/{} ({:.2}), {} distinct index assignments",
            a.pool, a.config, r.order_matches, r.iterations, r.match_fraction, r.distinct_dei_multisets
        );
        reports.push(r);
    }
    emit(&a.out, &serde_json::to_string_pretty(&reports)?)?;
    Ok(true)
}

fn graph(a: &GraphArgs) -> Result<bool> {
    let mut traces = Vec::new();
    for p in &a.traces {
        let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
        traces.push(ExecutionTrace::read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", p.display()))?);
    }
    emit(&a.out, &serde_json::to_string_pretty(&reconstruct_graph(&traces))?)?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::List(a) => load(a).map(|c| {
            for e in c.entries() {
                println!("{:<24} {}", e.name, e.description);
            }
            true
        }),
        Command::Explore(a) => explore(a),
        Command::Nondeterminism(a) => nondeterminism(a),
        Command::Graph(a) => graph(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
