use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use agent_graph::backend::{Backend, RoutingBackend};
use agent_graph::bench::synthetic::build_synthetic_suite;
use agent_graph::bench::{load_dataset, run_benchmark, BenchOptions};
use agent_graph::graph::{TauScale, Topology};
use agent_graph::pipeline::{run, Mode, Pooling, RunConfig};
use agent_graph::query::{Query, TaskKind};
use agent_graph::registry::{build_card_extraction_prompt, load_registry, Registry};
use agent_graph::trace::{load_trace, render_summary};

/// Exit status for unusable input (files, configuration, credentials).
const EXIT_INPUT: u8 = 2;
/// Exit status for a run that started but could not finish.
const EXIT_RUN: u8 = 1;

#[derive(Parser)]
#[command(name = "agent-graph", version, about = "Relevance-ranked multi-agent LLM orchestration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question and write its trace.
    Run(RunCmd),
    /// Run a dataset and write a report plus per-item traces.
    Bench(BenchCmd),
    /// Summarize a trace file.
    Trace {
        file: PathBuf,
    },
    /// Write the seeded offline suite (registry, script, dataset, expected outcomes).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Ask the meta agent to extract a model card from a README.
    Card {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        readme: PathBuf,
    },
}

#[derive(Args)]
struct RunCmd {
    #[arg(long)]
    question: String,
    #[arg(long, value_enum, default_value_t = KindArg::Mc)]
    kind: KindArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BenchCmd {
    #[arg(long)]
    dataset: PathBuf,
    /// Overrides every record's own kind.
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    /// Items run concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    registry: PathBuf,
    /// Output directory [default: ./agent_graph_out/<unix time>]
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mode
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// top_k
    #[arg(long)]
    top_k: Option<usize>,
    /// tau
    #[arg(long)]
    tau: Option<f64>,
    /// tau_scale
    #[arg(long, value_enum)]
    tau_scale: Option<TauScaleArg>,
    /// pooling
    #[arg(long, value_enum)]
    pooling: Option<PoolingArg>,
    /// topology
    #[arg(long, value_enum)]
    topology: Option<TopologyArg>,
    /// moa_layers
    #[arg(long)]
    layers: Option<u32>,
    /// agent (single mode)
    #[arg(long)]
    agent: Option<String>,
    /// temperature
    #[arg(long)]
    temperature: Option<f64>,
    /// pass.enable_s2t = false
    #[arg(long)]
    no_s2t: bool,
    /// pass.enable_t2s = false
    #[arg(long)]
    no_t2s: bool,
    /// pass.reverse_direction = true
    #[arg(long)]
    reverse: bool,
    /// pass.uniform_weights = true
    #[arg(long)]
    uniform_weights: bool,
    /// include_query = false
    #[arg(long)]
    no_query_injection: bool,
    /// bypass_selection = true
    #[arg(long)]
    bypass_selection: bool,
    /// fallback.parse_retries
    #[arg(long)]
    parse_retries: Option<u32>,
    /// fallback.confidence_floor
    #[arg(long)]
    confidence_floor: Option<f64>,
    /// selection_retries
    #[arg(long)]
    selection_retries: Option<u32>,
    /// score_retries
    #[arg(long)]
    score_retries: Option<u32>,
    /// pool_retries
    #[arg(long)]
    pool_retries: Option<u32>,
    /// parallel = false
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Mc,
    Math,
    Code,
    Free,
}

impl From<KindArg> for TaskKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Mc => TaskKind::MultipleChoice,
            KindArg::Math => TaskKind::Math,
            KindArg::Code => TaskKind::Code,
            KindArg::Free => TaskKind::FreeForm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Graph,
    Moa,
    Single,
}

#[derive(Clone, Copy, ValueEnum)]
enum TauScaleArg {
    Raw,
    Share,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    Max,
    Mean,
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Ranked,
    Complete,
}

/// Failure to report: message plus exit status.
struct Failure(u8, String);

impl Failure {
    fn input(e: impl std::fmt::Display) -> Self {
        Failure(EXIT_INPUT, e.to_string())
    }
}

impl Common {
    fn run_config(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::input(format!("MissingFile: {}: {e}", path.display())))?;
                RunConfig::from_json(&text).map_err(Failure::input)?
            }
            None => RunConfig::default(),
        };
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::Graph => Mode::Graph,
                ModeArg::Moa => Mode::Moa,
                ModeArg::Single => Mode::Single,
            };
        }
        if let Some(k) = self.top_k {
            cfg.top_k = k;
        }
        if let Some(t) = self.tau {
            cfg.tau = t;
        }
        if let Some(s) = self.tau_scale {
            cfg.tau_scale = match s {
                TauScaleArg::Raw => TauScale::Raw,
                TauScaleArg::Share => TauScale::Share,
            };
        }
        if let Some(p) = self.pooling {
            cfg.pooling = match p {
                PoolingArg::Max => Pooling::Max,
                PoolingArg::Mean => Pooling::Mean,
            };
        }
        if let Some(t) = self.topology {
            cfg.topology = match t {
                TopologyArg::Ranked => Topology::Ranked,
                TopologyArg::Complete => Topology::Complete,
            };
        }
        if let Some(l) = self.layers {
            cfg.moa_layers = l;
        }
        if let Some(a) = &self.agent {
            cfg.agent = Some(a.clone());
        }
        if let Some(t) = self.temperature {
            cfg.temperature = Some(t);
        }
        if self.no_s2t {
            cfg.pass.enable_s2t = false;
        }
        if self.no_t2s {
            cfg.pass.enable_t2s = false;
        }
        if self.reverse {
            cfg.pass.reverse_direction = true;
        }
        if self.uniform_weights {
            cfg.pass.uniform_weights = true;
        }
        if self.no_query_injection {
            cfg.include_query = false;
        }
        if self.bypass_selection {
            cfg.bypass_selection = true;
        }
        if let Some(r) = self.parse_retries {
            cfg.fallback.parse_retries = r;
        }
        if let Some(f) = self.confidence_floor {
            cfg.fallback.confidence_floor = f;
        }
        if let Some(r) = self.selection_retries {
            cfg.selection_retries = r;
        }
        if let Some(r) = self.score_retries {
            cfg.score_retries = r;
        }
        if let Some(r) = self.pool_retries {
            cfg.pool_retries = r;
        }
        if self.sequential {
            cfg.parallel = false;
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            PathBuf::from("agent_graph_out").join(ts.to_string())
        })
    }
}

fn open_registry(path: &Path) -> Result<(Registry, RoutingBackend), Failure> {
    let registry = load_registry(path).map_err(Failure::input)?;
    let backend = RoutingBackend::from_registry(&registry).map_err(Failure::input)?;
    Ok((registry, backend))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::input(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_run(cmd: &RunCmd) -> Result<(), Failure> {
    let cfg = cmd.common.run_config()?;
    let (registry, backend) = open_registry(&cmd.common.registry)?;
    cfg.validate(&registry).map_err(Failure::input)?;
    let query = Query::new(cmd.question.clone(), cmd.kind.into());
    let out = cmd.common.out_dir();
    create_dir(&out)?;
    let trace_path = out.join("trace.json");
    match run(&query, &registry, &cfg, &backend) {
        Ok(outcome) => {
            outcome.trace.save(&trace_path).map_err(Failure::input)?;
            let m = &outcome.trace.metrics;
            println!("answer: {}", outcome.answer);
            println!(
                "calls={} tokens_in={} tokens_out={} wall_ms={:.1}",
                m.calls, m.tokens_in, m.tokens_out, m.wall_ms
            );
            println!("trace: {}", trace_path.display());
            Ok(())
        }
        Err(failure) => {
            let _ = failure.trace.save(&trace_path);
            Err(Failure(
                EXIT_RUN,
                format!("{} (partial trace: {})", failure.error, trace_path.display()),
            ))
        }
    }
}

fn cmd_bench(cmd: &BenchCmd) -> Result<(), Failure> {
    let cfg = cmd.common.run_config()?;
    let (registry, backend) = open_registry(&cmd.common.registry)?;
    let items = load_dataset(&cmd.dataset, cmd.kind.map(Into::into)).map_err(Failure::input)?;
    if items.is_empty() {
        return Err(Failure::input("dataset has no items"));
    }
    cfg.validate(&registry).map_err(Failure::input)?;
    let out = cmd.common.out_dir();
    create_dir(&out)?;
    let opts = BenchOptions {
        threads: cmd.parallel,
        trace_dir: Some(out.join("traces")),
    };
    let result = run_benchmark(&items, &registry, &cfg, &backend as &dyn Backend, &opts).map_err(Failure::input)?;
    let report = &result.report;
    std::fs::write(out.join("report.json"), report.to_canonical_json()).map_err(Failure::input)?;
    let table = report.to_table();
    std::fs::write(out.join("report.txt"), &table).map_err(Failure::input)?;
    print!("{table}");
    println!("report: {}", out.join("report.json").display());
    Ok(())
}

fn cmd_trace(file: &Path) -> Result<(), Failure> {
    let trace = load_trace(file).map_err(Failure::input)?;
    print!("{}", render_summary(&trace));
    Ok(())
}

fn cmd_synth(out: &Path, seed: u64) -> Result<(), Failure> {
    let suite = build_synthetic_suite(seed).map_err(|e| Failure(EXIT_RUN, e.to_string()))?;
    suite.write_to(out).map_err(Failure::input)?;
    println!(
        "wrote {} items and {} script entries to {}",
        suite.items.len(),
        suite.script.len(),
        out.display()
    );
    for (name, e) in &suite.expected {
        println!("  {name}: {}/{} correct, mean calls {}", e.correct, suite.items.len(), e.mean_calls);
    }
    Ok(())
}

fn cmd_card(registry: &Path, readme: &Path) -> Result<(), Failure> {
    let (registry, backend) = open_registry(registry)?;
    let text = std::fs::read_to_string(readme)
        .map_err(|e| Failure::input(format!("MissingFile: {}: {e}", readme.display())))?;
    let prompt = build_card_extraction_prompt(&text).map_err(Failure::input)?;
    let out = backend
        .complete(registry.meta_agent(), &prompt)
        .map_err(|e| Failure(EXIT_RUN, e.to_string()))?;
    println!("{}", out.text.trim());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(cmd) => cmd_run(cmd),
        Command::Bench(cmd) => cmd_bench(cmd),
        Command::Trace { file } => cmd_trace(file),
        Command::Synth { out, seed } => cmd_synth(out, *seed),
        Command::Card { registry, readme } => cmd_card(registry, readme),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
