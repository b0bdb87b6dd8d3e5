use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rootkgd::kgraph::EntityKind;
use rootkgd::pipeline::{self, DiagnosisConfig, PipelineError, SynthOptions};
use rootkgd::scoring::{format_report, ReportMode};
use rootkgd::synth::{FaultKind, PlantSpec};

#[derive(Parser)]
#[command(name = "rootkgd", version, about = "Knowledge-graph guided root-cause diagnosis")]
struct Cli {
    /// Worker threads for candidate scoring (default: available processors)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the PCA monitoring model on normal data and save it
    Fit(RunArgs),
    /// Rank root-cause candidates for a fault window
    Diagnose(RunArgs),
    /// Dump the propagation log from one source entity as TSV
    Trace(TraceArgs),
    /// Check a knowledge-graph file
    ValidateKg(ValidateArgs),
    /// Generate a synthetic plant with a known fault root
    Synth(SynthArgs),
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Model file (written by `fit`, read by `diagnose`)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset: normal data for `fit`, fault data for `diagnose`
    #[arg(long)]
    data: Option<PathBuf>,
    /// Normal data for `diagnose` when no model file is given
    #[arg(long)]
    normal: Option<PathBuf>,
    #[arg(long)]
    fault_start: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Also write the ranking as JSON to this path
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    r_pc: Option<f64>,
    #[arg(long)]
    sigma_r: Option<f64>,
    #[arg(long)]
    p_max: Option<u32>,
    #[arg(long)]
    delta_s_min_ratio: Option<f64>,
    /// Comma-separated entity kinds to rank, e.g. `variable,stream,device,substance`
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<EntityKind>>,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Entity id to start from
    #[arg(long)]
    source: String,
    #[arg(long, default_value_t = 1.0)]
    s0: f64,
}

#[derive(Args)]
struct ValidateArgs {
    /// Graph file (alternatively `--graph`)
    path: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Step,
    Drift,
    RandomVariation,
}

impl From<KindArg> for FaultKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Step => FaultKind::Step,
            KindArg::Drift => FaultKind::Drift,
            KindArg::RandomVariation => FaultKind::RandomVariation,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    devices: usize,
    #[arg(long, default_value_t = 2)]
    min_variables: usize,
    #[arg(long, default_value_t = 2)]
    max_variables: usize,
    #[arg(long, default_value_t = 1)]
    min_streams: usize,
    #[arg(long, default_value_t = 1)]
    max_streams: usize,
    /// Variable or device to fault (default: a random variable)
    #[arg(long)]
    root: Option<String>,
    #[arg(long, value_enum, default_value_t = KindArg::Step)]
    fault_kind: KindArg,
    /// Fault size in multiples of the normal standard deviation
    #[arg(long, default_value_t = 10.0)]
    magnitude: f64,
    #[arg(long, default_value_t = 2000)]
    normal_samples: usize,
    #[arg(long, default_value_t = 300)]
    fault_samples: usize,
    #[arg(long, default_value_t = 100)]
    fault_start: usize,
    #[arg(long, default_value_t = 200)]
    duration: usize,
}

fn load_config(a: &RunArgs, data_is_normal: bool) -> Result<DiagnosisConfig, PipelineError> {
    let mut cfg = match &a.config {
        Some(p) => DiagnosisConfig::load(p)?,
        None => DiagnosisConfig::default(),
    };
    if let Some(v) = &a.graph {
        cfg.graph_path = Some(v.clone());
    }
    if let Some(v) = &a.model {
        cfg.model_path = Some(v.clone());
    }
    if let Some(v) = &a.data {
        if data_is_normal {
            cfg.normal_data_path = Some(v.clone());
        } else {
            cfg.fault_data_path = Some(v.clone());
        }
    }
    if let Some(v) = &a.normal {
        cfg.normal_data_path = Some(v.clone());
    }
    if a.fault_start.is_some() {
        cfg.fault_start = a.fault_start;
    }
    if let Some(v) = a.window {
        cfg.window = v;
    }
    if let Some(v) = a.top_k {
        cfg.top_k = v;
    }
    if let Some(v) = a.r_pc {
        cfg.r_pc = v;
    }
    if let Some(v) = a.sigma_r {
        cfg.sigma_r = v;
    }
    if let Some(v) = a.p_max {
        cfg.p_max = v;
    }
    if let Some(v) = a.delta_s_min_ratio {
        cfg.delta_s_min_ratio = v;
    }
    if let Some(v) = &a.candidates {
        cfg.candidate_filter = v.clone();
    }
    Ok(cfg)
}

fn write_file(path: &PathBuf, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<ExitCode, PipelineError> {
    match cli.command {
        Command::Fit(a) => {
            let cfg = load_config(&a, true)?;
            let (_, s) = pipeline::cmd_fit(&cfg)?;
            println!(
                "fitted model: {} variables, {} principal components, retained variance {:.5}",
                s.n_vars, s.n_pc, s.retained_variance
            );
            if let Some(p) = &cfg.model_path {
                println!("written to {}", p.display());
            }
        }
        Command::Diagnose(a) => {
            let cfg = load_config(&a, false)?;
            let ranking = pipeline::cmd_diagnose(&cfg)?;
            print!("{}", format_report(&ranking, cfg.top_k, ReportMode::Text));
            if let Some(p) = &a.json {
                write_file(p, &format_report(&ranking, cfg.top_k, ReportMode::Json))?;
            }
        }
        Command::Trace(t) => {
            let cfg = load_config(&t.run, false)?;
            print!("{}", pipeline::cmd_trace(&cfg, &t.source, t.s0)?);
        }
        Command::ValidateKg(v) => {
            let path = v.path.or(v.graph).ok_or_else(|| {
                PipelineError::Config("a graph path is required".into())
            })?;
            let report = pipeline::cmd_validate(&path)?;
            println!("{report}");
            if !report.is_ok() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Synth(s) => {
            let opts = SynthOptions {
                spec: PlantSpec {
                    n_devices: s.devices,
                    streams_per_device: (s.min_streams, s.max_streams),
                    variables_per_device: (s.min_variables, s.max_variables),
                    seed: s.seed,
                    ..PlantSpec::default()
                },
                root: s.root,
                kind: s.fault_kind.into(),
                magnitude: s.magnitude,
                normal_samples: s.normal_samples,
                fault_samples: s.fault_samples,
                fault_start: s.fault_start,
                fault_duration: s.duration,
            };
            let case = pipeline::synth_case(&opts)?;
            pipeline::write_synth_case(&case, &s.out)?;
            println!(
                "wrote plant `{}` with fault root `{}` to {}",
                case.graph.name().unwrap_or("synth"),
                case.manifest.injection.root,
                s.out.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ROOTKGD_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
