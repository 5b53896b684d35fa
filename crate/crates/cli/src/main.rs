use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coreselect::{EmbeddingFormat, SamplingMethod};
use coreselect_cli::config::parse_k_range;
use coreselect_cli::error::{EXIT_CONFIG, EXIT_OK};
use coreselect_cli::{commands, CliError, Outcome, Overrides, PipelineConfig};

#[derive(Parser)]
#[command(name = "coreselect", version, about = "Cluster-stratified coreset selection for labeled embeddings")]
struct Cli {
    /// Only print errors.
    #[arg(long, short, global = true, conflicts_with = "verbose")]
    quiet: bool,
    /// Print debug logging to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Also write the command's main data product to stdout.
    #[arg(long, global = true)]
    stdout: bool,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "CORESELECT_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic labeled dataset from a mixture spec (JSON).
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "binary")]
        format: EmbeddingFormat,
        /// Base name of the embedding file; defaults to the spec file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Split the dataset and fit PCA on the training part.
    Reduce(RunArgs),
    /// Cluster every class with K-Medoids and pick k by silhouette.
    Cluster(RunArgs),
    /// Build random and intelligent coresets.
    Sample(RunArgs),
    /// Score a classifier trained on each coreset.
    Evaluate(RunArgs),
    /// Run every stage, skipping those whose inputs are unchanged.
    Pipeline(RunArgs),
    /// Summarize the state of an output directory.
    Inspect {
        #[arg(long, conflicts_with = "config")]
        out: Option<PathBuf>,
        #[arg(long, short)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config (JSON).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Dataset manifest.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    pca_threshold: Option<f64>,
    /// Silhouette search range, e.g. `2,8`.
    #[arg(long, value_parser = parse_k_range)]
    k_range: Option<[usize; 2]>,
    /// Coreset fraction(s); repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    fraction: Vec<f64>,
    /// Sampling method(s): random, intelligent.
    #[arg(long, value_delimiter = ',')]
    method: Vec<SamplingMethod>,
    /// Sampling seed(s).
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
}

impl RunArgs {
    fn resolve(self) -> Result<PipelineConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        let nonempty = |v: Vec<_>| (!v.is_empty()).then_some(v);
        cfg.apply(Overrides {
            input: self.input,
            out: self.out,
            pca_threshold: self.pca_threshold,
            k_range: self.k_range,
            fractions: nonempty(self.fraction),
            methods: (!self.method.is_empty()).then_some(self.method),
            seeds: (!self.seed.is_empty()).then_some(self.seed),
        });
        Ok(cfg)
    }
}

fn report(cli: &Cli, outcomes: &[Outcome]) {
    for o in outcomes {
        if !cli.quiet {
            for m in &o.messages {
                eprintln!("{m}");
            }
        }
        if cli.stdout {
            if let Some(d) = &o.data {
                print!("{d}");
            }
        }
    }
}

fn run(cli: &Cli, command: Command) -> Result<(), CliError> {
    let outcomes = match command {
        Command::Generate { spec, out, format, name } => {
            vec![commands::cmd_generate(&spec, &out, format, name.as_deref())?]
        }
        Command::Reduce(a) => vec![commands::cmd_reduce(&a.resolve()?)?],
        Command::Cluster(a) => vec![commands::cmd_cluster(&a.resolve()?)?],
        Command::Sample(a) => vec![commands::cmd_sample(&a.resolve()?)?],
        Command::Evaluate(a) => vec![commands::cmd_evaluate(&a.resolve()?)?],
        Command::Pipeline(a) => commands::cmd_pipeline(&a.resolve()?)?,
        Command::Inspect { out, config } => {
            let out = match (out, config) {
                (Some(o), _) => o,
                (None, Some(c)) => PipelineConfig::load(&c)?.out,
                (None, None) => PipelineConfig::default().out,
            };
            print!("{}", commands::cmd_inspect(&out)?);
            return Ok(());
        }
    };
    report(cli, &outcomes);
    Ok(())
}

fn main() -> ExitCode {
    let mut cli = Cli::parse();
    let level = if cli.quiet {
        "error"
    } else if cli.verbose {
        "debug"
    } else {
        "warn"
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: CORESELECT_WORKERS must be at least 1");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("global pool is configured once");
    }
    let command = std::mem::replace(&mut cli.command, Command::Inspect { out: None, config: None });
    match run(&cli, command) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
