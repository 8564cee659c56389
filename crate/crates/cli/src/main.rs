use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spurmin::Error;

mod commands;
mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "spurmin", version, about = "Spurious local minima of networks with locally affine activations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the spurious parameter for a dataset.
    Construct(Common),
    /// Perturbation check of the construction and its family.
    Verify(Common),
    /// Search for a parameter with strictly lower loss.
    Escape(Common),
    /// Realization cloud of random parameters as CSV.
    SampleImage(Common),
    /// Best affine and constant approximations of a dataset.
    BestAffine(Common),
    /// Samples of the space-filling activation as CSV.
    SpaceFill(Common),
    /// Multistart projection of a target onto the image.
    Project(Common),
    /// Projection along a path through a tie, reporting jumps.
    Scan(Common),
    /// The worked example end to end.
    Demo(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    scale: Option<f64>,
}

impl Common {
    fn resolve(&self) -> spurmin::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if self.data.is_some() {
            cfg.data.clone_from(&self.data);
        }
        cfg.seed = self.seed.or(cfg.seed);
        cfg.n_samples = self.n_samples.or(cfg.n_samples);
        cfg.restarts = self.restarts.or(cfg.restarts);
        cfg.scale = self.scale.or(cfg.scale);
        if let Some(n) = self.n_samples {
            cfg.image.n = n;
        }
        if let Some(t) = self.threads {
            if t == 0 {
                return Err(Error::InvalidArgument("--threads must be positive".into()));
            }
            spurmin::par::configure_threads(t).map_err(Error::InvalidArgument)?;
        }
        if let Some(s) = cfg.scale {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidArgument(format!("scale must be finite and non-negative, got {s}")));
            }
        }
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 1,
        Error::SearchFailed { .. } => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> spurmin::Result<()> {
    let (common, f): (&Common, fn(&RunConfig, Option<&std::path::Path>) -> spurmin::Result<()>) = match &cli.command {
        Command::Construct(c) => (c, commands::construct),
        Command::Verify(c) => (c, commands::verify),
        Command::Escape(c) => (c, commands::escape),
        Command::SampleImage(c) => (c, commands::sample_image_cmd),
        Command::BestAffine(c) => (c, commands::best_affine_cmd),
        Command::SpaceFill(c) => (c, commands::space_fill),
        Command::Project(c) => (c, commands::project),
        Command::Scan(c) => (c, commands::scan),
        Command::Demo(c) => (c, commands::demo),
    };
    let cfg = common.resolve()?;
    f(&cfg, common.out.as_deref())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
