//! `geonet`: dataset generation, training, inference, evaluation and
//! benchmarking of geodesic operator networks.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "geonet", version, about = "Learn Wasserstein geodesics between densities with operator networks")]
struct Cli {
    /// Run single-threaded with sequential loss evaluation, for byte-identical reruns.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    Gauss,
    Image,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ReferenceArg {
    Bures,
    Sinkhorn,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate random boundary pairs as GEOGRID files plus a manifest.
    GenData {
        #[arg(long, value_enum, default_value = "gauss")]
        family: FamilyArg,
        #[arg(long)]
        n: usize,
        /// Nodes per side of the stored grids.
        #[arg(long, default_value_t = 50)]
        grid: usize,
        /// Mixture components of μ₀.
        #[arg(long, default_value_t = 5)]
        k0: usize,
        /// Mixture components of μ₁.
        #[arg(long, default_value_t = 2)]
        k1: usize,
        /// Equal weights with the wider mean box and narrower variances.
        #[arg(long)]
        equal_weights: bool,
        /// Use μ₁ = μ₀ for every pair.
        #[arg(long)]
        identity: bool,
        /// Image channels (image family only).
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train operator networks on a dataset.
    Train {
        /// `key = value` configuration file. Optional with --resume.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory written by gen-data.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory for the checkpoint, log and resolved configuration.
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
        /// Extra `key=value` settings applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Validate and print the resolved configuration, then stop.
        #[arg(long)]
        dry_run: bool,
    },
    /// Evaluate a trained model along the geodesic between two densities.
    Infer {
        /// Checkpoint file.
        #[arg(long)]
        model: PathBuf,
        /// GEOGRID file or portable pixmap.
        #[arg(long)]
        mu0: PathBuf,
        #[arg(long)]
        mu1: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5, 0.75, 1.0])]
        t: Vec<f64>,
        /// Output mesh nodes along x and y.
        #[arg(long, num_args = 2, value_names = ["NX", "NY"])]
        res: Option<Vec<usize>>,
        /// Skip the PGM renders.
        #[arg(long)]
        no_pgm: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean test MSE against a reference geodesic at t = 0, 0.25, 0.5, 0.75, 1.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory written by gen-data.
        #[arg(long)]
        testset: PathBuf,
        #[arg(long, value_enum, default_value = "bures")]
        reference: ReferenceArg,
        /// Nodes per side of the evaluation mesh.
        #[arg(long, default_value_t = 50)]
        res: usize,
        /// Output CSV; further channels go to `<stem>.c<k>.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Wall time of operator inference against the reference solver.
    Bench {
        #[arg(long)]
        model: PathBuf,
        /// Nodes per side of each benchmark mesh.
        #[arg(long, value_delimiter = ',', default_values_t = [32, 64, 128])]
        meshes: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Take the first pair of this dataset instead of a random single Gaussian pair.
        #[arg(long)]
        testset: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.deterministic {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
            eprintln!("error: cannot configure the thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
