use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};

use landau_fisher::cli::{self, AnalyzeOptions, Gamma2Options, SelftestOptions, SimulateOptions, Status};
use landau_fisher::gamma2::ProbeConfig;

#[derive(Parser)]
#[command(name = "lfish", version, about = "Landau equation solver and Fisher-information diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured evolution and evaluate its checks.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
        seed: Option<u64>,
        #[arg(long, allow_negative_numbers = true)]
        gamma: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report functionals of a snapshot.
    Analyze {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        gamma: Option<f64>,
        /// Evaluate the pairwise dissipation functionals.
        #[arg(long)]
        pairs: bool,
        /// Also evaluate them by the definitional six-dimensional sum and compare.
        #[arg(long)]
        brute_force: bool,
        /// Scan the coercivity constant over the grid.
        #[arg(long)]
        coercivity: bool,
    },
    /// Probe the curvature ratio on the sphere.
    Gamma2 {
        #[arg(long, default_value_t = 2024, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 6)]
        degree: usize,
        #[arg(long, default_value_t = 60)]
        steps: usize,
        #[arg(long, default_value_t = 20)]
        n_theta: usize,
        #[arg(long, default_value_t = 40)]
        n_phi: usize,
    },
    /// Run the identity suite.
    Selftest,
}

fn main() -> ExitCode {
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(Status::InputError.code()),
            };
        }
    };
    let (stdout, stderr) = (std::io::stdout(), std::io::stderr());
    let (mut out, mut err) = (stdout.lock(), stderr.lock());
    let env = cli::threads_from_env().and_then(|t| Ok((t, cli::tol_scale_from_env()?)));
    let (threads, tol_scale) = match env {
        Ok(x) => x,
        Err(msg) => {
            let _ = writeln!(err, "{msg}");
            return ExitCode::from(Status::InputError.code());
        }
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            let _ = writeln!(err, "cannot configure {n} worker threads: {e}");
            return ExitCode::from(Status::InputError.code());
        }
    }
    let status = match parsed.command {
        Command::Simulate { config, seed, gamma, out: dir } => {
            cli::simulate(&SimulateOptions { config, seed, gamma, out_dir: dir, tol_scale }, &mut out, &mut err)
        }
        Command::Analyze { snapshot, gamma, pairs, brute_force, coercivity } => {
            cli::analyze(&AnalyzeOptions { snapshot, gamma, pairs, coercivity, brute_force, tol_scale }, &mut out, &mut err)
        }
        Command::Gamma2 { seed, seeds, degree, steps, n_theta, n_phi } => {
            let probe = ProbeConfig { seed_count: seeds, max_degree: degree, steps, base_seed: seed, n_theta, n_phi, ..ProbeConfig::default() };
            cli::gamma2(&Gamma2Options { probe, tol_scale }, &mut out, &mut err)
        }
        Command::Selftest => cli::selftest(&SelftestOptions::default(), &mut out),
    };
    let _ = out.flush();
    ExitCode::from(status.code())
}
