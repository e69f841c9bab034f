//! `cirphylo`: phylogenetic likelihoods and simulation under a CIR rate
//! process.
//!
//! Exit codes: 0 on success, 2 for invalid arguments or malformed input
//! files, 3 when a numerical routine fails to meet its tolerance. Every
//! subcommand is deterministic for a fixed seed, independent of the worker
//! thread count.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cirphylo::Error;

/// Default RNG seed shared by all stochastic subcommands.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(
    name = "cirphylo",
    version,
    about = "Phylogenetic likelihoods and simulation under a CIR substitution-rate process",
    long_about = "Substitution models whose per-site rate follows a mean-reverting square-root \
(CIR) diffusion along the tree.\n\nExit codes: 0 success, 2 invalid arguments or malformed \
input, 3 numerical failure. All randomized commands take --seed (default 42) and produce \
byte-identical output for the same seed, regardless of --threads."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output format (`simulate` always writes FASTA).
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,

    /// Output path (default: stdout).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Worker threads for Monte Carlo loops (default: the CIRPHYLO_THREADS
    /// environment variable, else all cores). Results never depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Recover CIR parameters from rate-variation summary statistics.
    ///
    /// Inverts (gamma, dispersion) -> (a = 1, b, sigma2): b = gamma /
    /// (dispersion - 1), sigma2 = gamma^2 / (dispersion - 1). CSV header:
    /// gamma,dispersion,a,b,sigma2,stationary_shape,stationary_scale
    Estimate {
        /// Rate-variation gamma statistic (stationary variance is gamma/2).
        #[arg(long)]
        gamma: f64,
        /// Asymptotic index of dispersion of substitution counts; must
        /// exceed 1.
        #[arg(long)]
        dispersion: f64,
    },

    /// Moment generating function E[exp(eta * integrated rate)].
    ///
    /// With --rt the expectation is over rate paths conditioned on both
    /// endpoints, otherwise over paths started at --r0. CSV header:
    /// kind,a,b,sigma2,eta,t,r0,rt,value
    Mgf {
        #[command(flatten)]
        cir: CirArgs,
        /// MGF argument; must stay below b^2/(2 sigma2).
        #[arg(long, allow_hyphen_values = true)]
        eta: f64,
        /// Time horizon.
        #[arg(long)]
        t: f64,
        /// Rate at time 0.
        #[arg(long)]
        r0: f64,
        /// Rate at time t; switches to the endpoint-conditioned MGF.
        #[arg(long)]
        rt: Option<f64>,
    },

    /// Simulated index of dispersion of substitution counts at horizon t.
    ///
    /// Runs replicate doubly stochastic count simulations and compares the
    /// empirical variance/mean ratio with the closed form. CSV header:
    /// t,replicates,seed,index_of_dispersion,theoretical_index,mean_count,var_count
    Dispersion {
        #[command(flatten)]
        cir: CirArgs,
        /// Time horizon.
        #[arg(long)]
        t: f64,
        /// Independent count replicates (at least 100).
        #[arg(long)]
        replicates: usize,
        /// RNG seed.
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },

    /// Per-site log-likelihoods of an alignment on a tree.
    ///
    /// Three-leaf star trees with positive branch lengths use the exact
    /// closed form (method "exact", standard errors 0) unless --force-mc is
    /// given; every other tree is estimated by Monte Carlo over rate paths.
    /// CSV header: site,log_likelihood,std_err,rejected,method with a final
    /// "total" row.
    Lik {
        /// Newick tree file; every non-root edge needs a branch length.
        #[arg(long, value_name = "PATH")]
        tree: PathBuf,
        /// Alignment file, FASTA or sequential PHYLIP (auto-detected).
        #[arg(long, value_name = "PATH")]
        aln: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        cir: CirArgs,
        /// Monte Carlo rate-path samples per site (at least 100).
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// RNG seed.
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Use the Monte Carlo estimator even on a three-leaf star.
        #[arg(long)]
        force_mc: bool,
    },

    /// Simulate an alignment along a tree and write it as FASTA.
    ///
    /// Each site draws one rate path over the whole tree (stationary at the
    /// root) and substitutions at the locally integrated rate.
    Simulate {
        /// Newick tree file.
        #[arg(long, value_name = "PATH")]
        tree: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        cir: CirArgs,
        /// Alignment columns to simulate.
        #[arg(long)]
        sites: usize,
        /// RNG seed.
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

/// CIR parameters, either explicit or recovered from summary statistics.
#[derive(Args)]
pub struct CirArgs {
    /// CIR parameters "a,b,sigma2", e.g. --cir 1,1,1.
    #[arg(
        long,
        value_name = "A,B,SIGMA2",
        conflicts_with_all = ["gamma", "dispersion"]
    )]
    cir: Option<String>,
    /// Rate-variation gamma statistic; pairs with --dispersion and pins
    /// a = 1.
    #[arg(long, requires = "dispersion")]
    gamma: Option<f64>,
    /// Asymptotic index of dispersion; pairs with --gamma.
    #[arg(long, requires = "gamma")]
    dispersion: Option<f64>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum ModelName {
    Jc,
    K2p,
    Hky,
    Gtr,
}

/// Substitution model selection; parameter flags are checked against the
/// chosen family.
#[derive(Args)]
pub struct ModelArgs {
    /// Substitution model family.
    #[arg(long, value_enum, default_value_t = ModelName::Jc)]
    model: ModelName,
    /// Transition/transversion ratio (k2p, hky).
    #[arg(long)]
    kappa: Option<f64>,
    /// Stationary base frequencies "piA,piC,piG,piT" (hky, gtr).
    #[arg(long, value_name = "A,C,G,T")]
    freqs: Option<String>,
    /// GTR exchangeabilities "AC,AG,AT,CG,CT,GT".
    #[arg(long, value_name = "S1,..,S6")]
    exchange: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads(cli.threads);
    match commands::run(cli.command, cli.format, cli.out.as_deref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

/// Installs the global rayon pool. Flag beats environment; absent both,
/// rayon picks the core count.
fn configure_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var("CIRPHYLO_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        // A failure here means a pool already exists; that only happens in
        // tests driving main() twice, where the first pool is fine to keep.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
