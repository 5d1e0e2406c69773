//! `kaclab`: desk-scale tables for the Kac-model laboratory.
//!
//! Every subcommand resolves its configuration (schedule exponent window,
//! mixture weight bounds) before any compute, then emits one table in CSV
//! or JSON with per-row provenance.  Exit codes are stable: 0 success,
//! 1 computational failure, 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kaclab::densities::{delta_schedule, eta_mid, eta_window};

mod commands;
mod output;

#[derive(Parser)]
#[command(
    name = "kaclab",
    version,
    about = "Numerical laboratory for the d-dimensional Kac model",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Normalization table: log Z_N with oracle deltas
    Zn(ZnArgs),
    /// Gaussian-surrogate error scan epsilon(N) with decrease verdict
    ApproxScan(ScanArgs),
    /// Entropy H_N, its per-particle form, and the limit gap
    Entropy(EntropyArgs),
    /// Entropy production D_N by weighted pair Monte Carlo
    Production(ProductionArgs),
    /// Scaling study: H/N, D/N, the Gamma witness, fitted slopes
    Gamma(GammaArgs),
    /// Inequality fuzz suites with margins and fitted constants
    Validate(ValidateArgs),
    /// Collision-process trajectories and equilibrium checks
    Walk(WalkArgs),
    /// Two-route marginalization consistency check
    FubiniCheck(FubiniArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum InitArg {
    /// exact uniform draw on the sphere
    Uniform,
    /// all energy in the first particle
    Hot,
    /// antipodal hot pair, zero total momentum
    HotPair,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum KernelArg {
    #[value(alias = "energy_form")]
    EnergyForm,
    #[value(alias = "relative_speed")]
    RelativeSpeed,
}

#[derive(Args, Clone)]
pub struct CommonArgs {
    /// Velocity dimension
    #[arg(long, default_value_t = 2)]
    pub d: u32,
    /// Single N; takes precedence over --N-list
    #[arg(long = "N")]
    pub n: Option<u32>,
    /// Comma-separated N grid
    #[arg(long = "N-list", value_delimiter = ',', default_values_t = [32u32, 64, 128, 256])]
    pub n_list: Vec<u32>,
    /// Schedule exponent; defaults to the midpoint of the admissible window
    #[arg(long)]
    pub eta: Option<f64>,
    /// Moment exponent entering the admissible window
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Fixed mixture weight, bypassing the N-dependent schedule
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Monte Carlo budget where a command samples
    #[arg(long, default_value_t = 100_000)]
    pub budget: u64,
    /// Radial quadrature panels for entropy integrals
    #[arg(long = "grid-panels", default_value_t = 96)]
    pub grid_panels: u32,
    /// Tail mass cut for frequency grids
    #[arg(long = "grid-eps", default_value_t = 1e-12)]
    pub grid_eps: f64,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Output path; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
struct ZnArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Single-Maxwellian closed-form mode with this per-coordinate variance
    #[arg(long = "maxwellian-a")]
    maxwellian_a: Option<f64>,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Lattice points in the energy direction
    #[arg(long = "grid-u-points", default_value_t = 41)]
    u_points: u32,
    /// Lattice points in the momentum-modulus direction
    #[arg(long = "grid-z-points", default_value_t = 25)]
    z_points: u32,
}

#[derive(Args)]
struct EntropyArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ProductionArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Relative standard error demanded before a row reports converged
    #[arg(long = "se-threshold", default_value_t = 0.5)]
    se_threshold: f64,
    /// Use the Gaussian surrogate weight instead of the exact table
    #[arg(long)]
    surrogate: bool,
}

#[derive(Args)]
struct GammaArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct WalkArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trajectory end time
    #[arg(long = "t-end", default_value_t = 20.0)]
    t_end: f64,
    /// Number of equally spaced sample times
    #[arg(long, default_value_t = 200)]
    samples: u32,
    /// Independent replicas averaged for the series
    #[arg(long, default_value_t = 8)]
    replicas: u32,
    /// Initial condition
    #[arg(long, value_enum, default_value_t = InitArg::Uniform)]
    init: InitArg,
    /// Thinning kernel; plain rate-N process when omitted
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    /// Kernel exponent for thinned runs
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Total energy; defaults to N (unit energy per particle)
    #[arg(long)]
    energy: Option<f64>,
}

#[derive(Args)]
struct FubiniArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of frozen particles
    #[arg(long, default_value_t = 1)]
    j: u32,
}

/// Failures after argument parsing: usage errors exit 2, computational
/// failures exit 1.
pub enum CliError {
    Usage(String),
    Compute(String),
}

pub type CliResult = Result<(), CliError>;

pub fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

pub fn compute(msg: impl std::fmt::Display) -> CliError {
    CliError::Compute(msg.to_string())
}

/// Per-run configuration after defaults and schedule validation.
pub struct Resolved {
    pub command: &'static str,
    pub d: u32,
    pub n_list: Vec<u32>,
    pub eta: f64,
    pub beta: f64,
    /// fixed weight when given; otherwise each N uses the schedule
    pub delta: Option<f64>,
    pub seed: u64,
    pub budget: u64,
    pub grid_panels: u32,
    pub grid_eps: f64,
    pub json: bool,
    pub out: Option<PathBuf>,
}

impl Resolved {
    /// The mixture weight for one N: fixed override or the schedule value.
    pub fn delta_for(&self, n: u32) -> Result<f64, CliError> {
        match self.delta {
            Some(x) => Ok(x),
            None => delta_schedule(u64::from(n), self.eta).map_err(usage),
        }
    }

    pub fn config_hash(&self) -> u64 {
        let blob = format!(
            "{}|d={}|N={:?}|eta={:.12e}|beta={:.12e}|delta={:?}|seed={}|budget={}|panels={}|eps={:.3e}",
            self.command,
            self.d,
            self.n_list,
            self.eta,
            self.beta,
            self.delta,
            self.seed,
            self.budget,
            self.grid_panels,
            self.grid_eps
        );
        output::fnv1a(blob.as_bytes())
    }
}

/// Validate the shared flags before any compute: the exponent must sit in
/// the admissible window, and for commands that consume the mixture family
/// every scheduled weight must exist (< 1/2).  Commands that only touch
/// sphere geometry or the collision process (`walk`, `fubini-check`, and
/// `zn` in single-Maxwellian mode) skip the schedule check, so small N
/// without an admissible schedule weight still run.
fn resolve(
    common: &CommonArgs,
    command: &'static str,
    uses_schedule: bool,
) -> Result<Resolved, CliError> {
    let n_list = match common.n {
        Some(n) => vec![n],
        None => common.n_list.clone(),
    };
    if n_list.is_empty() {
        return Err(usage("need at least one N"));
    }
    let eta = match common.eta {
        Some(e) => {
            let (lo, hi) = eta_window(common.beta, common.d).map_err(usage)?;
            if !(e > lo && e < hi) {
                return Err(usage(format!(
                    "eta {e} outside the admissible window ({lo:.4}, {hi:.4})"
                )));
            }
            e
        }
        None => eta_mid(common.beta, common.d).map_err(usage)?,
    };
    let resolved = Resolved {
        command,
        d: common.d,
        n_list,
        eta,
        beta: common.beta,
        delta: common.delta,
        seed: common.seed,
        budget: common.budget,
        grid_panels: common.grid_panels,
        grid_eps: common.grid_eps,
        json: matches!(common.format, FormatArg::Json),
        out: common.out.clone(),
    };
    if let Some(x) = resolved.delta {
        if !(x > 0.0 && x <= 0.5) {
            return Err(usage(format!("delta must lie in (0, 1/2], got {x}")));
        }
    } else if uses_schedule {
        for &n in &resolved.n_list {
            resolved.delta_for(n)?;
        }
    }
    Ok(resolved)
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Cmd::Zn(a) => {
            let r = resolve(&a.common, "zn", a.maxwellian_a.is_none())?;
            commands::cmd_zn(&r, a.maxwellian_a)
        }
        Cmd::ApproxScan(a) => {
            let r = resolve(&a.common, "approx-scan", true)?;
            commands::cmd_approx_scan(&r, a.u_points, a.z_points)
        }
        Cmd::Entropy(a) => {
            let r = resolve(&a.common, "entropy", true)?;
            commands::cmd_entropy(&r)
        }
        Cmd::Production(a) => {
            let r = resolve(&a.common, "production", true)?;
            commands::cmd_production(&r, a.se_threshold, a.surrogate)
        }
        Cmd::Gamma(a) => {
            let r = resolve(&a.common, "gamma", true)?;
            if r.delta.is_some() {
                return Err(usage("the scaling study runs on the schedule; drop --delta"));
            }
            commands::cmd_gamma(&r)
        }
        Cmd::Validate(a) => {
            let r = resolve(&a.common, "validate", false)?;
            commands::cmd_validate(&r)
        }
        Cmd::Walk(a) => {
            let r = resolve(&a.common, "walk", false)?;
            commands::cmd_walk(
                &r,
                a.t_end,
                a.samples,
                a.replicas,
                a.init,
                a.kernel,
                a.gamma,
                a.energy,
            )
        }
        Cmd::FubiniCheck(a) => {
            let r = resolve(&a.common, "fubini-check", false)?;
            commands::cmd_fubini(&r, a.j)
        }
    }
}

fn main() -> ExitCode {
    if let Ok(w) = std::env::var("KACLAB_WORKERS") {
        if let Ok(threads) = w.parse::<usize>() {
            // a second initialization in one process is harmless here
            let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        }
    }
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("{}", serde_json::json!({ "error": m, "kind": "usage" }));
            ExitCode::from(2)
        }
        Err(CliError::Compute(m)) => {
            eprintln!("{}", serde_json::json!({ "error": m, "kind": "compute" }));
            ExitCode::from(1)
        }
    }
}
