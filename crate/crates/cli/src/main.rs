//! `pqlap` — solve the two mixed boundary value problems, verify their
//! comparison/monotonicity/convergence properties, and run the optimal
//! control workflows. Exit codes: 0 ok, 2 configuration error, 3 numerical
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pqlap::error::Error;
use pqlap::output::RunMeta;
use sha2::{Digest, Sha256};

use commands::{cmd_asymptotics, cmd_control, cmd_mesh_info, cmd_solve, cmd_sweep, cmd_verify, ensure_out_dir, Ctx};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "pqlap", version, about = "Finite-element runner for (p,q)-Laplacian mixed boundary value problems")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every randomized generator (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Thread cap for parallel sections.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Mesh resolution override.
    #[arg(long = "mesh-n", global = true)]
    mesh_n: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the configured problem once and write the nodal solution.
    Solve,
    /// Run the property-check harness end to end (manufactured or random).
    Verify,
    /// Tabulate the α-sweep without requiring the assertions to pass.
    Sweep,
    /// Minimize the tracking cost for the configured governed problem.
    Control,
    /// Optimal-control α-asymptotics against the DND-governed limit.
    Asymptotics,
    /// Print mesh statistics and export the mesh file.
    MeshInfo,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonConvergence { .. } | Error::SingularJacobian { .. } | Error::Control(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let (text, mut config) = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Parse(format!("cannot read config `{}`: {e}", path.display())))?;
            let cfg = RunConfig::from_toml(&text)?;
            (text, cfg)
        }
        None => (String::from("<built-in defaults>"), RunConfig::default()),
    };
    if let Some(n) = cli.mesh_n {
        config.mesh.n = n;
    }
    if let Some(seed) = cli.seed {
        config.output.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.display().to_string();
    }

    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.update(format!("mesh_n={:?};seed={}", cli.mesh_n, config.output.seed).as_bytes());
    let digest = hasher.finalize();
    let hash: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();

    let out_dir = PathBuf::from(&config.output.dir);
    ensure_out_dir(&out_dir)?;
    let meta = RunMeta::new(hash, config.output.seed);
    let ctx = Ctx { config, meta, out_dir };

    match cli.cmd {
        Cmd::Solve => cmd_solve(&ctx),
        Cmd::Verify => cmd_verify(&ctx),
        Cmd::Sweep => cmd_sweep(&ctx),
        Cmd::Control => cmd_control(&ctx),
        Cmd::Asymptotics => cmd_asymptotics(&ctx),
        Cmd::MeshInfo => cmd_mesh_info(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.max(1);
    if rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().is_err() {
        eprintln!("warning: thread pool already initialized");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
