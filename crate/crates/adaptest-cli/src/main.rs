//! Batch front end: reads a key-value config, writes CSV tables and a JSON sidecar.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use adaptest::harness::{self, Config, ExperimentOutput};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adaptest", version, about = "Adaptive tests for sparse linear functionals")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Rate functionals of a loading vector
    Profile(Common),
    /// Scaled Lasso fit of one dataset
    Fit(Common),
    /// One mixed test decision
    Test(Common),
    /// Prior validity and chi-square diagnostics
    Prior(Common),
    /// Low-degree norms of a prior
    Lowdeg(Common),
    /// Calibrated power of the sparse CCA statistics
    Scca(Common),
    /// Monte Carlo experiment named by the `experiment` key
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    /// Key-value config file
    #[arg(long)]
    config: PathBuf,
    /// Overrides the `seed` key
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write one (x, y, se) file per summary metric
    #[arg(long)]
    emit_plotdata: bool,
    /// Worker threads (0 = all cores); never changes results
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

type Runner = fn(&Config, usize) -> adaptest::Result<ExperimentOutput>;

fn run(cmd: &Cmd) -> adaptest::Result<()> {
    let (c, f): (&Common, Runner) = match cmd {
        Cmd::Profile(c) => (c, |cfg, _| harness::run_profile(cfg)),
        Cmd::Fit(c) => (c, |cfg, _| harness::run_fit(cfg)),
        Cmd::Test(c) => (c, |cfg, _| harness::run_test(cfg)),
        Cmd::Prior(c) => (c, harness::run_prior),
        Cmd::Lowdeg(c) => (c, harness::run_lowdeg),
        Cmd::Scca(c) => (c, harness::run_scca),
        Cmd::Simulate(c) => (c, harness::run_experiment),
    };
    let mut cfg = Config::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.set("seed", s);
    }
    let out = f(&cfg, c.threads)?;
    for p in out.write(&c.out, &cfg, c.emit_plotdata)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
