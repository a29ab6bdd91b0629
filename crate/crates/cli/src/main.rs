use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use numperturb::harness::{
    self, Campaign, Counterexample, CounterexampleOptions, Format, Report, Tolerances,
};
use numperturb::market_file::MarketFile;
use numperturb::{MarketModel, Utility};

#[derive(Parser)]
#[command(name = "numperturb", version, about = "Numeraire-perturbation expansions on scenario trees")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct Output {
    /// Report destination; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "csv", value_parser = parse_format)]
    format: Format,
    /// Tolerance for pointwise checks.
    #[arg(long, global = true, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Args)]
struct ModelArgs {
    /// JSON market file with a utility block.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    x: f64,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    eps_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    dx_grid: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the primal and dual problems at each eps.
    Solve {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0")]
        eps_grid: Vec<f64>,
    },
    /// Quadratic expansion checked against exact re-solves.
    Expand {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Nearly optimal wealth processes checked against exact re-solves.
    Strategy {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Risk-tolerance decomposition against the auxiliary problems.
    RiskTolerance {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Built-in counterexamples: unbounded-jumps or integrability.
    Counterexample {
        #[arg(value_parser = parse_counterexample)]
        which: Counterexample,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        eps_grid: Option<Vec<f64>>,
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        depths: Option<Vec<usize>>,
        #[arg(long)]
        x: Option<f64>,
    },
    /// Every campaign on the built-in instances.
    VerifyAll,
}

fn parse_format(s: &str) -> std::result::Result<Format, String> {
    s.parse().map_err(|e: numperturb::Error| e.to_string())
}

fn parse_counterexample(s: &str) -> std::result::Result<Counterexample, String> {
    s.parse().map_err(|e: numperturb::Error| e.to_string())
}

fn load(spec: &Path) -> Result<(MarketModel, Utility)> {
    let file = MarketFile::load(spec).with_context(|| format!("reading {}", spec.display()))?;
    let model = file.to_model().with_context(|| format!("building model from {}", spec.display()))?;
    let Some(u) = file.utility()? else {
        bail!("{} has no utility block", spec.display());
    };
    Ok((model, u))
}

fn campaign(model: &ModelArgs, grid: GridArgs, tol: f64) -> Result<Campaign> {
    let (m, u) = load(&model.spec)?;
    let mut c = Campaign::new(m, u, model.x);
    if let Some(g) = grid.eps_grid {
        c.eps_grid = g;
    }
    if let Some(g) = grid.dx_grid {
        c.dx_grid = g;
    }
    c.tol = Tolerances { check: tol, ..Tolerances::default() };
    Ok(c)
}

fn run(cmd: Command, tol: f64) -> Result<Report> {
    let rep = match cmd {
        Command::Solve { model, eps_grid } => {
            let (m, u) = load(&model.spec)?;
            let mut rep = Report::new();
            rep.meta("spec", model.spec.display());
            for eps in eps_grid {
                rep.extend(&format!("eps={eps}"), harness::run_solve(&m, &u, model.x, eps, tol)?);
            }
            rep
        }
        Command::Expand { model, grid } => harness::run_expansion_campaign(&campaign(&model, grid, tol)?)?,
        Command::Strategy { model, grid } => harness::run_strategy_campaign(&campaign(&model, grid, tol)?)?,
        Command::RiskTolerance { model } => {
            let (m, u) = load(&model.spec)?;
            harness::run_risk_tolerance(&m, &u, model.x, tol)?
        }
        Command::Counterexample { which, eps_grid, n_max, depths, x } => {
            let mut o = CounterexampleOptions::default();
            if let Some(g) = eps_grid {
                o.eps_grid = g;
            }
            if let Some(n) = n_max {
                o.n_max = n;
            }
            if let Some(d) = depths {
                o.depths = d;
            }
            if let Some(x) = x {
                o.x = x;
            }
            harness::run_counterexample(which, &o)?
        }
        Command::VerifyAll => harness::verify_all()?,
    };
    Ok(rep)
}

fn write(rep: &Report, out: &Output) -> Result<()> {
    match &out.out {
        Some(p) => rep.emit(p, out.format).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{}", rep.render(out.format)),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = cli.out;
    match run(cli.cmd, out.tol).and_then(|rep| write(&rep, &out).map(|_| rep)) {
        Ok(rep) if rep.all_pass() => ExitCode::SUCCESS,
        Ok(rep) => {
            for f in rep.failures() {
                eprintln!("FAIL {} [{}]: residual {:e}", f.name, f.anchor, f.residual);
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
