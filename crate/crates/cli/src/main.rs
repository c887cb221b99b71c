mod check;
mod config;
mod output;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use entropic_jko::grid::fmt_float;
use entropic_jko::{
    gibbs_kernel, kl_divergence, regularized_cost, run_scheme, sample_on_grid, sinkhorn, transport_cost,
    DiscreteMeasure, Grid, Measure, Run, SinkhornOptions,
};
use log::info;

use crate::config::{ensure_small, Mode, Oracle, RunConfig};
use crate::output::{write_atomic, Staging};

#[derive(Parser)]
#[command(name = "ejko", version, about = "Entropic JKO solver for drift-diffusion equations")]
struct Cli {
    /// Worker threads; 0 picks the number of cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Overrides {
    #[arg(long)]
    config: PathBuf,
    /// Force log-domain stabilisation on.
    #[arg(long)]
    log_domain: bool,
    #[arg(long, conflicts_with = "matrix_free")]
    dense: bool,
    #[arg(long)]
    matrix_free: bool,
}

impl Overrides {
    fn load(&self) -> Result<RunConfig> {
        let (mut cfg, _) = RunConfig::load(&self.config)?;
        if self.log_domain {
            cfg.log_domain = Some(true);
        }
        if self.dense {
            cfg.kernel = Some(Mode::Dense);
        }
        if self.matrix_free {
            cfg.kernel = Some(Mode::MatrixFree);
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the scheme and write trace, states and errors.
    Solve {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the exact solution of a heat or Kramers configuration.
    Exact {
        #[command(flatten)]
        overrides: Overrides,
        /// Time of the exact solution (Green-function time for Kramers).
        #[arg(long)]
        time: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute error.csv from the saved states of a run directory.
    Error {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Entropic optimal transport between two measure files.
    Ot {
        #[command(subcommand)]
        command: OtCommand,
    },
    /// Cost matrix utilities.
    Cost {
        #[command(subcommand)]
        command: CostCommand,
    },
    /// Self-tests against closed forms.
    Check,
}

#[derive(Subcommand)]
enum OtCommand {
    Solve {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        mu: PathBuf,
        #[arg(long)]
        nu: PathBuf,
        /// Directory for summary.toml and plan.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CostCommand {
    /// Write `i,j,cost` for every pair of grid points.
    Dump {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global().context("cannot start thread pool")?;
    match cli.command {
        Command::Solve { overrides, out } => solve(&overrides.load()?, &out)?,
        Command::Exact { overrides, time, out } => exact(&overrides.load()?, time, &out)?,
        Command::Error { run, out } => error(&run, out.as_deref())?,
        Command::Ot { command: OtCommand::Solve { overrides, mu, nu, out } } => ot_solve(&overrides.load()?, &mu, &nu, &out)?,
        Command::Cost { command: CostCommand::Dump { overrides, out } } => cost_dump(&overrides.load()?, &out)?,
        Command::Check => return Ok(check()),
    }
    Ok(ExitCode::SUCCESS)
}

fn solve(cfg: &RunConfig, out: &Path) -> Result<()> {
    let grid = cfg.grid()?;
    let cost = cfg.cost()?;
    let energy = cfg.energy(&grid)?;
    let rho0 = cfg.initial(&grid)?;
    let scheme = cfg.scheme()?;
    let oracle = cfg.oracle()?;
    println!("scaling ratio eps|log eps|/h^2 = {}", fmt_float(scheme.scaling_ratio()));
    info!("{} grid points, {} steps", grid.len(), scheme.steps);

    let run = match run_scheme(&rho0, &cost, &energy, &scheme) {
        Ok(run) => run,
        Err(fail) => bail!("{}", *fail),
    };

    let mut stage = Staging::new(out)?;
    stage.write("config.toml", &cfg.echo()?)?;
    stage.write("trace.csv", &trace_csv(&run))?;
    let every = cfg.save_every.unwrap_or(1);
    let last = run.completed_steps();
    for (n, rho) in run.iterates.iter().enumerate() {
        if n % every == 0 || n == last {
            stage.write(&format!("state_{n}.csv"), &rho.to_csv())?;
        }
    }
    let mut terminal = None;
    if let Some(oracle) = &oracle {
        let states: Vec<(usize, &Measure)> = run.iterates.iter().enumerate().collect();
        let rows = error_rows(oracle, cfg.h, &states, &grid)?;
        terminal = rows.last().map(|r| r.1);
        stage.write("error.csv", &error_csv(&rows))?;
    }
    stage.commit()?;
    let worst = run.steps.iter().map(|s| s.mass_drift).fold(0.0, f64::max);
    println!("completed {last} steps, max mass drift {}", fmt_float(worst));
    if let Some(e) = terminal {
        println!("terminal L1 error {}", fmt_float(e));
    }
    Ok(())
}

fn trace_csv(run: &Run) -> String {
    let mut s = String::from("step,time,free_energy,entropy,second_moment,transport_objective,inner_iters,residual\n");
    for n in 0..run.iterates.len() {
        let _ = write!(
            s,
            "{n},{},{},{},{}",
            fmt_float(run.time(n)),
            fmt_float(run.free_energy[n]),
            fmt_float(run.entropy[n]),
            fmt_float(run.second_moment[n])
        );
        match n.checked_sub(1).and_then(|k| run.steps.get(k)) {
            Some(d) => {
                let _ = writeln!(s, ",{},{},{}", fmt_float(d.transport_objective), d.inner_iterations, fmt_float(d.residual));
            }
            None => s.push_str(",,,\n"),
        }
    }
    s
}

fn exact_measure(oracle: &Oracle, t: f64, grid: &std::sync::Arc<Grid>) -> Result<Measure> {
    Ok(match oracle {
        Oracle::Heat { mean, variance, diffusivity } => {
            DiscreteMeasure::gaussian(grid.clone(), mean, variance + 2.0 * diffusivity * t)?
        }
        Oracle::Kramers(params) => sample_on_grid(params, t, grid)?,
    })
}

/// `(time, L¹ error)` for each state; Kramers times are Green-function times.
fn error_rows(oracle: &Oracle, h: f64, states: &[(usize, &Measure)], grid: &std::sync::Arc<Grid>) -> Result<Vec<(f64, f64)>> {
    let offset = match oracle {
        Oracle::Kramers(p) => p.t0,
        Oracle::Heat { .. } => 0.0,
    };
    states
        .iter()
        .map(|&(n, rho)| {
            let t = offset + h * n as f64;
            let exact = exact_measure(oracle, t, grid)?;
            Ok((t, rho.l1_distance(&exact)?))
        })
        .collect()
}

fn error_csv(rows: &[(f64, f64)]) -> String {
    let mut s = String::from("time,l1_error\n");
    for &(t, e) in rows {
        let _ = writeln!(s, "{},{}", fmt_float(t), fmt_float(e));
    }
    s
}

fn no_oracle() -> anyhow::Error {
    anyhow::anyhow!("no exact solution for this configuration (heat with a Gaussian datum and zero potential, or 1D Kramers with t0)")
}

fn exact(cfg: &RunConfig, time: f64, out: &Path) -> Result<()> {
    let grid = cfg.grid()?;
    let oracle = cfg.oracle()?.ok_or_else(no_oracle)?;
    let rho = exact_measure(&oracle, time, &grid)?;
    write_atomic(out, &rho.to_csv())?;
    println!("mass before renormalisation {}", fmt_float(rho.raw_mass()));
    Ok(())
}

fn error(run_dir: &Path, out: Option<&Path>) -> Result<()> {
    let (cfg, _) = RunConfig::load(&run_dir.join("config.toml"))?;
    let grid = cfg.grid()?;
    let oracle = cfg.oracle()?.ok_or_else(no_oracle)?;
    let mut states = Vec::new();
    for entry in std::fs::read_dir(run_dir).with_context(|| format!("cannot read {}", run_dir.display()))? {
        let path = entry?.path();
        let n = path
            .file_name()
            .and_then(|f| f.to_str())
            .and_then(|f| f.strip_prefix("state_"))
            .and_then(|f| f.strip_suffix(".csv"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(n) = n {
            let text = std::fs::read_to_string(&path)?;
            let rho = Measure::from_csv(grid.clone(), &text).with_context(|| format!("in {}", path.display()))?;
            states.push((n, rho));
        }
    }
    if states.is_empty() {
        bail!("no state_<n>.csv files in {}", run_dir.display());
    }
    states.sort_by_key(|s| s.0);
    let refs: Vec<(usize, &Measure)> = states.iter().map(|(n, r)| (*n, r)).collect();
    let rows = error_rows(&oracle, cfg.h, &refs, &grid)?;
    let target = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("error.csv"));
    write_atomic(&target, &error_csv(&rows))
}

fn ot_solve(cfg: &RunConfig, mu: &Path, nu: &Path, out: &Path) -> Result<()> {
    let grid = cfg.grid()?;
    let read = |p: &Path| -> Result<Measure> {
        let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
        Measure::from_csv(grid.clone(), &text).with_context(|| format!("in {}", p.display()))
    };
    let (mu, nu) = (read(mu)?, read(nu)?);
    let scheme = cfg.scheme()?;
    let mut kernel = gibbs_kernel(&cfg.cost()?, &grid, cfg.epsilon, scheme.kernel)?;
    let opts = SinkhornOptions {
        tol: scheme.inner.tol,
        max_iter: scheme.inner.max_iter,
        log_domain: scheme.inner.log_domain,
        ..SinkhornOptions::default()
    };
    let (plan, state) = sinkhorn(&mut kernel, &mu, &nu, &opts)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "converged = {}", state.converged);
    let _ = writeln!(summary, "iterations = {}", state.iterations);
    let _ = writeln!(summary, "residual = {}", fmt_float(state.residual()));
    let _ = writeln!(summary, "transport_cost = {}", fmt_float(transport_cost(&plan, &kernel)?));
    let _ = writeln!(summary, "regularized_cost = {}", fmt_float(regularized_cost(&plan, &kernel, grid.tile_volume())?));
    let _ = writeln!(summary, "kl_divergence = {}", fmt_float(kl_divergence(&plan, &kernel)?));
    print!("{summary}");

    let mut stage = Staging::new(out)?;
    stage.write("summary.toml", &summary)?;
    if grid.len() <= 2000 {
        let mut s = String::from("i,j,mass\n");
        for i in 0..grid.len() {
            for j in 0..grid.len() {
                let _ = writeln!(s, "{i},{j},{}", fmt_float(plan.entry(&kernel, i, j)));
            }
        }
        stage.write("plan.csv", &s)?;
    }
    stage.commit()?;
    if !state.converged {
        bail!("Sinkhorn stopped after {} iterations with residual {}", state.iterations, state.residual());
    }
    Ok(())
}

fn cost_dump(cfg: &RunConfig, out: &Path) -> Result<()> {
    let grid = cfg.grid()?;
    let m = grid.len();
    ensure_small(m, "cost dump")?;
    let cost = cfg.cost()?.compile()?;
    let coords = grid.coordinates();
    let d = grid.dim();
    let mut s = String::from("i,j,cost\n");
    for i in 0..m {
        for j in 0..m {
            let c = cost.eval(&coords[i * d..(i + 1) * d], &coords[j * d..(j + 1) * d]);
            let _ = writeln!(s, "{i},{j},{}", fmt_float(c));
        }
    }
    write_atomic(out, &s)
}

fn check() -> ExitCode {
    let outcomes = check::run_all();
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    for o in &outcomes {
        println!("{:<width$}  {}  {}", o.name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if outcomes.iter().all(|o| o.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
