//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hetfield::field::Location;
use hetfield::ingest::{fit_separable_mle, parse_storm, FitData};
use hetfield::io::{
    read_field_csv, read_observations_csv, write_deployment_csv, write_field_csv, write_grid_csv,
    write_observations_csv, write_pgm, GridField, OutputHeader,
};
use hetfield::oracle::{check_gaussmath, check_moments, moment_grid, ClosedForm, OracleOptions};
use hetfield::sblue::{reconstruct_with, rmse, rse_map, Estimator};
use hetfield::select::{ce_select, exhaustive_select, Query};
use hetfield::sensors::SensorDeployment;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, RunConfig, Settings};
use crate::experiment::{build_deployment, simulate};

#[derive(Debug, Parser)]
#[command(name = "hetfield", version, about = "Field reconstruction and sensor selection for heterogeneous sensor networks")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// key=value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Override one configuration key (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Cli {
    /// Parses `args`, keeping `--set` values given on both sides of the
    /// subcommand (clap keeps only the last group of a global list).
    pub fn parse_args<I, T>(args: I) -> Result<Self, clap::Error>
    where
        I: IntoIterator<Item = T>,
        T: Into<std::ffi::OsString> + Clone,
    {
        let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
        let mut cli = Cli::try_parse_from(&args)?;
        let mut overrides = Vec::new();
        let mut it = args.iter().skip(1).map(|a| a.to_string_lossy());
        while let Some(a) = it.next() {
            if a == "--" {
                break;
            } else if a == "--set" {
                overrides.extend(it.next().map(|v| v.into_owned()));
            } else if let Some(v) = a.strip_prefix("--set=") {
                overrides.push(v.to_string());
            }
        }
        cli.common.overrides = overrides;
        Ok(cli)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a ground-truth field, energy field and sensor readings
    Simulate {
        /// Also write observations for every threshold in sweep.thresholds
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        pgm: bool,
    },
    /// Reconstruct the field on the configured grid from sensor readings
    Reconstruct {
        /// Defaults to <out>/observations.csv
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Ground-truth grid; enables RSE output and the RMSE line
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Reconstruct <out>/observations_T<T>.csv for every threshold in sweep.thresholds
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        pgm: bool,
    },
    /// Choose the cheapest sensor subset meeting an MSE target at one location
    Select {
        /// Query location as x,y
        #[arg(long, value_parser = parse_point)]
        at: Option<(f64, f64)>,
        /// Largest acceptable predictive MSE
        #[arg(long)]
        epsilon: Option<f64>,
        /// Enumerate every subset instead of running the cross-entropy search
        #[arg(long)]
        exhaustive: bool,
    },
    /// Fit a separable exponential kernel to a storm footprint
    Fit {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        footprint: PathBuf,
    },
    /// Check the closed-form moments against Monte-Carlo and quadrature oracles
    Oracle {
        #[arg(long)]
        mc_samples: Option<usize>,
    },
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected x,y, got {s:?}"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("not a number: {v:?}"));
    Ok((num(x)?, num(y)?))
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] hetfield::Error),
    #[error("{0}")]
    OracleViolation(String),
}

impl CliError {
    /// 1 usage/config, 2 numerical failure, 3 oracle violation.
    pub fn exit_code(&self) -> i32 {
        use hetfield::Error as E;
        match self {
            CliError::Config(_) => 1,
            CliError::OracleViolation(_) => 3,
            CliError::Core(e) => match e {
                E::NonConvergence { .. }
                | E::FactorizationFailure { .. }
                | E::SingularMoments { .. }
                | E::DegenerateData
                | E::InsufficientData { .. } => 2,
                _ => 1,
            },
        }
    }
}

pub fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut settings = Settings::default();
    if let Some(path) = &common.config {
        settings.load_file(path)?;
    }
    for pair in &common.overrides {
        settings.set(pair)?;
    }
    if let Some(seed) = common.seed {
        settings.set_seed(seed);
    }
    Ok(settings.resolve()?)
}

fn header(cfg: &RunConfig) -> OutputHeader {
    OutputHeader {
        config_hash: cfg.hash.clone(),
        seed: cfg.seed,
    }
}

fn out_dir(common: &Common) -> Result<&Path, CliError> {
    std::fs::create_dir_all(&common.out).map_err(|e| {
        hetfield::Error::Io {
            path: common.out.clone(),
            source: e,
        }
    })?;
    Ok(&common.out)
}

fn sweep_name(t: f64) -> String {
    format!("observations_T{t}.csv")
}

/// Runs one subcommand; returns the summary printed on stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = load_config(&cli.common)?;
    match &cli.command {
        Command::Simulate { sweep, pgm } => cmd_simulate(&cfg, &cli.common, *sweep, *pgm || cfg.pgm),
        Command::Reconstruct {
            observations,
            truth,
            sweep,
            pgm,
        } => cmd_reconstruct(&cfg, &cli.common, observations.as_deref(), truth.as_deref(), *sweep, *pgm || cfg.pgm),
        Command::Select { at, epsilon, exhaustive } => cmd_select(&cfg, &cli.common, *at, *epsilon, *exhaustive),
        Command::Fit { grid, footprint } => cmd_fit(&cfg, &cli.common, grid, footprint),
        Command::Oracle { mc_samples } => cmd_oracle(&cfg, &cli.common, *mc_samples),
    }
}

pub fn cmd_simulate(cfg: &RunConfig, common: &Common, sweep: bool, pgm: bool) -> Result<String, CliError> {
    let dir = out_dir(common)?;
    let h = header(cfg);
    let mut thresholds = vec![cfg.threshold];
    if sweep {
        thresholds.extend(cfg.sweep_thresholds.iter().copied());
    }
    let sim = simulate(cfg, &thresholds)?;
    write_deployment_csv(&dir.join("deployment.csv"), &sim.deployment, Some(&h))?;
    write_field_csv(&dir.join("truth.csv"), &sim.truth, Some(&h))?;
    write_field_csv(&dir.join("energy.csv"), &sim.energy, Some(&h))?;
    write_observations_csv(&dir.join("observations.csv"), &sim.deployment, &sim.observations[0].1, Some(&h))?;
    for (t, obs) in &sim.observations[1..] {
        let mut d = sim.deployment.clone();
        d.threshold = *t;
        write_observations_csv(&dir.join(sweep_name(*t)), &d, obs, Some(&h))?;
    }
    if pgm {
        write_pgm(&dir.join("truth.pgm"), &sim.truth.values, Some(&h))?;
        write_pgm(&dir.join("energy.pgm"), &sim.energy.values, Some(&h))?;
    }
    Ok(format!(
        "simulated {} observations ({} high, {} low) on a {}x{} grid",
        sim.deployment.len(),
        sim.deployment.n_high(),
        sim.deployment.n_low(),
        cfg.grid.nx,
        cfg.grid.ny
    ))
}

fn check_sites(path: &Path, expected: &SensorDeployment<f64>, high: &[Location<f64>], low: &[Location<f64>]) -> Result<(), CliError> {
    let shape_err = |found: String| {
        CliError::Core(hetfield::Error::ShapeMismatch {
            context: format!("sensors in {}", path.display()),
            expected: format!("{} high + {} low", expected.n_high(), expected.n_low()),
            found,
        })
    };
    if high.len() != expected.n_high() || low.len() != expected.n_low() {
        return Err(shape_err(format!("{} high + {} low", high.len(), low.len())));
    }
    let same = |a: &[Location<f64>], b: &[Location<f64>]| {
        a.iter()
            .zip(b)
            .all(|(p, q)| (p.x - q.x).abs() <= 1e-9 * (1.0 + p.x.abs()) && (p.y - q.y).abs() <= 1e-9 * (1.0 + p.y.abs()))
    };
    if !same(high, &expected.high_locs) || !same(low, &expected.low_locs) {
        return Err(shape_err("sensor locations that differ from the configured deployment".into()));
    }
    Ok(())
}

pub fn cmd_reconstruct(
    cfg: &RunConfig,
    common: &Common,
    observations: Option<&Path>,
    truth: Option<&Path>,
    sweep: bool,
    pgm: bool,
) -> Result<String, CliError> {
    let dir = out_dir(common)?.to_path_buf();
    let h = header(cfg);
    let base = build_deployment(cfg)?;
    let mut runs: Vec<(f64, PathBuf, String)> = Vec::new();
    if sweep {
        for &t in &cfg.sweep_thresholds {
            runs.push((t, dir.join(sweep_name(t)), format!("_T{t}")));
        }
    } else {
        let path = observations.map_or_else(|| dir.join("observations.csv"), Path::to_path_buf);
        runs.push((cfg.threshold, path, String::new()));
    }
    let truth_path = match truth {
        Some(p) => Some(p.to_path_buf()),
        None if sweep => Some(dir.join("truth.csv")),
        None => None,
    };
    let truth: Option<GridField<f64>> = truth_path.as_deref().map(read_field_csv).transpose()?;

    let mut summary = String::new();
    for (t, path, suffix) in runs {
        let table = read_observations_csv::<f64>(&path)?;
        let mut d = base.clone();
        d.threshold = t;
        check_sites(&path, &d, &table.high_locs, &table.low_locs)?;
        let est = Estimator::new(&d)?;
        let grid = reconstruct_with(&est, &table.observations, &cfg.grid)?;
        write_grid_csv(&dir.join(format!("reconstruction{suffix}.csv")), &grid, Some(&h))?;
        if pgm {
            write_pgm(&dir.join(format!("estimate{suffix}.pgm")), &grid.estimates, Some(&h))?;
            write_pgm(&dir.join(format!("mse{suffix}.pgm")), &grid.mse, Some(&h))?;
        }
        let line = match &truth {
            Some(tr) => {
                let rse = rse_map(&grid, &tr.values)?;
                let field = GridField {
                    xs: grid.xs.clone(),
                    ys: grid.ys.clone(),
                    values: rse,
                };
                write_field_csv(&dir.join(format!("rse{suffix}.csv")), &field, Some(&h))?;
                if pgm {
                    write_pgm(&dir.join(format!("rse{suffix}.pgm")), &field.values, Some(&h))?;
                }
                format!("T={t} rmse={:.6}", rmse(&grid, &tr.values)?)
            }
            None => format!("T={t} reconstructed {}x{} cells", cfg.grid.nx, cfg.grid.ny),
        };
        if !summary.is_empty() {
            summary.push('\n');
        }
        summary.push_str(&line);
    }
    Ok(summary)
}

pub fn cmd_select(
    cfg: &RunConfig,
    common: &Common,
    at: Option<(f64, f64)>,
    epsilon: Option<f64>,
    exhaustive: bool,
) -> Result<String, CliError> {
    let dir = out_dir(common)?;
    let d = build_deployment(cfg)?;
    let location = at.map_or(cfg.query.0, |(x, y)| Location::new(x, y));
    let query = Query::new(location, epsilon.unwrap_or(cfg.query.1))?;
    let report = if exhaustive {
        exhaustive_select(&query, &d, &cfg.ce)?
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        ce_select(&query, &d, &cfg.ce, &mut rng)?
    };
    let line = report.to_string();
    let text = format!("{}\nstatus,cost,mse,iters,bitmask_high,bitmask_low\n{line}\n", header(cfg).line());
    std::fs::write(dir.join("selection.csv"), text).map_err(|e| hetfield::Error::Io {
        path: dir.join("selection.csv"),
        source: e,
    })?;
    Ok(line)
}

pub fn cmd_fit(cfg: &RunConfig, common: &Common, grid: &Path, footprint: &Path) -> Result<String, CliError> {
    let dir = out_dir(common)?;
    let ds = parse_storm(grid, footprint)?;
    let (locs, values) = ds.locations_and_values::<f64>()?;
    let fit = fit_separable_mle(&FitData::single(locs, values), &cfg.fit_init, &cfg.fit_options)?;
    let p = fit.params;
    let mut text = format!("{}\n", header(cfg).line());
    let _ = writeln!(text, "field.kernel=separable");
    let _ = writeln!(text, "field.sigma2_x={}", p.sigma2_x);
    let _ = writeln!(text, "field.length_x={}", p.len_x);
    let _ = writeln!(text, "field.sigma2_y={}", p.sigma2_y);
    let _ = writeln!(text, "field.length_y={}", p.len_y);
    let _ = writeln!(text, "# nugget={} log_likelihood={} converged={}", p.nugget, fit.log_likelihood, fit.converged);
    let path = dir.join("fit.cfg");
    std::fs::write(&path, text).map_err(|e| hetfield::Error::Io { path, source: e })?;
    Ok(format!(
        "variance={:.6} length_x={:.6} length_y={:.6} nugget={:.3e} loglik={:.4} converged={} points={}",
        p.variance_product(),
        p.len_x,
        p.len_y,
        p.nugget,
        fit.log_likelihood,
        fit.converged,
        ds.len()
    ))
}

pub fn cmd_oracle(cfg: &RunConfig, common: &Common, mc_samples: Option<usize>) -> Result<String, CliError> {
    let dir = out_dir(common)?;
    let opts = OracleOptions {
        mc_samples: mc_samples.unwrap_or(cfg.oracle_mc_samples),
        seed: cfg.seed,
        ..OracleOptions::default()
    };
    let mut report = check_moments(&ClosedForm, &moment_grid(&[0.0, cfg.field.mean]), &opts)?;
    report.rows.extend(check_gaussmath()?.rows);
    let path = dir.join("oracle.tsv");
    let text = format!("{}\n{}", header(cfg).line(), report.to_tsv());
    std::fs::write(&path, text).map_err(|e| hetfield::Error::Io { path, source: e })?;
    let mut summary = String::new();
    for (check, worst, total, failed) in report.summary() {
        let _ = writeln!(summary, "{check}\tmax_ratio={worst:.3}\tfailed={failed}/{total}");
    }
    let failed = report.failures().count();
    if failed > 0 {
        let names: Vec<String> = report.failures().map(|d| format!("{} [{}]", d.check, d.case)).collect();
        return Err(CliError::OracleViolation(format!(
            "{summary}{failed} oracle comparisons out of tolerance: {}",
            names.join(", ")
        )));
    }
    Ok(summary.trim_end().to_string())
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_collected_around_subcommand() {
        let cli = Cli::parse_args(["hetfield", "--set", "a=1", "simulate", "--set", "b=2", "--set=c=3"]).unwrap();
        assert_eq!(cli.common.overrides, ["a=1", "b=2", "c=3"]);
    }

    #[test]
    fn exit_codes_by_failure_kind() {
        assert_eq!(CliError::Config(ConfigError("x".into())).exit_code(), 1);
        assert_eq!(CliError::Core(hetfield::Error::DegenerateData).exit_code(), 2);
    }
}
