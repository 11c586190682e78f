use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spde_lab_core::bounds::{run_battery, write_reports_csv, Verdict};
use spde_lab_core::coefficients::{CoefficientSpec, DiffusionFamily, DriftFamily};
use spde_lab_core::diagnostics::{
    holder_fit, moment_norm_estimate, write_holder_csv, write_moments_csv, Direction, HolderSpec,
};
use spde_lab_core::experiment::{
    self, aggregate, resolve_jobs, run, sweep, write_path_jsonl, ExperimentConfig, InitialData, PathHeader,
};
use spde_lab_core::noise::{GridSpec, StabilityGate, GENERATOR_TAG};
use spde_lab_core::solver::PathResult;
use spde_lab_core::{HeatKernel, LabError, Result, SCHEMA_VERSION};

#[derive(Parser)]
#[command(name = "spde-lab", version, about = "Simulate and analyse u' = u''/2 + b(u) + sigma(u) xi on [0, 1]")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct Jobs {
    /// Worker threads [default: SPDE_LAB_JOBS, else all cores]
    #[arg(long, env = "SPDE_LAB_JOBS")]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a single path and write it as JSONL
    Simulate(SimulateArgs),
    /// Run the ensemble described by a config file
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding `outputs`
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        jobs: Jobs,
    },
    /// Run a config once per value of one parameter
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of: t_end, dt, nx, epsilon, theta1, theta2, power, drift_scale,
        /// offset, sigma, amplitude, blowup_threshold, seed_base
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n_paths: Option<usize>,
        #[command(flatten)]
        jobs: Jobs,
    },
    /// Merge path files into one summary CSV
    Aggregate {
        /// Glob matching path JSONL files
        pattern: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the kernel bound battery and write one report per row
    VerifyKernel {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        jobs: Jobs,
    },
    /// Fit Hölder exponents from stored fields of path files
    Holder(HolderArgs),
    /// Estimate moment norms from stored fields of path files
    Moments {
        pattern: String,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        beta: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,8")]
        k: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// Base config; flags given explicitly override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    nx: Option<usize>,
    /// Time step [default: dx²/2]
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Allow dt up to dx instead of dx²
    #[arg(long)]
    semi_implicit: bool,
    /// Drift as `family:key=value,...`, e.g. `log_critical:theta1=0,theta2=1`
    #[arg(long)]
    drift: Option<String>,
    /// Diffusion as a number (constant) or `family:key=value,...`
    #[arg(long)]
    sigma: Option<String>,
    /// Initial data as `kind:key=value,...`, e.g. `sine_mode:amplitude=5,mode=1`
    #[arg(long)]
    u0: Option<String>,
    #[arg(long, value_delimiter = ',')]
    ladder: Option<Vec<f64>>,
    #[arg(long)]
    blowup_threshold: Option<f64>,
    #[arg(long)]
    out_stride: Option<usize>,
    /// Store the full field every this many steps
    #[arg(long)]
    snapshot_stride: Option<usize>,
    /// Output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HolderArgs {
    pattern: String,
    #[arg(long, default_value = "space")]
    direction: String,
    #[arg(long, default_value_t = 2.0)]
    k: f64,
    #[arg(long, default_value_t = 0.5)]
    t_star: f64,
    /// Explicit lags; otherwise `n_lags` geometric lags in [lag_min, lag_max]
    #[arg(long, value_delimiter = ',')]
    lags: Option<Vec<f64>>,
    #[arg(long)]
    lag_min: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    lag_max: f64,
    #[arg(long, default_value_t = 8)]
    n_lags: usize,
    /// Hölder exponent of the initial data, for the theory columns
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `tag:key=value,...` into a TOML table with the tag under `tag_key`.
fn parse_tagged<T: serde::de::DeserializeOwned>(spec: &str, tag_key: &str) -> Result<T> {
    let (tag, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut table = toml::Table::new();
    table.insert(tag_key.into(), toml::Value::String(tag.trim().into()));
    for kv in rest.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| LabError::Config(format!("expected key=value in {spec:?}, got {kv:?}")))?;
        let v = v.trim();
        let value = if let Ok(i) = v.parse::<i64>() {
            toml::Value::Integer(i)
        } else if let Ok(f) = v.parse::<f64>() {
            toml::Value::Float(f)
        } else {
            toml::Value::String(v.into())
        };
        table.insert(k.trim().into(), value);
    }
    table
        .try_into()
        .map_err(|e| LabError::Config(format!("cannot parse {spec:?}: {e}")))
}

fn simulate_config(a: &SimulateArgs) -> Result<ExperimentConfig> {
    let mut c = match &a.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => {
            let nx = a.nx.unwrap_or(127);
            let dx = 1.0 / (nx + 1) as f64;
            ExperimentConfig::new(
                GridSpec {
                    nx,
                    dt: a.dt.unwrap_or(dx * dx / 2.0),
                    t_end: a.t_end.unwrap_or(1.0),
                    stability_gate: StabilityGate::Explicit,
                },
                CoefficientSpec::new(
                    DriftFamily::LogCritical { theta1: 0.0, theta2: 1.0 },
                    DiffusionFamily::Constant { sigma0: 1.0 },
                ),
                InitialData::SineMode { amplitude: 1.0, mode: 1 },
                1,
                a.seed,
            )
        }
    };
    if let Some(nx) = a.nx {
        c.grid.nx = nx;
    }
    if let Some(dt) = a.dt {
        c.grid.dt = dt;
    }
    if let Some(t) = a.t_end {
        c.grid.t_end = t;
    }
    if a.semi_implicit {
        c.grid.stability_gate = StabilityGate::SemiImplicit;
    }
    if let Some(d) = &a.drift {
        c.coefficients.drift = parse_tagged(d, "family")?;
    }
    if let Some(s) = &a.sigma {
        c.coefficients.diffusion = match s.parse::<f64>() {
            Ok(sigma0) => DiffusionFamily::Constant { sigma0 },
            Err(_) => parse_tagged(s, "family")?,
        };
    }
    if let Some(u) = &a.u0 {
        c.initial_data = parse_tagged(u, "kind")?;
    }
    if let Some(l) = &a.ladder {
        c.ladder = l.clone();
    }
    if let Some(b) = a.blowup_threshold {
        c.blowup_threshold = b;
    }
    if let Some(s) = a.out_stride {
        c.out_stride = s;
    }
    if let Some(s) = a.snapshot_stride {
        c.snapshots.stride = s;
    }
    c.n_paths = 1;
    c.seed_base = a.seed;
    c.validate()?;
    Ok(c)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| LabError::io(p, None, e))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn load_paths(pattern: &str) -> Result<Vec<PathResult>> {
    let mut files: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| LabError::Config(format!("bad glob {pattern:?}: {e}")))?
        .filter_map(|p| p.ok())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(LabError::Config(format!("no files match {pattern:?}")));
    }
    let mut paths = files
        .iter()
        .map(|f| experiment::read_path_file(f).map(|(_, p)| p))
        .collect::<Result<Vec<_>>>()?;
    paths.sort_by_key(|p| p.seed);
    Ok(paths)
}

fn write_summary(out: Option<&Path>, summary: &experiment::EnsembleSummary) -> Result<()> {
    match out {
        Some(p) => experiment::write_summary_csv(p, summary),
        None => {
            let mut w = csv::Writer::from_writer(io::stdout());
            w.serialize(summary)?;
            w.flush().map_err(|e| LabError::io("<stdout>", None, e))
        }
    }
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate(a) => {
            let c = simulate_config(&a)?;
            let p = c.simulate_seed(a.seed)?;
            let header = PathHeader {
                schema_version: SCHEMA_VERSION,
                config_hash: c.config_hash(),
                seed: a.seed,
                generator_tag: GENERATOR_TAG.into(),
                config: Some(c),
            };
            write_path_jsonl(output(a.out.as_deref())?, &header, &p)?;
            eprintln!(
                "seed {}: blew_up={} tau_hat={} terminal_sup={}",
                p.seed, p.record.blew_up, p.record.tau_hat, p.record.terminal_sup
            );
        }
        Command::Run { config, out, jobs } => {
            let mut c = ExperimentConfig::from_file(&config)?;
            if let Some(o) = out {
                c.outputs = o;
            }
            let r = run(&c, resolve_jobs(jobs.jobs))?;
            eprintln!(
                "{} paths ({} resumed), {} blew up -> {}",
                r.summary.n_paths,
                r.resumed,
                r.summary.n_blowup,
                r.output_dir.display()
            );
        }
        Command::Sweep { config, axis, values, out, n_paths, jobs } => {
            let mut c = ExperimentConfig::from_file(&config)?;
            if let Some(o) = out {
                c.outputs = o;
            }
            if let Some(n) = n_paths {
                c.n_paths = n;
            }
            let s = sweep(&c, &axis, &values, resolve_jobs(jobs.jobs))?;
            for p in &s.points {
                eprintln!(
                    "{} = {}: blowup fraction {:?} [{:?}, {:?}] over {} paths",
                    s.axis, p.value, p.blowup_fraction, p.ci_low, p.ci_high, p.n_paths
                );
            }
        }
        Command::Aggregate { pattern, out } => {
            let s = aggregate(&pattern)?;
            write_summary(out.as_deref(), &s)?;
        }
        Command::VerifyKernel { out, jobs } => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(resolve_jobs(jobs.jobs))
                .build()
                .map_err(|e| LabError::Config(e.to_string()))?;
            let reports = pool.install(|| run_battery(&HeatKernel::default()))?;
            write_reports_csv(output(out.as_deref())?, &reports)?;
            let count = |v: Verdict| reports.iter().filter(|r| r.verdict() == v).count();
            let (pass, fail, inc) = (count(Verdict::Pass), count(Verdict::Fail), count(Verdict::Inconclusive));
            eprintln!("{pass} pass, {fail} fail, {inc} inconclusive");
            if fail + inc > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Holder(a) => {
            let paths = load_paths(&a.pattern)?;
            let direction: Direction = a.direction.parse()?;
            let lags = match a.lags {
                Some(l) => l,
                None => {
                    let nx = paths[0].snapshots.first().map(|s| s.values.len()).unwrap_or(1);
                    let lo = a.lag_min.unwrap_or(2.0 / (nx + 1) as f64);
                    let n = a.n_lags.max(2);
                    (0..n)
                        .map(|j| lo * (a.lag_max / lo).powf(j as f64 / (n - 1) as f64))
                        .collect()
                }
            };
            let fit = holder_fit(
                &paths,
                &HolderSpec {
                    direction,
                    k: a.k,
                    t_star: a.t_star,
                    lags,
                    alpha: a.alpha,
                },
            )?;
            write_holder_csv(output(a.out.as_deref())?, std::slice::from_ref(&fit))?;
            eprintln!("{} exponent {:.4} ± {:.4} (r² {:.4})", fit.direction, fit.exponent_hat, fit.stderr, fit.r2);
        }
        Command::Moments { pattern, beta, k, out } => {
            let paths = load_paths(&pattern)?;
            let mut rows = vec![];
            for &b in &beta {
                for &kk in &k {
                    rows.push(moment_norm_estimate(&paths, b, kk)?);
                }
            }
            write_moments_csv(output(out.as_deref())?, &rows)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
