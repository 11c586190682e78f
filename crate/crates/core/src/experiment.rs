//! Config-driven ensembles: persisted and resumable runs, parameter sweeps,
//! and aggregation of path files into summaries.
//!
//! A run directory holds `config.toml` (the resolved config), one JSONL file
//! per path under `paths/`, a per-path table `paths.csv` and a one-row
//! `summary.csv`. Path files are written to a temporary name and renamed, so
//! a directory never holds a partial path file and an interrupted run
//! resumes by seed index.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficients::{CoefficientSpec, DiffusionFamily, DriftFamily};
use crate::error::{LabError, Result};
use crate::noise::{split_seed, GridSpec, NoisePath, GENERATOR_TAG};
use crate::solver::{simulate_localized, BlowupRecord, Field, PathResult, SeriesRow, SimOptions, DEFAULT_BLOWUP_THRESHOLD};
use crate::stats::{quantile_sorted, wilson_interval};
use crate::SCHEMA_VERSION;

pub const CONFIG_FILE: &str = "config.toml";
pub const PATH_DIR: &str = "paths";
pub const PATHS_TABLE: &str = "paths.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Environment variable supplying the default worker count.
pub const JOBS_ENV: &str = "SPDE_LAB_JOBS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// `amplitude · sin(mode·πx)`
    SineMode { amplitude: f64, mode: u32 },
    /// `height · exp(1 − 1/(1 − r²))` for `r = (x − center)/width`, `|r| < 1`.
    Bump { center: f64, width: f64, height: f64 },
    /// Samples on a uniform grid of `[0, 1]` with both endpoints, linearly
    /// interpolated onto the solver grid.
    Tabulated { values: Vec<f64> },
}

impl InitialData {
    pub fn validate(&self) -> Result<()> {
        match self {
            InitialData::SineMode { amplitude, mode } => {
                if !amplitude.is_finite() || *mode == 0 {
                    return Err(LabError::Config("sine_mode needs a finite amplitude and mode >= 1".into()));
                }
            }
            InitialData::Bump { center, width, height } => {
                let ok = width.is_finite() && *width > 0.0 && height.is_finite() && center - width >= 0.0 && center + width <= 1.0;
                if !ok {
                    return Err(LabError::Config(format!(
                        "bump support [{}, {}] must lie in [0, 1] with finite height",
                        center - width,
                        center + width
                    )));
                }
            }
            InitialData::Tabulated { values } => {
                if values.len() < 2 || values.iter().any(|v| !v.is_finite()) {
                    return Err(LabError::Config("tabulated initial data needs >= 2 finite values".into()));
                }
                if values[0] != 0.0 || values[values.len() - 1] != 0.0 {
                    return Err(LabError::Config("initial data must vanish at both endpoints".into()));
                }
            }
        }
        Ok(())
    }

    pub fn field(&self, nx: usize) -> Result<Field> {
        self.validate()?;
        Ok(match self {
            InitialData::SineMode { amplitude, mode } => {
                let m = f64::from(*mode);
                Field::from_fn(nx, |x| amplitude * (m * std::f64::consts::PI * x).sin())
            }
            InitialData::Bump { center, width, height } => Field::from_fn(nx, |x| {
                let r = (x - center) / width;
                if r.abs() < 1.0 {
                    height * (1.0 - 1.0 / (1.0 - r * r)).exp()
                } else {
                    0.0
                }
            }),
            InitialData::Tabulated { values } => {
                let cells = (values.len() - 1) as f64;
                Field::from_fn(nx, |x| {
                    let pos = x * cells;
                    let i = (pos.floor() as usize).min(values.len() - 2);
                    let w = pos - i as f64;
                    values[i] * (1.0 - w) + values[i + 1] * w
                })
            }
        })
    }
}

/// Stored full fields: every `stride` steps from `t = 0` (0 disables) plus
/// the steps nearest to `times`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotSpec {
    #[serde(default)]
    pub stride: usize,
    #[serde(default)]
    pub times: Vec<f64>,
}

impl SnapshotSpec {
    pub fn steps(&self, grid: &GridSpec) -> Result<Vec<usize>> {
        let n = grid.steps();
        let mut out: Vec<usize> = if self.stride > 0 { (0..=n).step_by(self.stride).collect() } else { vec![] };
        for &t in &self.times {
            let m = (t / grid.dt).round();
            if !(m >= 0.0 && m <= n as f64) {
                return Err(LabError::Config(format!("snapshot time {t} outside [0, t_end]")));
            }
            out.push(m as usize);
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}
fn default_threshold() -> f64 {
    DEFAULT_BLOWUP_THRESHOLD
}
fn default_one() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_outputs() -> PathBuf {
    PathBuf::from("spde-lab-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub n_paths: usize,
    /// Path `i` uses seed `seed_base + i` (wrapping). Must fit in an `i64`.
    pub seed_base: u64,
    #[serde(default)]
    pub ladder: Vec<f64>,
    #[serde(default = "default_threshold")]
    pub blowup_threshold: f64,
    #[serde(default = "default_one")]
    pub out_stride: usize,
    #[serde(default = "default_true")]
    pub dt_control: bool,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    pub grid: GridSpec,
    pub coefficients: CoefficientSpec,
    pub initial_data: InitialData,
    #[serde(default)]
    pub snapshots: SnapshotSpec,
}

/// The part of a config that determines the law of a single path.
#[derive(Serialize)]
struct HashedPart<'a> {
    schema_version: u32,
    generator_tag: &'static str,
    grid: &'a GridSpec,
    coefficients: &'a CoefficientSpec,
    initial_data: &'a InitialData,
    ladder: &'a [f64],
    blowup_threshold: f64,
    out_stride: usize,
    dt_control: bool,
    snapshots: &'a SnapshotSpec,
}

/// Parameters accepted by [`ExperimentConfig::with_axis`].
pub const AXES: [&str; 13] = [
    "t_end",
    "dt",
    "nx",
    "epsilon",
    "theta1",
    "theta2",
    "power",
    "drift_scale",
    "offset",
    "sigma",
    "amplitude",
    "blowup_threshold",
    "seed_base",
];

impl ExperimentConfig {
    pub fn new(grid: GridSpec, coefficients: CoefficientSpec, initial_data: InitialData, n_paths: usize, seed_base: u64) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            n_paths,
            seed_base,
            ladder: vec![],
            blowup_threshold: DEFAULT_BLOWUP_THRESHOLD,
            out_stride: 1,
            dt_control: true,
            outputs: default_outputs(),
            grid,
            coefficients,
            initial_data,
            snapshots: SnapshotSpec::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(s).map_err(|e| LabError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| LabError::io(path, None, e))?;
        Self::from_toml_str(&s).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(LabError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.grid.validate().map_err(|e| LabError::Config(e.to_string()))?;
        self.coefficients.validate().map_err(|e| LabError::Config(e.to_string()))?;
        self.initial_data.validate()?;
        if self.seed_base > i64::MAX as u64 {
            return Err(LabError::Config("seed_base must be below 2^63".into()));
        }
        if self.out_stride == 0 {
            return Err(LabError::Config("out_stride must be >= 1".into()));
        }
        if !(self.blowup_threshold > 0.0 && self.blowup_threshold.is_finite()) {
            return Err(LabError::Config("blowup_threshold must be positive and finite".into()));
        }
        if self.ladder.iter().any(|n| !(n.is_finite() && *n >= 1.0)) || self.ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::Config(format!("ladder {:?} must be strictly increasing with levels >= 1", self.ladder)));
        }
        self.snapshots.steps(&self.grid)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization of the per-path law:
    /// everything except `n_paths`, `seed_base` and `outputs`, so disjoint
    /// seed blocks of one experiment share a hash.
    pub fn config_hash(&self) -> String {
        let part = HashedPart {
            schema_version: self.schema_version,
            generator_tag: GENERATOR_TAG,
            grid: &self.grid,
            coefficients: &self.coefficients,
            initial_data: &self.initial_data,
            ladder: &self.ladder,
            blowup_threshold: self.blowup_threshold,
            out_stride: self.out_stride,
            dt_control: self.dt_control,
            snapshots: &self.snapshots,
        };
        let canonical = serde_json::to_vec(&part).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seed(&self, index: usize) -> u64 {
        split_seed(self.seed_base, index as u64)
    }

    pub fn sim_options(&self) -> Result<SimOptions> {
        Ok(SimOptions {
            ladder: self.ladder.clone(),
            blowup_threshold: self.blowup_threshold,
            out_stride: self.out_stride,
            dt_control: self.dt_control,
            snapshot_steps: self.snapshots.steps(&self.grid)?,
        })
    }

    pub fn initial_field(&self) -> Result<Field> {
        self.initial_data.field(self.grid.nx)
    }

    /// Simulates path `index` of the ensemble.
    pub fn simulate_path(&self, index: usize) -> Result<PathResult> {
        self.simulate_seed(self.seed(index))
    }

    pub fn simulate_seed(&self, seed: u64) -> Result<PathResult> {
        let noise = NoisePath::new(seed, self.grid)?;
        let mut r = simulate_localized(&self.initial_field()?, &self.coefficients, &noise, &self.sim_options()?)?;
        r.config_hash = self.config_hash();
        Ok(r)
    }

    /// Copy of the config with one named parameter replaced.
    pub fn with_axis(&self, axis: &str, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(LabError::Config(format!("axis value {value} is not finite")));
        }
        let mut c = self.clone();
        let mismatch = || LabError::Config(format!("axis {axis:?} does not apply to this configuration"));
        let as_count = |v: f64| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(LabError::Config(format!("axis {axis:?} needs a non-negative integer, got {v}")))
            }
        };
        match axis {
            "t_end" => c.grid.t_end = value,
            "dt" => c.grid.dt = value,
            "nx" => c.grid.nx = as_count(value)?,
            "blowup_threshold" => c.blowup_threshold = value,
            "seed_base" => c.seed_base = as_count(value)? as u64,
            "epsilon" => match &mut c.coefficients.drift {
                DriftFamily::SuperLog { epsilon, .. } => *epsilon = value,
                _ => return Err(mismatch()),
            },
            "theta1" | "theta2" => match &mut c.coefficients.drift {
                DriftFamily::LogCritical { theta1, theta2 } => {
                    *(if axis == "theta1" { theta1 } else { theta2 }) = value;
                }
                _ => return Err(mismatch()),
            },
            "power" => match &mut c.coefficients.drift {
                DriftFamily::PowerBg { power, .. } => *power = value,
                _ => return Err(mismatch()),
            },
            "drift_scale" => match &mut c.coefficients.drift {
                DriftFamily::PowerBg { scale, .. } | DriftFamily::SuperLog { scale, .. } => *scale = value,
                _ => return Err(mismatch()),
            },
            "offset" => match &mut c.coefficients.drift {
                DriftFamily::SuperLog { offset, .. } => *offset = value,
                _ => return Err(mismatch()),
            },
            "sigma" => match &mut c.coefficients.diffusion {
                DiffusionFamily::Constant { sigma0 } => *sigma0 = value,
                DiffusionFamily::Bounded { amplitude, .. } => *amplitude = value,
                DiffusionFamily::SubQuarterLog { scale } => *scale = value,
            },
            "amplitude" => match &mut c.initial_data {
                InitialData::SineMode { amplitude, .. } => *amplitude = value,
                InitialData::Bump { height, .. } => *height = value,
                InitialData::Tabulated { .. } => return Err(mismatch()),
            },
            _ => {
                return Err(LabError::Config(format!("unknown axis {axis:?}; expected one of {AXES:?}")));
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// Worker count: the explicit value, else `SPDE_LAB_JOBS`, else the number
/// of available cores.
pub fn resolve_jobs(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| std::env::var(JOBS_ENV).ok().and_then(|s| s.trim().parse().ok()))
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
        .max(1)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| LabError::Config(format!("cannot start {jobs} workers: {e}")))
}

/// Simulates the whole ensemble in memory, in seed order.
pub fn simulate_ensemble(config: &ExperimentConfig, jobs: usize) -> Result<Vec<PathResult>> {
    config.validate()?;
    pool(jobs)?.install(|| (0..config.n_paths).into_par_iter().map(|i| config.simulate_path(i)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathHeader {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub generator_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(PathHeader),
    Series(SeriesRow),
    Snapshot(Field),
    Record {
        #[serde(flatten)]
        record: BlowupRecord,
        max_halvings: u32,
    },
    Final(Field),
}

/// Writes one path as JSONL: a header line, one line per series row, the
/// stored fields, the blowup record and the final field.
pub fn write_path_jsonl<W: Write>(mut w: W, header: &PathHeader, path: &PathResult) -> Result<()> {
    let line = |l: &Line, w: &mut W| -> Result<()> {
        serde_json::to_writer(&mut *w, l)?;
        w.write_all(b"\n").map_err(|e| LabError::io("<output>", Some(path.seed), e))
    };
    line(&Line::Header(header.clone()), &mut w)?;
    for row in &path.series {
        line(&Line::Series(*row), &mut w)?;
    }
    for s in &path.snapshots {
        line(&Line::Snapshot(s.clone()), &mut w)?;
    }
    line(
        &Line::Record {
            record: path.record.clone(),
            max_halvings: path.max_halvings,
        },
        &mut w,
    )?;
    if let Some(f) = &path.final_field {
        line(&Line::Final(f.clone()), &mut w)?;
    }
    w.flush().map_err(|e| LabError::io("<output>", Some(path.seed), e))
}

pub fn read_path_file(path: &Path) -> Result<(PathHeader, PathResult)> {
    let file = File::open(path).map_err(|e| LabError::io(path, None, e))?;
    read_path_jsonl(BufReader::new(file), path)
}

pub fn read_path_jsonl<R: BufRead>(r: R, origin: &Path) -> Result<(PathHeader, PathResult)> {
    let bad = |message: String| LabError::Format {
        path: origin.to_path_buf(),
        message,
    };
    let mut header: Option<PathHeader> = None;
    let mut series = vec![];
    let mut snapshots = vec![];
    let mut record = None;
    let mut final_field = None;
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| LabError::io(origin, None, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
        match parsed {
            Line::Header(h) if n == 0 => header = Some(h),
            Line::Header(_) => return Err(bad(format!("line {}: repeated header", n + 1))),
            _ if header.is_none() => return Err(bad("first line must be the header".into())),
            Line::Series(s) => series.push(s),
            Line::Snapshot(f) => snapshots.push(f),
            Line::Record { record: rec, max_halvings } => record = Some((rec, max_halvings)),
            Line::Final(f) => final_field = Some(f),
        }
    }
    let header = header.ok_or_else(|| bad("empty path file".into()))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(bad(format!("schema_version {} is not supported", header.schema_version)));
    }
    let (record, max_halvings) = record.ok_or_else(|| bad("missing blowup record".into()))?;
    let result = PathResult {
        seed: header.seed,
        config_hash: header.config_hash.clone(),
        generator_tag: header.generator_tag.clone(),
        record,
        series,
        final_field,
        snapshots,
        max_halvings,
    };
    Ok((header, result))
}

/// Per-path row of `paths.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub seed: u64,
    pub blew_up: bool,
    /// `inf` when the path did not blow up.
    pub tau_hat: f64,
    pub terminal_sup: f64,
    pub max_sup: f64,
    pub max_l2: f64,
    pub max_h1: f64,
    pub max_halvings: u32,
}

impl PathSummary {
    pub fn of(p: &PathResult) -> Self {
        let inf_if_nan = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
        let max = |f: fn(&SeriesRow) -> f64| p.series.iter().map(f).fold(0.0, f64::max);
        PathSummary {
            seed: p.seed,
            blew_up: p.record.blew_up,
            tau_hat: inf_if_nan(p.record.tau_hat),
            terminal_sup: inf_if_nan(p.record.terminal_sup),
            max_sup: max(|r| r.sup),
            max_l2: max(|r| r.l2),
            max_h1: max(|r| r.h1),
            max_halvings: p.max_halvings,
        }
    }
}

/// The one-row `summary.csv`. Statistics that are undefined for the sample
/// (for instance τ̂ quantiles when nothing blew up) are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub n_paths: usize,
    pub n_blowup: usize,
    pub blowup_fraction: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub mean_tau_hat: Option<f64>,
    pub tau_q10: Option<f64>,
    pub tau_q50: Option<f64>,
    pub tau_q90: Option<f64>,
    pub max_sup: Option<f64>,
    pub max_l2: Option<f64>,
    pub max_h1: Option<f64>,
    pub seed_min: Option<u64>,
    pub seed_max: Option<u64>,
}

impl EnsembleSummary {
    /// Sequential reduction over `paths` in seed order.
    pub fn from_paths(config_hash: &str, paths: &[PathSummary]) -> Self {
        let mut paths = paths.to_vec();
        paths.sort_by_key(|p| p.seed);
        let n = paths.len();
        let mut taus: Vec<f64> = paths.iter().filter(|p| p.blew_up).map(|p| p.tau_hat).collect();
        let n_blowup = taus.len();
        let (mut mean, mut q10, mut q50, mut q90) = (None, None, None, None);
        if n_blowup > 0 {
            mean = Some(taus.iter().sum::<f64>() / n_blowup as f64);
            taus.sort_by(f64::total_cmp);
            q10 = Some(quantile_sorted(&taus, 0.1));
            q50 = Some(quantile_sorted(&taus, 0.5));
            q90 = Some(quantile_sorted(&taus, 0.9));
        }
        let (ci_low, ci_high) = if n > 0 {
            let (lo, hi) = wilson_interval(n_blowup, n);
            (Some(lo), Some(hi))
        } else {
            (None, None)
        };
        let extreme = |f: fn(&PathSummary) -> f64| (n > 0).then(|| paths.iter().map(f).fold(0.0, f64::max));
        EnsembleSummary {
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash.to_string(),
            n_paths: n,
            n_blowup,
            blowup_fraction: (n > 0).then(|| n_blowup as f64 / n as f64),
            ci_low,
            ci_high,
            mean_tau_hat: mean,
            tau_q10: q10,
            tau_q50: q50,
            tau_q90: q90,
            max_sup: extreme(|p| p.max_sup),
            max_l2: extreme(|p| p.max_l2),
            max_h1: extreme(|p| p.max_h1),
            seed_min: paths.first().map(|p| p.seed),
            seed_max: paths.last().map(|p| p.seed),
        }
    }
}

/// Writes `bytes` to `target` through a temporary file in the same directory.
fn write_atomic(target: &Path, seed: Option<u64>, bytes: &[u8]) -> Result<()> {
    let tmp = target.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| LabError::io(&tmp, seed, e))?;
    fs::rename(&tmp, target).map_err(|e| LabError::io(target, seed, e))
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(vec![]);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| LabError::Config(e.to_string()))
}

const SUMMARY_COLUMNS: [&str; 16] = [
    "schema_version",
    "config_hash",
    "n_paths",
    "n_blowup",
    "blowup_fraction",
    "ci_low",
    "ci_high",
    "mean_tau_hat",
    "tau_q10",
    "tau_q50",
    "tau_q90",
    "max_sup",
    "max_l2",
    "max_h1",
    "seed_min",
    "seed_max",
];

const PATH_COLUMNS: [&str; 9] = [
    "schema_version",
    "seed",
    "blew_up",
    "tau_hat",
    "terminal_sup",
    "max_sup",
    "max_l2",
    "max_h1",
    "max_halvings",
];

pub fn write_summary_csv(target: &Path, summary: &EnsembleSummary) -> Result<()> {
    write_atomic(target, None, &csv_bytes([summary], &SUMMARY_COLUMNS)?)
}

pub fn write_paths_csv(target: &Path, paths: &[PathSummary]) -> Result<()> {
    let rows = paths.iter().map(|p| (SCHEMA_VERSION, p));
    write_atomic(target, None, &csv_bytes(rows, &PATH_COLUMNS)?)
}

pub fn path_file_name(seed: u64) -> String {
    format!("path-{seed:020}.jsonl")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub summary: EnsembleSummary,
    pub paths: Vec<PathSummary>,
    pub output_dir: PathBuf,
    /// Paths read back from an earlier, interrupted run.
    pub resumed: usize,
}

/// Runs and persists the ensemble in `config.outputs`. Path files already
/// present for this config are reused, so rerunning completes an
/// interrupted run with identical outputs.
pub fn run(config: &ExperimentConfig, jobs: usize) -> Result<RunOutcome> {
    config.validate()?;
    let dir = config.outputs.clone();
    let path_dir = dir.join(PATH_DIR);
    fs::create_dir_all(&path_dir).map_err(|e| LabError::io(&path_dir, None, e))?;
    let hash = config.config_hash();
    let mut resolved = config.to_toml_string()?;
    resolved = format!("# config_hash = \"{hash}\"\n{resolved}");
    write_atomic(&dir.join(CONFIG_FILE), None, resolved.as_bytes())?;

    let unit = |i: usize| -> Result<(PathSummary, bool)> {
        let seed = config.seed(i);
        let target = path_dir.join(path_file_name(seed));
        if target.exists() {
            let (h, p) = read_path_file(&target)?;
            if h.config_hash != hash || h.seed != seed {
                return Err(LabError::MergeConflict {
                    offenders: vec![target.display().to_string()],
                });
            }
            return Ok((PathSummary::of(&p), true));
        }
        let p = config.simulate_seed(seed)?;
        let header = PathHeader {
            schema_version: SCHEMA_VERSION,
            config_hash: hash.clone(),
            seed,
            generator_tag: p.generator_tag.clone(),
            config: Some(config.clone()),
        };
        let mut buf = Vec::new();
        write_path_jsonl(&mut buf, &header, &p)?;
        write_atomic(&target, Some(seed), &buf)?;
        Ok((PathSummary::of(&p), false))
    };
    let results: Vec<Result<(PathSummary, bool)>> =
        pool(jobs)?.install(|| (0..config.n_paths).into_par_iter().map(unit).collect());
    let mut paths = Vec::with_capacity(results.len());
    let mut resumed = 0;
    for r in results {
        let (p, old) = r?;
        resumed += usize::from(old);
        paths.push(p);
    }
    let summary = EnsembleSummary::from_paths(&hash, &paths);
    write_paths_csv(&dir.join(PATHS_TABLE), &paths)?;
    write_summary_csv(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(RunOutcome {
        summary,
        paths,
        output_dir: dir,
        resumed,
    })
}

/// Merges path files matching `pattern` into one summary. All files must
/// carry the same config hash and distinct seeds.
pub fn aggregate(pattern: &str) -> Result<EnsembleSummary> {
    let files: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| LabError::Config(format!("bad glob {pattern:?}: {e}")))?
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| LabError::io(e.path().to_path_buf(), None, e.into()))?;
    if files.is_empty() {
        return Err(LabError::Config(format!("no files match {pattern:?}")));
    }
    aggregate_files(&files)
}

pub fn aggregate_files(files: &[PathBuf]) -> Result<EnsembleSummary> {
    let mut by_hash: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut paths = Vec::with_capacity(files.len());
    for f in files {
        let (h, p) = read_path_file(f)?;
        by_hash.entry(h.config_hash).or_default().push(f.display().to_string());
        paths.push(PathSummary::of(&p));
    }
    if by_hash.len() > 1 {
        let offenders = by_hash
            .iter()
            .map(|(hash, fs)| format!("{hash}: {}", fs.join(", ")))
            .collect();
        return Err(LabError::MergeConflict { offenders });
    }
    paths.sort_by_key(|p| p.seed);
    if let Some(w) = paths.windows(2).find(|w| w[0].seed == w[1].seed) {
        return Err(LabError::Contract(format!("seed {} appears in more than one file", w[0].seed)));
    }
    let hash = by_hash.into_keys().next().unwrap_or_default();
    Ok(EnsembleSummary::from_paths(&hash, &paths))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub blowup_fraction: Option<f64>,
    pub mean_tau_hat: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_paths: usize,
    pub n_blowup: usize,
    pub seed_base: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    /// Sorted by value.
    pub points: Vec<SweepPoint>,
}

const SWEEP_COLUMNS: [&str; 11] = [
    "schema_version",
    "axis",
    "value",
    "blowup_fraction",
    "mean_tau_hat",
    "ci_low",
    "ci_high",
    "n_paths",
    "n_blowup",
    "seed_base",
    "config_hash",
];

pub fn write_sweep_csv(target: &Path, sweep: &SweepResult) -> Result<()> {
    let rows = sweep.points.iter().map(|p| (SCHEMA_VERSION, sweep.axis.as_str(), p));
    write_atomic(target, None, &csv_bytes(rows, &SWEEP_COLUMNS)?)
}

/// Runs `base` once per distinct axis value. The k-th smallest distinct
/// value uses the seed block starting at `seed_base + k·n_paths` and writes
/// to `outputs/<axis>-<k>`; repeated values share their block.
pub fn sweep(base: &ExperimentConfig, axis: &str, values: &[f64], jobs: usize) -> Result<SweepResult> {
    base.validate()?;
    let mut sorted = values.to_vec();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Config("sweep values must be finite".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    let mut cache = Vec::with_capacity(distinct.len());
    for (k, &v) in distinct.iter().enumerate() {
        let mut cfg = base.with_axis(axis, v)?;
        cfg.seed_base = base.seed_base.wrapping_add((k * base.n_paths) as u64);
        cfg.outputs = base.outputs.join(format!("{axis}-{k:03}"));
        let out = run(&cfg, jobs)?;
        let s = out.summary;
        cache.push(SweepPoint {
            value: v,
            blowup_fraction: s.blowup_fraction,
            mean_tau_hat: s.mean_tau_hat,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
            n_paths: s.n_paths,
            n_blowup: s.n_blowup,
            seed_base: cfg.seed_base,
            config_hash: s.config_hash,
        });
    }
    let points = sorted
        .iter()
        .map(|v| cache[distinct.iter().position(|d| d == v).unwrap()].clone())
        .collect();
    let result = SweepResult {
        axis: axis.to_string(),
        points,
    };
    fs::create_dir_all(&base.outputs).map_err(|e| LabError::io(&base.outputs, None, e))?;
    write_sweep_csv(&base.outputs.join(SWEEP_FILE), &result)?;
    Ok(result)
}
