//! Functionals and estimators evaluated on simulated fields: norms, the
//! first-mode functional, the Lyapunov function, the log-Sobolev check,
//! weak-form residuals, moment norms and Hölder-exponent regression.
//!
//! Interior values `u_1 .. u_nx` are integrated with the node rule
//! `dx Σ f(u_i)`, which is the trapezoid rule with zero boundary values.

use std::f64::consts::{E, PI};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundParams, BoundReport, ConstantSource, LemmaId};
use crate::coefficients::{log_plus, Coefficients};
use crate::error::{LabError, Result};
use crate::heat_kernel::GridFunction;
use crate::noise::NoisePath;
use crate::quad::{self, Estimate};
use crate::solver::PathResult;
use crate::stats::{bootstrap_stderr, linear_fit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldNorms {
    pub sup: f64,
    pub l2: f64,
    pub h1: f64,
    /// `(∫ u² log₊|u|)^{1/2}`
    pub l2logl: f64,
    /// False when any input value is non-finite; the norms are then NaN.
    pub finite: bool,
}

fn grid_dx(values: &[f64]) -> f64 {
    1.0 / (values.len() + 1) as f64
}

/// Norms of interior values on the uniform grid with `dx = 1/(n+1)`.
pub fn norms(values: &[f64]) -> FieldNorms {
    if values.iter().any(|v| !v.is_finite()) {
        return FieldNorms {
            sup: f64::NAN,
            l2: f64::NAN,
            h1: f64::NAN,
            l2logl: f64::NAN,
            finite: false,
        };
    }
    let dx = grid_dx(values);
    let sup = sup_norm(values);
    let l2 = (dx * values.iter().map(|u| u * u).sum::<f64>()).sqrt();
    let l2logl = (dx * values.iter().map(|u| u * u * log_plus(u.abs())).sum::<f64>()).sqrt();
    FieldNorms {
        sup,
        l2,
        h1: h1_norm(values),
        l2logl,
        finite: true,
    }
}

pub fn sup_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| if v.abs() > m || v.is_nan() { v.abs() } else { m })
}

/// Forward differences over all `n + 1` cells, boundary zeros included.
pub fn h1_norm(values: &[f64]) -> f64 {
    let dx = grid_dx(values);
    let n = values.len();
    let at = |i: usize| if i == 0 || i == n + 1 { 0.0 } else { values[i - 1] };
    let s: f64 = (0..=n).map(|i| (at(i + 1) - at(i)).powi(2)).sum();
    (s / dx).sqrt()
}

/// `∫ u(x) sin(πx) dx`.
pub fn bg_mode_functional(values: &[f64]) -> f64 {
    let dx = grid_dx(values);
    dx * values
        .iter()
        .enumerate()
        .map(|(i, u)| u * (PI * (i + 1) as f64 * dx).sin())
        .sum::<f64>()
}

/// `Φ(r) = exp(∫₀^r dz / (1 + z log₊ z))`.
pub fn lyapunov_value(r: f64) -> Result<f64> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(LabError::Domain(format!("lyapunov_value needs finite r >= 0, got {r}")));
    }
    // log₊ is frozen at 1 on [0, e]
    let head = r.min(E).ln_1p();
    if r <= E {
        return Ok(head.exp());
    }
    let mut bps = vec![];
    let mut p = 10.0;
    while p < r {
        bps.push(p);
        p *= 10.0;
    }
    let tail = quad::integrate(|z| 1.0 / (1.0 + z * z.ln()), E, r, &bps, 1e-15, 1e-14, 2000);
    Ok((head + tail.value).exp())
}

/// Piecewise-linear interpolant quantities of `h` on its closed grid:
/// `(‖h‖², ‖h′‖², ∫h² log₊|h|)`, the last one as a quadrature estimate.
fn interpolant_integrals(h: &GridFunction) -> (f64, f64, Estimate) {
    let dx = h.dx();
    let v = &h.values;
    let mut l2 = 0.0;
    let mut h1 = 0.0;
    let mut lhs = 0.0;
    let mut err = 0.0;
    let mut ok = true;
    for w in v.windows(2) {
        let (a, b) = (w[0], w[1]);
        l2 += dx * (a * a + a * b + b * b) / 3.0;
        h1 += (b - a) * (b - a) / dx;
        let f = |s: f64| {
            let y = a + (b - a) * s;
            y * y * log_plus(y.abs())
        };
        // kinks where |y| = e
        let mut bps = vec![];
        for target in [E, -E] {
            if (a - target) * (b - target) < 0.0 {
                bps.push((target - a) / (b - a));
            }
        }
        let e = quad::integrate(f, 0.0, 1.0, &bps, 1e-15, 1e-13, 200);
        lhs += dx * e.value;
        err += dx * e.error;
        ok &= e.converged;
    }
    (
        l2,
        h1,
        Estimate {
            value: lhs,
            error: err,
            converged: ok,
        },
    )
}

/// Checks `‖h‖²_{L²logL} <= ε‖h′‖² + K_ε‖h‖² + ‖h‖² log₊‖h‖² + e⁻¹`,
/// `K_ε = 1 + ¼ log(1/ε)`, for the piecewise-linear interpolant of `h`.
pub fn log_sobolev_check(h: &GridFunction, epsilon: f64) -> Result<BoundReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(LabError::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let (first, last) = (h.values[0], h.values[h.values.len() - 1]);
    let tol = 1e-12 * h.sup_norm().max(1.0);
    if first.abs() > tol || last.abs() > tol {
        return Err(LabError::Contract("h must vanish at both endpoints".into()));
    }
    if h.values.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Domain("h is not finite".into()));
    }
    let (l2sq, h1sq, lhs) = interpolant_integrals(h);
    let k_eps = 1.0 + 0.25 * (1.0 / epsilon).ln();
    let rhs = epsilon * h1sq + k_eps * l2sq + l2sq * log_plus(l2sq) + 1.0 / E;
    let params = BoundParams {
        epsilon: Some(epsilon),
        ..Default::default()
    };
    // rhs is exact for the interpolant up to rounding
    let rounding = 1e-14 * rhs.abs();
    let lhs = Estimate {
        error: lhs.error + rounding,
        ..lhs
    };
    Ok(BoundReport::new(LemmaId::LogSobolev, &params, lhs, rhs, (1.0, ConstantSource::Proof)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakResidual {
    /// `|⟨u(t),φ⟩ − ⟨u₀,φ⟩ − ½∫⟨u,φ″⟩ − ∫⟨b(u),φ⟩ − Σ σ(u)φ W|`
    pub value: f64,
    pub t: f64,
    /// Steps between stored fields.
    pub stride: usize,
    /// The stride is too coarse for the noise term of a state-dependent σ.
    pub inconclusive: bool,
}

/// Residual of the weak formulation tested against `φ(x) = sin(mπx)` at the
/// time of the last stored field. Deterministic integrals use the trapezoid
/// rule over the stored fields; the noise integral is the left-point sum
/// over every step of the path's noise.
pub fn weak_form_residual<C: Coefficients + ?Sized>(
    path: &PathResult,
    coeffs: &C,
    sigma_is_constant: bool,
    noise: &NoisePath,
    mode: u32,
) -> Result<WeakResidual> {
    if path.record.blew_up {
        return Err(LabError::Domain("weak residual is defined only on paths that did not blow up".into()));
    }
    let snaps = &path.snapshots;
    if snaps.len() < 2 || snaps[0].time != 0.0 {
        return Err(LabError::Contract("path needs stored fields from t = 0 at a fixed stride".into()));
    }
    let dt = noise.grid.dt;
    let nx = noise.grid.nx;
    let stride = ((snaps[1].time - snaps[0].time) / dt).round() as usize;
    if stride == 0
        || snaps.windows(2).any(|w| ((w[1].time - w[0].time) / dt - stride as f64).abs() > 1e-6)
        || snaps.iter().any(|s| s.values.len() != nx)
    {
        return Err(LabError::Contract("stored fields must be equally spaced on the noise grid".into()));
    }
    let dx = noise.grid.dx();
    let m = f64::from(mode);
    let phi: Vec<f64> = (1..=nx).map(|i| (m * PI * i as f64 * dx).sin()).collect();
    let pair = |a: &[f64]| dx * a.iter().zip(&phi).map(|(u, p)| u * p).sum::<f64>();
    let drift_pair = |a: &[f64]| dx * a.iter().zip(&phi).map(|(u, p)| coeffs.drift_at(*u) * p).sum::<f64>();

    let h = stride as f64 * dt;
    let mut lap = 0.0;
    let mut drift = 0.0;
    for w in snaps.windows(2) {
        lap += 0.5 * h * (pair(&w[0].values) + pair(&w[1].values));
        drift += 0.5 * h * (drift_pair(&w[0].values) + drift_pair(&w[1].values));
    }
    lap *= -m * m * PI * PI;

    let n_steps = (snaps.len() - 1) * stride;
    let mut stoch = 0.0;
    for n in 0..n_steps {
        let state = &snaps[n / stride].values;
        let w = noise.sample_increments(n)?;
        stoch += w
            .iter()
            .zip(state)
            .zip(&phi)
            .map(|((wi, u), p)| coeffs.diffusion_at(*u) * p * wi)
            .sum::<f64>();
    }
    let first = pair(&snaps[0].values);
    let last = pair(&snaps[snaps.len() - 1].values);
    let value = (last - first - 0.5 * lap - drift - stoch).abs();
    Ok(WeakResidual {
        value,
        t: snaps[snaps.len() - 1].time,
        stride,
        inconclusive: stride > 1 && !sigma_is_constant,
    })
}

/// Moment orders above this are flagged: empirical high moments are
/// unreliable at the ensemble sizes used here.
pub const MAX_RELIABLE_K: f64 = 12.0;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
const BOOTSTRAP_SEED: u64 = 0x6d6f_6d65_6e74;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub beta: f64,
    pub k: f64,
    /// `sup_{t,x} e^{-βt} (E|u(t,x)|^k)^{1/k}` over the stored fields.
    pub value: f64,
    pub mc_stderr: f64,
    pub n_paths: usize,
    /// `k` exceeds [`MAX_RELIABLE_K`].
    pub heavy_tail_flag: bool,
}

/// Common stored-field times of an ensemble; every path must carry the
/// same snapshot schedule and must not have blown up.
fn ensemble_times(ensemble: &[PathResult]) -> Result<Vec<f64>> {
    let first = ensemble
        .first()
        .ok_or_else(|| LabError::Domain("empty ensemble".into()))?;
    let times: Vec<f64> = first.snapshots.iter().map(|s| s.time).collect();
    if times.is_empty() {
        return Err(LabError::Contract("paths carry no stored fields".into()));
    }
    for p in ensemble {
        if p.record.blew_up {
            return Err(LabError::Domain(format!("path with seed {} blew up", p.seed)));
        }
        if p.snapshots.len() != times.len() || p.snapshots.iter().zip(&times).any(|(s, t)| s.time != *t) {
            return Err(LabError::Contract(format!("path with seed {} has a different snapshot schedule", p.seed)));
        }
    }
    Ok(times)
}

/// Estimates the moment norm of the ensemble with a path-level bootstrap
/// standard error.
pub fn moment_norm_estimate(ensemble: &[PathResult], beta: f64, k: f64) -> Result<MomentEstimate> {
    if ensemble.len() < 30 {
        return Err(LabError::Domain(format!("need at least 30 paths, got {}", ensemble.len())));
    }
    if !(k >= 2.0) || !(beta >= 0.0) {
        return Err(LabError::Domain(format!("need k >= 2 and beta >= 0 (k={k}, beta={beta})")));
    }
    let times = ensemble_times(ensemble)?;
    let nx = ensemble[0].snapshots[0].values.len();
    let cells = times.len() * nx;
    // |u|^k per path and (t, x) cell
    let powered: Vec<Vec<f64>> = ensemble
        .iter()
        .map(|p| {
            p.snapshots
                .iter()
                .flat_map(|s| s.values.iter().map(|u| u.abs().powf(k)))
                .collect()
        })
        .collect();
    let weights: Vec<f64> = times.iter().flat_map(|t| std::iter::repeat((-beta * t).exp()).take(nx)).collect();
    let stat = |idx: &[usize]| {
        let mut sums = vec![0.0; cells];
        for &p in idx {
            for (s, v) in sums.iter_mut().zip(&powered[p]) {
                *s += v;
            }
        }
        let n = idx.len() as f64;
        sums.iter()
            .zip(&weights)
            .map(|(s, w)| w * (s / n).powf(1.0 / k))
            .fold(0.0, f64::max)
    };
    let all: Vec<usize> = (0..ensemble.len()).collect();
    let value = stat(&all);
    let mc_stderr = bootstrap_stderr(ensemble.len(), BOOTSTRAP_RESAMPLES, BOOTSTRAP_SEED, stat);
    Ok(MomentEstimate {
        beta,
        k,
        value,
        mc_stderr,
        n_paths: ensemble.len(),
        heavy_tail_flag: k > MAX_RELIABLE_K,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMomentFit {
    pub ks: Vec<f64>,
    /// `𝔑_{0,k} / 𝔑_{0,2}`
    pub ratios: Vec<f64>,
    /// `max_k ratio_k / √k`
    pub c_hat: f64,
}

/// Growth of the moment norms in `k` against the Gaussian `√k` profile.
pub fn gaussian_moment_fit(ensemble: &[PathResult], ks: &[f64]) -> Result<GaussianMomentFit> {
    let base = moment_norm_estimate(ensemble, 0.0, 2.0)?.value;
    if !(base > 0.0) {
        return Err(LabError::Domain("second moment norm vanishes".into()));
    }
    let ratios = ks
        .iter()
        .map(|&k| moment_norm_estimate(ensemble, 0.0, k).map(|m| m.value / base))
        .collect::<Result<Vec<_>>>()?;
    let c_hat = ks.iter().zip(&ratios).map(|(k, r)| r / k.sqrt()).fold(0.0, f64::max);
    Ok(GaussianMomentFit {
        ks: ks.to_vec(),
        ratios,
        c_hat,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Space,
    Time,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Space => "space",
            Direction::Time => "time",
        })
    }
}

impl std::str::FromStr for Direction {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "space" => Ok(Direction::Space),
            "time" => Ok(Direction::Time),
            _ => Err(LabError::Domain(format!("direction must be space or time, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolderSpec {
    pub direction: Direction,
    pub k: f64,
    /// Reference time; the stored field closest to it is used.
    pub t_star: f64,
    /// Requested lags, rounded to grid multiples.
    pub lags: Vec<f64>,
    /// Hölder exponent of the initial data, for the theory columns.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    pub direction: Direction,
    pub k: f64,
    pub exponent_hat: f64,
    pub intercept: f64,
    pub r2: f64,
    pub lag_range: (f64, f64),
    pub lags: Vec<f64>,
    /// `E|increment|^k` per lag.
    pub moments: Vec<f64>,
    /// Path-level bootstrap standard error of `exponent_hat`.
    pub stderr: f64,
    pub mu_theory: f64,
    pub eta_theory: f64,
    pub n_paths: usize,
}

/// Regresses `log E|Δ_h u|^k` on `log h` and divides the slope by `k`.
pub fn holder_fit(ensemble: &[PathResult], spec: &HolderSpec) -> Result<HolderFit> {
    if !(spec.k > 0.0) {
        return Err(LabError::Domain("k must be positive".into()));
    }
    let times = ensemble_times(ensemble)?;
    let nx = ensemble[0].snapshots[0].values.len();
    let dx = 1.0 / (nx + 1) as f64;
    let (star, _) = times
        .iter()
        .enumerate()
        .map(|(j, t)| (j, (t - spec.t_star).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let t_star = times[star];

    // (lag, snapshot index or spatial offset)
    let mut used: Vec<(f64, usize)> = Vec::new();
    for &lag in &spec.lags {
        let entry = match spec.direction {
            Direction::Space => {
                let j = (lag / dx).round() as usize;
                (j >= 1 && j <= nx).then(|| (j as f64 * dx, j))
            }
            Direction::Time => times
                .iter()
                .position(|t| lag > 0.0 && (t_star - lag - t).abs() <= 1e-9 + 1e-6 * lag)
                .map(|j| (t_star - times[j], j)),
        };
        if let Some(e) = entry {
            if !used.iter().any(|u| u.1 == e.1) {
                used.push(e);
            }
        }
    }
    used.sort_by(|a, b| a.0.total_cmp(&b.0));
    if used.len() < 6 {
        return Err(LabError::Domain(format!(
            "holder fit needs at least 6 distinct lags on the grid, got {}",
            used.len()
        )));
    }

    // per-path mean of |Δ|^k for each lag
    let per_path: Vec<Vec<f64>> = ensemble
        .iter()
        .map(|p| {
            let now = p.snapshots[star].values.as_slice();
            used.iter()
                .map(|&(_, j)| match spec.direction {
                    Direction::Space => {
                        let at = |i: usize| if i == 0 || i > nx { 0.0 } else { now[i - 1] };
                        let count = nx + 2 - j;
                        (0..count).map(|i| (at(i + j) - at(i)).abs().powf(spec.k)).sum::<f64>() / count as f64
                    }
                    Direction::Time => {
                        let then = &p.snapshots[j].values;
                        now.iter().zip(then).map(|(a, b)| (a - b).abs().powf(spec.k)).sum::<f64>() / nx as f64
                    }
                })
                .collect()
        })
        .collect();
    let log_lags: Vec<f64> = used.iter().map(|u| u.0.ln()).collect();
    let fit_of = |idx: &[usize]| -> Option<(crate::stats::LinearFit, Vec<f64>)> {
        let n = idx.len() as f64;
        let moments: Vec<f64> = (0..used.len())
            .map(|l| idx.iter().map(|&p| per_path[p][l]).sum::<f64>() / n)
            .collect();
        let logs: Vec<f64> = moments.iter().map(|m| m.ln()).collect();
        linear_fit(&log_lags, &logs).map(|f| (f, moments))
    };
    let all: Vec<usize> = (0..ensemble.len()).collect();
    let (fit, moments) = fit_of(&all).ok_or_else(|| LabError::Domain("degenerate regression".into()))?;
    if !fit.slope.is_finite() {
        return Err(LabError::Domain("increment moments vanish; exponent undefined".into()));
    }
    let stderr = bootstrap_stderr(ensemble.len(), BOOTSTRAP_RESAMPLES, BOOTSTRAP_SEED, |idx| {
        fit_of(idx).map(|(f, _)| f.slope / spec.k).unwrap_or(f64::NAN)
    });
    Ok(HolderFit {
        direction: spec.direction,
        k: spec.k,
        exponent_hat: fit.slope / spec.k,
        intercept: fit.intercept,
        r2: fit.r2,
        lag_range: (used[0].0, used[used.len() - 1].0),
        lags: used.iter().map(|u| u.0).collect(),
        moments,
        stderr,
        mu_theory: 0.25f64.min(spec.alpha / 2.0),
        eta_theory: spec.alpha.min(0.5),
        n_paths: ensemble.len(),
    })
}

/// One row per lag: `schema_version, direction, k, lag, moment`, then the
/// fit columns repeated on every row.
pub fn write_holder_csv<W: std::io::Write>(out: W, fits: &[HolderFit]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "schema_version",
        "direction",
        "k",
        "lag",
        "moment",
        "exponent_hat",
        "intercept",
        "r2",
        "stderr",
        "mu_theory",
        "eta_theory",
        "n_paths",
    ])?;
    for f in fits {
        for (lag, m) in f.lags.iter().zip(&f.moments) {
            w.serialize((
                crate::SCHEMA_VERSION,
                f.direction.to_string(),
                f.k,
                lag,
                m,
                f.exponent_hat,
                f.intercept,
                f.r2,
                f.stderr,
                f.mu_theory,
                f.eta_theory,
                f.n_paths,
            ))?;
        }
    }
    w.flush().map_err(|e| LabError::io("<output>", None, e))
}

/// One row per `(beta, k)`. `ratio_to_k2` divides by the `k = 2` value at
/// the same `beta` and is empty when that value is not in the table.
pub fn write_moments_csv<W: std::io::Write>(out: W, estimates: &[MomentEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "schema_version",
        "beta",
        "k",
        "value",
        "mc_stderr",
        "n_paths",
        "heavy_tail_flag",
        "ratio_to_k2",
        "ratio_over_sqrt_k",
    ])?;
    for e in estimates {
        let base = estimates.iter().find(|o| o.beta == e.beta && o.k == 2.0).map(|o| o.value);
        let ratio = base.map(|b| e.value / b);
        w.serialize((
            crate::SCHEMA_VERSION,
            e.beta,
            e.k,
            e.value,
            e.mc_stderr,
            e.n_paths,
            e.heavy_tail_flag,
            ratio,
            ratio.map(|r| r / e.k.sqrt()),
        ))?;
    }
    w.flush().map_err(|e| LabError::io("<output>", None, e))
}
