//! Numerical verification of the Green-function estimates used by the moment
//! and regularity bounds, plus the quantitative Feller checks.
//!
//! Every check evaluates a left-hand side by series summation or nested
//! adaptive quadrature and compares it with `constant * shape(params)`.
//! Where the implied constant is not explicit it is calibrated once on the
//! default sweep and frozen below; such reports carry
//! [`ConstantSource::Calibrated`].

use std::collections::BTreeMap;
use std::f64::consts::{E, PI};
use std::fmt;

use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::heat_kernel::{GridFunction, HeatKernel};
use crate::quad::{self, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LemmaId {
    A1,
    A2,
    A3,
    A5,
    A6,
    Feller,
    Feller2,
    /// The logarithmic Sobolev inequality with `K_ε = 1 + ¼ log(1/ε)`.
    LogSobolev,
}

impl LemmaId {
    pub const ALL: [LemmaId; 8] = [
        LemmaId::A1,
        LemmaId::A2,
        LemmaId::A3,
        LemmaId::A5,
        LemmaId::A6,
        LemmaId::Feller,
        LemmaId::Feller2,
        LemmaId::LogSobolev,
    ];
}

impl fmt::Display for LemmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LemmaId::A1 => "A1",
            LemmaId::A2 => "A2",
            LemmaId::A3 => "A3",
            LemmaId::A5 => "A5",
            LemmaId::A6 => "A6",
            LemmaId::Feller => "Feller",
            LemmaId::Feller2 => "Feller2",
            LemmaId::LogSobolev => "LogSobolev",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for LemmaId {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        LemmaId::ALL
            .into_iter()
            .find(|l| l.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| LabError::Domain(format!("unknown lemma id {s:?}")))
    }
}

/// Named parameters of a check. Only the fields a lemma needs are read.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BoundParams {
    pub beta: Option<f64>,
    pub theta: Option<f64>,
    pub epsilon: Option<f64>,
    pub x: Option<f64>,
    pub x_prime: Option<f64>,
    pub w: Option<f64>,
    pub v: Option<f64>,
    pub alpha: Option<f64>,
    pub t: Option<f64>,
    /// Overrides the default implied constant.
    pub constant: Option<f64>,
}

impl BoundParams {
    pub const NAMES: [&'static str; 9] = ["beta", "theta", "epsilon", "x", "x_prime", "w", "v", "alpha", "t"];

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "beta" => self.beta,
            "theta" => self.theta,
            "epsilon" => self.epsilon,
            "x" => self.x,
            "x_prime" => self.x_prime,
            "w" => self.w,
            "v" => self.v,
            "alpha" => self.alpha,
            "t" => self.t,
            _ => None,
        }
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        Self::NAMES
            .iter()
            .filter_map(|n| self.get(n).map(|v| (n.to_string(), v)))
            .collect()
    }

    fn require(&self, lemma: LemmaId, name: &str) -> Result<f64> {
        let v = self
            .get(name)
            .ok_or_else(|| LabError::Domain(format!("{lemma} needs parameter {name}")))?;
        if !v.is_finite() {
            return Err(LabError::Domain(format!("{lemma}: {name} = {v} is not finite")));
        }
        Ok(v)
    }

    fn theta(&self, lemma: LemmaId) -> Result<u8> {
        let th = self.require(lemma, "theta")?;
        if th == 1.0 {
            Ok(1)
        } else if th == 2.0 {
            Ok(2)
        } else {
            Err(LabError::Domain(format!("{lemma}: theta must be 1 or 2, got {th}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstantSource {
    /// Read off an explicit estimate in the proof.
    Proof,
    /// Stated as the sharp constant in the source analysis.
    Published,
    /// Fitted on the default sweep and frozen.
    Calibrated,
    /// Supplied by the caller.
    User,
}

impl fmt::Display for ConstantSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstantSource::Proof => "proof",
            ConstantSource::Published => "published",
            ConstantSource::Calibrated => "calibrated",
            ConstantSource::User => "user",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub lemma_id: LemmaId,
    pub params: BTreeMap<String, f64>,
    pub lhs: f64,
    pub rhs_bound: f64,
    /// `rhs_bound - lhs`; negative when the bound is violated.
    pub margin: f64,
    pub quadrature_error: f64,
    pub constant: f64,
    pub constant_source: ConstantSource,
}

impl BoundReport {
    pub(crate) fn new(
        lemma_id: LemmaId,
        params: &BoundParams,
        lhs: Estimate,
        shape: f64,
        (constant, constant_source): (f64, ConstantSource),
    ) -> Self {
        let rhs_bound = constant * shape;
        let quadrature_error = if lhs.converged { lhs.error } else { f64::INFINITY };
        BoundReport {
            lemma_id,
            params: params.to_map(),
            lhs: lhs.value,
            rhs_bound,
            margin: rhs_bound - lhs.value,
            quadrature_error,
            constant,
            constant_source,
        }
    }

    /// A verdict is only issued once the quadrature error is below `|margin|`.
    pub fn verdict(&self) -> Verdict {
        if !(self.quadrature_error < self.margin.abs()) {
            Verdict::Inconclusive
        } else if self.margin > 0.0 {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    /// `lhs / rhs_bound`.
    pub fn ratio(&self) -> f64 {
        self.lhs / self.rhs_bound
    }
}

/// Frozen implied constants. The calibrated entries are 1.25x the largest
/// `lhs / shape` ratio seen on [`default_battery`], rounded up.
pub fn default_constant(lemma: LemmaId, theta: u8) -> (f64, ConstantSource) {
    use ConstantSource::*;
    match (lemma, theta) {
        // two-piece split of the series: S1 + S2 <= 2 (vw)^{-1/2}
        (LemmaId::A1, _) => (2.0, Proof),
        // ∫ G_t(x, y) dy <= 1
        (LemmaId::A2, 1) => (1.0, Proof),
        (LemmaId::A2, _) => (1.0 / (PI * 2f64.sqrt()), Published),
        (LemmaId::A3, 1) => (CALIBRATED_A3_1, Calibrated),
        (LemmaId::A3, _) => (CALIBRATED_A3_2, Calibrated),
        (LemmaId::A5, 1) => (CALIBRATED_A5_1, Calibrated),
        (LemmaId::A5, _) => (CALIBRATED_A5_2, Calibrated),
        (LemmaId::A6, 1) => (CALIBRATED_A6_1, Calibrated),
        (LemmaId::A6, _) => (CALIBRATED_A6_2, Calibrated),
        (LemmaId::Feller, _) | (LemmaId::Feller2, _) | (LemmaId::LogSobolev, _) => (1.0, Proof),
    }
}

pub const CALIBRATED_A3_1: f64 = 0.43;
pub const CALIBRATED_A3_2: f64 = 1.3;
pub const CALIBRATED_A5_1: f64 = 0.43;
pub const CALIBRATED_A5_2: f64 = 0.36;
pub const CALIBRATED_A6_1: f64 = 1.3;
pub const CALIBRATED_A6_2: f64 = 0.71;

/// Grid resolution for the Feller checks.
pub const FELLER_GRID: usize = 1024;
/// Spatial points searched for the `sup_x` in A5 and A6.
const SUP_X_COARSE: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
/// Series length for the slowly converging `Σ 1/n²`-type sums.
const SERIES_TERMS: usize = 1_000_000;

/// `Ψ₁(z) = z log(e ∨ 1/z)`, `Ψ₂(z) = z`.
pub fn psi(theta: u8, z: f64) -> f64 {
    if theta == 1 {
        z * (1.0 / z).max(E).ln()
    } else {
        z
    }
}

/// Evaluates the selected estimate at `params`.
pub fn verify_green_bound(kernel: &HeatKernel, lemma: LemmaId, params: &BoundParams) -> Result<BoundReport> {
    let constant_for = |theta: u8| match params.constant {
        Some(c) => (c, ConstantSource::User),
        None => default_constant(lemma, theta),
    };
    match lemma {
        LemmaId::A1 => {
            let w = params.require(lemma, "w")?;
            let v = params.require(lemma, "v")?;
            if !(w > 0.0 && v > 0.0) {
                return Err(LabError::Domain(format!("A1 needs w, v > 0 (got {w}, {v})")));
            }
            let lhs = a1_series(w, v);
            Ok(BoundReport::new(lemma, params, lhs, 1.0 / (v * w).sqrt(), constant_for(1)))
        }
        LemmaId::A2 => {
            let beta = params.require(lemma, "beta")?;
            let theta = params.theta(lemma)?;
            let x = unit_interval(lemma, params.require(lemma, "x")?)?;
            if beta <= 0.0 {
                return Err(LabError::Domain(format!("A2 needs beta > 0, got {beta}")));
            }
            let lhs = a2_series(beta, theta, x);
            let shape = beta.powf(-1.0 / theta as f64);
            Ok(BoundReport::new(lemma, params, lhs, shape, constant_for(theta)))
        }
        LemmaId::A3 => {
            let theta = params.theta(lemma)?;
            let x = unit_interval(lemma, params.require(lemma, "x")?)?;
            let xp = unit_interval(lemma, params.require(lemma, "x_prime")?)?;
            let h = (x - xp).abs();
            let lhs = if h == 0.0 {
                Estimate::exact(0.0)
            } else if theta == 2 {
                a3_series(x, xp)
            } else {
                a3_quadrature(kernel, x, xp)
            };
            let shape = if h == 0.0 { 0.0 } else { psi(theta, h) };
            Ok(BoundReport::new(lemma, params, lhs, shape, constant_for(theta)))
        }
        LemmaId::A5 => {
            let theta = params.theta(lemma)?;
            let eps = positive(lemma, "epsilon", params.require(lemma, "epsilon")?)?;
            let lhs = match (theta, params.x) {
                (2, None) => sup_over_x_series(|x| a5_series(x, eps)),
                (2, Some(x)) => a5_series(unit_interval(lemma, x)?, eps),
                (_, None) => sup_over(&SUP_X_COARSE, |x| a5_quadrature(kernel, x, eps)),
                (_, Some(x)) => a5_quadrature(kernel, unit_interval(lemma, x)?, eps),
            };
            Ok(BoundReport::new(lemma, params, lhs, eps.sqrt(), constant_for(theta)))
        }
        LemmaId::A6 => {
            let theta = params.theta(lemma)?;
            let eps = positive(lemma, "epsilon", params.require(lemma, "epsilon")?)?;
            let lhs = match (theta, params.x) {
                (2, None) => sup_over_x_series(|x| a6_series(x, eps)),
                (2, Some(x)) => a6_series(unit_interval(lemma, x)?, eps),
                (_, None) => sup_over(&SUP_X_COARSE, |x| a6_quadrature(kernel, x, eps)),
                (_, Some(x)) => a6_quadrature(kernel, unit_interval(lemma, x)?, eps),
            };
            let shape = eps.powf(1.0 / theta as f64);
            Ok(BoundReport::new(lemma, params, lhs, shape, constant_for(theta)))
        }
        LemmaId::LogSobolev => Err(LabError::Domain(
            "the log-Sobolev check takes a function; use diagnostics::log_sobolev_check".into(),
        )),
        LemmaId::Feller | LemmaId::Feller2 => {
            let alpha = params.require(lemma, "alpha")?;
            let t = positive(lemma, "t", params.require(lemma, "t")?)?;
            let f = feller_test_function(alpha);
            let r = kernel.feller_defect(&f, t, alpha)?;
            let (lhs, shape) = if lemma == LemmaId::Feller {
                (r.defect, r.bound)
            } else {
                (r.smoothed_seminorm, r.seminorm_bound)
            };
            // the seminorm of G_t f inherits the node-wise quadrature error
            // through pair differences divided by at least dx^α
            let err = if lemma == LemmaId::Feller {
                r.quad_error
            } else {
                2.0 * r.quad_error / (1.0 / FELLER_GRID as f64).powf(alpha)
            };
            let lhs = Estimate {
                value: lhs,
                error: err,
                converged: true,
            };
            Ok(BoundReport::new(lemma, params, lhs, shape, constant_for(1)))
        }
    }
}

/// `min(x, 1 - x)^α`, a member of `C^α₀` with seminorm 1.
pub fn feller_test_function(alpha: f64) -> GridFunction {
    GridFunction::from_fn(FELLER_GRID, |x| x.min(1.0 - x).max(0.0).powf(alpha))
}

fn unit_interval(lemma: LemmaId, x: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(LabError::Domain(format!("{lemma}: position {x} outside [0, 1]")))
    }
}

fn positive(lemma: LemmaId, name: &str, v: f64) -> Result<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(LabError::Domain(format!("{lemma}: {name} must be > 0, got {v}")))
    }
}

fn sup_over(xs: &[f64], f: impl Fn(f64) -> Estimate) -> Estimate {
    xs.iter()
        .map(|&x| f(x))
        .fold(Estimate::exact(f64::NEG_INFINITY), |best, e| {
            let error = best.error.max(e.error);
            let converged = best.converged && e.converged;
            if e.value > best.value {
                Estimate { value: e.value, error, converged }
            } else {
                Estimate { error, converged, ..best }
            }
        })
}

/// `sup_x` over 100 points of `(0, ½]`; the sine sums are symmetric about ½.
fn sup_over_x_series(f: impl Fn(f64) -> Estimate) -> Estimate {
    let xs: Vec<f64> = (1..=100).map(|j| j as f64 / 200.0).collect();
    sup_over(&xs, f)
}

/// `Σ_{n≥1} (w + v n²)^{-1}` summed directly with an Euler-Maclaurin tail.
fn a1_series(w: f64, v: f64) -> Estimate {
    let f = |n: f64| 1.0 / (w + v * n * n);
    let n_max = (10.0 * (w / v).sqrt()).max(1000.0).ceil();
    let mut s = 0.0;
    let mut n = n_max;
    while n >= 1.0 {
        s += f(n);
        n -= 1.0;
    }
    // Σ_{n>N} f(n) = ∫_N^∞ f - f(N)/2 - f'(N)/12 + ...
    let integral = (PI / 2.0 - (n_max * (v / w).sqrt()).atan()) / (w * v).sqrt();
    let fp = -2.0 * v * n_max * f(n_max).powi(2);
    let tail = integral - 0.5 * f(n_max) - fp / 12.0;
    // f''' / 720 term magnitude, bounded by 24 v² N³ f⁴ + lower order
    let err = 24.0 * v * v * n_max.powi(3) * f(n_max).powi(4) / 720.0 * 4.0;
    Estimate {
        value: s + tail,
        error: err,
        converged: true,
    }
}

/// `∫₀^∞∫₀¹ (e^{-βt} G_t(x, y))^θ dy dt` through its sine expansion.
fn a2_series(beta: f64, theta: u8, x: f64) -> Estimate {
    let n_terms = SERIES_TERMS;
    let mut s = 0.0;
    for n in (1..=n_terms).rev() {
        let nf = n as f64;
        let lam = nf * nf * PI * PI;
        let sn = (nf * PI * x).sin();
        s += if theta == 1 {
            // ∫ G_t(x, y) dy = Σ 2 sin(nπx)(1 - (-1)^n)/(nπ) e^{-n²π²t/2}
            if n % 2 == 1 {
                4.0 * sn / (nf * PI) / (beta + lam / 2.0)
            } else {
                0.0
            }
        } else {
            // ∫ G_t(x, y)² dy = Σ 2 sin²(nπx) e^{-n²π²t}
            2.0 * sn * sn / (2.0 * beta + lam)
        };
    }
    let nf = n_terms as f64;
    let tail = if theta == 1 {
        4.0 / (PI.powi(3) * nf * nf)
    } else {
        2.0 / (PI * PI * nf)
    };
    Estimate {
        value: s,
        error: tail,
        converged: true,
    }
}

/// `∫₀^∞∫₀¹ (G_t(x,y) - G_t(x',y))² dy dt = 2 Σ (sin nπx - sin nπx')² / (n²π²)`.
fn a3_series(x: f64, xp: f64) -> Estimate {
    let mut s = 0.0;
    for n in (1..=SERIES_TERMS).rev() {
        let nf = n as f64;
        let d = (nf * PI * x).sin() - (nf * PI * xp).sin();
        s += 2.0 * d * d / (nf * nf * PI * PI);
    }
    Estimate {
        value: s,
        error: 8.0 / (PI * PI * SERIES_TERMS as f64),
        converged: true,
    }
}

/// Horizon past which `∫ |G|` contributions fall below `e^{-π² T/2} ~ 1e-21`.
const TIME_HORIZON: f64 = 10.0;

fn inner_abs_diff(kernel: &HeatKernel, t1: f64, x1: f64, t2: f64, x2: f64) -> Estimate {
    let (w1, w2) = (t1.sqrt(), t2.sqrt());
    let mut bps = vec![x1, x2, 0.5 * (x1 + x2)];
    for (x, w) in [(x1, w1), (x2, w2)] {
        for k in [-6.0, -2.0, -0.5, 0.5, 2.0, 6.0] {
            bps.push(x + k * w);
        }
    }
    quad::integrate(
        |y| (kernel.eval_unchecked(t1, x1, y) - kernel.eval_unchecked(t2, x2, y)).abs(),
        0.0,
        1.0,
        &bps,
        1e-12,
        1e-10,
        4000,
    )
}

/// Outer time integral of an inner spatial estimate, accumulating the inner
/// errors into the reported error.
fn time_integral(breakpoints: &[f64], inner: impl Fn(f64) -> Estimate) -> Estimate {
    let inner_err = std::cell::Cell::new(0.0f64);
    let inner_ok = std::cell::Cell::new(true);
    let outer = quad::integrate(
        |t| {
            if t <= 0.0 {
                return 0.0;
            }
            let e = inner(t);
            inner_err.set(inner_err.get().max(e.error));
            inner_ok.set(inner_ok.get() && e.converged);
            e.value
        },
        0.0,
        TIME_HORIZON,
        breakpoints,
        1e-11,
        1e-9,
        4000,
    );
    Estimate {
        value: outer.value,
        error: outer.error + TIME_HORIZON * inner_err.get(),
        converged: outer.converged && inner_ok.get(),
    }
}

fn geometric_breaks(scale: f64) -> Vec<f64> {
    let mut v: Vec<f64> = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0].iter().map(|k| k * scale).collect();
    v.extend([0.1, 1.0, 3.0]);
    v
}

fn a3_quadrature(kernel: &HeatKernel, x: f64, xp: f64) -> Estimate {
    let h = (x - xp).abs();
    time_integral(&geometric_breaks(h * h), |t| inner_abs_diff(kernel, t, x, t, xp))
}

fn a5_quadrature(kernel: &HeatKernel, x: f64, eps: f64) -> Estimate {
    time_integral(&geometric_breaks(eps), |r| inner_abs_diff(kernel, r + eps, x, r, x))
}

fn a6_quadrature(kernel: &HeatKernel, x: f64, eps: f64) -> Estimate {
    let inner_err = std::cell::Cell::new(0.0f64);
    let bps: Vec<f64> = [1e-4, 1e-3, 1e-2, 1e-1].iter().map(|k| k * eps).collect();
    let outer = quad::integrate(
        |r| {
            if r <= 0.0 {
                return 1.0;
            }
            match kernel.kernel_mass(r, x) {
                Ok(m) => {
                    inner_err.set(inner_err.get().max(m.error));
                    m.value
                }
                Err(_) => f64::NAN,
            }
        },
        0.0,
        eps,
        &bps,
        1e-13,
        1e-10,
        2000,
    );
    Estimate {
        value: outer.value,
        error: outer.error + eps * inner_err.get(),
        converged: outer.converged && outer.value.is_finite(),
    }
}

/// Sums `2 Σ sin²(nπx) g(n)` with the sine recurrence; `g(n) <= 1/(n²π²)`
/// bounds the tail.
fn sine_squared_series(x: f64, g: impl Fn(f64) -> f64) -> Estimate {
    let c = 2.0 * (PI * x).cos();
    let (mut s_prev, mut s_cur) = (0.0f64, (PI * x).sin());
    let n_terms = 200_000usize;
    let mut acc = 0.0;
    for n in 1..=n_terms {
        acc += 2.0 * s_cur * s_cur * g(n as f64);
        let next = c * s_cur - s_prev;
        s_prev = s_cur;
        s_cur = next;
    }
    Estimate {
        value: acc,
        error: 2.0 / (PI * PI * n_terms as f64) + 1e-12,
        converged: true,
    }
}

fn a5_series(x: f64, eps: f64) -> Estimate {
    sine_squared_series(x, |n| {
        let lam = n * n * PI * PI;
        let d = -(-lam * eps / 2.0).exp_m1();
        d * d / lam
    })
}

fn a6_series(x: f64, eps: f64) -> Estimate {
    sine_squared_series(x, |n| {
        let lam = n * n * PI * PI;
        -(-lam * eps).exp_m1() / lam
    })
}

/// The default parameter sweep, in report order.
pub fn default_battery() -> Vec<(LemmaId, BoundParams)> {
    let mut out = Vec::new();
    let grid = [1.0, 10.0, 100.0];
    for &w in &grid {
        for &v in &grid {
            out.push((LemmaId::A1, BoundParams { w: Some(w), v: Some(v), ..Default::default() }));
        }
    }
    for theta in [1.0, 2.0] {
        for &beta in &grid {
            out.push((
                LemmaId::A2,
                BoundParams { beta: Some(beta), theta: Some(theta), x: Some(0.5), ..Default::default() },
            ));
        }
    }
    for theta in [1.0, 2.0] {
        for h in A3_SWEEP {
            out.push((
                LemmaId::A3,
                BoundParams { theta: Some(theta), x: Some(0.25), x_prime: Some(0.25 + h), ..Default::default() },
            ));
        }
    }
    for lemma in [LemmaId::A5, LemmaId::A6] {
        for theta in [1.0, 2.0] {
            for eps in EPS_SWEEP {
                out.push((lemma, BoundParams { theta: Some(theta), epsilon: Some(eps), ..Default::default() }));
            }
        }
    }
    for lemma in [LemmaId::Feller, LemmaId::Feller2] {
        for alpha in [0.5, 1.0] {
            for t in [1e-3, 1e-2, 1e-1] {
                out.push((lemma, BoundParams { alpha: Some(alpha), t: Some(t), ..Default::default() }));
            }
        }
    }
    out
}

pub const A3_SWEEP: [f64; 6] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.4];
pub const EPS_SWEEP: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

/// Runs the whole default battery.
pub fn run_battery(kernel: &HeatKernel) -> Result<Vec<BoundReport>> {
    default_battery()
        .par_iter()
        .map(|(lemma, params)| verify_green_bound(kernel, *lemma, params))
        .collect()
}

/// Ratio statistics of one (lemma, θ) family on the default sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub lemma: LemmaId,
    pub theta: u8,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `1.25 * max_ratio` rounded up to two significant digits.
    pub suggested_constant: f64,
}

/// Recomputes `lhs / shape` across the default sweep of a family.
pub fn calibrate(kernel: &HeatKernel, lemma: LemmaId, theta: u8) -> Result<Calibration> {
    let ratios: Vec<f64> = default_battery()
        .into_iter()
        .filter(|(l, p)| *l == lemma && p.theta.map(|t| t as u8).unwrap_or(1) == theta)
        .map(|(l, p)| {
            let p = BoundParams { constant: Some(1.0), ..p };
            verify_green_bound(kernel, l, &p).map(|r| r.ratio())
        })
        .collect::<Result<_>>()?;
    let max_ratio = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_ratio = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let raw = 1.25 * max_ratio;
    let scale = 10f64.powf(raw.log10().floor() - 1.0);
    Ok(Calibration {
        lemma,
        theta,
        min_ratio,
        max_ratio,
        suggested_constant: (raw / scale).ceil() * scale,
    })
}

/// Writes one report per row: `schema_version, lemma_id`, the fixed
/// parameter columns (empty when unused), then the numeric results.
pub fn write_reports_csv<W: std::io::Write>(out: W, reports: &[BoundReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["schema_version", "lemma_id"];
    header.extend(BoundParams::NAMES);
    header.extend([
        "lhs",
        "rhs_bound",
        "margin",
        "quadrature_error",
        "constant",
        "constant_source",
        "verdict",
    ]);
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![crate::SCHEMA_VERSION.to_string(), r.lemma_id.to_string()];
        for name in BoundParams::NAMES {
            row.push(r.params.get(name).map(|v| v.to_string()).unwrap_or_default());
        }
        row.extend([
            r.lhs.to_string(),
            r.rhs_bound.to_string(),
            r.margin.to_string(),
            r.quadrature_error.to_string(),
            r.constant.to_string(),
            r.constant_source.to_string(),
            r.verdict().to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| LabError::io("<bound report>", None, e))?;
    Ok(())
}
