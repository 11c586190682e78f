//! Dirichlet heat kernel of `½Δ` on `[0, 1]`.
//!
//! Two representations are implemented: the sine series
//! `G_t(x,y) = 2 Σ sin(nπx) sin(nπy) exp(-n²π²t/2)`, which converges fast for
//! large `t`, and the method of images
//! `G_t(x,y) = Σ_k [p(t, y-x-2k) - p(t, y+x-2k)]`, which converges fast for
//! small `t`. Truncation points for both are computed per call from explicit
//! tail bounds.

use std::f64::consts::PI;

use crate::error::{LabError, Result};
use crate::quad::{self, Estimate};

/// Samples of a function on the closed uniform grid `x_i = i / n`, `i = 0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 3 {
            return Err(LabError::Domain(format!(
                "grid function needs at least 3 samples, got {}",
                values.len()
            )));
        }
        Ok(GridFunction { values })
    }

    /// Samples `f` on `n + 1` equispaced nodes of `[0, 1]`.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Self {
        let n = n.max(2);
        GridFunction {
            values: (0..=n).map(|i| f(i as f64 / n as f64)).collect(),
        }
    }

    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.intervals() as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 / self.intervals() as f64
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Discrete Hölder seminorm `max |f(x_j) - f(x_i)| / |x_j - x_i|^α` over
    /// all node pairs.
    pub fn holder_seminorm(&self, alpha: f64) -> f64 {
        let n = self.values.len();
        let dx = self.dx();
        let mut best = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let q = (self.values[j] - self.values[i]).abs() / ((j - i) as f64 * dx).powf(alpha);
                best = best.max(q);
            }
        }
        best
    }
}

/// Standard normal `N(0, t)` density at `z`.
pub fn gaussian_density(t: f64, z: f64) -> f64 {
    (-z * z / (2.0 * t)).exp() / (2.0 * PI * t).sqrt()
}

/// Result of applying the semigroup on a grid.
#[derive(Debug, Clone)]
pub struct SemigroupOutput {
    pub values: GridFunction,
    /// Largest per-node quadrature error estimate.
    pub quad_error: f64,
}

/// Quantities produced by the quantitative Feller check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FellerDefect {
    /// `sup_x |(G_t f)(x) - f(x)|` over the grid.
    pub defect: f64,
    /// `(1 + (α/e)^{α/2}) ‖f‖_α t^{α/2}`.
    pub bound: f64,
    /// Discrete Hölder seminorm of `f`.
    pub holder_norm: f64,
    /// Discrete Hölder seminorm of `G_t f`.
    pub smoothed_seminorm: f64,
    /// `6 ‖f‖_α`, the envelope for `smoothed_seminorm`.
    pub seminorm_bound: f64,
    pub quad_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatKernel {
    /// Hard cap on the number of sine modes.
    pub mode_cap: usize,
    /// Hard cap on the image-charge index.
    pub image_cap: usize,
    /// Below this time the image form is used, above it the sine series.
    pub switch_time: f64,
    /// Target truncation error of either series.
    pub tail_tol: f64,
}

impl Default for HeatKernel {
    fn default() -> Self {
        HeatKernel {
            mode_cap: 100_000,
            image_cap: 100_000,
            switch_time: 0.1,
            tail_tol: 1e-14,
        }
    }
}

impl HeatKernel {
    fn check_args(t: f64, x: f64, y: f64) -> Result<()> {
        if !(t.is_finite() && t > 0.0) {
            return Err(LabError::Domain(format!("kernel time must be finite and > 0, got {t}")));
        }
        for (name, v) in [("x", x), ("y", y)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(LabError::Domain(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Number of sine modes whose omitted tail `Σ_{n>N} 2 exp(-n²π²t/2)` is
    /// below `tail_tol`.
    pub fn modes_needed(&self, t: f64) -> usize {
        let a = PI * PI * t / 2.0;
        let mut n = 1usize;
        while n < self.mode_cap {
            let next = (n + 1) as f64;
            let lead = 2.0 * (-next * next * a).exp();
            let ratio = (-(2.0 * next + 1.0) * a).exp();
            if lead / (1.0 - ratio) < self.tail_tol {
                break;
            }
            n += 1;
        }
        n
    }

    /// Image index range `k ∈ [-K, K+1]` whose omitted Gaussians are below
    /// `tail_tol`.
    pub fn images_needed(&self, t: f64) -> usize {
        // p(t, r) < tol  <=>  r² > 2t ln(1 / (tol √(2πt)))
        let arg = 1.0 / (self.tail_tol * (2.0 * PI * t).sqrt());
        let r = if arg > 1.0 { (2.0 * t * arg.ln()).sqrt() } else { 0.0 };
        (((r / 2.0).ceil() as usize) + 1).min(self.image_cap)
    }

    /// Raw sine-series value (no clamping).
    pub fn spectral(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        Self::check_args(t, x, y)?;
        let n_max = self.modes_needed(t);
        let a = PI * PI * t / 2.0;
        let mut s = 0.0;
        for n in 1..=n_max {
            let nf = n as f64;
            s += (nf * PI * x).sin() * (nf * PI * y).sin() * (-nf * nf * a).exp();
        }
        Ok(2.0 * s)
    }

    /// Raw image-charge value (no clamping). Symmetric in `(x, y)` bit for bit
    /// because it only sees `|x - y|` and `x + y`.
    pub fn image_charge(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        Self::check_args(t, x, y)?;
        let k_max = self.images_needed(t) as i64;
        let d = (x - y).abs();
        let s = x + y;
        let mut acc = 0.0;
        for k in -k_max..=(k_max + 1) {
            let shift = 2.0 * k as f64;
            acc += gaussian_density(t, d - shift) - gaussian_density(t, s - shift);
        }
        Ok(acc)
    }

    /// `G_t(x, y)`, clamped at zero.
    pub fn eval(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        let raw = if t < self.switch_time {
            self.image_charge(t, x, y)?
        } else {
            self.spectral(t, x, y)?
        };
        Ok(raw.max(0.0))
    }

    /// Unchecked evaluation for hot loops whose arguments are already valid.
    pub(crate) fn eval_unchecked(&self, t: f64, x: f64, y: f64) -> f64 {
        self.eval(t, x, y).unwrap_or(0.0)
    }

    /// `|spectral - image|` at a point.
    pub fn cross_agreement(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        Ok((self.spectral(t, x, y)? - self.image_charge(t, x, y)?).abs())
    }

    /// `(G_t f)` on the grid of `f` by composite Simpson quadrature.
    pub fn apply_semigroup(&self, f: &GridFunction, t: f64) -> Result<SemigroupOutput> {
        Self::check_args(t, 0.0, 0.0)?;
        let n = f.intervals();
        let tol = 1e-12 * f.sup_norm().max(1.0);
        if f.values[0].abs() > tol || f.values[n].abs() > tol {
            return Err(LabError::Contract(format!(
                "semigroup input must vanish at 0 and 1 (got {}, {})",
                f.values[0], f.values[n]
            )));
        }
        let h = f.dx();
        // symmetric kernel matrix on the grid, interior rows only
        let mut kmat = vec![0.0; (n + 1) * (n + 1)];
        for i in 1..n {
            for j in i..n {
                let g = self.eval_unchecked(t, f.x(i), f.x(j));
                kmat[i * (n + 1) + j] = g;
                kmat[j * (n + 1) + i] = g;
            }
        }
        let mut out = vec![0.0; n + 1];
        let mut worst = 0.0f64;
        let mut row = vec![0.0; n + 1];
        for i in 1..n {
            for j in 0..=n {
                row[j] = kmat[i * (n + 1) + j] * f.values[j];
            }
            let est = quad::simpson_uniform(&row, h)
                .ok_or_else(|| LabError::Domain("grid too coarse for Simpson".into()))?;
            out[i] = est.value;
            worst = worst.max(est.error);
        }
        Ok(SemigroupOutput {
            values: GridFunction { values: out },
            quad_error: worst,
        })
    }

    /// `∫₀¹ G_t(x, y) dy`, the survival probability of Brownian motion
    /// started at `x` and killed on leaving `(0, 1)`.
    pub fn kernel_mass(&self, t: f64, x: f64) -> Result<Estimate> {
        Self::check_args(t, x, x)?;
        if x == 0.0 || x == 1.0 {
            return Ok(Estimate::exact(0.0));
        }
        let w = t.sqrt();
        let bps = [x - 8.0 * w, x - 2.0 * w, x, x + 2.0 * w, x + 8.0 * w];
        let est = quad::integrate(
            |y| self.eval_unchecked(t, x, y),
            0.0,
            1.0,
            &bps,
            1e-13,
            1e-12,
            2000,
        );
        Ok(Estimate {
            value: est.value.clamp(0.0, 1.0),
            ..est
        })
    }

    /// Quantitative Feller defect of `f` at time `t` and its explicit bound.
    pub fn feller_defect(&self, f: &GridFunction, t: f64, alpha: f64) -> Result<FellerDefect> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(LabError::Domain(format!("Hölder exponent must lie in (0, 1], got {alpha}")));
        }
        if f.values.len() < 3 {
            return Err(LabError::Domain("zero grid".into()));
        }
        let smoothed = self.apply_semigroup(f, t)?;
        let defect = smoothed
            .values
            .values
            .iter()
            .zip(&f.values)
            .fold(0.0f64, |m, (g, v)| m.max((g - v).abs()));
        let holder_norm = f.holder_seminorm(alpha);
        let c_alpha = 1.0 + (alpha / std::f64::consts::E).powf(alpha / 2.0);
        Ok(FellerDefect {
            defect,
            bound: c_alpha * holder_norm * t.powf(alpha / 2.0),
            holder_norm,
            smoothed_seminorm: smoothed.values.holder_seminorm(alpha),
            seminorm_bound: 6.0 * holder_norm,
            quad_error: smoothed.quad_error,
        })
    }
}
