//! Drift and diffusion families, their truncations at a level `N`, and the
//! affine envelopes `|f(z)| <= c + L|z|` consumed by the moment checks.

use std::f64::consts::E;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, LabError, Result};

/// `log₊(w) = log(max(w, e))`.
pub fn log_plus(w: f64) -> f64 {
    w.max(E).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftFamily {
    /// `ϑ₁ + ϑ₂ |z| log₊|z|`.
    LogCritical { theta1: f64, theta2: f64 },
    /// `scale (1+|z|) (log₊(1+|z|))^{1+ε} + offset`.
    SuperLog {
        epsilon: f64,
        scale: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `scale (1+|z|)^p`, `p > 1`.
    PowerBg { power: f64, scale: f64 },
    /// `sign · z³` with `sign = ±1`.
    Cubic { sign: f64 },
    /// Piecewise linear through `(knots[i], values[i])`, constant outside.
    Custom { knots: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundedShape {
    /// `tanh z`
    Tanh,
    /// `sin z`
    Sin,
    /// `1 + ½ sin z`, bounded away from zero.
    OnePlusHalfSin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionFamily {
    Constant { sigma0: f64 },
    /// `amplitude · shape(z)`.
    Bounded { shape: BoundedShape, amplitude: f64 },
    /// `scale (1+|z|) (log₊(1+|z|))^{1/8}`, which is `o(|z| (log|z|)^{1/4})`.
    SubQuarterLog { scale: f64 },
}

/// `|b(z)| <= c_b + L_b|z|`, `|σ(z)| <= c_σ + L_σ|z|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub c_b: f64,
    pub l_b: f64,
    pub c_sigma: f64,
    pub l_sigma: f64,
}

impl Envelope {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c_b", self.c_b), ("c_sigma", self.c_sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(LabError::Domain(format!("envelope {name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("l_b", self.l_b), ("l_sigma", self.l_sigma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LabError::Domain(format!("envelope {name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// `L_b >= 4 L_σ⁴ > 0`.
    pub fn growth_condition_holds(&self) -> bool {
        self.l_sigma > 0.0 && self.l_b >= 4.0 * self.l_sigma.powi(4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    pub drift: DriftFamily,
    pub diffusion: DiffusionFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<Envelope>,
    /// Require `L_b >= 4 L_σ⁴` of the envelope.
    #[serde(default)]
    pub enforce_growth_condition: bool,
}

impl CoefficientSpec {
    pub fn new(drift: DriftFamily, diffusion: DiffusionFamily) -> Self {
        CoefficientSpec {
            drift,
            diffusion,
            envelope: None,
            enforce_growth_condition: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::Domain(m));
        let all_finite = |vs: &[f64]| vs.iter().all(|v| v.is_finite());
        match &self.drift {
            DriftFamily::LogCritical { theta1, theta2 } => {
                if !all_finite(&[*theta1, *theta2]) {
                    return bad("log_critical parameters must be finite".into());
                }
            }
            DriftFamily::SuperLog { epsilon, scale, offset } => {
                if !(*epsilon > 0.0 && *scale > 0.0 && all_finite(&[*epsilon, *scale, *offset])) {
                    return bad(format!("super_log needs epsilon > 0, scale > 0 (got {epsilon}, {scale})"));
                }
            }
            DriftFamily::PowerBg { power, scale } => {
                if !(*power > 1.0 && *scale > 0.0 && all_finite(&[*power, *scale])) {
                    return bad(format!("power_bg needs power > 1, scale > 0 (got {power}, {scale})"));
                }
            }
            DriftFamily::Cubic { sign } => {
                if sign.abs() != 1.0 {
                    return bad(format!("cubic sign must be +1 or -1, got {sign}"));
                }
            }
            DriftFamily::Custom { knots, values } => {
                if knots.len() < 2 || knots.len() != values.len() {
                    return bad("custom drift needs >= 2 knots and one value per knot".into());
                }
                if !all_finite(knots) || !all_finite(values) || knots.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("custom knots must be finite and strictly increasing".into());
                }
            }
        }
        match &self.diffusion {
            DiffusionFamily::Constant { sigma0 } => ensure_finite("sigma0", *sigma0)?,
            DiffusionFamily::Bounded { amplitude, .. } => ensure_finite("amplitude", *amplitude)?,
            DiffusionFamily::SubQuarterLog { scale } => {
                if !(*scale > 0.0 && scale.is_finite()) {
                    return bad(format!("sub_quarter_log scale must be > 0, got {scale}"));
                }
            }
        }
        if let Some(env) = &self.envelope {
            env.validate()?;
            if self.enforce_growth_condition && !env.growth_condition_holds() {
                return bad(format!(
                    "growth condition L_b >= 4 L_sigma^4 fails: {} < {}",
                    env.l_b,
                    4.0 * env.l_sigma.powi(4)
                ));
            }
        } else if self.enforce_growth_condition {
            return bad("growth condition requested without an envelope".into());
        }
        Ok(())
    }

    pub fn eval_drift(&self, z: f64) -> Result<f64> {
        ensure_finite("z", z)?;
        Ok(self.drift_at(z))
    }

    pub fn eval_diffusion(&self, z: f64) -> Result<f64> {
        ensure_finite("z", z)?;
        Ok(self.diffusion_at(z))
    }

    /// Drift without the finiteness check, for inner loops.
    pub fn drift_at(&self, z: f64) -> f64 {
        match &self.drift {
            DriftFamily::LogCritical { theta1, theta2 } => {
                let a = z.abs();
                theta1 + theta2 * a * log_plus(a)
            }
            DriftFamily::SuperLog { epsilon, scale, offset } => {
                let a = 1.0 + z.abs();
                scale * a * log_plus(a).powf(1.0 + epsilon) + offset
            }
            DriftFamily::PowerBg { power, scale } => scale * (1.0 + z.abs()).powf(*power),
            DriftFamily::Cubic { sign } => sign * z * z * z,
            DriftFamily::Custom { knots, values } => interpolate(knots, values, z),
        }
    }

    pub fn diffusion_at(&self, z: f64) -> f64 {
        match &self.diffusion {
            DiffusionFamily::Constant { sigma0 } => *sigma0,
            DiffusionFamily::Bounded { shape, amplitude } => {
                amplitude
                    * match shape {
                        BoundedShape::Tanh => z.tanh(),
                        BoundedShape::Sin => z.sin(),
                        BoundedShape::OnePlusHalfSin => 1.0 + 0.5 * z.sin(),
                    }
            }
            DiffusionFamily::SubQuarterLog { scale } => {
                let a = 1.0 + z.abs();
                scale * a * log_plus(a).powf(0.125)
            }
        }
    }

    pub fn truncate(&self, level: f64) -> Result<TruncatedCoefficient> {
        if !(level >= 1.0) || level.is_nan() {
            return Err(LabError::Domain(format!("truncation level must be >= 1, got {level}")));
        }
        Ok(TruncatedCoefficient {
            base: self.clone(),
            level,
        })
    }
}

fn interpolate(knots: &[f64], values: &[f64], z: f64) -> f64 {
    let last = knots.len() - 1;
    if z <= knots[0] {
        return values[0];
    }
    if z >= knots[last] {
        return values[last];
    }
    let j = knots.partition_point(|k| *k <= z) - 1;
    let w = (z - knots[j]) / (knots[j + 1] - knots[j]);
    values[j] * (1.0 - w) + values[j + 1] * w
}

/// Pointwise evaluation of a drift/diffusion pair.
pub trait Coefficients {
    fn drift_at(&self, z: f64) -> f64;
    fn diffusion_at(&self, z: f64) -> f64;
}

impl Coefficients for CoefficientSpec {
    fn drift_at(&self, z: f64) -> f64 {
        CoefficientSpec::drift_at(self, z)
    }
    fn diffusion_at(&self, z: f64) -> f64 {
        CoefficientSpec::diffusion_at(self, z)
    }
}

impl Coefficients for TruncatedCoefficient {
    fn drift_at(&self, z: f64) -> f64 {
        TruncatedCoefficient::drift_at(self, z)
    }
    fn diffusion_at(&self, z: f64) -> f64 {
        TruncatedCoefficient::diffusion_at(self, z)
    }
}

/// `f_N(z) = f(max(-N, min(z, N)))`; `N = ∞` reproduces the base.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedCoefficient {
    pub base: CoefficientSpec,
    pub level: f64,
}

impl TruncatedCoefficient {
    /// The identity truncation, used for untruncated dynamics.
    pub fn untruncated(base: CoefficientSpec) -> Self {
        TruncatedCoefficient {
            base,
            level: f64::INFINITY,
        }
    }

    pub fn drift_at(&self, z: f64) -> f64 {
        self.base.drift_at(z.clamp(-self.level, self.level))
    }

    pub fn diffusion_at(&self, z: f64) -> f64 {
        self.base.diffusion_at(z.clamp(-self.level, self.level))
    }

    pub fn eval_drift(&self, z: f64) -> Result<f64> {
        ensure_finite("z", z)?;
        Ok(self.drift_at(z))
    }

    pub fn eval_diffusion(&self, z: f64) -> Result<f64> {
        ensure_finite("z", z)?;
        Ok(self.diffusion_at(z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certification {
    ClosedForm,
    Sweep,
    /// Constant coefficient: any `L > 0` works; the smallest positive float is returned.
    Degenerate,
}

impl fmt::Display for Certification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Certification::ClosedForm => "closed_form",
            Certification::Sweep => "sweep",
            Certification::Degenerate => "degenerate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineBound {
    pub c: f64,
    pub l: f64,
    pub certification: Certification,
}

/// Safety factor on swept Lipschitz constants.
pub const ENVELOPE_MARGIN: f64 = 1.1;
const SWEEP_POINTS: usize = 20_001;

/// `c = |f(0)|`, `L = 1.1 · max` neighbor difference quotient on `[-N, N]`.
/// The sweep is repeated at double resolution and must agree to 1%.
fn swept_bound(f: impl Fn(f64) -> f64, level: f64) -> Result<AffineBound> {
    if !level.is_finite() {
        return Err(LabError::Inconclusive(
            "Lipschitz sweep needs a finite truncation level".into(),
        ));
    }
    let quotient = |m: usize| {
        let h = 2.0 * level / (m - 1) as f64;
        let mut prev = f(-level);
        let mut best = 0.0f64;
        for i in 1..m {
            let cur = f(-level + i as f64 * h);
            best = best.max((cur - prev).abs() / h);
            prev = cur;
        }
        best
    };
    let coarse = quotient(SWEEP_POINTS);
    let fine = quotient(2 * SWEEP_POINTS - 1);
    if !fine.is_finite() || (fine - coarse).abs() > 0.01 * fine.max(f64::MIN_POSITIVE) {
        return Err(LabError::Inconclusive(format!(
            "Lipschitz sweep not converged on [-{level}, {level}] ({coarse} vs {fine}); widen the grid"
        )));
    }
    Ok(AffineBound {
        c: f(0.0).abs(),
        l: ENVELOPE_MARGIN * fine.max(coarse),
        certification: Certification::Sweep,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEnvelope {
    pub drift: AffineBound,
    pub diffusion: AffineBound,
}

impl LipschitzEnvelope {
    pub fn as_envelope(&self) -> Envelope {
        Envelope {
            c_b: self.drift.c,
            l_b: self.drift.l,
            c_sigma: self.diffusion.c,
            l_sigma: self.diffusion.l,
        }
    }
}

/// Envelope pair of a truncated specification. LogCritical drift with
/// `N >= 3` returns `(|ϑ₁|, |ϑ₂| log N)`; other families are swept.
pub fn lipschitz_envelope(trunc: &TruncatedCoefficient) -> Result<LipschitzEnvelope> {
    let n = trunc.level;
    let drift = match trunc.base.drift {
        DriftFamily::LogCritical { theta1, theta2 } if n >= 3.0 && n.is_finite() => AffineBound {
            c: theta1.abs(),
            l: theta2.abs() * n.ln(),
            certification: Certification::ClosedForm,
        },
        _ => swept_bound(|z| trunc.drift_at(z), n)?,
    };
    let diffusion = match trunc.base.diffusion {
        DiffusionFamily::Constant { sigma0 } => AffineBound {
            c: sigma0.abs(),
            l: f64::MIN_POSITIVE,
            certification: Certification::Degenerate,
        },
        _ => swept_bound(|z| trunc.diffusion_at(z), n)?,
    };
    Ok(LipschitzEnvelope { drift, diffusion })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(drift: DriftFamily) -> CoefficientSpec {
        CoefficientSpec::new(drift, DiffusionFamily::Constant { sigma0: 1.0 })
    }

    #[test]
    fn log_critical_values() {
        let s = spec(DriftFamily::LogCritical { theta1: 0.0, theta2: 1.0 });
        assert!((s.eval_drift(E).unwrap() - E).abs() < 1e-15);
        // below e the log is frozen at 1
        assert!((s.eval_drift(1.5).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(s.eval_drift(-7.0).unwrap(), s.eval_drift(7.0).unwrap());
        let s = spec(DriftFamily::LogCritical { theta1: 2.0, theta2: 0.0 });
        for z in [-1e6, -1.0, 0.0, 3.3, 1e9] {
            assert_eq!(s.eval_drift(z).unwrap(), 2.0);
        }
    }

    #[test]
    fn super_log_value() {
        let s = spec(DriftFamily::SuperLog { epsilon: 1.0, scale: 1.0, offset: 0.0 });
        let z = E * E - 1.0;
        let want = 4.0 * E * E;
        assert!((s.eval_drift(z).unwrap() - want).abs() < 1e-13 * want);
    }

    #[test]
    fn power_bg_and_cubic() {
        let s = spec(DriftFamily::PowerBg { power: 2.0, scale: 0.5 });
        assert_eq!(s.eval_drift(-3.0).unwrap(), 8.0);
        assert_eq!(s.eval_drift(0.0).unwrap(), 0.5);
        let s = spec(DriftFamily::Cubic { sign: -1.0 });
        assert_eq!(s.eval_drift(2.0).unwrap(), -8.0);
        assert_eq!(s.eval_drift(-2.0).unwrap(), 8.0);
    }

    #[test]
    fn custom_interpolates_and_extrapolates_flat() {
        let s = spec(DriftFamily::Custom {
            knots: vec![-1.0, 0.0, 2.0],
            values: vec![3.0, 1.0, 5.0],
        });
        s.validate().unwrap();
        assert_eq!(s.eval_drift(-5.0).unwrap(), 3.0);
        assert_eq!(s.eval_drift(-0.5).unwrap(), 2.0);
        assert_eq!(s.eval_drift(1.0).unwrap(), 3.0);
        assert_eq!(s.eval_drift(9.0).unwrap(), 5.0);
        let bad = spec(DriftFamily::Custom {
            knots: vec![0.0, 0.0],
            values: vec![1.0, 2.0],
        });
        assert!(bad.validate().is_err());
    }

    #[test]
    fn non_finite_argument_is_rejected() {
        let s = spec(DriftFamily::Cubic { sign: 1.0 });
        assert!(matches!(s.eval_drift(f64::NAN), Err(LabError::Domain(_))));
        assert!(matches!(s.eval_diffusion(f64::INFINITY), Err(LabError::Domain(_))));
    }

    #[test]
    fn truncation_freezes_beyond_level() {
        let s = spec(DriftFamily::LogCritical { theta1: 0.0, theta2: 1.0 });
        let t = s.truncate(10.0).unwrap();
        assert!((t.eval_drift(25.0).unwrap() - 10.0 * 10f64.ln()).abs() < 1e-12);
        assert!((t.eval_drift(25.0).unwrap() - 23.025_850_929_940_457).abs() < 1e-12);
        assert_eq!(t.eval_drift(7.0).unwrap(), s.eval_drift(7.0).unwrap());
        assert_eq!(t.eval_drift(10.0).unwrap(), t.eval_drift(10.0 + 1e-12).unwrap());
        assert!(matches!(s.truncate(0.5), Err(LabError::Domain(_))));
    }

    #[test]
    fn envelopes() {
        let s = spec(DriftFamily::LogCritical { theta1: 0.0, theta2: 1.0 });
        let env = lipschitz_envelope(&s.truncate(E.powi(3)).unwrap()).unwrap();
        assert!((env.drift.l - 3.0).abs() < 1e-14);
        assert_eq!(env.drift.certification, Certification::ClosedForm);
        assert_eq!(env.diffusion.c, 1.0);
        assert_eq!(env.diffusion.certification, Certification::Degenerate);
        assert!(env.diffusion.l > 0.0);

        let s = spec(DriftFamily::Cubic { sign: 1.0 });
        let env = lipschitz_envelope(&s.truncate(10.0).unwrap()).unwrap();
        assert!(env.drift.l >= 300.0, "{}", env.drift.l);
        assert_eq!(env.drift.certification, Certification::Sweep);
    }

    #[test]
    fn envelope_sound_on_quasi_random_points() {
        let specs = [
            spec(DriftFamily::LogCritical { theta1: 1.0, theta2: 2.0 }),
            spec(DriftFamily::SuperLog { epsilon: 0.5, scale: 1.0, offset: -1.0 }),
            spec(DriftFamily::PowerBg { power: 1.5, scale: 1.0 }),
            CoefficientSpec::new(
                DriftFamily::Cubic { sign: -1.0 },
                DiffusionFamily::SubQuarterLog { scale: 0.7 },
            ),
            CoefficientSpec::new(
                DriftFamily::LogCritical { theta1: 0.0, theta2: 1.0 },
                DiffusionFamily::Bounded { shape: BoundedShape::OnePlusHalfSin, amplitude: 2.0 },
            ),
        ];
        let phi = 0.618_033_988_749_894_9;
        for s in specs {
            let t = s.truncate(20.0).unwrap();
            let env = lipschitz_envelope(&t).unwrap();
            for k in 0..100_000u32 {
                let z = ((k as f64 * phi).fract() * 2.0 - 1.0) * 1e6;
                let b = t.drift_at(z).abs();
                let sg = t.diffusion_at(z).abs();
                assert!(b <= env.drift.c + env.drift.l * z.abs() + 1e-9 * b, "{s:?} z={z}");
                assert!(sg <= env.diffusion.c + env.diffusion.l * z.abs() + 1e-12, "{s:?} z={z}");
            }
        }
    }

    #[test]
    fn sub_quarter_log_growth_gate() {
        let s = CoefficientSpec::new(
            DriftFamily::Cubic { sign: 1.0 },
            DiffusionFamily::SubQuarterLog { scale: 1.0 },
        );
        let ratios: Vec<f64> = (2..=8)
            .map(|j| {
                let z = 10f64.powi(j);
                s.eval_diffusion(z).unwrap() / (z * z.ln().powf(0.25))
            })
            .collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
    }

    #[test]
    fn growth_condition() {
        let env = Envelope { c_b: 0.0, l_b: 4.0, c_sigma: 1.0, l_sigma: 1.0 };
        assert!(env.growth_condition_holds());
        let env = Envelope { l_b: 3.9, ..env };
        assert!(!env.growth_condition_holds());
        let mut s = spec(DriftFamily::Cubic { sign: 1.0 });
        s.envelope = Some(env);
        s.enforce_growth_condition = true;
        assert!(matches!(s.validate(), Err(LabError::Domain(_))));
    }

    #[test]
    fn config_tags_round_trip() {
        let text = r#"
            [drift]
            family = "log_critical"
            theta1 = 0.0
            theta2 = 1.0

            [diffusion]
            family = "bounded"
            shape = "one_plus_half_sin"
            amplitude = 0.5
        "#;
        let s: CoefficientSpec = toml::from_str(text).unwrap();
        assert_eq!(s.drift, DriftFamily::LogCritical { theta1: 0.0, theta2: 1.0 });
        let back: CoefficientSpec = toml::from_str(&toml::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
