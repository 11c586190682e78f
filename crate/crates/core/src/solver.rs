//! Time stepping for `u̇ = ½u″ + b(u) + σ(u)ξ` with zero Dirichlet data:
//! the semi-implicit finite-difference step, the localized run over a ladder
//! of truncation levels with blowup detection, and a Picard solver for the
//! discrete mild equation.

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSpec, Coefficients, TruncatedCoefficient};
use crate::diagnostics::{bg_mode_functional, norms, sup_norm};
use crate::error::{LabError, Result};
use crate::noise::{GridSpec, NoisePath, GENERATOR_TAG};

/// Serializes non-finite values as `null`, read back as `+∞`.
pub(crate) mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Interior values at a time; the boundary values are implicitly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub values: Vec<f64>,
    pub time: f64,
}

impl Field {
    pub fn new(values: Vec<f64>, time: f64) -> Self {
        Field { values, time }
    }

    pub fn zeros(nx: usize) -> Self {
        Field::new(vec![0.0; nx], 0.0)
    }

    /// Samples `f` at the interior nodes `i/(nx+1)`.
    pub fn from_fn(nx: usize, f: impl Fn(f64) -> f64) -> Self {
        let dx = 1.0 / (nx + 1) as f64;
        Field::new((1..=nx).map(|i| f(i as f64 * dx)).collect(), 0.0)
    }

    pub fn nx(&self) -> usize {
        self.values.len()
    }

    pub fn dx(&self) -> f64 {
        1.0 / (self.values.len() + 1) as f64
    }

    /// Values on the closed grid, with exact zeros at both ends.
    pub fn closed(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.values.len() + 2);
        v.push(0.0);
        v.extend_from_slice(&self.values);
        v.push(0.0);
        v
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.values)
    }
}

/// Thomas factors of `I - (h/2) Δ_h` with Dirichlet closure.
#[derive(Debug, Clone)]
struct Implicit {
    off: f64,
    cp: Vec<f64>,
    inv_den: Vec<f64>,
}

impl Implicit {
    fn new(nx: usize, h: f64, dx: f64) -> Self {
        let r = h / (2.0 * dx * dx);
        let diag = 1.0 + 2.0 * r;
        let off = -r;
        let mut cp = vec![0.0; nx];
        let mut inv_den = vec![0.0; nx];
        inv_den[0] = 1.0 / diag;
        cp[0] = off / diag;
        for i in 1..nx {
            let den = diag - off * cp[i - 1];
            inv_den[i] = 1.0 / den;
            cp[i] = off / den;
        }
        Implicit { off, cp, inv_den }
    }

    fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        rhs[0] *= self.inv_den[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.off * rhs[i - 1]) * self.inv_den[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.cp[i] * rhs[i + 1];
        }
    }
}

/// Maximum number of dt halvings near blowup.
pub const MAX_HALVINGS: u32 = 10;
/// Sup-norm above which dt is halved once per decade.
pub const DT_CONTROL_ONSET: f64 = 1e3;
pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e6;

/// Semi-implicit stepper with factorizations cached per dt level.
#[derive(Debug, Clone)]
pub struct Stepper {
    nx: usize,
    dx: f64,
    dt: f64,
    levels: Vec<Option<Implicit>>,
}

impl Stepper {
    pub fn new(grid: &GridSpec) -> Self {
        Stepper {
            nx: grid.nx,
            dx: grid.dx(),
            dt: grid.dt,
            levels: vec![None; MAX_HALVINGS as usize + 1],
        }
    }

    /// One step of size `dt / 2^depth` driven by the cell increments `w`:
    /// `(I - h/2 Δ_h) u' = u + h b(u) + σ(u) w / dx`.
    pub fn advance<C: Coefficients + ?Sized>(&mut self, u: &mut [f64], coeffs: &C, w: &[f64], depth: u32) {
        let h = self.dt / f64::from(1u32 << depth);
        let inv_dx = 1.0 / self.dx;
        for (ui, wi) in u.iter_mut().zip(w) {
            let z = *ui;
            *ui = z + h * coeffs.drift_at(z) + coeffs.diffusion_at(z) * wi * inv_dx;
        }
        let (nx, dx) = (self.nx, self.dx);
        self.levels[depth as usize]
            .get_or_insert_with(|| Implicit::new(nx, h, dx))
            .solve(u);
    }
}

/// Advances `field` from `m·dt` to `(m+1)·dt`. Non-finite values propagate.
pub fn step<C: Coefficients + ?Sized>(field: &Field, coeffs: &C, noise: &NoisePath, m: usize) -> Result<Field> {
    let grid = &noise.grid;
    if field.nx() != grid.nx {
        return Err(LabError::Contract(format!(
            "field has {} points, grid has {}",
            field.nx(),
            grid.nx
        )));
    }
    let expected = m as f64 * grid.dt;
    if (field.time - expected).abs() > 1e-9 * expected.max(1.0) {
        return Err(LabError::Contract(format!(
            "field time {} does not match step {m} (t = {expected})",
            field.time
        )));
    }
    let w = noise.sample_increments(m)?;
    let mut values = field.values.clone();
    Stepper::new(grid).advance(&mut values, coeffs, &w, 0);
    Ok(Field::new(values, (m + 1) as f64 * grid.dt))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    pub sup: f64,
    pub l2: f64,
    pub h1: f64,
    pub bg_mode: f64,
}

impl SeriesRow {
    pub fn of(t: f64, values: &[f64]) -> Self {
        let n = norms(values);
        SeriesRow {
            t,
            sup: n.sup,
            l2: n.l2,
            h1: n.h1,
            bg_mode: bg_mode_functional(values),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderCrossing {
    pub level: f64,
    /// `+∞` when the level was never exceeded.
    #[serde(with = "finite_or_null")]
    pub tau_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupRecord {
    pub blew_up: bool,
    #[serde(with = "finite_or_null")]
    pub tau_hat: f64,
    pub threshold_ladder: Vec<LadderCrossing>,
    #[serde(with = "finite_or_null")]
    pub terminal_sup: f64,
    pub blowup_threshold: f64,
}

impl BlowupRecord {
    /// Crossing times strictly increasing over the crossed levels, and
    /// `blew_up` implying `terminal_sup >= blowup_threshold`.
    pub fn is_consistent(&self) -> bool {
        let crossed: Vec<f64> = self
            .threshold_ladder
            .iter()
            .map(|c| c.tau_hat)
            .filter(|t| t.is_finite())
            .collect();
        let ordered = crossed.windows(2).all(|w| w[0] <= w[1]);
        let tail_uncrossed = self
            .threshold_ladder
            .iter()
            .skip_while(|c| c.tau_hat.is_finite())
            .all(|c| !c.tau_hat.is_finite());
        ordered && tail_uncrossed && (!self.blew_up || self.terminal_sup >= self.blowup_threshold)
    }
}

/// Crossing time of `target` between `(t0, s0)` and `(t1, s1)`, linear in sup.
fn interpolate_crossing(t0: f64, s0: f64, t1: f64, s1: f64, target: f64) -> f64 {
    if !s1.is_finite() || s1 <= s0 {
        return t1;
    }
    (t0 + (target - s0) / (s1 - s0) * (t1 - t0)).clamp(t0, t1)
}

/// Blowup record reconstructed from an output series.
pub fn detect_blowup(series: &[SeriesRow], threshold: f64, ladder: &[f64]) -> BlowupRecord {
    let crossing = |level: f64| {
        let mut prev: Option<&SeriesRow> = None;
        for row in series {
            if !row.sup.is_finite() || row.sup >= level {
                return match prev {
                    Some(p) => interpolate_crossing(p.t, p.sup, row.t, row.sup, level),
                    None => row.t,
                };
            }
            prev = Some(row);
        }
        f64::INFINITY
    };
    let tau_hat = crossing(threshold);
    BlowupRecord {
        blew_up: tau_hat.is_finite(),
        tau_hat,
        threshold_ladder: ladder
            .iter()
            .map(|&level| LadderCrossing {
                level,
                tau_hat: crossing(level),
            })
            .collect(),
        terminal_sup: series.last().map(|r| r.sup).unwrap_or(0.0),
        blowup_threshold: threshold,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    /// Strictly increasing truncation levels; empty means untruncated.
    pub ladder: Vec<f64>,
    pub blowup_threshold: f64,
    /// Series rows are written every `out_stride` steps.
    pub out_stride: usize,
    /// Halve dt per decade of sup-norm above `DT_CONTROL_ONSET`.
    pub dt_control: bool,
    /// Step indices `m` at which the field at `m·dt` is stored.
    pub snapshot_steps: Vec<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            ladder: Vec::new(),
            blowup_threshold: DEFAULT_BLOWUP_THRESHOLD,
            out_stride: 1,
            dt_control: true,
            snapshot_steps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub seed: u64,
    pub config_hash: String,
    pub generator_tag: String,
    pub record: BlowupRecord,
    pub series: Vec<SeriesRow>,
    pub final_field: Option<Field>,
    #[serde(default)]
    pub snapshots: Vec<Field>,
    /// Deepest dt halving used.
    pub max_halvings: u32,
}

/// Runs the localized dynamics over `[0, t_end]` of the noise grid.
///
/// The active truncation level is the smallest ladder level not yet
/// exceeded; a level is promoted as soon as it is crossed, so the state is
/// never truncated below its own sup-norm and the path agrees bitwise with a
/// run on any coarser ladder up to the first crossing of that ladder's top.
/// Above the top level the dynamics stay truncated at it.
pub fn simulate_localized(u0: &Field, coeffs: &CoefficientSpec, noise: &NoisePath, opts: &SimOptions) -> Result<PathResult> {
    let grid = noise.grid;
    if u0.nx() != grid.nx {
        return Err(LabError::Contract(format!(
            "initial field has {} points, grid has {}",
            u0.nx(),
            grid.nx
        )));
    }
    if u0.values.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Domain("initial field is not finite".into()));
    }
    if opts.out_stride == 0 {
        return Err(LabError::Config("out_stride must be >= 1".into()));
    }
    let sup0 = u0.sup_norm();
    if opts.ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::Config(format!("ladder {:?} is not strictly increasing", opts.ladder)));
    }
    if let Some(&first) = opts.ladder.first() {
        if !(first > sup0) {
            return Err(LabError::Config(format!("smallest ladder level {first} must exceed sup|u0| = {sup0}")));
        }
    }
    if !(opts.blowup_threshold > sup0) {
        return Err(LabError::Config(format!(
            "blowup threshold {} must exceed sup|u0| = {sup0}",
            opts.blowup_threshold
        )));
    }
    let truncations = opts
        .ladder
        .iter()
        .map(|&n| coeffs.truncate(n).map_err(|e| LabError::Config(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let untruncated = TruncatedCoefficient::untruncated(coeffs.clone());

    let steps = grid.steps();
    let dt = grid.dt;
    let mut stepper = Stepper::new(&grid);
    let mut u = u0.values.clone();
    let mut series = vec![SeriesRow::of(0.0, &u)];
    let mut snapshot_steps = opts.snapshot_steps.clone();
    snapshot_steps.sort_unstable();
    snapshot_steps.dedup();
    let mut next_snap = snapshot_steps.iter().peekable();
    let mut snapshots = Vec::new();
    if next_snap.peek() == Some(&&0) {
        snapshots.push(Field::new(u.clone(), 0.0));
        next_snap.next();
    }

    let mut level = 0usize;
    let mut crossings = vec![f64::INFINITY; opts.ladder.len()];
    let mut sup_prev = sup0;
    let mut max_halvings = 0u32;
    let mut blowup: Option<(f64, f64)> = None;

    'steps: for m in 0..steps {
        let w = noise.sample_increments(m)?;
        let depth = if opts.dt_control && sup_prev > DT_CONTROL_ONSET {
            ((sup_prev / DT_CONTROL_ONSET).log10().ceil() as u32).clamp(1, MAX_HALVINGS)
        } else {
            0
        };
        max_halvings = max_halvings.max(depth);
        let subs = if depth == 0 {
            vec![w]
        } else {
            noise.bridge_increments(m, &w, depth)
        };
        let h = dt / f64::from(1u32 << depth);
        let n_sub = subs.len();
        for (j, wj) in subs.iter().enumerate() {
            let active: &TruncatedCoefficient = if truncations.is_empty() {
                &untruncated
            } else {
                &truncations[level.min(truncations.len() - 1)]
            };
            stepper.advance(&mut u, active, wj, depth);
            let t0 = m as f64 * dt + j as f64 * h;
            let t1 = if j + 1 == n_sub { (m + 1) as f64 * dt } else { t0 + h };
            let finite = u.iter().all(|v| v.is_finite());
            let s = if finite { sup_norm(&u) } else { f64::INFINITY };
            while level < opts.ladder.len() && s > opts.ladder[level] {
                crossings[level] = interpolate_crossing(t0, sup_prev, t1, s, opts.ladder[level]);
                level += 1;
            }
            if !finite || s >= opts.blowup_threshold {
                let tau = interpolate_crossing(t0, sup_prev, t1, s, opts.blowup_threshold);
                if finite {
                    series.push(SeriesRow::of(t1, &u));
                }
                blowup = Some((tau, s));
                break 'steps;
            }
            sup_prev = s;
        }
        let t = (m + 1) as f64 * dt;
        if (m + 1) % opts.out_stride == 0 || m + 1 == steps {
            series.push(SeriesRow::of(t, &u));
        }
        while let Some(&&k) = next_snap.peek() {
            if k > m + 1 {
                break;
            }
            if k == m + 1 {
                snapshots.push(Field::new(u.clone(), t));
            }
            next_snap.next();
        }
    }

    let threshold_ladder = opts
        .ladder
        .iter()
        .zip(&crossings)
        .map(|(&level, &tau_hat)| LadderCrossing { level, tau_hat })
        .collect();
    let (record, final_field) = match blowup {
        Some((tau_hat, terminal_sup)) => (
            BlowupRecord {
                blew_up: true,
                tau_hat,
                threshold_ladder,
                terminal_sup,
                blowup_threshold: opts.blowup_threshold,
            },
            None,
        ),
        None => (
            BlowupRecord {
                blew_up: false,
                tau_hat: f64::INFINITY,
                threshold_ladder,
                terminal_sup: sup_norm(&u),
                blowup_threshold: opts.blowup_threshold,
            },
            Some(Field::new(u, steps as f64 * dt)),
        ),
    };
    Ok(PathResult {
        seed: noise.seed,
        config_hash: String::new(),
        generator_tag: GENERATOR_TAG.to_string(),
        record,
        series,
        final_field,
        snapshots,
        max_halvings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardResult {
    pub field: Field,
    pub iterations: usize,
    /// Sup-distance between successive iterates over the whole time grid.
    pub gaps: Vec<f64>,
}

/// The heat semigroup over one step restricted to the discrete sine modes,
/// `𝒢_h v = Σ_k e^{-k²π²h/2} ⟨v, s_k⟩ s_k`, as a dense matrix.
fn discrete_semigroup(nx: usize, h: f64) -> Vec<f64> {
    let dx = 1.0 / (nx + 1) as f64;
    let pi = std::f64::consts::PI;
    let s: Vec<f64> = (0..nx * nx)
        .map(|idx| {
            let (k, i) = (idx / nx + 1, idx % nx + 1);
            (pi * (k * i) as f64 * dx).sin()
        })
        .collect();
    let mut m = vec![0.0; nx * nx];
    for k in 0..nx {
        let kk = (k + 1) as f64;
        let w = 2.0 * dx * (-kk * kk * pi * pi * h / 2.0).exp();
        for i in 0..nx {
            let a = w * s[k * nx + i];
            for j in 0..nx {
                m[i * nx + j] += a * s[k * nx + j];
            }
        }
    }
    m
}

fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

/// Solves the discrete mild equation
/// `V_{j+1} = 𝒢_dt (V_j + dt b(V_j) + σ(V_j) W_j / dx)`, `V_0 = u0`,
/// by Picard iteration on the whole trajectory with the noise held fixed.
/// The first iterate is the free evolution `𝒢_dt^j u0`.
pub fn picard_solve(
    u0: &Field,
    trunc: &TruncatedCoefficient,
    noise: &NoisePath,
    t: f64,
    tol: f64,
    max_iters: usize,
) -> Result<PicardResult> {
    let grid = &noise.grid;
    let nx = grid.nx;
    if u0.nx() != nx {
        return Err(LabError::Contract("initial field does not match the grid".into()));
    }
    let n_steps = (t / grid.dt).round() as usize;
    if n_steps == 0 || (n_steps as f64 * grid.dt - t).abs() > 1e-9 * t || n_steps > grid.steps() {
        return Err(LabError::Domain(format!(
            "t = {t} must be a positive multiple of dt = {} within t_end",
            grid.dt
        )));
    }
    let g = discrete_semigroup(nx, grid.dt);
    let w: Vec<Vec<f64>> = (0..n_steps).map(|m| noise.sample_increments(m)).collect::<Result<_>>()?;
    let inv_dx = 1.0 / grid.dx();

    let mut old: Vec<Vec<f64>> = Vec::with_capacity(n_steps + 1);
    old.push(u0.values.clone());
    let mut buf = vec![0.0; nx];
    for j in 0..n_steps {
        mat_vec(&g, &old[j], &mut buf);
        old.push(buf.clone());
    }

    let mut gaps = Vec::new();
    for iteration in 1..=max_iters {
        let mut new: Vec<Vec<f64>> = Vec::with_capacity(n_steps + 1);
        new.push(u0.values.clone());
        let mut rhs = vec![0.0; nx];
        for j in 0..n_steps {
            for i in 0..nx {
                let z = old[j][i];
                rhs[i] = new[j][i] + grid.dt * trunc.drift_at(z) + trunc.diffusion_at(z) * w[j][i] * inv_dx;
            }
            mat_vec(&g, &rhs, &mut buf);
            new.push(buf.clone());
        }
        let gap = new
            .iter()
            .zip(&old)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0f64, |m, d| if d.is_nan() { f64::INFINITY } else { m.max(d) });
        gaps.push(gap);
        if !gap.is_finite() {
            break;
        }
        if gap < tol {
            return Ok(PicardResult {
                field: Field::new(new.pop().unwrap_or_default(), n_steps as f64 * grid.dt),
                iterations: iteration,
                gaps,
            });
        }
        old = new;
    }
    Err(LabError::IterationDiverged {
        iterations: gaps.len(),
        last_gap: gaps.last().copied().unwrap_or(f64::NAN),
        gaps,
    })
}
