//! Acceptance criteria. Each test prints one `ACCEPTANCE <name>: PASS|FAIL`
//! line to stdout (uncaptured) and fails when its criterion is not met.

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spde_lab_core::bounds::{run_battery, BoundReport, LemmaId, Verdict};
use spde_lab_core::coefficients::{
    BoundedShape, CoefficientSpec, DiffusionFamily, DriftFamily, TruncatedCoefficient,
};
use spde_lab_core::diagnostics::{
    gaussian_moment_fit, holder_fit, log_sobolev_check, lyapunov_value, weak_form_residual, Direction, HolderSpec,
};
use spde_lab_core::experiment::{resolve_jobs, simulate_ensemble, sweep, ExperimentConfig, InitialData, SweepResult};
use spde_lab_core::heat_kernel::gaussian_density;
use spde_lab_core::noise::{GridSpec, NoisePath};
use spde_lab_core::solver::{simulate_localized, Field, SimOptions, Stepper};
use spde_lab_core::stats::linear_fit;
use spde_lab_core::{GridFunction, HeatKernel};

fn report(name: &str, pass: bool, elapsed: Duration, detail: &str) {
    let line = format!(
        "ACCEPTANCE {name}: {} ({:.1} s) {detail}\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let mut out = std::io::stdout();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "{name} failed: {detail}");
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", ")
}

fn spec(drift: DriftFamily, diffusion: DiffusionFamily) -> CoefficientSpec {
    CoefficientSpec::new(drift, diffusion)
}

fn log_critical(theta1: f64, theta2: f64) -> DriftFamily {
    DriftFamily::LogCritical { theta1, theta2 }
}

fn constant(sigma0: f64) -> DiffusionFamily {
    DiffusionFamily::Constant { sigma0 }
}

#[test]
fn kernel_cross_agreement() {
    let start = Instant::now();
    let k = HeatKernel::default();
    let pts: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let mut worst_gap = 0.0f64;
    let mut domination_violations = 0;
    for t in [1e-3, 1e-2, 1e-1, 1.0] {
        for &x in &pts {
            for &y in &pts {
                let s = k.spectral(t, x, y).unwrap();
                let i = k.image_charge(t, x, y).unwrap();
                worst_gap = worst_gap.max((s - i).abs());
                let g = k.eval(t, x, y).unwrap();
                if !(g >= 0.0 && g <= gaussian_density(t, x - y) + k.tail_tol) {
                    domination_violations += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_gap <= 1e-10 && domination_violations == 0 && elapsed.as_secs_f64() < 5.0;
    report(
        "kernel_cross_agreement",
        pass,
        elapsed,
        &format!("max |spectral - image| = {worst_gap:.2e}, domination violations = {domination_violations}"),
    );
}

fn family_key(r: &BoundReport) -> (LemmaId, u8) {
    (r.lemma_id, r.params.get("theta").map(|t| *t as u8).unwrap_or(0))
}

#[test]
fn appendix_battery() {
    let start = Instant::now();
    let reports = run_battery(&HeatKernel::default()).unwrap();
    let elapsed = start.elapsed();
    let mut problems = vec![];
    let checked = [LemmaId::A1, LemmaId::A2, LemmaId::A3, LemmaId::A5, LemmaId::A6];
    for r in reports.iter().filter(|r| checked.contains(&r.lemma_id)) {
        if r.verdict() != Verdict::Pass {
            problems.push(format!("{} {:?}: {} (margin {:.3e})", r.lemma_id, r.params, r.verdict(), r.margin));
        }
    }
    let mut families: Vec<(LemmaId, u8)> = reports
        .iter()
        .filter(|r| matches!(r.lemma_id, LemmaId::A3 | LemmaId::A5 | LemmaId::A6))
        .map(family_key)
        .collect();
    families.dedup();
    let mut spreads = vec![];
    for fam in families {
        let ratios: Vec<f64> = reports.iter().filter(|r| family_key(r) == fam).map(|r| r.ratio()).collect();
        let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
        let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
        spreads.push(format!("{}/{}: {:.2}", fam.0, fam.1, max / min));
        if !(max / min < 3.0) {
            problems.push(format!("{} theta={} ratio spread {:.2} >= 3", fam.0, fam.1, max / min));
        }
    }
    let pass = problems.is_empty() && elapsed.as_secs_f64() < 60.0;
    report(
        "appendix_battery",
        pass,
        elapsed,
        &format!("ratio spreads [{}]; problems: {problems:?}", spreads.join(", ")),
    );
}

#[test]
fn log_sobolev_battery() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_501);
    let mut violations = 0;
    let mut inconclusive = 0;
    let mut min_margin = f64::INFINITY;
    for _ in 0..100 {
        let modes = rng.random_range(1..=20);
        let scale = 10f64.powf(rng.random_range(-1.0..2.0));
        let amps: Vec<(usize, f64)> = (0..modes)
            .map(|_| (rng.random_range(1..=20), scale * rng.random_range(-1.0..1.0)))
            .collect();
        let mut h = GridFunction::from_fn(512, |x| amps.iter().map(|(m, a)| a * (*m as f64 * PI * x).sin()).sum());
        let last = h.values.len() - 1;
        h.values[0] = 0.0;
        h.values[last] = 0.0;
        for eps in [0.9, 0.5, 0.1, 0.01] {
            let r = log_sobolev_check(&h, eps).unwrap();
            min_margin = min_margin.min(r.margin);
            if r.margin < -r.quadrature_error {
                violations += 1;
            }
            if r.verdict() == Verdict::Inconclusive {
                inconclusive += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = violations == 0 && elapsed.as_secs_f64() < 10.0;
    report(
        "log_sobolev_battery",
        pass,
        elapsed,
        &format!("400 checks, violations = {violations}, inconclusive = {inconclusive}, min margin = {min_margin:.3e}"),
    );
}

#[test]
fn lyapunov_identity() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for r in [1.0, 10.0, 1e3, 1e6] {
        let h = 1e-4 * r;
        let d = (lyapunov_value(r + h).unwrap() - lyapunov_value(r - h).unwrap()) / (2.0 * h);
        let lp = r.max(std::f64::consts::E).ln();
        let phi = lyapunov_value(r).unwrap();
        worst = worst.max((d * (1.0 + r * lp) / phi - 1.0).abs());
    }
    let at_e = (lyapunov_value(std::f64::consts::E).unwrap() - (1.0 + std::f64::consts::E)).abs();
    let pass = worst < 1e-6 && at_e < 1e-8;
    report(
        "lyapunov_identity",
        pass,
        start.elapsed(),
        &format!("max relative identity error = {worst:.2e}, |Phi(e) - (1+e)| = {at_e:.2e}"),
    );
}

/// Sup-norm error against `e^{-π²t/2} sin(πx)` after free evolution.
fn eigen_decay_error(nx: usize, dt: f64, t_end: f64) -> f64 {
    let grid = GridSpec::semi_implicit(nx, dt, t_end).unwrap();
    let coeffs = TruncatedCoefficient::untruncated(spec(log_critical(0.0, 0.0), constant(0.0)));
    let mut stepper = Stepper::new(&grid);
    let mut u = Field::from_fn(nx, |x| (PI * x).sin()).values;
    let w = vec![0.0; nx];
    let steps = grid.steps();
    for _ in 0..steps {
        stepper.advance(&mut u, &coeffs, &w, 0);
    }
    let t = steps as f64 * dt;
    let decay = (-PI * PI * t / 2.0).exp();
    u.iter()
        .enumerate()
        .map(|(i, v)| (v - decay * (PI * grid.x(i + 1)).sin()).abs())
        .fold(0.0, f64::max)
}

fn observed_order(hs: &[f64], errs: &[f64]) -> f64 {
    let lx: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    linear_fit(&lx, &ly).unwrap().slope
}

#[test]
fn deterministic_solver_orders() {
    let start = Instant::now();
    let t_end = 0.1;
    let nxs = [7usize, 15, 31, 63];
    let dxs: Vec<f64> = nxs.iter().map(|n| 1.0 / (n + 1) as f64).collect();
    let space_err: Vec<f64> = nxs.iter().map(|&n| eigen_decay_error(n, 1e-7, t_end)).collect();
    let dts = [1e-3, 5e-4, 2.5e-4, 1.25e-4];
    let time_err: Vec<f64> = dts.iter().map(|&dt| eigen_decay_error(255, dt, t_end)).collect();
    let p_space = observed_order(&dxs, &space_err);
    let p_time = observed_order(&dts, &time_err);
    let elapsed = start.elapsed();
    let pass = (1.7..=2.3).contains(&p_space) && (0.7..=1.3).contains(&p_time) && elapsed.as_secs_f64() < 30.0;
    report(
        "deterministic_solver_orders",
        pass,
        elapsed,
        &format!(
            "spatial order {p_space:.3} (errors {}), temporal order {p_time:.3} (errors {})",
            sci(&space_err),
            sci(&time_err)
        ),
    );
}

#[test]
fn localization_and_comparison() {
    let start = Instant::now();
    let nx = 127;
    let dx = 1.0 / 128.0;
    let dt = dx * dx / 2.0;

    // ladder invariance on paths that climb through every level
    let coeffs = spec(DriftFamily::PowerBg { power: 2.0, scale: 1.0 }, constant(1.0));
    let grid = GridSpec::new(nx, dt, 0.5).unwrap();
    let u0 = Field::from_fn(nx, |x| 5.0 * (PI * x).sin());
    let mut ladder_mismatch = 0;
    let mut crossed = 0;
    for seed in 0..20u64 {
        let noise = NoisePath::new(seed, grid).unwrap();
        let fine = SimOptions {
            ladder: vec![10.0, 20.0, 40.0],
            ..Default::default()
        };
        let coarse = SimOptions {
            ladder: vec![40.0],
            ..Default::default()
        };
        let a = simulate_localized(&u0, &coeffs, &noise, &fine).unwrap();
        let b = simulate_localized(&u0, &coeffs, &noise, &coarse).unwrap();
        let tau40 = b.record.threshold_ladder[0].tau_hat;
        crossed += usize::from(tau40.is_finite());
        let upto = |s: &[spde_lab_core::solver::SeriesRow]| s.iter().filter(|r| r.t <= tau40).cloned().collect::<Vec<_>>();
        let same_series = upto(&a.series) == upto(&b.series);
        let same_tau = a.record.threshold_ladder[2].tau_hat.to_bits() == tau40.to_bits();
        if !(same_series && same_tau) {
            ladder_mismatch += 1;
        }
    }

    // comparison sandwich b- <= b <= b+ under shared noise and a fixed truncation
    let level = 10.0;
    let trunc = |theta2: f64| spec(log_critical(0.0, theta2), constant(1.0)).truncate(level).unwrap();
    let (minus, mid, plus) = (trunc(-1.0), trunc(0.5), trunc(1.0));
    let grid = GridSpec::new(nx, dt, 0.5).unwrap();
    let mut worst = 0.0f64;
    for seed in 100..120u64 {
        let noise = NoisePath::new(seed, grid).unwrap();
        let mut st = Stepper::new(&grid);
        let mut lo = u0.values.clone();
        let mut mi = u0.values.clone();
        let mut hi = u0.values.clone();
        for m in 0..grid.steps() {
            let w = noise.sample_increments(m).unwrap();
            st.advance(&mut lo, &minus, &w, 0);
            st.advance(&mut mi, &mid, &w, 0);
            st.advance(&mut hi, &plus, &w, 0);
            for i in 0..nx {
                worst = worst.max(lo[i] - mi[i]).max(mi[i] - hi[i]);
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = ladder_mismatch == 0 && worst <= 1e-9 && elapsed.as_secs_f64() < 120.0;
    report(
        "localization_and_comparison",
        pass,
        elapsed,
        &format!(
            "ladder mismatches {ladder_mismatch}/20 ({crossed} paths crossed 40), worst ordering violation {worst:.2e}"
        ),
    );
}

fn dichotomy_base(dir: &std::path::Path, drift: DriftFamily, t_end: f64) -> ExperimentConfig {
    let nx = 127;
    let dx = 1.0 / 128.0;
    let mut c = ExperimentConfig::new(
        GridSpec::new(nx, dx * dx, t_end).unwrap(),
        spec(drift, constant(1.0)),
        InitialData::SineMode { amplitude: 5.0, mode: 1 },
        200,
        1_000_000,
    );
    c.out_stride = 2048;
    c.outputs = dir.to_path_buf();
    c
}

fn fractions(s: &SweepResult) -> Vec<f64> {
    s.points.iter().map(|p| p.blowup_fraction.unwrap()).collect()
}

/// Each step up is either an increase or within the overlap of the two
/// Wilson intervals.
fn nondecreasing_within_ci(s: &SweepResult) -> bool {
    s.points.windows(2).all(|w| {
        w[1].blowup_fraction >= w[0].blowup_fraction || w[1].ci_high.unwrap() >= w[0].ci_low.unwrap()
    })
}

#[test]
fn dichotomy() {
    let start = Instant::now();
    let jobs = resolve_jobs(None);
    let dir = tempfile::tempdir().unwrap();

    let power = dichotomy_base(&dir.path().join("power"), DriftFamily::PowerBg { power: 2.0, scale: 1.0 }, 5.0);
    let power_t = sweep(&power, "t_end", &[1.0, 2.0, 4.0, 8.0], jobs).unwrap();
    let fp = fractions(&power_t);
    let a_pass = fp.iter().all(|f| *f >= 0.5) && fp.windows(2).all(|w| w[1] >= w[0]);

    let critical = dichotomy_base(&dir.path().join("critical"), log_critical(0.0, 1.0), 5.0);
    let critical_run = sweep(&critical, "t_end", &[5.0], jobs).unwrap();
    let fc = critical_run.points[0].blowup_fraction.unwrap();
    let b_pass = fc == 0.0;

    let superlog = dichotomy_base(
        &dir.path().join("superlog"),
        DriftFamily::SuperLog {
            epsilon: 0.5,
            scale: 1.0,
            offset: 0.0,
        },
        5.0,
    );
    let superlog_eps = sweep(&superlog, "epsilon", &[0.25, 0.5, 1.0], jobs).unwrap();
    let c_pass = nondecreasing_within_ci(&superlog_eps);

    let elapsed = start.elapsed();
    let pass = a_pass && b_pass && c_pass && elapsed.as_secs_f64() < 1800.0;
    let cis: Vec<String> = superlog_eps
        .points
        .iter()
        .map(|p| format!("{:.3} [{:.3}, {:.3}]", p.blowup_fraction.unwrap(), p.ci_low.unwrap(), p.ci_high.unwrap()))
        .collect();
    report(
        "dichotomy",
        pass,
        elapsed,
        &format!(
            "(a) power_bg fractions over T=1,2,4,8: {fp:?} [{}]; (b) log_critical fraction at T=5: {fc} [{}]; (c) super_log over eps=0.25,0.5,1: {} [{}]",
            if a_pass { "ok" } else { "fail" },
            if b_pass { "ok" } else { "fail" },
            cis.join(", "),
            if c_pass { "ok" } else { "fail" },
        ),
    );
}

#[test]
fn regularity_exponents() {
    let start = Instant::now();
    let nx = 127;
    let dx = 1.0 / 128.0;
    let dt = dx * dx / 2.0;
    let t_star = 0.5;
    let n_lags = 8;
    let time_lags: Vec<f64> = (0..n_lags)
        .map(|j| {
            let raw = 4e-4 * (0.02f64 / 4e-4).powf(j as f64 / (n_lags - 1) as f64);
            (raw / dt).round() * dt
        })
        .collect();
    let mut c = ExperimentConfig::new(
        GridSpec::new(nx, dt, t_star).unwrap(),
        spec(log_critical(0.0, 0.0), constant(1.0)),
        InitialData::SineMode { amplitude: 0.0, mode: 1 },
        200,
        2_000_000,
    );
    c.out_stride = 4096;
    c.snapshots.times = time_lags.iter().map(|l| t_star - l).chain([t_star]).collect();
    let ens = simulate_ensemble(&c, resolve_jobs(None)).unwrap();
    let space_lags: Vec<f64> = (2..=12).map(|j| j as f64 * dx).collect();
    let fit = |direction, lags: Vec<f64>| {
        holder_fit(
            &ens,
            &HolderSpec {
                direction,
                k: 2.0,
                t_star,
                lags,
                alpha: 1.0,
            },
        )
        .unwrap()
    };
    let space = fit(Direction::Space, space_lags);
    let time = fit(Direction::Time, time_lags);
    let elapsed = start.elapsed();
    let pass = (0.40..=0.55).contains(&space.exponent_hat)
        && (0.20..=0.30).contains(&time.exponent_hat)
        && space.r2 >= 0.98
        && time.r2 >= 0.98
        && elapsed.as_secs_f64() < 600.0;
    report(
        "regularity_exponents",
        pass,
        elapsed,
        &format!(
            "space {:.4} ± {:.4} (r² {:.4}, lags {:.4}..{:.4}), time {:.4} ± {:.4} (r² {:.4}, lags {:.2e}..{:.2e})",
            space.exponent_hat,
            space.stderr,
            space.r2,
            space.lag_range.0,
            space.lag_range.1,
            time.exponent_hat,
            time.stderr,
            time.r2,
            time.lag_range.0,
            time.lag_range.1
        ),
    );
}

#[test]
fn gaussian_moment_shape() {
    let start = Instant::now();
    let nx = 63;
    let dx = 1.0 / 64.0;
    let dt = dx * dx / 2.0;
    let mut c = ExperimentConfig::new(
        GridSpec::new(nx, dt, 1.0).unwrap(),
        spec(
            log_critical(0.0, 1.0),
            DiffusionFamily::Bounded {
                shape: BoundedShape::OnePlusHalfSin,
                amplitude: 1.0,
            },
        ),
        InitialData::SineMode { amplitude: 1.0, mode: 1 },
        2000,
        3_000_000,
    );
    c.out_stride = 8192;
    c.snapshots.stride = 1024;
    let ens = simulate_ensemble(&c, resolve_jobs(None)).unwrap();
    let fit = gaussian_moment_fit(&ens, &[2.0, 4.0, 6.0, 8.0]).unwrap();
    let elapsed = start.elapsed();
    let pass = fit.c_hat < 3.0 && elapsed.as_secs_f64() < 900.0;
    report(
        "gaussian_moment_shape",
        pass,
        elapsed,
        &format!("C = {:.4}, ratios over k=2,4,6,8: {:.4?}", fit.c_hat, fit.ratios),
    );
}

#[test]
fn weak_form_residual_refinement() {
    let start = Instant::now();
    let families = [
        ("log_critical/constant", spec(log_critical(0.0, 1.0), constant(1.0)), true),
        (
            "super_log/bounded",
            spec(
                DriftFamily::SuperLog {
                    epsilon: 0.5,
                    scale: 1.0,
                    offset: 0.0,
                },
                DiffusionFamily::Bounded {
                    shape: BoundedShape::Tanh,
                    amplitude: 1.0,
                },
            ),
            false,
        ),
        (
            "cubic/sub_quarter_log",
            spec(DriftFamily::Cubic { sign: -1.0 }, DiffusionFamily::SubQuarterLog { scale: 0.5 }),
            false,
        ),
    ];
    let t_end = 0.25;
    let coarse_grid = GridSpec::new(31, 1.0 / 1024.0, t_end).unwrap();
    let fine_grid = GridSpec::new(63, 1.0 / 4096.0, t_end).unwrap();
    let seeds = 0..8u64;
    let mut details = vec![];
    let mut pass = true;
    for (name, coeffs, constant_sigma) in &families {
        let mut coarse_total = 0.0;
        let mut fine_total = 0.0;
        for seed in seeds.clone() {
            let fine_noise = NoisePath::new(4_000_000 + seed, fine_grid).unwrap();
            let coarse_noise = fine_noise.coarsen(coarse_grid).unwrap();
            let residual = |noise: &NoisePath| {
                let g = noise.grid;
                let opts = SimOptions {
                    out_stride: g.steps(),
                    snapshot_steps: (0..=g.steps()).collect(),
                    ..Default::default()
                };
                let u0 = Field::from_fn(g.nx, |x| 2.0 * (PI * x).sin());
                let path = simulate_localized(&u0, coeffs, noise, &opts).unwrap();
                weak_form_residual(&path, coeffs, *constant_sigma, noise, 1).unwrap().value
            };
            coarse_total += residual(&coarse_noise);
            fine_total += residual(&fine_noise);
        }
        let ratio = coarse_total / fine_total;
        pass &= ratio > 1.5;
        details.push(format!("{name}: ratio {ratio:.2} (mean residual {:.2e} -> {:.2e})", coarse_total / 8.0, fine_total / 8.0));
    }
    report("weak_form_residual_refinement", pass, start.elapsed(), &details.join("; "));
}
