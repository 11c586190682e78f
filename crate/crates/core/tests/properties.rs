use std::f64::consts::PI;

use proptest::prelude::*;

use spde_lab_core::coefficients::{
    lipschitz_envelope, BoundedShape, CoefficientSpec, DiffusionFamily, DriftFamily,
};
use spde_lab_core::diagnostics::{h1_norm, log_sobolev_check, lyapunov_value, moment_norm_estimate};
use spde_lab_core::experiment::{ExperimentConfig, InitialData, SnapshotSpec};
use spde_lab_core::heat_kernel::gaussian_density;
use spde_lab_core::noise::{GridSpec, NoisePath};
use spde_lab_core::solver::{simulate_localized, Field, SimOptions};
use spde_lab_core::stats::wilson_interval;
use spde_lab_core::{GridFunction, HeatKernel};

fn drift_strategy() -> impl Strategy<Value = DriftFamily> {
    prop_oneof![
        (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(theta1, theta2)| DriftFamily::LogCritical { theta1, theta2 }),
        (0.05..2.0f64, 0.1..3.0f64, -1.0..1.0f64)
            .prop_map(|(epsilon, scale, offset)| DriftFamily::SuperLog { epsilon, scale, offset }),
        (1.1..3.0f64, 0.1..2.0f64).prop_map(|(power, scale)| DriftFamily::PowerBg { power, scale }),
        prop_oneof![Just(1.0), Just(-1.0)].prop_map(|sign| DriftFamily::Cubic { sign }),
    ]
}

fn diffusion_strategy() -> impl Strategy<Value = DiffusionFamily> {
    prop_oneof![
        (-2.0..2.0f64).prop_map(|sigma0| DiffusionFamily::Constant { sigma0 }),
        (
            prop_oneof![Just(BoundedShape::Tanh), Just(BoundedShape::Sin), Just(BoundedShape::OnePlusHalfSin)],
            0.1..2.0f64
        )
            .prop_map(|(shape, amplitude)| DiffusionFamily::Bounded { shape, amplitude }),
        (0.1..2.0f64).prop_map(|scale| DiffusionFamily::SubQuarterLog { scale }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_symmetric_and_gaussian_dominated(t in 1e-4..2.0f64, x in 0.0..=1.0f64, y in 0.0..=1.0f64) {
        let k = HeatKernel::default();
        let g = k.eval(t, x, y).unwrap();
        prop_assert_eq!(g, k.eval(t, y, x).unwrap());
        prop_assert!(g >= 0.0);
        prop_assert!(g <= gaussian_density(t, x - y) + k.tail_tol);
    }

    #[test]
    fn kernel_mass_is_nonincreasing(t in 1e-3..1.0f64, dt in 1e-3..1.0f64, x in 0.01..0.99f64) {
        let k = HeatKernel::default();
        let a = k.kernel_mass(t, x).unwrap();
        let b = k.kernel_mass(t + dt, x).unwrap();
        prop_assert!(b.value <= a.value + a.error + b.error + 1e-12);
        prop_assert!(a.value < 1.0);
    }

    #[test]
    fn log_critical_part_is_even(theta1 in -3.0..3.0f64, theta2 in -3.0..3.0f64, z in -1e6..1e6f64) {
        let s = CoefficientSpec::new(DriftFamily::LogCritical { theta1, theta2 }, DiffusionFamily::Constant { sigma0: 1.0 });
        prop_assert_eq!(s.eval_drift(z).unwrap(), s.eval_drift(-z).unwrap());
    }

    #[test]
    fn truncations_agree_inside_the_smaller_level(
        drift in drift_strategy(),
        diffusion in diffusion_strategy(),
        n in 1.0..50.0f64,
        extra in 0.0..50.0f64,
        frac in -1.0..=1.0f64,
    ) {
        let s = CoefficientSpec::new(drift, diffusion);
        let small = s.truncate(n).unwrap();
        let large = s.truncate(n + extra).unwrap();
        let z = frac * n;
        prop_assert_eq!(small.drift_at(z), large.drift_at(z));
        prop_assert_eq!(small.diffusion_at(z), s.diffusion_at(z));
        prop_assert_eq!(small.drift_at(z), s.drift_at(z));
        prop_assert_eq!(small.drift_at(10.0 * n + 1.0), s.drift_at(n));
    }

    #[test]
    fn envelopes_are_sound(drift in drift_strategy(), diffusion in diffusion_strategy(), n in 3.0..30.0f64) {
        let trunc = CoefficientSpec::new(drift, diffusion).truncate(n).unwrap();
        let env = lipschitz_envelope(&trunc).unwrap();
        for j in 0..=400 {
            let z = -2.0 * n + j as f64 * n / 100.0;
            let slack = 1e-9 * (1.0 + trunc.drift_at(z).abs());
            prop_assert!(trunc.drift_at(z).abs() <= env.drift.c + env.drift.l * z.abs() + slack);
            let sigma = trunc.diffusion_at(z).abs();
            prop_assert!(sigma <= env.diffusion.c + env.diffusion.l * z.abs() + 1e-9 * (1.0 + sigma));
        }
    }

    #[test]
    fn lyapunov_is_increasing(r in 0.0..1e5f64, step in 1e-3..10.0f64) {
        prop_assert!(lyapunov_value(r + step).unwrap() > lyapunov_value(r).unwrap());
    }

    #[test]
    fn log_sobolev_holds_for_random_mixtures(
        amps in prop::collection::vec((1usize..=20, -50.0..50.0f64), 1..20),
        eps in 1e-3..0.99f64,
    ) {
        let h = GridFunction::from_fn(256, |x| amps.iter().map(|(m, a)| a * (*m as f64 * PI * x).sin()).sum());
        let mut h = h;
        let last = h.values.len() - 1;
        h.values[0] = 0.0;
        h.values[last] = 0.0;
        let r = log_sobolev_check(&h, eps).unwrap();
        prop_assert!(r.margin >= -r.quadrature_error, "{:?}", r);
    }

    #[test]
    fn discrete_integration_by_parts(values in prop::collection::vec(-10.0..10.0f64, 1..60)) {
        let n = values.len();
        let dx = 1.0 / (n + 1) as f64;
        let at = |i: usize| if i == 0 || i == n + 1 { 0.0 } else { values[i - 1] };
        let lap: f64 = (1..=n).map(|i| (at(i + 1) - 2.0 * at(i) + at(i - 1)) / (dx * dx) * at(i) * dx).sum();
        let h1 = h1_norm(&values);
        prop_assert!((lap + h1 * h1).abs() <= 1e-9 * (1.0 + h1 * h1));
    }

    #[test]
    fn wilson_interval_brackets_the_fraction(n in 1usize..500, k in 0usize..500) {
        let k = k.min(n);
        let (lo, hi) = wilson_interval(k, n);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
    }

    #[test]
    fn config_round_trips(
        drift in drift_strategy(),
        diffusion in diffusion_strategy(),
        amplitude in -10.0..10.0f64,
        mode in 1u32..5,
        n_paths in 0usize..1000,
        seed_base in 0u64..(i64::MAX as u64),
        stride in 0usize..10,
    ) {
        let mut c = ExperimentConfig::new(
            GridSpec::new(31, 5e-4, 0.5).unwrap(),
            CoefficientSpec::new(drift, diffusion),
            InitialData::SineMode { amplitude, mode },
            n_paths,
            seed_base,
        );
        c.snapshots = SnapshotSpec { stride, times: vec![0.25] };
        let text = c.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.config_hash(), c.config_hash());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn paths_keep_zero_boundary_and_increasing_series(
        drift in drift_strategy(),
        diffusion in diffusion_strategy(),
        seed in any::<u64>(),
        amplitude in 0.0..5.0f64,
    ) {
        let grid = GridSpec::new(31, 5e-4, 0.2).unwrap();
        let coeffs = CoefficientSpec::new(drift, diffusion);
        let u0 = Field::from_fn(31, |x| amplitude * (PI * x).sin());
        let opts = SimOptions { out_stride: 7, ladder: vec![10.0, 100.0], ..Default::default() };
        let p = simulate_localized(&u0, &coeffs, &NoisePath::new(seed, grid).unwrap(), &opts).unwrap();
        prop_assert!(p.series.windows(2).all(|w| w[1].t > w[0].t));
        prop_assert!(p.record.is_consistent());
        for r in p.series.iter().filter(|r| r.t < p.record.tau_hat) {
            prop_assert!(r.sup.is_finite() && r.l2.is_finite() && r.h1.is_finite());
        }
        if let Some(f) = &p.final_field {
            let closed = f.closed();
            prop_assert_eq!(closed[0], 0.0);
            prop_assert_eq!(closed[closed.len() - 1], 0.0);
        }
    }

    #[test]
    fn noise_is_replayable_and_aggregates_exactly(seed in any::<u64>(), m in 0usize..32) {
        let fine = GridSpec::new(63, 1.0 / 8192.0, 1.0 / 64.0).unwrap();
        let coarse = GridSpec::new(31, 1.0 / 2048.0, 1.0 / 64.0).unwrap();
        let path = NoisePath::new(seed, fine).unwrap();
        prop_assert_eq!(path.sample_increments(m).unwrap(), NoisePath::new(seed, fine).unwrap().sample_increments(m).unwrap());
        let agg = path.coarsen(coarse).unwrap().sample_increments(m).unwrap();
        let mut direct = vec![0.0; 31];
        for sub in 0..4 {
            let w = path.sample_increments(4 * m + sub).unwrap();
            let cells = spde_lab_core::noise::cells_from_lattice(&path.lattice_row(4 * m + sub).unwrap());
            prop_assert_eq!(&w, &cells);
            let lattice = path.lattice_row(4 * m + sub).unwrap();
            for (i, d) in direct.iter_mut().enumerate() {
                *d += lattice[4 * i + 2..4 * i + 6].iter().sum::<f64>();
            }
        }
        for (a, b) in agg.iter().zip(&direct) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn moment_norm_is_nonincreasing_in_beta() {
    let grid = GridSpec::new(15, 2e-3, 0.2).unwrap();
    let coeffs = CoefficientSpec::new(
        DriftFamily::LogCritical { theta1: 0.0, theta2: 1.0 },
        DiffusionFamily::Constant { sigma0: 1.0 },
    );
    let u0 = Field::from_fn(15, |x| (PI * x).sin());
    let opts = SimOptions {
        out_stride: 100,
        snapshot_steps: (0..=100).step_by(10).collect(),
        ..Default::default()
    };
    let ens: Vec<_> = (0..40u64)
        .map(|s| simulate_localized(&u0, &coeffs, &NoisePath::new(s, grid).unwrap(), &opts).unwrap())
        .collect();
    for k in [2.0, 4.0, 8.0] {
        let mut prev = f64::INFINITY;
        for beta in [0.0, 0.5, 1.0, 5.0, 20.0] {
            let v = moment_norm_estimate(&ens, beta, k).unwrap().value;
            assert!(v <= prev);
            prev = v;
        }
    }
}
