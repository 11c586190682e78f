//! Quadrature primitives: adaptive Gauss-Kronrod (7/15) and composite
//! Simpson on uniform samples with a Richardson error estimate.

/// A numerical value together with an estimate of its absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    /// False when the adaptive routine ran out of subdivisions before
    /// reaching the requested tolerance.
    pub converged: bool,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            error: 0.0,
            converged: true,
        }
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    let value = kronrod * h;
    let err = ((kronrod - gauss) * h).abs();
    (value, err)
}

/// Adaptive Gauss-Kronrod integration over `[a, b]` with optional interior
/// breakpoints. Subdivides the worst interval until the summed error estimate
/// drops below `max(abs_tol, rel_tol * |value|)` or `max_intervals` is hit.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Estimate {
    if b <= a {
        return Estimate::exact(0.0);
    }
    let mut edges = vec![a];
    let mut bps: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|p| *p > a && *p < b)
        .collect();
    bps.sort_by(|x, y| x.partial_cmp(y).unwrap());
    bps.dedup();
    edges.extend(bps);
    edges.push(b);

    // (a, b, value, error)
    let mut pieces: Vec<(f64, f64, f64, f64)> = edges
        .windows(2)
        .map(|w| {
            let (v, e) = gk15(&mut f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();
    loop {
        let value: f64 = pieces.iter().map(|p| p.2).sum();
        let error: f64 = pieces.iter().map(|p| p.3).sum();
        let target = abs_tol.max(rel_tol * value.abs());
        if error <= target || pieces.len() >= max_intervals {
            return Estimate {
                value,
                error,
                converged: error <= target,
            };
        }
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .unwrap();
        let (pa, pb, _, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (pa + pb);
        if mid <= pa || mid >= pb {
            // interval at floating-point resolution
            let value: f64 = pieces.iter().map(|p| p.2).sum();
            return Estimate {
                value,
                error,
                converged: false,
            };
        }
        let (v1, e1) = gk15(&mut f, pa, mid);
        let (v2, e2) = gk15(&mut f, mid, pb);
        pieces.push((pa, mid, v1, e1));
        pieces.push((mid, pb, v2, e2));
    }
}

/// Composite Simpson weights for `n` intervals of width `h` (n + 1 samples).
/// Odd `n` closes with a Simpson 3/8 panel on the last three intervals.
fn simpson_sum(samples: &[f64], stride: usize, h: f64) -> Option<f64> {
    let pts: Vec<f64> = samples.iter().step_by(stride).copied().collect();
    let n = pts.len().checked_sub(1)?;
    if n < 2 {
        return None;
    }
    let (even_end, tail) = if n % 2 == 0 { (n, false) } else { (n - 3, true) };
    let mut s = 0.0;
    let mut i = 0;
    while i < even_end {
        s += pts[i] + 4.0 * pts[i + 1] + pts[i + 2];
        i += 2;
    }
    s *= h / 3.0;
    if tail {
        let j = even_end;
        s += 3.0 * h / 8.0 * (pts[j] + 3.0 * pts[j + 1] + 3.0 * pts[j + 2] + pts[j + 3]);
    }
    Some(s)
}

/// Composite Simpson integral of samples on a uniform grid of spacing `h`,
/// with a Richardson error estimate against the half-resolution rule. When
/// the grid cannot be halved, the trapezoid rule is used as the comparison.
pub fn simpson_uniform(samples: &[f64], h: f64) -> Option<Estimate> {
    let fine = simpson_sum(samples, 1, h)?;
    let n = samples.len() - 1;
    let error = match (n % 2 == 0).then(|| simpson_sum(samples, 2, 2.0 * h)).flatten() {
        Some(coarse) => (fine - coarse).abs() / 15.0,
        None => {
            let trap = h * (samples.iter().sum::<f64>() - 0.5 * (samples[0] + samples[n]));
            (fine - trap).abs()
        }
    };
    Some(Estimate {
        value: fine,
        error,
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_kronrod_polynomial_and_exp() {
        let e = integrate(|x| x.powi(5) - 2.0 * x, 0.0, 2.0, &[], 1e-13, 0.0, 100);
        assert!((e.value - (64.0 / 6.0 - 4.0)).abs() < 1e-12);
        let e = integrate(|x: f64| (-x).exp(), 0.0, 30.0, &[1.0], 1e-13, 0.0, 200);
        assert!((e.value - (1.0 - (-30f64).exp())).abs() < 1e-12);
        assert!(e.converged);
    }

    #[test]
    fn gauss_kronrod_handles_kink() {
        let e = integrate(|x: f64| (x - 0.3).abs(), 0.0, 1.0, &[], 1e-12, 0.0, 500);
        assert!((e.value - (0.045 + 0.245)).abs() < 1e-10);
    }

    #[test]
    fn simpson_even_and_odd_panels() {
        for n in [8usize, 9, 64, 65] {
            let h = 1.0 / n as f64;
            let s: Vec<f64> = (0..=n).map(|i| (std::f64::consts::PI * i as f64 * h).sin()).collect();
            let est = simpson_uniform(&s, h).unwrap();
            let exact = 2.0 / std::f64::consts::PI;
            assert!((est.value - exact).abs() < 2e-4, "n={n}");
            assert!(est.error >= 0.0);
        }
        assert!(simpson_uniform(&[1.0, 2.0], 1.0).is_none());
    }
}
