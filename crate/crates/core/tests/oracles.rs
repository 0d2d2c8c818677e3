use foliage::assembly::{assemble, CoefficientSet, DomainSpec};
use foliage::dynamics::{estimate_lf, integrate, NonlinearitySpec};
use foliage::foliation::{fiber_point, select_beta, FiberQuery};
use foliage::noise::{sample_stationary, NoiseSpec, TimeGrid};
use foliage::spectral::{eigendecompose, SpectralCoords, SpectralModel, Subspace};

fn unit_model(dof: usize, split: usize) -> SpectralModel {
    let forms = assemble(&DomainSpec::with_dof(0.0, 1.0, dof).unwrap(), &CoefficientSet::unit()).unwrap();
    eigendecompose(&forms, split).unwrap()
}

/// Positive roots of (1 - μ²) sin μ + 2 μ cos μ = 0, the dispersion relation of
/// -u'' + u = λ u on (0,1) with u'(0) = u(0)(1 - λ), -u'(1) = u(1)(1 - λ).
fn transcendental_roots(count: usize) -> Vec<f64> {
    let f = |m: f64| (1.0 - m * m) * m.sin() + 2.0 * m * m.cos();
    let mut roots = Vec::new();
    let step = 1e-3;
    let mut a = 1e-6;
    while roots.len() < count {
        let b = a + step;
        if f(a).signum() != f(b).signum() {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if f(lo).signum() == f(mid).signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        a = b;
    }
    roots
}

#[test]
fn unit_spectrum_matches_dispersion_relation() {
    let m = unit_model(256, 2);
    assert!((m.lambdas[0] - 1.0).abs() < 1e-6);
    for (k, mu) in transcendental_roots(4).into_iter().enumerate() {
        let exact = 1.0 + mu * mu;
        let rel = (m.lambdas[k + 1] - exact).abs() / exact;
        assert!(
            rel < 1e-3,
            "lambda_{} = {} vs {exact}, rel {rel}",
            k + 2,
            m.lambdas[k + 1]
        );
    }
}

#[test]
fn second_eigenvalue_converges_under_refinement() {
    // λ₁ = 1 is exact on every mesh, so the first nontrivial eigenvalue is tracked.
    let second = |cells: usize| {
        let forms = assemble(&DomainSpec::new(0.0, 1.0, cells).unwrap(), &CoefficientSet::unit()).unwrap();
        eigendecompose(&forms, 1).unwrap().lambdas[1]
    };
    let reference = second(512);
    let errors: Vec<f64> = [32, 64, 128, 256]
        .iter()
        .map(|&n| (second(n) - reference).abs())
        .collect();
    for w in errors.windows(2) {
        assert!(w[1] / w[0] <= 0.3, "errors {errors:?}");
    }
}

struct Moments {
    mean: f64,
    se: f64,
}

fn moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Moments {
        mean,
        se: (var / n).sqrt(),
    }
}

#[test]
fn ou_variance_and_autocovariance_monte_carlo() {
    let lambdas = [1.0, 2.7, 14.5];
    let q = vec![1.0, 0.5, 2.0];
    let h = 0.05;
    let lag = 4;
    let samples = 100_000;
    let grid = TimeGrid::new(h, 10, 10).unwrap();
    let positions: [isize; 2] = [-10, 3];
    // sq[mode][position] = z(t_j)², cross[mode][position] = z(t_j) z(t_j + lag h)
    let mut sq = vec![vec![Vec::new(); 2]; 3];
    let mut cross = vec![vec![Vec::new(); 2]; 3];
    for seed in 0..samples as u64 {
        let spec = NoiseSpec::new(3, q.clone(), seed).unwrap();
        let path = sample_stationary(&spec, &lambdas, grid).unwrap();
        for i in 0..3 {
            for (p, &j) in positions.iter().enumerate() {
                let a = path.value(i, j);
                sq[i][p].push(a * a);
                cross[i][p].push(a * path.value(i, j + lag));
            }
        }
    }
    for i in 0..3 {
        let var = q[i] / (2.0 * lambdas[i]);
        let cov = var * (-lambdas[i] * lag as f64 * h).exp();
        for p in 0..2 {
            let v = moments(&sq[i][p]);
            assert!(
                (v.mean - var).abs() <= 3.0 * v.se,
                "mode {i} pos {p}: var {} vs {var}",
                v.mean
            );
            let c = moments(&cross[i][p]);
            assert!(
                (c.mean - cov).abs() <= 3.0 * c.se,
                "mode {i} pos {p}: cov {} vs {cov}",
                c.mean
            );
        }
        // Stationarity: the two window positions agree.
        let (a, b) = (moments(&sq[i][0]), moments(&sq[i][1]));
        assert!((a.mean - b.mean).abs() <= 3.0 * (a.se.hypot(b.se)));
    }
}

#[test]
fn tail_truncation_is_bounded_by_the_gap_decay() {
    let m = unit_model(32, 2);
    let nl = NonlinearitySpec::tanh(0.5);
    let gap = select_beta(&m, estimate_lf(&nl, &m, 0.25), 0.25, 2).unwrap();
    let h = 0.01;
    let path = sample_stationary(
        &NoiseSpec::uniform(4, 5),
        m.lambdas.as_slice(),
        TimeGrid::covering(h, 1.0, 8.0).unwrap(),
    )
    .unwrap();
    let x0 = SpectralCoords::from_leading(m.dof(), &[0.8, -0.6, 0.4, 0.3]);
    let zeta = SpectralCoords::from_leading(m.dof(), &[0.0, 0.0, 0.5, -0.4, 0.3]);
    let fiber = |horizon: f64| {
        let base = integrate(&x0, Some(&path), 0.2, horizon, h, &m, &nl).unwrap();
        let q = FiberQuery {
            x0: x0.clone(),
            zeta: zeta.clone(),
            path: Some(&path),
            eps: 0.2,
            horizon,
            h,
            tol: 1e-13,
            max_iter: 400,
        };
        fiber_point(&q, &base, &m, &nl, &gap).unwrap()
    };
    let slow = m.range(Subspace::Slow);
    let rate = gap.beta - gap.lambda_n;
    let reference = fiber(8.0);
    let mut scaled = Vec::new();
    for t in [0.5, 1.0, 1.5, 2.0] {
        let diff = &fiber(t).0 - &reference.0;
        let d = m.alpha_norm_on(&diff, 0.25, slow.clone());
        scaled.push(d * (rate * t).exp());
    }
    // The truncation change never exceeds C e^{-(β-λ_N)T} with C taken at the shortest horizon.
    let c = scaled[0].max(1e-300);
    for s in &scaled {
        assert!(*s <= 1.5 * c, "scaled truncation errors {scaled:?}");
    }
}
