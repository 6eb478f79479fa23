//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line on stderr
//! (written directly, so it shows without `--nocapture`) before asserting.

use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use ndarray_linalg::EigVals;
use pulsewave::discretization::{assemble_divergence, assemble_linearized, assemble_twisted, export_dense};
use pulsewave::dispersion::{lambda_roots, minimal_speed, mu_c, DEFAULT_LAMBDA_RANGE};
use pulsewave::evolution::{comparison_check, RecenterPolicy, StepOptions, Stepper};
use pulsewave::experiments::{
    decay_fit, extrude, fit_algebraic, fit_exponential, monotone_decreasing, rate_prediction, stability_run, twin_run,
    PerturbationSpec, Sign, StabilityOptions, TwinOptions, perturb,
};
use pulsewave::grid::{Axis, BoundaryRule, Field, Grid};
use pulsewave::medium::{Coefficient, DiffusionField, Medium, Nonlinearity};
use pulsewave::spectral::{principal_eig, principal_eig_floquet};
use pulsewave::waves::{
    build_front_initial, construct_wave, line_grid, predicted_shift, stability_of_p, steady_state, uniqueness_experiment,
    SeedShape, WaveOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: &str, ok: bool, detail: String, start: Instant) {
    let line = format!(
        "criterion {n}: {} ({detail}; {:.1} s)\n",
        if ok { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

fn fisher() -> (Medium, Grid) {
    (Medium::fisher(1.0, 1.0), Grid::periodic(&[1.0], 256).unwrap())
}

fn periodic_mu() -> Medium {
    Medium::kpp_1d(1.0, Coefficient::constant(1.0), Coefficient::constant(1.0).with_x1(vec![], vec![0.5])).unwrap()
}

/// Principal eigenvalue (minimal real part) of a dense matrix, by LAPACK's full
/// eigendecomposition.
fn dense_min_eig(m: Array2<f64>) -> f64 {
    m.eigvals().expect("dense eigendecomposition").iter().map(|z| z.re).fold(f64::INFINITY, f64::min)
}

/// `−(D₂ + 2λD₁ + λ² + μ(x))` with centred differences, built from scratch.
fn dense_twisted_mu(n: usize, lambda: f64, mu: impl Fn(f64) -> f64) -> Array2<f64> {
    let h = 1.0 / n as f64;
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        let (l, r) = ((i + n - 1) % n, (i + 1) % n);
        m[[i, l]] -= 1.0 / (h * h) - lambda / h;
        m[[i, r]] -= 1.0 / (h * h) + lambda / h;
        m[[i, i]] -= -2.0 / (h * h) + lambda * lambda + mu(i as f64 * h);
    }
    m
}

#[test]
fn criterion_01_fisher_minimal_speed() {
    let start = Instant::now();
    let (m, g) = fisher();
    let curve = minimal_speed(&m, &g, DEFAULT_LAMBDA_RANGE).unwrap();
    let ok = (curve.c_star - 2.0).abs() <= 0.02 && (curve.lambda_star - 1.0).abs() <= 0.01 && start.elapsed().as_secs_f64() < 10.0;
    report("1", ok, format!("c* = {:.8}, λ* = {:.6}", curve.c_star, curve.lambda_star), start);
    assert!(ok);
}

#[test]
fn criterion_02_root_pair() {
    let start = Instant::now();
    let (m, g) = fisher();
    let curve = minimal_speed(&m, &g, DEFAULT_LAMBDA_RANGE).unwrap();
    let r = lambda_roots(&m, &g, 2.5, &curve).unwrap();
    let ok = (r.lambda1 - 0.5).abs() <= 1e-3 && (r.lambda2 - 2.0).abs() <= 1e-3 && start.elapsed().as_secs_f64() < 5.0;
    report("2", ok, format!("λ₁ = {:.8}, λ₂ = {:.8}", r.lambda1, r.lambda2), start);
    assert!(ok);
}

#[test]
fn criterion_03_periodic_medium_dense_scan() {
    let start = Instant::now();
    let m = periodic_mu();
    let g = Grid::periodic(&[1.0], 128).unwrap();
    let curve = minimal_speed(&m, &g, DEFAULT_LAMBDA_RANGE).unwrap();
    let mu = |x: f64| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x).sin();
    let (lo, hi) = (0.1, 4.0);
    let brute = (0..256)
        .map(|k| {
            let l = lo + (hi - lo) * k as f64 / 255.0;
            -dense_min_eig(dense_twisted_mu(128, l, mu)) / l
        })
        .fold(f64::INFINITY, f64::min);
    let rel = (curve.c_star - brute).abs() / brute;
    let ok = rel <= 5e-3 && start.elapsed().as_secs_f64() < 60.0;
    report("3", ok, format!("c* = {:.8}, dense scan {:.8}, rel {:.2e}", curve.c_star, brute, rel), start);
    assert!(ok);
}

#[test]
fn criterion_04_speed_selection() {
    let start = Instant::now();
    let (m, g) = fisher();
    let s = steady_state(&m, &g).unwrap();
    let curve = minimal_speed(&m, &g, DEFAULT_LAMBDA_RANGE).unwrap();
    let opts = WaveOptions::default();
    let fast = construct_wave(&m, &s, &curve, 2.5, &opts).unwrap();
    let t_fast = start.elapsed().as_secs_f64();
    let crit = construct_wave(&m, &s, &curve, curve.c_star, &opts).unwrap();
    let t_crit = start.elapsed().as_secs_f64() - t_fast;
    let ok = (fast.c_meas - 2.5).abs() <= 0.02 * 2.5
        && (crit.c_meas - 2.0).abs() <= 0.02 * 2.0
        && (fast.seed.lambda - 0.5).abs() < 1e-6
        && (crit.seed.lambda - 1.0).abs() < 1e-2
        && t_fast < 120.0
        && t_crit < 120.0;
    report("4", ok, format!("c_meas(λ=0.5) = {:.6}, c_meas(λ*) = {:.6}", fast.c_meas, crit.c_meas), start);
    assert!(ok);
}

#[test]
fn criterion_05_pulsating_property() {
    let start = Instant::now();
    let m = periodic_mu();
    let g = Grid::periodic(&[1.0], 128).unwrap();
    let s = steady_state(&m, &g).unwrap();
    let curve = minimal_speed(&m, &g, DEFAULT_LAMBDA_RANGE).unwrap();
    let c = 1.2 * curve.c_star;
    let w = construct_wave(&m, &s, &curve, c, &WaveOptions::default()).unwrap();
    let gate = 1e-2 * s.max();
    let ok = w.pulsating_residual <= gate && start.elapsed().as_secs_f64() < 180.0;
    report("5", ok, format!("c = {c:.6}, c_meas = {:.6}, residual {:.3e} (gate {gate:.3e})", w.c_meas, w.pulsating_residual), start);
    assert!(ok);
}

#[test]
fn criterion_06_exponential_stability() {
    let start = Instant::now();
    let (m, g) = fisher();
    let s = steady_state(&m, &g).unwrap();
    let curve = minimal_speed(&m, &g, DEFAULT_LAMBDA_RANGE).unwrap();
    let w = construct_wave(&m, &s, &curve, 2.5, &WaveOptions::default()).unwrap();
    let line = line_grid(&s, WaveOptions::default().window_periods, BoundaryRule::ClampToLimits).unwrap();
    let st = Stepper::new(&m, &line, StepOptions::default(), Some(s.p.values.clone())).unwrap();
    let run = stability_run(&w, &st, &PerturbationSpec::bump(0.1, Sign::Positive), &StabilityOptions::default()).unwrap();
    let fit = decay_fit(&run.series, 1);
    let exp = fit.exponential.clone().unwrap();
    let roots = lambda_roots(&m, &g, 2.5, &curve).unwrap();
    let mu_bar = stability_of_p(&m, &g, &s).unwrap().eigenvalue;
    let pred = rate_prediction(&m, &g, 2.5, 1.25, mu_bar, &roots).unwrap();
    let ok = exp.value >= 0.8 * pred.rate && exp.value >= 0.4 && exp.r2 >= 0.99 && start.elapsed().as_secs_f64() < 120.0;
    report(
        "6",
        ok,
        format!("μ_fit = {:.5}, R² = {:.5}, window [{:.1}, {:.1}], prediction {:.4}", exp.value, exp.r2, exp.window.0, exp.window.1, pred.rate),
        start,
    );
    assert!(ok);
}

#[test]
fn criterion_07_algebraic_stability() {
    let start = Instant::now();
    let (m, g) = fisher();
    let s = steady_state(&m, &g).unwrap();
    let curve = minimal_speed(&m, &g, DEFAULT_LAMBDA_RANGE).unwrap();
    let w = construct_wave(&m, &s, &curve, curve.c_star, &WaveOptions::default()).unwrap();
    let line = line_grid(&s, WaveOptions::default().window_periods, BoundaryRule::ClampToLimits).unwrap();
    let st = Stepper::new(&m, &line, StepOptions::default(), Some(s.p.values.clone())).unwrap();
    let opts = StabilityOptions { duration: 200.0, record_every: 1.0, residual_gate: 1e-2 };
    let run = stability_run(&w, &st, &PerturbationSpec::bump(0.1, Sign::Positive), &opts).unwrap();
    let e = &run.series;
    let alg = fit_algebraic(&e.t, &e.global, (20.0, 200.0)).unwrap();
    let mono = monotone_decreasing(&e.t, &e.global, (20.0, 200.0), 0.0);
    let one_d = alg.value <= -0.3 && mono && start.elapsed().as_secs_f64() < 600.0;

    // two-dimensional smoke test: A = diag(1, 1 + 0.5 cos(2πx₂/4)), f = u(1 − u)
    let start2 = Instant::now();
    let m1 = Medium::fisher(4.0, 1.0);
    let c1 = Grid::periodic(&[4.0], 64).unwrap();
    let s1 = steady_state(&m1, &c1).unwrap();
    let curve1 = minimal_speed(&m1, &c1, DEFAULT_LAMBDA_RANGE).unwrap();
    // periods of length 4: margins scaled to keep whole-period shifts fine-grained
    let policy = RecenterPolicy {
        margin_periods: 2.5,
        tolerance_periods: 0.25,
        source_periods: 2,
        ..RecenterPolicy::new(curve1.lambda_star)
    };
    let wopts = WaveOptions { window_periods: 20, recenter: Some(policy), edge_periods: 2.0, ..WaveOptions::default() };
    let w1 = construct_wave(&m1, &s1, &curve1, curve1.c_star, &wopts).unwrap();
    let m2 = Medium::new(
        &[4.0, 4.0],
        None,
        DiffusionField::Diagonal([Coefficient::constant(1.0), Coefficient::constant(1.0).with_x2(vec![0.5], vec![])]),
        Nonlinearity::KppLogistic { capacity: Coefficient::constant(1.0) },
    )
    .unwrap();
    let reference = extrude(w1.profile(), Axis::window(4.0, 64, 12, BoundaryRule::ZeroFlux)).unwrap();
    let ones = vec![1.0; 64 * 64];
    let st2 = Stepper::new(&m2, &reference.grid, StepOptions::default(), Some(ones.clone())).unwrap();
    let pert = perturb(&reference, &ones, w1.c_meas, &w1.xi0, &PerturbationSpec::bump(0.1, Sign::Positive)).unwrap();
    let twin = TwinOptions { duration: 60.0, record_every: 1.0, skip_periods: policy.synthetic_periods(), offset_decay: None };
    let e2 = twin_run(&reference, &pert.field, &st2, Some(&policy), w1.c_meas, w1.xi0.xi0, &twin).unwrap();
    let smoke = fit_algebraic(&e2.t, &e2.global, (10.0, 60.0)).unwrap();
    let two_d = smoke.value <= -0.6;
    let ok = one_d && two_d;
    report(
        "7",
        ok,
        format!(
            "1D slope {:.4} (R² {:.4}), monotone {mono}; 2D slope {:.4} over [10, 60] in {:.1} s",
            alg.value,
            alg.r2,
            smoke.value,
            start2.elapsed().as_secs_f64()
        ),
        start,
    );
    assert!(ok);
}

#[test]
fn criterion_08_comparison_principle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut ok = true;
    let mut pairs = 0;
    for m in [Medium::fisher(1.0, 1.0), periodic_mu()] {
        let g = Grid::periodic(&[1.0], 64).unwrap();
        let s = steady_state(&m, &g).unwrap();
        let st = Stepper::new(&m, &g, StepOptions::default(), None).unwrap();
        for _ in 0..50 {
            let p = &s.p.values;
            let u: Vec<f64> = p.iter().map(|&pk| rng.random_range(0.0..=pk)).collect();
            let v: Vec<f64> = u.iter().zip(p).map(|(&uk, &pk)| uk + rng.random_range(0.0..=1.0) * (pk - uk)).collect();
            ok &= comparison_check(&Field::new(g.clone(), u, 0.0), &Field::new(g.clone(), v, 0.0), &st, 5.0).unwrap();
            pairs += 1;
        }
    }
    ok &= start.elapsed().as_secs_f64() < 60.0;
    report("8", ok, format!("{pairs} ordered pairs"), start);
    assert!(ok);
}

#[test]
fn criterion_09_floquet_degeneracy() {
    let start = Instant::now();
    let g = Grid::periodic(&[1.0], 64).unwrap();
    let diffusion = || DiffusionField::Scalar(Coefficient::constant(1.0));
    let mu = Coefficient::constant(1.0).with_x1(vec![], vec![0.5]);
    let timed = Medium::new(&[1.0], Some(1.0), diffusion(), Nonlinearity::KppLogistic { capacity: mu.clone() }).unwrap();
    let (lambda, c) = (0.8, 2.0);
    let elliptic = mu_c(&periodic_mu(), &g, lambda, c).unwrap();
    let floquet = principal_eig_floquet(&timed, &g, lambda, c, 1.0 / 2048.0).unwrap().eig.eigenvalue;
    let scalar = Medium::new(
        &[1.0],
        Some(1.0),
        diffusion(),
        Nonlinearity::KppLogistic { capacity: Coefficient::constant(1.0).with_t(vec![], vec![0.3]) },
    )
    .unwrap();
    let growth = principal_eig_floquet(&scalar, &g, 0.0, 0.0, 1.0 / 2048.0).unwrap().growth_exponent;
    let ok = (floquet - elliptic).abs() <= 1e-4 && (growth - 1.0).abs() <= 1e-4 && start.elapsed().as_secs_f64() < 30.0;
    report("9", ok, format!("elliptic {elliptic:.10} vs Floquet {floquet:.10}; scalar growth {growth:.10}"), start);
    assert!(ok);
}

#[test]
fn criterion_10_uniqueness_up_to_translation() {
    let start = Instant::now();
    let (m, g) = fisher();
    let s = steady_state(&m, &g).unwrap();
    let curve = minimal_speed(&m, &g, DEFAULT_LAMBDA_RANGE).unwrap();
    let line = line_grid(&s, 40, BoundaryRule::ClampToLimits).unwrap();
    let shape1 = SeedShape::default();
    let shape2 = SeedShape { amplitude: 2.0, shift: 0.75 };
    let a = build_front_initial(&m, &line, 2.5, &s, &curve, shape1).unwrap();
    let b = build_front_initial(&m, &line, 2.5, &s, &curve, shape2).unwrap();
    let st = Stepper::new(&m, &line, StepOptions::default(), Some(s.p.values.clone())).unwrap();
    let pol = RecenterPolicy::new(a.lambda);
    let w = construct_wave(&m, &s, &curve, 2.5, &WaveOptions::default()).unwrap();
    let r = uniqueness_experiment(&a.field, &b.field, &st, w.c_meas, 60.0, 3.0, Some(&pol)).unwrap();
    let want = predicted_shift(shape1, shape2, a.lambda);
    let h = line.axis(0).h();
    let ok = r.distance <= 1e-2 && (r.shift - want).abs() <= h && start.elapsed().as_secs_f64() < 180.0;
    report(
        "10",
        ok,
        format!("aligned distance {:.3e} (unaligned {:.3e}), shift {:.6} vs predicted {want:.6} (h = {h:.6})", r.distance, r.distance_unaligned, r.shift),
        start,
    );
    assert!(ok);
}

#[test]
fn criterion_11_invariant_suites() {
    let start = Instant::now();
    let m = periodic_mu();
    let g = Grid::periodic(&[1.0], 64).unwrap();
    // eigen-solver against a dense eigendecomposition
    let mut eig_err: f64 = 0.0;
    for (l, c) in [(0.0, 0.0), (0.5, 1.0), (1.2, 2.5), (2.0, 0.0)] {
        let op = assemble_twisted(&g, &m, l, c, None).unwrap();
        let d = export_dense(&op).unwrap();
        let dense = dense_min_eig(Array2::from_shape_fn((d.n, d.n), |(i, j)| d.get(i, j)));
        eig_err = eig_err.max((principal_eig(&op).unwrap().eigenvalue - dense).abs());
    }
    // affinity in c
    let mut affinity: f64 = 0.0;
    for l in [0.3, 1.0, 1.7] {
        let (c1, c2) = (2.7, 0.4);
        affinity = affinity.max((mu_c(&m, &g, l, c1).unwrap() - mu_c(&m, &g, l, c2).unwrap() - l * (c1 - c2)).abs());
    }
    // divergence operator: zero row sums, symmetry
    let two = Medium::new(
        &[1.0, 2.0],
        None,
        DiffusionField::Diagonal([
            Coefficient::constant(1.0).with_x1(vec![0.3], vec![]).with_x2(vec![], vec![0.2]),
            Coefficient::constant(2.0).with_x1(vec![], vec![0.4]),
        ]),
        Nonlinearity::KppLogistic { capacity: Coefficient::constant(1.0) },
    )
    .unwrap();
    let mut rows: f64 = 0.0;
    let mut asym: f64 = 0.0;
    for (med, grid) in [(&m, g.clone()), (&two, Grid::periodic(&[1.0, 2.0], 32).unwrap())] {
        let d = assemble_divergence(&grid, med, None).unwrap();
        let scale = d.max_abs_entry();
        rows = rows.max(d.row_sums().iter().fold(0.0_f64, |a, v| a.max(v.abs())) / scale);
        asym = asym.max(d.asymmetry() / scale);
    }
    // steady-state residual for both shipped one-dimensional media
    let mut residual: f64 = 0.0;
    for med in [Medium::fisher(1.0, 1.0), m.clone()] {
        residual = residual.max(steady_state(&med, &Grid::periodic(&[1.0], 128).unwrap()).unwrap().residual);
    }
    let lin = assemble_linearized(&g, &m, None, &vec![0.0; 64]).unwrap();
    let mu1 = principal_eig(&lin).unwrap().eigenvalue;
    let ok = eig_err <= 1e-8 && affinity <= 1e-10 && rows <= 1e-12 && asym <= 1e-12 && residual <= 1e-8 && mu1 > 0.0
        && start.elapsed().as_secs_f64() < 120.0;
    report(
        "11",
        ok,
        format!("eig {eig_err:.2e}, affinity {affinity:.2e}, row sums {rows:.2e}, asymmetry {asym:.2e}, steady residual {residual:.2e}"),
        start,
    );
    assert!(ok);
}

#[test]
fn exponential_and_algebraic_fits_discriminate_on_a_fast_front() {
    let (m, g) = fisher();
    let s = steady_state(&m, &g).unwrap();
    let curve = minimal_speed(&m, &g, DEFAULT_LAMBDA_RANGE).unwrap();
    let w = construct_wave(&m, &s, &curve, 2.5, &WaveOptions::default()).unwrap();
    let line = line_grid(&s, 40, BoundaryRule::ClampToLimits).unwrap();
    let st = Stepper::new(&m, &line, StepOptions::default(), Some(s.p.values.clone())).unwrap();
    let run = stability_run(&w, &st, &PerturbationSpec::bump(0.1, Sign::Positive), &StabilityOptions::default()).unwrap();
    let e = &run.series;
    assert!(e.min_difference >= -1e-12);
    assert!(monotone_decreasing(&e.t, &e.global, (5.0, 40.0), 0.0));
    let exp = fit_exponential(&e.t, &e.global, (16.0, 40.0)).unwrap();
    let alg = fit_algebraic(&e.t, &e.global, (16.0, 40.0)).unwrap();
    assert!(alg.value < -1.0 && alg.r2 < exp.r2);
}
