use std::f64::consts::PI;
use std::sync::Arc;

use shearlab_core::localization::LocalizedSolution;
use shearlab_core::model::{self, MaterialParams, ScalingParams};
use shearlab_core::orbit::{DEFAULT_EPS, DEFAULT_TOL};
use shearlab_core::pde_sim::*;

/// Composite 5-point Gauss–Legendre quadrature.
fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    const X: [f64; 5] = [0.0, 0.538_469_310_105_683_1, -0.538_469_310_105_683_1, 0.906_179_845_938_664, -0.906_179_845_938_664];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let h = (b - a) / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        for k in 0..5 {
            s += W[k] * f(c + 0.5 * h * X[k]);
        }
    }
    0.5 * h * s
}

#[test]
fn manufactured_solution_converges_at_second_order() {
    let mp = MaterialParams::new(0.3, 0.5, 0.1, 1.0).unwrap();
    let (n, alpha, kappa) = (mp.n(), mp.alpha(), mp.kappa());
    let v = |x: f64, t: f64| x + 0.1 * (PI * x).sin() * t.cos();
    let u = |x: f64, t: f64| 1.0 + 0.1 * PI * (PI * x).cos() * t.cos();
    let ux = |x: f64, t: f64| -0.1 * PI * PI * (PI * x).sin() * t.cos();
    let th = |x: f64, t: f64| 1.0 + 0.2 * (PI * x).cos() * (1.0 + 0.5 * t);
    let thx = |x: f64, t: f64| -0.2 * PI * (PI * x).sin() * (1.0 + 0.5 * t);
    let source: SourceFn = Arc::new(move |t, x| {
        let s = (-alpha * th(x, t)).exp() * u(x, t).powf(n);
        let sx = s * (-alpha * thx(x, t) + n * ux(x, t) / u(x, t));
        let vt = -0.1 * (PI * x).sin() * t.sin();
        let tht = 0.1 * (PI * x).cos();
        let thxx = -0.2 * PI * PI * (PI * x).cos() * (1.0 + 0.5 * t);
        (vt - sx, tht - kappa * thxx - s * u(x, t))
    });
    let t_end = 1.0;
    let mut errs = Vec::new();
    for cells in [16, 32, 64, 128] {
        let g = Grid1D::new(cells).unwrap();
        let s0 = FieldState::from_fn(&g, 0.0, |x| v(x, 0.0), |x| th(x, 0.0));
        let p = Problem::new(mp, g).with_source(source.clone());
        let tol = Tolerances { rtol: 1e-11, atol: 1e-11 };
        let mut sim = Simulator::new(p, &s0, Scheme::Explicit, tol).unwrap();
        sim.advance_to(t_end).unwrap();
        let st = sim.state();
        let x = g.nodes();
        let e = x
            .iter()
            .enumerate()
            .map(|(i, &x)| (st.v[i] - v(x, t_end)).abs().max((st.theta[i] - th(x, t_end)).abs()))
            .fold(0.0, f64::max);
        errs.push(e);
    }
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 2.0).abs() < 0.25, "{errs:?}");
    }
}

#[test]
fn both_schemes_agree_on_a_perturbed_run() {
    let cfg = |scheme| SimConfig {
        n: 0.1,
        alpha: 0.5,
        kappa: 0.05,
        theta0: 0.0,
        cells: 64,
        initial: InitialData::GaussianBump { center: 0.4, width: 0.1, amplitude: 0.05, noise: 0.0, seed: 0 },
        t_end: 1.0,
        diag_every: 0.5,
        snapshot_every: None,
        scheme,
        tolerances: Some(Tolerances { rtol: 1e-9, atol: 1e-10 }),
        energy_weight: None,
    };
    let a = run(&cfg(Scheme::Explicit)).unwrap();
    let b = run(&cfg(Scheme::Implicit)).unwrap();
    for (x, y) in a.final_state.theta.iter().zip(&b.final_state.theta) {
        assert!((x - y).abs() < 1e-6, "{x} {y}");
    }
    for (x, y) in a.final_state.v.iter().zip(&b.final_state.v) {
        assert!((x - y).abs() < 1e-6, "{x} {y}");
    }
}

#[test]
fn integral_of_strain_rate_is_one_and_stress_flux_vanishes() {
    let cfg = SimConfig {
        n: 0.05,
        alpha: 0.5,
        kappa: 0.5,
        theta0: 1.0,
        cells: 128,
        initial: InitialData::GaussianBump { center: 0.5, width: 0.1, amplitude: 0.1, noise: 0.0, seed: 0 },
        t_end: 5.0,
        diag_every: 1.0,
        snapshot_every: Some(1.0),
        scheme: Scheme::Implicit,
        tolerances: None,
        energy_weight: None,
    };
    let r = run(&cfg).unwrap();
    assert_eq!(r.snapshots.len(), 6);
    let mp = cfg.params().unwrap();
    for s in &r.snapshots {
        let st = FieldState { t: s.t, v: s.v.clone(), theta: s.theta.clone() };
        assert!((st.integral_u() - 1.0).abs() < 1e-12);
        if s.t > 0.0 {
            let (l, rr) = st.stress_flux(&mp);
            let scale = st.sigma_centres(&mp).iter().cloned().fold(0.0, f64::max);
            assert!(l.abs() < 1e-2 * scale && rr.abs() < 1e-2 * scale, "{l} {rr}");
        }
    }
}

#[test]
fn small_mode_grows_at_the_linear_rate() {
    let cfg = SimConfig {
        n: 0.05,
        alpha: 0.5,
        kappa: 0.0,
        theta0: 0.0,
        cells: 64,
        initial: InitialData::Mode { j: 1, amplitude: 1e-4 },
        t_end: 1.5,
        diag_every: 0.02,
        snapshot_every: None,
        scheme: Scheme::Explicit,
        tolerances: None,
        energy_weight: None,
    };
    let r = run(&cfg).unwrap();
    let mp = cfg.params().unwrap();
    let g = first_efold_growth(&mp, &r.diagnostics).unwrap();
    let e = shearlab_core::linear_stability::mode_eigen(&mp, 0.0, 1).unwrap();
    assert!((g / e.lambda_plus - 1.0).abs() < 0.02, "{g} {}", e.lambda_plus);
}

#[test]
fn parallel_runs_are_ordered_and_deterministic() {
    let mk = |amp| SimConfig {
        n: 0.05,
        alpha: 0.5,
        kappa: 0.5,
        theta0: 1.0,
        cells: 32,
        initial: InitialData::GaussianBump { center: 0.5, width: 0.1, amplitude: amp, noise: 1e-3, seed: 11 },
        t_end: 1.0,
        diag_every: 0.25,
        snapshot_every: None,
        scheme: Scheme::Implicit,
        tolerances: None,
        energy_weight: None,
    };
    let cfgs: Vec<_> = [0.0, 0.05, 0.1].into_iter().map(mk).collect();
    let a = run_many(&cfgs);
    let b: Vec<_> = cfgs.iter().map(run).collect();
    for (x, y) in a.iter().zip(&b) {
        let (x, y) = (x.as_ref().unwrap(), y.as_ref().unwrap());
        assert_eq!(x.diagnostics, y.diagnostics);
        assert_eq!(x.final_state, y.final_state);
    }
}

#[test]
fn tracks_the_exact_localizing_solution() {
    let mp = MaterialParams::new(0.1, 0.5, 0.0, 0.0).unwrap();
    let sol = Arc::new(
        LocalizedSolution::build(mp, ScalingParams::new(0.4, 1.0).unwrap(), DEFAULT_EPS, DEFAULT_TOL).unwrap(),
    );
    // centred at x = 1/2; v is odd about the centre so that v_t = σ_x holds there
    let half_integral = {
        let sol = sol.clone();
        move |a: f64, t: f64| gauss_legendre(|s| sol.evaluate(s, t).unwrap().u, 0.0, a, 8)
    };
    let w = half_integral.clone();
    let boundary: BoundaryFn = Arc::new(move |t| {
        let h = w(0.5, t);
        (-h, h)
    });
    // errors are amplified like e^{(α/n)τ} in the adiabatic case, so keep τ short
    let t_end = model::t_of_tau(&mp, 1.0).unwrap();
    let mut errs = Vec::new();
    for cells in [128, 256] {
        let g = Grid1D::new(cells).unwrap();
        let s0 = FieldState::from_fn(&g, 0.0, |x| half_integral(x - 0.5, 0.0), |x| sol.evaluate(x - 0.5, 0.0).unwrap().theta);
        let p = Problem::new(mp, g).with_boundary(boundary.clone());
        let mut sim = Simulator::new(p, &s0, Scheme::Implicit, Tolerances { rtol: 1e-8, atol: 1e-10 }).unwrap();
        sim.advance_to(t_end).unwrap();
        let st = sim.state();
        let mut e: f64 = 0.0;
        for (i, &uc) in st.u_centres().iter().enumerate() {
            let x = g.centre(i);
            if (1.0 / 3.0..=2.0 / 3.0).contains(&x) {
                let ex = sol.evaluate(x - 0.5, t_end).unwrap();
                e = e.max(((uc - ex.u) / ex.u).abs());
            }
        }
        for (i, &th) in st.theta.iter().enumerate() {
            let x = g.node(i);
            if (1.0 / 3.0..=2.0 / 3.0).contains(&x) {
                e = e.max((th - sol.evaluate(x - 0.5, t_end).unwrap().theta).abs());
            }
        }
        errs.push(e);
    }
    let peak = sol.evaluate(0.0, t_end).unwrap().u / sol.evaluate(0.0, 0.0).unwrap().u;
    assert!(peak > 1.4, "band should sharpen over the horizon: {peak}");
    assert!(errs[1] < 1e-3, "{errs:?}");
    assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
}

#[test]
fn uniform_shear_tracking_explicit() {
    let mp = MaterialParams::new(0.05, 0.5, 0.5, 1.0).unwrap();
    let g = Grid1D::new(256).unwrap();
    let s0 = InitialData::Uniform.state(&mp, &g).unwrap();
    let mut sim = Simulator::new(Problem::new(mp, g), &s0, Scheme::Explicit, Tolerances::default_for(Scheme::Explicit)).unwrap();
    for k in 1..=20 {
        let t = 0.5 * k as f64;
        sim.advance_to(t).unwrap();
        let st = sim.state();
        let exact = model::uniform_shear(&mp, t).unwrap();
        for (th, s) in st.theta.iter().zip(st.sigma_nodes(&mp)) {
            assert!((th - exact.theta_s).abs() < 1e-6);
            assert!((s - exact.sigma_s).abs() < 1e-6);
        }
    }
}
