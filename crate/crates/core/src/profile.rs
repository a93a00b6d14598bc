//! Self-similar profiles (U, Σ, Θ) solving
//!
//! ```text
//! Σ' = ξU,   ν((n+1)/α + ξΘ') = ΣU − 1,   Σ = e^{−αΘ} Uⁿ,
//! ```
//!
//! built from the heteroclinic through U = a/(bξ), Σ = ξ/a and
//! Θ = ((n+1)/α) ln(a/ξ) − (n/α) ln b with η = ln ξ.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::SampledTriple;
use crate::orbit::{OrbitPath, PlanarParams, Segment};

/// (U, Σ, Θ)
pub type Triple = (f64, f64, f64);

#[derive(Debug, Clone, Serialize)]
pub struct Profile {
    pub params: PlanarParams,
    pub sigma0: f64,
    pub u0: f64,
    pub theta0: f64,
    /// ξ² coefficient of U at the origin.
    pub u2: f64,
    pub xi: Vec<f64>,
    pub u: Vec<f64>,
    pub sigma: Vec<f64>,
    pub theta: Vec<f64>,
    #[serde(skip)]
    path: OrbitPath,
}

/// Closed-form profile for ν = 0: Σ = √(ξ² + Σ₀²), U = 1/Σ.
pub fn closed_form_nu0(sigma0: f64, n: f64, alpha: f64, xi: f64) -> Triple {
    let s = xi.hypot(sigma0);
    (1.0 / s, s, -(n + 1.0) / alpha * s.ln())
}

/// The outer solution Σ = ξ, U = 1/ξ, valid for every ν.
pub fn outer_solution(n: f64, alpha: f64, xi: f64) -> Triple {
    (1.0 / xi, xi, -(n + 1.0) / alpha * xi.ln())
}

/// Build the profile from a reparametrized orbit.
pub fn reconstruct(path: &OrbitPath) -> Result<Profile> {
    let sigma0 = path.sigma0.ok_or_else(|| {
        Error::UnresolvedTail("orbit has not been reparametrized to a sigma0".into())
    })?;
    let p = path.params;
    let (n, alpha, c) = (p.n(), p.alpha(), p.c_nu());
    let u0 = c / sigma0;
    let theta0 = (n + 1.0) / alpha * u0.ln() - c.ln() / alpha;
    // b − 1/c_ν ≈ K a² near the node translates into the ξ² term of U
    let k = p.node_forcing();
    let u2 = -(k * c * c / (sigma0 * sigma0) + 0.5 * u0 * u0) / sigma0;
    let mut prof = Profile {
        params: p,
        sigma0,
        u0,
        theta0,
        u2,
        xi: Vec::with_capacity(path.len()),
        u: Vec::with_capacity(path.len()),
        sigma: Vec::with_capacity(path.len()),
        theta: Vec::with_capacity(path.len()),
        path: path.clone(),
    };
    for i in 0..path.len() {
        let xi = path.eta[i].exp();
        let (u, s, th) = from_state(&p, xi, path.a[i], path.b[i]);
        prof.xi.push(xi);
        prof.u.push(u);
        prof.sigma.push(s);
        prof.theta.push(th);
    }
    Ok(prof)
}

fn from_state(p: &PlanarParams, xi: f64, a: f64, b: f64) -> Triple {
    let (n, alpha) = (p.n(), p.alpha());
    let r = a / xi;
    (r / b, 1.0 / r, (n + 1.0) / alpha * r.ln() - n / alpha * b.ln())
}

impl Profile {
    pub fn path(&self) -> &OrbitPath {
        &self.path
    }

    /// Resolved ξ-window of the orbit samples.
    pub fn xi_window(&self) -> (f64, f64) {
        (self.xi[0], *self.xi.last().unwrap())
    }

    /// Evaluate at any real ξ (the profile is even) together with the
    /// segment that produced the value.
    pub fn eval_flagged(&self, xi: f64) -> (Triple, Segment) {
        let x = xi.abs();
        if x < self.xi[0] {
            let (n, alpha) = (self.params.n(), self.params.alpha());
            let x2 = x * x;
            let u = self.u0 + self.u2 * x2;
            let s = self.sigma0 + 0.5 * self.u0 * x2;
            // Θ through the constitutive law keeps Σ = e^{−αΘ}Uⁿ exact
            let th = (n * u.ln() - s.ln()) / alpha;
            return ((u, s, th), Segment::Inner);
        }
        let eta = x.ln();
        let seg = self.path.segment(eta);
        let st = self.path.state_at(eta);
        (from_state(&self.params, x, st.a, st.b), seg)
    }

    pub fn eval(&self, xi: f64) -> Triple {
        self.eval_flagged(xi).0
    }

    pub fn sampled(&self) -> SampledTriple {
        SampledTriple {
            xi: self.xi.clone(),
            u: self.u.clone(),
            sigma: self.sigma.clone(),
            theta: self.theta.clone(),
        }
    }

    /// Evaluate on `count` log-spaced points in [xi_min, xi_max].
    pub fn sample_log_grid(&self, xi_min: f64, xi_max: f64, count: usize) -> Result<SampledTriple> {
        if !(xi_min > 0.0 && xi_max > xi_min && count >= 2) {
            return Err(Error::InvalidParameter("need 0 < xi_min < xi_max and count >= 2".into()));
        }
        let (l0, l1) = (xi_min.ln(), xi_max.ln());
        let grid: Vec<f64> =
            (0..count).map(|i| (l0 + (l1 - l0) * i as f64 / (count - 1) as f64).exp()).collect();
        Ok(SampledTriple::from_fn(&grid, |x| self.eval(x)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualNorms {
    /// Sup norms of the three equation residuals.
    pub sup: [f64; 3],
    /// Discrete L² norms (root mean square over the grid).
    pub l2: [f64; 3],
    /// Richardson estimate of the differentiation error, per equation.
    pub fd_error: [f64; 3],
    /// Set when the differentiation error estimate exceeds the residual.
    pub fd_limited: bool,
}

impl ResidualNorms {
    pub fn max_sup(&self) -> f64 {
        self.sup.iter().copied().fold(0.0, f64::max)
    }
}

/// Default relative step for the difference stencils.
pub const FD_REL_STEP: f64 = 2e-3;

/// Fourth-order central first derivative of `f` at `x` with step `h`.
pub fn d1_central4(f: &impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

/// Residuals of the profile system for a triple evaluator on `xi_grid`.
/// Each point uses a local stencil with step `rel_step·ξ`.
pub fn msys_residual(
    eval: impl Fn(f64) -> Triple,
    n: f64,
    alpha: f64,
    nu: f64,
    xi_grid: &[f64],
    rel_step: f64,
) -> Result<ResidualNorms> {
    if xi_grid.is_empty() || xi_grid.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidParameter("residual grid must be non-empty and positive".into()));
    }
    if !(rel_step > 0.0 && rel_step < 0.25) {
        return Err(Error::InvalidParameter("rel_step must lie in (0, 0.25)".into()));
    }
    let mut sup = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    let mut fde = [0.0f64; 3];
    let sig = |x: f64| eval(x).1;
    let th = |x: f64| eval(x).2;
    for &x in xi_grid {
        let h = rel_step * x;
        let (u, s, t) = eval(x);
        let ds = d1_central4(&sig, x, h);
        let dt = d1_central4(&th, x, h);
        let ds2 = d1_central4(&sig, x, 2.0 * h);
        let dt2 = d1_central4(&th, x, 2.0 * h);
        let r = [
            ds - x * u,
            nu * ((n + 1.0) / alpha + x * dt) - (s * u - 1.0),
            s - (-alpha * t).exp() * u.powf(n),
        ];
        let e = [(ds - ds2).abs() / 15.0, nu * x * (dt - dt2).abs() / 15.0, 0.0];
        for k in 0..3 {
            sup[k] = sup[k].max(r[k].abs());
            sq[k] += r[k] * r[k];
            fde[k] = fde[k].max(e[k]);
        }
    }
    let m = xi_grid.len() as f64;
    let fd_limited = (0..2).any(|k| fde[k] > sup[k]);
    Ok(ResidualNorms {
        sup,
        l2: [(sq[0] / m).sqrt(), (sq[1] / m).sqrt(), (sq[2] / m).sqrt()],
        fd_error: fde,
        fd_limited,
    })
}

/// Log-spaced grid helper.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count.max(2) - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EndpointReport {
    pub sigma_at_0: f64,
    pub u_at_0: f64,
    pub theta_at_0: f64,
    /// |Σ(0⁺) − Σ₀|
    pub sigma0_error: f64,
    /// |U(0⁺)Σ(0⁺) − c_ν|
    pub product_error: f64,
    /// One-sided first derivatives at 0 of (U, Σ, Θ).
    pub derivatives_at_0: [f64; 3],
    /// Fitted ξ² coefficient of Σ − Σ₀ and the Taylor value U₀/2.
    pub sigma_xi2_coeff: f64,
    pub sigma_xi2_expected: f64,
    pub xi_far: f64,
    /// Deviations Σ/ξ − 1, ξU − 1 and Θ + ((n+1)/α) ln ξ at `xi_far`.
    pub tail_deviation: [f64; 3],
    /// True when `xi_far` lies beyond the resolved orbit window.
    pub tail_extrapolated: bool,
}

/// Least-squares polynomial fit of degree `deg` in the variable x/scale;
/// returns coefficients in the original variable.
fn poly_fit(x: &[f64], y: &[f64], deg: usize, scale: f64) -> Vec<f64> {
    let m = deg + 1;
    let mut ata = vec![vec![0.0; m]; m];
    let mut aty = vec![0.0; m];
    for (&xv, &yv) in x.iter().zip(y) {
        let s = xv / scale;
        let pw: Vec<f64> = (0..m).map(|k| s.powi(k as i32)).collect();
        for r in 0..m {
            aty[r] += pw[r] * yv;
            for c in 0..m {
                ata[r][c] += pw[r] * pw[c];
            }
        }
    }
    // Gaussian elimination with partial pivoting on the small normal system
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| ata[i][col].abs().total_cmp(&ata[j][col].abs())).unwrap();
        ata.swap(col, piv);
        aty.swap(col, piv);
        for r in col + 1..m {
            let f = ata[r][col] / ata[col][col];
            for c in col..m {
                ata[r][c] -= f * ata[col][c];
            }
            aty[r] -= f * aty[col];
        }
    }
    let mut coef = vec![0.0; m];
    for r in (0..m).rev() {
        let mut acc = aty[r];
        for c in r + 1..m {
            acc -= ata[r][c] * coef[c];
        }
        coef[r] = acc / ata[r][r];
    }
    coef.iter().enumerate().map(|(k, c)| c / scale.powi(k as i32)).collect()
}

/// Endpoint behaviour at ξ → 0 and ξ → ∞.
pub fn endpoint_report(profile: &Profile, xi_far: f64) -> Result<EndpointReport> {
    let (lo, hi) = profile.xi_window();
    if lo > 1e-3 {
        return Err(Error::InsufficientRange(format!(
            "profile resolved only down to xi = {lo:.3e}; need <= 1e-3"
        )));
    }
    if !(xi_far > 1.0) {
        return Err(Error::InvalidParameter("xi_far must exceed 1".into()));
    }
    let p = profile.params;
    let (n, alpha) = (p.n(), p.alpha());
    // fit on a window inside the resolved orbit
    let (f0, f1) = (lo.max(1e-4) * 10.0, 5e-2);
    let xs = log_grid(f0, f1, 60);
    let vals: Vec<Triple> = xs.iter().map(|&x| profile.eval(x)).collect();
    let fit = |k: usize| {
        let ys: Vec<f64> = vals
            .iter()
            .map(|v| match k {
                0 => v.0,
                1 => v.1,
                _ => v.2,
            })
            .collect();
        poly_fit(&xs, &ys, 4, f1)
    };
    let (cu, cs, ct) = (fit(0), fit(1), fit(2));
    let far = profile.eval(xi_far);
    Ok(EndpointReport {
        sigma_at_0: cs[0],
        u_at_0: cu[0],
        theta_at_0: ct[0],
        sigma0_error: (cs[0] - profile.sigma0).abs(),
        product_error: (cu[0] * cs[0] - p.c_nu()).abs(),
        derivatives_at_0: [cu[1], cs[1], ct[1]],
        sigma_xi2_coeff: cs[2],
        sigma_xi2_expected: 0.5 * profile.u0,
        xi_far,
        tail_deviation: [
            far.1 / xi_far - 1.0,
            xi_far * far.0 - 1.0,
            far.2 + (n + 1.0) / alpha * xi_far.ln(),
        ],
        tail_extrapolated: xi_far > hi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::scale_orbit_family;
    use crate::orbit::{reparametrize, shoot_heteroclinic, DEFAULT_EPS, DEFAULT_TOL};
    use approx::assert_relative_eq;

    fn fig3_profile() -> Profile {
        let p = PlanarParams::new(0.1, 0.5, 0.1).unwrap();
        let path = shoot_heteroclinic(&p, DEFAULT_EPS, DEFAULT_TOL).unwrap();
        reconstruct(&reparametrize(&path, 1.88).unwrap()).unwrap()
    }

    #[test]
    fn nu0_closed_form() {
        let (u, s, t) = closed_form_nu0(1.5, 0.1, 0.5, 0.0);
        assert_eq!((u, s), (1.0 / 1.5, 1.5));
        assert_relative_eq!(t, -2.2 * 1.5f64.ln(), max_relative = 1e-15);
        let (_, s, _) = closed_form_nu0(1.5, 0.1, 0.5, 1.5 * 3f64.sqrt());
        assert_relative_eq!(s, 3.0, max_relative = 1e-15);
        for x in [0.0, 0.3, 7.0, 90.0] {
            let (u, s, _) = closed_form_nu0(0.7, 0.1, 0.5, x);
            assert_relative_eq!(u * s, 1.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn closed_forms_solve_the_system() {
        let grid = log_grid(0.1, 100.0, 200);
        let r = msys_residual(|x| closed_form_nu0(1.3, 0.1, 0.5, x), 0.1, 0.5, 0.0, &grid, FD_REL_STEP)
            .unwrap();
        assert!(r.max_sup() < 1e-10, "{r:?}");
        for nu in [0.05, 0.1, 1.0] {
            let r = msys_residual(|x| outer_solution(0.1, 0.5, x), 0.1, 0.5, nu, &grid, FD_REL_STEP)
                .unwrap();
            assert!(r.max_sup() < 1e-10, "{nu}: {r:?}");
        }
        assert!(msys_residual(|x| outer_solution(0.1, 0.5, x), 0.1, 0.5, 0.1, &[], FD_REL_STEP).is_err());
    }

    #[test]
    fn wrong_triple_has_residual() {
        let grid = log_grid(0.1, 10.0, 50);
        let r = msys_residual(|x| closed_form_nu0(1.3, 0.1, 0.5, x), 0.1, 0.5, 0.1, &grid, FD_REL_STEP)
            .unwrap();
        assert!(r.sup[1] > 1e-3);
    }

    #[test]
    fn endpoint_constants() {
        let pr = fig3_profile();
        assert_relative_eq!(pr.u0, 1.22 / 1.88, max_relative = 1e-14);
        assert_relative_eq!(pr.u0 * pr.sigma0, 1.22, max_relative = 1e-14);
        let t0 = 2.2 * pr.u0.ln() - 1.22f64.ln() / 0.5;
        assert_relative_eq!(pr.theta0, t0, max_relative = 1e-14);
        // the ξ² coefficient of U from the local expansion of the system
        let (n, alpha, nu, c) = (0.1, 0.5, 0.1, 1.22);
        let u0: f64 = pr.u0;
        let direct = -u0.powi(3) * (0.5 + nu / (alpha * c)) / (c - 2.0 * n * nu / alpha);
        assert_relative_eq!(pr.u2, direct, max_relative = 1e-12);
        let (u, s, _) = pr.eval(pr.xi[0] * 1.0001);
        assert!((u - u0).abs() < 1e-6 && (s - 1.88).abs() < 1e-6);
    }

    #[test]
    fn profile_solves_the_system() {
        let pr = fig3_profile();
        let grid = log_grid(1e-3, 1e3, 300);
        let r = msys_residual(|x| pr.eval(x), 0.1, 0.5, 0.1, &grid, FD_REL_STEP).unwrap();
        assert!(r.max_sup() < 1e-6, "{r:?}");
    }

    #[test]
    fn profile_orderings() {
        let pr = fig3_profile();
        let grid = log_grid(1e-4, 1e4, 400);
        let v: Vec<Triple> = grid.iter().map(|&x| pr.eval(x)).collect();
        for w in v.windows(2) {
            assert!(w[1].0 < w[0].0, "U decreasing");
            assert!(w[1].1 > w[0].1, "Sigma increasing");
        }
        for (u, s, t) in &v {
            let prod = u * s;
            assert!(prod > 1.0 && prod <= 1.22 * (1.0 + 1e-12), "{prod}");
            let c = (-0.5 * t).exp() * u.powf(0.1);
            assert!((s - c).abs() <= 1e-8 * s);
        }
        for x in [1e-3, 0.5, 20.0] {
            assert_eq!(pr.eval(x), pr.eval(-x));
        }
        assert_eq!(pr.eval(0.0), (pr.u0, 1.88, pr.eval(0.0).2));
        assert_relative_eq!(pr.eval(0.0).2, pr.theta0, max_relative = 1e-12);
    }

    #[test]
    fn endpoints_match_theory() {
        let pr = fig3_profile();
        let rep = endpoint_report(&pr, 1e3).unwrap();
        assert!(rep.sigma0_error < 1e-3);
        assert!(rep.product_error < 1e-3);
        for d in rep.derivatives_at_0 {
            assert!(d.abs() < 1e-4, "{rep:?}");
        }
        assert!((rep.sigma_xi2_coeff / rep.sigma_xi2_expected - 1.0).abs() < 0.02);
        for d in rep.tail_deviation {
            assert!(d.abs() < 1e-3, "{rep:?}");
        }
    }

    #[test]
    fn scaled_profile_still_solves() {
        let pr = fig3_profile();
        let tri = pr.sample_log_grid(1e-2, 50.0, 4000).unwrap();
        let b = 1.7;
        let sc = scale_orbit_family(&tri, b, 0.1, 0.5).unwrap();
        // the scaled family starts at Σ₀/b
        let (_, s, _) = crate::model::scale_triple_at(|x| pr.eval(x), b, 0.1, 0.5, 0.0);
        assert_relative_eq!(s, 1.88 / b, max_relative = 1e-12);
        let interp = sc.interpolant().unwrap();
        let grid = log_grid(0.05, 20.0, 60);
        let exact = msys_residual(
            |x| crate::model::scale_triple_at(|y| pr.eval(y), b, 0.1, 0.5, x),
            0.1,
            0.5,
            0.1,
            &grid,
            FD_REL_STEP,
        )
        .unwrap();
        assert!(exact.max_sup() < 1e-6, "{exact:?}");
        let sampled = msys_residual(|x| interp.eval(x), 0.1, 0.5, 0.1, &grid, 1e-2).unwrap();
        assert!(sampled.max_sup() < 1e-3, "{sampled:?}");
    }

    #[test]
    fn requires_reparametrized_path() {
        let p = PlanarParams::new(0.1, 0.5, 0.1).unwrap();
        let path = shoot_heteroclinic(&p, DEFAULT_EPS, DEFAULT_TOL).unwrap();
        assert!(matches!(reconstruct(&path), Err(Error::UnresolvedTail(_))));
    }
}
