//! Exact localizing solutions of the adiabatic system
//!
//! ```text
//! u_t = σ_xx,   θ_t = σu,   σ = e^{−αθ} uⁿ
//! ```
//!
//! of the form u = φ U(ξ), σ = σ_s Σ(ξ)/φ, θ = (1 + λ(n+1)/α)θ_s − λ(n+1)θ₀/α + Θ(ξ)
//! with φ(t) = (αt/c₀ + 1)^{λ/α} and ξ = √λ x φ.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{MaterialParams, ScalingParams};
use crate::orbit::{reparametrize, shoot_heteroclinic, PlanarParams, Segment};
use crate::profile::{self, reconstruct, Profile, Triple};

/// Source of the profile triple (U, Σ, Θ) as an even function of ξ.
pub trait ProfileSource: Sync {
    fn eval_flagged(&self, xi: f64) -> (Triple, Segment);
    /// Largest ξ resolved by the source.
    fn outer_window(&self) -> f64;
}

impl ProfileSource for Profile {
    fn eval_flagged(&self, xi: f64) -> (Triple, Segment) {
        Profile::eval_flagged(self, xi)
    }
    fn outer_window(&self) -> f64 {
        self.xi_window().1
    }
}

/// The constant triple U = 1, Σ = 1, Θ = 0; with λ = 0 it reproduces
/// uniform shear.
#[derive(Debug, Clone, Copy)]
pub struct ConstantProfile;

impl ProfileSource for ConstantProfile {
    fn eval_flagged(&self, _xi: f64) -> (Triple, Segment) {
        ((1.0, 1.0, 0.0), Segment::Resolved)
    }
    fn outer_window(&self) -> f64 {
        f64::INFINITY
    }
}

/// Default factor by which ξ may exceed the resolved window before an
/// evaluation is refused.
pub const DEFAULT_WINDOW_FACTOR: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct LocalizedSolution<P: ProfileSource = Profile> {
    params: MaterialParams,
    lam: f64,
    sigma0: f64,
    profile: P,
    pub window_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldValue {
    pub u: f64,
    pub sigma: f64,
    pub theta: f64,
    /// Set when ξ lies beyond the resolved profile window.
    pub extrapolated: bool,
}

impl LocalizedSolution<Profile> {
    pub fn new(params: MaterialParams, scaling: ScalingParams, profile: Profile) -> Result<Self> {
        if params.kappa() != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "localized solutions require kappa = 0, got {}",
                params.kappa()
            )));
        }
        let pp = profile.params;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        if !close(pp.nu(), scaling.lam()) {
            return Err(Error::InvalidParameter(format!(
                "profile nu = {} differs from lambda = {}",
                pp.nu(),
                scaling.lam()
            )));
        }
        if !close(pp.n(), params.n()) || !close(pp.alpha(), params.alpha()) {
            return Err(Error::InvalidParameter("profile built for different n or alpha".into()));
        }
        if !close(profile.sigma0, scaling.sigma0()) {
            return Err(Error::InvalidParameter("profile sigma0 differs from the scaling".into()));
        }
        Ok(Self {
            params,
            lam: scaling.lam(),
            sigma0: scaling.sigma0(),
            profile,
            window_factor: DEFAULT_WINDOW_FACTOR,
        })
    }

    /// Shoot, reparametrize and reconstruct the profile with ν = λ.
    pub fn build(params: MaterialParams, scaling: ScalingParams, eps: f64, tol: f64) -> Result<Self> {
        let pp = PlanarParams::new(params.n(), params.alpha(), scaling.lam())?;
        let path = shoot_heteroclinic(&pp, eps, tol)?;
        let prof = reconstruct(&reparametrize(&path, scaling.sigma0())?)?;
        Self::new(params, scaling, prof)
    }
}

impl LocalizedSolution<ConstantProfile> {
    /// Degenerate λ = 0 assembly with the constant triple: uniform shear.
    pub fn uniform_shear(params: MaterialParams) -> Result<Self> {
        if params.kappa() != 0.0 {
            return Err(Error::InvalidParameter("localized solutions require kappa = 0".into()));
        }
        Ok(Self { params, lam: 0.0, sigma0: 1.0, profile: ConstantProfile, window_factor: f64::INFINITY })
    }
}

impl<P: ProfileSource> LocalizedSolution<P> {
    pub fn params(&self) -> &MaterialParams {
        &self.params
    }
    pub fn lam(&self) -> f64 {
        self.lam
    }
    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }
    pub fn profile(&self) -> &P {
        &self.profile
    }

    /// φ(t) = (αt/c₀ + 1)^{λ/α}.
    pub fn phi(&self, t: f64) -> Result<f64> {
        let tau = self.params.ln_clock_gain(t)? / self.params.alpha();
        Ok((self.lam * tau).exp())
    }

    /// Similarity variable ξ(x, t) = √λ x φ(t).
    pub fn xi(&self, x: f64, t: f64) -> Result<f64> {
        Ok(self.lam.sqrt() * x * self.phi(t)?)
    }

    /// Evaluate (u, σ, θ). Times slightly below zero are accepted so that
    /// centred differences can straddle t = 0.
    pub fn evaluate(&self, x: f64, t: f64) -> Result<FieldValue> {
        let p = &self.params;
        let (n, alpha) = (p.n(), p.alpha());
        let gain = p.ln_clock_gain(t)?;
        let l = p.ln_c0() + gain;
        let theta_s = l / alpha;
        let sigma_s = (-l).exp();
        let phi = (self.lam * gain / alpha).exp();
        let xi = self.lam.sqrt() * x * phi;
        if xi.abs() > self.profile.outer_window() * self.window_factor {
            return Err(Error::OutOfRange(format!(
                "xi = {xi:.3e} beyond {:.1e} x the resolved window",
                self.window_factor
            )));
        }
        let ((uu, ss, tt), seg) = self.profile.eval_flagged(xi);
        let g = self.lam * (n + 1.0) / alpha;
        Ok(FieldValue {
            u: phi * uu,
            sigma: sigma_s / phi * ss,
            theta: (1.0 + g) * theta_s - g * p.theta0() + tt,
            extrapolated: seg == Segment::Outer,
        })
    }

    /// θ written as θ_s + λ((n+1)/α)(θ_s − θ₀) + Θ(ξ).
    pub fn theta_alt(&self, x: f64, t: f64) -> Result<f64> {
        let p = &self.params;
        let theta_s = p.ln_shear_clock(t)? / p.alpha();
        let ((_, _, tt), _) = self.profile.eval_flagged(self.xi(x, t)?);
        Ok(theta_s + self.lam * (p.n() + 1.0) / p.alpha() * (theta_s - p.theta0()) + tt)
    }

    /// Evaluate on the tensor grid `xs × ts`, row-major in t.
    pub fn evaluate_grid(&self, xs: &[f64], ts: &[f64]) -> Result<Vec<(f64, f64, FieldValue)>> {
        let pts: Vec<(f64, f64)> = ts.iter().flat_map(|&t| xs.iter().map(move |&x| (x, t))).collect();
        pts.par_iter().map(|&(x, t)| Ok((x, t, self.evaluate(x, t)?))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdeResidual {
    pub hx: f64,
    pub ht: f64,
    /// Sup norms for (u_t − σ_xx, θ_t − σu, σ − e^{−αθ}uⁿ).
    pub sup: [f64; 3],
    pub l2: [f64; 3],
    /// Richardson estimate (steps doubled) of the differencing error.
    pub fd_error: [f64; 3],
    /// Set when the Richardson estimate is below the residual, i.e. the
    /// residual is dominated by profile evaluation error rather than by
    /// the difference scheme.
    pub at_floor: bool,
}

impl PdeResidual {
    pub fn max_sup(&self) -> f64 {
        self.sup.iter().copied().fold(0.0, f64::max)
    }
}

fn d1(f: &impl Fn(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((f(x - 2.0 * h)? - 8.0 * f(x - h)? + 8.0 * f(x + h)? - f(x + 2.0 * h)?) / (12.0 * h))
}

fn d2(f: &impl Fn(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((-f(x - 2.0 * h)? + 16.0 * f(x - h)? - 30.0 * f(x)? + 16.0 * f(x + h)? - f(x + 2.0 * h)?)
        / (12.0 * h * h))
}

/// Residuals of the adiabatic system at the points `xs × ts`, with
/// fourth-order central differences of spacing `hx` in x and `ht` in t.
pub fn pde_residual<P: ProfileSource>(
    sol: &LocalizedSolution<P>,
    xs: &[f64],
    ts: &[f64],
    hx: f64,
    ht: f64,
) -> Result<PdeResidual> {
    if xs.is_empty() || ts.is_empty() {
        return Err(Error::InvalidParameter("empty residual grid".into()));
    }
    if !(hx > 0.0 && ht > 0.0) {
        return Err(Error::InvalidParameter("steps must be > 0".into()));
    }
    let (n, alpha) = (sol.params.n(), sol.params.alpha());
    let pts: Vec<(f64, f64)> = ts.iter().flat_map(|&t| xs.iter().map(move |&x| (x, t))).collect();
    let per_point: Vec<([f64; 3], [f64; 3])> = pts
        .par_iter()
        .map(|&(x, t)| -> Result<([f64; 3], [f64; 3])> {
            let c = sol.evaluate(x, t)?;
            let u_t = |s: f64| sol.evaluate(x, s).map(|v| v.u);
            let th_t = |s: f64| sol.evaluate(x, s).map(|v| v.theta);
            let sg_x = |y: f64| sol.evaluate(y, t).map(|v| v.sigma);
            let (ut, ut2) = (d1(&u_t, t, ht)?, d1(&u_t, t, 2.0 * ht)?);
            let (tht, tht2) = (d1(&th_t, t, ht)?, d1(&th_t, t, 2.0 * ht)?);
            let (sxx, sxx2) = (d2(&sg_x, x, hx)?, d2(&sg_x, x, 2.0 * hx)?);
            let r = [
                ut - sxx,
                tht - c.sigma * c.u,
                c.sigma - (-alpha * c.theta).exp() * c.u.powf(n),
            ];
            let e = [((ut - ut2).abs() + (sxx - sxx2).abs()) / 15.0, (tht - tht2).abs() / 15.0, 0.0];
            Ok((r, e))
        })
        .collect::<Result<_>>()?;
    let mut sup = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    let mut fde = [0.0f64; 3];
    for (r, e) in &per_point {
        for k in 0..3 {
            sup[k] = sup[k].max(r[k].abs());
            sq[k] += r[k] * r[k];
            fde[k] = fde[k].max(e[k]);
        }
    }
    let m = per_point.len() as f64;
    Ok(PdeResidual {
        hx,
        ht,
        sup,
        l2: [(sq[0] / m).sqrt(), (sq[1] / m).sqrt(), (sq[2] / m).sqrt()],
        fd_error: fde,
        at_floor: (0..2).all(|k| fde[k] < sup[k]),
    })
}

/// Residuals under successive halving of both steps, with observed
/// orders log₂(r_k / r_{k+1}) of the largest sup residual.
pub fn residual_refinement<P: ProfileSource>(
    sol: &LocalizedSolution<P>,
    xs: &[f64],
    ts: &[f64],
    hx0: f64,
    ht0: f64,
    levels: usize,
) -> Result<(Vec<PdeResidual>, Vec<f64>)> {
    let mut out = Vec::with_capacity(levels);
    for k in 0..levels {
        let f = 0.5f64.powi(k as i32);
        out.push(pde_residual(sol, xs, ts, hx0 * f, ht0 * f)?);
    }
    let orders =
        out.windows(2).map(|w| (w[0].sup[0].max(w[0].sup[1]) / w[1].sup[0].max(w[1].sup[1])).log2()).collect();
    Ok((out, orders))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandSample {
    pub t: f64,
    pub peak_u: f64,
    pub halfwidth: f64,
    pub theta_excess: f64,
}

/// Peak strain rate, half-width of u and temperature excess over θ_s.
pub fn band_diagnostics<P: ProfileSource>(sol: &LocalizedSolution<P>, ts: &[f64]) -> Result<Vec<BandSample>> {
    if ts.windows(2).any(|w| !(w[1] > w[0])) || ts.iter().any(|&t| t < 0.0) {
        return Err(Error::InvalidParameter("t-grid must be non-negative and increasing".into()));
    }
    ts.par_iter()
        .map(|&t| {
            let c = sol.evaluate(0.0, t)?;
            let half = 0.5 * c.u;
            let mut hi = 1.0;
            while sol.evaluate(hi, t)?.u > half {
                hi *= 2.0;
                if hi > 1e12 {
                    return Err(Error::Domain("half-width not bracketed".into()));
                }
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if sol.evaluate(mid, t)?.u > half {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            let theta_s = sol.params.ln_shear_clock(t)? / sol.params.alpha();
            Ok(BandSample { t, peak_u: c.u, halfwidth: 0.5 * (lo + hi), theta_excess: c.theta - theta_s })
        })
        .collect()
}

/// Maximum discrepancy between the rescaled curves ξ ↦ u(x,t)/φ(t) at the
/// given times, compared on a common ξ-grid inside `[0, xi_max]`.
pub fn collapse_discrepancy<P: ProfileSource>(
    sol: &LocalizedSolution<P>,
    ts: &[f64],
    xi_max: f64,
    samples: usize,
) -> Result<f64> {
    let common: Vec<f64> = (0..samples).map(|i| xi_max * i as f64 / (samples - 1) as f64).collect();
    let sl = sol.lam.sqrt();
    let mut curves = Vec::new();
    for &t in ts {
        let phi = sol.phi(t)?;
        // sample x so that the curve covers the common ξ range
        let xs: Vec<f64> = (0..=4 * samples).map(|i| xi_max * 1.05 * i as f64 / (4 * samples) as f64 / (sl * phi)).collect();
        let xi: Vec<f64> = xs.iter().map(|x| sl * x * phi).collect();
        let y = xs.iter().map(|&x| sol.evaluate(x, t).map(|v| v.u / phi)).collect::<Result<Vec<_>>>()?;
        let interp = crate::interp::MonotoneCubic::new(&xi, &y)?;
        curves.push(common.iter().map(|&z| interp.eval(z)).collect::<Vec<_>>());
    }
    let mut worst = 0.0f64;
    for c in &curves[1..] {
        for (a, b) in c.iter().zip(&curves[0]) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Convenience: the fields at t = 0 written through the profile directly.
pub fn initial_data(sol: &LocalizedSolution<Profile>, x: f64) -> Result<(f64, f64, f64)> {
    let p = sol.params();
    let xi = sol.lam().sqrt() * x;
    let (u, s, th) = sol.profile().eval(xi);
    let theta_s0 = p.theta0();
    let sigma_s0 = (-p.ln_c0()).exp();
    Ok((u, sigma_s0 * s, theta_s0 + th))
}

pub use profile::log_grid;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbit::{DEFAULT_EPS, DEFAULT_TOL};
    use approx::assert_relative_eq;

    fn fig3() -> LocalizedSolution {
        let mp = MaterialParams::new(0.1, 0.5, 0.0, 10.0).unwrap();
        LocalizedSolution::build(mp, ScalingParams::new(0.1, 1.88).unwrap(), DEFAULT_EPS, DEFAULT_TOL).unwrap()
    }

    #[test]
    fn rejects_diffusion_and_mismatch() {
        let mp = MaterialParams::new(0.1, 0.5, 0.1, 10.0).unwrap();
        let sc = ScalingParams::new(0.1, 1.88).unwrap();
        assert!(LocalizedSolution::build(mp, sc, DEFAULT_EPS, DEFAULT_TOL).is_err());
        let ok = fig3();
        let other = ScalingParams::new(0.2, 1.88).unwrap();
        let mp0 = MaterialParams::new(0.1, 0.5, 0.0, 10.0).unwrap();
        assert!(LocalizedSolution::new(mp0, other, ok.profile().clone()).is_err());
    }

    #[test]
    fn initial_time_reduces_to_profile() {
        let s = fig3();
        for x in [0.0, 0.3, -1.2, 4.0] {
            let v = s.evaluate(x, 0.0).unwrap();
            let (u, sg, th) = initial_data(&s, x).unwrap();
            assert_relative_eq!(v.u, u, max_relative = 1e-14);
            assert_relative_eq!(v.sigma, sg, max_relative = 1e-12);
            assert_relative_eq!(v.theta, th, max_relative = 1e-13);
        }
    }

    #[test]
    fn theta_forms_agree() {
        let s = fig3();
        for (x, t) in [(0.0, 0.0), (0.7, 33.0), (-2.0, 200.0), (5.0, 1e4)] {
            let a = s.evaluate(x, t).unwrap().theta;
            let b = s.theta_alt(x, t).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} {b}");
        }
    }

    #[test]
    fn centre_peak_grows() {
        let s = fig3();
        let u00 = s.profile().u0;
        let mut prev = 0.0;
        for t in [0.0, 10.0, 50.0, 100.0, 200.0] {
            let v = s.evaluate(0.0, t).unwrap();
            let expect = (0.5 * t / 5f64.exp() + 1.0).powf(0.2) * u00;
            assert_relative_eq!(v.u, expect, max_relative = 1e-12);
            assert!(v.u > prev);
            prev = v.u;
            // even and decaying away from the centre
            let mut last = v.u;
            for x in [0.25, 0.5, 1.0, 2.0, 4.0] {
                let w = s.evaluate(x, t).unwrap();
                assert_eq!(w, s.evaluate(-x, t).unwrap());
                assert!(w.u < last);
                last = w.u;
            }
        }
    }

    #[test]
    fn uniform_shear_is_exact() {
        let mp = MaterialParams::new(0.1, 0.5, 0.0, 10.0).unwrap();
        let s = LocalizedSolution::uniform_shear(mp).unwrap();
        let xs = [-1.0, 0.0, 0.5];
        let ts = [0.0, 5.0, 50.0];
        let r = pde_residual(&s, &xs, &ts, 0.1, 0.5).unwrap();
        assert!(r.max_sup() < 1e-12, "{r:?}");
    }

    #[test]
    fn band_scaling_laws() {
        let s = fig3();
        let ts = [0.0, 20.0, 100.0, 200.0];
        let d = band_diagnostics(&s, &ts).unwrap();
        let c = d[0].halfwidth * s.phi(0.0).unwrap();
        for b in &d {
            let phi = s.phi(b.t).unwrap();
            assert_relative_eq!(b.halfwidth * phi, c, max_relative = 1e-9);
            assert_relative_eq!(b.peak_u / d[0].peak_u, phi, max_relative = 1e-12);
            let mp = s.params();
            let tau = mp.ln_clock_gain(b.t).unwrap() / mp.alpha();
            let expect = 0.1 * 2.2 * tau + s.profile().eval(0.0).2;
            assert_relative_eq!(b.theta_excess, expect, max_relative = 1e-10);
        }
    }

    #[test]
    fn collapse() {
        let s = fig3();
        let d = collapse_discrepancy(&s, &[0.0, 50.0, 200.0], 3.0, 200).unwrap();
        assert!(d < 1e-4, "{d}");
    }

    #[test]
    fn residual_converges_at_fourth_order() {
        let s = fig3();
        let xs: Vec<f64> = (0..=20).map(|i| -5.0 + 0.5 * i as f64).collect();
        let ts: Vec<f64> = (0..=5).map(|i| 2.0 * i as f64).collect();
        let (res, orders) = residual_refinement(&s, &xs, &ts, 0.8, 16.0, 4).unwrap();
        assert!(res[3].max_sup() < 1e-9, "{:?}", res[3]);
        for o in orders {
            assert!((o - 4.0).abs() < 0.35, "{o}");
        }
    }
}
