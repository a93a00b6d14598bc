//! Constitutive parameters, uniform shearing base solutions and the
//! variable transforms shared by the rest of the crate.
//!
//! All closed forms go through `ln(αt + c₀) = αθ₀ + ln(1 + αt/c₀)` so that
//! large base temperatures or long horizons never materialise `c₀` or
//! `e^{ατ}` directly unless the caller asks for them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::MonotoneCubic;

/// Exponential-law material: σ = e^{−αθ} uⁿ, with thermal diffusivity κ and
/// base temperature θ₀. `c0 = e^{αθ₀}` is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaterialParams {
    n: f64,
    alpha: f64,
    kappa: f64,
    theta0: f64,
    c0: f64,
}

impl MaterialParams {
    pub fn new(n: f64, alpha: f64, kappa: f64, theta0: f64) -> Result<Self> {
        if !(n >= 0.0 && n.is_finite()) {
            return Err(Error::InvalidParameter(format!("n must be >= 0, got {n}")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be >= 0, got {kappa}")));
        }
        if !theta0.is_finite() {
            return Err(Error::InvalidParameter(format!("theta0 must be finite, got {theta0}")));
        }
        Ok(Self { n, alpha, kappa, theta0, c0: (alpha * theta0).exp() })
    }

    pub fn n(&self) -> f64 {
        self.n
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn theta0(&self) -> f64 {
        self.theta0
    }
    /// `e^{αθ₀}`; may be `inf` for extreme θ₀, in which case use [`Self::ln_c0`].
    pub fn c0(&self) -> f64 {
        self.c0
    }
    pub fn ln_c0(&self) -> f64 {
        self.alpha * self.theta0
    }

    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        Self::new(self.n, self.alpha, kappa, self.theta0)
    }

    /// `ln(1 + αt/c₀) = ατ(t)`, evaluated without forming `c₀`.
    pub fn ln_clock_gain(&self, t: f64) -> Result<f64> {
        // αt/c₀ = exp(ln(αt) − αθ₀) for t > 0
        let ratio = if t == 0.0 {
            0.0
        } else if t > 0.0 {
            ((self.alpha * t).ln() - self.ln_c0()).exp()
        } else {
            -((self.alpha * -t).ln() - self.ln_c0()).exp()
        };
        if ratio <= -1.0 {
            return Err(Error::Domain(format!("alpha*t + c0 <= 0 at t={t}")));
        }
        Ok(ratio.ln_1p())
    }

    /// `ln(αt + c₀)`, evaluated without forming `c₀`.
    pub fn ln_shear_clock(&self, t: f64) -> Result<f64> {
        Ok(self.ln_c0() + self.ln_clock_gain(t)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformShearState {
    pub t: f64,
    pub theta_s: f64,
    pub sigma_s: f64,
}

/// Uniform shearing base state: θ_s = (1/α) ln(αt + c₀), σ_s = 1/(αt + c₀).
pub fn uniform_shear(params: &MaterialParams, t: f64) -> Result<UniformShearState> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("t must be >= 0, got {t}")));
    }
    let l = params.ln_shear_clock(t)?;
    Ok(UniformShearState { t, theta_s: l / params.alpha, sigma_s: (-l).exp() })
}

/// Rescaled time τ(t) = (1/α) ln((c₀ + αt)/c₀) = θ_s(t) − θ₀.
pub fn tau_of_t(params: &MaterialParams, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("t must be >= 0, got {t}")));
    }
    Ok(params.ln_clock_gain(t)? / params.alpha)
}

/// Inverse of [`tau_of_t`]: t = (c₀/α)(e^{ατ} − 1).
pub fn t_of_tau(params: &MaterialParams, tau: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::Domain(format!("tau must be >= 0, got {tau}")));
    }
    let a = params.alpha;
    let ln_scale = params.ln_c0() - a.ln();
    let em1 = (a * tau).exp_m1();
    let ln_t = ln_scale + em1.ln();
    if !em1.is_finite() || ln_t > f64::MAX.ln() {
        return Err(Error::Overflow(format!(
            "t(tau) overflows for alpha*tau={:.3e}; shorten the horizon",
            a * tau
        )));
    }
    if em1 == 0.0 {
        return Ok(0.0);
    }
    Ok(ln_t.exp())
}

/// Constitutive law σ = e^{−αθ} uⁿ.
pub fn constitutive_stress(params: &MaterialParams, theta: f64, u: f64) -> Result<f64> {
    let n = params.n;
    let pow = if u > 0.0 {
        u.powf(n)
    } else if n == 0.0 {
        1.0
    } else if n.fract() == 0.0 && n.abs() < i32::MAX as f64 {
        u.powi(n as i32)
    } else {
        return Err(Error::Domain(format!("strain rate must be > 0 for non-integral n, got {u}")));
    };
    Ok((-params.alpha * theta).exp() * pow)
}

/// Localization rate λ and profile amplitude Σ₀ of the focusing ansatz
/// r(τ) = e^{−λτ}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    lam: f64,
    sigma0: f64,
}

impl ScalingParams {
    pub fn new(lam: f64, sigma0: f64) -> Result<Self> {
        if !(lam > 0.0 && lam.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lam}")));
        }
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma0 must be > 0, got {sigma0}")));
        }
        Ok(Self { lam, sigma0 })
    }
    pub fn lam(&self) -> f64 {
        self.lam
    }
    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }
}

/// Profile triple (U, Σ, Θ) sampled on a strictly increasing ξ-grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledTriple {
    pub xi: Vec<f64>,
    pub u: Vec<f64>,
    pub sigma: Vec<f64>,
    pub theta: Vec<f64>,
}

impl SampledTriple {
    pub fn from_fn<F: Fn(f64) -> (f64, f64, f64)>(xi: &[f64], f: F) -> Self {
        let mut t = SampledTriple {
            xi: xi.to_vec(),
            u: Vec::with_capacity(xi.len()),
            sigma: Vec::with_capacity(xi.len()),
            theta: Vec::with_capacity(xi.len()),
        };
        for &x in xi {
            let (u, s, th) = f(x);
            t.u.push(u);
            t.sigma.push(s);
            t.theta.push(th);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }
    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// Interpolating evaluator (monotone cubic in ξ) valid on
    /// `[xi[0], xi[last]]`.
    pub fn interpolant(&self) -> Result<TripleInterpolant> {
        Ok(TripleInterpolant {
            u: MonotoneCubic::new(&self.xi, &self.u)?,
            sigma: MonotoneCubic::new(&self.xi, &self.sigma)?,
            theta: MonotoneCubic::new(&self.xi, &self.theta)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TripleInterpolant {
    u: MonotoneCubic,
    sigma: MonotoneCubic,
    theta: MonotoneCubic,
}

impl TripleInterpolant {
    pub fn eval(&self, xi: f64) -> (f64, f64, f64) {
        (self.u.eval(xi), self.sigma.eval(xi), self.theta.eval(xi))
    }
}

/// The scaling invariance of the profile system:
/// (U, Σ, Θ) ↦ (a U(aξ), Σ(aξ)/a, ((n+1)/α) ln a + Θ(aξ)).
pub fn scale_triple_at(
    eval: impl Fn(f64) -> (f64, f64, f64),
    a: f64,
    n: f64,
    alpha: f64,
    xi: f64,
) -> (f64, f64, f64) {
    let (u, s, th) = eval(a * xi);
    (a * u, s / a, (n + 1.0) / alpha * a.ln() + th)
}

/// Apply the scaling invariance to a sampled triple, resampling onto the
/// original grid points whose image `a·ξ` stays inside the sampled range.
pub fn scale_orbit_family(
    triple: &SampledTriple,
    a: f64,
    n: f64,
    alpha: f64,
) -> Result<SampledTriple> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::InvalidParameter(format!("scale factor must be > 0, got {a}")));
    }
    if triple.len() < 2 {
        return Err(Error::EmptyDomain("need at least two samples".into()));
    }
    let lo = triple.xi[0];
    let hi = *triple.xi.last().unwrap();
    let interp = triple.interpolant()?;
    // tolerate round-off at the ends of the rescaled window
    let slack = 1e-12 * hi.abs().max(1.0);
    let keep: Vec<f64> = triple
        .xi
        .iter()
        .copied()
        .filter(|&x| a * x >= lo - slack && a * x <= hi + slack)
        .collect();
    if keep.len() < 2 {
        return Err(Error::EmptyDomain(format!(
            "scaled support [{:.3e}, {:.3e}] does not overlap the grid [{lo:.3e}, {hi:.3e}]",
            lo / a,
            hi / a
        )));
    }
    Ok(SampledTriple::from_fn(&keep, |x| {
        scale_triple_at(|s| interp.eval(s.clamp(lo, hi)), a, n, alpha, x)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(alpha: f64, theta0: f64) -> MaterialParams {
        MaterialParams::new(0.1, alpha, 0.0, theta0).unwrap()
    }

    #[test]
    fn rejects_bad_params() {
        assert!(MaterialParams::new(-0.1, 0.5, 0.0, 0.0).is_err());
        assert!(MaterialParams::new(0.1, 0.0, 0.0, 0.0).is_err());
        assert!(MaterialParams::new(0.1, 0.5, -1.0, 0.0).is_err());
        assert!(MaterialParams::new(0.0, 0.5, 0.0, 0.0).is_ok());
    }

    #[test]
    fn c0_is_derived() {
        let m = p(0.5, 10.0);
        assert_eq!(m.c0(), (5.0f64).exp());
    }

    #[test]
    fn uniform_shear_at_origin() {
        let s = uniform_shear(&p(0.5, 10.0), 0.0).unwrap();
        assert_relative_eq!(s.theta_s, 10.0, max_relative = 1e-15);
        assert_relative_eq!(s.sigma_s, (-5.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn uniform_shear_t200_matches_quadrature() {
        // closed form vs an independent integration of dθ/dt = e^{-αθ}
        let m = p(0.5, 10.0);
        let s = uniform_shear(&m, 200.0).unwrap();
        assert_relative_eq!(s.theta_s, 2.0 * (100.0 + 5f64.exp()).ln(), max_relative = 1e-14);
        let f = |_t: f64, y: &[f64], d: &mut [f64]| d[0] = (-0.5 * y[0]).exp();
        let y = crate::ode::dopri5_fixed(&f, 0.0, &[10.0], 200.0, 400);
        assert_relative_eq!(s.theta_s, y[0], max_relative = 1e-12);
    }

    #[test]
    fn negative_time_rejected() {
        assert!(uniform_shear(&p(0.5, 0.0), -1.0).is_err());
        assert!(tau_of_t(&p(0.5, 0.0), -1.0).is_err());
        assert!(t_of_tau(&p(0.5, 0.0), -1.0).is_err());
    }

    #[test]
    fn tau_examples() {
        let m = p(0.5, 0.0);
        assert_eq!(tau_of_t(&m, 0.0).unwrap(), 0.0);
        assert_relative_eq!(tau_of_t(&m, 2.0).unwrap(), 2.0 * 2f64.ln(), max_relative = 1e-15);
        // quadrature of σ_s over [0, 2] by composite Simpson
        let nq = 2000;
        let h = 2.0 / nq as f64;
        let sig = |t: f64| 1.0 / (0.5 * t + 1.0);
        let mut q = sig(0.0) + sig(2.0);
        for i in 1..nq {
            q += if i % 2 == 1 { 4.0 } else { 2.0 } * sig(i as f64 * h);
        }
        assert_relative_eq!(tau_of_t(&m, 2.0).unwrap(), q * h / 3.0, max_relative = 1e-12);
        assert_eq!(t_of_tau(&m, 0.0).unwrap(), 0.0);
        assert_relative_eq!(t_of_tau(&m, 4.0).unwrap(), 2.0 * (2f64.exp() - 1.0), max_relative = 1e-14);
        let m2 = p(0.5, 3.0);
        assert_relative_eq!(t_of_tau(&m2, 2f64.ln() / 0.5).unwrap(), m2.c0() / 0.5, max_relative = 1e-13);
    }

    #[test]
    fn t_of_tau_overflow() {
        let m = p(0.5, 10.0);
        assert!(matches!(t_of_tau(&m, 5000.0), Err(Error::Overflow(_))));
    }

    #[test]
    fn large_theta0_stays_finite() {
        let m = p(0.5, 2000.0);
        assert!(m.c0().is_infinite());
        let s = uniform_shear(&m, 1e6).unwrap();
        assert!(s.theta_s.is_finite());
        assert_relative_eq!(s.theta_s, 2000.0, max_relative = 1e-12);
        assert_eq!(s.sigma_s, 0.0);
    }

    #[test]
    fn constitutive_examples() {
        let m = MaterialParams::new(0.1, 0.5, 0.0, 0.0).unwrap();
        assert_eq!(constitutive_stress(&m, 0.0, 1.0).unwrap(), 1.0);
        assert_relative_eq!(
            constitutive_stress(&m, 2.0, 3.0).unwrap(),
            (-1.0f64).exp() * 3f64.powf(0.1),
            max_relative = 1e-15
        );
        assert!(constitutive_stress(&m, 0.0, -1.0).is_err());
        let h = MaterialParams::new(0.0, 0.5, 0.0, 0.0).unwrap();
        assert_relative_eq!(constitutive_stress(&h, 1.3, 7.0).unwrap(), (-0.65f64).exp());
        let i = MaterialParams::new(2.0, 0.5, 0.0, 0.0).unwrap();
        assert_eq!(constitutive_stress(&i, 0.0, -3.0).unwrap(), 9.0);
    }

    #[test]
    fn scaling_params_validation() {
        assert!(ScalingParams::new(0.0, 1.0).is_err());
        assert!(ScalingParams::new(0.1, -1.0).is_err());
        assert!(ScalingParams::new(0.1, 1.88).is_ok());
    }

    fn outer(n: f64, alpha: f64) -> impl Fn(f64) -> (f64, f64, f64) {
        move |x: f64| (1.0 / x, x, -(n + 1.0) / alpha * x.ln())
    }

    #[test]
    fn scale_identity_and_outer_fixed_point() {
        let (n, alpha) = (0.1, 0.5);
        let grid: Vec<f64> = (0..200).map(|i| 0.1 * 1.03f64.powi(i)).collect();
        let tri = SampledTriple::from_fn(&grid, outer(n, alpha));
        let same = scale_orbit_family(&tri, 1.0, n, alpha).unwrap();
        assert_eq!(same.xi, tri.xi);
        for i in 0..tri.len() {
            assert_relative_eq!(same.u[i], tri.u[i], max_relative = 1e-14);
        }
        // the outer solution is a fixed point of the family
        let a = 1.03f64.powi(7);
        let sc = scale_orbit_family(&tri, a, n, alpha).unwrap();
        for (i, &x) in sc.xi.iter().enumerate() {
            let (u, s, th) = outer(n, alpha)(x);
            assert_relative_eq!(sc.u[i], u, max_relative = 1e-10);
            assert_relative_eq!(sc.sigma[i], s, max_relative = 1e-10);
            assert!((sc.theta[i] - th).abs() < 1e-10);
        }
    }

    #[test]
    fn scale_empty_overlap() {
        let grid: Vec<f64> = (1..10).map(|i| i as f64).collect();
        let tri = SampledTriple::from_fn(&grid, outer(0.1, 0.5));
        assert!(matches!(scale_orbit_family(&tri, 100.0, 0.1, 0.5), Err(Error::EmptyDomain(_))));
        assert!(scale_orbit_family(&tri, -1.0, 0.1, 0.5).is_err());
    }
}
