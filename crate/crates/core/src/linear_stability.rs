//! Linearized stability of uniform shear in rescaled time.
//!
//! Each cosine mode `cos(jπx)` of the relative perturbation obeys the 2×2
//! system
//!
//! ```text
//! d/dτ (u_j, θ_j) = [ -n(jπ)²   α(jπ)²        ] (u_j, θ_j)
//!                   [  n+1      -α - k(jπ)²  ]
//! ```
//!
//! with `k` either frozen or the true coefficient `k(τ) = κ c₀ e^{ατ}`.

use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{self, MaterialParams};
use crate::ode::{self, Flow, OdeError, OdeOptions, Trajectory};

/// Default number of modes in a spectrum.
pub const DEFAULT_JMAX: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    AsymptoticallyStable,
    Unstable,
    Marginal,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::AsymptoticallyStable => "asymptotically-stable",
            Classification::Unstable => "unstable",
            Classification::Marginal => "marginal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeEigen {
    pub j: usize,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub discriminant: f64,
    pub classification: Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSpectrum {
    pub params: MaterialParams,
    pub k: f64,
    pub modes: Vec<ModeEigen>,
    pub num_unstable: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Hadamard,
    Turing,
    Diffusive,
}

impl Regime {
    /// Regime of the frozen-coefficient problem; `None` for `k > 0, n = 0`.
    pub fn of(n: f64, k: f64) -> Option<Regime> {
        match (n == 0.0, k == 0.0) {
            (true, true) => Some(Regime::Hadamard),
            (false, true) => Some(Regime::Turing),
            (false, false) => Some(Regime::Diffusive),
            (true, false) => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Hadamard => "hadamard",
            Regime::Turing => "turing",
            Regime::Diffusive => "diffusive",
        }
    }
}

fn wavenumber_sq(j: usize) -> f64 {
    let w = j as f64 * PI;
    w * w
}

fn check_k(k: f64) -> Result<()> {
    if !(k >= 0.0 && k.is_finite()) {
        return Err(Error::InvalidParameter(format!("k must be >= 0, got {k}")));
    }
    Ok(())
}

/// Both roots of λ² + λ(α + (n+k)x) + nkx² − αx = 0 with x = (jπ)².
pub fn mode_eigen(params: &MaterialParams, k: f64, j: usize) -> Result<ModeEigen> {
    check_k(k)?;
    let (n, alpha) = (params.n(), params.alpha());
    let x = wavenumber_sq(j);
    let b = alpha + (n + k) * x;
    let c = n * k * x * x - alpha * x;
    // expanded form is a sum of non-negative terms, so no cancellation
    let disc = (n - k).powi(2) * x * x + (2.0 * alpha * (n + k) + 4.0 * alpha) * x + alpha * alpha;
    // b > 0 always, so the larger-magnitude root is the negative one
    let q = -0.5 * (b + disc.sqrt());
    let lambda_minus = q;
    let lambda_plus = if c == 0.0 { 0.0 } else { c / q };
    let classification = if j == 0 {
        Classification::Marginal
    } else {
        let nkx = n * k * x;
        if nkx < alpha {
            Classification::Unstable
        } else if nkx > alpha {
            Classification::AsymptoticallyStable
        } else {
            Classification::Marginal
        }
    };
    Ok(ModeEigen { j, lambda_minus, lambda_plus, discriminant: disc, classification })
}

pub fn spectrum(params: &MaterialParams, k: f64, jmax: usize) -> Result<ModeSpectrum> {
    if jmax < 1 {
        return Err(Error::InvalidParameter("jmax must be >= 1".into()));
    }
    let modes = (0..=jmax).map(|j| mode_eigen(params, k, j)).collect::<Result<Vec<_>>>()?;
    let num_unstable =
        modes.iter().filter(|m| m.classification == Classification::Unstable).count();
    Ok(ModeSpectrum { params: *params, k, modes, num_unstable })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticEigen {
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub regime: Regime,
}

/// Large-`j` expansions of the mode eigenvalues in the three regimes.
pub fn asymptotic_eigen(params: &MaterialParams, k: f64, j: usize) -> Result<AsymptoticEigen> {
    check_k(k)?;
    if j == 0 {
        return Err(Error::InvalidParameter("asymptotic expansions need j >= 1".into()));
    }
    let (n, alpha) = (params.n(), params.alpha());
    let x = wavenumber_sq(j);
    let w = x.sqrt();
    let regime = Regime::of(n, k).ok_or_else(|| {
        Error::UnsupportedRegime("no large-j expansion for k > 0 with n = 0".into())
    })?;
    let (lm, lp) = match regime {
        Regime::Hadamard => {
            let sa = alpha.sqrt();
            let corr = alpha.powf(1.5) / (8.0 * w);
            (-sa * w - alpha / 2.0 - corr, sa * w - alpha / 2.0 + corr)
        }
        Regime::Turing => {
            let r = alpha * x / (alpha + n * x);
            (-n * x - alpha - r, r)
        }
        Regime::Diffusive => {
            if (n - k).abs() < 1e-8 {
                let e = mode_eigen(params, k, j)?;
                (e.lambda_minus, e.lambda_plus)
            } else if n > k {
                let d = alpha * (k + 1.0) / (n - k + alpha / x).abs();
                (-n * x - alpha - d, -k * x + d)
            } else {
                // mirror image: the slow branch now follows -n x
                let d = alpha * (n + 1.0) / (k - n + alpha / x).abs();
                (-k * x - alpha - d, -n * x + d)
            }
        }
    };
    Ok(AsymptoticEigen { lambda_minus: lm, lambda_plus: lp, regime })
}

/// Mode matrix at frozen diffusion `k`.
pub fn mode_matrix(params: &MaterialParams, k: f64, j: usize) -> [[f64; 2]; 2] {
    let x = wavenumber_sq(j);
    let (n, alpha) = (params.n(), params.alpha());
    [[-n * x, alpha * x], [n + 1.0, -alpha - k * x]]
}

/// Eigenvector of the mode matrix for eigenvalue `lambda`.
pub fn mode_eigenvector(params: &MaterialParams, k: f64, j: usize, lambda: f64) -> [f64; 2] {
    let m = mode_matrix(params, k, j);
    if m[0][1] != 0.0 {
        [m[0][1], lambda - m[0][0]]
    } else {
        // first row is (-λ, 0): use the second row
        [lambda - m[1][1], m[1][0]]
    }
}

/// Closed-form solution of the frozen-coefficient mode system through the
/// eigen-decomposition.
pub fn frozen_mode_solution(
    params: &MaterialParams,
    k: f64,
    j: usize,
    init: [f64; 2],
    tau: f64,
) -> Result<[f64; 2]> {
    let e = mode_eigen(params, k, j)?;
    let v1 = mode_eigenvector(params, k, j, e.lambda_minus);
    let v2 = mode_eigenvector(params, k, j, e.lambda_plus);
    let det = v1[0] * v2[1] - v2[0] * v1[1];
    if det == 0.0 {
        return Err(Error::Domain("degenerate eigenvectors".into()));
    }
    let c1 = (init[0] * v2[1] - v2[0] * init[1]) / det;
    let c2 = (v1[0] * init[1] - init[0] * v1[1]) / det;
    let g1 = c1 * (e.lambda_minus * tau).exp();
    let g2 = c2 * (e.lambda_plus * tau).exp();
    Ok([g1 * v1[0] + g2 * v2[0], g1 * v1[1] + g2 * v2[1]])
}

/// Diffusion coefficient of the rescaled problem: k(τ) = κ c₀ e^{ατ}.
pub fn diffusion_at(params: &MaterialParams, tau: f64) -> f64 {
    if params.kappa() == 0.0 {
        return 0.0;
    }
    (params.kappa().ln() + params.ln_c0() + params.alpha() * tau).exp()
}

#[derive(Debug, Clone)]
pub struct ModeTrajectory {
    pub j: usize,
    pub frozen_k: Option<f64>,
    pub method: ModeMethod,
    /// Trajectory in rescaled time; components (u_j, θ_j).
    pub path: Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeMethod {
    Adaptive,
    Trapezoidal,
}

impl ModeTrajectory {
    pub fn at(&self, tau: f64) -> [f64; 2] {
        [self.path.eval(tau, 0), self.path.eval(tau, 1)]
    }
    pub fn end(&self) -> [f64; 2] {
        let y = self.path.last();
        [y[0], y[1]]
    }
}

/// Relative tolerance of the adaptive mode integration.
pub const MODE_RTOL: f64 = 1e-10;

/// Integrate one mode to `tau_end` with the adaptive Dormand–Prince pair.
/// With `frozen_k = None` the true coefficient k(τ) = κc₀e^{ατ} is used.
pub fn integrate_mode(
    params: &MaterialParams,
    j: usize,
    init: [f64; 2],
    tau_end: f64,
    frozen_k: Option<f64>,
) -> Result<ModeTrajectory> {
    if !(tau_end > 0.0) {
        return Err(Error::InvalidParameter(format!("tau_end must be > 0, got {tau_end}")));
    }
    if let Some(k) = frozen_k {
        check_k(k)?;
    }
    let p = *params;
    let x = wavenumber_sq(j);
    let (n, alpha) = (p.n(), p.alpha());
    let rhs = move |tau: f64, y: &[f64], d: &mut [f64]| {
        let k = frozen_k.unwrap_or_else(|| diffusion_at(&p, tau));
        d[0] = -n * x * y[0] + alpha * x * y[1];
        d[1] = (n + 1.0) * y[0] - (alpha + k * x) * y[1];
    };
    let opts = OdeOptions { max_steps: 5_000_000, ..OdeOptions::tol(MODE_RTOL, 1e-14) };
    let path = ode::integrate::<_, _, OdeError>(rhs, 0.0, &init, tau_end, opts, |_, _| {
        Ok(Flow::Continue)
    })?;
    Ok(ModeTrajectory { j, frozen_k, method: ModeMethod::Adaptive, path })
}

/// Fixed-step trapezoidal rule for stiff runs of the non-autonomous mode
/// system; step `min(1e-3, 0.1 / k(τ_end))`.
pub fn integrate_mode_trapezoidal(
    params: &MaterialParams,
    j: usize,
    init: [f64; 2],
    tau_end: f64,
    frozen_k: Option<f64>,
) -> Result<ModeTrajectory> {
    if !(tau_end > 0.0) {
        return Err(Error::InvalidParameter(format!("tau_end must be > 0, got {tau_end}")));
    }
    let k_at = |tau: f64| frozen_k.unwrap_or_else(|| diffusion_at(params, tau));
    let k_end = k_at(tau_end);
    let h_target = if k_end > 0.0 { (0.1 / k_end).min(1e-3) } else { 1e-3 };
    let steps = (tau_end / h_target).ceil().max(1.0) as usize;
    let h = tau_end / steps as f64;
    let x = wavenumber_sq(j);
    let (n, alpha) = (params.n(), params.alpha());
    let mat = |tau: f64| [[-n * x, alpha * x], [n + 1.0, -alpha - k_at(tau) * x]];
    let apply = |m: &[[f64; 2]; 2], y: [f64; 2]| {
        [m[0][0] * y[0] + m[0][1] * y[1], m[1][0] * y[0] + m[1][1] * y[1]]
    };
    let mut path = Trajectory::default();
    let mut y = init;
    let mut m0 = mat(0.0);
    path.t.push(0.0);
    path.y.push(y.to_vec());
    path.dy.push(apply(&m0, y).to_vec());
    for s in 1..=steps {
        let tau1 = s as f64 * h;
        let m1 = mat(tau1);
        let f0 = apply(&m0, y);
        let r = [y[0] + 0.5 * h * f0[0], y[1] + 0.5 * h * f0[1]];
        // (I - h/2 M1) y1 = r
        let a = [
            [1.0 - 0.5 * h * m1[0][0], -0.5 * h * m1[0][1]],
            [-0.5 * h * m1[1][0], 1.0 - 0.5 * h * m1[1][1]],
        ];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        y = [(r[0] * a[1][1] - a[0][1] * r[1]) / det, (a[0][0] * r[1] - a[1][0] * r[0]) / det];
        path.t.push(tau1);
        path.y.push(y.to_vec());
        path.dy.push(apply(&m1, y).to_vec());
        m0 = m1;
    }
    path.accepted = steps;
    Ok(ModeTrajectory { j, frozen_k, method: ModeMethod::Trapezoidal, path })
}

/// Adaptive integration with the trapezoidal fallback on stiffness failures.
pub fn integrate_mode_robust(
    params: &MaterialParams,
    j: usize,
    init: [f64; 2],
    tau_end: f64,
    frozen_k: Option<f64>,
) -> Result<ModeTrajectory> {
    match integrate_mode(params, j, init, tau_end, frozen_k) {
        Err(Error::Integrator(OdeError::StepUnderflow { .. }))
        | Err(Error::Integrator(OdeError::MaxSteps { .. })) => {
            integrate_mode_trapezoidal(params, j, init, tau_end, frozen_k)
        }
        other => other,
    }
}

/// Poincaré constant for zero-mean functions on [0, 1] with Neumann data.
pub const POINCARE_CP: f64 = 1.0 / (PI * PI);

/// Headroom applied to the minimal weights.
const HEADROOM: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyCertificate {
    /// Weight on ū² in the decaying energy.
    pub a: f64,
    /// Weight on θ̄² in the bounded energy.
    pub b: f64,
    pub c_b: f64,
    pub cp: f64,
    /// Physical time after which the A-weighted energy cannot grow.
    pub t: f64,
}

pub fn energy_certificate(params: &MaterialParams) -> Result<EnergyCertificate> {
    let (n, alpha, kappa) = (params.n(), params.alpha(), params.kappa());
    if n == 0.0 {
        return Err(Error::InvalidParameter("energy certificate needs n > 0".into()));
    }
    if kappa == 0.0 {
        return Err(Error::InvalidParameter("energy certificate needs kappa > 0".into()));
    }
    let cp = POINCARE_CP;
    let sigma_s0 = model::uniform_shear(params, 0.0)?.sigma_s;
    // A n / (2 Cp) >= (n+1)^2 / α
    let a = HEADROOM * 2.0 * cp * (n + 1.0).powi(2) / (alpha * n);
    // B κ > (α² / 2n) σ_s(0)
    let b = HEADROOM * alpha * alpha * sigma_s0 / (2.0 * n * kappa);
    // d/dt (½|u|² + B/2 |θ|²) <= [B(n+1)²/α − n/Cp]_+ σ_s(t) (½|u|²); σ_s peaks at t = 0
    let c_b = (b * (n + 1.0).powi(2) / alpha - n / cp).max(0.0) * sigma_s0;
    // (A α² / 2n) σ_s(T) = κ  ⇔  αT + c₀ = A α² / (2nκ)
    let t = ((a * alpha * alpha / (2.0 * n * kappa) - params.c0()) / alpha).max(0.0);
    Ok(EnergyCertificate { a, b, c_b, cp, t })
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub tau: Vec<f64>,
    pub t: Vec<f64>,
    pub energy: Vec<f64>,
    /// Rescaled time of the certificate time T.
    pub tau_cert: f64,
    pub t_cert: f64,
    pub max_before_cert: f64,
    pub monotone_after_cert: bool,
    pub decay_ratio: f64,
    pub methods: Vec<ModeMethod>,
}

impl EnergyReport {
    /// Per-sample flag: after T and not above the previous sample.
    pub fn monotone_flags(&self) -> Vec<bool> {
        (0..self.energy.len())
            .map(|i| {
                self.t[i] >= self.t_cert
                    && (i == 0 || self.energy[i] <= self.energy[i - 1] * (1.0 + MONOTONE_RTOL))
            })
            .collect()
    }
}

/// Slack for integration noise when checking monotone decay.
pub const MONOTONE_RTOL: f64 = 1e-9;

/// Mode energy ½[(A/2)u² + ½θ²] (the ½ is ∫cos²).
pub fn mode_energy(a: f64, y: [f64; 2]) -> f64 {
    0.5 * (0.5 * a * y[0] * y[0] + 0.5 * y[1] * y[1])
}

/// Integrate the supplied modes with the true diffusion coefficient and
/// track the certificate energy.
pub fn energy_decay_check(
    params: &MaterialParams,
    cert: &EnergyCertificate,
    modes: &[(usize, [f64; 2])],
    tau_end: f64,
    samples: usize,
) -> Result<EnergyReport> {
    if params.kappa() == 0.0 {
        return Err(Error::InvalidParameter(
            "energy check not applicable: the certificate requires kappa > 0".into(),
        ));
    }
    if modes.is_empty() {
        return Err(Error::InvalidParameter("no modes supplied".into()));
    }
    if let Some((j, _)) = modes.iter().find(|(j, _)| *j == 0) {
        return Err(Error::InvalidParameter(format!(
            "mode {j} excluded: perturbations have zero mean strain rate"
        )));
    }
    if !(tau_end > 0.0) {
        return Err(Error::InvalidParameter("tau_end must be > 0".into()));
    }
    let trajs = modes
        .par_iter()
        .map(|&(j, init)| integrate_mode_robust(params, j, init, tau_end, None))
        .collect::<Result<Vec<_>>>()?;
    let samples = samples.max(2);
    let tau: Vec<f64> =
        (0..samples).map(|i| tau_end * i as f64 / (samples - 1) as f64).collect();
    let t = tau.iter().map(|&s| model::t_of_tau(params, s)).collect::<Result<Vec<_>>>()?;
    let energy: Vec<f64> = tau
        .iter()
        .map(|&s| trajs.iter().map(|tr| mode_energy(cert.a, tr.at(s))).sum())
        .collect();
    let tau_cert = model::tau_of_t(params, cert.t)?;
    let max_before_cert = tau
        .iter()
        .zip(&energy)
        .filter(|(s, _)| **s <= tau_cert)
        .map(|(_, e)| *e)
        .fold(energy[0], f64::max);
    let mut monotone = true;
    for i in 1..samples {
        if t[i - 1] >= cert.t && energy[i] > energy[i - 1] * (1.0 + MONOTONE_RTOL) {
            monotone = false;
        }
    }
    Ok(EnergyReport {
        decay_ratio: energy[samples - 1] / energy[0],
        tau,
        t,
        energy,
        tau_cert,
        t_cert: cert.t,
        max_before_cert,
        monotone_after_cert: monotone,
        methods: trajs.iter().map(|t| t.method).collect(),
    })
}
