//! Heteroclinic orbit of the desingularized planar system
//!
//! ```text
//! da/dη = a (1 − a²/b)
//! db/dη = (α/(νn)) (c_ν b − 1 − (n+1) ν a²/α)
//! ```
//!
//! joining the repelling node P = (0, 1/c_ν) to the saddle Q = (1, 1).
//! The orbit is found by seeding on the stable manifold of Q and
//! integrating backward until the state is within `tol` of P.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ode::{self, Flow, OdeOptions};

pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-8;

/// Relative tolerance for the backward shooting.
pub const SHOOT_RTOL: f64 = 1e-12;

/// Substep for re-integration between stored samples, scaled by the fast
/// node eigenvalue.
fn reintegration_step(p: &PlanarParams) -> f64 {
    (0.05 / p.lambda2()).min(5e-3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanarParams {
    n: f64,
    alpha: f64,
    nu: f64,
    c_nu: f64,
}

impl PlanarParams {
    pub fn new(n: f64, alpha: f64, nu: f64) -> Result<Self> {
        for (name, v) in [("n", n), ("alpha", alpha), ("nu", nu)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(Self { n, alpha, nu, c_nu: 1.0 + nu * (n + 1.0) / alpha })
    }
    pub fn n(&self) -> f64 {
        self.n
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn c_nu(&self) -> f64 {
        self.c_nu
    }
    /// Second eigenvalue at the node, (α/(nν)) c_ν.
    pub fn lambda2(&self) -> f64 {
        self.alpha / (self.n * self.nu) * self.c_nu
    }
    pub fn p_point(&self) -> PlanarState {
        PlanarState { a: 0.0, b: 1.0 / self.c_nu }
    }
    pub fn q_point(&self) -> PlanarState {
        PlanarState { a: 1.0, b: 1.0 }
    }
    /// Coefficient K of the forced node tail b − 1/c_ν ≈ K a².
    pub fn node_forcing(&self) -> f64 {
        (self.n + 1.0) / (self.n * (self.lambda2() - 2.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanarState {
    pub a: f64,
    pub b: f64,
}

impl PlanarState {
    pub fn dist(&self, o: &PlanarState) -> f64 {
        (self.a - o.a).hypot(self.b - o.b)
    }
    pub fn in_region(&self, slack: f64) -> bool {
        self.a >= -slack && self.a <= 1.0 + slack && self.a * self.a <= self.b + slack && self.b <= 1.0 + slack
    }
}

#[inline]
fn field(p: &PlanarParams, a: f64, b: f64) -> [f64; 2] {
    let k = p.alpha / (p.nu * p.n);
    [a * (1.0 - a * a / b), k * (p.c_nu * b - 1.0 - (p.n + 1.0) * p.nu * a * a / p.alpha)]
}

pub fn vector_field(p: &PlanarParams, s: PlanarState) -> Result<(f64, f64)> {
    if !(s.b > 0.0) {
        return Err(Error::Domain(format!("b must be > 0, got {}", s.b)));
    }
    let f = field(p, s.a, s.b);
    Ok((f[0], f[1]))
}

pub fn jacobian(p: &PlanarParams, s: PlanarState) -> [[f64; 2]; 2] {
    let (a, b) = (s.a, s.b);
    [
        [1.0 - 3.0 * a * a / b, a * a * a / (b * b)],
        [-2.0 * (p.n + 1.0) * a / p.n, p.alpha * p.c_nu / (p.n * p.nu)],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquilibriumKind {
    RepellingNode,
    Saddle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumInfo {
    pub point: PlanarState,
    pub eigenvalues: [f64; 2],
    /// Eigenvectors as (a, b) directions, in the order of `eigenvalues`.
    pub eigenvectors: [[f64; 2]; 2],
    pub kind: EquilibriumKind,
}

/// Eigenstructure at P and at Q. At Q the eigenvalues are ordered (λ₋, λ₊).
pub fn equilibria(p: &PlanarParams) -> (EquilibriumInfo, EquilibriumInfo) {
    let l2 = p.lambda2();
    let at_p = EquilibriumInfo {
        point: p.p_point(),
        eigenvalues: [1.0, l2],
        eigenvectors: [[1.0, 0.0], [0.0, 1.0]],
        kind: EquilibriumKind::RepellingNode,
    };
    let m = l2 - 2.0;
    let root = (m * m + 8.0 * p.alpha / (p.n * p.nu)).sqrt();
    let lp = 0.5 * (m + root);
    // product of the roots is −2α/(nν)
    let lm = -2.0 * p.alpha / (p.n * p.nu) / lp;
    let at_q = EquilibriumInfo {
        point: p.q_point(),
        eigenvalues: [lm, lp],
        eigenvectors: [[1.0, 2.0 + lm], [1.0, 2.0 + lp]],
        kind: EquilibriumKind::Saddle,
    };
    (at_p, at_q)
}

/// Sampled heteroclinic, parametrized by strictly increasing η.
#[derive(Debug, Clone, Serialize)]
pub struct OrbitPath {
    pub params: PlanarParams,
    pub eta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Cumulative shift applied to η by [`reparametrize`].
    pub eta0: f64,
    /// Node departure coefficient lim a(η)e^{−η} of the unshifted orbit.
    pub kappa1: Option<f64>,
    pub sigma0: Option<f64>,
    /// Seed offset actually used (after retries).
    pub eps: f64,
    pub tol: f64,
    /// Stable eigenvalue λ₋ at Q.
    pub lambda_minus: f64,
    pub accepted: usize,
    pub rejected: usize,
}

/// Shoot from Q back to P. On region exit the seed offset is reduced
/// tenfold, up to three times.
pub fn shoot_heteroclinic(p: &PlanarParams, eps: f64, tol: f64) -> Result<OrbitPath> {
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::InvalidParameter(format!("eps must lie in (0, 1e-3], got {eps}")));
    }
    if !(tol > 0.0 && tol < 1e-2) {
        return Err(Error::InvalidParameter(format!("tol must lie in (0, 1e-2), got {tol}")));
    }
    let mut e = eps;
    let mut last_err = None;
    for _ in 0..4 {
        match shoot_once(p, e, tol) {
            Err(err @ Error::RegionExit { .. }) => {
                last_err = Some(err);
                e /= 10.0;
            }
            other => return other,
        }
    }
    Err(last_err.unwrap())
}

fn shoot_once(p: &PlanarParams, eps: f64, tol: f64) -> Result<OrbitPath> {
    let (_, q) = equilibria(p);
    let r = q.eigenvectors[0];
    let norm = r[0].hypot(r[1]);
    // both components positive: stepping against r̂₋ moves into R
    let seed = [1.0 - eps * r[0] / norm, 1.0 - eps * r[1] / norm];
    let target = p.p_point();
    let pp = *p;
    let back = move |_s: f64, y: &[f64], d: &mut [f64]| {
        let f = field(&pp, y[0], y[1]);
        d[0] = -f[0];
        d[1] = -f[1];
    };
    let opts = OdeOptions { max_steps: 200_000, h_max: 0.25, ..OdeOptions::tol(SHOOT_RTOL, 1e-300) };
    let mut prev_a = seed[0];
    let mut reached = false;
    let traj = ode::integrate::<_, _, Error>(back, 0.0, &seed, 1e4, opts, |s, y| {
        let st = PlanarState { a: y[0], b: y[1] };
        if !st.in_region(1e-13) || !(y[0] < prev_a) {
            return Err(Error::RegionExit { a: y[0], b: y[1], eta: -s });
        }
        prev_a = y[0];
        if st.dist(&target) < tol {
            reached = true;
            return Ok(Flow::Stop);
        }
        Ok(Flow::Continue)
    })?;
    if !reached {
        return Err(Error::UnresolvedTail("backward orbit did not reach the node".into()));
    }
    let m = traj.len();
    let mut eta = Vec::with_capacity(m);
    let mut a = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    for i in (0..m).rev() {
        eta.push(-traj.t[i]);
        a.push(traj.y[i][0]);
        b.push(traj.y[i][1]);
    }
    Ok(OrbitPath {
        params: *p,
        eta,
        a,
        b,
        eta0: 0.0,
        kappa1: None,
        sigma0: None,
        eps,
        tol,
        lambda_minus: q.eigenvalues[0],
        accepted: traj.accepted,
        rejected: traj.rejected,
    })
}

/// Where a requested η falls relative to the sampled orbit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Inner,
    Resolved,
    Outer,
}

/// Tail fits near the node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailFits {
    /// Slope of ln a against η.
    pub lambda1: f64,
    /// Slope of ln |b − 1/c_ν| against η where that gap is resolved.
    pub b_slope: f64,
    /// Plateau of (b − 1/c_ν)/a².
    pub forcing: f64,
    /// Node eigenvalue implied by the forcing plateau, 2 + (n+1)/(nK).
    pub lambda2_from_forcing: f64,
}

impl OrbitPath {
    pub fn len(&self) -> usize {
        self.eta.len()
    }
    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }
    pub fn eta_range(&self) -> (f64, f64) {
        (self.eta[0], *self.eta.last().unwrap())
    }
    pub fn state(&self, i: usize) -> PlanarState {
        PlanarState { a: self.a[i], b: self.b[i] }
    }

    pub fn all_in_region(&self) -> bool {
        (0..self.len()).all(|i| self.state(i).in_region(1e-13))
    }

    pub fn a_strictly_increasing(&self) -> bool {
        self.a.windows(2).all(|w| w[1] > w[0])
    }

    /// Distance of the inner end to P.
    pub fn node_gap(&self) -> f64 {
        self.state(0).dist(&self.params.p_point())
    }

    pub fn segment(&self, eta: f64) -> Segment {
        let (lo, hi) = self.eta_range();
        if eta < lo {
            Segment::Inner
        } else if eta > hi {
            Segment::Outer
        } else {
            Segment::Resolved
        }
    }

    /// High-accuracy state at `eta`. Inside the sampled range the field is
    /// re-integrated from the nearest sample; beyond the saddle end the
    /// linearized stable manifold is used; beyond the node end the
    /// linearization at P with its forced quadratic tail.
    pub fn state_at(&self, eta: f64) -> PlanarState {
        let (lo, hi) = self.eta_range();
        let p = &self.params;
        if eta > hi {
            let s = self.state(self.len() - 1);
            let g = (self.lambda_minus * (eta - hi)).exp();
            return PlanarState { a: 1.0 + (s.a - 1.0) * g, b: 1.0 + (s.b - 1.0) * g };
        }
        if eta < lo {
            let s = self.state(0);
            let k = p.node_forcing();
            let a = s.a * (eta - lo).exp();
            let rest = s.b - 1.0 / p.c_nu - k * s.a * s.a;
            return PlanarState {
                a,
                b: 1.0 / p.c_nu + k * a * a + rest * (p.lambda2() * (eta - lo)).exp(),
            };
        }
        let i = ode::locate(&self.eta, eta);
        let j = if eta - self.eta[i] <= self.eta[i + 1] - eta { i } else { i + 1 };
        let d = eta - self.eta[j];
        if d == 0.0 {
            return self.state(j);
        }
        let steps = (d.abs() / reintegration_step(p)).ceil() as usize;
        let pp = *p;
        let f = move |_t: f64, y: &[f64], dy: &mut [f64]| {
            let v = field(&pp, y[0], y[1]);
            dy[0] = v[0];
            dy[1] = v[1];
        };
        let y = ode::dopri5_fixed(&f, self.eta[j], &[self.a[j], self.b[j]], eta, steps);
        PlanarState { a: y[0], b: y[1] }
    }

    /// Samples on the node tail: indices with a ≤ `a_max`, deepest first.
    fn tail(&self, a_max: f64) -> Vec<usize> {
        (0..self.len()).take_while(|&i| self.a[i] <= a_max).collect()
    }

    /// Plateau value of a(η)e^{−η} over the node tail and its relative
    /// variation.
    pub fn tail_plateau(&self) -> Result<(f64, f64)> {
        let idx = self.tail(1e-3);
        if idx.len() < 3 {
            return Err(Error::UnresolvedTail(format!(
                "only {} samples with a <= 1e-3; decrease tol",
                idx.len()
            )));
        }
        let vals: Vec<f64> = idx.iter().map(|&i| self.a[i] * (-self.eta[i]).exp()).collect();
        let k = vals[0];
        let (mn, mx) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let var = (mx - mn) / k;
        if !(k > 0.0) {
            return Err(Error::UnresolvedTail(format!("non-positive node coefficient {k}")));
        }
        if var > 1e-4 {
            return Err(Error::UnresolvedTail(format!("plateau varies by {var:.2e}")));
        }
        Ok((k, var))
    }

    /// Exponent fits over the last decade of the node tail.
    pub fn tail_fits(&self) -> Result<TailFits> {
        let amin = self.a[0];
        let mut idx = self.tail(10.0 * amin);
        if idx.len() < 3 {
            idx = (0..3.min(self.len())).collect();
        }
        let p = &self.params;
        let xs: Vec<f64> = idx.iter().map(|&i| self.eta[i]).collect();
        let la: Vec<f64> = idx.iter().map(|&i| self.a[i].ln()).collect();
        // the quadratic forcing is resolved only where b − 1/c_ν is well above round-off
        let fidx: Vec<usize> = (0..self.len()).filter(|&i| self.a[i] >= 1e-5 && self.a[i] <= 1e-2).collect();
        if fidx.len() < 3 {
            return Err(Error::UnresolvedTail("too few samples with 1e-5 <= a <= 1e-2".into()));
        }
        let xa: Vec<f64> = fidx.iter().map(|&i| self.a[i] * self.a[i]).collect();
        let ya: Vec<f64> = fidx.iter().map(|&i| (self.b[i] - 1.0 / p.c_nu) / (self.a[i] * self.a[i])).collect();
        let (k, _) = linear_fit(&xa, &ya);
        let xb: Vec<f64> = fidx.iter().map(|&i| self.eta[i]).collect();
        let lb: Vec<f64> = fidx.iter().map(|&i| (self.b[i] - 1.0 / p.c_nu).abs().ln()).collect();
        Ok(TailFits {
            lambda1: linear_fit(&xs, &la).1,
            b_slope: linear_fit(&xb, &lb).1,
            forcing: k,
            lambda2_from_forcing: 2.0 + (p.n + 1.0) / (p.n * k),
        })
    }

    /// Resample b as a function of a on a fixed a-grid.
    pub fn b_of_a(&self, a_grid: &[f64]) -> Vec<f64> {
        a_grid
            .iter()
            .map(|&a| {
                // a is strictly increasing along the orbit, so bisect in η
                let (mut lo, mut hi) = self.eta_range();
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if self.state_at(mid).a < a {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                self.state_at(0.5 * (lo + hi)).b
            })
            .collect()
    }
}

/// Least-squares line y = c + m x; returns (c, m).
pub(crate) fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let m = sxy / sxx;
    (my - m * mx, m)
}

/// Shift η so that a(η) ~ e^{η}/Σ₀ at the node: κ₁e^{η₀} = 1/Σ₀.
pub fn reparametrize(path: &OrbitPath, sigma0: f64) -> Result<OrbitPath> {
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma0 must be > 0, got {sigma0}")));
    }
    let (plateau, _) = path.tail_plateau()?;
    let shift = -(plateau * sigma0).ln();
    let mut out = path.clone();
    for e in &mut out.eta {
        *e -= shift;
    }
    out.kappa1 = Some(plateau * (-path.eta0).exp());
    out.eta0 = path.eta0 + shift;
    out.sigma0 = Some(sigma0);
    Ok(out)
}
