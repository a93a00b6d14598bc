//! Method-of-lines solver for the full nonlinear problem on [0, 1]:
//! v_t = σ_x, θ_t = κθ_xx + σu, σ = e^{−αθ}uⁿ, u = v_x, with v(0)=0,
//! v(1)=1 and adiabatic ends θ_x = 0.
//!
//! The grid is staggered: v and θ live on the nodes x_i = ih, while u, σ
//! and the heating σu live on the cell centres x_{i+1/2}. Then u is a
//! compact difference of v, the momentum update is the divergence of a
//! cell-centred flux and ∑ h u_{i+1/2} = v_N − v_0 holds exactly.

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::MonotoneCubic;
use crate::linear_stability::{energy_certificate, mode_eigen, mode_eigenvector};
use crate::model::{self, MaterialParams};
use crate::ode::{Dopri5, OdeError, OdeOptions};
use crate::stiff::{BandMatrix, BandedSystem, Rosenbrock23, RosenbrockOptions};

/// Default tolerances of the explicit scheme.
pub const EXPLICIT_RTOL: f64 = 1e-8;
pub const EXPLICIT_ATOL: f64 = 1e-8;
/// Default tolerances of the implicit scheme.
pub const IMPLICIT_RTOL: f64 = 1e-6;
pub const IMPLICIT_ATOL: f64 = 1e-8;
/// Tolerance of the ∫u = v(1) − v(0) assertion.
pub const CONSERVATION_TOL: f64 = 1e-12;

/// Uniform grid on [0, 1] with `n` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid1D {
    n: usize,
}

impl Grid1D {
    pub fn new(n: usize) -> Result<Self> {
        if n < 16 {
            return Err(Error::InvalidParameter(format!("grid needs at least 16 cells, got {n}")));
        }
        Ok(Self { n })
    }
    pub fn cells(&self) -> usize {
        self.n
    }
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }
    pub fn node(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }
    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.node(i)).collect()
    }
    pub fn centre(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.n as f64
    }
    pub fn centres(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.centre(i)).collect()
    }
}

/// Velocity and temperature at the nodes at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldState {
    pub t: f64,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
}

impl FieldState {
    pub fn from_fn(grid: &Grid1D, t: f64, v: impl Fn(f64) -> f64, theta: impl Fn(f64) -> f64) -> Self {
        let x = grid.nodes();
        Self { t, v: x.iter().map(|&x| v(x)).collect(), theta: x.iter().map(|&x| theta(x)).collect() }
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.v.len().saturating_sub(1))
    }

    /// Strain rate at the cell centres.
    pub fn u_centres(&self) -> Vec<f64> {
        let n = self.v.len() - 1;
        self.v.windows(2).map(|w| (w[1] - w[0]) * n as f64).collect()
    }

    /// Strain rate at the nodes: averages inside, one-sided second-order
    /// extrapolation at the ends.
    pub fn u_nodes(&self) -> Vec<f64> {
        let uc = self.u_centres();
        let n = uc.len();
        let mut u = Vec::with_capacity(n + 1);
        u.push(1.5 * uc[0] - 0.5 * uc[1]);
        u.extend(uc.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        u.push(1.5 * uc[n - 1] - 0.5 * uc[n - 2]);
        u
    }

    /// Stress at the nodes from the constitutive law.
    pub fn sigma_nodes(&self, params: &MaterialParams) -> Vec<f64> {
        self.u_nodes().iter().zip(&self.theta).map(|(&u, &th)| stress(params, th, u)).collect()
    }

    /// Stress at the cell centres.
    pub fn sigma_centres(&self, params: &MaterialParams) -> Vec<f64> {
        let u = self.u_centres();
        u.iter()
            .enumerate()
            .map(|(i, &u)| stress(params, 0.5 * (self.theta[i] + self.theta[i + 1]), u))
            .collect()
    }

    /// ∫₀¹ u dx by the midpoint rule on the cells (equals v(1) − v(0)).
    pub fn integral_u(&self) -> f64 {
        let n = self.v.len() - 1;
        self.u_centres().iter().sum::<f64>() / n as f64
    }

    /// One-sided second-order σ_x at the two ends.
    pub fn stress_flux(&self, params: &MaterialParams) -> (f64, f64) {
        let s = self.sigma_centres(params);
        let n = s.len();
        let h = 1.0 / n as f64;
        let left = (-2.0 * s[0] + 3.0 * s[1] - s[2]) / h;
        let right = (2.0 * s[n - 1] - 3.0 * s[n - 2] + s[n - 3]) / h;
        (left, right)
    }
}

/// σ = e^{−αθ}|u|ⁿ sign(u); the odd extension keeps trial stages finite
/// when a stage overshoots into u < 0, which the step check then reports.
#[inline]
fn stress(params: &MaterialParams, theta: f64, u: f64) -> f64 {
    let m = if params.n() == 0.0 { 1.0 } else { u.abs().powf(params.n()) };
    (-params.alpha() * theta).exp() * m.copysign(u)
}

pub type BoundaryFn = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;
pub type SourceFn = Arc<dyn Fn(f64, f64) -> (f64, f64) + Send + Sync>;

/// Semi-discrete system. Unknowns are interleaved as
/// [θ₀, v₁, θ₁, …, v_{N−1}, θ_{N−1}, θ_N] so the Jacobian is banded.
#[derive(Clone)]
pub struct Problem {
    params: MaterialParams,
    grid: Grid1D,
    boundary: Option<BoundaryFn>,
    source: Option<SourceFn>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("params", &self.params)
            .field("grid", &self.grid)
            .field("boundary", &self.boundary.is_some())
            .field("source", &self.source.is_some())
            .finish()
    }
}

/// Half bandwidth of the Jacobian; the extrapolated boundary heating
/// reaches one entry further than the interior stencil.
pub const JACOBIAN_BAND: usize = 4;

impl Problem {
    pub fn new(params: MaterialParams, grid: Grid1D) -> Self {
        Self { params, grid, boundary: None, source: None }
    }

    /// Time-dependent Dirichlet velocities (v(0,t), v(1,t)).
    pub fn with_boundary(mut self, b: BoundaryFn) -> Self {
        self.boundary = Some(b);
        self
    }

    /// Additive forcing (f_v, f_θ)(t, x) at the nodes.
    pub fn with_source(mut self, s: SourceFn) -> Self {
        self.source = Some(s);
        self
    }

    pub fn params(&self) -> &MaterialParams {
        &self.params
    }
    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }
    pub fn non_autonomous(&self) -> bool {
        self.boundary.is_some() || self.source.is_some()
    }

    pub fn boundary_at(&self, t: f64) -> (f64, f64) {
        self.boundary.as_ref().map_or((0.0, 1.0), |b| b(t))
    }

    pub fn dim(&self) -> usize {
        2 * self.grid.n
    }

    pub fn pack(&self, s: &FieldState) -> Vec<f64> {
        let n = self.grid.n;
        let mut y = vec![0.0; 2 * n];
        y[0] = s.theta[0];
        for i in 1..n {
            y[2 * i - 1] = s.v[i];
            y[2 * i] = s.theta[i];
        }
        y[2 * n - 1] = s.theta[n];
        y
    }

    pub fn unpack(&self, t: f64, y: &[f64]) -> FieldState {
        let n = self.grid.n;
        let (vl, vr) = self.boundary_at(t);
        let mut v = vec![0.0; n + 1];
        let mut theta = vec![0.0; n + 1];
        v[0] = vl;
        v[n] = vr;
        theta[0] = y[0];
        for i in 1..n {
            v[i] = y[2 * i - 1];
            theta[i] = y[2 * i];
        }
        theta[n] = y[2 * n - 1];
        FieldState { t, v, theta }
    }

    #[inline]
    fn v_of(y: &[f64], i: usize, n: usize, bc: (f64, f64)) -> f64 {
        if i == 0 {
            bc.0
        } else if i == n {
            bc.1
        } else {
            y[2 * i - 1]
        }
    }

    #[inline]
    fn theta_of(y: &[f64], i: usize, n: usize) -> f64 {
        if i == n {
            y[2 * n - 1]
        } else {
            y[2 * i]
        }
    }

    /// Right-hand side of the semi-discrete system.
    pub fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.grid.n;
        let inv_h = n as f64;
        let kappa = self.params.kappa();
        let bc = self.boundary_at(t);
        let mut sig = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            let u = (Self::v_of(y, i + 1, n, bc) - Self::v_of(y, i, n, bc)) * inv_h;
            let th = 0.5 * (Self::theta_of(y, i, n) + Self::theta_of(y, i + 1, n));
            let s = stress(&self.params, th, u);
            sig[i] = s;
            q[i] = s * u;
        }
        let inv_h2 = inv_h * inv_h;
        for i in 0..=n {
            let th = Self::theta_of(y, i, n);
            let (lap, heat) = if i == 0 {
                (2.0 * (Self::theta_of(y, 1, n) - th) * inv_h2, q[0] + 0.5 * (q[0] - q[1]))
            } else if i == n {
                (2.0 * (Self::theta_of(y, n - 1, n) - th) * inv_h2, q[n - 1] + 0.5 * (q[n - 1] - q[n - 2]))
            } else {
                (
                    (Self::theta_of(y, i - 1, n) - 2.0 * th + Self::theta_of(y, i + 1, n)) * inv_h2,
                    0.5 * (q[i - 1] + q[i]),
                )
            };
            let (fv, ft) = self.source.as_ref().map_or((0.0, 0.0), |s| s(t, self.grid.node(i)));
            let k = if i == n { 2 * n - 1 } else { 2 * i };
            dy[k] = kappa * lap + heat + ft;
            if i > 0 && i < n {
                dy[2 * i - 1] = (sig[i] - sig[i - 1]) * inv_h + fv;
            }
        }
    }
}

impl BandedSystem for Problem {
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        Problem::rhs(self, t, y, dy)
    }

    fn jacobian(&self, t: f64, y: &[f64], jac: &mut BandMatrix) -> bool {
        let n = self.grid.n;
        let inv_h = n as f64;
        let (alpha, pn, kappa) = (self.params.alpha(), self.params.n(), self.params.kappa());
        let bc = self.boundary_at(t);
        let col_v = |j: usize| (j > 0 && j < n).then(|| 2 * j - 1);
        let col_t = |j: usize| if j == n { 2 * n - 1 } else { 2 * j };
        // per cell: ∂σ/∂u, ∂σ/∂θ_side, ∂q/∂u, ∂q/∂θ_side
        let mut cell = vec![[0.0; 4]; n];
        for (i, c) in cell.iter_mut().enumerate() {
            let u = (Self::v_of(y, i + 1, n, bc) - Self::v_of(y, i, n, bc)) * inv_h;
            let th = 0.5 * (Self::theta_of(y, i, n) + Self::theta_of(y, i + 1, n));
            let s = stress(&self.params, th, u);
            let ds_du = if pn == 0.0 { 0.0 } else { pn * s / u };
            *c = [ds_du, -0.5 * alpha * s, s + u * ds_du, -0.5 * alpha * s * u];
        }
        // add w·∂(cell quantity)/∂(unknowns) to row r; k = 0 for σ, 2 for q
        let add = |jac: &mut BandMatrix, r: usize, i: usize, k: usize, w: f64| {
            let c = cell[i];
            if let Some(j) = col_v(i) {
                jac.set(r, j, jac.get(r, j) - w * c[k] * inv_h);
            }
            if let Some(j) = col_v(i + 1) {
                jac.set(r, j, jac.get(r, j) + w * c[k] * inv_h);
            }
            for j in [col_t(i), col_t(i + 1)] {
                jac.set(r, j, jac.get(r, j) + w * c[k + 1]);
            }
        };
        let inv_h2 = inv_h * inv_h;
        for i in 0..=n {
            let r = col_t(i);
            if i == 0 {
                add(jac, r, 0, 2, 1.5);
                add(jac, r, 1, 2, -0.5);
                jac.set(r, r, jac.get(r, r) - 2.0 * kappa * inv_h2);
                jac.set(r, col_t(1), jac.get(r, col_t(1)) + 2.0 * kappa * inv_h2);
            } else if i == n {
                add(jac, r, n - 1, 2, 1.5);
                add(jac, r, n - 2, 2, -0.5);
                jac.set(r, r, jac.get(r, r) - 2.0 * kappa * inv_h2);
                jac.set(r, col_t(n - 1), jac.get(r, col_t(n - 1)) + 2.0 * kappa * inv_h2);
            } else {
                add(jac, r, i - 1, 2, 0.5);
                add(jac, r, i, 2, 0.5);
                jac.set(r, r, jac.get(r, r) - 2.0 * kappa * inv_h2);
                for j in [col_t(i - 1), col_t(i + 1)] {
                    jac.set(r, j, jac.get(r, j) + kappa * inv_h2);
                }
                let rv = 2 * i - 1;
                add(jac, rv, i, 0, inv_h);
                add(jac, rv, i - 1, 0, -inv_h);
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Embedded Dormand–Prince (4,5) with PI step control.
    #[default]
    Explicit,
    /// Linearly implicit Rosenbrock (2,3) with a banded Jacobian.
    Implicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerances {
    pub fn default_for(scheme: Scheme) -> Self {
        match scheme {
            Scheme::Explicit => Self { rtol: EXPLICIT_RTOL, atol: EXPLICIT_ATOL },
            Scheme::Implicit => Self { rtol: IMPLICIT_RTOL, atol: IMPLICIT_ATOL },
        }
    }
}

#[derive(Debug, Clone)]
enum Stepper {
    Explicit(Dopri5),
    Implicit(Rosenbrock23),
}

/// One simulation: owns its problem and integrator state.
#[derive(Debug, Clone)]
pub struct Simulator {
    problem: Problem,
    stepper: Stepper,
}

impl Simulator {
    pub fn new(problem: Problem, state: &FieldState, scheme: Scheme, tol: Tolerances) -> Result<Self> {
        if state.v.len() != problem.grid.n + 1 || state.theta.len() != problem.grid.n + 1 {
            return Err(Error::InvalidParameter("state does not match the grid".into()));
        }
        let (vl, vr) = problem.boundary_at(state.t);
        if (state.v[0] - vl).abs() > 1e-12 || (state.v[problem.grid.n] - vr).abs() > 1e-12 {
            return Err(Error::InvalidParameter("initial velocity violates the boundary values".into()));
        }
        if !(tol.rtol > 0.0 && tol.atol > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        check_positive(state)?;
        let y0 = problem.pack(state);
        let stepper = match scheme {
            Scheme::Explicit => {
                let mut f = |t: f64, y: &[f64], d: &mut [f64]| problem.rhs(t, y, d);
                let opts = OdeOptions { rtol: tol.rtol, atol: tol.atol, max_steps: 50_000_000, ..Default::default() };
                Stepper::Explicit(Dopri5::new(&mut f, state.t, &y0, opts))
            }
            Scheme::Implicit => {
                let opts = RosenbrockOptions {
                    rtol: tol.rtol,
                    atol: tol.atol,
                    h_init: 1e-3 * problem.grid.h(),
                    band: JACOBIAN_BAND,
                    non_autonomous: problem.non_autonomous(),
                    ..Default::default()
                };
                Stepper::Implicit(Rosenbrock23::new(&problem, state.t, &y0, opts))
            }
        };
        Ok(Self { problem, stepper })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn t(&self) -> f64 {
        match &self.stepper {
            Stepper::Explicit(s) => s.t(),
            Stepper::Implicit(s) => s.t(),
        }
    }

    pub fn state(&self) -> FieldState {
        let (t, y) = match &self.stepper {
            Stepper::Explicit(s) => (s.t(), s.y()),
            Stepper::Implicit(s) => (s.t(), s.y()),
        };
        self.problem.unpack(t, y)
    }

    /// (accepted, rejected, right-hand-side evaluations).
    pub fn stats(&self) -> (usize, usize, usize) {
        match &self.stepper {
            Stepper::Explicit(s) => (s.accepted(), s.rejected(), s.evals()),
            Stepper::Implicit(s) => (s.accepted(), s.rejected(), s.evals()),
        }
    }

    /// One accepted step, not past `t_limit`; checks u > 0 and ∫u afterwards.
    pub fn step(&mut self, t_limit: f64) -> Result<f64> {
        let problem = &self.problem;
        let h = match &mut self.stepper {
            Stepper::Explicit(s) => {
                let mut f = |t: f64, y: &[f64], d: &mut [f64]| problem.rhs(t, y, d);
                s.step(&mut f, t_limit).map_err(|e| match e {
                    OdeError::StepUnderflow { t, h } => Error::StepUnderflow { t, h },
                    e => Error::Integrator(e),
                })?
            }
            Stepper::Implicit(s) => s.step(problem, t_limit)?,
        };
        let st = self.state();
        check_positive(&st)?;
        let (vl, vr) = self.problem.boundary_at(st.t);
        let drift = (st.integral_u() - (vr - vl)).abs();
        if drift > CONSERVATION_TOL * (vr - vl).abs().max(1.0) {
            return Err(Error::Domain(format!("strain-rate integral drifted by {drift:.3e} at t={}", st.t)));
        }
        Ok(h)
    }

    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        while self.t() < t {
            self.step(t)?;
        }
        Ok(())
    }
}

fn check_positive(s: &FieldState) -> Result<()> {
    let g = s.v.len() - 1;
    for (i, &u) in s.u_centres().iter().enumerate() {
        if !(u > 0.0) {
            return Err(Error::Positivity { t: s.t, x: (i as f64 + 0.5) / g as f64, u });
        }
    }
    Ok(())
}

/// Initial data for [`run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialData {
    /// v = x, θ = θ₀.
    Uniform,
    /// v = x, θ = θ₀ + amplitude·exp(−((x − center)/width)²), plus optional
    /// seeded uniform noise in [−noise, noise] at the interior nodes.
    GaussianBump {
        center: f64,
        width: f64,
        amplitude: f64,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Uniform shear plus `amplitude`·cos(jπx) in θ along the growing
    /// eigenvector of mode j, with the diffusion frozen at t = 0.
    Mode { j: usize, amplitude: f64 },
    /// Node samples, resampled onto the grid by monotone cubic interpolation.
    Samples { x: Vec<f64>, v: Vec<f64>, theta: Vec<f64> },
    /// CSV file with columns x, v, theta (lines starting with `#` skipped).
    File { path: PathBuf },
}

impl InitialData {
    pub fn state(&self, params: &MaterialParams, grid: &Grid1D) -> Result<FieldState> {
        let th0 = params.theta0();
        match self {
            InitialData::Uniform => Ok(FieldState::from_fn(grid, 0.0, |x| x, |_| th0)),
            InitialData::GaussianBump { center, width, amplitude, noise, seed } => {
                if !(*width > 0.0) || !width.is_finite() {
                    return Err(Error::InvalidParameter(format!("bump width must be > 0, got {width}")));
                }
                if !(*noise >= 0.0) || !amplitude.is_finite() || !center.is_finite() {
                    return Err(Error::InvalidParameter("bump center/amplitude/noise must be finite, noise >= 0".into()));
                }
                let mut s =
                    FieldState::from_fn(grid, 0.0, |x| x, |x| th0 + amplitude * (-((x - center) / width).powi(2)).exp());
                if *noise > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                    for th in s.theta.iter_mut() {
                        *th += rng.gen_range(-*noise..=*noise);
                    }
                }
                Ok(s)
            }
            InitialData::Mode { j, amplitude } => {
                if *j == 0 {
                    return Err(Error::InvalidParameter("mode index must be >= 1".into()));
                }
                let k = params.kappa() * params.c0();
                let e = mode_eigen(params, k, *j)?;
                let ev = mode_eigenvector(params, k, *j, e.lambda_plus);
                if ev[1] == 0.0 {
                    return Err(Error::Domain("growing eigenvector has no temperature component".into()));
                }
                let ua = amplitude * ev[0] / ev[1];
                let w = *j as f64 * PI;
                Ok(FieldState::from_fn(
                    grid,
                    0.0,
                    |x| x + ua * (w * x).sin() / w,
                    |x| th0 + amplitude * (w * x).cos(),
                ))
            }
            InitialData::Samples { x, v, theta } => samples_state(grid, x, v, theta),
            InitialData::File { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                let (x, v, theta) = parse_samples(&text)?;
                samples_state(grid, &x, &v, &theta)
            }
        }
    }
}

fn samples_state(grid: &Grid1D, x: &[f64], v: &[f64], theta: &[f64]) -> Result<FieldState> {
    if x.len() != v.len() || x.len() != theta.len() {
        return Err(Error::InvalidParameter("sample columns differ in length".into()));
    }
    if x.len() < 2 || x[0] > 1e-12 || x[x.len() - 1] < 1.0 - 1e-12 {
        return Err(Error::InsufficientRange("samples must cover [0, 1]".into()));
    }
    let vi = MonotoneCubic::new(x, v)?;
    let ti = MonotoneCubic::new(x, theta)?;
    let mut s = FieldState::from_fn(grid, 0.0, |x| vi.eval(x), |x| ti.eval(x));
    if (s.v[0]).abs() > 1e-9 || (s.v[grid.n] - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter("sampled velocity must satisfy v(0)=0, v(1)=1".into()));
    }
    s.v[0] = 0.0;
    s.v[grid.n] = 1.0;
    Ok(s)
}

/// Parse `x,v,theta` rows; a non-numeric first row is taken as a header.
pub fn parse_samples(text: &str) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (mut x, mut v, mut th) = (Vec::new(), Vec::new(), Vec::new());
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let nums: std::result::Result<Vec<f64>, _> = cols.iter().map(|c| c.parse::<f64>()).collect();
        match nums {
            Ok(n) if n.len() >= 3 => {
                x.push(n[0]);
                v.push(n[1]);
                th.push(n[2]);
            }
            Err(_) if x.is_empty() => continue,
            _ => return Err(Error::Io(format!("line {}: expected x,v,theta", ln + 1))),
        }
    }
    Ok((x, v, th))
}

/// Diagnostics of one time level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticSample {
    pub t: f64,
    /// max θ − min θ.
    pub inhomogeneity: f64,
    pub max_u: f64,
    /// 2∫(u − 1)cos(πx).
    pub mode1_u: f64,
    /// 2∫θ cos(πx).
    pub mode1_theta: f64,
    /// ∫ (A/2)(u − 1)² + ½(θ − θ_s)².
    pub energy: f64,
}

pub fn diagnostics(params: &MaterialParams, s: &FieldState, weight: f64) -> Result<DiagnosticSample> {
    let n = s.v.len() - 1;
    let h = 1.0 / n as f64;
    let uc = s.u_centres();
    let theta_s = model::uniform_shear(params, s.t)?.theta_s;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &t in &s.theta {
        lo = lo.min(t);
        hi = hi.max(t);
    }
    let mut mode_u = 0.0;
    let mut e_u = 0.0;
    for (i, &u) in uc.iter().enumerate() {
        let du = u - 1.0;
        mode_u += du * (PI * (i as f64 + 0.5) * h).cos();
        e_u += du * du;
    }
    let mut mode_t = 0.0;
    let mut e_t = 0.0;
    for (i, &th) in s.theta.iter().enumerate() {
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        mode_t += w * th * (PI * i as f64 * h).cos();
        let d = th - theta_s;
        e_t += w * d * d;
    }
    Ok(DiagnosticSample {
        t: s.t,
        inhomogeneity: hi - lo,
        max_u: uc.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        mode1_u: 2.0 * h * mode_u,
        mode1_theta: 2.0 * h * mode_t,
        energy: h * (0.5 * weight * e_u + 0.5 * e_t),
    })
}

/// Configuration of [`run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub theta0: f64,
    pub cells: usize,
    pub initial: InitialData,
    pub t_end: f64,
    /// Spacing of the diagnostics samples.
    pub diag_every: f64,
    /// Spacing of the field snapshots; `None` stores only t = 0 and t_end.
    #[serde(default)]
    pub snapshot_every: Option<f64>,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub tolerances: Option<Tolerances>,
    /// Weight A on (u − 1)² in the energy; defaults to the certificate
    /// weight when κ > 0 and n > 0, else 1.
    #[serde(default)]
    pub energy_weight: Option<f64>,
}

impl SimConfig {
    pub fn params(&self) -> Result<MaterialParams> {
        MaterialParams::new(self.n, self.alpha, self.kappa, self.theta0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_end must be > 0, got {}", self.t_end)));
        }
        if !(self.diag_every > 0.0) {
            return Err(Error::InvalidParameter("diag_every must be > 0".into()));
        }
        if let Some(s) = self.snapshot_every {
            if !(s > 0.0) {
                return Err(Error::InvalidParameter("snapshot_every must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Field values at the nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Snapshot {
    pub fn of(params: &MaterialParams, s: &FieldState) -> Self {
        let n = s.v.len() - 1;
        Self {
            t: s.t,
            x: (0..=n).map(|i| i as f64 / n as f64).collect(),
            v: s.v.clone(),
            u: s.u_nodes(),
            theta: s.theta.clone(),
            sigma: s.sigma_nodes(params),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub diagnostics: Vec<DiagnosticSample>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: FieldState,
    pub energy_weight: f64,
    /// Certificate time T after which the weighted energy cannot grow.
    pub certificate_time: Option<f64>,
    pub accepted: usize,
    pub rejected: usize,
    pub evals: usize,
    /// Error that stopped the run early; the data above run up to it.
    #[serde(skip)]
    pub aborted: Option<Error>,
}

/// Output times on a cadence, always ending exactly at `t_end`.
fn cadence(every: f64, t_end: f64) -> Vec<f64> {
    let m = (t_end / every * (1.0 - 1e-12)).floor() as usize;
    let mut v: Vec<f64> = (1..=m).map(|k| k as f64 * every).collect();
    v.push(t_end);
    v
}

/// Run a configuration, keeping everything computed before a failure.
pub fn run_partial(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let params = config.params()?;
    let grid = Grid1D::new(config.cells)?;
    let state0 = config.initial.state(&params, &grid)?;
    let cert = energy_certificate(&params).ok();
    let weight = config.energy_weight.or(cert.map(|c| c.a)).unwrap_or(1.0);
    let tol = config.tolerances.unwrap_or(Tolerances::default_for(config.scheme));
    let mut sim = Simulator::new(Problem::new(params, grid), &state0, config.scheme, tol)?;

    let diag_t = cadence(config.diag_every, config.t_end);
    let snap_t = config.snapshot_every.map_or(vec![config.t_end], |e| cadence(e, config.t_end));
    let mut events: Vec<f64> = diag_t.iter().chain(&snap_t).cloned().collect();
    events.sort_by(f64::total_cmp);
    events.dedup();

    let mut diags = vec![diagnostics(&params, &state0, weight)?];
    let mut snaps = vec![Snapshot::of(&params, &state0)];
    let (mut di, mut si) = (0, 0);
    let mut aborted = None;
    'outer: for &te in &events {
        while sim.t() < te {
            if let Err(e) = sim.step(te) {
                aborted = Some(e);
                break 'outer;
            }
        }
        let st = sim.state();
        if di < diag_t.len() && diag_t[di] == te {
            diags.push(diagnostics(&params, &st, weight)?);
            di += 1;
        }
        if si < snap_t.len() && snap_t[si] == te {
            snaps.push(Snapshot::of(&params, &st));
            si += 1;
        }
    }
    let (accepted, rejected, evals) = sim.stats();
    Ok(SimResult {
        config: config.clone(),
        diagnostics: diags,
        snapshots: snaps,
        final_state: sim.state(),
        energy_weight: weight,
        certificate_time: cert.map(|c| c.t),
        accepted,
        rejected,
        evals,
        aborted,
    })
}

/// Run a configuration; failures during time stepping are returned as errors.
pub fn run(config: &SimConfig) -> Result<SimResult> {
    let mut r = run_partial(config)?;
    match r.aborted.take() {
        Some(e) => Err(e),
        None => Ok(r),
    }
}

/// Independent runs in parallel; results keep the input order.
pub fn run_many(configs: &[SimConfig]) -> Vec<Result<SimResult>> {
    configs.par_iter().map(run).collect()
}

/// Least-squares slope of ln|mode1_theta| against the rescaled time over the
/// samples up to the first e-fold of the initial amplitude.
pub fn first_efold_growth(params: &MaterialParams, diags: &[DiagnosticSample]) -> Result<f64> {
    let a0 = diags.first().map(|d| d.mode1_theta.abs()).unwrap_or(0.0);
    if !(a0 > 0.0) {
        return Err(Error::InsufficientRange("no initial mode amplitude".into()));
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for d in diags {
        let a = d.mode1_theta.abs();
        x.push(model::tau_of_t(params, d.t)?);
        y.push(a.ln());
        if a >= a0 * std::f64::consts::E {
            break;
        }
    }
    if x.len() < 3 || y.last().unwrap() - y[0] < 1.0 - 1e-9 {
        return Err(Error::InsufficientRange("run ended before one e-fold".into()));
    }
    Ok(crate::orbit::linear_fit(&x, &y).1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fig2_like() -> MaterialParams {
        MaterialParams::new(0.05, 0.5, 0.5, 1.0).unwrap()
    }

    #[test]
    fn grid_validates() {
        assert!(Grid1D::new(8).is_err());
        let g = Grid1D::new(16).unwrap();
        assert_eq!(g.nodes().len(), 17);
        assert_relative_eq!(g.centre(0), 1.0 / 32.0);
    }

    #[test]
    fn pack_round_trip() {
        let g = Grid1D::new(20).unwrap();
        let p = Problem::new(fig2_like(), g);
        let s = FieldState::from_fn(&g, 0.0, |x| x + 0.01 * (PI * x).sin(), |x| 1.0 + x * x);
        assert_eq!(p.unpack(0.0, &p.pack(&s)), s);
    }

    #[test]
    fn uniform_shear_is_a_fixed_point_of_the_discretisation() {
        let mp = fig2_like();
        let g = Grid1D::new(32).unwrap();
        let p = Problem::new(mp, g);
        let s = FieldState::from_fn(&g, 0.0, |x| x, |_| 1.0);
        let y = p.pack(&s);
        let mut d = vec![0.0; y.len()];
        p.rhs(0.0, &y, &mut d);
        let sig = (-0.5f64).exp();
        for i in 1..32 {
            assert_eq!(d[2 * i - 1], 0.0);
        }
        for i in 0..=32 {
            let k = if i == 32 { 63 } else { 2 * i };
            assert_relative_eq!(d[k], sig, max_relative = 1e-15);
        }
    }

    #[test]
    fn jacobian_is_banded_and_matches_differences() {
        let mp = fig2_like();
        let g = Grid1D::new(16).unwrap();
        let p = Problem::new(mp, g);
        let s = FieldState::from_fn(&g, 0.0, |x| x + 0.05 * (PI * x).sin(), |x| 1.0 + 0.1 * (3.0 * x).cos());
        let y = p.pack(&s);
        let m = y.len();
        let mut f0 = vec![0.0; m];
        p.rhs(0.0, &y, &mut f0);
        let mut jac = BandMatrix::zeros(m, JACOBIAN_BAND, JACOBIAN_BAND);
        assert!(BandedSystem::jacobian(&p, 0.0, &y, &mut jac));
        for j in 0..m {
            let eps = 1e-6;
            let (mut yp, mut ym) = (y.clone(), y.clone());
            yp[j] += eps;
            ym[j] -= eps;
            let (mut fp, mut fm) = (vec![0.0; m], vec![0.0; m]);
            p.rhs(0.0, &yp, &mut fp);
            p.rhs(0.0, &ym, &mut fm);
            for i in 0..m {
                let d = (fp[i] - fm[i]) / (2.0 * eps);
                if d != 0.0 {
                    assert!((i as i64 - j as i64).abs() <= JACOBIAN_BAND as i64, "({i},{j})");
                    let a = jac.get(i, j);
                    assert!((a - d).abs() <= 1e-6 * d.abs().max(1.0), "({i},{j}) {a} {d}");
                } else {
                    assert_eq!(jac.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn tracks_uniform_shear_both_schemes() {
        let mp = fig2_like();
        for scheme in [Scheme::Explicit, Scheme::Implicit] {
            let g = Grid1D::new(32).unwrap();
            let s0 = InitialData::Uniform.state(&mp, &g).unwrap();
            let mut sim = Simulator::new(Problem::new(mp, g), &s0, scheme, Tolerances::default_for(scheme)).unwrap();
            sim.advance_to(5.0).unwrap();
            let st = sim.state();
            let exact = model::uniform_shear(&mp, 5.0).unwrap().theta_s;
            let tol = if scheme == Scheme::Explicit { 1e-8 } else { 5e-5 };
            for th in &st.theta {
                assert!((th - exact).abs() < tol, "{scheme:?} {th} {exact}");
            }
            assert_relative_eq!(st.integral_u(), 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn zero_amplitude_bump_is_uniform_shear() {
        let cfg = SimConfig {
            n: 0.05,
            alpha: 0.5,
            kappa: 0.5,
            theta0: 1.0,
            cells: 32,
            initial: InitialData::GaussianBump { center: 0.5, width: 0.1, amplitude: 0.0, noise: 0.0, seed: 0 },
            t_end: 2.0,
            diag_every: 0.5,
            snapshot_every: None,
            scheme: Scheme::Implicit,
            tolerances: None,
            energy_weight: None,
        };
        let r = run(&cfg).unwrap();
        assert_eq!(r.diagnostics.len(), 5);
        for d in &r.diagnostics {
            assert!(d.inhomogeneity < 1e-13, "{d:?}");
            assert!((d.max_u - 1.0).abs() < 1e-13);
            assert!(d.mode1_u.abs() < 1e-13 && d.mode1_theta.abs() < 1e-13);
            assert!(d.energy < 1e-10, "{d:?}");
        }
    }

    #[test]
    fn positivity_failure_is_reported() {
        let g = Grid1D::new(16).unwrap();
        let s = FieldState::from_fn(&g, 0.0, |x| x - 0.3 * (2.0 * PI * x).sin(), |_| 0.0);
        let mp = MaterialParams::new(0.1, 0.5, 0.0, 0.0).unwrap();
        let e = Simulator::new(Problem::new(mp, g), &s, Scheme::Explicit, Tolerances::default_for(Scheme::Explicit));
        assert!(matches!(e, Err(Error::Positivity { .. })));
    }

    #[test]
    fn samples_and_file_parsing() {
        let text = "# comment\nx,v,theta\n0,0,1\n0.5,0.5,1.2\n1,1,1\n";
        let (x, v, t) = parse_samples(text).unwrap();
        assert_eq!(x, vec![0.0, 0.5, 1.0]);
        let g = Grid1D::new(16).unwrap();
        let s = samples_state(&g, &x, &v, &t).unwrap();
        assert_relative_eq!(s.theta[8], 1.2);
        assert!(samples_state(&g, &x[..2], &v[..2], &t[..2]).is_err());
        assert!(parse_samples("0,0\n").is_err());
    }

    #[test]
    fn cadence_ends_at_t_end() {
        assert_eq!(cadence(0.5, 1.2), vec![0.5, 1.0, 1.2]);
        assert_eq!(cadence(0.5, 1.0), vec![0.5, 1.0]);
    }

    #[test]
    fn bump_noise_is_seeded() {
        let mp = fig2_like();
        let g = Grid1D::new(32).unwrap();
        let d = |seed| InitialData::GaussianBump { center: 0.5, width: 0.1, amplitude: 0.1, noise: 1e-3, seed };
        assert_eq!(d(3).state(&mp, &g).unwrap(), d(3).state(&mp, &g).unwrap());
        assert_ne!(d(3).state(&mp, &g).unwrap(), d(4).state(&mp, &g).unwrap());
    }
}
