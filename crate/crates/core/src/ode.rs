//! Dormand–Prince 5(4) embedded Runge–Kutta integrator with PI step-size
//! control and cubic Hermite dense output.
//!
//! States are plain `f64` slices so the same stepper drives the 2-D phase
//! plane, the 2×2 mode equations and the method-of-lines PDE systems.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t={t:.6e} (h={h:.3e}); the problem is likely stiff")]
    StepUnderflow { t: f64, h: f64 },
    #[error("maximum number of steps ({steps}) reached at t={t:.6e}")]
    MaxSteps { t: f64, steps: usize },
    #[error("non-finite state at t={t:.6e}")]
    NonFinite { t: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; estimated from the field when `None`.
    pub h_init: Option<f64>,
    pub h_max: f64,
    /// Steps below `h_min * max(1, |t|)` abort with [`OdeError::StepUnderflow`].
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: None,
            h_max: f64::INFINITY,
            h_min: 1e-14,
            max_steps: 2_000_000,
        }
    }
}

impl OdeOptions {
    pub fn tol(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, ..Self::default() }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Single-trajectory Dormand–Prince stepper. Each call to [`Dopri5::step`]
/// performs one accepted step (retrying internally on rejection).
#[derive(Debug, Clone)]
pub struct Dopri5 {
    t: f64,
    y: Vec<f64>,
    dy: Vec<f64>,
    h: f64,
    err_old: f64,
    opts: OdeOptions,
    accepted: usize,
    rejected: usize,
    evals: usize,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
}

impl Dopri5 {
    pub fn new<F>(f: &mut F, t0: f64, y0: &[f64], opts: OdeOptions) -> Self
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y0.len();
        let mut dy = vec![0.0; n];
        f(t0, y0, &mut dy);
        let mut s = Self {
            t: t0,
            y: y0.to_vec(),
            dy,
            h: 0.0,
            err_old: 1e-4,
            opts,
            accepted: 0,
            rejected: 0,
            evals: 1,
            k: std::array::from_fn(|_| vec![0.0; n]),
            ytmp: vec![0.0; n],
            ynew: vec![0.0; n],
        };
        s.h = match opts.h_init {
            Some(h) => h,
            None => s.initial_step(f),
        };
        s
    }

    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    /// Derivative at the current point (first-same-as-last stage).
    pub fn dy(&self) -> &[f64] {
        &self.dy
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn accepted(&self) -> usize {
        self.accepted
    }
    pub fn rejected(&self) -> usize {
        self.rejected
    }
    pub fn evals(&self) -> usize {
        self.evals
    }

    fn scale(&self, i: f64, j: f64) -> f64 {
        self.opts.atol + self.opts.rtol * i.abs().max(j.abs())
    }

    // Hairer–Nørsett–Wanner starting step heuristic.
    fn initial_step<F>(&mut self, f: &mut F) -> f64
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = self.y.len() as f64;
        let (mut d0, mut d1) = (0.0, 0.0);
        for i in 0..self.y.len() {
            let sk = self.scale(self.y[i], self.y[i]);
            d0 += (self.y[i] / sk).powi(2);
            d1 += (self.dy[i] / sk).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(self.opts.h_max);
        for i in 0..self.y.len() {
            self.ytmp[i] = self.y[i] + h0 * self.dy[i];
        }
        let mut f1 = vec![0.0; self.y.len()];
        f(self.t + h0, &self.ytmp, &mut f1);
        self.evals += 1;
        let mut d2 = 0.0;
        for i in 0..self.y.len() {
            let sk = self.scale(self.y[i], self.y[i]);
            d2 += ((f1[i] - self.dy[i]) / sk).powi(2);
        }
        let d2 = (d2 / n).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(self.opts.h_max)
    }

    /// Advance by one accepted step, never stepping past `t_limit`.
    /// Returns the size of the accepted step.
    pub fn step<F>(&mut self, f: &mut F, t_limit: f64) -> Result<f64, OdeError>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = self.y.len();
        loop {
            if self.accepted + self.rejected >= self.opts.max_steps {
                return Err(OdeError::MaxSteps { t: self.t, steps: self.opts.max_steps });
            }
            let mut h = self.h.min(self.opts.h_max);
            let remaining = t_limit - self.t;
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            if h < self.opts.h_min * self.t.abs().max(1.0) && !last {
                return Err(OdeError::StepUnderflow { t: self.t, h });
            }
            let t = self.t;
            let y = &self.y;
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            k1.copy_from_slice(&self.dy);
            let yt = &mut self.ytmp;
            for i in 0..n {
                yt[i] = y[i] + h * A21 * k1[i];
            }
            f(t + C2 * h, yt, k2);
            for i in 0..n {
                yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            f(t + C3 * h, yt, k3);
            for i in 0..n {
                yt[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f(t + C4 * h, yt, k4);
            for i in 0..n {
                yt[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f(t + C5 * h, yt, k5);
            for i in 0..n {
                yt[i] = y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            f(t + h, yt, k6);
            let yn = &mut self.ynew;
            for i in 0..n {
                yn[i] = y[i]
                    + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            f(t + h, yn, k7);
            self.evals += 6;

            let mut err = 0.0;
            let mut finite = true;
            for i in 0..n {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                        + E7 * k7[i]);
                if !yn[i].is_finite() || !e.is_finite() {
                    finite = false;
                    break;
                }
                let sk = self.opts.atol + self.opts.rtol * y[i].abs().max(yn[i].abs());
                err += (e / sk).powi(2);
            }
            if !finite {
                // treat as a hard rejection and shrink aggressively
                self.rejected += 1;
                self.h = h * FAC_MIN;
                if self.h < self.opts.h_min * t.abs().max(1.0) {
                    return Err(OdeError::NonFinite { t });
                }
                continue;
            }
            let err = (err / n as f64).sqrt();
            let fac11 = err.powf(0.2 - BETA * 0.75);
            if err <= 1.0 {
                let mut fac = fac11 / self.err_old.powf(BETA);
                fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                self.err_old = err.max(1e-4);
                self.t = if last { t_limit } else { t + h };
                std::mem::swap(&mut self.y, &mut self.ynew);
                self.dy.copy_from_slice(k7);
                self.accepted += 1;
                let h_next = h / fac;
                // keep the natural step when the last step was clipped to t_limit
                self.h = if last { self.h.max(h_next) } else { h_next };
                return Ok(h);
            }
            self.rejected += 1;
            self.h = h / (fac11 / SAFETY).min(1.0 / FAC_MIN);
        }
    }

    /// Replace the current state (e.g. after projecting onto a constraint).
    pub fn reset_state<F>(&mut self, f: &mut F, y: &[f64])
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        self.y.copy_from_slice(y);
        f(self.t, &self.y, &mut self.dy);
        self.evals += 1;
    }
}

/// Recorded trajectory with cubic Hermite dense output.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub dy: Vec<Vec<f64>>,
    pub accepted: usize,
    pub rejected: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }
    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
    pub fn last(&self) -> &[f64] {
        self.y.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Cubic Hermite interpolation of component `comp` at `t` (clamped to
    /// the recorded range).
    pub fn eval(&self, t: f64, comp: usize) -> f64 {
        let idx = locate(&self.t, t);
        let (t0, t1) = (self.t[idx], self.t[idx + 1]);
        hermite(
            t0,
            t1,
            self.y[idx][comp],
            self.y[idx + 1][comp],
            self.dy[idx][comp],
            self.dy[idx + 1][comp],
            t.clamp(t0, t1),
        )
    }

    pub fn eval_all(&self, t: f64) -> Vec<f64> {
        (0..self.y[0].len()).map(|c| self.eval(t, c)).collect()
    }
}

/// Index `i` of the interval `[xs[i], xs[i+1]]` containing `x` (clamped).
pub(crate) fn locate(xs: &[f64], x: f64) -> usize {
    debug_assert!(xs.len() >= 2);
    let p = xs.partition_point(|&v| v <= x);
    p.saturating_sub(1).min(xs.len() - 2)
}

pub(crate) fn hermite(t0: f64, t1: f64, y0: f64, y1: f64, d0: f64, d1: f64, t: f64) -> f64 {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
}

pub enum Flow {
    Continue,
    Stop,
}

/// Integrate from `t0` to `t_end`, recording every accepted step. The
/// observer sees each accepted point and may stop the integration early or
/// veto it by returning an error.
pub fn integrate<F, O, E>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: OdeOptions,
    mut observe: O,
) -> Result<Trajectory, E>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &[f64]) -> Result<Flow, E>,
    E: From<OdeError>,
{
    let mut stepper = Dopri5::new(&mut f, t0, y0, opts);
    let mut traj = Trajectory {
        t: vec![t0],
        y: vec![y0.to_vec()],
        dy: vec![stepper.dy().to_vec()],
        ..Default::default()
    };
    while stepper.t() < t_end {
        stepper.step(&mut f, t_end)?;
        traj.t.push(stepper.t());
        traj.y.push(stepper.y().to_vec());
        traj.dy.push(stepper.dy().to_vec());
        if let Flow::Stop = observe(stepper.t(), stepper.y())? {
            break;
        }
    }
    traj.accepted = stepper.accepted();
    traj.rejected = stepper.rejected();
    Ok(traj)
}

/// Fixed-step Dormand–Prince (5th-order solution) from `t0` to `t1` in
/// `steps` equal substeps. Used for high-accuracy local re-integration
/// between stored samples.
pub fn dopri5_fixed<F>(f: &F, t0: f64, y0: &[f64], t1: f64, steps: usize) -> Vec<f64>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    if steps == 0 || t1 == t0 {
        return y;
    }
    let h = (t1 - t0) / steps as f64;
    let mut k: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; n]);
    let mut yt = vec![0.0; n];
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        let [k1, k2, k3, k4, k5, k6] = &mut k;
        f(t, &y, k1);
        for i in 0..n {
            yt[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, &yt, k2);
        for i in 0..n {
            yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, &yt, k3);
        for i in 0..n {
            yt[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, &yt, k4);
        for i in 0..n {
            yt[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, &yt, k5);
        for i in 0..n {
            yt[i] =
                y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, &yt, k6);
        for i in 0..n {
            y[i] += h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
    }
    y
}
