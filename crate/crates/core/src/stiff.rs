//! Banded LU with partial pivoting and a linearly implicit Rosenbrock
//! (2,3) integrator for stiff method-of-lines systems with banded
//! Jacobians.

use crate::error::{Error, Result};
use crate::ode::OdeError;

/// Square band matrix with `kl` sub- and `ku` super-diagonals, stored by
/// rows with room for the fill produced by row interchanges.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            y[i] = (lo..=hi).map(|j| self.get(i, j) * x[j]).sum();
        }
    }

    /// Factor in place.
    pub fn factor(mut self) -> Result<BandLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut piv = vec![0usize; n];
        let mut mult = vec![0.0; n * kl.max(1)];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for r in k + 1..=last {
                let v = self.get(r, k).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular(k));
            }
            piv[k] = p;
            let jmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.get(k, j);
                    let b = self.get(p, j);
                    self.set(k, j, b);
                    self.set(p, j, a);
                }
            }
            let d = self.get(k, k);
            for r in k + 1..=last {
                let m = self.get(r, k) / d;
                mult[k * kl + (r - k - 1)] = m;
                if m != 0.0 {
                    for j in k + 1..=jmax {
                        let v = self.get(r, j) - m * self.get(k, j);
                        self.set(r, j, v);
                    }
                }
                self.set(r, k, 0.0);
            }
        }
        Ok(BandLu { a: self, piv, mult })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    a: BandMatrix,
    piv: Vec<usize>,
    mult: Vec<f64>,
}

impl BandLu {
    /// Solve in place.
    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.a.n, self.a.kl, self.a.ku);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let last = (k + kl).min(n - 1);
            let bk = b[k];
            for r in k + 1..=last {
                b[r] -= self.mult[k * kl + (r - k - 1)] * bk;
            }
        }
        for k in (0..n).rev() {
            let jmax = (k + kl + ku).min(n - 1);
            let mut acc = b[k];
            for j in k + 1..=jmax {
                acc -= self.a.get(k, j) * b[j];
            }
            b[k] = acc / self.a.get(k, k);
        }
    }
}

/// Right-hand side with a banded Jacobian.
pub trait BandedSystem {
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);

    /// Fill `jac` analytically; return `false` to use coloured finite
    /// differences instead.
    fn jacobian(&self, _t: f64, _y: &[f64], _jac: &mut BandMatrix) -> bool {
        false
    }
}

/// Adapter for a plain closure; the Jacobian is taken by finite differences.
pub struct FnSystem<F>(pub F);

impl<F: Fn(f64, &[f64], &mut [f64])> BandedSystem for FnSystem<F> {
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.0)(t, y, dy)
    }
}

/// Options for [`Rosenbrock23`].
#[derive(Debug, Clone, Copy)]
pub struct RosenbrockOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
    /// Half bandwidth of the Jacobian.
    pub band: usize,
    /// Whether the field depends on t explicitly.
    pub non_autonomous: bool,
}

impl Default for RosenbrockOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-8,
            h_init: 1e-4,
            h_max: f64::INFINITY,
            h_min: 1e-14,
            max_steps: 5_000_000,
            band: 3,
            non_autonomous: false,
        }
    }
}

const D: f64 = 0.292_893_218_813_452_5; // 1/(2+√2)
const E32: f64 = 7.414_213_562_373_095; // 6+√2

/// Second-order L-stable Rosenbrock method with a third-order error
/// estimate (Shampine–Reichelt), Jacobian by coloured finite differences.
#[derive(Debug, Clone)]
pub struct Rosenbrock23 {
    t: f64,
    y: Vec<f64>,
    h: f64,
    opts: RosenbrockOptions,
    accepted: usize,
    rejected: usize,
    evals: usize,
    f0: Vec<f64>,
    jac: BandMatrix,
}

impl Rosenbrock23 {
    pub fn new<S: BandedSystem + ?Sized>(sys: &S, t0: f64, y0: &[f64], opts: RosenbrockOptions) -> Self {
        let n = y0.len();
        let mut f0 = vec![0.0; n];
        sys.rhs(t0, y0, &mut f0);
        Self {
            t: t0,
            y: y0.to_vec(),
            h: opts.h_init,
            opts,
            accepted: 0,
            rejected: 0,
            evals: 1,
            f0,
            jac: BandMatrix::zeros(n, opts.band, opts.band),
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn y(&self) -> &[f64] {
        &self.y
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

    fn jacobian<S: BandedSystem + ?Sized>(&mut self, sys: &S) {
        self.jac.clear();
        if sys.jacobian(self.t, &self.y, &mut self.jac) {
            return;
        }
        let n = self.y.len();
        let bw = self.opts.band;
        let groups = 2 * bw + 1;
        let mut yp = self.y.clone();
        let mut fp = vec![0.0; n];
        let mut del = vec![0.0; n];
        for g in 0..groups.min(n) {
            for j in (g..n).step_by(groups) {
                yp[j] = self.y[j] + 1.5e-8 * self.y[j].abs().max(1.0);
                del[j] = yp[j] - self.y[j];
            }
            sys.rhs(self.t, &yp, &mut fp);
            self.evals += 1;
            for j in (g..n).step_by(groups) {
                let lo = j.saturating_sub(bw);
                let hi = (j + bw).min(n - 1);
                for i in lo..=hi {
                    self.jac.set(i, j, (fp[i] - self.f0[i]) / del[j]);
                }
                yp[j] = self.y[j];
            }
        }
    }

    /// Advance by one accepted step, never past `t_limit`.
    pub fn step<S: BandedSystem + ?Sized>(&mut self, sys: &S, t_limit: f64) -> Result<f64> {
        let n = self.y.len();
        let bw = self.opts.band;
        self.jacobian(sys);
        let mut ft = vec![0.0; n];
        if self.opts.non_autonomous {
            let dt = 1e-7 * self.t.abs().max(1.0);
            sys.rhs(self.t + dt, &self.y, &mut ft);
            self.evals += 1;
            for i in 0..n {
                ft[i] = (ft[i] - self.f0[i]) / dt;
            }
        }
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut f1 = vec![0.0; n];
        let mut f2 = vec![0.0; n];
        let mut yt = vec![0.0; n];
        loop {
            if self.accepted + self.rejected >= self.opts.max_steps {
                return Err(OdeError::MaxSteps { t: self.t, steps: self.opts.max_steps }.into());
            }
            let mut h = self.h.min(self.opts.h_max);
            let remaining = t_limit - self.t;
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            if h < self.opts.h_min * self.t.abs().max(1.0) && !last {
                return Err(OdeError::StepUnderflow { t: self.t, h }.into());
            }
            let mut w = BandMatrix::zeros(n, bw, bw);
            for i in 0..n {
                let lo = i.saturating_sub(bw);
                let hi = (i + bw).min(n - 1);
                for j in lo..=hi {
                    let v = if i == j { 1.0 } else { 0.0 } - h * D * self.jac.get(i, j);
                    w.set(i, j, v);
                }
            }
            let lu = match w.factor() {
                Ok(lu) => lu,
                Err(_) => {
                    self.rejected += 1;
                    self.h = h * 0.25;
                    continue;
                }
            };
            let t = self.t;
            for i in 0..n {
                k1[i] = self.f0[i] + h * D * ft[i];
            }
            lu.solve(&mut k1);
            for i in 0..n {
                yt[i] = self.y[i] + 0.5 * h * k1[i];
            }
            sys.rhs(t + 0.5 * h, &yt, &mut f1);
            for i in 0..n {
                k2[i] = f1[i] - k1[i];
            }
            lu.solve(&mut k2);
            for i in 0..n {
                k2[i] += k1[i];
                yt[i] = self.y[i] + h * k2[i];
            }
            sys.rhs(t + h, &yt, &mut f2);
            for i in 0..n {
                k3[i] = f2[i] - E32 * (k2[i] - f1[i]) - 2.0 * (k1[i] - self.f0[i]) + h * D * ft[i];
            }
            lu.solve(&mut k3);
            self.evals += 2;
            let mut err = 0.0;
            let mut finite = true;
            for i in 0..n {
                let e = h / 6.0 * (k1[i] - 2.0 * k2[i] + k3[i]);
                if !e.is_finite() || !yt[i].is_finite() {
                    finite = false;
                    break;
                }
                let sk = self.opts.atol + self.opts.rtol * self.y[i].abs().max(yt[i].abs());
                err += (e / sk).powi(2);
            }
            if !finite {
                self.rejected += 1;
                self.h = h * 0.25;
                continue;
            }
            let err = (err / n as f64).sqrt();
            let fac = (0.8 * err.max(1e-10).powf(-1.0 / 3.0)).clamp(0.2, 5.0);
            if err <= 1.0 {
                self.t = if last { t_limit } else { t + h };
                self.y.copy_from_slice(&yt);
                self.f0.copy_from_slice(&f2);
                self.accepted += 1;
                let h_next = h * fac;
                self.h = if last { self.h.max(h_next) } else { h_next };
                return Ok(h);
            }
            self.rejected += 1;
            self.h = h * fac.min(1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn band_lu_matches_dense_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 40;
        let (kl, ku) = (3, 2);
        let mut a = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                // weak diagonal so that pivoting actually happens
                a.set(i, j, rng.gen_range(-1.0..1.0) + if i == j { 0.1 } else { 0.0 });
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; n];
        a.matvec(&x, &mut b);
        let lu = a.clone().factor().unwrap();
        lu.solve(&mut b);
        for i in 0..n {
            assert!((b[i] - x[i]).abs() < 1e-9, "{i}: {} vs {}", b[i], x[i]);
        }
    }

    #[test]
    fn singular_is_reported() {
        let a = BandMatrix::zeros(4, 1, 1);
        assert!(matches!(a.factor(), Err(Error::Singular(0))));
    }

    #[test]
    fn stiff_linear_decay() {
        // y' = -1e6 (y - cos t) - sin t has the smooth solution cos t
        let sys = FnSystem(|t: f64, y: &[f64], d: &mut [f64]| d[0] = -1e6 * (y[0] - t.cos()) - t.sin());
        let opts = RosenbrockOptions { rtol: 1e-6, atol: 1e-8, band: 1, non_autonomous: true, ..Default::default() };
        let mut r = Rosenbrock23::new(&sys, 0.0, &[1.0], opts);
        while r.t() < 2.0 {
            r.step(&sys, 2.0).unwrap();
        }
        assert!((r.y()[0] - 2f64.cos()).abs() < 1e-6);
        // an explicit method would need millions of steps
        assert!(r.accepted() < 2000, "{}", r.accepted());
    }

    #[test]
    fn second_order_convergence() {
        let sys = FnSystem(|_t: f64, y: &[f64], d: &mut [f64]| {
            d[0] = y[1];
            d[1] = -y[0];
        });
        let err = |tol: f64| {
            let opts = RosenbrockOptions { rtol: tol, atol: tol, band: 1, ..Default::default() };
            let mut r = Rosenbrock23::new(&sys, 0.0, &[1.0, 0.0], opts);
            while r.t() < 3.0 {
                r.step(&sys, 3.0).unwrap();
            }
            (r.y()[0] - 3f64.cos()).abs()
        };
        let (e1, e2) = (err(1e-5), err(1e-8));
        assert!(e1 < 1e-3 && e2 < e1 / 50.0, "{e1} {e2}");
    }
}
