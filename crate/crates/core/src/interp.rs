//! Monotone piecewise-cubic Hermite interpolation.
//!
//! Node slopes come from the three-point parabola and are then passed
//! through the Hyman filter, which keeps the interpolant monotone on every
//! interval where the data are monotone and leaves smooth data untouched.

use crate::error::{Error, Result};
use crate::ode::{hermite, locate};

#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidParameter("x and y lengths differ".into()));
        }
        if x.len() < 2 {
            return Err(Error::InvalidParameter("need at least two nodes".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("nodes must be strictly increasing".into()));
        }
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = del[0];
            d[1] = del[0];
        } else {
            for i in 1..n - 1 {
                d[i] = (h[i] * del[i - 1] + h[i - 1] * del[i]) / (h[i - 1] + h[i]);
            }
            // one-sided three-point estimates at the ends
            d[0] = ((2.0 * h[0] + h[1]) * del[0] - h[0] * del[1]) / (h[0] + h[1]);
            let m = n - 1;
            d[m] = ((2.0 * h[m - 1] + h[m - 2]) * del[m - 1] - h[m - 1] * del[m - 2])
                / (h[m - 1] + h[m - 2]);
        }
        // Hyman filter
        for i in 0..n {
            let left = if i > 0 { Some(del[i - 1]) } else { None };
            let right = if i < n - 1 { Some(del[i]) } else { None };
            let bound = match (left, right) {
                (Some(l), Some(r)) => {
                    if l * r <= 0.0 {
                        0.0
                    } else {
                        3.0 * l.abs().min(r.abs())
                    }
                }
                (Some(s), None) | (None, Some(s)) => 3.0 * s.abs(),
                (None, None) => unreachable!(),
            };
            let sign_ref = right.or(left).unwrap();
            if d[i] * sign_ref < 0.0 {
                d[i] = 0.0;
            }
            if d[i].abs() > bound {
                d[i] = bound.copysign(d[i]);
            }
        }
        Ok(Self { x: x.to_vec(), y: y.to_vec(), d })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    /// Evaluate at `t`; values outside the node range are clamped to the ends.
    pub fn eval(&self, t: f64) -> f64 {
        let i = locate(&self.x, t);
        let tt = t.clamp(self.x[i], self.x[i + 1]);
        hermite(self.x[i], self.x[i + 1], self.y[i], self.y[i + 1], self.d[i], self.d[i + 1], tt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reproduces_nodes_and_lines() {
        let x = [0.0, 0.5, 1.7, 2.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let m = MonotoneCubic::new(&x, &y).unwrap();
        for t in [0.0, 0.25, 1.0, 1.9, 3.3, 4.0] {
            assert!((m.eval(t) - (3.0 * t - 1.0)).abs() < 1e-13);
        }
    }

    #[test]
    fn third_order_on_smooth_data() {
        let err = |n: usize| {
            let x: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
            let y: Vec<f64> = x.iter().map(|v| v.exp()).collect();
            let m = MonotoneCubic::new(&x, &y).unwrap();
            (0..1000)
                .map(|i| {
                    let t = i as f64 / 999.0;
                    (m.eval(t) - t.exp()).abs()
                })
                .fold(0.0, f64::max)
        };
        let order = (err(40) / err(80)).log2();
        assert!(order > 2.7, "observed order {order}");
    }

    #[test]
    fn rejects_unsorted() {
        assert!(MonotoneCubic::new(&[0.0, 0.0], &[1.0, 2.0]).is_err());
        assert!(MonotoneCubic::new(&[0.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn preserves_monotonicity(steps in prop::collection::vec((0.01f64..2.0, 0.0f64..5.0), 3..30)) {
            let mut x = vec![0.0];
            let mut y = vec![0.0];
            for (dx, dy) in &steps {
                x.push(x.last().unwrap() + dx);
                y.push(y.last().unwrap() + dy);
            }
            let m = MonotoneCubic::new(&x, &y).unwrap();
            let (a, b) = m.domain();
            let mut prev = m.eval(a);
            for i in 1..=2000 {
                let v = m.eval(a + (b - a) * i as f64 / 2000.0);
                prop_assert!(v >= prev - 1e-12);
                prev = v;
            }
        }
    }
}
