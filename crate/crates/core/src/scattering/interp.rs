//! Monotone piecewise-cubic Hermite interpolation (Fritsch–Carlson slopes).

use std::sync::atomic::{AtomicBool, Ordering};

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    /// `x` must be strictly increasing and the same length as `y`.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        assert_eq!(x.len(), y.len());
        assert!(!x.is_empty());
        let n = x.len();
        let mut d = vec![0.0; n];
        if n == 2 {
            let s = (y[1] - y[0]) / (x[1] - x[0]);
            d = vec![s, s];
        } else if n > 2 {
            let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
            let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Self { x, y, d }
    }

    /// Interpolated value; outside the knot range the end value is held.
    pub fn eval(&self, t: f64) -> f64 {
        self.eval_at(&self.locate(t))
    }

    /// Interval and Hermite basis at `t`. Interpolants built on the same knots
    /// can share one lookup through [`Pchip::eval_at`].
    pub fn locate(&self, t: f64) -> Knot {
        let n = self.x.len();
        if n == 1 {
            return Knot::Node(0);
        }
        if t <= self.x[0] || t >= self.x[n - 1] {
            if (t < self.x[0] || t > self.x[n - 1]) && !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
                log::warn!(
                    "energy {t} outside tabulated range [{}, {}]; holding end values",
                    self.x[0],
                    self.x[n - 1]
                );
            }
            return Knot::Node(if t <= self.x[0] { 0 } else { n - 1 });
        }
        let i = match self.x.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => return Knot::Node(i),
            Err(i) => i - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        Knot::Between {
            i,
            basis: [2.0 * s3 - 3.0 * s2 + 1.0, (s3 - 2.0 * s2 + s) * h, -2.0 * s3 + 3.0 * s2, (s3 - s2) * h],
        }
    }

    #[inline]
    pub fn eval_at(&self, knot: &Knot) -> f64 {
        match *knot {
            Knot::Node(i) => self.y[i],
            Knot::Between { i, basis: [a, b, c, d] } => {
                a * self.y[i] + b * self.d[i] + c * self.y[i + 1] + d * self.d[i + 1]
            }
        }
    }
}

/// Location of an abscissa relative to the knots of a [`Pchip`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Knot {
    Node(usize),
    Between { i: usize, basis: [f64; 4] },
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reproduces_knots_and_lines() {
        let p = Pchip::new(vec![0.0, 1.0, 3.0], vec![1.0, 2.0, 4.0]);
        assert_eq!(p.eval(1.0), 2.0);
        assert!((p.eval(2.0) - 3.0).abs() < 1e-14);
        assert_eq!(p.eval(-5.0), 1.0);
        assert_eq!(p.eval(9.0), 4.0);
    }

    #[test]
    fn odd_under_negation() {
        let x = vec![0.0, 0.4, 1.1, 2.0];
        let y = vec![0.3, -0.2, 0.9, 0.1];
        let p = Pchip::new(x.clone(), y.clone());
        let q = Pchip::new(x, y.iter().map(|v| -v).collect());
        for t in [0.1, 0.5, 1.5, 1.99] {
            assert_eq!(p.eval(t), -q.eval(t));
        }
    }

    proptest! {
        #[test]
        fn monotone_data_gives_monotone_interpolant(
            steps in prop::collection::vec((0.05f64..1.0, 0.0f64..2.0), 3..8)
        ) {
            let mut x = vec![0.0];
            let mut y = vec![0.0];
            for (dx, dy) in &steps {
                x.push(x.last().unwrap() + dx);
                y.push(y.last().unwrap() + dy);
            }
            let p = Pchip::new(x.clone(), y);
            let end = *x.last().unwrap();
            let mut prev = p.eval(0.0);
            for i in 1..=200 {
                let v = p.eval(end * i as f64 / 200.0);
                prop_assert!(v >= prev - 1e-12);
                prev = v;
            }
        }
    }
}
