use serde::Serialize;

use crate::error::{Error, Result};

/// Positive step-size function `α(x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum AlphaFn {
    /// `1/(1 + e^{−βx})`.
    Sigmoid { beta: f64 },
    /// `max(a + bx, 0)`; zero is rejected when stepping.
    Affine { a: f64, b: f64 },
    /// Piecewise linear through `(xs, ys)`, linear extrapolation past the ends, clamped at 0.
    Tabulated { xs: Vec<f64>, ys: Vec<f64> },
}

/// Grid summary of `α` and `α′` over an interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub deriv_min: f64,
    pub deriv_max: f64,
    pub positive: bool,
    pub strictly_increasing: bool,
}

impl AlphaGrid {
    /// `α_min · α′_min`.
    pub fn contraction_constant(&self) -> f64 {
        self.alpha_min * self.deriv_min
    }

    /// `0 < α′ ≤ L < 1` on the grid.
    pub fn lipschitz_below_one(&self) -> bool {
        self.deriv_min > 0.0 && self.deriv_max < 1.0
    }
}

impl AlphaFn {
    pub fn sigmoid(beta: f64) -> Self {
        Self::Sigmoid { beta }
    }

    pub fn affine(a: f64, b: f64) -> Self {
        Self::Affine { a, b }
    }

    pub fn tabulated(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != ys.len() {
            return Err(Error::InvalidInput("tabulated alpha needs >= 2 matching points".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("tabulated alpha abscissae must increase".into()));
        }
        Ok(Self::Tabulated { xs, ys })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Sigmoid { beta } => {
                let z = beta * x;
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
            Self::Affine { a, b } => (a + b * x).max(0.0),
            Self::Tabulated { xs, ys } => {
                let k = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
                let (x0, x1, y0, y1) = (xs[k - 1], xs[k], ys[k - 1], ys[k]);
                (y0 + (y1 - y0) * (x - x0) / (x1 - x0)).max(0.0)
            }
        }
    }

    /// Analytic derivative (one-sided from the right at kinks).
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Self::Sigmoid { beta } => {
                let s = self.eval(x);
                beta * s * (1.0 - s)
            }
            Self::Affine { a, b } => {
                if a + b * x > 0.0 {
                    *b
                } else {
                    0.0
                }
            }
            Self::Tabulated { xs, ys } => {
                if self.eval(x) <= 0.0 {
                    return 0.0;
                }
                let k = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
                (ys[k] - ys[k - 1]) / (xs[k] - xs[k - 1])
            }
        }
    }

    /// `α(x)`, or an error if it is not a positive finite number.
    pub fn checked(&self, x: f64) -> Result<f64> {
        let value = self.eval(x);
        if value > 0.0 && value.is_finite() {
            Ok(value)
        } else {
            Err(Error::InvalidAlpha { x, value })
        }
    }

    /// Evaluates `α` and `α′` on `points` equispaced nodes of `[lo, hi]`.
    pub fn verify_on_grid(&self, lo: f64, hi: f64, points: usize) -> AlphaGrid {
        let points = points.max(2);
        let mut g = AlphaGrid {
            lo,
            hi,
            points,
            alpha_min: f64::INFINITY,
            alpha_max: f64::NEG_INFINITY,
            deriv_min: f64::INFINITY,
            deriv_max: f64::NEG_INFINITY,
            positive: true,
            strictly_increasing: true,
        };
        let mut prev = f64::NEG_INFINITY;
        for i in 0..points {
            let x = if hi > lo { lo + (hi - lo) * i as f64 / (points - 1) as f64 } else { lo };
            let a = self.eval(x);
            let d = self.derivative(x);
            g.alpha_min = g.alpha_min.min(a);
            g.alpha_max = g.alpha_max.max(a);
            g.deriv_min = g.deriv_min.min(d);
            g.deriv_max = g.deriv_max.max(d);
            if !(a > 0.0) {
                g.positive = false;
            }
            if i > 0 && hi > lo && !(a > prev) {
                g.strictly_increasing = false;
            }
            prev = a;
        }
        if !(hi > lo) {
            g.strictly_increasing = g.deriv_min > 0.0;
        }
        g
    }
}
