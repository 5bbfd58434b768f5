//! Scalar geometry of S-curve activations.
//!
//! Every kind here is strictly increasing, bounded and has its single
//! inflection point at zero: convex on `(-inf, 0]`, concave on `[0, inf)`.
//! The relaxation module builds its chords and tangents from these helpers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width below which an interval is treated as a point.
pub const DEGENERATE_WIDTH: f64 = 1e-9;

/// Defect tolerance accepted for a crossing-tangent root.
pub const CROSSING_TOLERANCE: f64 = 1e-10;

const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    Arctan,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 3] = [Self::Sigmoid, Self::Tanh, Self::Arctan];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sigmoid => "sigmoid",
            Self::Tanh => "tanh",
            Self::Arctan => "arctan",
        }
    }

    pub fn value(self, x: f64) -> f64 {
        match self {
            Self::Sigmoid => {
                // split on sign so exp never overflows
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Self::Tanh => x.tanh(),
            Self::Arctan => x.atan(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Self::Sigmoid => {
                let e = (-x.abs()).exp();
                let d = 1.0 + e;
                e / (d * d)
            }
            Self::Tanh => {
                let c = x.cosh();
                1.0 / (c * c)
            }
            Self::Arctan => 1.0 / (1.0 + x * x),
        }
    }

    /// Largest value of the derivative, attained at the inflection point.
    pub fn max_derivative(self) -> f64 {
        match self {
            Self::Sigmoid => 0.25,
            Self::Tanh | Self::Arctan => 1.0,
        }
    }

    /// Slope of the chord over `[l, u]`. Intervals narrower than
    /// [`DEGENERATE_WIDTH`] use the midpoint derivative.
    pub fn chord_slope(self, l: f64, u: f64) -> f64 {
        if u - l < DEGENERATE_WIDTH {
            self.derivative(0.5 * (l + u))
        } else {
            (self.value(u) - self.value(l)) / (u - l)
        }
    }

    pub fn tangent_at(self, d: f64) -> TangentLine {
        let slope = self.derivative(d);
        TangentLine {
            point: d,
            slope,
            intercept: self.value(d) - slope * d,
        }
    }

    /// Signed gap between the tangent at `d`, evaluated at `anchor`, and the
    /// curve at `anchor`.
    pub fn tangent_defect(self, anchor: f64, d: f64) -> f64 {
        self.derivative(d) * (anchor - d) + self.value(d) - self.value(anchor)
    }

    /// Tangent whose line passes through `(anchor, value(anchor))`, with the
    /// tangency point searched in `[search_lo, search_hi]`.
    ///
    /// The defect must change sign over the bracket. An endpoint whose defect
    /// is already within [`CROSSING_TOLERANCE`] is accepted as is, which covers
    /// the flat tails where every defect is tiny.
    pub fn crossing_tangent(
        self,
        anchor: f64,
        search_lo: f64,
        search_hi: f64,
    ) -> Result<TangentLine> {
        let (mut lo, mut hi) = (search_lo.min(search_hi), search_lo.max(search_hi));
        let mut g_lo = self.tangent_defect(anchor, lo);
        let g_hi = self.tangent_defect(anchor, hi);
        if g_lo.abs() <= CROSSING_TOLERANCE && g_lo.abs() <= g_hi.abs() {
            return Ok(self.tangent_at(lo));
        }
        if g_hi.abs() <= CROSSING_TOLERANCE {
            return Ok(self.tangent_at(hi));
        }
        if g_lo.signum() == g_hi.signum() || !g_lo.is_finite() || !g_hi.is_finite() {
            return Err(Error::NoSignChange { lo, hi });
        }

        let (mut best, mut best_defect) = (lo, g_lo.abs());
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let g_mid = self.tangent_defect(anchor, mid);
            if g_mid.abs() < best_defect {
                best = mid;
                best_defect = g_mid.abs();
            }
            if g_mid == 0.0 {
                break;
            }
            if g_mid.signum() == g_lo.signum() {
                lo = mid;
                g_lo = g_mid;
            } else {
                hi = mid;
            }
        }

        // Newton polish from the bisection result, kept only if it improves.
        let curvature = self.second_derivative(best) * (anchor - best);
        if curvature != 0.0 {
            let step = best - self.tangent_defect(anchor, best) / curvature;
            if step > search_lo.min(search_hi) && step < search_lo.max(search_hi) {
                let g_step = self.tangent_defect(anchor, step).abs();
                if g_step < best_defect {
                    best = step;
                    best_defect = g_step;
                }
            }
        }

        if best_defect > CROSSING_TOLERANCE {
            return Err(Error::NoSignChange {
                lo: search_lo,
                hi: search_hi,
            });
        }
        Ok(self.tangent_at(best))
    }

    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Self::Sigmoid => {
                let s = self.value(x);
                self.derivative(x) * (1.0 - 2.0 * s)
            }
            Self::Tanh => -2.0 * x.tanh() * self.derivative(x),
            Self::Arctan => {
                let q = 1.0 + x * x;
                -2.0 * x / (q * q)
            }
        }
    }

    /// Non-negative abscissa `x*` with `derivative(±x*) = slope`, if any.
    ///
    /// These are the only interior stationary points of `value(x) - slope * x`.
    pub fn slope_preimage(self, slope: f64) -> Option<f64> {
        if slope.is_nan() || slope <= 0.0 || slope > self.max_derivative() {
            return None;
        }
        let x = match self {
            Self::Sigmoid => {
                let root = (1.0 - 4.0 * slope).max(0.0).sqrt();
                let s = 0.5 * (1.0 + root);
                (s / (1.0 - s)).ln()
            }
            Self::Tanh => (1.0 - slope).max(0.0).sqrt().atanh(),
            Self::Arctan => (1.0 / slope - 1.0).max(0.0).sqrt(),
        };
        x.is_finite().then_some(x)
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sigmoid" => Ok(Self::Sigmoid),
            "tanh" => Ok(Self::Tanh),
            "arctan" => Ok(Self::Arctan),
            other => Err(other.to_string()),
        }
    }
}

/// `y = slope * x + intercept`, tangent to the curve at `point`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentLine {
    pub point: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl TangentLine {
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}
