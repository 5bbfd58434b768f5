//! Linear lower/upper bounds of an S-curve over an interval, chosen with both
//! an over-estimated domain (which the lines must be sound on) and an
//! under-estimated domain (where the lines should be tight).
//!
//! With `k` the chord slope over the over-domain `[l, u]`:
//!
//! * convex case, `σ'(l) < k < σ'(u)`: the chord is the upper line; the lower
//!   line is the tangent at `l_under` when that tangent stays below the curve
//!   at `u`, otherwise the tangent through `(u, σ(u))`;
//! * concave case, `σ'(l) > k > σ'(u)`: mirror image, the chord is the lower
//!   line and the upper line is anchored at `(l, σ(l))`;
//! * spanning case, both endpoint slopes below `k`: the upper line is the
//!   tangent at `u_under` or the tangent through `(l, σ(l))`, the lower line the
//!   tangent at `l_under` or the tangent through `(u, σ(u))`.
//!
//! Every line is then audited against the curve at the endpoints and at the
//! interior stationary points of `σ(x) - line(x)`, and its offset is pushed
//! out by any violation found.

use crate::activations::{ActivationKind, TangentLine, DEGENERATE_WIDTH};
use crate::error::{Error, Result};

/// Slope comparisons closer than this are treated as equal.
const CASE_TOLERANCE: f64 = 1e-12;

/// Extra offset added on top of a measured violation.
const REPAIR_SLACK: f64 = 1e-12;

/// Under-bounds may exceed the over-bounds by this much before construction
/// fails; smaller excursions are clamped.
pub const CLAMP_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelaxCase {
    /// Point interval; both lines are the tangent at the point.
    Degenerate,
    Convex,
    Concave,
    Spanning,
}

/// `lower_slope * x + lower_offset <= σ(x) <= upper_slope * x + upper_offset`
/// on `[domain.0, domain.1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearRelaxation {
    pub lower_slope: f64,
    pub lower_offset: f64,
    pub upper_slope: f64,
    pub upper_offset: f64,
    pub domain: (f64, f64),
    pub case: RelaxCase,
}

impl LinearRelaxation {
    pub fn lower_at(&self, x: f64) -> f64 {
        self.lower_slope * x + self.lower_offset
    }

    pub fn upper_at(&self, x: f64) -> f64 {
        self.upper_slope * x + self.upper_offset
    }
}

/// Over-domain `[l_over, u_over]` with a nested under-domain
/// `[l_under, u_under]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualDomain {
    pub l_over: f64,
    pub u_over: f64,
    pub l_under: f64,
    pub u_under: f64,
}

impl DualDomain {
    /// Clamps the under-domain into the over-domain. Excursions beyond
    /// [`CLAMP_SLACK`] are rejected.
    pub fn new(l_over: f64, u_over: f64, l_under: f64, u_under: f64) -> Result<Self> {
        let all = [l_over, u_over, l_under, u_under];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite bound in {all:?}")));
        }
        if l_over > u_over {
            return Err(Error::Domain(format!(
                "over-domain [{l_over}, {u_over}] is empty"
            )));
        }
        if l_under > u_under + CLAMP_SLACK {
            return Err(Error::Domain(format!(
                "under-domain [{l_under}, {u_under}] is empty"
            )));
        }
        if l_under < l_over - CLAMP_SLACK || u_under > u_over + CLAMP_SLACK {
            return Err(Error::Domain(format!(
                "under-domain [{l_under}, {u_under}] is not inside [{l_over}, {u_over}]"
            )));
        }
        let mut lo = l_under.clamp(l_over, u_over);
        let mut hi = u_under.clamp(l_over, u_over);
        if lo > hi {
            let mid = 0.5 * (lo + hi);
            lo = mid;
            hi = mid;
        }
        Ok(Self {
            l_over,
            u_over,
            l_under: lo,
            u_under: hi,
        })
    }

    /// Under-domain equal to the over-domain.
    pub fn single(l: f64, u: f64) -> Result<Self> {
        Self::new(l, u, l, u)
    }
}

#[derive(Debug, Clone, Copy)]
struct Line {
    slope: f64,
    offset: f64,
}

impl From<TangentLine> for Line {
    fn from(t: TangentLine) -> Self {
        Line {
            slope: t.slope,
            offset: t.intercept,
        }
    }
}

fn chord(kind: ActivationKind, l: f64, u: f64) -> Line {
    let slope = kind.chord_slope(l, u);
    Line {
        slope,
        offset: kind.value(l) - slope * l,
    }
}

pub fn classify(kind: ActivationKind, l: f64, u: f64) -> RelaxCase {
    if u - l < DEGENERATE_WIDTH {
        return RelaxCase::Degenerate;
    }
    let k = kind.chord_slope(l, u);
    let (dl, du) = (kind.derivative(l), kind.derivative(u));
    if dl < k - CASE_TOLERANCE && k < du - CASE_TOLERANCE {
        RelaxCase::Convex
    } else if dl > k + CASE_TOLERANCE && k > du + CASE_TOLERANCE {
        RelaxCase::Concave
    } else {
        // Equality within tolerance lands here. Both slopes above the chord
        // is impossible for an increasing single-inflection curve.
        debug_assert!(
            !(dl > k + CASE_TOLERANCE && du > k + CASE_TOLERANCE),
            "{kind} on [{l}, {u}]: both endpoint slopes exceed the chord"
        );
        RelaxCase::Spanning
    }
}

/// Upper line from the tangent family: the tangent at `u_under` when it stays
/// above the curve at `l`, otherwise the tangent through `(l, σ(l))`.
fn upper_tangent(kind: ActivationKind, l: f64, u: f64, u_under: f64) -> Line {
    if l >= 0.0 {
        // concave over the whole domain, every tangent is an upper bound
        return kind.tangent_at(u_under).into();
    }
    if u <= 0.0 {
        return chord(kind, l, u);
    }
    match kind.crossing_tangent(l, 0.0, u) {
        Ok(crossing) if u_under <= crossing.point => crossing.into(),
        Ok(_) => kind.tangent_at(u_under).into(),
        Err(_) => chord(kind, l, u),
    }
}

/// Lower line from the tangent family, mirror of [`upper_tangent`].
fn lower_tangent(kind: ActivationKind, l: f64, u: f64, l_under: f64) -> Line {
    if u <= 0.0 {
        return kind.tangent_at(l_under).into();
    }
    if l >= 0.0 {
        return chord(kind, l, u);
    }
    match kind.crossing_tangent(u, l, 0.0) {
        Ok(crossing) if l_under >= crossing.point => crossing.into(),
        Ok(_) => kind.tangent_at(l_under).into(),
        Err(_) => chord(kind, l, u),
    }
}

/// Points where `σ(x) - (slope x + offset)` can attain its extrema on `[l, u]`.
fn audit_points(kind: ActivationKind, slope: f64, l: f64, u: f64) -> impl Iterator<Item = f64> {
    let interior = kind.slope_preimage(slope);
    [Some(l), Some(u), interior, interior.map(|x| -x)]
        .into_iter()
        .flatten()
        .filter(move |x| *x >= l && *x <= u)
}

/// Largest amount by which the curve rises above `line` on `[l, u]`.
pub fn upper_violation(kind: ActivationKind, slope: f64, offset: f64, l: f64, u: f64) -> f64 {
    audit_points(kind, slope, l, u)
        .map(|x| kind.value(x) - (slope * x + offset))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest amount by which `line` rises above the curve on `[l, u]`.
pub fn lower_violation(kind: ActivationKind, slope: f64, offset: f64, l: f64, u: f64) -> f64 {
    audit_points(kind, slope, l, u)
        .map(|x| (slope * x + offset) - kind.value(x))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn repair_upper(kind: ActivationKind, mut line: Line, l: f64, u: f64) -> Line {
    let v = upper_violation(kind, line.slope, line.offset, l, u);
    if v > 0.0 {
        line.offset += v + REPAIR_SLACK;
    }
    line
}

fn repair_lower(kind: ActivationKind, mut line: Line, l: f64, u: f64) -> Line {
    let v = lower_violation(kind, line.slope, line.offset, l, u);
    if v > 0.0 {
        line.offset -= v + REPAIR_SLACK;
    }
    line
}

/// Relaxation on the over-domain of `dd`, guided by its under-domain.
pub fn relax_dual(kind: ActivationKind, dd: &DualDomain) -> LinearRelaxation {
    let (l, u) = (dd.l_over, dd.u_over);
    let case = classify(kind, l, u);
    let (lower, upper) = match case {
        RelaxCase::Degenerate => {
            let t: Line = kind.tangent_at(0.5 * (l + u)).into();
            (t, t)
        }
        RelaxCase::Convex => (lower_tangent(kind, l, u, dd.l_under), chord(kind, l, u)),
        RelaxCase::Concave => (chord(kind, l, u), upper_tangent(kind, l, u, dd.u_under)),
        RelaxCase::Spanning => (
            lower_tangent(kind, l, u, dd.l_under),
            upper_tangent(kind, l, u, dd.u_under),
        ),
    };
    let lower = repair_lower(kind, lower, l, u);
    let upper = repair_upper(kind, upper, l, u);
    LinearRelaxation {
        lower_slope: lower.slope,
        lower_offset: lower.offset,
        upper_slope: upper.slope,
        upper_offset: upper.offset,
        domain: (l, u),
        case,
    }
}

/// Relaxation from the over-domain alone: the under-domain is taken to be the
/// whole of `[l, u]`, so tangents sit at the endpoints.
pub fn relax_single(kind: ActivationKind, l: f64, u: f64) -> LinearRelaxation {
    relax_dual(
        kind,
        &DualDomain {
            l_over: l,
            u_over: u,
            l_under: l,
            u_under: u,
        },
    )
}
