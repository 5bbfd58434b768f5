//! Symbolic bound propagation by backward substitution.
//!
//! A linear function of some layer's pre-activations is rewritten layer by
//! layer into a linear function of the network input: affine maps are
//! composed exactly, and each activation output is replaced by its upper or
//! lower relaxation line depending on the sign of its coefficient. The result
//! is concretized over the input box.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::model::{InputRegion, Network};
use crate::relaxation::{relax_dual, relax_single, DualDomain, LinearRelaxation};
use crate::underapprox::UnderBounds;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Min,
    Max,
}

/// `coeffs · x + offset` over the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicBound {
    pub coeffs: Vec<f64>,
    pub offset: f64,
}

/// How hidden-neuron relaxations are chosen.
#[derive(Debug, Clone, Copy)]
pub enum Relax<'a> {
    /// Over-domain only.
    Single,
    /// Over-domain guided by these under-domains.
    Dual(&'a UnderBounds),
}

/// Over-domains and relaxations of every hidden neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    pub relaxations: Vec<Vec<LinearRelaxation>>,
}

/// Extremum of a linear function over the region.
pub fn concretize(sb: &SymbolicBound, region: &InputRegion, direction: Direction) -> Result<f64> {
    if sb.coeffs.len() != region.dim() {
        return Err(Error::Dimension {
            expected: region.dim(),
            got: sb.coeffs.len(),
        });
    }
    Ok(concretize_row(
        ArrayView1::from(&sb.coeffs),
        sb.offset,
        region,
        direction,
    ))
}

fn concretize_row(
    coeffs: ArrayView1<f64>,
    offset: f64,
    region: &InputRegion,
    direction: Direction,
) -> f64 {
    let sign = match direction {
        Direction::Min => -1.0,
        Direction::Max => 1.0,
    };
    let (center, spread) = match region.clamp() {
        None => {
            let eps = region.radius();
            let dot: f64 = coeffs.iter().zip(region.center()).map(|(a, x)| a * x).sum();
            let l1: f64 = coeffs.iter().map(|a| a.abs()).sum();
            (dot, eps * l1)
        }
        Some(_) => {
            let mut dot = 0.0;
            let mut spread = 0.0;
            for (j, a) in coeffs.iter().enumerate() {
                let (lo, hi) = region.coordinate_bounds(j);
                dot += a * 0.5 * (lo + hi);
                spread += a.abs() * 0.5 * (hi - lo);
            }
            (dot, spread)
        }
    };
    center + sign * spread + offset
}

/// Rewrites rows of `coeffs` (over the pre-activations of layer `top`) into
/// functions of the input that bound them from above (`Max`) or below (`Min`).
fn substitute(
    net: &Network,
    relaxations: &[Vec<LinearRelaxation>],
    top: usize,
    mut coeffs: Array2<f64>,
    mut offsets: Array1<f64>,
    direction: Direction,
) -> (Array2<f64>, Array1<f64>) {
    for j in (0..=top).rev() {
        let layer = &net.layers()[j];
        offsets = offsets + coeffs.dot(layer.bias());
        coeffs = coeffs.dot(layer.weights());
        if j == 0 {
            break;
        }
        let relax = &relaxations[j - 1];
        for (mut row, offset) in coeffs.rows_mut().into_iter().zip(offsets.iter_mut()) {
            for (c, r) in row.iter_mut().zip(relax) {
                let upper = (*c > 0.0) == (direction == Direction::Max);
                let (slope, shift) = if upper {
                    (r.upper_slope, r.upper_offset)
                } else {
                    (r.lower_slope, r.lower_offset)
                };
                *offset += *c * shift;
                *c *= slope;
            }
        }
    }
    (coeffs, offsets)
}

/// Over-domains of all hidden neurons, computed layer by layer; each layer's
/// relaxations feed the next layer's substitution.
pub fn propagate(net: &Network, region: &InputRegion, relax: Relax<'_>) -> Result<LayerBounds> {
    if region.dim() != net.input_dim() {
        return Err(Error::Dimension {
            expected: net.input_dim(),
            got: region.dim(),
        });
    }
    if let Relax::Dual(under) = relax {
        if under.widths() != net.hidden_widths() {
            return Err(Error::Config(format!(
                "under-bounds shape {:?} does not match hidden widths {:?}",
                under.widths(),
                net.hidden_widths()
            )));
        }
    }

    let hidden = net.hidden_layers();
    let mut out = LayerBounds {
        lower: Vec::with_capacity(hidden),
        upper: Vec::with_capacity(hidden),
        relaxations: Vec::with_capacity(hidden),
    };
    for i in 0..hidden {
        let width = net.layers()[i].out_dim();
        let kind = net.hidden_activation(i);
        let eye = Array2::eye(width);
        let zeros = Array1::zeros(width);
        let (up_c, up_o) = substitute(
            net,
            &out.relaxations,
            i,
            eye.clone(),
            zeros.clone(),
            Direction::Max,
        );
        let (lo_c, lo_o) = substitute(net, &out.relaxations, i, eye, zeros, Direction::Min);

        let mut lows = Vec::with_capacity(width);
        let mut highs = Vec::with_capacity(width);
        let mut relaxations = Vec::with_capacity(width);
        for r in 0..width {
            let mut l = concretize_row(lo_c.row(r), lo_o[r], region, Direction::Min);
            let mut u = concretize_row(up_c.row(r), up_o[r], region, Direction::Max);
            if l > u {
                std::mem::swap(&mut l, &mut u);
            }
            let relaxation = match relax {
                Relax::Single => relax_single(kind, l, u),
                Relax::Dual(under) => {
                    let lu = under.lower(i, r).clamp(l, u);
                    let uu = under.upper(i, r).clamp(l, u);
                    relax_dual(kind, &DualDomain::new(l, u, lu.min(uu), lu.max(uu))?)
                }
            };
            lows.push(l);
            highs.push(u);
            relaxations.push(relaxation);
        }
        out.lower.push(lows);
        out.upper.push(highs);
        out.relaxations.push(relaxations);
    }
    Ok(out)
}

/// Sound lower bound of `min_{x in region} F_c(x) - F_ell(x)`.
pub fn output_margin_lower_bound(
    net: &Network,
    region: &InputRegion,
    lb: &LayerBounds,
    c: usize,
    ell: usize,
) -> Result<f64> {
    Ok(output_margin_lower_bounds(net, region, lb, c, &[ell])?[0])
}

/// Margin lower bounds of `c` against each label in `others`, in one pass.
pub fn output_margin_lower_bounds(
    net: &Network,
    region: &InputRegion,
    lb: &LayerBounds,
    c: usize,
    others: &[usize],
) -> Result<Vec<f64>> {
    let m = net.output_dim();
    if c >= m {
        return Err(Error::Label(format!(
            "label {c} out of range for {m} outputs"
        )));
    }
    for &ell in others {
        if ell >= m || ell == c {
            return Err(Error::Label(format!(
                "cannot compare label {c} against {ell}"
            )));
        }
    }
    if lb.relaxations.len() != net.hidden_layers() {
        return Err(Error::Config(
            "layer bounds do not belong to this network".into(),
        ));
    }
    let mut coeffs = Array2::zeros((others.len(), m));
    for (row, &ell) in others.iter().enumerate() {
        coeffs[[row, c]] = 1.0;
        coeffs[[row, ell]] = -1.0;
    }
    let top = net.layers().len() - 1;
    let (a, b) = substitute(
        net,
        &lb.relaxations,
        top,
        coeffs,
        Array1::zeros(others.len()),
        Direction::Min,
    );
    Ok((0..others.len())
        .map(|row| concretize_row(a.row(row), b[row], region, Direction::Min))
        .collect())
}

/// Symbolic lower/upper bounds of hidden neuron `(layer, neuron)` over the input.
pub fn neuron_bounds(
    net: &Network,
    lb: &LayerBounds,
    layer: usize,
    neuron: usize,
) -> Result<(SymbolicBound, SymbolicBound)> {
    if layer >= net.hidden_layers() || neuron >= net.layers()[layer].out_dim() {
        return Err(Error::Index(format!("hidden neuron ({layer}, {neuron})")));
    }
    let width = net.layers()[layer].out_dim();
    let mut e = Array2::zeros((1, width));
    e[[0, neuron]] = 1.0;
    let to_bound = |(a, b): (Array2<f64>, Array1<f64>)| SymbolicBound {
        coeffs: a.row(0).to_vec(),
        offset: b[0],
    };
    let lower = to_bound(substitute(
        net,
        &lb.relaxations,
        layer,
        e.clone(),
        Array1::zeros(1),
        Direction::Min,
    ));
    let upper = to_bound(substitute(
        net,
        &lb.relaxations,
        layer,
        e,
        Array1::zeros(1),
        Direction::Max,
    ));
    Ok((lower, upper))
}
