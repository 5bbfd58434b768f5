//! Under-estimated pre-activation domains. Every bound recorded here is the
//! pre-activation value of a concrete input inside the region, so each
//! interval lies inside the neuron's actual domain.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, InputRegion, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnderStrategy {
    Sampling,
    Gradient,
    Both,
}

impl fmt::Display for UnderStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sampling => "sampling",
            Self::Gradient => "gradient",
            Self::Both => "both",
        })
    }
}

impl FromStr for UnderStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampling" => Ok(Self::Sampling),
            "gradient" => Ok(Self::Gradient),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!(
                "unknown under-approximation strategy `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnderConfig {
    pub n_samples: usize,
    /// Gradient step length as a fraction of the radius.
    pub step_fraction: f64,
    pub seed: u64,
}

impl Default for UnderConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            step_fraction: 0.45,
            seed: 0,
        }
    }
}

impl UnderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "step fraction must lie in (0, 1], got {}",
                self.step_fraction
            )));
        }
        Ok(())
    }
}

/// A witnessed value: `value` is the pre-activation at `input`.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub value: f64,
    pub input: Vec<f64>,
}

/// Per hidden layer, per neuron `[lower, upper]` with their witnesses.
#[derive(Debug, Clone, PartialEq)]
pub struct UnderBounds {
    lower: Vec<Vec<Witness>>,
    upper: Vec<Vec<Witness>>,
}

impl UnderBounds {
    pub fn layers(&self) -> usize {
        self.lower.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.lower.iter().map(Vec::len).collect()
    }

    pub fn lower(&self, layer: usize, neuron: usize) -> f64 {
        self.lower[layer][neuron].value
    }

    pub fn upper(&self, layer: usize, neuron: usize) -> f64 {
        self.upper[layer][neuron].value
    }

    pub fn lower_witness(&self, layer: usize, neuron: usize) -> &Witness {
        &self.lower[layer][neuron]
    }

    pub fn upper_witness(&self, layer: usize, neuron: usize) -> &Witness {
        &self.upper[layer][neuron]
    }

    /// Bounds of every neuron at a single input.
    fn at_point(net: &Network, x: &[f64]) -> Self {
        let trace = net.trace_upto(x, net.hidden_layers().saturating_sub(1));
        let hidden = net.hidden_layers();
        let lower: Vec<Vec<Witness>> = trace.pre[..hidden]
            .iter()
            .map(|z| {
                z.iter()
                    .map(|&value| Witness {
                        value,
                        input: x.to_vec(),
                    })
                    .collect()
            })
            .collect();
        Self {
            upper: lower.clone(),
            lower,
        }
    }

    fn absorb(&mut self, pre: &[Vec<f64>], x: &[f64]) {
        for (i, z) in pre.iter().take(self.lower.len()).enumerate() {
            for (r, &v) in z.iter().enumerate() {
                if v < self.lower[i][r].value {
                    self.lower[i][r] = Witness {
                        value: v,
                        input: x.to_vec(),
                    };
                }
                if v > self.upper[i][r].value {
                    self.upper[i][r] = Witness {
                        value: v,
                        input: x.to_vec(),
                    };
                }
            }
        }
    }
}

/// Deterministic stream of region samples. Sample 0 is the center; the rest
/// are uniform on the ℓ∞ box, projected onto the clamp when one is set.
/// The unit-cube draws depend only on the seed, so the same seed yields the
/// same relative positions at every radius.
pub struct SampleStream<'a> {
    region: &'a InputRegion,
    rng: ChaCha8Rng,
    emitted: usize,
}

impl<'a> SampleStream<'a> {
    pub fn new(region: &'a InputRegion, seed: u64) -> Self {
        Self {
            region,
            rng: ChaCha8Rng::seed_from_u64(seed),
            emitted: 0,
        }
    }

    pub fn next_into(&mut self, x: &mut Vec<f64>) {
        x.clear();
        x.extend_from_slice(self.region.center());
        if self.emitted > 0 {
            let eps = self.region.radius();
            for v in x.iter_mut() {
                *v += eps * self.rng.random_range(-1.0..=1.0);
            }
            if self.region.clamp().is_some() {
                self.region.project(x);
            }
        }
        self.emitted += 1;
    }
}

/// Result of a sampling pass that also watched for misclassified samples.
pub struct SampleScan {
    pub bounds: UnderBounds,
    /// First sample whose prediction differs from the watched label.
    pub counterexample: Option<Vec<f64>>,
}

/// Running min/max of every hidden pre-activation over `n` samples (the
/// center counts as the first). When `watch` is a label, the first sample
/// predicted differently is kept as a counterexample.
pub fn sample_scan(
    net: &Network,
    region: &InputRegion,
    n: usize,
    seed: u64,
    watch: Option<usize>,
) -> Result<SampleScan> {
    check_region(net, region)?;
    let mut bounds = UnderBounds::at_point(net, region.center());
    let mut counterexample = None;
    let last = net.layers().len() - 1;
    let mut stream = SampleStream::new(region, seed);
    let mut x = Vec::with_capacity(region.dim());
    for p in 0..n.max(1) {
        stream.next_into(&mut x);
        if p == 0 && watch.is_none() {
            continue;
        }
        let trace = net.trace_upto(&x, last);
        bounds.absorb(&trace.pre, &x);
        if let (Some(label), None) = (watch, &counterexample) {
            if argmax(trace.output()) != label {
                counterexample = Some(x.clone());
            }
        }
    }
    Ok(SampleScan {
        bounds,
        counterexample,
    })
}

pub fn sample_under(
    net: &Network,
    region: &InputRegion,
    n: usize,
    seed: u64,
) -> Result<UnderBounds> {
    Ok(sample_scan(net, region, n, seed, None)?.bounds)
}

/// One signed-gradient step of length `step_fraction * ε` in each direction
/// per neuron, projected back into the region. The center is kept as a
/// fallback so every interval contains its value there.
pub fn gradient_under(
    net: &Network,
    region: &InputRegion,
    step_fraction: f64,
) -> Result<UnderBounds> {
    check_region(net, region)?;
    let x0 = region.center();
    let step = step_fraction * region.radius();
    let mut bounds = UnderBounds::at_point(net, x0);
    let mut lo = Vec::with_capacity(x0.len());
    let mut hi = Vec::with_capacity(x0.len());
    for layer in 0..net.hidden_layers() {
        for r in 0..net.layers()[layer].out_dim() {
            let grad = net.preactivation_gradient(layer, r, x0)?;
            lo.clear();
            hi.clear();
            for (c, g) in x0.iter().zip(&grad) {
                let s = sign(*g);
                lo.push(c - step * s);
                hi.push(c + step * s);
            }
            region.project(&mut lo);
            region.project(&mut hi);
            let z_lo = net.trace_upto(&lo, layer).pre[layer][r];
            let z_hi = net.trace_upto(&hi, layer).pre[layer][r];
            if z_lo < bounds.lower[layer][r].value {
                bounds.lower[layer][r] = Witness {
                    value: z_lo,
                    input: lo.clone(),
                };
            }
            if z_hi > bounds.upper[layer][r].value {
                bounds.upper[layer][r] = Witness {
                    value: z_hi,
                    input: hi.clone(),
                };
            }
        }
    }
    Ok(bounds)
}

/// Elementwise envelope of two under-approximations of the same network.
pub fn combine(a: &UnderBounds, b: &UnderBounds) -> Result<UnderBounds> {
    if a.widths() != b.widths() {
        return Err(Error::Config(format!(
            "under-bound shapes differ: {:?} vs {:?}",
            a.widths(),
            b.widths()
        )));
    }
    let pick = |x: &Vec<Vec<Witness>>, y: &Vec<Vec<Witness>>, take_y: fn(f64, f64) -> bool| {
        x.iter()
            .zip(y)
            .map(|(xs, ys)| {
                xs.iter()
                    .zip(ys)
                    .map(|(p, q)| {
                        if take_y(q.value, p.value) {
                            q.clone()
                        } else {
                            p.clone()
                        }
                    })
                    .collect()
            })
            .collect()
    };
    Ok(UnderBounds {
        lower: pick(&a.lower, &b.lower, |q, p| q < p),
        upper: pick(&a.upper, &b.upper, |q, p| q > p),
    })
}

/// Runs the chosen strategy.
pub fn estimate(
    net: &Network,
    region: &InputRegion,
    strategy: UnderStrategy,
    cfg: &UnderConfig,
) -> Result<UnderBounds> {
    cfg.validate()?;
    match strategy {
        UnderStrategy::Sampling => sample_under(net, region, cfg.n_samples, cfg.seed),
        UnderStrategy::Gradient => gradient_under(net, region, cfg.step_fraction),
        UnderStrategy::Both => combine(
            &sample_under(net, region, cfg.n_samples, cfg.seed)?,
            &gradient_under(net, region, cfg.step_fraction)?,
        ),
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_region(net: &Network, region: &InputRegion) -> Result<()> {
    if region.dim() != net.input_dim() {
        return Err(Error::Dimension {
            expected: net.input_dim(),
            got: region.dim(),
        });
    }
    Ok(())
}
