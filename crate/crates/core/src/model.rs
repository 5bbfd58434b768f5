//! Dense feed-forward networks: validated construction, the `dualcert-net-v1`
//! file format, exact evaluation and input gradients of hidden pre-activations.
//!
//! Layer indices in the API are 0-based. Hidden layer `i` is `layers[i]`; the
//! last layer is the linear output layer.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::activations::ActivationKind;
use crate::error::{Error, Result};

pub const NETWORK_FORMAT: &str = "dualcert-net-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    weights: Array2<f64>,
    bias: Array1<f64>,
    /// `None` is the identity (`"linear"` in files).
    activation: Option<ActivationKind>,
}

impl AffineLayer {
    /// `weights` has one row per output neuron.
    pub fn new(
        weights: Array2<f64>,
        bias: Array1<f64>,
        activation: Option<ActivationKind>,
    ) -> Self {
        // standard layout keeps the row slices contiguous for the hot loops
        let weights = weights.as_standard_layout().into_owned();
        Self {
            weights,
            bias,
            activation,
        }
    }

    /// # Panics
    /// If the rows have different lengths.
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        bias: Vec<f64>,
        activation: Option<ActivationKind>,
    ) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let n_rows = rows.len();
        assert!(rows.iter().all(|r| r.len() == cols), "ragged weight rows");
        let weights = Array2::from_shape_vec((n_rows, cols), rows.into_iter().flatten().collect())
            .expect("row lengths checked");
        Self::new(weights, Array1::from(bias), activation)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn activation(&self) -> Option<ActivationKind> {
        self.activation
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn weight_slice(&self) -> &[f64] {
        self.weights.as_slice().expect("standard layout")
    }

    /// `out = W input + b`
    fn affine_into(&self, input: &[f64], out: &mut Vec<f64>) {
        let cols = self.in_dim();
        out.clear();
        out.extend(
            self.weight_slice()
                .chunks_exact(cols.max(1))
                .take(self.out_dim())
                .zip(self.bias.iter())
                .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b),
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<AffineLayer>,
}

/// Pre-activation values of every layer for one input. `pre[i]` is the input
/// of layer `i`'s activation; the last entry is the network output.
#[derive(Debug, Clone)]
pub struct Trace {
    pub pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.pre.last().expect("networks have at least one layer")
    }
}

impl Network {
    /// Validates shapes, activations and finiteness.
    pub fn new(layers: Vec<AffineLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape {
                layer: 0,
                detail: "network has no layers".into(),
            });
        }
        let last = layers.len() - 1;
        for (i, layer) in layers.iter().enumerate() {
            let number = i + 1;
            if layer.out_dim() == 0 || layer.in_dim() == 0 {
                return Err(Error::Shape {
                    layer: number,
                    detail: "empty weight matrix".into(),
                });
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::Shape {
                    layer: number,
                    detail: format!(
                        "bias length {} does not match {} weight rows",
                        layer.bias.len(),
                        layer.out_dim()
                    ),
                });
            }
            if i > 0 && layer.in_dim() != layers[i - 1].out_dim() {
                return Err(Error::Shape {
                    layer: number,
                    detail: format!(
                        "weight matrix has {} columns but layer {} has {} neurons",
                        layer.in_dim(),
                        i,
                        layers[i - 1].out_dim()
                    ),
                });
            }
            if !layer.weights.iter().all(|w| w.is_finite()) {
                return Err(Error::NonFinite {
                    layer: number,
                    what: "weight",
                });
            }
            if !layer.bias.iter().all(|b| b.is_finite()) {
                return Err(Error::NonFinite {
                    layer: number,
                    what: "bias",
                });
            }
            match (i == last, layer.activation) {
                (true, Some(kind)) => {
                    return Err(Error::Shape {
                        layer: number,
                        detail: format!("output layer must be linear, found {kind}"),
                    })
                }
                (false, None) => {
                    return Err(Error::Shape {
                        layer: number,
                        detail: "hidden layer needs an S-curve activation, found linear".into(),
                    })
                }
                _ => {}
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Number of hidden (activated) layers.
    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.hidden_layers()]
            .iter()
            .map(AffineLayer::out_dim)
            .collect()
    }

    /// Activation of hidden layer `i`.
    pub fn hidden_activation(&self, i: usize) -> ActivationKind {
        self.layers[i]
            .activation
            .expect("hidden layers are activated")
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_neuron(&self, layer: usize, neuron: usize) -> Result<()> {
        if layer >= self.hidden_layers() {
            return Err(Error::Index(format!(
                "hidden layer {layer} (network has {})",
                self.hidden_layers()
            )));
        }
        if neuron >= self.layers[layer].out_dim() {
            return Err(Error::Index(format!(
                "neuron {neuron} of hidden layer {layer} (width {})",
                self.layers[layer].out_dim()
            )));
        }
        Ok(())
    }

    /// Evaluates layers `0..=upto`, recording pre-activations.
    pub(crate) fn trace_upto(&self, x: &[f64], upto: usize) -> Trace {
        let mut pre = Vec::with_capacity(upto + 1);
        let mut post: Vec<f64> = x.to_vec();
        for layer in &self.layers[..=upto] {
            let mut z = Vec::with_capacity(layer.out_dim());
            layer.affine_into(&post, &mut z);
            post.clear();
            match layer.activation {
                Some(kind) => post.extend(z.iter().map(|&v| kind.value(v))),
                None => post.extend_from_slice(&z),
            }
            pre.push(z);
        }
        Trace { pre }
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        Ok(self.trace_upto(x, self.layers.len() - 1))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.pre.pop().expect("non-empty"))
    }

    /// Input of neuron `neuron`'s activation on hidden layer `layer`.
    pub fn preactivation(&self, layer: usize, neuron: usize, x: &[f64]) -> Result<f64> {
        self.check_neuron(layer, neuron)?;
        self.check_input(x)?;
        Ok(self.trace_upto(x, layer).pre[layer][neuron])
    }

    /// Gradient of a hidden pre-activation with respect to the input.
    pub fn preactivation_gradient(
        &self,
        layer: usize,
        neuron: usize,
        x: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_neuron(layer, neuron)?;
        self.check_input(x)?;
        let trace = self.trace_upto(x, layer);
        let mut seed = vec![0.0; self.layers[layer].out_dim()];
        seed[neuron] = 1.0;
        Ok(self.pullback(&trace, layer, seed))
    }

    /// Gradient of `sum_j weights[j] * F_j(x)`.
    pub fn output_gradient(&self, x: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if weights.len() != self.output_dim() {
            return Err(Error::Dimension {
                expected: self.output_dim(),
                got: weights.len(),
            });
        }
        let last = self.layers.len() - 1;
        let trace = self.trace_upto(x, last);
        Ok(self.pullback(&trace, last, weights.to_vec()))
    }

    /// Reverse accumulation of `seed` (a cotangent on `pre[layer]`) down to the
    /// input.
    fn pullback(&self, trace: &Trace, layer: usize, mut grad: Vec<f64>) -> Vec<f64> {
        for j in (0..=layer).rev() {
            let w = &self.layers[j];
            let cols = w.in_dim();
            let mut below = vec![0.0; cols];
            for (row, g) in w.weight_slice().chunks_exact(cols).zip(&grad) {
                if *g != 0.0 {
                    for (b, wv) in below.iter_mut().zip(row) {
                        *b += g * wv;
                    }
                }
            }
            if j > 0 {
                let kind = self.hidden_activation(j - 1);
                for (b, z) in below.iter_mut().zip(&trace.pre[j - 1]) {
                    *b *= kind.derivative(*z);
                }
            }
            grad = below;
        }
        grad
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text)?;
        if file.format != NETWORK_FORMAT {
            return Err(Error::Format(file.format));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        for (i, raw) in file.layers.into_iter().enumerate() {
            let number = i + 1;
            if raw.kind != "dense" {
                return Err(Error::Shape {
                    layer: number,
                    detail: format!("unsupported layer type `{}`", raw.kind),
                });
            }
            let activation = match raw.activation.as_str() {
                "linear" => None,
                name => Some(name.parse::<ActivationKind>().map_err(|name| {
                    Error::UnknownActivation {
                        layer: number,
                        name,
                    }
                })?),
            };
            let cols = raw.weights.first().map_or(0, Vec::len);
            if let Some(bad) = raw.weights.iter().position(|r| r.len() != cols) {
                return Err(Error::Shape {
                    layer: number,
                    detail: format!(
                        "row {bad} has {} entries, expected {cols}",
                        raw.weights[bad].len()
                    ),
                });
            }
            let expected_cols = if i == 0 {
                file.input_dim
            } else {
                layers.last().map_or(0, |l: &AffineLayer| l.out_dim())
            };
            if cols != expected_cols {
                return Err(Error::Shape {
                    layer: number,
                    detail: format!("weight matrix has {cols} columns, expected {expected_cols}"),
                });
            }
            layers.push(AffineLayer::from_rows(raw.weights, raw.bias, activation));
        }
        Self::new(layers)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let file = NetworkFile {
            format: NETWORK_FORMAT.to_string(),
            input_dim: self.input_dim(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    kind: "dense".to_string(),
                    weights: l.weights.outer_iter().map(|r| r.to_vec()).collect(),
                    bias: l.bias.to_vec(),
                    activation: l
                        .activation
                        .map_or("linear", ActivationKind::name)
                        .to_string(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("network serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Random network with weights drawn from `N(0, 1) / sqrt(fan_in)` and
    /// biases from `N(0, 0.1)`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        kind: ActivationKind,
    ) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        let widths = hidden.iter().copied().chain(std::iter::once(output_dim));
        for (i, width) in widths.enumerate() {
            let scale = 1.0 / (fan_in as f64).sqrt();
            let weights =
                Array2::from_shape_simple_fn((width, fan_in), || normal.sample(rng) * scale);
            let bias = Array1::from_shape_simple_fn(width, || 0.1 * normal.sample(rng));
            let activation = (i < hidden.len()).then_some(kind);
            layers.push(AffineLayer::new(weights, bias, activation));
            fan_in = width;
        }
        Self::new(layers).expect("generated shapes are consistent")
    }
}

/// Index of the maximal entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkFile {
    format: String,
    input_dim: usize,
    layers: Vec<LayerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerFile {
    #[serde(rename = "type")]
    kind: String,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: String,
}

/// ℓ∞ ball around `center`, optionally intersected with a global box
/// `[lo, hi]` applied to every coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct InputRegion {
    center: Vec<f64>,
    radius: f64,
    clamp: Option<(f64, f64)>,
}

impl InputRegion {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(Error::Region(format!(
                "radius must be finite and non-negative, got {radius}"
            )));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Region("center has non-finite entries".into()));
        }
        Ok(Self {
            center,
            radius,
            clamp: None,
        })
    }

    pub fn with_clamp(mut self, lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::Region(format!(
                "clamp needs lo < hi, got [{lo}, {hi}]"
            )));
        }
        if self.center.iter().any(|&c| c < lo || c > hi) {
            return Err(Error::Region(format!(
                "center lies outside the clamp [{lo}, {hi}]"
            )));
        }
        self.clamp = Some((lo, hi));
        Ok(self)
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn clamp(&self) -> Option<(f64, f64)> {
        self.clamp
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Per-coordinate `(lo, hi)` of the region.
    pub fn coordinate_bounds(&self, j: usize) -> (f64, f64) {
        let c = self.center[j];
        let (mut lo, mut hi) = (c - self.radius, c + self.radius);
        if let Some((clo, chi)) = self.clamp {
            lo = lo.max(clo);
            hi = hi.min(chi);
        }
        (lo, hi)
    }

    /// Nearest point of the region.
    pub fn project(&self, x: &mut [f64]) {
        for (j, v) in x.iter_mut().enumerate() {
            let (lo, hi) = self.coordinate_bounds(j);
            *v = v.clamp(lo, hi);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(j, v)| {
                let (lo, hi) = self.coordinate_bounds(j);
                *v >= lo && *v <= hi
            })
    }

    /// Same center and clamp, different radius.
    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        let mut region = Self::new(self.center.clone(), radius)?;
        region.clamp = self.clamp;
        Ok(region)
    }
}

/// One labelled input row.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub label: usize,
    pub features: Vec<f64>,
}

/// Reads headerless CSV rows `label,x_1,...,x_n`.
pub fn load_instances(path: impl AsRef<Path>) -> Result<Vec<Instance>> {
    let path = path.as_ref();
    let bad = |detail: String| Error::Instances {
        path: path.to_path_buf(),
        detail,
    };
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(format!("row {row}: {e}")))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let mut fields = record.iter();
        let label = fields
            .next()
            .and_then(|f| f.parse::<usize>().ok())
            .ok_or_else(|| {
                bad(format!(
                    "row {row}: first column must be a non-negative integer label"
                ))
            })?;
        let features = fields
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad(format!("row {row}: non-numeric feature")))?;
        if let Some(first) = out.first().map(|i: &Instance| i.features.len()) {
            if first != features.len() {
                return Err(bad(format!(
                    "row {row}: {} features, expected {first}",
                    features.len()
                )));
            }
        }
        out.push(Instance { label, features });
    }
    Ok(out)
}
