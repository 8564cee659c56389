//! Fully connected scalar-output networks: data model, forward pass,
//! parameter flattening, reverse-mode gradients and the affine-regime
//! compiler.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::activation::{ActivationKind, AffineSegment};
use crate::error::{Error, Result};
use crate::loss::{FiniteMeasure, LossSpec, Target};

/// Input dimension, hidden widths and hidden activations. The output layer
/// always has width one and no activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    input_dim: usize,
    widths: Vec<usize>,
    activations: Vec<ActivationKind>,
}

impl Architecture {
    pub fn new(input_dim: usize, widths: Vec<usize>, activations: Vec<ActivationKind>) -> Result<Self> {
        let arch = Architecture {
            input_dim,
            widths,
            activations,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Same activation on every hidden layer.
    pub fn uniform(input_dim: usize, widths: Vec<usize>, activation: ActivationKind) -> Result<Self> {
        let activations = vec![activation; widths.len()];
        Self::new(input_dim, widths, activations)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Architecture("input dimension must be >= 1".into()));
        }
        if self.widths.is_empty() {
            return Err(Error::Architecture("at least one hidden layer is required".into()));
        }
        if let Some(i) = self.widths.iter().position(|&w| w == 0) {
            return Err(Error::Architecture(format!("hidden layer {} has width 0", i + 1)));
        }
        if self.activations.len() != self.widths.len() {
            return Err(Error::Architecture(format!(
                "{} activations for {} hidden layers",
                self.activations.len(),
                self.widths.len()
            )));
        }
        for act in &self.activations {
            act.validate()?;
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activations(&self) -> &[ActivationKind] {
        &self.activations
    }

    /// `(rows, cols)` of `A_1 .. A_{L+1}`.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.widths.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.widths);
        dims.push(1);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    /// Dimension `m` of the flattened parameter space.
    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * (c + 1)).sum()
    }

    /// Same depth and activations with every hidden width replaced.
    pub fn with_widths(&self, widths: Vec<usize>) -> Result<Self> {
        Self::new(self.input_dim, widths, self.activations.clone())
    }
}

/// Weights `A_i` and bias `b_i` of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            weights: DMatrix::zeros(rows, cols),
            bias: DVector::zeros(rows),
        }
    }

    /// Panics if the rows are ragged or disagree with `bias`.
    pub fn from_rows(rows: &[Vec<f64>], bias: Vec<f64>) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged weight rows");
        assert_eq!(rows.len(), bias.len(), "bias length");
        Layer {
            weights: DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]),
            bias: DVector::from_vec(bias),
        }
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.weights
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerJson {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParametersJson {
    layers: Vec<LayerJson>,
}

/// The collection `{(A_i, b_i)}`, `i = 1..=L+1`. Serializes as
/// `{"layers": [{"A": [[..]], "b": [..]}, ..]}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    layers: Vec<Layer>,
}

impl Serialize for Parameters {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParametersJson {
            layers: self
                .layers
                .iter()
                .map(|l| LayerJson {
                    a: l.rows(),
                    b: l.bias.iter().copied().collect(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Parameters {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = ParametersJson::deserialize(d)?;
        let mut layers = Vec::with_capacity(raw.layers.len());
        for (i, l) in raw.layers.into_iter().enumerate() {
            let cols = l.a.first().map_or(0, Vec::len);
            if l.a.iter().any(|r| r.len() != cols) || l.a.len() != l.b.len() {
                return Err(serde::de::Error::custom(format!(
                    "layer {}: ragged weights or bias length mismatch",
                    i + 1
                )));
            }
            layers.push(Layer::from_rows(&l.a, l.b));
        }
        Ok(Parameters { layers })
    }
}

impl Parameters {
    pub fn zeros(arch: &Architecture) -> Self {
        Parameters {
            layers: arch
                .layer_shapes()
                .into_iter()
                .map(|(r, c)| Layer::zeros(r, c))
                .collect(),
        }
    }

    pub fn from_layers(arch: &Architecture, layers: Vec<Layer>) -> Result<Self> {
        let p = Parameters { layers };
        p.check(arch)?;
        Ok(p)
    }

    /// Without shape validation; callers check against an architecture later.
    pub fn from_layers_unchecked(layers: Vec<Layer>) -> Self {
        Parameters { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn check(&self, arch: &Architecture) -> Result<()> {
        let shapes = arch.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} layers, architecture has {}",
                self.layers.len(),
                shapes.len()
            )));
        }
        for (i, ((r, c), l)) in shapes.iter().zip(&self.layers).enumerate() {
            if l.weights.shape() != (*r, *c) || l.bias.len() != *r {
                return Err(Error::Shape(format!(
                    "layer {}: weights {:?} bias {}, expected {r}x{c} and {r}",
                    i + 1,
                    l.weights.shape(),
                    l.bias.len()
                )));
            }
        }
        Ok(())
    }

    /// Layer by layer: `A_i` row-major, then `b_i`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            for row in l.weights.row_iter() {
                out.extend(row.iter());
            }
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn unflatten(arch: &Architecture, flat: &[f64]) -> Result<Self> {
        let m = arch.num_params();
        if flat.len() != m {
            return Err(Error::Length {
                expected: m,
                got: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(r, c)| {
                let weights = DMatrix::from_row_iterator(r, c, it.by_ref().take(r * c));
                let bias = DVector::from_iterator(r, it.by_ref().take(r));
                Layer { weights, bias }
            })
            .collect();
        Ok(Parameters { layers })
    }

    /// Scales `(A_{L+1}, b_{L+1})` by `t`.
    pub fn scale_output(&mut self, t: f64) {
        let out = self.layers.last_mut().expect("non-empty");
        out.weights *= t;
        out.bias *= t;
    }

    pub fn output_bias(&self) -> f64 {
        self.layers.last().expect("non-empty").bias[0]
    }

    pub fn set_output_bias(&mut self, b: f64) {
        self.layers.last_mut().expect("non-empty").bias[0] = b;
    }

    pub fn distance(&self, other: &Parameters) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// `x -> slope . x + intercept`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineMap {
    #[serde(rename = "a")]
    pub slope: Vec<f64>,
    #[serde(rename = "c")]
    pub intercept: f64,
}

impl AffineMap {
    pub fn new(slope: Vec<f64>, intercept: f64) -> Self {
        AffineMap { slope, intercept }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        AffineMap {
            slope: vec![0.0; dim],
            intercept: c,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.slope.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.intercept
    }
}

/// Every intermediate quantity of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `A_i z_{i-1} + b_i` for hidden layers `i = 1..=L`.
    pub pre: Vec<DVector<f64>>,
    /// `sigma_i(pre_i)`.
    pub post: Vec<DVector<f64>>,
    pub output: f64,
}

fn check_input(arch: &Architecture, x: &[f64]) -> Result<()> {
    if x.len() != arch.input_dim {
        return Err(Error::Shape(format!(
            "input has dimension {}, architecture expects {}",
            x.len(),
            arch.input_dim
        )));
    }
    Ok(())
}

fn trace_unchecked(arch: &Architecture, params: &Parameters, x: &[f64]) -> Trace {
    let depth = arch.depth();
    let mut z = DVector::from_column_slice(x);
    let mut pre = Vec::with_capacity(depth);
    let mut post = Vec::with_capacity(depth);
    for (layer, act) in params.layers[..depth].iter().zip(&arch.activations) {
        let p = &layer.weights * &z + &layer.bias;
        z = p.map(|s| act.eval(s));
        pre.push(p);
        post.push(z.clone());
    }
    let out = &params.layers[depth];
    let output = (&out.weights * &z)[0] + out.bias[0];
    Trace { pre, post, output }
}

pub fn forward_trace(arch: &Architecture, params: &Parameters, x: &[f64]) -> Result<Trace> {
    params.check(arch)?;
    check_input(arch, x)?;
    Ok(trace_unchecked(arch, params, x))
}

/// `psi(alpha, x)`.
pub fn forward(arch: &Architecture, params: &Parameters, x: &[f64]) -> Result<f64> {
    forward_trace(arch, params, x).map(|t| t.output)
}

/// Outputs at every point, in order.
pub fn realization(arch: &Architecture, params: &Parameters, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    params.check(arch)?;
    points
        .iter()
        .map(|x| {
            check_input(arch, x)?;
            Ok(trace_unchecked(arch, params, x).output)
        })
        .collect()
}

/// Reverse accumulation of `sum_k output_grads[k] * d psi(alpha, x_k) / d alpha`
/// in flattened order. Activation derivatives are right derivatives.
pub fn backprop(
    arch: &Architecture,
    params: &Parameters,
    points: &[Vec<f64>],
    output_grads: &[f64],
) -> Result<Vec<f64>> {
    params.check(arch)?;
    if points.len() != output_grads.len() {
        return Err(Error::Shape(format!(
            "{} points but {} output gradients",
            points.len(),
            output_grads.len()
        )));
    }
    let mut grads: Vec<Layer> = arch
        .layer_shapes()
        .into_iter()
        .map(|(r, c)| Layer::zeros(r, c))
        .collect();
    let depth = arch.depth();
    for (x, &g) in points.iter().zip(output_grads) {
        check_input(arch, x)?;
        if g == 0.0 {
            continue;
        }
        let trace = trace_unchecked(arch, params, x);
        let input = DVector::from_column_slice(x);
        let mut delta = DVector::from_element(1, g);
        for i in (0..=depth).rev() {
            let below = if i == 0 { &input } else { &trace.post[i - 1] };
            grads[i].weights += &delta * below.transpose();
            grads[i].bias += &delta;
            if i > 0 {
                let back = params.layers[i].weights.transpose() * &delta;
                let act = &arch.activations[i - 1];
                delta = back.zip_map(&trace.pre[i - 1], |d, s| d * act.derivative(s));
            }
        }
    }
    Ok(Parameters { layers: grads }.flatten())
}

/// Gradient of `sum_k w_k |psi(alpha, x_k) - y_k|^p` with respect to the
/// flattened parameters.
pub fn param_gradient(
    arch: &Architecture,
    params: &Parameters,
    measure: &FiniteMeasure,
    target: &Target,
    spec: &LossSpec,
) -> Result<Vec<f64>> {
    let preds = realization(arch, params, measure.points())?;
    let g = crate::loss::loss_gradient_predictions(spec, measure, &preds, target)?;
    backprop(arch, params, measure.points(), &g)
}

/// If every pre-activation over `points` lies strictly inside its layer's
/// segment, returns the affine map the network realizes there; otherwise the
/// first violation found.
pub fn affine_realization(
    arch: &Architecture,
    params: &Parameters,
    segments: &[AffineSegment],
    points: &[Vec<f64>],
) -> Result<AffineMap> {
    params.check(arch)?;
    if segments.len() != arch.depth() {
        return Err(Error::Shape(format!(
            "{} segments for {} hidden layers",
            segments.len(),
            arch.depth()
        )));
    }
    for (k, x) in points.iter().enumerate() {
        check_input(arch, x)?;
        let trace = trace_unchecked(arch, params, x);
        for (i, (pre, seg)) in trace.pre.iter().zip(segments).enumerate() {
            let margin = pre.iter().map(|&s| seg.margin(s)).fold(f64::INFINITY, f64::min);
            if !(margin > 0.0) {
                return Err(Error::NotInRegime {
                    layer: i + 1,
                    sample: k,
                    margin,
                });
            }
        }
    }
    Ok(compose_affine(arch, params, segments))
}

/// Composes `z -> beta_i (A_i z + b_i) + gamma_i 1` over the hidden layers
/// and the output layer, ignoring containment.
pub fn compose_affine(arch: &Architecture, params: &Parameters, segments: &[AffineSegment]) -> AffineMap {
    let d = arch.input_dim;
    let mut slope = DMatrix::<f64>::identity(d, d);
    let mut offset = DVector::<f64>::zeros(d);
    for (layer, seg) in params.layers[..arch.depth()].iter().zip(segments) {
        slope = (&layer.weights * slope) * seg.slope;
        offset = (&layer.weights * offset + &layer.bias) * seg.slope;
        offset.add_scalar_mut(seg.offset);
    }
    let out = params.layers.last().expect("non-empty");
    let s = &out.weights * slope;
    let c = (&out.weights * offset)[0] + out.bias[0];
    AffineMap::new(s.row(0).iter().copied().collect(), c)
}
