//! Closed-form spurious local minima: the affine-emulating construction for
//! nonconstant segments, the bias-only construction for a constant segment,
//! certified regime radii, and sampling of the surrounding family of
//! parameters that realize the same best approximation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activation::AffineSegment;
use crate::error::{Error, Result};
use crate::loss::{best_affine, best_constant, FiniteMeasure, LossSpec, Target};
use crate::net::{compose_affine, forward_trace, realization, AffineMap, Architecture, Layer, Parameters};
use crate::par::{map_indexed, stream_rng, Exec};

/// Tolerance of the segment check in [`construct_nonconstant`] and
/// [`construct_constant`].
pub const SEGMENT_TOLERANCE: f64 = 1e-12;

/// Realization tolerance for members of the sampled family.
pub const FAMILY_TOLERANCE: f64 = 1e-9;

/// Maximum number of scale halvings in [`sample_e`].
pub const MAX_HALVINGS: usize = 40;

const EMPIRICAL_PROBES: usize = 64;
const EMPIRICAL_DOUBLINGS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Variant {
    Nonconstant,
    /// Constant segment at hidden layer `layer` (1-based).
    Constant { layer: usize },
}

/// Parameter-space radii around the constructed point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeRadius {
    /// Every parameter within this Euclidean distance keeps all constrained
    /// pre-activations inside their segments.
    pub certified: f64,
    /// Largest `certified * 2^k` at which random probes found no violation.
    pub empirical: f64,
    /// The certified bound collapsed to zero in floating point.
    pub underflow: bool,
    /// Some unconstrained layer has no known Lipschitz constant; the
    /// certified radius is then zero.
    pub lipschitz_unknown: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpuriousConstruction {
    pub arch: Architecture,
    pub params: Parameters,
    pub realization: AffineMap,
    /// One entry per hidden layer; `None` for layers left unconstrained.
    pub segments: Vec<Option<AffineSegment>>,
    /// `max_{u in K} |a . u|`.
    pub input_bound: f64,
    /// Smallest segment margin over `K` per hidden layer.
    pub margins: Vec<Option<f64>>,
    pub radius: RegimeRadius,
    pub variant: Variant,
    pub points: Vec<Vec<f64>>,
}

impl SpuriousConstruction {
    /// Segments of the nonconstant variant. Panics for the constant variant.
    pub fn full_segments(&self) -> Vec<AffineSegment> {
        self.segments
            .iter()
            .map(|s| s.expect("every layer constrained"))
            .collect()
    }

    /// The same construction data re-centred at `params` (typically a family
    /// member), with margins and radii recomputed there.
    pub fn recentered(&self, params: Parameters, seed: u64) -> Result<SpuriousConstruction> {
        params.check(&self.arch)?;
        let mut c = self.clone();
        c.margins = layer_margins(&self.arch, &params, &self.segments, &self.points)?;
        c.params = params;
        c.radius = regime_radius(&c, seed)?;
        Ok(c)
    }

    /// Dimension of the free coordinates of the family around this point.
    pub fn family_dim(&self) -> usize {
        ReducedParams::dim(&self.arch, self.variant)
    }
}

fn check_segment(arch: &Architecture, layer: usize, seg: &AffineSegment) -> Result<()> {
    seg.validate()?;
    let act = &arch.activations()[layer - 1];
    let dev = seg.max_deviation(act, 1000);
    let scale = 1.0 + seg.slope.abs() * (seg.center.abs() + seg.radius) + seg.offset.abs();
    if !(dev <= SEGMENT_TOLERANCE * scale) {
        return Err(Error::InvalidArgument(format!(
            "layer {layer}: {act} deviates from the supplied segment by {dev:e}"
        )));
    }
    Ok(())
}

fn check_points(arch: &Architecture, points: &[Vec<f64>]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::EmptyDomain);
    }
    if let Some(x) = points.iter().find(|x| x.len() != arch.input_dim()) {
        return Err(Error::Shape(format!(
            "point of dimension {}, architecture expects {}",
            x.len(),
            arch.input_dim()
        )));
    }
    Ok(())
}

/// The affine-emulating point: row 1 of every hidden layer carries a scaled
/// copy of `a . x` through the centre of its segment, all other rows sit at
/// the centre, and the output layer undoes the scaling.
pub fn construct_nonconstant(
    arch: &Architecture,
    segments: &[AffineSegment],
    a_bar: &[f64],
    c_bar: f64,
    points: &[Vec<f64>],
) -> Result<SpuriousConstruction> {
    let depth = arch.depth();
    if segments.len() != depth {
        return Err(Error::Shape(format!("{} segments for {depth} hidden layers", segments.len())));
    }
    for (i, seg) in segments.iter().enumerate() {
        if seg.is_constant() {
            return Err(Error::ConstantSegmentSupplied { layer: i + 1 });
        }
    }
    for (i, seg) in segments.iter().enumerate() {
        check_segment(arch, i + 1, seg)?;
    }
    check_points(arch, points)?;
    if a_bar.len() != arch.input_dim() {
        return Err(Error::Shape(format!(
            "slope has dimension {}, architecture expects {}",
            a_bar.len(),
            arch.input_dim()
        )));
    }
    let bound = points
        .iter()
        .map(|x| x.iter().zip(a_bar).map(|(x, a)| x * a).sum::<f64>().abs())
        .fold(0.0, f64::max);
    let denom = 2.0 * bound + 1.0;
    let shapes = arch.layer_shapes();
    let mut layers = Vec::with_capacity(depth + 1);

    let s1 = &segments[0];
    let mut a1 = Layer::zeros(shapes[0].0, shapes[0].1);
    for (j, a) in a_bar.iter().enumerate() {
        a1.weights[(0, j)] = s1.radius / denom * a;
    }
    a1.bias.fill(s1.center);
    layers.push(a1);

    for i in 1..depth {
        let (prev, cur) = (&segments[i - 1], &segments[i]);
        let mut l = Layer::zeros(shapes[i].0, shapes[i].1);
        let w = cur.radius / (prev.slope * prev.radius);
        l.weights[(0, 0)] = w;
        l.bias.fill(cur.center);
        l.bias[0] -= (prev.center * prev.slope + prev.offset) * w;
        layers.push(l);
    }

    let last = &segments[depth - 1];
    let mut out = Layer::zeros(1, shapes[depth].1);
    let w = denom / (last.slope * last.radius);
    out.weights[(0, 0)] = w;
    out.bias[0] = c_bar - (last.center * last.slope + last.offset) * w;
    layers.push(out);

    let params = Parameters::from_layers(arch, layers)?;
    let segs: Vec<Option<AffineSegment>> = segments.iter().copied().map(Some).collect();
    finish(arch, params, AffineMap::new(a_bar.to_vec(), c_bar), segs, bound, Variant::Nonconstant, points)
}

/// Zero weights, `b_j = c_j 1`, `b_{L+1} = c_bar` and zero biases elsewhere.
/// `layer` is 1-based.
pub fn construct_constant(
    arch: &Architecture,
    layer: usize,
    segment: &AffineSegment,
    c_bar: f64,
    points: &[Vec<f64>],
) -> Result<SpuriousConstruction> {
    if !segment.is_constant() {
        return Err(Error::NoConstantSegment);
    }
    if layer == 0 || layer > arch.depth() {
        return Err(Error::IndexOutOfRange {
            index: layer,
            max: arch.depth(),
        });
    }
    check_segment(arch, layer, segment)?;
    check_points(arch, points)?;
    let mut params = Parameters::zeros(arch);
    params.layers_mut()[layer - 1].bias.fill(segment.center);
    params.set_output_bias(c_bar);
    let mut segs = vec![None; arch.depth()];
    segs[layer - 1] = Some(*segment);
    finish(
        arch,
        params,
        AffineMap::constant(arch.input_dim(), c_bar),
        segs,
        0.0,
        Variant::Constant { layer },
        points,
    )
}

/// Best affine fit of the target, then [`construct_nonconstant`].
pub fn construct_for_affine_fit(
    arch: &Architecture,
    segments: &[AffineSegment],
    spec: &LossSpec,
    measure: &FiniteMeasure,
    target: &Target,
) -> Result<SpuriousConstruction> {
    let (map, _) = best_affine(spec, measure, target)?;
    construct_nonconstant(arch, segments, &map.slope, map.intercept, measure.points())
}

/// Best constant fit of the target, then [`construct_constant`].
pub fn construct_for_constant_fit(
    arch: &Architecture,
    layer: usize,
    segment: &AffineSegment,
    spec: &LossSpec,
    measure: &FiniteMeasure,
    target: &Target,
) -> Result<SpuriousConstruction> {
    let (c, _) = best_constant(spec, measure, target)?;
    construct_constant(arch, layer, segment, c, measure.points())
}

fn finish(
    arch: &Architecture,
    params: Parameters,
    map: AffineMap,
    segments: Vec<Option<AffineSegment>>,
    input_bound: f64,
    variant: Variant,
    points: &[Vec<f64>],
) -> Result<SpuriousConstruction> {
    let margins = layer_margins(arch, &params, &segments, points)?;
    let mut c = SpuriousConstruction {
        arch: arch.clone(),
        params,
        realization: map,
        segments,
        input_bound,
        margins,
        radius: RegimeRadius {
            certified: 0.0,
            empirical: 0.0,
            underflow: false,
            lipschitz_unknown: false,
        },
        variant,
        points: points.to_vec(),
    };
    c.radius = regime_radius(&c, 0)?;
    Ok(c)
}

/// Smallest margin per constrained layer over `points`.
pub fn layer_margins(
    arch: &Architecture,
    params: &Parameters,
    segments: &[Option<AffineSegment>],
    points: &[Vec<f64>],
) -> Result<Vec<Option<f64>>> {
    let mut out: Vec<Option<f64>> = segments.iter().map(|s| s.map(|_| f64::INFINITY)).collect();
    for x in points {
        let trace = forward_trace(arch, params, x)?;
        for (i, seg) in segments.iter().enumerate() {
            if let Some(seg) = seg {
                let m = trace.pre[i].iter().map(|&s| seg.margin(s)).fold(f64::INFINITY, f64::min);
                let slot = out[i].as_mut().expect("constrained");
                *slot = slot.min(m);
            }
        }
    }
    Ok(out)
}

/// First containment failure `(layer, sample, margin)` of the constrained
/// layers, if any.
pub fn regime_violation(
    arch: &Architecture,
    params: &Parameters,
    segments: &[Option<AffineSegment>],
    points: &[Vec<f64>],
) -> Result<Option<(usize, usize, f64)>> {
    for (k, x) in points.iter().enumerate() {
        let trace = forward_trace(arch, params, x)?;
        for (i, seg) in segments.iter().enumerate() {
            if let Some(seg) = seg {
                let m = trace.pre[i].iter().map(|&s| seg.margin(s)).fold(f64::INFINITY, f64::min);
                if !(m > 0.0) {
                    return Ok(Some((i + 1, k, m)));
                }
            }
        }
    }
    Ok(None)
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

struct LayerBounds {
    /// Operator norms of `A_i`, hidden layers only.
    op_norms: Vec<f64>,
    /// `max_{x in K} |h_{i-1}(x)|`, starting with the inputs.
    input_norms: Vec<f64>,
    /// Per constrained layer: the allowed pre-activation drift.
    budget: Vec<Option<f64>>,
    lip: Vec<Option<f64>>,
}

fn layer_bounds(c: &SpuriousConstruction) -> Result<LayerBounds> {
    let depth = c.arch.depth();
    let last = match c.variant {
        Variant::Nonconstant => depth,
        Variant::Constant { layer } => layer,
    };
    let op_norms = c.params.layers()[..last].iter().map(|l| spectral_norm(&l.weights)).collect();
    let mut input_norms = vec![0.0; last];
    for x in &c.points {
        let trace = forward_trace(&c.arch, &c.params, x)?;
        let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        input_norms[0] = f64::max(input_norms[0], x_norm);
        for i in 1..last {
            input_norms[i] = f64::max(input_norms[i], trace.post[i - 1].norm());
        }
    }
    let budget = (0..last)
        .map(|i| {
            c.segments[i].map(|s| {
                let slack = c.margins[i].unwrap_or(0.0);
                (0.5 * s.radius).min(slack)
            })
        })
        .collect();
    let lip = (0..last)
        .map(|i| match c.segments[i] {
            Some(s) => Some(s.slope.abs()),
            None => c.arch.activations()[i].lipschitz(),
        })
        .collect();
    Ok(LayerBounds {
        op_norms,
        input_norms,
        budget,
        lip,
    })
}

/// Whether a parameter perturbation of Euclidean norm `r` provably keeps
/// every constrained pre-activation within its budget.
fn radius_ok(b: &LayerBounds, r: f64) -> bool {
    let mut dh = 0.0;
    for i in 0..b.op_norms.len() {
        let dz = (b.op_norms[i] + r) * dh + r * (b.input_norms[i] + 1.0);
        if let Some(budget) = b.budget[i] {
            if !(dz <= budget) {
                return false;
            }
        }
        dh = match b.lip[i] {
            Some(l) => l * dz,
            None => return false,
        };
    }
    true
}

fn certified_radius(b: &LayerBounds) -> f64 {
    let mut lo;
    let mut hi;
    if radius_ok(b, 1.0) {
        lo = 1.0;
        while lo < 1e12 && radius_ok(b, 2.0 * lo) {
            lo *= 2.0;
        }
        hi = 2.0 * lo;
    } else {
        hi = 1.0;
        loop {
            let t = 0.5 * hi;
            if t < f64::MIN_POSITIVE {
                return 0.0;
            }
            if radius_ok(b, t) {
                lo = t;
                break;
            }
            hi = t;
        }
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if radius_ok(b, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Uniform sample from the Euclidean ball of radius `r` in `R^q`.
pub fn uniform_ball<R: Rng>(rng: &mut R, q: usize, r: f64) -> Vec<f64> {
    if q == 0 {
        return Vec::new();
    }
    let mut v: Vec<f64> = (0..q).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let u: f64 = rng.random();
    let scale = r * u.powf(1.0 / q as f64) / norm.max(f64::MIN_POSITIVE);
    v.iter_mut().for_each(|x| *x *= scale);
    v
}

/// Certified radius from per-layer operator-norm bounds plus an empirical
/// radius from random probes (seeded by `seed`).
pub fn regime_radius(c: &SpuriousConstruction, seed: u64) -> Result<RegimeRadius> {
    let b = layer_bounds(c)?;
    let lipschitz_unknown = b.lip.iter().any(Option::is_none);
    let certified = if lipschitz_unknown { 0.0 } else { certified_radius(&b) };
    let underflow = !lipschitz_unknown && certified == 0.0;
    let base = c.params.flatten();
    let m = base.len();
    let mut empirical = 0.0;
    let mut r = certified.max(1e-12);
    for k in 0..EMPIRICAL_DOUBLINGS {
        let probes = map_indexed(Exec::default(), EMPIRICAL_PROBES, |i| {
            let mut rng = stream_rng(seed, (k * EMPIRICAL_PROBES + i) as u64);
            let delta = uniform_ball(&mut rng, m, r);
            let flat: Vec<f64> = base.iter().zip(&delta).map(|(a, d)| a + d).collect();
            let p = Parameters::unflatten(&c.arch, &flat).expect("same architecture");
            regime_violation(&c.arch, &p, &c.segments, &c.points).map(|v| v.is_none())
        });
        let mut clean = true;
        for ok in probes {
            clean &= ok?;
        }
        if !clean {
            break;
        }
        empirical = r;
        r *= 2.0;
    }
    Ok(RegimeRadius {
        certified,
        empirical,
        underflow,
        lipschitz_unknown,
    })
}

/// The free coordinates `alpha'` of the family: the flattened parameters
/// without the first row of `A_1` and without `b_{L+1}` (nonconstant
/// variant), or without `b_{L+1}` only (constant variant).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedParams {
    pub values: Vec<f64>,
    pub variant: Variant,
}

impl ReducedParams {
    pub fn dim(arch: &Architecture, variant: Variant) -> usize {
        let m = arch.num_params();
        match variant {
            Variant::Nonconstant => m - arch.input_dim() - 1,
            Variant::Constant { .. } => m - 1,
        }
    }

    fn skip(arch: &Architecture, variant: Variant) -> usize {
        match variant {
            Variant::Nonconstant => arch.input_dim(),
            Variant::Constant { .. } => 0,
        }
    }

    pub fn extract(arch: &Architecture, params: &Parameters, variant: Variant) -> Self {
        let flat = params.flatten();
        let skip = Self::skip(arch, variant);
        ReducedParams {
            values: flat[skip..flat.len() - 1].to_vec(),
            variant,
        }
    }

    /// Reassembles full parameters; `a1` is ignored for the constant variant.
    pub fn assemble(&self, arch: &Architecture, a1: &[f64], b_out: f64) -> Result<Parameters> {
        if self.values.len() != Self::dim(arch, self.variant) {
            return Err(Error::Length {
                expected: Self::dim(arch, self.variant),
                got: self.values.len(),
            });
        }
        let mut flat = Vec::with_capacity(arch.num_params());
        if let Variant::Nonconstant = self.variant {
            flat.extend_from_slice(a1);
        }
        flat.extend_from_slice(&self.values);
        flat.push(b_out);
        Parameters::unflatten(arch, &flat)
    }
}

/// `(Theta, Lambda, Phi)` at the given parameters. Only the reduced
/// coordinates are read: the first row of `A_1` and `b_{L+1}` are ignored.
pub fn theta_lambda_phi(
    arch: &Architecture,
    segments: &[AffineSegment],
    params: &Parameters,
) -> Result<(Vec<f64>, f64, f64)> {
    params.check(arch)?;
    if segments.len() != arch.depth() {
        return Err(Error::Shape(format!(
            "{} segments for {} hidden layers",
            segments.len(),
            arch.depth()
        )));
    }
    let layers = params.layers();
    let depth = arch.depth();
    let beta: f64 = segments.iter().map(|s| s.slope).product();
    let mut prod = layers[depth].weights.clone();
    for l in layers[1..depth].iter().rev() {
        prod = prod * &l.weights;
    }
    let lambda = beta * prod[(0, 0)];
    let d = arch.input_dim();
    let a1 = &layers[0].weights;
    let theta = (0..d)
        .map(|j| beta * (1..a1.nrows()).map(|r| prod[(0, r)] * a1[(r, j)]).sum::<f64>())
        .collect();
    let mut zeroed = params.clone();
    zeroed.set_output_bias(0.0);
    let phi = compose_affine(arch, &zeroed, segments).intercept;
    Ok((theta, lambda, phi))
}

/// Members of the family around a construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySample {
    pub params: Vec<Parameters>,
    /// Scale actually used after halvings.
    pub scale: f64,
    pub halvings: usize,
    pub free_dim: usize,
}

fn complete_member(c: &SpuriousConstruction, reduced: &ReducedParams) -> Result<Option<Parameters>> {
    let arch = &c.arch;
    let d = arch.input_dim();
    let c_bar = c.realization.intercept;
    let params = match c.variant {
        Variant::Nonconstant => {
            let segs = c.full_segments();
            let a1_bar: Vec<f64> = c.params.layers()[0].weights.row(0).iter().copied().collect();
            let lambda_bar = theta_lambda_phi(arch, &segs, &c.params)?.1;
            let trial = reduced.assemble(arch, &a1_bar, 0.0)?;
            let (theta, lambda, phi) = theta_lambda_phi(arch, &segs, &trial)?;
            if !(lambda.abs() > 0.0) || !lambda.is_finite() {
                return Ok(None);
            }
            let a1: Vec<f64> = (0..d)
                .map(|j| lambda_bar / lambda * a1_bar[j] - theta[j] / lambda)
                .collect();
            reduced.assemble(arch, &a1, c_bar - phi)?
        }
        Variant::Constant { .. } => {
            let trial = reduced.assemble(arch, &[], 0.0)?;
            let phi = crate::net::forward(arch, &trial, &c.points[0])?;
            reduced.assemble(arch, &[], c_bar - phi)?
        }
    };
    if regime_violation(arch, &params, &c.segments, &c.points)?.is_some() {
        return Ok(None);
    }
    let out = realization(arch, &params, &c.points)?;
    let exact = c
        .points
        .iter()
        .zip(&out)
        .all(|(x, v)| (c.realization.eval(x) - v).abs() <= FAMILY_TOLERANCE);
    Ok(exact.then_some(params))
}

/// `count` members of the family: the reduced coordinates are perturbed
/// uniformly in the `scale`-ball and the remaining coordinates are solved
/// for so that the realization on `K` is unchanged. If any member leaves the
/// regime the scale is halved, up to [`MAX_HALVINGS`] times. Sample `i`
/// draws from its own stream of `seed`.
pub fn sample_e(c: &SpuriousConstruction, scale: f64, count: usize, seed: u64) -> Result<FamilySample> {
    sample_e_with(c, scale, count, seed, Exec::default())
}

pub fn sample_e_with(
    c: &SpuriousConstruction,
    scale: f64,
    count: usize,
    seed: u64,
    exec: Exec,
) -> Result<FamilySample> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be finite and >= 0, got {scale}")));
    }
    let base = ReducedParams::extract(&c.arch, &c.params, c.variant);
    let q = base.values.len();
    let directions: Vec<Vec<f64>> = map_indexed(exec, count, |i| {
        let mut rng = stream_rng(seed, i as u64);
        uniform_ball(&mut rng, q, 1.0)
    });
    let mut delta = scale;
    for halvings in 0..=MAX_HALVINGS {
        let members = map_indexed(exec, count, |i| {
            let values = base.values.iter().zip(&directions[i]).map(|(b, u)| b + delta * u).collect();
            complete_member(c, &ReducedParams { values, variant: c.variant })
        });
        let mut params = Vec::with_capacity(count);
        for m in members {
            match m? {
                Some(p) => params.push(p),
                None => break,
            }
        }
        if params.len() == count {
            return Ok(FamilySample {
                params,
                scale: delta,
                halvings,
                free_dim: q,
            });
        }
        delta *= 0.5;
    }
    Err(Error::ScaleTooLarge { retries: MAX_HALVINGS })
}

/// Pre-activation of every hidden layer at `x`, for inspection.
pub fn pre_activations(arch: &Architecture, params: &Parameters, x: &[f64]) -> Result<Vec<DVector<f64>>> {
    forward_trace(arch, params, x).map(|t| t.pre)
}
