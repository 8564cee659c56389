//! Numerical certificates around constructed points: local minimality by
//! sampling the regime ball, spuriousness by an explicit escape, and the
//! expressiveness gap over random target directions.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fit_multistart, FitOptions};
use crate::loss::{classify_target, loss_gradient_predictions, loss_value, FiniteMeasure, LossSpec, Target};
use crate::net::{backprop, param_gradient, realization, Architecture, Layer, Parameters};
use crate::optim::{descend, DescentOptions};
use crate::par::{map_indexed, stream_rng, Exec};
use crate::spurious::{regime_violation, uniform_ball, SpuriousConstruction, Variant};

/// Loss decreases smaller than this are treated as round-off.
pub const GAP_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalMinReport {
    pub gradient_norm: f64,
    pub loss: f64,
    pub samples: usize,
    pub min_gap: f64,
    pub mean_gap: f64,
    /// Samples whose loss fell below `loss - GAP_TOLERANCE`.
    pub negative_gaps: usize,
    pub regime_violations: usize,
    pub radius: f64,
    pub certified_radius: f64,
    pub empirical_radius: f64,
}

impl LocalMinReport {
    pub fn passed(&self) -> bool {
        self.negative_gaps == 0 && self.regime_violations == 0
    }
}

fn require_nondegenerate(c: &SpuriousConstruction, measure: &FiniteMeasure, target: &Target) -> Result<()> {
    let class = classify_target(measure, target)?;
    match c.variant {
        Variant::Nonconstant if class.is_affine() => Err(Error::TargetDegenerate(
            "the samples are fitted exactly by an affine map".into(),
        )),
        Variant::Constant { .. } if class.is_constant() => {
            Err(Error::TargetDegenerate("the samples are constant".into()))
        }
        _ => Ok(()),
    }
}

/// Loss of `params` on the measure.
pub fn network_loss(
    arch: &Architecture,
    params: &Parameters,
    spec: &LossSpec,
    measure: &FiniteMeasure,
    target: &Target,
) -> Result<f64> {
    let out = realization(arch, params, measure.points())?;
    loss_value(spec, measure, &out, target)
}

/// Samples `n_samples` parameters uniformly in the ball of radius
/// `radius` (the certified regime radius when `None`) around the
/// construction and compares their losses with the constructed loss.
pub fn check_local_min(
    c: &SpuriousConstruction,
    measure: &FiniteMeasure,
    target: &Target,
    spec: &LossSpec,
    n_samples: usize,
    seed: u64,
) -> Result<LocalMinReport> {
    check_local_min_at(c, &c.params, measure, target, spec, n_samples, seed, None)
}

/// As [`check_local_min`], centred at `at` (for example a member of the
/// family around `c`) and with an optional radius override.
#[allow(clippy::too_many_arguments)]
pub fn check_local_min_at(
    c: &SpuriousConstruction,
    at: &Parameters,
    measure: &FiniteMeasure,
    target: &Target,
    spec: &LossSpec,
    n_samples: usize,
    seed: u64,
    radius: Option<f64>,
) -> Result<LocalMinReport> {
    require_nondegenerate(c, measure, target)?;
    let arch = &c.arch;
    let loss = network_loss(arch, at, spec, measure, target)?;
    let grad = param_gradient(arch, at, measure, target, spec)?;
    let gradient_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let radius = radius.unwrap_or(c.radius.certified);
    if !(radius >= 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be >= 0, got {radius}")));
    }
    let base = at.flatten();
    let m = base.len();
    let results = map_indexed(Exec::default(), n_samples, |i| -> Result<(f64, bool)> {
        let mut rng = stream_rng(seed, i as u64);
        let delta = uniform_ball(&mut rng, m, radius);
        let flat: Vec<f64> = base.iter().zip(&delta).map(|(a, d)| a + d).collect();
        let p = Parameters::unflatten(arch, &flat)?;
        let l = network_loss(arch, &p, spec, measure, target)?;
        let violated = regime_violation(arch, &p, &c.segments, measure.points())?.is_some();
        Ok((l - loss, violated))
    });
    let mut min_gap = f64::INFINITY;
    let mut sum = 0.0;
    let mut negative_gaps = 0;
    let mut regime_violations = 0;
    for r in results {
        let (gap, violated) = r?;
        min_gap = min_gap.min(gap);
        sum += gap;
        negative_gaps += usize::from(gap < -GAP_TOLERANCE);
        regime_violations += usize::from(violated);
    }
    Ok(LocalMinReport {
        gradient_norm,
        loss,
        samples: n_samples,
        min_gap: if n_samples == 0 { 0.0 } else { min_gap },
        mean_gap: if n_samples == 0 { 0.0 } else { sum / n_samples as f64 },
        negative_gaps,
        regime_violations,
        radius,
        certified_radius: c.radius.certified,
        empirical_radius: c.radius.empirical,
    })
}

/// Same depth and activations, every hidden width reduced by one.
pub fn residual_architecture(arch: &Architecture) -> Result<Architecture> {
    if let Some(i) = arch.widths().iter().position(|&w| w < 2) {
        return Err(Error::WidthTooSmall {
            layer: i + 1,
            width: arch.widths()[i],
        });
    }
    arch.with_widths(arch.widths().iter().map(|w| w - 1).collect())
}

/// The width-one chain carried by the first unit of every hidden layer.
pub fn chain_params(c: &SpuriousConstruction) -> Parameters {
    let layers = c.params.layers();
    let mut out = Vec::with_capacity(layers.len());
    let first = &layers[0];
    out.push(Layer::from_rows(
        &[first.weights.row(0).iter().copied().collect()],
        vec![first.bias[0]],
    ));
    for l in &layers[1..] {
        out.push(Layer::from_rows(&[vec![l.weights[(0, 0)]]], vec![l.bias[0]]));
    }
    Parameters::from_layers_unchecked(out)
}

/// Block assembly realizing `chain + s * residual`: the chain occupies the
/// first unit of every hidden layer and the residual network the others.
pub fn compose_parallel(c: &SpuriousConstruction, residual: &Parameters, s: f64) -> Result<Parameters> {
    let arch = &c.arch;
    let rarch = residual_architecture(arch)?;
    residual.check(&rarch)?;
    let chain = chain_params(c);
    let depth = arch.depth();
    let shapes = arch.layer_shapes();
    let mut layers = Vec::with_capacity(depth + 1);
    for i in 0..=depth {
        let (rows, cols) = shapes[i];
        let ch = &chain.layers()[i];
        let re = &residual.layers()[i];
        let mut l = Layer::zeros(rows, cols);
        let row0 = if i == 0 { 0..cols } else { 0..1 };
        for j in row0 {
            l.weights[(0, j)] = ch.weights[(0, j)];
        }
        l.bias[0] = ch.bias[0];
        let col_off = if i == 0 { 0 } else { 1 };
        if i < depth {
            for r in 0..re.weights.nrows() {
                for j in 0..re.weights.ncols() {
                    l.weights[(r + 1, j + col_off)] = re.weights[(r, j)];
                }
                l.bias[r + 1] = re.bias[r];
            }
        } else {
            for j in 0..re.weights.ncols() {
                l.weights[(0, j + 1)] = s * re.weights[(0, j)];
            }
            l.bias[0] += s * re.bias[0];
        }
        layers.push(l);
    }
    Parameters::from_layers(arch, layers)
}

/// `c_bar + s * psi(alpha, .)`: output layer scaled by `s`, bias shifted.
pub fn compose_shifted(c_bar: f64, params: &Parameters, s: f64) -> Parameters {
    let mut p = params.clone();
    p.scale_output(s);
    let b = p.output_bias();
    p.set_output_bias(b + c_bar);
    p
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscapeMethod {
    ParallelSplit,
    RandomRestartDescent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeCertificate {
    pub params: Parameters,
    pub escape_loss: f64,
    pub spurious_loss: f64,
    pub gap: f64,
    pub method: EscapeMethod,
    /// Loss right after the split and line search, before polishing.
    pub split_loss: Option<f64>,
    /// `<g, residual realization>` reached by the direction search.
    pub inner_product: Option<f64>,
    pub scale: Option<f64>,
    pub restart: usize,
    pub restarts_run: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EscapeOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Restarts are evaluated in batches of this size; the search stops
    /// after the first batch whose best escape loss is at most `accept_loss`.
    pub batch: usize,
    pub accept_loss: f64,
    pub direction: DescentOptions,
    pub polish: DescentOptions,
    pub exec: Exec,
}

impl Default for EscapeOptions {
    fn default() -> Self {
        EscapeOptions {
            restarts: 200,
            seed: 0,
            batch: 16,
            accept_loss: 1e-9,
            direction: DescentOptions {
                max_iters: 500,
                grad_tol: 1e-14,
                stop_below: -1e-8,
                initial_step: 1e-2,
            },
            polish: DescentOptions {
                max_iters: 20_000,
                grad_tol: 1e-14,
                stop_below: 1e-12,
                initial_step: 1e-2,
            },
            exec: Exec::default(),
        }
    }
}

fn gaussian_params<R: Rng>(arch: &Architecture, rng: &mut R) -> Parameters {
    let m = arch.num_params();
    let flat: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    Parameters::unflatten(arch, &flat).expect("length m")
}

/// Minimizes `phi(s)` over `s > 0` given `phi(0)`: halve or double to
/// bracket, then golden section.
fn line_search<F: Fn(f64) -> f64>(phi: F, f0: f64) -> Option<(f64, f64)> {
    let mut s = 1.0;
    let mut fs = phi(s);
    let mut halvings = 0;
    while !(fs < f0) {
        s *= 0.5;
        fs = phi(s);
        halvings += 1;
        if halvings > 80 {
            return None;
        }
    }
    let (mut lo, mut hi) = (0.0, 2.0 * s);
    if halvings == 0 {
        let mut prev = fs;
        for _ in 0..80 {
            let next = phi(2.0 * s);
            if !(next < prev) {
                break;
            }
            s *= 2.0;
            prev = next;
        }
        lo = 0.5 * s;
        hi = 2.0 * s;
        fs = prev;
    }
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (phi(x1), phi(x2));
    for _ in 0..100 {
        if hi - lo <= 1e-12 * hi {
            break;
        }
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = phi(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = phi(x2);
        }
    }
    let mut best = (s, fs);
    for (x, f) in [(x1, f1), (x2, f2)] {
        if f < best.1 {
            best = (x, f);
        }
    }
    Some(best)
}

fn loss_and_grad(
    arch: &Architecture,
    flat: &[f64],
    spec: &LossSpec,
    measure: &FiniteMeasure,
    target: &Target,
) -> (f64, Vec<f64>) {
    let p = Parameters::unflatten(arch, flat).expect("length m");
    let out = realization(arch, &p, measure.points()).expect("shapes checked");
    let l = loss_value(spec, measure, &out, target).expect("aligned");
    if !l.is_finite() {
        return (f64::INFINITY, vec![0.0; flat.len()]);
    }
    let g = loss_gradient_predictions(spec, measure, &out, target).expect("aligned");
    (l, backprop(arch, &p, measure.points(), &g).expect("shapes checked"))
}

struct Attempt {
    params: Parameters,
    loss: f64,
    method: EscapeMethod,
    split_loss: Option<f64>,
    inner_product: Option<f64>,
    scale: Option<f64>,
}

fn split_attempt(
    c: &SpuriousConstruction,
    rarch: &Architecture,
    g: &[f64],
    base: f64,
    spec: &LossSpec,
    measure: &FiniteMeasure,
    target: &Target,
    opts: &EscapeOptions,
    index: usize,
) -> Result<Option<Attempt>> {
    let arch = &c.arch;
    let points = measure.points();
    let mut rng = stream_rng(opts.seed, index as u64);
    let start = gaussian_params(rarch, &mut rng);
    let h = |x: &[f64]| {
        let p = Parameters::unflatten(rarch, x).expect("length");
        let out = realization(rarch, &p, points).expect("shapes");
        let v = g.iter().zip(&out).map(|(g, o)| g * o).sum();
        (v, backprop(rarch, &p, points, g).expect("shapes"))
    };
    let dir = descend(h, start.flatten(), &opts.direction);
    if !(dir.value < 0.0) {
        return Ok(None);
    }
    let residual = Parameters::unflatten(rarch, &dir.x)?;
    let compose = |s: f64| -> Result<Parameters> {
        match c.variant {
            Variant::Nonconstant => compose_parallel(c, &residual, s),
            Variant::Constant { .. } => Ok(compose_shifted(c.realization.intercept, &residual, s)),
        }
    };
    let phi = |s: f64| {
        compose(s)
            .and_then(|p| network_loss(arch, &p, spec, measure, target))
            .unwrap_or(f64::INFINITY)
    };
    let Some((s, split_loss)) = line_search(phi, base) else {
        return Ok(None);
    };
    let split = compose(s)?;
    let polished = descend(
        |x: &[f64]| loss_and_grad(arch, x, spec, measure, target),
        split.flatten(),
        &opts.polish,
    );
    // keep the split point if polishing did not help
    let (params, loss) = if polished.value <= split_loss {
        (Parameters::unflatten(arch, &polished.x)?, polished.value)
    } else {
        (split, split_loss)
    };
    Ok(Some(Attempt {
        params,
        loss,
        method: EscapeMethod::ParallelSplit,
        split_loss: Some(split_loss),
        inner_product: Some(dir.value),
        scale: Some(s),
    }))
}

fn descent_attempt(
    arch: &Architecture,
    spec: &LossSpec,
    measure: &FiniteMeasure,
    target: &Target,
    opts: &EscapeOptions,
    index: usize,
) -> Result<Attempt> {
    let mut rng = stream_rng(opts.seed ^ 0x9e37_79b9_7f4a_7c15, index as u64);
    let start = gaussian_params(arch, &mut rng);
    let res = descend(
        |x: &[f64]| loss_and_grad(arch, x, spec, measure, target),
        start.flatten(),
        &opts.polish,
    );
    Ok(Attempt {
        params: Parameters::unflatten(arch, &res.x)?,
        loss: res.value,
        method: EscapeMethod::RandomRestartDescent,
        split_loss: None,
        inner_product: None,
        scale: None,
    })
}

/// Evaluates the network with plain loops, independently of the main
/// forward pass.
fn naive_forward(arch: &Architecture, params: &Parameters, x: &[f64]) -> f64 {
    let mut z: Vec<f64> = x.to_vec();
    let depth = arch.depth();
    for (i, l) in params.layers().iter().enumerate() {
        let mut next = Vec::with_capacity(l.weights.nrows());
        for r in 0..l.weights.nrows() {
            let mut s = l.bias[r];
            for (j, zj) in z.iter().enumerate() {
                s += l.weights[(r, j)] * zj;
            }
            next.push(if i < depth { arch.activations()[i].eval(s) } else { s });
        }
        z = next;
    }
    z[0]
}

fn naive_loss(arch: &Architecture, params: &Parameters, spec: &LossSpec, measure: &FiniteMeasure, target: &Target) -> f64 {
    measure
        .points()
        .iter()
        .zip(measure.weights())
        .zip(target.values())
        .map(|((x, w), y)| w * (naive_forward(arch, params, x) - y).abs().powf(spec.p))
        .sum()
}

/// Searches for parameters with loss strictly below the constructed point.
///
/// Each restart first looks for a residual network whose realization has a
/// negative inner product with the loss derivative at the constructed
/// realization, adds it along the best scale and then polishes all
/// parameters by descent. When no split succeeds, plain descent from
/// random parameters is tried. Restarts run in parallel; the best one wins,
/// ties going to the lower index.
pub fn find_escape(
    c: &SpuriousConstruction,
    measure: &FiniteMeasure,
    target: &Target,
    spec: &LossSpec,
    opts: &EscapeOptions,
) -> Result<EscapeCertificate> {
    require_nondegenerate(c, measure, target)?;
    let arch = &c.arch;
    let base_out = realization(arch, &c.params, measure.points())?;
    let base = loss_value(spec, measure, &base_out, target)?;
    let g = loss_gradient_predictions(spec, measure, &base_out, target)?;
    let rarch = match c.variant {
        Variant::Nonconstant => residual_architecture(arch)?,
        Variant::Constant { .. } => arch.clone(),
    };
    let batch = opts.batch.max(1);
    let mut best: Option<(usize, Attempt)> = None;
    let mut run = 0;
    while run < opts.restarts {
        let n = batch.min(opts.restarts - run);
        let attempts = map_indexed(opts.exec, n, |k| -> Result<Attempt> {
            let i = run + k;
            if let Some(a) = split_attempt(c, &rarch, &g, base, spec, measure, target, opts, i)? {
                if a.loss < base {
                    return Ok(a);
                }
            }
            descent_attempt(arch, spec, measure, target, opts, i)
        });
        for (k, a) in attempts.into_iter().enumerate() {
            let a = a?;
            let i = run + k;
            let better = match &best {
                None => true,
                Some((_, b)) => a.loss < b.loss,
            };
            if a.loss.is_finite() && better {
                best = Some((i, a));
            }
        }
        run += n;
        if best.as_ref().is_some_and(|(_, b)| b.loss <= opts.accept_loss) {
            break;
        }
    }
    let Some((index, a)) = best else {
        return Err(Error::SearchFailed { restarts: run });
    };
    let spurious_loss = naive_loss(arch, &c.params, spec, measure, target);
    let escape_loss = naive_loss(arch, &a.params, spec, measure, target);
    if !(escape_loss < spurious_loss) {
        return Err(Error::SearchFailed { restarts: run });
    }
    Ok(EscapeCertificate {
        params: a.params,
        escape_loss,
        spurious_loss,
        gap: spurious_loss - escape_loss,
        method: a.method,
        split_loss: a.split_loss,
        inner_product: a.inner_product,
        scale: a.scale,
        restart: index,
        restarts_run: run,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Largest estimated infimum over all directions.
    pub max: f64,
    pub directions: Vec<Vec<f64>>,
    pub infima: Vec<f64>,
}

/// Multistart estimate of `inf_alpha |Psi(alpha) - y|^2`.
pub fn inf_distance_sq(arch: &Architecture, points: &[Vec<f64>], y: &[f64], opts: &FitOptions) -> Result<f64> {
    let runs = fit_multistart(arch, points, y, opts)?;
    Ok(runs.iter().map(|r| r.distance_sq).fold(f64::INFINITY, f64::min))
}

/// For `n_directions` random unit vectors `y` (direction `i` from stream
/// `i` of `seed`), estimates `inf |Psi(alpha) - y|^2` and returns the
/// largest. Values below one witness that no half-space through the origin
/// supports the image in these directions.
pub fn expressiveness_gap(
    arch: &Architecture,
    points: &[Vec<f64>],
    n_directions: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<GapReport> {
    let n = points.len();
    let mut directions = Vec::with_capacity(n_directions);
    let mut infima = Vec::with_capacity(n_directions);
    for i in 0..n_directions {
        let mut rng = stream_rng(seed, i as u64);
        let mut y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        y.iter_mut().for_each(|v| *v /= norm);
        let fit = FitOptions {
            seed: opts.seed.wrapping_add(i as u64),
            ..opts.clone()
        };
        infima.push(inf_distance_sq(arch, points, &y, &fit)?);
        directions.push(y);
    }
    Ok(GapReport {
        max: infima.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        directions,
        infima,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::{ActivationKind, AffineSegment};
    use crate::net::forward;
    use crate::spurious::construct_nonconstant;

    fn worked() -> (SpuriousConstruction, FiniteMeasure, Target) {
        let arch = Architecture::uniform(1, vec![2], ActivationKind::LeakyRelu { slope: 0.01 }).unwrap();
        let pts = vec![vec![-1.0], vec![0.0], vec![1.0]];
        let seg = AffineSegment::new(1.0, 1.0, 1.0, 0.0);
        let c = construct_nonconstant(&arch, &[seg], &[0.0], 2.0 / 3.0, &pts).unwrap();
        (c, FiniteMeasure::uniform(pts).unwrap(), Target::new(vec![1.0, 0.0, 1.0]))
    }

    #[test]
    fn worked_local_min() {
        let (c, m, y) = worked();
        let r = check_local_min(&c, &m, &y, &LossSpec::squared(), 200, 1).unwrap();
        assert!(r.gradient_norm <= 1e-10);
        assert!(r.passed(), "{r:?}");
        assert!((r.loss - 2.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn zero_radius_has_zero_gaps() {
        let (c, m, y) = worked();
        let r = check_local_min_at(&c, &c.params, &m, &y, &LossSpec::squared(), 10, 1, Some(0.0)).unwrap();
        assert_eq!((r.min_gap, r.mean_gap), (0.0, 0.0));
        assert!(r.passed());
    }

    #[test]
    fn affine_target_is_degenerate() {
        let (c, m, _) = worked();
        let y = Target::new(vec![-1.0, 0.0, 1.0]);
        assert!(matches!(
            check_local_min(&c, &m, &y, &LossSpec::squared(), 10, 1),
            Err(Error::TargetDegenerate(_))
        ));
    }

    #[test]
    fn parallel_split_adds() {
        let (c, m, _) = worked();
        let rarch = residual_architecture(&c.arch).unwrap();
        let mut rng = stream_rng(4, 0);
        let res = gaussian_params(&rarch, &mut rng);
        let chain_arch = c.arch.with_widths(vec![1]).unwrap();
        let chain = chain_params(&c);
        for s in [0.0, 1.0, -2.5] {
            let p = compose_parallel(&c, &res, s).unwrap();
            for x in m.points() {
                let expected = forward(&chain_arch, &chain, x).unwrap() + s * forward(&rarch, &res, x).unwrap();
                assert!((forward(&c.arch, &p, x).unwrap() - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn width_one_has_no_split() {
        let arch = Architecture::uniform(1, vec![1], ActivationKind::Relu).unwrap();
        assert_eq!(
            residual_architecture(&arch).unwrap_err(),
            Error::WidthTooSmall { layer: 1, width: 1 }
        );
    }

    #[test]
    fn naive_forward_agrees() {
        let (c, m, _) = worked();
        for x in m.points() {
            assert_eq!(naive_forward(&c.arch, &c.params, x), forward(&c.arch, &c.params, x).unwrap());
        }
    }

    #[test]
    fn line_search_finds_quadratic_minimum() {
        let (s, f) = line_search(|s| (s - 3.0).powi(2) - 1.0, 8.0).unwrap();
        assert!((s - 3.0).abs() < 1e-6 && (f + 1.0).abs() < 1e-10);
        let (s, _) = line_search(|s| (s - 0.01).powi(2), 1e-4).unwrap();
        assert!((s - 0.01).abs() < 1e-6);
        assert!(line_search(|s| s, 0.0).is_none());
    }
}
