//! Weighted `L^p` tracking loss over finite point measures and the affine and
//! constant best-approximation solvers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::AffineMap;

/// Residual tolerance used to decide whether samples are exactly fittable.
pub const FIT_TOLERANCE: f64 = 1e-9;

/// Gradient-norm stopping tolerance of the `p != 2` solvers.
pub const SOLVER_GRAD_TOL: f64 = 1e-10;

// |r| floor for the IRLS weights |r|^(p-2) when p < 2
const IRLS_FLOOR: f64 = 1e-12;

/// Loss exponent `p`, `1 < p < inf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "LossSpecRaw")]
pub struct LossSpec {
    pub p: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LossSpecRaw {
    p: f64,
}

impl TryFrom<LossSpecRaw> for LossSpec {
    type Error = Error;
    fn try_from(raw: LossSpecRaw) -> Result<Self> {
        LossSpec::new(raw.p)
    }
}

impl LossSpec {
    pub fn new(p: f64) -> Result<Self> {
        if p > 1.0 && p.is_finite() {
            Ok(LossSpec { p })
        } else {
            Err(Error::Exponent(p))
        }
    }

    pub fn squared() -> Self {
        LossSpec { p: 2.0 }
    }
}

impl Default for LossSpec {
    fn default() -> Self {
        Self::squared()
    }
}

/// Weighted point measure `sum_k w_k delta_{x_k}` with distinct points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

fn validate_points(points: &[Vec<f64>]) -> Result<usize> {
    let first = points.first().ok_or(Error::EmptyDomain)?;
    let d = first.len();
    if d == 0 {
        return Err(Error::Measure("points must have dimension >= 1".into()));
    }
    for (k, x) in points.iter().enumerate() {
        if x.len() != d {
            return Err(Error::Measure(format!("point {k} has dimension {}, expected {d}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Measure(format!("point {k} is not finite")));
        }
    }
    Ok(d)
}

fn validate_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::Measure(format!("{} weights for {n} points", weights.len())));
    }
    if let Some(k) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::Measure(format!("weight {k} must be positive and finite")));
    }
    Ok(())
}

/// For each input point, the index of its merged representative.
fn merge_groups(points: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut unique: Vec<Vec<f64>> = Vec::new();
    let mut map = Vec::with_capacity(points.len());
    for x in points {
        match unique.iter().position(|u| u == x) {
            Some(j) => map.push(j),
            None => {
                map.push(unique.len());
                unique.push(x.clone());
            }
        }
    }
    (unique, map)
}

impl FiniteMeasure {
    /// Duplicate points are merged and their weights summed.
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        validate_points(&points)?;
        validate_weights(&weights, points.len())?;
        let (unique, map) = merge_groups(&points);
        let mut merged = vec![0.0; unique.len()];
        for (w, &j) in weights.iter().zip(&map) {
            merged[j] += w;
        }
        Ok(FiniteMeasure {
            points: unique,
            weights: merged,
        })
    }

    /// Weights `1/n` before merging.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Largest `|a . x|` over the support.
    pub fn max_abs_projection(&self, a: &[f64]) -> f64 {
        self.points
            .iter()
            .map(|x| x.iter().zip(a).map(|(x, a)| x * a).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

/// Target values aligned with a measure's points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Target {
    values: Vec<f64>,
}

impl Target {
    pub fn new(values: Vec<f64>) -> Self {
        Target { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check(&self, measure: &FiniteMeasure) -> Result<()> {
        if self.values.len() != measure.len() {
            return Err(Error::Shape(format!(
                "target has {} values for {} points",
                self.values.len(),
                measure.len()
            )));
        }
        Ok(())
    }
}

/// A measure together with its target, built from raw samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub measure: FiniteMeasure,
    pub target: Target,
}

impl Dataset {
    /// Weights default to `1/n`. Repeated points must carry the same target;
    /// they are merged with summed weights.
    pub fn new(points: Vec<Vec<f64>>, y: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        validate_points(&points)?;
        if y.len() != n {
            return Err(Error::Measure(format!("{} targets for {n} points", y.len())));
        }
        if let Some(k) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Measure(format!("target {k} is not finite")));
        }
        let weights = weights.unwrap_or_else(|| vec![1.0 / n as f64; n]);
        validate_weights(&weights, n)?;
        let (unique, map) = merge_groups(&points);
        let mut merged_w = vec![0.0; unique.len()];
        let mut merged_y: Vec<Option<f64>> = vec![None; unique.len()];
        for k in 0..n {
            let j = map[k];
            merged_w[j] += weights[k];
            match merged_y[j] {
                None => merged_y[j] = Some(y[k]),
                Some(prev) if prev != y[k] => {
                    return Err(Error::Measure(format!(
                        "point {k} repeats an earlier point with a different target"
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(Dataset {
            measure: FiniteMeasure {
                points: unique,
                weights: merged_w,
            },
            target: Target::new(merged_y.into_iter().map(|v| v.expect("assigned")).collect()),
        })
    }
}

fn check_predictions(measure: &FiniteMeasure, predictions: &[f64], target: &Target) -> Result<()> {
    target.check(measure)?;
    if predictions.len() != measure.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} points",
            predictions.len(),
            measure.len()
        )));
    }
    Ok(())
}

fn raw_loss(p: f64, weights: &[f64], residuals: impl Iterator<Item = f64>) -> f64 {
    weights
        .iter()
        .zip(residuals)
        .map(|(w, r)| if p == 2.0 { w * r * r } else { w * r.abs().powf(p) })
        .sum()
}

/// `sum_k w_k |v_k - y_k|^p`.
pub fn loss_value(spec: &LossSpec, measure: &FiniteMeasure, predictions: &[f64], target: &Target) -> Result<f64> {
    check_predictions(measure, predictions, target)?;
    Ok(raw_loss(
        spec.p,
        &measure.weights,
        predictions.iter().zip(&target.values).map(|(v, y)| v - y),
    ))
}

/// Component `k`: `w_k p sgn(v_k - y_k) |v_k - y_k|^(p-1)`.
pub fn loss_gradient_predictions(
    spec: &LossSpec,
    measure: &FiniteMeasure,
    predictions: &[f64],
    target: &Target,
) -> Result<Vec<f64>> {
    check_predictions(measure, predictions, target)?;
    let p = spec.p;
    Ok(predictions
        .iter()
        .zip(&target.values)
        .zip(&measure.weights)
        .map(|((v, y), w)| {
            let r = v - y;
            if r == 0.0 {
                0.0
            } else {
                w * p * r.signum() * r.abs().powf(p - 1.0)
            }
        })
        .collect())
}

/// Loss of the affine map `x -> a . x + c`.
pub fn affine_loss(spec: &LossSpec, measure: &FiniteMeasure, target: &Target, map: &AffineMap) -> Result<f64> {
    let preds: Vec<f64> = measure.points.iter().map(|x| map.eval(x)).collect();
    loss_value(spec, measure, &preds, target)
}

/// Gradient of the affine loss with respect to `(a, c)`.
pub fn affine_loss_gradient(
    spec: &LossSpec,
    measure: &FiniteMeasure,
    target: &Target,
    map: &AffineMap,
) -> Result<Vec<f64>> {
    let preds: Vec<f64> = measure.points.iter().map(|x| map.eval(x)).collect();
    let g = loss_gradient_predictions(spec, measure, &preds, target)?;
    let d = measure.dim();
    let mut out = vec![0.0; d + 1];
    for (x, gk) in measure.points.iter().zip(&g) {
        for j in 0..d {
            out[j] += gk * x[j];
        }
        out[d] += gk;
    }
    Ok(out)
}

/// Weighted least squares in centered coordinates. Returns `(slope, shifted
/// intercept)` for the model `a . (x - xbar) + c'`, minimum-norm in `a`.
fn weighted_lsq(centered: &DMatrix<f64>, y: &[f64], v: &[f64]) -> DVector<f64> {
    let n = centered.nrows();
    let d = centered.ncols();
    let mut design = DMatrix::zeros(n, d + 1);
    let mut rhs = DVector::zeros(n);
    for k in 0..n {
        let s = v[k].sqrt();
        for j in 0..d {
            design[(k, j)] = s * centered[(k, j)];
        }
        design[(k, d)] = s;
        rhs[k] = s * y[k];
    }
    min_norm_solve(design, &rhs)
}

fn min_norm_solve(design: DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let cols = design.ncols();
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DVector::zeros(cols);
    }
    let eps = smax * 1e-12 * (cols.max(rhs.len()) as f64);
    svd.solve(rhs, eps).expect("u and v were computed")
}

fn centered_points(measure: &FiniteMeasure) -> (DMatrix<f64>, Vec<f64>) {
    let d = measure.dim();
    let total: f64 = measure.weights.iter().sum();
    let mut mean = vec![0.0; d];
    for (x, w) in measure.points.iter().zip(&measure.weights) {
        for j in 0..d {
            mean[j] += w * x[j] / total;
        }
    }
    let centered = DMatrix::from_fn(measure.len(), d, |k, j| measure.points[k][j] - mean[j]);
    (centered, mean)
}

/// Global minimizer `(a, c)` of `sum_k w_k |a . x_k + c - y_k|^p` and its loss.
///
/// `p = 2` is solved directly by SVD least squares. Other exponents start from
/// that solution and take damped Newton steps (the IRLS system scaled by
/// `1/(p-1)`) with step halving until the gradient norm drops below
/// [`SOLVER_GRAD_TOL`]. When the points lie on a hyperplane the slope is the
/// minimum-norm one.
pub fn best_affine(spec: &LossSpec, measure: &FiniteMeasure, target: &Target) -> Result<(AffineMap, f64)> {
    target.check(measure)?;
    let (centered, mean) = centered_points(measure);
    let d = measure.dim();
    let n = measure.len();
    let y = &target.values;
    let mut theta = weighted_lsq(&centered, y, &measure.weights);
    let p = spec.p;
    let residuals = |theta: &DVector<f64>| -> Vec<f64> {
        (0..n)
            .map(|k| {
                let mut s = theta[d];
                for j in 0..d {
                    s += theta[j] * centered[(k, j)];
                }
                s - y[k]
            })
            .collect()
    };
    let objective = |r: &[f64]| raw_loss(p, &measure.weights, r.iter().copied());
    if p != 2.0 {
        let mut r = residuals(&theta);
        let mut f = objective(&r);
        for _ in 0..500 {
            let g = centered_gradient(p, &measure.weights, &centered, &r);
            if g.norm() <= SOLVER_GRAD_TOL || f == 0.0 {
                break;
            }
            let v: Vec<f64> = measure
                .weights
                .iter()
                .zip(&r)
                .map(|(w, r)| {
                    let a = if p < 2.0 { r.abs().max(IRLS_FLOOR) } else { r.abs() };
                    w * a.powf(p - 2.0)
                })
                .collect();
            let target_shift: Vec<f64> = r.clone();
            // Solve (X'VX) step = X'V r, then scale by 1/(p-1).
            let mut step = weighted_lsq(&centered, &target_shift, &v);
            step /= p - 1.0;
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..60 {
                let cand = &theta - &step * t;
                let rc = residuals(&cand);
                let fc = objective(&rc);
                // near the optimum the value stalls at rounding level; a
                // smaller gradient then decides
                let stalled = fc <= f * (1.0 + 4.0 * f64::EPSILON)
                    && centered_gradient(p, &measure.weights, &centered, &rc).norm() < g.norm();
                if fc < f || stalled {
                    theta = cand;
                    r = rc;
                    f = fc;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
    }
    let slope: Vec<f64> = (0..d).map(|j| theta[j]).collect();
    let intercept = theta[d] - slope.iter().zip(&mean).map(|(a, m)| a * m).sum::<f64>();
    let map = AffineMap::new(slope, intercept);
    let loss = affine_loss(spec, measure, target, &map)?;
    Ok((map, loss))
}

fn centered_gradient(p: f64, w: &[f64], centered: &DMatrix<f64>, r: &[f64]) -> DVector<f64> {
    let d = centered.ncols();
    let mut g = DVector::zeros(d + 1);
    for (k, (&rk, &wk)) in r.iter().zip(w).enumerate() {
        if rk == 0.0 {
            continue;
        }
        let gk = wk * p * rk.signum() * rk.abs().powf(p - 1.0);
        for j in 0..d {
            g[j] += gk * centered[(k, j)];
        }
        g[d] += gk;
    }
    g
}

/// Global minimizer `c` of `sum_k w_k |c - y_k|^p` and its loss. Always lies
/// in `[min y, max y]`.
pub fn best_constant(spec: &LossSpec, measure: &FiniteMeasure, target: &Target) -> Result<(f64, f64)> {
    target.check(measure)?;
    let y = &target.values;
    let w = &measure.weights;
    let c = if spec.p == 2.0 {
        let total: f64 = w.iter().sum();
        let mean = w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / total;
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        mean.clamp(lo, hi)
    } else {
        let p = spec.p;
        let slope = |c: f64| -> f64 {
            w.iter()
                .zip(y)
                .map(|(w, y)| {
                    let r = c - y;
                    w * r.signum() * r.abs().powf(p - 1.0)
                })
                .sum()
        };
        let mut lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        if slope(lo).abs() <= slope(hi).abs() {
            lo
        } else {
            hi
        }
    };
    let loss = raw_loss(spec.p, w, y.iter().map(|y| c - y));
    Ok((c, loss))
}

/// Exact-fit classification of the samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum TargetClass {
    Constant { c: f64 },
    Affine { map: AffineMap },
    NonAffine,
}

impl TargetClass {
    /// True for constant targets too.
    pub fn is_affine(&self) -> bool {
        !matches!(self, TargetClass::NonAffine)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, TargetClass::Constant { .. })
    }
}

/// Constant when all values agree to [`FIT_TOLERANCE`] (always for `n = 1`),
/// affine when the least-squares affine fit has every residual within it,
/// otherwise non-affine.
pub fn classify_target(measure: &FiniteMeasure, target: &Target) -> Result<TargetClass> {
    target.check(measure)?;
    let y = &target.values;
    if y.len() == 1 {
        return Ok(TargetClass::Constant { c: y[0] });
    }
    let (c, _) = best_constant(&LossSpec::squared(), measure, target)?;
    if y.iter().all(|v| (v - c).abs() <= FIT_TOLERANCE) {
        return Ok(TargetClass::Constant { c });
    }
    let (map, _) = best_affine(&LossSpec::squared(), measure, target)?;
    let fits = measure
        .points
        .iter()
        .zip(y)
        .all(|(x, v)| (map.eval(x) - v).abs() <= FIT_TOLERANCE);
    Ok(if fits {
        TargetClass::Affine { map }
    } else {
        TargetClass::NonAffine
    })
}
