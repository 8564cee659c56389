//! The image of the realization map on a finite sample set: random clouds,
//! the exact monotone-cone oracle for one-unit networks, multistart
//! projections, projection-discontinuity scans and nonconvexity witnesses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{backprop, realization, Architecture, Parameters};
use crate::optim::{descend, DescentOptions};
use crate::par::{map_indexed, stream_rng, Exec};

/// Weight range of the random clouds and restart initialisations.
pub const DEFAULT_WEIGHT_RANGE: (f64, f64) = (-10.0, 10.0);
/// Bias range of the random clouds and restart initialisations.
pub const DEFAULT_BIAS_RANGE: (f64, f64) = (-5.0, 5.0);
/// Minimizers count as distinct when their realizations are this far apart.
pub const JUMP_THRESHOLD: f64 = 0.1;
/// Largest parameter step between scan points that may report a jump.
pub const JUMP_MAX_STEP: f64 = 1e-2;
/// Restarts within this much of the best squared distance count as optimal.
pub const NEAR_BEST: f64 = 1e-6;
/// Optimal realizations closer than this are grouped together.
pub const CLUSTER_RADIUS: f64 = 1e-3;
/// Accuracy assumed for multistart projections.
pub const PROJECTION_TOLERANCE: f64 = 1e-6;

/// Parameters with every weight uniform in `weights` and every bias uniform
/// in `biases`.
pub fn random_params<R: Rng>(arch: &Architecture, rng: &mut R, weights: (f64, f64), biases: (f64, f64)) -> Parameters {
    let draw = |rng: &mut R, (lo, hi): (f64, f64)| if lo < hi { rng.random_range(lo..hi) } else { lo };
    let mut p = Parameters::zeros(arch);
    for layer in p.layers_mut() {
        let (r, c) = layer.weights.shape();
        for i in 0..r {
            for j in 0..c {
                layer.weights[(i, j)] = draw(rng, weights);
            }
        }
        for i in 0..r {
            layer.bias[i] = draw(rng, biases);
        }
    }
    p
}

/// Realization vectors of randomly drawn parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageCloud {
    pub points: Vec<Vec<f64>>,
    pub rows: Vec<Vec<f64>>,
    pub weight_range: (f64, f64),
    pub bias_range: (f64, f64),
    pub seed: u64,
}

impl ImageCloud {
    /// Rows whose entries all have magnitude at most `limit`.
    pub fn truncated(&self, limit: f64) -> Vec<&Vec<f64>> {
        self.rows
            .iter()
            .filter(|r| r.iter().all(|v| v.abs() <= limit))
            .collect()
    }
}

/// `n` i.i.d. parameter draws, row `i` from stream `i` of `seed`.
pub fn sample_image(
    arch: &Architecture,
    weight_range: (f64, f64),
    bias_range: (f64, f64),
    n: usize,
    seed: u64,
    points: &[Vec<f64>],
    exec: Exec,
) -> Result<ImageCloud> {
    for (lo, hi) in [weight_range, bias_range] {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid range ({lo}, {hi})")));
        }
    }
    let rows = map_indexed(exec, n, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let p = random_params(arch, &mut rng, weight_range, bias_range);
        realization(arch, &p, points)
    });
    Ok(ImageCloud {
        points: points.to_vec(),
        rows: rows.into_iter().collect::<Result<_>>()?,
        weight_range,
        bias_range,
        seed,
    })
}

/// Whether `z` is nondecreasing or nonincreasing up to `tol`.
pub fn is_monotone(z: &[f64], tol: f64) -> bool {
    let up = z.windows(2).all(|w| w[1] >= w[0] - tol);
    let down = z.windows(2).all(|w| w[1] <= w[0] + tol);
    up || down
}

/// Least-squares nondecreasing fit by pool-adjacent-violators.
pub fn isotonic_fit(u: &[f64]) -> Vec<f64> {
    // (mean, count) blocks
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(u.len());
    for &v in u {
        blocks.push((v, 1));
        while blocks.len() >= 2 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let n = n1 + n2;
            *blocks.last_mut().expect("two blocks") = ((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n);
        }
    }
    blocks.into_iter().flat_map(|(m, n)| std::iter::repeat_n(m, n)).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Squared distance from `u` to the monotone vectors of either orientation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneProjection {
    pub distance_sq: f64,
    /// All optimal fits, nondecreasing one first when both are optimal.
    pub minimizers: Vec<Vec<f64>>,
}

/// Exact projection onto the union of the nondecreasing and nonincreasing
/// cones. Both fits are reported when their distances agree to `1e-12`.
pub fn monotone_distance(u: &[f64]) -> MonotoneProjection {
    let up = isotonic_fit(u);
    let rev: Vec<f64> = u.iter().rev().copied().collect();
    let mut down = isotonic_fit(&rev);
    down.reverse();
    let (du, dd) = (sq_dist(u, &up), sq_dist(u, &down));
    let best = du.min(dd);
    let mut minimizers = Vec::new();
    if du <= best + 1e-12 {
        minimizers.push(up);
    }
    if dd <= best + 1e-12 && minimizers.iter().all(|m| max_abs_diff(m, &down) > 1e-12) {
        minimizers.push(down);
    }
    MonotoneProjection {
        distance_sq: best,
        minimizers,
    }
}

/// Settings of the multistart least-squares fits.
#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub weight_range: (f64, f64),
    pub bias_range: (f64, f64),
    pub descent: DescentOptions,
    pub exec: Exec,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 100,
            seed: 0,
            weight_range: DEFAULT_WEIGHT_RANGE,
            bias_range: DEFAULT_BIAS_RANGE,
            descent: DescentOptions {
                max_iters: 3000,
                grad_tol: 1e-10,
                ..DescentOptions::default()
            },
            exec: Exec::default(),
        }
    }
}

/// One finished restart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Restart {
    pub index: usize,
    pub distance_sq: f64,
    pub realization: Vec<f64>,
    pub params: Parameters,
}

/// `sum_k (psi(alpha, x_k) - u_k)^2` and its parameter gradient.
pub fn squared_residual(
    arch: &Architecture,
    points: &[Vec<f64>],
    u: &[f64],
    params: &Parameters,
) -> Result<(f64, Vec<f64>)> {
    let out = realization(arch, params, points)?;
    let r: Vec<f64> = out.iter().zip(u).map(|(v, u)| v - u).collect();
    let f = r.iter().map(|r| r * r).sum();
    let g: Vec<f64> = r.iter().map(|r| 2.0 * r).collect();
    Ok((f, backprop(arch, params, points, &g)?))
}

/// Gradient descent on the squared distance to `u` from `start`.
pub fn fit_from(
    arch: &Architecture,
    points: &[Vec<f64>],
    u: &[f64],
    start: &Parameters,
    opts: &DescentOptions,
) -> Result<(Parameters, f64)> {
    if u.len() != points.len() {
        return Err(Error::Shape(format!("{} targets for {} points", u.len(), points.len())));
    }
    start.check(arch)?;
    let f = |x: &[f64]| {
        let p = Parameters::unflatten(arch, x).expect("fixed length");
        squared_residual(arch, points, u, &p).expect("shapes checked")
    };
    let res = descend(f, start.flatten(), opts);
    let p = Parameters::unflatten(arch, &res.x)?;
    let (d, _) = squared_residual(arch, points, u, &p)?;
    Ok((p, d))
}

/// All restarts of a multistart fit, in index order.
pub fn fit_multistart(arch: &Architecture, points: &[Vec<f64>], u: &[f64], opts: &FitOptions) -> Result<Vec<Restart>> {
    if u.len() != points.len() {
        return Err(Error::Shape(format!("{} targets for {} points", u.len(), points.len())));
    }
    let runs = map_indexed(opts.exec, opts.restarts, |i| -> Result<Restart> {
        let mut rng = stream_rng(opts.seed, i as u64);
        let start = random_params(arch, &mut rng, opts.weight_range, opts.bias_range);
        let (params, distance_sq) = fit_from(arch, points, u, &start, &opts.descent)?;
        let realization = realization(arch, &params, points)?;
        Ok(Restart {
            index: i,
            distance_sq,
            realization,
            params,
        })
    });
    runs.into_iter().collect()
}

/// Best restart, ties broken by the lower index.
fn best_restart(runs: &[Restart]) -> Option<&Restart> {
    runs.iter()
        .filter(|r| r.distance_sq.is_finite())
        .min_by(|a, b| a.distance_sq.total_cmp(&b.distance_sq).then(a.index.cmp(&b.index)))
}

/// A group of near-optimal restarts with nearby realizations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Minimizer {
    pub realization: Vec<f64>,
    pub distance_sq: f64,
    pub params: Parameters,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub target: Vec<f64>,
    pub distance_sq: f64,
    pub distance: f64,
    pub best: Minimizer,
    /// Distinct near-optimal realizations found across restarts.
    pub minimizers: Vec<Minimizer>,
    pub restarts: usize,
    pub near_best: usize,
    pub mean_distance_sq: f64,
    /// Exact monotone-cone distance when the architecture is a single
    /// monotone unit on sorted one-dimensional points.
    pub monotone_bound: Option<f64>,
}

/// Whether realizations on `points` always form monotone vectors: one
/// hidden unit, monotone activation, scalar inputs sorted increasingly.
pub fn monotone_oracle_applies(arch: &Architecture, points: &[Vec<f64>]) -> bool {
    arch.depth() == 1
        && arch.widths()[0] == 1
        && arch.input_dim() == 1
        && arch.activations()[0].is_monotone() == Some(true)
        && points.windows(2).all(|w| w[0][0] <= w[1][0])
}

fn cluster(runs: &[Restart], best: f64) -> Vec<Minimizer> {
    let mut out: Vec<Minimizer> = Vec::new();
    for r in runs {
        if !(r.distance_sq <= best + NEAR_BEST) {
            continue;
        }
        match out
            .iter_mut()
            .find(|m| max_abs_diff(&m.realization, &r.realization) <= CLUSTER_RADIUS)
        {
            Some(m) => {
                m.count += 1;
                if r.distance_sq < m.distance_sq {
                    m.distance_sq = r.distance_sq;
                    m.realization = r.realization.clone();
                    m.params = r.params.clone();
                }
            }
            None => out.push(Minimizer {
                realization: r.realization.clone(),
                distance_sq: r.distance_sq,
                params: r.params.clone(),
                count: 1,
            }),
        }
    }
    out
}

/// Nearest realization to `u` found by multistart descent.
pub fn project_multistart(
    arch: &Architecture,
    u: &[f64],
    points: &[Vec<f64>],
    opts: &FitOptions,
) -> Result<ProjectionResult> {
    let runs = fit_multistart(arch, points, u, opts)?;
    let best = best_restart(&runs).ok_or(Error::SearchFailed { restarts: opts.restarts })?;
    let minimizers = cluster(&runs, best.distance_sq);
    let finite: Vec<f64> = runs.iter().map(|r| r.distance_sq).filter(|d| d.is_finite()).collect();
    Ok(ProjectionResult {
        target: u.to_vec(),
        distance_sq: best.distance_sq,
        distance: best.distance_sq.sqrt(),
        best: Minimizer {
            realization: best.realization.clone(),
            distance_sq: best.distance_sq,
            params: best.params.clone(),
            count: 1,
        },
        near_best: minimizers.iter().map(|m| m.count).sum(),
        minimizers,
        restarts: runs.len(),
        mean_distance_sq: finite.iter().sum::<f64>() / finite.len().max(1) as f64,
        monotone_bound: monotone_oracle_applies(arch, points).then(|| monotone_distance(u).distance_sq),
    })
}

/// `((1 - t) rho, 1, t rho)` for `n` evenly spaced `t` in `t_range`.
pub fn tie_path(rho: f64, t_range: (f64, f64), n: usize) -> Vec<(f64, Vec<f64>)> {
    let (t0, t1) = t_range;
    (0..n)
        .map(|i| {
            let t = if n > 1 { t0 + (t1 - t0) * i as f64 / (n - 1) as f64 } else { t0 };
            (t, vec![(1.0 - t) * rho, 1.0, t * rho])
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanStep {
    pub t: f64,
    pub target: Vec<f64>,
    pub distance_sq: f64,
    pub realization: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub t_before: f64,
    pub t_after: f64,
    /// Largest entrywise change of the selected realization.
    pub size: f64,
    pub distance_change: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub steps: Vec<ScanStep>,
    pub jumps: Vec<Jump>,
}

/// Projects every target of `path` (each with the same restart seeds) and
/// reports consecutive pairs at most [`JUMP_MAX_STEP`] apart in `t` whose
/// selected realizations differ by at least [`JUMP_THRESHOLD`].
pub fn discontinuity_scan(
    arch: &Architecture,
    path: &[(f64, Vec<f64>)],
    points: &[Vec<f64>],
    opts: &FitOptions,
) -> Result<ScanReport> {
    let mut steps = Vec::with_capacity(path.len());
    for (t, u) in path {
        let runs = fit_multistart(arch, points, u, opts)?;
        let best = best_restart(&runs).ok_or(Error::SearchFailed { restarts: opts.restarts })?;
        steps.push(ScanStep {
            t: *t,
            target: u.clone(),
            distance_sq: best.distance_sq,
            realization: best.realization.clone(),
        });
    }
    let jumps = steps
        .windows(2)
        .filter_map(|w| {
            let size = max_abs_diff(&w[0].realization, &w[1].realization);
            let close = (w[1].t - w[0].t).abs() <= JUMP_MAX_STEP * (1.0 + 1e-9);
            (close && size >= JUMP_THRESHOLD).then(|| Jump {
                t_before: w[0].t,
                t_after: w[1].t,
                size,
                distance_change: (w[1].distance_sq - w[0].distance_sq).abs(),
            })
        })
        .collect();
    Ok(ScanReport { steps, jumps })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMode {
    /// Distance from the exact monotone-cone oracle.
    Certified,
    /// Distance from a multistart projection.
    Heuristic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonconvexityCertificate {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub midpoint: Vec<f64>,
    pub distance_sq: f64,
    pub mode: CertificateMode,
    /// Restart statistics of the heuristic mode.
    pub projection: Option<ProjectionResult>,
}

impl NonconvexityCertificate {
    /// Accepted when the midpoint is measurably outside the image: any
    /// positive oracle distance, or ten times the projection tolerance.
    pub fn is_witness(&self) -> bool {
        match self.mode {
            CertificateMode::Certified => self.distance_sq > 0.0,
            CertificateMode::Heuristic => self.distance_sq > 10.0 * PROJECTION_TOLERANCE,
        }
    }
}

fn midpoint(z1: &[f64], z2: &[f64]) -> Vec<f64> {
    z1.iter().zip(z2).map(|(a, b)| 0.5 * (a + b)).collect()
}

/// Midpoint distance from the monotone oracle; exact for architectures
/// accepted by [`monotone_oracle_applies`].
pub fn certify_midpoint(z1: &[f64], z2: &[f64]) -> NonconvexityCertificate {
    let mid = midpoint(z1, z2);
    NonconvexityCertificate {
        z1: z1.to_vec(),
        z2: z2.to_vec(),
        distance_sq: monotone_distance(&mid).distance_sq,
        midpoint: mid,
        mode: CertificateMode::Certified,
        projection: None,
    }
}

/// Searches pairs among the first `max_rows` rows of the cloud for the
/// largest midpoint distance. Uses the exact oracle when it applies to
/// `arch`, otherwise projects `pairs` seeded random pairs by multistart.
pub fn nonconvexity_certificate(
    arch: &Architecture,
    cloud: &ImageCloud,
    max_rows: usize,
    pairs: usize,
    opts: &FitOptions,
) -> Result<NonconvexityCertificate> {
    let rows = &cloud.rows[..cloud.rows.len().min(max_rows)];
    if rows.len() < 2 {
        return Err(Error::InvalidArgument("need at least two cloud rows".into()));
    }
    if monotone_oracle_applies(arch, &cloud.points) {
        let mut best: Option<NonconvexityCertificate> = None;
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let c = certify_midpoint(&rows[i], &rows[j]);
                if best.as_ref().is_none_or(|b| c.distance_sq > b.distance_sq) {
                    best = Some(c);
                }
            }
        }
        return Ok(best.expect("two rows"));
    }
    let mut rng = stream_rng(opts.seed, u64::MAX);
    let mut best: Option<NonconvexityCertificate> = None;
    for _ in 0..pairs {
        let i = rng.random_range(0..rows.len());
        let mut j = rng.random_range(0..rows.len() - 1);
        if j >= i {
            j += 1;
        }
        let mid = midpoint(&rows[i], &rows[j]);
        let proj = project_multistart(arch, &mid, &cloud.points, opts)?;
        if best.as_ref().is_none_or(|b| proj.distance_sq > b.distance_sq) {
            best = Some(NonconvexityCertificate {
                z1: rows[i].clone(),
                z2: rows[j].clone(),
                midpoint: mid,
                distance_sq: proj.distance_sq,
                mode: CertificateMode::Heuristic,
                projection: Some(proj),
            });
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("no pairs requested".into()))
}
