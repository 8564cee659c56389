use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;
use spurmin::activation::{ActivationKind, SpaceFillingActivation};
use spurmin::geometry::{
    discontinuity_scan, is_monotone, project_multistart, sample_image, tie_path, FitOptions,
};
use spurmin::io::{read_dataset_file, to_json, write_cloud, write_samples};
use spurmin::net::{param_gradient, realization};
use spurmin::loss::{best_affine, best_constant, classify_target, Dataset, TargetClass};
use spurmin::spurious::{construct_for_affine_fit, construct_for_constant_fit, sample_e};
use spurmin::verify::{check_local_min, find_escape, network_loss, EscapeOptions};
use spurmin::{AffineSegment, Architecture, Error, Exec, Result, SpuriousConstruction};

use crate::config::RunConfig;

pub fn worked_architecture() -> Architecture {
    Architecture::uniform(1, vec![2], ActivationKind::LeakyRelu { slope: 0.01 }).expect("valid")
}

pub fn one_unit_relu() -> Architecture {
    Architecture::uniform(1, vec![1], ActivationKind::Relu).expect("valid")
}

pub fn worked_dataset() -> Dataset {
    Dataset::new(vec![vec![-1.0], vec![0.0], vec![1.0]], vec![1.0, 0.0, 1.0], None).expect("valid")
}

/// Writes to `out`, or stdout when absent.
pub fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    emit(out, &to_json(value)?)
}

fn emit_csv(out: Option<&Path>, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    emit(out, &String::from_utf8(buf).expect("csv is utf-8"))
}

pub struct Problem {
    pub arch: Architecture,
    pub data: Dataset,
    pub class: TargetClass,
    pub construction: SpuriousConstruction,
}

fn resolve_segments(cfg: &RunConfig, arch: &Architecture) -> Result<Vec<AffineSegment>> {
    let overrides = cfg.segments.clone().unwrap_or_default();
    if !overrides.is_empty() && overrides.len() != arch.depth() {
        return Err(Error::InvalidArgument(format!(
            "{} segments given for {} hidden layers",
            overrides.len(),
            arch.depth()
        )));
    }
    arch.activations()
        .iter()
        .enumerate()
        .map(|(i, act)| match overrides.get(i).copied().flatten() {
            Some(s) => Ok(s),
            None => act.default_segment(false),
        })
        .collect()
}

pub fn build_problem(cfg: &RunConfig, data: Dataset) -> Result<Problem> {
    let arch = cfg.architecture_or(worked_architecture)?;
    let spec = cfg.loss();
    let class = classify_target(&data.measure, &data.target)?;
    let construction = match cfg.constant_layer {
        None => {
            if class.is_affine() {
                return Err(Error::TargetDegenerate(
                    "the samples are fitted exactly by an affine map; no spurious minimum of this kind".into(),
                ));
            }
            let segs = resolve_segments(cfg, &arch)?;
            construct_for_affine_fit(&arch, &segs, &spec, &data.measure, &data.target)?
        }
        Some(j) => {
            if class.is_constant() {
                return Err(Error::TargetDegenerate(
                    "the samples are constant; no spurious minimum of this kind".into(),
                ));
            }
            if j == 0 || j > arch.depth() {
                return Err(Error::IndexOutOfRange {
                    index: j,
                    max: arch.depth(),
                });
            }
            let seg = match cfg.segments.as_ref().and_then(|s| s.get(j - 1).copied().flatten()) {
                Some(s) => s,
                None => arch.activations()[j - 1].default_segment(true)?,
            };
            construct_for_constant_fit(&arch, j, &seg, &spec, &data.measure, &data.target)?
        }
    };
    Ok(Problem {
        arch,
        data,
        class,
        construction,
    })
}

fn load_problem(cfg: &RunConfig) -> Result<Problem> {
    let data = read_dataset_file(cfg.data_path()?)?;
    build_problem(cfg, data)
}

pub fn construct(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let p = load_problem(cfg)?;
    let (m, y, spec) = (&p.data.measure, &p.data.target, cfg.loss());
    let loss = network_loss(&p.arch, &p.construction.params, &spec, m, y)?;
    let grad = param_gradient(&p.arch, &p.construction.params, m, y, &spec)?;
    emit_json(
        out,
        &json!({
            "class": p.class,
            "loss": loss,
            "gradient_norm": grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
            "construction": p.construction,
        }),
    )
}

pub fn verify(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let p = load_problem(cfg)?;
    let spec = cfg.loss();
    let (m, y) = (&p.data.measure, &p.data.target);
    let report = check_local_min(&p.construction, m, y, &spec, cfg.n_samples(), cfg.seed())?;
    let family = sample_e(&p.construction, cfg.scale(), cfg.family_size(), cfg.seed())?;
    let mut max_realization_error: f64 = 0.0;
    let mut max_loss_deviation: f64 = 0.0;
    let mut members_passed = 0;
    for (i, member) in family.params.iter().enumerate() {
        let out = realization(&p.arch, member, m.points())?;
        for (x, v) in m.points().iter().zip(&out) {
            max_realization_error = max_realization_error.max((p.construction.realization.eval(x) - v).abs());
        }
        let l = network_loss(&p.arch, member, &spec, m, y)?;
        max_loss_deviation = max_loss_deviation.max((l - report.loss).abs());
        let centred = p.construction.recentered(member.clone(), cfg.seed().wrapping_add(i as u64))?;
        let r = check_local_min(&centred, m, y, &spec, cfg.n_samples(), cfg.seed())?;
        members_passed += usize::from(r.passed());
    }
    emit_json(
        out,
        &json!({
            "local_min": report,
            "passed": report.passed(),
            "family": {
                "members": family.params.len(),
                "free_dim": family.free_dim,
                "scale": family.scale,
                "halvings": family.halvings,
                "max_realization_error": max_realization_error,
                "max_loss_deviation": max_loss_deviation,
                "members_passed": members_passed,
            },
        }),
    )
}

pub fn escape(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let p = load_problem(cfg)?;
    let opts = EscapeOptions {
        restarts: cfg.restarts(),
        seed: cfg.seed(),
        ..EscapeOptions::default()
    };
    let cert = find_escape(&p.construction, &p.data.measure, &p.data.target, &cfg.loss(), &opts)?;
    emit_json(out, &cert)
}

fn image_points(cfg: &RunConfig) -> Vec<Vec<f64>> {
    cfg.image.points.iter().map(|&x| vec![x]).collect()
}

pub fn sample_image_cmd(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let arch = cfg.architecture_or(one_unit_relu)?;
    let points = image_points(cfg);
    let o = &cfg.image;
    let cloud = sample_image(&arch, o.weight_range, o.bias_range, o.n, cfg.seed(), &points, Exec::default())?;
    let rows: Vec<&Vec<f64>> = if o.full { cloud.rows.iter().collect() } else { cloud.truncated(1e3) };
    emit_csv(out, |buf| write_cloud(buf, points.len(), rows.iter().map(|r| r.as_slice())))?;
    if out.is_some() {
        let monotone = cloud.rows.iter().filter(|r| is_monotone(r, 1e-12)).count();
        print!(
            "{}",
            to_json(&json!({
                "rows": cloud.rows.len(),
                "written": rows.len(),
                "monotone_rows": monotone,
            }))?
        );
    }
    Ok(())
}

pub fn best_affine_cmd(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let data = read_dataset_file(cfg.data_path()?)?;
    let spec = cfg.loss();
    let (map, loss) = best_affine(&spec, &data.measure, &data.target)?;
    let (c, closs) = best_constant(&spec, &data.measure, &data.target)?;
    emit_json(
        out,
        &json!({
            "p": spec.p,
            "affine": { "a": map.slope, "c": map.intercept, "loss": loss },
            "constant": { "c": c, "loss": closs },
            "class": classify_target(&data.measure, &data.target)?,
        }),
    )
}

pub fn space_fill(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let o = &cfg.space_fill;
    let sf = Arc::new(SpaceFillingActivation::build(o.base.clone(), o.interval, o.epsilon)?);
    let (lo, hi) = o.interval;
    let pad = 0.5 * (hi - lo);
    let samples = sf.sample(lo - pad, hi + pad, o.samples);
    emit_csv(out, |buf| write_samples(buf, &samples))?;
    if out.is_some() {
        let dev = samples
            .iter()
            .map(|(s, v)| (v - o.base.eval(*s)).abs())
            .fold(0.0, f64::max);
        print!(
            "{}",
            to_json(&json!({
                "window": sf.window(),
                "plateau_value": sf.plateau_value(),
                "bands": sf.num_bands(),
                "max_sampled_deviation": dev,
            }))?
        );
    }
    Ok(())
}

fn fit_options(cfg: &RunConfig) -> FitOptions {
    FitOptions {
        restarts: cfg.restarts(),
        seed: cfg.seed(),
        ..FitOptions::default()
    }
}

pub fn project(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let arch = cfg.architecture_or(one_unit_relu)?;
    let points = image_points(cfg);
    let r = project_multistart(&arch, &cfg.project.target, &points, &fit_options(cfg))?;
    emit_json(out, &r)
}

pub fn scan(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let arch = cfg.architecture_or(one_unit_relu)?;
    let points = image_points(cfg);
    let path = tie_path(cfg.project.rho, cfg.project.t_range, cfg.project.steps);
    let r = discontinuity_scan(&arch, &path, &points, &fit_options(cfg))?;
    emit_json(out, &r)
}

/// The worked example end to end: construct, verify, escape, sample clouds.
pub fn demo(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let data = match &cfg.data {
        Some(p) => read_dataset_file(p)?,
        None => worked_dataset(),
    };
    let p = build_problem(cfg, data)?;
    let spec = cfg.loss();
    let (m, y) = (&p.data.measure, &p.data.target);
    let report = check_local_min(&p.construction, m, y, &spec, cfg.n_samples(), cfg.seed())?;
    let opts = EscapeOptions {
        restarts: cfg.restarts(),
        seed: cfg.seed(),
        ..EscapeOptions::default()
    };
    let cert = find_escape(&p.construction, m, y, &spec, &opts)?;
    let points = image_points(cfg);
    let o = &cfg.image;
    let mut clouds = Vec::new();
    for act in [ActivationKind::Relu, ActivationKind::Sqnl] {
        let arch = Architecture::uniform(1, vec![1], act.clone())?;
        let cloud = sample_image(&arch, o.weight_range, o.bias_range, o.n, cfg.seed(), &points, Exec::default())?;
        let monotone = cloud.rows.iter().filter(|r| is_monotone(r, 1e-12)).count();
        clouds.push(json!({
            "activation": act.to_string(),
            "rows": cloud.rows.len(),
            "monotone_rows": monotone,
        }));
    }
    emit_json(
        out,
        &json!({
            "spurious_loss": report.loss,
            "gradient_norm": report.gradient_norm,
            "local_min": report,
            "escape_loss": cert.escape_loss,
            "gap": cert.gap,
            "escape": cert,
            "clouds": clouds,
        }),
    )
}
