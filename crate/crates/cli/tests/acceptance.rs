//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use spurmin::activation::{Polynomial, PolynomialEnumerator, SpaceFillingActivation};
use spurmin::geometry::{
    discontinuity_scan, is_monotone, monotone_distance, project_multistart, sample_image, tie_path, FitOptions,
    DEFAULT_BIAS_RANGE, DEFAULT_WEIGHT_RANGE,
};
use spurmin::io::write_cloud;
use spurmin::loss::best_affine;
use spurmin::net::{forward, param_gradient, realization};
use spurmin::par::stream_rng;
use spurmin::spurious::{construct_for_affine_fit, construct_for_constant_fit, sample_e};
use spurmin::verify::{
    check_local_min, expressiveness_gap, find_escape, inf_distance_sq, network_loss, EscapeOptions,
};
use spurmin::{
    ActivationKind, AffineSegment, Architecture, Dataset, Exec, LossSpec, Parameters, SpuriousConstruction,
};

const TWO_NINTHS: f64 = 2.0 / 9.0;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

fn worked_data() -> Dataset {
    Dataset::new(vec![vec![-1.0], vec![0.0], vec![1.0]], vec![1.0, 0.0, 1.0], None).unwrap()
}

fn leaky() -> ActivationKind {
    ActivationKind::LeakyRelu { slope: 0.01 }
}

fn worked_construction(data: &Dataset) -> SpuriousConstruction {
    let arch = Architecture::uniform(1, vec![2], leaky()).unwrap();
    let seg = leaky().default_segment(false).unwrap();
    construct_for_affine_fit(&arch, &[seg], &LossSpec::squared(), &data.measure, &data.target).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn k_points() -> Vec<Vec<f64>> {
    vec![vec![-1.0], vec![0.0], vec![2.0]]
}

fn relu_unit() -> Architecture {
    Architecture::uniform(1, vec![1], ActivationKind::Relu).unwrap()
}

fn worked_local_minimum() -> Outcome {
    let data = worked_data();
    let spec = LossSpec::squared();
    let c = worked_construction(&data);
    let loss = network_loss(&c.arch, &c.params, &spec, &data.measure, &data.target).unwrap();
    let g = norm(&param_gradient(&c.arch, &c.params, &data.measure, &data.target, &spec).unwrap());
    let report = check_local_min(&c, &data.measure, &data.target, &spec, 1000, 0).unwrap();
    let ok = (loss - TWO_NINTHS).abs() <= 1e-12 && g <= 1e-10 && report.passed() && report.samples == 1000;
    outcome(
        ok,
        format!(
            "loss {loss:.17} (2/9 off by {:.1e}), |grad| {g:.1e}, {} negative gaps, {} regime violations in {} samples",
            (loss - TWO_NINTHS).abs(),
            report.negative_gaps,
            report.regime_violations,
            report.samples
        ),
    )
}

fn spuriousness_certificate() -> Outcome {
    let data = worked_data();
    let c = worked_construction(&data);
    let opts = EscapeOptions {
        restarts: 200,
        ..EscapeOptions::default()
    };
    match find_escape(&c, &data.measure, &data.target, &LossSpec::squared(), &opts) {
        Ok(cert) => outcome(
            cert.escape_loss <= 1e-6 && cert.gap >= TWO_NINTHS - 1e-6 && cert.restarts_run <= 200,
            format!(
                "escape loss {:.2e}, gap {:.12}, {} restarts run",
                cert.escape_loss, cert.gap, cert.restarts_run
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn depth_generality() -> Outcome {
    let data = worked_data();
    let spec = LossSpec::squared();
    let acts = vec![leaky(), ActivationKind::Elu { scale: 1.0 }, ActivationKind::Isrlu { scale: 1.0 }];
    let arch = Architecture::new(1, vec![2, 2, 2], acts.clone()).unwrap();
    let segs: Vec<AffineSegment> = acts.iter().map(|a| a.default_segment(false).unwrap()).collect();
    let c = construct_for_affine_fit(&arch, &segs, &spec, &data.measure, &data.target).unwrap();
    let out = realization(&arch, &c.params, data.measure.points()).unwrap();
    let real_err = out.iter().map(|v| (v - 2.0 / 3.0).abs()).fold(0.0, f64::max);
    let map_err = c.realization.slope[0].abs().max((c.realization.intercept - 2.0 / 3.0).abs());
    let report = check_local_min(&c, &data.measure, &data.target, &spec, 1000, 1).unwrap();
    let cert = find_escape(&c, &data.measure, &data.target, &spec, &EscapeOptions::default());
    let gap = cert.as_ref().map(|c| c.gap).unwrap_or(f64::NAN);
    outcome(
        real_err <= 1e-10 && map_err <= 1e-10 && report.passed() && gap > 0.0,
        format!(
            "realization error {real_err:.1e}, (a, c) error {map_err:.1e}, local check {}, escape gap {gap:.3e}",
            if report.passed() { "passed" } else { "failed" }
        ),
    )
}

fn constant_variant() -> Outcome {
    let data = worked_data();
    let spec = LossSpec::squared();
    let arch = Architecture::uniform(1, vec![2, 2], ActivationKind::Sqnl).unwrap();
    let seg = ActivationKind::Sqnl.default_segment(true).unwrap();
    let c = construct_for_constant_fit(&arch, 1, &seg, &spec, &data.measure, &data.target).unwrap();
    let out = realization(&arch, &c.params, data.measure.points()).unwrap();
    let real_err = out.iter().map(|v| (v - 2.0 / 3.0).abs()).fold(0.0, f64::max);
    let loss = network_loss(&arch, &c.params, &spec, &data.measure, &data.target).unwrap();
    let cert = find_escape(&c, &data.measure, &data.target, &spec, &EscapeOptions::default());
    let escape = cert.as_ref().map(|c| c.escape_loss).unwrap_or(f64::NAN);
    outcome(
        real_err <= 1e-12 && (loss - TWO_NINTHS).abs() <= 1e-12 && escape < loss,
        format!("realization error {real_err:.1e}, loss {loss:.17}, escape loss {escape:.3e}"),
    )
}

fn e_family() -> Outcome {
    let data = worked_data();
    let spec = LossSpec::squared();
    let (m, y) = (&data.measure, &data.target);
    let c = worked_construction(&data);
    let base = network_loss(&c.arch, &c.params, &spec, m, y).unwrap();
    let fam = sample_e(&c, 0.1, 100, 0).unwrap();
    let mut real_err: f64 = 0.0;
    let mut loss_rel: f64 = 0.0;
    let mut passed = 0;
    for (i, p) in fam.params.iter().enumerate() {
        let out = realization(&c.arch, p, m.points()).unwrap();
        for (x, v) in m.points().iter().zip(&out) {
            real_err = real_err.max((v - c.realization.eval(x)).abs());
        }
        let l = network_loss(&c.arch, p, &spec, m, y).unwrap();
        loss_rel = loss_rel.max((l - base).abs() / base);
        let centred = c.recentered(p.clone(), i as u64).unwrap();
        passed += usize::from(check_local_min(&centred, m, y, &spec, 1000, i as u64).unwrap().passed());
    }
    let m_params = c.arch.num_params();
    outcome(
        fam.params.len() == 100
            && real_err <= 1e-9
            && loss_rel <= 1e-12
            && passed == 100
            && m_params == 7
            && fam.free_dim == 5,
        format!(
            "{} members, realization error {real_err:.1e}, loss deviation {loss_rel:.1e} rel, {passed}/100 local checks, m = {m_params}, free dim {}",
            fam.params.len(),
            fam.free_dim
        ),
    )
}

fn figure_clouds(dir: &Path) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for (name, act) in [("relu", ActivationKind::Relu), ("sqnl", ActivationKind::Sqnl)] {
        let arch = Architecture::uniform(1, vec![1], act).unwrap();
        let cloud = sample_image(
            &arch,
            DEFAULT_WEIGHT_RANGE,
            DEFAULT_BIAS_RANGE,
            100_000,
            0,
            &k_points(),
            Exec::default(),
        )
        .unwrap();
        let path = dir.join(format!("{name}.csv"));
        let file = std::fs::File::create(&path).unwrap();
        write_cloud(std::io::BufWriter::new(file), 3, &cloud.rows).unwrap();
        let lines = std::fs::read_to_string(&path).unwrap().lines().count();
        let monotone = cloud.rows.iter().filter(|r| is_monotone(r, 1e-12)).count();
        ok &= lines == 100_001;
        if name == "relu" {
            ok &= monotone == cloud.rows.len();
        }
        details.push(format!("{name}: {} rows written, {monotone} monotone", lines - 1));
    }
    outcome(ok, details.join("; "))
}

fn projection_geometry() -> Outcome {
    let arch = relu_unit();
    let opts = FitOptions {
        restarts: 500,
        ..FitOptions::default()
    };
    let r = project_multistart(&arch, &[0.0, 1.0, 0.0], &k_points(), &opts).unwrap();
    let found = |z: [f64; 3]| {
        r.minimizers
            .iter()
            .any(|m| m.realization.iter().zip(z).all(|(a, b)| (a - b).abs() <= 1e-6))
    };
    let both = found([0.0, 0.5, 0.5]) && found([0.5, 0.5, 0.0]);
    let scan_opts = FitOptions {
        restarts: 100,
        ..FitOptions::default()
    };
    let path = tie_path(0.5, (0.45, 0.55), 11);
    let scan = discontinuity_scan(&arch, &path, &k_points(), &scan_opts).unwrap();
    outcome(
        (r.distance_sq - 0.5).abs() <= 1e-6 && both && scan.jumps.len() == 1,
        format!(
            "distance^2 {:.12}, both minimizers {}, {} jump(s) along the path",
            r.distance_sq,
            if both { "found" } else { "not found" },
            scan.jumps.len()
        ),
    )
}

fn expressiveness() -> Outcome {
    let arch = relu_unit();
    let opts = FitOptions {
        restarts: 32,
        ..FitOptions::default()
    };
    let gap = expressiveness_gap(&arch, &k_points(), 50, 0, &opts).unwrap();
    let tie = inf_distance_sq(
        &arch,
        &k_points(),
        &[0.0, 1.0, 0.0],
        &FitOptions {
            restarts: 100,
            ..FitOptions::default()
        },
    )
    .unwrap();
    outcome(
        gap.max < 1.0 && gap.infima.len() == 50 && (tie - 0.5).abs() <= 1e-3,
        format!("max over 50 directions {:.6}, direction (0,1,0) gives {tie:.9}", gap.max),
    )
}

fn space_filling() -> Outcome {
    let sf = Arc::new(SpaceFillingActivation::build(ActivationKind::Sqnl, (5.0, 6.0), 0.1).unwrap());
    let arch = sf.readout_architecture();
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let x_sq = PolynomialEnumerator::new().position(|p| p == Polynomial::from_integers(&[0, 0, 1]));
    let mut readout_err: f64 = 0.0;
    for k in [1, x_sq.unwrap() + 1] {
        let params = sf.readout_params(k).unwrap();
        for &x in &grid {
            let want = if k == 1 { x } else { x * x };
            readout_err = readout_err.max((forward(&arch, &params, &[x]).unwrap() - want).abs());
        }
    }
    let base = ActivationKind::Sqnl;
    let dev = (0..=100_000)
        .map(|i| 5.0 + i as f64 / 100_000.0)
        .map(|s| (sf.eval(s) - base.eval(s)).abs())
        .fold(0.0, f64::max);
    let outside_equal = (0..=20_000)
        .map(|i| -20.0 + 40.0 * i as f64 / 20_000.0)
        .filter(|s| !(5.0..=6.0).contains(s))
        .all(|s| sf.eval(s) == base.eval(s));
    outcome(
        readout_err <= 1e-9 && dev < 0.1 && outside_equal,
        format!(
            "readout error {readout_err:.1e} (x and x^2 at index {}), sup deviation {dev:.4}, identical outside I: {outside_equal}",
            x_sq.map_or(0, |i| i + 1)
        ),
    )
}

fn plain_loss4(xs: &[f64], ys: &[f64], a: f64, c: f64) -> f64 {
    xs.iter().zip(ys).map(|(x, y)| (a * x + c - y).powi(4)).sum::<f64>() / xs.len() as f64
}

fn compass_search(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let (mut a, mut c) = (0.0, 0.0);
    let mut best = plain_loss4(xs, ys, a, c);
    let mut h = 4.0;
    while h > 1e-9 {
        let mut moved = false;
        for i in -5..=5 {
            for j in -5..=5 {
                let (ta, tc) = (a + h * i as f64 / 5.0, c + h * j as f64 / 5.0);
                let v = plain_loss4(xs, ys, ta, tc);
                if v < best {
                    (best, a, c, moved) = (v, ta, tc, true);
                }
            }
        }
        if !moved {
            h *= 0.5;
        }
    }
    (a, c)
}

fn brute_isotonic(u: &[f64]) -> f64 {
    let n = u.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << (n - 1)) {
        let (mut start, mut fit, mut means) = (0, Vec::new(), Vec::new());
        for i in 0..n {
            if i == n - 1 || mask & (1 << i) != 0 {
                let m = u[start..=i].iter().sum::<f64>() / (i + 1 - start) as f64;
                means.push(m);
                fit.extend(std::iter::repeat_n(m, i + 1 - start));
                start = i + 1;
            }
        }
        if means.windows(2).all(|w| w[0] <= w[1]) {
            best = best.min(u.iter().zip(&fit).map(|(a, b)| (a - b) * (a - b)).sum());
        }
    }
    best
}

fn oracle_equivalences() -> Outcome {
    // best affine, p = 4
    let cases: [(&[f64], &[f64]); 3] = [
        (&[-1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]),
        (&[-2.0, -0.5, 0.3, 1.7], &[0.4, -1.0, 2.0, 0.1]),
        (&[0.0, 1.0, 2.0, 3.0, 4.0], &[0.0, 1.0, 0.0, 3.0, -1.0]),
    ];
    let spec4 = LossSpec::new(4.0).unwrap();
    let mut affine_err: f64 = 0.0;
    for (xs, ys) in cases {
        let data = Dataset::new(xs.iter().map(|&x| vec![x]).collect(), ys.to_vec(), None).unwrap();
        let (map, _) = best_affine(&spec4, &data.measure, &data.target).unwrap();
        let (a, c) = compass_search(xs, ys);
        affine_err = affine_err.max((map.slope[0] - a).abs()).max((map.intercept - c).abs());
    }

    // monotone distance
    let mut rng = stream_rng(0, 0);
    let mut iso_err: f64 = 0.0;
    for i in 0..1000 {
        let n = 1 + i % 5;
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let rev: Vec<f64> = u.iter().rev().copied().collect();
        let brute = brute_isotonic(&u).min(brute_isotonic(&rev));
        iso_err = iso_err.max((monotone_distance(&u).distance_sq - brute).abs());
    }

    // gradients
    let archs = [
        Architecture::uniform(1, vec![2], leaky()).unwrap(),
        Architecture::uniform(2, vec![3, 2], ActivationKind::Elu { scale: 1.0 }).unwrap(),
        Architecture::uniform(1, vec![2, 2, 2], ActivationKind::Isrlu { scale: 1.0 }).unwrap(),
        Architecture::uniform(3, vec![4], ActivationKind::Sqnl).unwrap(),
        Architecture::uniform(2, vec![2, 3], ActivationKind::Plu { alpha: 0.1, c: 1.0 }).unwrap(),
    ];
    let spec = LossSpec::squared();
    let mut grad_err: f64 = 0.0;
    for draw in 0..100 {
        let arch = &archs[draw % 5];
        let mut rng = stream_rng(1, draw as u64);
        let flat: Vec<f64> = (0..arch.num_params()).map(|_| rng.random_range(-1.5..1.5)).collect();
        let pts: Vec<Vec<f64>> =
            (0..5).map(|_| (0..arch.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let data = Dataset::new(pts, y, None).unwrap();
        let params = Parameters::unflatten(arch, &flat).unwrap();
        let g = param_gradient(arch, &params, &data.measure, &data.target, &spec).unwrap();
        let loss_at = |x: &[f64]| {
            let q = Parameters::unflatten(arch, x).unwrap();
            network_loss(arch, &q, &spec, &data.measure, &data.target).unwrap()
        };
        let h = 1e-6;
        let fd: Vec<f64> = (0..flat.len())
            .map(|i| {
                let (mut up, mut down) = (flat.clone(), flat.clone());
                up[i] += h;
                down[i] -= h;
                (loss_at(&up) - loss_at(&down)) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
        grad_err = grad_err.max(norm(&diff) / norm(&g).max(1e-8));
    }
    outcome(
        affine_err <= 1e-3 && iso_err <= 1e-12 && grad_err <= 1e-6,
        format!("affine p=4 {affine_err:.1e}, isotonic {iso_err:.1e}, gradient rel {grad_err:.1e}"),
    )
}

fn degenerate_guards(dir: &Path) -> Outcome {
    let single = dir.join("single.csv");
    let affine = dir.join("affine.csv");
    std::fs::write(&single, "x1,y\n0.5,2\n").unwrap();
    std::fs::write(&affine, "x1,y\n-1,-1\n0,1\n1,3\n2,5\n").unwrap();
    let mut codes = Vec::new();
    let mut ok = true;
    for data in [&single, &affine] {
        for cmd in ["construct", "verify"] {
            let out = Command::new(env!("CARGO_BIN_EXE_spurmin"))
                .args([cmd, "--data"])
                .arg(data)
                .output()
                .unwrap();
            let stderr = String::from_utf8_lossy(&out.stderr);
            let code = out.status.code();
            ok &= code == Some(2) && stderr.contains("target degenerate");
            codes.push(format!("{cmd} {}: {code:?}", data.file_name().unwrap().to_string_lossy()));
        }
    }
    outcome(ok, codes.join(", "))
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Option<Duration>, Box<dyn Fn() -> Outcome>)> = vec![
        ("worked spurious minimum", Some(Duration::from_secs(1)), Box::new(worked_local_minimum)),
        ("spuriousness certificate", Some(Duration::from_secs(30)), Box::new(spuriousness_certificate)),
        ("depth generality", Some(Duration::from_secs(120)), Box::new(depth_generality)),
        ("constant variant", Some(Duration::from_secs(120)), Box::new(constant_variant)),
        ("E-family", None, Box::new(e_family)),
        ("image clouds", Some(Duration::from_secs(10)), Box::new(|| figure_clouds(dir.path()))),
        ("projection geometry", Some(Duration::from_secs(60)), Box::new(projection_geometry)),
        ("expressiveness gap", None, Box::new(expressiveness)),
        ("space-filling activation", Some(Duration::from_secs(5)), Box::new(space_filling)),
        ("oracle equivalences", None, Box::new(oracle_equivalences)),
        ("degenerate guards", None, Box::new(|| degenerate_guards(dir.path()))),
    ];
    let mut failures = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut o = run();
        let elapsed = start.elapsed();
        if let Some(limit) = limit {
            if elapsed > *limit {
                o.ok = false;
                o.detail.push_str(&format!("; exceeded {limit:?}"));
            }
        }
        failures += usize::from(!o.ok);
        println!(
            "{} {:>2} {name}: {} [{:.2?}]",
            if o.ok { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            elapsed
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
