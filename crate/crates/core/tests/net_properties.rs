use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spurmin::net::{param_gradient, realization};
use spurmin::verify::network_loss;
use spurmin::{ActivationKind, Architecture, Dataset, LossSpec, Parameters};

fn activation() -> impl Strategy<Value = ActivationKind> {
    prop_oneof![
        Just(ActivationKind::Relu),
        (0.0..0.5f64).prop_map(|slope| ActivationKind::LeakyRelu { slope }),
        (0.1..2.0f64).prop_map(|scale| ActivationKind::Elu { scale }),
        (0.1..2.0f64).prop_map(|scale| ActivationKind::Isrlu { scale }),
        Just(ActivationKind::Sqnl),
    ]
}

fn architecture() -> impl Strategy<Value = Architecture> {
    (1usize..4, prop::collection::vec(1usize..4, 1..4), activation())
        .prop_map(|(d, widths, act)| Architecture::uniform(d, widths, act).unwrap())
}

fn random_params(arch: &Architecture, rng: &mut ChaCha8Rng) -> Parameters {
    let flat: Vec<f64> = (0..arch.num_params()).map(|_| rng.random_range(-1.5..1.5)).collect();
    Parameters::unflatten(arch, &flat).unwrap()
}

fn random_points(d: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

proptest! {
    #[test]
    fn flatten_unflatten_round_trip(arch in architecture(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&arch, &mut rng);
        let flat = p.flatten();
        prop_assert_eq!(flat.len(), arch.num_params());
        let back = Parameters::unflatten(&arch, &flat).unwrap();
        prop_assert_eq!(back.flatten(), flat);
        prop_assert_eq!(back, p);
    }

    #[test]
    fn wrong_length_is_rejected(arch in architecture(), extra in 1usize..3) {
        let flat = vec![0.0; arch.num_params() + extra];
        prop_assert!(Parameters::unflatten(&arch, &flat).is_err());
    }

    #[test]
    fn output_scaling_is_homogeneous(arch in architecture(), seed in any::<u64>(), t in -3.0..3.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&arch, &mut rng);
        let pts = random_points(arch.input_dim(), 6, &mut rng);
        let base = realization(&arch, &p, &pts).unwrap();
        let mut q = p.clone();
        q.scale_output(t);
        let scaled = realization(&arch, &q, &pts).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            prop_assert!((t * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn gradient_has_one_finite_entry_per_parameter(arch in architecture(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&arch, &mut rng);
        let pts = random_points(arch.input_dim(), 4, &mut rng);
        let y: Vec<f64> = pts.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let data = Dataset::new(pts, y, None).unwrap();
        let g = param_gradient(&arch, &p, &data.measure, &data.target, &LossSpec::squared()).unwrap();
        prop_assert_eq!(g.len(), arch.num_params());
        prop_assert!(g.iter().all(|v| v.is_finite()));
    }
}

/// Central differences of the loss against the backpropagated gradient.
fn finite_difference_check(arch: &Architecture, p_exp: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = random_params(arch, &mut rng);
    let pts = random_points(arch.input_dim(), 5, &mut rng);
    let y: Vec<f64> = pts.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let data = Dataset::new(pts, y, None).unwrap();
    let spec = LossSpec::new(p_exp).unwrap();
    let g = param_gradient(arch, &params, &data.measure, &data.target, &spec).unwrap();
    let flat = params.flatten();
    let h = 1e-6;
    let loss_at = |x: &[f64]| {
        let q = Parameters::unflatten(arch, x).unwrap();
        network_loss(arch, &q, &spec, &data.measure, &data.target).unwrap()
    };
    let fd: Vec<f64> = (0..flat.len())
        .map(|i| {
            let mut plus = flat.clone();
            let mut minus = flat.clone();
            plus[i] += h;
            minus[i] -= h;
            (loss_at(&plus) - loss_at(&minus)) / (2.0 * h)
        })
        .collect();
    let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / norm.max(1e-8)
}

#[test]
fn gradient_matches_finite_differences_on_five_architectures() {
    let archs = [
        Architecture::uniform(1, vec![2], ActivationKind::LeakyRelu { slope: 0.01 }).unwrap(),
        Architecture::uniform(2, vec![3, 2], ActivationKind::Elu { scale: 1.0 }).unwrap(),
        Architecture::uniform(1, vec![2, 2, 2], ActivationKind::Isrlu { scale: 1.0 }).unwrap(),
        Architecture::uniform(3, vec![4], ActivationKind::Sqnl).unwrap(),
        Architecture::new(
            2,
            vec![2, 3],
            vec![ActivationKind::Plu { alpha: 0.1, c: 1.0 }, ActivationKind::Elu { scale: 0.5 }],
        )
        .unwrap(),
    ];
    for (a, arch) in archs.iter().enumerate() {
        for s in 0..20 {
            let p_exp = if s % 2 == 0 { 2.0 } else { 3.0 };
            let rel = finite_difference_check(arch, p_exp, 1000 * a as u64 + s);
            assert!(rel <= 1e-6, "architecture {a}, draw {s}: relative error {rel:e}");
        }
    }
}
