use compnet::constructor::prune;
use compnet::data_io::{interpolate_time, knn_impute, Grid};
use compnet::linear_solver::{build_gram, combine_outputs, mse, solve_theta_star};
use compnet::{rng, Activation, Component, ComponentKind, CompositeNetwork, Role};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

/// `K` component outputs that are noisy copies of `y`, with enough spread to
/// keep the Gram matrix well conditioned.
fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    (8usize..40, 1usize..4).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, n), k),
        )
            .prop_map(|(y, noise)| {
                let fs = noise
                    .iter()
                    .enumerate()
                    .map(|(j, e)| y.iter().zip(e).map(|(a, b)| a * (1.0 - 0.1 * j as f64) + b).collect())
                    .collect();
                (y, fs)
            })
    })
}

fn well_posed(y: &[f64], fs: &[Vec<f64>]) -> bool {
    build_gram(fs, y).and_then(|s| solve_theta_star(&s, 0.0)).is_ok()
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn optimum_beats_every_unit_combination((y, fs) in instance()) {
        prop_assume!(well_posed(&y, &fs));
        let theta = solve_theta_star(&build_gram(&fs, &y).unwrap(), 0.0).unwrap();
        let best = mse(&combine_outputs(&theta, &fs), &y);
        // e_j picks out one component; e_0 is the constant 1
        for j in 0..=fs.len() {
            let mut e = vec![0.0; fs.len() + 1];
            e[j] = 1.0;
            prop_assert!(best <= mse(&combine_outputs(&e, &fs), &y) + 1e-9);
        }
    }

    #[test]
    fn residual_is_orthogonal_at_the_optimum((y, fs) in instance()) {
        prop_assume!(well_posed(&y, &fs));
        let theta = solve_theta_star(&build_gram(&fs, &y).unwrap(), 0.0).unwrap();
        let g = combine_outputs(&theta, &fs);
        let n = y.len() as f64;
        let r: Vec<f64> = g.iter().zip(&y).map(|(a, b)| a - b).collect();
        let scale = y.iter().map(|v| v.abs()).fold(1.0, f64::max);
        // gradient of the mean squared error with respect to each θ_j
        let mut grad = vec![2.0 * r.iter().sum::<f64>() / n];
        for f in &fs {
            grad.push(2.0 * r.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() / n);
        }
        let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm < 1e-6 * scale * scale, "gradient norm {norm}");
    }

    #[test]
    fn scaling_labels_and_outputs_scales_the_bias((y, fs) in instance(), c in 0.1f64..50.0) {
        prop_assume!(well_posed(&y, &fs));
        let theta = solve_theta_star(&build_gram(&fs, &y).unwrap(), 0.0).unwrap();
        let ys: Vec<f64> = y.iter().map(|v| c * v).collect();
        let fss: Vec<Vec<f64>> = fs.iter().map(|f| f.iter().map(|v| c * v).collect()).collect();
        let scaled = solve_theta_star(&build_gram(&fss, &ys).unwrap(), 0.0).unwrap();
        prop_assert!((scaled[0] - c * theta[0]).abs() < 1e-6 * c.max(1.0) * (1.0 + theta[0].abs()));
        for j in 1..theta.len() {
            prop_assert!((scaled[j] - theta[j]).abs() < 1e-6 * (1.0 + theta[j].abs()));
        }
        let l = mse(&combine_outputs(&theta, &fs), &y);
        let ls = mse(&combine_outputs(&scaled, &fss), &ys);
        prop_assert!((ls - c * c * l).abs() <= 1e-8 * (1.0 + c * c * l));
    }

    #[test]
    fn component_json_round_trip(sizes in prop::collection::vec(1usize..5, 2..5), seed in any::<u64>(), tanh in any::<bool>()) {
        let act = if tanh { Activation::Tanh } else { Activation::Logistic };
        let c = Component::mlp("f1", ComponentKind::PreTrained, Role::Base, &sizes, act, &mut rng::seeded(seed)).unwrap();
        let back: Component = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn network_json_round_trip(theta in prop::collection::vec(-5.0f64..5.0, 3), sl in any::<bool>()) {
        let a = CompositeNetwork::combine(&[&CompositeNetwork::leaf("a"), &CompositeNetwork::leaf("b")], theta).unwrap();
        let act = if sl { Activation::SL } else { Activation::Tanh };
        let net = CompositeNetwork::sandwich(&[&a, &CompositeNetwork::leaf("c")], act);
        let back = CompositeNetwork::from_json(&net.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, net);
    }

    #[test]
    fn ticks_survive_interpolation(ticks in prop::collection::vec(-1e6f64..1e6, 2..30)) {
        let hourly = interpolate_time(&ticks).unwrap();
        prop_assert_eq!(hourly.len(), 6 * (ticks.len() - 1) + 1);
        for (i, t) in ticks.iter().enumerate() {
            prop_assert_eq!(hourly[6 * i], *t);
        }
        // each hour lies between the ticks around it
        for (h, v) in hourly.iter().enumerate().take(hourly.len() - 1) {
            let (a, b) = (ticks[h / 6], ticks[h / 6 + 1]);
            let slack = 1e-12 * a.abs().max(b.abs());
            prop_assert!(*v >= a.min(b) - slack && *v <= a.max(b) + slack);
        }
    }

    #[test]
    fn complete_grid_is_unchanged(values in prop::collection::vec(-100.0f64..100.0, 12), k in 1usize..5) {
        let grid = Grid::new(3, 4, values.iter().copied().map(Some).collect()).unwrap();
        let filled = knn_impute(&grid, k).unwrap();
        prop_assert_eq!(filled.as_slice(), &values[..]);
    }

    #[test]
    fn pruning_keeps_a_valid_prefix(losses in prop::collection::vec(0.0f64..10.0, 1..8), delta in -1.0f64..2.0) {
        let j = prune(&losses, delta);
        prop_assert!(j < losses.len());
        prop_assert_eq!(prune(&losses, f64::INFINITY), 0);
        // every dropped step gained at most delta over its predecessor
        for i in j + 1..losses.len() {
            prop_assert!(losses[i - 1] - losses[i] <= delta);
        }
        if j > 0 {
            prop_assert!(losses[j - 1] - losses[j] > delta);
        }
    }
}
