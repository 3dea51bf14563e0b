//! Cross-module invariants as property tests on small random instances.

use piham_core::diff::{self, BlockId};
use piham_core::evaluation::make_folds;
use piham_core::generator::{generate_dataset, GeneratorConfig};
use piham_core::inference::{initial_state, OptimizerSettings};
use piham_core::model::{
    expected_attribute_value, expected_edge_value, log_likelihood, log_posterior, AttributeKind, HeterogeneousDataset,
    LatentState, Layer, LayerKind, ModelConfig, ObservationMask,
};
use proptest::prelude::*;

fn instance(seed: u64, n: usize, k: usize, scale: f64) -> (HeterogeneousDataset, LatentState, ModelConfig) {
    let (ds, _) = generate_dataset(&GeneratorConfig::new(n, k, seed)).unwrap();
    let config = ModelConfig::new(k);
    let settings = OptimizerSettings { init_variance: scale * scale, rng_seed: seed ^ 0x5eed, ..Default::default() };
    let state = initial_state(config.layout(&ds), &settings, 3).unwrap();
    (ds, state, config)
}

fn random_mask(ds: &HeterogeneousDataset, seed: u64) -> ObservationMask {
    let plan = make_folds(ds, 3, seed, false).unwrap();
    plan.train_mask((seed % 3) as usize)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn memberships_lie_on_the_simplex(seed in any::<u64>(), k in 1usize..5, scale in 0.1f64..20.0) {
        let (_, state, _) = instance(seed, 6, k, scale);
        for out_role in [true, false] {
            for row in state.memberships(out_role).chunks(k) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&p| p > 0.0));
            }
        }
    }

    #[test]
    fn expected_values_respect_their_domains(seed in any::<u64>(), k in 1usize..4, scale in 0.1f64..6.0) {
        let (ds, state, _) = instance(seed, 6, k, scale);
        for i in 0..6 {
            for j in 0..6 {
                let p = expected_edge_value(&ds, &state, 0, i, j).unwrap();
                prop_assert!(p > 0.0 && p < 1.0, "bernoulli lambda {}", p);
                prop_assert!(expected_edge_value(&ds, &state, 1, i, j).unwrap() > 0.0);
            }
            let pi = expected_attribute_value(&ds, &state, i, 0).unwrap();
            prop_assert_eq!(pi.len(), 4);
            prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(pi.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn likelihood_is_invariant_to_row_shifts(seed in any::<u64>(), node in 0usize..6, shift in -5.0f64..5.0, out_role: bool) {
        let (ds, state, config) = instance(seed, 6, 3, 1.0);
        let mask = random_mask(&ds, seed);
        let mut shifted = state.clone();
        let row = if out_role { shifted.u_row_mut(node) } else { shifted.v_row_mut(node) };
        for v in row {
            *v += shift;
        }
        let a = log_likelihood(&ds, &state, &mask, &config).unwrap();
        let b = log_likelihood(&ds, &shifted, &mask, &config).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn masked_out_entries_never_matter(seed in any::<u64>(), extra_seed in any::<u64>()) {
        let (ds, state, config) = instance(seed, 6, 2, 1.0);
        let mut mask = ObservationMask::full(&ds);
        for (l, i, j) in [(0, 1, 2), (0, 3, 0), (1, 2, 5), (2, 4, 1)] {
            mask.set_edge(l, i, j, false);
        }
        mask.set_attribute(0, 3, false);
        mask.set_attribute(2, 0, false);

        let mut altered = HeterogeneousDataset::new(6, true);
        for (l, layer) in ds.layers().iter().enumerate() {
            let mut dense = layer.to_dense();
            let fill = match layer.kind() {
                LayerKind::Bernoulli => 1.0 - dense[1 * 6 + 2],
                LayerKind::Poisson => (extra_seed % 7) as f64,
                LayerKind::Gaussian { .. } => (extra_seed % 1000) as f64 * 0.37,
            };
            for &(ml, i, j) in &[(0, 1, 2), (0, 3, 0), (1, 2, 5), (2, 4, 1)] {
                if ml == l {
                    dense[i * 6 + j] = fill;
                }
            }
            altered.push_layer(Layer::from_dense(layer.kind(), 6, &dense).unwrap()).unwrap();
        }
        for (x, attr) in ds.attributes().iter().enumerate() {
            let mut values = attr.values().to_vec();
            match (x, attr.kind()) {
                (0, AttributeKind::Categorical { categories }) => values[3] = ((values[3] as usize + 1) % categories) as f64,
                (2, _) => values[0] += 123.0,
                _ => {}
            }
            altered.push_attribute(piham_core::model::Attribute::new(attr.kind(), values).unwrap()).unwrap();
        }

        let a = log_posterior(&ds, &state, &mask, &config).unwrap();
        let b = log_posterior(&altered, &state, &mask, &config).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        let ga = diff::grad_log_posterior(&ds, &state, &mask, &config).unwrap();
        let gb = diff::grad_log_posterior(&altered, &state, &mask, &config).unwrap();
        prop_assert!(ga.values().iter().zip(gb.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn posterior_gradient_is_likelihood_plus_prior(seed in any::<u64>(), scale in 0.1f64..4.0) {
        let (ds, state, config) = instance(seed, 6, 3, scale);
        let mask = random_mask(&ds, seed);
        let post = diff::grad_log_posterior(&ds, &state, &mask, &config).unwrap();
        let lik = diff::grad_log_likelihood(&ds, &state, &mask, &config).unwrap();
        let prior = diff::grad_log_prior(&state, &config);
        for ((p, l), q) in post.values().iter().zip(lik.values()).zip(prior.values()) {
            prop_assert!((p - (l + q)).abs() < 1e-12 * p.abs().max(1.0));
        }
    }

    #[test]
    fn hessian_blocks_are_symmetric(seed in any::<u64>(), scale in 0.1f64..4.0) {
        let (ds, state, config) = instance(seed, 5, 3, scale);
        let mask = random_mask(&ds, seed);
        let ids = BlockId::all(state.layout());
        let h = diff::block_hessian(&ds, &state, &mask, &config, &ids).unwrap();
        for b in &h.blocks {
            let m = &b.matrix;
            let asym = (m - m.transpose()).abs().max();
            let norm = m.abs().max().max(1.0);
            prop_assert!(asym / norm < 1e-8, "block {} asymmetry {}", b.id, asym);
        }
    }

    #[test]
    fn folds_partition_every_scored_entry(seed in any::<u64>(), n_folds in 2usize..6) {
        let (ds, _, _) = instance(seed, 7, 2, 1.0);
        let plan = make_folds(&ds, n_folds, seed, false).unwrap();
        for l in 0..ds.layers().len() {
            for i in 0..7 {
                for j in 0..7 {
                    let held_in = (0..n_folds).filter(|&f| plan.train_mask(f).edge(l, i, j)).count();
                    let held_out = (0..n_folds).filter(|&f| plan.test_mask(f).edge(l, i, j)).count();
                    if i == j {
                        prop_assert_eq!((held_in, held_out), (0, 0));
                    } else {
                        prop_assert_eq!(held_out, 1);
                        prop_assert_eq!(held_in, n_folds - 1);
                    }
                }
            }
        }
        for x in 0..ds.attributes().len() {
            for i in 0..7 {
                prop_assert_eq!((0..n_folds).filter(|&f| plan.test_mask(f).attribute(x, i)).count(), 1);
            }
        }
    }
}
