use proptest::prelude::*;

use kgcrf::*;

fn prob_from(h: usize, w: usize, k: usize, raw: &[f64]) -> ProbMap64 {
    ProbMap::from_weights(Grid2D::new(h, w, k, raw[..h * w * k].to_vec()).unwrap()).unwrap()
}

fn features_from(h: usize, w: usize, raw: &[f64]) -> FeatureMap64 {
    FeatureMap::new(Grid2D::new(h, w, 2, raw[..h * w * 2].to_vec()).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn refined_marginals_are_normalized(
        h in 1usize..7, w in 1usize..7, k in 2usize..5,
        raw in prop::collection::vec(0.01f64..1.0, 6 * 6 * 4),
        feat in prop::collection::vec(-2.0f64..2.0, 6 * 6 * 2),
        lambda_f in 0.0f64..3.0, radius in 0usize..3,
        sequential in any::<bool>(),
    ) {
        let p = prob_from(h, w, k, &raw);
        let f = features_from(h, w, &feat);
        let cfg = EngineConfig {
            lambda_f,
            kernel_radius: radius,
            update_schedule: if sequential { UpdateSchedule::Sequential } else { UpdateSchedule::Parallel },
            ..EngineConfig::default()
        };
        let r = mean_field_refine(&p, &f, &CompatibilityMatrix::potts(k), &KnowledgeGraph::empty(),
            &AffineTransform64::identity(), &cfg).unwrap();
        for px in 0..p.pixels() {
            let q = r.q.pixel(px);
            prop_assert!(q.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn refinement_commutes_with_label_permutation(
        seed in 0u64..6, shift in 1usize..4, noise in 0.2f64..1.2,
    ) {
        let scene = generate_scene(Template::FiveOrganAbdomen, 32, 32, seed).unwrap();
        let p = corrupt(&scene, &CorruptionSpec::new(CorruptionKind::LogitNoise, noise, seed).unwrap()).unwrap();
        let k = p.num_labels();
        // rotate the foreground labels, background stays 0
        let perm: Vec<usize> = (0..k).map(|l| if l == 0 { 0 } else { (l - 1 + shift) % (k - 1) + 1 }).collect();
        let cfg = EngineConfig::default();
        let mu = CompatibilityMatrix::potts(k);
        let a = mean_field_refine(&p, &scene.features, &mu, &scene.graph, &scene.to_atlas, &cfg).unwrap();
        let b = mean_field_refine(&p.permute_labels(&perm), &scene.features, &mu.permuted(&perm),
            &scene.graph.relabeled(&perm).unwrap(), &scene.to_atlas, &cfg).unwrap();
        let gap = a.q.permute_labels(&perm).grid().max_abs_diff(b.q.grid()).unwrap();
        prop_assert!(gap < 1e-10, "gap {gap}");
        for o1 in 0..k {
            for o2 in 0..k {
                prop_assert!((a.scores.get(o1, o2) - b.scores.get(perm[o1], perm[o2])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn uncertainty_grows_with_lambda_a(
        k in 2usize..5, raw in prop::collection::vec(0.01f64..1.0, 5 * 5 * 4),
        seed in any::<u64>(), realized in 0.0f64..1.0,
        l0 in 0.0f64..2.0, dl in 0.0f64..2.0,
    ) {
        let p = prob_from(5, 5, k, &raw);
        let cfg = EngineConfig::default();
        let ens = synthesize_ensemble(&p, &cfg, seed).unwrap();
        let mut t = LabelMatrix::zeros(k);
        t.set(1, 0, 1.0);
        let target = graph::ConstraintMatrix::new(t).unwrap();
        let mut r = LabelMatrix::zeros(k);
        r.set(1, 0, realized);
        let lo = uncertainty_map(&ens, &target, &r, &EngineConfig { lambda_a: l0, ..cfg.clone() }).unwrap();
        let hi = uncertainty_map(&ens, &target, &r, &EngineConfig { lambda_a: l0 + dl, ..cfg.clone() }).unwrap();
        for (a, b) in lo.grid().data().iter().zip(hi.grid().data()) {
            prop_assert!(a <= b);
        }
        let ln_k = (k as f64).ln();
        prop_assert!(lo.entropy_part().data().iter().all(|&v| (0.0..=ln_k).contains(&v)));
    }

    #[test]
    fn fusion_weights_ignore_constant_shift(
        l in 2usize..5, raw in prop::collection::vec(0.0f64..4.0, 4 * 4 * 4),
        shift in -100.0f64..100.0, beta in 0.01f64..50.0,
    ) {
        let us: Vec<Grid64> = (0..l).map(|i| Grid2D::new(4, 4, 1, raw[i * 16..(i + 1) * 16].to_vec()).unwrap()).collect();
        let shifted: Vec<Grid64> = us.iter().map(|u| u.map(|v| v + shift)).collect();
        let a = fusion_weights(&us, beta).unwrap();
        let b = fusion_weights(&shifted, beta).unwrap();
        for px in 0..16 {
            let total: f64 = a.iter().map(|g| g.data()[px]).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(x.max_abs_diff(y).unwrap() < 1e-12);
        }
    }

    #[test]
    fn npy_round_trip_is_bitwise(
        h in 1usize..9, w in 1usize..9, c in 1usize..4,
        raw in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 8 * 8 * 3),
    ) {
        let g = Grid2D::new(h, w, c, raw[..h * w * c].to_vec()).unwrap();
        let bytes = npy::encode_tensor(&g).unwrap();
        let back = npy::decode_tensor(&bytes).unwrap();
        prop_assert_eq!(back.shape(), g.shape());
        prop_assert!(back.data().iter().zip(g.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
