use proptest::prelude::*;

use structpose::config::RunConfig;
use structpose::infer::{decode, distance_transform_1d, objective, pcp_strict, limbs_for_tree, DecodeMode, PairwiseParams, ScoreMapSet};
use structpose::structured::JointTree;
use structpose::synth::{generate, hflip, SkeletonSpec};

fn tree_from(parents: &[usize]) -> JointTree {
    let k = parents.len() + 1;
    let names = (0..k).map(|j| format!("j{j}")).collect();
    let parent = (0..k).map(|j| if j == 0 { None } else { Some(parents[j - 1] % j) }).collect();
    JointTree::new(names, parent).unwrap()
}

prop_compose! {
    fn instance()(k in 1usize..7, h in 1usize..10, w in 1usize..10)
        (parents in prop::collection::vec(0usize..100, k - 1),
         data in prop::collection::vec(-1.0f64..1.0, (k + 1) * h * w),
         offsets in prop::collection::vec((-4.0f64..4.0, -4.0f64..4.0), k),
         weights in (0.0f64..0.5, 0.0f64..0.5),
         h in Just(h), w in Just(w))
        -> (JointTree, ScoreMapSet, PairwiseParams)
    {
        let tree = tree_from(&parents);
        let scores = ScoreMapSet::new(h, w, tree.len(), 1, 4, data).unwrap();
        let params = PairwiseParams { offsets: offsets.into_iter().map(|(x, y)| [x, y]).collect(), weights: [weights.0, weights.1] };
        (tree, scores, params)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gdt_matches_tree_dp((tree, scores, params) in instance()) {
        let dp = decode(&scores, &params, &tree, DecodeMode::TreeDp).unwrap();
        let gdt = decode(&scores, &params, &tree, DecodeMode::Gdt).unwrap();
        prop_assert_eq!(&dp.cells, &gdt.cells);
        prop_assert!((dp.objective - gdt.objective).abs() < 1e-9);
    }

    #[test]
    fn tree_dp_beats_argmax((tree, scores, params) in instance()) {
        let unary: Vec<Vec<f64>> = (0..tree.len()).map(|j| scores.unary(j)).collect();
        let dp = decode(&scores, &params, &tree, DecodeMode::TreeDp).unwrap();
        let am = decode(&scores, &params, &tree, DecodeMode::Argmax).unwrap();
        let reported = objective(&unary, scores.width, &tree, &params, &dp.cells);
        prop_assert!((reported - dp.objective).abs() < 1e-9);
        prop_assert!(dp.objective >= objective(&unary, scores.width, &tree, &params, &am.cells) - 1e-12);
    }

    #[test]
    fn distance_transform_is_a_lower_envelope(
        f in prop::collection::vec(-5.0f64..5.0, 1..20),
        w in 0.0f64..2.0,
        mut q in prop::collection::vec(-3.0f64..25.0, 1..10),
    ) {
        q.sort_by(f64::total_cmp);
        let d = distance_transform_1d(&f, w, &q);
        for (qi, di) in q.iter().zip(&d) {
            let brute = f.iter().enumerate().map(|(p, v)| v + w * (qi - p as f64).powi(2)).fold(f64::INFINITY, f64::min);
            prop_assert!((di - brute).abs() < 1e-9, "q {} got {} want {}", qi, di, brute);
        }
    }

    #[test]
    fn hflip_is_an_involution(seed in 0u64..1000) {
        let tree = JointTree::desk14();
        let s = &generate(&SkeletonSpec::preset("desk14", 64).unwrap(), 1, seed).unwrap()[0];
        prop_assert_eq!(&hflip(&hflip(s, &tree), &tree), s);
    }

    #[test]
    fn pcp_ignores_integer_translation(
        seed in 0u64..1000, tx in -50i32..50, ty in -50i32..50, noise in 0.0f64..8.0,
    ) {
        let tree = JointTree::desk14();
        let s = generate(&SkeletonSpec::preset("desk14", 64).unwrap(), 4, seed).unwrap();
        // Quarter-pixel coordinates keep every sum exact.
        let q = |v: f64| (v * 4.0).round() / 4.0;
        let truth: Vec<Vec<[f64; 2]>> = s.iter().map(|p| p.joints.iter().map(|j| [q(j[0]), q(j[1])]).collect()).collect();
        let est: Vec<Vec<[f64; 2]>> = truth.iter().enumerate()
            .map(|(i, p)| p.iter().enumerate().map(|(j, c)| [q(c[0] + noise * ((i * 7 + j) % 5) as f64 / 4.0), c[1]]).collect())
            .collect();
        let moved = |v: &Vec<Vec<[f64; 2]>>| -> Vec<Vec<[f64; 2]>> {
            v.iter().map(|p| p.iter().map(|c| [c[0] + tx as f64, c[1] + ty as f64]).collect()).collect()
        };
        let limbs = limbs_for_tree(&tree);
        prop_assert_eq!(pcp_strict(&est, &truth, &limbs).unwrap(), pcp_strict(&moved(&est), &moved(&truth), &limbs).unwrap());
    }
}

#[test]
fn every_preset_round_trips_through_ini() {
    for name in ["default", "small", "tiny"] {
        let cfg = RunConfig::preset(name).unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_ini()).unwrap(), cfg, "{name}");
    }
}
