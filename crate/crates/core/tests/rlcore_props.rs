mod common;

use ctm_core::rlcore::{
    advantages, build_loss_mask, clip_term, compute_advantages, dapo_objective, dynamic_filter, retained, DapoConfig,
    GroupView, RolloutGroup,
};
use ctm_core::tagproto::TagSet;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn group(rewards: Vec<f64>) -> RolloutGroup {
    RolloutGroup { question_id: "q".into(), trajectories: Vec::new(), lengths: vec![1; rewards.len()], rewards }
}

#[test]
fn filter_lemma_exhaustive() {
    let mut checked = 0;
    for g in 2..=8usize {
        for bits in 0u32..(1 << g) {
            let rewards: Vec<f64> = (0..g).map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let kept = dynamic_filter(vec![group(rewards.clone())]);
            let c = bits.count_ones() as usize;
            assert_eq!(kept.len() == 1, 0 < c && c < g, "{rewards:?}");
            assert_eq!(retained(&rewards), kept.len() == 1);
            for k in &kept {
                let s = compute_advantages(k).expect("retained groups have spread");
                assert!(s.std > 0.0);
                let n = s.advantages.len() as f64;
                let mean = s.advantages.iter().sum::<f64>() / n;
                let var = s.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
                assert!(mean.abs() < 1e-12 && (var.sqrt() - 1.0).abs() < 1e-12);
            }
            checked += 1;
        }
    }
    assert_eq!(checked, (2..=8).map(|g| 1 << g).sum::<usize>());
}

fn mixed_group() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (2..10usize)
        .prop_flat_map(|g| (proptest::collection::vec(any::<bool>(), g), proptest::collection::vec(1..40usize, g)))
        .prop_filter("mixed", |(w, _)| w.iter().any(|b| *b) && !w.iter().all(|b| *b))
        .prop_map(|(w, l)| (w.into_iter().map(|b| if b { 1.0 } else { -1.0 }).collect(), l))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn identity_ratio_closed_form(groups in proptest::collection::vec(mixed_group(), 1..4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lp: Vec<Vec<Vec<f64>>> = groups
            .iter()
            .map(|(_, lens)| lens.iter().map(|&n| (0..n).map(|_| -rng.gen_range(0.0..5.0)).collect()).collect())
            .collect();
        let views: Vec<GroupView> = groups.iter().map(|(r, l)| GroupView { rewards: r, lengths: l }).collect();
        let j = dapo_objective(&views, &lp, &lp, &DapoConfig::default()).unwrap();
        let want = groups
            .iter()
            .map(|(r, l)| {
                let a = common::oracle_adv(r);
                let total: usize = l.iter().sum();
                l.iter().zip(&a).map(|(n, a)| *n as f64 * a).sum::<f64>() / total as f64
            })
            .sum::<f64>()
            / groups.len() as f64;
        prop_assert!((j - want).abs() < 1e-12, "{} vs {}", j, want);
    }

    #[test]
    fn clipping_is_the_min_expression(r in 0.0f64..4.0, dr in 0.0f64..1.0, a in -3.0f64..3.0) {
        let c = DapoConfig::default();
        let term = clip_term(r, a, &c);
        let exact = (r * a).min(r.clamp(1.0 - c.eps_low, 1.0 + c.eps_high) * a);
        prop_assert_eq!(term, exact);
        if a > 0.0 {
            prop_assert!(clip_term(r + dr, a, &c) >= term);
            prop_assert!(term <= (1.0 + c.eps_high) * a);
        }
        if a < 0.0 {
            // the min keeps the more negative branch, so the clip only caps
            // the term from above
            prop_assert!(term <= (1.0 - c.eps_low) * a);
        }
    }

    #[test]
    fn mask_tiles_the_text(t in common::transcript()) {
        let tags = TagSet::default();
        let text = t.serialize(&tags).unwrap();
        let m = build_loss_mask(&t, &tags).unwrap();
        let mut at = 0;
        for s in &m.spans {
            prop_assert_eq!(s.start, at);
            prop_assert!(s.end > s.start);
            at = s.end;
        }
        prop_assert_eq!(at, text.len());
        let joined: String = m.spans.iter().map(|s| &text[s.start..s.end]).collect();
        prop_assert_eq!(&joined, &text);
        // every output block is fully non-trainable
        let mut from = 0;
        while let Some(i) = text[from..].find("<output>") {
            let start = from + i;
            let end = start + text[start..].find("</output>").unwrap() + "</output>".len();
            for off in start..end {
                prop_assert_eq!(m.is_trainable_at(off), Some(false));
            }
            from = end;
        }
    }
}

#[test]
fn advantages_of_mixed_rewards_are_standardized() {
    let a = advantages(&[1.0, -1.0, -1.0]).unwrap();
    let want = common::oracle_adv(&[1.0, -1.0, -1.0]);
    for (x, y) in a.advantages.iter().zip(want) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn gradient_matches_central_differences() {
    let (worst, compared) = common::fd_gradient_check(7);
    assert!(compared > 50);
    assert!(worst < 1e-5, "worst relative error {worst}");
}
