// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use attnbasin::harness::{
    bootstrap_ci, layerwise_replications, permutation_experiment, permutations, Group,
    GroupingRule, SlotAttentionSource,
};
use attnbasin::{SyntheticBasinParams, TheoryModel};
use common::depth_params;
use proptest::prelude::*;

fn noiseless(k: usize, base: f64, curvature: f64) -> SyntheticBasinParams {
    SyntheticBasinParams {
        base,
        curvature,
        noise_scale: 0.0,
        ..SyntheticBasinParams::new(k, 3)
    }
}

fn labels(k: usize, relevant: usize) -> Vec<bool> {
    (0..k).map(|i| i < relevant).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn groups_partition_all_orders(k in 2usize..6, rel in 0usize..6, rule in prop_oneof![Just(GroupingRule::Max), Just(GroupingRule::Sum)]) {
        let rel = rel.min(k);
        let params = noiseless(k, 0.1, 0.2);
        let r = permutation_experiment(
            SlotAttentionSource::Generator { params: &params, draws: 1 },
            &labels(k, rel),
            &TheoryModel::new(k, 3),
            rule,
        ).unwrap();
        let mut seen: Vec<Vec<usize>> = r.trials.iter().map(|t| t.permutation.clone()).collect();
        seen.sort();
        prop_assert_eq!(seen, permutations(k));
    }

    #[test]
    fn grouping_ignores_attention_scale(alpha in prop::collection::vec(0.0f64..1.0, 2..8), c in 1e-3f64..1e3, rel in 0usize..8) {
        let k = alpha.len();
        let labels = labels(k, rel.min(k));
        let scaled: Vec<f64> = alpha.iter().map(|a| a * c).collect();
        // strict comparisons can flip on exact ties under rounding; skip near ties
        let mut sorted = alpha.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[1] - w[0] > 1e-9));
        for rule in [GroupingRule::Max, GroupingRule::Sum] {
            let sums_close = {
                let r: f64 = alpha.iter().zip(&labels).filter(|(_, &l)| l).map(|(a, _)| a).sum();
                let n: f64 = alpha.iter().zip(&labels).filter(|(_, &l)| !l).map(|(a, _)| a).sum();
                (r - n).abs() < 1e-9
            };
            if rule == GroupingRule::Sum && sums_close {
                continue;
            }
            prop_assert_eq!(rule.assign(&alpha, &labels), rule.assign(&scaled, &labels));
        }
    }

    #[test]
    fn noiseless_basin_favors_relevant_top(k in 3usize..7, rel in 2usize..6, base in 0.02f64..0.2, curvature in 0.01f64..0.3, layers in 1usize..6) {
        // with the strict rule both groups are populated only when the two
        // edge slots can hold relevant documents and one noise document exists
        let rel = rel.min(k - 1);
        let params = noiseless(k, base, curvature);
        let r = permutation_experiment(
            SlotAttentionSource::Generator { params: &params, draws: 1 },
            &labels(k, rel),
            &TheoryModel::new(k, layers),
            GroupingRule::Max,
        ).unwrap();
        let (top, bottom) = (r.relevant_top_mean.unwrap(), r.noise_top_mean.unwrap());
        prop_assert!(top > bottom, "{top} vs {bottom}");
    }
}

#[test]
fn two_relevant_one_noise_groups_by_edges() {
    let params = noiseless(3, 0.1, 0.2);
    let r = permutation_experiment(
        SlotAttentionSource::Generator {
            params: &params,
            draws: 1,
        },
        &[true, true, false],
        &TheoryModel::new(3, 4),
        GroupingRule::Max,
    )
    .unwrap();
    assert_eq!(r.trials.len(), 6);
    for t in &r.trials {
        let noise_in_middle = t.permutation[1] == 2;
        assert_eq!(
            t.group == Group::RelevantTop,
            noise_in_middle,
            "{:?}",
            t.permutation
        );
    }
    assert!(r.relevant_top_mean.unwrap() > r.noise_top_mean.unwrap());
}

#[test]
fn depth_noise_degrades_deep_profiles() {
    let params = depth_params(3, None);
    let runs = layerwise_replications(
        &params,
        common::DEPTH_PROBE_SAMPLES,
        50,
        &TheoryModel::new(5, 6),
    )
    .unwrap();
    let monotone = runs
        .iter()
        .filter(|c| c.windows(2).all(|w| w[1] <= w[0]))
        .count();
    let strictly = runs.iter().filter(|c| c[0] > c[5]).count();
    assert!(monotone >= 45);
    assert!(strictly > 0);
}

#[test]
fn flat_depth_noise_gives_overlapping_intervals() {
    let params = depth_params(4, Some(10.0));
    let runs = layerwise_replications(
        &params,
        common::DEPTH_PROBE_SAMPLES,
        50,
        &TheoryModel::new(5, 6),
    )
    .unwrap();
    let cis: Vec<(f64, f64)> = (0..6)
        .map(|l| {
            let v: Vec<f64> = runs.iter().map(|c| c[l]).collect();
            bootstrap_ci(&v, 0.95, 2000, l as u64)
        })
        .collect();
    for a in &cis {
        for b in &cis {
            assert!(a.0 <= b.1 && b.0 <= a.1, "{cis:?}");
        }
    }
}
