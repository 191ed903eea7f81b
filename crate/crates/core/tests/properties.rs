//! Randomized invariants of the aggregation rules, partitioning and the
//! network's output layer.

use fedguard_core::aggregation::{bulyan, coordinate_median, fedavg, fltrust, krum_select};
use fedguard_core::data::{partition_indices, synth_dataset, PartitionConfig, PartitionMode, SynthSpec};
use fedguard_core::nn::{softmax, ArchId};
use fedguard_core::{ModelArch, Network, ParamVector, Shape};
use proptest::prelude::*;

fn pv(v: &[f32]) -> ParamVector {
    ParamVector::new(v.to_vec(), ArchId(9))
}

/// `n` updates of dimension `dim` with pairwise distinct coordinates, so no
/// rule has to break a tie.
fn updates() -> impl Strategy<Value = (Vec<Vec<f32>>, Vec<usize>)> {
    (3usize..=7, 1usize..=5).prop_flat_map(|(n, dim)| {
        (
            prop::collection::vec(prop::collection::vec(-100.0f32..100.0, dim), n),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        )
    })
}

fn selection_updates() -> impl Strategy<Value = (Vec<Vec<f32>>, Vec<usize>)> {
    (7usize..=9, 1usize..=4).prop_flat_map(|(n, dim)| {
        (
            prop::collection::vec(prop::collection::vec(-100.0f32..100.0, dim), n),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        )
    })
}

fn distinct(rows: &[Vec<f32>]) -> bool {
    let dim = rows[0].len();
    (0..dim).all(|k| {
        let mut col: Vec<f32> = rows.iter().map(|r| r[k]).collect();
        col.sort_by(f32::total_cmp);
        col.windows(2).all(|w| w[0] != w[1])
    })
}

fn permuted(rows: &[Vec<f32>], perm: &[usize]) -> Vec<ParamVector> {
    perm.iter().map(|&i| pv(&rows[i])).collect()
}

fn bounds(rows: &[Vec<f32>], k: usize) -> (f32, f32) {
    rows.iter()
        .map(|r| r[k])
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mean_and_median_are_permutation_invariant((rows, perm) in updates()) {
        prop_assume!(distinct(&rows));
        let original: Vec<ParamVector> = rows.iter().map(|r| pv(r)).collect();
        let shuffled = permuted(&rows, &perm);
        prop_assert_eq!(fedavg(&original).unwrap(), fedavg(&shuffled).unwrap());
        prop_assert_eq!(coordinate_median(&original).unwrap(), coordinate_median(&shuffled).unwrap());
    }

    /// With at least two neighbours per Krum score there are no structural
    /// ties (the closest pair always ties when a single neighbour counts).
    #[test]
    fn selection_rules_are_permutation_invariant((rows, perm) in selection_updates()) {
        let n = rows.len();
        let f = 3;
        let original: Vec<ParamVector> = rows.iter().map(|r| pv(r)).collect();
        let shuffled = permuted(&rows, &perm);
        let a = bulyan(&original, f).unwrap();
        let b = bulyan(&shuffled, f).unwrap();
        prop_assert_eq!(&a.model, &b.model);
        let mut mapped: Vec<usize> = b.selected.iter().map(|&i| perm[i]).collect();
        mapped.sort_unstable();
        prop_assert_eq!(a.selected, mapped);

        let m = n - f - 3;
        let order = krum_select(&original, f, m).unwrap();
        let order_shuffled: Vec<usize> = krum_select(&shuffled, f, m).unwrap().iter().map(|&i| perm[i]).collect();
        prop_assert_eq!(order, order_shuffled);
    }

    #[test]
    fn robust_rules_stay_within_coordinate_range((rows, _) in updates(), f in 0usize..3) {
        let ups: Vec<ParamVector> = rows.iter().map(|r| pv(r)).collect();
        let med = coordinate_median(&ups).unwrap();
        let bul = bulyan(&ups, f.min(rows.len() / 2)).unwrap();
        for k in 0..rows[0].len() {
            let (lo, hi) = bounds(&rows, k);
            prop_assert!(lo <= med.values()[k] && med.values()[k] <= hi);
            prop_assert!(lo <= bul.model.values()[k] && bul.model.values()[k] <= hi);
        }
    }

    #[test]
    fn identical_updates_are_a_fixed_point(v in prop::collection::vec(-10.0f32..10.0, 1..6), n in 3usize..7) {
        let ups = vec![pv(&v); n];
        let expected = pv(&v);
        prop_assert_eq!(fedavg(&ups).unwrap(), expected.clone());
        prop_assert_eq!(coordinate_median(&ups).unwrap(), expected.clone());
        prop_assert_eq!(bulyan(&ups, 1.min(n - 3)).unwrap().model, expected);
    }

    #[test]
    fn fltrust_ignores_clients_opposing_the_server(
        d in prop::collection::vec(0.1f32..2.0, 1..6),
        scale in 0.5f32..3.0,
    ) {
        let global = pv(&vec![0.0; d.len()]);
        let server = pv(&d);
        let aligned = pv(&d.iter().map(|x| x * scale).collect::<Vec<_>>());
        let opposed = pv(&d.iter().map(|x| -x).collect::<Vec<_>>());
        let (agg, scores) = fltrust(&[aligned, opposed], &server, &global).unwrap();
        prop_assert_eq!(scores.trust[1], 0.0);
        prop_assert_eq!(agg.selected, vec![0]);
        for (m, s) in agg.model.values().iter().zip(&d) {
            prop_assert!((m - s).abs() <= 1e-4 * s.abs().max(1.0));
        }
    }

    #[test]
    fn partitions_cover_every_sample_once(
        per_class in 1usize..20,
        clients in 1usize..8,
        alpha in 0.01f64..10.0,
        iid in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let classes = 4;
        prop_assume!(per_class * classes >= clients);
        let labels: Vec<usize> = (0..per_class * classes).map(|i| i % classes).collect();
        let cfg = PartitionConfig {
            mode: if iid { PartitionMode::Iid } else { PartitionMode::Dirichlet },
            alpha,
            clients,
            seed,
        };
        let parts = partition_indices(&labels, classes, &cfg).unwrap();
        prop_assert_eq!(parts.len(), clients);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
    }

    #[test]
    fn softmax_rows_are_distributions(logits in prop::collection::vec(-80.0f32..80.0, 1..12)) {
        let mut out = vec![0.0f32; logits.len()];
        softmax(&logits, &mut out);
        let sum: f32 = out.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-5);
        prop_assert!(out.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn forward_returns_one_distribution_per_sample(seed in any::<u64>()) {
        let shape = Shape::new(1, 4, 4);
        let net = Network::new(ModelArch::mlp(shape, &[6], 3).unwrap());
        let ds = synth_dataset(&SynthSpec::new(3, 2, shape), seed).unwrap();
        let conf = net.forward(&net.init(seed), &ds.as_batch()).unwrap();
        prop_assert_eq!(conf.rows(), ds.len());
        for i in 0..conf.rows() {
            let s: f32 = conf.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn parameter_vectors_round_trip_through_bits(v in prop::collection::vec(any::<f32>(), 0..64)) {
        let p = pv(&v);
        let back: Vec<f32> = p.to_bits().into_iter().map(f32::from_bits).collect();
        prop_assert_eq!(pv(&back).to_bits(), p.to_bits());
    }
}
