use apnc::cluster::{argmin, cluster_run, LloydPolicy};
use apnc::coeffs::{fit_nystrom, fit_stable, Discrepancy, NystromParams, StableParams};
use apnc::dataset::{block_ranges, Features, Instance, PartitionOptions, PartitionedDataset};
use apnc::embed::{embed_all, EmbeddingMatrix};
use apnc::eval::nmi;
use apnc::kernels::KernelSpec;
use apnc::mr::Engine;
use apnc::persist::{decode_embedding, decode_model, encode_embedding, encode_model};
use proptest::prelude::*;

fn rows(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), n)
}

fn kernels() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        (0.3f64..3.0).prop_map(|s| KernelSpec::rbf(s).unwrap()),
        (1u32..4, 0.0f64..2.0).prop_map(|(d, c)| KernelSpec::polynomial(d, c).unwrap()),
        (0.01f64..0.5, -0.5f64..0.5).prop_map(|(a, b)| KernelSpec::neural(a, b).unwrap()),
        Just(KernelSpec::Linear),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernels_are_symmetric(k in kernels(), x in prop::collection::vec(-3.0f64..3.0, 4), y in prop::collection::vec(-3.0f64..3.0, 4)) {
        let (a, b) = (Features::Dense(x), Features::Dense(y));
        prop_assert_eq!(k.eval(&a, &b).unwrap(), k.eval(&b, &a).unwrap());
        if let KernelSpec::Rbf { .. } = k {
            let v = k.eval(&a, &b).unwrap();
            prop_assert!(v > 0.0 && v <= 1.0);
            prop_assert_eq!(k.eval(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn sparse_and_dense_agree(x in prop::collection::vec(prop_oneof![Just(0.0), -2.0f64..2.0], 6), y in prop::collection::vec(-2.0f64..2.0, 6)) {
        let (idx, vals): (Vec<u32>, Vec<f64>) = x.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i as u32, *v)).unzip();
        let sparse = Features::sparse(6, idx, vals).unwrap();
        let dense = Features::Dense(x.clone());
        let other = Features::Dense(y);
        prop_assert!((sparse.dot(&other).unwrap() - dense.dot(&other).unwrap()).abs() < 1e-12);
        prop_assert!((sparse.squared_distance(&other).unwrap() - dense.squared_distance(&other).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn nmi_is_permutation_invariant_and_bounded(
        pairs in prop::collection::vec((0u32..4, 0u32..3), 2..60),
        perm in Just([2u32, 0, 3, 1]),
    ) {
        let (pred, truth): (Vec<u32>, Vec<u32>) = pairs.into_iter().unzip();
        let v = nmi(&pred, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        let relabelled: Vec<u32> = pred.iter().map(|&p| perm[p as usize]).collect();
        prop_assert_eq!(nmi(&relabelled, &truth).unwrap(), v);
        prop_assert_eq!(nmi(&truth, &pred).unwrap(), v);
        prop_assert_eq!(nmi(&truth, &truth).unwrap(), if truth.iter().all(|&t| t == truth[0]) { 0.0 } else { 1.0 });
    }

    #[test]
    fn argmin_ignores_positive_scaling(costs in prop::collection::vec(0.0f64..10.0, 1..12), scale in 0.01f64..100.0) {
        let (a, _) = argmin(costs.iter().copied());
        let (b, _) = argmin(costs.iter().map(|c| c * scale));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn block_ranges_tile(n in 0usize..500, p in 1usize..17) {
        let r = block_ranges(n, p);
        prop_assert_eq!(r.len(), p);
        prop_assert_eq!(r[0].start, 0);
        prop_assert_eq!(r[p - 1].end, n);
        for w in r.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
        }
        let width = n.div_ceil(p);
        prop_assert!(r.iter().all(|b| b.len() <= width));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn l2_objective_never_increases(data in rows(60, 3), k in 2usize..6, seed in any::<u64>()) {
        let y = EmbeddingMatrix::from_columns(data, 4).unwrap();
        let run = cluster_run(&Engine::new(2).unwrap(), &y, Discrepancy::L2, &LloydPolicy::new(k, seed)).unwrap();
        for w in run.log.windows(2) {
            prop_assert!(w[1].objective <= w[0].objective + 1e-9);
        }
    }

    #[test]
    fn parallelism_is_transparent(data in rows(40, 3), seed in any::<u64>(), stable in any::<bool>()) {
        let ds = PartitionedDataset::from_rows(data, PartitionOptions::new(5)).unwrap();
        let kernel = KernelSpec::rbf(1.0).unwrap();
        let mut outputs = Vec::new();
        for p in [1, 3] {
            let engine = Engine::new(p).unwrap();
            let (model, rep) = if stable {
                fit_stable(&engine, &ds, &kernel, &StableParams::new(20, 8, seed)).unwrap()
            } else {
                fit_nystrom(&engine, &ds, &kernel, &NystromParams::new(20, 8, seed)).unwrap()
            };
            let (y, yrep) = embed_all(&engine, &ds, &model).unwrap();
            let run = cluster_run(&engine, &y, model.discrepancy, &LloydPolicy::new(3, seed)).unwrap();
            outputs.push((encode_model(&model).unwrap(), encode_embedding(&y).unwrap(), run.assignment, rep, yrep, run.report));
        }
        prop_assert!(outputs[0] == outputs[1]);
    }

    #[test]
    fn model_and_embedding_round_trip(data in rows(30, 2), seed in any::<u64>(), k in kernels()) {
        let ds = PartitionedDataset::from_rows(data, PartitionOptions::new(2)).unwrap();
        let engine = Engine::new(1).unwrap();
        // some grams are numerically rank zero; only successful fits round-trip
        if let Ok((model, _)) = fit_nystrom(&engine, &ds, &k, &NystromParams { m: None, ..NystromParams::new(12, 1, seed) }) {
            let bytes = encode_model(&model).unwrap();
            let back = decode_model(&bytes).unwrap();
            prop_assert_eq!(&back, &model);
            let (y, _) = embed_all(&engine, &ds, &back).unwrap();
            let ybytes = encode_embedding(&y).unwrap();
            prop_assert_eq!(decode_embedding(&ybytes, 2).unwrap(), y);
        }
    }

    #[test]
    fn truncated_model_is_rejected(data in rows(10, 2), cut in 1usize..64) {
        let ds = PartitionedDataset::from_rows(data, PartitionOptions::new(1)).unwrap();
        let (model, _) = fit_nystrom(&Engine::new(1).unwrap(), &ds, &KernelSpec::rbf(1.0).unwrap(), &NystromParams { m: None, ..NystromParams::new(10, 1, 0) }).unwrap();
        let bytes = encode_model(&model).unwrap();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(decode_model(&bytes[..bytes.len() - cut]).is_err());
    }
}

#[test]
fn instance_ids_follow_rows() {
    let ds = PartitionedDataset::from_rows(vec![vec![1.0], vec![2.0], vec![3.0]], PartitionOptions::new(2)).unwrap();
    let ids: Vec<u64> = ds.instances().iter().map(|x: &Instance| x.id).collect();
    assert_eq!(ids, vec![0, 1, 2]);
}
