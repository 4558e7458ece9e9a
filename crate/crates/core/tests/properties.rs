use proptest::prelude::*;

use protosarc::explain::{explain, project_prototypes, ProjectedModel, ProjectionOptions};
use protosarc::kmeans::{kmeans, KMeansConfig};
use protosarc::linalg::sq_dist;
use protosarc::losses::{div_loss, evaluate_loss, LossWeights, SepSign};
use protosarc::network::rbf_similarity;
use protosarc::store::{load_dataset, split_folds, write_dataset, Dataset, EmbeddingRecord, Manifest, VectorEncoding};
use protosarc::synth::{planted_semantic_task, random_instance, PlantedConfig};
use protosarc::train::{fit, gradients, init_params, train, TrainConfig};

fn vec_in(d: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, d)
}

fn record_strategy(d_s: usize, d_m: usize) -> impl Strategy<Value = EmbeddingRecord> {
    (
        0..2u8,
        0..2u8,
        vec_in(d_s, -1e3, 1e3),
        vec_in(d_m, -1e3, 1e3),
        vec_in(d_m, -1e3, 1e3),
        prop::option::of(vec_in(d_m, -1e3, 1e3)),
        "[a-z ]{0,12}",
        prop::option::of("[a-z]{1,6}"),
    )
        .prop_map(|(y, z_ep, e_ct, ep, ip, full, text, ancestor)| EmbeddingRecord {
            id: String::new(),
            text,
            ancestor,
            y,
            e_ct,
            e_st_ep: ep,
            e_st_ip: ip,
            e_st_full: full,
            z_ep,
            z_ip: if y == 0 { z_ep } else { 1 - z_ep },
            z_full: z_ep,
        })
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (1..5usize, 1..5usize)
        .prop_flat_map(|(d_s, d_m)| (Just((d_s, d_m)), prop::collection::vec(record_strategy(d_s, d_m), 1..20)))
        .prop_map(|((d_s, d_m), mut records)| {
            for (i, r) in records.iter_mut().enumerate() {
                r.id = format!("r{i}");
            }
            Dataset::new(Manifest::new(d_s, d_m, "prop", "all"), records).unwrap()
        })
}

fn weights_strategy() -> impl Strategy<Value = LossWeights> {
    (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..0.1f64, -1.0..1.0f64, any::<bool>()).prop_map(
        |(div, cls_sep, inco, l1, cos_threshold, plus)| LossWeights {
            div,
            cls_sep,
            inco,
            l1,
            cos_threshold,
            sep_sign: if plus { SepSign::Plus } else { SepSign::Minus },
        },
    )
}

fn small_planted(n: usize, seed: u64) -> Dataset {
    planted_semantic_task(
        &PlantedConfig {
            n,
            d_s: 3,
            d_m: 2,
            ..PlantedConfig::default()
        },
        seed,
    )
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        max_epochs: 6,
        k_per_class: 2,
        k_per_polarity: 2,
        hidden: 4,
        lr: 1e-2,
        batch_size: 8,
        ..TrainConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_bounded_symmetric_monotone(
        (e, p) in (1..8usize).prop_flat_map(|d| (vec_in(d, -3.0, 3.0), vec_in(d, -3.0, 3.0))),
        sigma in 0.5..5.0f64,
        eps in 1e-8..1e-1f64,
        t in 1.01..3.0f64,
    ) {
        let s = rbf_similarity(&e, &p, sigma, eps).unwrap();
        prop_assert!(s > 0.0 && s <= (-eps / (sigma * sigma)).exp());
        prop_assert_eq!(s, rbf_similarity(&p, &e, sigma, eps).unwrap());
        let far: Vec<f64> = p.iter().zip(&e).map(|(pk, ek)| pk + t * (ek - pk)).collect();
        if sq_dist(&far, &p) > sq_dist(&e, &p) {
            prop_assert!(rbf_similarity(&far, &p, sigma, eps).unwrap() < s);
        }
    }

    #[test]
    fn division_loss_ignores_positive_rescaling(
        bank in (2..5usize).prop_flat_map(|d| prop::collection::vec(vec_in(d, 0.1, 3.0), 2..6)),
        scales in prop::collection::vec(0.1..10.0f64, 6),
        thr in -1.0..1.0f64,
    ) {
        let scaled: Vec<Vec<f64>> = bank.iter().zip(&scales).map(|(v, s)| v.iter().map(|x| x * s).collect()).collect();
        let a = div_loss(&bank, thr).unwrap();
        let b = div_loss(&scaled, thr).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn loss_terms_are_nonnegative(seed in 0..10_000u64, n in 1..8usize, w in weights_strategy()) {
        let (params, records) = random_instance(seed, n, 4, 4, 3, 3, 5);
        let batch: Vec<&EmbeddingRecord> = records.iter().collect();
        let l = evaluate_loss(&params, &batch, &w).unwrap();
        for term in [l.acc, l.div, l.cls_ct, l.sep_ct, l.cls_st, l.sep_st, l.inco, l.l1] {
            prop_assert!(term >= 0.0);
        }
        if w.sep_sign == SepSign::Plus {
            prop_assert!(l.total >= 0.0);
        }
    }

    #[test]
    fn folds_partition_the_dataset(ds in dataset_strategy(), k in 2..6usize, seed in any::<u64>()) {
        prop_assume!(k <= ds.len());
        let plan = split_folds(&ds, k, seed).unwrap();
        let mut seen = vec![0; ds.len()];
        for f in 0..k {
            for i in plan.test_indices(f) {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes = plan.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        if plan.stratified {
            for c in 0..2u8 {
                let per: Vec<usize> = (0..k)
                    .map(|f| plan.test_indices(f).iter().filter(|&&i| ds.records[i].y == c).count())
                    .collect();
                prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
        }
        prop_assert_eq!(plan, split_folds(&ds, k, seed).unwrap());
    }

    #[test]
    fn dataset_round_trips(mut ds in dataset_strategy(), hex in any::<bool>()) {
        if hex {
            ds.manifest.encoding = VectorEncoding::Hex;
        }
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        write_dataset(&ds, &a).unwrap();
        let back = load_dataset(&a).unwrap();
        prop_assert_eq!(&back.records, &ds.records);
        for r in &back.records {
            prop_assert_eq!(r.z_ip, if r.y == 0 { r.z_ep } else { 1 - r.z_ep });
        }
        write_dataset(&back, &b).unwrap();
        prop_assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn kmeans_centers_stay_in_bounding_box(
        pts in (1..4usize).prop_flat_map(|d| prop::collection::vec(vec_in(d, -10.0, 10.0), 3..30)),
        k in 1..4usize,
        seed in any::<u64>(),
    ) {
        prop_assume!(k <= pts.len());
        let r = kmeans(&pts, k, seed, KMeansConfig::default()).unwrap();
        prop_assert!(r.inertia_history.windows(2).all(|w| w[1] <= w[0]));
        for c in &r.centers {
            for (dim, x) in c.iter().enumerate() {
                let lo = pts.iter().map(|p| p[dim]).fold(f64::INFINITY, f64::min);
                let hi = pts.iter().map(|p| p[dim]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*x >= lo - 1e-9 && *x <= hi + 1e-9);
            }
        }
        prop_assert_eq!(r.centers, kmeans(&pts, k, seed, KMeansConfig::default()).unwrap().centers);
    }

    #[test]
    fn accumulated_halves_match_the_full_batch(seed in 0..10_000u64, half in 1..5usize, w in weights_strategy()) {
        let (params, records) = random_instance(seed, 2 * half, 4, 4, 3, 3, 5);
        let all: Vec<&EmbeddingRecord> = records.iter().collect();
        let full = gradients(&all, &params, &w).unwrap().to_flat();
        let a = gradients(&all[..half], &params, &w).unwrap().to_flat();
        let b = gradients(&all[half..], &params, &w).unwrap().to_flat();
        for ((f, x), y) in full.iter().zip(&a).zip(&b) {
            let avg = 0.5 * (x + y);
            prop_assert!((f - avg).abs() <= 1e-10 * (1.0 + f.abs()), "{} vs {}", f, avg);
        }
    }

    #[test]
    fn projection_is_optimal_and_explanations_sorted(seed in 0..1000u64, n in 12..60usize, restricted in any::<bool>()) {
        let ds = small_planted(n, seed);
        let model = ProjectedModel::new(init_params(&ds, &small_config(seed)).unwrap());
        let opts = ProjectionOptions { restricted, seed, ..ProjectionOptions::default() };
        let projected = project_prototypes(&model, &ds, &opts).unwrap();
        let meta = &projected.projection.as_ref().unwrap().semantic;
        for (j, p) in model.params.bank.semantic.vectors.iter().enumerate() {
            let tag = model.params.bank.semantic.tags[j];
            let chosen = sq_dist(p, &projected.params.bank.semantic.vectors[j]);
            prop_assert!((chosen.sqrt() - meta[j].distance).abs() <= 1e-12);
            for r in &ds.records {
                if !restricted || r.y == tag {
                    prop_assert!(sq_dist(p, &r.e_ct) >= chosen);
                }
            }
        }
        let e = explain(&projected, &ds.records[0], usize::MAX).unwrap();
        prop_assert!(e.nearest.windows(2).all(|w| w[0].distance <= w[1].distance && w[0].similarity >= w[1].similarity));
        let again = project_prototypes(&projected, &ds, &opts).unwrap();
        prop_assert_eq!(again.params, projected.params);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn training_is_deterministic(seed in 0..1000u64) {
        let ds = small_planted(60, seed);
        let (tr, va) = (ds.subset(&(0..48).collect::<Vec<_>>(), "t"), ds.subset(&(48..60).collect::<Vec<_>>(), "v"));
        let cfg = small_config(seed);
        let (p1, h1) = train(&tr, &va, &cfg).unwrap();
        let (p2, h2) = train(&tr, &va, &cfg).unwrap();
        prop_assert_eq!(p1, p2);
        prop_assert_eq!(h1.epochs, h2.epochs);
        prop_assert_eq!(h1.best_epoch, h2.best_epoch);
    }

    #[test]
    fn early_stopping_returns_best_epoch(seed in 0..1000u64, patience in 1..3usize) {
        let ds = small_planted(60, seed);
        let (tr, va) = (ds.subset(&(0..48).collect::<Vec<_>>(), "t"), ds.subset(&(48..60).collect::<Vec<_>>(), "v"));
        let cfg = TrainConfig { patience, max_epochs: 12, lr: 0.5, ..small_config(seed) };
        let init = init_params(&tr, &cfg).unwrap();
        let (best, hist) = fit(init.clone(), &tr, &va, &cfg).unwrap();
        let min_val = hist.epochs.iter().map(|e| e.val.total).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(hist.best_val_loss, min_val);
        prop_assert_eq!(hist.epochs[hist.best_epoch - 1].val.total, min_val);
        if hist.stopped_early {
            prop_assert_eq!(hist.stopped_epoch, hist.best_epoch + patience);
        }
        let replay = TrainConfig { max_epochs: hist.best_epoch, patience: 100, ..cfg };
        let (again, _) = fit(init, &tr, &va, &replay).unwrap();
        prop_assert_eq!(best, again);
    }
}
