//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its measured numbers (visible under `--nocapture`).

use std::sync::OnceLock;
use std::time::Instant;

use crossreid::evalrank::{ablate_combinations, ablation_combinations, evaluate, EvalProtocol};
use crossreid::gan::{
    loss_adv_discriminator, loss_cycle, loss_identity, train_gan, GanLossWeights, GanModel,
    GanTrainConfig,
};
use crossreid::gradsuite::run_gradient_suite;
use crossreid::metric_loss::{
    batch_center_loss, batch_hard_triplet_loss, pairwise_distance_matrix,
    per_anchor_hard_selection, MarginMode, TripletConfig,
};
use crossreid::multiorder::{
    collect_tri_order_sets, cross_distance, enumerate_valid_ids, fuse, Combination,
    CrossDistanceId, TriOrderSet, EXCLUDED_IDS,
};
use crossreid::numerics::mlp::{forward_vec, Activation, LayerParams, MlpParams};
use crossreid::numerics::rng::Rng;
use crossreid::numerics::tensor::euclidean;
use crossreid::synthcam::{Order, SampleRecord, Side};
use crossreid::trainer::{run_pipeline, train_reid, LrSchedule, PipelineConfig, ReidTrainConfig};

fn identity_net(dim: usize) -> MlpParams {
    let mut weights = vec![0.0; dim * dim];
    for i in 0..dim {
        weights[i * dim + i] = 1.0;
    }
    MlpParams::new(vec![LayerParams::new(
        dim,
        dim,
        Activation::None,
        weights,
        vec![0.0; dim],
    )
    .unwrap()])
    .unwrap()
}

fn constant_discriminator(dim: usize, value: f64) -> MlpParams {
    MlpParams::new(vec![LayerParams::new(
        dim,
        1,
        Activation::None,
        vec![0.0; dim],
        vec![value],
    )
    .unwrap()])
    .unwrap()
}

// ---------------------------------------------------------------------------
// 1. Gradient suite
// ---------------------------------------------------------------------------

#[test]
fn acceptance_1_gradient_suite() {
    let start = Instant::now();
    let reports = run_gradient_suite(20260101, 20, 1e-5).unwrap();
    assert_eq!(reports.len(), 8);
    for r in &reports {
        assert_eq!(r.points, 20, "{} checked fewer than 20 points", r.name);
        assert!(
            r.max_rel_err < 1e-4,
            "{}: max relative error {} >= 1e-4",
            r.name,
            r.max_rel_err
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "gradient suite took {elapsed:?}");
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0f64, f64::max);
    println!(
        "acceptance 1 (gradient suite): PASS - 8 losses x 20 points, worst relative error {worst:.3e}, {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// 2. mAP / CMC oracle equivalence
// ---------------------------------------------------------------------------

/// Brute-force re-implementation, independent of the evalrank and
/// multiorder code paths: own pair table, own distances, own sort, own
/// AP and CMC from their definitions.
mod brute {
    pub struct Set {
        pub source: u64,
        pub identity: u64,
        pub e: [Vec<f64>; 3],
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            let d = a[i] - b[i];
            s += d * d;
        }
        s.sqrt()
    }

    fn pair(id: u8) -> (usize, usize) {
        match id {
            1 => (0, 0),
            2 => (0, 1),
            3 => (1, 0),
            8 => (0, 2),
            9 => (2, 0),
            10 => (1, 1),
            11 => (2, 2),
            14 => (1, 2),
            15 => (2, 1),
            _ => panic!("not a usable cross distance"),
        }
    }

    fn fused(q: &Set, g: &Set, ids: &[u8]) -> f64 {
        let mut total = 0.0;
        for &id in ids {
            let (qo, go) = pair(id);
            total += dist(&q.e[qo], &g.e[go]);
        }
        total
    }

    /// Returns (mAP, cmc, retained query count, skipped query count).
    pub fn evaluate(
        queries: &[Set],
        gallery: &[Set],
        ids: &[u8],
        max_rank: usize,
    ) -> (f64, Vec<f64>, usize, usize) {
        let mut ap_sum = 0.0;
        let mut retained = 0usize;
        let mut skipped = 0usize;
        let mut first_positive_ranks = Vec::new();
        for q in queries {
            let mut entries: Vec<(f64, u64, bool)> = Vec::new();
            for g in gallery {
                if g.source == q.source {
                    continue;
                }
                entries.push((fused(q, g, ids), g.source, g.identity == q.identity));
            }
            // Selection sort by (distance, source id).
            for i in 0..entries.len() {
                let mut best = i;
                for j in (i + 1)..entries.len() {
                    let a = &entries[j];
                    let b = &entries[best];
                    if a.0 < b.0 || (a.0 == b.0 && a.1 < b.1) {
                        best = j;
                    }
                }
                entries.swap(i, best);
            }
            let mut positives = 0usize;
            let mut precision_sum = 0.0;
            let mut first_rank = None;
            for (rank0, entry) in entries.iter().enumerate() {
                if entry.2 {
                    positives += 1;
                    precision_sum += positives as f64 / (rank0 + 1) as f64;
                    if first_rank.is_none() {
                        first_rank = Some(rank0 + 1);
                    }
                }
            }
            if positives == 0 {
                skipped += 1;
            } else {
                retained += 1;
                ap_sum += precision_sum / positives as f64;
                first_positive_ranks.push(first_rank.unwrap());
            }
        }
        let map = ap_sum / retained as f64;
        let mut cmc = vec![0.0; max_rank];
        for k in 1..=max_rank {
            let hits = first_positive_ranks.iter().filter(|&&r| r <= k).count();
            cmc[k - 1] = hits as f64 / retained as f64;
        }
        (map, cmc, retained, skipped)
    }
}

#[test]
fn acceptance_2_map_cmc_oracle_equivalence() {
    let start = Instant::now();
    let combos: Vec<(Vec<u8>, Combination)> = vec![
        (vec![1], Combination::parse("d1").unwrap()),
        (vec![1, 2, 10], Combination::parse("d1+d2+d10").unwrap()),
        (
            vec![1, 2, 3, 8, 9, 10, 11, 14, 15],
            Combination::new(enumerate_valid_ids()).unwrap(),
        ),
    ];
    let mut rng = Rng::new(555);
    let mut instances = 0usize;
    for n_queries in 1..=8usize {
        for n_gallery in 1..=16usize {
            let dim = 3;
            fn draw_set(rng: &mut Rng, dim: usize, source: u64, identity: u64) -> brute::Set {
                let e = |rng: &mut Rng| -> Vec<f64> { (0..dim).map(|_| rng.normal()).collect() };
                brute::Set {
                    source,
                    identity,
                    e: [e(rng), e(rng), e(rng)],
                }
            }
            let identity_pool = 1 + n_gallery / 2;
            let queries: Vec<brute::Set> = (0..n_queries)
                .map(|i| {
                    let id = rng.below(identity_pool) as u64;
                    draw_set(&mut rng, dim, i as u64, id)
                })
                .collect();
            let mut gallery: Vec<brute::Set> = (0..n_gallery)
                .map(|i| {
                    let id = rng.below(identity_pool) as u64;
                    draw_set(&mut rng, dim, 100 + i as u64, id)
                })
                .collect();
            // Guarantee at least one query has a positive so the
            // protocol is well-defined.
            gallery[0].identity = queries[0].identity;

            let to_tri = |s: &brute::Set, side: Side| TriOrderSet {
                source_sample_id: s.source,
                identity_id: s.identity,
                side,
                e0: s.e[0].clone(),
                e1: s.e[1].clone(),
                e2: s.e[2].clone(),
            };
            let mut sets: Vec<TriOrderSet> = queries.iter().map(|s| to_tri(s, Side::X)).collect();
            sets.extend(gallery.iter().map(|s| to_tri(s, Side::Y)));

            for (ids, combo) in &combos {
                let (oracle_map, oracle_cmc, oracle_retained, oracle_skipped) =
                    brute::evaluate(&queries, &gallery, ids, 10);
                let report = evaluate(&sets, combo, &EvalProtocol::default()).unwrap();
                assert_eq!(report.num_queries, oracle_retained);
                assert_eq!(report.skipped_queries, oracle_skipped);
                assert!(
                    (report.map - oracle_map).abs() < 1e-12,
                    "mAP mismatch at {n_queries}x{n_gallery} {combo}: {} vs {}",
                    report.map,
                    oracle_map
                );
                for (a, b) in report.cmc.iter().zip(&oracle_cmc) {
                    assert!((a - b).abs() < 1e-12, "CMC mismatch: {a} vs {b}");
                }
                instances += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < 10,
        "oracle equivalence took {elapsed:?}"
    );
    println!(
        "acceptance 2 (mAP/CMC oracle equivalence): PASS - {instances} instances up to 8x16, {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// 3. Trivial exactness
// ---------------------------------------------------------------------------

#[test]
fn acceptance_3_trivial_exactness() {
    let mut rng = Rng::new(33);
    let dim = 5;
    let batch_x: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..dim).map(|_| rng.normal()).collect())
        .collect();
    let batch_y: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..dim).map(|_| rng.normal()).collect())
        .collect();

    // Identity generators zero the consistency losses.
    let g = identity_net(dim);
    let f = identity_net(dim);
    assert_eq!(loss_cycle(&g, &f, &batch_x, &batch_y).unwrap(), 0.0);
    assert_eq!(loss_identity(&g, &f, &batch_x, &batch_y).unwrap(), 0.0);

    // Constant-0.5 discriminator scores exactly 0.5.
    let d = constant_discriminator(dim, 0.5);
    assert_eq!(loss_adv_discriminator(&d, &batch_x, &batch_y).unwrap(), 0.5);

    // All-equal batch: hinge triplet loss = m, center loss = 0.
    let embeddings = vec![vec![0.7, -0.2, 0.1]; 6];
    let labels = vec![0, 0, 0, 1, 1, 1];
    let m = 0.3;
    let (triplet, _) = batch_hard_triplet_loss(
        &embeddings,
        &labels,
        &TripletConfig {
            margin: MarginMode::Hinge { m },
            lambda: 0.0,
        },
    )
    .unwrap();
    assert_eq!(triplet, m);
    let (center, _) = batch_center_loss(&embeddings, &labels).unwrap();
    assert_eq!(center, 0.0);

    // Schedule endpoints, exactly, on a large-scale and the default
    // desk-scale schedule.
    for schedule in [
        LrSchedule {
            gamma0: 3e-4,
            t0: 20_000,
            t1: 40_000,
        },
        LrSchedule::default(),
    ] {
        assert_eq!(schedule.lr_at(schedule.t0).unwrap(), 3e-4);
        assert_eq!(schedule.lr_at(schedule.t1).unwrap(), 3e-7);
    }

    println!(
        "acceptance 3 (trivial exactness): PASS - L_cyc = L_id = 0, adv 0.5, hinge m, center 0, lr endpoints 3e-4 / 3e-7"
    );
}

// ---------------------------------------------------------------------------
// 4. Hexagram structure
// ---------------------------------------------------------------------------

#[test]
fn acceptance_4_hexagram_structure() {
    let ids = enumerate_valid_ids();
    assert_eq!(ids.len(), 9);
    assert_eq!(EXCLUDED_IDS.len(), 6);

    let mut rng = Rng::new(44);
    let random_set = |rng: &mut Rng, source: u64, identity: u64| {
        let mut e = || -> Vec<f64> { (0..4).map(|_| rng.normal()).collect() };
        TriOrderSet {
            source_sample_id: source,
            identity_id: identity,
            side: Side::X,
            e0: e(),
            e1: e(),
            e2: e(),
        }
    };

    // Every excluded id errors in the distance path and the
    // combination parser.
    let q = random_set(&mut rng, 0, 0);
    let g = random_set(&mut rng, 1, 1);
    for id in EXCLUDED_IDS {
        assert!(cross_distance(&q, &g, id).is_err(), "{id} must error");
        assert!(Combination::new(vec![id]).is_err());
        assert!(Combination::parse(&id.to_string()).is_err());
    }

    // Swap symmetry on 1000 seeded random pairs.
    let fixed_combos = [
        Combination::parse("d1").unwrap(),
        Combination::parse("d1+d2+d10").unwrap(),
        Combination::new(ids.clone()).unwrap(),
    ];
    for trial in 0..1000 {
        let q = random_set(&mut rng, 2 * trial, trial);
        let g = random_set(&mut rng, 2 * trial + 1, trial + 1);
        // A different random valid subset each trial, plus the fixed ones.
        let subset: Vec<CrossDistanceId> = ids
            .iter()
            .copied()
            .filter(|_| rng.uniform() < 0.5)
            .collect();
        let mut combos: Vec<Combination> = fixed_combos.to_vec();
        if !subset.is_empty() {
            combos.push(Combination::new(subset).unwrap());
        }
        for combo in &combos {
            let forward = fuse(&q, &g, combo).unwrap();
            let mirrored = fuse(&g, &q, &combo.mirror()).unwrap();
            assert!(
                (forward - mirrored).abs() < 1e-12,
                "trial {trial} {combo}: {forward} vs {mirrored}"
            );
        }
    }
    println!(
        "acceptance 4 (hexagram structure): PASS - 9 valid ids, 6 excluded ids error, swap symmetry on 1000 pairs"
    );
}

// ---------------------------------------------------------------------------
// 5. Multi-order hardness dominance
// ---------------------------------------------------------------------------

#[test]
fn acceptance_5_multiorder_hardness_dominance() {
    let mut rng = Rng::new(55);
    let k = 3;
    let dim = 4;
    for batch_idx in 0..1000 {
        // K identities x 2 sources x 3 orders of random embeddings.
        let mut embeddings = Vec::new();
        let mut labels = Vec::new();
        let mut orders = Vec::new();
        for identity in 0..k as u64 {
            for _source in 0..2 {
                for order in Order::ALL {
                    embeddings.push((0..dim).map(|_| rng.normal()).collect::<Vec<f64>>());
                    labels.push(identity);
                    orders.push(order);
                }
            }
        }
        let full =
            per_anchor_hard_selection(&pairwise_distance_matrix(&embeddings), &labels).unwrap();
        let sub_idx: Vec<usize> = (0..labels.len())
            .filter(|&i| orders[i] == Order::Zero)
            .collect();
        let sub_embeddings: Vec<Vec<f64>> =
            sub_idx.iter().map(|&i| embeddings[i].clone()).collect();
        let sub_labels: Vec<u64> = sub_idx.iter().map(|&i| labels[i]).collect();
        let sub =
            per_anchor_hard_selection(&pairwise_distance_matrix(&sub_embeddings), &sub_labels)
                .unwrap();
        for (sub_pos, &full_pos) in sub_idx.iter().enumerate() {
            assert!(
                full[full_pos].hardest_positive >= sub[sub_pos].hardest_positive,
                "batch {batch_idx}: hp shrank under the sample superset"
            );
            assert!(
                full[full_pos].hardest_negative <= sub[sub_pos].hardest_negative,
                "batch {batch_idx}: hn grew under the sample superset"
            );
        }
    }
    println!(
        "acceptance 5 (multi-order hardness dominance): PASS - hp superset-monotone up, hn down on 1000 batches"
    );
}

// ---------------------------------------------------------------------------
// 6 & 7. Trend criteria share one trained pipeline.
// ---------------------------------------------------------------------------

struct TrendFixture {
    full_rank1: f64,
    baseline_rank1: f64,
    test_sets: Vec<TriOrderSet>,
    elapsed: std::time::Duration,
}

fn trend_fixture() -> &'static TrendFixture {
    static FIXTURE: OnceLock<TrendFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let start = Instant::now();
        let config = PipelineConfig::default();
        let dir = std::env::temp_dir().join(format!("crossreid-acceptance-{}", std::process::id()));
        let artifacts = run_pipeline(&config, &dir).unwrap();

        // Baseline: identical data and GAN artifacts, order-0 training,
        // d1 evaluation.
        let train_records =
            crossreid::synthcam::io::read_dataset(&artifacts.augmented_train).unwrap();
        let test_records =
            crossreid::synthcam::io::read_dataset(&artifacts.augmented_test).unwrap();
        let baseline_config = ReidTrainConfig {
            orders: vec![Order::Zero],
            ..config.reid.clone()
        };
        let baseline = train_reid(&train_records, &baseline_config).unwrap();
        let baseline_sets = collect_tri_order_sets(&baseline.model, &test_records).unwrap();
        let baseline_report = evaluate(
            &baseline_sets,
            &Combination::parse("d1").unwrap(),
            &config.protocol,
        )
        .unwrap();

        let (embed, _) =
            crossreid::checkpoint::load_embedding_checkpoint(&artifacts.embedding_checkpoint)
                .unwrap();
        let test_sets = collect_tri_order_sets(&embed, &test_records).unwrap();
        std::fs::remove_dir_all(&dir).ok();
        TrendFixture {
            full_rank1: artifacts.report.rank1(),
            baseline_rank1: baseline_report.rank1(),
            test_sets,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn acceptance_6_augmentation_trend() {
    let fixture = trend_fixture();
    let gap_pp = 100.0 * (fixture.full_rank1 - fixture.baseline_rank1);
    assert!(
        fixture.elapsed.as_secs() < 300,
        "pipeline took {:?}",
        fixture.elapsed
    );
    assert!(
        gap_pp >= 5.0,
        "full pipeline Rank-1 {:.4} vs baseline {:.4}: gap {gap_pp:.1}pp < 5pp",
        fixture.full_rank1,
        fixture.baseline_rank1
    );
    println!(
        "acceptance 6 (augmentation trend): PASS - full d1+d2+d10 Rank-1 {:.4} vs order-0 d1 baseline {:.4} (+{gap_pp:.1}pp), {:?}",
        fixture.full_rank1, fixture.baseline_rank1, fixture.elapsed
    );
}

#[test]
fn acceptance_7_combination_trend() {
    let fixture = trend_fixture();
    let reports = ablate_combinations(
        &fixture.test_sets,
        &ablation_combinations(),
        &EvalProtocol::default(),
    )
    .unwrap();
    assert_eq!(reports.len(), 15);
    let rank1_of = |name: &str| {
        reports
            .iter()
            .find(|r| r.combination == name)
            .unwrap_or_else(|| panic!("missing {name} row"))
            .rank1()
    };
    let best = rank1_of("d1+d2+d10");
    let single = rank1_of("d1");
    assert!(
        best >= single,
        "d1+d2+d10 Rank-1 {best:.4} < d1 Rank-1 {single:.4}"
    );
    println!(
        "acceptance 7 (combination trend): PASS - d1+d2+d10 Rank-1 {best:.4} >= d1 Rank-1 {single:.4} over the 15-combination table"
    );
}

// ---------------------------------------------------------------------------
// 8. Determinism
// ---------------------------------------------------------------------------

#[test]
fn acceptance_8_determinism() {
    // Small but complete pipeline, run twice into separate directories:
    // every artifact must be byte-identical.
    let config = PipelineConfig {
        manifest: crossreid::synthcam::DatasetManifest {
            identities: 30,
            ..Default::default()
        },
        gan: GanTrainConfig {
            epochs: 10,
            decay_start: 5,
            ..GanTrainConfig::default()
        },
        reid: ReidTrainConfig {
            k: 4,
            schedule: LrSchedule {
                gamma0: 3e-4,
                t0: 30,
                t1: 60,
            },
            ..ReidTrainConfig::default()
        },
        ..PipelineConfig::default()
    };
    let base = std::env::temp_dir().join(format!("crossreid-det-{}", std::process::id()));
    let dir_a = base.join("a");
    let dir_b = base.join("b");
    run_pipeline(&config, &dir_a).unwrap();
    run_pipeline(&config, &dir_b).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(&dir_a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for name in &names {
        let a = std::fs::read(dir_a.join(name)).unwrap();
        let b = std::fs::read(dir_b.join(name)).unwrap();
        assert_eq!(a, b, "artifact {name} differs between identical runs");
    }
    std::fs::remove_dir_all(&base).ok();
    println!(
        "acceptance 8 (determinism): PASS - {} artifacts byte-identical across reruns",
        names.len()
    );
}

// ---------------------------------------------------------------------------
// 9. GAN learnability
// ---------------------------------------------------------------------------

#[test]
fn acceptance_9_gan_learnability() {
    let start = Instant::now();
    // Noiseless affine-shifted domains: Y = X + offset, with the domain
    // shift large against the intra-domain spread.
    let dim = 8;
    let per_side = 64;
    let spread = 0.03;
    let mut rng = Rng::new(42);
    let offset: Vec<f64> = (0..dim)
        .map(|_| if rng.uniform() > 0.5 { 1.2 } else { -1.2 })
        .collect();
    let xs: Vec<Vec<f64>> = (0..per_side)
        .map(|_| (0..dim).map(|_| spread * rng.normal()).collect())
        .collect();
    let mut records = Vec::new();
    for (i, x) in xs.iter().enumerate() {
        let y: Vec<f64> = x.iter().zip(&offset).map(|(a, b)| a + b).collect();
        for (side, features, id) in [
            (Side::X, x.clone(), i as u64),
            (Side::Y, y, (per_side + i) as u64),
        ] {
            records.push(SampleRecord {
                sample_id: id,
                identity_id: id,
                camera_id: 0,
                side: Some(side),
                order: Order::Zero,
                source_sample_id: id,
                features,
            });
        }
    }

    // Default epoch budget; the identity weight is disabled because the
    // domains are disjoint by construction and the identity term would
    // anchor G to the identity map rather than the known translation.
    let config = GanTrainConfig::default();
    let weights = GanLossWeights {
        alpha: 10.0,
        beta: 0.0,
    };
    let transfer_error = |model: &GanModel| -> f64 {
        let mut total = 0.0;
        for x in &xs {
            let gx = forward_vec(&model.g, x).unwrap();
            let target: Vec<f64> = x.iter().zip(&offset).map(|(a, b)| a + b).collect();
            total += euclidean(&gx, &target);
        }
        total / xs.len() as f64
    };
    let mut init_rng = Rng::new(config.seed);
    let init = GanModel::seeded(dim, &mut init_rng).unwrap();
    let before = transfer_error(&init);
    let (trained, _) = train_gan(&records, &config, &weights).unwrap();
    let after = transfer_error(&trained);
    let ratio = before / after;
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "GAN learnability took {elapsed:?}");
    assert!(
        ratio >= 10.0,
        "transfer error only improved {ratio:.1}x (before {before:.4}, after {after:.4})"
    );
    println!(
        "acceptance 9 (GAN learnability): PASS - mean transfer error {before:.4} -> {after:.4} ({ratio:.1}x), {elapsed:?}"
    );
}
