//! Acceptance criteria, one test per criterion.
//!
//! The reference markets are synthetic and fixed-seed. Criteria 4, 5 and 6
//! share one cross-entropy ablation of the reference market, computed once.
//! Run with `--nocapture` to see the measured values.

mod common;

use std::collections::HashSet;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sessrec::dataset::Session;
use sessrec::experiment::{
    run_ablation, run_similarity_study, run_transfer, AblationResult, AblationSettings, Fraction,
    ModelKind, SimilaritySettings,
};
use sessrec::metrics::{
    catalog_coverage, evaluate, novelty, top_k_accuracy, EvaluationEvent, NOVELTY_CLAMP,
};
use sessrec::nn::{train, LossKind, LstmRecommender, TrainConfig};
use sessrec::report::{emit_report, ReportFormat};
use sessrec::synth::{
    derive_related_market, generate_market, SyntheticMarket, SyntheticMarketConfig,
};
use sessrec::ItemId;

use common::{max_gradient_error, random_negatives, random_params, random_session};

// ---------------------------------------------------------------------------
// reference configurations

/// Mid-range temperature: a predictable but not deterministic market.
fn reference_market_config() -> SyntheticMarketConfig {
    SyntheticMarketConfig {
        market_id: "reference".into(),
        n_x: 500,
        n_sessions: 50_000,
        zipf_s: 1.0,
        temperature: 0.5,
        length_p: 0.4,
        latent_rank: 8,
        seed: 7,
    }
}

/// High temperature: next items barely depend on the current one.
fn low_predictability_config() -> SyntheticMarketConfig {
    SyntheticMarketConfig {
        market_id: "low-predictability".into(),
        temperature: 3.0,
        ..reference_market_config()
    }
}

fn reference_train() -> TrainConfig {
    TrainConfig {
        neg_samples: 128,
        seed: 2,
        ..TrainConfig::default()
    }
}

fn reference_settings(model: ModelKind) -> AblationSettings {
    AblationSettings {
        model,
        fractions: Fraction::all(),
        k: 4,
        partition_seed: 1,
        train: reference_train(),
        markov: Default::default(),
    }
}

fn reference_market() -> &'static SyntheticMarket {
    static MARKET: OnceLock<SyntheticMarket> = OnceLock::new();
    MARKET.get_or_init(|| generate_market(&reference_market_config()).unwrap())
}

fn reference_ce_ablation() -> &'static AblationResult {
    static RESULT: OnceLock<AblationResult> = OnceLock::new();
    RESULT.get_or_init(|| {
        let r = run_ablation(
            &reference_market().dataset,
            &reference_settings(ModelKind::LstmCe),
        )
        .unwrap()
        .result;
        print_curve("reference lstm-ce", &r);
        r
    })
}

fn print_curve(name: &str, r: &AblationResult) {
    for row in &r.rows {
        println!(
            "{name} fraction {}: accuracy {:.4} coverage {:.4} novelty {:.4}",
            row.fraction,
            row.metrics.top_k_accuracy,
            row.metrics.catalog_coverage,
            row.metrics.novelty
        );
    }
}

fn accuracies(r: &AblationResult) -> Vec<f64> {
    r.rows.iter().map(|x| x.metrics.top_k_accuracy).collect()
}

fn coverages(r: &AblationResult) -> Vec<f64> {
    r.rows.iter().map(|x| x.metrics.catalog_coverage).collect()
}

fn at(r: &AblationResult, tenths: usize) -> &sessrec::metrics::MetricsReport {
    &r.rows
        .iter()
        .find(|x| x.fraction.tenths() == tenths)
        .expect("fraction present")
        .metrics
}

/// Every later value is at least every earlier one minus `band`.
fn non_decreasing_within(values: &[f64], band: f64) -> bool {
    values
        .iter()
        .enumerate()
        .all(|(i, &v)| values[..i].iter().all(|&earlier| v >= earlier - band))
}

// ---------------------------------------------------------------------------
// 1

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for instance in 0..20 {
        let n_x = rng.random_range(3..=8);
        let n1 = rng.random_range(1..=4);
        let n2 = rng.random_range(1..=5);
        let params = random_params(n_x, n1, n2, 1000 + instance);
        let sessions: Vec<Session> = (0..rng.random_range(1..=3))
            .map(|_| random_session(&mut rng, n_x, 6))
            .collect();
        let ce = max_gradient_error(&params, &sessions, LossKind::CrossEntropy, None, 1e-5, 1e-7);
        let n_neg = rng.random_range(1..=4);
        let negs = random_negatives(&mut rng, &sessions, n_x, n_neg);
        let bpr = max_gradient_error(&params, &sessions, LossKind::Bpr, Some(&negs), 1e-5, 1e-7);
        assert!(
            ce < 1e-4,
            "instance {instance}: cross-entropy relative error {ce}"
        );
        assert!(
            bpr < 1e-4,
            "instance {instance}: ranking relative error {bpr}"
        );
        worst = worst.max(ce).max(bpr);
    }
    println!("criterion 1: worst relative error over 20 instances {worst:.3e}");
}

// ---------------------------------------------------------------------------
// 2

fn brute_accuracy(events: &[EvaluationEvent]) -> f64 {
    let mut hits = 0.0;
    for e in events {
        let mut hit = false;
        for r in &e.recs {
            if *r == e.target {
                hit = true;
            }
        }
        if hit {
            hits += 1.0;
        }
    }
    hits / events.len() as f64
}

fn brute_coverage(events: &[EvaluationEvent], n_x: usize) -> f64 {
    let mut seen = vec![false; n_x];
    for e in events {
        for r in &e.recs {
            seen[r.index()] = true;
        }
    }
    seen.iter().filter(|&&s| s).count() as f64 / n_x as f64
}

fn brute_novelty(events: &[EvaluationEvent], pop: &[f64], k: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for e in events {
        if e.recs.len() != k {
            continue;
        }
        for r in &e.recs {
            let p = if pop[r.index()] < NOVELTY_CLAMP {
                NOVELTY_CLAMP
            } else {
                pop[r.index()]
            };
            total += -p.ln();
            count += 1.0;
        }
    }
    total / count
}

#[test]
fn criterion_02_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for set in 0..100 {
        let n_x = rng.random_range(5..60);
        let k = rng.random_range(1..=4.min(n_x));
        let mut pop: Vec<f64> = (0..n_x).map(|_| rng.random_range(0.0..1.0)).collect();
        pop[rng.random_range(0..n_x)] = 0.0;
        let n_events = rng.random_range(1..80);
        let events: Vec<EvaluationEvent> = (0..n_events)
            .map(|_| {
                let len = if rng.random_bool(0.9) {
                    k
                } else {
                    rng.random_range(0..k)
                };
                let mut recs = Vec::new();
                while recs.len() < len {
                    let item = ItemId(rng.random_range(0..n_x) as u32);
                    if !recs.contains(&item) {
                        recs.push(item);
                    }
                }
                EvaluationEvent {
                    prefix: vec![ItemId(0)],
                    target: ItemId(rng.random_range(0..n_x) as u32),
                    recs,
                }
            })
            .collect();
        let acc = top_k_accuracy(&events).unwrap();
        assert!((acc - brute_accuracy(&events)).abs() <= 1e-12, "set {set}");
        let cov = catalog_coverage(&events, n_x).unwrap();
        assert!(
            (cov - brute_coverage(&events, n_x)).abs() <= 1e-12,
            "set {set}"
        );
        if events.iter().any(|e| e.recs.len() == k) {
            let nov = novelty(&events, &pop, k).unwrap().value;
            let brute = brute_novelty(&events, &pop, k);
            assert!(
                (nov - brute).abs() <= 1e-12 * brute.abs().max(1.0),
                "set {set}"
            );
        } else {
            assert!(novelty(&events, &pop, k).is_err());
        }
    }
    println!("criterion 2: 100 random event sets agree");
}

// ---------------------------------------------------------------------------
// 3

#[test]
fn criterion_03_overfits_a_tiny_training_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    // distinct first items, so every prefix has a single correct next item
    let mut firsts: Vec<usize> = (0..20).collect();
    rand::seq::SliceRandom::shuffle(&mut firsts[..], &mut rng);
    let sessions: Vec<Session> = firsts[..10]
        .iter()
        .map(|&first| {
            let len = rng.random_range(2..=6);
            let rest = (1..len).map(|_| rng.random_range(0..20));
            Session::from_indices(std::iter::once(first).chain(rest)).unwrap()
        })
        .collect();
    let config = TrainConfig {
        epochs: 200,
        lr: 0.05,
        seed: 3,
        ..TrainConfig::default()
    };
    let outcome = train(&sessions, 20, &config).unwrap();
    let loss = *outcome.loss_trace.last().unwrap();
    let rec = LstmRecommender {
        params: &outcome.params,
    };
    let popularity = vec![1.0; 20];
    let top1 = evaluate(&rec, &sessions, &popularity, 1)
        .unwrap()
        .top_k_accuracy;
    println!("criterion 3: final mean loss {loss:.5}, top-1 training accuracy {top1}");
    assert!(loss < 0.1, "mean training loss {loss}");
    assert_eq!(top1, 1.0);
}

// ---------------------------------------------------------------------------
// 4

#[test]
fn criterion_04_accuracy_saturates() {
    let r = reference_ce_ablation();
    let (a1, a5, a10) = (
        at(r, 1).top_k_accuracy,
        at(r, 5).top_k_accuracy,
        at(r, 10).top_k_accuracy,
    );
    let acc = accuracies(r);
    println!(
        "criterion 4: gain 0.5->1.0 = {:.4}, gain 0.1->0.5 = {:.4}",
        a10 - a5,
        a5 - a1
    );
    assert!(a10 - a5 < 0.5 * (a5 - a1), "accuracies {acc:?}");
    assert!(non_decreasing_within(&acc, 0.01), "accuracies {acc:?}");
}

// ---------------------------------------------------------------------------
// 5

#[test]
fn criterion_05_coverage_regimes_differ() {
    let low = generate_market(&low_predictability_config()).unwrap();
    let r = run_ablation(&low.dataset, &reference_settings(ModelKind::LstmCe))
        .unwrap()
        .result;
    print_curve("low-predictability lstm-ce", &r);
    let cov = coverages(&r);
    let peak = cov.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let last = *cov.last().unwrap();
    println!("criterion 5: low-predictability peak {peak:.4}, final {last:.4}");

    let high = coverages(reference_ce_ablation());
    println!("criterion 5: high-predictability coverages {high:?}");
    assert!(peak - last >= 0.02, "low-predictability coverages {cov:?}");
    assert!(
        non_decreasing_within(&high, 0.02),
        "high-predictability coverages {high:?}"
    );
}

// ---------------------------------------------------------------------------
// 6

#[test]
fn criterion_06_ranking_loss_trades_coverage_for_accuracy() {
    let ce = reference_ce_ablation();
    let bpr = run_ablation(
        &reference_market().dataset,
        &reference_settings(ModelKind::LstmBpr),
    )
    .unwrap()
    .result;
    print_curve("reference lstm-bpr", &bpr);
    let mut failures = Vec::new();
    for tenths in 3..=10 {
        let (c, b) = (at(ce, tenths), at(&bpr, tenths));
        println!(
            "criterion 6: fraction {:.1}: accuracy bpr-ce {:+.4}, coverage bpr-ce {:+.4}",
            tenths as f64 / 10.0,
            b.top_k_accuracy - c.top_k_accuracy,
            b.catalog_coverage - c.catalog_coverage
        );
        if b.top_k_accuracy < c.top_k_accuracy || b.catalog_coverage > c.catalog_coverage {
            failures.push(tenths);
        }
    }
    assert!(
        failures.is_empty(),
        "trade-off violated at tenths {failures:?}"
    );
}

// ---------------------------------------------------------------------------
// 7

#[test]
fn criterion_07_markov_accuracy_is_flat() {
    let settings = AblationSettings {
        fractions: (2..=10)
            .map(|t| Fraction::from_tenths(t).unwrap())
            .collect(),
        ..reference_settings(ModelKind::Markov)
    };
    let r = run_ablation(&reference_market().dataset, &settings)
        .unwrap()
        .result;
    print_curve("reference markov", &r);
    let acc = accuracies(&r);
    let range = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - acc.iter().copied().fold(f64::INFINITY, f64::min);
    println!("criterion 7: accuracy range {range:.4}");
    assert!(range <= 0.02, "accuracies {acc:?}");
}

// ---------------------------------------------------------------------------
// 8

fn family_config(id: &str, seed: u64) -> SyntheticMarketConfig {
    SyntheticMarketConfig {
        market_id: id.into(),
        n_sessions: 10_000,
        seed,
        ..reference_market_config()
    }
}

#[test]
fn criterion_08_similarity_tracks_perturbation() {
    let base = generate_market(&family_config("base", 80)).unwrap();
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut markets = vec![base.dataset.clone()];
    for (i, eps) in grid.iter().enumerate() {
        let cfg = family_config(&format!("eps-{eps}"), 81 + i as u64);
        markets.push(
            derive_related_market(&base.structure, *eps, &cfg)
                .unwrap()
                .dataset,
        );
    }
    let settings = SimilaritySettings {
        partition_seed: 1,
        centroid_seed: 2,
        train: reference_train(),
        ..Default::default()
    };
    let study = run_similarity_study(&markets, &settings).unwrap().result;
    let m = &study.matrix;
    let n = m.values.len();
    for i in 0..n {
        assert!((m.values[i][i] - 1.0).abs() <= 1e-12);
        for j in 0..n {
            assert_eq!(m.values[i][j], m.values[j][i]);
        }
    }
    let sims: Vec<f64> = (1..n).map(|j| m.values[0][j]).collect();
    println!("criterion 8: similarity to base over eps {grid:?}: {sims:?}");
    assert!(
        sims.windows(2).all(|w| w[1] <= w[0]),
        "similarities {sims:?}"
    );
}

// ---------------------------------------------------------------------------
// 9

#[test]
fn criterion_09_similar_source_transfers_better() {
    let a = generate_market(&family_config("A", 90)).unwrap();
    let b = derive_related_market(&a.structure, 0.1, &family_config("B", 91)).unwrap();
    let c = derive_related_market(&a.structure, 1.0, &family_config("C", 92)).unwrap();
    let settings = AblationSettings {
        fractions: vec![Fraction::from_tenths(10).unwrap()],
        ..reference_settings(ModelKind::LstmCe)
    };
    let t = run_transfer(&a.dataset, &[b.dataset, c.dataset], &settings)
        .unwrap()
        .result;
    let base = t.baseline.rows[0].metrics.top_k_accuracy;
    let from_b = t.sources[0].rows[0].metrics.top_k_accuracy;
    let from_c = t.sources[1].rows[0].metrics.top_k_accuracy;
    println!("criterion 9: A on A {base:.4}, B on A {from_b:.4}, C on A {from_c:.4}");
    assert!(from_b > from_c);
    assert!(base > from_b && base > from_c);
}

// ---------------------------------------------------------------------------
// 10

#[test]
fn criterion_10_reruns_are_byte_identical() {
    let cfg = SyntheticMarketConfig {
        n_x: 60,
        n_sessions: 2_000,
        ..family_config("det", 100)
    };
    let small_train = TrainConfig {
        embedding_dim: 8,
        hidden_dim: 12,
        epochs: 3,
        neg_samples: 16,
        seed: 5,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut runs: Vec<Vec<Vec<u8>>> = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(run.to_string());
        let a = generate_market(&cfg).unwrap();
        let b = derive_related_market(
            &a.structure,
            0.5,
            &SyntheticMarketConfig {
                market_id: "det-b".into(),
                seed: 101,
                ..cfg.clone()
            },
        )
        .unwrap();
        let mut files = Vec::new();
        for model in [ModelKind::LstmCe, ModelKind::LstmBpr, ModelKind::Markov] {
            let s = AblationSettings {
                model,
                train: small_train.clone(),
                ..reference_settings(model)
            };
            let r = run_ablation(&a.dataset, &s).unwrap().result;
            files.extend(emit_report(&r, &out, model.as_str(), &[ReportFormat::Svg]).unwrap());
        }
        let s = AblationSettings {
            fractions: vec![Fraction::from_tenths(10).unwrap()],
            train: small_train.clone(),
            ..reference_settings(ModelKind::LstmCe)
        };
        let t = run_transfer(&a.dataset, std::slice::from_ref(&b.dataset), &s)
            .unwrap()
            .result;
        files.extend(emit_report(&t, &out, "transfer", &[]).unwrap());
        let sim = SimilaritySettings {
            centroid_sessions: 100,
            train: small_train.clone(),
            ..Default::default()
        };
        let study = run_similarity_study(&[a.dataset, b.dataset], &sim)
            .unwrap()
            .result;
        files.extend(emit_report(&study, &out, "similarity", &[]).unwrap());
        runs.push(files.iter().map(|f| std::fs::read(f).unwrap()).collect());
    }
    let distinct: HashSet<&Vec<Vec<u8>>> = runs.iter().collect();
    println!("criterion 10: {} report files compared", runs[0].len());
    assert_eq!(runs[0].len(), 13);
    assert_eq!(distinct.len(), 1, "reruns differ");
}
