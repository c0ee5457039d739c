use sessrec::markov::estimate_transitions;
use sessrec::synth::{
    derive_related_market, generate_market, LatentStructure, SyntheticMarketConfig,
};
use sessrec::ItemId;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn config(n_x: usize, n_sessions: usize, seed: u64) -> SyntheticMarketConfig {
    SyntheticMarketConfig {
        market_id: format!("m{seed}"),
        n_x,
        n_sessions,
        seed,
        ..Default::default()
    }
}

#[test]
fn near_zero_temperature_is_predictable_by_the_latent_chain() {
    let cfg = SyntheticMarketConfig {
        temperature: 0.005,
        ..config(200, 5_000, 1)
    };
    let m = generate_market(&cfg).unwrap();
    let (mut hits, mut total) = (0usize, 0usize);
    for s in &m.dataset.sessions {
        for w in s.items().windows(2) {
            hits += usize::from(m.structure.most_likely_next(w[0]) == w[1]);
            total += 1;
        }
    }
    let acc = hits as f64 / total as f64;
    assert!(acc > 0.9, "oracle accuracy {acc}");
}

#[test]
fn zero_exponent_gives_uniform_start_items() {
    let cfg = SyntheticMarketConfig {
        zipf_s: 0.0,
        ..config(500, 50_000, 2)
    };
    let m = generate_market(&cfg).unwrap();
    let mut counts = vec![0.0; cfg.n_x];
    for s in &m.dataset.sessions {
        counts[s.items()[0].index()] += 1.0;
    }
    let expected = cfg.n_sessions as f64 / cfg.n_x as f64;
    let chi2: f64 = counts
        .iter()
        .map(|c| (c - expected).powi(2) / expected)
        .sum();
    let critical = ChiSquared::new((cfg.n_x - 1) as f64)
        .unwrap()
        .inverse_cdf(0.99);
    assert!(chi2 < critical, "chi-square {chi2} >= {critical}");
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn full_perturbation_is_uncorrelated_with_the_base() {
    let base = generate_market(&config(200, 100, 3)).unwrap();
    let other = derive_related_market(&base.structure, 1.0, &config(200, 100, 4)).unwrap();
    let n = base.structure.n_x;
    let mean: f64 = (0..n)
        .map(|i| pearson(base.structure.row(i), other.structure.row(i)))
        .sum::<f64>()
        / n as f64;
    assert!(mean.abs() < 0.05, "mean row correlation {mean}");

    let same = derive_related_market(&base.structure, 0.1, &config(200, 100, 4)).unwrap();
    let close: f64 = (0..n)
        .map(|i| pearson(base.structure.row(i), same.structure.row(i)))
        .sum::<f64>()
        / n as f64;
    assert!(close > 0.5, "mean row correlation at 0.1 is {close}");
}

#[test]
fn empirical_transitions_converge_to_the_latent_rows() {
    let m = generate_market(&config(20, 100_000, 5)).unwrap();
    let t = estimate_transitions(&m.dataset.sessions, 20).unwrap();
    for i in 0..20u32 {
        let latent = m.structure.row(i as usize);
        let tv: f64 = (0..20u32)
            .map(|j| (t.prob(ItemId(i), ItemId(j)) - latent[j as usize]).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.05, "row {i}: total variation {tv}");
    }
}

fn l1_to(base: &LatentStructure, other: &LatentStructure) -> f64 {
    base.transitions
        .iter()
        .zip(&other.transitions)
        .map(|(a, b)| (a - b).abs())
        .sum()
}

#[test]
fn larger_perturbation_never_moves_closer_to_the_base() {
    let base = generate_market(&config(100, 10, 6)).unwrap();
    let grid = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0];
    for seed in 7..12 {
        let dists: Vec<f64> = grid
            .iter()
            .map(|&eps| {
                let d =
                    derive_related_market(&base.structure, eps, &config(100, 10, seed)).unwrap();
                l1_to(&base.structure, &d.structure)
            })
            .collect();
        assert_eq!(dists[0], 0.0);
        for w in dists.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "seed {seed}: {dists:?}");
        }
    }
}

#[test]
fn generated_sessions_respect_dataset_bounds() {
    let cfg = SyntheticMarketConfig {
        length_p: 0.02,
        ..config(50, 2_000, 8)
    };
    let m = generate_market(&cfg).unwrap();
    assert!(m
        .dataset
        .sessions
        .iter()
        .all(|s| (2..=64).contains(&s.len())));
    assert!(m.dataset.sessions.iter().any(|s| s.len() == 64));
    assert!(m
        .dataset
        .sessions
        .iter()
        .flat_map(|s| s.items())
        .all(|i| i.index() < 50));
}
