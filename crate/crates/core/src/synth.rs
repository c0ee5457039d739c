//! Synthetic multi-market purchase data.
//!
//! A market is a first-order Markov source. Start items follow a Zipf law over
//! a seeded permutation of the catalog. Transition row `i` is
//! `P(j | i) ∝ start(j) · exp(a_i · b_j / (sqrt(r) τ))` with Gaussian latent
//! factors `a, b` of rank `r`: a small temperature `τ` concentrates each row
//! on a few successors, a large one leaves only the popularity prior.

use std::fs;
use std::path::Path;

use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Geometric, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{write_native_csv, IdMap, ItemId, MarketDataset, Session, MAX_SESSION_LEN};
use crate::error::{Error, Result};

/// Transition probabilities are floored here before renormalisation so every
/// row stays strictly positive.
const TRANSITION_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticMarketConfig {
    pub market_id: String,
    pub n_x: usize,
    pub n_sessions: usize,
    /// Zipf exponent of the start-item distribution; 0 is uniform.
    pub zipf_s: f64,
    /// Softmax temperature of the item-specific transition component.
    pub temperature: f64,
    /// Success probability of the geometric extra length; sessions have
    /// `2 + Geom(p)` items, cut at 64.
    pub length_p: f64,
    /// Rank of the latent item factors.
    pub latent_rank: usize,
    pub seed: u64,
}

impl Default for SyntheticMarketConfig {
    fn default() -> Self {
        SyntheticMarketConfig {
            market_id: "synthetic".into(),
            n_x: 500,
            n_sessions: 50_000,
            zipf_s: 1.0,
            temperature: 0.5,
            length_p: 0.4,
            latent_rank: 8,
            seed: 0,
        }
    }
}

impl SyntheticMarketConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.n_x < 2 {
            return bad(format!("n_x must be at least 2, got {}", self.n_x));
        }
        if self.n_sessions == 0 {
            return bad("n_sessions must be positive".into());
        }
        if !(self.zipf_s >= 0.0 && self.zipf_s.is_finite()) {
            return bad(format!(
                "zipf_s must be a finite value >= 0, got {}",
                self.zipf_s
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if !(self.length_p > 0.0 && self.length_p <= 1.0) {
            return bad(format!(
                "length_p must lie in (0, 1], got {}",
                self.length_p
            ));
        }
        if self.latent_rank == 0 {
            return bad("latent_rank must be positive".into());
        }
        Ok(())
    }
}

/// The generating distribution of one market.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentStructure {
    pub n_x: usize,
    pub start: Vec<f64>,
    /// Row-stochastic `n_x x n_x`, row-major.
    pub transitions: Vec<f64>,
}

impl LatentStructure {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.transitions[i * self.n_x..(i + 1) * self.n_x]
    }

    /// Most likely successor of `i`, lowest index on ties.
    pub fn most_likely_next(&self, i: ItemId) -> ItemId {
        let row = self.row(i.index());
        let mut best = 0;
        for (j, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = j;
            }
        }
        ItemId(best as u32)
    }

    /// SHA-256 of the start vector and transition matrix.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_x as u64).to_le_bytes());
        for v in self.start.iter().chain(&self.transitions) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn fresh(config: &SyntheticMarketConfig) -> Self {
        let n = config.n_x;
        let r = config.latent_rank;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut start = vec![0.0; n];
        for (rank, &item) in perm.iter().enumerate() {
            start[item] = ((rank + 1) as f64).powf(-config.zipf_s);
        }
        normalize(&mut start);

        let mut normal = |len: usize| -> Vec<f64> {
            (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        let a = normal(n * r);
        let b = normal(n * r);
        let scale = 1.0 / ((r as f64).sqrt() * config.temperature);
        let log_start: Vec<f64> = start.iter().map(|p| p.ln()).collect();

        let mut transitions = vec![0.0; n * n];
        for i in 0..n {
            let ai = &a[i * r..(i + 1) * r];
            let row = &mut transitions[i * n..(i + 1) * n];
            for (j, v) in row.iter_mut().enumerate() {
                let bj = &b[j * r..(j + 1) * r];
                let g: f64 = ai.iter().zip(bj).map(|(x, y)| x * y).sum();
                *v = g * scale + log_start[j];
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|v| *v = (*v - max).exp());
            normalize(row);
            row.iter_mut().for_each(|v| *v = v.max(TRANSITION_FLOOR));
            normalize(row);
        }
        LatentStructure {
            n_x: n,
            start,
            transitions,
        }
    }

    /// `(1 - eps) * self + eps * other`, rows renormalized.
    fn blend(&self, other: &LatentStructure, eps: f64) -> Self {
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter()
                .zip(b)
                .map(|(x, y)| (1.0 - eps) * x + eps * y)
                .collect()
        };
        let mut start = mix(&self.start, &other.start);
        normalize(&mut start);
        let mut transitions = mix(&self.transitions, &other.transitions);
        for row in transitions.chunks_exact_mut(self.n_x) {
            normalize(row);
        }
        LatentStructure {
            n_x: self.n_x,
            start,
            transitions,
        }
    }

    /// Draws `config.n_sessions` sessions as Markov walks.
    fn sample_sessions(&self, config: &SyntheticMarketConfig) -> Result<Vec<Session>> {
        let n = self.n_x;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let start_cdf = cdf(&self.start);
        let row_cdfs: Vec<Vec<f64>> = (0..n).map(|i| cdf(self.row(i))).collect();
        let geometric = Geometric::new(config.length_p)
            .map_err(|e| Error::Argument(format!("length_p: {e}")))?;

        let mut sessions = Vec::with_capacity(config.n_sessions);
        for _ in 0..config.n_sessions {
            let extra: u64 = geometric.sample(&mut rng);
            let len = extra.saturating_add(2).min(MAX_SESSION_LEN as u64) as usize;
            let mut items = Vec::with_capacity(len);
            let mut cur = draw(&start_cdf, &mut rng);
            items.push(ItemId(cur as u32));
            while items.len() < len {
                cur = draw(&row_cdfs[cur], &mut rng);
                items.push(ItemId(cur as u32));
            }
            sessions.push(Session::new(items)?);
        }
        Ok(sessions)
    }
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

fn cdf(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

fn draw<R: Rng>(cdf: &[f64], rng: &mut R) -> usize {
    let u = rng.random::<f64>() * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// A generated market and the structure it was drawn from.
#[derive(Clone, Debug)]
pub struct SyntheticMarket {
    pub dataset: MarketDataset,
    pub structure: LatentStructure,
    pub config: SyntheticMarketConfig,
}

pub fn generate_market(config: &SyntheticMarketConfig) -> Result<SyntheticMarket> {
    config.validate()?;
    let structure = LatentStructure::fresh(config);
    finish(structure, config)
}

/// A market whose structure interpolates between `base` (at `eps = 0`) and an
/// independent structure drawn from `config` (at `eps = 1`).
pub fn derive_related_market(
    base: &LatentStructure,
    eps: f64,
    config: &SyntheticMarketConfig,
) -> Result<SyntheticMarket> {
    config.validate()?;
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Argument(format!(
            "perturbation {eps} outside [0, 1]"
        )));
    }
    if config.n_x != base.n_x {
        return Err(Error::Argument(format!(
            "catalog size {} differs from base {}",
            config.n_x, base.n_x
        )));
    }
    let structure = if eps == 0.0 {
        base.clone()
    } else {
        let fresh = LatentStructure::fresh(config);
        if eps == 1.0 {
            fresh
        } else {
            base.blend(&fresh, eps)
        }
    };
    finish(structure, config)
}

fn finish(structure: LatentStructure, config: &SyntheticMarketConfig) -> Result<SyntheticMarket> {
    let sessions = structure.sample_sessions(config)?;
    let dataset = MarketDataset::new(
        config.market_id.clone(),
        sessions,
        IdMap::identity(config.n_x),
    )?;
    Ok(SyntheticMarket {
        dataset,
        structure,
        config: config.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub config: SyntheticMarketConfig,
    /// Perturbation relative to a base market, when derived.
    pub perturbation: Option<f64>,
    pub base_hash: Option<String>,
    pub latent_hash: String,
    pub sessions_hash: String,
    pub n_sessions: usize,
}

/// Writes `<id>.csv` (native format) and `<id>.manifest.json` into `dir`.
pub fn write_market(
    dir: &Path,
    market: &SyntheticMarket,
    perturbation: Option<(f64, &LatentStructure)>,
) -> Result<SyntheticManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let id = &market.config.market_id;
    write_native_csv(
        &dir.join(format!("{id}.csv")),
        &market.dataset.sessions,
        &market.dataset.id_map,
    )?;
    let manifest = SyntheticManifest {
        config: market.config.clone(),
        perturbation: perturbation.map(|(e, _)| e),
        base_hash: perturbation.map(|(_, b)| b.hash()),
        latent_hash: market.structure.hash(),
        sessions_hash: crate::dataset::content_hash(&market.dataset.sessions),
        n_sessions: market.dataset.sessions.len(),
    };
    let path = dir.join(format!("{id}.manifest.json"));
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(manifest)
}
