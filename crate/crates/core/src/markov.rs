//! First-order Markov chain baseline with random-walk recommendations.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ItemId, Session};
use crate::error::{Error, Result};
use crate::metrics::Recommender;

pub const DEFAULT_WALKS: usize = 500;
pub const WALK_STEPS: usize = 2;

/// Observed successors of one item.
#[derive(Clone, Debug, Default, PartialEq)]
struct Row {
    targets: Vec<u32>,
    /// Running sum of transition counts, aligned with `targets`.
    cumulative: Vec<u64>,
}

impl Row {
    fn total(&self) -> u64 {
        self.cumulative.last().copied().unwrap_or(0)
    }

    fn count(&self, k: usize) -> u64 {
        self.cumulative[k] - if k == 0 { 0 } else { self.cumulative[k - 1] }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Option<u32> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        let r = rng.random_range(0..total);
        let k = self.cumulative.partition_point(|&c| c <= r);
        Some(self.targets[k])
    }
}

/// Maximum-likelihood transition probabilities, stored sparsely.
///
/// Rows without observations are terminal (all zero).
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    rows: Vec<Row>,
}

impl TransitionMatrix {
    pub fn n_x(&self) -> usize {
        self.rows.len()
    }

    pub fn prob(&self, from: ItemId, to: ItemId) -> f64 {
        let row = &self.rows[from.index()];
        match row.targets.binary_search(&to.0) {
            Ok(k) => row.count(k) as f64 / row.total() as f64,
            Err(_) => 0.0,
        }
    }

    /// Non-zero entries of row `from` as `(to, probability)`, ascending `to`.
    pub fn row(&self, from: ItemId) -> Vec<(ItemId, f64)> {
        let row = &self.rows[from.index()];
        let total = row.total() as f64;
        (0..row.targets.len())
            .map(|k| (ItemId(row.targets[k]), row.count(k) as f64 / total))
            .collect()
    }

    pub fn is_terminal(&self, item: ItemId) -> bool {
        self.rows[item.index()].total() == 0
    }

    /// Exports the non-zero entries as CSV `from,to,prob`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f =
            File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = BufWriter::new(f);
        let io = |e| Error::io(format!("writing {}", path.display()), e);
        writeln!(w, "from,to,prob").map_err(io)?;
        for i in 0..self.rows.len() {
            for (to, p) in self.row(ItemId(i as u32)) {
                writeln!(w, "{i},{to},{p}").map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

/// Counts consecutive pairs across all sessions and normalizes each row.
pub fn estimate_transitions(sessions: &[Session], n_x: usize) -> Result<TransitionMatrix> {
    let mut counts: Vec<BTreeMap<u32, u64>> = vec![BTreeMap::new(); n_x];
    for s in sessions {
        for pair in s.items().windows(2) {
            let (a, b) = (pair[0], pair[1]);
            for x in [a, b] {
                if x.index() >= n_x {
                    return Err(Error::Domain {
                        index: x.index(),
                        catalog_size: n_x,
                    });
                }
            }
            *counts[a.index()].entry(b.0).or_insert(0) += 1;
        }
    }
    let rows = counts
        .into_iter()
        .map(|c| {
            let mut acc = 0;
            let (targets, cumulative) = c
                .into_iter()
                .map(|(t, n)| {
                    acc += n;
                    (t, acc)
                })
                .unzip();
            Row {
                targets,
                cumulative,
            }
        })
        .collect();
    Ok(TransitionMatrix { rows })
}

/// Visit counts of `walks` two-step walks from every cart item.
///
/// States reached at either step are counted. A walk stops early at a
/// terminal row. Each cart position draws from its own RNG stream.
pub fn visit_counts(
    t: &TransitionMatrix,
    cart: &[ItemId],
    walks: usize,
    seed: u64,
) -> Result<HashMap<u32, u64>> {
    let mut visits: HashMap<u32, u64> = HashMap::new();
    for (pos, &start) in cart.iter().enumerate() {
        if start.index() >= t.n_x() {
            return Err(Error::Domain {
                index: start.index(),
                catalog_size: t.n_x(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(pos as u64);
        for _ in 0..walks {
            let mut state = start.0;
            for _ in 0..WALK_STEPS {
                match t.rows[state as usize].sample(&mut rng) {
                    Some(next) => {
                        *visits.entry(next).or_insert(0) += 1;
                        state = next;
                    }
                    None => break,
                }
            }
        }
    }
    Ok(visits)
}

/// Up to `k` most visited items not already in the cart; ties go to the
/// lower index.
pub fn random_walk_recommend(
    t: &TransitionMatrix,
    cart: &[ItemId],
    k: usize,
    walks: usize,
    seed: u64,
) -> Result<Vec<ItemId>> {
    if cart.is_empty() {
        return Err(Error::Argument("cart must not be empty".into()));
    }
    let visits = visit_counts(t, cart, walks, seed)?;
    let mut ranked: Vec<(u32, u64)> = visits
        .into_iter()
        .filter(|(item, _)| !cart.contains(&ItemId(*item)))
        .collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked.into_iter().map(|(i, _)| ItemId(i)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovConfig {
    pub walks: usize,
    pub seed: u64,
}

impl Default for MarkovConfig {
    fn default() -> Self {
        MarkovConfig {
            walks: DEFAULT_WALKS,
            seed: 0,
        }
    }
}

/// The chain as a [`Recommender`]. The walk seed is derived from the base
/// seed and the cart contents, so each prefix gets the same answer no matter
/// when or on which thread it is evaluated.
#[derive(Clone, Debug)]
pub struct MarkovRecommender {
    pub transitions: TransitionMatrix,
    pub config: MarkovConfig,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn cart_seed(seed: u64, cart: &[ItemId]) -> u64 {
    cart.iter()
        .fold(splitmix(seed), |h, item| splitmix(h ^ u64::from(item.0)))
}

impl Recommender for MarkovRecommender {
    fn recommend(&self, prefix: &[ItemId], k: usize) -> Result<Vec<ItemId>> {
        let seed = cart_seed(self.config.seed, prefix);
        random_walk_recommend(&self.transitions, prefix, k, self.config.walks, seed)
    }
}
