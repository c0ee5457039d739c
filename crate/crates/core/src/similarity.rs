//! Market similarity from a shared item embedding.
//!
//! A purchase is represented by concatenating the embeddings of its items
//! (zero blocks past the end of the session), a market by the mean of such
//! vectors, and two markets are compared by the cosine of their means.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{IdMap, ItemId, MarketDataset, Session, MAX_SESSION_LEN};
use crate::error::{Error, Result};
use crate::nn::{train, Matrix, TrainConfig};

pub const DEFAULT_CENTROID_SESSIONS: usize = 850;

/// Item embedding trained on the pooled sessions of several markets.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalEmbedding {
    /// Union catalog over all markets' external ids.
    pub id_map: IdMap,
    /// `n1 x n_union`
    pub embedding: Matrix,
    /// Identifies this embedding; centroids from different embeddings are not comparable.
    pub hash: String,
}

impl GlobalEmbedding {
    pub fn from_matrix(id_map: IdMap, embedding: Matrix) -> Self {
        let mut h = Sha256::new();
        h.update((embedding.rows as u64).to_le_bytes());
        h.update((embedding.cols as u64).to_le_bytes());
        for v in &embedding.data {
            h.update(v.to_le_bytes());
        }
        GlobalEmbedding {
            id_map,
            embedding,
            hash: hex::encode(h.finalize()),
        }
    }

    pub fn dim(&self) -> usize {
        self.embedding.rows
    }

    /// A market's sessions re-indexed into the union catalog.
    pub fn remap(&self, market: &MarketDataset) -> Result<Vec<Session>> {
        let lookup: Vec<Option<ItemId>> = market
            .id_map
            .externals()
            .iter()
            .map(|e| self.id_map.get(e))
            .collect();
        let mut out = Vec::with_capacity(market.sessions.len());
        for s in &market.sessions {
            for item in s.items() {
                if lookup.get(item.index()).copied().flatten().is_none() {
                    return Err(Error::Config(format!(
                        "item {item} of market {} is not in the shared catalog",
                        market.market_id
                    )));
                }
            }
            out.push(s.map_items(|i| lookup[i.index()].expect("checked above")));
        }
        Ok(out)
    }
}

/// Union of the markets' catalogs, in market order then index order.
pub fn union_id_map(markets: &[MarketDataset]) -> IdMap {
    let mut union = IdMap::new();
    for m in markets {
        for ext in m.id_map.externals() {
            union.get_or_insert(ext);
        }
    }
    union
}

/// Trains the network on the pooled sessions and keeps only the embedding.
pub fn global_embedding(
    markets: &[MarketDataset],
    config: &TrainConfig,
) -> Result<GlobalEmbedding> {
    if markets.is_empty() {
        return Err(Error::Size("need at least one market".into()));
    }
    let id_map = union_id_map(markets);
    let placeholder = GlobalEmbedding {
        id_map,
        embedding: Matrix::zeros(0, 0),
        hash: String::new(),
    };
    let mut pooled = Vec::new();
    for m in markets {
        pooled.extend(placeholder.remap(m)?);
    }
    if pooled.is_empty() {
        return Err(Error::Size("pooled market data is empty".into()));
    }
    let outcome = train(&pooled, placeholder.id_map.len(), config)?;
    Ok(GlobalEmbedding::from_matrix(
        placeholder.id_map,
        outcome.params.embedding,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PurchaseVector {
    pub h: Vec<f64>,
}

/// Concatenated item embeddings of `session`, zero-padded to 64 blocks.
pub fn purchase_vector(embedding: &Matrix, session: &Session) -> Result<PurchaseVector> {
    let n1 = embedding.rows;
    let n = embedding.cols;
    let mut h = vec![0.0; MAX_SESSION_LEN * n1];
    for (t, item) in session.items().iter().enumerate() {
        let j = item.index();
        if j >= n {
            return Err(Error::Domain {
                index: j,
                catalog_size: n,
            });
        }
        for r in 0..n1 {
            h[t * n1 + r] = embedding.data[r * n + j];
        }
    }
    Ok(PurchaseVector { h })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketCentroid {
    pub market_id: String,
    pub p_bar: Vec<f64>,
    pub n_used: usize,
    pub embedding_hash: String,
}

/// Mean purchase vector of `n` sessions sampled without replacement (all
/// sessions when the market has fewer).
pub fn market_centroid(
    embedding: &GlobalEmbedding,
    market: &MarketDataset,
    n: usize,
    seed: u64,
) -> Result<MarketCentroid> {
    let sessions = embedding.remap(market)?;
    if sessions.is_empty() || n == 0 {
        return Err(Error::Size(format!(
            "market {} has no sessions to average",
            market.market_id
        )));
    }
    let n_used = n.min(sessions.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, sessions.len(), n_used);
    let mut p_bar = vec![0.0; MAX_SESSION_LEN * embedding.dim()];
    for i in picks.iter() {
        let v = purchase_vector(&embedding.embedding, &sessions[i])?;
        for (acc, x) in p_bar.iter_mut().zip(&v.h) {
            *acc += x;
        }
    }
    p_bar.iter_mut().for_each(|x| *x /= n_used as f64);
    Ok(MarketCentroid {
        market_id: market.market_id.clone(),
        p_bar,
        n_used,
        embedding_hash: embedding.hash.clone(),
    })
}

/// Cosine of the angle between two vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "vector lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("zero-norm vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &MarketCentroid, b: &MarketCentroid) -> Result<f64> {
    if a.embedding_hash != b.embedding_hash {
        return Err(Error::Config(format!(
            "centroids of {} and {} come from different embeddings",
            a.market_id, b.market_id
        )));
    }
    cosine(&a.p_bar, &b.p_bar).map_err(|e| match e {
        Error::Degenerate(_) => Error::Degenerate(format!(
            "zero centroid among {} and {}",
            a.market_id, b.market_id
        )),
        other => other,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub market_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.market_ids.iter().position(|m| m == a)?;
        let j = self.market_ids.iter().position(|m| m == b)?;
        Some(self.values[i][j])
    }

    /// CSV with market ids as header row and first column.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f =
            File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(f));
        let mut header = vec![String::from("market")];
        header.extend(self.market_ids.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.market_ids.iter().zip(&self.values) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.into_inner()
            .map_err(|e| Error::io(format!("writing {}", path.display()), e.into_error()))?
            .flush()
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Pairwise cosine similarities; symmetric with unit diagonal.
pub fn similarity_matrix(centroids: &[MarketCentroid]) -> Result<SimilarityMatrix> {
    if centroids.len() < 2 {
        return Err(Error::Size("similarity needs at least two markets".into()));
    }
    let n = centroids.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        cosine_similarity(&centroids[i], &centroids[i])?;
        values[i][i] = 1.0;
        for j in i + 1..n {
            let s = cosine_similarity(&centroids[i], &centroids[j])?;
            values[i][j] = s;
            values[j][i] = s;
        }
    }
    Ok(SimilarityMatrix {
        market_ids: centroids.iter().map(|c| c.market_id.clone()).collect(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn centroid(id: &str, v: Vec<f64>) -> MarketCentroid {
        MarketCentroid {
            market_id: id.into(),
            p_bar: v,
            n_used: 1,
            embedding_hash: "e".into(),
        }
    }

    fn tiny_embedding() -> GlobalEmbedding {
        // n1 = 2, three items
        GlobalEmbedding::from_matrix(
            IdMap::identity(3),
            Matrix {
                rows: 2,
                cols: 3,
                data: vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0],
            },
        )
    }

    #[test]
    fn cosine_examples() {
        let a = centroid("a", vec![1.0, 0.0]);
        let b = centroid("b", vec![1.0, 1.0]);
        let c = centroid("c", vec![0.0, 3.0]);
        assert!(
            (cosine_similarity(&a, &b).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12
        );
        assert_eq!(cosine_similarity(&a, &c).unwrap(), 0.0);
        assert!((cosine_similarity(&b, &b).unwrap() - 1.0).abs() < 1e-12);
        let z = centroid("z", vec![0.0, 0.0]);
        assert!(matches!(
            cosine_similarity(&a, &z),
            Err(Error::Degenerate(_))
        ));
        let mut other = b.clone();
        other.embedding_hash = "f".into();
        assert!(matches!(
            cosine_similarity(&a, &other),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn purchase_vector_blocks() {
        let e = tiny_embedding();
        let s = Session::from_indices([2, 0]).unwrap();
        let v = purchase_vector(&e.embedding, &s).unwrap();
        assert_eq!(v.h.len(), 128);
        assert_eq!(&v.h[..4], &[3.0, 0.0, 1.0, -1.0]);
        assert!(v.h[4..].iter().all(|&x| x == 0.0));

        let long = Session::from_indices((0..64).map(|t| t % 3)).unwrap();
        let v = purchase_vector(&e.embedding, &long).unwrap();
        for t in 0..64 {
            let j = t % 3;
            assert_eq!(
                &v.h[2 * t..2 * t + 2],
                &[e.embedding.get(0, j), e.embedding.get(1, j)]
            );
        }

        let zero = Matrix::zeros(2, 3);
        assert!(purchase_vector(&zero, &long)
            .unwrap()
            .h
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn centroid_of_one_and_of_duplicates() {
        let e = tiny_embedding();
        let s1 = Session::from_indices([0, 1]).unwrap();
        let s2 = Session::from_indices([2, 2, 1]).unwrap();
        let m = MarketDataset::new("m", vec![s1.clone()], IdMap::identity(3)).unwrap();
        let c = market_centroid(&e, &m, 1, 0).unwrap();
        assert_eq!(c.p_bar, purchase_vector(&e.embedding, &s1).unwrap().h);

        // s1 twice, s2 once: weighted mean with multiplicities 2 and 1
        let m = MarketDataset::new(
            "m",
            vec![s1.clone(), s2.clone(), s1.clone()],
            IdMap::identity(3),
        )
        .unwrap();
        let c = market_centroid(&e, &m, 850, 4).unwrap();
        assert_eq!(c.n_used, 3);
        let v1 = purchase_vector(&e.embedding, &s1).unwrap().h;
        let v2 = purchase_vector(&e.embedding, &s2).unwrap().h;
        for k in 0..v1.len() {
            assert!((c.p_bar[k] - (2.0 * v1[k] + v2[k]) / 3.0).abs() < 1e-12);
        }
        assert_eq!(c, market_centroid(&e, &m, 850, 4).unwrap());

        let empty = MarketDataset::new("e", vec![], IdMap::identity(3)).unwrap();
        assert!(matches!(
            market_centroid(&e, &empty, 10, 0),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn shared_items_get_one_union_index() {
        let mut ma = IdMap::new();
        for x in ["p", "q", "r"] {
            ma.get_or_insert(x);
        }
        let mut mb = IdMap::new();
        for x in ["s", "q"] {
            mb.get_or_insert(x);
        }
        let a = MarketDataset::new("a", vec![Session::from_indices([0, 1]).unwrap()], ma).unwrap();
        let b = MarketDataset::new("b", vec![Session::from_indices([1, 0]).unwrap()], mb).unwrap();
        let union = union_id_map(&[a.clone(), b.clone()]);
        assert_eq!(union.len(), 4);
        let e = GlobalEmbedding::from_matrix(union, Matrix::zeros(2, 4));
        // "q" is index 1 in both markets' union view
        assert_eq!(e.remap(&a).unwrap()[0].items(), &[ItemId(0), ItemId(1)]);
        assert_eq!(e.remap(&b).unwrap()[0].items(), &[ItemId(1), ItemId(3)]);
    }

    #[test]
    fn matrix_symmetric_unit_diagonal() {
        let cs = vec![
            centroid("a", vec![1.0, 2.0, 0.5]),
            centroid("b", vec![-0.3, 2.0, 1.0]),
            centroid("c", vec![0.0, 0.1, 9.0]),
        ];
        let m = similarity_matrix(&cs).unwrap();
        for i in 0..3 {
            assert_eq!(m.values[i][i], 1.0);
            for j in 0..3 {
                assert_eq!(m.values[i][j], m.values[j][i]);
            }
        }
        assert!(similarity_matrix(&cs[..1]).is_err());
    }

    proptest! {
        #[test]
        fn cosine_bounds_and_scale_invariance(
            a in prop::collection::vec(-10.0f64..10.0, 5),
            b in prop::collection::vec(-10.0f64..10.0, 5),
            scale in 0.01f64..100.0,
        ) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let s = cosine(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            let scaled: Vec<f64> = a.iter().map(|x| x * scale).collect();
            prop_assert!((cosine(&scaled, &b).unwrap() - s).abs() < 1e-12);
            prop_assert!((cosine(&a, &scaled).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn distinct_sessions_give_distinct_vectors(
            x in prop::collection::vec(0usize..3, 2..6),
            y in prop::collection::vec(0usize..3, 2..6),
        ) {
            // columns of the tiny embedding are distinct and nonzero
            let e = tiny_embedding();
            let sx = Session::from_indices(x.clone()).unwrap();
            let sy = Session::from_indices(y.clone()).unwrap();
            let vx = purchase_vector(&e.embedding, &sx).unwrap();
            let vy = purchase_vector(&e.embedding, &sy).unwrap();
            prop_assert_eq!(x == y, vx == vy);
        }
    }
}
