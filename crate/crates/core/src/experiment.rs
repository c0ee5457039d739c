//! Experiment protocols: data-size ablation, cross-market transfer and the
//! market similarity study.
//!
//! Results carry everything needed to rerun them and nothing that varies
//! between runs; wall-clock times are returned alongside, never inside.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    compute_popularity, content_hash, partition, DataPartition, IdMap, MarketDataset, Session,
    NUM_BUCKETS,
};
use crate::error::{Error, Result};
use crate::markov::{estimate_transitions, MarkovConfig, MarkovRecommender};
use crate::metrics::{evaluate, MetricsReport, Recommender, DEFAULT_K};
use crate::nn::{train, LossKind, LstmRecommender, TrainConfig};
use crate::similarity::{
    global_embedding, market_centroid, similarity_matrix, union_id_map, SimilarityMatrix,
    DEFAULT_CENTROID_SESSIONS,
};

/// Share of the training data, in tenths (`1..=10`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Fraction(u8);

impl Fraction {
    pub fn from_tenths(tenths: u8) -> Result<Self> {
        if (1..=NUM_BUCKETS as u8).contains(&tenths) {
            Ok(Fraction(tenths))
        } else {
            Err(Error::Config(format!(
                "fraction must be one of 0.1, 0.2, ..., 1.0 (got {tenths} tenths)"
            )))
        }
    }

    pub fn tenths(self) -> usize {
        self.0 as usize
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 10.0
    }

    /// `0.1, 0.2, ..., 1.0`
    pub fn all() -> Vec<Fraction> {
        (1..=NUM_BUCKETS as u8).map(Fraction).collect()
    }
}

impl TryFrom<f64> for Fraction {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        let t = (v * 10.0).round();
        if !v.is_finite() || (v * 10.0 - t).abs() > 1e-9 || !(1.0..=10.0).contains(&t) {
            return Err(Error::Config(format!(
                "fraction {v} is not a multiple of 0.1 in [0.1, 1.0]"
            )));
        }
        Ok(Fraction(t as u8))
    }
}

impl From<Fraction> for f64 {
    fn from(f: Fraction) -> f64 {
        f.value()
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.value())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LstmCe,
    LstmBpr,
    Markov,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::LstmCe => "lstm-ce",
            ModelKind::LstmBpr => "lstm-bpr",
            ModelKind::Markov => "markov",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm-ce" => Ok(ModelKind::LstmCe),
            "lstm-bpr" => Ok(ModelKind::LstmBpr),
            "markov" => Ok(ModelKind::Markov),
            other => Err(Error::Config(format!(
                "unknown model {other:?} (expected lstm-ce, lstm-bpr or markov)"
            ))),
        }
    }
}

/// How to train and score one model per fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    pub model: ModelKind,
    pub fractions: Vec<Fraction>,
    pub k: usize,
    /// Seeds the validation/bucket split.
    pub partition_seed: u64,
    /// Network settings; the loss is taken from `model`.
    pub train: TrainConfig,
    pub markov: MarkovConfig,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings {
            model: ModelKind::LstmCe,
            fractions: Fraction::all(),
            k: DEFAULT_K,
            partition_seed: 0,
            train: TrainConfig::default(),
            markov: MarkovConfig::default(),
        }
    }
}

impl AblationSettings {
    pub fn validate(&self, n_x: usize) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::Config("fractions must not be empty".into()));
        }
        if self.fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("fractions must be strictly ascending".into()));
        }
        if self.k == 0 || self.k > n_x {
            return Err(Error::Config(format!(
                "k = {} must be in 1..={n_x}",
                self.k
            )));
        }
        match self.model {
            ModelKind::Markov if self.markov.walks == 0 => {
                Err(Error::Config("markov.walks must be at least 1".into()))
            }
            ModelKind::Markov => Ok(()),
            _ => self.train_config().validate(n_x),
        }
    }

    /// The network configuration with the loss implied by `model`.
    pub fn train_config(&self) -> TrainConfig {
        let loss = match self.model {
            ModelKind::LstmBpr => LossKind::Bpr,
            _ => LossKind::CrossEntropy,
        };
        TrainConfig {
            loss,
            ..self.train.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub fraction: Fraction,
    pub n_train_sessions: usize,
    pub metrics: MetricsReport,
    /// Content hash of the validation set this row was scored on.
    pub validation_hash: String,
    /// Mean per-step training loss after each epoch (empty for the Markov model).
    pub loss_trace: Vec<f64>,
}

/// One curve: metrics of a freshly trained model per training fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    /// Market the models were trained on.
    pub train_market: String,
    /// Market whose validation set scored them.
    pub eval_market: String,
    pub settings: AblationSettings,
    pub dataset_hash: String,
    pub rows: Vec<AblationRow>,
}

/// A result plus the wall-clock seconds spent on each row.
#[derive(Clone, Debug)]
pub struct Timed<T> {
    pub result: T,
    pub wall_clock_secs: Vec<f64>,
}

/// Validation data and the popularity used for novelty on it.
struct EvalSet<'a> {
    market_id: &'a str,
    validation: &'a [Session],
    popularity: Vec<f64>,
}

impl<'a> EvalSet<'a> {
    fn new(market: &'a MarketDataset, split: &'a DataPartition) -> Result<Self> {
        Ok(EvalSet {
            market_id: &market.market_id,
            validation: &split.validation,
            popularity: compute_popularity(&split.training(), market.catalog_size)?,
        })
    }
}

fn curve(
    train_market: &MarketDataset,
    train_split: &DataPartition,
    eval: &EvalSet<'_>,
    settings: &AblationSettings,
) -> Result<Timed<AblationResult>> {
    let n_x = train_market.catalog_size;
    settings.validate(n_x)?;
    let validation_hash = content_hash(eval.validation);
    let mut rows = Vec::with_capacity(settings.fractions.len());
    let mut secs = Vec::with_capacity(settings.fractions.len());
    for &fraction in &settings.fractions {
        let start = Instant::now();
        let sessions = train_split.cumulative(fraction.tenths());
        let (metrics, loss_trace) = match settings.model {
            ModelKind::Markov => {
                let rec = MarkovRecommender {
                    transitions: estimate_transitions(&sessions, n_x)?,
                    config: settings.markov,
                };
                (score(&rec, eval, settings.k)?, Vec::new())
            }
            ModelKind::LstmCe | ModelKind::LstmBpr => {
                let outcome = train(&sessions, n_x, &settings.train_config())?;
                let rec = LstmRecommender {
                    params: &outcome.params,
                };
                (score(&rec, eval, settings.k)?, outcome.loss_trace)
            }
        };
        rows.push(AblationRow {
            fraction,
            n_train_sessions: sessions.len(),
            metrics,
            validation_hash: validation_hash.clone(),
            loss_trace,
        });
        secs.push(start.elapsed().as_secs_f64());
    }
    Ok(Timed {
        result: AblationResult {
            train_market: train_market.market_id.clone(),
            eval_market: eval.market_id.to_string(),
            settings: settings.clone(),
            dataset_hash: content_hash(&train_market.sessions),
            rows,
        },
        wall_clock_secs: secs,
    })
}

fn score<R: Recommender>(rec: &R, eval: &EvalSet<'_>, k: usize) -> Result<MetricsReport> {
    evaluate(rec, eval.validation, &eval.popularity, k)
}

/// Partitions `market` once, then trains a fresh model on each cumulative
/// fraction and scores it on the fixed validation set.
///
/// Novelty uses the popularity of the full training split, so it is
/// comparable across fractions.
pub fn run_ablation(
    market: &MarketDataset,
    settings: &AblationSettings,
) -> Result<Timed<AblationResult>> {
    settings.validate(market.catalog_size)?;
    let split = partition(&market.sessions, settings.partition_seed)?;
    let eval = EvalSet::new(market, &split)?;
    curve(market, &split, &eval, settings)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub target: String,
    /// Trained and validated on the target.
    pub baseline: AblationResult,
    /// Trained on each source, validated on the target.
    pub sources: Vec<AblationResult>,
}

/// Trains on each source market and validates on the target's validation
/// split, next to the target-on-target baseline.
///
/// Every market must use the target's id-map; see [`align_markets`].
pub fn run_transfer(
    target: &MarketDataset,
    sources: &[MarketDataset],
    settings: &AblationSettings,
) -> Result<Timed<TransferResult>> {
    for s in sources {
        if s.id_map != target.id_map {
            return Err(Error::Config(format!(
                "market {} does not share the id-map of target {}",
                s.market_id, target.market_id
            )));
        }
    }
    settings.validate(target.catalog_size)?;
    let target_split = partition(&target.sessions, settings.partition_seed)?;
    let eval = EvalSet::new(target, &target_split)?;

    let baseline = curve(target, &target_split, &eval, settings)?;
    let mut secs = baseline.wall_clock_secs;
    let mut results = Vec::with_capacity(sources.len());
    for source in sources {
        let split = partition(&source.sessions, settings.partition_seed)?;
        let timed = curve(source, &split, &eval, settings)?;
        secs.extend(timed.wall_clock_secs);
        results.push(timed.result);
    }
    Ok(Timed {
        result: TransferResult {
            target: target.market_id.clone(),
            baseline: baseline.result,
            sources: results,
        },
        wall_clock_secs: secs,
    })
}

/// Re-expresses every market over the union of their catalogs, so models
/// trained on one can be scored on another.
pub fn align_markets(markets: &[MarketDataset]) -> Result<Vec<MarketDataset>> {
    let union: IdMap = union_id_map(markets);
    markets
        .iter()
        .map(|m| {
            let sessions = m
                .sessions
                .iter()
                .map(|s| {
                    let items = s
                        .items()
                        .iter()
                        .map(|&i| {
                            let ext = m.id_map.external(i).ok_or(Error::Domain {
                                index: i.index(),
                                catalog_size: m.id_map.len(),
                            })?;
                            union.get(ext).ok_or_else(|| {
                                Error::Config(format!("item {ext} missing from the union id-map"))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Session::new(items)
                })
                .collect::<Result<Vec<_>>>()?;
            MarketDataset::new(m.market_id.clone(), sessions, union.clone())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilaritySettings {
    /// Sessions averaged into each market centroid.
    pub centroid_sessions: usize,
    /// Seeds the training split of each market.
    pub partition_seed: u64,
    /// Seeds the centroid session sample.
    pub centroid_seed: u64,
    /// Network settings for the shared embedding.
    pub train: TrainConfig,
}

impl Default for SimilaritySettings {
    fn default() -> Self {
        SimilaritySettings {
            centroid_sessions: DEFAULT_CENTROID_SESSIONS,
            partition_seed: 0,
            centroid_seed: 0,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStudy {
    pub settings: SimilaritySettings,
    pub embedding_hash: String,
    /// Sessions actually averaged per market, in matrix order.
    pub centroid_sizes: Vec<usize>,
    pub matrix: SimilarityMatrix,
}

/// Trains one embedding on the pooled training splits and compares the
/// markets' centroids pairwise.
pub fn run_similarity_study(
    markets: &[MarketDataset],
    settings: &SimilaritySettings,
) -> Result<Timed<SimilarityStudy>> {
    if markets.len() < 2 {
        return Err(Error::Config(format!(
            "similarity needs at least two markets, got {}",
            markets.len()
        )));
    }
    if settings.centroid_sessions == 0 {
        return Err(Error::Config("centroid_sessions must be at least 1".into()));
    }
    let start = Instant::now();
    let training = markets
        .iter()
        .map(|m| m.with_sessions(partition(&m.sessions, settings.partition_seed)?.training()))
        .collect::<Result<Vec<_>>>()?;
    let embedding = global_embedding(&training, &settings.train)?;
    let centroids = training
        .iter()
        .map(|m| {
            market_centroid(
                &embedding,
                m,
                settings.centroid_sessions,
                settings.centroid_seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let matrix = similarity_matrix(&centroids)?;
    Ok(Timed {
        result: SimilarityStudy {
            settings: settings.clone(),
            embedding_hash: embedding.hash,
            centroid_sizes: centroids.iter().map(|c| c.n_used).collect(),
            matrix,
        },
        wall_clock_secs: vec![start.elapsed().as_secs_f64()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_parsing() {
        assert_eq!(Fraction::try_from(0.3).unwrap().tenths(), 3);
        assert_eq!(Fraction::try_from(1.0).unwrap().tenths(), 10);
        assert_eq!(Fraction::try_from(0.1 + 0.2).unwrap().tenths(), 3);
        for bad in [0.0, 0.15, 1.1, -0.1, f64::NAN] {
            assert!(Fraction::try_from(bad).is_err(), "{bad}");
        }
        assert!(Fraction::from_tenths(0).is_err());
        let all = Fraction::all();
        assert_eq!(all.len(), 10);
        assert_eq!(all[4].to_string(), "0.5");
        let json = serde_json::to_string(&all[..3]).unwrap();
        assert_eq!(json, "[0.1,0.2,0.3]");
        assert_eq!(
            serde_json::from_str::<Vec<Fraction>>(&json).unwrap(),
            all[..3]
        );
    }

    #[test]
    fn model_kind_names() {
        for m in [ModelKind::LstmCe, ModelKind::LstmBpr, ModelKind::Markov] {
            assert_eq!(m.as_str().parse::<ModelKind>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("gru".parse::<ModelKind>().is_err());
    }

    #[test]
    fn settings_validation() {
        let ok = AblationSettings::default();
        ok.validate(10).unwrap();
        let mut s = ok.clone();
        s.fractions.clear();
        assert!(matches!(s.validate(10), Err(Error::Config(_))));
        let mut s = ok.clone();
        s.fractions = vec![Fraction(3), Fraction(2)];
        assert!(s.validate(10).is_err());
        let mut s = ok.clone();
        s.k = 11;
        assert!(s.validate(10).is_err());
        let mut s = ok;
        s.model = ModelKind::LstmBpr;
        assert_eq!(s.train_config().loss, LossKind::Bpr);
        // default negative count exceeds this catalog
        assert!(s.validate(10).is_err());
    }
}
