//! Top-K accuracy, catalog coverage and novelty over next-item predictions.
//!
//! Every position of every validation session is one prediction event: a
//! session of length `L` contributes `L - 1` events.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ItemId, Session};
use crate::error::{Error, Result};

/// Popularity floor used by novelty so never-purchased items stay finite.
pub const NOVELTY_CLAMP: f64 = 1e-6;
pub const DEFAULT_K: usize = 4;

/// Anything that turns a cart prefix into a ranked list of items.
pub trait Recommender: Sync {
    fn recommend(&self, prefix: &[ItemId], k: usize) -> Result<Vec<ItemId>>;

    /// Recommendations after each prefix `x_1..x_t`, `t = 1..L-1`.
    fn recommend_session(&self, session: &Session, k: usize) -> Result<Vec<Vec<ItemId>>> {
        (1..session.len())
            .map(|t| self.recommend(&session.items()[..t], k))
            .collect()
    }
}

impl<F> Recommender for F
where
    F: Fn(&[ItemId], usize) -> Result<Vec<ItemId>> + Sync,
{
    fn recommend(&self, prefix: &[ItemId], k: usize) -> Result<Vec<ItemId>> {
        self(prefix, k)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationEvent {
    pub prefix: Vec<ItemId>,
    pub target: ItemId,
    pub recs: Vec<ItemId>,
}

impl EvaluationEvent {
    pub fn hit(&self) -> bool {
        self.recs.contains(&self.target)
    }
}

/// One event per next-item position of every validation session, in order.
pub fn evaluate_events<R: Recommender + ?Sized>(
    recommender: &R,
    validation: &[Session],
    k: usize,
) -> Result<Vec<EvaluationEvent>> {
    let per_session: Vec<Result<Vec<EvaluationEvent>>> = validation
        .par_iter()
        .map(|s| {
            let recs = recommender.recommend_session(s, k)?;
            if recs.len() != s.len() - 1 {
                return Err(Error::Evaluation(format!(
                    "recommender returned {} lists for {} positions",
                    recs.len(),
                    s.len() - 1
                )));
            }
            Ok(recs
                .into_iter()
                .enumerate()
                .map(|(t, recs)| EvaluationEvent {
                    prefix: s.items()[..=t].to_vec(),
                    target: s.items()[t + 1],
                    recs,
                })
                .collect())
        })
        .collect();
    let mut events = Vec::new();
    for r in per_session {
        events.extend(r?);
    }
    Ok(events)
}

fn require_events(events: &[EvaluationEvent]) -> Result<()> {
    if events.is_empty() {
        Err(Error::Evaluation("no evaluation events".into()))
    } else {
        Ok(())
    }
}

/// Fraction of events whose target is among the recommendations.
pub fn top_k_accuracy(events: &[EvaluationEvent]) -> Result<f64> {
    require_events(events)?;
    let hits = events.iter().filter(|e| e.hit()).count();
    Ok(hits as f64 / events.len() as f64)
}

/// Distinct recommended items over the catalog size.
pub fn catalog_coverage(events: &[EvaluationEvent], n_x: usize) -> Result<f64> {
    require_events(events)?;
    if n_x == 0 {
        return Err(Error::Argument("catalog size must be at least 1".into()));
    }
    let unique: HashSet<ItemId> = events.iter().flat_map(|e| e.recs.iter().copied()).collect();
    Ok(unique.len() as f64 / n_x as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Novelty {
    pub value: f64,
    /// Events that contributed (exactly `k` recommendations).
    pub n_used: usize,
    /// Events skipped because they had fewer than `k` recommendations.
    pub n_excluded: usize,
}

/// Mean negative log-popularity of the recommended items.
pub fn novelty(events: &[EvaluationEvent], popularity: &[f64], k: usize) -> Result<Novelty> {
    require_events(events)?;
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let mut sum = 0.0;
    let mut n_used = 0;
    for e in events.iter().filter(|e| e.recs.len() == k) {
        for r in &e.recs {
            let p = *popularity.get(r.index()).ok_or(Error::Domain {
                index: r.index(),
                catalog_size: popularity.len(),
            })?;
            sum -= p.max(NOVELTY_CLAMP).ln();
        }
        n_used += 1;
    }
    if n_used == 0 {
        return Err(Error::Evaluation(format!(
            "no event carries a full list of {k} recommendations"
        )));
    }
    Ok(Novelty {
        value: sum / (n_used * k) as f64,
        n_used,
        n_excluded: events.len() - n_used,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub top_k_accuracy: f64,
    pub catalog_coverage: f64,
    pub novelty: f64,
    pub k: usize,
    pub n_events: usize,
    pub novelty_excluded: usize,
}

impl MetricsReport {
    pub fn from_events(events: &[EvaluationEvent], popularity: &[f64], k: usize) -> Result<Self> {
        let n_x = popularity.len();
        let nov = novelty(events, popularity, k)?;
        let report = MetricsReport {
            top_k_accuracy: top_k_accuracy(events)?,
            catalog_coverage: catalog_coverage(events, n_x)?,
            novelty: nov.value,
            k,
            n_events: events.len(),
            novelty_excluded: nov.n_excluded,
        };
        if !(report.top_k_accuracy.is_finite()
            && report.catalog_coverage.is_finite()
            && report.novelty.is_finite())
        {
            return Err(Error::Numerical(format!("non-finite metrics {report:?}")));
        }
        Ok(report)
    }
}

/// Events plus the three metrics for a recommender on a validation set.
pub fn evaluate<R: Recommender + ?Sized>(
    recommender: &R,
    validation: &[Session],
    popularity: &[f64],
    k: usize,
) -> Result<MetricsReport> {
    let events = evaluate_events(recommender, validation, k)?;
    MetricsReport::from_events(&events, popularity, k)
}
