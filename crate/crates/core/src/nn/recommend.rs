use std::cell::RefCell;

use crate::dataset::{ItemId, Session};
use crate::error::{Error, Result};
use crate::metrics::Recommender;

use super::forward::{scores_per_step, Workspace};
use super::params::ModelParams;

/// Indices of the `k` largest scores, descending; ties go to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<ItemId>> {
    if k > scores.len() {
        return Err(Error::Argument(format!(
            "k = {k} exceeds catalog size {}",
            scores.len()
        )));
    }
    // (score, index) kept sorted best-first; better = higher score, then lower index
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (i, &s) in scores.iter().enumerate() {
        if best.len() == k {
            match best.last() {
                Some(&(worst, _)) if s > worst => {}
                _ => continue,
            }
        }
        let pos = best.partition_point(|&(b, _)| b >= s);
        best.insert(pos, (s, i));
        best.truncate(k);
    }
    Ok(best.into_iter().map(|(_, i)| ItemId(i as u32)).collect())
}

/// Top-`k` items after running the network over `prefix`.
///
/// Items are ranked on the pre-softmax scores, which order items exactly as
/// the probabilities do without underflow ties.
pub fn recommend(params: &ModelParams, prefix: &[ItemId], k: usize) -> Result<Vec<ItemId>> {
    if prefix.is_empty() {
        return Err(Error::Argument(
            "recommendation needs a non-empty prefix".into(),
        ));
    }
    let n_x = params.dims().n_x;
    if k > n_x {
        return Err(Error::Argument(format!(
            "k = {k} exceeds catalog size {n_x}"
        )));
    }
    let mut ws = Workspace::default();
    let mut scores = Vec::new();
    scores_per_step(params, prefix, &mut ws, &mut scores)?;
    top_k(&scores[(prefix.len() - 1) * n_x..], k)
}

thread_local! {
    static WORKSPACE: RefCell<Workspace> = RefCell::new(Workspace::default());
}

/// Trained network as a [`Recommender`]. Whole sessions are scored with a
/// single forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LstmRecommender<'a> {
    pub params: &'a ModelParams,
}

impl Recommender for LstmRecommender<'_> {
    fn recommend(&self, prefix: &[ItemId], k: usize) -> Result<Vec<ItemId>> {
        recommend(self.params, prefix, k)
    }

    fn recommend_session(&self, session: &Session, k: usize) -> Result<Vec<Vec<ItemId>>> {
        let n_x = self.params.dims().n_x;
        if k > n_x {
            return Err(Error::Argument(format!(
                "k = {k} exceeds catalog size {n_x}"
            )));
        }
        let inputs = &session.items()[..session.len() - 1];
        let mut scores = Vec::new();
        WORKSPACE
            .with(|ws| scores_per_step(self.params, inputs, &mut ws.borrow_mut(), &mut scores))?;
        scores.chunks_exact(n_x).map(|z| top_k(z, k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{init_params, Dims};
    use proptest::prelude::*;

    fn ids(v: &[u32]) -> Vec<ItemId> {
        v.iter().map(|&i| ItemId(i)).collect()
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k(&[0.1, 0.4, 0.2, 0.3], 2).unwrap(), ids(&[1, 3]));
        let all = top_k(&[0.1, 0.4, 0.2, 0.3], 4).unwrap();
        assert_eq!(all, ids(&[1, 3, 2, 0]));
        assert!(top_k(&[0.1, 0.2], 3).is_err());
        assert_eq!(top_k(&[0.5, 0.5, 0.5], 2).unwrap(), ids(&[0, 1]));
    }

    #[test]
    fn tie_at_cutoff_prefers_lower_index() {
        let mut p = ModelParams::zeros(Dims {
            n_x: 7,
            n1: 2,
            n2: 3,
        });
        p.output_bias = vec![0.0, 3.0, 1.0, 0.0, 0.0, 1.0, 0.5];
        assert_eq!(recommend(&p, &ids(&[4]), 2).unwrap(), ids(&[1, 2]));
        assert_eq!(recommend(&p, &ids(&[4]), 3).unwrap(), ids(&[1, 2, 5]));
    }

    #[test]
    fn recommend_errors() {
        let p = init_params(5, 2, 3, 0).unwrap();
        assert!(recommend(&p, &[], 1).is_err());
        assert!(recommend(&p, &ids(&[1]), 6).is_err());
        let mut all = recommend(&p, &ids(&[1, 2]), 5).unwrap();
        all.sort();
        assert_eq!(all, ids(&[0, 1, 2, 3, 4]));
    }

    #[test]
    fn session_path_matches_prefix_path() {
        let p = init_params(30, 4, 6, 8).unwrap();
        let s = Session::from_indices([3, 17, 4, 4, 29, 0]).unwrap();
        let r = LstmRecommender { params: &p };
        let fast = r.recommend_session(&s, 4).unwrap();
        for t in 1..s.len() {
            assert_eq!(fast[t - 1], recommend(&p, &s.items()[..t], 4).unwrap());
        }
    }

    proptest! {
        #[test]
        fn top_k_distinct_and_shift_invariant(
            scores in prop::collection::vec(-5.0f64..5.0, 1..60),
            k in 0usize..60,
            c in -100.0f64..100.0,
        ) {
            let k = k % (scores.len() + 1);
            let r = top_k(&scores, k).unwrap();
            prop_assert_eq!(r.len(), k);
            let mut d = r.clone();
            d.sort();
            d.dedup();
            prop_assert_eq!(d.len(), k);
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            prop_assert_eq!(top_k(&shifted, k).unwrap(), r.clone());
            // brute force: full stable sort
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            let expect: Vec<ItemId> = idx[..k].iter().map(|&i| ItemId(i as u32)).collect();
            prop_assert_eq!(r, expect);
        }
    }
}
