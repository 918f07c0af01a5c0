//! Local-distribution-aware search by iterative query-set expansion.
//!
//! Each round accepts the candidate(s) minimizing
//!
//! ```text
//! d(query, c) + sum_{j=1..|accepted|} lambda^j * d(dp_j, c)
//! ```
//!
//! where `dp_j` is the j-th accepted neighbour. Neighbours found early carry
//! more weight than later ones when `lambda < 1`; `lambda = 0` degenerates to
//! plain top-k and `lambda = 1` weighs every member of the query set equally.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embedding::{distance, raw_distance, Embedding, Metric};
use crate::error::{Error, Result};
use crate::store::{RankedHit, VectorStore};

pub const DEFAULT_LAMBDA: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalSearchParams {
    pub k: usize,
    pub lambda: f64,
    pub batch_size: usize,
    pub metric: Metric,
}

impl LocalSearchParams {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            lambda: DEFAULT_LAMBDA,
            batch_size: 1,
            metric: Metric::Euclidean,
        }
    }

    pub fn lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.batch_size == 0 || self.batch_size > self.k.max(1) {
            return Err(Error::InvalidParameter(format!(
                "batch_size must lie in [1, k = {}], got {}",
                self.k, self.batch_size
            )));
        }
        Ok(())
    }
}

/// The original query plus the neighbours accepted so far, in acceptance order.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    original: Embedding,
    accepted: Vec<(u64, Embedding)>,
}

impl QuerySet {
    pub fn new(original: Embedding) -> Self {
        Self {
            original,
            accepted: Vec::new(),
        }
    }

    pub fn push(&mut self, id: u64, embedding: Embedding) -> Result<()> {
        embedding.check_dim(self.original.dim())?;
        if self.accepted.iter().any(|(a, _)| *a == id) {
            return Err(Error::DuplicateId(id));
        }
        self.accepted.push((id, embedding));
        Ok(())
    }

    pub fn original(&self) -> &Embedding {
        &self.original
    }

    /// Accepted neighbours; position `j` in the decay is index + 1.
    pub fn accepted(&self) -> &[(u64, Embedding)] {
        &self.accepted
    }
}

/// Decayed distance of `candidate` to the whole query set.
pub fn objective_score(
    qs: &QuerySet,
    candidate: &Embedding,
    lambda: f64,
    metric: Metric,
) -> Result<f64> {
    let mut score = distance(&qs.original, candidate, metric)?;
    for (j, (_, dp)) in qs.accepted.iter().enumerate() {
        let weight = decay(lambda, j + 1);
        if weight != 0.0 {
            score += weight * distance(dp, candidate, metric)?;
        }
    }
    Ok(score)
}

#[inline]
fn decay(lambda: f64, position: usize) -> f64 {
    lambda.powi(position as i32)
}

/// Anything the iterative ranker can draw candidates from.
pub(crate) trait CandidatePool {
    fn len(&self) -> usize;
    fn id(&self, i: usize) -> u64;
    fn query_distance(&self, i: usize) -> f64;
    /// Distance from accepted item `from` to candidate `to`.
    fn pair_distance(&self, from: usize, to: usize) -> f64;
}

/// Incremental form of the greedy: running objective per live candidate.
pub(crate) struct IterativeRanker<'a, P: CandidatePool> {
    pool: &'a P,
    lambda: f64,
    objective: Vec<f64>,
    live: Vec<bool>,
    live_count: usize,
    accepted: usize,
}

impl<'a, P: CandidatePool> IterativeRanker<'a, P> {
    pub(crate) fn new(pool: &'a P, lambda: f64) -> Self {
        let n = pool.len();
        Self {
            pool,
            lambda,
            objective: (0..n).map(|i| pool.query_distance(i)).collect(),
            live: vec![true; n],
            live_count: n,
            accepted: 0,
        }
    }

    /// Drops a candidate without adding it to the query set.
    pub(crate) fn exclude(&mut self, i: usize) {
        if std::mem::replace(&mut self.live[i], false) {
            self.live_count -= 1;
        }
    }

    pub(crate) fn is_live(&self, i: usize) -> bool {
        self.live[i]
    }

    /// Scores every live candidate against the current query set, takes the
    /// best `batch` and appends them to the query set in score order.
    pub(crate) fn next_batch(&mut self, batch: usize) -> Vec<(usize, f64)> {
        let pool = self.pool;
        let order = |&a: &usize, &b: &usize| {
            self.objective[a]
                .partial_cmp(&self.objective[b])
                .unwrap_or(Ordering::Equal)
                .then(pool.id(a).cmp(&pool.id(b)))
        };
        let mut live: Vec<usize> = (0..self.live.len()).filter(|&i| self.live[i]).collect();
        let take = batch.min(live.len());
        if take == 0 {
            return Vec::new();
        }
        if take < live.len() {
            live.select_nth_unstable_by(take - 1, order);
            live.truncate(take);
        }
        live.sort_by(order);
        let picked: Vec<(usize, f64)> = live.iter().map(|&i| (i, self.objective[i])).collect();
        for &(i, _) in &picked {
            self.exclude(i);
        }
        for &(i, _) in &picked {
            self.accepted += 1;
            let weight = decay(self.lambda, self.accepted);
            if weight == 0.0 {
                continue;
            }
            for c in 0..self.objective.len() {
                if self.live[c] {
                    self.objective[c] += weight * pool.pair_distance(i, c);
                }
            }
        }
        picked
    }
}

struct StorePool<'a> {
    store: &'a VectorStore,
    query: &'a Embedding,
    metric: Metric,
}

impl CandidatePool for StorePool<'_> {
    fn len(&self) -> usize {
        self.store.len()
    }

    fn id(&self, i: usize) -> u64 {
        self.store.items()[i].id
    }

    fn query_distance(&self, i: usize) -> f64 {
        raw_distance(
            self.query.as_slice(),
            self.store.items()[i].embedding.as_slice(),
            self.metric,
        )
    }

    fn pair_distance(&self, from: usize, to: usize) -> f64 {
        let items = self.store.items();
        raw_distance(
            items[from].embedding.as_slice(),
            items[to].embedding.as_slice(),
            self.metric,
        )
    }
}

/// Greedy query-set expansion: `ceil(k / batch_size)` rounds, `k` hits.
///
/// Each hit's score is its objective value in the round it was accepted.
pub fn iterative_topk(
    store: &VectorStore,
    query: &Embedding,
    params: &LocalSearchParams,
) -> Result<Vec<RankedHit>> {
    params.validate()?;
    store.check_k(params.k)?;
    query.check_dim(store.dim())?;
    let pool = StorePool {
        store,
        query,
        metric: params.metric,
    };
    let mut ranker = IterativeRanker::new(&pool, params.lambda);
    let mut hits = Vec::with_capacity(params.k);
    while hits.len() < params.k {
        let want = params.batch_size.min(params.k - hits.len());
        hits.extend(
            ranker
                .next_batch(want)
                .into_iter()
                .map(|(i, s)| RankedHit::new(pool.id(i), s)),
        );
    }
    Ok(hits)
}

/// Fraction of hits whose class label equals `query_class`.
pub fn cluster_purity(hits: &[RankedHit], store: &VectorStore, query_class: &str) -> f64 {
    if hits.is_empty() {
        return 0.0;
    }
    let matching = hits
        .iter()
        .filter(|h| store.get(h.id).and_then(|it| it.class_label()) == Some(query_class))
        .count();
    matching as f64 / hits.len() as f64
}
