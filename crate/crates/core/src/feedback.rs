//! Relevance feedback: adapting the query, or adapting the data.
//!
//! Two routes are offered and the caller picks one:
//!
//! * [`adapt_query`] moves the query (Rocchio update). Cheap, but some label
//!   sets cannot be satisfied by any query; [`ranking_satisfied`] reports that.
//! * [`adapt_weights`] learns per-item mixing weights of a
//!   [`ParameterizedEmbedding`]. Only labeled items change, and the changes are
//!   held as [`PendingUpdate`]s until a query could observe them
//!   ([`materialize_if_affecting`]).

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{raw_distance, Embedding, Metric};
use crate::error::{Error, Result};
use crate::store::{exact_topk, RankedHit, VectorStore};

pub const DEFAULT_BETA: f64 = 0.75;
pub const DEFAULT_GAMMA: f64 = 0.25;
pub const DEFAULT_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackLabel {
    pub item_id: u64,
    pub polarity: Polarity,
    pub round: u32,
}

impl FeedbackLabel {
    pub fn positive(item_id: u64, round: u32) -> Self {
        Self {
            item_id,
            polarity: Polarity::Positive,
            round,
        }
    }

    pub fn negative(item_id: u64, round: u32) -> Self {
        Self {
            item_id,
            polarity: Polarity::Negative,
            round,
        }
    }
}

/// `q + beta * mean(positives) - gamma * mean(negatives)`; an empty side adds nothing.
pub fn adapt_query(
    query: &Embedding,
    positives: &[Embedding],
    negatives: &[Embedding],
    beta: f64,
    gamma: f64,
) -> Result<Embedding> {
    let mut out = query.to_f64();
    for (side, coef) in [(positives, beta), (negatives, -gamma)] {
        if side.is_empty() || coef == 0.0 {
            continue;
        }
        let mut mean = vec![0.0; out.len()];
        for e in side {
            e.check_dim(query.dim())?;
            for (m, &v) in mean.iter_mut().zip(e.as_slice()) {
                *m += f64::from(v);
            }
        }
        let n = side.len() as f64;
        for (o, m) in out.iter_mut().zip(mean) {
            *o += coef * m / n;
        }
    }
    Embedding::from_f64(&out)
}

/// True iff every positive is strictly closer to `query` than every negative.
pub fn ranking_satisfied(
    query: &Embedding,
    store: &VectorStore,
    pos_ids: &[u64],
    neg_ids: &[u64],
    metric: Metric,
) -> Result<bool> {
    query.check_dim(store.dim())?;
    let dist = |id: u64| -> Result<f64> {
        Ok(raw_distance(
            query.as_slice(),
            store.require(id)?.embedding.as_slice(),
            metric,
        ))
    };
    let mut worst_pos = f64::NEG_INFINITY;
    for &id in pos_ids {
        worst_pos = worst_pos.max(dist(id)?);
    }
    let mut best_neg = f64::INFINITY;
    for &id in neg_ids {
        best_neg = best_neg.min(dist(id)?);
    }
    Ok(worst_pos < best_neg)
}

/// Shared pool of component vectors referenced by parameterized items.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComponentBank {
    components: Vec<Embedding>,
}

impl ComponentBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, component: Embedding) -> usize {
        self.components.push(component);
        self.components.len() - 1
    }

    pub fn get(&self, id: usize) -> Option<&Embedding> {
        self.components.get(id)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// An item vector expressed as `sum_i weights[i] * bank[component_ids[i]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterizedEmbedding {
    pub component_ids: Vec<usize>,
    pub weights: Vec<f64>,
}

impl ParameterizedEmbedding {
    fn check(&self, bank: &ComponentBank) -> Result<()> {
        if self.component_ids.is_empty() || self.component_ids.len() != self.weights.len() {
            return Err(Error::InvalidParameter(
                "a parameterized embedding needs m >= 1 weights, one per component".into(),
            ));
        }
        if let Some(bad) = self.component_ids.iter().find(|&&c| c >= bank.len()) {
            return Err(Error::InvalidParameter(format!(
                "component {bad} is not in the bank"
            )));
        }
        Ok(())
    }

    pub fn materialize(&self, bank: &ComponentBank) -> Vec<f64> {
        combine(bank, &self.component_ids, &self.weights)
    }
}

fn combine(bank: &ComponentBank, component_ids: &[usize], weights: &[f64]) -> Vec<f64> {
    let dim = bank.components[component_ids[0]].dim();
    let mut out = vec![0.0; dim];
    for (&c, &w) in component_ids.iter().zip(weights) {
        for (o, &v) in out.iter_mut().zip(bank.components[c].as_slice()) {
            *o += w * f64::from(v);
        }
    }
    out
}

/// A store whose vectors are materialized from parameterized embeddings.
///
/// Items without a parameterization are plain stored vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterizedStore {
    bank: ComponentBank,
    params: BTreeMap<u64, ParameterizedEmbedding>,
    store: VectorStore,
}

impl ParameterizedStore {
    /// Rewrites each parameterized item's vector from its components.
    pub fn new(
        mut store: VectorStore,
        bank: ComponentBank,
        params: BTreeMap<u64, ParameterizedEmbedding>,
    ) -> Result<Self> {
        for (&id, p) in &params {
            store.require(id)?;
            p.check(&bank)?;
            if bank.components[p.component_ids[0]].dim() != store.dim() {
                return Err(Error::DimensionMismatch {
                    expected: store.dim(),
                    actual: bank.components[p.component_ids[0]].dim(),
                });
            }
            store.replace_embedding(id, Embedding::from_f64(&p.materialize(&bank))?)?;
        }
        Ok(Self {
            bank,
            params,
            store,
        })
    }

    /// Splits every vector into `parts` components along random orthogonal
    /// subspaces, all weights 1, so that the components sum back to the vector.
    pub fn split_orthogonal(store: VectorStore, parts: usize, seed: u64) -> Result<Self> {
        if parts == 0 {
            return Err(Error::InvalidParameter("parts must be at least 1".into()));
        }
        let dim = store.dim();
        let basis = random_orthonormal_basis(dim, seed);
        let groups: Vec<Vec<usize>> = (0..parts)
            .map(|g| (0..dim).filter(|i| i * parts / dim.max(1) == g).collect())
            .collect();
        let mut bank = ComponentBank::new();
        let mut params = BTreeMap::new();
        for item in store.items() {
            let x = item.embedding.to_f64();
            let mut ids = Vec::with_capacity(parts);
            for group in &groups {
                let mut comp = vec![0.0; dim];
                for &b in group {
                    let coef: f64 = basis[b].iter().zip(&x).map(|(u, v)| u * v).sum();
                    for (c, u) in comp.iter_mut().zip(&basis[b]) {
                        *c += coef * u;
                    }
                }
                ids.push(bank.add(Embedding::from_f64(&comp)?));
            }
            params.insert(
                item.id,
                ParameterizedEmbedding {
                    component_ids: ids,
                    weights: vec![1.0; parts],
                },
            );
        }
        Self::new(store, bank, params)
    }

    pub fn store(&self) -> &VectorStore {
        &self.store
    }

    pub fn bank(&self) -> &ComponentBank {
        &self.bank
    }

    pub fn param(&self, id: u64) -> Option<&ParameterizedEmbedding> {
        self.params.get(&id)
    }

    /// Vector the item would have under `weights`, rounded like the store.
    pub fn materialize_with(&self, id: u64, weights: &[f64]) -> Result<Embedding> {
        let p = self.params.get(&id).ok_or(Error::NotParameterized(id))?;
        if weights.len() != p.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: p.weights.len(),
                actual: weights.len(),
            });
        }
        Embedding::from_f64(&combine(&self.bank, &p.component_ids, weights))
    }

    pub fn apply(&mut self, update: &PendingUpdate) -> Result<()> {
        let emb = self.materialize_with(update.item_id, &update.new_weights)?;
        self.store.replace_embedding(update.item_id, emb)?;
        self.params
            .get_mut(&update.item_id)
            .expect("checked above")
            .weights = update.new_weights.clone();
        Ok(())
    }

    pub fn topk(&self, query: &Embedding, k: usize, metric: Metric) -> Result<Vec<RankedHit>> {
        exact_topk(&self.store, query, k, metric)
    }
}

fn random_orthonormal_basis(dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for b in &basis {
            let proj: f64 = b.iter().zip(&v).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingUpdate {
    pub item_id: u64,
    pub new_weights: Vec<f64>,
    pub created_round: u32,
}

/// At most one outstanding update per item; newer rounds replace older ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PendingSet {
    updates: BTreeMap<u64, PendingUpdate>,
}

impl PendingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, update: PendingUpdate) {
        match self.updates.get(&update.item_id) {
            Some(old) if old.created_round > update.created_round => {}
            _ => {
                self.updates.insert(update.item_id, update);
            }
        }
    }

    pub fn extend(&mut self, updates: impl IntoIterator<Item = PendingUpdate>) {
        updates.into_iter().for_each(|u| self.insert(u));
    }

    pub fn get(&self, item_id: u64) -> Option<&PendingUpdate> {
        self.updates.get(&item_id)
    }

    pub fn remove(&mut self, item_id: u64) -> Option<PendingUpdate> {
        self.updates.remove(&item_id)
    }

    pub fn len(&self) -> usize {
        self.updates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.updates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PendingUpdate> {
        self.updates.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub eta: f64,
    pub steps: usize,
    pub margin: f64,
    pub metric: Metric,
    /// Stamped on the produced updates.
    pub round: u32,
}

impl Default for WeightParams {
    fn default() -> Self {
        Self {
            eta: 0.1,
            steps: 20,
            margin: DEFAULT_MARGIN,
            metric: Metric::Euclidean,
            round: 1,
        }
    }
}

/// The pairwise hinge objective over the labeled items' weights:
///
/// ```text
/// sum_{p in pos, n in neg} max(0, margin + d(q, x_p) - d(q, x_n))
/// ```
///
/// Variables are the weight vectors of the labeled items, in `items()` order.
#[derive(Debug)]
pub struct WeightObjective<'a> {
    pstore: &'a ParameterizedStore,
    query: Vec<f64>,
    margin: f64,
    metric: Metric,
    items: Vec<(u64, Polarity)>,
    rejected: Vec<(u64, Error)>,
}

impl<'a> WeightObjective<'a> {
    /// Unusable labels (unknown or non-parameterized items) land in `rejected()`.
    /// An item labeled several times keeps its latest label.
    pub fn new(
        pstore: &'a ParameterizedStore,
        labels: &[FeedbackLabel],
        query: &Embedding,
        margin: f64,
        metric: Metric,
    ) -> Result<Self> {
        query.check_dim(pstore.store.dim())?;
        let mut latest: BTreeMap<u64, FeedbackLabel> = BTreeMap::new();
        for l in labels {
            match latest.get(&l.item_id) {
                Some(prev) if prev.round > l.round => {}
                _ => {
                    latest.insert(l.item_id, *l);
                }
            }
        }
        let mut items = Vec::new();
        let mut rejected = Vec::new();
        for (id, l) in latest {
            if pstore.store.get(id).is_none() {
                rejected.push((id, Error::UnknownId(id)));
            } else if pstore.params.contains_key(&id) {
                items.push((id, l.polarity));
            } else {
                rejected.push((id, Error::NotParameterized(id)));
            }
        }
        Ok(Self {
            pstore,
            query: query.to_f64(),
            margin,
            metric,
            items,
            rejected,
        })
    }

    pub fn items(&self) -> &[(u64, Polarity)] {
        &self.items
    }

    pub fn rejected(&self) -> &[(u64, Error)] {
        &self.rejected
    }

    pub fn initial_weights(&self) -> Vec<Vec<f64>> {
        self.items
            .iter()
            .map(|(id, _)| self.pstore.params[id].weights.clone())
            .collect()
    }

    fn distances(&self, weights: &[Vec<f64>]) -> Vec<(f64, Vec<f64>)> {
        self.items
            .iter()
            .zip(weights)
            .map(|((id, _), w)| {
                let p = &self.pstore.params[id];
                let x = combine(&self.pstore.bank, &p.component_ids, w);
                dist_and_grad(&self.query, &x, self.metric)
            })
            .collect()
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let pos: Vec<usize> = (0..self.items.len())
            .filter(|&i| self.items[i].1 == Polarity::Positive)
            .collect();
        let neg: Vec<usize> = (0..self.items.len())
            .filter(|&i| self.items[i].1 == Polarity::Negative)
            .collect();
        pos.into_iter()
            .flat_map(move |p| neg.clone().into_iter().map(move |n| (p, n)))
    }

    pub fn loss(&self, weights: &[Vec<f64>]) -> f64 {
        let d = self.distances(weights);
        self.pairs()
            .map(|(p, n)| (self.margin + d[p].0 - d[n].0).max(0.0))
            .sum()
    }

    pub fn gradient(&self, weights: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let d = self.distances(weights);
        // dL/dx for every labeled item, then chain through the components
        let mut dx: Vec<Vec<f64>> = d.iter().map(|(_, g)| vec![0.0; g.len()]).collect();
        for (p, n) in self.pairs() {
            if self.margin + d[p].0 - d[n].0 > 0.0 {
                dx[p].iter_mut().zip(&d[p].1).for_each(|(a, g)| *a += g);
                dx[n].iter_mut().zip(&d[n].1).for_each(|(a, g)| *a -= g);
            }
        }
        self.items
            .iter()
            .zip(dx)
            .map(|((id, _), gx)| {
                self.pstore.params[id]
                    .component_ids
                    .iter()
                    .map(|&c| {
                        self.pstore.bank.components[c]
                            .as_slice()
                            .iter()
                            .zip(&gx)
                            .map(|(&v, g)| f64::from(v) * g)
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Distance from `q` to `x` and its gradient with respect to `x`.
fn dist_and_grad(q: &[f64], x: &[f64], metric: Metric) -> (f64, Vec<f64>) {
    match metric {
        Metric::Euclidean => {
            let diff: Vec<f64> = x.iter().zip(q).map(|(a, b)| a - b).collect();
            let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            let g = if d > 0.0 {
                diff.iter().map(|v| v / d).collect()
            } else {
                vec![0.0; x.len()]
            };
            (d, g)
        }
        Metric::NegativeInnerProduct => {
            let d = -q.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            (d, q.iter().map(|v| -v).collect())
        }
        Metric::CosineDistance => {
            let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nq == 0.0 || nx == 0.0 {
                return (1.0, vec![0.0; x.len()]);
            }
            let dot: f64 = q.iter().zip(x).map(|(a, b)| a * b).sum();
            let cos = dot / (nq * nx);
            let g = q
                .iter()
                .zip(x)
                .map(|(qa, xa)| -(qa / (nq * nx) - cos * xa / (nx * nx)))
                .collect();
            (1.0 - cos, g)
        }
    }
}

#[derive(Debug)]
pub struct WeightAdaptation {
    pub pending: Vec<PendingUpdate>,
    /// Labels that could not be used, with the reason. The rest proceed.
    pub rejected: Vec<(u64, Error)>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Gradient descent on [`WeightObjective`] with step halving whenever a step
/// would raise the loss. Produces one pending update per usable labeled item.
pub fn adapt_weights(
    pstore: &ParameterizedStore,
    labels: &[FeedbackLabel],
    query: &Embedding,
    params: &WeightParams,
) -> Result<WeightAdaptation> {
    if !(params.eta >= 0.0 && params.eta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "eta must be non-negative, got {}",
            params.eta
        )));
    }
    let objective = WeightObjective::new(pstore, labels, query, params.margin, params.metric)?;
    let mut weights = objective.initial_weights();
    let initial_loss = objective.loss(&weights);
    let mut loss = initial_loss;
    let mut eta = params.eta;
    'outer: for _ in 0..params.steps {
        if loss == 0.0 || eta == 0.0 {
            break;
        }
        let grad = objective.gradient(&weights);
        if grad.iter().flatten().all(|g| *g == 0.0) {
            break;
        }
        loop {
            let trial: Vec<Vec<f64>> = weights
                .iter()
                .zip(&grad)
                .map(|(w, g)| w.iter().zip(g).map(|(a, b)| a - eta * b).collect())
                .collect();
            let trial_loss = objective.loss(&trial);
            if trial_loss <= loss {
                weights = trial;
                loss = trial_loss;
                break;
            }
            eta *= 0.5;
            if eta < params.eta * 1e-9 {
                break 'outer;
            }
        }
    }
    let pending = objective
        .items()
        .iter()
        .zip(weights)
        .map(|((id, _), w)| PendingUpdate {
            item_id: *id,
            new_weights: w,
            created_round: params.round,
        })
        .collect();
    let rejected = objective.rejected;
    Ok(WeightAdaptation {
        pending,
        rejected,
        initial_loss,
        final_loss: loss,
    })
}

/// Applies exactly the pending updates that could change this query's top-k.
///
/// An update is applied when the item's current or updated vector lies
/// within the current k-th best distance; applying can widen that radius,
/// so the check repeats until nothing more qualifies. Every update left
/// pending is strictly outside the final radius both before and after, so
/// the top-k equals the one full materialization would give.
pub fn materialize_if_affecting(
    pstore: &mut ParameterizedStore,
    pending: &mut PendingSet,
    query: &Embedding,
    k: usize,
    metric: Metric,
) -> Result<Vec<u64>> {
    let mut applied = Vec::new();
    let mut candidates: HashMap<u64, Embedding> = HashMap::new();
    for u in pending.iter() {
        candidates.insert(
            u.item_id,
            pstore.materialize_with(u.item_id, &u.new_weights)?,
        );
    }
    loop {
        if pending.is_empty() {
            break;
        }
        let radius = pstore
            .topk(query, k, metric)?
            .last()
            .map_or(f64::INFINITY, |h| h.score);
        let q = query.as_slice();
        let due: Vec<u64> = pending
            .iter()
            .filter(|u| {
                let old = pstore
                    .store
                    .get(u.item_id)
                    .map(|it| raw_distance(q, it.embedding.as_slice(), metric));
                let new = raw_distance(q, candidates[&u.item_id].as_slice(), metric);
                new <= radius || old.is_some_and(|d| d <= radius)
            })
            .map(|u| u.item_id)
            .collect();
        if due.is_empty() {
            break;
        }
        for id in due {
            let update = pending.remove(id).expect("listed above");
            pstore.apply(&update)?;
            applied.push(id);
        }
    }
    Ok(applied)
}

/// Applies every pending update (the eager reference behaviour).
pub fn materialize_all(
    pstore: &mut ParameterizedStore,
    pending: &mut PendingSet,
) -> Result<Vec<u64>> {
    let ids: Vec<u64> = pending.iter().map(|u| u.item_id).collect();
    for &id in &ids {
        let update = pending.remove(id).expect("listed above");
        pstore.apply(&update)?;
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::StoredItem;

    fn e(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn line_store(values: &[f32]) -> VectorStore {
        let rows: Vec<Vec<f32>> = values.iter().map(|&v| vec![v]).collect();
        VectorStore::from_rows(Metric::Euclidean, &rows).unwrap()
    }

    #[test]
    fn rocchio_arithmetic() {
        let q = adapt_query(
            &e(&[0.0, 0.0]),
            &[e(&[2.0, 0.0])],
            &[e(&[0.0, 2.0])],
            0.5,
            0.5,
        )
        .unwrap();
        assert_eq!(q.as_slice(), &[1.0, -1.0]);
        let same = adapt_query(&e(&[0.3, 0.4]), &[], &[], DEFAULT_BETA, DEFAULT_GAMMA).unwrap();
        assert_eq!(same.as_slice(), &[0.3, 0.4]);
        let zero = adapt_query(
            &e(&[0.3, 0.4]),
            &[e(&[9.0, 9.0])],
            &[e(&[1.0, 1.0])],
            0.0,
            0.0,
        )
        .unwrap();
        assert_eq!(zero.as_slice(), &[0.3, 0.4]);
        assert!(adapt_query(&e(&[0.0]), &[e(&[1.0, 2.0])], &[], 1.0, 1.0).is_err());
    }

    #[test]
    fn rocchio_is_affine() {
        let q = e(&[0.5, -1.0, 2.0]);
        let pos = [e(&[1.0, 2.0, 3.0]), e(&[-1.0, 0.5, 0.0])];
        let neg = [e(&[4.0, -2.0, 1.0])];
        let v = [0.25f32, -3.0, 1.5];
        let shift = |x: &Embedding| {
            e(&x.as_slice()
                .iter()
                .zip(v)
                .map(|(a, b)| a + b)
                .collect::<Vec<_>>())
        };
        let (beta, gamma) = (0.7, 0.4);
        let base = adapt_query(&q, &pos, &neg, beta, gamma).unwrap();
        let moved = adapt_query(
            &shift(&q),
            &pos.iter().map(shift).collect::<Vec<_>>(),
            &neg.iter().map(shift).collect::<Vec<_>>(),
            beta,
            gamma,
        )
        .unwrap();
        for ((m, b), vi) in moved.as_slice().iter().zip(base.as_slice()).zip(v) {
            let expected = f64::from(*b) + f64::from(vi) * (1.0 + beta - gamma);
            assert!((f64::from(*m) - expected).abs() < 1e-5);
        }
    }

    #[test]
    fn one_dimensional_labels_cannot_be_satisfied() {
        // x2 = x3 = 2 negative, x4 = 1 and x5 = 3 positive
        let store = line_store(&[0.0, 2.0, 2.0, 1.0, 3.0]);
        assert!(
            !ranking_satisfied(&e(&[1.6]), &store, &[3, 4], &[1, 2], Metric::Euclidean).unwrap()
        );
        for q in -40..=40 {
            let q = e(&[q as f32 * 0.1]);
            assert!(!ranking_satisfied(&q, &store, &[3, 4], &[1, 2], Metric::Euclidean).unwrap());
        }
        let adapted = adapt_query(
            &e(&[0.0]),
            &[e(&[1.0]), e(&[3.0])],
            &[e(&[2.0]), e(&[2.0])],
            0.75,
            0.25,
        )
        .unwrap();
        assert!(!ranking_satisfied(&adapted, &store, &[3, 4], &[1, 2], Metric::Euclidean).unwrap());
    }

    #[test]
    fn ranking_satisfied_simple_cases() {
        let store = line_store(&[0.0, 1.0, 5.0, 6.0]);
        assert!(ranking_satisfied(&e(&[0.0]), &store, &[], &[0], Metric::Euclidean).unwrap());
        assert!(
            ranking_satisfied(&e(&[1.0]), &store, &[1, 0], &[2, 3], Metric::Euclidean).unwrap()
        );
        assert!(
            !ranking_satisfied(&e(&[5.0]), &store, &[1, 0], &[2, 3], Metric::Euclidean).unwrap()
        );
        assert!(ranking_satisfied(&e(&[0.0]), &store, &[99], &[], Metric::Euclidean).is_err());
    }

    fn two_part_store() -> ParameterizedStore {
        // item 0 is the positive: components (1,0) and (0,1), weights 0.5 / 1
        // item 1 is a negative sitting right on the query
        let store = VectorStore::from_items(
            2,
            Metric::Euclidean,
            vec![
                StoredItem::new(0, e(&[0.0, 0.0])),
                StoredItem::new(1, e(&[2.0, 0.1])),
            ],
        )
        .unwrap();
        let mut bank = ComponentBank::new();
        let a = bank.add(e(&[1.0, 0.0]));
        let b = bank.add(e(&[0.0, 1.0]));
        let c = bank.add(e(&[2.0, 0.1]));
        let mut params = BTreeMap::new();
        params.insert(
            0,
            ParameterizedEmbedding {
                component_ids: vec![a, b],
                weights: vec![0.5, 1.0],
            },
        );
        params.insert(
            1,
            ParameterizedEmbedding {
                component_ids: vec![c],
                weights: vec![1.0],
            },
        );
        ParameterizedStore::new(store, bank, params).unwrap()
    }

    #[test]
    fn positive_weight_on_query_direction_grows() {
        let ps = two_part_store();
        assert_eq!(ps.store().get(0).unwrap().embedding.as_slice(), &[0.5, 1.0]);
        let q = e(&[2.0, 0.0]);
        let labels = [FeedbackLabel::positive(0, 1), FeedbackLabel::negative(1, 1)];
        let obj =
            WeightObjective::new(&ps, &labels, &q, DEFAULT_MARGIN, Metric::Euclidean).unwrap();
        let w0 = obj.initial_weights();
        let g = obj.gradient(&w0);
        // central differences on the first positive weight
        let h = 1e-6;
        let mut plus = w0.clone();
        plus[0][0] += h;
        let mut minus = w0.clone();
        minus[0][0] -= h;
        let fd = (obj.loss(&plus) - obj.loss(&minus)) / (2.0 * h);
        assert!((g[0][0] - fd).abs() < 1e-6, "{} vs {fd}", g[0][0]);
        assert!(g[0][0] < 0.0);

        let params = WeightParams {
            eta: 0.1,
            steps: 1,
            ..WeightParams::default()
        };
        let out = adapt_weights(&ps, &labels, &q, &params).unwrap();
        let upd = out.pending.iter().find(|u| u.item_id == 0).unwrap();
        assert!(upd.new_weights[0] > 0.5);
        assert!(out.final_loss <= out.initial_loss);
    }

    #[test]
    fn no_change_without_loss_or_step() {
        let ps = two_part_store();
        let q = e(&[0.5, 1.0]);
        let labels = [FeedbackLabel::positive(0, 1), FeedbackLabel::negative(1, 1)];
        let out = adapt_weights(&ps, &labels, &q, &WeightParams::default()).unwrap();
        assert_eq!(out.initial_loss, 0.0);
        assert_eq!(out.pending[0].new_weights, vec![0.5, 1.0]);

        let far = e(&[2.0, 0.0]);
        let frozen = WeightParams {
            eta: 0.0,
            ..WeightParams::default()
        };
        let out = adapt_weights(&ps, &labels, &far, &frozen).unwrap();
        assert!(out.initial_loss > 0.0);
        assert_eq!(out.pending[0].new_weights, vec![0.5, 1.0]);
        assert_eq!(out.pending[1].new_weights, vec![1.0]);
    }

    #[test]
    fn unparameterized_items_are_rejected_individually() {
        let store = line_store(&[0.0, 1.0, 2.0]);
        let mut bank = ComponentBank::new();
        let c = bank.add(e(&[1.0]));
        let mut params = BTreeMap::new();
        params.insert(
            1,
            ParameterizedEmbedding {
                component_ids: vec![c],
                weights: vec![1.0],
            },
        );
        let ps = ParameterizedStore::new(store, bank, params).unwrap();
        let labels = [
            FeedbackLabel::positive(1, 1),
            FeedbackLabel::negative(2, 1),
            FeedbackLabel::negative(9, 1),
        ];
        let out = adapt_weights(&ps, &labels, &e(&[0.0]), &WeightParams::default()).unwrap();
        assert_eq!(out.pending.len(), 1);
        assert_eq!(out.pending[0].item_id, 1);
        let rejected: Vec<u64> = out.rejected.iter().map(|(id, _)| *id).collect();
        assert_eq!(rejected, vec![2, 9]);
        assert!(matches!(out.rejected[0].1, Error::NotParameterized(2)));
    }

    #[test]
    fn orthogonal_split_reconstructs_vectors() {
        let rows: Vec<Vec<f32>> = (0..20)
            .map(|i| vec![i as f32, (i * i) as f32 * 0.1, -1.0, 0.5])
            .collect();
        let store = VectorStore::from_rows(Metric::Euclidean, &rows).unwrap();
        let ps = ParameterizedStore::split_orthogonal(store.clone(), 2, 5).unwrap();
        assert_eq!(ps.bank().len(), 40);
        for (a, b) in store.items().iter().zip(ps.store().items()) {
            for (x, y) in a.embedding.as_slice().iter().zip(b.embedding.as_slice()) {
                assert!((x - y).abs() < 1e-4 * (1.0 + x.abs()));
            }
        }
        let p = ps.param(3).unwrap();
        let c0 = ps.bank().get(p.component_ids[0]).unwrap().to_f64();
        let c1 = ps.bank().get(p.component_ids[1]).unwrap().to_f64();
        let dot: f64 = c0.iter().zip(&c1).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-4);
    }

    #[test]
    fn pending_updates_supersede_by_round() {
        let mut set = PendingSet::new();
        set.insert(PendingUpdate {
            item_id: 1,
            new_weights: vec![1.0],
            created_round: 2,
        });
        set.insert(PendingUpdate {
            item_id: 1,
            new_weights: vec![5.0],
            created_round: 1,
        });
        assert_eq!(set.get(1).unwrap().new_weights, vec![1.0]);
        set.insert(PendingUpdate {
            item_id: 1,
            new_weights: vec![7.0],
            created_round: 3,
        });
        assert_eq!(set.get(1).unwrap().new_weights, vec![7.0]);
        assert_eq!(set.len(), 1);
    }

    fn lazy_fixture() -> ParameterizedStore {
        let rows: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32, 0.0]).collect();
        ParameterizedStore::split_orthogonal(
            VectorStore::from_rows(Metric::Euclidean, &rows).unwrap(),
            2,
            1,
        )
        .unwrap()
    }

    #[test]
    fn far_updates_stay_pending() {
        let mut ps = lazy_fixture();
        let mut eager = ps.clone();
        let mut pending = PendingSet::new();
        pending.insert(PendingUpdate {
            item_id: 9,
            new_weights: vec![0.9, 0.9],
            created_round: 1,
        });
        let mut eager_pending = pending.clone();
        let q = e(&[0.0, 0.0]);
        let applied =
            materialize_if_affecting(&mut ps, &mut pending, &q, 3, Metric::Euclidean).unwrap();
        assert!(applied.is_empty());
        assert_eq!(pending.len(), 1);
        materialize_all(&mut eager, &mut eager_pending).unwrap();
        assert_eq!(
            ps.topk(&q, 3, Metric::Euclidean).unwrap(),
            eager.topk(&q, 3, Metric::Euclidean).unwrap()
        );
    }

    #[test]
    fn updates_entering_the_radius_are_applied() {
        let mut ps = lazy_fixture();
        let mut eager = ps.clone();
        let mut pending = PendingSet::new();
        pending.insert(PendingUpdate {
            item_id: 8,
            new_weights: vec![0.0, 0.0],
            created_round: 1,
        });
        let mut eager_pending = pending.clone();
        let q = e(&[0.0, 0.0]);
        let applied =
            materialize_if_affecting(&mut ps, &mut pending, &q, 3, Metric::Euclidean).unwrap();
        assert_eq!(applied, vec![8]);
        assert!(pending.is_empty());
        materialize_all(&mut eager, &mut eager_pending).unwrap();
        assert_eq!(
            ps.topk(&q, 3, Metric::Euclidean).unwrap(),
            eager.topk(&q, 3, Metric::Euclidean).unwrap()
        );

        let mut none = PendingSet::new();
        assert!(
            materialize_if_affecting(&mut ps, &mut none, &q, 3, Metric::Euclidean)
                .unwrap()
                .is_empty()
        );
    }
}
