//! Global-distribution-aware search.
//!
//! The query (plus any extra positives) is separated from the whole corpus
//! by a linear max-margin classifier, and the corpus is ranked by signed
//! distance to the hyperplane: items on the positive side come first.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{raw_distance, Embedding, Metric};
use crate::error::{Error, Result};
use crate::store::{take_topk, RankedHit, StoredItem, VectorStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSeparator {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearSeparator {
    pub fn decision(&self, x: &[f32]) -> f64 {
        self.w
            .iter()
            .zip(x)
            .map(|(w, &v)| w * f64::from(v))
            .sum::<f64>()
            + self.b
    }

    pub fn norm(&self) -> f64 {
        self.w.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// `(w.x + b) / |w|`: positive on the side of the training positives.
    pub fn signed_distance(&self, x: &[f32]) -> f64 {
        self.decision(x) / self.norm()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            w: self.w.iter().map(|w| w * c).collect(),
            b: self.b * c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    /// Inverse regularization strength.
    pub reg_c: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Weight of each positive's hinge term relative to one negative.
    /// `None` means "number of negatives".
    pub positive_weight: Option<f64>,
    /// Z-score every dimension with the negatives' statistics before training.
    pub standardize: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            reg_c: 1.0,
            epochs: 30,
            seed: 0,
            positive_weight: None,
            standardize: false,
        }
    }
}

impl SvmParams {
    fn validate(&self) -> Result<()> {
        if !(self.reg_c > 0.0 && self.reg_c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "reg_c must be positive, got {}",
                self.reg_c
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if let Some(p) = self.positive_weight {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "positive_weight must be positive, got {p}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub separator: LinearSeparator,
    /// Training objective of the averaged iterate after each epoch.
    pub objective_history: Vec<f64>,
}

/// Trains against every stored vector as a negative.
pub fn train_separator(
    store: &VectorStore,
    positives: &[Embedding],
    params: &SvmParams,
) -> Result<LinearSeparator> {
    let negatives: Vec<&StoredItem> = store.sorted_items();
    train_with_negatives(store.dim(), &negatives, positives, params).map(|r| r.separator)
}

/// Trains against a subset of the store (e.g. a coreset) as negatives.
pub fn train_separator_on(
    store: &VectorStore,
    negative_ids: &[u64],
    positives: &[Embedding],
    params: &SvmParams,
) -> Result<TrainReport> {
    let negatives = negative_ids
        .iter()
        .map(|&id| store.require(id))
        .collect::<Result<Vec<_>>>()?;
    train_with_negatives(store.dim(), &negatives, positives, params)
}

/// Same as [`train_separator`] but also returns the per-epoch objective.
pub fn train_separator_report(
    store: &VectorStore,
    positives: &[Embedding],
    params: &SvmParams,
) -> Result<TrainReport> {
    train_with_negatives(store.dim(), &store.sorted_items(), positives, params)
}

/// Stratified averaged-SGD on the L2-regularized weighted hinge loss
///
/// ```text
/// F(w, b) = |(w, b)|^2 / (2C) + 1/2 * (mean_neg hinge + s * mean_pos hinge)
/// ```
///
/// with `s = positive_weight * |positives| / |negatives|`. Every step pairs a
/// negative (in a seeded shuffle) with the next positive, step size
/// `C / t`. The bias is carried as an extra, regularized coordinate.
fn train_with_negatives(
    dim: usize,
    negatives: &[&StoredItem],
    positives: &[Embedding],
    params: &SvmParams,
) -> Result<TrainReport> {
    params.validate()?;
    if negatives.is_empty() {
        return Err(Error::EmptyStore);
    }
    if positives.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one positive example is required".into(),
        ));
    }
    for p in positives {
        p.check_dim(dim)?;
    }

    let scaler = if params.standardize {
        Scaler::fit(dim, negatives.iter().map(|it| it.embedding.as_slice()))
    } else {
        Scaler::identity(dim)
    };
    let neg: Vec<Vec<f64>> = negatives
        .iter()
        .map(|it| scaler.augment(it.embedding.as_slice()))
        .collect();
    let pos: Vec<Vec<f64>> = positives
        .iter()
        .map(|p| scaler.augment(p.as_slice()))
        .collect();

    let positive_weight = params.positive_weight.unwrap_or(neg.len() as f64);
    let pos_scale = positive_weight * pos.len() as f64 / neg.len() as f64;
    let reg = 1.0 / params.reg_c;
    let objective = |w: &[f64]| -> f64 {
        let reg_term = 0.5 * reg * dot(w, w);
        let neg_loss =
            neg.iter().map(|x| (1.0 + dot(w, x)).max(0.0)).sum::<f64>() / neg.len() as f64;
        let pos_loss =
            pos.iter().map(|x| (1.0 - dot(w, x)).max(0.0)).sum::<f64>() / pos.len() as f64;
        reg_term + 0.5 * (neg_loss + pos_scale * pos_loss)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut w = vec![0.0; dim + 1];
    let mut avg = vec![0.0; dim + 1];
    let mut t = 0u64;
    let mut order: Vec<usize> = (0..neg.len()).collect();
    let mut pos_cursor = 0usize;
    let mut history = Vec::with_capacity(params.epochs);

    let step =
        |w: &mut Vec<f64>, avg: &mut Vec<f64>, t: &mut u64, x: &[f64], y: f64, scale: f64| {
            *t += 1;
            let tf = *t as f64;
            let eta = 1.0 / (reg * tf);
            let active = y * dot(w, x) < 1.0;
            let shrink = 1.0 - eta * reg;
            for (wi, xi) in w.iter_mut().zip(x) {
                *wi *= shrink;
                if active {
                    *wi += eta * scale * y * xi;
                }
            }
            for (ai, wi) in avg.iter_mut().zip(w.iter()) {
                *ai += (wi - *ai) / tf;
            }
        };

    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            step(&mut w, &mut avg, &mut t, &neg[i], -1.0, 1.0);
            let p = &pos[pos_cursor % pos.len()];
            pos_cursor += 1;
            step(&mut w, &mut avg, &mut t, p, 1.0, pos_scale);
        }
        history.push(objective(&avg));
    }

    let separator = scaler.unscale(&avg);
    if separator.w.iter().all(|&v| v == 0.0) || !separator.w.iter().all(|v| v.is_finite()) {
        return Err(Error::ZeroSeparator);
    }
    Ok(TrainReport {
        separator,
        objective_history: history,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Scaler {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Scaler {
    fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    fn fit<'a>(dim: usize, rows: impl Iterator<Item = &'a [f32]> + Clone) -> Self {
        let mut mean = vec![0.0; dim];
        let mut n = 0usize;
        for r in rows.clone() {
            n += 1;
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += f64::from(v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, &v), m) in var.iter_mut().zip(r).zip(&mean) {
                let d = f64::from(v) - m;
                *s += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    fn augment(&self, x: &[f32]) -> Vec<f64> {
        let mut out: Vec<f64> = x
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (m, s))| (f64::from(v) - m) / s)
            .collect();
        out.push(1.0);
        out
    }

    /// Maps an augmented weight vector back to the original coordinates.
    fn unscale(&self, augmented: &[f64]) -> LinearSeparator {
        let dim = self.mean.len();
        let w: Vec<f64> = augmented[..dim]
            .iter()
            .zip(&self.std)
            .map(|(w, s)| w / s)
            .collect();
        let b = augmented[dim] - w.iter().zip(&self.mean).map(|(w, m)| w * m).sum::<f64>();
        LinearSeparator { w, b }
    }
}

/// Ranks the store by `-(w.x + b) / |w|`, so the positive side leads.
pub fn rank_by_hyperplane(
    store: &VectorStore,
    sep: &LinearSeparator,
    k: usize,
) -> Result<Vec<RankedHit>> {
    store.check_k(k)?;
    if sep.w.len() != store.dim() {
        return Err(Error::DimensionMismatch {
            expected: store.dim(),
            actual: sep.w.len(),
        });
    }
    let norm = sep.norm();
    if norm == 0.0 {
        return Err(Error::ZeroSeparator);
    }
    let scored = store
        .items()
        .iter()
        .map(|it| RankedHit::new(it.id, -sep.decision(it.embedding.as_slice()) / norm))
        .collect();
    Ok(take_topk(scored, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoresetMethod {
    Uniform,
    KCenterGreedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoresetSpec {
    pub size: usize,
    pub method: CoresetMethod,
    pub seed: u64,
}

/// Picks a query-independent subset of negatives to train on.
///
/// `KCenterGreedy` starts from the item nearest the centroid and then keeps
/// adding the item farthest (euclidean) from everything chosen so far; ties
/// go to the lower id.
pub fn build_coreset(store: &VectorStore, spec: &CoresetSpec) -> Result<Vec<u64>> {
    if spec.size == 0 || spec.size > store.len() {
        return Err(Error::InvalidK {
            k: spec.size,
            available: store.len(),
        });
    }
    let items = store.sorted_items();
    match spec.method {
        CoresetMethod::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            Ok(index::sample(&mut rng, items.len(), spec.size)
                .into_iter()
                .map(|i| items[i].id)
                .collect())
        }
        CoresetMethod::KCenterGreedy => Ok(k_center_greedy(&items, spec.size)),
    }
}

fn k_center_greedy(items: &[&StoredItem], size: usize) -> Vec<u64> {
    let dim = items[0].embedding.dim();
    let mut centroid = vec![0.0f64; dim];
    for it in items {
        for (c, &v) in centroid.iter_mut().zip(it.embedding.as_slice()) {
            *c += f64::from(v);
        }
    }
    centroid.iter_mut().for_each(|c| *c /= items.len() as f64);
    let centroid: Vec<f32> = centroid.into_iter().map(|c| c as f32).collect();

    // items are sorted by id, so strict comparisons keep the lowest id on ties
    let mut first = 0;
    let mut best = f64::INFINITY;
    for (i, it) in items.iter().enumerate() {
        let d = raw_distance(&centroid, it.embedding.as_slice(), Metric::Euclidean);
        if d < best {
            best = d;
            first = i;
        }
    }

    let mut chosen = vec![first];
    let mut taken = vec![false; items.len()];
    taken[first] = true;
    let mut min_dist: Vec<f64> = items
        .iter()
        .map(|it| {
            raw_distance(
                items[first].embedding.as_slice(),
                it.embedding.as_slice(),
                Metric::Euclidean,
            )
        })
        .collect();
    while chosen.len() < size {
        let mut next = None;
        let mut far = f64::NEG_INFINITY;
        for (i, &d) in min_dist.iter().enumerate() {
            if !taken[i] && d > far {
                far = d;
                next = Some(i);
            }
        }
        let next = next.expect("size <= len leaves an untaken item");
        taken[next] = true;
        chosen.push(next);
        let anchor = items[next].embedding.as_slice();
        for (i, it) in items.iter().enumerate() {
            let d = raw_distance(anchor, it.embedding.as_slice(), Metric::Euclidean);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
    }
    chosen.into_iter().map(|i| items[i].id).collect()
}
