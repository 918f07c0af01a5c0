//! Hybrid queries: nearest neighbours restricted by metadata and
//! user-defined predicates.
//!
//! Two physical plans answer the same question. Pre-filter evaluates the
//! predicates on every item and ranks the survivors. Post-filter ranks first,
//! then filters the nearest `ceil(alpha * k)`, doubling alpha until `k`
//! survive. Costs are in units of one distance evaluation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embedding::{raw_distance, Embedding, Metric};
use crate::error::{Error, Result};
use crate::store::{hit_order, MetaValue, RankedHit, StoredItem, VectorStore};

/// Cost of one distance evaluation.
pub const DISTANCE_COST: f64 = 1.0;
/// Cost of one metadata lookup.
pub const METADATA_COST: f64 = 0.01;

/// A filter evaluated per item at a declared cost.
pub trait Udf: fmt::Debug + Send + Sync {
    fn name(&self) -> &str;
    fn evaluate(&self, item: &StoredItem) -> bool;
    fn cost_per_item(&self) -> f64;
    fn selectivity_estimate(&self) -> f64;
    /// Carried for cheap-versus-accurate model pairs; unused by the planner.
    fn accuracy(&self) -> Option<f64> {
        None
    }
}

/// Passes items whose coordinate `dim` is above (or below) `threshold`.
#[derive(Debug, Clone)]
pub struct ThresholdOnDimension {
    pub name: String,
    pub dim: usize,
    pub threshold: f32,
    pub above: bool,
    pub cost: f64,
    pub selectivity: f64,
}

impl Udf for ThresholdOnDimension {
    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(&self, item: &StoredItem) -> bool {
        let v = item
            .embedding
            .as_slice()
            .get(self.dim)
            .copied()
            .unwrap_or(f32::NAN);
        if self.above {
            v > self.threshold
        } else {
            v < self.threshold
        }
    }

    fn cost_per_item(&self) -> f64 {
        self.cost
    }

    fn selectivity_estimate(&self) -> f64 {
        self.selectivity
    }
}

/// Wraps another UDF with a per-call sleep and extra declared cost.
#[derive(Debug, Clone)]
pub struct SyntheticDelay {
    pub name: String,
    pub inner: Arc<dyn Udf>,
    pub delay: Duration,
    pub extra_cost: f64,
}

impl Udf for SyntheticDelay {
    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(&self, item: &StoredItem) -> bool {
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        self.inner.evaluate(item)
    }

    fn cost_per_item(&self) -> f64 {
        self.inner.cost_per_item() + self.extra_cost
    }

    fn selectivity_estimate(&self) -> f64 {
        self.inner.selectivity_estimate()
    }

    fn accuracy(&self) -> Option<f64> {
        self.inner.accuracy()
    }
}

/// Named UDFs. Besides registered entries it resolves the built-in
/// families `dim{D}_gt_{T}`, `dim{D}_lt_{T}` and `slow_<name>` (1 ms sleep,
/// 1000 extra cost units).
#[derive(Debug, Clone, Default)]
pub struct UdfRegistry {
    entries: BTreeMap<String, Arc<dyn Udf>>,
}

impl UdfRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, udf: Arc<dyn Udf>) {
        self.entries.insert(udf.name().to_string(), udf);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn resolve(&self, name: &str) -> Result<Arc<dyn Udf>> {
        if let Some(u) = self.entries.get(name) {
            return Ok(u.clone());
        }
        if let Some(inner) = name.strip_prefix("slow_") {
            let inner = self.resolve(inner)?;
            return Ok(Arc::new(SyntheticDelay {
                name: name.to_string(),
                inner,
                delay: Duration::from_millis(1),
                extra_cost: 1000.0,
            }));
        }
        parse_threshold(name).ok_or_else(|| Error::Filter(format!("unknown UDF {name:?}")))
    }
}

fn parse_threshold(name: &str) -> Option<Arc<dyn Udf>> {
    let rest = name.strip_prefix("dim")?;
    let (dim, above, t) = if let Some((d, t)) = rest.split_once("_gt_") {
        (d, true, t)
    } else {
        let (d, t) = rest.split_once("_lt_")?;
        (d, false, t)
    };
    let udf = ThresholdOnDimension {
        name: name.to_string(),
        dim: dim.parse().ok()?,
        threshold: t.parse().ok()?,
        above,
        cost: 10.0,
        selectivity: 0.5,
    };
    Some(Arc::new(udf))
}

/// Memoized UDF results for one store version, with an evaluation counter.
#[derive(Debug, Default)]
pub struct UdfCache {
    inner: Mutex<CacheInner>,
    evaluations: AtomicU64,
}

#[derive(Debug, Default)]
struct CacheInner {
    version: u64,
    results: HashMap<(String, u64), bool>,
}

impl UdfCache {
    pub fn new(version: u64) -> Self {
        Self {
            inner: Mutex::new(CacheInner {
                version,
                results: HashMap::new(),
            }),
            evaluations: AtomicU64::new(0),
        }
    }

    /// Drops all results when the store moved to another version.
    pub fn sync_version(&self, version: u64) {
        let mut inner = self.inner.lock().expect("cache lock");
        if inner.version != version {
            inner.version = version;
            inner.results.clear();
        }
    }

    /// UDF calls made through this cache so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(AtomicOrdering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn evaluate(&self, udf: &dyn Udf, item: &StoredItem) -> bool {
        let key = (udf.name().to_string(), item.id);
        if let Some(&hit) = self.inner.lock().expect("cache lock").results.get(&key) {
            return hit;
        }
        // evaluated outside the lock; a racing duplicate computes the same value
        let value = udf.evaluate(item);
        self.evaluations.fetch_add(1, AtomicOrdering::Relaxed);
        self.inner
            .lock()
            .expect("cache lock")
            .results
            .insert(key, value);
        value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredicateKind {
    /// `key` equals `value`; key `class` reads the class label.
    MetaEq {
        key: String,
        value: MetaValue,
    },
    /// Numeric `key` within the inclusive range.
    MetaRange {
        key: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
    },
    Udf {
        name: String,
    },
}

/// A predicate as written by a caller: estimates are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateSpec {
    #[serde(flatten)]
    pub kind: PredicateKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selectivity: Option<f64>,
}

impl PredicateSpec {
    pub fn new(kind: PredicateKind) -> Self {
        Self {
            kind,
            cost: None,
            selectivity: None,
        }
    }

    /// Fills missing estimates: metadata predicates cost [`METADATA_COST`] and
    /// have their selectivity measured on `store`; UDFs use their declared values.
    pub fn resolve(&self, store: &VectorStore, registry: &UdfRegistry) -> Result<Predicate> {
        let udf = match &self.kind {
            PredicateKind::Udf { name } => Some(registry.resolve(name)?),
            _ => None,
        };
        let cost = self
            .cost
            .unwrap_or_else(|| udf.as_ref().map_or(METADATA_COST, |u| u.cost_per_item()));
        let selectivity = match (self.selectivity, &udf) {
            (Some(s), _) => s,
            (None, Some(u)) => u.selectivity_estimate(),
            (None, None) => {
                let probe = Predicate {
                    kind: self.kind.clone(),
                    udf: None,
                    cost,
                    selectivity: 1.0,
                };
                let passing = store
                    .items()
                    .iter()
                    .filter(|it| probe.metadata_passes(it))
                    .count();
                // a zero estimate would make every plan free; floor at one item
                passing.max(1) as f64 / store.len().max(1) as f64
            }
        };
        Predicate::new(self.kind.clone(), udf, cost, selectivity)
    }
}

#[derive(Debug, Clone)]
pub struct Predicate {
    pub kind: PredicateKind,
    udf: Option<Arc<dyn Udf>>,
    pub cost: f64,
    pub selectivity: f64,
}

impl Predicate {
    pub fn new(
        kind: PredicateKind,
        udf: Option<Arc<dyn Udf>>,
        cost: f64,
        selectivity: f64,
    ) -> Result<Self> {
        if !(selectivity > 0.0 && selectivity <= 1.0) {
            return Err(Error::Filter(format!(
                "selectivity must lie in (0, 1], got {selectivity}"
            )));
        }
        if !(cost >= 0.0 && cost.is_finite()) {
            return Err(Error::Filter(format!(
                "cost must be non-negative, got {cost}"
            )));
        }
        if matches!(kind, PredicateKind::Udf { .. }) != udf.is_some() {
            return Err(Error::Filter(
                "UDF predicates need an evaluator, metadata predicates none".into(),
            ));
        }
        Ok(Self {
            kind,
            udf,
            cost,
            selectivity,
        })
    }

    pub fn metadata(kind: PredicateKind, selectivity: f64) -> Result<Self> {
        Self::new(kind, None, METADATA_COST, selectivity)
    }

    pub fn udf(udf: Arc<dyn Udf>) -> Result<Self> {
        let kind = PredicateKind::Udf {
            name: udf.name().to_string(),
        };
        let (cost, sel) = (udf.cost_per_item(), udf.selectivity_estimate());
        Self::new(kind, Some(udf), cost, sel)
    }

    pub fn is_udf(&self) -> bool {
        self.udf.is_some()
    }

    fn metadata_passes(&self, item: &StoredItem) -> bool {
        let field = |key: &str| -> Option<MetaValue> {
            if key == "class" {
                item.class_label().map(|c| MetaValue::Str(c.to_string()))
            } else {
                item.metadata.get(key).cloned()
            }
        };
        match &self.kind {
            PredicateKind::MetaEq { key, value } => field(key).is_some_and(|v| meta_eq(&v, value)),
            PredicateKind::MetaRange { key, min, max } => field(key)
                .and_then(|v| v.as_f64())
                .is_some_and(|x| min.is_none_or(|lo| x >= lo) && max.is_none_or(|hi| x <= hi)),
            PredicateKind::Udf { .. } => true,
        }
    }

    pub fn passes(&self, item: &StoredItem, cache: &UdfCache) -> bool {
        match &self.udf {
            Some(u) => cache.evaluate(u.as_ref(), item),
            None => self.metadata_passes(item),
        }
    }
}

fn meta_eq(a: &MetaValue, b: &MetaValue) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

/// Conjunction, cheapest predicate first so costly UDFs see fewer items.
fn passes_all(preds: &[&Predicate], item: &StoredItem, cache: &UdfCache) -> bool {
    preds.iter().all(|p| p.passes(item, cache))
}

fn by_cost(predicates: &[Predicate]) -> Vec<&Predicate> {
    let mut v: Vec<&Predicate> = predicates.iter().collect();
    v.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanKind {
    PreFilter,
    PostFilter {
        alpha: f64,
    },
    /// Multi-body search seeded by a spatial constraint.
    ConstraintFirst,
    /// Multi-body search joining per-object candidate lists.
    PerObject,
}

impl PlanKind {
    pub fn label(&self) -> &'static str {
        match self {
            PlanKind::PreFilter => "pre_filter",
            PlanKind::PostFilter { .. } => "post_filter",
            PlanKind::ConstraintFirst => "constraint_first",
            PlanKind::PerObject => "per_object",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanSpec {
    pub kind: PlanKind,
    pub estimated_cost: f64,
}

/// `min(ceil(2 / sel), N / k)`, raised to 2 when that leaves nothing above 1.
pub fn default_alpha(store_size: usize, k: usize, selectivity: f64) -> f64 {
    let a = (2.0 / selectivity).ceil().min(store_size as f64 / k as f64);
    if a > 1.0 {
        a
    } else {
        2.0
    }
}

/// Combined per-item filter cost and selectivity of a conjunction,
/// assuming independent predicates.
pub fn combined_estimates(predicates: &[Predicate]) -> (f64, f64) {
    let cost = predicates.iter().map(|p| p.cost).sum();
    let sel = predicates.iter().map(|p| p.selectivity).product();
    (cost, sel)
}

/// Cheaper of pre-filter (`N*f + sel*N*d`) and post-filter
/// (`N*d + alpha*k*f`); a tie goes to post-filter.
pub fn plan_query(store_size: usize, k: usize, predicates: &[Predicate]) -> Result<PlanSpec> {
    if k == 0 || store_size == 0 {
        return Err(Error::InvalidK {
            k,
            available: store_size,
        });
    }
    let n = store_size as f64;
    let (f, sel) = combined_estimates(predicates);
    let alpha = default_alpha(store_size, k, sel);
    let pre = n * f + sel * n * DISTANCE_COST;
    let post = n * DISTANCE_COST + alpha * k as f64 * f;
    Ok(if pre < post {
        PlanSpec {
            kind: PlanKind::PreFilter,
            estimated_cost: pre,
        }
    } else {
        PlanSpec {
            kind: PlanKind::PostFilter { alpha },
            estimated_cost: post,
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredHits {
    pub hits: Vec<RankedHit>,
    /// Fewer than `k` items pass the predicates.
    pub short: bool,
    /// Candidates whose predicates were evaluated.
    pub fetched: usize,
    pub escalations: usize,
    /// Alpha of the final post-filter pass.
    pub final_alpha: Option<f64>,
}

/// Every item ranked by distance to `query` (ties by id).
fn ranked(store: &VectorStore, query: &Embedding, metric: Metric) -> Result<Vec<RankedHit>> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    query.check_dim(store.dim())?;
    let mut all: Vec<RankedHit> = store
        .items()
        .iter()
        .map(|it| {
            RankedHit::new(
                it.id,
                raw_distance(query.as_slice(), it.embedding.as_slice(), metric),
            )
        })
        .collect();
    all.sort_by(hit_order);
    Ok(all)
}

fn check_k(k: usize, store: &VectorStore) -> Result<()> {
    if k == 0 || k > store.len() {
        return Err(Error::InvalidK {
            k,
            available: store.len(),
        });
    }
    Ok(())
}

pub fn execute_prefilter(
    store: &VectorStore,
    query: &Embedding,
    k: usize,
    predicates: &[Predicate],
    metric: Metric,
    cache: &UdfCache,
) -> Result<FilteredHits> {
    check_k(k, store)?;
    query.check_dim(store.dim())?;
    cache.sync_version(store.version());
    let preds = by_cost(predicates);
    let mut hits: Vec<RankedHit> = store
        .items()
        .iter()
        .filter(|it| passes_all(&preds, it, cache))
        .map(|it| {
            RankedHit::new(
                it.id,
                raw_distance(query.as_slice(), it.embedding.as_slice(), metric),
            )
        })
        .collect();
    hits.sort_by(hit_order);
    let short = hits.len() < k;
    hits.truncate(k);
    Ok(FilteredHits {
        hits,
        short,
        fetched: store.len(),
        escalations: 0,
        final_alpha: None,
    })
}

fn fetch_size(alpha: f64, k: usize, n: usize) -> usize {
    let want = (alpha * k as f64).ceil();
    if want >= n as f64 {
        n
    } else {
        want as usize
    }
}

/// Fetch, filter, and double `alpha` until `k` survive or the store is exhausted.
pub fn execute_postfilter(
    store: &VectorStore,
    query: &Embedding,
    k: usize,
    alpha: f64,
    predicates: &[Predicate],
    metric: Metric,
    cache: &UdfCache,
) -> Result<FilteredHits> {
    check_k(k, store)?;
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "alpha must exceed 1, got {alpha}"
        )));
    }
    cache.sync_version(store.version());
    let order = ranked(store, query, metric)?;
    let preds = by_cost(predicates);
    let n = store.len();
    let mut alpha = alpha;
    let mut escalations = 0;
    let mut checked = 0;
    let mut survivors: Vec<RankedHit> = Vec::new();
    loop {
        let fetch = fetch_size(alpha, k, n);
        for h in &order[checked..fetch] {
            if passes_all(&preds, store.require(h.id)?, cache) {
                survivors.push(*h);
            }
        }
        checked = fetch;
        if survivors.len() >= k || fetch == n {
            let short = survivors.len() < k;
            survivors.truncate(k);
            return Ok(FilteredHits {
                hits: survivors,
                short,
                fetched: fetch,
                escalations,
                final_alpha: Some(alpha),
            });
        }
        alpha *= 2.0;
        escalations += 1;
    }
}

/// Share of the pre-filter answer found by one post-filter pass at `alpha`
/// with no escalation. When fewer than `k` items pass, the denominator is
/// the number that do.
pub fn recall_at_alpha(
    store: &VectorStore,
    query: &Embedding,
    k: usize,
    alpha: f64,
    predicates: &[Predicate],
    metric: Metric,
) -> Result<f64> {
    check_k(k, store)?;
    let cache = UdfCache::new(store.version());
    let truth = execute_prefilter(store, query, k, predicates, metric, &cache)?;
    if truth.hits.is_empty() {
        return Ok(1.0);
    }
    let order = ranked(store, query, metric)?;
    let preds = by_cost(predicates);
    let fetch = fetch_size(alpha.max(0.0), k, store.len());
    let mut found = Vec::new();
    for h in &order[..fetch] {
        if found.len() == k {
            break;
        }
        if passes_all(&preds, store.require(h.id)?, &cache) {
            found.push(h.id);
        }
    }
    let hit = truth.hits.iter().filter(|h| found.contains(&h.id)).count();
    Ok(hit as f64 / truth.hits.len() as f64)
}

/// Parses `class=car and speed>=3 and 0.5<=conf<=1`-style expressions into
/// metadata predicates. Terms join with `and` or `&&`.
pub fn parse_filter(expr: &str) -> Result<Vec<PredicateSpec>> {
    let normalized = expr.replace("&&", " and ");
    let mut out = Vec::new();
    for term in normalized.split(" and ").map(str::trim) {
        if term.is_empty() {
            return Err(Error::Filter(format!("empty term in {expr:?}")));
        }
        out.push(PredicateSpec::new(parse_term(term)?));
    }
    Ok(out)
}

fn parse_number(s: &str, term: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Filter(format!("expected a number in {term:?}, found {s:?}")))
}

fn parse_key(s: &str, term: &str) -> Result<String> {
    let key = s.trim();
    if key.is_empty()
        || !key
            .chars()
            .all(|c| c.is_alphanumeric() || c == '_' || c == '.' || c == '-')
    {
        return Err(Error::Filter(format!("bad field name {key:?} in {term:?}")));
    }
    Ok(key.to_string())
}

fn parse_term(term: &str) -> Result<PredicateKind> {
    let parts: Vec<&str> = term.split("<=").collect();
    match parts.len() {
        3 => {
            return Ok(PredicateKind::MetaRange {
                key: parse_key(parts[1], term)?,
                min: Some(parse_number(parts[0], term)?),
                max: Some(parse_number(parts[2], term)?),
            })
        }
        2 => {
            return Ok(PredicateKind::MetaRange {
                key: parse_key(parts[0], term)?,
                min: None,
                max: Some(parse_number(parts[1], term)?),
            })
        }
        _ => {}
    }
    if let Some((k, v)) = term.split_once(">=") {
        return Ok(PredicateKind::MetaRange {
            key: parse_key(k, term)?,
            min: Some(parse_number(v, term)?),
            max: None,
        });
    }
    if let Some((k, v)) = term.split_once('=') {
        return Ok(PredicateKind::MetaEq {
            key: parse_key(k, term)?,
            value: parse_value(v.trim()),
        });
    }
    Err(Error::Filter(format!(
        "cannot parse {term:?}; expected key=value, key>=x, key<=x or lo<=key<=hi"
    )))
}

fn parse_value(s: &str) -> MetaValue {
    if let Some(inner) = s.strip_prefix('"').and_then(|r| r.strip_suffix('"')) {
        return MetaValue::Str(inner.to_string());
    }
    match s {
        "true" => return MetaValue::Bool(true),
        "false" => return MetaValue::Bool(false),
        _ => {}
    }
    if let Ok(i) = s.parse::<i64>() {
        return MetaValue::Int(i);
    }
    match s.parse::<f64>() {
        Ok(f) if f.is_finite() => MetaValue::Float(f),
        _ => MetaValue::Str(s.to_string()),
    }
}

/// Parses the `name:cost:sel` UDF flag; cost and selectivity may be omitted.
pub fn parse_udf_flag(flag: &str) -> Result<PredicateSpec> {
    let mut parts = flag.split(':');
    let name = parts
        .next()
        .filter(|n| !n.is_empty())
        .ok_or_else(|| Error::Filter(format!("empty UDF name in {flag:?}")))?;
    let cost = parts.next().map(|c| parse_number(c, flag)).transpose()?;
    let selectivity = parts.next().map(|s| parse_number(s, flag)).transpose()?;
    if parts.next().is_some() {
        return Err(Error::Filter(format!(
            "expected name:cost:sel, got {flag:?}"
        )));
    }
    Ok(PredicateSpec {
        kind: PredicateKind::Udf {
            name: name.to_string(),
        },
        cost,
        selectivity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::exact_topk;
    use proptest::prelude::*;

    fn line_store(n: usize) -> VectorStore {
        let items = (0..n).map(|i| {
            StoredItem::new(i as u64, Embedding::new(vec![i as f32]).unwrap())
                .with_class(if i % 2 == 0 { "even" } else { "odd" })
                .with_meta("i", i as i64)
        });
        VectorStore::from_items(1, Metric::Euclidean, items).unwrap()
    }

    fn even() -> Predicate {
        Predicate::metadata(
            PredicateKind::MetaEq {
                key: "class".into(),
                value: "even".into(),
            },
            0.5,
        )
        .unwrap()
    }

    fn q(v: f32) -> Embedding {
        Embedding::new(vec![v]).unwrap()
    }

    fn ids(h: &[RankedHit]) -> Vec<u64> {
        h.iter().map(|x| x.id).collect()
    }

    #[test]
    fn plan_examples() {
        let meta = Predicate::metadata(
            PredicateKind::MetaEq {
                key: "c".into(),
                value: "x".into(),
            },
            0.01,
        )
        .unwrap();
        assert_eq!(
            plan_query(10_000, 10, &[meta]).unwrap().kind,
            PlanKind::PreFilter
        );
        let udf = Predicate::new(
            PredicateKind::Udf { name: "u".into() },
            Some(parse_threshold("dim0_gt_0").unwrap()),
            1000.0,
            0.5,
        )
        .unwrap();
        assert!(matches!(
            plan_query(10_000, 10, &[udf]).unwrap().kind,
            PlanKind::PostFilter { .. }
        ));
        let free = Predicate::new(
            PredicateKind::MetaEq {
                key: "c".into(),
                value: "x".into(),
            },
            None,
            0.0,
            1.0,
        )
        .unwrap();
        let plan = plan_query(10_000, 10, &[free]).unwrap();
        assert_eq!(plan.kind, PlanKind::PostFilter { alpha: 2.0 });
        assert_eq!(plan.estimated_cost, 10_000.0);
    }

    #[test]
    fn alpha_policy() {
        assert_eq!(default_alpha(1000, 10, 0.5), 4.0);
        assert_eq!(default_alpha(1000, 10, 0.001), 100.0);
        assert_eq!(default_alpha(10, 10, 0.5), 2.0);
        assert_eq!(default_alpha(1000, 10, 1.0), 2.0);
    }

    #[test]
    fn plan_limits() {
        let mk = |cost: f64, sel: f64| {
            Predicate::new(
                PredicateKind::MetaEq {
                    key: "c".into(),
                    value: MetaValue::Int(1),
                },
                None,
                cost,
                sel,
            )
            .unwrap()
        };
        assert_eq!(
            plan_query(100_000, 10, &[mk(0.05, 1e-5)]).unwrap().kind,
            PlanKind::PreFilter
        );
        assert!(matches!(
            plan_query(100_000, 10, &[mk(1e7, 0.3)]).unwrap().kind,
            PlanKind::PostFilter { .. }
        ));
    }

    #[test]
    fn prefilter_examples() {
        let store = line_store(6);
        let cache = UdfCache::new(store.version());
        let got =
            execute_prefilter(&store, &q(2.6), 2, &[even()], Metric::Euclidean, &cache).unwrap();
        assert_eq!(ids(&got.hits), vec![2, 4]);
        assert!(!got.short);
        let plain = execute_prefilter(&store, &q(2.6), 3, &[], Metric::Euclidean, &cache).unwrap();
        assert_eq!(
            plain.hits,
            exact_topk(&store, &q(2.6), 3, Metric::Euclidean).unwrap()
        );
        let few =
            execute_prefilter(&store, &q(0.0), 5, &[even()], Metric::Euclidean, &cache).unwrap();
        assert!(few.short);
        assert_eq!(ids(&few.hits), vec![0, 2, 4]);
    }

    fn planted_udf_store() -> VectorStore {
        // 100 points on a line; only ids 25..=29 and 60.. have dim1 > 0
        let items = (0..100).map(|i| {
            let flag = if (25..30).contains(&i) || i >= 60 {
                1.0
            } else {
                -1.0
            };
            StoredItem::new(i, Embedding::new(vec![i as f32, flag]).unwrap())
        });
        VectorStore::from_items(2, Metric::Euclidean, items).unwrap()
    }

    #[test]
    fn postfilter_two_escalations() {
        let store = planted_udf_store();
        let udf = Predicate::udf(parse_threshold("dim1_gt_0").unwrap()).unwrap();
        let query = Embedding::new(vec![0.0, 0.0]).unwrap();
        let cache = UdfCache::new(store.version());
        let post = execute_postfilter(
            &store,
            &query,
            5,
            2.0,
            std::slice::from_ref(&udf),
            Metric::Euclidean,
            &cache,
        )
        .unwrap();
        assert_eq!(post.escalations, 2);
        assert_eq!(post.fetched, 40);
        assert_eq!(cache.evaluations(), 40);
        assert!(cache.evaluations() < store.len() as u64);
        let pre = execute_prefilter(
            &store,
            &query,
            5,
            &[udf],
            Metric::Euclidean,
            &UdfCache::new(0),
        )
        .unwrap();
        assert_eq!(post.hits, pre.hits);
        assert_eq!(ids(&pre.hits), vec![25, 26, 27, 28, 29]);
    }

    #[test]
    fn postfilter_edges() {
        let store = line_store(8);
        let cache = UdfCache::new(store.version());
        let covering = execute_postfilter(
            &store,
            &q(3.0),
            2,
            100.0,
            &[even()],
            Metric::Euclidean,
            &cache,
        )
        .unwrap();
        let pre =
            execute_prefilter(&store, &q(3.0), 2, &[even()], Metric::Euclidean, &cache).unwrap();
        assert_eq!(covering.hits, pre.hits);
        let never = Predicate::metadata(
            PredicateKind::MetaEq {
                key: "class".into(),
                value: "none".into(),
            },
            0.1,
        )
        .unwrap();
        let empty =
            execute_postfilter(&store, &q(3.0), 2, 2.0, &[never], Metric::Euclidean, &cache)
                .unwrap();
        assert!(empty.hits.is_empty() && empty.short);
        assert_eq!(empty.fetched, 8);
        assert!(
            execute_postfilter(&store, &q(3.0), 2, 1.0, &[], Metric::Euclidean, &cache).is_err()
        );
    }

    #[test]
    fn recall_examples() {
        let store = planted_udf_store();
        let udf = Predicate::udf(parse_threshold("dim1_gt_0").unwrap()).unwrap();
        let query = Embedding::new(vec![0.0, 0.0]).unwrap();
        let preds = std::slice::from_ref(&udf);
        assert_eq!(
            recall_at_alpha(&store, &query, 5, 20.0, preds, Metric::Euclidean).unwrap(),
            1.0
        );
        assert_eq!(
            recall_at_alpha(&store, &query, 5, 2.0, preds, Metric::Euclidean).unwrap(),
            0.0
        );
        assert_eq!(
            recall_at_alpha(&store, &query, 5, 5.6, preds, Metric::Euclidean).unwrap(),
            0.6
        );
        let at_query = Embedding::new(vec![27.0, 0.0]).unwrap();
        assert_eq!(
            recall_at_alpha(&store, &at_query, 5, 2.0, preds, Metric::Euclidean).unwrap(),
            1.0
        );
    }

    #[test]
    fn cache_counts_once_per_version() {
        let store = line_store(10);
        let udf = parse_threshold("dim0_gt_4").unwrap();
        let cache = UdfCache::new(store.version());
        for it in store.items() {
            cache.evaluate(udf.as_ref(), it);
            cache.evaluate(udf.as_ref(), it);
        }
        assert_eq!(cache.evaluations(), 10);
        cache.sync_version(store.version() + 1);
        assert!(cache.is_empty());
    }

    #[test]
    fn registry_builtins() {
        let reg = UdfRegistry::new();
        let u = reg.resolve("dim3_lt_-0.5").unwrap();
        assert_eq!(u.name(), "dim3_lt_-0.5");
        let slow = reg.resolve("slow_dim0_gt_1").unwrap();
        assert_eq!(slow.cost_per_item(), 1010.0);
        assert!(reg.resolve("nope").is_err());
        let mut reg = UdfRegistry::new();
        reg.register(Arc::new(ThresholdOnDimension {
            name: "mine".into(),
            dim: 0,
            threshold: 0.0,
            above: true,
            cost: 3.0,
            selectivity: 0.2,
        }));
        assert_eq!(reg.resolve("mine").unwrap().selectivity_estimate(), 0.2);
    }

    #[test]
    fn filter_parsing() {
        let got = parse_filter("class=car and 0.5<=conf<=1 && speed>=3 and lane<=2").unwrap();
        let kinds: Vec<PredicateKind> = got.into_iter().map(|p| p.kind).collect();
        assert_eq!(
            kinds,
            vec![
                PredicateKind::MetaEq {
                    key: "class".into(),
                    value: "car".into()
                },
                PredicateKind::MetaRange {
                    key: "conf".into(),
                    min: Some(0.5),
                    max: Some(1.0)
                },
                PredicateKind::MetaRange {
                    key: "speed".into(),
                    min: Some(3.0),
                    max: None
                },
                PredicateKind::MetaRange {
                    key: "lane".into(),
                    min: None,
                    max: Some(2.0)
                },
            ]
        );
        assert!(parse_filter("").is_err());
        assert!(parse_filter("speed>=fast").is_err());
        let udf = parse_udf_flag("dim0_gt_0:500:0.3").unwrap();
        assert_eq!((udf.cost, udf.selectivity), (Some(500.0), Some(0.3)));
        assert!(parse_udf_flag(":1:1").is_err());
    }

    #[test]
    fn spec_resolution_measures_metadata() {
        let store = line_store(10);
        let spec = PredicateSpec::new(PredicateKind::MetaRange {
            key: "i".into(),
            min: Some(7.0),
            max: None,
        });
        let p = spec.resolve(&store, &UdfRegistry::new()).unwrap();
        assert_eq!((p.cost, p.selectivity), (METADATA_COST, 0.3));
        let json = serde_json::to_value(&spec).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"kind": "meta_range", "key": "i", "min": 7.0})
        );
        let back: PredicateSpec = serde_json::from_value(
            serde_json::json!({"kind": "udf", "name": "dim0_gt_0", "cost": 5}),
        )
        .unwrap();
        assert_eq!(back.cost, Some(5.0));
    }

    proptest! {
        #[test]
        fn escalation_matches_prefilter(seed in any::<u64>(), n in 5usize..120, k in 1usize..6, thr in -1.5f32..1.5, alpha in 1.1f64..6.0) {
            let store = crate::synth::gaussian_store(seed, n, 3);
            let k = k.min(n);
            let udf = Predicate::udf(Arc::new(ThresholdOnDimension { name: "t".into(), dim: 1, threshold: thr, above: true, cost: 50.0, selectivity: 0.5 })).unwrap();
            let query = Embedding::new(vec![0.3, -0.2, 0.1]).unwrap();
            let preds = std::slice::from_ref(&udf);
            let cache = UdfCache::new(store.version());
            let post = execute_postfilter(&store, &query, k, alpha, preds, Metric::Euclidean, &cache).unwrap();
            prop_assert!(cache.evaluations() as usize <= post.fetched);
            let pre = execute_prefilter(&store, &query, k, preds, Metric::Euclidean, &UdfCache::new(0)).unwrap();
            prop_assert_eq!(&post.hits, &pre.hits);
            let mut last = 0.0;
            for a in [1.0, 1.5, 2.0, 3.0, 5.0, 8.0, 13.0, 40.0] {
                let r = recall_at_alpha(&store, &query, k, a, preds, Metric::Euclidean).unwrap();
                prop_assert!(r >= last);
                last = r;
            }
        }
    }
}
