//! The searchable corpus and the exact top-k baseline.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::embedding::{raw_distance, Embedding, Metric};
use crate::error::{Error, Result};

/// A scalar metadata value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetaValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl MetaValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            MetaValue::Int(i) => Some(*i as f64),
            MetaValue::Float(f) => Some(*f),
            _ => None,
        }
    }
}

impl From<&str> for MetaValue {
    fn from(s: &str) -> Self {
        MetaValue::Str(s.to_owned())
    }
}

impl From<i64> for MetaValue {
    fn from(v: i64) -> Self {
        MetaValue::Int(v)
    }
}

impl From<f64> for MetaValue {
    fn from(v: f64) -> Self {
        MetaValue::Float(v)
    }
}

impl From<bool> for MetaValue {
    fn from(v: bool) -> Self {
        MetaValue::Bool(v)
    }
}

pub type Metadata = BTreeMap<String, MetaValue>;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredItem {
    pub id: u64,
    pub embedding: Embedding,
    class_label: Option<String>,
    pub metadata: Metadata,
}

impl StoredItem {
    pub fn new(id: u64, embedding: Embedding) -> Self {
        Self {
            id,
            embedding,
            class_label: None,
            metadata: Metadata::new(),
        }
    }

    pub fn with_class(mut self, class: impl Into<String>) -> Self {
        self.class_label = Some(class.into());
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<MetaValue>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    /// Fixed at ingest; there is intentionally no setter.
    pub fn class_label(&self) -> Option<&str> {
        self.class_label.as_deref()
    }
}

/// One search result. `score` is a distance: lower ranks first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedHit {
    pub id: u64,
    pub score: f64,
}

impl RankedHit {
    pub fn new(id: u64, score: f64) -> Self {
        Self { id, score }
    }
}

/// Ascending score, then ascending id.
pub fn hit_order(a: &RankedHit, b: &RankedHit) -> Ordering {
    a.score
        .partial_cmp(&b.score)
        .unwrap_or(Ordering::Equal)
        .then(a.id.cmp(&b.id))
}

/// Keeps the `k` best hits, sorted by [`hit_order`].
pub(crate) fn take_topk(mut scored: Vec<RankedHit>, k: usize) -> Vec<RankedHit> {
    if k < scored.len() {
        if k > 0 {
            scored.select_nth_unstable_by(k - 1, hit_order);
        }
        scored.truncate(k);
    }
    scored.sort_by(hit_order);
    scored
}

/// An immutable-by-convention collection of items sharing one dimension.
#[derive(Debug, Clone)]
pub struct VectorStore {
    dim: usize,
    metric: Metric,
    items: Vec<StoredItem>,
    index: HashMap<u64, usize>,
    version: u64,
}

impl PartialEq for VectorStore {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.metric == other.metric && self.items == other.items
    }
}

impl VectorStore {
    pub fn new(dim: usize, metric: Metric) -> Self {
        Self {
            dim,
            metric,
            items: Vec::new(),
            index: HashMap::new(),
            version: 0,
        }
    }

    pub fn from_items(
        dim: usize,
        metric: Metric,
        items: impl IntoIterator<Item = StoredItem>,
    ) -> Result<Self> {
        let mut store = Self::new(dim, metric);
        for item in items {
            store.insert(item)?;
        }
        Ok(store)
    }

    /// Builds a store with ids `0..n` from raw rows.
    pub fn from_rows(metric: Metric, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let items = rows
            .iter()
            .enumerate()
            .map(|(i, r)| Ok(StoredItem::new(i as u64, Embedding::new(r.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_items(dim, metric, items)
    }

    pub fn insert(&mut self, item: StoredItem) -> Result<()> {
        item.embedding.check_dim(self.dim)?;
        if self.index.contains_key(&item.id) {
            return Err(Error::DuplicateId(item.id));
        }
        self.index.insert(item.id, self.items.len());
        self.items.push(item);
        self.version += 1;
        Ok(())
    }

    /// Swaps one item's vector, producing a new version. Labels and metadata stay.
    pub fn replace_embedding(&mut self, id: u64, embedding: Embedding) -> Result<()> {
        embedding.check_dim(self.dim)?;
        let pos = *self.index.get(&id).ok_or(Error::UnknownId(id))?;
        self.items[pos].embedding = embedding;
        self.version += 1;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn items(&self) -> &[StoredItem] {
        &self.items
    }

    pub fn get(&self, id: u64) -> Option<&StoredItem> {
        self.index.get(&id).map(|&pos| &self.items[pos])
    }

    pub fn require(&self, id: u64) -> Result<&StoredItem> {
        self.get(id).ok_or(Error::UnknownId(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.items.iter().map(|it| it.id)
    }

    /// Items sorted by id, the canonical order used by file output.
    pub fn sorted_items(&self) -> Vec<&StoredItem> {
        let mut v: Vec<&StoredItem> = self.items.iter().collect();
        v.sort_by_key(|it| it.id);
        v
    }

    pub(crate) fn check_k(&self, k: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyStore);
        }
        if k == 0 || k > self.len() {
            return Err(Error::InvalidK {
                k,
                available: self.len(),
            });
        }
        Ok(())
    }
}

/// Brute-force k nearest neighbours. Ties resolve to the lower id.
pub fn exact_topk(
    store: &VectorStore,
    query: &Embedding,
    k: usize,
    metric: Metric,
) -> Result<Vec<RankedHit>> {
    store.check_k(k)?;
    query.check_dim(store.dim())?;
    let q = query.as_slice();
    let scored = store
        .items()
        .iter()
        .map(|it| RankedHit::new(it.id, raw_distance(q, it.embedding.as_slice(), metric)))
        .collect();
    Ok(take_topk(scored, k))
}

/// Single-writer, many-reader holder of versioned snapshots.
///
/// Readers clone an `Arc` and keep a consistent view for as long as they
/// hold it. Writers are serialized and publish a fresh snapshot atomically.
#[derive(Debug)]
pub struct Snapshots<T> {
    current: RwLock<Arc<T>>,
    writer: Mutex<()>,
}

impl<T: Clone> Snapshots<T> {
    pub fn new(value: T) -> Self {
        Self {
            current: RwLock::new(Arc::new(value)),
            writer: Mutex::new(()),
        }
    }

    pub fn load(&self) -> Arc<T> {
        self.current.read().expect("snapshot lock poisoned").clone()
    }

    /// Copies the current snapshot, applies `f`, and publishes the result
    /// if `f` succeeds.
    pub fn update<R, E>(&self, f: impl FnOnce(&mut T) -> Result<R, E>) -> Result<R, E> {
        let _guard = self.writer.lock().expect("writer lock poisoned");
        let mut next = (*self.load()).clone();
        let out = f(&mut next)?;
        *self.current.write().expect("snapshot lock poisoned") = Arc::new(next);
        Ok(out)
    }
}
