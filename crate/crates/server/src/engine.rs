//! Search requests and their execution against one store snapshot.
//! Shared by the HTTP handlers and the `search` subcommand.

use std::borrow::Cow;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use simsearch::global::{
    build_coreset, rank_by_hyperplane, train_separator, train_separator_on, CoresetMethod,
    CoresetSpec, SvmParams,
};
use simsearch::local::{iterative_topk, LocalSearchParams, DEFAULT_LAMBDA};
use simsearch::multibody::{
    strategy_constraint_first_traced, strategy_per_object_traced, validate_constraints, Constraint,
    MultiQuery, SceneFile, SceneObject, FALLBACK_K0,
};
use simsearch::planner::{
    execute_postfilter, execute_prefilter, plan_query, PlanKind, PlanSpec, Predicate,
    PredicateSpec, UdfCache, UdfRegistry, DISTANCE_COST,
};
use simsearch::{
    distance, exact_topk, Embedding, MetaValue, Metadata, Metric, RankedHit, VectorStore,
};

/// Metadata keys read when multi-body objects come from a dataset.
pub const SCENE_KEY: &str = "scene";
pub const X_KEY: &str = "x";
pub const Y_KEY: &str = "y";
pub const FRAME_START_KEY: &str = "frame_start";
pub const FRAME_END_KEY: &str = "frame_end";

#[derive(Debug, Clone, PartialEq)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ApiError::BadRequest(m) | ApiError::NotFound(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for ApiError {}

impl From<simsearch::Error> for ApiError {
    fn from(e: simsearch::Error) -> Self {
        ApiError::BadRequest(e.to_string())
    }
}

pub fn bad(msg: impl Into<String>) -> ApiError {
    ApiError::BadRequest(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Classic,
    Local,
    Global,
    Multibody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryInput {
    Vector(Embedding),
    Multi(MultiQuery),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    /// Required over HTTP; the command line names a store directory instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub mode: SearchMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<QueryInput>,
    /// Use a stored item's vector as the query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<u64>,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reg_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coreset_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coreset_method: Option<CoresetMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<Constraint>,
    /// Objects to search; by default they are read from the dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenes: Option<SceneFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<usize>,

    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub filters: Vec<PredicateSpec>,
    /// Forces a post-filter plan with this over-fetch factor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl SearchRequest {
    pub fn new(mode: SearchMode, k: usize) -> Self {
        Self {
            dataset: None,
            mode,
            query: None,
            query_id: None,
            k,
            metric: None,
            lambda: None,
            batch: None,
            reg_c: None,
            epochs: None,
            coreset_size: None,
            coreset_method: None,
            seed: None,
            constraints: Vec::new(),
            scenes: None,
            k0: None,
            filters: Vec::new(),
            alpha: None,
        }
    }

    pub fn vector(mut self, v: Vec<f32>) -> Result<Self, ApiError> {
        self.query = Some(QueryInput::Vector(Embedding::new(v)?));
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitOut {
    pub id: u64,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    #[serde(default)]
    pub metadata: Metadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotOut {
    pub slot: usize,
    pub scene_id: u64,
    pub object_id: u64,
    pub class: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentOut {
    pub score: f64,
    pub slots: Vec<SlotOut>,
    pub rounds: usize,
    pub tuples_evaluated: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub short: bool,
    pub fetched: usize,
    pub escalations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_alpha: Option<f64>,
    pub udf_evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub hits: Vec<HitOut>,
    pub plan_used: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterStats>,
    /// Multi-body answers: the best alignment, or none when infeasible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentOut>,
    pub timings: Timings,
}

/// What a search runs against.
pub struct SearchContext<'a> {
    pub store: &'a VectorStore,
    pub registry: &'a UdfRegistry,
    pub cache: &'a UdfCache,
}

pub fn hits_out(store: &VectorStore, hits: &[RankedHit]) -> Vec<HitOut> {
    hits.iter()
        .map(|h| {
            let item = store.get(h.id);
            HitOut {
                id: h.id,
                score: h.score,
                class: item.and_then(|it| it.class_label()).map(str::to_string),
                metadata: item.map(|it| it.metadata.clone()).unwrap_or_default(),
            }
        })
        .collect()
}

fn vector_query(store: &VectorStore, req: &SearchRequest) -> Result<Embedding, ApiError> {
    match (&req.query, req.query_id) {
        (Some(QueryInput::Vector(v)), None) => Ok(v.clone()),
        (None, Some(id)) => Ok(store.require(id)?.embedding.clone()),
        (Some(QueryInput::Multi(_)), _) => {
            Err(bad("a multi-object query needs mode \"multibody\""))
        }
        (Some(_), Some(_)) => Err(bad("give either query or query_id, not both")),
        (None, None) => Err(bad("missing query (a vector) or query_id")),
    }
}

/// Items passing every predicate, as a store of their own.
fn filtered<'s>(
    store: &'s VectorStore,
    preds: &[Predicate],
    cache: &UdfCache,
) -> Result<Cow<'s, VectorStore>, ApiError> {
    if preds.is_empty() {
        return Ok(Cow::Borrowed(store));
    }
    cache.sync_version(store.version());
    let items: Vec<_> = store
        .items()
        .iter()
        .filter(|it| preds.iter().all(|p| p.passes(it, cache)))
        .cloned()
        .collect();
    Ok(Cow::Owned(VectorStore::from_items(
        store.dim(),
        store.metric(),
        items,
    )?))
}

/// Reads multi-body objects from item metadata: `scene` (default 0), the
/// class label, optional `x`/`y` centroid and `frame_start`/`frame_end`.
pub fn dataset_objects(store: &VectorStore) -> Vec<SceneObject> {
    let num = |m: &Metadata, key: &str| m.get(key).and_then(MetaValue::as_f64);
    store
        .sorted_items()
        .into_iter()
        .map(|it| {
            let scene = num(&it.metadata, SCENE_KEY).map_or(0, |s| s as u64);
            let mut o = SceneObject::new(
                scene,
                it.id,
                it.class_label().unwrap_or(""),
                it.embedding.clone(),
            );
            if let (Some(x), Some(y)) = (num(&it.metadata, X_KEY), num(&it.metadata, Y_KEY)) {
                o = o.at(x, y);
            }
            if let (Some(s), Some(e)) = (
                num(&it.metadata, FRAME_START_KEY),
                num(&it.metadata, FRAME_END_KEY),
            ) {
                o = o.during(s as i64, e as i64);
            }
            o
        })
        .collect()
}

pub fn execute(ctx: &SearchContext<'_>, req: &SearchRequest) -> Result<SearchResponse, ApiError> {
    let start = Instant::now();
    if req.k == 0 {
        return Err(bad("k must be at least 1"));
    }
    let store = ctx.store;
    let metric = req.metric.unwrap_or(store.metric());
    let preds: Vec<Predicate> = req
        .filters
        .iter()
        .map(|f| f.resolve(store, ctx.registry))
        .collect::<Result<_, _>>()?;
    let mut out = SearchResponse {
        hits: Vec::new(),
        plan_used: PlanKind::PreFilter.label().to_string(),
        plan: None,
        filter: None,
        alignment: None,
        timings: Timings { total_ms: 0.0 },
    };

    match req.mode {
        SearchMode::Classic => {
            let query = vector_query(store, req)?;
            if preds.is_empty() {
                out.hits = hits_out(store, &exact_topk(store, &query, req.k, metric)?);
            } else {
                let mut plan = plan_query(store.len(), req.k, &preds)?;
                if let Some(alpha) = req.alpha {
                    let (f, _) = simsearch::planner::combined_estimates(&preds);
                    let cost = store.len() as f64 * DISTANCE_COST + alpha * req.k as f64 * f;
                    plan = PlanSpec {
                        kind: PlanKind::PostFilter { alpha },
                        estimated_cost: cost,
                    };
                }
                let before = ctx.cache.evaluations();
                let res = match plan.kind {
                    PlanKind::PostFilter { alpha } => {
                        execute_postfilter(store, &query, req.k, alpha, &preds, metric, ctx.cache)?
                    }
                    _ => execute_prefilter(store, &query, req.k, &preds, metric, ctx.cache)?,
                };
                out.hits = hits_out(store, &res.hits);
                out.plan_used = plan.kind.label().to_string();
                out.plan = Some(plan);
                out.filter = Some(FilterStats {
                    short: res.short,
                    fetched: res.fetched,
                    escalations: res.escalations,
                    final_alpha: res.final_alpha,
                    udf_evaluations: ctx.cache.evaluations() - before,
                });
            }
        }
        SearchMode::Local => {
            let query = vector_query(store, req)?;
            let view = filtered(store, &preds, ctx.cache)?;
            let params = LocalSearchParams::new(req.k)
                .lambda(req.lambda.unwrap_or(DEFAULT_LAMBDA))
                .batch_size(req.batch.unwrap_or(1))
                .metric(metric);
            out.hits = hits_out(store, &iterative_topk(&view, &query, &params)?);
        }
        SearchMode::Global => {
            let query = vector_query(store, req)?;
            let view = filtered(store, &preds, ctx.cache)?;
            let defaults = SvmParams::default();
            let params = SvmParams {
                reg_c: req.reg_c.unwrap_or(defaults.reg_c),
                epochs: req.epochs.unwrap_or(defaults.epochs),
                seed: req.seed.unwrap_or(defaults.seed),
                ..defaults
            };
            let positives = std::slice::from_ref(&query);
            let sep = match req.coreset_size {
                Some(size) => {
                    let method = req.coreset_method.unwrap_or(CoresetMethod::KCenterGreedy);
                    let ids = build_coreset(
                        &view,
                        &CoresetSpec {
                            size,
                            method,
                            seed: params.seed,
                        },
                    )?;
                    train_separator_on(&view, &ids, positives, &params)?.separator
                }
                None => train_separator(&view, positives, &params)?,
            };
            out.hits = hits_out(store, &rank_by_hyperplane(&view, &sep, req.k)?);
        }
        SearchMode::Multibody => {
            let Some(QueryInput::Multi(query)) = &req.query else {
                return Err(bad(
                    "mode \"multibody\" needs a multi-object query {objects, weights}",
                ));
            };
            if !preds.is_empty() {
                return Err(bad("filters are not supported in multibody mode"));
            }
            let mut query = query.clone();
            if let Some(m) = req.metric {
                query.metric = m;
            }
            validate_constraints(&query, &req.constraints)?;
            let objects = match &req.scenes {
                Some(scenes) => scenes.clone().into_objects()?,
                None => dataset_objects(store),
            };
            let spatial = req
                .constraints
                .iter()
                .any(|c| matches!(c, Constraint::Spatial { .. }));
            let (found, stats) = if spatial {
                out.plan_used = PlanKind::ConstraintFirst.label().to_string();
                strategy_constraint_first_traced(&objects, &query, &req.constraints)?
            } else {
                out.plan_used = PlanKind::PerObject.label().to_string();
                strategy_per_object_traced(
                    &objects,
                    &query,
                    &req.constraints,
                    req.k0.unwrap_or(FALLBACK_K0),
                )?
            };
            if let Some(a) = found {
                let mut slots = Vec::with_capacity(a.mapping.len());
                for (slot, key) in a.mapping.iter().enumerate() {
                    let obj = objects
                        .iter()
                        .find(|o| o.key() == *key)
                        .expect("alignment refers to known objects");
                    slots.push(SlotOut {
                        slot,
                        scene_id: key.scene_id,
                        object_id: key.object_id,
                        class: obj.class_label.clone(),
                        distance: distance(
                            &query.objects[slot].embedding,
                            &obj.embedding,
                            query.metric,
                        )?,
                    });
                }
                out.alignment = Some(AlignmentOut {
                    score: a.score,
                    slots,
                    rounds: stats.rounds,
                    tuples_evaluated: stats.tuples_evaluated,
                });
            }
        }
    }
    out.timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(out)
}
