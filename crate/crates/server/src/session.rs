//! Feedback sessions: label, adapt, re-search, against a pinned snapshot.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use simsearch::feedback::{
    adapt_query, adapt_weights, materialize_all, materialize_if_affecting, ranking_satisfied,
    FeedbackLabel, ParameterizedStore, PendingSet, Polarity, WeightParams, DEFAULT_BETA,
    DEFAULT_GAMMA, DEFAULT_MARGIN,
};
use simsearch::local::{iterative_topk, LocalSearchParams, DEFAULT_LAMBDA};
use simsearch::{exact_topk, Embedding, Metric, RankedHit, VectorStore};

use crate::engine::{bad, hits_out, ApiError, HitOut};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    #[default]
    Classic,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<Embedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<u64>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub mode: SessionMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
}

fn default_k() -> usize {
    10
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Move the query (Rocchio).
    #[default]
    Query,
    /// Re-weight the labeled items' components.
    Weights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelIn {
    pub id: u64,
    #[serde(alias = "polarity")]
    pub label: Polarity,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    /// Components per item for the weights strategy, fixed by the first such round.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    #[serde(default)]
    pub labels: Vec<LabelIn>,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub params: FeedbackParams,
    /// Replaces the session query before this round.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<Embedding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackOutcome {
    pub round: u32,
    pub query: Embedding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_query: Option<Embedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_updates: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub applied: Vec<u64>,
    /// Labels that could not be used, as `(id, reason)`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<(u64, String)>,
    /// Whether every positive now ranks ahead of every negative.
    pub satisfied: bool,
    pub hits: Vec<HitOut>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub request: FeedbackRequest,
    pub hits: Vec<RankedHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: u64,
    pub config: SessionConfig,
    pub version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<Embedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_hits: Option<Vec<RankedHit>>,
    pub rounds: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRound {
    pub round: u32,
    pub hits: Vec<HitOut>,
    pub identical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub identical: bool,
    pub rounds: Vec<ReplayRound>,
}

pub struct Session {
    id: u64,
    config: SessionConfig,
    pinned: Arc<VectorStore>,
    query: Option<Embedding>,
    initial_hits: Option<Vec<RankedHit>>,
    weights: Option<(ParameterizedStore, PendingSet)>,
    rounds: Vec<RoundRecord>,
}

impl Session {
    /// Opens a session on `pinned`; runs the initial search when a query is given.
    pub fn open(
        id: u64,
        config: SessionConfig,
        pinned: Arc<VectorStore>,
    ) -> Result<Self, ApiError> {
        if config.k == 0 || config.k > pinned.len() {
            return Err(bad(format!(
                "k must lie in 1..={}, got {}",
                pinned.len(),
                config.k
            )));
        }
        let query = match (&config.query, config.query_id) {
            (Some(_), Some(_)) => return Err(bad("give either query or query_id, not both")),
            (Some(q), None) => Some(q.clone()),
            (None, Some(id)) => Some(pinned.require(id)?.embedding.clone()),
            (None, None) => None,
        };
        let mut s = Self {
            id,
            config,
            pinned,
            query,
            initial_hits: None,
            weights: None,
            rounds: Vec::new(),
        };
        if let Some(q) = s.query.clone() {
            s.initial_hits = Some(s.search(&s.pinned, &q)?);
        }
        Ok(s)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn version(&self) -> u64 {
        self.pinned.version()
    }

    pub fn initial_hits(&self) -> Option<Vec<HitOut>> {
        self.initial_hits
            .as_ref()
            .map(|h| hits_out(&self.pinned, h))
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            session_id: self.id,
            config: self.config.clone(),
            version: self.version(),
            query: self.query.clone(),
            initial_hits: self.initial_hits.clone(),
            rounds: self.rounds.clone(),
        }
    }

    fn metric(&self) -> Metric {
        self.config.metric.unwrap_or(self.pinned.metric())
    }

    fn search(&self, store: &VectorStore, query: &Embedding) -> Result<Vec<RankedHit>, ApiError> {
        let k = self.config.k;
        Ok(match self.config.mode {
            SessionMode::Classic => exact_topk(store, query, k, self.metric())?,
            SessionMode::Local => {
                let params = LocalSearchParams::new(k)
                    .lambda(self.config.lambda.unwrap_or(DEFAULT_LAMBDA))
                    .metric(self.metric());
                iterative_topk(store, query, &params)?
            }
        })
    }

    /// The store the session currently searches.
    fn current(&self) -> &VectorStore {
        match &self.weights {
            Some((p, _)) => p.store(),
            None => &self.pinned,
        }
    }

    pub fn feedback(&mut self, req: &FeedbackRequest) -> Result<FeedbackOutcome, ApiError> {
        let round = self.rounds.len() as u32 + 1;
        let query = match (&req.query, &self.query) {
            (Some(q), _) | (None, Some(q)) => q.clone(),
            (None, None) => {
                return Err(bad(
                    "the session has no query yet; send one with this round",
                ))
            }
        };
        if query.dim() != self.pinned.dim() {
            return Err(bad(format!(
                "query has dimension {}, the dataset {}",
                query.dim(),
                self.pinned.dim()
            )));
        }
        let mut seen = BTreeSet::new();
        for l in &req.labels {
            if !seen.insert(l.id) {
                return Err(bad(format!("item {} is labeled twice in one round", l.id)));
            }
            self.pinned.require(l.id)?;
        }
        let ids = |p: Polarity| {
            req.labels
                .iter()
                .filter(|l| l.label == p)
                .map(|l| l.id)
                .collect::<Vec<_>>()
        };
        let (pos, neg) = (ids(Polarity::Positive), ids(Polarity::Negative));
        let metric = self.metric();

        let mut outcome = FeedbackOutcome {
            round,
            query: query.clone(),
            new_query: None,
            pending_updates: None,
            applied: Vec::new(),
            rejected: Vec::new(),
            satisfied: true,
            hits: Vec::new(),
        };
        let hits = if req.labels.is_empty() {
            self.search(self.current(), &query)?
        } else {
            match req.strategy {
                Strategy::Query => {
                    let store = self.current();
                    let emb = |v: &[u64]| -> Vec<Embedding> {
                        v.iter()
                            .map(|&id| store.get(id).expect("checked").embedding.clone())
                            .collect()
                    };
                    let beta = req.params.beta.unwrap_or(DEFAULT_BETA);
                    let gamma = req.params.gamma.unwrap_or(DEFAULT_GAMMA);
                    let adapted = adapt_query(&query, &emb(&pos), &emb(&neg), beta, gamma)?;
                    outcome.satisfied = ranking_satisfied(&adapted, store, &pos, &neg, metric)?;
                    let hits = self.search(store, &adapted)?;
                    outcome.new_query = Some(adapted.clone());
                    outcome.query = adapted;
                    hits
                }
                Strategy::Weights => self.weights_round(req, round, &query, &mut outcome)?,
            }
        };
        self.query = Some(outcome.query.clone());
        outcome.hits = hits_out(self.current(), &hits);
        self.rounds.push(RoundRecord {
            round,
            request: req.clone(),
            hits,
        });
        Ok(outcome)
    }

    fn weights_round(
        &mut self,
        req: &FeedbackRequest,
        round: u32,
        query: &Embedding,
        outcome: &mut FeedbackOutcome,
    ) -> Result<Vec<RankedHit>, ApiError> {
        let metric = self.metric();
        if self.weights.is_none() {
            let parts = req.params.parts.unwrap_or(2);
            let pstore = ParameterizedStore::split_orthogonal(
                (*self.pinned).clone(),
                parts,
                req.params.seed.unwrap_or(0),
            )?;
            self.weights = Some((pstore, PendingSet::new()));
        }
        let labels: Vec<FeedbackLabel> = req
            .labels
            .iter()
            .map(|l| match l.label {
                Polarity::Positive => FeedbackLabel::positive(l.id, round),
                Polarity::Negative => FeedbackLabel::negative(l.id, round),
            })
            .collect();
        let defaults = WeightParams::default();
        let params = WeightParams {
            eta: req.params.eta.unwrap_or(defaults.eta),
            steps: req.params.steps.unwrap_or(defaults.steps),
            margin: req.params.margin.unwrap_or(DEFAULT_MARGIN),
            metric,
            round,
        };
        let local = self.config.mode == SessionMode::Local;
        let k = self.config.k;
        let (pstore, pending) = self.weights.as_mut().expect("created above");
        let adaptation = adapt_weights(pstore, &labels, query, &params)?;
        outcome.rejected = adaptation
            .rejected
            .iter()
            .map(|(id, e)| (*id, e.to_string()))
            .collect();
        pending.extend(adaptation.pending);
        // the lazy fixpoint only covers a plain top-k; local search looks further out
        outcome.applied = if local {
            materialize_all(pstore, pending)?
        } else {
            materialize_if_affecting(pstore, pending, query, k, metric)?
        };
        outcome.pending_updates = Some(pending.len());
        let ids = |p: Polarity| {
            req.labels
                .iter()
                .filter(|l| l.label == p)
                .map(|l| l.id)
                .collect::<Vec<_>>()
        };
        outcome.satisfied = ranking_satisfied(
            query,
            pstore.store(),
            &ids(Polarity::Positive),
            &ids(Polarity::Negative),
            metric,
        )?;
        let store = self.weights.as_ref().expect("created above").0.store();
        self.search(store, query)
    }

    /// Re-runs every recorded round on a fresh session over the same snapshot.
    pub fn replay(&self) -> Result<ReplayReport, ApiError> {
        let mut fresh = Session::open(self.id, self.config.clone(), self.pinned.clone())?;
        let mut rounds = Vec::with_capacity(self.rounds.len());
        for rec in &self.rounds {
            let out = fresh.feedback(&rec.request)?;
            let again = &fresh.rounds.last().expect("just recorded").hits;
            rounds.push(ReplayRound {
                round: rec.round,
                identical: *again == rec.hits,
                hits: out.hits,
            });
        }
        Ok(ReplayReport {
            identical: rounds.iter().all(|r| r.identical),
            rounds,
        })
    }
}
