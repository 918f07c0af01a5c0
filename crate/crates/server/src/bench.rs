//! Seeded experiments behind `simsearch bench`. Each returns a
//! [`BenchReport`]; the JSON layout is described in `docs/results-schema.md`.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use simsearch::local::{cluster_purity, iterative_topk, LocalSearchParams};
use simsearch::multibody::{
    brute_force_best, count_alignments, strategy_constraint_first_traced,
    strategy_per_object_traced, Alignment,
};
use simsearch::planner::{
    execute_postfilter, execute_prefilter, plan_query, PlanKind, Predicate, ThresholdOnDimension,
    UdfCache,
};
use simsearch::subsequence::{
    evaluate_retrieval, overlap_ratio, retrieve_task_instances, RetrievalMode, RetrievalParams,
};
use simsearch::synth::{self, LogSpec};
use simsearch::{exact_topk, Embedding, Metric};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub bench: String,
    pub seed: u64,
    pub runs: usize,
    pub params: Value,
    pub summary: Value,
    pub records: Vec<Value>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Cluster purity of local versus classic top-50 on the skewed two-cluster set.
pub fn clusters(seed: u64, runs: usize) -> BenchReport {
    let (k, lambda, n_each) = (50, 0.9, 500);
    let query = Embedding::new(synth::SKEWED_QUERY.to_vec()).expect("finite");
    let records: Vec<Value> = (seed..seed + runs as u64)
        .map(|s| {
            let store = synth::skewed_clusters(s, n_each);
            let local = iterative_topk(&store, &query, &LocalSearchParams::new(k).lambda(lambda))
                .expect("valid");
            let classic = exact_topk(&store, &query, k, Metric::Euclidean).expect("valid");
            let (pl, pc) = (
                cluster_purity(&local, &store, synth::TIGHT),
                cluster_purity(&classic, &store, synth::TIGHT),
            );
            json!({ "seed": s, "purity_local": pl, "purity_classic": pc, "delta": pl - pc })
        })
        .collect();
    let field = |r: &Value, f: &str| r[f].as_f64().expect("numeric");
    let summary = json!({
        "mean_purity_local": mean(records.iter().map(|r| field(r, "purity_local"))),
        "mean_purity_classic": mean(records.iter().map(|r| field(r, "purity_classic"))),
        "mean_delta": mean(records.iter().map(|r| field(r, "delta"))),
        "seeds_with_gain": records.iter().filter(|r| field(r, "delta") > 0.0).count(),
    });
    BenchReport {
        bench: "clusters".into(),
        seed,
        runs,
        params: json!({ "k": k, "lambda": lambda, "points_per_cluster": n_each, "query": synth::SKEWED_QUERY }),
        summary,
        records,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    /// Distinct motifs; every planted instance is used as a query.
    Separated,
    /// A tight and a broad task sharing one motif; one off-centre query per log.
    Skewed,
}

/// Task-instance retrieval on planted logs, classic versus local.
pub fn subseq(
    seed: u64,
    runs: usize,
    kind: LogKind,
    tasks: usize,
    instances: usize,
) -> BenchReport {
    let lambda = 0.9;
    let mut records = Vec::new();
    let mut protocol_ok = true;
    let mut worst_overlap = 0.0f64;
    for s in seed..seed + runs as u64 {
        let (generated, queries) = match kind {
            LogKind::Separated => {
                let g = synth::planted_log(&LogSpec::separated(tasks, instances), s);
                let qs: Vec<_> = g
                    .log
                    .instances
                    .iter()
                    .map(|i| (i.task, g.log.window(i)))
                    .collect();
                (g, qs)
            }
            LogKind::Skewed => {
                let g = synth::planted_log(&LogSpec::skewed(instances), s);
                let q = vec![(0, g.template(0, &[2.5, 0.0]))];
                (g, q)
            }
        };
        let log = &generated.log;
        for (qi, (task, template)) in queries.iter().enumerate() {
            let gt = log.ground_truth(*task);
            let mut row = json!({ "seed": s, "query": qi, "task": task, "k": gt.len() });
            for (name, mode) in [
                ("classic", RetrievalMode::Classic),
                ("local", RetrievalMode::Local),
            ] {
                let params = RetrievalParams::new(mode, gt.len()).lambda(lambda);
                let kept = retrieve_task_instances(&log.series, template, &params)
                    .expect("valid template");
                let ev = evaluate_retrieval(&kept, &gt);
                protocol_ok &=
                    ev.precision == ev.recall && ev.recall == ev.f1 && kept.len() == gt.len();
                for (i, a) in kept.iter().enumerate() {
                    for b in &kept[i + 1..] {
                        worst_overlap = worst_overlap
                            .max(overlap_ratio((a.start, a.length), (b.start, b.length)));
                    }
                }
                row[format!("precision_{name}")] = json!(ev.precision);
                row[format!("recall_{name}")] = json!(ev.recall);
                row[format!("f1_{name}")] = json!(ev.f1);
            }
            records.push(row);
        }
    }
    let field = |r: &Value, f: &str| r[f].as_f64().expect("numeric");
    let summary = json!({
        "queries": records.len(),
        "mean_f1_classic": mean(records.iter().map(|r| field(r, "f1_classic"))),
        "mean_f1_local": mean(records.iter().map(|r| field(r, "f1_local"))),
        "precision_equals_recall_equals_f1": protocol_ok,
        "max_pairwise_overlap": worst_overlap,
    });
    BenchReport {
        bench: "subseq".into(),
        seed,
        runs,
        params: json!({ "log": kind, "tasks": tasks, "instances_per_task": instances, "lambda": lambda }),
        summary,
        records,
    }
}

/// Execution strategies against brute force on random multi-body instances.
pub fn multibody(seed: u64, runs: usize) -> BenchReport {
    let (max_n, max_m, k0) = (20, 3, 1);
    let score = |a: &Option<Alignment>| a.as_ref().map(|a| a.score);
    let records: Vec<Value> = (seed..seed + runs as u64)
        .map(|s| {
            let inst = synth::multibody_instance(s, max_n, max_m);
            let (o, q, c) = (&inst.objects, &inst.query, &inst.constraints);
            let t = Instant::now();
            let brute = brute_force_best(o, q, c).expect("valid instance");
            let brute_ms = ms(t);
            let t = Instant::now();
            let (per, per_stats) = strategy_per_object_traced(o, q, c, k0).expect("valid instance");
            let per_ms = ms(t);
            let t = Instant::now();
            let (cf, cf_stats) = strategy_constraint_first_traced(o, q, c).expect("valid instance");
            let cf_ms = ms(t);
            json!({
                "seed": s,
                "n": o.len(),
                "m": q.len(),
                "constraints": c.len(),
                "feasible": brute.is_some(),
                "score": score(&brute),
                "agree": score(&per) == score(&brute) && score(&cf) == score(&brute),
                "tuples_brute_force": count_alignments(o.len() as u64, q.len() as u64) as u64,
                "tuples_per_object": per_stats.tuples_evaluated,
                "per_object_rounds": per_stats.rounds,
                "tuples_constraint_first": cf_stats.tuples_evaluated,
                "constraint_first_fallback": cf_stats.fallback,
                "ms_brute_force": brute_ms,
                "ms_per_object": per_ms,
                "ms_constraint_first": cf_ms,
            })
        })
        .collect();
    let f = |r: &Value, k: &str| r[k].as_f64().unwrap_or(0.0);
    let summary = json!({
        "all_agree": records.iter().all(|r| r["agree"] == json!(true)),
        "feasible": records.iter().filter(|r| r["feasible"] == json!(true)).count(),
        "mean_tuples_brute_force": mean(records.iter().map(|r| f(r, "tuples_brute_force"))),
        "mean_tuples_per_object": mean(records.iter().map(|r| f(r, "tuples_per_object"))),
        "mean_tuples_constraint_first": mean(records.iter().map(|r| f(r, "tuples_constraint_first"))),
        "total_ms_brute_force": records.iter().map(|r| f(r, "ms_brute_force")).sum::<f64>(),
        "total_ms_per_object": records.iter().map(|r| f(r, "ms_per_object")).sum::<f64>(),
        "total_ms_constraint_first": records.iter().map(|r| f(r, "ms_constraint_first")).sum::<f64>(),
    });
    BenchReport {
        bench: "multibody".into(),
        seed,
        runs,
        params: json!({ "max_objects": max_n, "max_query_objects": max_m, "k0": k0 }),
        summary,
        records,
    }
}

/// Planned filtered search with a UDF whose declared selectivity may be off.
pub fn planner(seed: u64, runs: usize) -> BenchReport {
    let records: Vec<Value> = (seed..seed + runs as u64)
        .map(|s| {
            let mut rng = synth::rng(s);
            let n = rng.random_range(50..1000);
            let dim = rng.random_range(2..8);
            let store = synth::gaussian_store(s, n, dim);
            let threshold = rng.random_range(-1.5f32..1.5);
            let declared = rng.random_range(0.05..1.0);
            let udf = ThresholdOnDimension {
                name: "threshold".into(),
                dim: rng.random_range(0..dim),
                threshold,
                above: true,
                cost: 10.0,
                selectivity: declared,
            };
            let pred = Predicate::udf(Arc::new(udf)).expect("valid estimates");
            let actual = store
                .items()
                .iter()
                .filter(|it| pred.passes(it, &UdfCache::new(0)))
                .count() as f64
                / n as f64;
            let k = rng.random_range(1..=10);
            let query = Embedding::new((0..dim).map(|_| rng.random_range(-2.0f32..2.0)).collect())
                .expect("finite");
            let preds = std::slice::from_ref(&pred);
            let plan = plan_query(n, k, preds).expect("k within store");
            let pre_cache = UdfCache::new(store.version());
            let t = Instant::now();
            let pre = execute_prefilter(&store, &query, k, preds, Metric::Euclidean, &pre_cache)
                .expect("valid");
            let pre_ms = ms(t);
            let alpha = match plan.kind {
                PlanKind::PostFilter { alpha } => alpha,
                _ => simsearch::planner::default_alpha(n, k, declared),
            };
            let post_cache = UdfCache::new(store.version());
            let t = Instant::now();
            let post = execute_postfilter(
                &store,
                &query,
                k,
                alpha,
                preds,
                Metric::Euclidean,
                &post_cache,
            )
            .expect("valid");
            let post_ms = ms(t);
            json!({
                "seed": s,
                "n": n,
                "k": k,
                "declared_selectivity": declared,
                "actual_selectivity": actual,
                "plan": plan.kind.label(),
                "estimated_cost": plan.estimated_cost,
                "alpha": alpha,
                "post_equals_pre": post.hits == pre.hits && post.short == pre.short,
                "escalations": post.escalations,
                "fetched": post.fetched,
                "udf_evaluations_pre": pre_cache.evaluations(),
                "udf_evaluations_post": post_cache.evaluations(),
                "ms_pre": pre_ms,
                "ms_post": post_ms,
            })
        })
        .collect();
    let f = |r: &Value, k: &str| r[k].as_f64().unwrap_or(0.0);
    let summary = json!({
        "all_equal": records.iter().all(|r| r["post_equals_pre"] == json!(true)),
        "chose_post_filter": records.iter().filter(|r| r["plan"] == json!("post_filter")).count(),
        "mean_udf_evaluations_pre": mean(records.iter().map(|r| f(r, "udf_evaluations_pre"))),
        "mean_udf_evaluations_post": mean(records.iter().map(|r| f(r, "udf_evaluations_post"))),
        "mean_escalations": mean(records.iter().map(|r| f(r, "escalations"))),
    });
    BenchReport {
        bench: "planner".into(),
        seed,
        runs,
        params: json!({ "udf_cost": 10.0 }),
        summary,
        records,
    }
}
