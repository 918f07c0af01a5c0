//! Filtered search: the planner picks pre- or post-filtering from declared
//! cost and selectivity, and both plans return the same hits.

use std::sync::Arc;

use simsearch::planner::{
    execute_postfilter, execute_prefilter, parse_filter, plan_query, PlanKind, Predicate,
    ThresholdOnDimension, UdfCache, UdfRegistry,
};
use simsearch::{synth, Embedding, Metric, StoredItem, VectorStore};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = synth::gaussian_store(2, 2000, 3);
    let mut store = VectorStore::new(3, Metric::Euclidean);
    for it in base.items() {
        let class = if it.id % 4 == 0 { "car" } else { "person" };
        store.insert(StoredItem::new(it.id, it.embedding.clone()).with_class(class))?;
    }
    let query = Embedding::new(vec![0.5, 0.5, 0.5])?;
    let k = 10;
    let registry = UdfRegistry::new();

    let cheap: Vec<Predicate> = parse_filter("class=car")?
        .into_iter()
        .map(|s| s.resolve(&store, &registry))
        .collect::<Result<_, _>>()?;
    let costly = Predicate::udf(Arc::new(ThresholdOnDimension {
        name: "dim0_gt_0".into(),
        dim: 0,
        threshold: 0.0,
        above: true,
        cost: 50.0,
        selectivity: 0.5,
    }))?;

    for (label, preds) in [
        ("metadata only", cheap.clone()),
        ("metadata + udf", vec![cheap[0].clone(), costly]),
    ] {
        let plan = plan_query(store.len(), k, &preds)?;
        let pre_cache = UdfCache::new(store.version());
        let pre = execute_prefilter(&store, &query, k, &preds, Metric::Euclidean, &pre_cache)?;
        let alpha = match plan.kind {
            PlanKind::PostFilter { alpha } => alpha,
            _ => 4.0,
        };
        let post_cache = UdfCache::new(store.version());
        let post = execute_postfilter(
            &store,
            &query,
            k,
            alpha,
            &preds,
            Metric::Euclidean,
            &post_cache,
        )?;
        println!(
            "{label:<15} plan {:<11} cost {:>9.1}  same hits: {}  udf calls pre {} / post {}",
            plan.kind.label(),
            plan.estimated_cost,
            pre.hits == post.hits,
            pre_cache.evaluations(),
            post_cache.evaluations()
        );
    }
    Ok(())
}
