//! Both feedback strategies on one store: moving the query (Rocchio) and
//! re-weighting the labelled items' components, with lazy materialization.

use simsearch::feedback::{
    adapt_query, adapt_weights, materialize_if_affecting, ranking_satisfied, FeedbackLabel,
    ParameterizedStore, PendingSet, WeightParams, DEFAULT_BETA, DEFAULT_GAMMA,
};
use simsearch::{exact_topk, synth, Embedding, Metric};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = synth::gaussian_store(5, 300, 6);
    let query = store.require(0)?.embedding.clone();
    let k = 10;
    let hits = exact_topk(&store, &query, k, Metric::Euclidean)?;
    println!(
        "initial: {:?}",
        hits.iter().map(|h| h.id).collect::<Vec<_>>()
    );

    // the user likes the 8th and 9th hits and dislikes the 2nd
    let pos = [hits[7].id, hits[8].id];
    let neg = [hits[1].id];
    let emb = |ids: &[u64]| -> Vec<Embedding> {
        ids.iter()
            .map(|&i| store.require(i).unwrap().embedding.clone())
            .collect()
    };

    let moved = adapt_query(&query, &emb(&pos), &emb(&neg), DEFAULT_BETA, DEFAULT_GAMMA)?;
    let refreshed = exact_topk(&store, &moved, k, Metric::Euclidean)?;
    println!(
        "query strategy: {:?}",
        refreshed.iter().map(|h| h.id).collect::<Vec<_>>()
    );
    println!(
        "  every positive ahead of every negative: {}",
        ranking_satisfied(&moved, &store, &pos, &neg, Metric::Euclidean)?
    );

    let mut pstore = ParameterizedStore::split_orthogonal(store.clone(), 2, 0)?;
    let labels: Vec<FeedbackLabel> = pos
        .iter()
        .map(|&i| FeedbackLabel::positive(i, 1))
        .chain(neg.iter().map(|&i| FeedbackLabel::negative(i, 1)))
        .collect();
    let adaptation = adapt_weights(&pstore, &labels, &query, &WeightParams::default())?;
    println!(
        "weights strategy: loss {:.4} -> {:.4}",
        adaptation.initial_loss, adaptation.final_loss
    );
    let mut pending = PendingSet::new();
    pending.extend(adaptation.pending);
    let applied =
        materialize_if_affecting(&mut pstore, &mut pending, &query, k, Metric::Euclidean)?;
    println!(
        "  materialized {applied:?}, {} updates still pending",
        pending.len()
    );
    let after = pstore.topk(&query, k, Metric::Euclidean)?;
    println!("  {:?}", after.iter().map(|h| h.id).collect::<Vec<_>>());
    Ok(())
}
