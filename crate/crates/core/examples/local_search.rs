//! Local (iterative) search against classic top-k on two skewed clusters.
//! The query sits off-centre of a tight cluster that borders a broad one;
//! local search keeps more of its hits inside the tight cluster.

use simsearch::local::{
    cluster_purity, iterative_topk, objective_score, LocalSearchParams, QuerySet,
};
use simsearch::{exact_topk, synth, Embedding, Metric};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = synth::skewed_clusters(3, 500);
    let query = Embedding::new(synth::SKEWED_QUERY.to_vec())?;
    let k = 50;

    let classic = exact_topk(&store, &query, k, Metric::Euclidean)?;
    println!(
        "classic       purity {:.3}",
        cluster_purity(&classic, &store, synth::TIGHT)
    );
    for lambda in [0.0, 0.5, 0.9] {
        let hits = iterative_topk(&store, &query, &LocalSearchParams::new(k).lambda(lambda))?;
        println!(
            "local λ={lambda:<4}  purity {:.3}",
            cluster_purity(&hits, &store, synth::TIGHT)
        );
    }

    // the score of the second hit is its objective value given the first
    let hits = iterative_topk(&store, &query, &LocalSearchParams::new(2).lambda(0.9))?;
    let mut qs = QuerySet::new(query.clone());
    qs.push(hits[0].id, store.require(hits[0].id)?.embedding.clone())?;
    let second = &store.require(hits[1].id)?.embedding;
    println!(
        "second hit score {:.6} = objective {:.6}",
        hits[1].score,
        objective_score(&qs, second, 0.9, Metric::Euclidean)?
    );
    Ok(())
}
