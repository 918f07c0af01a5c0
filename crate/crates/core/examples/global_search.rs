//! Global search: a linear separator trained with the query as the positive
//! and the store as negatives ranks items by signed distance past the
//! hyperplane. On a correlated cloud with a corner query its hits reach
//! further toward the corner than euclidean neighbours do.

use simsearch::global::{build_coreset, rank_by_hyperplane, train_separator, train_separator_on};
use simsearch::global::{CoresetMethod, CoresetSpec, SvmParams};
use simsearch::{exact_topk, synth, Embedding, Metric};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = synth::correlated_cloud(11, 1000, 0.8);
    let corner = Embedding::new(vec![3.0, 3.0])?;
    let k = 20;

    let sep = train_separator(&store, std::slice::from_ref(&corner), &SvmParams::default())?;
    let svm = rank_by_hyperplane(&store, &sep, k)?;
    let euc = exact_topk(&store, &corner, k, Metric::Euclidean)?;

    let centroid = {
        let mut c = vec![0.0f64; store.dim()];
        for it in store.items() {
            for (a, &v) in c.iter_mut().zip(it.embedding.as_slice()) {
                *a += f64::from(v) / store.len() as f64;
            }
        }
        c
    };
    let proj = |hits: &[simsearch::RankedHit]| {
        let pts: Vec<&[f32]> = hits
            .iter()
            .map(|h| store.require(h.id).expect("hit").embedding.as_slice())
            .collect();
        synth::mean_projection(&pts, &centroid, corner.as_slice())
    };
    println!(
        "mean projection toward the corner: svm {:.3}  euclidean {:.3}",
        proj(&svm),
        proj(&euc)
    );
    println!("separator w = {:?}, b = {:.3}", sep.w, sep.b);

    // a coreset of negatives trains nearly the same ranking for a fraction of the work
    for method in [CoresetMethod::Uniform, CoresetMethod::KCenterGreedy] {
        let ids = build_coreset(
            &store,
            &CoresetSpec {
                size: 100,
                method,
                seed: 0,
            },
        )?;
        let small = train_separator_on(
            &store,
            &ids,
            std::slice::from_ref(&corner),
            &SvmParams::default(),
        )?;
        let hits = rank_by_hyperplane(&store, &small.separator, k)?;
        let shared = hits
            .iter()
            .filter(|h| svm.iter().any(|s| s.id == h.id))
            .count();
        println!("{method:?} coreset of 100: {shared}/{k} hits shared with the full model");
    }
    Ok(())
}
