//! Build a small store, write it as `store.vset` + `store.jsonl`, reload it and
//! run an exact top-k under each metric.
//!
//! ```text
//! cargo run -p simsearch --example exact_search -- [OUT_DIR]
//! ```
//! With `OUT_DIR` the store directory is kept, ready for `simsearch search --store OUT_DIR`.

use simsearch::vset::{load_store_dir, save_store_dir};
use simsearch::{exact_topk, synth, Embedding, Metric, StoredItem, VectorStore};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let scratch = std::env::temp_dir().join(format!("simsearch-exact-{}", std::process::id()));
    let dir = out.clone().unwrap_or(scratch);

    // 400 gaussian points plus a few labelled landmarks with metadata
    let base = synth::gaussian_store(7, 400, 4);
    let mut store = VectorStore::new(4, Metric::Euclidean);
    for it in base.items() {
        let class = if it.embedding.as_slice()[0] > 0.0 {
            "right"
        } else {
            "left"
        };
        let conf = f64::from(it.embedding.as_slice()[1]).tanh().abs();
        store.insert(
            StoredItem::new(it.id, it.embedding.clone())
                .with_class(class)
                .with_meta("conf", conf),
        )?;
    }
    save_store_dir(&store, &dir)?;
    let reloaded = load_store_dir(&dir)?;
    assert_eq!(reloaded.len(), store.len());
    println!(
        "wrote {} vectors (dim {}) to {}",
        reloaded.len(),
        reloaded.dim(),
        dir.display()
    );

    let query = Embedding::new(vec![1.0, 0.5, 0.0, -0.5])?;
    for metric in [
        Metric::Euclidean,
        Metric::CosineDistance,
        Metric::NegativeInnerProduct,
    ] {
        let hits = exact_topk(&reloaded, &query, 5, metric)?;
        let ids: Vec<String> = hits
            .iter()
            .map(|h| format!("{}:{:.3}", h.id, h.score))
            .collect();
        println!("{:<24} {}", metric.as_str(), ids.join("  "));
    }

    if out.is_none() {
        std::fs::remove_dir_all(&dir)?;
    }
    Ok(())
}
