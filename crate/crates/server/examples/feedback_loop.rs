//! The label, adapt, re-search loop over the HTTP API, driven in-process.
//!
//! Registers a synthetic dataset, opens a session, sends two feedback rounds
//! and replays them against the pinned snapshot.

use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use simsearch::vset::save_store;
use simsearch::{synth, Metric, StoredItem, VectorStore};
use simsearch_server::http::{router, AppState};

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Value) -> Value {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .expect("request");
    let res = router(state.clone())
        .oneshot(req)
        .await
        .expect("infallible");
    let status = res.status();
    let bytes = res.into_body().collect().await.expect("body").to_bytes();
    let v: Value = serde_json::from_slice(&bytes).expect("json");
    println!("{method} {uri} -> {status}");
    v
}

fn ids(v: &Value) -> Vec<u64> {
    v["hits"]
        .as_array()
        .map(|h| h.iter().filter_map(|x| x["id"].as_u64()).collect())
        .unwrap_or_default()
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let base = synth::skewed_clusters(1, 300);
    let mut store = VectorStore::new(base.dim(), Metric::Euclidean);
    for it in base.items() {
        store.insert(
            StoredItem::new(it.id, it.embedding.clone())
                .with_class(it.class_label().unwrap_or("none")),
        )?;
    }
    save_store(
        &store,
        dir.path().join("c.vset"),
        dir.path().join("c.jsonl"),
    )?;

    let state = Arc::new(AppState::new(Some(dir.path().to_path_buf())));
    let info = call(
        &state,
        "POST",
        "/datasets",
        json!({"name": "clusters", "vset_path": "c.vset", "meta_path": "c.jsonl"}),
    )
    .await;
    println!("  {info}");

    let opened = call(
        &state,
        "POST",
        "/sessions",
        json!({"dataset": "clusters", "query": synth::SKEWED_QUERY, "k": 8}),
    )
    .await;
    let sid = opened["session_id"].as_u64().ok_or("no session id")?;
    let hits = ids(&opened);
    println!("  initial hits {hits:?}");

    let labels =
        json!([{"id": hits[0], "label": "positive"}, {"id": hits[7], "label": "negative"}]);
    let r1 = call(
        &state,
        "POST",
        &format!("/sessions/{sid}/feedback"),
        json!({"labels": labels, "strategy": "query"}),
    )
    .await;
    println!(
        "  new query {}  satisfied {}  hits {:?}",
        r1["new_query"],
        r1["satisfied"],
        ids(&r1)
    );

    let labels = json!([{"id": ids(&r1)[1], "label": "positive"}]);
    let r2 = call(
        &state,
        "POST",
        &format!("/sessions/{sid}/feedback"),
        json!({"labels": labels, "strategy": "weights"}),
    )
    .await;
    println!(
        "  pending updates {}  applied {}  hits {:?}",
        r2["pending_updates"],
        r2["applied"],
        ids(&r2)
    );

    let replay = call(
        &state,
        "POST",
        &format!("/sessions/{sid}/replay"),
        json!(null),
    )
    .await;
    println!("  replay identical: {}", replay["identical"]);
    Ok(())
}
