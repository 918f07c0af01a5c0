pub mod embedding;
pub mod error;
pub mod feedback;
pub mod global;
pub mod local;
pub mod multibody;
pub mod planner;
pub mod projection;
pub mod store;
pub mod subsequence;
pub mod synth;
pub mod vset;

pub use embedding::{distance, Embedding, Metric};
pub use error::{Error, Result};
pub use store::{exact_topk, MetaValue, Metadata, RankedHit, Snapshots, StoredItem, VectorStore};
