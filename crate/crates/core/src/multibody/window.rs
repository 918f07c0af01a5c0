//! Sliding-window reuse over object trajectories.

use serde::{Deserialize, Serialize};

use super::strategy::{strategy_per_object, FALLBACK_K0};
use super::{satisfies, Alignment, Constraint, MultiQuery, Prepared, SceneObject};
use crate::embedding::Embedding;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub scene_id: u64,
    pub object_id: u64,
    pub class_label: String,
    pub start_frame: i64,
    /// One centroid per frame from `start_frame` on.
    pub positions: Vec<(f64, f64)>,
}

impl Track {
    fn covers(&self, start: i64, len: usize) -> bool {
        start >= self.start_frame
            && start - self.start_frame + len as i64 <= self.positions.len() as i64
    }

    /// Motion signature over a window: displacement of every frame from the
    /// window's first frame, flattened as `[dx0, dy0, dx1, dy1, ...]`.
    pub fn window_object(&self, start: i64, len: usize) -> Option<SceneObject> {
        if len == 0 || !self.covers(start, len) {
            return None;
        }
        let off = (start - self.start_frame) as usize;
        let window = &self.positions[off..off + len];
        let (x0, y0) = window[0];
        let values: Vec<f64> = window.iter().flat_map(|&(x, y)| [x - x0, y - y0]).collect();
        let n = len as f64;
        let cx = window.iter().map(|p| p.0).sum::<f64>() / n;
        let cy = window.iter().map(|p| p.1).sum::<f64>() / n;
        let embedding = Embedding::from_f64(&values).ok()?;
        Some(
            SceneObject::new(
                self.scene_id,
                self.object_id,
                self.class_label.clone(),
                embedding,
            )
            .at(cx, cy)
            .during(start, start + len as i64 - 1),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackSet {
    pub tracks: Vec<Track>,
}

impl TrackSet {
    /// Objects for every track that spans the whole window.
    pub fn window_objects(&self, start: i64, len: usize) -> Vec<SceneObject> {
        self.tracks
            .iter()
            .filter_map(|t| t.window_object(start, len))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub alignment: Option<Alignment>,
    /// The previous mapping was certified optimal without a search.
    pub reused: bool,
}

/// Re-scores `prev` on the shifted window and keeps it when the sum of the
/// per-slot best distances cannot beat it; otherwise runs a full search.
pub fn warm_start_window(
    prev: &Alignment,
    window_shift: i64,
    objects: &[SceneObject],
    query: &MultiQuery,
    constraints: &[Constraint],
) -> Result<WarmStart> {
    if window_shift == 0 {
        return Ok(WarmStart {
            alignment: Some(prev.clone()),
            reused: true,
        });
    }
    let prep = Prepared::new(objects, query, constraints)?;
    let located: Option<Vec<usize>> = prev
        .mapping
        .iter()
        .map(|key| prep.objects.binary_search_by_key(key, |o| o.key()).ok())
        .collect();
    if let Some(tuple) = located.filter(|t| t.len() == query.len()) {
        let refs: Vec<&SceneObject> = tuple.iter().map(|&o| prep.objects[o]).collect();
        if satisfies(query, constraints, &refs) {
            let score = prep.score(query, &tuple);
            if score <= per_slot_floor(&prep, query, constraints) {
                return Ok(WarmStart {
                    alignment: Some(prep.alignment(&tuple, score)),
                    reused: true,
                });
            }
        }
    }
    let alignment = strategy_per_object(objects, query, constraints, FALLBACK_K0)?;
    Ok(WarmStart {
        alignment,
        reused: false,
    })
}

/// Σ_i w_i · min over class-eligible objects of d(q_i, o), in slot order.
fn per_slot_floor(prep: &Prepared<'_>, query: &MultiQuery, constraints: &[Constraint]) -> f64 {
    let mut s = 0.0;
    for (slot, row) in prep.dist.iter().enumerate() {
        let class = &query.objects[slot].class_label;
        let pinned = constraints.contains(&Constraint::ClassMatch { slot });
        let best = row
            .iter()
            .zip(&prep.objects)
            .filter(|(_, o)| !pinned || &o.class_label == class)
            .map(|(d, _)| *d)
            .fold(f64::INFINITY, f64::min);
        s += query.weights[slot] * best;
    }
    s
}
