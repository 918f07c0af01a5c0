//! Multi-body search: find an ordered tuple of corpus objects that jointly
//! matches an ordered tuple of query objects under inter-object constraints.
//!
//! An [`Alignment`] maps query slot `i` to one corpus object, injectively.
//! Its score is `sum_i weights[i] * d(q_i, object_i)`; lower is better.
//!
//! [`brute_force_best`] enumerates every injective mapping and is the
//! reference for the execution strategies in [`strategy`].

mod assignment;
mod strategy;
mod window;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::embedding::{raw_distance, Embedding, Metric};
use crate::error::{Error, Result};

pub use assignment::{assignment_alignment, optimal_assignment, Assignment};
pub use strategy::{
    strategy_constraint_first, strategy_constraint_first_traced, strategy_per_object,
    strategy_per_object_traced, ExecStats, FALLBACK_K0,
};
pub use window::{warm_start_window, Track, TrackSet, WarmStart};

/// Globally unique handle of a corpus object. Orders lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectRef {
    pub scene_id: u64,
    pub object_id: u64,
}

impl fmt::Display for ObjectRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.scene_id, self.object_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub scene_id: u64,
    pub object_id: u64,
    pub class_label: String,
    pub embedding: Embedding,
    /// Inclusive frame range.
    pub frame_span: Option<(i64, i64)>,
    /// Screen coordinates in pixels, y pointing down.
    pub centroid: Option<(f64, f64)>,
}

impl SceneObject {
    pub fn new(
        scene_id: u64,
        object_id: u64,
        class_label: impl Into<String>,
        embedding: Embedding,
    ) -> Self {
        Self {
            scene_id,
            object_id,
            class_label: class_label.into(),
            embedding,
            frame_span: None,
            centroid: None,
        }
    }

    pub fn at(mut self, x: f64, y: f64) -> Self {
        self.centroid = Some((x, y));
        self
    }

    pub fn during(mut self, start: i64, end: i64) -> Self {
        self.frame_span = Some((start, end));
        self
    }

    pub fn key(&self) -> ObjectRef {
        ObjectRef {
            scene_id: self.scene_id,
            object_id: self.object_id,
        }
    }
}

/// The `.scenes.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub scenes: Vec<SceneRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: u64,
    pub objects: Vec<ObjectRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub object_id: u64,
    pub class: String,
    pub embedding: Embedding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_span: Option<[i64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid: Option<[f64; 2]>,
}

impl SceneFile {
    pub fn from_objects(objects: &[SceneObject]) -> Self {
        let mut scenes: Vec<SceneRecord> = Vec::new();
        for o in objects {
            let rec = ObjectRecord {
                object_id: o.object_id,
                class: o.class_label.clone(),
                embedding: o.embedding.clone(),
                frame_span: o.frame_span.map(|(s, e)| [s, e]),
                centroid: o.centroid.map(|(x, y)| [x, y]),
            };
            match scenes.iter_mut().find(|s| s.scene_id == o.scene_id) {
                Some(s) => s.objects.push(rec),
                None => scenes.push(SceneRecord {
                    scene_id: o.scene_id,
                    objects: vec![rec],
                }),
            }
        }
        Self { scenes }
    }

    /// Flattens and validates: unique keys, ordered frame spans.
    pub fn into_objects(self) -> Result<Vec<SceneObject>> {
        let mut out = Vec::new();
        for scene in self.scenes {
            for o in scene.objects {
                if let Some([s, e]) = o.frame_span {
                    if s > e {
                        return Err(Error::InvalidParameter(format!(
                            "object {}/{} has frame span [{s}, {e}]",
                            scene.scene_id, o.object_id
                        )));
                    }
                }
                out.push(SceneObject {
                    scene_id: scene.scene_id,
                    object_id: o.object_id,
                    class_label: o.class,
                    embedding: o.embedding,
                    frame_span: o.frame_span.map(|[s, e]| (s, e)),
                    centroid: o.centroid.map(|[x, y]| (x, y)),
                });
            }
        }
        let mut keys: Vec<ObjectRef> = out.iter().map(SceneObject::key).collect();
        keys.sort_unstable();
        if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter(format!(
                "object {} appears twice",
                w[0]
            )));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryObject {
    pub class_label: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiQuery {
    pub objects: Vec<QueryObject>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub metric: Metric,
}

impl MultiQuery {
    /// Unit weights, euclidean distance.
    pub fn new(objects: Vec<QueryObject>) -> Self {
        let weights = vec![1.0; objects.len()];
        Self {
            objects,
            weights,
            metric: Metric::Euclidean,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = weights;
        self
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::InvalidParameter(
                "a multi-query needs at least one object".into(),
            ));
        }
        if self.weights.len() != self.objects.len() {
            return Err(Error::InvalidParameter(
                "one weight per query object is required".into(),
            ));
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "weights must be positive and finite, got {w}"
            )));
        }
        let dim = self.objects[0].embedding.dim();
        for o in &self.objects {
            o.embedding.check_dim(dim)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SpatialRelation {
    /// Centroids at most `max_dist` pixels apart.
    NextTo { max_dist: f64 },
    /// The direction from object j to object i, measured from screen-up, lies
    /// in `[lo_deg, hi_deg]`.
    AngleOnTop { lo_deg: f64, hi_deg: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    /// Slot `slot` must be matched by an object of the query object's class.
    ClassMatch {
        slot: usize,
    },
    SameScene,
    /// Every pair of matched objects shares at least one frame.
    TemporalOverlap,
    Spatial {
        i: usize,
        j: usize,
        relation: SpatialRelation,
    },
}

impl Constraint {
    pub fn validate(&self, m: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConstraint(msg));
        match *self {
            Constraint::ClassMatch { slot } if slot >= m => {
                bad(format!("slot {slot} out of range for m = {m}"))
            }
            Constraint::Spatial { i, j, relation } => {
                if i >= m || j >= m {
                    return bad(format!("spatial slots ({i}, {j}) out of range for m = {m}"));
                }
                if i == j {
                    return bad("spatial constraint relates a slot to itself".into());
                }
                match relation {
                    SpatialRelation::NextTo { max_dist }
                        if max_dist.is_nan() || max_dist <= 0.0 =>
                    {
                        bad(format!("max_dist must be positive, got {max_dist}"))
                    }
                    SpatialRelation::AngleOnTop { lo_deg, hi_deg }
                        if lo_deg.is_nan() || hi_deg.is_nan() || lo_deg > hi_deg =>
                    {
                        bad(format!("angle range [{lo_deg}, {hi_deg}] is empty"))
                    }
                    _ => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }
}

pub fn validate_constraints(query: &MultiQuery, constraints: &[Constraint]) -> Result<()> {
    query.validate()?;
    constraints.iter().try_for_each(|c| c.validate(query.len()))
}

/// Angle of the vector from `below` to `above`, in degrees from screen-up.
pub fn angle_from_up(above: (f64, f64), below: (f64, f64)) -> Option<f64> {
    let dx = above.0 - below.0;
    let up = below.1 - above.1;
    let len = dx.hypot(up);
    (len > 0.0).then(|| (up / len).clamp(-1.0, 1.0).acos().to_degrees())
}

fn spatial_holds(a: &SceneObject, b: &SceneObject, relation: SpatialRelation) -> bool {
    let (Some(ca), Some(cb)) = (a.centroid, b.centroid) else {
        return false;
    };
    match relation {
        SpatialRelation::NextTo { max_dist } => (ca.0 - cb.0).hypot(ca.1 - cb.1) <= max_dist,
        SpatialRelation::AngleOnTop { lo_deg, hi_deg } => {
            angle_from_up(ca, cb).is_some_and(|deg| lo_deg <= deg && deg <= hi_deg)
        }
    }
}

fn spans_overlap(a: &SceneObject, b: &SceneObject) -> bool {
    match (a.frame_span, b.frame_span) {
        (Some((s1, e1)), Some((s2, e2))) => s1.max(s2) <= e1.min(e2),
        _ => false,
    }
}

/// Checks the constraints that only involve slots `0..tuple.len()`.
pub(crate) fn partial_ok(
    query: &MultiQuery,
    constraints: &[Constraint],
    tuple: &[&SceneObject],
) -> bool {
    let filled = tuple.len();
    constraints.iter().all(|c| match *c {
        Constraint::ClassMatch { slot } => {
            slot >= filled || tuple[slot].class_label == query.objects[slot].class_label
        }
        Constraint::SameScene => tuple.windows(2).all(|w| w[0].scene_id == w[1].scene_id),
        Constraint::TemporalOverlap => {
            (0..filled).all(|a| (a + 1..filled).all(|b| spans_overlap(tuple[a], tuple[b])))
        }
        Constraint::Spatial { i, j, relation } => {
            i >= filled || j >= filled || spatial_holds(tuple[i], tuple[j], relation)
        }
    })
}

/// True iff `tuple` (one object per query slot) satisfies every constraint.
pub fn satisfies(query: &MultiQuery, constraints: &[Constraint], tuple: &[&SceneObject]) -> bool {
    tuple.len() == query.len() && partial_ok(query, constraints, tuple)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub mapping: Vec<ObjectRef>,
    pub score: f64,
}

/// Candidate order: score, then the lexicographically smaller key tuple.
pub(crate) fn better(a_score: f64, a: &[ObjectRef], b_score: f64, b: &[ObjectRef]) -> bool {
    match a_score.partial_cmp(&b_score).unwrap_or(Ordering::Equal) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a < b,
    }
}

/// Objects sorted by key plus the per-slot distance table.
pub(crate) struct Prepared<'a> {
    pub objects: Vec<&'a SceneObject>,
    /// `dist[slot][object]`
    pub dist: Vec<Vec<f64>>,
}

impl<'a> Prepared<'a> {
    pub(crate) fn new(
        objects: &'a [SceneObject],
        query: &MultiQuery,
        constraints: &[Constraint],
    ) -> Result<Self> {
        validate_constraints(query, constraints)?;
        let dim = query.objects[0].embedding.dim();
        let mut sorted: Vec<&SceneObject> = objects.iter().collect();
        sorted.sort_by_key(|o| o.key());
        if let Some(w) = sorted.windows(2).find(|w| w[0].key() == w[1].key()) {
            return Err(Error::InvalidParameter(format!(
                "object {} appears twice",
                w[0].key()
            )));
        }
        for o in &sorted {
            o.embedding.check_dim(dim)?;
        }
        let dist = query
            .objects
            .iter()
            .map(|q| {
                sorted
                    .iter()
                    .map(|o| {
                        raw_distance(q.embedding.as_slice(), o.embedding.as_slice(), query.metric)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            objects: sorted,
            dist,
        })
    }

    /// Weighted sum in slot order; every strategy scores through here.
    pub(crate) fn score(&self, query: &MultiQuery, tuple: &[usize]) -> f64 {
        let mut s = 0.0;
        for (slot, &o) in tuple.iter().enumerate() {
            s += query.weights[slot] * self.dist[slot][o];
        }
        s
    }

    pub(crate) fn alignment(&self, tuple: &[usize], score: f64) -> Alignment {
        Alignment {
            mapping: tuple.iter().map(|&o| self.objects[o].key()).collect(),
            score,
        }
    }

    pub(crate) fn keys(&self, tuple: &[usize]) -> Vec<ObjectRef> {
        tuple.iter().map(|&o| self.objects[o].key()).collect()
    }
}

/// `n * (n - 1) * ... * (n - m + 1)`: injective maps from `m` slots into `n` objects.
pub fn count_alignments(n: u64, m: u64) -> u128 {
    if m > n {
        return 0;
    }
    (0..m).map(|i| u128::from(n - i)).product()
}

/// Every injective `m`-tuple over `0..n`, in lexicographic order.
#[derive(Debug, Clone)]
pub struct InjectiveMappings {
    n: usize,
    current: Option<Vec<usize>>,
}

impl InjectiveMappings {
    pub fn new(n: usize, m: usize) -> Self {
        let current = (m <= n).then(|| (0..m).collect());
        Self { n, current }
    }

    fn advance(&self, mut t: Vec<usize>) -> Option<Vec<usize>> {
        let m = t.len();
        let mut pos = m;
        while pos > 0 {
            pos -= 1;
            let mut v = t[pos] + 1;
            while v < self.n && t[..pos].contains(&v) {
                v += 1;
            }
            if v < self.n {
                t[pos] = v;
                // refill the tail with the smallest unused values
                let mut next = 0;
                for i in pos + 1..m {
                    while t[..i].contains(&next) {
                        next += 1;
                    }
                    t[i] = next;
                    next += 1;
                }
                return Some(t);
            }
        }
        None
    }
}

impl Iterator for InjectiveMappings {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let cur = self.current.take()?;
        if cur.is_empty() {
            return Some(cur);
        }
        self.current = self.advance(cur.clone());
        Some(cur)
    }
}

/// Exhaustive reference: every injective mapping, constraint violators
/// discarded, lowest score kept (ties: smallest key tuple).
pub fn brute_force_best(
    objects: &[SceneObject],
    query: &MultiQuery,
    constraints: &[Constraint],
) -> Result<Option<Alignment>> {
    let prep = Prepared::new(objects, query, constraints)?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut tuple_refs: Vec<&SceneObject> = Vec::with_capacity(query.len());
    for tuple in InjectiveMappings::new(prep.objects.len(), query.len()) {
        tuple_refs.clear();
        tuple_refs.extend(tuple.iter().map(|&o| prep.objects[o]));
        if !satisfies(query, constraints, &tuple_refs) {
            continue;
        }
        let score = prep.score(query, &tuple);
        // lexicographic enumeration: the first tuple at a given score is the smallest
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, tuple));
        }
    }
    Ok(best.map(|(s, t)| prep.alignment(&t, s)))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn e(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    pub(crate) fn q(class: &str, v: &[f32]) -> QueryObject {
        QueryObject {
            class_label: class.into(),
            embedding: e(v),
        }
    }

    #[test]
    fn alignment_counts() {
        assert_eq!(count_alignments(4, 2), 12);
        assert_eq!(count_alignments(7, 1), 7);
        assert_eq!(count_alignments(2, 2), 2);
        assert_eq!(count_alignments(2, 3), 0);
        for n in 0..7u64 {
            for m in 0..=n {
                assert_eq!(
                    InjectiveMappings::new(n as usize, m as usize).count() as u128,
                    count_alignments(n, m)
                );
            }
        }
    }

    #[test]
    fn mappings_are_lexicographic_and_injective() {
        let all: Vec<Vec<usize>> = InjectiveMappings::new(4, 3).collect();
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert!(all
            .iter()
            .all(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2]));
        assert_eq!(all[0], vec![0, 1, 2]);
        assert_eq!(all.last().unwrap(), &vec![3, 2, 1]);
    }

    #[test]
    fn angle_convention() {
        // straight above on screen is 0 degrees, to the right is 90, below is 180
        assert_eq!(angle_from_up((0.0, 0.0), (0.0, 10.0)), Some(0.0));
        assert!((angle_from_up((10.0, 10.0), (0.0, 10.0)).unwrap() - 90.0).abs() < 1e-12);
        assert!((angle_from_up((0.0, 20.0), (0.0, 10.0)).unwrap() - 180.0).abs() < 1e-12);
        assert!((angle_from_up((-5.0, 0.0), (0.0, 5.0)).unwrap() - 45.0).abs() < 1e-9);
        assert_eq!(angle_from_up((1.0, 1.0), (1.0, 1.0)), None);
    }

    #[test]
    fn constraint_validation() {
        assert!(Constraint::ClassMatch { slot: 2 }.validate(2).is_err());
        assert!(Constraint::Spatial {
            i: 0,
            j: 0,
            relation: SpatialRelation::NextTo { max_dist: 1.0 }
        }
        .validate(2)
        .is_err());
        assert!(Constraint::Spatial {
            i: 0,
            j: 1,
            relation: SpatialRelation::NextTo { max_dist: 0.0 }
        }
        .validate(2)
        .is_err());
        assert!(Constraint::Spatial {
            i: 0,
            j: 1,
            relation: SpatialRelation::AngleOnTop {
                lo_deg: 40.0,
                hi_deg: 30.0
            }
        }
        .validate(2)
        .is_err());
        assert!(Constraint::Spatial {
            i: 1,
            j: 0,
            relation: SpatialRelation::AngleOnTop {
                lo_deg: 0.0,
                hi_deg: 30.0
            }
        }
        .validate(2)
        .is_ok());
    }

    #[test]
    fn constraint_json_shape() {
        let c = Constraint::Spatial {
            i: 0,
            j: 1,
            relation: SpatialRelation::AngleOnTop {
                lo_deg: 0.0,
                hi_deg: 30.0,
            },
        };
        let json = serde_json::to_value(c).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"kind": "spatial", "i": 0, "j": 1, "relation": {"type": "angle_on_top", "lo_deg": 0.0, "hi_deg": 30.0}})
        );
        let back: Vec<Constraint> =
            serde_json::from_str(r#"[{"kind":"class_match","slot":1},{"kind":"same_scene"},{"kind":"temporal_overlap"}]"#).unwrap();
        assert_eq!(
            back,
            vec![
                Constraint::ClassMatch { slot: 1 },
                Constraint::SameScene,
                Constraint::TemporalOverlap
            ]
        );
    }

    #[test]
    fn contradictory_constraints_yield_none() {
        let objects: Vec<SceneObject> = (0..3)
            .flat_map(|s| {
                [
                    SceneObject::new(s, 0, "a", e(&[0.0])).at(0.0, 0.0),
                    SceneObject::new(s, 1, "a", e(&[1.0])).at(500.0, 0.0),
                ]
            })
            .collect();
        let query = MultiQuery::new(vec![q("a", &[0.0]), q("a", &[1.0])]);
        let cons = [
            Constraint::SameScene,
            Constraint::Spatial {
                i: 0,
                j: 1,
                relation: SpatialRelation::NextTo { max_dist: 1.0 },
            },
        ];
        assert_eq!(brute_force_best(&objects, &query, &cons).unwrap(), None);
    }

    #[test]
    fn single_slot_is_nearest_neighbour() {
        let objects: Vec<SceneObject> = [3.0f32, -1.0, 0.5, 2.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| SceneObject::new(0, i as u64, "x", e(&[v])))
            .collect();
        let query = MultiQuery::new(vec![q("x", &[1.0])]);
        let best = brute_force_best(&objects, &query, &[]).unwrap().unwrap();
        assert_eq!(
            best.mapping,
            vec![ObjectRef {
                scene_id: 0,
                object_id: 2
            }]
        );
        assert_eq!(best.score, 0.5);
    }

    /// Four players plus a ball; only the ball slot is pinned by class.
    pub(crate) fn soccer_scene() -> (Vec<SceneObject>, MultiQuery, Vec<Constraint>) {
        let objects = vec![
            SceneObject::new(1, 0, "player", e(&[0.0, 1.0])).during(0, 100),
            SceneObject::new(1, 1, "player", e(&[1.0, 0.0])).during(0, 100),
            SceneObject::new(1, 2, "player", e(&[2.0, 2.0])).during(10, 90),
            SceneObject::new(1, 3, "player", e(&[0.5, 0.5])).during(0, 50),
            SceneObject::new(1, 4, "ball", e(&[5.0, 5.0])).during(0, 100),
        ];
        let query = MultiQuery::new(vec![
            q("player", &[1.0, 0.1]),
            q("player", &[0.4, 0.6]),
            q("ball", &[5.0, 4.0]),
        ]);
        let cons = vec![
            Constraint::ClassMatch { slot: 2 },
            Constraint::SameScene,
            Constraint::TemporalOverlap,
        ];
        (objects, query, cons)
    }

    #[test]
    fn soccer_alignment_count_and_best() {
        let (objects, query, cons) = soccer_scene();
        let prep = Prepared::new(&objects, &query, &cons).unwrap();
        let feasible = InjectiveMappings::new(objects.len(), 3)
            .filter(|t| {
                satisfies(
                    &query,
                    &cons,
                    &t.iter().map(|&o| prep.objects[o]).collect::<Vec<_>>(),
                )
            })
            .count();
        assert_eq!(feasible as u128, count_alignments(4, 2));
        let best = brute_force_best(&objects, &query, &cons).unwrap().unwrap();
        let ids: Vec<u64> = best.mapping.iter().map(|r| r.object_id).collect();
        assert_eq!(ids, vec![1, 3, 4]);
    }

    #[test]
    fn scene_file_round_trip_and_validation() {
        let (objects, _, _) = soccer_scene();
        let file = SceneFile::from_objects(&objects);
        let json = serde_json::to_string(&file).unwrap();
        let back: SceneFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.clone().into_objects().unwrap(), objects);
        let mut dup = back;
        let first = dup.scenes[0].objects[0].clone();
        dup.scenes[0].objects.push(first);
        assert!(dup.into_objects().is_err());
    }
}
