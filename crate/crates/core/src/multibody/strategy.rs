//! Execution strategies for multi-body search.
//!
//! Per-object: search each query object independently, join the top-k'
//! candidate lists, and double k' until a lower bound certifies the best
//! joined tuple. Constraint-first: enumerate object pairs satisfying one
//! spatial constraint through a uniform grid, then extend and score.

use std::collections::{BTreeMap, HashMap};

use super::{
    better, spatial_holds, Alignment, Constraint, MultiQuery, Prepared, SceneObject,
    SpatialRelation,
};
use crate::error::{Error, Result};

/// Initial k' when constraint-first has nothing spatial to seed from.
pub const FALLBACK_K0: usize = 4;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecStats {
    pub rounds: usize,
    pub final_k: usize,
    /// Complete tuples constructed and checked.
    pub tuples_evaluated: u64,
    pub seed_pairs: u64,
    /// Constraint-first handed the query to the per-object strategy.
    pub fallback: bool,
}

fn class_ok(
    query: &MultiQuery,
    constraints: &[Constraint],
    slot: usize,
    obj: &SceneObject,
) -> bool {
    constraints.iter().all(|c| match *c {
        Constraint::ClassMatch { slot: s } => {
            s != slot || obj.class_label == query.objects[slot].class_label
        }
        _ => true,
    })
}

struct Best {
    score: f64,
    tuple: Vec<usize>,
    keys: Vec<super::ObjectRef>,
}

fn offer(best: &mut Option<Best>, prep: &Prepared<'_>, query: &MultiQuery, tuple: &[usize]) {
    let score = prep.score(query, tuple);
    let keys = prep.keys(tuple);
    if best
        .as_ref()
        .is_none_or(|b| better(score, &keys, b.score, &b.keys))
    {
        *best = Some(Best {
            score,
            tuple: tuple.to_vec(),
            keys,
        });
    }
}

/// Depth-first join over per-slot candidate lists, pruning on constraints
/// among the already filled slots.
#[allow(clippy::too_many_arguments)]
fn join<'a>(
    prep: &Prepared<'a>,
    query: &MultiQuery,
    constraints: &[Constraint],
    cands: &[&[usize]],
    tuple: &mut Vec<usize>,
    refs: &mut Vec<&'a SceneObject>,
    best: &mut Option<Best>,
    stats: &mut ExecStats,
) {
    let slot = tuple.len();
    if slot == cands.len() {
        stats.tuples_evaluated += 1;
        offer(best, prep, query, tuple);
        return;
    }
    for &o in cands[slot] {
        if tuple.contains(&o) {
            continue;
        }
        tuple.push(o);
        refs.push(prep.objects[o]);
        if super::partial_ok(query, constraints, refs) {
            join(prep, query, constraints, cands, tuple, refs, best, stats);
        }
        tuple.pop();
        refs.pop();
    }
}

pub fn strategy_per_object(
    objects: &[SceneObject],
    query: &MultiQuery,
    constraints: &[Constraint],
    k0: usize,
) -> Result<Option<Alignment>> {
    strategy_per_object_traced(objects, query, constraints, k0).map(|(a, _)| a)
}

pub fn strategy_per_object_traced(
    objects: &[SceneObject],
    query: &MultiQuery,
    constraints: &[Constraint],
    k0: usize,
) -> Result<(Option<Alignment>, ExecStats)> {
    if k0 == 0 {
        return Err(Error::InvalidParameter("k0 must be at least 1".into()));
    }
    let prep = Prepared::new(objects, query, constraints)?;
    let mut stats = ExecStats::default();
    let m = query.len();
    let lists: Vec<Vec<usize>> = (0..m)
        .map(|slot| {
            let mut l: Vec<usize> = (0..prep.objects.len())
                .filter(|&o| class_ok(query, constraints, slot, prep.objects[o]))
                .collect();
            l.sort_by(|&a, &b| {
                prep.dist[slot][a]
                    .total_cmp(&prep.dist[slot][b])
                    .then(a.cmp(&b))
            });
            l
        })
        .collect();
    if lists.iter().any(Vec::is_empty) {
        return Ok((None, stats));
    }

    let mut k = k0;
    loop {
        stats.rounds += 1;
        stats.final_k = k;
        let cands: Vec<&[usize]> = lists.iter().map(|l| &l[..k.min(l.len())]).collect();
        let mut best = None;
        join(
            &prep,
            query,
            constraints,
            &cands,
            &mut Vec::with_capacity(m),
            &mut Vec::with_capacity(m),
            &mut best,
            &mut stats,
        );

        // Any tuple not yet joined uses, in some truncated slot i, an object at
        // least as far as the (k+1)-th of that slot. Summed in slot order so the
        // bound is a valid floor of the rounded scores too.
        let mut bound = f64::INFINITY;
        for i in (0..m).filter(|&i| lists[i].len() > k) {
            let mut s = 0.0;
            for (j, list) in lists.iter().enumerate() {
                let o = if j == i { list[k] } else { list[0] };
                s += query.weights[j] * prep.dist[j][o];
            }
            bound = bound.min(s);
        }
        let exhausted = bound == f64::INFINITY;
        match best {
            Some(b) if exhausted || b.score < bound => {
                return Ok((Some(prep.alignment(&b.tuple, b.score)), stats))
            }
            None if exhausted => return Ok((None, stats)),
            _ => k = k.saturating_mul(2),
        }
    }
}

pub fn strategy_constraint_first(
    objects: &[SceneObject],
    query: &MultiQuery,
    constraints: &[Constraint],
) -> Result<Option<Alignment>> {
    strategy_constraint_first_traced(objects, query, constraints).map(|(a, _)| a)
}

pub fn strategy_constraint_first_traced(
    objects: &[SceneObject],
    query: &MultiQuery,
    constraints: &[Constraint],
) -> Result<(Option<Alignment>, ExecStats)> {
    let seed = constraints
        .iter()
        .filter_map(|c| match *c {
            Constraint::Spatial { i, j, relation } => Some((i, j, relation)),
            _ => None,
        })
        .min_by(|a, b| seed_rank(a.2).total_cmp(&seed_rank(b.2)));
    let Some((si, sj, relation)) = seed else {
        let (a, mut stats) = strategy_per_object_traced(objects, query, constraints, FALLBACK_K0)?;
        stats.fallback = true;
        return Ok((a, stats));
    };

    let prep = Prepared::new(objects, query, constraints)?;
    let mut stats = ExecStats {
        rounds: 1,
        ..Default::default()
    };
    let m = query.len();
    let all: Vec<usize> = (0..prep.objects.len()).collect();
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    if constraints.contains(&Constraint::SameScene) {
        for &o in &all {
            groups.entry(prep.objects[o].scene_id).or_default().push(o);
        }
    } else {
        groups.insert(0, all);
    }

    let mut best = None;
    for members in groups.values() {
        let eligible: Vec<Vec<usize>> = (0..m)
            .map(|slot| {
                members
                    .iter()
                    .copied()
                    .filter(|&o| class_ok(query, constraints, slot, prep.objects[o]))
                    .collect()
            })
            .collect();
        let placed = |slot: usize| -> Vec<usize> {
            eligible[slot]
                .iter()
                .copied()
                .filter(|&o| prep.objects[o].centroid.is_some())
                .collect()
        };
        let pairs = seed_pairs(&prep, &placed(si), &placed(sj), relation);
        stats.seed_pairs += pairs.len() as u64;

        let rest: Vec<usize> = (0..m).filter(|&s| s != si && s != sj).collect();
        let mut tuple = vec![usize::MAX; m];
        for (a, b) in pairs {
            tuple[si] = a;
            tuple[sj] = b;
            extend(
                &prep,
                query,
                constraints,
                &eligible,
                &rest,
                &mut tuple,
                &mut best,
                &mut stats,
            );
        }
    }
    Ok((best.map(|b| prep.alignment(&b.tuple, b.score)), stats))
}

/// Prefer the tightest NextTo as the seed; angle constraints have no index.
fn seed_rank(r: SpatialRelation) -> f64 {
    match r {
        SpatialRelation::NextTo { max_dist } => max_dist,
        SpatialRelation::AngleOnTop { .. } => f64::INFINITY,
    }
}

fn seed_pairs(
    prep: &Prepared<'_>,
    left: &[usize],
    right: &[usize],
    relation: SpatialRelation,
) -> Vec<(usize, usize)> {
    let holds =
        |a: usize, b: usize| a != b && spatial_holds(prep.objects[a], prep.objects[b], relation);
    let mut pairs = Vec::new();
    match relation {
        SpatialRelation::NextTo { max_dist } => {
            // slightly oversized cells keep rounded cell indices within one of each other
            let cell = max_dist * (1.0 + 1e-9);
            let key = |o: usize| {
                let (x, y) = prep.objects[o]
                    .centroid
                    .expect("placed objects have centroids");
                ((x / cell).floor() as i64, (y / cell).floor() as i64)
            };
            let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
            for &b in right {
                grid.entry(key(b)).or_default().push(b);
            }
            for &a in left {
                let (cx, cy) = key(a);
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        if let Some(bucket) = grid.get(&(cx + dx, cy + dy)) {
                            pairs.extend(bucket.iter().filter(|&&b| holds(a, b)).map(|&b| (a, b)));
                        }
                    }
                }
            }
        }
        SpatialRelation::AngleOnTop { .. } => {
            for &a in left {
                pairs.extend(right.iter().filter(|&&b| holds(a, b)).map(|&b| (a, b)));
            }
        }
    }
    pairs
}

#[allow(clippy::too_many_arguments)]
fn extend(
    prep: &Prepared<'_>,
    query: &MultiQuery,
    constraints: &[Constraint],
    eligible: &[Vec<usize>],
    rest: &[usize],
    tuple: &mut [usize],
    best: &mut Option<Best>,
    stats: &mut ExecStats,
) {
    let Some((&slot, tail)) = rest.split_first() else {
        stats.tuples_evaluated += 1;
        let refs: Vec<&SceneObject> = tuple.iter().map(|&o| prep.objects[o]).collect();
        if super::satisfies(query, constraints, &refs) {
            offer(best, prep, query, tuple);
        }
        return;
    };
    for &o in &eligible[slot] {
        if tuple.contains(&o) {
            continue;
        }
        tuple[slot] = o;
        extend(prep, query, constraints, eligible, tail, tuple, best, stats);
    }
    tuple[slot] = usize::MAX;
}
