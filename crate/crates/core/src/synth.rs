//! Seeded synthetic datasets used by the examples, the benchmarks and the
//! acceptance suite.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::embedding::{Embedding, Metric};
use crate::multibody::{Constraint, MultiQuery, QueryObject, SceneObject, SpatialRelation};
use crate::store::{StoredItem, VectorStore};
use crate::subsequence::{Event, EventSeries};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub const TIGHT: &str = "tight";
pub const BROAD: &str = "broad";

/// Query for [`skewed_clusters`]: on the tight cluster's rim, facing the
/// broad one.
pub const SKEWED_QUERY: [f32; 2] = [2.5, 0.0];

/// `n_each` points from N((0,0), 1) labelled `tight`, then `n_each` from
/// N((5,0), 3^2) labelled `broad`.
pub fn skewed_clusters(seed: u64, n_each: usize) -> VectorStore {
    let mut rng = rng(seed);
    let mut rows = Vec::with_capacity(2 * n_each);
    for (center, sigma, class) in [(0.0, 1.0, TIGHT), (5.0, 3.0, BROAD)] {
        for _ in 0..n_each {
            let x = center + sigma * gauss(&mut rng);
            let y = sigma * gauss(&mut rng);
            rows.push((vec![x as f32, y as f32], class));
        }
    }
    let items: Vec<StoredItem> = rows
        .into_iter()
        .enumerate()
        .map(|(id, (v, class))| {
            StoredItem::new(id as u64, Embedding::new(v).expect("finite")).with_class(class)
        })
        .collect();
    VectorStore::from_items(2, Metric::Euclidean, items).expect("generated store is valid")
}

/// `n` points from a zero-mean 2-D normal with unit variances and
/// correlation `rho`.
pub fn correlated_cloud(seed: u64, n: usize, rho: f64) -> VectorStore {
    let mut rng = rng(seed);
    let c = (1.0 - rho * rho).sqrt();
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|_| {
            let (a, b) = (gauss(&mut rng), gauss(&mut rng));
            vec![a as f32, (rho * a + c * b) as f32]
        })
        .collect();
    VectorStore::from_rows(Metric::Euclidean, &rows).expect("generated store is valid")
}

/// Mean projection of `points` onto the unit direction from `origin` to `toward`.
pub fn mean_projection(points: &[&[f32]], origin: &[f64], toward: &[f32]) -> f64 {
    let dir: Vec<f64> = toward
        .iter()
        .zip(origin)
        .map(|(t, o)| f64::from(*t) - o)
        .collect();
    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    let total: f64 = points
        .iter()
        .map(|p| {
            p.iter()
                .zip(origin)
                .zip(&dir)
                .map(|((x, o), d)| (f64::from(*x) - o) * d)
                .sum::<f64>()
                / norm
        })
        .sum();
    total / points.len() as f64
}

pub struct SeparableInstance {
    /// Negatives first, then the positive cluster.
    pub store: VectorStore,
    pub negative_ids: Vec<u64>,
    pub positive_ids: Vec<u64>,
    pub positives: Vec<Embedding>,
}

/// Two well separated Gaussian blobs in `dim` dimensions along a random
/// direction.
pub fn separable_clusters(seed: u64, dim: usize, n_neg: usize, n_pos: usize) -> SeparableInstance {
    let mut rng = rng(seed);
    let mut axis: Vec<f64> = (0..dim).map(|_| gauss(&mut rng)).collect();
    let norm = axis.iter().map(|a| a * a).sum::<f64>().sqrt();
    axis.iter_mut().for_each(|a| *a /= norm);
    let spread = 0.5;
    let mut blob = |sign: f64, n: usize| -> Vec<Vec<f32>> {
        (0..n)
            .map(|_| {
                axis.iter()
                    .map(|a| (sign * 4.0 * a + spread * gauss(&mut rng)) as f32)
                    .collect()
            })
            .collect()
    };
    let neg = blob(-1.0, n_neg);
    let pos = blob(1.0, n_pos);
    let positives = pos
        .iter()
        .map(|v| Embedding::new(v.clone()).expect("finite"))
        .collect();
    let rows: Vec<Vec<f32>> = neg.into_iter().chain(pos).collect();
    SeparableInstance {
        store: VectorStore::from_rows(Metric::Euclidean, &rows).expect("generated store is valid"),
        negative_ids: (0..n_neg as u64).collect(),
        positive_ids: (n_neg as u64..(n_neg + n_pos) as u64).collect(),
        positives,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedInstance {
    pub task: usize,
    pub start: usize,
    pub length: usize,
}

#[derive(Debug, Clone)]
pub struct PlantedLog {
    pub series: EventSeries,
    pub instances: Vec<PlantedInstance>,
}

impl PlantedLog {
    pub fn ground_truth(&self, task: usize) -> Vec<(usize, usize)> {
        self.instances
            .iter()
            .filter(|i| i.task == task)
            .map(|i| (i.start, i.length))
            .collect()
    }

    pub fn window(&self, instance: &PlantedInstance) -> EventSeries {
        self.series
            .slice(instance.start, instance.length)
            .expect("planted instance lies inside the series")
    }
}

/// Per-task motif: event prototypes, a mean offset and the spread of the
/// per-instance offset.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub length: usize,
    pub instances: usize,
    pub offset: Vec<f64>,
    pub spread: f64,
}

#[derive(Debug, Clone)]
pub struct LogSpec {
    pub dim: usize,
    pub tasks: Vec<TaskSpec>,
    /// Scale of motif and background events.
    pub event_scale: f64,
    pub event_noise: f64,
    pub gap: (usize, usize),
    /// Tasks sharing one prototype differ only in their offsets.
    pub shared_prototype: bool,
}

impl LogSpec {
    /// Distinct motifs of lengths 10, 12, 14, ... with tight instances.
    pub fn separated(tasks: usize, instances_per_task: usize) -> Self {
        Self {
            dim: 4,
            tasks: (0..tasks)
                .map(|t| TaskSpec {
                    length: 10 + 2 * t,
                    instances: instances_per_task,
                    offset: vec![0.0; 4],
                    spread: 0.3,
                })
                .collect(),
            event_scale: 4.0,
            event_noise: 0.1,
            gap: (2, 8),
            shared_prototype: false,
        }
    }

    /// One motif shape, two tasks: a tight task at offset 0 and a broad one
    /// at offset (5, 0), mirroring [`skewed_clusters`] at window level.
    pub fn skewed(instances_per_task: usize) -> Self {
        Self {
            dim: 2,
            tasks: vec![
                TaskSpec {
                    length: 10,
                    instances: instances_per_task,
                    offset: vec![0.0, 0.0],
                    spread: 1.0,
                },
                TaskSpec {
                    length: 10,
                    instances: instances_per_task,
                    offset: vec![5.0, 0.0],
                    spread: 3.0,
                },
            ],
            event_scale: 10.0,
            event_noise: 0.1,
            gap: (2, 8),
            shared_prototype: true,
        }
    }
}

pub struct GeneratedLog {
    pub log: PlantedLog,
    /// Noise-free motif of each task at its mean offset.
    pub prototypes: Vec<Vec<Vec<f64>>>,
}

impl GeneratedLog {
    /// Task `task`'s prototype shifted by `extra`.
    pub fn template(&self, task: usize, extra: &[f64]) -> EventSeries {
        let features = self.prototypes[task]
            .iter()
            .map(|ev| {
                Embedding::from_f64(&ev.iter().zip(extra).map(|(a, b)| a + b).collect::<Vec<_>>())
                    .expect("finite")
            })
            .collect();
        EventSeries::from_features(features).expect("template is ordered")
    }
}

/// Instances of every task in random order, separated by background gaps.
pub fn planted_log(spec: &LogSpec, seed: u64) -> GeneratedLog {
    let mut rng = rng(seed);
    let dim = spec.dim;
    let event = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim).map(|_| spec.event_scale * gauss(rng)).collect()
    };
    let max_len = spec.tasks.iter().map(|t| t.length).max().unwrap_or(0);
    let shared: Vec<Vec<f64>> = (0..max_len).map(|_| event(&mut rng)).collect();
    let prototypes: Vec<Vec<Vec<f64>>> = spec
        .tasks
        .iter()
        .map(|t| {
            let base: Vec<Vec<f64>> = if spec.shared_prototype {
                shared[..t.length].to_vec()
            } else {
                (0..t.length).map(|_| event(&mut rng)).collect()
            };
            base.into_iter()
                .map(|ev| ev.iter().zip(&t.offset).map(|(a, b)| a + b).collect())
                .collect()
        })
        .collect();

    let mut order: Vec<usize> = spec
        .tasks
        .iter()
        .enumerate()
        .flat_map(|(i, t)| std::iter::repeat_n(i, t.instances))
        .collect();
    order.shuffle(&mut rng);

    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut instances = Vec::with_capacity(order.len());
    let gap = |rng: &mut ChaCha8Rng, features: &mut Vec<Vec<f64>>| {
        for _ in 0..rng.random_range(spec.gap.0..=spec.gap.1) {
            features.push(event(rng));
        }
    };
    gap(&mut rng, &mut features);
    for task in order {
        let t = &spec.tasks[task];
        let offset: Vec<f64> = (0..dim).map(|_| t.spread * gauss(&mut rng)).collect();
        instances.push(PlantedInstance {
            task,
            start: features.len(),
            length: t.length,
        });
        for ev in &prototypes[task] {
            features.push(
                ev.iter()
                    .zip(&offset)
                    .map(|(p, o)| p + o + spec.event_noise * gauss(&mut rng))
                    .collect(),
            );
        }
        gap(&mut rng, &mut features);
    }
    let events = features
        .into_iter()
        .enumerate()
        .map(|(i, f)| Event {
            t: 100 * i as i64,
            x: Embedding::from_f64(&f).expect("finite"),
        })
        .collect();
    GeneratedLog {
        log: PlantedLog {
            series: EventSeries::new(events).expect("ordered"),
            instances,
        },
        prototypes,
    }
}

pub const MULTIBODY_CLASSES: [&str; 3] = ["person", "bike", "car"];

pub struct MultibodyInstance {
    pub objects: Vec<SceneObject>,
    pub query: MultiQuery,
    pub constraints: Vec<Constraint>,
}

impl MultibodyInstance {
    pub fn eligibility_only(&self) -> bool {
        self.constraints
            .iter()
            .all(|c| matches!(c, Constraint::ClassMatch { .. }))
    }
}

/// Random scenes with up to `max_n` objects and a query of up to `max_m`
/// objects under a random mix of constraints.
pub fn multibody_instance(seed: u64, max_n: usize, max_m: usize) -> MultibodyInstance {
    let mut rng = rng(seed);
    let dim = 3;
    let m = rng.random_range(1..=max_m);
    let n = rng.random_range(m..=max_n);
    let scenes = rng.random_range(1..=3u64);
    let objects: Vec<SceneObject> = (0..n)
        .map(|i| {
            let class = MULTIBODY_CLASSES[rng.random_range(0..MULTIBODY_CLASSES.len())];
            let v: Vec<f32> = (0..dim).map(|_| rng.random::<f32>()).collect();
            let mut o = SceneObject::new(
                rng.random_range(0..scenes),
                i as u64,
                class,
                Embedding::new(v).expect("finite"),
            );
            if rng.random_bool(0.9) {
                o = o.at(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
            }
            if rng.random_bool(0.9) {
                let s = rng.random_range(0..40);
                o = o.during(s, s + rng.random_range(5..30));
            }
            o
        })
        .collect();
    let query_objects = (0..m)
        .map(|_| QueryObject {
            class_label: MULTIBODY_CLASSES[rng.random_range(0..MULTIBODY_CLASSES.len())]
                .to_string(),
            embedding: Embedding::new((0..dim).map(|_| rng.random::<f32>()).collect())
                .expect("finite"),
        })
        .collect();
    let weights = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
    let query = MultiQuery {
        objects: query_objects,
        weights,
        metric: Metric::Euclidean,
    };

    let mut constraints = Vec::new();
    for slot in 0..m {
        if rng.random_bool(0.5) {
            constraints.push(Constraint::ClassMatch { slot });
        }
    }
    if rng.random_bool(0.4) {
        constraints.push(Constraint::SameScene);
    }
    if rng.random_bool(0.25) {
        constraints.push(Constraint::TemporalOverlap);
    }
    if m >= 2 {
        let pair = |rng: &mut ChaCha8Rng| {
            let i = rng.random_range(0..m);
            let j = (i + rng.random_range(1..m)) % m;
            (i, j)
        };
        if rng.random_bool(0.4) {
            let (i, j) = pair(&mut rng);
            let relation = SpatialRelation::NextTo {
                max_dist: rng.random_range(30.0..120.0),
            };
            constraints.push(Constraint::Spatial { i, j, relation });
        }
        if rng.random_bool(0.3) {
            let (i, j) = pair(&mut rng);
            let lo = rng.random_range(0.0..90.0);
            let relation = SpatialRelation::AngleOnTop {
                lo_deg: lo,
                hi_deg: lo + rng.random_range(30.0..120.0),
            };
            constraints.push(Constraint::Spatial { i, j, relation });
        }
    }
    MultibodyInstance {
        objects,
        query,
        constraints,
    }
}

/// A store of `n` rows with standard normal entries.
pub fn gaussian_store(seed: u64, n: usize, dim: usize) -> VectorStore {
    let mut rng = rng(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid");
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|_| (0..dim).map(|_| normal.sample(&mut rng) as f32).collect())
        .collect();
    VectorStore::from_rows(Metric::Euclidean, &rows).expect("generated store is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(skewed_clusters(3, 50), skewed_clusters(3, 50));
        let a = planted_log(&LogSpec::separated(3, 4), 9);
        let b = planted_log(&LogSpec::separated(3, 4), 9);
        assert_eq!(a.log.series, b.log.series);
        assert_eq!(a.log.instances, b.log.instances);
    }

    #[test]
    fn planted_instances_do_not_overlap() {
        let g = planted_log(&LogSpec::separated(3, 24), 1);
        assert_eq!(g.log.instances.len(), 72);
        let mut spans: Vec<(usize, usize)> = g
            .log
            .instances
            .iter()
            .map(|i| (i.start, i.start + i.length))
            .collect();
        spans.sort_unstable();
        assert!(spans.windows(2).all(|w| w[0].1 < w[1].0));
        assert!(spans.last().unwrap().1 < g.log.series.len());
    }

    #[test]
    fn correlated_cloud_has_the_requested_correlation() {
        let store = correlated_cloud(2, 4000, 0.8);
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for it in store.items() {
            let v = it.embedding.to_f64();
            sxy += v[0] * v[1];
            sxx += v[0] * v[0];
            syy += v[1] * v[1];
        }
        let r = sxy / (sxx * syy).sqrt();
        assert!((r - 0.8).abs() < 0.03, "{r}");
    }

    #[test]
    fn multibody_instances_validate() {
        for seed in 0..200 {
            let inst = multibody_instance(seed, 20, 3);
            assert!(inst.objects.len() <= 20 && inst.query.len() <= 3);
            crate::multibody::validate_constraints(&inst.query, &inst.constraints).unwrap();
        }
    }
}
