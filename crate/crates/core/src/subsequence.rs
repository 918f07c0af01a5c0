//! Subsequence retrieval over time-stamped event series.
//!
//! Every window of the template's length is a candidate; its distance to the
//! template is the mean per-event distance of aligned events. Retrieval keeps
//! at most `k` windows whose pairwise overlap stays within a ratio.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{raw_distance, Embedding, Metric};
use crate::error::{Error, Result};
use crate::local::{CandidatePool, IterativeRanker, DEFAULT_LAMBDA};

/// Dedup threshold of the retrieval protocol.
pub const DEFAULT_MAX_OVERLAP: f64 = 0.10;
/// A hit matches a ground-truth interval above this overlap.
pub const MATCH_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Milliseconds.
    pub t: i64,
    pub x: Embedding,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventSeries {
    events: Vec<Event>,
}

impl EventSeries {
    pub fn new(events: Vec<Event>) -> Result<Self> {
        if let Some(i) = (1..events.len()).find(|&i| events[i].t < events[i - 1].t) {
            return Err(Error::UnorderedEvents(i));
        }
        if let Some(first) = events.first() {
            let dim = first.x.dim();
            for e in &events {
                e.x.check_dim(dim)?;
            }
        }
        Ok(Self { events })
    }

    /// Events one millisecond apart.
    pub fn from_features(features: Vec<Embedding>) -> Result<Self> {
        Self::new(
            features
                .into_iter()
                .enumerate()
                .map(|(t, x)| Event { t: t as i64, x })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.events.first().map(|e| e.x.dim())
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn slice(&self, start: usize, length: usize) -> Result<EventSeries> {
        let end = start.checked_add(length).filter(|&e| e <= self.len());
        let end = end.ok_or_else(|| {
            Error::InvalidParameter(format!(
                "window [{start}, +{length}) exceeds {} events",
                self.len()
            ))
        })?;
        Ok(Self {
            events: self.events[start..end].to_vec(),
        })
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        Self::parse_jsonl(BufReader::new(File::open(path)?))
    }

    pub fn parse_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut events = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event: Event = serde_json::from_str(&line).map_err(|e| Error::BadMetadata {
                line: n + 1,
                message: e.to_string(),
            })?;
            events.push(event);
        }
        Self::new(events)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowHit {
    pub start: usize,
    pub length: usize,
    pub score: f64,
}

impl WindowHit {
    pub fn end(&self) -> usize {
        self.start + self.length
    }
}

fn hit_order(a: &WindowHit, b: &WindowHit) -> Ordering {
    a.score
        .partial_cmp(&b.score)
        .unwrap_or(Ordering::Equal)
        .then(a.start.cmp(&b.start))
}

/// Shared events divided by the longer of the two intervals.
pub fn overlap_ratio(a: (usize, usize), b: (usize, usize)) -> f64 {
    let lo = a.0.max(b.0);
    let hi = (a.0 + a.1).min(b.0 + b.1);
    let longest = a.1.max(b.1);
    if hi <= lo || longest == 0 {
        return 0.0;
    }
    (hi - lo) as f64 / longest as f64
}

/// Mean per-event distance between two equally long runs of events.
fn run_distance(a: &[Event], b: &[Event], metric: Metric) -> f64 {
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        sum += raw_distance(x.x.as_slice(), y.x.as_slice(), metric);
    }
    sum / a.len() as f64
}

fn check_template(series: &EventSeries, template: &EventSeries) -> Result<()> {
    if template.is_empty() {
        return Err(Error::InvalidParameter("template is empty".into()));
    }
    if template.len() > series.len() {
        return Err(Error::TemplateTooLong {
            template: template.len(),
            series: series.len(),
        });
    }
    let dim = template.dim().unwrap_or(0);
    series.events.first().map_or(Ok(()), |e| e.x.check_dim(dim))
}

fn window_starts(series_len: usize, length: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..=series_len - length).step_by(stride)
}

/// One hit per window position, sorted ascending by score then start.
pub fn sliding_search(
    series: &EventSeries,
    template: &EventSeries,
    stride: usize,
    metric: Metric,
) -> Result<Vec<WindowHit>> {
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    check_template(series, template)?;
    let length = template.len();
    let mut hits: Vec<WindowHit> = window_starts(series.len(), length, stride)
        .map(|start| WindowHit {
            start,
            length,
            score: run_distance(
                &series.events[start..start + length],
                &template.events,
                metric,
            ),
        })
        .collect();
    hits.sort_by(hit_order);
    Ok(hits)
}

/// Greedy by ascending score: a hit survives unless it overlaps an already
/// kept hit by more than `max_ratio`.
pub fn dedup_overlaps(hits: &[WindowHit], max_ratio: f64) -> Vec<WindowHit> {
    let mut sorted = hits.to_vec();
    sorted.sort_by(hit_order);
    let mut kept: Vec<WindowHit> = Vec::new();
    for h in sorted {
        if kept
            .iter()
            .all(|k| overlap_ratio((k.start, k.length), (h.start, h.length)) <= max_ratio)
        {
            kept.push(h);
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEval {
    pub matched: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean overlap ratio over matched pairs; 0 when nothing matched.
    pub overlap_ratio: f64,
}

/// One-to-one matching, hits taken by ascending score; each claims the
/// unmatched ground-truth interval it overlaps most, if above
/// [`MATCH_THRESHOLD`].
pub fn evaluate_retrieval(kept: &[WindowHit], ground_truth: &[(usize, usize)]) -> RetrievalEval {
    let mut hits = kept.to_vec();
    hits.sort_by(hit_order);
    let mut gt = ground_truth.to_vec();
    gt.sort_unstable();
    let mut taken = vec![false; gt.len()];
    let mut matched = 0usize;
    let mut overlap_sum = 0.0;
    for h in &hits {
        let mut best: Option<(usize, f64)> = None;
        for (g, &interval) in gt.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let r = overlap_ratio((h.start, h.length), interval);
            if r > MATCH_THRESHOLD && best.is_none_or(|(_, br)| r > br) {
                best = Some((g, r));
            }
        }
        if let Some((g, r)) = best {
            taken[g] = true;
            matched += 1;
            overlap_sum += r;
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    RetrievalEval {
        matched,
        precision: ratio(matched, hits.len()),
        recall: ratio(matched, gt.len()),
        // from counts so that |kept| == |gt| gives f1 bit-equal to precision
        f1: ratio(2 * matched, hits.len() + gt.len()),
        overlap_ratio: if matched == 0 {
            0.0
        } else {
            overlap_sum / matched as f64
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    #[default]
    Classic,
    Local,
}

impl std::str::FromStr for RetrievalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classic" => Ok(Self::Classic),
            "local" => Ok(Self::Local),
            other => Err(Error::InvalidParameter(format!(
                "unknown retrieval mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalParams {
    pub mode: RetrievalMode,
    pub k: usize,
    pub lambda: f64,
    pub stride: usize,
    pub max_overlap: f64,
    pub metric: Metric,
}

impl RetrievalParams {
    pub fn new(mode: RetrievalMode, k: usize) -> Self {
        Self {
            mode,
            k,
            lambda: DEFAULT_LAMBDA,
            stride: 1,
            max_overlap: DEFAULT_MAX_OVERLAP,
            metric: Metric::Euclidean,
        }
    }

    pub fn lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }
}

/// Windows as a candidate pool; window-to-window distance reuses the
/// per-event mean.
struct WindowPool<'a> {
    series: &'a EventSeries,
    length: usize,
    starts: Vec<usize>,
    to_template: Vec<f64>,
    metric: Metric,
}

impl CandidatePool for WindowPool<'_> {
    fn len(&self) -> usize {
        self.starts.len()
    }

    fn id(&self, i: usize) -> u64 {
        self.starts[i] as u64
    }

    fn query_distance(&self, i: usize) -> f64 {
        self.to_template[i]
    }

    fn pair_distance(&self, from: usize, to: usize) -> f64 {
        let ev = &self.series.events;
        let (a, b) = (self.starts[from], self.starts[to]);
        run_distance(
            &ev[a..a + self.length],
            &ev[b..b + self.length],
            self.metric,
        )
    }
}

/// Top-`k` task instances as non-overlapping windows.
///
/// Classic mode takes windows by ascending template distance. Local mode
/// runs the query-set expansion over windows. In both, once a window is
/// kept every window overlapping it by more than `max_overlap` leaves the
/// pool, so exactly `k` hits come back whenever the series has room.
/// Hit scores are template distances; order is acceptance order.
pub fn retrieve_task_instances(
    series: &EventSeries,
    template: &EventSeries,
    params: &RetrievalParams,
) -> Result<Vec<WindowHit>> {
    if params.k == 0 {
        return Err(Error::InvalidK {
            k: 0,
            available: series.len(),
        });
    }
    if !(0.0..=1.0).contains(&params.lambda) {
        return Err(Error::InvalidParameter(format!(
            "lambda must lie in [0, 1], got {}",
            params.lambda
        )));
    }
    if params.stride == 0 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    check_template(series, template)?;
    let length = template.len();
    let starts: Vec<usize> = window_starts(series.len(), length, params.stride).collect();
    let to_template: Vec<f64> = starts
        .iter()
        .map(|&s| {
            run_distance(
                &series.events[s..s + length],
                &template.events,
                params.metric,
            )
        })
        .collect();
    let lambda = match params.mode {
        RetrievalMode::Classic => 0.0,
        RetrievalMode::Local => params.lambda,
    };
    let pool = WindowPool {
        series,
        length,
        starts,
        to_template,
        metric: params.metric,
    };
    let mut ranker = IterativeRanker::new(&pool, lambda);
    let mut kept: Vec<WindowHit> = Vec::with_capacity(params.k);
    while kept.len() < params.k {
        let Some(&(i, _)) = ranker.next_batch(1).first() else {
            break;
        };
        let hit = WindowHit {
            start: pool.starts[i],
            length,
            score: pool.to_template[i],
        };
        for c in 0..pool.len() {
            if ranker.is_live(c)
                && overlap_ratio((hit.start, length), (pool.starts[c], length)) > params.max_overlap
            {
                ranker.exclude(c);
            }
        }
        kept.push(hit);
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: &[f32]) -> EventSeries {
        EventSeries::from_features(
            values
                .iter()
                .map(|&v| Embedding::new(vec![v]).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn hit(start: usize, length: usize, score: f64) -> WindowHit {
        WindowHit {
            start,
            length,
            score,
        }
    }

    #[test]
    fn exact_copy_ranks_first() {
        let s = series(&[5.0, 1.0, 2.0, 3.0, 9.0, 1.0, 2.5, 3.0]);
        let t = series(&[1.0, 2.0, 3.0]);
        let hits = sliding_search(&s, &t, 1, Metric::Euclidean).unwrap();
        assert_eq!(hits.len(), 6);
        assert_eq!(hits[0], hit(1, 3, 0.0));
        assert!(hits
            .windows(2)
            .all(|w| hit_order(&w[0], &w[1]) != Ordering::Greater));
        assert_eq!(
            sliding_search(&s, &t, s.len(), Metric::Euclidean)
                .unwrap()
                .len(),
            1
        );
        assert!(matches!(
            sliding_search(&t, &s, 1, Metric::Euclidean),
            Err(Error::TemplateTooLong { .. })
        ));
    }

    #[test]
    fn dedup_examples() {
        let kept = dedup_overlaps(&[hit(5, 100, 0.2), hit(0, 100, 0.1)], 0.10);
        assert_eq!(kept, vec![hit(0, 100, 0.1)]);
        let disjoint = [hit(0, 10, 0.3), hit(10, 10, 0.2), hit(30, 10, 0.1)];
        assert_eq!(dedup_overlaps(&disjoint, 0.10).len(), 3);
        assert_eq!(
            dedup_overlaps(&[hit(4, 10, 0.5), hit(4, 10, 0.5)], 0.10).len(),
            1
        );
        // exactly 10% shared is allowed
        assert_eq!(
            dedup_overlaps(&[hit(0, 10, 0.1), hit(9, 10, 0.2)], 0.10).len(),
            2
        );
    }

    #[test]
    fn evaluation_examples() {
        let gt = [(0, 10), (20, 10), (40, 10)];
        let exact: Vec<WindowHit> = gt.iter().map(|&(s, l)| hit(s, l, 0.0)).collect();
        let ev = evaluate_retrieval(&exact, &gt);
        assert_eq!((ev.f1, ev.overlap_ratio), (1.0, 1.0));
        let ev = evaluate_retrieval(&[hit(60, 10, 0.0), hit(70, 10, 0.1), hit(80, 10, 0.2)], &gt);
        assert_eq!(ev.f1, 0.0);
        let ev = evaluate_retrieval(&[hit(1, 10, 0.0), hit(20, 10, 0.1), hit(80, 10, 0.2)], &gt);
        assert_eq!(ev.matched, 2);
        assert_eq!(ev.f1, 2.0 / 3.0);
        assert_eq!(ev.precision, ev.recall);
        assert_eq!(ev.f1, ev.precision);
        assert!((ev.overlap_ratio - 0.95).abs() < 1e-12);
    }

    #[test]
    fn each_truth_matches_once() {
        let gt = [(0, 10)];
        let ev = evaluate_retrieval(&[hit(0, 10, 0.0), hit(2, 10, 0.1)], &gt);
        assert_eq!(ev.matched, 1);
        assert_eq!(ev.precision, 0.5);
        assert_eq!(ev.recall, 1.0);
    }

    #[test]
    fn local_at_zero_lambda_is_classic() {
        let s = series(&[
            0.0, 3.0, 1.0, 2.0, 7.0, 1.1, 2.2, 0.5, 8.0, 1.0, 2.1, 4.0, 3.0,
        ]);
        let t = series(&[1.0, 2.0]);
        let classic =
            retrieve_task_instances(&s, &t, &RetrievalParams::new(RetrievalMode::Classic, 3))
                .unwrap();
        let local = retrieve_task_instances(
            &s,
            &t,
            &RetrievalParams::new(RetrievalMode::Local, 3).lambda(0.0),
        )
        .unwrap();
        assert_eq!(classic, local);
        let hits = sliding_search(&s, &t, 1, Metric::Euclidean).unwrap();
        let mut reference = dedup_overlaps(&hits, DEFAULT_MAX_OVERLAP);
        reference.truncate(3);
        assert_eq!(classic, reference);
    }

    #[test]
    fn unordered_and_io() {
        let bad = vec![
            Event {
                t: 5,
                x: Embedding::new(vec![0.0]).unwrap(),
            },
            Event {
                t: 4,
                x: Embedding::new(vec![0.0]).unwrap(),
            },
        ];
        assert!(matches!(
            EventSeries::new(bad),
            Err(Error::UnorderedEvents(1))
        ));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.events.jsonl");
        let s = series(&[0.25, -1.5, 3.0]);
        s.write_jsonl(&path).unwrap();
        assert_eq!(EventSeries::read_jsonl(&path).unwrap(), s);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"t":0,"x":[0.25]}"#);
    }

    fn hits_strategy() -> impl Strategy<Value = Vec<WindowHit>> {
        prop::collection::vec((0usize..200, 0u32..1000), 1..40).prop_map(|v| {
            v.into_iter()
                .map(|(s, sc)| hit(s, 20, f64::from(sc) / 100.0))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn dedup_invariants(hits in hits_strategy(), ratio in 0.0f64..0.9) {
            let kept = dedup_overlaps(&hits, ratio);
            for (i, a) in kept.iter().enumerate() {
                prop_assert!(hits.contains(a));
                for b in &kept[i + 1..] {
                    prop_assert!(overlap_ratio((a.start, a.length), (b.start, b.length)) <= ratio);
                }
            }
            let best = hits.iter().min_by(|a, b| hit_order(a, b)).unwrap();
            prop_assert_eq!(kept[0], *best);
        }

        #[test]
        fn evaluation_ignores_truth_order(hits in hits_strategy(), starts in prop::collection::vec(0usize..200, 1..10), rot in 0usize..10) {
            let gt: Vec<(usize, usize)> = starts.iter().map(|&s| (s, 20)).collect();
            let mut shuffled = gt.clone();
            let n = shuffled.len();
            shuffled.rotate_left(rot % n);
            shuffled.reverse();
            let a = evaluate_retrieval(&hits, &gt);
            let b = evaluate_retrieval(&hits, &shuffled);
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a.f1));
        }
    }
}
