//! Principal-component projection for plotting, by power iteration with
//! deflation on the covariance matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::VectorStore;

const MAX_ITERATIONS: usize = 1000;
const TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub id: u64,
    pub coords: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub mean: Vec<f64>,
    /// Unit principal axes, largest variance first.
    pub components: Vec<Vec<f64>>,
    /// Variance along each axis.
    pub variances: Vec<f64>,
    pub points: Vec<ProjectedPoint>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Leading eigenpair of the symmetric matrix `m` (row-major, `d x d`).
fn power_iteration(m: &[Vec<f64>], start: Vec<f64>) -> (Vec<f64>, f64) {
    let d = m.len();
    let mut v = start;
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..MAX_ITERATIONS {
        let mut next: Vec<f64> = (0..d).map(|i| dot(&m[i], &v)).collect();
        let norm = normalize(&mut next);
        if norm == 0.0 {
            return (v, 0.0);
        }
        let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        lambda = norm;
        if delta < TOLERANCE {
            break;
        }
    }
    // make the sign canonical: the largest-magnitude entry is positive
    let lead = v
        .iter()
        .copied()
        .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if lead < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    (v, lambda)
}

/// Projects every item onto the top `dims` principal axes.
pub fn pca_project(store: &VectorStore, dims: usize) -> Result<Projection> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let d = store.dim();
    if dims == 0 || dims > d {
        return Err(Error::InvalidParameter(format!(
            "dims must lie in 1..={d}, got {dims}"
        )));
    }
    let items = store.sorted_items();
    let n = items.len() as f64;
    let rows: Vec<Vec<f64>> = items.iter().map(|it| it.embedding.to_f64()).collect();
    let mut mean = vec![0.0; d];
    for r in &rows {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += r[i] * r[j];
            }
        }
    }
    cov.iter_mut().flatten().for_each(|c| *c /= n);

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(dims);
    let mut variances = Vec::with_capacity(dims);
    for c in 0..dims {
        // deterministic start that is unlikely to be orthogonal to any axis
        let mut start: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * ((i + c) % 7) as f64).collect();
        for prev in &components {
            let p = dot(&start, prev);
            start.iter_mut().zip(prev).for_each(|(s, q)| *s -= p * q);
        }
        let (v, lambda) = power_iteration(&cov, start);
        // deflate
        for i in 0..d {
            for j in 0..d {
                cov[i][j] -= lambda * v[i] * v[j];
            }
        }
        components.push(v);
        variances.push(lambda);
    }

    let points = items
        .iter()
        .zip(&centered)
        .map(|(it, r)| ProjectedPoint {
            id: it.id,
            coords: components.iter().map(|c| dot(c, r)).collect(),
            class: it.class_label().map(str::to_string),
        })
        .collect();
    Ok(Projection {
        mean,
        components,
        variances,
        points,
    })
}
