//! Rectangular assignment (rows ≤ columns) by the Hungarian method with
//! row/column potentials. Ineligible cells cost +∞.

use super::{Alignment, Constraint, MultiQuery, Prepared, SceneObject};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `columns[row]` is the column assigned to `row`.
    pub columns: Vec<usize>,
    /// Sum of the chosen cells in row order.
    pub total: f64,
}

fn check_shape(cost: &[Vec<f64>], mask: Option<&[Vec<bool>]>) -> Result<usize> {
    let cols = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidParameter(
            "cost matrix rows differ in length".into(),
        ));
    }
    if cost.len() > cols {
        return Err(Error::InvalidParameter(format!(
            "{} rows cannot be assigned to {cols} columns",
            cost.len()
        )));
    }
    if let Some(mask) = mask {
        if mask.len() != cost.len() || mask.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidParameter(
                "mask shape differs from cost matrix".into(),
            ));
        }
    }
    for (i, row) in cost.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            let eligible = mask.is_none_or(|m| m[i][j]);
            if eligible && !c.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "cost[{i}][{j}] is not finite"
                )));
            }
        }
    }
    Ok(cols)
}

/// Minimum-total injective assignment of every row to an eligible column.
/// `None` when the mask admits no complete assignment.
pub fn optimal_assignment(
    cost: &[Vec<f64>],
    mask: Option<&[Vec<bool>]>,
) -> Result<Option<Assignment>> {
    let cols = check_shape(cost, mask)?;
    let rows = cost.len();
    let a = |i: usize, j: usize| -> f64 {
        if mask.is_none_or(|m| m[i][j]) {
            cost[i][j]
        } else {
            f64::INFINITY
        }
    };

    // 1-based; column 0 is the virtual root of each augmenting search
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if j1 == 0 {
                return Ok(None);
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut columns = vec![0usize; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            columns[owner[j] - 1] = j - 1;
        }
    }
    let mut total = 0.0;
    for (i, &j) in columns.iter().enumerate() {
        total += cost[i][j];
    }
    Ok(Some(Assignment { columns, total }))
}

/// Multi-body search through the assignment solver. Only valid when every
/// constraint is a [`Constraint::ClassMatch`], i.e. a per-slot eligibility mask.
pub fn assignment_alignment(
    objects: &[SceneObject],
    query: &MultiQuery,
    constraints: &[Constraint],
) -> Result<Option<Alignment>> {
    if let Some(c) = constraints
        .iter()
        .find(|c| !matches!(c, Constraint::ClassMatch { .. }))
    {
        return Err(Error::InvalidConstraint(format!(
            "{c:?} is not a per-slot eligibility constraint"
        )));
    }
    let prep = Prepared::new(objects, query, constraints)?;
    let m = query.len();
    let n = prep.objects.len();
    if m > n {
        return Ok(None);
    }
    let cost: Vec<Vec<f64>> = (0..m)
        .map(|i| prep.dist[i].iter().map(|d| query.weights[i] * d).collect())
        .collect();
    let mut mask = vec![vec![true; n]; m];
    for c in constraints {
        if let Constraint::ClassMatch { slot } = *c {
            for (o, obj) in prep.objects.iter().enumerate() {
                mask[slot][o] &= obj.class_label == query.objects[slot].class_label;
            }
        }
    }
    let Some(sol) = optimal_assignment(&cost, Some(&mask))? else {
        return Ok(None);
    };
    let score = prep.score(query, &sol.columns);
    Ok(Some(prep.alignment(&sol.columns, score)))
}
