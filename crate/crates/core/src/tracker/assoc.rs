//! Global nearest neighbour association.
//!
//! Tracks and detections are matched one-to-one by an optimal assignment
//! over neck-to-neck image distances. Pairs farther apart than the gate
//! are forbidden; among assignments using only allowed pairs, the one with
//! the most matches wins, then the smallest total distance.

use crate::geometry::{wrap_distance, ImagePoint};

/// Result of matching `rows` (tracks) against `cols` (detections).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    /// `(row, col)` pairs, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

/// Minimum-cost perfect assignment on a square matrix (Kuhn-Munkres with
/// potentials, O(n^3)). Returns the column assigned to each row.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays, index 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    col_of
}

/// Optimal gated assignment on a rectangular cost matrix.
///
/// Entries above `gate` (or non-finite) are forbidden.
pub fn solve_gated(cost: &[Vec<f64>], n_cols: usize, gate: f64) -> Assignment {
    let n_rows = cost.len();
    let allowed = |i: usize, j: usize| cost[i][j].is_finite() && cost[i][j] <= gate;
    let total_allowed: f64 = (0..n_rows)
        .flat_map(|i| (0..n_cols).map(move |j| (i, j)))
        .filter(|&(i, j)| allowed(i, j))
        .map(|(i, j)| cost[i][j].max(0.0))
        .sum();
    // any forbidden pair costs more than every allowed assignment combined
    let forbidden = total_allowed + 1.0;
    let n = n_rows.max(n_cols);
    let square: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i >= n_rows || j >= n_cols {
                        0.0
                    } else if allowed(i, j) {
                        cost[i][j].max(0.0)
                    } else {
                        forbidden
                    }
                })
                .collect()
        })
        .collect();
    let col_of = hungarian(&square);
    let mut out = Assignment::default();
    let mut col_used = vec![false; n_cols];
    for (i, &j) in col_of.iter().enumerate().take(n_rows) {
        if j < n_cols && allowed(i, j) {
            out.pairs.push((i, j));
            col_used[j] = true;
        } else {
            out.unmatched_rows.push(i);
        }
    }
    out.unmatched_cols = (0..n_cols).filter(|&j| !col_used[j]).collect();
    out
}

/// Assignment between predicted and detected neck points.
///
/// `None` detection points (no neck) are never matched. With `wrap_aware`
/// the seam-aware distance is used, otherwise plain Euclidean distance.
pub fn associate_points(
    predicted: &[ImagePoint],
    detected: &[Option<ImagePoint>],
    image_width: f64,
    gate: f64,
    wrap_aware: bool,
) -> Assignment {
    let cost: Vec<Vec<f64>> = predicted
        .iter()
        .map(|p| {
            detected
                .iter()
                .map(|d| match d {
                    Some(d) if wrap_aware => wrap_distance(*p, *d, image_width),
                    Some(d) => (p.x - d.x).hypot(p.y - d.y),
                    None => f64::INFINITY,
                })
                .collect()
        })
        .collect();
    solve_gated(&cost, detected.len(), gate)
}
