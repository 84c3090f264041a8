//! Rectangular minimum-cost assignment via the Hungarian method with
//! row/column potentials, on a square matrix padded with per-side dummy
//! costs.

use serde::Serialize;

/// Result of [`assign_min_cost`]: matched `(row, col)` pairs and the rows
/// and columns left over for the dummy side.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
    pub total: f64,
}

/// Minimum-cost injective matching of an `R × H` cost matrix.
///
/// The smaller side is padded to a square: an unmatched row `r` costs
/// `row_pad[r]`, an unmatched column `c` costs `col_pad[c]`. Every real
/// row is matched when `R ≤ H` (and every real column when `H ≤ R`).
pub fn assign_min_cost(cost: &[Vec<f64>], row_pad: &[f64], col_pad: &[f64]) -> Assignment {
    let r = cost.len();
    let h = cost.first().map_or(col_pad.len(), Vec::len);
    debug_assert!(cost.iter().all(|row| row.len() == h));
    debug_assert_eq!(row_pad.len(), r);
    debug_assert_eq!(col_pad.len(), h);
    let n = r.max(h);
    if n == 0 {
        return Assignment::default();
    }
    let entry = |i: usize, j: usize| -> f64 {
        match (i < r, j < h) {
            (true, true) => cost[i][j],
            (true, false) => row_pad[i],
            (false, true) => col_pad[j],
            (false, false) => 0.0,
        }
    };
    let col_of_row = hungarian(n, entry);

    let mut out = Assignment::default();
    for (i, &j) in col_of_row.iter().enumerate() {
        out.total += entry(i, j);
        match (i < r, j < h) {
            (true, true) => out.pairs.push((i, j)),
            (true, false) => out.unmatched_rows.push(i),
            (false, true) => out.unmatched_cols.push(j),
            (false, false) => {}
        }
    }
    out.unmatched_cols.sort_unstable();
    out
}

/// Square `n × n` assignment; returns the column assigned to each row.
fn hungarian(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based potentials; column 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0; n];
    for j in 1..=n {
        col_of_row[row_of_col[j] - 1] = j - 1;
    }
    col_of_row
}
