//! Minimum-cost one-to-one assignment on rectangular cost matrices.
//!
//! [`solve_assignment`] runs a shortest-augmenting-path Hungarian solver
//! (Jonker-Volgenant style duals) refined to the lexicographically
//! smallest optimal assignment, so ties break deterministically.
//! [`brute_force_assignment`] enumerates every injective map and serves
//! as the exact test oracle for small instances.

use crate::{Error, Result};

/// Per-entry breakdown of a matching cost into its weighted terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostComponents {
    pub classification: f64,
    pub box_term: f64,
    pub recognition: f64,
}

impl CostComponents {
    pub fn total(&self) -> f64 {
        self.classification + self.box_term + self.recognition
    }
}

/// A rectangular cost matrix with `rows <= cols` and finite entries,
/// optionally carrying a per-entry component breakdown.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    costs: Vec<f64>,
    components: Option<Vec<CostComponents>>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, costs: Vec<f64>) -> Result<Self> {
        if rows > cols {
            return Err(Error::Argument(format!(
                "cost matrix must have rows <= cols, got {rows}x{cols}"
            )));
        }
        if costs.len() != rows * cols {
            return Err(Error::Argument(format!(
                "cost matrix {rows}x{cols} expects {} entries, got {}",
                rows * cols,
                costs.len()
            )));
        }
        if costs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("cost matrix entry is not finite".into()));
        }
        Ok(CostMatrix {
            rows,
            cols,
            costs,
            components: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Argument("irregular cost matrix".into()));
        }
        CostMatrix::new(r, c, rows.concat())
    }

    pub fn with_components(
        rows: usize,
        cols: usize,
        components: Vec<CostComponents>,
    ) -> Result<Self> {
        let costs: Vec<f64> = components.iter().map(|c| c.total()).collect();
        let mut m = CostMatrix::new(rows, cols, costs)?;
        m.components = Some(components);
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cost(&self, row: usize, col: usize) -> f64 {
        self.costs[row * self.cols + col]
    }

    pub fn components(&self, row: usize, col: usize) -> Option<CostComponents> {
        self.components.as_ref().map(|c| c[row * self.cols + col])
    }
}

/// One matched (ground truth, prediction) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub row: usize,
    pub col: usize,
    pub cost: f64,
    /// Present when the matrix was built with a component breakdown.
    pub components: Option<CostComponents>,
}

/// The optimal assignment: a distinct column per row.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `assignment[i]` is the column matched to row `i`.
    pub assignment: Vec<usize>,
    /// Sum of assigned entries, accumulated in row order.
    pub total_cost: f64,
    pub pairs: Vec<MatchedPair>,
}

impl MatchResult {
    fn from_assignment(costs: &CostMatrix, assignment: Vec<usize>) -> Self {
        let mut total = 0.0;
        let mut pairs = Vec::with_capacity(assignment.len());
        for (row, &col) in assignment.iter().enumerate() {
            let cost = costs.cost(row, col);
            total += cost;
            pairs.push(MatchedPair {
                row,
                col,
                cost,
                components: costs.components(row, col),
            });
        }
        MatchResult {
            assignment,
            total_cost: total,
            pairs,
        }
    }
}

/// Globally optimal assignment with deterministic tie-breaking: among all
/// minimum-cost assignments the lexicographically smallest assignment
/// vector is returned.
///
/// Validity (finite entries, `rows <= cols`) is enforced when the
/// [`CostMatrix`] is constructed.
pub fn solve_assignment(costs: &CostMatrix) -> MatchResult {
    let m = costs.rows();
    let mut available: Vec<usize> = (0..costs.cols()).collect();
    let mut assignment = Vec::with_capacity(m);
    for row in 0..m {
        // Fix this row to the smallest column that still admits a globally
        // optimal completion; the completion value comes from the Hungarian
        // solver on the remaining subproblem.
        let mut best_val = f64::INFINITY;
        let mut best_pos = 0usize;
        let mut rest = Vec::with_capacity(available.len() - 1);
        for pos in 0..available.len() {
            let col = available[pos];
            rest.clear();
            rest.extend_from_slice(&available[..pos]);
            rest.extend_from_slice(&available[pos + 1..]);
            let completion = hungarian_total(costs, row + 1, &rest);
            let val = costs.cost(row, col) + completion;
            if val < best_val {
                best_val = val;
                best_pos = pos;
            }
        }
        assignment.push(available.remove(best_pos));
    }
    MatchResult::from_assignment(costs, assignment)
}

/// Optimal total of the subproblem spanning rows `row_start..rows` and the
/// given columns, summed in row order from the solver's assignment.
fn hungarian_total(costs: &CostMatrix, row_start: usize, cols: &[usize]) -> f64 {
    let m = costs.rows() - row_start;
    if m == 0 {
        return 0.0;
    }
    let assigned = hungarian(&|r, c| costs.cost(row_start + r, cols[c]), m, cols.len());
    assigned
        .iter()
        .enumerate()
        .map(|(r, &c)| costs.cost(row_start + r, cols[c]))
        .sum()
}

const UNASSIGNED: usize = usize::MAX;

/// Shortest-augmenting-path Hungarian algorithm on an `m x n` cost
/// function with `m <= n`. Returns the column matched to each row.
fn hungarian(cost: &dyn Fn(usize, usize) -> f64, m: usize, n: usize) -> Vec<usize> {
    debug_assert!(m <= n);
    // Column n is a virtual root column holding the row being inserted.
    let mut u = vec![0.0f64; m];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![UNASSIGNED; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 0..m {
        matched_row[n] = row;
        let mut j0 = n;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = UNASSIGNED;
            for j in 0..n {
                if used[j] {
                    continue;
                }
                let slack = cost(i0, j) - u[i0] - v[j];
                if slack < min_slack[j] {
                    min_slack[j] = slack;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == UNASSIGNED {
                break;
            }
        }
        // Augment along the alternating path back to the root.
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == n {
                break;
            }
        }
    }
    let mut row_to_col = vec![UNASSIGNED; m];
    for j in 0..n {
        if matched_row[j] != UNASSIGNED {
            row_to_col[matched_row[j]] = j;
        }
    }
    debug_assert!(row_to_col.iter().all(|&c| c != UNASSIGNED));
    row_to_col
}

/// Exact optimum by enumeration of all injective row-to-column maps in
/// lexicographic order, keeping the first optimum found. Refused above
/// 8 columns (factorial blowup); intended as the test oracle.
pub fn brute_force_assignment(costs: &CostMatrix) -> Result<MatchResult> {
    if costs.cols() > 8 {
        return Err(Error::Argument(format!(
            "brute-force assignment refused for {} columns (limit 8)",
            costs.cols()
        )));
    }
    let m = costs.rows();
    let n = costs.cols();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut current = Vec::with_capacity(m);
    let mut used = vec![false; n];
    enumerate(costs, m, n, 0, 0.0, &mut current, &mut used, &mut best);
    let (_, assignment) = best.expect("at least one injective map exists when rows <= cols");
    Ok(MatchResult::from_assignment(costs, assignment))
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    costs: &CostMatrix,
    m: usize,
    n: usize,
    row: usize,
    acc: f64,
    current: &mut Vec<usize>,
    used: &mut [bool],
    best: &mut Option<(f64, Vec<usize>)>,
) {
    if row == m {
        let better = match best {
            None => true,
            Some((b, _)) => acc < *b,
        };
        if better {
            *best = Some((acc, current.clone()));
        }
        return;
    }
    for col in 0..n {
        if used[col] {
            continue;
        }
        used[col] = true;
        current.push(col);
        enumerate(costs, m, n, row + 1, acc + costs.cost(row, col), current, used, best);
        current.pop();
        used[col] = false;
    }
}
