//! 2-D rectangular linear assignment with IoU-based cost.
//!
//! The same solver backs inter-frame association, relocalization matching and
//! evaluation matching. It is a shortest-augmenting-path variant of the
//! Jonker-Volgenant algorithm with no initialization, O(n^3), supporting
//! unbalanced (rectangular) problems.

use crate::geometry::BoundingBox;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AssignmentError {
    #[error("cost matrix must be at least 1x1")]
    EmptyMatrix,
    #[error("cost data length {got} does not match {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, got: usize },
    #[error("cost matrix entry ({row}, {col}) is not finite")]
    NonFiniteCost { row: usize, col: usize },
}

/// Dense row-major cost matrix. Entries are arbitrary finite reals; the
/// IoU cost `1 - IoU` is the common case but not enforced.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AssignmentError> {
        if rows == 0 || cols == 0 {
            return Err(AssignmentError::EmptyMatrix);
        }
        if data.len() != rows * cols {
            return Err(AssignmentError::ShapeMismatch { rows, cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, AssignmentError> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    fn transposed(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Self { rows: self.cols, cols: self.rows, data }
    }
}

/// One-to-one matching between rows and columns, sorted by row index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    pairs: Vec<(usize, usize)>,
}

impl Assignment {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn total_cost(&self, costs: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(r, c)| costs.get(r, c)).sum()
    }
}

/// Minimum-total-cost one-to-one matching covering `min(rows, cols)` rows and
/// columns. When there are more rows than columns the problem is transposed
/// internally so the row-coverage convention holds either way.
pub fn solve_assignment(costs: &CostMatrix) -> Result<Assignment, AssignmentError> {
    for r in 0..costs.rows {
        for c in 0..costs.cols {
            if !costs.get(r, c).is_finite() {
                return Err(AssignmentError::NonFiniteCost { row: r, col: c });
            }
        }
    }
    let transpose = costs.rows > costs.cols;
    let work;
    let costs = if transpose {
        work = costs.transposed();
        &work
    } else {
        costs
    };

    let mut pairs = solve_rectangular(costs);
    if transpose {
        for p in &mut pairs {
            *p = (p.1, p.0);
        }
    }
    pairs.sort_unstable();
    Ok(Assignment { pairs })
}

/// Shortest augmenting path solve for `rows <= cols`. Column scans run in
/// ascending index order and prefer unassigned columns on ties, which makes
/// the result deterministic.
fn solve_rectangular(costs: &CostMatrix) -> Vec<(usize, usize)> {
    let (nr, nc) = (costs.rows, costs.cols);
    let mut u = vec![0.0f64; nr];
    let mut v = vec![0.0f64; nc];
    let mut col_of_row = vec![usize::MAX; nr];
    let mut row_of_col = vec![usize::MAX; nc];

    for cur_row in 0..nr {
        let mut shortest = vec![f64::INFINITY; nc];
        let mut pred_row = vec![usize::MAX; nc];
        let mut done_row = vec![false; nr];
        let mut done_col = vec![false; nc];
        let mut min_val = 0.0f64;
        let mut i = cur_row;
        let sink = loop {
            done_row[i] = true;
            let mut lowest = f64::INFINITY;
            let mut lowest_col = usize::MAX;
            for j in 0..nc {
                if done_col[j] {
                    continue;
                }
                let reduced = min_val + costs.get(i, j) - u[i] - v[j];
                if reduced < shortest[j] {
                    shortest[j] = reduced;
                    pred_row[j] = i;
                }
                let take = match lowest_col {
                    usize::MAX => true,
                    lc => {
                        shortest[j] < lowest
                            || (shortest[j] == lowest && row_of_col[j] == usize::MAX && row_of_col[lc] != usize::MAX)
                    }
                };
                if take {
                    lowest = shortest[j];
                    lowest_col = j;
                }
            }
            min_val = lowest;
            let j = lowest_col;
            done_col[j] = true;
            if row_of_col[j] == usize::MAX {
                break j;
            }
            i = row_of_col[j];
        };

        u[cur_row] += min_val;
        for r in 0..nr {
            if done_row[r] && r != cur_row {
                u[r] += min_val - shortest[col_of_row[r]];
            }
        }
        for j in 0..nc {
            if done_col[j] {
                v[j] -= min_val - shortest[j];
            }
        }

        let mut j = sink;
        loop {
            let r = pred_row[j];
            row_of_col[j] = r;
            std::mem::swap(&mut col_of_row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }

    (0..nr).map(|r| (r, col_of_row[r])).collect()
}

/// Associate two box sets with the IoU cost `1 - IoU`, then drop any pair the
/// minimizer produced with zero overlap. Empty inputs yield an empty matching.
pub fn associate_boxes(a: &[BoundingBox], b: &[BoundingBox]) -> Assignment {
    associate_boxes_with_gate(a, b, 0.0)
}

/// Like [`associate_boxes`], with a minimum-IoU gate: pairs whose IoU is zero
/// or below the gate are removed after minimization.
pub fn associate_boxes_with_gate(a: &[BoundingBox], b: &[BoundingBox], min_iou: f64) -> Assignment {
    if a.is_empty() || b.is_empty() {
        return Assignment::default();
    }
    let costs = CostMatrix::from_fn(a.len(), b.len(), |r, c| 1.0 - a[r].iou(&b[c])).expect("non-empty");
    let solved = solve_assignment(&costs).expect("IoU costs are finite");
    let pairs = solved
        .pairs
        .into_iter()
        .filter(|&(r, c)| {
            let overlap = a[r].iou(&b[c]);
            overlap > 0.0 && overlap >= min_iou
        })
        .collect();
    Assignment { pairs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solve(rows: usize, cols: usize, data: &[f64]) -> Vec<(usize, usize)> {
        let m = CostMatrix::new(rows, cols, data.to_vec()).unwrap();
        solve_assignment(&m).unwrap().pairs().to_vec()
    }

    /// Exhaustive minimum over all injections of rows into columns.
    fn brute_force_min(costs: &CostMatrix) -> f64 {
        fn rec(costs: &CostMatrix, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == costs.rows() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..costs.cols() {
                if used[c] {
                    continue;
                }
                used[c] = true;
                let total = costs.get(row, c) + rec(costs, row + 1, used);
                used[c] = false;
                if total < best {
                    best = total;
                }
            }
            best
        }
        assert!(costs.rows() <= costs.cols());
        rec(costs, 0, &mut vec![false; costs.cols()])
    }

    #[test]
    fn single_cell() {
        assert_eq!(solve(1, 1, &[0.3]), vec![(0, 0)]);
    }

    #[test]
    fn diagonal_optimum() {
        // Brute force over both permutations: 0.1 + 0.1 < 0.9 + 0.9.
        assert_eq!(solve(2, 2, &[0.1, 0.9, 0.9, 0.1]), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn single_row_takes_cheaper_column() {
        assert_eq!(solve(1, 2, &[0.5, 0.2]), vec![(0, 1)]);
    }

    #[test]
    fn wide_and_tall_matrices_agree() {
        let wide = solve(2, 3, &[8.0, 4.0, 7.0, 5.0, 2.0, 3.0]);
        assert_eq!(wide, vec![(0, 1), (1, 2)]);
        let tall = solve(3, 2, &[8.0, 5.0, 4.0, 2.0, 7.0, 3.0]);
        let back: Vec<(usize, usize)> = tall.iter().map(|&(r, c)| (c, r)).collect();
        let mut sorted = back.clone();
        sorted.sort_unstable();
        assert_eq!(wide, sorted);
    }

    #[test]
    fn rejects_non_finite() {
        let m = CostMatrix::new(1, 2, vec![0.0, f64::NAN]).unwrap();
        assert_eq!(
            solve_assignment(&m).unwrap_err(),
            AssignmentError::NonFiniteCost { row: 0, col: 1 }
        );
    }

    #[test]
    fn optimal_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let rows = rng.random_range(1..=5);
            let cols = rng.random_range(rows..=6);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
            let m = CostMatrix::new(rows, cols, data).unwrap();
            let got = solve_assignment(&m).unwrap();
            assert_eq!(got.len(), rows.min(cols));
            let best = brute_force_min(&m);
            assert!(
                (got.total_cost(&m) - best).abs() <= 1e-9,
                "solver {} vs brute force {}",
                got.total_cost(&m),
                best
            );
        }
    }

    #[test]
    fn deterministic_on_ties() {
        let data = vec![0.5, 0.5, 0.5, 0.5];
        let m = CostMatrix::new(2, 2, data).unwrap();
        let a = solve_assignment(&m).unwrap();
        let b = solve_assignment(&m).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn associate_overlapping_pair() {
        let a = vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap()];
        let b = vec![BoundingBox::new(1.0, 1.0, 10.0, 10.0).unwrap()];
        assert_eq!(associate_boxes(&a, &b).pairs(), &[(0, 0)]);
    }

    #[test]
    fn associate_filters_zero_iou() {
        let a = vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap()];
        let b = vec![BoundingBox::new(100.0, 100.0, 10.0, 10.0).unwrap()];
        assert!(associate_boxes(&a, &b).is_empty());
    }

    #[test]
    fn associate_empty_inputs() {
        let b = vec![BoundingBox::new(0.0, 0.0, 5.0, 5.0).unwrap()];
        assert!(associate_boxes(&[], &b).is_empty());
        assert!(associate_boxes(&b, &[]).is_empty());
    }

    #[test]
    fn associate_never_leaves_zero_iou_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let gen_boxes = |rng: &mut ChaCha8Rng| -> Vec<BoundingBox> {
                (0..rng.random_range(1..6))
                    .map(|_| {
                        BoundingBox::new(
                            rng.random_range(0.0..80.0),
                            rng.random_range(0.0..80.0),
                            rng.random_range(1.0..20.0),
                            rng.random_range(1.0..20.0),
                        )
                        .unwrap()
                    })
                    .collect()
            };
            let a = gen_boxes(&mut rng);
            let b = gen_boxes(&mut rng);
            for &(r, c) in associate_boxes(&a, &b).pairs() {
                assert!(a[r].iou(&b[c]) > 0.0);
            }
        }
    }
}
