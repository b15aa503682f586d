//! Matching costs and minimum-cost bipartite assignment.
//!
//! Rows are predictions, columns are targets, and `rows >= cols` always holds,
//! so every column is assigned and surplus rows stay unassigned. No sentinel
//! padding is ever added to the matrix.
//!
//! Ties between optimal assignments are broken towards the lexicographically
//! smallest sequence of `(row, col)` pairs listed in column order, i.e. the
//! smallest `row_for_col` vector. [`hungarian`] and [`brute_force_assignment`]
//! share that rule, so on tie-free inputs they return identical assignments,
//! and on exact ties they still agree.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{giou, l1_box_cost, BBox, GeometryError};
use crate::matching::{PairTarget, Prediction};

/// Clamp applied to probabilities before taking logarithms.
pub const LOG_EPS: f64 = 1e-7;

/// Largest column count [`brute_force_assignment`] accepts.
pub const BRUTE_FORCE_MAX_COLS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("cost matrix has {rows} rows but {cols} columns; need rows >= cols")]
    Shape { rows: usize, cols: usize },
    #[error("cost matrix data has {got} entries, expected {expected}")]
    DataLength { got: usize, expected: usize },
    #[error("non-finite cost at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("index map length {got} does not match dimension {expected}")]
    IdMap { got: usize, expected: usize },
    #[error("brute force refuses {0} columns (limit {BRUTE_FORCE_MAX_COLS})")]
    TooLarge(usize),
    #[error("cost weights must be finite, non-negative and not all zero")]
    Weights,
    #[error("full-mode cost needs target action labels")]
    MissingActions,
    #[error("object category {category} outside score vector of length {len}")]
    ObjectCategory { category: usize, len: usize },
    #[error("action label vector has {labels} slots but prediction has {scores} action scores")]
    ActionLength { labels: usize, scores: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Multipliers for the four matching-cost terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub bbox: f64,
    pub giou: f64,
    pub obj: f64,
    pub act: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { bbox: 2.5, giou: 1.0, obj: 1.0, act: 1.0 }
    }
}

impl CostWeights {
    pub fn unit() -> Self {
        Self { bbox: 1.0, giou: 1.0, obj: 1.0, act: 1.0 }
    }

    pub fn validate(&self) -> Result<(), AssignmentError> {
        let all = [self.bbox, self.giou, self.obj, self.act];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || all.iter().all(|w| *w == 0.0) {
            return Err(AssignmentError::Weights);
        }
        Ok(())
    }
}

/// How the action term is scored in [`CostMode::Full`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionCost {
    /// Mean element-wise binary cross-entropy over the seen-action slots.
    #[default]
    MeanBce,
    /// Negated mean of the average positive-slot score and the average
    /// negative-slot complement, as used by set-prediction HOI detectors.
    PosNegAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMode {
    /// Boxes, object class and actions; used against annotated pairs.
    Full(ActionCost),
    /// Boxes and object class only; used against unknown pairs.
    ActionFree,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS)
}

/// Binary cross-entropy of a single slot with clamped prediction.
pub fn bce(target: f64, score: f64) -> f64 {
    let q = clamp_prob(score);
    -(target * q.ln() + (1.0 - target) * (1.0 - q).ln())
}

/// Action term of the full matching cost. `labels` covers the seen-action
/// slots, which are the leading entries of `scores`.
pub fn action_cost(scores: &[f64], labels: &[bool], kind: ActionCost) -> Result<f64, AssignmentError> {
    if labels.len() > scores.len() {
        return Err(AssignmentError::ActionLength { labels: labels.len(), scores: scores.len() });
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let slots = scores.iter().zip(labels);
    Ok(match kind {
        ActionCost::MeanBce => {
            slots.map(|(&s, &y)| bce(if y { 1.0 } else { 0.0 }, s)).sum::<f64>() / labels.len() as f64
        }
        ActionCost::PosNegAverage => {
            let (mut pos, mut npos, mut neg, mut nneg) = (0.0, 0usize, 0.0, 0usize);
            for (&s, &y) in slots {
                if y {
                    pos += s;
                    npos += 1;
                } else {
                    neg += 1.0 - s;
                    nneg += 1;
                }
            }
            let pos = if npos > 0 { pos / npos as f64 } else { 0.0 };
            let neg = if nneg > 0 { neg / nneg as f64 } else { 0.0 };
            -(pos + neg) / 2.0
        }
    })
}

/// Geometric part of the cost for one box: weighted L1 in normalized
/// center form plus weighted `1 - giou`.
fn box_cost(pred: &BBox, gt: &BBox, frame: (f64, f64), w: &CostWeights) -> Result<f64, AssignmentError> {
    let (iw, ih) = frame;
    let l1 = l1_box_cost(&pred.to_center(iw, ih)?, &gt.to_center(iw, ih)?);
    let g = giou(pred, gt)?;
    Ok(w.bbox * l1 + w.giou * (1.0 - g))
}

/// Matching cost between one prediction and one target pair.
///
/// `frame` is the `(width, height)` of the image both live in.
pub fn pair_cost(
    pred: &Prediction,
    target: &PairTarget,
    frame: (f64, f64),
    weights: &CostWeights,
    mode: CostMode,
) -> Result<f64, AssignmentError> {
    let pair = &target.pair;
    let geo =
        box_cost(&pred.human, &pair.human, frame, weights)? + box_cost(&pred.object, &pair.object, frame, weights)?;
    let obj_score = pred
        .object_scores
        .get(pair.object_category)
        .ok_or(AssignmentError::ObjectCategory { category: pair.object_category, len: pred.object_scores.len() })?;
    let mut cost = geo - weights.obj * obj_score;
    if let CostMode::Full(kind) = mode {
        let labels = target.actions.as_ref().ok_or(AssignmentError::MissingActions)?;
        cost += weights.act * action_cost(&pred.action_scores, labels, kind)?;
    }
    Ok(cost)
}

/// Dense cost matrix with index maps back to query ids and target ids.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    row_ids: Vec<usize>,
    col_ids: Vec<usize>,
}

impl CostMatrix {
    /// Builds from row-major data with identity index maps.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AssignmentError> {
        Self::with_ids(data, (0..rows).collect(), (0..cols).collect())
    }

    pub fn with_ids(data: Vec<f64>, row_ids: Vec<usize>, col_ids: Vec<usize>) -> Result<Self, AssignmentError> {
        let (rows, cols) = (row_ids.len(), col_ids.len());
        if rows < cols {
            return Err(AssignmentError::Shape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(AssignmentError::DataLength { got: data.len(), expected: rows * cols });
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(AssignmentError::NonFinite { row: k / cols, col: k % cols });
        }
        Ok(Self { rows, cols, data, row_ids, col_ids })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssignmentError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(AssignmentError::DataLength { got: r.len(), expected: cols });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }
    pub fn col_ids(&self) -> &[usize] {
        &self.col_ids
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Tolerance under which two assignment totals count as tied.
    fn tie_tolerance(&self) -> f64 {
        1e-9 * (1.0 + self.max_abs()) * (self.cols.max(1) as f64)
    }
}

/// Partial injection of rows into columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(row, col)` pairs in ascending column order.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

impl Assignment {
    fn from_row_for_col(matrix: &CostMatrix, row_for_col: &[usize]) -> Self {
        let pairs: Vec<_> = row_for_col.iter().enumerate().map(|(c, &r)| (r, c)).collect();
        let cost = pairs.iter().map(|&(r, c)| matrix.get(r, c)).sum();
        Self { pairs, cost }
    }

    /// Pairs translated through the matrix index maps to `(query id, target id)`.
    pub fn mapped(&self, matrix: &CostMatrix) -> Vec<(usize, usize)> {
        self.pairs.iter().map(|&(r, c)| (matrix.row_ids[r], matrix.col_ids[c])).collect()
    }

    pub fn row_of(&self, col: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == col).map(|p| p.0)
    }
}

/// Shortest-augmenting-path Hungarian on the sub-matrix given by `rows`
/// and `cols`. Returns the optimal row (index into `rows`) for each col and
/// the optimal total. Requires `rows.len() >= cols.len()`.
fn solve_subproblem(m: &CostMatrix, rows: &[usize], cols: &[usize]) -> (Vec<usize>, f64) {
    let n = cols.len();
    let w = rows.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let cost = |i: usize, j: usize| m.get(rows[j - 1], cols[i - 1]);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; w + 1];
    let mut p = vec![0usize; w + 1];
    let mut way = vec![0usize; w + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; w + 1];
        let mut used = vec![false; w + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=w {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=w {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_for_col = vec![0usize; n];
    for j in 1..=w {
        if p[j] != 0 {
            row_for_col[p[j] - 1] = j - 1;
        }
    }
    let total = row_for_col.iter().enumerate().map(|(c, &r)| cost(c + 1, r + 1)).sum();
    (row_for_col, total)
}

/// Exact minimum-cost assignment of every column to a distinct row.
pub fn hungarian(matrix: &CostMatrix) -> Assignment {
    let (rows, cols) = (matrix.rows, matrix.cols);
    if cols == 0 {
        return Assignment { pairs: Vec::new(), cost: 0.0 };
    }
    let all_rows: Vec<usize> = (0..rows).collect();
    let all_cols: Vec<usize> = (0..cols).collect();
    let (witness_local, optimum) = solve_subproblem(matrix, &all_rows, &all_cols);
    let tol = matrix.tie_tolerance();

    // Walk the columns in order and fix each to the smallest row that still
    // admits an optimal completion. `witness` always holds such a completion.
    let mut witness: Vec<usize> = witness_local;
    let mut used = vec![false; rows];
    let mut fixed_cost = 0.0;
    let mut chosen = Vec::with_capacity(cols);
    for c in 0..cols {
        let current = witness[c];
        let rest_cols: Vec<usize> = (c + 1..cols).collect();
        let col_min_bound: f64 = rest_cols
            .iter()
            .map(|&rc| (0..rows).filter(|&r| !used[r]).map(|r| matrix.get(r, rc)).fold(f64::INFINITY, f64::min))
            .sum();
        let mut pick = current;
        for r in (0..current).filter(|&r| !used[r]) {
            let head = fixed_cost + matrix.get(r, c);
            if head + col_min_bound > optimum + tol {
                continue;
            }
            let rest_rows: Vec<usize> = (0..rows).filter(|&x| !used[x] && x != r).collect();
            let (sub, sub_cost) = solve_subproblem(matrix, &rest_rows, &rest_cols);
            if head + sub_cost <= optimum + tol {
                pick = r;
                for (k, &local) in sub.iter().enumerate() {
                    witness[c + 1 + k] = rest_rows[local];
                }
                break;
            }
        }
        used[pick] = true;
        fixed_cost += matrix.get(pick, c);
        chosen.push(pick);
    }
    Assignment::from_row_for_col(matrix, &chosen)
}

/// Exhaustive minimum over all injections of columns into rows.
pub fn brute_force_assignment(matrix: &CostMatrix) -> Result<Assignment, AssignmentError> {
    let cols = matrix.cols;
    if cols > BRUTE_FORCE_MAX_COLS {
        return Err(AssignmentError::TooLarge(cols));
    }
    let mut best = f64::INFINITY;
    enumerate_injections(matrix, &mut |_, cost| {
        best = best.min(cost);
        false
    });
    let tol = matrix.tie_tolerance();
    let mut found = None;
    enumerate_injections(matrix, &mut |rows, cost| {
        if cost <= best + tol {
            found = Some(rows.to_vec());
            true
        } else {
            false
        }
    });
    Ok(Assignment::from_row_for_col(matrix, &found.unwrap_or_default()))
}

/// Visits every `row_for_col` injection in lexicographic order. The visitor
/// returns `true` to stop.
fn enumerate_injections(matrix: &CostMatrix, visit: &mut dyn FnMut(&[usize], f64) -> bool) {
    fn go(
        m: &CostMatrix,
        col: usize,
        used: &mut [bool],
        stack: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize], f64) -> bool,
    ) -> bool {
        if col == m.cols {
            let cost = stack.iter().enumerate().map(|(c, &r)| m.get(r, c)).sum();
            return visit(stack, cost);
        }
        for r in 0..m.rows {
            if used[r] {
                continue;
            }
            used[r] = true;
            stack.push(r);
            let stop = go(m, col + 1, used, stack, visit);
            stack.pop();
            used[r] = false;
            if stop {
                return true;
            }
        }
        false
    }
    let mut used = vec![false; matrix.rows];
    go(matrix, 0, &mut used, &mut Vec::new(), visit);
}
