//! Optimal assignment between detected and ground-truth symbols.
//!
//! The detected-to-ground-truth weight is `IoU(det box, gt box) * p_det[gt class]`.
//! A maximum-weight bipartite matching over these weights, filtered by a
//! strict weight threshold, gives the match function used both to transport
//! ground-truth edges onto detections for training and to score predictions.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{OmrError, Result};
use crate::geometry::iou;
use crate::mung_io::{DetectionSet, NotationGraph};

pub const DEFAULT_T_MATCH: f64 = 0.05;

/// Row-major `detected x ground truth` weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(OmrError::Dimension(format!(
                "{} weights for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(w) = data.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(OmrError::InvalidArgument(format!(
                "weight {w} is not finite and nonnegative"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(OmrError::Dimension("ragged weight rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|w| w * factor).collect(),
        }
    }

    fn transposed(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

pub fn build_weight_matrix(det: &DetectionSet, gt: &NotationGraph, num_classes: usize) -> Result<WeightMatrix> {
    if let Some(bad) = det.nodes.iter().find(|n| n.probs.len() != num_classes) {
        return Err(OmrError::VocabMismatch {
            expected: num_classes,
            found: bad.probs.len(),
        });
    }
    if let Some(bad) = gt.nodes.iter().find(|n| n.class_id >= num_classes) {
        return Err(OmrError::VocabMismatch {
            expected: num_classes,
            found: bad.class_id + 1,
        });
    }
    let mut data = Vec::with_capacity(det.nodes.len() * gt.nodes.len());
    for d in &det.nodes {
        for g in &gt.nodes {
            let overlap = iou(&d.bbox, &g.bbox);
            data.push(if overlap > 0.0 {
                overlap * d.probs[g.class_id]
            } else {
                0.0
            });
        }
    }
    WeightMatrix::new(det.nodes.len(), gt.nodes.len(), data)
}

/// Sum of matched weights, accumulated in `(i, j)` order.
pub fn matching_total(w: &WeightMatrix, pairs: &[(usize, usize)]) -> f64 {
    let mut sorted = pairs.to_vec();
    sorted.sort_unstable();
    sorted.iter().map(|&(i, j)| w.get(i, j)).sum()
}

/// Maximum-weight matching. Zero-weight entries are pruned first and each
/// connected component of the remaining bipartite graph is solved
/// independently. Returned pairs are `(detected, ground truth)`, sorted,
/// and all have positive weight.
pub fn max_weight_matching(w: &WeightMatrix) -> Vec<(usize, usize)> {
    let (r, c) = (w.rows, w.cols);
    let mut dsu = Dsu::new(r + c);
    for i in 0..r {
        for j in 0..c {
            if w.get(i, j) > 0.0 {
                dsu.union(i, r + j);
            }
        }
    }
    let mut components: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    let mut slot = vec![usize::MAX; r + c];
    for v in 0..r + c {
        let root = dsu.find(v);
        if slot[root] == usize::MAX {
            slot[root] = components.len();
            components.push((Vec::new(), Vec::new()));
        }
        let comp = &mut components[slot[root]];
        if v < r {
            comp.0.push(v);
        } else {
            comp.1.push(v - r);
        }
    }

    let mut pairs = Vec::new();
    for (rows, cols) in components {
        if rows.is_empty() || cols.is_empty() {
            continue;
        }
        pairs.extend(solve_dense(w, &rows, &cols));
    }
    pairs.sort_unstable();
    pairs
}

/// The same solver over the complete bipartite graph, without pruning.
pub fn max_weight_matching_dense(w: &WeightMatrix) -> Vec<(usize, usize)> {
    let rows: Vec<usize> = (0..w.rows).collect();
    let cols: Vec<usize> = (0..w.cols).collect();
    let mut pairs = solve_dense(w, &rows, &cols);
    pairs.sort_unstable();
    pairs
}

/// Square-padded Hungarian (shortest augmenting path with potentials) on
/// costs `-w`; padding entries weigh zero.
fn solve_dense(w: &WeightMatrix, rows: &[usize], cols: &[usize]) -> Vec<(usize, usize)> {
    let n = rows.len().max(cols.len());
    if n == 0 {
        return Vec::new();
    }
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows.len() && j < cols.len() {
            -w.get(rows[i], cols[j])
        } else {
            0.0
        }
    };

    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[j]: row assigned to column j (1-based, 0 = free)
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
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

    let mut pairs = Vec::new();
    for j in 1..=n {
        let i = p[j];
        if i == 0 || i > rows.len() || j > cols.len() {
            continue;
        }
        let (ri, cj) = (rows[i - 1], cols[j - 1]);
        if w.get(ri, cj) > 0.0 {
            pairs.push((ri, cj));
        }
    }
    pairs
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // lower root wins, keeps component order stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Exact optimum by dynamic programming over subsets of the smaller side,
/// which enumerates every matching implicitly. Verification oracle only.
#[allow(clippy::needless_range_loop)]
pub fn brute_force_matching(w: &WeightMatrix) -> Result<Vec<(usize, usize)>> {
    let small = w.rows.min(w.cols);
    if small > 10 {
        return Err(OmrError::TooLarge(small));
    }
    let transposed = w.rows < w.cols;
    // after this, rows = larger side, cols = smaller side (bitmask)
    let m = if transposed { w.transposed() } else { w.clone() };
    let states = 1usize << m.cols;
    let mut best = vec![f64::NEG_INFINITY; states];
    best[0] = 0.0;
    let mut choice = vec![vec![-1i8; states]; m.rows];
    for t in 0..m.rows {
        let mut next = best.clone();
        for mask in 0..states {
            if best[mask] == f64::NEG_INFINITY {
                continue;
            }
            for s in 0..m.cols {
                let wt = m.get(t, s);
                if mask & (1 << s) != 0 || wt <= 0.0 {
                    continue;
                }
                let to = mask | (1 << s);
                let cand = best[mask] + wt;
                if cand > next[to] {
                    next[to] = cand;
                    choice[t][to] = s as i8;
                }
            }
        }
        best = next;
    }
    let mut mask = (0..states)
        .max_by(|&a, &b| best[a].total_cmp(&best[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    let mut pairs = Vec::new();
    for t in (0..m.rows).rev() {
        // choice[t][mask] records how step t reached its optimum for `mask`
        let s = choice[t][mask];
        if s >= 0 {
            pairs.push((t, s as usize));
            mask &= !(1 << s);
        }
    }
    let mut pairs: Vec<(usize, usize)> = pairs
        .into_iter()
        .map(|(a, b)| if transposed { (b, a) } else { (a, b) })
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// `M: V -> V~ ∪ {∅}`, indexed by ground-truth node position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchFunction {
    pub assignment: Vec<Option<usize>>,
    pub threshold: f64,
}

impl MatchFunction {
    pub fn get(&self, gt_index: usize) -> Option<usize> {
        self.assignment.get(gt_index).copied().flatten()
    }

    pub fn matched_count(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_some()).count()
    }

    /// Detected position to ground-truth position.
    pub fn inverse(&self, num_detected: usize) -> Vec<Option<usize>> {
        let mut inv = vec![None; num_detected];
        for (j, a) in self.assignment.iter().enumerate() {
            if let Some(i) = a {
                inv[*i] = Some(j);
            }
        }
        inv
    }
}

/// Keeps matched pairs whose weight is strictly above `t_match`.
pub fn threshold_matching(pairs: &[(usize, usize)], w: &WeightMatrix, t_match: f64) -> Result<MatchFunction> {
    if !(0.0..1.0).contains(&t_match) {
        return Err(OmrError::InvalidArgument(format!("T_match {t_match} outside [0, 1)")));
    }
    let mut assignment = vec![None; w.cols];
    let mut seen = vec![false; w.rows];
    for &(i, j) in pairs {
        if i >= w.rows || j >= w.cols {
            return Err(OmrError::Dimension(format!("pair ({i}, {j}) outside matrix")));
        }
        if seen[i] || assignment[j].is_some() {
            return Err(OmrError::InvalidArgument(format!(
                "pair ({i}, {j}) reuses a matched node"
            )));
        }
        if w.get(i, j) > t_match {
            seen[i] = true;
            assignment[j] = Some(i);
        }
    }
    Ok(MatchFunction {
        assignment,
        threshold: t_match,
    })
}

/// `Ê = {(M(a), M(b)) | (a, b) ∈ E, both matched}` as sorted `(min, max)` pairs.
pub fn map_ground_truth_edges(edges: &BTreeSet<(usize, usize)>, m: &MatchFunction) -> BTreeSet<(usize, usize)> {
    edges
        .iter()
        .filter_map(|&(a, b)| {
            let (x, y) = (m.get(a)?, m.get(b)?);
            Some((x.min(y), x.max(y)))
        })
        .collect()
}

/// Matching plus transported edges for one document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocumentMatch {
    pub matching: MatchFunction,
    pub mapped_edges: BTreeSet<(usize, usize)>,
}

/// Weight matrix, optimal matching, threshold, edge mapping.
pub fn match_document(
    det: &DetectionSet,
    gt: &NotationGraph,
    num_classes: usize,
    t_match: f64,
) -> Result<DocumentMatch> {
    let w = build_weight_matrix(det, gt, num_classes)?;
    let pairs = max_weight_matching(&w);
    let matching = threshold_matching(&pairs, &w, t_match)?;
    let mapped_edges = map_ground_truth_edges(&gt.index_edges(), &matching);
    Ok(DocumentMatch { matching, mapped_edges })
}

/// JSON dump of a weight matrix and its match function, for inspection.
pub fn debug_dump(w: &WeightMatrix, m: &MatchFunction) -> serde_json::Value {
    serde_json::json!({ "weights": w, "matching": m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mung_io::{BBox, DetectedNode, GroundTruthNode};
    use proptest::prelude::*;

    fn wm(rows: &[&[f64]]) -> WeightMatrix {
        WeightMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn diagonal_dominant_2x2() {
        let w = wm(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let m = max_weight_matching(&w);
        assert_eq!(m, vec![(0, 0), (1, 1)]);
        assert!((matching_total(&w, &m) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn single_entry() {
        assert_eq!(max_weight_matching(&wm(&[&[0.5]])), vec![(0, 0)]);
    }

    #[test]
    fn rectangular_and_empty() {
        let w = wm(&[&[0.1, 0.7, 0.0], &[0.0, 0.6, 0.5]]);
        let m = max_weight_matching(&w);
        assert_eq!(m, vec![(0, 1), (1, 2)]);
        assert!(max_weight_matching(&WeightMatrix::new(0, 3, vec![]).unwrap()).is_empty());
        assert!(max_weight_matching(&wm(&[&[0.0, 0.0]])).is_empty());
    }

    #[test]
    fn weights_are_iou_times_class_prob() {
        let gt = NotationGraph {
            document_id: "d".into(),
            page_width: 100.0,
            page_height: 100.0,
            nodes: vec![GroundTruthNode {
                id: 0,
                bbox: BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
                class_id: 1,
            }],
            edges: BTreeSet::new(),
        };
        let det = DetectionSet {
            document_id: "d".into(),
            page_width: 100.0,
            page_height: 100.0,
            nodes: vec![
                DetectedNode {
                    bbox: BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
                    probs: vec![0.0, 1.0],
                },
                DetectedNode {
                    // IoU 0.8: 10x8 inside 10x10
                    bbox: BBox::new(0.0, 0.0, 10.0, 8.0).unwrap(),
                    probs: vec![0.1, 0.9],
                },
                DetectedNode {
                    bbox: BBox::new(50.0, 50.0, 60.0, 60.0).unwrap(),
                    probs: vec![0.0, 1.0],
                },
            ],
        };
        let w = build_weight_matrix(&det, &gt, 2).unwrap();
        assert_eq!(w.get(0, 0), 1.0);
        assert!((w.get(1, 0) - 0.72).abs() < 1e-12);
        assert_eq!(w.get(2, 0), 0.0);
        assert!(build_weight_matrix(&det, &gt, 3).is_err());
    }

    #[test]
    fn threshold_is_strict() {
        let w = wm(&[&[0.05, 0.0], &[0.0, 1.0]]);
        let m = threshold_matching(&[(0, 0), (1, 1)], &w, 0.05).unwrap();
        assert_eq!(m.assignment, vec![None, Some(1)]);
        let all = threshold_matching(&[(0, 0), (1, 1)], &w, 0.0).unwrap();
        assert_eq!(all.matched_count(), 2);
        assert!(threshold_matching(&[], &w, 1.0).is_err());
        assert!(threshold_matching(&[], &w, -0.1).is_err());
    }

    #[test]
    fn mapped_edges_follow_match() {
        // gt v1..v4 -> 0..3; v3 unmatched
        let edges: BTreeSet<(usize, usize)> = [(0, 1), (0, 2), (0, 3)].into_iter().collect();
        let m = MatchFunction {
            assignment: vec![Some(0), Some(1), None, Some(3)],
            threshold: 0.05,
        };
        let mapped = map_ground_truth_edges(&edges, &m);
        assert_eq!(mapped, [(0, 1), (0, 3)].into_iter().collect());
        let empty = MatchFunction {
            assignment: vec![None; 4],
            threshold: 0.05,
        };
        assert!(map_ground_truth_edges(&edges, &empty).is_empty());
    }

    #[test]
    fn brute_force_small_cases() {
        let zero = WeightMatrix::new(3, 2, vec![0.0; 6]).unwrap();
        assert!(brute_force_matching(&zero).unwrap().is_empty());
        let eye = wm(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let m = brute_force_matching(&eye).unwrap();
        assert_eq!(m, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(matching_total(&eye, &m), 3.0);
        let big = WeightMatrix::new(11, 11, vec![0.5; 121]).unwrap();
        assert!(brute_force_matching(&big).is_err());
        // wide but short is fine
        let wide = WeightMatrix::new(2, 40, (0..80).map(|k| (k % 7) as f64 / 7.0).collect()).unwrap();
        assert_eq!(
            matching_total(&wide, &brute_force_matching(&wide).unwrap()),
            matching_total(&wide, &max_weight_matching(&wide))
        );
    }

    fn arb_matrix() -> impl Strategy<Value = WeightMatrix> {
        (1usize..=8, 1usize..=8).prop_flat_map(|(r, c)| {
            prop::collection::vec(
                prop_oneof![
                    2 => Just(0.0),
                    3 => 0.0..1.0f64,
                    2 => (0u32..=8).prop_map(|k| k as f64 / 8.0),
                ],
                r * c,
            )
            .prop_map(move |data| WeightMatrix::new(r, c, data).unwrap())
        })
    }

    fn assert_injective(pairs: &[(usize, usize)]) {
        let rows: BTreeSet<_> = pairs.iter().map(|p| p.0).collect();
        let cols: BTreeSet<_> = pairs.iter().map(|p| p.1).collect();
        assert_eq!(rows.len(), pairs.len());
        assert_eq!(cols.len(), pairs.len());
    }

    proptest! {
        #[test]
        fn solver_matches_oracle(w in arb_matrix()) {
            let solved = max_weight_matching(&w);
            assert_injective(&solved);
            let oracle = brute_force_matching(&w).unwrap();
            prop_assert!((matching_total(&w, &solved) - matching_total(&w, &oracle)).abs() <= 1e-12);
        }

        #[test]
        fn pruning_is_sound(w in arb_matrix(), t in 0.0..0.5f64) {
            let pruned = threshold_matching(&max_weight_matching(&w), &w, t).unwrap();
            let dense = threshold_matching(&max_weight_matching_dense(&w), &w, t).unwrap();
            let total = |m: &MatchFunction| m.assignment.iter().enumerate()
                .filter_map(|(j, i)| i.map(|i| w.get(i, j))).sum::<f64>();
            prop_assert!((total(&pruned) - total(&dense)).abs() <= 1e-12);
        }

        #[test]
        fn scaling_keeps_optimum(w in arb_matrix(), lambda in 0.01..100.0f64) {
            let base = max_weight_matching(&w);
            let scaled = max_weight_matching(&w.scaled(lambda));
            prop_assert!((matching_total(&w, &base) - matching_total(&w, &scaled)).abs() <= 1e-9);
        }
    }
}
