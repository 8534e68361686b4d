//! Candidate pair generation and model input assembly.

use serde::{Deserialize, Serialize};

use crate::error::{OmrError, Result};
use crate::geometry::normalize_bbox;
use crate::mung_io::{BBox, DetectionSet, NotationGraph};

/// How a node's class enters the model: a class id looked up in an
/// embedding table, or a probability vector fed through a linear map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeClass {
    Id(usize),
    Probs(Vec<f64>),
}

/// Per-node model input: normalized `[top, left, bottom, right]` plus class.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub bbox: [f64; 4],
    pub class: NodeClass,
}

/// Ground-truth nodes; soft mode uses one-hot distributions.
pub fn graph_node_features(graph: &NotationGraph, mode: ClassMode, num_classes: usize) -> Vec<NodeFeatures> {
    graph
        .nodes
        .iter()
        .map(|n| NodeFeatures {
            bbox: normalize_bbox(&n.bbox, graph.page_width, graph.page_height),
            class: match mode {
                ClassMode::Hard => NodeClass::Id(n.class_id),
                ClassMode::Soft => {
                    let mut p = vec![0.0; num_classes];
                    p[n.class_id] = 1.0;
                    NodeClass::Probs(p)
                }
            },
        })
        .collect()
}

/// Detected nodes; hard mode takes the most probable class.
pub fn detection_node_features(det: &DetectionSet, mode: ClassMode) -> Vec<NodeFeatures> {
    det.nodes
        .iter()
        .map(|n| NodeFeatures {
            bbox: normalize_bbox(&n.bbox, det.page_width, det.page_height),
            class: match mode {
                ClassMode::Hard => NodeClass::Id(n.argmax()),
                ClassMode::Soft => NodeClass::Probs(n.probs.clone()),
            },
        })
        .collect()
}

/// Maximum center-to-center distance, as a fraction of page width, for a
/// pair to be considered at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFilterConfig {
    pub max_center_distance: f64,
}

impl PairFilterConfig {
    pub fn new(max_center_distance: f64) -> Result<Self> {
        if !(max_center_distance > 0.0 && max_center_distance.is_finite()) {
            return Err(OmrError::InvalidArgument(format!(
                "max center distance {max_center_distance} must be positive"
            )));
        }
        Ok(Self { max_center_distance })
    }

    fn admits(&self, a: &BBox, b: &BBox, page_width: f64) -> bool {
        center_distance(a, b) <= self.max_center_distance * page_width
    }
}

fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterCalibration {
    pub config: PairFilterConfig,
    /// Fraction of ground-truth edges the chosen filter keeps.
    pub retention: f64,
    /// Set when no grid value reached the target and the largest was used.
    pub target_missed: bool,
}

pub const DEFAULT_RETENTION_TARGET: f64 = 0.995;

/// Smallest grid value in 0.01, 0.02, ..., 0.50 whose filter keeps at least
/// `retention_target` of all ground-truth edges.
pub fn calibrate_pair_filter(graphs: &[NotationGraph], retention_target: f64) -> Result<FilterCalibration> {
    let mut total = 0usize;
    let mut spans = Vec::new();
    for g in graphs {
        let index = g.index_of_ids();
        for (a, b) in &g.edges {
            let (na, nb) = (&g.nodes[index[a]], &g.nodes[index[b]]);
            spans.push((na.bbox, nb.bbox, g.page_width));
            total += 1;
        }
    }
    if total == 0 {
        return Err(OmrError::InvalidArgument(
            "pair filter calibration needs at least one ground-truth edge".into(),
        ));
    }
    let mut last = None;
    for k in 1..=50 {
        let cfg = PairFilterConfig::new(k as f64 / 100.0)?;
        let kept = spans.iter().filter(|(a, b, w)| cfg.admits(a, b, *w)).count();
        let retention = kept as f64 / total as f64;
        let cal = FilterCalibration {
            config: cfg,
            retention,
            target_missed: false,
        };
        if retention >= retention_target {
            return Ok(cal);
        }
        last = Some(cal);
    }
    let mut cal = last.expect("grid is non-empty");
    cal.target_missed = true;
    log::warn!(
        "pair filter keeps only {:.4} of edges at the largest grid value {}",
        cal.retention,
        cal.config.max_center_distance
    );
    Ok(cal)
}

/// All unordered pairs `(a, b)`, `a < b`, whose centers lie within the
/// filter distance. Sorted.
pub fn candidate_pairs(boxes: &[BBox], cfg: &PairFilterConfig, page_width: f64) -> Vec<(usize, usize)> {
    let reach = cfg.max_center_distance * page_width;
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    let cx: Vec<f64> = boxes.iter().map(|b| b.center().0).collect();
    order.sort_by(|&a, &b| cx[a].total_cmp(&cx[b]).then(a.cmp(&b)));
    let mut pairs = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        for &j in &order[pos + 1..] {
            if cx[j] - cx[i] > reach {
                break;
            }
            if cfg.admits(&boxes[i], &boxes[j], page_width) {
                pairs.push((i.min(j), i.max(j)));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassRef<'a> {
    Id(usize),
    Probs(&'a [f64]),
}

/// Model input for one pair. Node `a` always has the lower index, and its
/// features come first in the concatenation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCandidate<'a> {
    pub a: usize,
    pub b: usize,
    pub label: bool,
    pub boxes: [[f64; 4]; 2],
    pub classes: [ClassRef<'a>; 2],
}

pub fn assemble_features(nodes: &[NodeFeatures], a: usize, b: usize, label: bool) -> PairCandidate<'_> {
    let (a, b) = (a.min(b), a.max(b));
    fn class(n: &NodeFeatures) -> ClassRef<'_> {
        match &n.class {
            NodeClass::Id(c) => ClassRef::Id(*c),
            NodeClass::Probs(p) => ClassRef::Probs(p),
        }
    }
    PairCandidate {
        a,
        b,
        label,
        boxes: [nodes[a].bbox, nodes[b].bbox],
        classes: [class(&nodes[a]), class(&nodes[b])],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mung_io::GroundTruthNode;
    use proptest::prelude::*;

    fn bb(t: f64, l: f64, b: f64, r: f64) -> BBox {
        BBox::new(t, l, b, r).unwrap()
    }

    fn graph(boxes: &[BBox], edges: &[(u32, u32)]) -> NotationGraph {
        NotationGraph {
            document_id: "g".into(),
            page_width: 1000.0,
            page_height: 800.0,
            nodes: boxes
                .iter()
                .enumerate()
                .map(|(i, b)| GroundTruthNode {
                    id: i as u32,
                    bbox: *b,
                    class_id: i % 3,
                })
                .collect(),
            edges: edges.iter().copied().collect(),
        }
    }

    #[test]
    fn coincident_edge_calibrates_to_smallest() {
        let b = bb(10.0, 10.0, 20.0, 20.0);
        let cal = calibrate_pair_filter(&[graph(&[b, b], &[(0, 1)])], 0.995).unwrap();
        assert_eq!(cal.config.max_center_distance, 0.01);
        assert!(!cal.target_missed);
        let vacuous = calibrate_pair_filter(&[graph(&[b, bb(500.0, 900.0, 510.0, 910.0)], &[(0, 1)])], 0.0).unwrap();
        assert_eq!(vacuous.config.max_center_distance, 0.01);
    }

    #[test]
    fn short_edges_calibrate_low() {
        // every edge spans at most 0.1 * W = 100 px
        let boxes: Vec<BBox> = (0..10)
            .map(|k| bb(100.0, k as f64 * 90.0, 110.0, k as f64 * 90.0 + 10.0))
            .collect();
        let edges: Vec<(u32, u32)> = (0..9).map(|k| (k, k + 1)).collect();
        let cal = calibrate_pair_filter(&[graph(&boxes, &edges)], 0.995).unwrap();
        assert!(cal.config.max_center_distance <= 0.10);
        assert_eq!(cal.retention, 1.0);
    }

    #[test]
    fn unreachable_target_flags() {
        let g = graph(&[bb(0.0, 0.0, 10.0, 10.0), bb(700.0, 900.0, 710.0, 990.0)], &[(0, 1)]);
        let cal = calibrate_pair_filter(&[g], 0.995).unwrap();
        assert!(cal.target_missed);
        assert_eq!(cal.config.max_center_distance, 0.5);
        assert!(calibrate_pair_filter(&[graph(&[], &[])], 0.9).is_err());
    }

    #[test]
    fn candidate_examples() {
        let cfg = PairFilterConfig::new(0.5).unwrap();
        let b = bb(10.0, 10.0, 20.0, 20.0);
        assert_eq!(candidate_pairs(&[b, b], &cfg, 1000.0), vec![(0, 1)]);
        assert_eq!(candidate_pairs(&[b, b, b], &cfg, 1000.0).len(), 3);
        // centers (0, 0) and (W, 0)
        let far = [bb(0.0, 0.0, 0.0 + 1e-9, 1e-9), bb(0.0, 1000.0, 1e-9, 1000.0 + 1e-9)];
        assert!(candidate_pairs(&far, &cfg, 1000.0).is_empty());
    }

    #[test]
    fn assembly_is_canonical() {
        let g = graph(&[bb(0.0, 0.0, 10.0, 10.0), bb(5.0, 5.0, 20.0, 20.0)], &[]);
        let nodes = graph_node_features(&g, ClassMode::Hard, 3);
        let p = assemble_features(&nodes, 1, 0, true);
        assert_eq!(p, assemble_features(&nodes, 0, 1, true));
        assert_eq!((p.a, p.b), (0, 1));
        assert_eq!(p.classes, [ClassRef::Id(0), ClassRef::Id(1)]);
        assert_eq!(p.boxes.iter().flatten().count(), 8);
    }

    #[test]
    fn soft_ground_truth_is_one_hot() {
        let mut g = graph(&[bb(0.0, 0.0, 10.0, 10.0)], &[]);
        g.nodes[0].class_id = 5;
        let nodes = graph_node_features(&g, ClassMode::Soft, 8);
        let NodeClass::Probs(p) = &nodes[0].class else { panic!() };
        assert_eq!(p.iter().sum::<f64>(), 1.0);
        assert_eq!(p[5], 1.0);
    }

    proptest! {
        #[test]
        fn candidates_brute_force_equivalent(
            raw in prop::collection::vec((0.0..900.0f64, 0.0..900.0f64, 1.0..60.0f64), 0..40),
            d in 0.01..0.5f64,
        ) {
            let boxes: Vec<BBox> = raw.iter().map(|&(t, l, s)| bb(t, l, t + s, l + s)).collect();
            let cfg = PairFilterConfig::new(d).unwrap();
            let fast = candidate_pairs(&boxes, &cfg, 1000.0);
            let mut slow = Vec::new();
            for i in 0..boxes.len() {
                for j in i + 1..boxes.len() {
                    if cfg.admits(&boxes[i], &boxes[j], 1000.0) {
                        slow.push((i, j));
                    }
                }
            }
            prop_assert_eq!(&fast, &slow);
            // symmetric in input order
            let mut rev = boxes.clone();
            rev.reverse();
            let n = boxes.len();
            let mut mirrored: Vec<(usize, usize)> = candidate_pairs(&rev, &cfg, 1000.0)
                .into_iter().map(|(a, b)| (n - 1 - b, n - 1 - a)).collect();
            mirrored.sort_unstable();
            prop_assert_eq!(fast, mirrored);
        }
    }
}
