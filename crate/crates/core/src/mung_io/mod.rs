//! Annotation and detection ingestion.
//!
//! Ground truth arrives as MuNG XML (one `Node` element per symbol, relations
//! as `Outlinks`), detector output as JSON Lines. Edges are kept undirected;
//! [`orient_edge`] recovers a direction from the class grammar when needed.

mod detections;
mod split;
mod vocab;
mod xml;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{OmrError, Result};

pub use detections::{read_detections, read_tiled_detections, write_detections};
pub use split::{split_dataset, DatasetSplit, SplitRatios};
pub use vocab::{derive_essential_classes, orient_edge, ClassVocab, GrammarRules, Orientation};
pub use xml::{parse_mung_document, write_mung_document};

/// Axis-aligned box in page pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub top: f64,
    pub left: f64,
    pub bottom: f64,
    pub right: f64,
}

impl BBox {
    pub fn new(top: f64, left: f64, bottom: f64, right: f64) -> Result<Self> {
        let b = Self {
            top,
            left,
            bottom,
            right,
        };
        b.validate()?;
        Ok(b)
    }

    /// Checks ordering and finiteness. Negative coordinates are rejected too,
    /// since every box we ingest lives on a page.
    pub fn validate(&self) -> Result<()> {
        let coords = [self.top, self.left, self.bottom, self.right];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(OmrError::InvalidBBox(format!("non-finite coordinate in {self:?}")));
        }
        if coords.iter().any(|&c| c < 0.0) {
            return Err(OmrError::InvalidBBox(format!("negative coordinate in {self:?}")));
        }
        if !(self.top < self.bottom && self.left < self.right) {
            return Err(OmrError::InvalidBBox(format!(
                "expected top < bottom and left < right, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Center as `(x, y)`.
    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.left + self.right), 0.5 * (self.top + self.bottom))
    }

    pub fn translate(&self, dy: f64, dx: f64) -> Self {
        Self {
            top: self.top + dy,
            left: self.left + dx,
            bottom: self.bottom + dy,
            right: self.right + dx,
        }
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.left && x <= self.right && y >= self.top && y <= self.bottom
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.top, self.left, self.bottom, self.right]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthNode {
    pub id: u32,
    pub bbox: BBox,
    pub class_id: usize,
}

/// Annotated page: symbols plus their undirected relationship edges.
///
/// Edges are node-id pairs stored as `(min, max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotationGraph {
    pub document_id: String,
    pub page_width: f64,
    pub page_height: f64,
    pub nodes: Vec<GroundTruthNode>,
    pub edges: BTreeSet<(u32, u32)>,
}

impl NotationGraph {
    /// Node id to position in `nodes`.
    pub fn index_of_ids(&self) -> BTreeMap<u32, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect()
    }

    /// Edges rewritten as `(min, max)` pairs of positions in `nodes`.
    pub fn index_edges(&self) -> BTreeSet<(usize, usize)> {
        let index = self.index_of_ids();
        self.edges
            .iter()
            .map(|(a, b)| {
                let (ia, ib) = (index[a], index[b]);
                (ia.min(ib), ia.max(ib))
            })
            .collect()
    }

    pub fn validate(&self, vocab: &ClassVocab) -> Result<()> {
        let mut ids = HashSet::new();
        for node in &self.nodes {
            if !ids.insert(node.id) {
                return Err(OmrError::InvalidArgument(format!(
                    "duplicate node id {} in '{}'",
                    node.id, self.document_id
                )));
            }
            if node.class_id >= vocab.len() {
                return Err(OmrError::VocabMismatch {
                    expected: vocab.len(),
                    found: node.class_id + 1,
                });
            }
            node.bbox.validate()?;
        }
        for &(a, b) in &self.edges {
            if a >= b {
                return Err(OmrError::InvalidArgument(format!(
                    "edge ({a}, {b}) is not stored as (min, max) or is a self-loop"
                )));
            }
            for (from, to) in [(a, b), (b, a)] {
                if !ids.contains(&to) {
                    return Err(OmrError::DanglingLink { from, to });
                }
            }
        }
        Ok(())
    }
}

/// One detector output: a box and a full class distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedNode {
    pub bbox: BBox,
    pub probs: Vec<f64>,
}

impl DetectedNode {
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = k;
            }
        }
        best
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }

    /// Checks the distribution invariant: entries in `[0, 1]`, sum within 1e-6 of one.
    pub fn validate_probs(&self, num_classes: usize) -> std::result::Result<(), String> {
        if self.probs.len() != num_classes {
            return Err(format!(
                "probability vector has {} entries, vocabulary has {num_classes}",
                self.probs.len()
            ));
        }
        if let Some(p) = self.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(format!("probability {p} outside [0, 1]"));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(format!("probabilities sum to {sum}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub document_id: String,
    pub page_width: f64,
    pub page_height: f64,
    pub nodes: Vec<DetectedNode>,
}

impl DetectionSet {
    /// Perfect detections: every ground-truth node with a one-hot distribution.
    pub fn from_ground_truth(graph: &NotationGraph, num_classes: usize) -> Self {
        let nodes = graph
            .nodes
            .iter()
            .map(|n| {
                let mut probs = vec![0.0; num_classes];
                probs[n.class_id] = 1.0;
                DetectedNode { bbox: n.bbox, probs }
            })
            .collect();
        Self {
            document_id: graph.document_id.clone(),
            page_width: graph.page_width,
            page_height: graph.page_height,
            nodes,
        }
    }
}

/// Drops every node whose class is not in `keep`, along with its edges.
/// Node ids are preserved.
pub fn restrict_classes(graph: &NotationGraph, keep: &BTreeSet<String>, vocab: &ClassVocab) -> Result<NotationGraph> {
    let mut keep_ids = vec![false; vocab.len()];
    for name in keep {
        let id = vocab.id(name).ok_or_else(|| OmrError::UnknownClass(name.clone()))?;
        keep_ids[id] = true;
    }
    let nodes: Vec<GroundTruthNode> = graph.nodes.iter().filter(|n| keep_ids[n.class_id]).cloned().collect();
    let surviving: HashSet<u32> = nodes.iter().map(|n| n.id).collect();
    let edges = graph
        .edges
        .iter()
        .filter(|(a, b)| surviving.contains(a) && surviving.contains(b))
        .copied()
        .collect();
    Ok(NotationGraph {
        document_id: graph.document_id.clone(),
        page_width: graph.page_width,
        page_height: graph.page_height,
        nodes,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> ClassVocab {
        ClassVocab::from_names(["stem", "beam", "noteheadFull"]).unwrap()
    }

    fn stem_beam_graph() -> NotationGraph {
        NotationGraph {
            document_id: "doc".into(),
            page_width: 100.0,
            page_height: 100.0,
            nodes: vec![
                GroundTruthNode {
                    id: 1,
                    bbox: BBox::new(10.0, 10.0, 50.0, 12.0).unwrap(),
                    class_id: 0,
                },
                GroundTruthNode {
                    id: 4,
                    bbox: BBox::new(8.0, 10.0, 14.0, 40.0).unwrap(),
                    class_id: 1,
                },
            ],
            edges: [(1, 4)].into_iter().collect(),
        }
    }

    #[test]
    fn restrict_to_stem_drops_beam_and_edge() {
        let g = stem_beam_graph();
        let keep = ["stem".to_string()].into_iter().collect();
        let r = restrict_classes(&g, &keep, &vocab()).unwrap();
        assert_eq!(r.nodes.len(), 1);
        assert_eq!(r.nodes[0].id, 1);
        assert!(r.edges.is_empty());
    }

    #[test]
    fn restrict_identity_and_empty() {
        let g = stem_beam_graph();
        let v = vocab();
        let all: BTreeSet<String> = v.names().iter().cloned().collect();
        assert_eq!(restrict_classes(&g, &all, &v).unwrap(), g);
        let none = restrict_classes(&g, &BTreeSet::new(), &v).unwrap();
        assert!(none.nodes.is_empty() && none.edges.is_empty());
    }

    #[test]
    fn restrict_rejects_unknown_name() {
        let keep = ["flagZ".to_string()].into_iter().collect();
        let err = restrict_classes(&stem_beam_graph(), &keep, &vocab()).unwrap_err();
        assert!(err.to_string().contains("flagZ"));
    }

    #[test]
    fn bbox_rejects_inverted() {
        assert!(BBox::new(5.0, 0.0, 5.0, 1.0).is_err());
        assert!(BBox::new(0.0, 3.0, 1.0, 2.0).is_err());
        assert!(BBox::new(0.0, f64::NAN, 1.0, 2.0).is_err());
    }
}
