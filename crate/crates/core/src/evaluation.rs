//! Match+AUC and VOC-style detection mAP.
//!
//! Match+AUC transports ground-truth edges onto detected nodes through the
//! thresholded optimal matching, then integrates the precision-recall curve
//! traced by sweeping the prediction threshold over the model's pair scores.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{OmrError, Result};
use crate::geometry::iou;
use crate::matching::match_document;
use crate::mung_io::{DetectionSet, NotationGraph};

/// A model score for the unordered pair of detected nodes `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

impl ScoredPair {
    pub fn key(&self) -> (usize, usize) {
        (self.a.min(self.b), self.a.max(self.b))
    }
}

/// Operating point for predictions `{score > threshold}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Sorted by descending threshold; the first point predicts nothing.
    pub points: Vec<PrPoint>,
    pub auc: f64,
    pub num_true: usize,
    /// No true edges: every recall is 1 by convention and the AUC is 1.
    pub degenerate: bool,
}

impl PrCurve {
    /// Operating point for predictions `{score > t_predict}`, `t_predict >= 0`.
    pub fn at_threshold(&self, t_predict: f64) -> PrPoint {
        let point = self
            .points
            .iter()
            .find(|p| p.threshold <= t_predict)
            .unwrap_or_else(|| self.points.last().expect("a curve has at least one point"));
        PrPoint {
            threshold: t_predict,
            ..*point
        }
    }
}

/// `Ẽ = {score > t_predict}`. Empty `Ẽ` has precision 1, empty truth has recall 1.
pub fn precision_recall_for_threshold(
    scored: &[ScoredPair],
    truth: &BTreeSet<(usize, usize)>,
    t_predict: f64,
) -> (f64, f64) {
    let predicted: Vec<&ScoredPair> = scored.iter().filter(|p| p.score > t_predict).collect();
    let hits = predicted.iter().filter(|p| truth.contains(&p.key())).count();
    let precision = if predicted.is_empty() {
        1.0
    } else {
        hits as f64 / predicted.len() as f64
    };
    let recall = if truth.is_empty() {
        1.0
    } else {
        hits as f64 / truth.len() as f64
    };
    (precision, recall)
}

pub fn pr_curve_and_auc(scored: &[ScoredPair], truth: &BTreeSet<(usize, usize)>) -> PrCurve {
    let items: Vec<(f64, bool)> = scored.iter().map(|p| (p.score, truth.contains(&p.key()))).collect();
    pr_curve_from_labels(&items, truth.len())
}

/// Curve over labelled scores, where `num_true` may exceed the number of
/// positive items (true edges that were never scored).
///
/// Thresholds are the distinct scores plus 0, in descending order; pairs
/// scoring 0 or less are never predicted. The area is the step sum
/// `Σ (R_k - R_{k-1}) P_k`, computed as `Σ ΔTP_k P_k / num_true`.
pub fn pr_curve_from_labels(items: &[(f64, bool)], num_true: usize) -> PrCurve {
    let mut sorted: Vec<(f64, bool)> = items.iter().copied().filter(|(s, _)| *s > 0.0).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let recall = |tp: usize| {
        if num_true == 0 {
            1.0
        } else {
            tp as f64 / num_true as f64
        }
    };

    let mut points = Vec::new();
    let first_threshold = sorted.first().map_or(0.0, |s| s.0);
    points.push(PrPoint {
        threshold: first_threshold,
        precision: 1.0,
        recall: recall(0),
    });
    let (mut tp, mut predicted) = (0usize, 0usize);
    let mut weighted_hits = 0.0;
    let mut k = 0;
    while k < sorted.len() {
        let s = sorted[k].0;
        let before = tp;
        while k < sorted.len() && sorted[k].0 == s {
            predicted += 1;
            tp += usize::from(sorted[k].1);
            k += 1;
        }
        let precision = tp as f64 / predicted as f64;
        weighted_hits += (tp - before) as f64 * precision;
        points.push(PrPoint {
            threshold: sorted.get(k).map_or(0.0, |n| n.0),
            precision,
            recall: recall(tp),
        });
    }

    let degenerate = num_true == 0;
    let auc = if degenerate {
        1.0
    } else {
        weighted_hits / num_true as f64
    };
    PrCurve {
        points,
        auc,
        num_true,
        degenerate,
    }
}

/// `threshold,precision,recall` rows.
pub fn curve_to_csv(curve: &PrCurve) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.precision, p.recall);
    }
    out
}

/// Inputs for one page.
#[derive(Debug, Clone, Copy)]
pub struct DocumentEval<'a> {
    pub detections: &'a DetectionSet,
    pub scored: &'a [ScoredPair],
    pub ground_truth: &'a NotationGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentScore {
    pub document_id: String,
    pub auc: f64,
    pub degenerate: bool,
    pub num_detected: usize,
    pub num_ground_truth: usize,
    pub num_matched: usize,
    pub num_mapped_edges: usize,
    pub num_ground_truth_edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchAucReport {
    /// Pooled over all documents.
    pub match_auc: f64,
    pub curve: PrCurve,
    pub degenerate: bool,
    /// Mean of per-document AUCs over non-degenerate documents.
    pub macro_auc: Option<f64>,
    pub t_match: f64,
    pub per_document: Vec<DocumentScore>,
}

/// Match+AUC over a set of documents. Scored pairs and mapped edges from all
/// documents are pooled before building one curve; documents are processed in
/// sorted id order.
pub fn match_auc(docs: &[DocumentEval<'_>], num_classes: usize, t_match: f64) -> Result<MatchAucReport> {
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.sort_by(|&a, &b| docs[a].ground_truth.document_id.cmp(&docs[b].ground_truth.document_id));

    let mut pooled = Vec::new();
    let mut pooled_true = 0usize;
    let mut per_document = Vec::with_capacity(docs.len());
    for idx in order {
        let doc = &docs[idx];
        if doc.detections.document_id != doc.ground_truth.document_id {
            return Err(OmrError::DocumentMismatch(format!(
                "detections '{}' paired with ground truth '{}'",
                doc.detections.document_id, doc.ground_truth.document_id
            )));
        }
        let n_det = doc.detections.nodes.len();
        let mut seen = HashSet::with_capacity(doc.scored.len());
        for p in doc.scored {
            if p.a == p.b || p.a >= n_det || p.b >= n_det {
                return Err(OmrError::InvalidArgument(format!(
                    "scored pair ({}, {}) invalid for {n_det} detections in '{}'",
                    p.a, p.b, doc.detections.document_id
                )));
            }
            if !seen.insert(p.key()) {
                return Err(OmrError::InvalidArgument(format!(
                    "pair ({}, {}) scored twice in '{}'",
                    p.a, p.b, doc.detections.document_id
                )));
            }
            if !p.score.is_finite() {
                return Err(OmrError::InvalidArgument(format!("non-finite score {}", p.score)));
            }
        }
        let m = match_document(doc.detections, doc.ground_truth, num_classes, t_match)?;
        let items: Vec<(f64, bool)> = doc
            .scored
            .iter()
            .map(|p| (p.score, m.mapped_edges.contains(&p.key())))
            .collect();
        let curve = pr_curve_from_labels(&items, m.mapped_edges.len());
        per_document.push(DocumentScore {
            document_id: doc.ground_truth.document_id.clone(),
            auc: curve.auc,
            degenerate: curve.degenerate,
            num_detected: n_det,
            num_ground_truth: doc.ground_truth.nodes.len(),
            num_matched: m.matching.matched_count(),
            num_mapped_edges: m.mapped_edges.len(),
            num_ground_truth_edges: doc.ground_truth.edges.len(),
        });
        pooled_true += m.mapped_edges.len();
        pooled.extend(items);
    }

    let curve = pr_curve_from_labels(&pooled, pooled_true);
    if curve.degenerate {
        log::warn!("no ground-truth edge survived matching; Match+AUC is degenerate");
    }
    let valid: Vec<f64> = per_document.iter().filter(|d| !d.degenerate).map(|d| d.auc).collect();
    let macro_auc = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
    Ok(MatchAucReport {
        match_auc: curve.auc,
        degenerate: curve.degenerate,
        curve,
        macro_auc,
        t_match,
        per_document,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocReport {
    pub map: f64,
    pub weighted_map: f64,
    /// `None` for classes without ground-truth instances.
    pub per_class_ap: Vec<Option<f64>>,
    pub gt_counts: Vec<usize>,
    pub iou_threshold: f64,
}

/// VOC-protocol detection AP per class with all-points interpolation.
///
/// Each detection is ranked in every class by its probability for that
/// class (zero-probability entries are skipped). A detection is a true
/// positive if some unclaimed ground-truth box of the class in the same
/// document overlaps it with IoU above `iou_threshold`; the best such box is
/// claimed.
pub fn voc_map(pages: &[(&DetectionSet, &NotationGraph)], num_classes: usize, iou_threshold: f64) -> Result<VocReport> {
    for (det, gt) in pages {
        if det.document_id != gt.document_id {
            return Err(OmrError::DocumentMismatch(format!(
                "detections '{}' paired with ground truth '{}'",
                det.document_id, gt.document_id
            )));
        }
        if let Some(n) = det.nodes.iter().find(|n| n.probs.len() != num_classes) {
            return Err(OmrError::VocabMismatch {
                expected: num_classes,
                found: n.probs.len(),
            });
        }
    }

    let mut per_class_ap = vec![None; num_classes];
    let mut gt_counts = vec![0usize; num_classes];
    for (_, gt) in pages {
        for n in &gt.nodes {
            gt_counts[n.class_id] += 1;
        }
    }

    for k in 0..num_classes {
        let npos = gt_counts[k];
        if npos == 0 {
            continue;
        }
        let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
        for (d, (det, _)) in pages.iter().enumerate() {
            for (i, n) in det.nodes.iter().enumerate() {
                if n.probs[k] > 0.0 {
                    ranked.push((n.probs[k], d, i));
                }
            }
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));

        let mut claimed: Vec<Vec<bool>> = pages.iter().map(|(_, g)| vec![false; g.nodes.len()]).collect();
        let mut hits = Vec::with_capacity(ranked.len());
        for &(_, d, i) in &ranked {
            let (det, gt) = pages[d];
            let b = &det.nodes[i].bbox;
            let mut best: Option<(f64, usize)> = None;
            for (j, g) in gt.nodes.iter().enumerate() {
                if g.class_id != k || claimed[d][j] {
                    continue;
                }
                let o = iou(b, &g.bbox);
                if o > iou_threshold && best.is_none_or(|(bo, _)| o > bo) {
                    best = Some((o, j));
                }
            }
            match best {
                Some((_, j)) => {
                    claimed[d][j] = true;
                    hits.push(true);
                }
                None => hits.push(false),
            }
        }
        per_class_ap[k] = Some(interpolated_ap(&hits, npos));
    }

    let attested: Vec<(f64, usize)> = per_class_ap
        .iter()
        .zip(&gt_counts)
        .filter_map(|(ap, &n)| ap.map(|a| (a, n)))
        .collect();
    let (map, weighted_map) = if attested.is_empty() {
        (0.0, 0.0)
    } else {
        let total: usize = attested.iter().map(|(_, n)| n).sum();
        (
            attested.iter().map(|(a, _)| a).sum::<f64>() / attested.len() as f64,
            attested.iter().map(|(a, n)| a * *n as f64).sum::<f64>() / total as f64,
        )
    };
    Ok(VocReport {
        map,
        weighted_map,
        per_class_ap,
        gt_counts,
        iou_threshold,
    })
}

/// Area under the monotone precision envelope. Sum of envelope precision at
/// each true positive, divided by the positive count.
fn interpolated_ap(hits: &[bool], npos: usize) -> f64 {
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &h) in hits.iter().enumerate() {
        tp += usize::from(h);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let total: f64 = hits.iter().zip(&precision).filter(|(h, _)| **h).map(|(_, p)| p).sum();
    total / npos as f64
}
