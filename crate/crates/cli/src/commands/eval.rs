use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Result};
use omr_assembly::evaluation::{
    curve_to_csv, match_auc, voc_map, DocumentEval, DocumentScore, PrCurve, ScoredPair, VocReport,
};
use omr_assembly::matching::{match_document, DEFAULT_T_MATCH};
use omr_assembly::{DetectionSet, NotationGraph};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{EvalAssemblyArgs, EvalDetectionArgs, ExportPrArgs};
use crate::config::{pick, FileConfig};
use crate::data::{detections_by_id, load_detections, load_ground_truth, read_json, read_predictions, to_json_bytes};
use crate::manifest::{manifest_path_for, RunManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentReport {
    #[serde(flatten)]
    pub score: DocumentScore,
    /// `(ground-truth node id, detection index)` for every matched node.
    pub matching: Vec<(u32, usize)>,
    pub mapped_edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyReport {
    pub t_match: f64,
    pub t_predict: f64,
    pub match_auc: f64,
    pub degenerate: bool,
    pub macro_auc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub curve: PrCurve,
    pub documents: Vec<DocumentReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<VocReport>,
}

/// Pairs each detection set with its ground truth; every set needs one.
fn align<'a>(
    graphs: &'a [NotationGraph],
    sets: &'a BTreeMap<String, DetectionSet>,
) -> Result<Vec<(&'a DetectionSet, &'a NotationGraph)>> {
    let by_id: BTreeMap<&str, &NotationGraph> = graphs.iter().map(|g| (g.document_id.as_str(), g)).collect();
    sets.values()
        .map(|d| {
            by_id
                .get(d.document_id.as_str())
                .map(|g| (d, *g))
                .ok_or_else(|| anyhow!("no ground truth for detections '{}'", d.document_id))
        })
        .collect()
}

pub fn eval_assembly(args: &EvalAssemblyArgs, cfg: &FileConfig) -> Result<()> {
    let gt = load_ground_truth(&args.ground_truth)?;
    let c = gt.vocab.len();
    let t_match = pick(args.t_match, cfg.evaluation.t_match, DEFAULT_T_MATCH);
    let t_predict = pick(args.t_predict, cfg.evaluation.t_predict, 0.5);
    let sets = detections_by_id(load_detections(&args.detections, &gt.vocab)?)?;
    let predictions = read_predictions(&args.predictions)?;
    if let Some(id) = predictions.keys().find(|id| !sets.contains_key(*id)) {
        bail!("predictions for '{id}' have no detections");
    }
    let pages = align(&gt.graphs, &sets)?;
    let empty: Vec<ScoredPair> = Vec::new();
    let docs: Vec<DocumentEval<'_>> = pages
        .iter()
        .map(|(d, g)| DocumentEval {
            detections: d,
            scored: predictions.get(&d.document_id).unwrap_or(&empty),
            ground_truth: g,
        })
        .collect();
    let report = match_auc(&docs, c, t_match)?;
    let point = report.curve.at_threshold(t_predict);

    let mut documents = Vec::with_capacity(pages.len());
    for (score, (d, g)) in report.per_document.iter().zip(&pages) {
        let m = match_document(d, g, c, t_match)?;
        let matching = (0..g.nodes.len())
            .filter_map(|k| m.matching.get(k).map(|j| (g.nodes[k].id, j)))
            .collect();
        documents.push(DocumentReport {
            score: score.clone(),
            matching,
            mapped_edges: m.mapped_edges.iter().copied().collect(),
        });
    }
    let detection = if args.detection_metrics {
        Some(voc_map(&pages, c, cfg.evaluation.iou.unwrap_or(0.5))?)
    } else {
        None
    };

    println!(
        "Match+AUC {:.6}{}",
        report.match_auc,
        if report.degenerate {
            " (degenerate: no ground-truth edge survived matching)"
        } else {
            ""
        }
    );
    println!(
        "precision {:.6} recall {:.6} at T_predict {t_predict}",
        point.precision, point.recall
    );
    if let Some(v) = &detection {
        println!("mAP {:.6} weighted mAP {:.6}", v.map, v.weighted_map);
    }

    let out = AssemblyReport {
        t_match,
        t_predict,
        match_auc: report.match_auc,
        degenerate: report.degenerate,
        macro_auc: report.macro_auc,
        precision: point.precision,
        recall: point.recall,
        curve: report.curve,
        documents,
        detection,
    };
    let mut m = RunManifest::new("eval-assembly", json!({ "t_match": t_match, "t_predict": t_predict }));
    if let Some(curve_path) = &args.curve {
        m.output(curve_path, curve_to_csv(&out.curve).as_bytes())?;
    }
    if let Some(path) = &args.out {
        for s in &gt.sources {
            m.input(s)?;
        }
        m.input(&args.detections)?;
        m.input(&args.predictions)?;
        m.output(path, &to_json_bytes(&out)?)?;
        m.results = json!({ "match_auc": out.match_auc, "precision": out.precision, "recall": out.recall });
        m.write(&manifest_path_for(path))?;
    }
    Ok(())
}

pub fn eval_detection(args: &EvalDetectionArgs, cfg: &FileConfig) -> Result<()> {
    let gt = load_ground_truth(&args.ground_truth)?;
    let iou = pick(args.iou, cfg.evaluation.iou, 0.5);
    let sets = detections_by_id(load_detections(&args.detections, &gt.vocab)?)?;
    let pages = align(&gt.graphs, &sets)?;
    let report = voc_map(&pages, gt.vocab.len(), iou)?;
    println!(
        "mAP {:.6} weighted mAP {:.6} at IoU > {iou}",
        report.map, report.weighted_map
    );
    if let Some(path) = &args.out {
        let mut m = RunManifest::new("eval-detection", json!({ "iou": iou }));
        for s in &gt.sources {
            m.input(s)?;
        }
        m.input(&args.detections)?;
        let per_class: BTreeMap<&str, Option<f64>> = gt
            .vocab
            .names()
            .iter()
            .map(String::as_str)
            .zip(report.per_class_ap.iter().copied())
            .collect();
        let out = json!({ "report": report, "per_class": per_class });
        m.output(path, &to_json_bytes(&out)?)?;
        m.results = json!({ "map": report.map, "weighted_map": report.weighted_map });
        m.write(&manifest_path_for(path))?;
    }
    Ok(())
}

pub fn export_pr(args: &ExportPrArgs) -> Result<()> {
    let report: AssemblyReport = read_json(&args.report)?;
    let mut m = RunManifest::new("export-pr", json!(null));
    m.input(&args.report)?;
    m.output(&args.out, curve_to_csv(&report.curve).as_bytes())?;
    m.results = json!({ "points": report.curve.points.len(), "auc": report.curve.auc });
    println!("wrote {} curve points", report.curve.points.len());
    m.write(&manifest_path_for(&args.out))
}
