//! Example construction and the training loop for the edge classifier.
//!
//! Baseline training labels candidate pairs of ground-truth symbols with the
//! annotated edges. Pipelined training labels candidate pairs of detected
//! symbols with the edges transported through the optimal matching, and the
//! soft variant additionally feeds the detector's class distributions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OmrError, Result};
use crate::evaluation::{match_auc, DocumentEval, MatchAucReport, ScoredPair};
use crate::features::{
    assemble_features, candidate_pairs, detection_node_features, graph_node_features, ClassMode, NodeFeatures,
    PairCandidate, PairFilterConfig,
};
use crate::matching::{match_document, DEFAULT_T_MATCH};
use crate::mlp_model::{
    adam_step, backward, init_params, predict, save_checkpoint, AdamConfig, AdamState, CheckpointMeta, ModelParams,
};
use crate::mung_io::{DetectionSet, NotationGraph};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Baseline,
    Pipelined,
    PipelinedSoft,
}

impl TrainMode {
    pub fn class_mode(self) -> ClassMode {
        match self {
            TrainMode::Baseline | TrainMode::Pipelined => ClassMode::Hard,
            TrainMode::PipelinedSoft => ClassMode::Soft,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::Pipelined => "pipelined",
            TrainMode::PipelinedSoft => "pipelined_soft",
        }
    }
}

impl FromStr for TrainMode {
    type Err = OmrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(TrainMode::Baseline),
            "pipelined" => Ok(TrainMode::Pipelined),
            "pipelined_soft" | "pipelined-soft" => Ok(TrainMode::PipelinedSoft),
            other => Err(OmrError::InvalidArgument(format!(
                "unknown training mode '{other}' (expected baseline, pipelined or pipelined-soft)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub eval_every: usize,
    pub seed: u64,
    pub filter: PairFilterConfig,
    pub t_match: f64,
    /// Fraction of negative pairs kept; `None` keeps all of them.
    pub negative_keep: Option<f64>,
    /// Adds a learned bias to the soft class representation.
    pub soft_bias: bool,
}

impl TrainConfig {
    pub fn new(mode: TrainMode, filter: PairFilterConfig, seed: u64) -> Self {
        Self {
            mode,
            epochs: 200,
            batch_size: 256,
            lr: 1e-4,
            eval_every: 20,
            seed,
            filter,
            t_match: DEFAULT_T_MATCH,
            negative_keep: None,
            soft_bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OmrError::InvalidArgument(m));
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch_size and eval_every must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.t_match) {
            return bad(format!("T_match {} outside [0, 1)", self.t_match));
        }
        if let Some(k) = self.negative_keep {
            if !(k > 0.0 && k <= 1.0) {
                return bad(format!("negative keep rate {k} outside (0, 1]"));
            }
        }
        PairFilterConfig::new(self.filter.max_center_distance).map(|_| ())
    }
}

/// Node features and labelled candidate pairs `(a, b, label)`, `a < b`, of one page.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentExamples {
    pub document_id: String,
    pub nodes: Vec<NodeFeatures>,
    pub pairs: Vec<(usize, usize, bool)>,
}

/// Documents in sorted id order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExampleSet {
    pub docs: Vec<DocumentExamples>,
}

impl ExampleSet {
    pub fn num_examples(&self) -> usize {
        self.docs.iter().map(|d| d.pairs.len()).sum()
    }

    pub fn num_positive(&self) -> usize {
        self.docs.iter().map(|d| d.pairs.iter().filter(|p| p.2).count()).sum()
    }

    /// `(document, a, b, label)` for every example.
    pub fn label_set(&self) -> BTreeSet<(String, usize, usize, bool)> {
        self.docs
            .iter()
            .flat_map(|d| d.pairs.iter().map(|&(a, b, l)| (d.document_id.clone(), a, b, l)))
            .collect()
    }

    fn check_nonempty(self, hint: &str) -> Result<Self> {
        if self.num_examples() == 0 {
            return Err(OmrError::EmptyCandidates(format!(
                "{hint}; recalibrate the pair filter to a larger distance"
            )));
        }
        Ok(self)
    }
}

/// Candidate pairs of ground-truth nodes, labelled by the annotated edges.
pub fn build_baseline_examples(
    graphs: &[NotationGraph],
    mode: ClassMode,
    num_classes: usize,
    filter: &PairFilterConfig,
) -> Result<ExampleSet> {
    let mut sorted: Vec<&NotationGraph> = graphs.iter().collect();
    sorted.sort_by(|a, b| a.document_id.cmp(&b.document_id));
    let mut docs = Vec::with_capacity(graphs.len());
    for g in sorted {
        if let Some(n) = g.nodes.iter().find(|n| n.class_id >= num_classes) {
            return Err(OmrError::VocabMismatch {
                expected: num_classes,
                found: n.class_id + 1,
            });
        }
        let edges = g.index_edges();
        let boxes: Vec<_> = g.nodes.iter().map(|n| n.bbox).collect();
        let pairs = candidate_pairs(&boxes, filter, g.page_width)
            .into_iter()
            .map(|(a, b)| (a, b, edges.contains(&(a, b))))
            .collect();
        docs.push(DocumentExamples {
            document_id: g.document_id.clone(),
            nodes: graph_node_features(g, mode, num_classes),
            pairs,
        });
    }
    ExampleSet { docs }.check_nonempty("no ground-truth node pair passes the filter")
}

/// Candidate pairs of detected nodes, labelled by the ground-truth edges
/// mapped through the thresholded matching. Every detection set needs a graph
/// with the same document id.
pub fn build_pipelined_examples(
    detections: &[DetectionSet],
    graphs: &[NotationGraph],
    mode: ClassMode,
    num_classes: usize,
    filter: &PairFilterConfig,
    t_match: f64,
) -> Result<ExampleSet> {
    let by_id: BTreeMap<&str, &NotationGraph> = graphs.iter().map(|g| (g.document_id.as_str(), g)).collect();
    let mut sorted: Vec<&DetectionSet> = detections.iter().collect();
    sorted.sort_by(|a, b| a.document_id.cmp(&b.document_id));
    let mut docs = Vec::with_capacity(detections.len());
    for det in sorted {
        let g = by_id.get(det.document_id.as_str()).ok_or_else(|| {
            OmrError::DocumentMismatch(format!("no ground truth for detections '{}'", det.document_id))
        })?;
        let m = match_document(det, g, num_classes, t_match)?;
        let boxes: Vec<_> = det.nodes.iter().map(|n| n.bbox).collect();
        let pairs = candidate_pairs(&boxes, filter, det.page_width)
            .into_iter()
            .map(|(a, b)| (a, b, m.mapped_edges.contains(&(a, b))))
            .collect();
        docs.push(DocumentExamples {
            document_id: det.document_id.clone(),
            nodes: detection_node_features(det, mode),
            pairs,
        });
    }
    ExampleSet { docs }.check_nonempty("no detected node pair passes the filter")
}

/// Keeps every positive and each negative with probability `keep`.
pub fn subsample_negatives(set: &ExampleSet, keep: f64, seed: u64) -> ExampleSet {
    let docs = set
        .docs
        .iter()
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b"negatives", d.document_id.as_bytes()]));
            DocumentExamples {
                pairs: d
                    .pairs
                    .iter()
                    .copied()
                    .filter(|p| p.2 || rng.random::<f64>() < keep)
                    .collect(),
                ..d.clone()
            }
        })
        .collect();
    ExampleSet { docs }
}

/// Pages the model is selected on: detections paired with ground truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationSet {
    pub pages: Vec<(DetectionSet, NotationGraph)>,
}

impl ValidationSet {
    /// One-hot detections synthesized from the ground truth itself.
    pub fn perfect(graphs: &[NotationGraph], num_classes: usize) -> Self {
        Self {
            pages: graphs
                .iter()
                .map(|g| (DetectionSet::from_ground_truth(g, num_classes), g.clone()))
                .collect(),
        }
    }

    pub fn from_detections(detections: &[DetectionSet], graphs: &[NotationGraph]) -> Result<Self> {
        let by_id: BTreeMap<&str, &NotationGraph> = graphs.iter().map(|g| (g.document_id.as_str(), g)).collect();
        let pages = detections
            .iter()
            .map(|d| {
                by_id
                    .get(d.document_id.as_str())
                    .map(|g| (d.clone(), (*g).clone()))
                    .ok_or_else(|| OmrError::DocumentMismatch(format!("no ground truth for '{}'", d.document_id)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { pages })
    }
}

/// Model scores for every candidate pair of detected nodes.
pub fn score_detections(
    params: &ModelParams,
    det: &DetectionSet,
    filter: &PairFilterConfig,
) -> Result<Vec<ScoredPair>> {
    let nodes = detection_node_features(det, params.mode);
    let boxes: Vec<_> = det.nodes.iter().map(|n| n.bbox).collect();
    candidate_pairs(&boxes, filter, det.page_width)
        .into_iter()
        .map(|(a, b)| {
            let score = predict(params, &assemble_features(&nodes, a, b, false))?;
            Ok(ScoredPair { a, b, score })
        })
        .collect()
}

/// Match+AUC of `params` on `val`, pooled over its pages.
pub fn evaluate_model(
    params: &ModelParams,
    val: &ValidationSet,
    filter: &PairFilterConfig,
    t_match: f64,
) -> Result<MatchAucReport> {
    let scored: Vec<Vec<ScoredPair>> = val
        .pages
        .iter()
        .map(|(d, _)| score_detections(params, d, filter))
        .collect::<Result<_>>()?;
    let docs: Vec<DocumentEval<'_>> = val
        .pages
        .iter()
        .zip(&scored)
        .map(|((d, g), s)| DocumentEval {
            detections: d,
            scored: s,
            ground_truth: g,
        })
        .collect();
    match_auc(&docs, params.num_classes, t_match)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    pub val_match_auc: f64,
}

pub fn history_csv(history: &[HistoryRow]) -> String {
    let mut out = String::from("epoch,loss,val_match_auc\n");
    for h in history {
        let _ = writeln!(out, "{},{},{}", h.epoch, h.loss, h.val_match_auc);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Epoch of the selected checkpoint; 0 means the initial parameters.
    pub best_epoch: usize,
    pub best_val_match_auc: Option<f64>,
    pub history: Vec<HistoryRow>,
}

impl TrainOutcome {
    pub fn checkpoint_meta(&self, cfg: &TrainConfig, vocab_hash: &str) -> CheckpointMeta {
        CheckpointMeta {
            mode: self.params.mode,
            num_classes: self.params.num_classes,
            soft_bias: self.params.class_bias.is_some(),
            vocab_hash: vocab_hash.to_string(),
            seed: cfg.seed,
            epoch: self.best_epoch,
        }
    }

    pub fn checkpoint_bytes(&self, cfg: &TrainConfig, vocab_hash: &str) -> Vec<u8> {
        save_checkpoint(&self.params, &self.checkpoint_meta(cfg, vocab_hash))
    }
}

/// Mini-batch Adam over `train`, evaluating Match+AUC on `val` every
/// `eval_every` epochs and after the last one, keeping the best evaluated
/// parameters (earliest on ties).
pub fn train_model(
    cfg: &TrainConfig,
    train: &ExampleSet,
    val: &ValidationSet,
    num_classes: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let subsampled;
    let train = match cfg.negative_keep {
        Some(k) if k < 1.0 => {
            subsampled = subsample_negatives(train, k, cfg.seed);
            &subsampled
        }
        _ => train,
    };
    if train.num_examples() == 0 {
        return Err(OmrError::EmptyCandidates("training set has no examples".into()));
    }
    let mut params = init_params(
        derive_seed(cfg.seed, &[b"init"]),
        num_classes,
        cfg.mode.class_mode(),
        cfg.soft_bias,
    );
    let mut adam = AdamState::new(&params);
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };

    let index: Vec<(usize, usize)> = train
        .docs
        .iter()
        .enumerate()
        .flat_map(|(d, doc)| (0..doc.pairs.len()).map(move |p| (d, p)))
        .collect();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut history = Vec::new();
    let mut batch: Vec<PairCandidate<'_>> = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        let mut order = index.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            &[b"epoch", &(epoch as u64).to_le_bytes()],
        )));
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&(d, p)| {
                let doc = &train.docs[d];
                let (a, b, label) = doc.pairs[p];
                assemble_features(&doc.nodes, a, b, label)
            }));
            let (grads, loss) = backward(&params, &batch)?;
            if !loss.is_finite() {
                return Err(OmrError::NonFiniteLoss(format!(
                    "epoch {epoch}, batch {step}: loss {loss}"
                )));
            }
            adam_step(&mut params, &grads, &mut adam, &adam_cfg)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let loss = loss_sum / order.len() as f64;
        log::debug!("epoch {epoch}: loss {loss:.6}");

        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let auc = evaluate_model(&params, val, &cfg.filter, cfg.t_match)?.match_auc;
            log::info!("epoch {epoch}: loss {loss:.6}, validation Match+AUC {auc:.6}");
            history.push(HistoryRow {
                epoch,
                loss,
                val_match_auc: auc,
            });
            if best.as_ref().is_none_or(|(b, _, _)| auc > *b) {
                best = Some((auc, epoch, params.clone()));
            }
        }
    }

    Ok(match best {
        Some((auc, epoch, p)) => TrainOutcome {
            params: p,
            best_epoch: epoch,
            best_val_match_auc: Some(auc),
            history,
        },
        None => TrainOutcome {
            params,
            best_epoch: 0,
            best_val_match_auc: None,
            history,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp_model::init_params;
    use crate::mung_io::{BBox, GroundTruthNode};
    use crate::synth::worked_example;

    fn filter(d: f64) -> PairFilterConfig {
        PairFilterConfig::new(d).unwrap()
    }

    fn two_node_graph(edge: bool) -> NotationGraph {
        let node = |id: u32, l: f64, c: usize| GroundTruthNode {
            id,
            bbox: BBox::new(100.0, l, 120.0, l + 20.0).unwrap(),
            class_id: c,
        };
        NotationGraph {
            document_id: "two".into(),
            page_width: 1000.0,
            page_height: 500.0,
            nodes: vec![node(1, 100.0, 0), node(2, 150.0, 1), node(3, 900.0, 1)],
            edges: if edge {
                [(1, 2)].into_iter().collect()
            } else {
                BTreeSet::new()
            },
        }
    }

    #[test]
    fn baseline_labels() {
        let set = build_baseline_examples(&[two_node_graph(true)], ClassMode::Hard, 3, &filter(0.1)).unwrap();
        assert_eq!(set.docs[0].pairs, vec![(0, 1, true)]);
        let set = build_baseline_examples(&[two_node_graph(false)], ClassMode::Hard, 3, &filter(0.1)).unwrap();
        assert_eq!(set.num_positive(), 0);
        assert_eq!(set.num_examples(), 1);
    }

    #[test]
    fn empty_candidates_is_an_error() {
        let err = build_baseline_examples(&[two_node_graph(true)], ClassMode::Hard, 3, &filter(0.01)).unwrap_err();
        assert!(err.to_string().contains("recalibrate"));
    }

    #[test]
    fn worked_example_positives() {
        let f = worked_example();
        let set = build_pipelined_examples(
            std::slice::from_ref(&f.detections),
            std::slice::from_ref(&f.ground_truth),
            ClassMode::Soft,
            3,
            &filter(1.0),
            DEFAULT_T_MATCH,
        )
        .unwrap();
        let pos: Vec<_> = set.docs[0].pairs.iter().filter(|p| p.2).map(|p| (p.0, p.1)).collect();
        assert_eq!(pos, vec![(0, 1), (0, 3)]);
        assert_eq!(set.num_examples(), 6);
    }

    #[test]
    fn pipelined_needs_matching_document() {
        let f = worked_example();
        let mut other = f.ground_truth.clone();
        other.document_id = "elsewhere".into();
        let err = build_pipelined_examples(&[f.detections], &[other], ClassMode::Hard, 3, &filter(1.0), 0.05);
        assert!(matches!(err, Err(OmrError::DocumentMismatch(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::new(TrainMode::Baseline, filter(0.1), 0);
        assert!(cfg.validate().is_ok());
        cfg.eval_every = 0;
        assert!(cfg.validate().is_err());
        cfg.eval_every = 20;
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mode_names() {
        for m in [TrainMode::Baseline, TrainMode::Pipelined, TrainMode::PipelinedSoft] {
            assert_eq!(m.as_str().parse::<TrainMode>().unwrap(), m);
        }
        assert_eq!("pipelined-soft".parse::<TrainMode>().unwrap(), TrainMode::PipelinedSoft);
        assert!("soft".parse::<TrainMode>().is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let g = two_node_graph(true);
        let set = build_baseline_examples(std::slice::from_ref(&g), ClassMode::Hard, 3, &filter(0.1)).unwrap();
        let mut cfg = TrainConfig::new(TrainMode::Baseline, filter(0.1), 5);
        cfg.epochs = 0;
        let out = train_model(&cfg, &set, &ValidationSet::perfect(&[g], 3), 3).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.best_epoch, 0);
        assert_eq!(
            out.params,
            init_params(derive_seed(5, &[b"init"]), 3, ClassMode::Hard, false)
        );
    }

    #[test]
    fn short_run_is_deterministic_and_selects_best() {
        let g = two_node_graph(true);
        let set = build_baseline_examples(std::slice::from_ref(&g), ClassMode::Hard, 3, &filter(0.1)).unwrap();
        let val = ValidationSet::perfect(&[g], 3);
        let mut cfg = TrainConfig::new(TrainMode::Baseline, filter(0.1), 1);
        cfg.epochs = 6;
        cfg.eval_every = 2;
        cfg.lr = 1e-2;
        let a = train_model(&cfg, &set, &val, 3).unwrap();
        let b = train_model(&cfg, &set, &val, 3).unwrap();
        assert_eq!(a.checkpoint_bytes(&cfg, "h"), b.checkpoint_bytes(&cfg, "h"));
        assert_eq!(a.history.len(), 3);
        let max = a.history.iter().map(|h| h.val_match_auc).fold(f64::MIN, f64::max);
        assert_eq!(a.best_val_match_auc, Some(max));
        let first = a.history.iter().find(|h| h.val_match_auc == max).unwrap();
        assert_eq!(a.best_epoch, first.epoch);
        assert!(history_csv(&a.history).starts_with("epoch,loss,val_match_auc\n2,"));
    }

    #[test]
    fn subsampling_keeps_positives() {
        let f = worked_example();
        let set = build_pipelined_examples(
            &[f.detections],
            &[f.ground_truth],
            ClassMode::Hard,
            3,
            &filter(1.0),
            DEFAULT_T_MATCH,
        )
        .unwrap();
        let thin = subsample_negatives(&set, 0.01, 3);
        assert_eq!(thin.num_positive(), 2);
        assert!(thin.num_examples() <= set.num_examples());
    }
}
