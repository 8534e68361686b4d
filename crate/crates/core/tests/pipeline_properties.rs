use std::collections::BTreeSet;

use omr_assembly::detector_sim::{simulate_detections, NoiseConfig};
use omr_assembly::evaluation::{match_auc, pr_curve_and_auc, DocumentEval, ScoredPair};
use omr_assembly::features::{
    calibrate_pair_filter, candidate_pairs, ClassMode, PairFilterConfig, DEFAULT_RETENTION_TARGET,
};
use omr_assembly::matching::{match_document, DEFAULT_T_MATCH};
use omr_assembly::mung_io::{BBox, DetectedNode, DetectionSet, NotationGraph};
use omr_assembly::synth::{synth_corpus, synth_vocab, SynthConfig};
use omr_assembly::training::{build_baseline_examples, build_pipelined_examples};

fn corpus(pages: usize) -> Vec<NotationGraph> {
    synth_corpus(&SynthConfig {
        pages,
        seed: 21,
        ..SynthConfig::default()
    })
}

fn filter() -> PairFilterConfig {
    PairFilterConfig::new(0.09).unwrap()
}

/// Deterministic pseudo-scores in (0, 1) with ties.
fn scores_for(
    det: &DetectionSet,
    cfg: &PairFilterConfig,
    truth: &BTreeSet<(usize, usize)>,
    salt: usize,
) -> Vec<ScoredPair> {
    let boxes: Vec<BBox> = det.nodes.iter().map(|n| n.bbox).collect();
    candidate_pairs(&boxes, cfg, det.page_width)
        .into_iter()
        .map(|(a, b)| {
            let base = ((a * 31 + b * 17 + salt) % 10) as f64 / 20.0 + 0.05;
            let score = if truth.contains(&(a, b)) { base + 0.4 } else { base };
            ScoredPair { a, b, score }
        })
        .collect()
}

#[test]
fn perfect_detections_reduce_pipelined_to_baseline() {
    let graphs = corpus(3);
    let c = synth_vocab().len();
    let dets: Vec<DetectionSet> = graphs.iter().map(|g| DetectionSet::from_ground_truth(g, c)).collect();
    for mode in [ClassMode::Hard, ClassMode::Soft] {
        let base = build_baseline_examples(&graphs, mode, c, &filter()).unwrap();
        let piped = build_pipelined_examples(&dets, &graphs, mode, c, &filter(), DEFAULT_T_MATCH).unwrap();
        assert_eq!(base.label_set(), piped.label_set());
        assert_eq!(base, piped);
    }
}

#[test]
fn positives_never_exceed_edges() {
    let graphs = corpus(2);
    let c = synth_vocab().len();
    for d in [0.02, 0.05, 0.2] {
        let set = build_baseline_examples(&graphs, ClassMode::Hard, c, &PairFilterConfig::new(d).unwrap()).unwrap();
        let edges: usize = graphs.iter().map(|g| g.edges.len()).sum();
        assert!(set.num_positive() <= edges);
    }
}

#[test]
fn calibrated_filter_keeps_target_fraction() {
    let graphs = corpus(6);
    let cal = calibrate_pair_filter(&graphs, DEFAULT_RETENTION_TARGET).unwrap();
    assert!(!cal.target_missed);
    assert!(cal.retention >= DEFAULT_RETENTION_TARGET);
    let c = synth_vocab().len();
    let set = build_baseline_examples(&graphs, ClassMode::Hard, c, &cal.config).unwrap();
    let edges: usize = graphs.iter().map(|g| g.edges.len()).sum();
    assert!(set.num_positive() as f64 >= DEFAULT_RETENTION_TARGET * edges as f64);
}

#[test]
fn perfect_detection_match_auc_equals_plain_assembly_auc() {
    let graphs = corpus(3);
    let c = synth_vocab().len();
    let dets: Vec<DetectionSet> = graphs.iter().map(|g| DetectionSet::from_ground_truth(g, c)).collect();
    for (g, d) in graphs.iter().zip(&dets) {
        let truth = g.index_edges();
        let scored = scores_for(d, &filter(), &truth, 3);
        let doc = DocumentEval {
            detections: d,
            scored: &scored,
            ground_truth: g,
        };
        let report = match_auc(&[doc], c, DEFAULT_T_MATCH).unwrap();
        assert_eq!(report.match_auc, pr_curve_and_auc(&scored, &truth).auc);
    }
}

#[test]
fn zero_noise_with_perfect_scores_gives_one() {
    let graphs = corpus(2);
    let c = synth_vocab().len();
    let dets: Vec<DetectionSet> = graphs
        .iter()
        .map(|g| simulate_detections(g, c, &NoiseConfig::zero(4)).unwrap())
        .collect();
    let scored: Vec<Vec<ScoredPair>> = graphs
        .iter()
        .map(|g| {
            g.index_edges()
                .into_iter()
                .map(|(a, b)| ScoredPair { a, b, score: 1.0 })
                .collect()
        })
        .collect();
    let docs: Vec<DocumentEval<'_>> = graphs
        .iter()
        .zip(&dets)
        .zip(&scored)
        .map(|((g, d), s)| DocumentEval {
            detections: d,
            scored: s,
            ground_truth: g,
        })
        .collect();
    assert_eq!(match_auc(&docs, c, DEFAULT_T_MATCH).unwrap().match_auc, 1.0);
}

#[test]
fn spurious_boxes_never_raise_match_auc() {
    let graphs = corpus(2);
    let c = synth_vocab().len();
    for (k, g) in graphs.iter().enumerate() {
        let clean = DetectionSet::from_ground_truth(g, c);
        let truth = g.index_edges();
        let scored = scores_for(&clean, &filter(), &truth, k);
        let before = match_auc(
            &[DocumentEval {
                detections: &clean,
                scored: &scored,
                ground_truth: g,
            }],
            c,
            DEFAULT_T_MATCH,
        )
        .unwrap()
        .match_auc;

        let mut noisy = clean.clone();
        let n = clean.nodes.len();
        let mut extra = scored.clone();
        for s in 0..20 {
            let left = 100.0 + 150.0 * s as f64;
            noisy.nodes.push(DetectedNode {
                bbox: BBox::new(1900.0, left, 1930.0, left + 30.0).unwrap(),
                probs: vec![1.0 / c as f64; c],
            });
            extra.push(ScoredPair {
                a: (s * 7) % n,
                b: n + s,
                score: 0.05 + 0.045 * (s % 20) as f64,
            });
        }
        let after = match_auc(
            &[DocumentEval {
                detections: &noisy,
                scored: &extra,
                ground_truth: g,
            }],
            c,
            DEFAULT_T_MATCH,
        )
        .unwrap()
        .match_auc;
        assert!(after <= before, "{after} > {before}");
    }
}

#[test]
fn dropping_more_detections_matches_fewer_nodes() {
    let graphs = corpus(1);
    let g = &graphs[0];
    let c = synth_vocab().len();
    let mean_matched = |drop: f64| {
        (0..10u64)
            .map(|seed| {
                let cfg = NoiseConfig {
                    drop_prob: drop,
                    seed,
                    ..NoiseConfig::default()
                };
                let d = simulate_detections(g, c, &cfg).unwrap();
                match_document(&d, g, c, DEFAULT_T_MATCH)
                    .unwrap()
                    .matching
                    .matched_count() as f64
            })
            .sum::<f64>()
            / 10.0
    };
    let (m0, m1, m3) = (mean_matched(0.0), mean_matched(0.1), mean_matched(0.3));
    assert!(m0 > m1 && m1 > m3, "{m0} {m1} {m3}");
}
