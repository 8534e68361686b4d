//! Seeded stand-in for a symbol detector.
//!
//! Perturbs ground truth the way a detector errs: boxes are jittered, some
//! symbols are missed, class confidence is spread over wrong classes, and
//! spurious boxes appear.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{OmrError, Result};
use crate::mung_io::{BBox, DetectedNode, DetectionSet, NotationGraph};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Standard deviation of each coordinate shift, as a fraction of the box side.
    pub box_jitter_sigma: f64,
    /// Softmax temperature over the one-hot class logits; 0 keeps one-hot.
    pub class_confusion_temperature: f64,
    pub drop_prob: f64,
    /// Expected spurious boxes per ground-truth box.
    pub spurious_rate: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            box_jitter_sigma: 0.05,
            class_confusion_temperature: 0.5,
            drop_prob: 0.05,
            spurious_rate: 0.05,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn zero(seed: u64) -> Self {
        Self {
            box_jitter_sigma: 0.0,
            class_confusion_temperature: 0.0,
            drop_prob: 0.0,
            spurious_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.box_jitter_sigma) || !ok(self.class_confusion_temperature) || !ok(self.spurious_rate) {
            return Err(OmrError::InvalidArgument(format!(
                "noise parameters must be finite and non-negative: {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.drop_prob) && self.drop_prob != 1.0 {
            return Err(OmrError::InvalidArgument(format!(
                "drop probability {} outside [0, 1]",
                self.drop_prob
            )));
        }
        Ok(())
    }
}

/// Simulated detector output for one page. Surviving nodes keep their
/// ground-truth order; spurious nodes follow. The random stream depends on
/// the seed and the document id, so pages of one corpus get independent noise.
pub fn simulate_detections(gt: &NotationGraph, num_classes: usize, cfg: &NoiseConfig) -> Result<DetectionSet> {
    cfg.validate()?;
    if let Some(n) = gt.nodes.iter().find(|n| n.class_id >= num_classes) {
        return Err(OmrError::VocabMismatch {
            expected: num_classes,
            found: n.class_id + 1,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[b"simulate", gt.document_id.as_bytes()]));
    let (w, h) = (gt.page_width, gt.page_height);
    let mut nodes = Vec::with_capacity(gt.nodes.len());

    for n in &gt.nodes {
        if rng.random::<f64>() < cfg.drop_prob {
            continue;
        }
        let b = &n.bbox;
        let mut shift = |side: f64| -> f64 {
            if cfg.box_jitter_sigma == 0.0 {
                0.0
            } else {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * cfg.box_jitter_sigma * side
            }
        };
        let (bh, bw) = (b.height(), b.width());
        let (t, bo) = ordered(b.top + shift(bh), b.bottom + shift(bh), h);
        let (l, r) = ordered(b.left + shift(bw), b.right + shift(bw), w);
        let bbox = BBox::new(t, l, bo, r)?;
        let probs = confused_probs(n.class_id, num_classes, cfg.class_confusion_temperature, &mut rng);
        nodes.push(DetectedNode { bbox, probs });
    }

    if cfg.spurious_rate > 0.0 && !gt.nodes.is_empty() {
        let lambda = cfg.spurious_rate * gt.nodes.len() as f64;
        let count: f64 = Poisson::new(lambda)
            .map_err(|e| OmrError::InvalidArgument(e.to_string()))?
            .sample(&mut rng);
        for _ in 0..count as usize {
            let donor = &gt.nodes[rng.random_range(0..gt.nodes.len())].bbox;
            let (bh, bw) = (donor.height().min(h), donor.width().min(w));
            let top = rng.random::<f64>() * (h - bh);
            let left = rng.random::<f64>() * (w - bw);
            let bbox = BBox::new(top, left, (top + bh).min(h), (left + bw).min(w))?;
            let mut probs: Vec<f64> = (0..num_classes).map(|_| Exp1.sample(&mut rng)).collect();
            let sum: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= sum);
            nodes.push(DetectedNode { bbox, probs });
        }
    }

    Ok(DetectionSet {
        document_id: gt.document_id.clone(),
        page_width: w,
        page_height: h,
        nodes,
    })
}

/// Sorts a jittered interval, clamps it to the page and keeps it non-empty.
fn ordered(a: f64, b: f64, limit: f64) -> (f64, f64) {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let (lo, hi) = (lo.clamp(0.0, limit), hi.clamp(0.0, limit));
    if hi > lo {
        (lo, hi)
    } else {
        let hi = (lo + 1.0).min(limit);
        ((hi - 1.0).max(0.0), hi)
    }
}

fn confused_probs(class_id: usize, num_classes: usize, temperature: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut probs = vec![0.0; num_classes];
    if temperature == 0.0 {
        probs[class_id] = 1.0;
        return probs;
    }
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let logits: Vec<f64> = (0..num_classes)
        .map(|k| f64::from(u8::from(k == class_id)) / temperature + noise.sample(rng))
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (p, z) in probs.iter_mut().zip(&logits) {
        *p = (z - max).exp();
    }
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    probs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mung_io::GroundTruthNode;
    use std::collections::BTreeSet;

    fn grid_page(n: usize) -> NotationGraph {
        let nodes = (0..n)
            .map(|i| {
                let (row, col) = ((i / 40) as f64, (i % 40) as f64);
                GroundTruthNode {
                    id: i as u32,
                    bbox: BBox::new(
                        100.0 + row * 80.0,
                        100.0 + col * 80.0,
                        140.0 + row * 80.0,
                        160.0 + col * 80.0,
                    )
                    .unwrap(),
                    class_id: i % 5,
                }
            })
            .collect();
        NotationGraph {
            document_id: "grid".into(),
            page_width: 3500.0,
            page_height: 2500.0,
            nodes,
            edges: BTreeSet::new(),
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let g = grid_page(50);
        let d = simulate_detections(&g, 5, &NoiseConfig::zero(3)).unwrap();
        assert_eq!(d, DetectionSet::from_ground_truth(&g, 5));
    }

    #[test]
    fn drop_everything() {
        let g = grid_page(50);
        let cfg = NoiseConfig {
            drop_prob: 1.0,
            ..NoiseConfig::zero(1)
        };
        assert!(simulate_detections(&g, 5, &cfg).unwrap().nodes.is_empty());
    }

    #[test]
    fn jitter_matches_half_normal_mean() {
        let g = grid_page(1000);
        let cfg = NoiseConfig {
            box_jitter_sigma: 0.05,
            ..NoiseConfig::zero(11)
        };
        let d = simulate_detections(&g, 5, &cfg).unwrap();
        let mut total = 0.0;
        for (t, s) in g.nodes.iter().zip(&d.nodes) {
            let (h, w) = (t.bbox.height(), t.bbox.width());
            total += (s.bbox.top - t.bbox.top).abs() / h
                + (s.bbox.bottom - t.bbox.bottom).abs() / h
                + (s.bbox.left - t.bbox.left).abs() / w
                + (s.bbox.right - t.bbox.right).abs() / w;
        }
        let mean = total / (4.0 * 1000.0);
        let expected = 0.05 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean / expected - 1.0).abs() < 0.1, "mean {mean}, expected {expected}");
    }

    #[test]
    fn default_noise_yields_valid_detections() {
        let g = grid_page(300);
        let cfg = NoiseConfig {
            seed: 5,
            ..NoiseConfig::default()
        };
        let d = simulate_detections(&g, 5, &cfg).unwrap();
        for n in &d.nodes {
            n.bbox.validate().unwrap();
            n.validate_probs(5).unwrap();
            assert!(n.bbox.bottom <= 2500.0 && n.bbox.right <= 3500.0);
        }
        assert_eq!(d, simulate_detections(&g, 5, &cfg).unwrap());
        let other = NoiseConfig { seed: 6, ..cfg };
        assert_ne!(d, simulate_detections(&g, 5, &other).unwrap());
    }

    #[test]
    fn spurious_count_tracks_rate() {
        let g = grid_page(1000);
        let cfg = NoiseConfig {
            spurious_rate: 0.2,
            ..NoiseConfig::zero(2)
        };
        let extra = simulate_detections(&g, 5, &cfg).unwrap().nodes.len() - 1000;
        assert!((150..250).contains(&extra), "{extra} spurious boxes");
    }

    #[test]
    fn rejects_bad_config() {
        let g = grid_page(5);
        let cfg = NoiseConfig {
            drop_prob: 1.5,
            ..NoiseConfig::default()
        };
        assert!(simulate_detections(&g, 5, &cfg).is_err());
        assert!(simulate_detections(&g, 3, &NoiseConfig::default()).is_err());
    }
}
