//! Box arithmetic, coordinate normalization, inference tiling and cross-tile merging.

use serde::{Deserialize, Serialize};

use crate::error::{OmrError, Result};
use crate::mung_io::{BBox, DetectionSet};

pub const DEFAULT_CROP_SIZE: f64 = 1216.0;
pub const DEFAULT_MARGIN: f64 = 128.0;
pub const DEFAULT_MERGE_IOU: f64 = 0.5;

/// Intersection over union. Zero when the interiors do not overlap.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ih = a.bottom.min(b.bottom) - a.top.max(b.top);
    let iw = a.right.min(b.right) - a.left.max(b.left);
    if ih <= 0.0 || iw <= 0.0 {
        return 0.0;
    }
    let inter = ih * iw;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Maps page coordinates with a single scale `2 / W` centered on the page, so
/// x lands in `[-1, 1]` and the aspect ratio is kept. Output is
/// `[top, left, bottom, right]`.
pub fn normalize_bbox(b: &BBox, page_width: f64, page_height: f64) -> [f64; 4] {
    let x = |v: f64| (2.0 * v - page_width) / page_width;
    let y = |v: f64| (2.0 * v - page_height) / page_width;
    [y(b.top), x(b.left), y(b.bottom), x(b.right)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub core: BBox,
    pub extended: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilePlan {
    pub page_width: f64,
    pub page_height: f64,
    pub crop_size: f64,
    pub margin: f64,
    pub tiles: Vec<Tile>,
}

/// Lays core tiles on a `crop_size` grid, shifting the last row and column
/// back so they end at the page edge, and widens each by `margin` (clipped
/// to the page) for detector context. Tiles are in row-major order.
pub fn tile_plan(page_width: f64, page_height: f64, crop_size: f64, margin: f64) -> Result<TilePlan> {
    for (name, v) in [
        ("page width", page_width),
        ("page height", page_height),
        ("crop size", crop_size),
        ("margin", margin),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(OmrError::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }
    if margin >= crop_size / 2.0 {
        return Err(OmrError::InvalidArgument(format!(
            "margin {margin} must be below half the crop size {crop_size}"
        )));
    }
    let rows = axis_spans(page_height, crop_size);
    let cols = axis_spans(page_width, crop_size);
    let mut tiles = Vec::with_capacity(rows.len() * cols.len());
    for &(top, bottom) in &rows {
        for &(left, right) in &cols {
            let core = BBox {
                top,
                left,
                bottom,
                right,
            };
            let extended = BBox {
                top: (top - margin).max(0.0),
                left: (left - margin).max(0.0),
                bottom: (bottom + margin).min(page_height),
                right: (right + margin).min(page_width),
            };
            tiles.push(Tile { core, extended });
        }
    }
    Ok(TilePlan {
        page_width,
        page_height,
        crop_size,
        margin,
        tiles,
    })
}

fn axis_spans(length: f64, crop: f64) -> Vec<(f64, f64)> {
    if length <= crop {
        return vec![(0.0, length)];
    }
    let n = (length / crop).ceil() as usize;
    (0..n)
        .map(|k| {
            if k + 1 == n {
                (length - crop, length)
            } else {
                let start = k as f64 * crop;
                (start, start + crop)
            }
        })
        .collect()
}

/// Merges per-tile detector output into one page-level set.
///
/// `per_tile` pairs a tile index in `plan` with detections whose boxes are
/// relative to that tile's extended rectangle. A detection is attributed to
/// the tile whose core holds its center; the survivors then go through
/// class-agnostic greedy suppression ordered by max class probability
/// (ties by top, then left).
pub fn merge_detections(
    plan: &TilePlan,
    per_tile: &[(usize, DetectionSet)],
    iou_threshold: f64,
) -> Result<DetectionSet> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(OmrError::InvalidArgument(format!(
            "merge IoU threshold {iou_threshold} outside (0, 1)"
        )));
    }
    const SLACK: f64 = 1e-6;
    let mut candidates = Vec::new();
    for (tile_idx, set) in per_tile {
        let tile = plan.tiles.get(*tile_idx).ok_or_else(|| {
            OmrError::InvalidArgument(format!(
                "tile index {tile_idx} outside plan of {} tiles",
                plan.tiles.len()
            ))
        })?;
        let ext = tile.extended;
        for node in &set.nodes {
            let b = node.bbox;
            if b.top < -SLACK || b.left < -SLACK || b.bottom > ext.height() + SLACK || b.right > ext.width() + SLACK {
                return Err(OmrError::InvalidBBox(format!(
                    "box {b:?} lies outside tile {tile_idx} ({} x {})",
                    ext.width(),
                    ext.height()
                )));
            }
            let page_box = b.translate(ext.top, ext.left);
            let (cx, cy) = page_box.center();
            if tile.core.contains_point(cx, cy) {
                let mut moved = node.clone();
                moved.bbox = page_box;
                candidates.push(moved);
            }
        }
    }

    candidates.sort_by(|a, b| {
        b.max_prob()
            .total_cmp(&a.max_prob())
            .then(a.bbox.top.total_cmp(&b.bbox.top))
            .then(a.bbox.left.total_cmp(&b.bbox.left))
    });
    let mut kept: Vec<crate::mung_io::DetectedNode> = Vec::new();
    for c in candidates {
        if kept.iter().all(|k| iou(&k.bbox, &c.bbox) <= iou_threshold) {
            kept.push(c);
        }
    }

    Ok(DetectionSet {
        document_id: per_tile.first().map(|(_, s)| s.document_id.clone()).unwrap_or_default(),
        page_width: plan.page_width,
        page_height: plan.page_height,
        nodes: kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mung_io::DetectedNode;
    use proptest::prelude::*;

    fn bb(t: f64, l: f64, b: f64, r: f64) -> BBox {
        BBox::new(t, l, b, r).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = bb(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert_eq!(iou(&a, &bb(2.0, 0.0, 3.0, 2.0)), 0.0);
        assert!((iou(&a, &bb(1.0, 1.0, 3.0, 3.0)) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_examples() {
        let n = normalize_bbox(&bb(500.0, 1000.0, 600.0, 2000.0), 2000.0, 1000.0);
        assert_eq!(n[0], 0.0);
        assert_eq!(n[1], 0.0);
        let edge = normalize_bbox(&bb(0.0, 0.0, 10.0, 2000.0), 2000.0, 1000.0);
        assert_eq!((edge[1], edge[3]), (-1.0, 1.0));
    }

    #[test]
    fn exact_fit_is_one_tile() {
        let p = tile_plan(1216.0, 1216.0, 1216.0, 100.0).unwrap();
        assert_eq!(p.tiles.len(), 1);
        assert_eq!(p.tiles[0].core, bb(0.0, 0.0, 1216.0, 1216.0));
        assert_eq!(p.tiles[0].extended, p.tiles[0].core);
    }

    #[test]
    fn typical_page_grid() {
        let p = tile_plan(3500.0, 2000.0, 1216.0, 128.0).unwrap();
        assert_eq!(p.tiles.len(), 6);
        let last = p.tiles.last().unwrap();
        assert_eq!(last.core.right, 3500.0);
        assert_eq!(last.core.bottom, 2000.0);
    }

    #[test]
    fn small_page_single_tile() {
        let p = tile_plan(800.0, 600.0, 1216.0, 128.0).unwrap();
        assert_eq!(p.tiles.len(), 1);
        assert_eq!(p.tiles[0].core, bb(0.0, 0.0, 600.0, 800.0));
    }

    #[test]
    fn plan_rejects_bad_inputs() {
        assert!(tile_plan(0.0, 10.0, 5.0, 1.0).is_err());
        assert!(tile_plan(10.0, 10.0, 5.0, 3.0).is_err());
    }

    fn det(b: BBox, p: f64) -> DetectedNode {
        DetectedNode {
            bbox: b,
            probs: vec![p, 1.0 - p],
        }
    }

    fn set(nodes: Vec<DetectedNode>) -> DetectionSet {
        DetectionSet {
            document_id: "page".into(),
            page_width: 1.0,
            page_height: 1.0,
            nodes,
        }
    }

    #[test]
    fn single_tile_translates_only() {
        let plan = tile_plan(2000.0, 1000.0, 1216.0, 100.0).unwrap();
        // second tile: extended starts at x = 784 - 100
        let t1 = plan.tiles[1];
        let out = merge_detections(
            &plan,
            &[(
                1,
                set(vec![
                    det(bb(10.0, 500.0, 20.0, 520.0), 0.9),
                    det(bb(100.0, 600.0, 130.0, 640.0), 0.8),
                ]),
            )],
            0.5,
        )
        .unwrap();
        assert_eq!(out.nodes.len(), 2);
        assert_eq!(out.nodes[0].bbox.left, 500.0 + t1.extended.left);
        assert_eq!(out.nodes[0].bbox.top, 10.0 + t1.extended.top);
    }

    #[test]
    fn out_of_tile_box_is_error() {
        let plan = tile_plan(1000.0, 1000.0, 1216.0, 100.0).unwrap();
        let r = merge_detections(&plan, &[(0, set(vec![det(bb(10.0, 990.0, 20.0, 1010.0), 0.9)]))], 0.5);
        assert!(r.is_err());
    }

    #[test]
    fn threshold_out_of_range() {
        let plan = tile_plan(1000.0, 1000.0, 1216.0, 100.0).unwrap();
        assert!(merge_detections(&plan, &[], 1.0).is_err());
        assert!(merge_detections(&plan, &[], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(
            t1 in 0.0..100.0f64, l1 in 0.0..100.0f64, h1 in 0.5..50.0f64, w1 in 0.5..50.0f64,
            t2 in 0.0..100.0f64, l2 in 0.0..100.0f64, h2 in 0.5..50.0f64, w2 in 0.5..50.0f64,
        ) {
            let a = bb(t1, l1, t1 + h1, l1 + w1);
            let b = bb(t2, l2, t2 + h2, l2 + w2);
            let x = iou(&a, &b);
            prop_assert_eq!(x, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&x));
        }

        #[test]
        fn normalize_keeps_aspect(
            t in 0.0..2000.0f64, l in 0.0..3000.0f64, h in 1.0..300.0f64, w in 1.0..300.0f64,
            pw in 3300.0..4000.0f64, ph in 2300.0..3000.0f64,
        ) {
            let b = bb(t, l, t + h, l + w);
            let n = normalize_bbox(&b, pw, ph);
            let ratio = (n[3] - n[1]) / (n[2] - n[0]);
            prop_assert!((ratio - w / h).abs() <= 1e-9 * (w / h));
            prop_assert!(n[1] >= -1.0 && n[3] <= 1.0 + 1e-12);
        }

        #[test]
        fn tile_cores_cover_page(
            w in 100.0..5000.0f64, h in 100.0..5000.0f64, crop in 200.0..1500.0f64,
            px in 0.0..1.0f64, py in 0.0..1.0f64,
        ) {
            let plan = tile_plan(w, h, crop, crop / 4.0).unwrap();
            let (x, y) = (px * w, py * h);
            prop_assert!(plan.tiles.iter().any(|t| t.core.contains_point(x, y)));
            for t in &plan.tiles {
                prop_assert!(t.extended.top <= t.core.top && t.extended.bottom >= t.core.bottom);
                prop_assert!(t.extended.left <= t.core.left && t.extended.right >= t.core.right);
                prop_assert!(t.extended.top >= 0.0 && t.extended.right <= w && t.extended.bottom <= h);
            }
        }

        #[test]
        fn merged_boxes_respect_threshold(
            boxes in prop::collection::vec((0.0..900.0f64, 0.0..900.0f64, 5.0..80.0f64, 5.0..80.0f64, 0.01..0.99f64), 1..30),
            thr in 0.1..0.9f64,
        ) {
            let plan = tile_plan(1000.0, 1000.0, 1216.0, 100.0).unwrap();
            let nodes = boxes.iter().map(|&(t, l, h, w, p)| det(bb(t, l, (t + h).min(1000.0), (l + w).min(1000.0)), p)).collect();
            let out = merge_detections(&plan, &[(0, set(nodes))], thr).unwrap();
            for (i, a) in out.nodes.iter().enumerate() {
                for b in &out.nodes[i + 1..] {
                    prop_assert!(iou(&a.bbox, &b.bbox) <= thr);
                }
            }
        }
    }
}
