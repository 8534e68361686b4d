use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BBox, ClassVocab, DetectedNode, DetectionSet};
use crate::error::{OmrError, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    document_id: String,
    width: f64,
    height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tile: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct SoftRecord {
    bbox: [f64; 4],
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct HardRecord {
    bbox: [f64; 4],
    class_id: usize,
    confidence: f64,
}

/// Reads the detection JSON Lines format: a header object per document
/// followed by one object per detected node.
pub fn read_detections(jsonl_text: &str, vocab: &ClassVocab) -> Result<Vec<DetectionSet>> {
    Ok(read_tiled_detections(jsonl_text, vocab)?
        .into_iter()
        .map(|(_, set)| set)
        .collect())
}

/// Like [`read_detections`], also returning the optional `tile` index carried
/// by each header (used when merging per-tile detector output).
pub fn read_tiled_detections(jsonl_text: &str, vocab: &ClassVocab) -> Result<Vec<(Option<usize>, DetectionSet)>> {
    let num_classes = vocab.len();
    let mut sets: Vec<(Option<usize>, DetectionSet)> = Vec::new();
    for (idx, raw) in jsonl_text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let err = |message: String| OmrError::Detections { line, message };
        let value: Value = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| err("expected a JSON object".into()))?;

        if obj.contains_key("document_id") {
            let h: Header = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
            if !(h.width > 0.0 && h.height > 0.0 && h.width.is_finite() && h.height.is_finite()) {
                return Err(err(format!("page size {}x{} must be positive", h.width, h.height)));
            }
            sets.push((
                h.tile,
                DetectionSet {
                    document_id: h.document_id,
                    page_width: h.width,
                    page_height: h.height,
                    nodes: Vec::new(),
                },
            ));
            continue;
        }

        let (_, current) = sets
            .last_mut()
            .ok_or_else(|| err("detection record before any document header".into()))?;
        let node = if obj.contains_key("probs") {
            let r: SoftRecord = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
            DetectedNode {
                bbox: to_bbox(r.bbox).map_err(|e| err(e.to_string()))?,
                probs: r.probs,
            }
        } else if obj.contains_key("class_id") {
            let r: HardRecord = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
            if r.class_id >= num_classes {
                return Err(err(format!(
                    "class_id {} outside vocabulary of {num_classes}",
                    r.class_id
                )));
            }
            if !(0.0..=1.0).contains(&r.confidence) {
                return Err(err(format!("confidence {} outside [0, 1]", r.confidence)));
            }
            DetectedNode {
                bbox: to_bbox(r.bbox).map_err(|e| err(e.to_string()))?,
                probs: expand_hard(r.class_id, r.confidence, num_classes),
            }
        } else {
            return Err(err("record has neither 'probs' nor 'class_id'".into()));
        };
        node.validate_probs(num_classes).map_err(err)?;
        current.nodes.push(node);
    }
    Ok(sets)
}

/// `q` on the detected class, the remainder spread evenly over the others.
fn expand_hard(class_id: usize, q: f64, num_classes: usize) -> Vec<f64> {
    if num_classes == 1 {
        return vec![q];
    }
    let rest = (1.0 - q) / (num_classes - 1) as f64;
    let mut probs = vec![rest; num_classes];
    probs[class_id] = q;
    probs
}

fn to_bbox(b: [f64; 4]) -> Result<BBox> {
    BBox::new(b[0], b[1], b[2], b[3])
}

/// Serializes detection sets; floats use shortest round-trip formatting, so
/// reading the output back reproduces every value exactly.
pub fn write_detections(sets: &[DetectionSet]) -> String {
    write_with_tiles(sets.iter().map(|s| (None, s)))
}

pub(crate) fn write_with_tiles<'a, I>(sets: I) -> String
where
    I: IntoIterator<Item = (Option<usize>, &'a DetectionSet)>,
{
    let mut out = String::new();
    for (tile, set) in sets {
        let header = Header {
            document_id: set.document_id.clone(),
            width: set.page_width,
            height: set.page_height,
            tile,
        };
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        for node in &set.nodes {
            let rec = SoftRecord {
                bbox: node.bbox.to_array(),
                probs: node.probs.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("node serializes"));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(c: usize) -> ClassVocab {
        ClassVocab::from_names((0..c).map(|i| format!("c{i}"))).unwrap()
    }

    const HEADER: &str = r#"{"document_id":"p1","width":100,"height":50}"#;

    #[test]
    fn hard_one_hot() {
        let text = format!("{HEADER}\n{}\n", r#"{"bbox":[1,2,3,4],"class_id":2,"confidence":1.0}"#);
        let sets = read_detections(&text, &vocab(4)).unwrap();
        assert_eq!(sets[0].nodes[0].probs, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn hard_expansion_spreads_remainder() {
        let text = format!("{HEADER}\n{}\n", r#"{"bbox":[1,2,3,4],"class_id":0,"confidence":0.7}"#);
        let probs = &read_detections(&text, &vocab(3)).unwrap()[0].nodes[0].probs;
        assert_eq!(probs[0], 0.7);
        assert!((probs[1] - 0.15).abs() < 1e-15 && (probs[2] - 0.15).abs() < 1e-15);
    }

    #[test]
    fn empty_input() {
        assert!(read_detections("", &vocab(3)).unwrap().is_empty());
        assert_eq!(write_detections(&[]), "");
    }

    #[test]
    fn bad_sum_reports_line() {
        let text = format!("{HEADER}\n\n{}\n", r#"{"bbox":[1,2,3,4],"probs":[0.5,0.4]}"#);
        match read_detections(&text, &vocab(2)).unwrap_err() {
            OmrError::Detections { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn bad_bbox_rejected() {
        let text = format!("{HEADER}\n{}\n", r#"{"bbox":[5,2,3,4],"probs":[1.0]}"#);
        assert!(read_detections(&text, &vocab(1)).is_err());
    }

    #[test]
    fn one_node_writes_two_lines() {
        let set = DetectionSet {
            document_id: "x".into(),
            page_width: 10.0,
            page_height: 10.0,
            nodes: vec![DetectedNode {
                bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
                probs: vec![1.0],
            }],
        };
        assert_eq!(write_detections(&[set]).lines().count(), 2);
    }

    fn arb_set(c: usize) -> impl Strategy<Value = DetectionSet> {
        let node = (
            0.0..500.0f64,
            0.0..500.0f64,
            0.1..100.0f64,
            0.1..100.0f64,
            prop::collection::vec(0.001..1.0f64, c),
        )
            .prop_map(|(t, l, h, w, raw)| {
                let s: f64 = raw.iter().sum();
                DetectedNode {
                    bbox: BBox::new(t, l, t + h, l + w).unwrap(),
                    probs: raw.iter().map(|x| x / s).collect(),
                }
            });
        (
            "[a-z]{1,8}",
            1.0..5000.0f64,
            1.0..5000.0f64,
            prop::collection::vec(node, 0..6),
        )
            .prop_map(|(document_id, page_width, page_height, nodes)| DetectionSet {
                document_id,
                page_width,
                page_height,
                nodes,
            })
    }

    proptest! {
        #[test]
        fn write_read_round_trip(sets in prop::collection::vec(arb_set(5), 0..4)) {
            let text = write_detections(&sets);
            prop_assert_eq!(read_detections(&text, &vocab(5)).unwrap(), sets);
        }
    }
}
