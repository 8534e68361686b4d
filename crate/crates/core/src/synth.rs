//! Synthetic handwritten-score annotations and small worked fixtures.
//!
//! Pages are laid out as rows of notation without staff lines: clefs, key
//! and time signatures, notes with stems, flags, beams, accidentals, dots,
//! ledger lines, articulations and slurs, rests, barlines and dynamics.
//! Edges follow the usual MuNG conventions, so the relationships are local
//! and mostly determined by class pair and relative position, with enough
//! crowding that geometry alone does not decide them.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evaluation::ScoredPair;
use crate::mung_io::{BBox, ClassVocab, DetectedNode, DetectionSet, GrammarRules, GroundTruthNode, NotationGraph};
use crate::seeding::derive_seed;

/// Vocabulary of the synthetic corpus. The last three classes never occur.
pub const SYNTH_CLASSES: &[&str] = &[
    "noteheadFull",
    "noteheadHalf",
    "noteheadWhole",
    "stem",
    "beam",
    "flag8thUp",
    "flag8thDown",
    "flag16thUp",
    "flag16thDown",
    "accidentalSharp",
    "accidentalFlat",
    "accidentalNatural",
    "augmentationDot",
    "ledgerLine",
    "slur",
    "articulationStaccato",
    "articulationAccent",
    "restWhole",
    "restHalf",
    "restQuarter",
    "rest8th",
    "rest16th",
    "gClef",
    "fClef",
    "keySignature",
    "timeSignature",
    "numeral2",
    "numeral3",
    "numeral4",
    "barline",
    "dynamicsText",
    "dynamicLetterP",
    "dynamicLetterF",
    "fermataAbove",
    "tupleBracket",
    "breathMark",
];

const NOTEHEADS: [&str; 3] = ["noteheadFull", "noteheadHalf", "noteheadWhole"];

pub fn synth_vocab() -> ClassVocab {
    ClassVocab::from_names(SYNTH_CLASSES.iter().copied()).expect("synthetic class names are unique")
}

/// Parent-to-child rules for every edge the generator emits.
pub fn synth_grammar() -> GrammarRules {
    let mut pairs = Vec::new();
    for head in NOTEHEADS {
        for child in [
            "accidentalSharp",
            "accidentalFlat",
            "accidentalNatural",
            "augmentationDot",
            "ledgerLine",
            "slur",
            "articulationStaccato",
            "articulationAccent",
        ] {
            pairs.push((head, child));
        }
    }
    for head in ["noteheadFull", "noteheadHalf"] {
        pairs.push((head, "stem"));
    }
    for child in ["beam", "flag8thUp", "flag8thDown", "flag16thUp", "flag16thDown"] {
        pairs.push(("noteheadFull", child));
    }
    for rest in ["restWhole", "restHalf", "restQuarter", "rest8th", "rest16th"] {
        pairs.push((rest, "augmentationDot"));
    }
    for acc in ["accidentalSharp", "accidentalFlat"] {
        pairs.push(("keySignature", acc));
    }
    for num in ["numeral2", "numeral3", "numeral4"] {
        pairs.push(("timeSignature", num));
    }
    for letter in ["dynamicLetterP", "dynamicLetterF"] {
        pairs.push(("dynamicsText", letter));
    }
    GrammarRules::new(pairs.into_iter().map(|(a, b)| (a.to_string(), b.to_string())))
        .expect("synthetic grammar is acyclic in pairs")
}

/// Grammar as `parent<TAB>child` lines.
pub fn synth_grammar_text() -> String {
    synth_grammar().pairs().map(|(p, c)| format!("{p}\t{c}\n")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub pages: usize,
    pub seed: u64,
    pub page_width: f64,
    pub page_height: f64,
    /// Rows of music per page; each needs 450 px of height.
    pub rows: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            pages: 20,
            seed: 0,
            page_width: 3500.0,
            page_height: 2000.0,
            rows: 4,
        }
    }
}

/// `pages` documents named `synth-000`, `synth-001`, ...
pub fn synth_corpus(cfg: &SynthConfig) -> Vec<NotationGraph> {
    (0..cfg.pages)
        .map(|k| {
            let id = format!("synth-{k:03}");
            let seed = derive_seed(cfg.seed, &[b"synth-page", id.as_bytes()]);
            synth_page(&id, seed, cfg)
        })
        .collect()
}

struct Page {
    vocab: ClassVocab,
    nodes: Vec<GroundTruthNode>,
    edges: BTreeSet<(u32, u32)>,
    rng: ChaCha8Rng,
    width: f64,
}

impl Page {
    fn add(&mut self, class: &str, top: f64, left: f64, bottom: f64, right: f64) -> u32 {
        let id = self.nodes.len() as u32;
        let bbox = BBox::new(top.round(), left.round(), bottom.round(), right.round())
            .unwrap_or_else(|e| panic!("synthetic {class} box ({top}, {left}, {bottom}, {right}): {e}"));
        let class_id = self.vocab.id(class).expect("synthetic class is in the vocabulary");
        self.nodes.push(GroundTruthNode { id, bbox, class_id });
        id
    }

    fn link(&mut self, a: u32, b: u32) {
        self.edges.insert((a.min(b), a.max(b)));
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.random::<f64>() < p
    }

    fn pick<'a>(&mut self, options: &[&'a str]) -> &'a str {
        options[self.rng.random_range(0..options.len())]
    }
}

const HALF_SPACE: f64 = 12.5;
const STEM: f64 = 70.0;
const HEAD_W: f64 = 32.0;

/// A placed notehead: node id, left edge and vertical center.
#[derive(Clone, Copy)]
struct Head {
    id: u32,
    x: f64,
    y: f64,
}

pub fn synth_page(document_id: &str, seed: u64, cfg: &SynthConfig) -> NotationGraph {
    let mut page = Page {
        vocab: synth_vocab(),
        nodes: Vec::new(),
        edges: BTreeSet::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        width: cfg.page_width,
    };
    for row in 0..cfg.rows {
        let center = 300.0 + 450.0 * row as f64;
        if center + 250.0 > cfg.page_height {
            break;
        }
        layout_row(&mut page, center, row == 0);
    }
    NotationGraph {
        document_id: document_id.to_string(),
        page_width: cfg.page_width,
        page_height: cfg.page_height,
        nodes: page.nodes,
        edges: page.edges,
    }
}

fn layout_row(page: &mut Page, yc: f64, first_row: bool) {
    if page.chance(0.7) {
        page.add("gClef", yc - 90.0, 60.0, yc + 110.0, 140.0);
    } else {
        page.add("fClef", yc - 50.0, 60.0, yc + 20.0, 140.0);
    }
    let mut x = 170.0;
    let accidentals = page.rng.random_range(0..4usize);
    if accidentals > 0 {
        let class = page.pick(&["accidentalSharp", "accidentalFlat"]);
        let mut children = Vec::new();
        for k in 0..accidentals {
            let y = yc + HALF_SPACE * [-4.0, -1.0, -5.0][k];
            children.push(page.add(
                class,
                y - 30.0,
                x + 26.0 * k as f64,
                y + 30.0,
                x + 26.0 * k as f64 + 20.0,
            ));
        }
        let right = x + 26.0 * accidentals as f64;
        let sig = page.add("keySignature", yc - 100.0, x - 2.0, yc + 40.0, right);
        for c in children {
            page.link(sig, c);
        }
        x = right + 30.0;
    }
    if first_row {
        let upper = page.pick(&["numeral2", "numeral3", "numeral4"]);
        let a = page.add(upper, yc - 50.0, x, yc, x + 35.0);
        let b = page.add("numeral4", yc, x, yc + 50.0, x + 35.0);
        let sig = page.add("timeSignature", yc - 50.0, x, yc + 50.0, x + 35.0);
        page.link(sig, a);
        page.link(sig, b);
        x += 70.0;
    }

    let mut heads: Vec<Head> = Vec::new();
    let limit = page.width - 150.0;
    while x < limit {
        x += 40.0 + page.rng.random_range(0.0..50.0);
        let roll: f64 = page.rng.random();
        x = if roll < 0.33 {
            single_note(page, x, yc, &mut heads)
        } else if roll < 0.46 {
            chord(page, x, yc, &mut heads)
        } else if roll < 0.72 {
            beamed_group(page, x, yc, limit, &mut heads)
        } else if roll < 0.88 {
            rest(page, x, yc)
        } else {
            page.add("barline", yc - 50.0, x, yc + 50.0, x + 4.0);
            x + 4.0
        };
    }

    for k in 1..heads.len() {
        let (a, b) = (heads[k - 1], heads[k]);
        let span = b.x - a.x;
        if (60.0..450.0).contains(&span) && page.chance(0.12) {
            let top = a.y.min(b.y) - 55.0;
            let slur = page.add("slur", top, a.x + 16.0, top + 25.0, b.x + 16.0);
            page.link(a.id, slur);
            page.link(b.id, slur);
        }
    }

    if page.chance(0.5) {
        let letters = page.rng.random_range(1..3usize);
        let left = page.rng.random_range(400.0..page.width - 400.0);
        let mut ids = Vec::new();
        for k in 0..letters {
            let class = page.pick(&["dynamicLetterP", "dynamicLetterF"]);
            let l = left + 30.0 * k as f64;
            ids.push(page.add(class, yc + 140.0, l, yc + 180.0, l + 28.0));
        }
        let text = page.add(
            "dynamicsText",
            yc + 140.0,
            left,
            yc + 180.0,
            left + 30.0 * letters as f64,
        );
        for id in ids {
            page.link(text, id);
        }
    }
}

fn pitch(page: &mut Page, yc: f64) -> f64 {
    yc + HALF_SPACE * page.rng.random_range(-9..=9) as f64
}

/// Notehead with its accidental, dot, ledger lines and articulation.
/// `stem_up` decides which side articulations sit on.
fn notehead(page: &mut Page, class: &str, x: f64, y: f64, yc: f64, stem_up: bool) -> Head {
    let id = page.add(class, y - 12.0, x, y + 12.0, x + HEAD_W);
    if page.chance(0.15) {
        let acc = page.pick(&["accidentalSharp", "accidentalFlat", "accidentalNatural"]);
        let (up, down) = if acc == "accidentalFlat" {
            (38.0, 10.0)
        } else {
            (30.0, 30.0)
        };
        let a = page.add(acc, y - up, x - 26.0, y + down, x - 6.0);
        page.link(id, a);
    }
    if page.chance(0.1) {
        let d = page.add("augmentationDot", y - 5.0, x + 40.0, y + 4.0, x + 49.0);
        page.link(id, d);
    }
    let steps = ((y - yc) / HALF_SPACE).round() as i32;
    if steps.abs() >= 6 {
        let mut line = 6;
        while line <= steps.abs() {
            let ly = yc + HALF_SPACE * f64::from(line * steps.signum());
            let l = page.add("ledgerLine", ly - 2.0, x - 8.0, ly + 2.0, x + HEAD_W + 8.0);
            page.link(id, l);
            line += 2;
        }
    }
    if page.chance(0.08) {
        let class = page.pick(&["articulationStaccato", "articulationAccent"]);
        let (h, w) = if class == "articulationStaccato" {
            (8.0, 8.0)
        } else {
            (14.0, 24.0)
        };
        let ay = if stem_up { y + 30.0 } else { y - 30.0 };
        let l = x + (HEAD_W - w) / 2.0;
        let a = page.add(class, ay - h / 2.0, l, ay + h / 2.0, l + w);
        page.link(id, a);
    }
    Head { id, x, y }
}

fn stem_box(x: f64, y_heads: (f64, f64), up: bool, end: f64) -> (f64, f64, f64, f64) {
    if up {
        (end, x + HEAD_W - 3.0, y_heads.1, x + HEAD_W)
    } else {
        (y_heads.0, x, end, x + 3.0)
    }
}

fn single_note(page: &mut Page, x: f64, yc: f64, heads: &mut Vec<Head>) -> f64 {
    let roll: f64 = page.rng.random();
    let class = if roll < 0.7 {
        "noteheadFull"
    } else if roll < 0.9 {
        "noteheadHalf"
    } else {
        "noteheadWhole"
    };
    let y = pitch(page, yc);
    let up = y >= yc;
    let head = notehead(page, class, x, y, yc, up);
    heads.push(head);
    if class == "noteheadWhole" {
        return x + HEAD_W + 20.0;
    }
    let end = if up { y - STEM } else { y + STEM };
    let (t, l, b, r) = stem_box(x, (y, y), up, end);
    let stem = page.add("stem", t, l, b, r);
    page.link(head.id, stem);
    if class == "noteheadFull" && page.chance(0.3) {
        let sixteenth = page.chance(0.3);
        let (flag, t, l, b, r) = match (up, sixteenth) {
            (true, false) => ("flag8thUp", end, x + HEAD_W, end + 40.0, x + HEAD_W + 18.0),
            (true, true) => ("flag16thUp", end, x + HEAD_W, end + 55.0, x + HEAD_W + 18.0),
            (false, false) => ("flag8thDown", end - 40.0, x + 3.0, end, x + 21.0),
            (false, true) => ("flag16thDown", end - 55.0, x + 3.0, end, x + 21.0),
        };
        let f = page.add(flag, t, l, b, r);
        page.link(head.id, f);
    }
    x + HEAD_W + 25.0
}

fn chord(page: &mut Page, x: f64, yc: f64, heads: &mut Vec<Head>) -> f64 {
    let n = page.rng.random_range(2..4usize);
    let base = yc + HALF_SPACE * page.rng.random_range(-7..=3) as f64;
    let ys: Vec<f64> = (0..n).map(|k| base + 2.0 * HALF_SPACE * k as f64).collect();
    let (lo, hi) = (ys[0], ys[n - 1]);
    let up = (lo + hi) / 2.0 >= yc;
    let ids: Vec<Head> = ys
        .iter()
        .map(|&y| notehead(page, "noteheadFull", x, y, yc, up))
        .collect();
    let end = if up { lo - STEM } else { hi + STEM };
    let (t, l, b, r) = stem_box(x, (lo, hi), up, end);
    let stem = page.add("stem", t, l, b, r);
    for h in &ids {
        page.link(h.id, stem);
    }
    heads.push(ids[n / 2]);
    x + HEAD_W + 25.0
}

fn beamed_group(page: &mut Page, x: f64, yc: f64, limit: f64, heads: &mut Vec<Head>) -> f64 {
    let n = page.rng.random_range(2..5usize);
    let spacing = 60.0 + page.rng.random_range(0.0..25.0);
    if x + spacing * n as f64 > limit {
        return single_note(page, x, yc, heads);
    }
    let ys: Vec<f64> = (0..n).map(|_| pitch(page, yc)).collect();
    let mean = ys.iter().sum::<f64>() / n as f64;
    let up = mean >= yc;
    let beam_y = if up {
        ys.iter().copied().fold(f64::INFINITY, f64::min) - STEM
    } else {
        ys.iter().copied().fold(f64::NEG_INFINITY, f64::max) + STEM
    };
    let mut group = Vec::with_capacity(n);
    let mut stem_x = Vec::with_capacity(n);
    for (k, &y) in ys.iter().enumerate() {
        let hx = x + spacing * k as f64;
        let head = notehead(page, "noteheadFull", hx, y, yc, up);
        let (t, l, b, r) = stem_box(hx, (y, y), up, beam_y);
        let stem = page.add("stem", t, l, b, r);
        page.link(head.id, stem);
        stem_x.push((l, r));
        group.push(head);
        heads.push(head);
    }
    let (left, right) = (stem_x[0].0, stem_x[n - 1].1);
    let beams = if page.chance(0.3) { 2 } else { 1 };
    for k in 0..beams {
        let offset = 16.0 * k as f64;
        let y = if up { beam_y + offset } else { beam_y - offset };
        let beam = page.add("beam", y - 6.0, left, y + 6.0, right);
        for h in &group {
            page.link(h.id, beam);
        }
    }
    x + spacing * (n - 1) as f64 + HEAD_W + 25.0
}

fn rest(page: &mut Page, x: f64, yc: f64) -> f64 {
    let class = page.pick(&[
        "restWhole",
        "restHalf",
        "restQuarter",
        "restQuarter",
        "rest8th",
        "rest16th",
    ]);
    let (t, b, w) = match class {
        "restWhole" => (yc - 25.0, yc - 13.0, 30.0),
        "restHalf" => (yc - 12.0, yc, 30.0),
        "restQuarter" => (yc - 35.0, yc + 35.0, 25.0),
        "rest8th" => (yc - 20.0, yc + 20.0, 22.0),
        _ => (yc - 20.0, yc + 40.0, 24.0),
    };
    let id = page.add(class, t, x, b, x + w);
    if page.chance(0.08) {
        let d = page.add("augmentationDot", yc - 17.0, x + w + 6.0, yc - 8.0, x + w + 15.0);
        page.link(id, d);
    }
    x + w + 20.0
}

/// The worked matching example with three symbol classes: a beam over three
/// noteheads, four detections (one with the wrong most-likely class), and a
/// model whose edge scores give precision 0.5 and recall 1 at threshold 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkedExample {
    pub vocab: ClassVocab,
    pub ground_truth: NotationGraph,
    pub detections: DetectionSet,
    pub scored: Vec<ScoredPair>,
    pub t_predict: f64,
}

pub fn worked_example() -> WorkedExample {
    let vocab = ClassVocab::from_names(["noteheadFull", "stem", "beam"]).expect("distinct names");
    let bbox = |t, l, b, r| BBox::new(t, l, b, r).expect("fixture boxes are valid");
    let gt_nodes = vec![
        (bbox(100.0, 100.0, 120.0, 400.0), 2),
        (bbox(200.0, 100.0, 220.0, 125.0), 0),
        (bbox(190.0, 240.0, 210.0, 265.0), 0),
        (bbox(180.0, 375.0, 200.0, 400.0), 0),
    ];
    let ground_truth = NotationGraph {
        document_id: "worked_example".into(),
        page_width: 500.0,
        page_height: 300.0,
        nodes: gt_nodes
            .into_iter()
            .enumerate()
            .map(|(i, (bbox, class_id))| GroundTruthNode {
                id: i as u32 + 1,
                bbox,
                class_id,
            })
            .collect(),
        edges: [(1, 2), (1, 3), (1, 4)].into_iter().collect(),
    };
    let det = |b: BBox, probs: [f64; 3]| DetectedNode {
        bbox: b,
        probs: probs.to_vec(),
    };
    let detections = DetectionSet {
        document_id: "worked_example".into(),
        page_width: 500.0,
        page_height: 300.0,
        nodes: vec![
            det(bbox(101.0, 100.0, 121.0, 400.0), [0.05, 0.05, 0.9]),
            det(bbox(200.0, 101.0, 220.0, 126.0), [0.95, 0.03, 0.02]),
            det(bbox(192.0, 250.0, 212.0, 275.0), [0.04, 0.0, 0.96]),
            det(bbox(181.0, 375.0, 201.0, 400.0), [0.9, 0.05, 0.05]),
        ],
    };
    let scored = [
        (0, 1, 0.9),
        (0, 2, 0.9),
        (0, 3, 0.9),
        (1, 2, 0.1),
        (1, 3, 0.9),
        (2, 3, 0.1),
    ]
    .into_iter()
    .map(|(a, b, score)| ScoredPair { a, b, score })
    .collect();
    WorkedExample {
        vocab,
        ground_truth,
        detections,
        scored,
        t_predict: 0.5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mung_io::{parse_mung_document, write_mung_document};

    #[test]
    fn pages_are_valid_and_deterministic() {
        let cfg = SynthConfig {
            pages: 3,
            seed: 4,
            ..SynthConfig::default()
        };
        let corpus = synth_corpus(&cfg);
        let vocab = synth_vocab();
        for g in &corpus {
            g.validate(&vocab).unwrap();
            assert!(g.nodes.len() > 100, "{} nodes", g.nodes.len());
            assert!(g.edges.len() > 50);
            for n in &g.nodes {
                assert!(n.bbox.bottom <= g.page_height && n.bbox.right <= g.page_width);
            }
        }
        assert_eq!(corpus, synth_corpus(&cfg));
        assert_ne!(corpus[0], corpus[1]);
    }

    #[test]
    fn every_edge_is_licensed_by_the_grammar() {
        let vocab = synth_vocab();
        let rules = synth_grammar();
        for g in synth_corpus(&SynthConfig {
            pages: 2,
            ..SynthConfig::default()
        }) {
            let index = g.index_of_ids();
            for (a, b) in &g.edges {
                let ca = vocab.name(g.nodes[index[a]].class_id).unwrap();
                let cb = vocab.name(g.nodes[index[b]].class_id).unwrap();
                assert!(rules.contains(ca, cb) || rules.contains(cb, ca), "{ca} - {cb}");
            }
        }
    }

    #[test]
    fn xml_round_trip() {
        let vocab = synth_vocab();
        let g = synth_page("rt", 9, &SynthConfig::default());
        let xml = write_mung_document(&g, &vocab, &synth_grammar()).unwrap();
        assert_eq!(parse_mung_document(&xml, &vocab).unwrap(), g);
    }

    #[test]
    fn grammar_text_parses_back() {
        let text = synth_grammar_text();
        assert_eq!(GrammarRules::from_text(&text).unwrap(), synth_grammar());
    }

    #[test]
    fn worked_example_is_consistent() {
        let f = worked_example();
        f.ground_truth.validate(&f.vocab).unwrap();
        for n in &f.detections.nodes {
            n.validate_probs(3).unwrap();
        }
        assert_eq!(f.detections.nodes[2].argmax(), 2);
    }
}
