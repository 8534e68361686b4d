use std::collections::{BTreeSet, HashSet};

use roxmltree::{Document, Node};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::vocab::{orient_edge, GrammarRules, Orientation};
use super::{BBox, ClassVocab, GroundTruthNode, NotationGraph};
use crate::error::{OmrError, Result};

/// Parses one MuNG document (`<Nodes document="..."><Node>...</Node>...</Nodes>`).
///
/// Every id in a node's `Outlinks` becomes one undirected edge. Page size is
/// taken from optional `width`/`height` attributes on the root element and
/// otherwise from the extent of the annotated boxes.
pub fn parse_mung_document(xml_text: &str, vocab: &ClassVocab) -> Result<NotationGraph> {
    let doc = Document::parse(xml_text).map_err(|e| {
        let pos = e.pos();
        OmrError::Xml {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let root = doc.root_element();
    let document_id = root.attribute("document").unwrap_or_default().to_string();

    let mut nodes = Vec::new();
    let mut links: Vec<(u32, u32, u32)> = Vec::new();
    for el in root.descendants().filter(|n| n.has_tag_name("Node")) {
        let line = doc.text_pos_at(el.range().start).row;
        let id: u32 = parse_field(el, "Id", line)?;
        let class_name = child_text(el, "ClassName")
            .ok_or_else(|| missing(line, "ClassName"))?
            .trim();
        let class_id = vocab
            .id(class_name)
            .ok_or_else(|| OmrError::UnknownClass(class_name.to_string()))?;
        let top: f64 = parse_field(el, "Top", line)?;
        let left: f64 = parse_field(el, "Left", line)?;
        let width: f64 = parse_field(el, "Width", line)?;
        let height: f64 = parse_field(el, "Height", line)?;
        let bbox = BBox::new(top, left, top + height, left + width).map_err(|e| OmrError::MalformedNode {
            line,
            message: format!("node {id}: {e}"),
        })?;
        if let Some(text) = child_text(el, "Outlinks") {
            for tok in text.split_whitespace() {
                let to: u32 = tok.parse().map_err(|_| OmrError::MalformedNode {
                    line,
                    message: format!("node {id}: bad outlink '{tok}'"),
                })?;
                links.push((id, to, line));
            }
        }
        nodes.push(GroundTruthNode { id, bbox, class_id });
    }

    let mut ids = HashSet::with_capacity(nodes.len());
    for n in &nodes {
        if !ids.insert(n.id) {
            return Err(OmrError::MalformedNode {
                line: 0,
                message: format!("duplicate node id {}", n.id),
            });
        }
    }
    let mut edges = BTreeSet::new();
    for (from, to, line) in links {
        if !ids.contains(&to) {
            return Err(OmrError::DanglingLink { from, to });
        }
        if from == to {
            return Err(OmrError::MalformedNode {
                line,
                message: format!("node {from} links to itself"),
            });
        }
        edges.insert((from.min(to), from.max(to)));
    }

    let extent_w = nodes.iter().map(|n| n.bbox.right).fold(0.0, f64::max);
    let extent_h = nodes.iter().map(|n| n.bbox.bottom).fold(0.0, f64::max);
    let page_width = page_dim(root, "width")?.unwrap_or(extent_w.max(1.0));
    let page_height = page_dim(root, "height")?.unwrap_or(extent_h.max(1.0));

    Ok(NotationGraph {
        document_id,
        page_width,
        page_height,
        nodes,
        edges,
    })
}

/// Serializes a graph as MuNG XML. Each edge becomes an outlink on its
/// grammar parent, or on the node with the lower class id when no rule
/// applies (lower node id on ties). Coordinates are written as given, so
/// integral boxes round-trip exactly.
pub fn write_mung_document(graph: &NotationGraph, vocab: &ClassVocab, grammar: &GrammarRules) -> Result<String> {
    let index = graph.index_of_ids();
    let name = |class_id: usize| {
        vocab
            .name(class_id)
            .ok_or_else(|| OmrError::UnknownClass(format!("class id {class_id}")))
    };
    let mut outlinks: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(a, b) in &graph.edges {
        let (na, nb) = (&graph.nodes[index[&a]], &graph.nodes[index[&b]]);
        let (ca, cb) = (name(na.class_id)?, name(nb.class_id)?);
        let from_a = match orient_edge(ca, cb, grammar, vocab)? {
            Orientation::Directed { parent, .. } => parent == ca && (ca != cb || a < b),
            Orientation::Unordered(first, _) => first == ca && (ca != cb || a < b),
        };
        let (from, to) = if from_a { (a, b) } else { (b, a) };
        outlinks.entry(from).or_default().push(to);
    }

    let mut out = String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n");
    let _ = writeln!(
        out,
        "<Nodes dataset=\"MUSCIMA-pp_2.0\" document=\"{}\" width=\"{}\" height=\"{}\">",
        escape(&graph.document_id),
        graph.page_width,
        graph.page_height
    );
    for n in &graph.nodes {
        let links = outlinks
            .get(&n.id)
            .map(|v| v.iter().map(u32::to_string).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "  <Node>\n    <Id>{}</Id>\n    <ClassName>{}</ClassName>\n    <Top>{}</Top>\n    <Left>{}</Left>\n    \
             <Width>{}</Width>\n    <Height>{}</Height>\n    <Outlinks>{}</Outlinks>\n  </Node>",
            n.id,
            escape(name(n.class_id)?),
            n.bbox.top,
            n.bbox.left,
            n.bbox.width(),
            n.bbox.height(),
            links
        );
    }
    out.push_str("</Nodes>\n");
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn child_text<'a>(el: Node<'a, '_>, tag: &str) -> Option<&'a str> {
    el.children().find(|c| c.has_tag_name(tag)).and_then(|c| c.text())
}

fn missing(line: u32, tag: &str) -> OmrError {
    OmrError::MalformedNode {
        line,
        message: format!("missing <{tag}>"),
    }
}

fn parse_field<T: std::str::FromStr>(el: Node<'_, '_>, tag: &str, line: u32) -> Result<T> {
    let text = child_text(el, tag).ok_or_else(|| missing(line, tag))?;
    text.trim().parse().map_err(|_| OmrError::MalformedNode {
        line,
        message: format!("cannot parse <{tag}> value '{}'", text.trim()),
    })
}

fn page_dim(root: Node<'_, '_>, attr: &str) -> Result<Option<f64>> {
    match root.attribute(attr) {
        None => Ok(None),
        Some(v) => match v.trim().parse::<f64>() {
            Ok(x) if x > 0.0 && x.is_finite() => Ok(Some(x)),
            _ => Err(OmrError::InvalidArgument(format!(
                "page {attr} attribute '{v}' is not a positive number"
            ))),
        },
    }
}
