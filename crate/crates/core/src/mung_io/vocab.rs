use std::collections::{BTreeMap, BTreeSet, HashMap};

use sha2::{Digest, Sha256};

use super::NotationGraph;
use crate::error::{OmrError, Result};

/// Ordered class-name vocabulary. Class ids are positions in the list.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassVocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl ClassVocab {
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(OmrError::InvalidArgument(format!(
                    "class '{name}' listed twice in vocabulary"
                )));
            }
        }
        Ok(Self { names, index })
    }

    /// One class name per line; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_names(non_comment_lines(text).map(str::to_string))
    }

    /// Reads a MuNG class-list document (`NodeClass` or legacy
    /// `CropObjectClass` elements, each with a `Name` child) in document order.
    pub fn from_mung_class_xml(xml_text: &str) -> Result<Self> {
        let doc = roxmltree::Document::parse(xml_text).map_err(|e| {
            let pos = e.pos();
            OmrError::Xml {
                line: pos.row,
                column: pos.col,
                message: e.to_string(),
            }
        })?;
        let names = doc
            .descendants()
            .filter(|n| n.has_tag_name("NodeClass") || n.has_tag_name("CropObjectClass"))
            .filter_map(|n| {
                n.children()
                    .find(|c| c.has_tag_name("Name"))
                    .and_then(|c| c.text())
                    .map(|t| t.trim().to_string())
            });
        Self::from_names(names)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// SHA-256 over the newline-joined names; stored in checkpoints.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for name in &self.names {
            hasher.update(name.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    /// Parses a subset file and checks every entry against the vocabulary.
    pub fn parse_subset(&self, text: &str) -> Result<BTreeSet<String>> {
        non_comment_lines(text)
            .map(|name| {
                if self.index.contains_key(name) {
                    Ok(name.to_string())
                } else {
                    Err(OmrError::UnknownClass(name.to_string()))
                }
            })
            .collect()
    }
}

fn non_comment_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

/// Parent/child class pairs that fix the direction of an edge.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GrammarRules {
    ordered_pairs: BTreeSet<(String, String)>,
}

impl GrammarRules {
    pub fn new<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut ordered_pairs = BTreeSet::new();
        for (parent, child) in pairs {
            if ordered_pairs.contains(&(child.clone(), parent.clone())) {
                return Err(OmrError::InvalidArgument(format!(
                    "grammar lists both {parent}->{child} and {child}->{parent}"
                )));
            }
            ordered_pairs.insert((parent, child));
        }
        Ok(Self { ordered_pairs })
    }

    /// `parent<TAB>child` per line.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (parent, child) = line.split_once('\t').ok_or_else(|| {
                OmrError::InvalidArgument(format!("grammar line {}: expected 'parent<TAB>child'", lineno + 1))
            })?;
            pairs.push((parent.trim().to_string(), child.trim().to_string()));
        }
        Self::new(pairs)
    }

    pub fn contains(&self, parent: &str, child: &str) -> bool {
        self.ordered_pairs.contains(&(parent.to_string(), child.to_string()))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.ordered_pairs.iter().map(|(p, c)| (p.as_str(), c.as_str()))
    }

    pub fn len(&self) -> usize {
        self.ordered_pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered_pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Orientation {
    Directed {
        parent: String,
        child: String,
    },
    /// No rule applies; names are given lower class id first.
    Unordered(String, String),
}

pub fn orient_edge(class_a: &str, class_b: &str, rules: &GrammarRules, vocab: &ClassVocab) -> Result<Orientation> {
    let id_a = vocab
        .id(class_a)
        .ok_or_else(|| OmrError::UnknownClass(class_a.to_string()))?;
    let id_b = vocab
        .id(class_b)
        .ok_or_else(|| OmrError::UnknownClass(class_b.to_string()))?;
    if rules.contains(class_a, class_b) {
        return Ok(Orientation::Directed {
            parent: class_a.to_string(),
            child: class_b.to_string(),
        });
    }
    if rules.contains(class_b, class_a) {
        return Ok(Orientation::Directed {
            parent: class_b.to_string(),
            child: class_a.to_string(),
        });
    }
    let (first, second) = if id_a <= id_b {
        (class_a, class_b)
    } else {
        (class_b, class_a)
    };
    Ok(Orientation::Unordered(first.to_string(), second.to_string()))
}

/// Approximate reconstruction of a frequency-based class subset: drop classes
/// that never occur, then drop the rarest (ties alphabetical) until `target`
/// remain. Returns the kept names and per-class frequencies.
pub fn derive_essential_classes(
    graphs: &[NotationGraph],
    vocab: &ClassVocab,
    target: usize,
) -> (BTreeSet<String>, BTreeMap<String, usize>) {
    let mut counts = vec![0usize; vocab.len()];
    for g in graphs {
        for n in &g.nodes {
            counts[n.class_id] += 1;
        }
    }
    let mut attested: Vec<(usize, &str)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(id, &c)| (c, vocab.names[id].as_str()))
        .collect();
    attested.sort();
    let drop = attested.len().saturating_sub(target);
    let kept = attested[drop..].iter().map(|(_, name)| name.to_string()).collect();
    let freq = vocab.names.iter().cloned().zip(counts).collect();
    (kept, freq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> ClassVocab {
        ClassVocab::from_names(["noteheadFull", "stem", "beam"]).unwrap()
    }

    #[test]
    fn vocab_index_is_inverse_of_lookup() {
        let v = vocab();
        for (i, name) in v.names().iter().enumerate() {
            assert_eq!(v.id(name), Some(i));
            assert_eq!(v.name(i), Some(name.as_str()));
        }
        assert!(ClassVocab::from_names(["a", "a"]).is_err());
    }

    #[test]
    fn vocab_from_class_xml() {
        let xml = r#"<NodeClassList><NodeClasses>
            <NodeClass><Id>1</Id><Name>noteheadFull</Name></NodeClass>
            <NodeClass><Id>2</Id><Name> stem </Name></NodeClass>
        </NodeClasses></NodeClassList>"#;
        let v = ClassVocab::from_mung_class_xml(xml).unwrap();
        assert_eq!(v.names(), ["noteheadFull", "stem"]);
    }

    #[test]
    fn orient_by_rule_lookup() {
        let rules = GrammarRules::from_text("noteheadFull\tstem\n").unwrap();
        let o = orient_edge("stem", "noteheadFull", &rules, &vocab()).unwrap();
        assert_eq!(
            o,
            Orientation::Directed {
                parent: "noteheadFull".into(),
                child: "stem".into()
            }
        );
    }

    #[test]
    fn orient_without_rules_is_canonical() {
        let o = orient_edge("beam", "stem", &GrammarRules::default(), &vocab()).unwrap();
        assert_eq!(o, Orientation::Unordered("stem".into(), "beam".into()));
    }

    #[test]
    fn grammar_rejects_both_orientations() {
        assert!(GrammarRules::from_text("a\tb\nb\ta\n").is_err());
        assert!(GrammarRules::from_text("a b\n").is_err());
    }

    #[test]
    fn subset_parsing_checks_vocab() {
        let v = vocab();
        assert_eq!(v.parse_subset("# c\nstem\n\nbeam\n").unwrap().len(), 2);
        assert!(v.parse_subset("slur\n").is_err());
    }
}
