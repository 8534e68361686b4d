use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use omr_assembly::evaluation::ScoredPair;
use omr_assembly::mung_io::{
    derive_essential_classes, parse_mung_document, read_detections, restrict_classes, DatasetSplit,
};
use omr_assembly::{ClassVocab, DetectionSet, NotationGraph};
use serde::{Deserialize, Serialize};

use crate::args::{GroundTruthArgs, VocabArgs};

const PRIMITIVE20: &str = include_str!("../data/primitive20.txt");
const ESSENTIAL_TARGET: usize = 73;

/// Parsed annotations with the vocabulary they were parsed against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub classes: Vec<String>,
    pub vocab_hash: String,
    pub documents: Vec<NotationGraph>,
}

impl Corpus {
    pub fn new(vocab: &ClassVocab, mut documents: Vec<NotationGraph>) -> Result<Self> {
        documents.sort_by(|a, b| a.document_id.cmp(&b.document_id));
        for w in documents.windows(2) {
            if w[0].document_id == w[1].document_id {
                bail!("duplicate document id '{}'", w[0].document_id);
            }
        }
        Ok(Self {
            classes: vocab.names().to_vec(),
            vocab_hash: vocab.hash(),
            documents,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let corpus: Corpus =
            serde_json::from_str(&text).with_context(|| format!("parsing corpus {}", path.display()))?;
        let vocab = corpus.vocab()?;
        if vocab.hash() != corpus.vocab_hash {
            bail!(
                "corpus {} has a vocabulary hash that does not match its class list",
                path.display()
            );
        }
        for g in &corpus.documents {
            g.validate(&vocab)
                .with_context(|| format!("document '{}' in {}", g.document_id, path.display()))?;
        }
        Ok(corpus)
    }

    pub fn vocab(&self) -> Result<ClassVocab> {
        Ok(ClassVocab::from_names(self.classes.iter().cloned())?)
    }

    pub fn ids(&self) -> Vec<String> {
        self.documents.iter().map(|g| g.document_id.clone()).collect()
    }

    /// Documents with the given ids, in the order given.
    pub fn select(&self, ids: &[String]) -> Result<Vec<NotationGraph>> {
        let by_id: BTreeMap<&str, &NotationGraph> =
            self.documents.iter().map(|g| (g.document_id.as_str(), g)).collect();
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|g| (*g).clone())
                    .ok_or_else(|| anyhow!("document '{id}' is not in the corpus"))
            })
            .collect()
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Plain-text class list, or MuNG class-list XML when the file ends in `.xml`.
pub fn load_class_list(path: &Path) -> Result<ClassVocab> {
    let text = read_text(path)?;
    let vocab = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")) {
        ClassVocab::from_mung_class_xml(&text)
    } else {
        ClassVocab::from_text(&text)
    };
    vocab.with_context(|| format!("class list {}", path.display()))
}

/// `.xml` files of a directory in name order, or the single file given.
pub fn xml_files(input: &Path, exclude: Option<&Path>) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let skip = exclude.and_then(|p| p.canonicalize().ok());
    let mut files = Vec::new();
    for entry in std::fs::read_dir(input).with_context(|| format!("listing {}", input.display()))? {
        let path = entry?.path();
        let is_xml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml"));
        if is_xml && path.is_file() && path.canonicalize().ok() != skip {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        bail!("no .xml files in {}", input.display());
    }
    Ok(files)
}

/// Parses MuNG files; a document without a `document` attribute is named
/// after its file.
pub fn parse_mung_files(files: &[PathBuf], vocab: &ClassVocab) -> Result<Vec<NotationGraph>> {
    files
        .iter()
        .map(|path| {
            let mut g =
                parse_mung_document(&read_text(path)?, vocab).with_context(|| format!("parsing {}", path.display()))?;
            if g.document_id.is_empty() {
                g.document_id = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
            }
            Ok(g)
        })
        .collect()
}

pub struct GroundTruth {
    pub vocab: ClassVocab,
    pub graphs: Vec<NotationGraph>,
    pub sources: Vec<PathBuf>,
}

pub fn load_ground_truth(args: &GroundTruthArgs) -> Result<GroundTruth> {
    if let Some(path) = &args.corpus {
        let corpus = Corpus::load(path)?;
        return Ok(GroundTruth {
            vocab: corpus.vocab()?,
            graphs: corpus.documents,
            sources: vec![path.clone()],
        });
    }
    let mung = args
        .mung
        .as_ref()
        .ok_or_else(|| anyhow!("either --corpus or --mung is required"))?;
    let list = args
        .class_list
        .as_ref()
        .ok_or_else(|| anyhow!("--mung needs --class-list"))?;
    let vocab = load_class_list(list)?;
    let files = xml_files(mung, Some(list))?;
    let graphs = parse_mung_files(&files, &vocab)?;
    let mut sources = vec![list.clone()];
    sources.extend(files);
    Ok(GroundTruth { vocab, graphs, sources })
}

pub fn load_vocab(args: &VocabArgs) -> Result<(ClassVocab, PathBuf)> {
    match (&args.corpus, &args.class_list) {
        (Some(path), _) => Ok((Corpus::load(path)?.vocab()?, path.clone())),
        (None, Some(path)) => Ok((load_class_list(path)?, path.clone())),
        (None, None) => bail!("either --corpus or --class-list is required"),
    }
}

pub fn load_detections(path: &Path, vocab: &ClassVocab) -> Result<Vec<DetectionSet>> {
    read_detections(&read_text(path)?, vocab).with_context(|| format!("reading detections {}", path.display()))
}

/// Detection sets keyed by document id; duplicates are an error.
pub fn detections_by_id(sets: Vec<DetectionSet>) -> Result<BTreeMap<String, DetectionSet>> {
    let mut map = BTreeMap::new();
    for s in sets {
        let id = s.document_id.clone();
        if map.insert(id.clone(), s).is_some() {
            bail!("detections for '{id}' appear twice");
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub document_id: String,
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

pub fn write_predictions(per_doc: &[(String, Vec<ScoredPair>)]) -> Result<String> {
    let mut out = String::new();
    for (doc, pairs) in per_doc {
        for p in pairs {
            out.push_str(&serde_json::to_string(&PredictionRecord {
                document_id: doc.clone(),
                a: p.a,
                b: p.b,
                score: p.score,
            })?);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, Vec<ScoredPair>>> {
    let mut map: BTreeMap<String, Vec<ScoredPair>> = BTreeMap::new();
    for (idx, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: PredictionRecord =
            serde_json::from_str(line).with_context(|| format!("{} line {}", path.display(), idx + 1))?;
        map.entry(r.document_id).or_default().push(ScoredPair {
            a: r.a,
            b: r.b,
            score: r.score,
        });
    }
    Ok(map)
}

/// Document ids of the requested split parts, in split order.
pub fn split_ids(split: &DatasetSplit, parts: &[String]) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for part in parts {
        let list = match part.as_str() {
            "train" => &split.train,
            "validation" => &split.validation,
            "test" => &split.test,
            other => bail!("unknown split part '{other}' (expected train, validation or test)"),
        };
        ids.extend(list.iter().cloned());
    }
    Ok(ids)
}

/// Resolves `all`, `essential`, `primitive20` or a class-list file to the
/// set of kept class names; `None` keeps every class.
pub fn resolve_class_subset(
    spec: &str,
    vocab: &ClassVocab,
    all_graphs: &[NotationGraph],
    essential_list: Option<&Path>,
) -> Result<Option<BTreeSet<String>>> {
    match spec {
        "all" => Ok(None),
        "essential" => match essential_list {
            Some(path) => Ok(Some(vocab.parse_subset(&read_text(path)?)?)),
            None => {
                let (kept, _) = derive_essential_classes(all_graphs, vocab, ESSENTIAL_TARGET);
                log::info!("derived {} essential classes from corpus frequencies", kept.len());
                Ok(Some(kept))
            }
        },
        "primitive20" => {
            let mut kept = BTreeSet::new();
            for name in PRIMITIVE20
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
            {
                if vocab.id(name).is_some() {
                    kept.insert(name.to_string());
                } else {
                    log::warn!("primitive class '{name}' is not in the vocabulary");
                }
            }
            if kept.is_empty() {
                bail!("no primitive class is in the vocabulary");
            }
            Ok(Some(kept))
        }
        path => Ok(Some(
            vocab
                .parse_subset(&read_text(Path::new(path))?)
                .with_context(|| format!("class subset {path}"))?,
        )),
    }
}

pub fn restrict_all(
    graphs: &[NotationGraph],
    keep: Option<&BTreeSet<String>>,
    vocab: &ClassVocab,
) -> Result<Vec<NotationGraph>> {
    match keep {
        None => Ok(graphs.to_vec()),
        Some(k) => graphs
            .iter()
            .map(|g| restrict_classes(g, k, vocab).map_err(Into::into))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use omr_assembly::synth::synth_vocab;

    #[test]
    fn primitive_list_has_twenty_names_in_synthetic_vocab() {
        let v = synth_vocab();
        let kept = resolve_class_subset("primitive20", &v, &[], None).unwrap().unwrap();
        assert_eq!(kept.len(), 20);
        assert!(resolve_class_subset("all", &v, &[], None).unwrap().is_none());
    }
}
