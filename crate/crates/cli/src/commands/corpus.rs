use std::collections::BTreeMap;

use anyhow::{bail, Result};
use omr_assembly::detector_sim::{simulate_detections, NoiseConfig};
use omr_assembly::features::{calibrate_pair_filter, DEFAULT_RETENTION_TARGET};
use omr_assembly::mung_io::{split_dataset, write_detections, write_mung_document, DatasetSplit, SplitRatios};
use omr_assembly::synth::{synth_corpus, synth_grammar, synth_grammar_text, synth_vocab, SynthConfig};
use omr_assembly::NotationGraph;
use serde_json::json;

use crate::args::{CalibrateArgs, ConvertArgs, SimulateArgs, SplitArgs, SubsetArgs, SynthArgs};
use crate::config::{pick, FileConfig, NoiseSection};
use crate::data::{
    load_class_list, parse_mung_files, read_json, resolve_class_subset, restrict_all, split_ids, to_json_bytes,
    xml_files, Corpus,
};
use crate::manifest::{manifest_path_for, RunManifest};

pub fn convert(args: &ConvertArgs) -> Result<()> {
    let vocab = load_class_list(&args.class_list)?;
    let files = xml_files(&args.input, Some(&args.class_list))?;
    let corpus = Corpus::new(&vocab, parse_mung_files(&files, &vocab)?)?;

    let mut freq = vec![0usize; vocab.len()];
    for g in &corpus.documents {
        for n in &g.nodes {
            freq[n.class_id] += 1;
        }
    }
    let nodes: usize = corpus.documents.iter().map(|g| g.nodes.len()).sum();
    let edges: usize = corpus.documents.iter().map(|g| g.edges.len()).sum();
    let zero = freq.iter().filter(|&&c| c == 0).count();
    println!(
        "converted {} documents: {nodes} nodes, {edges} edges, {zero} of {} classes never occur",
        corpus.documents.len(),
        vocab.len()
    );

    let mut m = RunManifest::new("convert", json!({ "input": args.input, "class_list": args.class_list }));
    m.input(&args.class_list)?;
    for f in &files {
        m.input(f)?;
    }
    m.output(&args.out, &to_json_bytes(&corpus)?)?;
    let frequencies: BTreeMap<&str, usize> = vocab
        .names()
        .iter()
        .map(String::as_str)
        .zip(freq.iter().copied())
        .collect();
    m.results = json!({
        "documents": corpus.documents.len(),
        "nodes": nodes,
        "edges": edges,
        "zero_frequency_classes": zero,
        "class_frequencies": frequencies,
    });
    m.write(&manifest_path_for(&args.out))
}

pub fn synth(args: &SynthArgs, cfg: &FileConfig) -> Result<()> {
    let d = SynthConfig::default();
    let s = &cfg.synth;
    let synth_cfg = SynthConfig {
        pages: pick(args.pages, s.pages, d.pages),
        seed: pick(args.seed, s.seed, d.seed),
        rows: pick(args.rows, s.rows, d.rows),
        page_width: pick(args.width, s.width, d.page_width),
        page_height: pick(args.height, s.height, d.page_height),
    };
    if synth_cfg.page_width < 1000.0 || synth_cfg.page_height < 550.0 {
        bail!("synthetic pages need at least 1000 x 550 pixels");
    }
    let vocab = synth_vocab();
    let grammar = synth_grammar();
    let mut m = RunManifest::new("synth-corpus", serde_json::to_value(synth_cfg)?);
    m.seeds = vec![synth_cfg.seed];
    let class_text: String = vocab.names().iter().map(|n| format!("{n}\n")).collect();
    m.output(&args.out.join("classes.txt"), class_text.as_bytes())?;
    m.output(&args.out.join("grammar.tsv"), synth_grammar_text().as_bytes())?;
    let pages = synth_corpus(&synth_cfg);
    for g in &pages {
        let xml = write_mung_document(g, &vocab, &grammar)?;
        m.output(
            &args.out.join("annotations").join(format!("{}.xml", g.document_id)),
            xml.as_bytes(),
        )?;
    }
    let nodes: usize = pages.iter().map(|g| g.nodes.len()).sum();
    let edges: usize = pages.iter().map(|g| g.edges.len()).sum();
    println!("wrote {} synthetic pages: {nodes} nodes, {edges} edges", pages.len());
    m.results = json!({ "pages": pages.len(), "nodes": nodes, "edges": edges });
    m.write(&args.out.join("manifest.json"))
}

pub fn split(args: &SplitArgs, cfg: &FileConfig) -> Result<()> {
    let corpus = Corpus::load(&args.corpus)?;
    let d = SplitRatios::default();
    let s = &cfg.split;
    let ratios = SplitRatios {
        train: pick(args.train, s.train, d.train),
        validation: pick(args.validation, s.validation, d.validation),
        test: pick(args.test, s.test, d.test),
    };
    let seed = pick(args.seed, s.seed, 0);
    let split = split_dataset(&corpus.ids(), ratios, seed)?;
    let (tr, va, te) = split.sizes();
    println!(
        "split {} documents: {tr} train, {va} validation, {te} test",
        tr + va + te
    );

    let mut m = RunManifest::new("split", json!({ "ratios": ratios, "seed": seed }));
    m.seeds = vec![seed];
    m.input(&args.corpus)?;
    m.output(&args.out, &to_json_bytes(&split)?)?;
    m.results = json!({ "train": tr, "validation": va, "test": te });
    m.write(&manifest_path_for(&args.out))
}

/// Corpus documents after the optional split and class restrictions.
fn selected_graphs(
    corpus: &Corpus,
    subset: &SubsetArgs,
    default_parts: &[&str],
    cfg: &FileConfig,
    m: &mut RunManifest,
) -> Result<Vec<NotationGraph>> {
    let vocab = corpus.vocab()?;
    let graphs = match &subset.split {
        Some(path) => {
            m.input(path)?;
            let split: DatasetSplit = read_json(path)?;
            let parts = if subset.subset.is_empty() {
                default_parts.iter().map(|p| p.to_string()).collect()
            } else {
                subset.subset.clone()
            };
            corpus.select(&split_ids(&split, &parts)?)?
        }
        None => corpus.documents.clone(),
    };
    let spec = pick(subset.classes.clone(), cfg.train.classes.clone(), "all".into());
    let essential = cfg.train.essential_list.as_deref().map(std::path::Path::new);
    let keep = resolve_class_subset(&spec, &vocab, &corpus.documents, essential)?;
    restrict_all(&graphs, keep.as_ref(), &vocab)
}

pub fn noise_config(section: &NoiseSection, seed: Option<u64>) -> NoiseConfig {
    let d = NoiseConfig::default();
    NoiseConfig {
        box_jitter_sigma: section.box_jitter_sigma.unwrap_or(d.box_jitter_sigma),
        class_confusion_temperature: section
            .class_confusion_temperature
            .unwrap_or(d.class_confusion_temperature),
        drop_prob: section.drop_prob.unwrap_or(d.drop_prob),
        spurious_rate: section.spurious_rate.unwrap_or(d.spurious_rate),
        seed: pick(seed, section.seed, d.seed),
    }
}

pub fn simulate(args: &SimulateArgs, cfg: &FileConfig) -> Result<()> {
    let corpus = Corpus::load(&args.corpus)?;
    let mut section = cfg.noise.clone();
    section.box_jitter_sigma = args.jitter.or(section.box_jitter_sigma);
    section.class_confusion_temperature = args.temperature.or(section.class_confusion_temperature);
    section.drop_prob = args.drop.or(section.drop_prob);
    section.spurious_rate = args.spurious.or(section.spurious_rate);
    let noise = noise_config(&section, args.seed);
    noise.validate()?;

    let mut m = RunManifest::new("simulate", serde_json::to_value(noise)?);
    m.seeds = vec![noise.seed];
    m.input(&args.corpus)?;
    let graphs = selected_graphs(&corpus, &args.subset, &["train", "validation", "test"], cfg, &mut m)?;
    let c = corpus.classes.len();
    let sets = graphs
        .iter()
        .map(|g| simulate_detections(g, c, &noise))
        .collect::<omr_assembly::Result<Vec<_>>>()?;
    let boxes: usize = sets.iter().map(|s| s.nodes.len()).sum();
    let truth: usize = graphs.iter().map(|g| g.nodes.len()).sum();
    println!(
        "simulated {boxes} detections for {truth} ground-truth symbols on {} pages",
        sets.len()
    );
    m.output(&args.out, write_detections(&sets).as_bytes())?;
    m.results = json!({ "documents": sets.len(), "detections": boxes, "ground_truth_nodes": truth });
    m.write(&manifest_path_for(&args.out))
}

pub fn calibrate(args: &CalibrateArgs, cfg: &FileConfig) -> Result<()> {
    let corpus = Corpus::load(&args.corpus)?;
    let target = pick(args.target, cfg.filter.retention_target, DEFAULT_RETENTION_TARGET);
    let mut m = RunManifest::new("calibrate-filter", json!({ "retention_target": target }));
    m.input(&args.corpus)?;
    let graphs = selected_graphs(&corpus, &args.subset, &["train"], cfg, &mut m)?;
    let cal = calibrate_pair_filter(&graphs, target)?;
    println!(
        "max center distance {} keeps {:.4} of ground-truth edges{}",
        cal.config.max_center_distance,
        cal.retention,
        if cal.target_missed { " (target missed)" } else { "" }
    );
    m.output(&args.out, &to_json_bytes(&cal)?)?;
    m.results = serde_json::to_value(cal)?;
    m.write(&manifest_path_for(&args.out))
}
