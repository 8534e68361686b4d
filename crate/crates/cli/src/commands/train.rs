use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use omr_assembly::detector_sim::simulate_detections;
use omr_assembly::features::{calibrate_pair_filter, PairFilterConfig, DEFAULT_RETENTION_TARGET};
use omr_assembly::mlp_model::load_checkpoint;
use omr_assembly::mung_io::DatasetSplit;
use omr_assembly::training::{
    build_baseline_examples, build_pipelined_examples, history_csv, score_detections, train_model, TrainConfig,
    TrainMode, ValidationSet,
};
use omr_assembly::{DetectionSet, NotationGraph};
use serde_json::{json, Value};

use super::corpus::noise_config;
use crate::args::{FilterArgs, PredictArgs, TrainArgs};
use crate::config::{pick, FileConfig};
use crate::data::{
    detections_by_id, load_detections, load_vocab, read_json, resolve_class_subset, restrict_all, to_json_bytes,
    write_predictions, Corpus,
};
use crate::manifest::{manifest_path_for, RunManifest, SeedSummary};

/// Filter from a file, a flag or the configuration; `None` when none is given.
pub fn resolve_filter(args: &FilterArgs, cfg: &FileConfig, m: &mut RunManifest) -> Result<Option<PairFilterConfig>> {
    if let Some(path) = &args.filter {
        m.input(path)?;
        let v: Value = read_json(path)?;
        let d = v
            .pointer("/config/max_center_distance")
            .or_else(|| v.get("max_center_distance"))
            .and_then(Value::as_f64)
            .ok_or_else(|| anyhow!("{} has no max_center_distance", path.display()))?;
        return Ok(Some(PairFilterConfig::new(d)?));
    }
    args.max_center_distance
        .or(cfg.filter.max_center_distance)
        .map(|d| PairFilterConfig::new(d).map_err(Into::into))
        .transpose()
}

fn select_detections(
    by_id: &std::collections::BTreeMap<String, DetectionSet>,
    graphs: &[NotationGraph],
) -> Result<Vec<DetectionSet>> {
    graphs
        .iter()
        .map(|g| {
            by_id
                .get(&g.document_id)
                .cloned()
                .ok_or_else(|| anyhow!("no detections for document '{}'", g.document_id))
        })
        .collect()
}

pub fn train(args: &TrainArgs, cfg: &FileConfig) -> Result<()> {
    let t = &cfg.train;
    let mode: TrainMode = pick(args.mode.clone(), t.mode.clone(), "baseline".into()).parse()?;
    let classes = pick(args.classes.clone(), t.classes.clone(), "all".into());
    let seeds = pick(args.seeds, t.seeds, 1);
    let base_seed = pick(args.seed, t.seed, 0);
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }

    let corpus = Corpus::load(&args.corpus)?;
    let vocab = corpus.vocab()?;
    let c = vocab.len();
    let split: DatasetSplit = read_json(&args.split)?;
    let essential = t.essential_list.as_deref().map(Path::new);
    let keep = resolve_class_subset(&classes, &vocab, &corpus.documents, essential)?;
    let train_graphs = restrict_all(&corpus.select(&split.train)?, keep.as_ref(), &vocab)?;
    let val_graphs = restrict_all(&corpus.select(&split.validation)?, keep.as_ref(), &vocab)?;
    if train_graphs.is_empty() {
        bail!("the split has no training documents");
    }

    let mut m = RunManifest::new("train", Value::Null);
    m.input(&args.corpus)?;
    m.input(&args.split)?;
    let filter = match resolve_filter(&args.filter, cfg, &mut m)? {
        Some(f) => f,
        None => {
            let target = cfg.filter.retention_target.unwrap_or(DEFAULT_RETENTION_TARGET);
            let cal = calibrate_pair_filter(&train_graphs, target)?;
            log::info!("calibrated max center distance {}", cal.config.max_center_distance);
            cal.config
        }
    };

    let mut resolved = cfg.clone();
    let noise = noise_config(&cfg.noise, None);
    let (examples, val) = match mode {
        TrainMode::Baseline => (
            build_baseline_examples(&train_graphs, mode.class_mode(), c, &filter)?,
            ValidationSet::perfect(&val_graphs, c),
        ),
        TrainMode::Pipelined | TrainMode::PipelinedSoft => {
            let (train_dets, val_dets) = match &args.detections {
                Some(path) => {
                    m.input(path)?;
                    let by_id = detections_by_id(load_detections(path, &vocab)?)?;
                    (
                        select_detections(&by_id, &train_graphs)?,
                        select_detections(&by_id, &val_graphs)?,
                    )
                }
                None => {
                    noise.validate()?;
                    let sim = |gs: &[NotationGraph]| {
                        gs.iter()
                            .map(|g| simulate_detections(g, c, &noise))
                            .collect::<omr_assembly::Result<Vec<_>>>()
                    };
                    resolved.noise = crate::config::NoiseSection {
                        box_jitter_sigma: Some(noise.box_jitter_sigma),
                        class_confusion_temperature: Some(noise.class_confusion_temperature),
                        drop_prob: Some(noise.drop_prob),
                        spurious_rate: Some(noise.spurious_rate),
                        seed: Some(noise.seed),
                    };
                    (sim(&train_graphs)?, sim(&val_graphs)?)
                }
            };
            let t_match = pick(args.t_match, t.t_match, omr_assembly::matching::DEFAULT_T_MATCH);
            (
                build_pipelined_examples(&train_dets, &train_graphs, mode.class_mode(), c, &filter, t_match)?,
                ValidationSet::from_detections(&val_dets, &val_graphs)?,
            )
        }
    };
    log::info!(
        "{} training pairs ({} positive) on {} pages",
        examples.num_examples(),
        examples.num_positive(),
        examples.docs.len()
    );

    let mut base = TrainConfig::new(mode, filter, base_seed);
    base.epochs = pick(args.epochs, t.epochs, base.epochs);
    base.batch_size = pick(args.batch_size, t.batch_size, base.batch_size);
    base.lr = pick(args.lr, t.lr, base.lr);
    base.eval_every = pick(args.eval_every, t.eval_every, base.eval_every);
    base.t_match = pick(args.t_match, t.t_match, base.t_match);
    base.negative_keep = t.negative_keep;
    base.soft_bias = t.soft_bias.unwrap_or(base.soft_bias);
    base.validate()?;

    resolved.train.mode = Some(mode.as_str().into());
    resolved.train.classes = Some(classes.clone());
    resolved.train.seeds = Some(seeds);
    resolved.train.seed = Some(base_seed);
    resolved.train.epochs = Some(base.epochs);
    resolved.train.batch_size = Some(base.batch_size);
    resolved.train.lr = Some(base.lr);
    resolved.train.eval_every = Some(base.eval_every);
    resolved.train.t_match = Some(base.t_match);
    resolved.train.soft_bias = Some(base.soft_bias);
    resolved.filter.max_center_distance = Some(filter.max_center_distance);
    m.config = serde_json::to_value(&resolved)?;
    m.output(&args.out.join("config.toml"), resolved.to_toml().as_bytes())?;

    let mut per_seed = Vec::new();
    let mut scores = Vec::new();
    for k in 0..seeds {
        let seed = base_seed + k as u64;
        let run_cfg = TrainConfig { seed, ..base };
        let outcome =
            train_model(&run_cfg, &examples, &val, c).with_context(|| format!("training with seed {seed}"))?;
        let dir = args.out.join(format!("seed-{seed}"));
        m.output(
            &dir.join("checkpoint.mlp"),
            &outcome.checkpoint_bytes(&run_cfg, &vocab.hash()),
        )?;
        m.output(&dir.join("history.csv"), history_csv(&outcome.history).as_bytes())?;
        m.seeds.push(seed);
        println!(
            "seed {seed}: best epoch {}, validation Match+AUC {}",
            outcome.best_epoch,
            outcome
                .best_val_match_auc
                .map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"))
        );
        if let Some(a) = outcome.best_val_match_auc {
            scores.push(a);
        }
        per_seed.push(json!({
            "seed": seed,
            "best_epoch": outcome.best_epoch,
            "best_val_match_auc": outcome.best_val_match_auc,
            "history": outcome.history,
        }));
    }

    m.summary = SeedSummary::of(&scores);
    if let Some(s) = &m.summary {
        println!("validation Match+AUC {:.4} ± {:.4} over {} seeds", s.mean, s.sd, s.n);
    }
    let summary = json!({
        "mode": mode,
        "classes": classes,
        "training_pairs": examples.num_examples(),
        "positive_pairs": examples.num_positive(),
        "runs": per_seed,
        "summary": m.summary,
    });
    m.output(&args.out.join("summary.json"), &to_json_bytes(&summary)?)?;
    m.results = summary;
    m.write(&args.out.join("manifest.json"))
}

pub fn predict(args: &PredictArgs, cfg: &FileConfig) -> Result<()> {
    let (vocab, vocab_path) = load_vocab(&args.vocab)?;
    let mut m = RunManifest::new("predict", Value::Null);
    m.input(&vocab_path)?;
    m.input(&args.checkpoint)?;
    m.input(&args.detections)?;
    let bytes = std::fs::read(&args.checkpoint).with_context(|| format!("reading {}", args.checkpoint.display()))?;
    let (params, meta) = load_checkpoint(&bytes)?;
    meta.expect_classes(vocab.len())?;
    if meta.vocab_hash != vocab.hash() {
        bail!("checkpoint was trained with a different class vocabulary");
    }
    let filter = resolve_filter(&args.filter, cfg, &mut m)?
        .ok_or_else(|| anyhow!("predict needs --filter, --max-center-distance or [filter] max_center_distance"))?;
    m.config = json!({ "filter": filter, "checkpoint": meta });

    let sets = load_detections(&args.detections, &vocab)?;
    let mut per_doc = Vec::with_capacity(sets.len());
    for s in &sets {
        per_doc.push((s.document_id.clone(), score_detections(&params, s, &filter)?));
    }
    let pairs: usize = per_doc.iter().map(|(_, p)| p.len()).sum();
    println!("scored {pairs} candidate pairs on {} pages", per_doc.len());
    m.output(&args.out, write_predictions(&per_doc)?.as_bytes())?;
    m.results = json!({ "documents": per_doc.len(), "pairs": pairs });
    m.write(&manifest_path_for(&args.out))
}
