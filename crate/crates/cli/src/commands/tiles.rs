use std::collections::BTreeMap;

use anyhow::{bail, Result};
use omr_assembly::geometry::{
    merge_detections, tile_plan, TilePlan, DEFAULT_CROP_SIZE, DEFAULT_MARGIN, DEFAULT_MERGE_IOU,
};
use omr_assembly::mung_io::{read_tiled_detections, write_detections};
use serde_json::json;

use crate::args::{MergeTilesArgs, TilePlanArgs};
use crate::config::{pick, FileConfig};
use crate::data::{load_vocab, read_json, read_text, to_json_bytes, Corpus};
use crate::manifest::{manifest_path_for, RunManifest};

pub fn plan(args: &TilePlanArgs, cfg: &FileConfig) -> Result<()> {
    let crop = pick(args.crop_size, cfg.tiles.crop_size, DEFAULT_CROP_SIZE);
    let margin = pick(args.margin, cfg.tiles.margin, DEFAULT_MARGIN);
    let mut m = RunManifest::new("tile-plan", json!({ "crop_size": crop, "margin": margin }));
    let bytes = match (&args.corpus, args.width, args.height) {
        (Some(path), _, _) => {
            m.input(path)?;
            let corpus = Corpus::load(path)?;
            let plans = corpus
                .documents
                .iter()
                .map(|g| {
                    Ok((
                        g.document_id.clone(),
                        tile_plan(g.page_width, g.page_height, crop, margin)?,
                    ))
                })
                .collect::<Result<BTreeMap<String, TilePlan>>>()?;
            println!("planned {} pages", plans.len());
            to_json_bytes(&plans)?
        }
        (None, Some(w), Some(h)) => {
            let p = tile_plan(w, h, crop, margin)?;
            println!("{} tiles for a {w} x {h} page", p.tiles.len());
            to_json_bytes(&p)?
        }
        _ => bail!("tile-plan needs --corpus or both --width and --height"),
    };
    m.output(&args.out, &bytes)?;
    m.write(&manifest_path_for(&args.out))
}

pub fn merge(args: &MergeTilesArgs, cfg: &FileConfig) -> Result<()> {
    let (vocab, vocab_path) = load_vocab(&args.vocab)?;
    let plan: TilePlan = read_json(&args.plan)?;
    let iou = pick(args.iou, cfg.tiles.merge_iou, DEFAULT_MERGE_IOU);
    let tiled = read_tiled_detections(&read_text(&args.detections)?, &vocab)?;
    let Some((_, first)) = tiled.first() else {
        bail!("{} holds no detections", args.detections.display());
    };
    let document_id = first.document_id.clone();
    let mut per_tile = Vec::with_capacity(tiled.len());
    for (tile, set) in tiled {
        let Some(tile) = tile else {
            bail!("detections for '{}' carry no tile index", set.document_id);
        };
        if set.document_id != document_id {
            bail!(
                "tile detections mix documents '{}' and '{}'",
                document_id,
                set.document_id
            );
        }
        per_tile.push((tile, set));
    }
    let mut merged = merge_detections(&plan, &per_tile, iou)?;
    merged.document_id = document_id;
    let before: usize = per_tile.iter().map(|(_, s)| s.nodes.len()).sum();
    println!("merged {before} tile detections into {}", merged.nodes.len());

    let mut m = RunManifest::new("merge-tiles", json!({ "iou": iou }));
    m.input(&vocab_path)?;
    m.input(&args.plan)?;
    m.input(&args.detections)?;
    m.output(&args.out, write_detections(std::slice::from_ref(&merged)).as_bytes())?;
    m.results = json!({ "tile_detections": before, "merged": merged.nodes.len() });
    m.write(&manifest_path_for(&args.out))
}
