//! The bundled worked example must stay identical to `worked_example()`.
//! Run with `UPDATE_FIXTURES=1` to regenerate the files.

use std::path::PathBuf;

use omr_assembly::mung_io::{write_detections, write_mung_document, GrammarRules};
use omr_assembly::synth::worked_example;
use omr_cli::data::write_predictions;

fn expected() -> Vec<(&'static str, String)> {
    let f = worked_example();
    let classes: String = f.vocab.names().iter().map(|n| format!("{n}\n")).collect();
    let grammar = GrammarRules::new(Vec::new()).unwrap();
    vec![
        ("classes.txt", classes),
        (
            "worked_example.xml",
            write_mung_document(&f.ground_truth, &f.vocab, &grammar).unwrap(),
        ),
        (
            "detections.jsonl",
            write_detections(std::slice::from_ref(&f.detections)),
        ),
        (
            "predictions.jsonl",
            write_predictions(&[(f.detections.document_id.clone(), f.scored.clone())]).unwrap(),
        ),
    ]
}

#[test]
fn worked_example_fixtures_match_library() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/worked_example");
    let update = std::env::var_os("UPDATE_FIXTURES").is_some();
    for (name, content) in expected() {
        let path = dir.join(name);
        if update {
            std::fs::write(&path, &content).unwrap();
        }
        let on_disk = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(on_disk, content, "{name} is stale; rerun with UPDATE_FIXTURES=1");
    }
}
