//! Command-line front end for notation assembly experiments.

pub mod args;
pub mod commands;
pub mod config;
pub mod data;
pub mod manifest;

use anyhow::Result;

use args::{Cli, Command};
use commands::{corpus, eval, tiles, train};
use config::FileConfig;

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Convert(a) => corpus::convert(a),
        Command::SynthCorpus(a) => corpus::synth(a, &cfg),
        Command::Split(a) => corpus::split(a, &cfg),
        Command::Simulate(a) => corpus::simulate(a, &cfg),
        Command::CalibrateFilter(a) => corpus::calibrate(a, &cfg),
        Command::Train(a) => train::train(a, &cfg),
        Command::Predict(a) => train::predict(a, &cfg),
        Command::EvalAssembly(a) => eval::eval_assembly(a, &cfg),
        Command::EvalDetection(a) => eval::eval_detection(a, &cfg),
        Command::TilePlan(a) => tiles::plan(a, &cfg),
        Command::MergeTiles(a) => tiles::merge(a, &cfg),
        Command::ExportPr(a) => eval::export_pr(a),
    }
}
