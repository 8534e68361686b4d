use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "omr",
    version,
    about = "Notation assembly training and Match+AUC evaluation for optical music recognition"
)]
pub struct Cli {
    /// Sectioned TOML configuration; command-line flags take precedence over its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse MuNG XML annotations into a corpus file.
    Convert(ConvertArgs),
    /// Generate a synthetic MuNG corpus with its class list and grammar.
    SynthCorpus(SynthArgs),
    /// Split corpus documents into train, validation and test sets.
    Split(SplitArgs),
    /// Produce simulated detector output from ground truth.
    Simulate(SimulateArgs),
    /// Choose the candidate-pair distance filter from training edges.
    CalibrateFilter(CalibrateArgs),
    /// Train the edge classifier for one or more seeds.
    Train(TrainArgs),
    /// Score candidate pairs of detected symbols with a checkpoint.
    Predict(PredictArgs),
    /// Match+AUC of predicted edges against ground truth.
    EvalAssembly(EvalAssemblyArgs),
    /// VOC mAP and weighted mAP of detections.
    EvalDetection(EvalDetectionArgs),
    /// Lay out margin-extended detector tiles for a page.
    TilePlan(TilePlanArgs),
    /// Combine per-tile detections into page detections.
    MergeTiles(MergeTilesArgs),
    /// Write the precision-recall curve of an assembly report as CSV.
    ExportPr(ExportPrArgs),
}

/// Where ground truth comes from: a converted corpus or raw MuNG XML.
#[derive(Debug, Args)]
pub struct GroundTruthArgs {
    /// Corpus file written by `convert`.
    #[arg(long, conflicts_with = "mung", required_unless_present = "mung")]
    pub corpus: Option<PathBuf>,

    /// MuNG XML file or directory of `.xml` files.
    #[arg(long, requires = "class_list")]
    pub mung: Option<PathBuf>,

    /// Class names, one per line, or a MuNG class-list XML.
    #[arg(long)]
    pub class_list: Option<PathBuf>,
}

/// Where the class vocabulary comes from.
#[derive(Debug, Args)]
pub struct VocabArgs {
    /// Corpus file written by `convert`.
    #[arg(long, conflicts_with = "class_list", required_unless_present = "class_list")]
    pub corpus: Option<PathBuf>,

    /// Class names, one per line, or a MuNG class-list XML.
    #[arg(long)]
    pub class_list: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// MuNG XML file or directory of `.xml` files.
    #[arg(long)]
    pub input: PathBuf,

    /// Class names, one per line, or a MuNG class-list XML.
    #[arg(long)]
    pub class_list: PathBuf,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; receives `annotations/`, `classes.txt` and `grammar.tsv`.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long)]
    pub pages: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub rows: Option<usize>,

    #[arg(long)]
    pub width: Option<f64>,

    #[arg(long)]
    pub height: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub train: Option<f64>,

    #[arg(long)]
    pub validation: Option<f64>,

    #[arg(long)]
    pub test: Option<f64>,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SubsetArgs {
    /// Split file; restricts documents to `--subset`.
    #[arg(long)]
    pub split: Option<PathBuf>,

    /// Comma-separated split parts: train, validation, test.
    #[arg(long, requires = "split", value_delimiter = ',')]
    pub subset: Vec<String>,

    /// Class subset: all, essential, primitive20, or a file of class names.
    #[arg(long)]
    pub classes: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub corpus: PathBuf,

    #[command(flatten)]
    pub subset: SubsetArgs,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Box jitter as a fraction of the box side.
    #[arg(long)]
    pub jitter: Option<f64>,

    /// Class confusion temperature; 0 keeps one-hot classes.
    #[arg(long)]
    pub temperature: Option<f64>,

    #[arg(long)]
    pub drop: Option<f64>,

    /// Expected spurious boxes per true box.
    #[arg(long)]
    pub spurious: Option<f64>,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub corpus: PathBuf,

    #[command(flatten)]
    pub subset: SubsetArgs,

    /// Fraction of ground-truth edges the filter must keep.
    #[arg(long)]
    pub target: Option<f64>,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Filter file written by `calibrate-filter`.
    #[arg(long, conflicts_with = "max_center_distance")]
    pub filter: Option<PathBuf>,

    /// Maximum center distance of a candidate pair, as a fraction of page width.
    #[arg(long)]
    pub max_center_distance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,

    #[arg(long)]
    pub split: PathBuf,

    /// Output directory for checkpoints, histories and the run summary.
    #[arg(long)]
    pub out: PathBuf,

    /// baseline, pipelined or pipelined-soft.
    #[arg(long)]
    pub mode: Option<String>,

    /// Class subset: all, essential, primitive20, or a file of class names.
    #[arg(long)]
    pub classes: Option<String>,

    /// Number of runs; seeds are `seed`, `seed + 1`, ...
    #[arg(long)]
    pub seeds: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub lr: Option<f64>,

    #[arg(long)]
    pub eval_every: Option<usize>,

    #[arg(long)]
    pub t_match: Option<f64>,

    #[command(flatten)]
    pub filter: FilterArgs,

    /// Detector output for training and validation pages; simulated from the
    /// `[noise]` configuration when absent.
    #[arg(long)]
    pub detections: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[arg(long)]
    pub detections: PathBuf,

    #[command(flatten)]
    pub vocab: VocabArgs,

    #[command(flatten)]
    pub filter: FilterArgs,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalAssemblyArgs {
    #[command(flatten)]
    pub ground_truth: GroundTruthArgs,

    #[arg(long)]
    pub detections: PathBuf,

    /// Scored pairs written by `predict`.
    #[arg(long)]
    pub predictions: PathBuf,

    #[arg(long)]
    pub t_match: Option<f64>,

    /// Threshold for the reported precision and recall.
    #[arg(long)]
    pub t_predict: Option<f64>,

    /// Also compute detection mAP.
    #[arg(long)]
    pub detection_metrics: bool,

    /// JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Precision-recall curve as CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalDetectionArgs {
    #[command(flatten)]
    pub ground_truth: GroundTruthArgs,

    #[arg(long)]
    pub detections: PathBuf,

    #[arg(long)]
    pub iou: Option<f64>,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TilePlanArgs {
    /// Plan every page of a corpus instead of one page size.
    #[arg(long, conflicts_with_all = ["width", "height"])]
    pub corpus: Option<PathBuf>,

    #[arg(long, requires = "height", required_unless_present = "corpus")]
    pub width: Option<f64>,

    #[arg(long, requires = "width")]
    pub height: Option<f64>,

    #[arg(long)]
    pub crop_size: Option<f64>,

    #[arg(long)]
    pub margin: Option<f64>,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MergeTilesArgs {
    /// Single-page plan written by `tile-plan`.
    #[arg(long)]
    pub plan: PathBuf,

    /// Per-tile detections; every header carries a `tile` index.
    #[arg(long)]
    pub detections: PathBuf,

    #[command(flatten)]
    pub vocab: VocabArgs,

    #[arg(long)]
    pub iou: Option<f64>,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportPrArgs {
    /// Report written by `eval-assembly --out`.
    #[arg(long)]
    pub report: PathBuf,

    #[arg(long)]
    pub out: PathBuf,
}
