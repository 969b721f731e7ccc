use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "seasynth",
    version,
    about = "Generate, filter, review and evaluate sea-state edited maritime images",
    propagate_version = true
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file; flags override its values [default: none]
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Random seed [default: config, else 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the pipeline [default: config, else 1]
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output location; its meaning depends on the subcommand [default: config output_root, else out]
    #[arg(long, global = true, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Log filter, e.g. info or seasynth_core=debug
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build edit masks (objects black, editable area white) for every source
    Mask(MaskArgs),
    /// Generate edited images without classifying or filtering them
    Generate(GenerateArgs),
    /// Classify the sea state of images
    Classify(ClassifyArgs),
    /// Run the object-preservation filter over generated images
    Check(CheckArgs),
    /// Run the full generate, classify, filter and record pipeline
    Run(RunArgs),
    /// Per-state generated and filtered counts with the passing rate
    Stats(StatsArgs),
    /// Train the sea-state classifier on SS1..SS4 folders
    TrainSeastate(TrainSeaStateArgs),
    /// Train the boat / not-boat preservation checker
    TrainChecker(TrainCheckerArgs),
    /// Build a boat / not-boat crop dataset with synthesized negatives
    BuildNegatives(BuildNegativesArgs),
    /// Per-state mAP of detections on the kept images
    Eval(EvalArgs),
    /// Human quality review
    #[command(subcommand)]
    Review(ReviewCommand),
    /// Write synthetic fixture data for trying the tools
    MakeFixtures(MakeFixturesArgs),
    /// Mock generation service speaking the HTTP backend protocol
    #[command(subcommand)]
    MockBackend(MockBackendCommand),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// COCO-style annotation file [default: config data.annotations]
    #[arg(long, value_name = "FILE")]
    pub annotations: Option<PathBuf>,
    /// Directory holding the source images [default: config data.image_root, else the annotation file's directory]
    #[arg(long, value_name = "DIR")]
    pub image_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Generation backend: mock or http [default: config, else mock]
    #[arg(long)]
    pub backend: Option<String>,
    /// Base URL of the http backend [default: config]
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Prompt profile [default: config, else bld-style]
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    /// Images requested per backend call [default: config, else 10]
    #[arg(long)]
    pub batch_size: Option<u32>,
    /// Per-request deadline in seconds [default: config, else 120]
    #[arg(long)]
    pub timeout_s: Option<f64>,
    /// Images generated per source [default: config, else 1]
    #[arg(long)]
    pub images_per_source: Option<u64>,
    /// Box dilation in pixels when building masks [default: config, else 0]
    #[arg(long)]
    pub mask_dilation: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ClassifierArgs {
    /// Sea-state classifier mode [default: config, else synthetic-feature]
    #[arg(long, value_enum)]
    pub classifier_mode: Option<ModeArg>,
    /// Trained sea-state model directory [default: config]
    #[arg(long, value_name = "DIR")]
    pub classifier_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckerArgs {
    /// Preservation checker mode [default: config, else synthetic-feature]
    #[arg(long, value_enum)]
    pub checker_mode: Option<ModeArg>,
    /// Trained checker model directory [default: config]
    #[arg(long, value_name = "DIR")]
    pub checker_model: Option<PathBuf>,
    /// Boat confidence threshold [default: config, else 0.5]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Check every crop instead of stopping at the first boat [default: off]
    #[arg(long)]
    pub audit: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProfileArg {
    BldStyle,
    InpaintStyle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Learned,
    SyntheticFeature,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Box dilation in pixels [default: config, else 0]
    #[arg(long)]
    pub dilation: Option<u32>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Image files or directories of PNG files
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    /// Print JSON lines instead of a table
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Output of `generate`, or a pipeline output root
    #[arg(long, value_name = "DIR")]
    pub generated: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub checker: CheckerArgs,
    /// Print JSON lines instead of a table
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    #[command(flatten)]
    pub checker: CheckerArgs,
    /// Also store discarded images under discarded/ [default: config, else off]
    #[arg(long)]
    pub keep_discarded: bool,
    /// Print the run summary as JSON
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Manifest file [default: <output>/manifest.jsonl]
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Print JSON instead of a table
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TrainSeaStateArgs {
    /// Directory with SS1, SS2, SS3 and SS4 subfolders of PNG images
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Input side length after center-pad-resize
    #[arg(long, default_value_t = 32)]
    pub resolution: u32,
    /// Share of each class held out for testing
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Random horizontal flips on every class
    #[arg(long)]
    pub hflip: bool,
    /// Random blur on every class
    #[arg(long)]
    pub blur: bool,
}

#[derive(Debug, Args)]
pub struct TrainCheckerArgs {
    /// Directory of boat crops [default: <dataset>/boat]
    #[arg(long, value_name = "DIR")]
    pub positives: Option<PathBuf>,
    /// Directory of not-boat crops [default: <dataset>/not_boat]
    #[arg(long, value_name = "DIR")]
    pub negatives: Option<PathBuf>,
    /// Output of build-negatives, holding boat/ and not_boat/
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub resolution: u32,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Random blur on positives as well as flips
    #[arg(long)]
    pub blur_augment: bool,
}

#[derive(Debug, Args)]
pub struct BuildNegativesArgs {
    /// Output of `generate`, or a pipeline output root
    #[arg(long, value_name = "DIR")]
    pub generated: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 2)]
    pub backgrounds_per_image: usize,
    /// Fixed background crop size as WxH [default: size of a random source box]
    #[arg(long, value_name = "WxH", value_parser = parse_size)]
    pub background_size: Option<(u32, u32)>,
    /// Skip quarter-shifted negatives
    #[arg(long)]
    pub no_quarter: bool,
    /// Skip writing ground-truth boat crops
    #[arg(long)]
    pub no_positives: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detections CSV: image_id,x,y,w,h,score[,class_label]
    #[arg(long, value_name = "FILE")]
    pub detections: PathBuf,
    /// Pipeline output root holding manifest.jsonl [default: --output]
    #[arg(long, value_name = "DIR")]
    pub run: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Print JSON instead of a table
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    /// Start the review service
    Serve(ReviewServeArgs),
    /// Create a review session on a running service
    Create(ReviewCreateArgs),
    /// Show the next unreviewed item of a session
    Next(ReviewSessionArgs),
    /// Submit a verdict for one item
    Submit(ReviewSubmitArgs),
    /// Good-image rate over sessions
    Stats(ReviewStatsArgs),
}

#[derive(Debug, Args)]
pub struct ReviewServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Pipeline output root holding manifest.jsonl [default: --output]
    #[arg(long, value_name = "DIR")]
    pub run: Option<PathBuf>,
    /// Where session and verdict ledgers live [default: <run>/review]
    #[arg(long, value_name = "DIR")]
    pub review_dir: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct UrlArg {
    /// Review service base URL
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    pub url: String,
}

#[derive(Debug, Args)]
pub struct ReviewCreateArgs {
    #[command(flatten)]
    pub url: UrlArg,
    #[arg(long)]
    pub session_id: Option<String>,
    /// Label for the method under review
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub sample_size: usize,
    /// Sample only kept images
    #[arg(long)]
    pub kept_only: bool,
    /// Sample only this sea state (1-4)
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub sea_state: Option<u8>,
    /// Sample only this backend
    #[arg(long = "backend-name")]
    pub backend_name: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReviewSessionArgs {
    #[command(flatten)]
    pub url: UrlArg,
    pub session_id: String,
}

#[derive(Debug, Args)]
pub struct ReviewSubmitArgs {
    #[command(flatten)]
    pub url: UrlArg,
    pub session_id: String,
    pub edited_id: String,
    /// Background shows only island, ocean or cloud
    #[arg(long, action = ArgAction::Set, required = true)]
    pub background_valid: bool,
    /// Background looks realistic
    #[arg(long, action = ArgAction::Set, required = true)]
    pub background_realistic: bool,
    /// At least one boat is preserved
    #[arg(long, action = ArgAction::Set, required = true)]
    pub boat_preserved: bool,
    #[arg(long, default_value = "")]
    pub reviewer: String,
}

#[derive(Debug, Args)]
pub struct ReviewStatsArgs {
    #[command(flatten)]
    pub url: UrlArg,
    /// Session ids [default: all sessions]
    pub sessions: Vec<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FixtureKind {
    /// Source images with boats plus annotations.json
    Sources,
    /// SS1..SS4 folders for train-seastate
    SeaState,
    /// boat/ and not_boat/ folders for train-checker
    Checker,
}

#[derive(Debug, Args)]
pub struct MakeFixturesArgs {
    #[arg(long, value_enum, default_value = "sources")]
    pub kind: FixtureKind,
    /// Number of source images, or images per class
    #[arg(long, default_value_t = 12)]
    pub count: usize,
    #[arg(long, default_value_t = 96)]
    pub width: u32,
    #[arg(long, default_value_t = 64)]
    pub height: u32,
}

#[derive(Debug, Subcommand)]
pub enum MockBackendCommand {
    /// Serve POST /generate with the procedural mock backend
    Serve(MockServeArgs),
}

#[derive(Debug, Args)]
pub struct MockServeArgs {
    #[arg(long, default_value = "127.0.0.1:8090")]
    pub addr: SocketAddr,
    /// Corrupt objects in every output
    #[arg(long)]
    pub corrupt_objects: bool,
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let w: u32 = w.parse().map_err(|_| "bad width")?;
    let h: u32 = h.parse().map_err(|_| "bad height")?;
    if w == 0 || h == 0 {
        return Err("sizes must be positive".into());
    }
    Ok((w, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_size("12x7"), Ok((12, 7)));
        assert!(parse_size("0x7").is_err());
        assert!(parse_size("12").is_err());
    }
}
