//! `canopy`: tiling, evaluation and pipeline runs for tree-crown segmentation.

mod cmd;
mod config;
mod inputs;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use toml::Table;

use crate::output::OutDir;

#[derive(Parser)]
#[command(
    name = "canopy",
    version,
    about = "Tree-crown segmentation: tiling, metrics and pipeline runs"
)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; repeat to layer files, later ones win.
    #[arg(short, long = "config", value_name = "FILE")]
    configs: Vec<PathBuf>,
    /// Override a config key, e.g. `--set aggregation.nms_iou=0.6`.
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory.
    #[arg(short, long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Cut a GeoTIFF into overlapping tiles, clip annotations, report split census.
    Tile(Common),
    /// Tile-level mAP/mAR from COCO ground truth and predictions.
    EvalTiles(Common),
    /// Raster-level RF1 after NMS aggregation of tile predictions.
    EvalRaster(Common),
    /// Grid-search NMS IoU and confidence thresholds on validation rasters.
    OptimizeThresholds(Common),
    /// Pairwise inter-annotator agreement matrix.
    Agreement(Common),
    /// Run detector + segmenter over tiles and evaluate end to end.
    PipelineRun(Common),
}

type Runner = fn(&Table, &mut OutDir) -> canopy_core::Result<String>;

impl Command {
    fn parts(&self) -> (&'static str, &Common, Runner) {
        match self {
            Command::Tile(c) => ("tile", c, cmd::tile::run),
            Command::EvalTiles(c) => ("eval-tiles", c, cmd::eval_tiles::run),
            Command::EvalRaster(c) => ("eval-raster", c, cmd::eval_raster::run),
            Command::OptimizeThresholds(c) => ("optimize-thresholds", c, cmd::optimize::run),
            Command::Agreement(c) => ("agreement", c, cmd::agreement::run),
            Command::PipelineRun(c) => ("pipeline-run", c, cmd::pipeline::run),
        }
    }
}

fn execute(cli: &Cli) -> canopy_core::Result<String> {
    let (name, common, run) = cli.command.parts();
    let table = config::load(&common.configs, &common.sets)?;
    let mut out = OutDir::create(&common.out)?;
    let summary = run(&table, &mut out)?;
    out.finish(name)?;
    Ok(summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(summary) => {
            if !summary.is_empty() {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
