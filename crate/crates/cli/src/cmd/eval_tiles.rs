//! Tile-level COCO-style metrics (mAP/mAR) from COCO ground truth and predictions.

use std::collections::BTreeMap;
use std::path::PathBuf;

use canopy_core::geometry::CrownInstance;
use canopy_core::io::{parse_coco, parse_coco_results};
use canopy_core::matching::{IouKind, DEFAULT_MAX_DETECTIONS};
use canopy_core::report::MetricReport;
use canopy_core::tile_metrics::{coco_summary, TileCase};
use canopy_core::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::Table;

use crate::config::typed;
use crate::inputs::{ground_truth, thresholds, Ctx};
use crate::output::OutDir;

#[derive(Debug, Serialize, Deserialize)]
pub struct Config {
    /// COCO file with the ground-truth tiles.
    pub gt: PathBuf,
    /// COCO results array, or a COCO file whose annotations carry `score`.
    pub predictions: PathBuf,
    pub gsd: f64,
    #[serde(default)]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default = "default_max_det")]
    pub max_detections: usize,
    #[serde(default)]
    pub iou: IouKind,
}

fn default_max_det() -> usize {
    DEFAULT_MAX_DETECTIONS
}

pub fn run(table: &Table, out: &mut OutDir) -> Result<String> {
    let cfg: Config = typed(table)?;
    if !(cfg.gsd > 0.0) {
        return Err(Error::InvalidConfig("gsd must be > 0".into()));
    }
    if cfg.max_detections == 0 {
        return Err(Error::InvalidConfig("max_detections must be ≥ 1".into()));
    }
    let ts = thresholds(&cfg.thresholds)?;
    let mut ctx = Ctx::new("eval-tiles", &cfg)?;
    let gt_tiles = parse_coco(&ctx.read_text(&cfg.gt)?).map_err(|e| prefix(e, &cfg.gt))?;
    let text = ctx.read_text(&cfg.predictions)?;
    let preds: BTreeMap<u64, Vec<CrownInstance>> = if text.trim_start().starts_with('[') {
        parse_coco_results(&text)
    } else {
        parse_coco(&text).map(|tiles| tiles.into_iter().map(|t| (t.id, t.instances)).collect())
    }
    .map_err(|e| prefix(e, &cfg.predictions))?;
    let known: std::collections::BTreeSet<u64> = gt_tiles.iter().map(|t| t.id).collect();
    if let Some(id) = preds.keys().find(|id| !known.contains(id)) {
        return Err(Error::Malformed(format!(
            "{}: predictions for image {id}, which is not in the ground truth",
            cfg.predictions.display()
        )));
    }
    let empty = Vec::new();
    let cases: Vec<TileCase> = gt_tiles
        .into_iter()
        .map(|t| {
            let p = preds.get(&t.id).unwrap_or(&empty);
            TileCase::new(t.id, p, &ground_truth(t.instances), cfg.gsd, cfg.iou)
        })
        .collect();
    let mut report = MetricReport::new(ts.values());
    report.tile = Some(coco_summary(&cases, &ts, cfg.max_detections));
    let report = report.with_manifest(ctx.manifest);
    out.write("report.json", report.to_json()?.as_bytes())?;
    Ok(report.summary())
}

pub(crate) fn prefix(e: Error, path: &std::path::Path) -> Error {
    match e {
        Error::Malformed(m) => Error::Malformed(format!("{}: {m}", path.display())),
        e => e,
    }
}
