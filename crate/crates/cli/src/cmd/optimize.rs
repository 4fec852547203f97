//! Grid search over the NMS IoU and confidence thresholds on validation rasters.

use canopy_core::raster_metrics::{
    optimize_thresholds, write_audit_csv, AggregationConfig, Objective, ThresholdGrid, ValidationRaster,
};
use canopy_core::report::RunManifest;
use canopy_core::Result;
use serde::{Deserialize, Serialize};
use toml::Table;

use super::{load_evaluated, RasterEntry};
use crate::config::typed;
use crate::inputs::{thresholds, Ctx};
use crate::output::OutDir;

#[derive(Debug, Serialize, Deserialize)]
pub struct Config {
    #[serde(default)]
    pub thresholds: Option<Vec<f64>>,
    /// Fixed aggregation settings; the searched fields are overwritten.
    #[serde(default)]
    pub aggregation: AggregationConfig,
    #[serde(default)]
    pub grid: ThresholdGrid,
    #[serde(default)]
    pub objective: Objective,
    pub rasters: Vec<RasterEntry>,
}

#[derive(Serialize)]
struct Report<'a> {
    objective: Objective,
    best: &'a AggregationConfig,
    best_objective: f64,
    cells: usize,
    manifest: RunManifest,
}

#[derive(Serialize)]
struct Emitted<'a> {
    aggregation: &'a AggregationConfig,
}

pub fn run(table: &Table, out: &mut OutDir) -> Result<String> {
    let cfg: Config = typed(table)?;
    cfg.aggregation.validate()?;
    cfg.grid.validate()?;
    let ts = thresholds(&cfg.thresholds)?;
    let mut ctx = Ctx::new("optimize-thresholds", &cfg)?;
    let val: Vec<ValidationRaster> = load_evaluated(&cfg.rasters, &mut ctx)?
        .into_iter()
        .map(|r| ValidationRaster {
            tile_preds: r.tile_preds,
            layout: r.layout,
            gts: r.gts,
            gsd: r.grid.gsd,
        })
        .collect();
    let res = optimize_thresholds(&val, &cfg.grid, cfg.objective, &cfg.aggregation, &ts)?;

    let mut csv = Vec::new();
    write_audit_csv(&res.cells, &mut csv)?;
    out.write("audit.csv", &csv)?;
    let emitted = toml::to_string(&Emitted { aggregation: &res.best })
        .map_err(|e| canopy_core::Error::InvalidConfig(format!("cannot serialize result: {e}")))?;
    out.write("aggregation.toml", emitted.as_bytes())?;
    out.json(
        "report.json",
        &Report {
            objective: res.objective,
            best: &res.best,
            best_objective: res.best_objective,
            cells: res.cells.len(),
            manifest: ctx.manifest,
        },
    )?;
    let what = match res.objective {
        Objective::Mrf1 => "mRF1".to_string(),
        Objective::Rf1At(t) => format!("RF1@{t}"),
    };
    Ok(format!(
        "best nms_iou {:.2}  confidence {:.2}  {what} {:.1}  ({} cells)",
        res.best.nms_iou,
        res.best.confidence_threshold,
        100.0 * res.best_objective,
        res.cells.len()
    ))
}
