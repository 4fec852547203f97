//! Raster-level RF1 after merging tile predictions.

use canopy_core::matching::IouKind;
use canopy_core::raster_metrics::{aggregate_tiles, pooled_score, AggregationConfig, RasterCase};
use canopy_core::report::{MetricReport, NamedScore};
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
    #[serde(default)]
    pub aggregation: AggregationConfig,
    pub rasters: Vec<RasterEntry>,
}

pub fn run(table: &Table, out: &mut OutDir) -> Result<String> {
    let cfg: Config = typed(table)?;
    cfg.aggregation.validate()?;
    let ts = thresholds(&cfg.thresholds)?;
    let mut ctx = Ctx::new("eval-raster", &cfg)?;
    let rasters = load_evaluated(&cfg.rasters, &mut ctx)?;
    let mut report = MetricReport::new(ts.values());
    let mut cases = Vec::with_capacity(rasters.len());
    for r in &rasters {
        let merged = aggregate_tiles(&r.tile_preds, &r.layout, &cfg.aggregation)?;
        let case = RasterCase::new(&merged, &r.gts, r.grid.gsd, IouKind::Mask)?;
        report.rasters.push(NamedScore {
            name: r.name.clone(),
            score: pooled_score(std::slice::from_ref(&case), &ts),
        });
        cases.push(case);
    }
    report.raster = Some(pooled_score(&cases, &ts));
    let report = report.with_manifest(ctx.manifest);
    out.write("report.json", report.to_json()?.as_bytes())?;
    Ok(report.summary())
}
