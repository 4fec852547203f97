use std::collections::BTreeMap;
use std::sync::Arc;

use super::{run_gated, BoxPromptSegmenter, CallGate, Detector, PipelineConfig, TileView};
use crate::error::{Error, Result};
use crate::geometry::{CrownInstance, RasterGrid};
use crate::matching::{IouKind, DEFAULT_MAX_DETECTIONS};
use crate::raster_metrics::{aggregate_tiles, pooled_score, AggregationConfig, RasterCase, TileLayout};
use crate::report::{MetricReport, NamedScore};
use crate::tile_metrics::{coco_summary, ThresholdSet, TileCase};
use crate::tiler::{clip_annotations, cut_tile, plan_with_mask, zone_crowns, zone_mask, RasterImage, TilingSpec};

/// One orthomosaic with its ground truth and the backends that will process it.
pub struct PipelineRaster {
    pub name: String,
    pub image: RasterImage,
    pub grid: RasterGrid,
    pub gts: Vec<CrownInstance>,
    pub detector: Arc<dyn Detector>,
    pub segmenter: Arc<dyn BoxPromptSegmenter>,
}

/// Per-tile predictions and clipped ground truth of one raster.
#[derive(Debug, Clone)]
pub struct RasterRun {
    pub name: String,
    pub gsd: f64,
    pub layout: TileLayout,
    /// Tile-local predictions keyed by tile id.
    pub tile_preds: BTreeMap<u64, Vec<CrownInstance>>,
    /// Tile-local clipped ground truth keyed by tile id.
    pub tile_gts: BTreeMap<u64, Vec<CrownInstance>>,
    /// Ground truth owned by the tiling zone, raster frame.
    pub gts: Vec<CrownInstance>,
    pub empty_masks_dropped: usize,
}

/// Tile the raster and run the pipeline on every tile.
pub fn run_raster(r: &PipelineRaster, tiling: &TilingSpec, cfg: &PipelineConfig) -> Result<RasterRun> {
    tiling.validate()?;
    cfg.validate()?;
    if r.image.width != r.grid.width || r.image.height != r.grid.height {
        return Err(Error::Image(format!("{}: image and grid sizes differ", r.name)));
    }
    let zone = zone_mask(&r.grid, tiling.zone.as_ref());
    let windows = plan_with_mask(&r.grid, tiling, zone.as_ref());
    let gts = zone_crowns(tiling, &r.gts);
    let gate = CallGate::default();
    let one = |w: &crate::tiler::TileWindow| -> Result<(u64, Vec<CrownInstance>, Vec<CrownInstance>, usize)> {
        let tile = cut_tile(&r.image, w, zone.as_ref())?;
        let view = TileView {
            id: w.id,
            window: w.rect,
            image: &tile.image,
        };
        let out = run_gated(&view, r.detector.as_ref(), r.segmenter.as_ref(), cfg, &gate)?;
        let clipped = clip_annotations(&gts, &w.rect, tiling)
            .into_iter()
            .map(|c| c.crown)
            .collect();
        Ok((w.id, out.instances, clipped, out.empty_masks_dropped))
    };
    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        windows.par_iter().map(one).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = windows.iter().map(one).collect::<Result<_>>()?;

    let mut run = RasterRun {
        name: r.name.clone(),
        gsd: r.grid.gsd,
        layout: TileLayout::new(r.grid.extent()),
        tile_preds: BTreeMap::new(),
        tile_gts: BTreeMap::new(),
        gts,
        empty_masks_dropped: 0,
    };
    for (w, (id, preds, clipped, dropped)) in windows.iter().zip(results) {
        run.layout = run.layout.with_tile(id, w.rect);
        run.tile_preds.insert(id, preds);
        run.tile_gts.insert(id, clipped);
        run.empty_masks_dropped += dropped;
    }
    Ok(run)
}

/// Tile → pipeline → tile metrics, plus NMS aggregation → raster metrics.
///
/// Tile-level scores pool all tiles of all rasters; raster-level counts are
/// pooled across rasters.
pub fn end_to_end_eval(
    rasters: &[PipelineRaster],
    tiling: &TilingSpec,
    agg: &AggregationConfig,
    cfg: &PipelineConfig,
    thresholds: &ThresholdSet,
) -> Result<MetricReport> {
    if rasters.is_empty() {
        return Err(Error::EmptyInput("no rasters to evaluate".into()));
    }
    agg.validate()?;
    let runs: Vec<RasterRun> = rasters
        .iter()
        .map(|r| run_raster(r, tiling, cfg))
        .collect::<Result<_>>()?;
    evaluate_runs(&runs, agg, thresholds)
}

/// Score finished pipeline runs: tile metrics on the raw tile outputs,
/// raster metrics after aggregation.
pub fn evaluate_runs(runs: &[RasterRun], agg: &AggregationConfig, thresholds: &ThresholdSet) -> Result<MetricReport> {
    if runs.is_empty() {
        return Err(Error::EmptyInput("no rasters to evaluate".into()));
    }
    agg.validate()?;
    let mut tile_cases = Vec::new();
    let mut raster_cases = Vec::new();
    let mut report = MetricReport::new(thresholds.values());
    for (ri, run) in runs.iter().enumerate() {
        for (id, preds) in &run.tile_preds {
            let gts = &run.tile_gts[id];
            tile_cases.push(TileCase::new(
                ((ri as u64) << 32) | id,
                preds,
                gts,
                run.gsd,
                IouKind::Mask,
            ));
        }
        let merged = aggregate_tiles(&run.tile_preds, &run.layout, agg)?;
        let case = RasterCase::new(&merged, &run.gts, run.gsd, IouKind::Mask)?;
        report.rasters.push(NamedScore {
            name: run.name.clone(),
            score: pooled_score(std::slice::from_ref(&case), thresholds),
        });
        raster_cases.push(case);
        report.empty_masks_dropped += run.empty_masks_dropped;
    }
    report.tile = Some(coco_summary(&tile_cases, thresholds, DEFAULT_MAX_DETECTIONS));
    report.raster = Some(pooled_score(&raster_cases, thresholds));
    Ok(report)
}
