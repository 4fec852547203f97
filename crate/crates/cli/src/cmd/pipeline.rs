//! Detector → box-prompted segmenter over tiles, then tile and raster metrics.

use std::sync::Arc;

use canopy_core::geometry::CrownInstance;
use canopy_core::io::geotiff::write_geotiff;
use canopy_core::io::{save_geojson, to_coco_json, CocoTile};
use canopy_core::pipeline::batch::{BatchConfig, BatchDetector, BatchSegmenter};
use canopy_core::pipeline::{
    evaluate_runs, run_raster, BoxPromptSegmenter, Detector, DetectorNoise, OracleDetector, OracleSegmenter,
    PipelineConfig, PipelineRaster, RasterRun, SegmenterNoise,
};
use canopy_core::raster_metrics::AggregationConfig;
use canopy_core::synth::generate;
use canopy_core::tiler::TilingSpec;
use canopy_core::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::Table;

use super::RasterEntry;
use crate::config::typed;
use crate::inputs::{ground_truth, load_crowns, thresholds, Ctx};
use crate::output::OutDir;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    /// Ground-truth-driven simulation with configurable noise.
    Oracle {
        #[serde(default)]
        detector: DetectorNoise,
        #[serde(default)]
        segmenter: SegmenterNoise,
    },
    /// External processes exchanging files in a directory.
    Batch(BatchConfig),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Tiling {
    pub tile_size: u64,
    pub overlap: f64,
    #[serde(default)]
    pub min_annotation_area_ratio: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Config {
    #[serde(default)]
    pub thresholds: Option<Vec<f64>>,
    pub tiling: Tiling,
    #[serde(default)]
    pub aggregation: AggregationConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    pub backend: Backend,
    /// Also save generated rasters and their ground truth.
    #[serde(default)]
    pub write_inputs: bool,
    pub rasters: Vec<RasterEntry>,
}

pub fn run(table: &Table, out: &mut OutDir) -> Result<String> {
    let cfg: Config = typed(table)?;
    let tiling = TilingSpec::new(cfg.tiling.tile_size, cfg.tiling.overlap)?
        .with_min_area_ratio(cfg.tiling.min_annotation_area_ratio)?;
    cfg.aggregation.validate()?;
    cfg.pipeline.validate()?;
    let ts = thresholds(&cfg.thresholds)?;
    if cfg.rasters.is_empty() {
        return Err(Error::InvalidConfig("no [[rasters]] given".into()));
    }
    let mut ctx = Ctx::new("pipeline-run", &cfg)?;
    ctx.manifest.seed = Some(cfg.pipeline.seed);
    let batch: Option<(Arc<dyn Detector>, Arc<dyn BoxPromptSegmenter>)> = match &cfg.backend {
        Backend::Batch(b) => Some((
            Arc::new(BatchDetector::new(b.clone())?),
            Arc::new(BatchSegmenter::new(b.clone())?),
        )),
        Backend::Oracle { .. } => None,
    };

    let mut runs: Vec<RasterRun> = Vec::with_capacity(cfg.rasters.len());
    for (i, entry) in cfg.rasters.iter().enumerate() {
        let name = entry.display_name(i);
        let (image, grid, gts): (_, _, Vec<CrownInstance>) = match &entry.synthetic {
            Some(spec) => {
                let scene = generate(spec)?;
                if cfg.write_inputs {
                    write_geotiff(
                        out.path(&format!("{name}.tif")),
                        &scene.image,
                        None,
                        &scene.grid.geotransform,
                        &scene.grid.crs,
                    )?;
                    out.note(format!("{name}.tif"));
                    save_geojson(out.path(&format!("{name}.gt.geojson")), &scene.crowns, &scene.grid)?;
                    out.note(format!("{name}.gt.geojson"));
                }
                (scene.image, scene.grid, scene.crowns)
            }
            None => {
                let (image, grid) = entry.grid_source().image(&mut ctx)?;
                let gts = ground_truth(load_crowns(entry.require_gt(i)?, &grid, &mut ctx)?);
                (image, grid, gts)
            }
        };
        let (detector, segmenter) = match (&cfg.backend, &batch) {
            (_, Some((d, s))) => (d.clone(), s.clone()),
            (Backend::Oracle { detector, segmenter }, None) => {
                let seed = cfg.pipeline.seed.wrapping_add(i as u64);
                (
                    Arc::new(OracleDetector::new(&gts, *detector, seed)) as Arc<dyn Detector>,
                    Arc::new(OracleSegmenter::new(&gts, *segmenter, seed)) as Arc<dyn BoxPromptSegmenter>,
                )
            }
            (Backend::Batch(_), None) => unreachable!("batch backends are built up front"),
        };
        let raster = PipelineRaster {
            name: name.clone(),
            image,
            grid,
            gts,
            detector,
            segmenter,
        };
        let run = run_raster(&raster, &tiling, &cfg.pipeline)?;
        let tiles: Vec<CocoTile> = run
            .tile_preds
            .iter()
            .map(|(id, preds)| {
                let w = run.layout.windows[id];
                let mut t = CocoTile::new(*id, w.width as u64, w.height as u64);
                t.window = Some(w);
                t.raster = Some(name.clone());
                t.instances = preds.clone();
                t
            })
            .collect();
        out.write(&format!("{name}.predictions.json"), to_coco_json(&tiles)?.as_bytes())?;
        runs.push(run);
    }
    let report = evaluate_runs(&runs, &cfg.aggregation, &ts)?.with_manifest(ctx.manifest);
    out.write("report.json", report.to_json()?.as_bytes())?;
    Ok(report.summary())
}
