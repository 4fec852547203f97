pub mod agreement;
pub mod eval_raster;
pub mod eval_tiles;
pub mod optimize;
pub mod pipeline;
pub mod tile;

use std::collections::BTreeMap;
use std::path::PathBuf;

use canopy_core::geometry::{CrownInstance, RasterGrid};
use canopy_core::raster_metrics::TileLayout;
use canopy_core::synth::SceneSpec;
use canopy_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::inputs::{ground_truth, load_crowns, load_tiled, require_predictions, Ctx, GridSource};

/// One orthomosaic in a multi-raster config (`[[rasters]]`).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RasterEntry {
    pub name: Option<String>,
    /// GeoTIFF; alternatively `width`, `height`, `gsd` (+ `geotransform`).
    pub raster: Option<PathBuf>,
    pub width: Option<u64>,
    pub height: Option<u64>,
    pub gsd: Option<f64>,
    pub geotransform: Option<[f64; 6]>,
    pub crs: Option<String>,
    /// Ground-truth crowns: GeoJSON or a single-image COCO file.
    pub gt: Option<PathBuf>,
    /// Predictions: tiled COCO (images with `window`) or GeoJSON with `score`.
    pub predictions: Option<PathBuf>,
    /// Generate the raster and its ground truth instead of reading them.
    pub synthetic: Option<SceneSpec>,
}

impl RasterEntry {
    pub fn grid_source(&self) -> GridSource {
        GridSource {
            raster: self.raster.clone(),
            width: self.width,
            height: self.height,
            gsd: self.gsd,
            geotransform: self.geotransform,
            crs: self.crs.clone(),
        }
    }

    pub fn display_name(&self, index: usize) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        self.raster
            .as_ref()
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("raster{index}"))
    }

    pub fn require_gt(&self, index: usize) -> Result<&PathBuf> {
        self.gt
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig(format!("rasters[{index}]: `gt` is required")))
    }
}

/// Ground truth and tiled predictions of one raster.
pub struct Evaluated {
    pub name: String,
    pub grid: RasterGrid,
    pub gts: Vec<CrownInstance>,
    pub tile_preds: BTreeMap<u64, Vec<CrownInstance>>,
    pub layout: TileLayout,
}

pub fn load_evaluated(rasters: &[RasterEntry], ctx: &mut Ctx) -> Result<Vec<Evaluated>> {
    if rasters.is_empty() {
        return Err(Error::InvalidConfig("no [[rasters]] given".into()));
    }
    rasters
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let name = r.display_name(i);
            let grid = r.grid_source().grid(ctx)?;
            let gts = ground_truth(load_crowns(r.require_gt(i)?, &grid, ctx)?);
            let pred_path = r
                .predictions
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig(format!("rasters[{i}]: `predictions` is required")))?;
            let (tile_preds, layout) = load_tiled(pred_path, &grid, Some(&name), ctx)?;
            require_predictions(&tile_preds, pred_path)?;
            Ok(Evaluated {
                name,
                grid,
                gts,
                tile_preds,
                layout,
            })
        })
        .collect()
}
