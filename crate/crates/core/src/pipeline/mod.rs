//! Detection-prompter → box-prompt segmenter pipeline and its evaluation harness.

#[cfg(feature = "files")]
pub mod batch;
mod eval;
mod oracle;

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, BinaryMask, CrownInstance, PixelRect};
use crate::tiler::RasterImage;

pub use eval::{end_to_end_eval, evaluate_runs, run_raster, PipelineRaster, RasterRun};
pub use oracle::{DetectorNoise, OracleDetector, OracleSegmenter, SegmenterNoise};

/// One tile handed to the backends: pixels plus where they sit in the raster.
#[derive(Debug, Clone, Copy)]
pub struct TileView<'a> {
    pub id: u64,
    pub window: PixelRect,
    pub image: &'a RasterImage,
}

impl TileView<'_> {
    pub fn local_bounds(&self) -> BBox {
        BBox::new(0.0, 0.0, self.window.width as f64, self.window.height as f64)
    }
}

/// A box in tile-local pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

/// A mask in tile-local pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedMask {
    pub mask: BinaryMask,
    pub score: f64,
}

pub trait Detector: Send + Sync {
    fn detect(&self, tile: &TileView) -> Result<Vec<Detection>>;

    /// Backends that cannot take concurrent calls return true; the harness
    /// then serializes them.
    fn single_flight(&self) -> bool {
        false
    }
}

pub trait BoxPromptSegmenter: Send + Sync {
    /// Exactly one mask per prompt box, in prompt order.
    fn segment(&self, tile: &TileView, boxes: &[BBox]) -> Result<Vec<SegmentedMask>>;

    fn single_flight(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreCombiner {
    #[default]
    Product,
    GeometricMean,
    DetectionOnly,
}

impl ScoreCombiner {
    pub fn combine(self, det: f64, mask: f64) -> f64 {
        match self {
            ScoreCombiner::Product => det * mask,
            ScoreCombiner::GeometricMean => (det * mask).sqrt(),
            ScoreCombiner::DetectionOnly => det,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub max_instances: usize,
    pub score_combiner: ScoreCombiner,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_instances: crate::matching::DEFAULT_MAX_DETECTIONS,
            score_combiner: ScoreCombiner::Product,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_instances == 0 {
            return Err(Error::InvalidConfig("max_instances must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Tile-local instances of one tile.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineOutput {
    pub instances: Vec<CrownInstance>,
    pub empty_masks_dropped: usize,
}

/// Serializes calls to single-flight backends.
#[derive(Debug, Default)]
pub struct CallGate {
    detector: Mutex<()>,
    segmenter: Mutex<()>,
}

impl CallGate {
    fn detect(&self, det: &dyn Detector, tile: &TileView) -> Result<Vec<Detection>> {
        if det.single_flight() {
            let _g = self.detector.lock().unwrap_or_else(|e| e.into_inner());
            det.detect(tile)
        } else {
            det.detect(tile)
        }
    }

    fn segment(&self, seg: &dyn BoxPromptSegmenter, tile: &TileView, boxes: &[BBox]) -> Result<Vec<SegmentedMask>> {
        if seg.single_flight() {
            let _g = self.segmenter.lock().unwrap_or_else(|e| e.into_inner());
            seg.segment(tile, boxes)
        } else {
            seg.segment(tile, boxes)
        }
    }
}

/// Detect, keep the `max_instances` best boxes, segment each, combine scores.
pub fn run_pipeline(
    tile: &TileView,
    det: &dyn Detector,
    seg: &dyn BoxPromptSegmenter,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    run_gated(tile, det, seg, cfg, &CallGate::default())
}

pub(crate) fn run_gated(
    tile: &TileView,
    det: &dyn Detector,
    seg: &dyn BoxPromptSegmenter,
    cfg: &PipelineConfig,
    gate: &CallGate,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    if tile.window.is_empty() {
        return Err(Error::EmptyInput(format!("tile {} has no pixels", tile.id)));
    }
    let bounds = tile.local_bounds();
    let mut dets: Vec<Detection> = gate
        .detect(det, tile)?
        .into_iter()
        .map(|d| {
            if !(0.0..=1.0).contains(&d.score) {
                return Err(Error::Backend(format!("detector score {} outside [0, 1]", d.score)));
            }
            Ok(Detection {
                bbox: d.bbox.clamped(&bounds),
                score: d.score,
            })
        })
        .filter(|d| d.as_ref().map_or(true, |d| d.bbox.area() > 0.0))
        .collect::<Result<_>>()?;
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    dets.truncate(cfg.max_instances);
    if dets.is_empty() {
        return Ok(PipelineOutput::default());
    }
    let boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
    let masks = gate.segment(seg, tile, &boxes)?;
    if masks.len() != boxes.len() {
        return Err(Error::SegmenterContract {
            expected: boxes.len(),
            got: masks.len(),
        });
    }
    let local = PixelRect::new(0, 0, tile.window.width, tile.window.height);
    let mut out = PipelineOutput::default();
    for (d, m) in dets.iter().zip(masks) {
        let mask = m.mask.cropped(local);
        if mask.is_empty() {
            out.empty_masks_dropped += 1;
            log::warn!("tile {}: empty mask for box {:?} dropped", tile.id, d.bbox);
            continue;
        }
        let score = cfg.score_combiner.combine(d.score, m.score.clamp(0.0, 1.0));
        out.instances.push(CrownInstance::prediction(mask, score)?);
    }
    Ok(out)
}
