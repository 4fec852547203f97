//! Browser bindings for three interactive views: a tiling plan, an
//! NMS/confidence explorer over simulated pipeline output, and the RF1 curve
//! across IoU thresholds.

use canopy_core::geometry::{BinaryMask, CrownInstance, RasterGrid};
use canopy_core::matching::IouKind;
use canopy_core::pipeline::{
    run_raster, DetectorNoise, OracleDetector, OracleSegmenter, PipelineConfig, PipelineRaster, RasterRun,
    SegmenterNoise,
};
use canopy_core::raster_metrics::{aggregate_tiles, pooled_curve, AggregationConfig, RasterCase};
use canopy_core::synth::{generate, Scene, SceneSpec};
use canopy_core::tile_metrics::ThresholdSet;
use canopy_core::tiler::{plan_tiles, TilingSpec};
use serde::Serialize;
use std::sync::Arc;
use wasm_bindgen::prelude::*;

fn js(e: canopy_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Plan {
    pub stride: u64,
    pub windows: Vec<[i64; 4]>,
}

pub fn plan(width: u32, height: u32, tile_size: u32, overlap: f64) -> canopy_core::Result<Plan> {
    let spec = TilingSpec::new(tile_size as u64, overlap)?;
    let grid = RasterGrid::new(width as u64, height as u64, 1.0)?;
    Ok(Plan {
        stride: spec.stride(),
        windows: plan_tiles(&grid, &spec)?.iter().map(|w| w.rect.as_array()).collect(),
    })
}

/// Tile windows for a raster as JSON `{stride, windows: [[x0, y0, w, h], ...]}`.
#[wasm_bindgen]
pub fn tile_plan(width: u32, height: u32, tile_size: u32, overlap: f64) -> Result<String, JsError> {
    plan(width, height, tile_size, overlap).map(|p| to_json(&p)).map_err(js)
}

/// Noise knobs of the simulated detector and segmenter.
#[wasm_bindgen]
#[derive(Debug, Clone, Copy, Default)]
pub struct Noise {
    pub shift_sigma: f64,
    pub spurious_rate: f64,
    pub drop_rate: f64,
    pub boundary_noise: f64,
}

#[wasm_bindgen]
impl Noise {
    #[wasm_bindgen(constructor)]
    pub fn new(shift_sigma: f64, spurious_rate: f64, drop_rate: f64, boundary_noise: f64) -> Noise {
        Noise {
            shift_sigma,
            spurious_rate,
            drop_rate,
            boundary_noise,
        }
    }
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Evaluation {
    pub candidates: usize,
    pub kept: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mrf1: f64,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct CurvePoint {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// A synthetic orthomosaic with tiled oracle predictions, re-aggregated on demand.
#[wasm_bindgen]
pub struct Explorer {
    scene: Scene,
    run: RasterRun,
}

impl Explorer {
    pub fn build(
        size: u32,
        crowns: u32,
        seed: u32,
        noise: Noise,
        tile_size: u32,
        overlap: f64,
    ) -> canopy_core::Result<Self> {
        let scene = generate(&SceneSpec {
            width: size as u64,
            height: size as u64,
            crowns: crowns as usize,
            seed: seed as u64,
            ..SceneSpec::default()
        })?;
        let det = DetectorNoise {
            shift_sigma: noise.shift_sigma,
            spurious_rate: noise.spurious_rate,
            drop_rate: noise.drop_rate,
            ..DetectorNoise::default()
        };
        let seg = SegmenterNoise {
            boundary_noise: noise.boundary_noise,
            ..SegmenterNoise::default()
        };
        let raster = PipelineRaster {
            name: "demo".into(),
            image: scene.image.clone(),
            grid: scene.grid.clone(),
            gts: scene.crowns.clone(),
            detector: Arc::new(OracleDetector::new(&scene.crowns, det, seed as u64)),
            segmenter: Arc::new(OracleSegmenter::new(&scene.crowns, seg, seed as u64)),
        };
        let run = run_raster(
            &raster,
            &TilingSpec::new(tile_size as u64, overlap)?,
            &PipelineConfig::default(),
        )?;
        Ok(Self { scene, run })
    }

    fn merged(&self, nms_iou: f64, confidence: f64) -> canopy_core::Result<Vec<CrownInstance>> {
        aggregate_tiles(
            &self.run.tile_preds,
            &self.run.layout,
            &AggregationConfig::new(nms_iou, confidence),
        )
    }

    fn case(&self, nms_iou: f64, confidence: f64) -> canopy_core::Result<(Vec<CrownInstance>, RasterCase)> {
        let merged = self.merged(nms_iou, confidence)?;
        let case = RasterCase::new(&merged, &self.run.gts, self.scene.grid.gsd, IouKind::Mask)?;
        Ok((merged, case))
    }

    pub fn candidates(&self) -> usize {
        self.run.tile_preds.values().map(Vec::len).sum()
    }

    pub fn evaluation(&self, nms_iou: f64, confidence: f64, tau: f64) -> canopy_core::Result<Evaluation> {
        let (merged, case) = self.case(nms_iou, confidence)?;
        let m = case.match_at(tau, None);
        let curve = pooled_curve(std::slice::from_ref(&case), &ThresholdSet::coco(), None);
        let (tp, fp, fn_) = (m.tp(), m.fp(), m.fn_count());
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Ok(Evaluation {
            candidates: self.candidates(),
            kept: merged.len(),
            tp,
            fp,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
            mrf1: curve.map_or(0.0, |c| c.mrf1),
        })
    }

    pub fn curve(&self, nms_iou: f64, confidence: f64) -> canopy_core::Result<Vec<CurvePoint>> {
        let (_, case) = self.case(nms_iou, confidence)?;
        let taus = ThresholdSet::new((1..20).map(|i| i as f64 / 20.0).collect())?;
        Ok(pooled_curve(std::slice::from_ref(&case), &taus, None)
            .map(|c| {
                c.per_threshold
                    .iter()
                    .map(|r| CurvePoint {
                        iou: r.iou,
                        precision: r.precision,
                        recall: r.recall,
                        f1: r.f1,
                    })
                    .collect()
            })
            .unwrap_or_default())
    }

    /// RGBA overlay: matched predictions green, false positives red, missed
    /// ground truth orange; outlines only.
    pub fn overlay_rgba(&self, nms_iou: f64, confidence: f64, tau: f64) -> canopy_core::Result<Vec<u8>> {
        let (merged, case) = self.case(nms_iou, confidence)?;
        let m = case.match_at(tau, None);
        let (w, h) = (self.scene.grid.width as i64, self.scene.grid.height as i64);
        let mut px = vec![0u8; (w * h * 4) as usize];
        let mut paint = |mask: &BinaryMask, rgb: [u8; 3]| {
            for (x, y) in mask.boundary().iter_ones() {
                if (0..w).contains(&x) && (0..h).contains(&y) {
                    let i = ((y * w + x) * 4) as usize;
                    px[i..i + 4].copy_from_slice(&[rgb[0], rgb[1], rgb[2], 255]);
                }
            }
        };
        for &g in &m.false_negatives {
            paint(self.run.gts[g].mask(), [255, 150, 0]);
        }
        for &p in &m.false_positives {
            paint(merged[p].mask(), [230, 30, 30]);
        }
        for pair in &m.matched {
            paint(merged[pair.pred].mask(), [40, 220, 60]);
        }
        Ok(px)
    }
}

#[wasm_bindgen]
impl Explorer {
    #[wasm_bindgen(constructor)]
    pub fn new(
        size: u32,
        crowns: u32,
        seed: u32,
        noise: &Noise,
        tile_size: u32,
        overlap: f64,
    ) -> Result<Explorer, JsError> {
        Self::build(size, crowns, seed, *noise, tile_size, overlap).map_err(js)
    }

    pub fn width(&self) -> u32 {
        self.scene.grid.width as u32
    }

    pub fn height(&self) -> u32 {
        self.scene.grid.height as u32
    }

    /// The scene as RGBA bytes for an `ImageData`.
    pub fn image_rgba(&self) -> Vec<u8> {
        let img = &self.scene.image;
        img.data
            .chunks_exact(img.channels)
            .flat_map(|p| match p.len() {
                1 => [p[0], p[0], p[0], 255],
                _ => [p[0], p[1], p[2], 255],
            })
            .collect()
    }

    /// JSON counts and scores after aggregation at one matching threshold.
    pub fn evaluate(&self, nms_iou: f64, confidence: f64, tau: f64) -> Result<String, JsError> {
        self.evaluation(nms_iou, confidence, tau)
            .map(|e| to_json(&e))
            .map_err(js)
    }

    /// JSON `[{iou, precision, recall, f1}]` for IoU 0.05 … 0.95.
    pub fn rf1_curve(&self, nms_iou: f64, confidence: f64) -> Result<String, JsError> {
        self.curve(nms_iou, confidence).map(|c| to_json(&c)).map_err(js)
    }

    pub fn overlay(&self, nms_iou: f64, confidence: f64, tau: f64) -> Result<Vec<u8>, JsError> {
        self.overlay_rgba(nms_iou, confidence, tau).map_err(js)
    }
}
