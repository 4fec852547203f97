//! File-exchange backends: external detector/segmenter processes that read
//! requests from a directory and answer with JSON.
//!
//! For each call the harness creates `<dir>/<kind>-<n>/` holding `tile.png`
//! and then `request.json`:
//!
//! ```text
//! {"kind": "detect" | "segment", "tile_id": 3, "window": [x0, y0, w, h],
//!  "image": "tile.png", "boxes": [[x0, y0, x1, y1], ...]}   // boxes: segment only
//! ```
//!
//! The backend answers by creating `result.json` in the same directory:
//!
//! ```text
//! {"detections": [{"bbox": [x0, y0, x1, y1], "score": 0.9}, ...]}
//! {"masks": [{"rle": {"size": [h, w], "counts": [...] | "..."}, "score": 0.8}, ...]}
//! {"error": "message"}
//! ```
//!
//! Coordinates are tile-local pixels. Write `result.json` atomically (write
//! then rename) so a half-written file is never read.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BoxPromptSegmenter, Detection, Detector, SegmentedMask, TileView};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::io::{write_atomic, RleMask};
use crate::tiler::RasterImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchConfig {
    pub dir: PathBuf,
    pub poll_ms: u64,
    pub timeout_ms: u64,
    /// Serialize calls (most model servers process one request at a time).
    pub single_flight: bool,
    /// Leave request directories in place after reading the result.
    pub keep_requests: bool,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("batch"),
            poll_ms: 20,
            timeout_ms: 600_000,
            single_flight: true,
            keep_requests: false,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchRequest {
    pub kind: String,
    pub tile_id: u64,
    pub window: [i64; 4],
    pub image: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boxes: Vec<[f64; 4]>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct BatchResult {
    #[serde(default)]
    pub detections: Vec<BatchDetection>,
    #[serde(default)]
    pub masks: Vec<BatchMask>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchDetection {
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchMask {
    pub rle: RleJson,
    pub score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RleJson {
    pub size: [u64; 2],
    pub counts: RleCountsJson,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RleCountsJson {
    Raw(Vec<u64>),
    Compressed(String),
}

impl RleJson {
    pub fn to_rle(&self) -> Result<RleMask> {
        match &self.counts {
            RleCountsJson::Raw(c) => Ok(RleMask {
                size: self.size,
                counts: c.clone(),
            }),
            RleCountsJson::Compressed(s) => RleMask::from_compressed(self.size, s),
        }
    }
}

impl From<&RleMask> for RleJson {
    fn from(r: &RleMask) -> Self {
        Self {
            size: r.size,
            counts: RleCountsJson::Raw(r.counts.clone()),
        }
    }
}

pub fn encode_png(path: &Path, image: &RasterImage) -> Result<()> {
    let color = match image.channels {
        1 => png::ColorType::Grayscale,
        2 => png::ColorType::GrayscaleAlpha,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        n => return Err(Error::Image(format!("cannot write {n}-channel PNG"))),
    };
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(f), image.width as u32, image.height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| Error::Image(e.to_string()))?;
    w.write_image_data(&image.data).map_err(|e| Error::Image(e.to_string()))
}

#[derive(Debug)]
struct Exchange {
    cfg: BatchConfig,
    seq: AtomicU64,
}

impl Exchange {
    fn new(cfg: BatchConfig) -> Result<Self> {
        fs::create_dir_all(&cfg.dir).map_err(|e| Error::io(&cfg.dir, e))?;
        Ok(Self {
            cfg,
            seq: AtomicU64::new(0),
        })
    }

    fn call(&self, kind: &str, tile: &TileView, boxes: &[BBox]) -> Result<BatchResult> {
        let n = self.seq.fetch_add(1, Ordering::SeqCst);
        let dir = self.cfg.dir.join(format!("{kind}-{n:06}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        encode_png(&dir.join("tile.png"), tile.image)?;
        let req = BatchRequest {
            kind: kind.into(),
            tile_id: tile.id,
            window: tile.window.as_array(),
            image: "tile.png".into(),
            boxes: boxes.iter().map(|b| [b.x_min, b.y_min, b.x_max, b.y_max]).collect(),
        };
        write_atomic(&dir.join("request.json"), &serde_json::to_vec_pretty(&req)?)?;
        let result_path = dir.join("result.json");
        let start = Instant::now();
        let text = loop {
            match fs::read_to_string(&result_path) {
                Ok(t) => break t,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(Error::io(&result_path, e)),
            }
            if start.elapsed() > Duration::from_millis(self.cfg.timeout_ms) {
                return Err(Error::Backend(format!(
                    "no result in {} after {} ms",
                    dir.display(),
                    self.cfg.timeout_ms
                )));
            }
            std::thread::sleep(Duration::from_millis(self.cfg.poll_ms));
        };
        let res: BatchResult =
            serde_json::from_str(&text).map_err(|e| Error::Backend(format!("{}: {e}", result_path.display())))?;
        if !self.cfg.keep_requests {
            let _ = fs::remove_dir_all(&dir);
        }
        if let Some(msg) = res.error {
            return Err(Error::Backend(format!("{kind} backend: {msg}")));
        }
        Ok(res)
    }
}

#[derive(Debug)]
pub struct BatchDetector(Exchange);

impl BatchDetector {
    pub fn new(cfg: BatchConfig) -> Result<Self> {
        Ok(Self(Exchange::new(cfg)?))
    }
}

impl Detector for BatchDetector {
    fn detect(&self, tile: &TileView) -> Result<Vec<Detection>> {
        let res = self.0.call("detect", tile, &[])?;
        Ok(res
            .detections
            .into_iter()
            .map(|d| Detection {
                bbox: BBox::new(d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]),
                score: d.score,
            })
            .collect())
    }

    fn single_flight(&self) -> bool {
        self.0.cfg.single_flight
    }
}

#[derive(Debug)]
pub struct BatchSegmenter(Exchange);

impl BatchSegmenter {
    pub fn new(cfg: BatchConfig) -> Result<Self> {
        Ok(Self(Exchange::new(cfg)?))
    }
}

impl BoxPromptSegmenter for BatchSegmenter {
    fn segment(&self, tile: &TileView, boxes: &[BBox]) -> Result<Vec<SegmentedMask>> {
        let res = self.0.call("segment", tile, boxes)?;
        res.masks
            .iter()
            .map(|m| {
                Ok(SegmentedMask {
                    mask: m.rle.to_rle()?.decode()?,
                    score: m.score,
                })
            })
            .collect()
    }

    fn single_flight(&self) -> bool {
        self.0.cfg.single_flight
    }
}
