//! Seeded stand-ins for a detector and a box-prompt segmenter, built from ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BoxPromptSegmenter, Detection, Detector, SegmentedMask, TileView};
use crate::error::Result;
use crate::geometry::{box_iou, BBox, BinaryMask, CrownInstance, PixelRect};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorNoise {
    /// Standard deviation of the box center shift, px.
    pub shift_sigma: f64,
    /// Standard deviation of the log box scale.
    pub scale_sigma: f64,
    /// Probability that a crown is missed everywhere.
    pub drop_rate: f64,
    /// Spurious boxes per ground-truth crown.
    pub spurious_rate: f64,
}

#[derive(Debug, Clone)]
struct Planted {
    mask: BinaryMask,
    bbox: BBox,
    jittered: Option<BBox>,
    score: f64,
}

/// Emits each crown's box moved by a per-crown seeded perturbation.
///
/// The perturbation of a crown is drawn once, so every tile sees the same
/// raster-frame box, and a larger sigma scales the same draw. Scores fall as
/// the perturbation grows: `1 / (1 + d / 10)` with `d` the displacement in px.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    planted: Vec<Planted>,
    spurious: Vec<(BBox, f64)>,
}

impl OracleDetector {
    pub fn new(gts: &[CrownInstance], noise: DetectorNoise, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planted = gts
            .iter()
            .map(|g| {
                let b = g.bbox();
                let u: f64 = rng.random();
                let zx: f64 = rng.sample(StandardNormal);
                let zy: f64 = rng.sample(StandardNormal);
                let zs: f64 = rng.sample(StandardNormal);
                let (dx, dy) = (noise.shift_sigma * zx, noise.shift_sigma * zy);
                let s = (noise.scale_sigma * zs).exp();
                let (cx, cy) = b.center();
                let (hw, hh) = (0.5 * b.width() * s, 0.5 * b.height() * s);
                let jittered = BBox::new(cx + dx - hw, cy + dy - hh, cx + dx + hw, cy + dy + hh);
                let d = dx.hypot(dy) + (s - 1.0).abs() * 0.5 * (b.width() + b.height());
                Planted {
                    mask: g.mask().clone(),
                    bbox: b,
                    jittered: (u >= noise.drop_rate).then_some(jittered),
                    score: 1.0 / (1.0 + d / 10.0),
                }
            })
            .collect();
        let extent = gts.iter().map(|g| g.bbox()).reduce(|a, b| {
            BBox::new(
                a.x_min.min(b.x_min),
                a.y_min.min(b.y_min),
                a.x_max.max(b.x_max),
                a.y_max.max(b.y_max),
            )
        });
        let n_spurious = (noise.spurious_rate * gts.len() as f64).round() as usize;
        let spurious = match extent {
            Some(e) if n_spurious > 0 => {
                let mean_side = gts
                    .iter()
                    .map(|g| 0.5 * (g.bbox().width() + g.bbox().height()))
                    .sum::<f64>()
                    / gts.len() as f64;
                (0..n_spurious)
                    .map(|_| {
                        let side = mean_side * rng.random_range(0.5..1.5);
                        let x = rng.random_range(e.x_min..e.x_max.max(e.x_min + 1.0));
                        let y = rng.random_range(e.y_min..e.y_max.max(e.y_min + 1.0));
                        let score = rng.random_range(0.05..0.5);
                        (BBox::new(x, y, x + side, y + side), score)
                    })
                    .collect()
            }
            _ => Vec::new(),
        };
        Self { planted, spurious }
    }
}

impl Detector for OracleDetector {
    fn detect(&self, tile: &TileView) -> Result<Vec<Detection>> {
        let wb = tile.window.to_bbox();
        let (ox, oy) = (tile.window.x0 as f64, tile.window.y0 as f64);
        let local = |b: BBox, score: f64| {
            let c = b.clamped(&wb);
            (c.area() > 0.0).then(|| Detection {
                bbox: c.translated(-ox, -oy),
                score,
            })
        };
        let real = self
            .planted
            .iter()
            .filter(|p| p.bbox.intersects(&wb) && !p.mask.cropped(tile.window).is_empty())
            .filter_map(|p| p.jittered.and_then(|j| local(j, p.score)));
        let fake = self.spurious.iter().filter_map(|&(b, s)| local(b, s));
        Ok(real.chain(fake).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterNoise {
    /// Positive dilates, negative erodes, by this many pixels.
    pub radius: i32,
    /// Probability of removing each boundary pixel.
    pub boundary_noise: f64,
}

#[derive(Debug, Clone)]
struct Source {
    original: BinaryMask,
    corrupted: BinaryMask,
    bbox: BBox,
}

/// Returns the corrupted ground-truth mask best matching each prompt box,
/// confined to the prompt (plus the dilation margin) and the tile.
///
/// The mask score is the IoU of the returned mask with the uncorrupted mask
/// inside the tile. Prompts that overlap no crown get the nearest crown's
/// shape moved into the box, at a tenth of that score.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    sources: Vec<Source>,
    margin: f64,
}

impl OracleSegmenter {
    pub fn new(gts: &[CrownInstance], noise: SegmenterNoise, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e6d_a5c0_ffee_0001);
        let sources = gts
            .iter()
            .map(|g| {
                let m = g.mask();
                let mut c = match noise.radius {
                    r if r > 0 => m.dilated(r as usize),
                    r if r < 0 => m.eroded(r.unsigned_abs() as usize),
                    _ => m.clone(),
                };
                if noise.boundary_noise > 0.0 {
                    let edge: Vec<_> = c.boundary().iter_ones().collect();
                    for (x, y) in edge {
                        if rng.random::<f64>() < noise.boundary_noise {
                            c.set(x, y, false);
                        }
                    }
                }
                Source {
                    original: m.clone(),
                    corrupted: c,
                    bbox: g.bbox(),
                }
            })
            .collect();
        Self {
            sources,
            margin: noise.radius.max(0) as f64,
        }
    }

    fn answer(&self, window: PixelRect, prompt: BBox, near: &[usize]) -> SegmentedMask {
        let wb = window.to_bbox();
        let empty = SegmentedMask {
            mask: BinaryMask::new(PixelRect::new(0, 0, 0, 0)),
            score: 0.0,
        };
        let best = near
            .iter()
            .map(|&i| (i, box_iou(&prompt, &self.sources[i].bbox.clamped(&wb))))
            .filter(|&(_, iou)| iou > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        let confine = |m: &BinaryMask| {
            let b = BBox::new(
                prompt.x_min - self.margin,
                prompt.y_min - self.margin,
                prompt.x_max + self.margin,
                prompt.y_max + self.margin,
            );
            let r = PixelRect::covering(&b)
                .intersection(&window)
                .unwrap_or(PixelRect::new(0, 0, 0, 0));
            m.cropped(r)
        };
        let score = |returned: &BinaryMask, src: &Source| {
            let truth = src.original.cropped(window);
            returned.iou(&truth).unwrap_or(0.0)
        };
        if let Some((i, _)) = best {
            let src = &self.sources[i];
            let mask = confine(&src.corrupted);
            let s = score(&mask, src);
            return SegmentedMask { mask, score: s };
        }
        let (pcx, pcy) = prompt.center();
        let nearest = self.sources.iter().min_by(|a, b| {
            let da = (a.bbox.center().0 - pcx).hypot(a.bbox.center().1 - pcy);
            let db = (b.bbox.center().0 - pcx).hypot(b.bbox.center().1 - pcy);
            da.total_cmp(&db)
        });
        let Some(src) = nearest else {
            return empty;
        };
        let (scx, scy) = src.bbox.center();
        let moved = src
            .corrupted
            .translated((pcx - scx).round() as i64, (pcy - scy).round() as i64);
        let mask = confine(&moved);
        let s = 0.1 * src.corrupted.iou(&src.original).unwrap_or(0.0);
        SegmentedMask { mask, score: s }
    }
}

impl BoxPromptSegmenter for OracleSegmenter {
    fn segment(&self, tile: &TileView, boxes: &[BBox]) -> Result<Vec<SegmentedMask>> {
        let w = tile.window;
        let wb = w.to_bbox();
        let near: Vec<usize> = (0..self.sources.len())
            .filter(|&i| self.sources[i].bbox.intersects(&wb))
            .collect();
        Ok(boxes
            .iter()
            .map(|b| {
                let mut m = self.answer(w, b.translated(w.x0 as f64, w.y0 as f64), &near);
                m.mask = m.mask.translated(-w.x0, -w.y0);
                m
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polygon;
    use crate::tiler::RasterImage;

    fn crowns() -> Vec<CrownInstance> {
        (0..200)
            .map(|i| {
                let (x, y) = ((i % 20) as f64 * 50.0 + 5.0, (i / 20) as f64 * 50.0 + 5.0);
                CrownInstance::ground_truth(Polygon::rect(x, y, x + 30.0, y + 30.0).unwrap()).unwrap()
            })
            .collect()
    }

    fn whole(img: &RasterImage) -> TileView<'_> {
        TileView {
            id: 0,
            window: PixelRect::new(0, 0, 1000, 500),
            image: img,
        }
    }

    #[test]
    fn zero_noise_reproduces_boxes_and_masks() {
        let gts = crowns();
        let img = RasterImage::zeros(1000, 500, 3);
        let det = OracleDetector::new(&gts, DetectorNoise::default(), 7)
            .detect(&whole(&img))
            .unwrap();
        assert_eq!(det.len(), gts.len());
        for (d, g) in det.iter().zip(&gts) {
            assert_eq!(d.bbox, g.bbox());
            assert_eq!(d.score, 1.0);
        }
        let boxes: Vec<_> = det.iter().map(|d| d.bbox).collect();
        let seg = OracleSegmenter::new(&gts, SegmenterNoise::default(), 7)
            .segment(&whole(&img), &boxes)
            .unwrap();
        for (m, g) in seg.iter().zip(&gts) {
            assert_eq!(&m.mask.trimmed(), g.mask());
            assert_eq!(m.score, 1.0);
        }
    }

    #[test]
    fn full_drop_rate_detects_nothing() {
        let img = RasterImage::zeros(1000, 500, 3);
        let noise = DetectorNoise {
            drop_rate: 1.0,
            ..Default::default()
        };
        assert!(OracleDetector::new(&crowns(), noise, 1)
            .detect(&whole(&img))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn shift_jitter_iou_band() {
        let gts = crowns();
        let img = RasterImage::zeros(1000, 500, 3);
        let noise = DetectorNoise {
            shift_sigma: 5.0,
            ..Default::default()
        };
        let det = OracleDetector::new(&gts, noise, 42).detect(&whole(&img)).unwrap();
        let mean = det
            .iter()
            .zip(&gts)
            .map(|(d, g)| box_iou(&d.bbox, &g.bbox()))
            .sum::<f64>()
            / det.len() as f64;
        // independent Monte-Carlo estimate of E[IoU] for a 30 px box under N(0, 5²) shifts
        let mut rng = ChaCha8Rng::seed_from_u64(999);
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let dx: f64 = 5.0 * rng.sample::<f64, _>(StandardNormal);
            let dy: f64 = 5.0 * rng.sample::<f64, _>(StandardNormal);
            let inter = (30.0 - dx.abs()).max(0.0) * (30.0 - dy.abs()).max(0.0);
            acc += inter / (1800.0 - inter);
        }
        let expected = acc / n as f64;
        assert!((mean - expected).abs() < 0.03, "mean {mean} vs {expected}");
    }

    #[test]
    fn eroded_square_score() {
        let g = vec![CrownInstance::ground_truth(Polygon::rect(10.0, 10.0, 30.0, 30.0).unwrap()).unwrap()];
        let img = RasterImage::zeros(100, 100, 1);
        let view = TileView {
            id: 0,
            window: PixelRect::new(0, 0, 100, 100),
            image: &img,
        };
        for r in 1..4 {
            let seg = OracleSegmenter::new(
                &g,
                SegmenterNoise {
                    radius: -r,
                    boundary_noise: 0.0,
                },
                0,
            );
            let out = seg.segment(&view, &[g[0].bbox()]).unwrap();
            let n = 20.0;
            let expected = ((n - 2.0 * r as f64) / n).powi(2);
            assert!((out[0].score - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn stray_prompt_gets_low_score() {
        let g = vec![CrownInstance::ground_truth(Polygon::rect(10.0, 10.0, 30.0, 30.0).unwrap()).unwrap()];
        let img = RasterImage::zeros(100, 100, 1);
        let view = TileView {
            id: 0,
            window: PixelRect::new(0, 0, 100, 100),
            image: &img,
        };
        let seg = OracleSegmenter::new(&g, SegmenterNoise::default(), 0);
        let out = seg.segment(&view, &[BBox::new(60.0, 60.0, 80.0, 80.0)]).unwrap();
        assert_eq!(out[0].score, 0.1);
        assert_eq!(out[0].mask.count(), 400);
        assert_eq!(out[0].mask.bbox(), Some(BBox::new(60.0, 60.0, 80.0, 80.0)));
    }
}
