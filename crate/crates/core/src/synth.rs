//! Synthetic orthomosaics with planted, non-overlapping crowns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, CrownInstance, Point, Polygon, RasterGrid};
use crate::tiler::RasterImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: u64,
    pub height: u64,
    pub gsd: f64,
    pub crowns: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Gap kept between crown boxes, px.
    pub gap: f64,
    /// When set, no crown crosses a multiple of this coordinate on either axis.
    pub cell: Option<u64>,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 2000,
            height: 2000,
            gsd: 0.05,
            crowns: 60,
            min_radius: 15.0,
            max_radius: 60.0,
            gap: 4.0,
            cell: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub grid: RasterGrid,
    pub image: RasterImage,
    pub crowns: Vec<CrownInstance>,
}

fn crosses_cell(b: &BBox, cell: u64) -> bool {
    let c = cell as f64;
    // a 1 px margin keeps masks off the cell's border pixels
    let cross = |lo: f64, hi: f64| ((lo - 1.0) / c).floor() != ((hi + 1.0) / c).floor();
    cross(b.x_min, b.x_max) || cross(b.y_min, b.y_max)
}

/// Lumpy convex-ish blob: 16 vertices at radius `r · (1 ± 0.12)`.
fn blob(rng: &mut ChaCha8Rng, cx: f64, cy: f64, r: f64) -> Result<Polygon> {
    let n = 16;
    let ring: Vec<Point> = (0..n)
        .map(|i| {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            let rr = r * rng.random_range(0.88..1.12);
            Point::new(cx + rr * a.cos(), cy + rr * a.sin())
        })
        .collect();
    Polygon::new(ring, vec![])
}

pub fn generate(spec: &SceneSpec) -> Result<Scene> {
    if !(spec.min_radius > 0.0 && spec.max_radius >= spec.min_radius) {
        return Err(Error::InvalidConfig("need 0 < min_radius ≤ max_radius".into()));
    }
    let grid = RasterGrid::new(spec.width, spec.height, spec.gsd)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut placed: Vec<(BBox, CrownInstance)> = Vec::with_capacity(spec.crowns);
    let margin = spec.max_radius * 1.15 + 1.0;
    if 2.0 * margin >= spec.width.min(spec.height) as f64 {
        return Err(Error::InvalidConfig("raster too small for the crown radius".into()));
    }
    let mut attempts = 0;
    while placed.len() < spec.crowns {
        attempts += 1;
        if attempts > 1000 * spec.crowns.max(1) {
            return Err(Error::InvalidConfig(format!(
                "could only place {} of {} crowns",
                placed.len(),
                spec.crowns
            )));
        }
        let r = rng.random_range(spec.min_radius..=spec.max_radius);
        let cx = rng.random_range(margin..spec.width as f64 - margin);
        let cy = rng.random_range(margin..spec.height as f64 - margin);
        let poly = blob(&mut rng, cx, cy, r)?;
        let b = poly.bbox();
        if spec.cell.is_some_and(|c| crosses_cell(&b, c)) {
            continue;
        }
        let g = spec.gap;
        let padded = BBox::new(b.x_min - g, b.y_min - g, b.x_max + g, b.y_max + g);
        if placed.iter().any(|(o, _)| o.intersects(&padded)) {
            continue;
        }
        placed.push((b, CrownInstance::ground_truth(poly)?));
    }
    let mut image = RasterImage::zeros(spec.width, spec.height, 3);
    for px in image.data.chunks_exact_mut(3) {
        let v: u8 = rng.random_range(30..60);
        px.copy_from_slice(&[v / 2, v, v / 3]);
    }
    for (_, c) in &placed {
        let tint: [u8; 3] = [
            rng.random_range(40..90),
            rng.random_range(110..200),
            rng.random_range(30..80),
        ];
        for (x, y) in c.mask().iter_ones() {
            image.pixel_mut(x as u64, y as u64).copy_from_slice(&tint);
        }
    }
    Ok(Scene {
        grid,
        image,
        crowns: placed.into_iter().map(|(_, c)| c).collect(),
    })
}
