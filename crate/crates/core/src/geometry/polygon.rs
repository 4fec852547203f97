use serde::{Deserialize, Serialize};

use super::bbox::{BBox, PixelRect};
use super::mask::BinaryMask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Point::new(x, y)
    }
}

/// Simple polygon with optional holes, in raster pixel units.
///
/// Rings are stored open: the closing vertex is implicit and a duplicated
/// first/last vertex is stripped on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    exterior: Vec<Point>,
    holes: Vec<Vec<Point>>,
}

fn normalize_ring(mut ring: Vec<Point>) -> Vec<Point> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring
}

/// Signed shoelace area of an open ring (positive for counter-clockwise in a
/// y-up frame).
pub fn ring_signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    // Shifted by the first vertex to keep large georeferenced offsets exact.
    let o = ring[0];
    let mut s = 0.0;
    for i in 1..n - 1 {
        let a = ring[i];
        let b = ring[i + 1];
        s += (a.x - o.x) * (b.y - o.y) - (b.x - o.x) * (a.y - o.y);
    }
    0.5 * s
}

impl Polygon {
    pub fn new(exterior: Vec<Point>, holes: Vec<Vec<Point>>) -> Result<Self> {
        let exterior = normalize_ring(exterior);
        if exterior.len() < 3 {
            return Err(Error::DegeneratePolygon(format!(
                "exterior ring has {} vertices",
                exterior.len()
            )));
        }
        if exterior.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::DegeneratePolygon("non-finite coordinate".into()));
        }
        if ring_signed_area(&exterior) == 0.0 {
            return Err(Error::DegeneratePolygon("exterior ring has zero area".into()));
        }
        let holes = holes
            .into_iter()
            .map(normalize_ring)
            .filter(|h| h.len() >= 3 && ring_signed_area(h) != 0.0)
            .collect();
        Ok(Self { exterior, holes })
    }

    pub fn from_coords(exterior: &[(f64, f64)]) -> Result<Self> {
        Self::new(exterior.iter().map(|&p| p.into()).collect(), Vec::new())
    }

    /// Axis-aligned rectangle polygon.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::from_coords(&[(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
    }

    pub fn exterior(&self) -> &[Point] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<Point>] {
        &self.holes
    }

    pub fn rings(&self) -> impl Iterator<Item = &[Point]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(|h| h.as_slice()))
    }

    /// Exterior area minus hole areas, in pixel².
    pub fn area_px(&self) -> f64 {
        let holes: f64 = self.holes.iter().map(|h| ring_signed_area(h).abs()).sum();
        (ring_signed_area(&self.exterior).abs() - holes).max(0.0)
    }

    pub fn perimeter(&self) -> f64 {
        self.rings()
            .map(|r| {
                (0..r.len())
                    .map(|i| {
                        let a = r[i];
                        let b = r[(i + 1) % r.len()];
                        (b.x - a.x).hypot(b.y - a.y)
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn bbox(&self) -> BBox {
        let mut b = BBox::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.exterior {
            b.x_min = b.x_min.min(p.x);
            b.y_min = b.y_min.min(p.y);
            b.x_max = b.x_max.max(p.x);
            b.y_max = b.y_max.max(p.y);
        }
        b
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Polygon {
        let shift = |r: &[Point]| r.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect::<Vec<_>>();
        Polygon {
            exterior: shift(&self.exterior),
            holes: self.holes.iter().map(|h| shift(h)).collect(),
        }
    }

    pub fn map_points(&self, mut f: impl FnMut(Point) -> Point) -> Result<Polygon> {
        let exterior = self.exterior.iter().map(|&p| f(p)).collect();
        let holes = self.holes.iter().map(|h| h.iter().map(|&p| f(p)).collect()).collect();
        Polygon::new(exterior, holes)
    }

    /// Even-odd point-in-polygon test over all rings.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        for ring in self.rings() {
            let n = ring.len();
            let mut j = n - 1;
            for i in 0..n {
                let (a, b) = (ring[i], ring[j]);
                if (a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x {
                    inside = !inside;
                }
                j = i;
            }
        }
        inside
    }

    /// Rasterize with the pixel-center even-odd rule into `window`.
    ///
    /// Pixel `(c, r)` is set iff `(c + 0.5, r + 0.5)` lies inside. Edges are
    /// half-open in y and a crossing at exactly the pixel center counts to
    /// the left, so polygons sharing an edge never claim the same pixel.
    pub fn rasterize(&self, window: PixelRect) -> BinaryMask {
        let mut mask = BinaryMask::new(window);
        if window.is_empty() {
            return mask;
        }
        let bb = self.bbox();
        let row_lo = ((bb.y_min - 0.5).ceil() as i64).max(window.y0);
        let row_hi = ((bb.y_max - 0.5).ceil() as i64).min(window.y1());
        let edges: Vec<(Point, Point)> = self
            .rings()
            .flat_map(|r| (0..r.len()).map(move |i| (r[i], r[(i + 1) % r.len()])))
            .filter(|(a, b)| a.y != b.y)
            .collect();
        let mut xs = Vec::new();
        for row in row_lo..row_hi {
            let yc = row as f64 + 0.5;
            xs.clear();
            for &(a, b) in &edges {
                let (lo, hi) = if a.y < b.y { (a, b) } else { (b, a) };
                if lo.y <= yc && yc < hi.y {
                    xs.push(lo.x + (yc - lo.y) * (hi.x - lo.x) / (hi.y - lo.y));
                }
            }
            xs.sort_by(|a, b| a.total_cmp(b));
            let lr = (row - window.y0) as usize;
            for pair in xs.chunks_exact(2) {
                // centers c + 0.5 in [xl, xr)
                let c0 = ((pair[0] - 0.5).ceil() as i64).max(window.x0);
                let c1 = ((pair[1] - 0.5).ceil() as i64).min(window.x1());
                if c1 > c0 {
                    mask.fill_row_local(lr, (c0 - window.x0) as usize, (c1 - window.x0) as usize);
                }
            }
        }
        mask
    }

    /// Rasterize over the pixel window covering the polygon, trimmed.
    pub fn to_mask(&self) -> BinaryMask {
        self.rasterize(PixelRect::covering(&self.bbox())).trimmed()
    }

    /// Clip to an axis-aligned rectangle (Sutherland–Hodgman per ring).
    ///
    /// Returns `None` when nothing of positive area remains.
    pub fn clip_to_rect(&self, rect: &BBox) -> Option<Polygon> {
        let exterior = clip_ring(&self.exterior, rect);
        if exterior.len() < 3 || ring_signed_area(&exterior) == 0.0 {
            return None;
        }
        let holes = self.holes.iter().map(|h| clip_ring(h, rect)).collect();
        let p = Polygon::new(exterior, holes).ok()?;
        (p.area_px() > 0.0).then_some(p)
    }
}

fn clip_ring(ring: &[Point], rect: &BBox) -> Vec<Point> {
    type Inside = fn(&Point, &BBox) -> bool;
    type Cross = fn(&Point, &Point, &BBox) -> Point;
    let planes: [(Inside, Cross); 4] = [
        (
            |p, r| p.x >= r.x_min,
            |a, b, r| Point::new(r.x_min, a.y + (b.y - a.y) * (r.x_min - a.x) / (b.x - a.x)),
        ),
        (
            |p, r| p.x <= r.x_max,
            |a, b, r| Point::new(r.x_max, a.y + (b.y - a.y) * (r.x_max - a.x) / (b.x - a.x)),
        ),
        (
            |p, r| p.y >= r.y_min,
            |a, b, r| Point::new(a.x + (b.x - a.x) * (r.y_min - a.y) / (b.y - a.y), r.y_min),
        ),
        (
            |p, r| p.y <= r.y_max,
            |a, b, r| Point::new(a.x + (b.x - a.x) * (r.y_max - a.y) / (b.y - a.y), r.y_max),
        ),
    ];
    let mut out = ring.to_vec();
    for (inside, cross) in planes {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let mut prev = *input.last().unwrap();
        for &cur in &input {
            match (inside(&cur, rect), inside(&prev, rect)) {
                (true, true) => out.push(cur),
                (true, false) => {
                    out.push(cross(&prev, &cur, rect));
                    out.push(cur);
                }
                (false, true) => out.push(cross(&prev, &cur, rect)),
                (false, false) => {}
            }
            prev = cur;
        }
    }
    out
}

/// Area of a polygon in pixel².
pub fn polygon_area_px(p: &Polygon) -> Result<f64> {
    let a = p.area_px();
    if a > 0.0 {
        Ok(a)
    } else {
        Err(Error::DegeneratePolygon("zero area".into()))
    }
}

/// Rasterize `p` into `window` with the pixel-center even-odd rule.
pub fn rasterize(p: &Polygon, window: PixelRect) -> BinaryMask {
    p.rasterize(window)
}
