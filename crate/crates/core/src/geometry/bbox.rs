use serde::{Deserialize, Serialize};

/// Axis-aligned box in raster pixel units, `[x_min, x_max) × [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y_max - self.y_min).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.intersection_area(other) > 0.0
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    pub fn clamped(&self, bounds: &BBox) -> BBox {
        BBox::new(
            self.x_min.clamp(bounds.x_min, bounds.x_max),
            self.y_min.clamp(bounds.y_min, bounds.y_max),
            self.x_max.clamp(bounds.x_min, bounds.x_max),
            self.y_max.clamp(bounds.y_min, bounds.y_max),
        )
    }
}

/// Intersection over union of two boxes. Zero-area pairs yield 0.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

/// Integer pixel window; `x0, y0` is the top-left pixel, extent is `width × height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: i64,
    pub y0: i64,
    pub width: i64,
    pub height: i64,
}

impl PixelRect {
    pub fn new(x0: i64, y0: i64, width: i64, height: i64) -> Self {
        Self { x0, y0, width, height }
    }

    pub fn x1(&self) -> i64 {
        self.x0 + self.width
    }

    pub fn y1(&self) -> i64 {
        self.y0 + self.height
    }

    pub fn is_empty(&self) -> bool {
        self.width <= 0 || self.height <= 0
    }

    pub fn area(&self) -> i64 {
        if self.is_empty() {
            0
        } else {
            self.width * self.height
        }
    }

    pub fn intersection(&self, other: &PixelRect) -> Option<PixelRect> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1().min(other.x1());
        let y1 = self.y1().min(other.y1());
        (x1 > x0 && y1 > y0).then(|| PixelRect::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn contains_rect(&self, other: &PixelRect) -> bool {
        other.x0 >= self.x0 && other.y0 >= self.y0 && other.x1() <= self.x1() && other.y1() <= self.y1()
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x < self.x1() && y >= self.y0 && y < self.y1()
    }

    pub fn to_bbox(&self) -> BBox {
        BBox::new(self.x0 as f64, self.y0 as f64, self.x1() as f64, self.y1() as f64)
    }

    /// Smallest pixel window covering `b` (pixels whose area touches the box).
    pub fn covering(b: &BBox) -> PixelRect {
        let x0 = b.x_min.floor() as i64;
        let y0 = b.y_min.floor() as i64;
        let x1 = b.x_max.ceil() as i64;
        let y1 = b.y_max.ceil() as i64;
        PixelRect::new(x0, y0, (x1 - x0).max(0), (y1 - y0).max(0))
    }

    pub fn as_array(&self) -> [i64; 4] {
        [self.x0, self.y0, self.width, self.height]
    }
}
