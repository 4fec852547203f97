use serde::{Deserialize, Serialize};

use super::bbox::PixelRect;
use crate::error::{Error, Result};

/// Six-parameter affine pixel → world transform in GDAL order:
/// `X = c[0] + px·c[1] + py·c[2]`, `Y = c[3] + px·c[4] + py·c[5]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GeoTransform(pub [f64; 6]);

impl GeoTransform {
    pub const IDENTITY: GeoTransform = GeoTransform([0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);

    /// North-up transform with square pixels of size `gsd` and top-left corner at `(x, y)`.
    pub fn north_up(x: f64, y: f64, gsd: f64) -> Self {
        GeoTransform([x, gsd, 0.0, y, 0.0, -gsd])
    }

    pub fn apply(&self, px: f64, py: f64) -> (f64, f64) {
        let c = &self.0;
        (c[0] + px * c[1] + py * c[2], c[3] + px * c[4] + py * c[5])
    }

    pub fn determinant(&self) -> f64 {
        self.0[1] * self.0[5] - self.0[2] * self.0[4]
    }

    pub fn inverse(&self) -> Result<GeoTransform> {
        let c = &self.0;
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::NonInvertibleTransform);
        }
        let inv_det = 1.0 / det;
        let a = c[5] * inv_det;
        let b = -c[2] * inv_det;
        let d = -c[4] * inv_det;
        let e = c[1] * inv_det;
        Ok(GeoTransform([-c[0] * a - c[3] * b, a, b, -c[0] * d - c[3] * e, d, e]))
    }
}

/// Pixel frame of an orthomosaic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterGrid {
    pub width: u64,
    pub height: u64,
    /// Ground sampling distance in metres per pixel.
    pub gsd: f64,
    pub geotransform: GeoTransform,
    #[serde(default)]
    pub crs: String,
}

impl RasterGrid {
    pub fn new(width: u64, height: u64, gsd: f64) -> Result<Self> {
        let g = RasterGrid {
            width,
            height,
            gsd,
            geotransform: GeoTransform::north_up(0.0, 0.0, gsd),
            crs: String::new(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_geotransform(mut self, gt: GeoTransform, crs: impl Into<String>) -> Self {
        self.geotransform = gt;
        self.crs = crs.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gsd > 0.0 && self.gsd.is_finite()) {
            return Err(Error::InvalidConfig(format!("gsd must be > 0, got {}", self.gsd)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("raster width and height must be > 0".into()));
        }
        Ok(())
    }

    pub fn extent(&self) -> PixelRect {
        PixelRect::new(0, 0, self.width as i64, self.height as i64)
    }

    pub fn pixel_to_world(&self, px: f64, py: f64) -> (f64, f64) {
        self.geotransform.apply(px, py)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trips() {
        let gt = GeoTransform([625_000.0, 0.0183, 0.001, 1_020_000.0, -0.0005, -0.0183]);
        let inv = gt.inverse().unwrap();
        for &(px, py) in &[(0.0, 0.0), (1777.0, 3555.5), (12.25, -4.0)] {
            let (x, y) = gt.apply(px, py);
            let (qx, qy) = inv.apply(x, y);
            assert!((qx - px).abs() < 1e-6 && (qy - py).abs() < 1e-6);
        }
    }

    #[test]
    fn singular_transform_rejected() {
        let gt = GeoTransform([0.0, 1.0, 2.0, 0.0, 0.5, 1.0]);
        assert!(matches!(gt.inverse(), Err(Error::NonInvertibleTransform)));
    }

    #[test]
    fn grid_validation() {
        assert!(RasterGrid::new(10, 10, 0.0).is_err());
        assert!(RasterGrid::new(0, 10, 0.01).is_err());
        assert!(RasterGrid::new(10, 10, 0.0183).is_ok());
    }
}
