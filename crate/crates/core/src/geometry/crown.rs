use std::fmt;

use serde::{Deserialize, Serialize};

use super::bbox::BBox;
use super::grid::RasterGrid;
use super::mask::BinaryMask;
use super::polygon::Polygon;
use crate::error::{Error, Result};

/// Ecological crown-size class, ordered by area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SizeClass {
    Tiny,
    Small,
    Medium,
    Large,
    Giant,
}

impl SizeClass {
    pub const ALL: [SizeClass; 5] = [
        SizeClass::Tiny,
        SizeClass::Small,
        SizeClass::Medium,
        SizeClass::Large,
        SizeClass::Giant,
    ];

    /// Half-open area range `[lo, hi)` in m².
    pub fn bounds(self) -> (f64, f64) {
        match self {
            SizeClass::Tiny => (0.0, 9.0),
            SizeClass::Small => (9.0, 25.0),
            SizeClass::Medium => (25.0, 49.0),
            SizeClass::Large => (49.0, 100.0),
            SizeClass::Giant => (100.0, f64::INFINITY),
        }
    }

    pub fn contains(self, area_m2: f64) -> bool {
        let (lo, hi) = self.bounds();
        area_m2 >= lo && area_m2 < hi
    }

    pub fn name(self) -> &'static str {
        match self {
            SizeClass::Tiny => "Tiny",
            SizeClass::Small => "Small",
            SizeClass::Medium => "Medium",
            SizeClass::Large => "Large",
            SizeClass::Giant => "Giant",
        }
    }

    pub fn parse(s: &str) -> Option<SizeClass> {
        SizeClass::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn size_class(area_m2: f64) -> Result<SizeClass> {
    if !(area_m2 >= 0.0) || area_m2.is_infinite() {
        return Err(Error::InvalidArea(area_m2));
    }
    Ok(SizeClass::ALL
        .into_iter()
        .find(|c| c.contains(area_m2))
        .unwrap_or(SizeClass::Giant))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    GroundTruth,
    Prediction,
    Annotator(String),
}

/// One tree crown: a non-empty pixel mask, optionally backed by its polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrownInstance {
    polygon: Option<Polygon>,
    mask: BinaryMask,
    score: f64,
    source: Source,
}

fn check_score(score: f64) -> Result<()> {
    if (0.0..=1.0).contains(&score) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("score {score} outside [0, 1]")))
    }
}

impl CrownInstance {
    /// Polygon-backed crown; the mask is its pixel-center rasterization.
    pub fn from_polygon(polygon: Polygon, score: f64, source: Source) -> Result<Self> {
        let mask = polygon.to_mask();
        Self::with_geometry(Some(polygon), mask, score, source)
    }

    pub fn from_mask(mask: BinaryMask, score: f64, source: Source) -> Result<Self> {
        Self::with_geometry(None, mask, score, source)
    }

    pub fn with_geometry(polygon: Option<Polygon>, mask: BinaryMask, score: f64, source: Source) -> Result<Self> {
        check_score(score)?;
        if mask.is_empty() {
            return Err(Error::EmptyGeometry);
        }
        let score = match source {
            Source::Prediction => score,
            _ => 1.0,
        };
        Ok(Self {
            polygon,
            mask: mask.trimmed(),
            score,
            source,
        })
    }

    pub fn ground_truth(polygon: Polygon) -> Result<Self> {
        Self::from_polygon(polygon, 1.0, Source::GroundTruth)
    }

    pub fn prediction(mask: BinaryMask, score: f64) -> Result<Self> {
        Self::from_mask(mask, score, Source::Prediction)
    }

    pub fn polygon(&self) -> Option<&Polygon> {
        self.polygon.as_ref()
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    pub fn with_score(mut self, score: f64) -> Result<Self> {
        check_score(score)?;
        self.score = score;
        Ok(self)
    }

    pub fn with_source(mut self, source: Source) -> Self {
        if !matches!(source, Source::Prediction) {
            self.score = 1.0;
        }
        self.source = source;
        self
    }

    /// Tight box of the mask pixels.
    pub fn bbox(&self) -> BBox {
        self.mask.bbox().expect("crown masks are non-empty")
    }

    /// Shoelace area when a polygon is present, else pixel count.
    pub fn area_px(&self) -> f64 {
        match &self.polygon {
            Some(p) => p.area_px(),
            None => self.mask.count() as f64,
        }
    }

    pub fn area_m2(&self, gsd: f64) -> f64 {
        self.area_px() * gsd * gsd
    }

    pub fn size_class(&self, gsd: f64) -> Result<SizeClass> {
        size_class(self.area_m2(gsd))
    }

    /// Shift by an integer pixel offset (tile-local ↔ raster frame).
    pub fn translated(&self, dx: i64, dy: i64) -> CrownInstance {
        CrownInstance {
            polygon: self.polygon.as_ref().map(|p| p.translated(dx as f64, dy as f64)),
            mask: self.mask.translated(dx, dy),
            score: self.score,
            source: self.source.clone(),
        }
    }

    /// Drop the polygon and keep only the given mask (must be non-empty).
    pub fn replace_mask(&self, mask: BinaryMask) -> Result<CrownInstance> {
        CrownInstance::with_geometry(None, mask, self.score, self.source.clone())
    }

    pub(crate) fn replace_geometry(&self, polygon: Option<Polygon>, mask: BinaryMask) -> Result<CrownInstance> {
        CrownInstance::with_geometry(polygon, mask, self.score, self.source.clone())
    }
}

/// Crown area in m²: pixel (or shoelace) area × gsd².
pub fn crown_area_m2(crown: &CrownInstance, grid: &RasterGrid) -> f64 {
    crown.area_m2(grid.gsd)
}
