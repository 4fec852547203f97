//! Sliding-window tiling of orthomosaics with zone masking and annotation clipping.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, CrownInstance, PixelRect, Polygon, RasterGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilingSpec {
    pub tile_size: u64,
    pub overlap: f64,
    #[serde(default)]
    pub zone: Option<Polygon>,
    #[serde(default)]
    pub min_annotation_area_ratio: f64,
}

impl TilingSpec {
    pub fn new(tile_size: u64, overlap: f64) -> Result<Self> {
        let s = Self {
            tile_size,
            overlap,
            zone: None,
            min_annotation_area_ratio: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_zone(mut self, zone: Polygon) -> Self {
        self.zone = Some(zone);
        self
    }

    pub fn with_min_area_ratio(mut self, ratio: f64) -> Result<Self> {
        self.min_annotation_area_ratio = ratio;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::InvalidConfig("tile_size must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::InvalidConfig(format!("overlap {} outside [0, 1)", self.overlap)));
        }
        if !(0.0..=1.0).contains(&self.min_annotation_area_ratio) {
            return Err(Error::InvalidConfig(format!(
                "min_annotation_area_ratio {} outside [0, 1]",
                self.min_annotation_area_ratio
            )));
        }
        Ok(())
    }

    /// `max(1, floor(tile_size · (1 − overlap)))`.
    pub fn stride(&self) -> u64 {
        // the epsilon keeps exact products like 1000 · 0.75 from flooring to 749
        ((self.tile_size as f64 * (1.0 - self.overlap) + 1e-9).floor() as u64).max(1)
    }
}

/// Window origins along one axis: stride steps plus a final window flush
/// with the far edge.
pub fn axis_origins(extent: u64, tile: u64, stride: u64) -> Vec<u64> {
    if tile >= extent {
        return vec![0];
    }
    let last = extent - tile;
    let mut out: Vec<u64> = (0..).map(|i| i * stride).take_while(|&o| o < last).collect();
    out.push(last);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileWindow {
    /// Row-major index in the unfiltered window grid.
    pub id: u64,
    pub rect: PixelRect,
}

/// Zone rasterized over the raster extent, or `None` for the whole raster.
pub fn zone_mask(grid: &RasterGrid, zone: Option<&Polygon>) -> Option<BinaryMask> {
    zone.map(|z| z.rasterize(grid.extent()))
}

/// Row-major windows covering the raster; windows without any zone pixel are skipped.
pub fn plan_tiles(grid: &RasterGrid, spec: &TilingSpec) -> Result<Vec<TileWindow>> {
    spec.validate()?;
    let zone = zone_mask(grid, spec.zone.as_ref());
    Ok(plan_with_mask(grid, spec, zone.as_ref()))
}

pub(crate) fn plan_with_mask(grid: &RasterGrid, spec: &TilingSpec, zone: Option<&BinaryMask>) -> Vec<TileWindow> {
    let stride = spec.stride();
    let xs = axis_origins(grid.width, spec.tile_size, stride);
    let ys = axis_origins(grid.height, spec.tile_size, stride);
    let t = spec.tile_size as i64;
    let mut out = Vec::new();
    for (r, &y) in ys.iter().enumerate() {
        for (c, &x) in xs.iter().enumerate() {
            let rect = PixelRect::new(x as i64, y as i64, t, t);
            if let Some(z) = zone {
                if z.cropped(rect).is_empty() {
                    continue;
                }
            }
            out.push(TileWindow {
                id: (r * xs.len() + c) as u64,
                rect,
            });
        }
    }
    out
}

/// Interleaved 8-bit raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub width: u64,
    pub height: u64,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u64, height: u64, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels == 0 || data.len() as u64 != width * height * channels as u64 {
            return Err(Error::Image(format!(
                "buffer of {} bytes does not match {width}×{height}×{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: u64, height: u64, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0; (width * height) as usize * channels],
        }
    }

    pub fn extent(&self) -> PixelRect {
        PixelRect::new(0, 0, self.width as i64, self.height as i64)
    }

    pub fn pixel(&self, x: u64, y: u64) -> &[u8] {
        let i = ((y * self.width + x) as usize) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: u64, y: u64) -> &mut [u8] {
        let i = ((y * self.width + x) as usize) * self.channels;
        &mut self.data[i..i + self.channels]
    }
}

/// A crown clipped to a tile, in tile-local pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClippedCrown {
    pub crown: CrownInstance,
    pub truncated: bool,
    /// Clipped area over original area.
    pub area_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub id: u64,
    /// Window in raster pixels; may extend past the raster when the raster is smaller than a tile.
    pub window: PixelRect,
    /// Valid pixels of the window, in raster coordinates (`validity.rect() == window`).
    pub validity: BinaryMask,
    /// `window` sized pixels; invalid pixels are zero.
    pub image: RasterImage,
    pub annotations: Vec<ClippedCrown>,
}

impl Tile {
    pub fn checksum(&self) -> String {
        sha256_hex(&self.image.data)
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Copy the window out of `image`, zeroing pixels outside the zone or the raster.
pub fn cut_tile(image: &RasterImage, window: &TileWindow, zone: Option<&BinaryMask>) -> Result<Tile> {
    let rect = window.rect;
    let inside = rect
        .intersection(&image.extent())
        .ok_or(Error::WindowOutsideRaster(rect.as_array()))?;
    let mut validity = match zone {
        Some(z) => z.cropped(rect),
        None => BinaryMask::filled(rect),
    };
    validity = validity.and(&BinaryMask::filled(inside));
    let ch = image.channels;
    let mut out = RasterImage::zeros(rect.width as u64, rect.height as u64, ch);
    for y in inside.y0..inside.y1() {
        for x in inside.x0..inside.x1() {
            if validity.get(x, y) {
                let src = image.pixel(x as u64, y as u64);
                out.pixel_mut((x - rect.x0) as u64, (y - rect.y0) as u64)
                    .copy_from_slice(src);
            }
        }
    }
    Ok(Tile {
        id: window.id,
        window: rect,
        validity,
        image: out,
        annotations: Vec::new(),
    })
}

/// Cut every window; output order follows `windows` regardless of scheduling.
pub fn cut_tiles(image: &RasterImage, windows: &[TileWindow], zone: Option<&BinaryMask>) -> Result<Vec<Tile>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        windows.par_iter().map(|w| cut_tile(image, w, zone)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        windows.iter().map(|w| cut_tile(image, w, zone)).collect()
    }
}

/// Intersect crowns (raster frame) with `window` and move them to tile-local coordinates.
///
/// Polygon-backed crowns are clipped analytically and carry the crop of their
/// full-raster mask, so a crown's tile masks agree pixel for pixel with its
/// raster mask. Crowns whose clipped share is below the spec ratio, or that
/// keep no pixel, are dropped.
pub fn clip_annotations(crowns: &[CrownInstance], window: &PixelRect, spec: &TilingSpec) -> Vec<ClippedCrown> {
    let wb = window.to_bbox();
    let mut out = Vec::new();
    for c in crowns {
        if !c.bbox().intersects(&wb) {
            continue;
        }
        let mask = c.mask().cropped(*window);
        if mask.is_empty() {
            continue;
        }
        let (polygon, ratio) = match c.polygon() {
            Some(p) => match p.clip_to_rect(&wb) {
                Some(q) => {
                    let r = q.area_px() / p.area_px();
                    (Some(q), r)
                }
                None => continue,
            },
            None => (None, mask.count() as f64 / c.mask().count() as f64),
        };
        if ratio < spec.min_annotation_area_ratio {
            continue;
        }
        let Ok(clipped) = c.replace_geometry(polygon, mask) else {
            continue;
        };
        out.push(ClippedCrown {
            crown: clipped.translated(-window.x0, -window.y0),
            truncated: ratio < 1.0 - 1e-9,
            area_ratio: ratio.min(1.0),
        });
    }
    out
}

/// Entry of a tile manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub id: u64,
    pub window: [i64; 4],
    pub split: Option<String>,
    pub source: String,
    pub checksum: String,
    pub annotations: usize,
    pub truncated: usize,
}

impl TileRecord {
    pub fn new(tile: &Tile, split: Option<&str>, source: &str) -> Self {
        Self {
            id: tile.id,
            window: tile.window.as_array(),
            split: split.map(str::to_owned),
            source: source.to_owned(),
            checksum: tile.checksum(),
            annotations: tile.annotations.len(),
            truncated: tile.annotations.iter().filter(|a| a.truncated).count(),
        }
    }
}

/// Plan, cut and annotate all tiles of one raster.
///
/// With a zone, only crowns assigned to it (mask centroid inside the zone)
/// are clipped into its tiles.
pub fn tile_raster(
    image: &RasterImage,
    grid: &RasterGrid,
    spec: &TilingSpec,
    crowns: &[CrownInstance],
) -> Result<Vec<Tile>> {
    spec.validate()?;
    if image.width != grid.width || image.height != grid.height {
        return Err(Error::Image(format!(
            "image is {}×{} but grid is {}×{}",
            image.width, image.height, grid.width, grid.height
        )));
    }
    let zone = zone_mask(grid, spec.zone.as_ref());
    let windows = plan_with_mask(grid, spec, zone.as_ref());
    let owned = zone_crowns(spec, crowns);
    let mut tiles = cut_tiles(image, &windows, zone.as_ref())?;
    for t in &mut tiles {
        t.annotations = clip_annotations(&owned, &t.window, spec);
    }
    Ok(tiles)
}

/// Crowns belonging to the spec's zone (all crowns without a zone).
pub fn zone_crowns(spec: &TilingSpec, crowns: &[CrownInstance]) -> Vec<CrownInstance> {
    match &spec.zone {
        Some(z) => crowns.iter().filter(|c| assigned_to(c, z)).cloned().collect(),
        None => crowns.to_vec(),
    }
}

fn assigned_to(c: &CrownInstance, zone: &Polygon) -> bool {
    c.mask().centroid().is_some_and(|(x, y)| zone.contains_point(x, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCount {
    pub split: String,
    pub crowns: usize,
    pub zone_area_ha: f64,
    pub crown_area_ha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Census {
    pub splits: Vec<SplitCount>,
    /// Crowns whose centroid lies in no zone.
    pub unassigned: usize,
}

/// Verify that no pixel center lies in two zones.
pub fn check_disjoint(zones: &[(String, Polygon)]) -> Result<()> {
    for i in 0..zones.len() {
        for j in i + 1..zones.len() {
            let (a, b) = (&zones[i].1, &zones[j].1);
            let ra = PixelRect::covering(&a.bbox());
            let Some(common) = ra.intersection(&PixelRect::covering(&b.bbox())) else {
                continue;
            };
            if a.rasterize(common).intersection_count(&b.rasterize(common)) > 0 {
                return Err(Error::ZoneOverlap(zones[i].0.clone(), zones[j].0.clone()));
            }
        }
    }
    Ok(())
}

/// Crown counts and hectares per split; each crown goes to the zone containing
/// its mask centroid.
pub fn split_census(zones: &[(String, Polygon)], crowns: &[CrownInstance], gsd: f64) -> Result<Census> {
    if !(gsd > 0.0) {
        return Err(Error::InvalidConfig("gsd must be > 0".into()));
    }
    check_disjoint(zones)?;
    let ha = |px: f64| px * gsd * gsd / 10_000.0;
    let mut splits: Vec<SplitCount> = zones
        .iter()
        .map(|(name, z)| SplitCount {
            split: name.clone(),
            crowns: 0,
            zone_area_ha: ha(z.area_px()),
            crown_area_ha: 0.0,
        })
        .collect();
    let mut unassigned = 0;
    for c in crowns {
        match zones.iter().position(|(_, z)| assigned_to(c, z)) {
            Some(i) => {
                splits[i].crowns += 1;
                splits[i].crown_area_ha += ha(c.area_px());
            }
            None => unassigned += 1,
        }
    }
    Ok(Census { splits, unassigned })
}
