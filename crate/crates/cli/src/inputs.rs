//! Config sections shared between commands and the loaders behind them.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use canopy_core::geometry::{CrownInstance, GeoTransform, Polygon, RasterGrid, Source};
use canopy_core::io::geotiff::{decode_geotiff, read_geotiff_info};
use canopy_core::io::{parse_coco, parse_features, parse_geojson, read_bytes};
use canopy_core::raster_metrics::TileLayout;
use canopy_core::report::RunManifest;
use canopy_core::tile_metrics::ThresholdSet;
use canopy_core::tiler::RasterImage;
use canopy_core::{Error, Result};
use serde::Serialize;
use serde_json::Value;

/// Where a raster's pixel grid comes from: a GeoTIFF, or explicit numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridSource {
    pub raster: Option<PathBuf>,
    pub width: Option<u64>,
    pub height: Option<u64>,
    /// Ground sample distance in m/px; read from the GeoTIFF when absent.
    pub gsd: Option<f64>,
    /// GDAL order: `[x0, dx, rx, y0, ry, dy]`.
    pub geotransform: Option<[f64; 6]>,
    pub crs: Option<String>,
}

/// Records the hash of every input file read during a run.
pub struct Ctx {
    pub manifest: RunManifest,
}

impl Ctx {
    pub fn new(command: &str, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            manifest: RunManifest::new(command, config)?,
        })
    }

    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = read_bytes(path)?;
        self.manifest.add_input(path.display().to_string(), &bytes);
        Ok(bytes)
    }

    pub fn read_text(&mut self, path: &Path) -> Result<String> {
        let bytes = self.read(path)?;
        String::from_utf8(bytes).map_err(|_| Error::Malformed(format!("{}: not UTF-8 text", path.display())))
    }
}

pub fn thresholds(values: &Option<Vec<f64>>) -> Result<ThresholdSet> {
    match values {
        Some(v) => ThresholdSet::new(v.clone()),
        None => Ok(ThresholdSet::coco()),
    }
}

fn with_georef(mut grid: RasterGrid, src: &GridSource) -> RasterGrid {
    if let Some(gt) = src.geotransform {
        grid = grid.with_geotransform(GeoTransform(gt), src.crs.clone().unwrap_or_default());
    } else if let Some(crs) = &src.crs {
        grid.crs = crs.clone();
    }
    grid
}

impl GridSource {
    pub fn grid(&self, ctx: &mut Ctx) -> Result<RasterGrid> {
        match &self.raster {
            Some(path) => {
                ctx.read(path)?;
                let (w, h, geo) = read_geotiff_info(path)?;
                let grid = geo.grid(w, h, self.gsd).map_err(|e| match e {
                    Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
                    e => e,
                })?;
                Ok(if self.geotransform.is_some() || self.crs.is_some() {
                    with_georef(grid, self)
                } else {
                    grid
                })
            }
            None => {
                let (Some(w), Some(h), Some(gsd)) = (self.width, self.height, self.gsd) else {
                    return Err(Error::InvalidConfig(
                        "give either `raster` or all of `width`, `height`, `gsd`".into(),
                    ));
                };
                Ok(with_georef(RasterGrid::new(w, h, gsd)?, self))
            }
        }
    }

    /// Pixels and grid; the GeoTIFF is required.
    pub fn image(&self, ctx: &mut Ctx) -> Result<(RasterImage, RasterGrid)> {
        let path = self
            .raster
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("`raster` (a GeoTIFF) is required".into()))?;
        let bytes = ctx.read(path)?;
        let (image, geo) = decode_geotiff(Cursor::new(bytes)).map_err(|e| with_path(e, path))?;
        let grid = with_georef(geo.grid(image.width, image.height, self.gsd)?, self);
        Ok((image, grid))
    }
}

fn sniff(text: &str, path: &Path) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))
}

fn with_path(e: Error, path: &Path) -> Error {
    let p = path.display().to_string();
    match e {
        Error::Malformed(m) if !m.contains(&p) => Error::Malformed(format!("{p}: {m}")),
        Error::Image(m) => Error::Image(format!("{p}: {m}")),
        e => e,
    }
}

/// Raster-frame crowns from GeoJSON or from a single-image COCO file.
pub fn load_crowns(path: &Path, grid: &RasterGrid, ctx: &mut Ctx) -> Result<Vec<CrownInstance>> {
    let (tiles, layout) = load_tiled(path, grid, None, ctx)?;
    if tiles.len() != 1 {
        return Err(Error::Malformed(format!(
            "{}: expected one raster-wide image, found {} tiles",
            path.display(),
            tiles.len()
        )));
    }
    let (id, crowns) = tiles.into_iter().next().expect("one tile");
    let w = layout.windows[&id];
    Ok(crowns.iter().map(|c| c.translated(w.x0, w.y0)).collect())
}

/// Tile-local instances keyed by tile id with their windows.
///
/// GeoJSON is read as a single tile spanning the raster. COCO images need a
/// `window` unless there is exactly one image the size of the raster. When
/// `raster_name` is given and images name their raster, only matching images
/// are kept.
pub fn load_tiled(
    path: &Path,
    grid: &RasterGrid,
    raster_name: Option<&str>,
    ctx: &mut Ctx,
) -> Result<(BTreeMap<u64, Vec<CrownInstance>>, TileLayout)> {
    let text = ctx.read_text(path)?;
    let doc = sniff(&text, path)?;
    let mut layout = TileLayout::new(grid.extent());
    let mut tiles = BTreeMap::new();
    if doc.get("images").is_some() {
        let mut coco = parse_coco(&text).map_err(|e| with_path(e, path))?;
        if let Some(name) = raster_name {
            if coco.iter().any(|t| t.raster.is_some()) {
                coco.retain(|t| t.raster.as_deref() == Some(name));
                if coco.is_empty() {
                    return Err(Error::Malformed(format!(
                        "{}: no images for raster {name}",
                        path.display()
                    )));
                }
            }
        }
        let single = coco.len() == 1;
        for t in coco {
            let window = match t.window {
                Some(w) => w,
                None if single && t.width == grid.width && t.height == grid.height => grid.extent(),
                None => {
                    return Err(Error::Malformed(format!(
                        "{}: image {} has no `window`; cannot place it in the raster",
                        path.display(),
                        t.id
                    )))
                }
            };
            layout = layout.with_tile(t.id, window);
            tiles.insert(t.id, t.instances);
        }
    } else if doc.get("type").is_some() {
        let crowns = parse_geojson(&text, grid).map_err(|e| with_path(e, path))?;
        layout = layout.with_tile(0, grid.extent());
        tiles.insert(0, crowns);
    } else {
        return Err(Error::Malformed(format!(
            "{}: neither GeoJSON nor a COCO file",
            path.display()
        )));
    }
    Ok((tiles, layout))
}

pub fn require_predictions(tiles: &BTreeMap<u64, Vec<CrownInstance>>, path: &Path) -> Result<()> {
    for crowns in tiles.values() {
        if crowns.iter().any(|c| !matches!(c.source(), Source::Prediction)) {
            return Err(Error::Malformed(format!(
                "{}: every prediction needs a `score`",
                path.display()
            )));
        }
    }
    Ok(())
}

pub fn ground_truth(crowns: Vec<CrownInstance>) -> Vec<CrownInstance> {
    crowns.into_iter().map(|c| c.with_source(Source::GroundTruth)).collect()
}

/// Polygons with a string property; features lacking it are an error.
pub fn named_polygons(path: &Path, grid: &RasterGrid, property: &str, ctx: &mut Ctx) -> Result<Vec<(String, Polygon)>> {
    let text = ctx.read_text(path)?;
    parse_features(&text, grid)
        .map_err(|e| with_path(e, path))?
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let name = f.properties.get(property).and_then(Value::as_str).ok_or_else(|| {
                Error::Malformed(format!("{}: feature {i} has no `{property}` property", path.display()))
            })?;
            Ok((name.to_owned(), f.polygon))
        })
        .collect()
}

/// The first polygon of a GeoJSON file.
pub fn region_polygon(path: &Path, grid: &RasterGrid, ctx: &mut Ctx) -> Result<Polygon> {
    let text = ctx.read_text(path)?;
    parse_features(&text, grid)
        .map_err(|e| with_path(e, path))?
        .into_iter()
        .next()
        .map(|f| f.polygon)
        .ok_or_else(|| Error::Malformed(format!("{}: no polygon", path.display())))
}
