//! GeoJSON polygons in world coordinates ↔ crowns in raster pixels.

use std::path::Path;

use serde_json::{json, Map, Value};

use super::{read_text, write_atomic};
use crate::error::{Error, Result};
use crate::geometry::{CrownInstance, GeoTransform, Point, Polygon, RasterGrid, Source};

/// A polygon feature in pixel coordinates with its properties.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeature {
    pub polygon: Polygon,
    pub properties: Map<String, Value>,
}

fn ring_from_json(v: &Value, inv: &GeoTransform, what: &str) -> Result<Vec<Point>> {
    let coords = v
        .as_array()
        .ok_or_else(|| Error::Malformed(format!("{what}: ring is not an array")))?;
    let mut pts = Vec::with_capacity(coords.len());
    for c in coords {
        let xy = c
            .as_array()
            .filter(|a| a.len() >= 2)
            .and_then(|a| Some((a[0].as_f64()?, a[1].as_f64()?)))
            .ok_or_else(|| Error::Malformed(format!("{what}: bad coordinate {c}")))?;
        let (px, py) = inv.apply(xy.0, xy.1);
        pts.push(Point::new(px, py));
    }
    if pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    Ok(pts)
}

fn polygon_from_geometry(g: &Value, inv: &GeoTransform, what: &str) -> Result<Polygon> {
    let kind = g.get("type").and_then(Value::as_str).unwrap_or("<missing>");
    let coords = g.get("coordinates");
    let rings = match (kind, coords) {
        ("Polygon", Some(c)) => c.clone(),
        ("MultiPolygon", Some(Value::Array(parts))) if parts.len() == 1 => parts[0].clone(),
        ("MultiPolygon", _) => {
            return Err(Error::UnsupportedGeometry(format!("{what}: multi-part polygon")));
        }
        (other, _) => return Err(Error::UnsupportedGeometry(format!("{what}: {other}"))),
    };
    let rings = rings
        .as_array()
        .filter(|r| !r.is_empty())
        .ok_or_else(|| Error::Malformed(format!("{what}: polygon without rings")))?;
    let exterior = ring_from_json(&rings[0], inv, what)?;
    let holes = rings[1..]
        .iter()
        .map(|r| ring_from_json(r, inv, what))
        .collect::<Result<_>>()?;
    Polygon::new(exterior, holes).map_err(|e| Error::Malformed(format!("{what}: {e}")))
}

/// CRS name from the legacy `crs` member, if any.
pub fn geojson_crs(doc: &Value) -> Option<String> {
    doc.pointer("/crs/properties/name")
        .and_then(Value::as_str)
        .map(str::to_owned)
}

/// Polygon features mapped into the grid's pixel frame via the inverse geotransform.
pub fn parse_features(text: &str, grid: &RasterGrid) -> Result<Vec<PixelFeature>> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Malformed(format!("GeoJSON: {e}")))?;
    if let (Some(file_crs), false) = (geojson_crs(&doc), grid.crs.is_empty()) {
        if file_crs != grid.crs {
            log::warn!("GeoJSON CRS {file_crs} differs from raster CRS {}", grid.crs);
        }
    }
    let inv = grid.geotransform.inverse()?;
    let features = match doc.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => doc
            .get("features")
            .and_then(Value::as_array)
            .cloned()
            .ok_or_else(|| Error::Malformed("FeatureCollection without features".into()))?,
        Some("Feature") => vec![doc.clone()],
        other => return Err(Error::Malformed(format!("unsupported GeoJSON type {other:?}"))),
    };
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let what = format!("feature {i}");
            let geometry = f
                .get("geometry")
                .ok_or_else(|| Error::Malformed(format!("{what}: no geometry")))?;
            Ok(PixelFeature {
                polygon: polygon_from_geometry(geometry, &inv, &what)?,
                properties: f
                    .get("properties")
                    .and_then(Value::as_object)
                    .cloned()
                    .unwrap_or_default(),
            })
        })
        .collect()
}

/// Crowns from polygon features. A numeric `score` property marks predictions,
/// an `annotator` property marks annotator layers, anything else is ground truth.
pub fn parse_geojson(text: &str, grid: &RasterGrid) -> Result<Vec<CrownInstance>> {
    parse_features(text, grid)?
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let score = f.properties.get("score").and_then(Value::as_f64);
            let source = match (score, f.properties.get("annotator").and_then(Value::as_str)) {
                (Some(_), _) => Source::Prediction,
                (None, Some(a)) => Source::Annotator(a.to_owned()),
                (None, None) => Source::GroundTruth,
            };
            CrownInstance::from_polygon(f.polygon, score.unwrap_or(1.0), source)
                .map_err(|e| Error::Malformed(format!("feature {i}: {e}")))
        })
        .collect()
}

pub fn load_geojson(path: impl AsRef<Path>, grid: &RasterGrid) -> Result<Vec<CrownInstance>> {
    let path = path.as_ref();
    parse_geojson(&read_text(path)?, grid).map_err(|e| match e {
        Error::Malformed(m) => Error::Malformed(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn load_features(path: impl AsRef<Path>, grid: &RasterGrid) -> Result<Vec<PixelFeature>> {
    parse_features(&read_text(path.as_ref())?, grid)
}

fn ring_to_json(ring: &[Point], gt: &GeoTransform) -> Value {
    let mut pts: Vec<Value> = ring
        .iter()
        .map(|p| {
            let (x, y) = gt.apply(p.x, p.y);
            json!([x, y])
        })
        .collect();
    if let Some(first) = pts.first().cloned() {
        pts.push(first);
    }
    Value::Array(pts)
}

/// FeatureCollection in world coordinates; mask-only crowns are skipped with a warning.
pub fn to_geojson(crowns: &[CrownInstance], grid: &RasterGrid) -> Value {
    let features: Vec<Value> = crowns
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            let Some(p) = c.polygon() else {
                log::warn!("crown {i} has no polygon and is left out of the GeoJSON");
                return None;
            };
            let rings: Vec<Value> = p.rings().map(|r| ring_to_json(r, &grid.geotransform)).collect();
            let mut props = Map::new();
            match c.source() {
                Source::Prediction => {
                    props.insert("score".into(), json!(c.score()));
                }
                Source::Annotator(a) => {
                    props.insert("annotator".into(), json!(a));
                }
                Source::GroundTruth => {}
            }
            props.insert("area_m2".into(), json!(c.area_m2(grid.gsd)));
            Some(json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": rings},
                "properties": props,
            }))
        })
        .collect();
    let mut doc = json!({"type": "FeatureCollection", "features": features});
    if !grid.crs.is_empty() {
        doc["crs"] = json!({"type": "name", "properties": {"name": grid.crs}});
    }
    doc
}

pub fn save_geojson(path: impl AsRef<Path>, crowns: &[CrownInstance], grid: &RasterGrid) -> Result<()> {
    let mut s = serde_json::to_string_pretty(&to_geojson(crowns, grid))?;
    s.push('\n');
    write_atomic(path.as_ref(), s.as_bytes())
}
