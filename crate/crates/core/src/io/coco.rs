//! COCO instance JSON: images are tiles, annotations are crowns in tile pixels.
//!
//! Two extensions ride along in each image entry: `window`, the tile's
//! `[x0, y0, width, height]` in raster pixels, and `raster`, the source name.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rle::RleMask;
use super::{read_text, write_atomic};
use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, CrownInstance, PixelRect, Point, Polygon, Source};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    #[serde(default)]
    file_name: String,
    width: u64,
    height: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    window: Option<[i64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raster: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CocoAnnotation {
    #[serde(default)]
    id: u64,
    image_id: u64,
    #[serde(default = "one")]
    category_id: u64,
    segmentation: Segmentation,
    #[serde(default)]
    area: f64,
    #[serde(default)]
    bbox: [f64; 4],
    #[serde(default)]
    iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Segmentation {
    Polygons(Vec<Vec<f64>>),
    Rle { size: [u64; 2], counts: RleCounts },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RleCounts {
    Raw(Vec<u64>),
    Compressed(String),
}

/// One COCO image with its instances in tile-local pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct CocoTile {
    pub id: u64,
    pub file_name: String,
    pub width: u64,
    pub height: u64,
    pub window: Option<PixelRect>,
    pub raster: Option<String>,
    pub instances: Vec<CrownInstance>,
}

impl CocoTile {
    pub fn new(id: u64, width: u64, height: u64) -> Self {
        Self {
            id,
            file_name: format!("tile_{id}.tif"),
            width,
            height,
            window: None,
            raster: None,
            instances: Vec::new(),
        }
    }

    pub fn frame(&self) -> PixelRect {
        PixelRect::new(0, 0, self.width as i64, self.height as i64)
    }
}

fn flat_ring(flat: &[f64], ann: u64) -> Result<Polygon> {
    if flat.len() < 6 || !flat.len().is_multiple_of(2) {
        return Err(Error::Malformed(format!(
            "annotation {ann}: polygon needs an even number (≥ 6) of coordinates"
        )));
    }
    let ring = flat.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect();
    Polygon::new(ring, vec![]).map_err(|e| Error::Malformed(format!("annotation {ann}: {e}")))
}

fn decode_instance(a: &CocoAnnotation) -> Result<CrownInstance> {
    if a.iscrowd != 0 {
        return Err(Error::Malformed(format!(
            "annotation {}: crowd annotations are not supported",
            a.id
        )));
    }
    let source = if a.score.is_some() {
        Source::Prediction
    } else {
        Source::GroundTruth
    };
    let score = a.score.unwrap_or(1.0);
    match &a.segmentation {
        Segmentation::Polygons(parts) if parts.len() == 1 => {
            CrownInstance::from_polygon(flat_ring(&parts[0], a.id)?, score, source)
        }
        Segmentation::Polygons(parts) => {
            let mut mask: Option<BinaryMask> = None;
            for p in parts {
                let m = flat_ring(p, a.id)?.to_mask();
                mask = Some(match mask {
                    Some(acc) => acc.or(&m),
                    None => m,
                });
            }
            let mask = mask.ok_or_else(|| Error::Malformed(format!("annotation {}: empty segmentation", a.id)))?;
            CrownInstance::from_mask(mask, score, source)
        }
        Segmentation::Rle { size, counts } => {
            let rle = match counts {
                RleCounts::Raw(c) => RleMask {
                    size: *size,
                    counts: c.clone(),
                },
                RleCounts::Compressed(s) => RleMask::from_compressed(*size, s)?,
            };
            CrownInstance::from_mask(rle.decode()?, score, source)
        }
    }
    .map_err(|e| match e {
        Error::EmptyGeometry => Error::Malformed(format!("annotation {}: empty mask", a.id)),
        e => e,
    })
}

fn encode_instance(c: &CrownInstance, frame: PixelRect) -> Result<Segmentation> {
    if let Some(p) = c.polygon().filter(|p| p.holes().is_empty()) {
        return Ok(Segmentation::Polygons(vec![p
            .exterior()
            .iter()
            .flat_map(|q| [q.x, q.y])
            .collect()]));
    }
    if c.mask().cropped(frame).count() != c.mask().count() {
        return Err(Error::Malformed(format!(
            "mask extends outside the {}×{} image",
            frame.width, frame.height
        )));
    }
    let rle = RleMask::encode(c.mask(), frame);
    Ok(Segmentation::Rle {
        size: rle.size,
        counts: RleCounts::Raw(rle.counts),
    })
}

fn build_tiles(file: CocoFile) -> Result<Vec<CocoTile>> {
    let mut tiles: Vec<CocoTile> = Vec::with_capacity(file.images.len());
    let mut index = HashMap::new();
    for img in file.images {
        if index.insert(img.id, tiles.len()).is_some() {
            return Err(Error::Malformed(format!("duplicate image id {}", img.id)));
        }
        tiles.push(CocoTile {
            id: img.id,
            file_name: img.file_name,
            width: img.width,
            height: img.height,
            window: img.window.map(|w| PixelRect::new(w[0], w[1], w[2], w[3])),
            raster: img.raster,
            instances: Vec::new(),
        });
    }
    for a in &file.annotations {
        let &i = index.get(&a.image_id).ok_or_else(|| {
            Error::Malformed(format!("annotation {} refers to missing image id {}", a.id, a.image_id))
        })?;
        tiles[i].instances.push(decode_instance(a)?);
    }
    Ok(tiles)
}

pub fn parse_coco(text: &str) -> Result<Vec<CocoTile>> {
    let file: CocoFile = serde_json::from_str(text).map_err(|e| Error::Malformed(format!("COCO JSON: {e}")))?;
    build_tiles(file)
}

pub fn load_coco(path: impl AsRef<Path>) -> Result<Vec<CocoTile>> {
    let path = path.as_ref();
    parse_coco(&read_text(path)?).map_err(|e| match e {
        Error::Malformed(m) => Error::Malformed(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// COCO results list (a bare array of scored annotations) grouped by image id.
pub fn parse_coco_results(text: &str) -> Result<BTreeMap<u64, Vec<CrownInstance>>> {
    let anns: Vec<CocoAnnotation> =
        serde_json::from_str(text).map_err(|e| Error::Malformed(format!("COCO results: {e}")))?;
    let mut out: BTreeMap<u64, Vec<CrownInstance>> = BTreeMap::new();
    for a in &anns {
        if a.score.is_none() {
            return Err(Error::Malformed(format!("result annotation {} has no score", a.id)));
        }
        out.entry(a.image_id).or_default().push(decode_instance(a)?);
    }
    Ok(out)
}

pub fn to_coco_json(tiles: &[CocoTile]) -> Result<String> {
    let mut images = Vec::with_capacity(tiles.len());
    let mut annotations = Vec::new();
    for t in tiles {
        images.push(CocoImage {
            id: t.id,
            file_name: t.file_name.clone(),
            width: t.width,
            height: t.height,
            window: t.window.map(|w| w.as_array()),
            raster: t.raster.clone(),
        });
        for c in &t.instances {
            let b = c.bbox();
            annotations.push(CocoAnnotation {
                id: annotations.len() as u64 + 1,
                image_id: t.id,
                category_id: 1,
                segmentation: encode_instance(c, t.frame())?,
                area: c.area_px(),
                bbox: [b.x_min, b.y_min, b.width(), b.height()],
                iscrowd: 0,
                score: matches!(c.source(), Source::Prediction).then(|| c.score()),
            });
        }
    }
    let file = CocoFile {
        images,
        annotations,
        categories: vec![CocoCategory {
            id: 1,
            name: "tree".into(),
        }],
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

pub fn save_coco(path: impl AsRef<Path>, tiles: &[CocoTile]) -> Result<()> {
    write_atomic(path.as_ref(), to_coco_json(tiles)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<CocoTile> {
        let mut t = CocoTile::new(7, 64, 48);
        t.window = Some(PixelRect::new(100, 200, 64, 48));
        t.raster = Some("site".into());
        t.instances
            .push(CrownInstance::ground_truth(Polygon::rect(2.0, 3.0, 12.5, 9.25).unwrap()).unwrap());
        let ring = Polygon::new(
            vec![
                Point::new(20.0, 20.0),
                Point::new(40.0, 20.0),
                Point::new(40.0, 40.0),
                Point::new(20.0, 40.0),
            ],
            vec![vec![
                Point::new(25.0, 25.0),
                Point::new(30.0, 25.0),
                Point::new(30.0, 30.0),
                Point::new(25.0, 30.0),
            ]],
        )
        .unwrap();
        t.instances.push(CrownInstance::ground_truth(ring).unwrap());
        t.instances
            .push(CrownInstance::prediction(BinaryMask::filled(PixelRect::new(50, 10, 5, 6)), 0.625).unwrap());
        vec![t, CocoTile::new(8, 64, 48)]
    }

    #[test]
    fn round_trip() {
        let tiles = fixture();
        let back = parse_coco(&to_coco_json(&tiles).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].window, tiles[0].window);
        assert_eq!(back[0].instances[0], tiles[0].instances[0]);
        // the holed polygon travels as RLE: its mask survives, the polygon does not
        assert_eq!(back[0].instances[1].mask(), tiles[0].instances[1].mask());
        assert_eq!(back[0].instances[2], tiles[0].instances[2]);
    }

    #[test]
    fn dangling_image_id_is_named() {
        let text = r#"{"images":[{"id":1,"width":4,"height":4}],
            "annotations":[{"id":3,"image_id":42,"segmentation":[[0,0,2,0,2,2]]}]}"#;
        let err = parse_coco(text).unwrap_err().to_string();
        assert!(err.contains("42"), "{err}");
    }

    #[test]
    fn polygon_and_rle_agree() {
        let poly = r#"{"images":[{"id":1,"width":8,"height":8}],
            "annotations":[{"id":1,"image_id":1,"segmentation":[[2,2,6,2,6,6,2,6]]}]}"#;
        // 4×4 block at (2,2) in an 8×8 image, column-major
        let rle = r#"{"images":[{"id":1,"width":8,"height":8}],
            "annotations":[{"id":1,"image_id":1,"segmentation":{"size":[8,8],"counts":[18,4,4,4,4,4,4,4,18]}}]}"#;
        let a = parse_coco(poly).unwrap();
        let b = parse_coco(rle).unwrap();
        assert_eq!(a[0].instances[0].mask(), b[0].instances[0].mask());
        assert_eq!(b[0].instances[0].mask().count(), 16);
    }

    #[test]
    fn invalid_rle_sum() {
        let text = r#"{"images":[{"id":1,"width":2,"height":2}],
            "annotations":[{"id":1,"image_id":1,"segmentation":{"size":[2,2],"counts":[1,1]}}]}"#;
        assert!(matches!(parse_coco(text), Err(Error::InvalidRle(_))));
    }

    #[test]
    fn results_need_scores() {
        let ok = r#"[{"image_id":1,"segmentation":[[0,0,4,0,4,4]],"score":0.5}]"#;
        assert_eq!(parse_coco_results(ok).unwrap()[&1].len(), 1);
        let bad = r#"[{"image_id":1,"segmentation":[[0,0,4,0,4,4]]}]"#;
        assert!(parse_coco_results(bad).is_err());
    }
}
