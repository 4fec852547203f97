//! File formats: COCO JSON, GeoJSON, GeoTIFF and RLE masks.

pub mod coco;
pub mod geojson;
#[cfg(feature = "files")]
pub mod geotiff;
pub mod rle;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use coco::{load_coco, parse_coco, parse_coco_results, save_coco, to_coco_json, CocoTile};
pub use geojson::{load_features, load_geojson, parse_features, parse_geojson, save_geojson, to_geojson, PixelFeature};
pub use rle::RleMask;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Write through a sibling temporary file and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes).map_err(|e| Error::io(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}
