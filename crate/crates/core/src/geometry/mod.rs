//! Crown geometry: polygons, pixel masks, boxes and the raster frame.
//!
//! Everything is expressed in pixel units of the parent orthomosaic. World
//! coordinates only appear at I/O boundaries through [`GeoTransform`].

mod bbox;
mod crown;
mod grid;
mod mask;
mod polygon;

pub use bbox::{box_iou, BBox, PixelRect};
pub use crown::{crown_area_m2, size_class, CrownInstance, SizeClass, Source};
pub use grid::{GeoTransform, RasterGrid};
pub use mask::{mask_iou, mask_to_box, BinaryMask, Side};
pub use polygon::{polygon_area_px, rasterize, ring_signed_area, Point, Polygon};
