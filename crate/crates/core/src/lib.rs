pub mod agreement;
pub mod error;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod pipeline;
pub mod raster_metrics;
pub mod report;
pub mod synth;
pub mod tile_metrics;
pub mod tiler;

pub use error::{Error, Result};
