//! 8-bit georeferenced TIFF: pixel scale + tiepoint (or a full model
//! transformation) and an EPSG code in the GeoKey directory.

use std::fs::File;
use std::io::{BufReader, Cursor, Read, Seek, Write};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::tags::Tag;
use tiff::ColorType;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, GeoTransform, RasterGrid};
use crate::tiler::{RasterImage, Tile};

const MODEL_TRANSFORMATION: u16 = 34264;
const GT_MODEL_TYPE: u16 = 1024;
const GT_RASTER_TYPE: u16 = 1025;
const GEOGRAPHIC_TYPE: u16 = 2048;
const PROJECTED_CS_TYPE: u16 = 3072;

fn tiff_err(e: tiff::TiffError) -> Error {
    Error::Image(e.to_string())
}

/// Georeferencing read from the tags; identity-like when absent.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoInfo {
    pub geotransform: Option<GeoTransform>,
    pub crs: Option<String>,
}

impl GeoInfo {
    /// A grid for the image; `gsd` falls back to the pixel scale when not given.
    pub fn grid(&self, width: u64, height: u64, gsd: Option<f64>) -> Result<RasterGrid> {
        let gt = self.geotransform;
        let gsd = match (gsd, gt) {
            (Some(g), _) => g,
            (None, Some(t)) => t.0[1].hypot(t.0[4]),
            (None, None) => {
                return Err(Error::InvalidConfig(
                    "image has no georeferencing; set gsd explicitly".into(),
                ))
            }
        };
        let mut g = RasterGrid::new(width, height, gsd)?;
        if let Some(t) = gt {
            g = g.with_geotransform(t, self.crs.clone().unwrap_or_default());
        }
        Ok(g)
    }
}

fn read_geo<R: Read + Seek>(d: &mut Decoder<R>) -> Result<GeoInfo> {
    let f64s = |d: &mut Decoder<R>, tag: Tag| -> Result<Option<Vec<f64>>> {
        match d.find_tag(tag).map_err(tiff_err)? {
            Some(v) => Ok(Some(v.into_f64_vec().map_err(tiff_err)?)),
            None => Ok(None),
        }
    };
    let scale = f64s(d, Tag::ModelPixelScaleTag)?;
    let tie = f64s(d, Tag::ModelTiepointTag)?;
    let matrix = f64s(d, Tag::Unknown(MODEL_TRANSFORMATION))?;
    let geotransform = match (matrix, scale, tie) {
        (Some(m), _, _) if m.len() >= 8 => Some(GeoTransform([m[3], m[0], m[1], m[7], m[4], m[5]])),
        (_, Some(s), Some(t)) if s.len() >= 2 && t.len() >= 6 => {
            let (i, j, x, y) = (t[0], t[1], t[3], t[4]);
            Some(GeoTransform([x - i * s[0], s[0], 0.0, y + j * s[1], 0.0, -s[1]]))
        }
        _ => None,
    };
    let keys = d
        .find_tag_unsigned_vec::<u16>(Tag::GeoKeyDirectoryTag)
        .map_err(tiff_err)?
        .unwrap_or_default();
    let mut crs = None;
    for k in keys.chunks_exact(4).skip(1) {
        if (k[0] == PROJECTED_CS_TYPE || k[0] == GEOGRAPHIC_TYPE) && k[1] == 0 && k[3] != 32767 {
            crs = Some(format!("EPSG:{}", k[3]));
            if k[0] == PROJECTED_CS_TYPE {
                break;
            }
        }
    }
    Ok(GeoInfo { geotransform, crs })
}

pub fn decode_geotiff<R: Read + Seek>(reader: R) -> Result<(RasterImage, GeoInfo)> {
    let mut d = Decoder::new(reader).map_err(tiff_err)?;
    let (w, h) = d.dimensions().map_err(tiff_err)?;
    let channels = match d.colortype().map_err(tiff_err)? {
        ColorType::Gray(8) => 1,
        ColorType::GrayA(8) => 2,
        ColorType::RGB(8) => 3,
        ColorType::RGBA(8) => 4,
        other => {
            return Err(Error::Image(format!(
                "unsupported TIFF colour type {other:?}; need 8-bit gray/RGB(A)"
            )))
        }
    };
    let geo = read_geo(&mut d)?;
    let data = match d.read_image().map_err(tiff_err)? {
        DecodingResult::U8(v) => v,
        _ => return Err(Error::Image("expected 8-bit samples".into())),
    };
    Ok((RasterImage::new(w as u64, h as u64, channels, data)?, geo))
}

pub fn read_geotiff(path: impl AsRef<Path>) -> Result<(RasterImage, GeoInfo)> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_geotiff(BufReader::new(f))
}

/// Size and georeferencing without decoding the pixels.
pub fn read_geotiff_info(path: impl AsRef<Path>) -> Result<(u64, u64, GeoInfo)> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut d = Decoder::new(BufReader::new(f)).map_err(tiff_err)?;
    let (w, h) = d.dimensions().map_err(tiff_err)?;
    Ok((w as u64, h as u64, read_geo(&mut d)?))
}

fn epsg_code(crs: &str) -> Option<u16> {
    crs.strip_prefix("EPSG:").and_then(|c| c.parse().ok())
}

/// Encode RGB(A) (alpha appended from `validity` when given) with georeferencing.
pub fn encode_geotiff<W: Write + Seek>(
    out: W,
    image: &RasterImage,
    validity: Option<&BinaryMask>,
    gt: &GeoTransform,
    crs: &str,
) -> Result<()> {
    let (w, h) = (image.width as u32, image.height as u32);
    let mut enc = TiffEncoder::new(out).map_err(tiff_err)?;
    let geokeys: Vec<u16> = match epsg_code(crs) {
        Some(code) => {
            let geographic = (4000..5000).contains(&code);
            let (model, cs_key) = if geographic {
                (2, GEOGRAPHIC_TYPE)
            } else {
                (1, PROJECTED_CS_TYPE)
            };
            vec![
                1,
                1,
                0,
                3,
                GT_MODEL_TYPE,
                0,
                1,
                model,
                GT_RASTER_TYPE,
                0,
                1,
                1,
                cs_key,
                0,
                1,
                code,
            ]
        }
        None => vec![1, 1, 0, 1, GT_RASTER_TYPE, 0, 1, 1],
    };
    let c = gt.0;
    let write_tags = |d: &mut tiff::encoder::DirectoryEncoder<'_, W, tiff::encoder::TiffKindStandard>| -> Result<()> {
        if c[2] == 0.0 && c[4] == 0.0 {
            d.write_tag(Tag::ModelPixelScaleTag, &[c[1], -c[5], 0.0][..])
                .map_err(tiff_err)?;
            d.write_tag(Tag::ModelTiepointTag, &[0.0, 0.0, 0.0, c[0], c[3], 0.0][..])
                .map_err(tiff_err)?;
        } else {
            let m = [
                c[1], c[2], 0.0, c[0], c[4], c[5], 0.0, c[3], 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
            ];
            d.write_tag(Tag::Unknown(MODEL_TRANSFORMATION), &m[..])
                .map_err(tiff_err)?;
        }
        d.write_tag(Tag::GeoKeyDirectoryTag, &geokeys[..]).map_err(tiff_err)?;
        Ok(())
    };
    let rgb: Vec<u8> = match image.channels {
        1 => image.data.iter().flat_map(|&v| [v, v, v]).collect(),
        3 => image.data.clone(),
        4 => image.data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        n => return Err(Error::Image(format!("cannot export {n}-channel image"))),
    };
    match validity {
        Some(v) => {
            let (x0, y0) = v.origin();
            let mut rgba = Vec::with_capacity(rgb.len() / 3 * 4);
            for (i, p) in rgb.chunks_exact(3).enumerate() {
                let (x, y) = ((i as u64 % image.width) as i64, (i as u64 / image.width) as i64);
                let a = if v.get(x0 + x, y0 + y) { 255 } else { 0 };
                rgba.extend_from_slice(&[p[0], p[1], p[2], a]);
            }
            let mut img = enc.new_image::<colortype::RGBA8>(w, h).map_err(tiff_err)?;
            write_tags(img.encoder())?;
            img.write_data(&rgba).map_err(tiff_err)?;
        }
        None => {
            let mut img = enc.new_image::<colortype::RGB8>(w, h).map_err(tiff_err)?;
            write_tags(img.encoder())?;
            img.write_data(&rgb).map_err(tiff_err)?;
        }
    }
    Ok(())
}

pub fn write_geotiff(
    path: impl AsRef<Path>,
    image: &RasterImage,
    validity: Option<&BinaryMask>,
    gt: &GeoTransform,
    crs: &str,
) -> Result<()> {
    let mut buf = Cursor::new(Vec::new());
    encode_geotiff(&mut buf, image, validity, gt, crs)?;
    write_atomic(path.as_ref(), &buf.into_inner())
}

/// Export a tile with alpha marking its invalid pixels, georeferenced at the tile origin.
pub fn write_tile(path: impl AsRef<Path>, tile: &Tile, grid: &RasterGrid) -> Result<()> {
    let c = grid.geotransform.0;
    let (x, y) = grid.pixel_to_world(tile.window.x0 as f64, tile.window.y0 as f64);
    let gt = GeoTransform([x, c[1], c[2], y, c[4], c[5]]);
    write_geotiff(path, &tile.image, Some(&tile.validity), &gt, &grid.crs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PixelRect;

    #[test]
    fn round_trip_with_alpha_and_georeferencing() {
        let img = RasterImage::new(4, 3, 3, (0..36).map(|v| v as u8).collect()).unwrap();
        let validity = BinaryMask::from_fn(PixelRect::new(10, 20, 4, 3), |x, _| x < 12);
        let gt = GeoTransform::north_up(625_000.0, 1_020_000.0, 0.0183);
        let mut buf = Cursor::new(Vec::new());
        encode_geotiff(&mut buf, &img, Some(&validity), &gt, "EPSG:32617").unwrap();
        buf.set_position(0);
        let (back, geo) = decode_geotiff(buf).unwrap();
        assert_eq!(back.channels, 4);
        assert_eq!(back.pixel(1, 2), &[27, 28, 29, 255]);
        assert_eq!(back.pixel(2, 0)[3], 0);
        assert_eq!(geo.geotransform, Some(gt));
        assert_eq!(geo.crs.as_deref(), Some("EPSG:32617"));
    }

    #[test]
    fn rotated_transform_uses_matrix_tag() {
        let img = RasterImage::zeros(2, 2, 3);
        let gt = GeoTransform([10.0, 0.5, 0.1, 20.0, 0.1, -0.5]);
        let mut buf = Cursor::new(Vec::new());
        encode_geotiff(&mut buf, &img, None, &gt, "").unwrap();
        buf.set_position(0);
        let (back, geo) = decode_geotiff(buf).unwrap();
        assert_eq!(back, img);
        assert_eq!(geo.geotransform, Some(gt));
        assert_eq!(geo.crs, None);
    }
}
