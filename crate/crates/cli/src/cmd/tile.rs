//! Cut an orthomosaic into overlapping tiles with clipped annotations.

use std::collections::BTreeMap;
use std::path::PathBuf;

use canopy_core::geometry::{CrownInstance, Polygon};
use canopy_core::io::geotiff::write_tile;
use canopy_core::io::{to_coco_json, CocoTile};
use canopy_core::report::RunManifest;
use canopy_core::tiler::{
    check_disjoint, clip_annotations, cut_tile, plan_tiles, split_census, zone_crowns, zone_mask, Census, TileRecord,
    TilingSpec,
};
use canopy_core::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::Table;

use crate::config::typed;
use crate::inputs::{ground_truth, load_crowns, named_polygons, Ctx, GridSource};
use crate::output::OutDir;

#[derive(Debug, Serialize, Deserialize)]
pub struct Config {
    pub raster: PathBuf,
    #[serde(default)]
    pub gsd: Option<f64>,
    #[serde(default)]
    pub geotransform: Option<[f64; 6]>,
    #[serde(default)]
    pub crs: Option<String>,
    /// GeoJSON crowns to clip into the tiles.
    #[serde(default)]
    pub annotations: Option<PathBuf>,
    pub tile_size: u64,
    pub overlap: f64,
    #[serde(default)]
    pub min_annotation_area_ratio: f64,
    /// GeoJSON of disjoint split zones, one polygon per split.
    #[serde(default)]
    pub zones: Option<PathBuf>,
    #[serde(default = "default_split_property")]
    pub split_property: String,
    #[serde(default = "yes")]
    pub write_images: bool,
}

fn default_split_property() -> String {
    "split".into()
}

fn yes() -> bool {
    true
}

#[derive(Serialize)]
struct Report {
    tile_size: u64,
    stride: u64,
    tiles: BTreeMap<String, usize>,
    annotations: BTreeMap<String, usize>,
    census: Option<Census>,
    manifest: RunManifest,
}

pub fn run(table: &Table, out: &mut OutDir) -> Result<String> {
    let cfg: Config = typed(table)?;
    let base = TilingSpec::new(cfg.tile_size, cfg.overlap)?.with_min_area_ratio(cfg.min_annotation_area_ratio)?;
    let mut ctx = Ctx::new("tile", &cfg)?;
    let (image, grid) = GridSource {
        raster: Some(cfg.raster.clone()),
        gsd: cfg.gsd,
        geotransform: cfg.geotransform,
        crs: cfg.crs.clone(),
        ..Default::default()
    }
    .image(&mut ctx)?;
    let source = cfg
        .raster
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "raster".into());
    let crowns: Vec<CrownInstance> = match &cfg.annotations {
        Some(p) => ground_truth(load_crowns(p, &grid, &mut ctx)?),
        None => Vec::new(),
    };
    let zones: Vec<(String, Polygon)> = match &cfg.zones {
        Some(p) => {
            let z = named_polygons(p, &grid, &cfg.split_property, &mut ctx)?;
            check_disjoint(&z)?;
            let mut names: Vec<&str> = z.iter().map(|(n, _)| n.as_str()).collect();
            names.sort_unstable();
            if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::InvalidConfig(format!(
                    "split {} appears twice in {}",
                    w[0],
                    p.display()
                )));
            }
            z
        }
        None => Vec::new(),
    };
    let census = if zones.is_empty() {
        None
    } else {
        Some(split_census(&zones, &crowns, grid.gsd)?)
    };
    let specs: Vec<(String, TilingSpec)> = if zones.is_empty() {
        vec![("all".into(), base.clone())]
    } else {
        zones
            .iter()
            .map(|(n, z)| (n.clone(), base.clone().with_zone(z.clone())))
            .collect()
    };

    let mut records = Vec::new();
    let mut counts = BTreeMap::new();
    let mut ann_counts = BTreeMap::new();
    for (split, spec) in &specs {
        let zone = zone_mask(&grid, spec.zone.as_ref());
        let owned = zone_crowns(spec, &crowns);
        let mut coco = Vec::new();
        for w in plan_tiles(&grid, spec)? {
            let mut tile = cut_tile(&image, &w, zone.as_ref())?;
            tile.annotations = clip_annotations(&owned, &tile.window, spec);
            let file = format!("{split}/tile_{}.tif", tile.id);
            if cfg.write_images {
                write_tile(out.path(&file), &tile, &grid)?;
                out.note(file.clone());
            }
            let split_name = (!zones.is_empty()).then_some(split.as_str());
            records.push(TileRecord::new(&tile, split_name, &source));
            let mut ct = CocoTile::new(tile.id, tile.window.width as u64, tile.window.height as u64);
            ct.file_name = file;
            ct.window = Some(tile.window);
            ct.raster = Some(source.clone());
            ct.instances = tile.annotations.into_iter().map(|a| a.crown).collect();
            *ann_counts.entry(split.clone()).or_insert(0) += ct.instances.len();
            coco.push(ct);
        }
        counts.insert(split.clone(), coco.len());
        out.write(&format!("{split}.json"), to_coco_json(&coco)?.as_bytes())?;
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "id",
        "split",
        "source",
        "x0",
        "y0",
        "width",
        "height",
        "annotations",
        "truncated",
        "checksum",
    ])?;
    for r in &records {
        let [x0, y0, ww, hh] = r.window;
        w.write_record([
            r.id.to_string(),
            r.split.clone().unwrap_or_default(),
            r.source.clone(),
            x0.to_string(),
            y0.to_string(),
            ww.to_string(),
            hh.to_string(),
            r.annotations.to_string(),
            r.truncated.to_string(),
            r.checksum.clone(),
        ])?;
    }
    out.write("tiles.csv", &finish_csv(w)?)?;
    if let Some(c) = &census {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &c.splits {
            w.serialize(s)?;
        }
        out.write("census.csv", &finish_csv(w)?)?;
    }
    let summary = counts
        .iter()
        .map(|(s, n)| format!("{s}: {n} tiles, {} annotations", ann_counts[s]))
        .collect::<Vec<_>>()
        .join("\n");
    out.json(
        "report.json",
        &Report {
            tile_size: base.tile_size,
            stride: base.stride(),
            tiles: counts,
            annotations: ann_counts,
            census,
            manifest: ctx.manifest,
        },
    )?;
    Ok(summary)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
}
