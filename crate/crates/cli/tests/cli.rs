use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn canopy(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canopy"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn canopy")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = canopy(dir, args);
    assert!(
        out.status.success(),
        "canopy {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const PIPELINE: &str = r#"
write_inputs = true
[tiling]
tile_size = 250
overlap = 0.5
[backend]
kind = "oracle"
[[rasters]]
name = "a"
synthetic = { width = 750, height = 750, crowns = 25, cell = 250, seed = 11 }
[[rasters]]
name = "b"
synthetic = { width = 750, height = 750, crowns = 25, cell = 250, seed = 12 }
"#;

const EVAL: &str = r#"
[[rasters]]
name = "a"
raster = "gen/a.tif"
gt = "gen/a.gt.geojson"
predictions = "gen/a.predictions.json"
[[rasters]]
name = "b"
raster = "gen/b.tif"
gt = "gen/b.gt.geojson"
predictions = "gen/b.predictions.json"
"#;

/// Writes synthetic rasters, ground truth and oracle predictions into `gen/`.
fn fixture(extra: &[&str]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("pipeline.toml"), PIPELINE).unwrap();
    fs::write(dir.path().join("eval.toml"), EVAL).unwrap();
    let mut args = vec!["pipeline-run", "-c", "pipeline.toml", "-o", "gen"];
    args.extend_from_slice(extra);
    ok(dir.path(), &args);
    dir
}

fn mrf1(report: &Value) -> f64 {
    report["raster"]["all"]["mrf1"].as_f64().unwrap()
}

#[test]
fn perfect_predictions_score_one_and_match_the_pipeline_report() {
    let dir = fixture(&[]);
    let d = dir.path();
    let stdout = ok(d, &["eval-raster", "-c", "eval.toml", "-o", "ev"]);
    assert!(stdout.contains("mRF1 100.0"), "{stdout}");
    let ev = json(d.join("ev/report.json"));
    assert_eq!(mrf1(&ev), 1.0);
    let pr = json(d.join("gen/report.json"));
    assert_eq!(ev["raster"], pr["raster"]);
    assert_eq!(ev["manifest"]["command"], "eval-raster");
    assert_eq!(ev["manifest"]["inputs"].as_object().unwrap().len(), 6);
    let info = json(d.join("ev/run-info.json"));
    assert!(info["started"].is_string() && info["finished"].is_string());
}

#[test]
fn missing_input_exits_2_and_names_the_path() {
    let dir = fixture(&[]);
    let out = canopy(
        dir.path(),
        &[
            "eval-raster",
            "-c",
            "eval.toml",
            "--set",
            "rasters.1.gt=gen/missing.geojson",
            "-o",
            "ev",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen/missing.geojson"));

    let out = canopy(dir.path(), &["eval-raster", "-c", "nope.toml", "-o", "ev"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.toml"));
}

#[test]
fn validation_errors_exit_1() {
    let dir = fixture(&[]);
    let d = dir.path();
    for set in [
        "aggregation.nms_iou=0",
        "aggregation.colour=3",
        "thresholds=[0.7, 0.5]",
        "rasters.0.gsd=-1",
    ] {
        let out = canopy(d, &["eval-raster", "-c", "eval.toml", "--set", set, "-o", "ev"]);
        assert_eq!(
            out.status.code(),
            Some(1),
            "--set {set}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    fs::write(d.join("bad.toml"), "rasters = [").unwrap();
    assert_eq!(
        canopy(d, &["eval-raster", "-c", "bad.toml", "-o", "ev"]).status.code(),
        Some(1)
    );
    fs::write(d.join("gen/a.predictions.json"), "{\"images\": 3}").unwrap();
    assert_eq!(
        canopy(d, &["eval-raster", "-c", "eval.toml", "-o", "ev"]).status.code(),
        Some(1)
    );
}

#[test]
fn optimized_thresholds_feed_back_into_eval_raster() {
    let dir = fixture(&[
        "--set",
        "backend.detector.spurious_rate=0.4",
        "--set",
        "backend.detector.shift_sigma=1.5",
        "--set",
        "backend.segmenter.boundary_noise=0.05",
    ]);
    let d = dir.path();
    let stdout = ok(d, &["optimize-thresholds", "-c", "eval.toml", "-o", "opt"]);
    assert!(stdout.starts_with("best nms_iou"), "{stdout}");
    let opt = json(d.join("opt/report.json"));
    assert_eq!(opt["cells"], 14 * 19);
    let audit = fs::read_to_string(d.join("opt/audit.csv")).unwrap();
    assert_eq!(audit.lines().count(), 1 + 14 * 19);

    ok(
        d,
        &[
            "eval-raster",
            "-c",
            "eval.toml",
            "-c",
            "opt/aggregation.toml",
            "-o",
            "ev",
        ],
    );
    let ev = json(d.join("ev/report.json"));
    let best = opt["best_objective"].as_f64().unwrap();
    assert!((mrf1(&ev) - best).abs() < 1e-12, "{} vs {best}", mrf1(&ev));
    assert_eq!(ev["manifest"]["config"]["aggregation"], opt["best"]);

    // no other grid cell beats the emitted one
    for line in audit.lines().skip(1) {
        let v: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(v <= best + 1e-12);
    }
}

fn artifacts(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "run-info.json")
        .map(|p| {
            let b = fs::read(&p).unwrap();
            (p.strip_prefix(dir).unwrap().to_path_buf(), b)
        })
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical() {
    let dir = fixture(&[
        "--set",
        "backend.detector.spurious_rate=0.3",
        "--set",
        "backend.detector.drop_rate=0.2",
    ]);
    let d = dir.path();
    ok(
        d,
        &[
            "pipeline-run",
            "-c",
            "pipeline.toml",
            "--set",
            "backend.detector.spurious_rate=0.3",
            "--set",
            "backend.detector.drop_rate=0.2",
            "-o",
            "gen2",
        ],
    );
    assert_eq!(artifacts(&d.join("gen")), artifacts(&d.join("gen2")));
    for run in ["e1", "e2"] {
        ok(
            d,
            &[
                "optimize-thresholds",
                "-c",
                "eval.toml",
                "--set",
                "grid.nms_iou=[0.3, 0.5]",
                "-o",
                run,
            ],
        );
    }
    assert_eq!(artifacts(&d.join("e1")), artifacts(&d.join("e2")));
    assert!(!artifacts(&d.join("e1")).is_empty());
}

fn zones(path: &Path) {
    // the synthetic grid is north-up at 0.05 m/px from (0, 0): y is negative downwards
    let rect = |x0: f64, x1: f64| serde_json::json!([[[x0, 0.0], [x1, 0.0], [x1, -37.5], [x0, -37.5], [x0, 0.0]]]);
    let fc = serde_json::json!({"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {"split": "train"}, "geometry": {"type": "Polygon", "coordinates": rect(0.0, 12.5)}},
        {"type": "Feature", "properties": {"split": "val"}, "geometry": {"type": "Polygon", "coordinates": rect(12.5, 25.0)}},
        {"type": "Feature", "properties": {"split": "test"}, "geometry": {"type": "Polygon", "coordinates": rect(25.0, 37.5)}},
    ]});
    fs::write(path, fc.to_string()).unwrap();
}

#[test]
fn tiling_with_zones_keeps_splits_apart() {
    let dir = fixture(&[]);
    let d = dir.path();
    zones(&d.join("zones.geojson"));
    fs::write(
        d.join("tile.toml"),
        "raster = \"gen/a.tif\"\nannotations = \"gen/a.gt.geojson\"\ntile_size = 200\noverlap = 0.5\nzones = \"zones.geojson\"\n",
    )
    .unwrap();
    ok(d, &["tile", "-c", "tile.toml", "-o", "tiles"]);
    let report = json(d.join("tiles/report.json"));
    assert_eq!(report["stride"], 100);
    let census = &report["census"];
    let assigned: u64 = census["splits"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["crowns"].as_u64().unwrap())
        .sum();
    assert_eq!(assigned + census["unassigned"].as_u64().unwrap(), 25);

    // every tile image is a readable GeoTIFF whose alpha masks out the other zones
    let coco = json(d.join("tiles/train.json"));
    for img in coco["images"].as_array().unwrap() {
        let path = d.join("tiles").join(img["file_name"].as_str().unwrap());
        let (tile, geo) = canopy_core::io::geotiff::read_geotiff(&path).unwrap();
        assert_eq!(tile.channels, 4);
        let x0 = img["window"][0].as_i64().unwrap();
        for x in 0..tile.width {
            let inside = (x0 + x as i64) < 250;
            assert_eq!(tile.pixel(x, 0)[3] == 255, inside, "{}", path.display());
        }
        let gt = geo.geotransform.unwrap();
        assert!((gt.0[0] - x0 as f64 * 0.05).abs() < 1e-9);
    }
    // synthetic crowns never cross multiples of 250 px and the zones are
    // 250 px stripes, so every clipped crown must sit inside its split's stripe
    for (k, split) in ["train", "val", "test"].iter().enumerate() {
        let c = json(d.join(format!("tiles/{split}.json")));
        let (lo, hi) = (250.0 * k as f64, 250.0 * (k + 1) as f64);
        let anns = c["annotations"].as_array().unwrap();
        assert!(!anns.is_empty(), "{split}");
        for a in anns {
            let img = c["images"]
                .as_array()
                .unwrap()
                .iter()
                .find(|i| i["id"] == a["image_id"])
                .unwrap();
            let wx = img["window"][0].as_f64().unwrap();
            let (x, w) = (a["bbox"][0].as_f64().unwrap() + wx, a["bbox"][2].as_f64().unwrap());
            assert!(
                x >= lo && x + w <= hi,
                "{split}: crown at x {x}..{} outside {lo}..{hi}",
                x + w
            );
        }
    }
    let csv = fs::read_to_string(d.join("tiles/tiles.csv")).unwrap();
    assert!(csv.starts_with("id,split,source,x0,y0,width,height,annotations,truncated,checksum"));
}

#[test]
fn overlapping_zones_are_rejected() {
    let dir = fixture(&[]);
    let d = dir.path();
    let fc = serde_json::json!({"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {"split": "train"}, "geometry": {"type": "Polygon", "coordinates": [[[0.0, 0.0], [20.0, 0.0], [20.0, -37.5], [0.0, -37.5], [0.0, 0.0]]]}},
        {"type": "Feature", "properties": {"split": "test"}, "geometry": {"type": "Polygon", "coordinates": [[[10.0, 0.0], [37.5, 0.0], [37.5, -37.5], [10.0, -37.5], [10.0, 0.0]]]}},
    ]});
    fs::write(d.join("zones.geojson"), fc.to_string()).unwrap();
    let out = canopy(
        d,
        &[
            "tile",
            "--set",
            "raster=gen/a.tif",
            "--set",
            "tile_size=200",
            "--set",
            "overlap=0.5",
            "--set",
            "zones=zones.geojson",
            "-o",
            "t",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("overlap"));
}

#[test]
fn tile_level_eval_on_own_tiles_is_perfect() {
    let dir = fixture(&[]);
    let d = dir.path();
    ok(
        d,
        &[
            "tile",
            "--set",
            "raster=gen/a.tif",
            "--set",
            "annotations=gen/a.gt.geojson",
            "--set",
            "tile_size=250",
            "--set",
            "overlap=0.5",
            "--set",
            "write_images=false",
            "-o",
            "t",
        ],
    );
    let stdout = ok(
        d,
        &[
            "eval-tiles",
            "--set",
            "gt=t/all.json",
            "--set",
            "predictions=gen/a.predictions.json",
            "--set",
            "gsd=0.05",
            "-o",
            "e",
        ],
    );
    assert!(stdout.contains("mAP 100.0"), "{stdout}");
    let r = json(d.join("e/report.json"));
    assert_eq!(r["tile"]["map"], 1.0);
}

#[test]
fn agreement_matrix_from_geojson_layers() {
    let dir = fixture(&[]);
    let d = dir.path();
    let mut gt = json(d.join("gen/a.gt.geojson"));
    let feats = gt["features"].as_array_mut().unwrap();
    feats.truncate(20);
    fs::write(d.join("bob.geojson"), gt.to_string()).unwrap();
    fs::write(
        d.join("ag.toml"),
        "raster = \"gen/a.tif\"\n[[annotators]]\nname = \"alice\"\ncrowns = \"gen/a.gt.geojson\"\n[[annotators]]\nname = \"bob\"\ncrowns = \"bob.geojson\"\n",
    )
    .unwrap();
    ok(d, &["agreement", "-c", "ag.toml", "-o", "ag"]);
    let csv = fs::read_to_string(d.join("ag/agreement.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "prediction,reference,all,tiny,small,medium,large,giant");
    // 20 of 25 shared: F1 = 2·20 / (20 + 25)
    let expect = format!("{:.1}", 100.0 * 40.0 / 45.0);
    assert!(lines[1].starts_with(&format!("bob,alice,{expect},")), "{}", lines[1]);
    assert!(lines[2].starts_with(&format!("alice,bob,{expect},")), "{}", lines[2]);

    let out = canopy(
        d,
        &["agreement", "-c", "ag.toml", "--set", "annotators=[]", "-o", "ag2"],
    );
    assert_eq!(out.status.code(), Some(1));
}
