use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use canopy_core::geometry::{BinaryMask, PixelRect};
use canopy_core::io::{write_atomic, RleMask};
use canopy_core::pipeline::batch::{BatchConfig, BatchDetector, BatchRequest, BatchSegmenter};
use canopy_core::pipeline::{run_pipeline, PipelineConfig, TileView};
use canopy_core::tiler::RasterImage;
use canopy_core::Error;

// Fake model server: one fixed box for detect, filled box masks for segment.
fn serve(dir: PathBuf, stop: Arc<AtomicBool>, fail: bool) -> thread::JoinHandle<usize> {
    thread::spawn(move || {
        let mut served = 0;
        while !stop.load(Ordering::SeqCst) {
            let mut entries: Vec<_> = fs::read_dir(&dir)
                .into_iter()
                .flatten()
                .flatten()
                .map(|e| e.path())
                .collect();
            entries.sort();
            for req_dir in entries {
                let (req, res) = (req_dir.join("request.json"), req_dir.join("result.json"));
                if !req.exists() || res.exists() {
                    continue;
                }
                assert!(req_dir.join("tile.png").exists());
                let r: BatchRequest = serde_json::from_str(&fs::read_to_string(&req).unwrap()).unwrap();
                let body = if fail {
                    r#"{"error": "model crashed"}"#.to_string()
                } else if r.kind == "detect" {
                    r#"{"detections": [{"bbox": [2, 3, 12, 9], "score": 0.8}]}"#.to_string()
                } else {
                    let (w, h) = (r.window[2], r.window[3]);
                    let masks: Vec<_> = r
                        .boxes
                        .iter()
                        .map(|b| {
                            let m = BinaryMask::from_fn(PixelRect::new(0, 0, w, h), |x, y| {
                                (x as f64) >= b[0] && (x as f64) < b[2] && (y as f64) >= b[1] && (y as f64) < b[3]
                            });
                            let rle = RleMask::encode(&m, PixelRect::new(0, 0, w, h));
                            serde_json::json!({"rle": {"size": rle.size, "counts": rle.to_compressed()}, "score": 0.5})
                        })
                        .collect();
                    serde_json::json!({ "masks": masks }).to_string()
                };
                write_atomic(&res, body.as_bytes()).unwrap();
                served += 1;
            }
            thread::sleep(Duration::from_millis(2));
        }
        served
    })
}

fn cfg(dir: &Path) -> BatchConfig {
    BatchConfig {
        dir: dir.to_path_buf(),
        poll_ms: 2,
        timeout_ms: 20_000,
        ..BatchConfig::default()
    }
}

#[test]
fn file_backends_drive_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let server = serve(tmp.path().to_path_buf(), stop.clone(), false);
    let det = BatchDetector::new(cfg(tmp.path())).unwrap();
    let seg = BatchSegmenter::new(cfg(tmp.path())).unwrap();
    let img = RasterImage::zeros(20, 16, 3);
    let tile = TileView {
        id: 4,
        window: PixelRect::new(100, 200, 20, 16),
        image: &img,
    };
    let out = run_pipeline(&tile, &det, &seg, &PipelineConfig::default()).unwrap();
    stop.store(true, Ordering::SeqCst);
    assert_eq!(server.join().unwrap(), 2);
    assert_eq!(out.instances.len(), 1);
    let c = &out.instances[0];
    assert_eq!(c.mask().count(), 60);
    assert_eq!(c.mask().pixel_bounds(), Some(PixelRect::new(2, 3, 10, 6)));
    assert!((c.score() - 0.4).abs() < 1e-12);
    // request directories are cleaned up
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn backend_error_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let server = serve(tmp.path().to_path_buf(), stop.clone(), true);
    let det = BatchDetector::new(cfg(tmp.path())).unwrap();
    let img = RasterImage::zeros(8, 8, 3);
    let tile = TileView {
        id: 0,
        window: PixelRect::new(0, 0, 8, 8),
        image: &img,
    };
    let err = canopy_core::pipeline::Detector::detect(&det, &tile).unwrap_err();
    stop.store(true, Ordering::SeqCst);
    server.join().unwrap();
    assert!(
        matches!(&err, Error::Backend(m) if m.contains("model crashed")),
        "{err}"
    );
}

#[test]
fn silent_backend_times_out() {
    let tmp = tempfile::tempdir().unwrap();
    let det = BatchDetector::new(BatchConfig {
        timeout_ms: 30,
        ..cfg(tmp.path())
    })
    .unwrap();
    let img = RasterImage::zeros(8, 8, 3);
    let tile = TileView {
        id: 0,
        window: PixelRect::new(0, 0, 8, 8),
        image: &img,
    };
    let err = canopy_core::pipeline::Detector::detect(&det, &tile).unwrap_err();
    assert!(matches!(err, Error::Backend(_)));
}
