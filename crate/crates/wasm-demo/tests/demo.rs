use canopy_wasm::{plan, Explorer, Noise};

#[test]
fn plan_covers_raster_with_flush_last_window() {
    let p = plan(1000, 700, 250, 0.5).unwrap();
    assert_eq!(p.stride, 125);
    // x: 0..=750 step 125 → 7, y: 0..=375 step 125 plus flush 450 → 5
    assert_eq!(p.windows.len(), 7 * 5);
    let mut covered = vec![false; 1000 * 700];
    for [x0, y0, w, h] in &p.windows {
        assert_eq!((*w, *h), (250, 250));
        for y in *y0..y0 + h {
            for x in *x0..x0 + w {
                covered[(y * 1000 + x) as usize] = true;
            }
        }
    }
    assert!(covered.iter().all(|&c| c));
    assert!(p.windows.iter().any(|w| w[1] == 450));
    assert!(plan(100, 100, 50, 1.0).is_err());
}

// stride 150 exceeds the widest synthetic crown (121 px), so each crown lies
// strictly inside some window and survives the interior-edge filter
#[test]
fn noiseless_scene_is_perfect() {
    let e = Explorer::build(600, 20, 3, Noise::default(), 300, 0.5).unwrap();
    let ev = e.evaluation(0.5, 0.0, 0.5).unwrap();
    assert_eq!((ev.tp, ev.fp, ev.fn_), (20, 0, 0));
    assert_eq!(ev.kept, 20);
    assert!(ev.candidates >= 20);
    assert_eq!(ev.mrf1, 1.0);
    let overlay = e.overlay_rgba(0.5, 0.0, 0.5).unwrap();
    assert_eq!(overlay.len(), 600 * 600 * 4);
    let painted: Vec<&[u8]> = overlay.chunks_exact(4).filter(|p| p[3] > 0).collect();
    assert!(!painted.is_empty());
    assert!(painted.iter().all(|p| p[..3] == [40, 220, 60]));
    let curve = e.curve(0.5, 0.0).unwrap();
    assert_eq!(curve.len(), 19);
    assert!(curve.iter().all(|c| c.f1 == 1.0));
    assert!((curve[0].iou - 0.05).abs() < 1e-12 && (curve[18].iou - 0.95).abs() < 1e-12);
}

#[test]
fn raising_confidence_only_removes_instances() {
    let noise = Noise::new(2.0, 0.5, 0.1, 0.05);
    let e = Explorer::build(600, 25, 9, noise, 200, 0.5).unwrap();
    let mut last = usize::MAX;
    for c in [0.0, 0.2, 0.4, 0.6, 0.8, 0.95] {
        let ev = e.evaluation(0.5, c, 0.5).unwrap();
        assert!(ev.kept <= last, "confidence {c}: {} > {last}", ev.kept);
        assert_eq!(ev.tp + ev.fn_, 25);
        last = ev.kept;
    }
    assert!(e.evaluation(1.5, 0.0, 0.5).is_err());
}
