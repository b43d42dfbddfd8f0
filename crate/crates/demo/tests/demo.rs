use gzrd_demo::*;

fn query(kind: &str) -> ScanpathQuery {
    ScanpathQuery {
        kind: kind.into(),
        medium: "print".into(),
        direction: "ltr".into(),
        seed: 3,
        duration_s: 2.0,
        quarter_turns: 0,
        flip: false,
        noise_deg: 0.0,
    }
}

const C: f64 = 704.0;

#[test]
fn identity_augmentation_leaves_the_path_alone() {
    for kind in ["engaged", "skim", "daily", "hard_negative"] {
        let v = scanpath_view(&query(kind)).unwrap();
        assert_eq!(v.original.len(), 120);
        assert_eq!(v.original, v.augmented);
        assert_eq!(v.span_deg, v.augmented_span_deg);
    }
}

#[test]
fn half_turn_and_flip_are_reflections_about_the_image_center() {
    let base = scanpath_view(&query("engaged")).unwrap();
    let half = scanpath_view(&ScanpathQuery {
        quarter_turns: 2,
        ..query("engaged")
    })
    .unwrap();
    let flip = scanpath_view(&ScanpathQuery {
        flip: true,
        ..query("engaged")
    })
    .unwrap();
    for i in 0..base.original.len() {
        let [u, v] = base.original[i];
        let [hu, hv] = half.augmented[i];
        assert!((hu - (2.0 * C - u)).abs() < 1e-6 && (hv - (2.0 * C - v)).abs() < 1e-6);
        let [fu, fv] = flip.augmented[i];
        assert!((fu - (2.0 * C - u)).abs() < 1e-6 && (fv - v).abs() < 1e-9);
    }
    assert!((flip.augmented_span_deg - base.span_deg).abs() < 1e-9);
    assert!(base.span_deg > 0.0);
}

#[test]
fn noise_moves_points_and_is_seeded() {
    let q = ScanpathQuery {
        noise_deg: 0.5,
        ..query("scan")
    };
    let a = scanpath_view(&q).unwrap();
    assert_eq!(a, scanpath_view(&q).unwrap());
    assert_ne!(a.original, a.augmented);
    assert!(scanpath_view(&query("sleeping")).is_err());
    assert!(scanpath_view(&ScanpathQuery {
        direction: "diagonal".into(),
        ..query("engaged")
    })
    .is_err());
}

#[test]
fn crop_sizes_follow_the_camera() {
    for fov in [1.0, 5.0, 10.0, 55.0, 110.0] {
        let v = crop_view(fov).unwrap();
        let oracle = 2 * (fov / 110.0 * C).round() as usize;
        assert_eq!(v.size, oracle);
        assert!((v.area_fraction - (oracle * oracle) as f64 / (1408.0 * 1408.0)).abs() < 1e-12);
    }
    assert_eq!(crop_view(110.0).unwrap().area_fraction, 1.0);
    assert!(crop_view(0.0).is_err());
    assert!(crop_view(120.0).is_err());
}

#[test]
fn crop_pixels_are_opaque_rgba() {
    let px = crop_rgba(5.0, "engaged", "print", 1).unwrap();
    assert_eq!(px.len(), 64 * 64 * 4);
    assert!(px.chunks(4).all(|p| p[3] == 255));
    assert!(px.chunks(4).any(|p| p[0] != px[0]));
    assert_eq!(crop_rgba(3.0, "daily", "none", 2).unwrap().len(), 38 * 38 * 4);
}

fn hq(h: usize) -> HysteresisQuery {
    HysteresisQuery {
        scenario: 5,
        total_s: 60.0,
        seed: 9,
        window_s: 2.0,
        stride_s: 0.1,
        hysteresis: h,
        threshold: 0.5,
        noise: 0.0,
        max_match_s: 5.0,
    }
}

#[test]
fn clean_scores_detect_every_change_after_half_a_window() {
    for h in 1..=5 {
        let v = hysteresis_view(&hq(h)).unwrap();
        assert_eq!(v.truth.len(), 4);
        assert!(v.latency.misses.is_empty(), "h={h}");
        assert_eq!(v.detected.len(), 4);
        // Half the window must pass before the score crosses, then h - 1
        // more emissions; both land on the stride grid.
        let lo = 1.0 + (h - 1) as f64 * 0.1;
        for m in &v.latency.matched {
            assert!(
                m.latency >= lo - 1e-9 && m.latency <= lo + 0.1 + 1e-9,
                "h={h}: {}",
                m.latency
            );
        }
        assert_eq!(v.accuracy.accuracy, 1.0);
    }
}

#[test]
fn hysteresis_trades_flicker_for_delay() {
    let noisy = |h| hysteresis_view(&HysteresisQuery { noise: 0.25, ..hq(h) }).unwrap();
    let counts: Vec<usize> = (1..=5).map(|h| noisy(h).detected.len()).collect();
    assert!(counts[0] > counts[4], "{counts:?}");
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
    assert_eq!(noisy(3), noisy(3));
    assert!(hysteresis_view(&HysteresisQuery { hysteresis: 0, ..hq(1) }).is_err());
    assert!(hysteresis_view(&HysteresisQuery { scenario: 11, ..hq(1) }).is_err());
}
