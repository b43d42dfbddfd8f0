use gzrd_core::geometry::GazeWindow;
use gzrd_core::sim::*;

/// Angular position (yaw, pitch) in degrees of every sample.
fn angles(w: &GazeWindow) -> Vec<(f64, f64)> {
    w.samples()
        .map(|s| (s[0].atan2(s[2]).to_degrees(), s[1].atan2(s[2]).to_degrees()))
        .collect()
}

/// Velocity-threshold segmentation: true where the gaze moves faster than
/// `thresh` deg/s between a sample and its predecessor.
fn moving(w: &GazeWindow, thresh: f64) -> Vec<bool> {
    let a = angles(w);
    let mut out = vec![false; a.len()];
    for i in 1..a.len() {
        let v = (a[i].0 - a[i - 1].0).hypot(a[i].1 - a[i - 1].1) * w.hz();
        out[i] = v > thresh;
    }
    out
}

#[test]
fn mean_fixation_duration_is_physiological() {
    let cfg = SimConfig::default().noiseless();
    let mut durations = Vec::new();
    for seed in 0..1000u64 {
        let mode = Mode::READING[(seed % 6) as usize];
        let medium = Medium::TEXT[(seed / 6 % 3) as usize];
        let spec = ScenarioSpec::reading(mode, medium, Direction::Ltr, seed);
        let path = gen_reading_scanpath(&spec, &cfg, 60.0, 4.0).unwrap();
        let mv = moving(&path.window, 30.0);
        // Interior still runs only: both neighbours are movement.
        let mut run = 0usize;
        let mut opened = false;
        for &m in &mv[1..] {
            if m {
                if opened && run > 0 {
                    durations.push(run as f64 / 60.0);
                }
                opened = true;
                run = 0;
            } else {
                run += 1;
            }
        }
    }
    let mean = durations.iter().sum::<f64>() / durations.len() as f64 * 1000.0;
    assert!(durations.len() > 10_000, "{}", durations.len());
    assert!((180.0..=280.0).contains(&mean), "mean fixation {mean:.1} ms");
}

#[test]
fn random_saccades_never_sweep_one_way_for_long() {
    let cfg = SimConfig::default().noiseless();
    let mut checked = 0;
    for seed in 0..5000u64 {
        let spec = ScenarioSpec::not_reading(Activity::Daily, seed);
        if NegativeKind::of(&spec) != NegativeKind::RandomSaccades {
            continue;
        }
        checked += 1;
        let path = gen_nonreading_scanpath(&spec, &cfg, 60.0, 2.0).unwrap();
        let x: Vec<f64> = angles(&path.window).iter().map(|a| a.0).collect();
        // Moving samples grouped by the sign of their x step; a run lasts
        // from its first to its last moving sample.
        let mut run: Option<(f64, usize, usize)> = None;
        let mut longest = 0usize;
        for i in 1..x.len() {
            let dx = x[i] - x[i - 1];
            if dx.abs() < 1e-9 {
                continue;
            }
            let sign = dx.signum();
            run = match run {
                Some((s, start, _)) if s == sign => Some((s, start, i)),
                _ => Some((sign, i, i)),
            };
            let (_, a, b) = run.unwrap();
            longest = longest.max(b - a + 1);
        }
        assert!(longest as f64 / 60.0 <= 0.5, "seed {seed}: run of {longest} samples");
        if checked == 1000 {
            break;
        }
    }
    assert_eq!(checked, 1000);
}

#[test]
fn reading_and_looking_around_differ_in_rightward_motion() {
    // Fraction of net rightward movement among moving samples.
    let cfg = SimConfig::default().noiseless();
    let score = |w: &GazeWindow| {
        let a = angles(w);
        let (mut right, mut total) = (0.0, 0.0);
        for i in 1..a.len() {
            let dx = a[i].0 - a[i - 1].0;
            if dx.abs() > 1e-9 && dx.abs() < 1.0 {
                total += dx.abs();
                if dx > 0.0 {
                    right += dx;
                }
            }
        }
        if total > 0.0 {
            right / total
        } else {
            0.5
        }
    };
    let mut pos = 0.0;
    let mut neg = 0.0;
    for seed in 0..200 {
        let r = ScenarioSpec::reading(Mode::Engaged, Medium::Print, Direction::Ltr, seed);
        pos += score(&gen_reading_scanpath(&r, &cfg, 60.0, 2.0).unwrap().window);
        let n = ScenarioSpec::not_reading(Activity::Daily, seed);
        neg += score(&gen_nonreading_scanpath(&n, &cfg, 60.0, 2.0).unwrap().window);
    }
    assert!(pos / 200.0 > 0.8, "{}", pos / 200.0);
    assert!(neg / 200.0 < 0.65, "{}", neg / 200.0);
}

/// |DFT|² at bin k, computed directly.
fn power(x: &[f64], k: usize) -> f64 {
    let n = x.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let a = -std::f64::consts::TAU * k as f64 * i as f64 / n;
        re += v * a.cos();
        im += v * a.sin();
    }
    re * re + im * im
}

#[test]
fn walking_cadence_dominates_vertical_acceleration() {
    let cfg = SimConfig::default();
    for seed in 0..20 {
        let spec = ScenarioSpec::reading(Mode::WalkRead, Medium::Print, Direction::Ltr, seed);
        let imu = gen_imu(&spec, &cfg, 60.0, 10.0).unwrap();
        let ay = imu.channel(1);
        let n = ay.len();
        let best = (1..n / 2)
            .max_by(|&a, &b| power(&ay, a).total_cmp(&power(&ay, b)))
            .unwrap();
        let hz = best as f64 * 60.0 / n as f64;
        assert!((hz - 2.0).abs() <= 0.3, "seed {seed}: peak at {hz} Hz");
    }
}

#[test]
fn sitting_still_moves_less_than_walking() {
    let cfg = SimConfig::default();
    let var = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
    };
    for seed in 0..50 {
        let sit = ScenarioSpec::reading(Mode::Engaged, Medium::Digital, Direction::Ltr, seed);
        let walk = ScenarioSpec::reading(Mode::WalkRead, Medium::Digital, Direction::Ltr, seed);
        let a = gen_imu(&sit, &cfg, 60.0, 2.0).unwrap();
        let b = gen_imu(&walk, &cfg, 60.0, 2.0).unwrap();
        let total = |w: &ImuWindow| (0..3).map(|c| var(&w.channel(c))).sum::<f64>();
        assert!(total(&a) < total(&b), "seed {seed}");
    }
}

/// First local maximum of the row-mean autocorrelation within `lo..=hi`
/// that exceeds `min_corr`, as (lag, normalised correlation).
fn line_period(p: &RgbPatch, lo: usize, hi: usize, min_corr: f64) -> Option<(usize, f64)> {
    let h = p.height();
    let prof: Vec<f64> = (0..h)
        .map(|y| (0..p.width()).map(|x| p.pixel(y, x, 0) as f64).sum::<f64>() / p.width() as f64)
        .collect();
    let m = prof.iter().sum::<f64>() / h as f64;
    let c: Vec<f64> = prof.iter().map(|v| v - m).collect();
    let ac = |lag: usize| {
        let s: f64 = (0..h - lag).map(|i| c[i] * c[i + lag]).sum();
        s / (h - lag) as f64 / (c.iter().map(|v| v * v).sum::<f64>() / h as f64)
    };
    (lo..=hi)
        .find(|&l| ac(l) >= ac(l - 1) && ac(l) >= ac(l + 1) && ac(l) > min_corr)
        .map(|l| (l, ac(l)))
}

#[test]
fn text_patches_show_their_line_pitch() {
    let size = gzrd_core::geometry::crop_geometry(5.0, &Default::default()).unwrap();
    assert_eq!(size, 64);
    for (medium, lo, hi) in [(Medium::Print, 13, 17), (Medium::Digital, 9, 11)] {
        for seed in 0..30 {
            let spec = ScenarioSpec::reading(Mode::Engaged, medium, Direction::Ltr, seed);
            let p = gen_patch(&spec, size).unwrap();
            let (lag, _) = line_period(&p, 6, 24, 0.3).expect("periodic rows");
            assert!(lag + 1 >= lo && lag <= hi + 1, "{medium:?} seed {seed}: lag {lag}");
        }
    }
}

#[test]
fn scenes_are_flatter_than_text() {
    let var = |p: &RgbPatch| {
        let d: Vec<f64> = p.data().iter().map(|&v| v as f64).collect();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / d.len() as f64
    };
    for seed in 0..50 {
        let neg = gen_patch(&ScenarioSpec::not_reading(Activity::Daily, seed), 64).unwrap();
        let text = gen_patch(
            &ScenarioSpec::reading(Mode::Skim, Medium::Print, Direction::Ltr, seed),
            64,
        )
        .unwrap();
        assert!(var(&neg) < var(&text), "seed {seed}");
    }
}

#[test]
fn alternating_streams_label_their_segments() {
    let d = ClipDefaults::default();
    let cfg = SimConfig::default();
    let s = gen_alternating(1, 30.0, 11, &d, &cfg).unwrap();
    assert_eq!(s.segments.len(), 3);
    assert_eq!(s.change_points.len(), 2);
    let total: f64 = s.segments.iter().map(|g| g.end - g.start).sum();
    assert!((total - 30.0).abs() <= 1.0 / 60.0);
    let t_win = 2.0;
    for seg in &s.segments {
        let mut t = seg.start + t_win + 0.05;
        while t < seg.end {
            // Every sample of the window (t - T, t] lies inside the segment.
            assert_eq!(s.state_at(t - t_win + 1e-9), seg.kind.label());
            assert_eq!(s.state_at(t), seg.kind.label());
            t += 0.1;
        }
    }
}

#[test]
fn datasets_follow_their_manifest() {
    let m = Manifest::binary(42, 10, 10);
    let clips = gen_dataset(&m).unwrap();
    assert_eq!(clips.len(), 20);
    assert_eq!(clips.iter().filter(|c| c.label(Task::Binary) == 1).count(), 10);

    let bytes = |m: &Manifest| {
        let mut b = Vec::new();
        write_jsonl(&mut b, &gen_dataset(m).unwrap()).unwrap();
        b
    };
    assert_eq!(bytes(&m), bytes(&m));
    assert_ne!(bytes(&m), bytes(&Manifest::binary(43, 10, 10)));

    let m7 = gen_dataset(&Manifest::mode7(3, 4)).unwrap();
    let mut seen = [false; 7];
    for c in &m7 {
        seen[c.label(Task::Mode7)] = true;
    }
    assert!(seen.iter().all(|&s| s));
}

#[test]
fn clip_lines_follow_the_exchange_format() {
    let clips = gen_dataset(&Manifest::binary(1, 1, 0)).unwrap();
    let mut b = Vec::new();
    write_jsonl(&mut b, &clips).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v["label"], 1);
    assert_eq!(v["gaze"]["repr"], "point3d");
    assert_eq!(v["gaze"]["data"].as_array().unwrap().len(), 120);
    assert_eq!(v["gaze"]["data"][0].as_array().unwrap().len(), 3);
    assert_eq!(v["imu"]["data"][0].as_array().unwrap().len(), 6);
    assert_eq!(v["rgb"]["h"], 64);
    assert!(v["meta"]["scenario"].as_str().unwrap().starts_with("reading/"));
}
