use std::collections::HashSet;
use std::f64::consts::PI;
use uland::corpus::{
    generate_corpus, generate_video, read_corpus, scene_for, split_sizes, write_corpus, GenConfig, VideoSource,
};
use uland::Error;

#[test]
fn same_seed_gives_identical_video() {
    let cfg = GenConfig::default();
    let a = generate_video(&cfg, 42).unwrap();
    let b = generate_video(&cfg, 42).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.frames, generate_video(&cfg, 43).unwrap().frames);
}

#[test]
fn video_invariants_hold() {
    let cfg = GenConfig::default();
    for seed in 0..30 {
        let v = generate_video(&cfg, seed).unwrap();
        assert!((cfg.p_min..=cfg.p_max).contains(&v.len()));
        assert!(!v.key_set.is_empty());
        assert!(v.key_set.contains(&v.labeled_key_index));
        assert!(v.key_set.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(v.label.points.len(), 2);
        for &(r, c) in &v.label.points {
            assert!((0.0..=63.0).contains(&r) && (0.0..=63.0).contains(&c));
        }
        let (a, b) = (v.label.points[0], v.label.points[1]);
        let want = (a.0 - b.0).hypot(a.1 - b.1) * cfg.pixel_spacing;
        assert!((v.label.length_gt - want).abs() < 1e-9);
        for f in &v.frames {
            assert!(f.pixels.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)));
        }
    }
}

#[test]
fn sharp_cycle_key_set_matches_analytic_count() {
    let cfg = GenConfig {
        gamma: 64.0,
        v_key: 0.9,
        ..GenConfig::default()
    };
    // cos^64(θ) ≥ 0.9 with cos θ > 0 ⇔ |θ| ≤ acos(0.9^(1/64)) modulo 2π.
    let half_width = (0.9f64.powf(1.0 / 64.0)).acos() * cfg.period / (2.0 * PI);
    let (mut with_keys, mut without) = (0, 0);
    for seed in 0..60 {
        let scene = scene_for(&cfg, seed).unwrap();
        let expected: Vec<usize> = (0..scene.n_frames)
            .filter(|&t| {
                let d = (t as f64 - scene.phase).rem_euclid(cfg.period);
                d.min(cfg.period - d) <= half_width
            })
            .collect();
        let cycles = (scene.n_frames as f64 / cfg.period).ceil() as usize;
        assert!(expected.len() <= 2 * cycles);
        match generate_video(&cfg, seed) {
            Ok(v) => {
                assert_eq!(v.key_set, expected, "seed {seed}");
                with_keys += 1;
            }
            Err(Error::Generation(_)) => {
                assert!(expected.is_empty(), "seed {seed}");
                without += 1;
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }
    assert!(with_keys > 0 && without > 0);
}

#[test]
fn noiseless_label_equals_rendered_endpoints() {
    let cfg = GenConfig {
        label_noise_std: 0.0,
        key_jitter: 0,
        ..GenConfig::default()
    };
    for seed in 0..10 {
        let v = generate_video(&cfg, seed).unwrap();
        let scene = scene_for(&cfg, seed).unwrap();
        let peak = (0..scene.n_frames)
            .max_by(|&a, &b| scene.visibility(a).total_cmp(&scene.visibility(b)).then(b.cmp(&a)))
            .unwrap();
        assert_eq!(v.labeled_key_index, peak);
        assert_eq!(v.label.points, scene.endpoints(peak).to_vec());
    }
}

#[test]
fn key_frames_have_more_ribbon_contrast_than_hidden_frames() {
    let cfg = GenConfig::default();
    for seed in 0..15 {
        let scene = scene_for(&cfg, seed).unwrap();
        let keys = scene.key_set();
        let low: Vec<usize> = (0..scene.n_frames)
            .filter(|&t| scene.visibility(t) < 0.5 * cfg.v_key)
            .collect();
        let key_min = keys.iter().map(|&t| scene.ribbon_contrast(t)).fold(f64::INFINITY, f64::min);
        let low_max = low.iter().map(|&t| scene.ribbon_contrast(t)).fold(0.0, f64::max);
        assert!(key_min > low_max, "seed {seed}: {key_min} ≤ {low_max}");
    }
}

#[test]
fn split_sizes_follow_floor_rule() {
    assert_eq!(split_sizes(100).unwrap(), (81, 9, 10));
    assert_eq!(split_sizes(10).unwrap(), (8, 1, 1));
    assert_eq!(split_sizes(200).unwrap(), (162, 18, 20));
    assert!(split_sizes(9).is_err());
}

#[test]
fn corpus_splits_are_disjoint_and_reproducible() {
    let cfg = GenConfig::default();
    let c = generate_corpus(&cfg, 20, 5).unwrap();
    assert_eq!((c.train.len(), c.calib.len(), c.test.len()), (17, 1, 2));
    let ids: HashSet<&str> = c.train.iter().chain(&c.calib).chain(&c.test).map(|v| v.id.as_str()).collect();
    let seeds: HashSet<u64> = c.train.iter().chain(&c.calib).chain(&c.test).map(|v| v.seed).collect();
    assert_eq!((ids.len(), seeds.len()), (20, 20));
    assert_eq!(c, generate_corpus(&cfg, 20, 5).unwrap());
    assert!(generate_corpus(&cfg, 5, 5).is_err());
}

#[test]
fn corpus_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let c = generate_corpus(&GenConfig::default(), 10, 9).unwrap();
    write_corpus(&c, dir.path()).unwrap();
    assert!(dir.path().join("manifest.json").exists());
    assert_eq!(read_corpus(dir.path()).unwrap(), c);
}

#[test]
fn truncated_video_file_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = generate_corpus(&GenConfig::default(), 10, 9).unwrap();
    write_corpus(&c, dir.path()).unwrap();
    let victim = dir.path().join(format!("{}.ulvd", c.test[0].id));
    let bytes = std::fs::read(&victim).unwrap();
    std::fs::write(&victim, &bytes[..bytes.len() - 10]).unwrap();
    match read_corpus(dir.path()) {
        Err(Error::Format { file, .. }) => assert!(file.contains(&c.test[0].id), "{file}"),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn manifest_frame_count_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let c = generate_corpus(&GenConfig::default(), 10, 9).unwrap();
    write_corpus(&c, dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let p = m["videos"][0]["P"].as_u64().unwrap();
    m["videos"][0]["P"] = serde_json::json!(p + 1);
    std::fs::write(&path, m.to_string()).unwrap();
    assert!(matches!(read_corpus(dir.path()), Err(Error::Format { .. })));
}
