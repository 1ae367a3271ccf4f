//! Access invariants checked through an instrumented video source.

mod common;

use common::Spy;
use std::collections::BTreeSet;
use std::sync::atomic::Ordering;
use uland::augment::AugConfig;
use uland::bunet::{ArchConfig, Bunet};
use uland::corpus::{generate_video, GenConfig, SyntheticVideo};
use uland::gating::{calibrate, GateMode, GatingConfig};
use uland::pipeline::{baseline_semi_automatic, predict_video, InferenceConfig};
use uland::train::{train, TrainConfig};

fn videos(n: u64) -> Vec<SyntheticVideo> {
    (0..n).map(|s| generate_video(&GenConfig::default(), 100 + s).unwrap()).collect()
}

fn tiny_model() -> Bunet<f32> {
    let arch = ArchConfig {
        base_filters: 2,
        ..ArchConfig::default()
    };
    Bunet::new(arch, 0).unwrap()
}

#[test]
fn training_reads_only_the_labelled_key_frame() {
    let vids = videos(3);
    let spies: Vec<Spy> = vids.iter().map(Spy::new).collect();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 2,
        mc_samples: 2,
        augmentation: AugConfig::default(),
        ..TrainConfig::default()
    };
    let mut model = tiny_model();
    train(&mut model, &spies, &cfg, 2.0).unwrap();
    for (spy, v) in spies.iter().zip(&vids) {
        assert_eq!(spy.frames_read(), BTreeSet::from([v.labeled_key_index]), "video {}", v.id);
        assert!(!spy.read_key_set.load(Ordering::SeqCst));
    }
}

#[test]
fn calibration_reads_only_labelled_key_frames() {
    let vids = videos(2);
    let spies: Vec<Spy> = vids.iter().map(Spy::new).collect();
    let model = tiny_model();
    let stats = calibrate(&model, &spies, &GatingConfig::default(), 3, 0).unwrap();
    assert_eq!(stats.n_calib, 2);
    for (spy, v) in spies.iter().zip(&vids) {
        assert_eq!(spy.frames_read(), BTreeSet::from([v.labeled_key_index]));
        assert!(!spy.read_key_set.load(Ordering::SeqCst));
    }
}

#[test]
fn automatic_measurement_never_reads_ground_truth() {
    let vids = videos(3);
    let model = tiny_model();
    let stats = calibrate(&model, &vids[..2], &GatingConfig::default(), 3, 0).unwrap();
    let spy = Spy::new(&vids[2]);
    let inference = InferenceConfig { mc_passes: 3, seed: 1 };
    for mode in GateMode::ALL {
        predict_video(&model, &stats, &spy, mode, &inference, 75.0).unwrap();
    }
    assert!(!spy.read_k.load(Ordering::SeqCst), "read labelled key index");
    assert!(!spy.read_key_set.load(Ordering::SeqCst), "read key set");
    assert!(!spy.read_label.load(Ordering::SeqCst), "read label");
    assert_eq!(spy.frames_read(), (0..vids[2].frames.len()).collect());
}

#[test]
fn semi_automatic_reference_reads_only_frame_k() {
    let vids = videos(1);
    let spy = Spy::new(&vids[0]);
    baseline_semi_automatic(&tiny_model(), &spy, 0.5, 75.0, false).unwrap();
    assert_eq!(spy.frames_read(), BTreeSet::from([vids[0].labeled_key_index]));
    assert!(!spy.read_key_set.load(Ordering::SeqCst));
}
