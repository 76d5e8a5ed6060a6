//! Dataset layout, weights container, letterbox, and generator behavior.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use common::*;
use proptest::prelude::*;
use rand::Rng;

use einet::data::letterbox::letterbox;
use einet::data::synth::{generate_synthetic, Regime, SyntheticConfig};
use einet::data::{load_dataset, Split};
use einet::eval::class_stats;
use einet::head::BBox;
use einet::tensor::Tensor;
use einet::weights::ModelWeights;
use einet::Error;

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("einet_it_{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn thousand_tensor_registry_round_trips_bit_exactly() {
    let mut r = rng(701);
    let mut w = ModelWeights::<f32>::new();
    for i in 0..1000 {
        let rank = 1 + r.random_range(0..4);
        let shape: Vec<usize> = (0..rank).map(|_| 1 + r.random_range(0..4)).collect();
        w.insert(format!("tensor.{i:04}"), rand_tensor::<f32>(&mut r, &shape, -10.0, 10.0));
    }
    let dir = temp_dir("weights_1000");
    let path = dir.join("big.einw");
    w.save(&path).unwrap();
    let loaded = ModelWeights::<f32>::load(&path).unwrap();
    assert_eq!(loaded.len(), 1000);
    for (name, t) in w.iter() {
        let l = loaded.get(name).unwrap();
        assert_eq!(t.shape(), l.shape());
        for (&a, &b) in t.data().iter().zip(l.data()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{name} not bit-exact");
        }
    }
    // corrupting the magic or truncating must be rejected
    let bytes = std::fs::read(&path).unwrap();
    let mut bad_magic = bytes.clone();
    bad_magic[..4].copy_from_slice(b"XXXX");
    assert!(matches!(ModelWeights::<f32>::from_bytes(&bad_magic), Err(Error::Format(_))));
    assert!(matches!(ModelWeights::<f32>::from_bytes(&bytes[..bytes.len() - 7]), Err(Error::Format(_))));
}

#[test]
fn generator_is_bit_deterministic() {
    let cfg = SyntheticConfig {
        regime: Regime::Night,
        num_videos: 3,
        train_videos: 2,
        frames_per_video: 3,
        image_size: 64,
        objects_per_video: (1, 3),
        seed: 77,
    };
    let a = temp_dir("gen_a");
    let b = temp_dir("gen_b");
    generate_synthetic(&cfg, &a).unwrap();
    generate_synthetic(&cfg, &b).unwrap();
    let ta = tree_bytes(&a);
    let tb = tree_bytes(&b);
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (name, bytes) in &ta {
        assert_eq!(bytes, &tb[name], "{name} differs between runs");
    }
    // different seed must differ somewhere
    let c = temp_dir("gen_c");
    generate_synthetic(&SyntheticConfig { seed: 78, ..cfg }, &c).unwrap();
    let tc = tree_bytes(&c);
    assert!(ta.iter().any(|(k, v)| tc.get(k) != Some(v)));
}

#[test]
fn missing_thermal_image_is_a_pairing_error() {
    let cfg = SyntheticConfig {
        regime: Regime::Day,
        num_videos: 2,
        train_videos: 1,
        frames_per_video: 3,
        image_size: 64,
        objects_per_video: (1, 2),
        seed: 5,
    };
    let dir = temp_dir("pairing");
    generate_synthetic(&cfg, &dir).unwrap();
    std::fs::remove_file(dir.join("JPEGImages_T/v000_000001.png")).unwrap();
    match load_dataset(&dir, Split::Train) {
        Err(Error::Pairing { id, .. }) => assert_eq!(id, "v000_000001"),
        other => panic!("expected pairing error, got {other:?}"),
    }
}

#[test]
fn unsorted_split_ids_are_a_layout_error() {
    let cfg = SyntheticConfig {
        regime: Regime::Day,
        num_videos: 2,
        train_videos: 1,
        frames_per_video: 3,
        image_size: 64,
        objects_per_video: (1, 2),
        seed: 6,
    };
    let dir = temp_dir("layout");
    generate_synthetic(&cfg, &dir).unwrap();
    let split = dir.join("ImageSets/Main/train.txt");
    let text = std::fs::read_to_string(&split).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.swap(0, 1);
    std::fs::write(&split, lines.join("\n")).unwrap();
    assert!(matches!(load_dataset(&dir, Split::Train), Err(Error::Layout(_))));
}

#[test]
fn empty_split_file_loads_empty_dataset() {
    let dir = temp_dir("empty_split");
    std::fs::create_dir_all(dir.join("ImageSets/Main")).unwrap();
    std::fs::write(dir.join("ImageSets/Main/test.txt"), "").unwrap();
    let ds = load_dataset(&dir, Split::Test).unwrap();
    assert_eq!(ds.frame_count(), 0);
}

#[test]
fn class_stats_match_generator_manifest() {
    let cfg = SyntheticConfig {
        regime: Regime::Day,
        num_videos: 4,
        train_videos: 3,
        frames_per_video: 4,
        image_size: 64,
        objects_per_video: (2, 4),
        seed: 9,
    };
    let dir = temp_dir("stats");
    let manifest = generate_synthetic(&cfg, &dir).unwrap();
    let train = load_dataset(&dir, Split::Train).unwrap();
    let test = load_dataset(&dir, Split::Test).unwrap();
    let stats = class_stats(&[("train", &train), ("test", &test)]);

    let mut want_train = [0usize; 7];
    let mut want_test = [0usize; 7];
    for r in &manifest.records {
        let vid: usize = r.video_id[1..].parse().unwrap();
        if vid < cfg.train_videos {
            want_train[r.class_id] += 1;
        } else {
            want_test[r.class_id] += 1;
        }
    }
    assert_eq!(stats.rows[0].1, want_train);
    assert_eq!(stats.rows[1].1, want_test);
    // totals column equals row sums
    for (_, counts, total) in &stats.rows {
        assert_eq!(*total, counts.iter().sum::<usize>());
    }
}

#[test]
fn ground_truth_identical_across_modalities_in_distant_small() {
    // the thermal omission affects pixels only, never labels
    let cfg = SyntheticConfig {
        regime: Regime::DistantSmall,
        num_videos: 2,
        train_videos: 1,
        frames_per_video: 3,
        image_size: 64,
        objects_per_video: (2, 4),
        seed: 13,
    };
    let dir = temp_dir("distant");
    let manifest = generate_synthetic(&cfg, &dir).unwrap();
    let ds = load_dataset(&dir, Split::Train).unwrap();
    let from_manifest: Vec<_> = manifest
        .records
        .iter()
        .filter(|r| r.video_id == "v000")
        .map(|r| (r.frame_index, r.class_id, r.bbox))
        .collect();
    let mut from_xml = Vec::new();
    for frame in ds.frames() {
        for o in &frame.annotation.objects {
            from_xml.push((frame.frame_index, o.class_id, o.bbox));
        }
    }
    assert_eq!(from_manifest, from_xml);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn letterbox_box_round_trip(
        w in 33usize..200,
        h in 33usize..200,
        x0 in 0.0f64..0.45,
        y0 in 0.0f64..0.45,
        dx in 0.1f64..0.5,
        dy in 0.1f64..0.5,
    ) {
        let img = Tensor::<f32>::full(&[3, h, w], 0.4);
        let (out, tf) = letterbox(&img, 64).unwrap();
        prop_assert_eq!(out.shape(), &[3usize, 64, 64]);
        let b = BBox::new(x0 * w as f64, y0 * h as f64, (x0 + dx) * w as f64, (y0 + dy) * h as f64);
        let round = tf.invert_box(&tf.apply_box(&b));
        prop_assert!((round.x_min - b.x_min).abs() < 1e-4);
        prop_assert!((round.y_min - b.y_min).abs() < 1e-4);
        prop_assert!((round.x_max - b.x_max).abs() < 1e-4);
        prop_assert!((round.y_max - b.y_max).abs() < 1e-4);
    }
}
