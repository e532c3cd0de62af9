use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use tsm_core::data::{
    generate, load_clips, render_clip, sample_segments, split, DatasetSpec, Manifest, Modality,
    SampleMode, Split,
};

fn small_spec(seed: u64) -> DatasetSpec {
    DatasetSpec {
        clips_per_class: 4,
        test_clips_per_class: 1,
        seed,
        ..DatasetSpec::default()
    }
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn generation_is_byte_identical_for_a_seed() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    for (dir, seed) in [(&a, 3), (&b, 3), (&c, 4)] {
        let m = generate(&small_spec(seed), dir.path()).unwrap();
        m.save(&dir.path().join("manifest.jsonl")).unwrap();
    }
    let (ta, tb, tc) = (
        read_tree(a.path()),
        read_tree(b.path()),
        read_tree(c.path()),
    );
    assert_eq!(ta.len(), 2 * 25 + 1);
    assert_eq!(ta, tb);
    assert_ne!(ta, tc);
}

#[test]
fn saved_manifest_loads_back_with_clips() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate(&small_spec(0), dir.path()).unwrap();
    let path = dir.path().join("manifest.jsonl");
    m.save(&path).unwrap();
    let loaded = Manifest::load(&path).unwrap();
    assert_eq!(loaded.records, m.records);
    let clips = load_clips(&loaded.modality(Modality::Rgb)).unwrap();
    assert_eq!(clips.len(), 25);
    for (clip, rec) in clips.iter().zip(loaded.modality(Modality::Rgb).records) {
        assert_eq!(clip.data.frames, rec.frames);
        assert_eq!(clip.data.channels, 3);
        assert!((8..=24).contains(&clip.data.frames));
        assert!(clip.data.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert_eq!(loaded.split(Split::Test).len(), 2 * 5);
}

/// Mean over clips of signal variance divided by noise variance, where the
/// noise is what the sensor added to the known noise-free signal.
fn mean_snr(spec: &DatasetSpec, modality: Modality, clips: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..clips {
        let c = render_clip(spec, i, modality).unwrap();
        let s: Vec<f64> = c.signal.values.iter().map(|&v| v as f64).collect();
        let noise: Vec<f64> = c
            .observed
            .values
            .iter()
            .zip(&s)
            .map(|(&o, &s)| o as f64 - s)
            .collect();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        total += var(&s) / var(&noise);
    }
    total / clips as f64
}

#[test]
fn ir_has_higher_snr_than_rgb() {
    let spec = DatasetSpec::default();
    let ir = mean_snr(&spec, Modality::Ir, 100);
    let rgb = mean_snr(&spec, Modality::Rgb, 100);
    assert!(spec.sigma_ir < spec.sigma_rgb);
    assert!(ir > rgb, "ir {ir} rgb {rgb}");
}

#[test]
fn split_of_one_hundred_clips() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec {
        clips_per_class: 20,
        test_clips_per_class: 0,
        ..DatasetSpec::default()
    };
    let m = generate(&spec, dir.path()).unwrap().modality(Modality::Ir);
    assert_eq!(m.len(), 100);
    let (train, val) = split(&m, 0.8, 11).unwrap();
    assert_eq!((train.len(), val.len()), (80, 20));
    for class in 0..5 {
        assert_eq!(
            train.records.iter().filter(|r| r.label == class).count(),
            16
        );
        assert_eq!(val.records.iter().filter(|r| r.label == class).count(), 4);
    }
    let (train2, val2) = split(&m, 0.8, 11).unwrap();
    assert_eq!((train.records, val.records), (train2.records, val2.records));
}

#[test]
fn segment_examples() {
    let eval = |f, t| sample_segments(f, t, SampleMode::Eval, 0).unwrap();
    assert_eq!(eval(8, 8), vec![0, 1, 2, 3, 4, 5, 6, 7]);
    assert_eq!(eval(16, 8), vec![1, 3, 5, 7, 9, 11, 13, 15]);
    assert_eq!(eval(4, 8), vec![0, 0, 1, 1, 2, 2, 3, 3]);
    for seed in 0..50 {
        let idx = sample_segments(24, 8, SampleMode::Train, seed).unwrap();
        for (i, &v) in idx.iter().enumerate() {
            assert!((3 * i..3 * i + 3).contains(&v));
        }
    }
}
