//! Dataset round trips and generator properties.

use otflow_core::datasets::{
    generate_gaussian_series, load_dataset, subsample, write_dataset, GaussianScheduleConfig,
};
use otflow_core::grid::total_mass;

fn small() -> GaussianScheduleConfig {
    GaussianScheduleConfig {
        n_series: 3,
        n_frames: 6,
        ..GaussianScheduleConfig::default()
    }
}

#[test]
fn written_datasets_load_bit_identically() {
    let data = generate_gaussian_series(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &data).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), data.len());
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.times(), b.times());
        for (fa, fb) in a.frames().iter().zip(b.frames()) {
            assert!(fa.values().iter().zip(fb.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

#[test]
fn generator_is_deterministic_per_seed() {
    let a = generate_gaussian_series(&small()).unwrap();
    let b = generate_gaussian_series(&small()).unwrap();
    assert_eq!(a, b);
    let c = generate_gaussian_series(&GaussianScheduleConfig { seed: 1, ..small() }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn blobs_move_right_and_grow() {
    for s in generate_gaussian_series(&GaussianScheduleConfig::default()).unwrap() {
        let first = s.frames().first().unwrap();
        let last = s.frames().last().unwrap();
        assert!(last.centroid().unwrap().1 > first.centroid().unwrap().1 + 8.0);
        assert!(total_mass(last) > total_mass(first));
    }
}

#[test]
fn subsampling_splits_frames_without_overlap() {
    let s = &generate_gaussian_series(&GaussianScheduleConfig::default()).unwrap()[0];
    let (train, held) = subsample(s, 5);
    assert_eq!(train.len(), 7);
    assert_eq!(held.len(), 24);
    assert!(train.times().iter().all(|t| !held.times().contains(t)));
}
