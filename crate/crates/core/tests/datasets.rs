use proptest::prelude::*;
use qtart::data::{
    apply_mask, batch_indices, denormalize, generate_synthetic, load_dataset, load_image_dataset, normalize,
    save_dataset, ImageFormat, Mask, NormalizationStats, SyntheticSpec,
};

fn cifar_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        out.push(l);
        out.extend((0..3072).map(|p| ((p + i * 7) % 256) as u8));
    }
    out
}

#[test]
fn synthetic_is_seeded_clipped_and_marks_outliers() {
    let spec = SyntheticSpec::small(300, 4, 21);
    let a = generate_synthetic(&spec).unwrap();
    let b = generate_synthetic(&spec).unwrap();
    assert_eq!(a.images(), b.images());
    assert_eq!(a.labels(), b.labels());
    assert_eq!(a.image_shape(), [3, 8, 8]);
    assert!(a.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
    let o = a.outliers().unwrap();
    assert_eq!(o.len(), 30);
    assert!(o.windows(2).all(|w| w[0] < w[1]));
    assert!(a.class_counts().iter().all(|&c| c > 0));

    let other = generate_synthetic(&SyntheticSpec { seed: 22, ..spec.clone() }).unwrap();
    assert_ne!(a.images(), other.images());
}

#[test]
fn outliers_sit_far_from_their_template() {
    let spec = SyntheticSpec::small(400, 3, 5);
    let d = generate_synthetic(&spec).unwrap();
    let t = spec.templates();
    let dist = |i: usize| -> f64 {
        let tpl = &t[d.labels()[i]];
        d.images().row(i).iter().zip(tpl).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum()
    };
    let o = d.outliers().unwrap();
    let worst_clean = (0..d.len()).filter(|i| o.binary_search(i).is_err()).map(dist).fold(0.0, f64::max);
    let best_outlier = o.iter().map(|&i| dist(i)).fold(f64::MAX, f64::min);
    assert!(best_outlier > worst_clean, "{best_outlier} <= {worst_clean}");
}

#[test]
fn test_split_shares_templates_without_outliers() {
    let spec = SyntheticSpec::small(100, 3, 9);
    let test = spec.test_split(50);
    assert_eq!(test.templates(), spec.templates());
    let d = generate_synthetic(&test).unwrap();
    assert!(d.outliers().is_none_or(|o| o.is_empty()));
    assert_ne!(generate_synthetic(&spec).unwrap().images().row(0), d.images().row(0));
}

#[test]
fn qtds_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.qtds");
    let d = generate_synthetic(&SyntheticSpec::small(40, 3, 1)).unwrap();
    save_dataset(&d, &p).unwrap();
    let back = load_dataset(&p).unwrap();
    assert_eq!(back.images(), d.images());
    assert_eq!(back.labels(), d.labels());
    assert_eq!(back.classes(), d.classes());
    assert_eq!(back.outliers(), d.outliers());
}

#[test]
fn qtds_rejects_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.qtds");
    save_dataset(&generate_synthetic(&SyntheticSpec::small(10, 2, 1)).unwrap(), &p).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 7]).unwrap();
    assert!(load_dataset(&p).is_err());
}

#[test]
fn cifar_binary_parses_and_scales() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("batch.bin");
    std::fs::write(&p, cifar_bytes(&[3, 0, 9])).unwrap();
    let d = load_image_dataset(&p, &ImageFormat::CifarBinary).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d.labels(), &[3, 0, 9]);
    assert_eq!(d.image_shape(), [3, 32, 32]);
    assert_eq!(d.images().row(1)[0], 7.0 / 255.0);
    assert_eq!(d.images().row(0)[255], 1.0);
}

#[test]
fn cifar_binary_errors_carry_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("batch.bin");
    let mut bytes = cifar_bytes(&[1, 2]);
    bytes.truncate(3073 + 100);
    std::fs::write(&p, &bytes).unwrap();
    let e = load_image_dataset(&p, &ImageFormat::CifarBinary).unwrap_err().to_string();
    assert!(e.contains("3073"), "{e}");

    std::fs::write(&p, cifar_bytes(&[1, 12])).unwrap();
    let e = load_image_dataset(&p, &ImageFormat::CifarBinary).unwrap_err().to_string();
    assert!(e.contains("label 12"), "{e}");

    let missing = dir.path().join("nope.bin");
    let e = load_image_dataset(&missing, &ImageFormat::CifarBinary).unwrap_err().to_string();
    assert!(e.contains("nope.bin"), "{e}");
}

#[test]
fn idx_pair_parses() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
    img.extend([0, 51, 102, 153, 204, 255, 255, 0, 0, 0, 0, 0]);
    std::fs::write(&ip, &img).unwrap();
    std::fs::write(&lp, [0, 0, 8, 1, 0, 0, 0, 2, 4, 1]).unwrap();
    let d = load_image_dataset(&ip, &ImageFormat::IdxPair { labels: lp.clone() }).unwrap();
    assert_eq!(d.image_shape(), [1, 2, 3]);
    assert_eq!(d.labels(), &[4, 1]);
    assert_eq!(d.classes(), 5);
    assert_eq!(d.images().row(0), &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);

    std::fs::write(&lp, [0, 0, 8, 1, 0, 0, 0, 3, 4, 1, 0]).unwrap();
    let e = load_image_dataset(&ip, &ImageFormat::IdxPair { labels: lp }).unwrap_err().to_string();
    assert!(e.contains("3 labels for 2 images"), "{e}");
}

#[test]
fn normalization_matches_direct_moments() {
    let d = generate_synthetic(&SyntheticSpec::small(64, 2, 4)).unwrap();
    let s = NormalizationStats::compute(&d);
    for c in 0..3 {
        let vals: Vec<f64> = (0..d.len()).flat_map(|i| d.images().row(i)[c * 64..(c + 1) * 64].to_vec()).map(f64::from).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!((s.mean[c] as f64 - m).abs() < 1e-5);
        assert!((s.std[c] as f64 - sd).abs() < 1e-4);
    }
    let back = denormalize(&normalize(&d, &s).unwrap(), &s).unwrap();
    assert!(back.images().max_abs_diff(d.images()) < 1e-5);
}

#[test]
fn mask_text_round_trip_and_application() {
    let m = Mask::from_removed(10, &[7, 2], 42).unwrap();
    assert_eq!(m.removed(), vec![2, 7]);
    assert_eq!(m.kept(), 8);
    assert_eq!(Mask::from_text(&m.to_text()).unwrap(), m);
    assert!(Mask::from_removed(5, &[5], 0).is_err());
    assert!(Mask::from_text("gamma=2 n=4 seed=0\n1\n").is_err());

    let d = generate_synthetic(&SyntheticSpec::small(10, 2, 3)).unwrap();
    let kept = apply_mask(&d, &m).unwrap();
    assert_eq!(kept.len(), 8);
    assert_eq!(kept.origin(), &[0, 1, 3, 4, 5, 6, 8, 9]);
    assert_eq!(kept.images().row(2), d.images().row(3));
}

proptest! {
    #[test]
    fn batches_partition_the_indices(n in 1usize..300, bs in 1usize..64, seed in any::<u64>(), epoch in 0usize..5) {
        let b = batch_indices(n, bs, seed, epoch).unwrap();
        prop_assert_eq!(b.len(), n.div_ceil(bs));
        prop_assert!(b.iter().all(|x| !x.is_empty() && x.len() <= bs));
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(b.clone(), batch_indices(n, bs, seed, epoch).unwrap());
    }

    #[test]
    fn mask_counts_are_consistent(n in 1usize..200, picks in proptest::collection::vec(any::<usize>(), 0..50)) {
        let mut removed: Vec<usize> = picks.iter().map(|p| p % n).collect();
        removed.sort_unstable();
        removed.dedup();
        let m = Mask::from_removed(n, &removed, 1).unwrap();
        prop_assert_eq!(m.gamma(), removed.len());
        prop_assert_eq!(m.kept() + m.gamma(), n);
        prop_assert_eq!(m.bits().iter().filter(|b| !**b).count(), removed.len());
        prop_assert_eq!(Mask::from_text(&m.to_text()).unwrap(), m);
    }
}
