use uda_core::datasets::{
    glyph_images, rotate_points, shifted_blobs, two_moons, DatasetSpec, GlyphShift, GLYPH_CLASSES,
};
use uda_core::Tensor;

fn column_means(x: &Tensor) -> Vec<f64> {
    (0..x.cols()).map(|j| (0..x.rows()).map(|i| x.at(i, j)).sum::<f64>() / x.rows() as f64).collect()
}

fn label_counts(y: &Tensor) -> Vec<usize> {
    let mut c = vec![0; y.cols()];
    for l in y.argmax_rows() {
        c[l] += 1;
    }
    c
}

#[test]
fn generators_are_deterministic() {
    for spec in [
        DatasetSpec::default(),
        DatasetSpec::ShiftedBlobs { classes: 3, n_per_domain: 30, dim: 4, shift: vec![1.0; 4], blob_std: 0.5 },
        DatasetSpec::Glyphs { n_per_domain: 12, size: 16, shift: GlyphShift::AdditiveTexture(0.2) },
    ] {
        assert_eq!(spec.generate(5).unwrap(), spec.generate(5).unwrap());
        assert_ne!(spec.generate(5).unwrap().x_s(), spec.generate(6).unwrap().x_s());
    }
}

#[test]
fn unrotated_moons_share_a_distribution() {
    let p = two_moons(4000, 0.1, 0.0, 1).unwrap();
    let (ms, mt) = (column_means(p.x_s()), column_means(p.x_t()));
    for (a, b) in ms.iter().zip(&mt) {
        assert!((a - b).abs() < 0.05, "{ms:?} vs {mt:?}");
    }
    assert_eq!(label_counts(p.y_s()), label_counts(p.target_labels()));
}

#[test]
fn full_turn_matches_no_rotation() {
    let a = two_moons(50, 0.1, 0.0, 3).unwrap();
    let b = two_moons(50, 0.1, 360.0, 3).unwrap();
    for (u, v) in a.x_t().data().iter().zip(b.x_t().data()) {
        assert!((u - v).abs() < 1e-9);
    }
}

#[test]
fn rotation_is_rigid() {
    let p = two_moons(40, 0.1, 0.0, 2).unwrap();
    let x = p.x_s();
    let r = rotate_points(x, [0.5, 0.25], 45.0);
    let dist = |m: &Tensor, i: usize, j: usize| ((m.at(i, 0) - m.at(j, 0)).powi(2) + (m.at(i, 1) - m.at(j, 1)).powi(2)).sqrt();
    for i in 0..x.rows() {
        for j in (i + 1)..x.rows() {
            assert!((dist(x, i, j) - dist(&r, i, j)).abs() < 1e-12);
        }
    }
}

#[test]
fn blob_shift_zero_and_label_marginals() {
    let p = shifted_blobs(3, 3000, 2, &[0.0, 0.0], 4).unwrap();
    let (ms, mt) = (column_means(p.x_s()), column_means(p.x_t()));
    for (a, b) in ms.iter().zip(&mt) {
        assert!((a - b).abs() < 0.05);
    }
    let shifted = shifted_blobs(3, 90, 2, &[5.0, -2.0], 4).unwrap();
    assert_eq!(label_counts(shifted.y_s()), label_counts(shifted.target_labels()));
}

#[test]
fn glyph_pixels_stay_in_unit_interval() {
    for shift in [GlyphShift::BrightnessBias(0.5), GlyphShift::AdditiveTexture(0.4)] {
        let p = glyph_images(40, 16, shift, 7).unwrap();
        assert!(p.x_s().data().iter().chain(p.x_t().data()).all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn zero_brightness_bias_keeps_domains_alike() {
    let p = glyph_images(800, 16, GlyphShift::BrightnessBias(0.0), 8).unwrap();
    let mean = |x: &Tensor| x.data().iter().sum::<f64>() / x.len() as f64;
    assert!((mean(p.x_s()) - mean(p.x_t())).abs() < 0.01);
}

#[test]
fn glyph_areas_ordered_by_class() {
    // bright pixel count per image, averaged per class over 1000 draws
    let p = glyph_images(1000, 16, GlyphShift::BrightnessBias(0.0), 9).unwrap();
    let mut area = [0.0; GLYPH_CLASSES];
    let mut n = [0usize; GLYPH_CLASSES];
    for (i, l) in p.y_s().argmax_rows().into_iter().enumerate() {
        area[l] += p.x_s().row(i).iter().filter(|&&v| v > 0.5).count() as f64;
        n[l] += 1;
    }
    let avg: Vec<f64> = area.iter().zip(n).map(|(a, k)| a / k as f64).collect();
    assert!(avg.windows(2).all(|w| w[0] < w[1]), "{avg:?}");
}

#[test]
fn training_view_omits_target_labels() {
    let p = two_moons(20, 0.1, 45.0, 0).unwrap();
    let uda_core::datasets::TrainingView { x_s, y_s, x_t } = p.training_view();
    assert_eq!((x_s.rows(), y_s.cols(), x_t.rows()), (20, 2, 20));
}
