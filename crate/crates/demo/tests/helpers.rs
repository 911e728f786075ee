use phantom_demo::{alpha_histogram, boundary, cluster_preview};
use phantom_core::Method;

#[test]
fn boundary_separates_the_moons() {
    let b = boundary(Method::Phantom, 2, 1, 20, 0.1, 16).unwrap();
    assert_eq!(b.prob.len(), 256);
    assert!(b.prob.iter().all(|p| (0.0..=1.0).contains(p)));
    assert_eq!(b.points.len(), 2 * b.labels.len());
    assert!(b.test_acc > 0.9, "{}", b.test_acc);
    let again = boundary(Method::Phantom, 2, 1, 20, 0.1, 16).unwrap();
    assert_eq!(b.prob, again.prob);
}

#[test]
fn boundary_rejects_bad_grid() {
    assert!(boundary(Method::Erm, 1, 1, 1, 0.1, 1).is_err());
}

#[test]
fn uniform_alpha_histogram_is_flat() {
    let h = alpha_histogram(1.0, 1.0, 100_000, 10, 3).unwrap();
    assert_eq!(h.len(), 10);
    let mean = h.iter().sum::<f64>() / 10.0;
    assert!((mean - 1.0).abs() < 1e-12);
    assert!(h.iter().all(|d| (d - 1.0).abs() < 0.05), "{h:?}");
    assert!(alpha_histogram(0.0, 1.0, 10, 10, 3).is_err());
}

#[test]
fn skewed_alpha_histogram_leans_left() {
    let h = alpha_histogram(2.0, 5.0, 20_000, 4, 3).unwrap();
    assert!(h[0] > h[3]);
}

#[test]
fn preview_rows_hold_members_and_mean() {
    let k = 3;
    let rows = cluster_preview(k, 5, 7, 0.1).unwrap();
    let width = 2 * k + 3;
    assert_eq!(rows.len(), 5 * width);
    for row in rows.chunks(width) {
        let mx = (0..k).map(|m| row[1 + 2 * m]).sum::<f64>() / k as f64;
        let my = (0..k).map(|m| row[2 + 2 * m]).sum::<f64>() / k as f64;
        assert!((row[width - 2] - mx).abs() < 1e-12);
        assert!((row[width - 1] - my).abs() < 1e-12);
        assert!(row[0] == 0.0 || row[0] == 1.0);
    }
}
