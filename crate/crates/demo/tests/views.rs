use oseledets_demo::*;

#[test]
fn spectrum_matches_diagonal_logs() {
    let v = spectrum_view(&[3.0, 1.0, 0.25], 0.25, 2048).unwrap();
    assert_eq!(v.exponents.len(), 3);
    for (a, b) in v.exponents.iter().zip(&v.expected) {
        assert!((a - b).abs() < 1e-2, "{a} vs {b}");
    }
}

#[test]
fn spectrum_rejects_bad_input() {
    assert!(spectrum_view(&[2.0], 0.1, 2048).is_err());
    assert!(spectrum_view(&[2.0, 0.5], 0.1, 8).is_err());
}

#[test]
fn regularity_points_and_slope() {
    let v = regularity_view(0.25, 0.6, 40, 3).unwrap();
    assert!(v.points.len() >= 30);
    assert!(v.oracle_error < 1e-6);
    // E_1 varies at least as regularly as the generator
    assert!(v.slope.unwrap() >= v.generator_exponent - 0.1);
    assert!(regularity_view(0.25, 0.6, 0, 3).is_err());
}

#[test]
fn lemma_rows_respect_bound() {
    let v = lemma_view(3, 20, 9).unwrap();
    assert_eq!(v.rows.len(), 20);
    assert!(v.rows.iter().all(|r| r.pass && r.measured <= r.bound * (1.0 + 1e-6) + 1e-14));
    assert!(v.worst_ratio <= 1.0);
    assert!(lemma_view(1, 5, 0).is_err());
}

#[test]
fn same_seed_same_json() {
    let a = serde_json::to_string(&lemma_view(4, 5, 1).unwrap()).unwrap();
    let b = serde_json::to_string(&lemma_view(4, 5, 1).unwrap()).unwrap();
    assert_eq!(a, b);
}
