use bdgp_web::{bohman_rows, extinction_curve_rows, simulation_check_rows};

#[test]
fn curve_rows_are_monotone_probabilities() {
    let rows = extinction_curve_rows(0.6, 1.0, 10, 11.0, 50).unwrap();
    assert_eq!(rows.len(), 150);
    let p: Vec<f64> = rows.chunks(3).map(|r| r[1]).collect();
    assert!(p.windows(2).all(|w| w[0] <= w[1]));
    assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(rows.chunks(3).all(|r| r[2] >= 0.0));
}

#[test]
fn simulation_tracks_the_closed_form() {
    let rows = simulation_check_rows(0.6, 1.0, 10, 20_000, 3).unwrap();
    assert_eq!(rows.len(), 44);
    for r in rows.chunks(4) {
        assert!((r[1] - r[2]).abs() <= 4.0 * r[3] + 1e-12, "{r:?}");
    }
    assert_eq!(rows, simulation_check_rows(0.6, 1.0, 10, 20_000, 3).unwrap());
}

#[test]
fn bohman_profile_reports_the_support_sum() {
    let rows = bohman_rows(0.9, 0.2, 11).unwrap();
    assert!((rows[0] - 0.346).abs() < 1e-3);
    assert_eq!(rows[2], 1.0);
    assert_eq!(*rows.last().unwrap(), 0.0);
    assert!(bohman_rows(0.9, 0.5, 11).is_err());
}

#[test]
fn bad_inputs_are_reported() {
    assert!(extinction_curve_rows(-1.0, 1.0, 10, 5.0, 10).is_err());
    assert!(extinction_curve_rows(0.6, 1.0, 10, 0.0, 10).is_err());
    assert!(simulation_check_rows(0.6, 1.0, 10, 0, 1).is_err());
}
