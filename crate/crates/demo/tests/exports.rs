use sfcsim_demo::{bounds, peak_sweep, timeline};

#[test]
fn appendix_bounds() {
    let b = bounds(100.0, 4.0, 1.0, 1.0, 4000, 26, 40).unwrap();
    assert!((b.b_ack_bytes - b.b_bts_bytes - 129_000.0).abs() < 1.0);
    assert!((b.saving_percent - 38.74).abs() < 0.01);
    assert!(bounds(0.0, 4.0, 1.0, 1.0, 4000, 26, 40).is_err());
}

#[test]
fn timeline_has_samples_and_a_peak() {
    let t = timeline("ingress_bts", 8, 10.0, 300.0).unwrap();
    assert!(t.points.len() >= 290);
    assert!(t.peak_bytes > 0);
    assert!(t.points.iter().all(|p| p.1 <= t.peak_bytes));
    assert!(t.bts_triggered > 0);
}

#[test]
fn bad_requests_are_errors() {
    assert!(timeline("nope", 8, 10.0, 300.0).is_err());
    assert!(timeline("egress_bts", 0, 10.0, 300.0).is_err());
    assert!(timeline("egress_bts", 8, 10.0, 1e9).is_err());
}

#[test]
fn sweep_peaks_grow_with_degree() {
    let s = peak_sweep("onramp_strawman", &[4, 32]).unwrap();
    assert_eq!(s.len(), 2);
    assert!(s[1].peak_bytes > s[0].peak_bytes);
}
