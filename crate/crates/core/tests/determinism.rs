mod common;

#[test]
fn sweeps_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = common::determinism(dir.path(), &[(1, false), (4, false), (4, true), (3, true)]);
    assert!(d.mismatched.is_empty(), "{:?}", d.mismatched);
    // 2 seeds × (2 etas × 2 sparse arms + 1 dense) metrics files, 4 history files.
    assert_eq!(d.files_compared, 3 * (10 + 4));
}
