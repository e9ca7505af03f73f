use qsi_web::{antibunching_native, axes_native, separate_native};

#[test]
fn same_inputs_same_outputs() {
    let a = separate_native(200.0, 0.8, 1e4, 7).unwrap();
    let b = separate_native(200.0, 0.8, 1e4, 7).unwrap();
    assert_eq!(a.image_a(), b.image_a());
    assert_eq!(a.distance_nm(), b.distance_nm());
    assert_eq!(axes_native(1000.0, 3).unwrap(), axes_native(1000.0, 3).unwrap());
}

#[test]
fn unresolved_mask_is_binary() {
    let s = separate_native(250.0, 0.6, 1e4, 4).unwrap();
    assert!(s.unresolved().iter().all(|v| *v == 0.0 || *v == 1.0));
    assert!(s.unresolved().contains(&1.0), "the dim corners sit below the floor");
}

#[test]
fn too_short_a_histogram_is_an_error() {
    assert!(antibunching_native(0.0, 0.01, 1).is_err());
}
