use b2b_web::{burgers_field, darcy_sample, DerivativeDemo};

#[test]
fn darcy_sample_layout() {
    let out = darcy_sample(3, 40).unwrap();
    assert_eq!(out.len(), 120);
    assert_eq!((out[0], out[39]), (0.0, 1.0));
    // Homogeneous boundary values of the solution.
    assert_eq!((out[80], out[119]), (0.0, 0.0));
}

#[test]
fn burgers_field_is_time_major() {
    let (nx, nt) = (16, 4);
    let v = burgers_field(1, 0.1, nx, nt).unwrap();
    assert_eq!(v.len(), nx * nt);
    assert!(v.iter().all(|x| x.is_finite()));
    // Viscosity only removes energy.
    let energy = |row: &[f64]| row.iter().map(|x| x * x).sum::<f64>();
    assert!(energy(&v[(nt - 1) * nx..]) < energy(&v[..nx]));
}

#[test]
fn derivative_demo_tracks_the_exact_derivative() {
    let demo = DerivativeDemo::new(0, 300).unwrap();
    let out = demo.predict(1.0, 0.2, -0.02, 0.002).unwrap();
    let n = out.len() / 3;
    let worst = (0..n).map(|i| (out[n + i] - out[2 * n + i]).abs()).fold(0.0, f64::max);
    assert!(worst < 0.1, "max error {worst}");
}
