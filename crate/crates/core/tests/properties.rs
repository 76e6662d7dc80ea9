use b2b::datasets::Polynomial;
use b2b::encoder::{BasisConfig, BasisSet, Domain};
use b2b::linalg::{least_squares, svd_dense};
use b2b::operators::{b2b_fit_linear, InputEncoding};
use b2b::sample::{SampleSet, Side};
use b2b::Tensor;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn residual(g: &Tensor, f: &Tensor, a: &Tensor) -> f64 {
    g.matmul(a).unwrap().sub(f).unwrap().norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn least_squares_satisfies_normal_equations(g in matrix(12, 4), f in matrix(12, 2)) {
        let a = least_squares(&g, &f, 0.0).unwrap();
        let grad = g.t_matmul(&g.matmul(&a).unwrap().sub(&f).unwrap()).unwrap();
        let scale = g.norm() * g.norm() * a.norm() + g.norm() * f.norm();
        prop_assert!(grad.max_abs() <= 1e-8 * scale.max(1.0), "{}", grad.max_abs());
    }

    #[test]
    fn least_squares_beats_perturbations(g in matrix(10, 3), f in matrix(10, 1), d in matrix(3, 1)) {
        let a = least_squares(&g, &f, 0.0).unwrap();
        let moved = a.add(&d.scale(1e-2)).unwrap();
        prop_assert!(residual(&g, &f, &a) <= residual(&g, &f, &moved) + 1e-12);
    }

    #[test]
    fn ridge_never_increases_coefficient_norm(g in matrix(8, 3), f in matrix(8, 1), ridge in 1e-6f64..10.0) {
        let plain = least_squares(&g, &f, 1e-9).unwrap();
        let shrunk = least_squares(&g, &f, ridge).unwrap();
        prop_assert!(shrunk.norm() <= plain.norm() * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn svd_reconstructs_its_input(a in matrix(6, 4)) {
        let s = svd_dense(&a).unwrap();
        let mut us = s.u.clone();
        for i in 0..us.rows() {
            for j in 0..us.cols() {
                us.set2(i, j, us.get2(i, j) * s.s[j]);
            }
        }
        let back = us.matmul(&s.v.transpose()).unwrap();
        prop_assert!(back.sub(&a).unwrap().max_abs() < 1e-9 * a.norm().max(1.0));
        prop_assert!(s.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn matmul_distributes_over_addition(a in matrix(3, 4), b in matrix(3, 4), c in matrix(4, 2)) {
        let lhs = a.add(&b).unwrap().matmul(&c).unwrap();
        let rhs = a.matmul(&c).unwrap().add(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn domain_normalization_lands_in_unit_box(lo in -50.0f64..0.0, w in 0.1f64..50.0, t in prop::collection::vec(0.0f64..=1.0, 1..20)) {
        let d = Domain::interval(lo, lo + w).unwrap();
        let xs = Tensor::column(t.iter().map(|s| lo + s * w).collect()).unwrap();
        let z = d.normalize(&xs);
        prop_assert!(z.data().iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn polynomial_derivative_matches_central_differences(c in prop::collection::vec(-3.0f64..3.0, 4), x in -10.0f64..10.0) {
        let p = Polynomial::new(c);
        let h = 1e-4;
        let fd = (p.eval(x + h) - p.eval(x - h)) / (2.0 * h);
        prop_assert!((p.derivative().eval(x) - fd).abs() < 1e-4 * (1.0 + fd.abs()));
    }
}

/// Untrained bases suffice: a least-squares coefficient map is linear in the input values
/// whenever every function shares one input grid.
#[test]
fn b2b_linear_is_linear_for_any_bases() {
    let cfg = BasisConfig { k: 5, hidden: vec![8], ..BasisConfig::default() };
    let dom = Domain::interval(-1.0, 1.0).unwrap();
    let input = BasisSet::new(&cfg, 1, Side::Input, dom.clone(), 4).unwrap();
    let output = BasisSet::new(&cfg, 1, Side::Output, dom, 5).unwrap();
    let xs = Tensor::column((0..20).map(|i| -1.0 + i as f64 / 10.0).collect()).unwrap();
    let data: Vec<SampleSet> = (0..10)
        .map(|n| {
            let f = xs.map(|x| (x * (n as f64 + 1.0)).sin());
            let tf = xs.map(|x| (n as f64 + 1.0) * (x * (n as f64 + 1.0)).cos());
            SampleSet::new(xs.clone(), f, xs.clone(), tf).unwrap()
        })
        .collect();
    let op = b2b_fit_linear(InputEncoding::Basis(input), output, &data, 1e-6).unwrap();
    proptest!(ProptestConfig::with_cases(32), |(a in -3.0f64..3.0, b in -3.0f64..3.0, i in 0usize..10, j in 0usize..10)| {
        let combo = data[i].fs.scale(a).add(&data[j].fs.scale(b)).unwrap();
        let lhs = op.predict(&xs, &combo, &xs).unwrap();
        let rhs = op.predict(&xs, &data[i].fs, &xs).unwrap().scale(a)
            .add(&op.predict(&xs, &data[j].fs, &xs).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-8 * (1.0 + rhs.max_abs()));
    });
}
