use kfplab_core::kernel::gamma;
use kfplab_core::moduli::m_transform;
use kfplab_core::{CoefficientModel, GroupPoint, Modulus, ModelStructure};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn structures() -> impl Strategy<Value = ModelStructure> {
    prop_oneof![Just(vec![1, 1]), Just(vec![2, 1]), Just(vec![1, 1, 1]), Just(vec![2, 2])]
        .prop_map(|m| ModelStructure::build(&m, None).unwrap())
}

fn point(n: usize) -> impl Strategy<Value = (Vec<f64>, f64)> {
    (prop::collection::vec(-2.0..2.0f64, n), -1.5..1.5f64)
}

fn close(a: &GroupPoint, b: &GroupPoint, tol: f64) -> bool {
    (&a.x - &b.x).amax() <= tol * (1.0 + a.x.amax()) && (a.t - b.t).abs() <= tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn group_law_is_associative_with_inverses(
        s in structures(),
        seed in prop::collection::vec((prop::collection::vec(-2.0..2.0f64, 4), -1.5..1.5f64), 3),
    ) {
        let n = s.dim();
        let p: Vec<GroupPoint> = seed.iter().map(|(x, t)| GroupPoint::from_slice(&x.iter().cycle().take(n).cloned().collect::<Vec<_>>(), *t)).collect();
        let left = s.compose(&s.compose(&p[0], &p[1]), &p[2]);
        let right = s.compose(&p[0], &s.compose(&p[1], &p[2]));
        prop_assert!(close(&left, &right, 1e-10));
        let e = s.compose(&p[0], &s.inverse(&p[0]));
        prop_assert!(close(&e, &GroupPoint::origin(n), 1e-10));
    }

    #[test]
    fn dilations_are_automorphisms(s in structures(), a in point(4), b in point(4), lambda in 0.2..4.0f64) {
        let n = s.dim();
        let a = GroupPoint::from_slice(&a.0[..n.min(4)].iter().cycle().take(n).cloned().collect::<Vec<_>>(), a.1);
        let b = GroupPoint::from_slice(&b.0[..n.min(4)].iter().cycle().take(n).cloned().collect::<Vec<_>>(), b.1);
        let lhs = s.dilate(lambda, &s.compose(&a, &b)).unwrap();
        let rhs = s.compose(&s.dilate(lambda, &a).unwrap(), &s.dilate(lambda, &b).unwrap());
        prop_assert!(close(&lhs, &rhs, 1e-9));
        let grown = s.hom_norm(&s.dilate(lambda, &a).unwrap());
        prop_assert!((grown - lambda * s.hom_norm(&a)).abs() <= 1e-10 * (1.0 + grown));
    }

    #[test]
    fn gamma_is_translation_invariant(
        (x, _t) in point(2), (y, s0) in point(2), dt in 0.05..2.0f64,
    ) {
        let st = ModelStructure::build(&[1, 1], None).unwrap();
        let model = CoefficientModel::constant(st.clone(), DMatrix::from_element(1, 1, 1.3), 0.5).unwrap();
        let direct = gamma(&model, &x, s0 + dt, &y, s0).unwrap();
        let moved = st.compose(&st.inverse(&GroupPoint::from_slice(&y, s0)), &GroupPoint::from_slice(&x, s0 + dt));
        let base = gamma(&model, moved.x.as_slice(), moved.t, &[0.0, 0.0], 0.0).unwrap();
        prop_assert!((direct - base).abs() <= 1e-10 * (1.0 + direct), "{direct} vs {base}");
    }

    #[test]
    fn gamma_is_homogeneous(x in prop::collection::vec(-1.0..1.0f64, 3), t in 0.05..1.0f64, lambda in 0.3..3.0f64) {
        let st = ModelStructure::build(&[1, 1, 1], None).unwrap();
        let model = CoefficientModel::constant(st.clone(), DMatrix::from_element(1, 1, 0.7), 0.5).unwrap();
        let g = gamma(&model, &x, t, &[0.0; 3], 0.0).unwrap();
        let p = st.dilate(lambda, &GroupPoint::from_slice(&x, t)).unwrap();
        let gl = gamma(&model, p.x.as_slice(), p.t, &[0.0; 3], 0.0).unwrap();
        let expected = lambda.powi(-(st.hom_dim() as i32)) * g;
        prop_assert!((gl - expected).abs() <= 1e-9 * expected.abs().max(1e-300), "{gl} vs {expected}");
    }

    #[test]
    fn m_transform_dominates_and_is_monotone(alpha in 0.1..0.9f64, omega0 in 0.1..3.0f64, r in 1e-3..2.0f64, k in 0.5..4.0f64) {
        let w = Modulus::power(omega0, alpha).unwrap();
        let m1 = m_transform(&w, r).unwrap();
        let m2 = m_transform(&w, 1.5 * r).unwrap();
        prop_assert!(m1 >= w.eval(r));
        prop_assert!(m2 >= m1);
        let scaled = m_transform(&w.scaled(k).unwrap(), r).unwrap();
        prop_assert!((scaled - k * m1).abs() <= 1e-8 * scaled);
    }
}
