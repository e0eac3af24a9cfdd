use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use jflow::cone::{relative_spectrum, subsolution_margin};
use jflow::config::ScenarioConfig;
use jflow::flow::flow_rhs;
use jflow::functionals::{aubin_ij, entropy, level_constant, PathQuadrature};
use jflow::geodesic::{inverse_legendre_transform, legendre_transform, ProbeReport};
use jflow::geometry::potentials::{random_kahler_potential, random_sphere_expr, PotentialExpr, Term};
use jflow::geometry::{complex_hessian, GeometryBackend, HermitianFormField, ScalarField};

fn backend(which: u8) -> GeometryBackend {
    match which % 3 {
        0 => GeometryBackend::torus(1, 48).unwrap(),
        1 => GeometryBackend::torus(2, 12).unwrap(),
        _ => GeometryBackend::sphere(96, 12.0).unwrap(),
    }
}

fn spd(n: usize) -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-1.0f64..1.0, n * n), 0.05f64..1.0).prop_map(move |(a, shift)| {
        let mut packed = Vec::new();
        for i in 0..n {
            for j in i..n {
                let dot: f64 = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum();
                packed.push(dot + if i == j { shift } else { 0.0 });
            }
        }
        packed
    })
}

fn torus_term() -> impl Strategy<Value = Term> {
    prop_oneof![
        Just(Term::Zero),
        (-5.0f64..5.0).prop_map(Term::Const),
        (-1.0f64..1.0, 1u8..4, 0usize..2).prop_map(|(a, k, axis)| Term::Sine { amplitude: a, mode: k as f64, axis }),
        (-1.0f64..1.0, 1u8..4, 0usize..2).prop_map(|(a, k, axis)| Term::Cosine { amplitude: a, mode: k as f64, axis }),
        (-1.0f64..1.0, 1u8..3, 1u8..3).prop_map(|(a, k, l)| Term::Mixed {
            amplitude: a,
            mode0: k as f64,
            mode1: l as f64
        }),
        (-1.0f64..1.0, 1u8..5).prop_map(|(a, k)| Term::MomentCos { amplitude: a, mode: k as f64 }),
        (-1.0f64..1.0, 1u8..4).prop_map(|(a, p)| Term::MomentPoly { amplitude: a, power: p as f64 }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn expressions_round_trip_through_text(terms in prop::collection::vec(torus_term(), 1..5)) {
        let e = PotentialExpr { terms };
        prop_assert_eq!(e.to_string().parse::<PotentialExpr>().unwrap(), e);
    }

    #[test]
    fn hessian_is_linear(seed in any::<u64>(), which in any::<u8>(), a in -2.0f64..2.0, c in -2.0f64..2.0) {
        let b = backend(which);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = random_kahler_potential(&b, &mut rng, 0.3, 3, 0.5).unwrap();
        let psi = random_kahler_potential(&b, &mut rng, 0.3, 3, 0.5).unwrap();
        let lhs = complex_hessian(&phi.scaled(a).axpy(c, &psi), &b).unwrap();
        let rhs = complex_hessian(&phi, &b).unwrap().scaled(a).axpy(c, &complex_hessian(&psi, &b).unwrap());
        let scale = 1.0 + complex_hessian(&phi, &b).unwrap().packed().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-11 * scale * (1.0 + a.abs() + c.abs()));
    }

    #[test]
    fn constants_do_not_change_the_flow(seed in any::<u64>(), which in any::<u8>(), shift in -10.0f64..10.0) {
        let b = backend(which);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = random_kahler_potential(&b, &mut rng, 0.3, 3, 0.5).unwrap();
        let omega = b.chi0().scaled(1.3);
        let r0 = flow_rhs(&phi, &omega, 1.3, &b).unwrap();
        let r1 = flow_rhs(&phi.add_constant(shift), &omega, 1.3, &b).unwrap();
        let chi = b.chi0().add(&complex_hessian(&phi, &b).unwrap()).determinants();
        let diff = r0.values.iter().zip(&r1.values).zip(&chi).fold(0.0f64, |m, ((x, y), d)| m.max((x - y).abs() * d * d));
        prop_assert!(diff < 1e-11 * (1.0 + shift.abs()), "rhs changed by {diff:e}");
    }

    #[test]
    fn aubin_functionals_are_ordered(seed in any::<u64>(), which in any::<u8>()) {
        let b = backend(which);
        let n = b.dim() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = random_kahler_potential(&b, &mut rng, 0.4, 4, 0.6).unwrap();
        let ay = aubin_ij(&phi, &b, PathQuadrature::default()).unwrap();
        prop_assert!(ay.j >= -1e-10);
        prop_assert!(ay.j <= ay.i + 1e-10);
        prop_assert!(ay.i <= (n + 1.0) * ay.j + 1e-10);
        prop_assert!((ay.i_minus_j - (ay.i - ay.j)).abs() < 1e-10);
    }

    #[test]
    fn entropy_is_non_negative(seed in any::<u64>(), which in any::<u8>()) {
        let b = backend(which);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = random_kahler_potential(&b, &mut rng, 0.4, 4, 0.6).unwrap();
        prop_assert!(entropy(&phi, &b).unwrap() >= -1e-8);
    }

    #[test]
    fn level_constant_is_cohomological(seed in any::<u64>(), which in any::<u8>(), a in 0.5f64..3.0) {
        let b = backend(which);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = random_kahler_potential(&b, &mut rng, 0.3, 3, 0.5).unwrap();
        let omega = b.chi0().scaled(a);
        let shifted = omega.add(&complex_hessian(&psi, &b).unwrap());
        let (c0, c1) = (level_constant(&omega, &b).unwrap(), level_constant(&shifted, &b).unwrap());
        prop_assert!((c0 - a).abs() < 1e-10 && (c1 - c0).abs() < 1e-9, "{c0} {c1}");
    }

    #[test]
    fn margin_is_homogeneous(chi in spd(2), omega in spd(2), c in 0.0f64..2.0, theta in -0.5f64..0.5, t in 0.1f64..5.0) {
        let chi = HermitianFormField::from_packed(2, chi);
        let m = |s: f64| subsolution_margin(
            &chi,
            &HermitianFormField::from_packed(2, omega.iter().map(|v| s * v).collect()),
            s * c,
            &ScalarField::new(vec![s * theta]),
        ).unwrap();
        prop_assert!((m(t) - t * m(1.0)).abs() < 1e-9 * (1.0 + t));
    }

    #[test]
    fn spectrum_reconstructs_the_form(omega in spd(3), chi in spd(3)) {
        let spec = relative_spectrum(
            &HermitianFormField::from_packed(3, omega.clone()),
            &HermitianFormField::from_packed(3, chi),
        ).unwrap();
        prop_assert!(spec.reconstruction_error < 1e-9);
        prop_assert!(spec.mu.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(spec.mu[0] > 0.0);
    }

    #[test]
    fn legendre_transform_inverts(seed in any::<u64>()) {
        let b = GeometryBackend::sphere(96, 12.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = random_sphere_expr(&b, &mut rng, 0.4, 3, 0.5).unwrap().sample(&b).unwrap();
        let u = legendre_transform(&phi, &b, 1025).unwrap();
        let back = inverse_legendre_transform(&u, &b).unwrap();
        let err = phi.values().iter().zip(back.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        prop_assert!(err < 1e-6, "round trip error {err:e}");
    }

    #[test]
    fn affine_sequences_have_zero_second_differences(a in -10.0f64..10.0, c in -10.0f64..10.0, len in 3usize..40) {
        let values: Vec<f64> = (0..len).map(|k| a + c * k as f64).collect();
        let probe = ProbeReport::from_values(values);
        prop_assert!(probe.min_second_difference.abs() < 1e-11);
        prop_assert!(probe.second_differences[0].is_nan() && probe.second_differences[len - 1].is_nan());
    }

    #[test]
    fn scenario_configs_round_trip(seed in any::<u64>(), points in 8usize..512, t_max in 0.0f64..100.0, eps in -1.0f64..1.0) {
        let mut c = ScenarioConfig { seed, ..ScenarioConfig::default() };
        c.backend.points = points;
        c.flow.t_max = t_max;
        c.hypotheses.epsilon = eps;
        prop_assert_eq!(ScenarioConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }
}
