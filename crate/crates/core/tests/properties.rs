use proptest::prelude::*;
use std::f64::consts::TAU;
use svph_core::branches::preimages;
use svph_core::cones::{check_hypotheses, working_cones};
use svph_core::geometry::torus_distance;
use svph_core::spectral::{weak_norm, x_constant_test};
use svph_core::transfer::{ulam_matrix, GridFunction};
use svph_core::trig::TrigPoly2;
use svph_core::{MapSpec, Point2};

fn small_poly(kmax: i32) -> impl Strategy<Value = TrigPoly2> {
    prop::collection::vec((0..=kmax, -kmax..=kmax, -1.0f64..1.0, -1.0f64..1.0), 0..5).prop_map(
        |modes| {
            let mut p = TrigPoly2::zero();
            for (k, l, a, b) in modes {
                p.add_cos(k, l, a).add_sin(k, l, b);
            }
            p
        },
    )
}

fn map_strategy() -> impl Strategy<Value = MapSpec> {
    (2u32..5, small_poly(2), small_poly(2), 0.0f64..0.2).prop_map(|(d, f, w, e)| {
        // keep the fiber maps expanding and the drift a small perturbation
        let scale = 0.1 / (1.0 + f.dx().sup_bound());
        let wscale = 0.4 / (1.0 + e * (w.dx().sup_bound() + w.dt().sup_bound()));
        MapSpec::new(d, f.scaled(scale), w.scaled(wscale), e).unwrap()
    })
}

fn unit() -> impl Strategy<Value = f64> {
    0.0f64..1.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn json_round_trip_preserves_the_map(m in map_strategy(), x in unit(), t in unit()) {
        let back = MapSpec::from_json(&m.to_json()).unwrap();
        prop_assert_eq!(back.degree, m.degree);
        prop_assert_eq!(back.epsilon, m.epsilon);
        prop_assert_eq!(back.to_json(), m.to_json());
        let (a, b) = (m.apply(Point2::new(x, t)), back.apply(Point2::new(x, t)));
        prop_assert!(torus_distance(a, b) < 1e-14);
    }

    #[test]
    fn images_stay_in_the_unit_square(m in map_strategy(), x in unit(), t in unit()) {
        let q = m.apply(Point2::new(x, t));
        prop_assert!((0.0..1.0).contains(&q.x) && (0.0..1.0).contains(&q.theta));
    }

    #[test]
    fn preimages_map_forward_to_the_target(m in map_strategy(), x in unit(), t in unit(), n in 1usize..3) {
        let p = Point2::new(x, t);
        let pre = preimages(&m, p, n).unwrap();
        prop_assert_eq!(pre.len(), (m.degree as usize).pow(n as u32));
        for z in &pre {
            prop_assert!(torus_distance(m.iterate(z.point, n), p) < 1e-10);
        }
    }

    #[test]
    fn weak_norm_is_a_seminorm(
        c1 in prop::collection::vec(-1.0f64..1.0, 6),
        c2 in prop::collection::vec(-1.0f64..1.0, 6),
        s in -5.0f64..5.0,
    ) {
        let field = |c: Vec<f64>| {
            GridFunction::from_fn(32, 32, move |p| {
                c[0] * (TAU * p.x).cos()
                    + c[1] * (TAU * p.theta).sin()
                    + c[2] * (TAU * (p.x + p.theta)).cos()
                    + c[3] * (TAU * (3.0 * p.x - p.theta)).sin()
                    + c[4] * (TAU * 2.0 * p.theta).cos()
                    + c[5]
            })
        };
        let (f, g) = (field(c1), field(c2));
        let sf = GridFunction { nx: 32, nt: 32, data: f.data.iter().map(|v| s * v).collect() };
        let sum = GridFunction { nx: 32, nt: 32, data: f.data.iter().zip(&g.data).map(|(a, b)| a + b).collect() };
        let (nf, ng) = (weak_norm(&f, 8).unwrap(), weak_norm(&g, 8).unwrap());
        prop_assert!((weak_norm(&sf, 8).unwrap() - s.abs() * nf).abs() <= 1e-12 * (1.0 + nf * s.abs()));
        prop_assert!(weak_norm(&sum, 8).unwrap() <= nf + ng + 1e-12);
    }

    #[test]
    fn coboundary_drift_has_constant_periodic_averages(
        a in -1.0f64..1.0, b in -1.0f64..1.0, c in -0.5f64..0.5, theta in unit(),
    ) {
        // omega = Phi(2x) - Phi(x) + c with Phi = a sin 2 pi x + b cos 2 pi x
        let mut w = TrigPoly2::zero();
        w.add_sin(2, 0, a).add_cos(2, 0, b).add_sin(1, 0, -a).add_cos(1, 0, -b).add_cos(0, 0, c);
        let m = MapSpec::new(2, TrigPoly2::zero(), w, 0.05).unwrap();
        let r = x_constant_test(&m, theta, 5, 1e-9).unwrap();
        prop_assert!(r.consistent);
        prop_assert!((r.min_average - c).abs() < 1e-9 && (r.max_average - c).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn ulam_columns_are_stochastic(m in map_strategy(), n in 4usize..20) {
        let op = ulam_matrix(&m, n, n).unwrap();
        for s in op.matrix.column_sums() {
            prop_assert!((s - 1.0).abs() < 1e-12, "column sum {}", s);
        }
    }

    #[test]
    fn working_cones_are_invariant_off_grid(
        e in 0.005f64..0.1,
        pts in prop::collection::vec((unit(), unit()), 200),
    ) {
        let m = MapSpec::e1(e);
        prop_assume!(check_hypotheses(&m, 5, 128).structural_pass);
        let c = working_cones(&m, 128).unwrap();
        for (x, t) in pts {
            let q = m.jacobian(Point2::new(x, t)).m;
            for s in [c.chi_u, -c.chi_u] {
                let img = (q[1][0] + q[1][1] * s) / (q[0][0] + q[0][1] * s);
                prop_assert!(img.abs() <= c.iota_star * c.chi_u * (1.0 + 1e-9));
            }
        }
    }
}
