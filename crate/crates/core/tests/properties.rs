use nhspace::czd::{cz_decompose, CzOptions};
use nhspace::fixtures::{make_function_family, make_space, Family, FamilyKind, FixtureSpec};
use nhspace::geometry::{
    coeff_k, coeff_k_tilde, coeff_k_tilde_alpha, intersects, nested_geometric, vitali_select,
};
use nhspace::kernels::{check_size_condition, KernelMatrix, KernelSpec};
use nhspace::maximal::{maximal_m_alpha, maximal_mr_rho, maximal_n, sharp_maximal};
use nhspace::norms::{lp_norm, luxemburg_norm, osc_exp_norm, rbmo_norm, weak_lp, OrliczFn};
use nhspace::operators::{
    apply, commutator, expansion_rhs, multilinear_commutator, ExpansionConvention,
};
use nhspace::space::{log_grid, Ball, Coords, DominatingFn, MetricSpec, Point, SamplePlan, Space};
use proptest::prelude::*;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300) || a == b
}

fn scale(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Points in the plane (or on a line when `planar` is false) with `lambda = mu(B)`.
fn cloud(coords: &[(f64, f64)], weights: &[f64], planar: bool) -> Space {
    let points = coords
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Point {
            id: format!("p{i}"),
            coords: Some(Coords::Real(if planar { vec![x, y] } else { vec![x] })),
        })
        .collect();
    Space::new(
        points,
        MetricSpec::Euclidean,
        weights.to_vec(),
        DominatingFn::Measure,
    )
    .unwrap()
}

prop_compose! {
    fn small_space()(n in 3usize..9)(
        coords in prop::collection::vec((0u32..40, 0u32..40), n),
        weights in prop::collection::vec(0.1f64..2.0, n),
        planar in any::<bool>(),
    ) -> Space {
        let mut seen = std::collections::BTreeSet::new();
        let pts: Vec<(f64, f64)> = coords
            .into_iter()
            .enumerate()
            .map(|(i, (x, y))| {
                let p = if planar { (x, y) } else { (x, 0) };
                // Keep points distinct by nudging duplicates.
                let p = if seen.insert(p) { p } else { (41 + i as u32, p.1) };
                seen.insert(p);
                (p.0 as f64 / 8.0, p.1 as f64 / 8.0)
            })
            .collect();
        cloud(&pts, &weights, planar)
    }
}

fn fixture() -> impl Strategy<Value = FixtureSpec> {
    prop_oneof![
        (3usize..12).prop_map(|n| FixtureSpec::DyadicLine {
            n,
            kappa: 1.0,
            c0: 2.0,
            spacing: None
        }),
        (1u32..4).prop_map(|level| FixtureSpec::CantorLike { level, c0: None }),
        (4usize..10, 0u64..100).prop_map(|(n, seed)| FixtureSpec::ComplexBall {
            n,
            m: 2.0,
            seed,
            dim: 1
        }),
    ]
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

fn with_values(
    space: impl Strategy<Value = Space>,
    count: usize,
) -> impl Strategy<Value = (Space, Vec<Vec<f64>>)> {
    space.prop_flat_map(move |s| {
        let n = s.len();
        (Just(s), prop::collection::vec(values(n), count))
    })
}

fn nested_triples(space: &Space) -> Vec<(Ball, Ball, Ball)> {
    let balls = space.canonical_balls();
    let mut out = Vec::new();
    for b in &balls {
        for r in balls.iter().filter(|r| nested_geometric(space, b, r)) {
            for s in balls.iter().filter(|s| nested_geometric(space, r, s)) {
                out.push((*b, *r, *s));
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn ball_mass_is_monotone_and_dominated(spec in fixture()) {
        let s = make_space(&spec).unwrap();
        for c in 0..s.len() {
            let radii = s.canonical_radii(c);
            for pair in radii.windows(2) {
                prop_assert!(s.mu_ball(c, pair[0]) <= s.mu_ball(c, pair[1]));
            }
            for &r in radii {
                prop_assert!(s.mu_ball(c, r) <= s.lambda(c, r));
            }
            let grid = log_grid(s.min_gap() * 1e-2, s.diameter() * 4.0, 64);
            for pair in grid.windows(2) {
                prop_assert!(s.lambda(c, pair[0]) <= s.lambda(c, pair[1]));
            }
        }
    }

    #[test]
    fn power_law_reverse_doubling_factor(n in 4usize..40, kappa in 0.5f64..2.0) {
        let s = make_space(&FixtureSpec::DyadicLine { n, kappa, c0: 2.0 * n as f64, spacing: None }).unwrap();
        let grid = [1.5, 2.0, 3.0, 6.0];
        let report = s.check_weak_reverse_doubling(0.25, &grid, 10, 0.5, &SamplePlan::default()).unwrap();
        for &(a, c) in &report.table {
            prop_assert!(close(c, a.powf(kappa), 1e-9), "C({a}) = {c}");
        }
    }

    #[test]
    fn coefficient_inequalities(s in small_space()) {
        for (b, r, t) in nested_triples(&s) {
            let k_br = coeff_k(&s, &b, &r).unwrap().value;
            let k_bs = coeff_k(&s, &b, &t).unwrap().value;
            prop_assert!(k_br <= k_bs);
            if b.center == r.center {
                let k_rs = coeff_k(&s, &r, &t).unwrap().value;
                prop_assert!(k_bs <= k_br + k_rs);
                prop_assert!(k_rs <= k_bs);
            }
            for alpha in [0.0, 0.25, 0.5, 0.75] {
                let near = coeff_k_tilde_alpha(&s, &b, &r, alpha).unwrap().value;
                let far = coeff_k_tilde_alpha(&s, &b, &t, alpha).unwrap().value;
                prop_assert!(near <= 2.0 * far);
            }
            let plain = coeff_k_tilde(&s, &b, &t).unwrap().value;
            prop_assert!(close(coeff_k_tilde_alpha(&s, &b, &t, 0.0).unwrap().value, plain, 1e-12));
        }
    }

    #[test]
    fn vitali_selection_is_disjoint(s in small_space(), dilation in 1.0f64..6.0) {
        let balls = s.canonical_balls();
        let kept = vitali_select(&s, &balls, dilation).unwrap();
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(!intersects(&s, a, b));
            }
        }
    }

    #[test]
    fn power_law_kernel_is_symmetric_with_unit_size_constant(n in 3usize..30, alpha in 0.1f64..0.9) {
        let s = make_space(&FixtureSpec::DyadicLine { n, kappa: 1.0, c0: 2.0, spacing: None }).unwrap();
        let k = KernelMatrix::new(&KernelSpec::frac_integral(alpha), &s).unwrap();
        for x in 0..n {
            for y in 0..n {
                prop_assert_eq!(k.get(x, y), k.get(y, x));
            }
        }
        let (c, _) = check_size_condition(&k, &s);
        prop_assert!(close(c, 1.0, 1e-12), "size constant {c}");
    }

    #[test]
    fn operator_linearity((s, v) in with_values(small_space(), 3), c in -4.0f64..4.0) {
        let k = KernelMatrix::new(&KernelSpec::frac_integral(0.5), &s).unwrap();
        let (f, g, b) = (&v[0], &v[1], &v[2]);
        let sum: Vec<f64> = f.iter().zip(g).map(|(a, b)| a + b).collect();
        let scaled: Vec<f64> = f.iter().map(|a| c * a).collect();
        let (tf, tg) = (apply(&k, &s, f).unwrap(), apply(&k, &s, g).unwrap());
        let tol = 1e-12 * (scale(&tf) + scale(&tg) + 1.0) * (1.0 + c.abs());
        let tsum = apply(&k, &s, &sum).unwrap();
        let tscaled = apply(&k, &s, &scaled).unwrap();
        for x in 0..s.len() {
            prop_assert!((tsum[x] - tf[x] - tg[x]).abs() <= tol);
            prop_assert!((tscaled[x] - c * tf[x]).abs() <= tol);
        }
        // Bilinearity of the commutator in the symbol.
        let cb: Vec<f64> = b.iter().map(|v| c * v).collect();
        let lhs = commutator(&cb, &k, &s, f).unwrap();
        let rhs = commutator(b, &k, &s, f).unwrap();
        let tol = 1e-12 * (scale(&rhs) + 1.0) * (1.0 + c.abs()) * 10.0;
        for x in 0..s.len() {
            prop_assert!((lhs[x] - c * rhs[x]).abs() <= tol);
        }
    }

    #[test]
    fn multilinear_expansion((s, v) in with_values(small_space(), 4), k in 1usize..=3) {
        let kernel = KernelMatrix::new(&KernelSpec::frac_integral(0.5), &s).unwrap();
        let f = &v[0];
        let bs: Vec<&[f64]> = v[1..=k].iter().map(|b| &b[..]).collect();
        let direct = multilinear_commutator(&bs, &kernel, &s, f).unwrap();
        for y in 0..s.len() {
            let means: Vec<f64> = bs.iter().map(|b| b[y]).collect();
            let rhs = expansion_rhs(&bs, &kernel, &s, f, &means, ExpansionConvention::Exact).unwrap();
            let tol = 1e-10 * (scale(&rhs) + scale(&direct) + 1.0);
            prop_assert!((direct[y] - rhs[y]).abs() <= tol, "k = {k}, y = {y}");
        }
        let mut constant = bs.clone();
        let flat = vec![1.7; s.len()];
        constant[k - 1] = &flat;
        let zero = multilinear_commutator(&constant, &kernel, &s, f).unwrap();
        prop_assert!(scale(&zero) <= 1e-12 * (scale(&apply(&kernel, &s, f).unwrap()) + 1.0) * 27.0);
    }

    #[test]
    fn maximal_function_relations((s, v) in with_values(small_space(), 2), rho in 1.0f64..6.0, c in -5.0f64..5.0) {
        let (f, g) = (&v[0], &v[1]);
        let nf = maximal_n(&s, f).unwrap();
        for x in 0..s.len() {
            prop_assert!(f[x].abs() <= nf[x]);
        }
        // Pointwise larger input.
        let bigger: Vec<f64> = f.iter().zip(g).map(|(a, b)| a.abs() + b.abs()).collect();
        let (mf, mg) = (maximal_mr_rho(&s, f, 1.0, rho).unwrap(), maximal_mr_rho(&s, &bigger, 1.0, rho).unwrap());
        for x in 0..s.len() {
            prop_assert!(mf[x] <= mg[x]);
        }
        let zero_alpha = maximal_m_alpha(&s, f, 1.0, rho, 0.0).unwrap();
        for x in 0..s.len() {
            prop_assert!(close(zero_alpha[x], mf[x], 1e-12));
        }
        let low = maximal_m_alpha(&s, f, 1.0, rho, 0.3).unwrap();
        let high = maximal_m_alpha(&s, f, 2.5, rho, 0.3).unwrap();
        for x in 0..s.len() {
            prop_assert!(low[x] <= high[x] * (1.0 + 1e-12));
        }
        let shifted: Vec<f64> = f.iter().map(|a| a + c).collect();
        let (a, b) = (sharp_maximal(&s, f, 0.25).unwrap(), sharp_maximal(&s, &shifted, 0.25).unwrap());
        for x in 0..s.len() {
            prop_assert!((a[x] - b[x]).abs() <= 1e-12 * (a[x].abs() + 1.0) * (1.0 + c.abs()));
        }
    }

    #[test]
    fn norm_relations((s, v) in with_values(small_space(), 1), p in 1.0f64..5.0, c in 0.1f64..10.0, shift in -3.0f64..3.0) {
        let f = &v[0];
        let lp = lp_norm(&s, f, p).unwrap();
        let power = OrliczFn::Power { p };
        let lux = luxemburg_norm(&s, f, &power).unwrap();
        prop_assert!(close(lux, lp, 1e-9));
        let scaled: Vec<f64> = f.iter().map(|a| -c * a).collect();
        let lux_scaled = luxemburg_norm(&s, &scaled, &power).unwrap();
        prop_assert!(close(lux_scaled, c * lux, 1e-9));
        prop_assert!(weak_lp(&s, f, p).unwrap() <= lp * (1.0 + 1e-12));
        let constant = vec![shift; s.len()];
        prop_assert_eq!(rbmo_norm(&s, &constant, 2.0).unwrap().value, 0.0);
        prop_assert_eq!(osc_exp_norm(&s, &constant, 1.0).unwrap().value, 0.0);
        let moved: Vec<f64> = f.iter().map(|a| a + shift).collect();
        let (a, b) = (rbmo_norm(&s, f, 2.0).unwrap().value, rbmo_norm(&s, &moved, 2.0).unwrap().value);
        prop_assert!((a - b).abs() <= 1e-12 * (a + 1.0) * (1.0 + shift.abs()));
        let (a, b) = (osc_exp_norm(&s, f, 1.0).unwrap().value, osc_exp_norm(&s, &moved, 1.0).unwrap().value);
        prop_assert!((a - b).abs() <= 1e-10 * (a + 1.0) * (1.0 + shift.abs()));
    }

    #[test]
    fn cz_postconditions((s, v) in with_values(small_space(), 1), p in prop::sample::select(vec![1.0, 2.0]), above in 1.01f64..4.0) {
        let f = &v[0];
        let gamma0 = 2.0;
        let bound = (gamma0 * lp_norm(&s, f, p).unwrap().powf(p) / s.total_mass()).powf(1.0 / p);
        prop_assume!(bound > 0.0);
        let options = CzOptions { gamma0: Some(gamma0), enforce_level_bound: true };
        let cz = cz_decompose(&s, f, p, above * bound, &options).unwrap();
        for x in 0..s.len() {
            prop_assert_eq!(cz.g[x] + cz.h[x], f[x]);
        }
        for (i, a) in cz.balls.iter().enumerate() {
            for b in &cz.balls[i + 1..] {
                prop_assert!(!intersects(&s, a, b));
            }
        }
        let r = &cz.report;
        prop_assert!(cz.balls.is_empty() || r.selection_margin > 0.0);
        prop_assert!(r.integral_error <= 1e-12);
        prop_assert!(r.sup_constant <= 1.0);
        prop_assert!(r.gamma.is_finite());
        let mass = scale(f) * s.total_mass();
        prop_assert!(r.h_mass.abs() <= 1e-12 * (mass + 1.0) * s.len() as f64);
    }

    #[test]
    fn families_are_reproducible(spec in fixture(), seed in any::<u64>()) {
        let a = make_space(&spec).unwrap();
        let b = make_space(&spec).unwrap();
        for x in 0..a.len() {
            prop_assert_eq!(a.weights()[x].to_bits(), b.weights()[x].to_bits());
            for y in 0..a.len() {
                prop_assert_eq!(a.d(x, y).to_bits(), b.d(x, y).to_bits());
            }
        }
        let fam = Family::plain(FamilyKind::SignedRandom);
        let fa = make_function_family(&a, &fam, 3, seed).unwrap();
        let fb = make_function_family(&b, &fam, 3, seed).unwrap();
        prop_assert_eq!(fa, fb);
    }
}
