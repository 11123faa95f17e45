use proptest::prelude::*;
use vilab::analysis::{decay_exponent, fit_line, spectral_split};
use vilab::cli::{csv_string, parse_csv, Row};
use vilab::constraint::{k_norm_raw, Constraint};
use vilab::energy::{eval_energy, eval_gradient, f_gamma, weiss_energy, EnergySpec};
use vilab::epiperimetric::{slice_energy, RingFamily};
use vilab::flow::{step_implicit, FlowOptions};
use vilab::geometry::{build_grid, Field, Grid, GridKind};
use vilab::solver::SolveOptions;

fn circle_field(grid: &Grid, coeffs: &[(f64, f64)]) -> Field {
    grid.sample_angle(|t| {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, (a, b))| a * (k as f64 * t).cos() + b * (k as f64 * t).sin())
            .sum()
    })
}

fn coeffs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_feasible_and_idempotent(c in coeffs()) {
        let g = build_grid(GridKind::Circle, 64).unwrap();
        let u = circle_field(&g, &c);
        for k in [Constraint::cone(&g), Constraint::thin_sphere(&g)] {
            let p = k.project(&u);
            prop_assert!(k.is_feasible(&p));
            prop_assert_eq!(k.project(&p), p.clone());
            // the projection is the closest admissible point among a few competitors
            for s in [0.5, 0.9, 1.1] {
                let q = k.project(&u.scale(s));
                prop_assert!(g.norm(&u.sub(&p)) <= g.norm(&u.sub(&q)) + 1e-12);
            }
        }
    }

    #[test]
    fn k_norm_bounded_by_full_norm(c in coeffs(), d in coeffs()) {
        let g = build_grid(GridKind::Circle, 64).unwrap();
        let k = Constraint::cone(&g);
        let u = k.project(&circle_field(&g, &c));
        let grad = circle_field(&g, &d);
        let n = k.constrained_grad_norm(&g, &u, &grad);
        prop_assert!(n >= 0.0);
        prop_assert!(n <= g.norm(&grad) * (1.0 + 1e-12));
        let unc = Constraint::unconstrained(&g);
        prop_assert!((unc.constrained_grad_norm(&g, &u, &grad) - g.norm(&grad)).abs() <= 1e-12 * (1.0 + g.norm(&grad)));
    }

    #[test]
    fn k_norm_is_positively_homogeneous(
        w in prop::collection::vec(0.1..2.0f64, 1..20),
        s in 0.1..10.0f64,
        seed in any::<u64>(),
    ) {
        let n = w.len();
        let bits = |i: usize, shift: u32| (seed.rotate_left(shift + i as u32) & 1) == 1;
        let sign: Vec<bool> = (0..n).map(|i| bits(i, 0)).collect();
        let pinned: Vec<bool> = (0..n).map(|i| bits(i, 17) && bits(i, 29)).collect();
        let u: Vec<f64> = (0..n).map(|i| if bits(i, 41) { 0.0 } else { 0.5 }).collect();
        let grad: Vec<f64> = (0..n).map(|i| ((seed >> (i % 60)) as f64 % 7.0) - 3.0).collect();
        let a = k_norm_raw(&w, &sign, &pinned, &u, &grad);
        let sg: Vec<f64> = grad.iter().map(|x| s * x).collect();
        let b = k_norm_raw(&w, &sign, &pinned, &u, &sg);
        prop_assert!((b - s * a).abs() <= 1e-12 * (1.0 + s * a));
    }

    #[test]
    fn spectral_split_is_orthogonal_and_exhaustive(c in coeffs(), n in 1usize..6) {
        let g = build_grid(GridKind::Circle, 64).unwrap();
        let u = circle_field(&g, &c);
        let s = spectral_split(&g, &u, (n * n) as f64).unwrap();
        let sum = s.v_minus.add(&s.v_zero).add(&s.v_plus);
        prop_assert!(g.norm(&sum.sub(&u)) <= 1e-12 * (1.0 + g.norm(&u)));
        let parts = g.inner(&s.v_minus, &s.v_minus) + g.inner(&s.v_zero, &s.v_zero) + g.inner(&s.v_plus, &s.v_plus);
        prop_assert!((parts - g.inner(&u, &u)).abs() <= 1e-12 * (1.0 + parts));
        prop_assert!(g.inner(&s.v_minus, &s.v_plus).abs() <= 1e-12 * (1.0 + parts));
        prop_assert_eq!(s.gap, (2 * n + 1) as f64);
    }

    #[test]
    fn proximal_step_decreases_energy(c in coeffs(), dt in 0.001..0.2f64) {
        let g = build_grid(GridKind::Circle, 64).unwrap();
        let spec = EnergySpec::sphere_thin(1);
        let k = Constraint::thin_sphere(&g);
        let u = k.project(&circle_field(&g, &c));
        let opts = FlowOptions::new(dt, dt).solve;
        let v = step_implicit(&spec, &k, &g, &u, dt, &opts).unwrap().state;
        prop_assert!(k.is_feasible(&v));
        let (fu, fv) = (eval_energy(&spec, &g, &u).unwrap(), eval_energy(&spec, &g, &v).unwrap());
        let moved = g.inner(&v.sub(&u), &v.sub(&u)) / (2.0 * dt);
        prop_assert!(fv + moved <= fu + 1e-10 * (1.0 + fu.abs()));
    }

    #[test]
    fn obstacle_steps_are_non_expansive(a in 0.0..0.2f64, b in 0.0..0.2f64, r in 0.2..0.9f64) {
        let g = build_grid(GridKind::Interval, 64).unwrap();
        let k = Constraint::obstacle(&g, &g.constant(0.125));
        let u = k.project(&g.sample(|[x, _]| 0.125 + a * (1.0 - x * x)));
        let v = k.project(&g.sample(|[x, _]| 0.125 * x * x + b * (1.0 - (x / r).powi(2)).max(0.0)));
        let opts = SolveOptions { tol: 1e-12, ..SolveOptions::default() };
        let su = step_implicit(&EnergySpec::Obstacle, &k, &g, &u, 0.05, &opts).unwrap().state;
        let sv = step_implicit(&EnergySpec::Obstacle, &k, &g, &v, 0.05, &opts).unwrap().state;
        prop_assert!(g.norm(&su.sub(&sv)) <= g.norm(&u.sub(&v)) + 1e-10);
    }

    #[test]
    fn gradient_matches_energy_derivative(c in coeffs(), d in coeffs()) {
        let g = build_grid(GridKind::Circle, 32).unwrap();
        let spec = EnergySpec::SphereObstacle { lambda: 4.0 };
        let u = circle_field(&g, &c);
        let v = circle_field(&g, &d);
        let h = 1e-5;
        let fd = (eval_energy(&spec, &g, &u.axpy(h, &v)).unwrap() - eval_energy(&spec, &g, &u.axpy(-h, &v)).unwrap()) / (2.0 * h);
        let an = g.inner(&eval_gradient(&spec, &g, &u).unwrap(), &v);
        prop_assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()));
    }

    #[test]
    fn homogeneous_families_have_no_radial_term(c in coeffs(), k in 0.0..3.0f64) {
        let disk = build_grid(GridKind::Disk, 32).unwrap();
        let circle = build_grid(GridKind::Circle, 32).unwrap();
        let fam = RingFamily::constant(&disk, &circle_field(&circle, &c)).unwrap();
        let s = slice_energy(k, &disk, &fam).unwrap();
        prop_assert!(s.radial.abs() <= 1e-12);
        let w = weiss_energy(k, &disk, &fam.assemble(&disk, k).unwrap()).unwrap();
        prop_assert!(w.is_finite());
    }

    #[test]
    fn f_gamma_is_continuous_and_monotone(gamma in 0.01..0.5f64, t in 0.0..4.0f64) {
        let a = f_gamma(gamma, t).unwrap();
        let b = f_gamma(gamma, t + 1e-3).unwrap();
        prop_assert!(b >= a);
        let below = f_gamma(gamma, 1.0 - 1e-12).unwrap();
        prop_assert!((below - 1.0).abs() < 1e-9);
    }

    #[test]
    fn line_fit_recovers_exact_lines(a in -5.0..5.0f64, s in -3.0..3.0f64) {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = x.iter().map(|x| a + s * x).collect();
        let f = fit_line(&x, &y).unwrap();
        prop_assert!((f.slope - s).abs() < 1e-10);
        prop_assert!((f.intercept - a).abs() < 1e-10);
    }

    #[test]
    fn decay_exponent_inverts(s in 0.01..50.0f64) {
        // γ/(1 − 2γ) = s  ⇔  γ = s/(1 + 2s)
        let gamma = s / (1.0 + 2.0 * s);
        prop_assert!((decay_exponent(gamma) - s).abs() <= 1e-12 * s);
    }

    #[test]
    fn csv_round_trip_is_bit_exact(v in prop::collection::vec(any::<f64>(), 6)) {
        let row = Row { t: v[0], energy: v[1], l2_dist: v[2], h1_dist: v[3], step_norm: v[4], k_norm: v[5] };
        let back = parse_csv(&csv_string(&[row])).unwrap();
        let got = [back[0].t, back[0].energy, back[0].l2_dist, back[0].h1_dist, back[0].step_norm, back[0].k_norm];
        for (x, y) in v.iter().zip(got) {
            prop_assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
        }
    }
}
