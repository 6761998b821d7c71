use mnlvql::numerics::{
    self, bisect, cholesky_solve, dot, inverse_metric_norm, metric_norm, norm2, project_to_ball_in_metric,
    NumericsError, SymMatrix,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spd(dim: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
    let mut m = SymMatrix::scaled_identity(dim, 0.1);
    for _ in 0..dim + 2 {
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        m.add_outer(&x, 1.0);
    }
    m
}

fn to_na(m: &SymMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.dim(), m.dim(), m.as_slice())
}

#[test]
fn solve_examples() {
    let x = cholesky_solve(&SymMatrix::identity(2), &[1.0, 2.0]).unwrap();
    assert_eq!(x, vec![1.0, 2.0]);
    let x = cholesky_solve(&SymMatrix::diagonal(&[2.0, 4.0]), &[2.0, 4.0]).unwrap();
    assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
}

#[test]
fn solve_residual_up_to_dim_64() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for dim in [1, 2, 5, 16, 33, 64] {
        let m = random_spd(dim, &mut rng);
        let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = cholesky_solve(&m, &b).unwrap();
        let r: Vec<f64> = m.mul_vec(&x).iter().zip(&b).map(|(a, b)| a - b).collect();
        assert!(norm2(&r) <= 1e-10 * norm2(&b).max(1.0), "dim {dim}");
        // Independent solve.
        let xn = to_na(&m).lu().solve(&DVector::from_vec(b.clone())).unwrap();
        for i in 0..dim {
            assert!((x[i] - xn[i]).abs() <= 1e-8 * (1.0 + xn[i].abs()));
        }
    }
}

#[test]
fn indefinite_matrix_is_rejected() {
    let m = SymMatrix::diagonal(&[1.0, -1.0]);
    assert!(matches!(
        cholesky_solve(&m, &[1.0, 1.0]),
        Err(NumericsError::NotPositiveDefinite { .. })
    ));
    assert!(metric_norm(&m, &[1.0, 0.0]).is_err());
}

#[test]
fn metric_norm_examples() {
    assert_eq!(metric_norm(&SymMatrix::identity(2), &[3.0, 4.0]).unwrap(), 5.0);
    assert_eq!(
        metric_norm(&SymMatrix::diagonal(&[4.0, 1.0]), &[1.0, 0.0]).unwrap(),
        2.0
    );
    assert!((inverse_metric_norm(&SymMatrix::diagonal(&[4.0, 1.0]), &[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn metric_norms_match_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for dim in [2, 3, 6, 9] {
        let m = random_spd(dim, &mut rng);
        let eig = to_na(&m).symmetric_eigen();
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xv = DVector::from_vec(x.clone());
        let coords = eig.eigenvectors.transpose() * &xv;
        let direct: f64 = coords.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| c * c * l).sum();
        let inverse: f64 = coords.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| c * c / l).sum();
        assert!((metric_norm(&m, &x).unwrap() - direct.sqrt()).abs() < 1e-9);
        assert!((inverse_metric_norm(&m, &x).unwrap() - inverse.sqrt()).abs() < 1e-9);
        let w = m.cholesky().unwrap().whitener();
        assert!((w.inverse_norm(&x) - inverse.sqrt()).abs() < 1e-9);
    }
}

#[test]
fn projection_examples() {
    let inside = project_to_ball_in_metric(&[0.1, 0.2], &SymMatrix::diagonal(&[3.0, 1.0]), 1.0).unwrap();
    assert_eq!(inside, vec![0.1, 0.2]);
    let p = project_to_ball_in_metric(&[3.0, 4.0], &SymMatrix::identity(2), 1.0).unwrap();
    assert!((p[0] - 0.6).abs() < 1e-8 && (p[1] - 0.8).abs() < 1e-8);
}

#[test]
fn projection_beats_grid_search_in_2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let m = random_spd(2, &mut rng);
        let c = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
        let radius = rng.gen_range(0.3..1.5);
        if norm2(&c) <= radius {
            continue;
        }
        let p = project_to_ball_in_metric(&c, &m, radius).unwrap();
        let obj = |x: &[f64]| {
            let d = [x[0] - c[0], x[1] - c[1]];
            m.quad_form(&d)
        };
        let best = obj(&p);
        // Boundary circle plus an interior polar grid.
        let mut grid_best = f64::INFINITY;
        for i in 0..2000 {
            let a = std::f64::consts::TAU * i as f64 / 2000.0;
            for r in [radius, 0.9 * radius, 0.5 * radius] {
                grid_best = grid_best.min(obj(&[r * a.cos(), r * a.sin()]));
            }
        }
        assert!(best <= grid_best + 1e-6, "{best} vs {grid_best}");
        assert!(norm2(&p) <= radius + 1e-9);
    }
}

#[test]
fn bisect_examples() {
    assert!((bisect(|t| t - 1.0, 0.0, 2.0, 1e-12).unwrap() - 1.0).abs() < 1e-12);
    assert!((bisect(|t| t * t - 2.0, 0.0, 2.0, 1e-12).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    assert!(matches!(
        bisect(|t| t * t + 1.0, -1.0, 1.0, 1e-9),
        Err(NumericsError::BadBracket { .. })
    ));
}

#[test]
fn tolerances_are_named() {
    assert_eq!(numerics::PROJECTION_TOL, 1e-9);
    assert_eq!(numerics::PROJECTION_MAX_ITER, 200);
}

fn spd_strategy(dim: usize) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), dim + 1).prop_map(move |rows| {
        let mut m = SymMatrix::scaled_identity(dim, 0.05);
        for r in &rows {
            m.add_outer(r, 1.0);
        }
        m
    })
}

proptest! {
    #[test]
    fn projection_stays_in_ball(
        m in spd_strategy(3),
        c in prop::collection::vec(-10.0f64..10.0, 3),
        radius in 0.01f64..3.0,
    ) {
        let p = project_to_ball_in_metric(&c, &m, radius).unwrap();
        prop_assert!(norm2(&p) <= radius + 1e-9);
    }

    #[test]
    fn metric_norm_bilinearity(
        m in spd_strategy(4),
        x in prop::collection::vec(-1.0f64..1.0, 4),
        y in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let s: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let lhs = metric_norm(&m, &x).unwrap().powi(2) + metric_norm(&m, &y).unwrap().powi(2) + 2.0 * m.bilinear(&x, &y);
        prop_assert!((lhs - metric_norm(&m, &s).unwrap().powi(2)).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn solve_recovers_rhs(m in spd_strategy(6), b in prop::collection::vec(-1.0f64..1.0, 6)) {
        let x = cholesky_solve(&m, &b).unwrap();
        let back = m.mul_vec(&x);
        let err: f64 = back.iter().zip(&b).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-9 * norm2(&b).max(1e-12));
        prop_assert!(dot(&x, &back) >= -1e-12);
    }
}
