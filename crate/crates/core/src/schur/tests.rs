use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::symbol::Deps;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn grid() -> GridSpec {
    GridSpec::new(1.0, 4, 2.0 * PI, 16, 2.0).unwrap()
}

fn sym<F: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static>(order: f64, f: F) -> ScalarSymbol {
    ScalarSymbol::new(order, move |t, x, xi| c(f(t, x, xi)))
}

fn max_over_shell<F: Fn(f64, f64, f64) -> f64 + Sync>(g: &GridSpec, f: F) -> f64 {
    g.shell_nodes()
        .into_iter()
        .map(|n| {
            let (t, x, xi) = g.point(n);
            f(t, x, xi)
        })
        .fold(0.0, f64::max)
}

/// Roots of `z^2 - tr z + det` by the quadratic formula.
fn eig2(m: &DMatrix<C64>) -> [C64; 2] {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = (tr * tr - det * 4.0).sqrt();
    [(tr + disc) / 2.0, (tr - disc) / 2.0]
}

#[test]
fn jordan_block_needs_no_transform() {
    let g = grid();
    let a = MatrixSymbol::constant(&DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)]));
    let h = VectorSymbol::constant(&[c(1.0), c(0.0)]);
    let step = schur_step(&a, &ScalarSymbol::zero(), &h, &g, &SchurConfig::default()).unwrap();
    assert_eq!(step.pivot, 0);
    let id = DMatrix::<C64>::identity(2, 2);
    for n in g.shell_nodes() {
        let (t, x, xi) = g.point(n);
        assert_eq!(step.t.eval(t, x, xi), id);
        assert_eq!(step.e.eval(t, x, xi)[(0, 0)], c(0.0));
    }
    let eig = EigenData::new(vec![ScalarSymbol::zero(), ScalarSymbol::zero()], vec![h]).unwrap();
    let res = full_triangularise(&a, &eig, &g, &SchurConfig::default()).unwrap();
    let rep = verify_triangular(&a, &res, &g);
    assert!(rep.residual_total < 1e-14 && rep.residual_inverse < 1e-14);
}

#[test]
fn rank_one_example_has_eigenvector_one_minus_one() {
    // The kernel of [[a, a], [-a, -a]] is spanned by (1, -1), not (1, 1).
    let g = grid();
    let a_fn = |t: f64, x: f64, xi: f64| xi * (1.5 + x.sin()) * (1.0 + 0.1 * t);
    let a = sym(1.0, a_fn);
    let am = MatrixSymbol::from_rows(vec![vec![a.clone(), a.clone()], vec![-&a, -&a]]).unwrap();
    // oracle: 2x2 nullspace from the first row
    for n in g.shell_nodes() {
        let (t, x, xi) = g.point(n);
        let v = a_fn(t, x, xi);
        let kernel = [v, -v];
        assert!((kernel[0] + kernel[1]).abs() < 1e-12);
    }
    let h = VectorSymbol::constant(&[c(1.0), c(-1.0)]);
    let step = schur_step(&am, &ScalarSymbol::zero(), &h, &g, &SchurConfig::default()).unwrap();
    let err = max_over_shell(&g, |t, x, xi| {
        let mu = step.mu.eval(t, x, xi);
        let conj = step.conjugated.eval(t, x, xi);
        let tm = step.t.eval(t, x, xi);
        let want_t = DMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(-1.0), c(1.0)]);
        let want = DMatrix::from_row_slice(2, 2, &[c(0.0), c(a_fn(t, x, xi)), c(0.0), c(0.0)]);
        (mu[1] + 1.0).norm()
            + max_modulus((tm - want_t).iter())
            + max_modulus((conj - want).iter())
    });
    assert!(err < 1e-12, "err {err}");

    let bad = VectorSymbol::constant(&[c(1.0), c(1.0)]);
    assert!(matches!(
        schur_step(&am, &ScalarSymbol::zero(), &bad, &g, &SchurConfig::default()),
        Err(Error::BadEigenpair { step: 1, .. })
    ));
}

fn random_diagonalisable(rng: &mut ChaCha8Rng, m: usize) -> (DMatrix<C64>, Vec<C64>, DMatrix<C64>) {
    loop {
        let v = DMatrix::from_fn(m, m, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let d: Vec<C64> = (0..m)
            .map(|_| C64::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)))
            .collect();
        let sep_ok = (0..m).all(|i| (0..i).all(|j| (d[i] - d[j]).norm() >= 0.1));
        if let (Some(vi), true) = (v.clone().try_inverse(), sep_ok) {
            if v.norm() * vi.norm() < 1e3 {
                let a = &v * DMatrix::from_diagonal(&DVector::from_vec(d.clone())) * vi;
                return (a, d, v);
            }
        }
    }
}

#[test]
fn schur_step_preserves_remaining_spectrum() {
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let (a, d, v) = random_diagonalisable(&mut rng, 3);
        let am = MatrixSymbol::constant(&a);
        let h = VectorSymbol::constant(v.column(0).as_slice());
        let step = schur_step(&am, &ScalarSymbol::constant(d[0]), &h, &g, &SchurConfig::default())
            .unwrap();
        let (t, x, xi) = g.point(g.shell_nodes()[0]);
        let e = step.e.eval(t, x, xi);
        let got = eig2(&e);
        let direct = (got[0] - d[1]).norm().max((got[1] - d[2]).norm());
        let swapped = (got[0] - d[2]).norm().max((got[1] - d[1]).norm());
        assert!(direct.min(swapped) < 1e-9, "spectrum mismatch {got:?} vs {d:?}");
        let conj = step.conjugated.eval(t, x, xi);
        assert!((conj[(0, 0)] - d[0]).norm() < 1e-9);
        assert!(conj[(1, 0)].norm() < 1e-9 && conj[(2, 0)].norm() < 1e-9);
    }
}

#[test]
fn reduced_eigenvector_examples() {
    let g = grid();
    let h1 = VectorSymbol::constant(&[c(1.0), c(0.0), c(1.0)]);
    let h2 = VectorSymbol::constant(&[c(1.0), c(1.0), c(0.0)]);
    assert_eq!(reduced_eigenvector(&h1, &[]).unwrap().eval(0.0, 0.0, 3.0), h1.eval(0.0, 0.0, 3.0));

    let a = MatrixSymbol::diagonal(&[ScalarSymbol::real(1.0), ScalarSymbol::real(2.0), ScalarSymbol::real(3.0)]);
    // only the eigenvector enters T_1; A is irrelevant for the transform itself
    let lam = ScalarSymbol::real(1.0);
    let ident_h = VectorSymbol::constant(&[c(1.0), c(0.0), c(0.0)]);
    let _ = schur_step(&a, &lam, &ident_h, &g, &SchurConfig::default()).unwrap();

    let t1_inv = MatrixSymbol::constant(&DMatrix::from_row_slice(
        3,
        3,
        &[c(1.0), c(0.0), c(0.0), c(0.0), c(1.0), c(0.0), c(-1.0), c(0.0), c(1.0)],
    ));
    let red = reduced_eigenvector(&h2, &[t1_inv]).unwrap();
    assert_eq!(red.dim(), 2);
    let v = red.eval(0.3, 1.0, 4.0);
    assert_eq!((v[0], v[1]), (c(1.0), c(-1.0)));
}

#[test]
fn reduced_eigenvector_matches_closed_form_with_symbols() {
    let g = grid();
    let h1 = VectorSymbol::from_entries(vec![
        sym(0.0, |_, x, _| 2.0 + x.cos()),
        sym(0.0, |t, _, xi| t + (xi / (1.0 + xi.abs())).sin()),
        sym(0.0, |_, x, _| 0.5 * x.sin()),
    ]);
    let h2 = VectorSymbol::from_entries(vec![
        sym(0.0, |t, _, _| 1.0 + t),
        sym(0.0, |_, x, _| x.cos()),
        sym(0.0, |_, _, xi| 1.0 / (1.0 + xi * xi)),
    ]);
    let (pivot, _) = check_condition(&h1, &g, 1e-6).unwrap();
    assert_eq!(pivot, 0);
    let h1c = h1.clone();
    let mu_inv = MatrixSymbol::from_fn(3, vec![0.0; 9], Deps::ALL, move |t, x, xi| {
        let v = h1c.eval(t, x, xi);
        let mut m = DMatrix::identity(3, 3);
        m[(1, 0)] = -v[1] / v[0];
        m[(2, 0)] = -v[2] / v[0];
        m
    });
    let red = reduced_eigenvector(&h2, &[mu_inv]).unwrap();
    let err = max_over_shell(&g, |t, x, xi| {
        let a = h1.eval(t, x, xi);
        let b = h2.eval(t, x, xi);
        let w1 = a[1] / a[0];
        let w2 = a[2] / a[0];
        let r = red.eval(t, x, xi);
        (r[0] - (-w1 * b[0] + b[1])).norm().max((r[1] - (-w2 * b[0] + b[2])).norm())
    });
    assert!(err < 1e-12);
    assert!(matches!(
        reduced_eigenvector(&VectorSymbol::constant(&[c(1.0), c(0.0)]), &[MatrixSymbol::identity(3)]),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn condition_check_examples() {
    let g = grid();
    let e1 = VectorSymbol::constant(&[c(1.0), c(0.0)]);
    assert_eq!(check_condition(&e1, &g, 1e-6).unwrap().0, 0);
    let e2 = VectorSymbol::constant(&[c(0.0), c(1.0)]);
    assert_eq!(check_condition(&e2, &g, 1e-6).unwrap().0, 1);
    let trig = VectorSymbol::from_entries(vec![sym(0.0, |_, x, _| x.sin()), sym(0.0, |_, x, _| x.cos())]);
    match check_condition(&trig, &g, 1e-6) {
        Err(Error::ConditionFailure { min_modulus, witness, .. }) => {
            assert!(min_modulus < 1e-12);
            assert!(witness.x.sin().abs() < 1e-12 || witness.x.cos().abs() < 1e-12);
        }
        other => panic!("expected ConditionFailure, got {other:?}"),
    }
}

#[test]
fn permutation_path_triangularises() {
    // eigenvalue 0 with eigenvector e_2 forces the swap 1 <-> 2
    let g = grid();
    let a = MatrixSymbol::from_rows(vec![
        vec![ScalarSymbol::xi(), ScalarSymbol::zero()],
        vec![ScalarSymbol::one(), ScalarSymbol::zero()],
    ])
    .unwrap();
    let eig = EigenData::new(
        vec![ScalarSymbol::zero(), ScalarSymbol::xi()],
        vec![VectorSymbol::constant(&[c(0.0), c(1.0)])],
    )
    .unwrap();
    let res = full_triangularise(&a, &eig, &g, &SchurConfig::default()).unwrap();
    assert_eq!(res.permutations, vec![(0, 1)]);
    assert_eq!(res.condition_report[0].pivot, 1);
    let rep = verify_triangular(&a, &res, &g);
    assert!(rep.passes(1e-12), "{rep:?}");
    assert!(rep.diag_deviation_max < 1e-12);
}

#[test]
fn two_by_two_matches_closed_form() {
    // T = [[1, 0], [h2/h1, 1]] and T^{-1} A T = [[l1, a12], [0, l2]]
    let g = grid();
    let (al, be, ga, de): (f64, f64, f64, f64) = (1.0, -0.5, 0.7, 0.4);
    let disc = ((al - be) * (al - be) + 4.0 * ga * de).sqrt();
    let l1 = 0.5 * (al + be + disc);
    let l2 = 0.5 * (al + be - disc);
    let xi = ScalarSymbol::xi();
    let a = MatrixSymbol::from_rows(vec![
        vec![xi.scale(c(al)), xi.scale(c(ga))],
        vec![xi.scale(c(de)), xi.scale(c(be))],
    ])
    .unwrap();
    let h = VectorSymbol::from_entries(vec![xi.scale(c(ga)), xi.scale(c(l1 - al))]);
    let eig = EigenData::new(vec![xi.scale(c(l1)), xi.scale(c(l2))], vec![h]).unwrap();
    let res = full_triangularise(&a, &eig, &g, &SchurConfig::default()).unwrap();
    let err = max_over_shell(&g, |t, x, xi| {
        let tm = res.t.eval(t, x, xi);
        let nm = res.n.eval(t, x, xi);
        let mu = (l1 - al) / ga;
        let scale = 1.0f64.max(xi.abs());
        ((tm[(1, 0)] - mu).norm() + (tm[(0, 1)]).norm() + (nm[(0, 1)] - ga * xi).norm()) / scale
    });
    assert!(err < 1e-12, "err {err}");
    let rep = verify_triangular(&a, &res, &g);
    assert!(rep.passes(1e-9) && rep.order_t_max <= 0.1 && rep.order_n_max <= 1.1, "{rep:?}");
}

fn example_3x3() -> (MatrixSymbol, EigenData, ScalarSymbol) {
    let a11 = sym(1.0, |_, x, xi| xi * (3.0 + x.sin()));
    let a21 = sym(1.0, |t, _, xi| 0.5 * xi * t.cos());
    let a31 = sym(1.0, |_, _, xi| 0.3 * xi);
    let l1 = ScalarSymbol::xi();
    let l2 = sym(1.0, |_, x, xi| -xi * (1.0 + 0.2 * x.cos()));
    let a = MatrixSymbol::from_rows(vec![
        vec![a11.clone(), &l2 - &a11, &l1 - &a11],
        vec![a21.clone(), &l2 - &a21, -&a21],
        vec![a31.clone(), -&a31, &l1 - &a31],
    ])
    .unwrap();
    let l3 = &(&a11 - &a21) - &a31;
    let eig = EigenData::new(
        vec![l1, l2, l3.clone()],
        vec![
            VectorSymbol::constant(&[c(1.0), c(0.0), c(1.0)]),
            VectorSymbol::constant(&[c(1.0), c(1.0), c(0.0)]),
        ],
    )
    .unwrap();
    (a, eig, l3)
}

#[test]
fn three_by_three_example_triangularises() {
    let g = grid();
    let (a, eig, _) = example_3x3();
    let res = full_triangularise(&a, &eig, &g, &SchurConfig::default()).unwrap();
    assert_eq!(res.condition_report.iter().map(|s| s.pivot).collect::<Vec<_>>(), vec![0, 0]);
    let rep = verify_triangular(&a, &res, &g);
    assert!(rep.passes(1e-9), "{rep:?}");
    assert!(rep.diag_deviation_max < 1e-9);
    // recorded bookkeeping reproduces the same residuals
    let mut t = MatrixSymbol::identity(3);
    for (k, core) in res.core_factors.iter().enumerate() {
        let (i, j) = res.permutations[k];
        let mut perm: Vec<usize> = (0..3).collect();
        perm.swap(i, j);
        let p = MatrixSymbol::constant(&permutation_matrix(&perm));
        t = t.mul(&p).unwrap().mul(core).unwrap();
    }
    let (tt, x, xi) = g.point(g.shell_nodes()[5]);
    assert!(max_modulus((t.eval(tt, x, xi) - res.t.eval(tt, x, xi)).iter()) < 1e-14);
}

#[test]
fn constant_matrices_from_dense_solver_triangularise() {
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let (a, d, v) = random_diagonalisable(&mut rng, 3);
        let am = MatrixSymbol::constant(&a);
        let eig = EigenData::new(
            d.iter().map(|&z| ScalarSymbol::constant(z)).collect(),
            (0..2).map(|k| VectorSymbol::constant(v.column(k).as_slice())).collect(),
        )
        .unwrap();
        let res = full_triangularise(&am, &eig, &g, &SchurConfig::default()).unwrap();
        let rep = verify_triangular(&am, &res, &g);
        assert!(rep.residual_below_diag < 1e-10 && rep.diag_deviation_max < 1e-9, "{rep:?}");
    }
}

#[test]
fn identity_transform_reports_subdiagonal() {
    let g = grid();
    let a21 = sym(1.0, |_, x, xi| xi * (1.0 + 0.5 * x.cos()));
    let a = MatrixSymbol::from_rows(vec![
        vec![ScalarSymbol::one(), ScalarSymbol::one()],
        vec![a21.clone(), ScalarSymbol::one()],
    ])
    .unwrap();
    let res = TriangularResult {
        t: MatrixSymbol::identity(2),
        t_inv: MatrixSymbol::identity(2),
        lambda: vec![ScalarSymbol::one(), ScalarSymbol::one()],
        n: MatrixSymbol::from_rows(vec![
            vec![ScalarSymbol::zero(), ScalarSymbol::one()],
            vec![ScalarSymbol::zero(), ScalarSymbol::zero()],
        ])
        .unwrap(),
        permutations: vec![],
        condition_report: vec![],
        core_factors: vec![],
        conjugated: a.clone(),
    };
    let rep = verify_triangular(&a, &res, &g);
    let want = max_over_shell(&g, |t, x, xi| a21.eval(t, x, xi).norm());
    assert_eq!(rep.residual_below_diag, want);
    let json = serde_json::to_value(&rep).unwrap();
    let keys: Vec<&str> = json.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    for k in [
        "residual_total",
        "residual_below_diag",
        "residual_inverse",
        "diag_deviation_max",
        "order_T_max",
        "order_N_max",
    ] {
        assert!(keys.contains(&k));
    }
}

#[test]
fn scalar_case_is_trivial() {
    let g = grid();
    let a = MatrixSymbol::diagonal(&[ScalarSymbol::xi()]);
    let eig = EigenData::new(vec![ScalarSymbol::xi()], vec![]).unwrap();
    let res = full_triangularise(&a, &eig, &g, &SchurConfig::default()).unwrap();
    assert!(res.permutations.is_empty());
    assert_eq!(res.t.eval(0.0, 0.0, 5.0), DMatrix::identity(1, 1));
}

#[test]
fn numeric_eigendata_diagonal() {
    let g = grid();
    let xi = ScalarSymbol::xi();
    let a = MatrixSymbol::diagonal(&[xi.clone(), xi.scale(c(2.0)), xi.scale(c(3.0))]);
    let fit = numeric_eigendata(&a, &g, &ContinuationConfig::default()).unwrap();
    assert!(fit.warnings.is_empty());
    let err = max_over_shell(&g, |t, x, xi| {
        let l: Vec<C64> = fit.data.eigenvalues.iter().map(|s| s.eval(t, x, xi)).collect();
        // the first node has xi < 0, so branches are ordered 3xi, 2xi, xi
        let mut e = (l[0] - 3.0 * xi).norm() + (l[1] - 2.0 * xi).norm() + (l[2] - xi).norm();
        for (b, unit) in [(0usize, 2usize), (1, 1)] {
            let v = fit.data.eigenvectors[b].eval(t, x, xi);
            for k in 0..3 {
                e += (v[k] - if k == unit { 1.0 } else { 0.0 }).norm();
            }
        }
        e
    });
    assert!(err < 1e-12, "err {err}");
}

#[test]
fn numeric_eigendata_crossing() {
    let xi = ScalarSymbol::xi();
    let a = MatrixSymbol::from_rows(vec![
        vec![ScalarSymbol::zero(), xi.clone()],
        vec![xi.clone(), ScalarSymbol::zero()],
    ])
    .unwrap();
    let shell = GridSpec::new(1.0, 3, 2.0 * PI, 16, 1.0).unwrap();
    let fit = numeric_eigendata(&a, &shell, &ContinuationConfig::default()).unwrap();
    assert!(fit.warnings.is_empty());
    let full = GridSpec::new(1.0, 3, 2.0 * PI, 16, 0.0).unwrap();
    let fit = numeric_eigendata(&a, &full, &ContinuationConfig::default()).unwrap();
    assert!(!fit.warnings.is_empty());
    assert!(fit.warnings.iter().all(|w| w.xi == 0.0));
}

#[test]
fn numeric_eigendata_recovers_example_eigenvectors() {
    let g = grid();
    let (a, eig, _) = example_3x3();
    let fit = numeric_eigendata(&a, &g, &ContinuationConfig::default()).unwrap();
    // residual check directly, plus proportionality to the known eigenvectors
    let branch_of = |target: &ScalarSymbol| {
        let (t, x, xi) = g.point(g.shell_nodes()[0]);
        (0..3)
            .min_by(|&p, &q| {
                let d = |b: usize| (fit.data.eigenvalues[b].eval(t, x, xi) - target.eval(t, x, xi)).norm();
                d(p).total_cmp(&d(q))
            })
            .unwrap()
    };
    let branches = [branch_of(&eig.eigenvalues[0]), branch_of(&eig.eigenvalues[1])];
    let err = max_over_shell(&g, |t, x, xi| {
        let am = a.eval(t, x, xi);
        let mut e = 0.0f64;
        for b in 0..3 {
            let v = fit.branch_vectors[b].eval(t, x, xi);
            let lam = fit.data.eigenvalues[b].eval(t, x, xi);
            e = e.max(max_modulus((&am * &v - &v * lam).iter()) / xi.abs());
        }
        for (k, &b) in branches.iter().enumerate() {
            let v = fit.branch_vectors[b].eval(t, x, xi);
            let w = eig.eigenvectors[k].eval(t, x, xi);
            let r = v[0] / w[0];
            e = e.max(max_modulus((&v - &w * r).iter()));
            e = e.max((fit.data.eigenvalues[b].eval(t, x, xi) - eig.eigenvalues[k].eval(t, x, xi)).norm() / xi.abs());
        }
        e
    });
    assert!(err < 1e-8, "err {err}");
}

#[test]
fn numeric_eigendata_feeds_triangularisation() {
    let g = grid();
    let (a, _, _) = example_3x3();
    let fit = numeric_eigendata(&a, &g, &ContinuationConfig::default()).unwrap();
    let res = full_triangularise(&a, &fit.data, &g, &SchurConfig::default()).unwrap();
    let rep = verify_triangular(&a, &res, &g);
    assert!(rep.residual_below_diag < 1e-9, "{rep:?}");
}
