use super::*;
use nalgebra::{dmatrix, dvector};
use proptest::prelude::*;

fn tol() -> TolerancePolicy<f64> {
    TolerancePolicy::default()
}

#[test]
fn rank_of_trivial_cases() {
    assert_eq!(rank_of(&DMatrix::<f64>::identity(3, 3), &tol()), 3);
    assert_eq!(rank_of(&DMatrix::<f64>::zeros(2, 4), &tol()), 0);
    assert_eq!(rank_of(&dmatrix![1.0, 1.0; 1.0, 1.0], &tol()), 1);
}

#[test]
fn raising_rank_tolerance_never_increases_rank() {
    let m = dmatrix![1.0, 0.0, 0.0; 0.0, 1e-13, 0.0; 0.0, 0.0, 1e-3];
    let mut t = tol();
    let mut last = rank_of(&m, &t);
    for factor in [1e2, 1e4, 1e8, 1e12, 1e14] {
        t.relative_rank_tol = factor;
        let r = rank_of(&m, &t);
        assert!(r <= last);
        last = r;
    }
    assert_eq!(last, 1);
}

#[test]
fn nullspace_of_invertible_is_empty() {
    assert_eq!(nullspace(&dmatrix![1.0, 0.0; 0.0, 1.0], &tol()).dim(), 0);
}

#[test]
fn nullspace_of_single_equation() {
    let k = nullspace(&dmatrix![1.0, 1.0], &tol());
    assert_eq!(k.dim(), 1);
    let v = k.columns.column(0);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    assert!((v[0].abs() - s).abs() < 1e-15);
    assert!((v[0] + v[1]).abs() < 1e-15);
}

#[test]
fn min_norm_solve_identity() {
    let x = min_norm_solve(&DMatrix::<f64>::identity(2, 2), &dvector![3.0, 4.0], &tol()).unwrap();
    assert_eq!(x, dvector![3.0, 4.0]);
}

#[test]
fn min_norm_solve_rejects_inconsistent_system() {
    let m = dmatrix![1.0, 1.0; 1.0, 1.0];
    let err = min_norm_solve(&m, &dvector![1.0, 2.0], &tol()).unwrap_err();
    assert!(matches!(err, Error::Unsolvable { .. }));
}

#[test]
fn min_norm_solve_complex() {
    let i = Complex::new(0.0, 1.0);
    let one = Complex::new(1.0, 0.0);
    let m = DMatrix::from_row_slice(1, 2, &[one, i]);
    let b = DVector::from_element(1, one);
    let x = min_norm_solve(&m, &b, &tol()).unwrap();
    // pinv of [1 i] is [1; -i]/2
    assert!((x[0] - one * 0.5).norm() < 1e-15);
    assert!((x[1] + i * 0.5).norm() < 1e-15);
}

#[test]
fn subspace_sum_dim_axes() {
    let e = |k: usize| {
        let mut m = DMatrix::zeros(3, 1);
        m[(k, 0)] = 1.0;
        Basis::span_of(&m, &tol())
    };
    let (e1, e2, e3) = (e(0), e(1), e(2));
    assert_eq!(subspace_sum_dim(&[&e1, &e1], &tol()).unwrap(), 1);
    assert_eq!(subspace_sum_dim(&[&e1, &e2, &e3], &tol()).unwrap(), 3);
    let bad = Basis::span_of(&DMatrix::identity(2, 2), &tol());
    assert!(matches!(subspace_sum_dim(&[&e1, &bad], &tol()), Err(Error::DimensionMismatch(_))));
}

#[test]
fn realify_pair_parts() {
    let v = dvector![Complex::new(1.0, 2.0), Complex::new(3.0, 0.0)];
    assert_eq!(realify_pair(&v, PairPosition::Odd), dvector![1.0, 3.0]);
    assert_eq!(realify_pair(&v, PairPosition::Even), dvector![2.0, 0.0]);
    let real = dvector![Complex::new(4.0, 0.0), Complex::new(-1.0, 0.0)];
    assert_eq!(realify_pair(&real, PairPosition::Odd), dvector![4.0, -1.0]);
}

#[test]
fn realified_conjugate_pair_spans_re_and_im() {
    let v = dvector![Complex::new(1.0, 2.0), Complex::new(0.5, -1.0), Complex::new(0.0, 3.0)];
    let vbar = v.map(|z| z.conj());
    let re = realify_pair(&v, PairPosition::Odd);
    // the even slot holds the conjugate; its imaginary part is -Im v
    let im = realify_pair(&vbar, PairPosition::Even);
    let pair = DMatrix::from_columns(&[re, im]);
    let expected = DMatrix::from_columns(&[v.map(|z| z.re), v.map(|z| z.im)]);
    assert!(span_equal(&pair, &expected, 1e-12));
}

#[test]
fn intersection_of_planes() {
    let a = dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0];
    let b = dmatrix![0.0, 0.0; 1.0, 0.0; 0.0, 1.0];
    let i: DMatrix<f64> = intersection(&a, &b, 1e-10);
    assert_eq!(i.ncols(), 1);
    assert!((i[(1, 0)].abs() - 1.0).abs() < 1e-12);
}

#[test]
fn spectra_matching_with_multiplicity() {
    let c = |r: f64| Complex::new(r, 0.0);
    let expected = [c(-1.0), c(-1.0), c(-6.0)];
    assert!(match_spectra(&expected, &[c(-6.0), c(-1.0 + 1e-9), c(-1.0)], 1e-6).is_some());
    assert!(match_spectra(&expected, &[c(-6.0), c(-6.0), c(-1.0)], 1e-6).is_none());
}

fn matrix_strategy(max_r: usize, max_c: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_r, 1..=max_c, 0..=3usize).prop_flat_map(|(r, c, deficiency)| {
        proptest::collection::vec(-1.0f64..1.0, r * c + 2 * r.max(c) * r.max(c)).prop_map(move |data| {
            let m = DMatrix::from_column_slice(r, c, &data[..r * c]);
            // optionally make the matrix rank deficient by duplicating columns
            let mut m = m;
            for k in 0..deficiency.min(c.saturating_sub(1)) {
                let src = m.column(0).into_owned() * (k as f64 + 2.0);
                m.set_column(c - 1 - k, &src);
            }
            m
        })
    })
}

proptest! {
    #[test]
    fn rank_nullity(m in matrix_strategy(6, 6)) {
        let t = tol();
        let r = rank_of(&m, &t);
        let k = nullspace(&m, &t);
        prop_assert_eq!(r + k.dim(), m.ncols());
        // kernel columns orthonormal and annihilated
        let gram = k.columns.transpose() * &k.columns;
        prop_assert!((gram - DMatrix::identity(k.dim(), k.dim())).abs().max() < 1e-12);
        let res = (&m * &k.columns).abs().max();
        prop_assert!(res <= 1e-12 * (1.0 + spectral_norm(&m)));
    }

    #[test]
    fn min_norm_solution_is_orthogonal_to_kernel(m in matrix_strategy(5, 7), seed in 0u64..1000) {
        let t = tol();
        let mut mixer = Mixer::new(seed);
        let x_true = mixer.vector::<f64>(m.ncols());
        let b = &m * &x_true;
        let x = min_norm_solve(&m, &b, &t).unwrap();
        let k = nullspace(&m, &t);
        let along_kernel = (k.columns.transpose() * &x).abs().max();
        prop_assert!(along_kernel <= 1e-9 * (1.0 + x.norm()));
        prop_assert!(x.norm() <= x_true.norm() + 1e-9);
    }

    #[test]
    fn sum_dim_permutation_and_recombination_invariant(seed in 0u64..500) {
        let t = tol();
        let mut mixer = Mixer::new(seed);
        let n = 6;
        let a = DMatrix::from_fn(n, 2, |_, _| mixer.coefficient::<f64>());
        let b = DMatrix::from_fn(n, 3, |_, _| mixer.coefficient::<f64>());
        let c = &a * DMatrix::from_fn(2, 1, |_, _| mixer.coefficient::<f64>());
        let ba = Basis::span_of(&a, &t);
        let bb = Basis::span_of(&b, &t);
        let bc = Basis::span_of(&c, &t);
        let d1 = subspace_sum_dim(&[&ba, &bb, &bc], &t).unwrap();
        let d2 = subspace_sum_dim(&[&bc, &ba, &bb], &t).unwrap();
        let mix = DMatrix::from_fn(3, 3, |i, j| if i == j { 2.0 } else { 0.1 * (i + j) as f64 });
        let bb2 = Basis::span_of(&(&b * mix), &t);
        let d3 = subspace_sum_dim(&[&ba, &bb2, &bc], &t).unwrap();
        prop_assert_eq!(d1, 5);
        prop_assert_eq!(d1, d2);
        prop_assert_eq!(d1, d3);
    }
}

// Oracle: the explicit pseudo-inverse `Mᵀ (M Mᵀ)⁻¹ b` for full-row-rank M.
#[test]
fn min_norm_solve_matches_pseudoinverse_oracle() {
    for seed in 0..100u64 {
        let mut mixer = Mixer::new(seed);
        let rows = 2 + (seed % 4) as usize;
        let cols = rows + 1 + (seed % 3) as usize;
        let m = DMatrix::from_fn(rows, cols, |_, _| mixer.coefficient::<f64>());
        let b = mixer.vector::<f64>(rows);
        let x = min_norm_solve(&m, &b, &tol()).unwrap();
        let mmt = &m * m.transpose();
        let oracle = m.transpose() * mmt.cholesky().unwrap().solve(&b);
        assert!((&x - &oracle).norm() <= 1e-9 * (1.0 + oracle.norm()), "seed {seed}");
        assert!((&m * &x - &b).norm() <= 1e-9 * (1.0 + b.norm()));
    }
}
