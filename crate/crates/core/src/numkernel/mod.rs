//! Dense linear-algebra primitives shared by every other module.
//!
//! Every structural decision in the crate (zero detection, subspace
//! dimensions, solvability of linear systems) is reduced to a rank call
//! governed by one [`TolerancePolicy`].

pub mod exact;
pub mod expm;
mod rng;

pub use rng::{streams, Mixer};

use nalgebra::{Complex, ComplexField, DMatrix, DVector};

use crate::{cabs, lit, to_f64, Error, Result, Scalar};

/// Tolerances for rank decisions, residual checks and zero handling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TolerancePolicy<T> {
    /// Safety factor of the SVD rank threshold
    /// `max(rows, cols) * eps * sigma_max * relative_rank_tol`.
    pub relative_rank_tol: T,
    pub absolute_floor: T,
    pub residual_tol: T,
    /// Relative singular-value threshold for dimension decisions on sums
    /// and intersections of computed (orthonormalised) bases.
    pub subspace_tol: T,
    /// A candidate zero is confirmed when the smallest relevant singular
    /// value of the pencil, relative to its norm, is below this value...
    pub zero_confirm_tol: T,
    /// ...and rejected when it is above this one. In between the pencil is
    /// reported as ill-conditioned.
    pub zero_reject_tol: T,
    /// Relative distance under which candidate zeros are merged.
    pub cluster_tol: T,
    /// Relative distance to an invariant zero under which a requested
    /// frequency is treated as coinciding with it.
    pub exclusion_radius: T,
}

impl<T: Scalar> Default for TolerancePolicy<T> {
    fn default() -> Self {
        if T::default_epsilon() < lit(1e-10) {
            Self {
                relative_rank_tol: lit(10.0),
                absolute_floor: lit(1e-12),
                residual_tol: lit(1e-9),
                subspace_tol: lit(1e-8),
                zero_confirm_tol: lit(1e-7),
                zero_reject_tol: lit(1e-4),
                cluster_tol: lit(1e-6),
                exclusion_radius: lit(1e-6),
            }
        } else {
            // single precision
            Self {
                relative_rank_tol: lit(10.0),
                absolute_floor: lit(1e-5),
                residual_tol: lit(1e-3),
                subspace_tol: lit(1e-3),
                zero_confirm_tol: lit(2e-3),
                zero_reject_tol: lit(5e-2),
                cluster_tol: lit(1e-2),
                exclusion_radius: lit(1e-2),
            }
        }
    }
}

impl<T: Scalar> TolerancePolicy<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.relative_rank_tol,
            self.absolute_floor,
            self.residual_tol,
            self.subspace_tol,
            self.zero_confirm_tol,
            self.zero_reject_tol,
            self.cluster_tol,
            self.exclusion_radius,
        ];
        if all.iter().any(|t| !(*t > T::zero())) {
            return Err(Error::InvalidSpec("all tolerances must be strictly positive".into()));
        }
        if self.zero_confirm_tol >= self.zero_reject_tol {
            return Err(Error::InvalidSpec("zero_confirm_tol must be below zero_reject_tol".into()));
        }
        Ok(())
    }

    /// Rank threshold for a matrix of the given shape and largest singular value.
    pub fn rank_threshold(&self, rows: usize, cols: usize, sigma_max: T) -> T {
        let dim: T = lit(rows.max(cols) as f64);
        dim * T::default_epsilon() * sigma_max * self.relative_rank_tol
    }
}

/// Provenance of a basis column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BasisTag<T> {
    /// Generated by the real frequency `mu`.
    Frequency(T),
    /// Real part of a kernel vector at the complex frequency `re + i im`.
    PairRe { re: T, im: T },
    /// Imaginary part of a kernel vector at `re + i im`.
    PairIm { re: T, im: T },
    Free,
}

/// Full-column-rank real matrix representing a subspace, with per-column tags.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis<T: Scalar> {
    pub columns: DMatrix<T>,
    pub tags: Vec<BasisTag<T>>,
}

impl<T: Scalar> Basis<T> {
    pub fn empty(n: usize) -> Self {
        Self { columns: DMatrix::zeros(n, 0), tags: Vec::new() }
    }

    /// Orthonormal basis of the column space of `m` (tags become `Free`).
    pub fn span_of(m: &DMatrix<T>, tol: &TolerancePolicy<T>) -> Self {
        let q = orth(m, tol.subspace_tol);
        let k = q.ncols();
        Self { columns: q, tags: vec![BasisTag::Free; k] }
    }

    pub fn with_tags(columns: DMatrix<T>, tags: Vec<BasisTag<T>>) -> Self {
        debug_assert_eq!(columns.ncols(), tags.len());
        Self { columns, tags }
    }

    pub fn ambient_dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn dim(&self) -> usize {
        self.columns.ncols()
    }
}

/// Which half of a realified conjugate pair a column represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairPosition {
    Odd,
    Even,
}

pub(crate) struct SortedSvd<N: ComplexField> {
    /// Singular values in descending order.
    pub sigma: Vec<N::RealField>,
    /// Left singular vectors (rows x min(rows, cols)), same order.
    pub u: DMatrix<N>,
    /// All right singular vectors (cols x cols); the first `sigma.len()`
    /// columns pair with `sigma`, the remainder span directions with
    /// zero singular value.
    pub v: DMatrix<N>,
}

/// SVD that always returns a complete set of right singular vectors.
///
/// The decomposition itself runs in double precision (real or complex) in
/// faer; the factors are converted back to `N`.
pub(crate) fn full_svd<N>(m: &DMatrix<N>) -> SortedSvd<N>
where
    N: ComplexField,
    N::RealField: Scalar,
{
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return SortedSvd { sigma: Vec::new(), u: DMatrix::zeros(rows, 0), v: DMatrix::identity(cols, cols) };
    }
    let zero = <N::RealField as num_traits::Zero>::zero();
    let is_real = m.iter().all(|x| x.clone().imaginary() == zero);
    let k = rows.min(cols);
    if is_real {
        let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| to_f64(m[(i, j)].clone().real()));
        let svd = fm.svd().expect("svd converges");
        let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
        let back = |x: f64| N::from_real(lit(x));
        sorted(
            (0..k).map(|i| lit(s[i])).collect(),
            DMatrix::from_fn(rows, k, |i, j| back(u[(i, j)])),
            DMatrix::from_fn(cols, cols, |i, j| back(v[(i, j)])),
        )
    } else {
        let fm = faer::Mat::<faer::c64>::from_fn(rows, cols, |i, j| {
            let x = m[(i, j)].clone();
            faer::c64::new(to_f64(x.clone().real()), to_f64(x.imaginary()))
        });
        let svd = fm.svd().expect("svd converges");
        let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
        // only reached for complex N, where sqrt(-1) is the imaginary unit
        let i_unit = N::from_real(-<N::RealField as num_traits::One>::one()).sqrt();
        let back = |z: faer::c64| N::from_real(lit(z.re)) + i_unit.clone() * N::from_real(lit(z.im));
        sorted(
            (0..k).map(|i| lit(s[i].re)).collect(),
            DMatrix::from_fn(rows, k, |i, j| back(u[(i, j)])),
            DMatrix::from_fn(cols, cols, |i, j| back(v[(i, j)])),
        )
    }
}

// faer returns non-increasing singular values; enforce it anyway
fn sorted<N>(sigma: Vec<N::RealField>, u: DMatrix<N>, v: DMatrix<N>) -> SortedSvd<N>
where
    N: ComplexField,
    N::RealField: Scalar,
{
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap_or(std::cmp::Ordering::Equal));
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return SortedSvd { sigma, u, v };
    }
    let k = sigma.len();
    let mut perm: Vec<usize> = order.clone();
    perm.extend(k..v.ncols());
    SortedSvd {
        sigma: order.iter().map(|&i| sigma[i]).collect(),
        u: u.select_columns(order.iter()),
        v: v.select_columns(perm.iter()),
    }
}

/// Number of singular values above the policy threshold.
pub fn rank_of<N>(m: &DMatrix<N>, tol: &TolerancePolicy<N::RealField>) -> usize
where
    N: ComplexField,
    N::RealField: Scalar,
{
    let svd = full_svd(m);
    numerical_rank(&svd.sigma, tol.rank_threshold(m.nrows(), m.ncols(), sigma_max(&svd.sigma)))
}

fn sigma_max<T: Scalar>(sigma: &[T]) -> T {
    sigma.first().copied().unwrap_or_else(T::zero)
}

fn numerical_rank<T: Scalar>(sigma: &[T], threshold: T) -> usize {
    sigma.iter().filter(|s| **s > threshold).count()
}

/// Orthonormal kernel basis, complex or real.
pub fn nullspace_matrix<N>(m: &DMatrix<N>, tol: &TolerancePolicy<N::RealField>) -> DMatrix<N>
where
    N: ComplexField,
    N::RealField: Scalar,
{
    let svd = full_svd(m);
    let thr = tol.rank_threshold(m.nrows(), m.ncols(), sigma_max(&svd.sigma));
    let r = numerical_rank(&svd.sigma, thr);
    svd.v.columns(r, m.ncols() - r).into_owned()
}

/// The `k` right singular vectors of `m` with the smallest singular values.
///
/// Used where the kernel dimension is known from structure (e.g. at a
/// computed invariant zero, where the eps-level rank test is too strict).
pub fn nullspace_with_dim<N>(m: &DMatrix<N>, k: usize) -> DMatrix<N>
where
    N: ComplexField,
    N::RealField: Scalar,
{
    let svd = full_svd(m);
    let cols = m.ncols();
    let k = k.min(cols);
    svd.v.columns(cols - k, k).into_owned()
}

/// Kernel with a purely relative threshold `rel_tol * sigma_max`, for
/// matrices assembled from computed bases.
pub fn kernel_rel<T: Scalar>(m: &DMatrix<T>, rel_tol: T) -> DMatrix<T> {
    let svd = full_svd(m);
    let r = numerical_rank(&svd.sigma, rel_tol * sigma_max(&svd.sigma));
    svd.v.columns(r, m.ncols() - r).into_owned()
}

/// Orthonormal basis of the orthogonal complement of `span(q)`, where `q`
/// has orthonormal columns.
pub fn complement<T: Scalar>(q: &DMatrix<T>) -> DMatrix<T> {
    let n = q.nrows();
    if q.ncols() == 0 {
        return DMatrix::identity(n, n);
    }
    nullspace_with_dim(&q.transpose(), n - q.ncols())
}

/// Kernel of a real matrix as a [`Basis`] with orthonormal columns.
pub fn nullspace<T: Scalar>(m: &DMatrix<T>, tol: &TolerancePolicy<T>) -> Basis<T> {
    let cols = nullspace_matrix(m, tol);
    let k = cols.ncols();
    Basis { columns: cols, tags: vec![BasisTag::Free; k] }
}

/// Moore-Penrose minimum-norm solution of `m x = b`.
pub fn min_norm_solve<N>(m: &DMatrix<N>, b: &DVector<N>, tol: &TolerancePolicy<N::RealField>) -> Result<DVector<N>>
where
    N: ComplexField,
    N::RealField: Scalar,
{
    if m.nrows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} rows, right-hand side has {}",
            m.nrows(),
            b.len()
        )));
    }
    let svd = full_svd(m);
    let smax = sigma_max(&svd.sigma);
    let thr = tol.rank_threshold(m.nrows(), m.ncols(), smax);
    let mut x = DVector::zeros(m.ncols());
    for (i, s) in svd.sigma.iter().enumerate() {
        if *s <= thr {
            break;
        }
        let coeff = svd.u.column(i).dotc(b).unscale(*s);
        x.axpy(coeff, &svd.v.column(i), N::one());
    }
    let residual = (m * &x - b).norm();
    let scale = smax * x.norm() + b.norm();
    if residual > tol.residual_tol * scale && residual > tol.absolute_floor {
        let rel = if scale > num_traits::Zero::zero() { residual / scale } else { residual };
        return Err(Error::Unsolvable { residual: to_f64(rel) });
    }
    Ok(x)
}

/// Dimension of the sum of the given subspaces.
pub fn subspace_sum_dim<T: Scalar>(bases: &[&Basis<T>], tol: &TolerancePolicy<T>) -> Result<usize> {
    let Some(first) = bases.first() else {
        return Ok(0);
    };
    let n = first.ambient_dim();
    if let Some(bad) = bases.iter().find(|b| b.ambient_dim() != n) {
        return Err(Error::DimensionMismatch(format!(
            "subspaces live in dimensions {} and {}",
            n,
            bad.ambient_dim()
        )));
    }
    let mats: Vec<&DMatrix<T>> = bases.iter().map(|b| &b.columns).collect();
    Ok(orth(&hcat(n, &mats), tol.subspace_tol).ncols())
}

/// Real part (odd position) or imaginary part (even position) of `v`.
pub fn realify_pair<T: Scalar>(v: &DVector<Complex<T>>, position: PairPosition) -> DVector<T> {
    match position {
        PairPosition::Odd => v.map(|z| z.re),
        PairPosition::Even => v.map(|z| z.im),
    }
}

/// Horizontal concatenation; `rows` fixes the height when the list is empty.
pub fn hcat<T: Scalar>(rows: usize, blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((0, at), (rows, b.ncols())).copy_from(*b);
        at += b.ncols();
    }
    out
}

/// Orthonormal basis for the column space of `m`.
///
/// Columns are normalised first so that the relative threshold `rel_tol`
/// compares directions rather than magnitudes; columns with negligible
/// norm are discarded.
pub fn orth<T: Scalar>(m: &DMatrix<T>, rel_tol: T) -> DMatrix<T> {
    let n = m.nrows();
    let scale = m.column_iter().map(|c| c.norm()).fold(T::zero(), |a, b| a.max(b));
    let keep: Vec<DVector<T>> = m
        .column_iter()
        .filter(|c| c.norm() > scale * T::default_epsilon() * lit(n.max(1) as f64 * 100.0))
        .map(|c| c.normalize())
        .collect();
    if keep.is_empty() {
        return DMatrix::zeros(n, 0);
    }
    let normed = DMatrix::from_columns(&keep);
    let svd = full_svd(&normed);
    let thr = rel_tol * sigma_max(&svd.sigma);
    let r = numerical_rank(&svd.sigma, thr);
    svd.u.columns(0, r).into_owned()
}

/// Whether `span(small) ⊆ span(big)`, judged by the projection residual of
/// the orthonormalised `small` onto the orthonormalised `big`.
pub fn contains<T: Scalar>(big: &DMatrix<T>, small: &DMatrix<T>, rel_tol: T) -> bool {
    containment_residual(big, small, rel_tol) <= rel_tol
}

/// Largest distance of a unit vector of `span(small)` from `span(big)`.
pub fn containment_residual<T: Scalar>(big: &DMatrix<T>, small: &DMatrix<T>, rel_tol: T) -> T {
    let qs = orth(small, rel_tol);
    if qs.ncols() == 0 {
        return T::zero();
    }
    let qb = orth(big, rel_tol);
    let proj = &qs - &qb * (qb.transpose() * &qs);
    spectral_norm(&proj)
}

pub fn span_equal<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, rel_tol: T) -> bool {
    contains(a, b, rel_tol) && contains(b, a, rel_tol)
}

/// Orthonormal basis of `span(a) ∩ span(b)`.
pub fn intersection<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, rel_tol: T) -> DMatrix<T> {
    let n = a.nrows();
    let qa = orth(a, rel_tol);
    let qb = orth(b, rel_tol);
    if qa.ncols() == 0 || qb.ncols() == 0 {
        return DMatrix::zeros(n, 0);
    }
    // principal angles: singular values of qa' qb equal to one
    let svd = full_svd(&(qa.transpose() * &qb));
    let one = T::one();
    let cols: Vec<DVector<T>> = svd
        .sigma
        .iter()
        .enumerate()
        .filter(|(_, s)| **s >= one - rel_tol)
        .map(|(i, _)| &qa * svd.u.column(i))
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        orth(&DMatrix::from_columns(&cols), rel_tol)
    }
}

pub fn spectral_norm<N>(m: &DMatrix<N>) -> N::RealField
where
    N: ComplexField,
    N::RealField: Scalar,
{
    sigma_max(&full_svd(m).sigma)
}

pub fn max_abs<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |a, b| a.max(b.abs()))
}

/// Eigenvalues of a real square matrix (faer, double precision).
pub fn eigenvalues<T: Scalar>(m: &DMatrix<T>) -> Result<Vec<Complex<T>>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let fm = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| to_f64(m[(i, j)]));
    let eigs = fm.eigenvalues().map_err(|_| Error::EigenFailure)?;
    Ok(eigs.iter().map(|z| Complex::new(lit(z.re), lit(z.im))).collect())
}

/// Promotes a real matrix to complex.
pub fn complexify<T: Scalar>(m: &DMatrix<T>) -> DMatrix<Complex<T>> {
    m.map(|x| Complex::new(x, T::zero()))
}

/// Solves `f * v = w` for `f` when `v` is square and invertible.
pub fn solve_right<T: Scalar>(w: &DMatrix<T>, v: &DMatrix<T>) -> Option<DMatrix<T>> {
    let lu = v.transpose().lu();
    lu.solve(&w.transpose()).map(|x| x.transpose())
}

/// Multiset matching of `expected` against `computed` within a relative
/// tolerance. Returns the largest matched distance, or `None` when some
/// expected value has no partner.
pub fn match_spectra<T: Scalar>(expected: &[Complex<T>], computed: &[Complex<T>], rel_tol: T) -> Option<T> {
    if expected.len() != computed.len() {
        return None;
    }
    let mut used = vec![false; computed.len()];
    let mut worst = T::zero();
    // most isolated values first would be optimal; greedy on sorted input is
    // enough for the well-separated spectra handled here
    for e in expected {
        let mut best: Option<(usize, T)> = None;
        for (i, c) in computed.iter().enumerate() {
            if used[i] {
                continue;
            }
            let d = cabs(e - c);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (i, d) = best?;
        if d > rel_tol * (T::one() + cabs(*e)) {
            return None;
        }
        used[i] = true;
        worst = worst.max(d);
    }
    Some(worst)
}

#[cfg(test)]
mod tests;
