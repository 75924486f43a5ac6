//! Output-nulling reachability subspaces `R*`, `R*(μ)`, `R*_j(μ)`, `R*_j`
//! and the stabilisability output-nulling subspace `V*g`, all assembled
//! from kernels of the Rosenbrock pencil.

use nalgebra::{Complex, DMatrix, DVector};

use crate::numkernel::{self, full_svd, streams, Basis, BasisTag, Mixer, TolerancePolicy};
use crate::sysmodel::{InvariantZero, LtiSystem, Plant, TimeDomain};
use crate::{cabs, lit, to_f64, Error, Result, Scalar};

/// Number of re-draws of the mixing coefficients after a rank-deficient
/// draw.
pub const MIXING_RETRIES: usize = 5;

/// State directions `v` with paired inputs `w` and the frequency each
/// column was generated from.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedBasis<T: Scalar> {
    pub v: DMatrix<T>,
    pub w: DMatrix<T>,
    pub modes: Vec<BasisTag<T>>,
    /// Mixing draws rejected as rank deficient before this one.
    pub redraws: usize,
}

impl<T: Scalar> PairedBasis<T> {
    pub fn empty(n: usize, m: usize) -> Self {
        Self { v: DMatrix::zeros(n, 0), w: DMatrix::zeros(m, 0), modes: Vec::new(), redraws: 0 }
    }

    pub fn dim(&self) -> usize {
        self.v.ncols()
    }

    /// Orthonormal basis of the span of `v`.
    pub fn span(&self, tol: &TolerancePolicy<T>) -> Basis<T> {
        Basis::span_of(&self.v, tol)
    }

    /// Largest relative residual of the defining relations: the pencil
    /// equation for frequency-tagged columns, the real rotation-block form
    /// for realified pairs. Output rows are those kept by `excluded`.
    pub fn residual(&self, sys: &LtiSystem<T>, excluded: Option<usize>) -> T {
        let n = sys.n();
        let mut worst = T::zero();
        let stacked = |i: usize| {
            let mut x = DVector::zeros(n + sys.m());
            x.rows_mut(0, n).copy_from(&self.v.column(i));
            x.rows_mut(n, sys.m()).copy_from(&self.w.column(i));
            x
        };
        let mut i = 0;
        while i < self.dim() {
            match self.modes[i] {
                BasisTag::Frequency(mu) => {
                    let p = sys.rosenbrock_selected(mu, excluded);
                    let x = stacked(i);
                    let scale = numkernel::spectral_norm(&p) * x.norm();
                    worst = worst.max((&p * &x).norm() / scale.max(T::default_epsilon()));
                    i += 1;
                }
                BasisTag::PairRe { re, im } => {
                    // A vr + B wr = re vr - im vi,  A vi + B wi = im vr + re vi
                    let p0 = sys.rosenbrock_selected(T::zero(), excluded);
                    let (xr, xi) = (stacked(i), stacked(i + 1));
                    let (vr, vi) = (self.v.column(i), self.v.column(i + 1));
                    let mut lhs_r = &p0 * &xr;
                    let mut lhs_i = &p0 * &xi;
                    {
                        let mut top = lhs_r.rows_mut(0, n);
                        top -= vr * re - vi * im;
                    }
                    {
                        let mut top = lhs_i.rows_mut(0, n);
                        top -= vr * im + vi * re;
                    }
                    let scale = (numkernel::spectral_norm(&p0) + cabs(Complex::new(re, im))) * (xr.norm() + xi.norm());
                    worst = worst.max((lhs_r.norm() + lhs_i.norm()) / scale.max(T::default_epsilon()));
                    i += 2;
                }
                BasisTag::PairIm { .. } | BasisTag::Free => i += 1,
            }
        }
        worst
    }

    pub fn check(&self, sys: &LtiSystem<T>, excluded: Option<usize>, tol: &TolerancePolicy<T>) -> Result<()> {
        let r = self.residual(sys, excluded);
        if r > tol.residual_tol {
            return Err(Error::Unsolvable { residual: to_f64(r) });
        }
        Ok(())
    }

    /// Closed-loop mode carried by each column (complex for pairs).
    pub fn column_modes(&self) -> Vec<Complex<T>> {
        self.modes
            .iter()
            .map(|tag| match *tag {
                BasisTag::Frequency(mu) => Complex::new(mu, T::zero()),
                BasisTag::PairRe { re, im } => Complex::new(re, im),
                BasisTag::PairIm { re, im } => Complex::new(re, -im),
                BasisTag::Free => Complex::new(T::zero(), T::zero()),
            })
            .collect()
    }
}

/// The plant restricted to the outputs kept by `excluded`, with its own
/// normal rank and zeros.
#[derive(Clone, Debug)]
pub struct Selection<T: Scalar> {
    pub sys: LtiSystem<T>,
    pub excluded: Option<usize>,
    pub normal_rank: usize,
    pub zeros: Vec<InvariantZero<T>>,
}

impl<T: Scalar> Selection<T> {
    pub fn new(plant: &Plant<T>, excluded: Option<usize>) -> Result<Self> {
        match excluded {
            None => Ok(Self {
                sys: plant.sys.clone(),
                excluded,
                normal_rank: plant.normal_rank,
                zeros: plant.zeros.clone(),
            }),
            Some(j) if j >= plant.p() => {
                Err(Error::DimensionMismatch(format!("output index {} out of range 0..{}", j, plant.p())))
            }
            Some(j) => {
                let sys = plant.sys.without_output(j);
                let normal_rank = sys.normal_rank(&plant.tol, plant.seed);
                let zeros = sys.invariant_zeros(&plant.tol, plant.seed)?;
                Ok(Self { sys, excluded, normal_rank, zeros })
            }
        }
    }

    /// Kernel dimension of the selected pencil away from its zeros.
    pub fn generic_kernel_dim(&self) -> usize {
        self.sys.n() + self.sys.m() - self.normal_rank
    }

    fn nearest_zero(&self, mu: T, radius: T) -> Option<&InvariantZero<T>> {
        let z = Complex::new(mu, T::zero());
        self.zeros.iter().find(|zero| cabs(zero.value - z) <= radius * T::one().max(cabs(zero.value)))
    }
}

/// Default saturation pool: -1, -1.5, -2, ... in continuous time; 0.5,
/// 0.45, ..., 0.05 and then halving in discrete time.
pub fn default_pool<T: Scalar>(domain: TimeDomain, len: usize) -> Vec<T> {
    (0..len)
        .map(|k| match domain {
            TimeDomain::Continuous => -1.0 - 0.5 * k as f64,
            TimeDomain::Discrete if k < 10 => 0.5 - 0.05 * k as f64,
            TimeDomain::Discrete => 0.05 * 0.5f64.powi((k - 9) as i32),
        })
        .map(lit)
        .collect()
}

// pool entries this close (relative) to a zero are skipped by default
const POOL_ZERO_MARGIN: f64 = 1e-3;

fn admissible_default_pool<T: Scalar>(sel: &Selection<T>) -> Vec<T> {
    let n = sel.sys.n();
    default_pool::<T>(sel.sys.domain, 4 * n + 8)
        .into_iter()
        .filter(|mu| sel.nearest_zero(*mu, lit(POOL_ZERO_MARGIN)).is_none())
        .take(2 * n + 4)
        .collect()
}

fn validate_pool<T: Scalar>(sel: &Selection<T>, pool: &[T], tol: &TolerancePolicy<T>) -> Result<()> {
    for (i, mu) in pool.iter().enumerate() {
        if !sel.sys.domain.is_stable_real(*mu) {
            return Err(Error::UnstableLambda { lambda: to_f64(*mu), domain: sel.sys.domain.name() });
        }
        if let Some(zero) = sel.nearest_zero(*mu, tol.exclusion_radius) {
            return Err(Error::FrequencyIsZero { mu: to_f64(*mu), zero: zero.to_string() });
        }
        if pool[..i].iter().any(|other| (*other - *mu).abs() <= tol.cluster_tol * T::one().max(mu.abs())) {
            return Err(Error::InvalidSpec(format!("pool value {} is repeated", to_f64(*mu))));
        }
    }
    Ok(())
}

/// Kernel of the selected real pencil at `mu` with known dimension `dim`,
/// normalised so that the state part has orthonormal columns.
fn real_kernel<T: Scalar>(sys: &LtiSystem<T>, mu: T, excluded: Option<usize>, dim: usize, tol: &TolerancePolicy<T>) -> (DMatrix<T>, DMatrix<T>) {
    let (n, m) = (sys.n(), sys.m());
    let k = numkernel::nullspace_with_dim(&sys.rosenbrock_selected(mu, excluded), dim);
    let top = k.rows(0, n).into_owned();
    let svd = full_svd(&top);
    let smax = svd.sigma.first().copied().unwrap_or_else(T::zero);
    let r = svd.sigma.iter().filter(|s| **s > tol.subspace_tol * smax).count();
    let mut w = DMatrix::zeros(m, r);
    for i in 0..r {
        let col = k.rows(n, m) * svd.v.column(i) / svd.sigma[i];
        w.set_column(i, &col);
    }
    (svd.u.columns(0, r).into_owned(), w)
}

fn complex_kernel<T: Scalar>(sys: &LtiSystem<T>, z: Complex<T>, dim: usize) -> DMatrix<Complex<T>> {
    numkernel::nullspace_with_dim(&sys.rosenbrock(z), dim)
}

/// `R*(μ)`, or `R*_j(μ)` when output `j` is excluded.
pub fn rstar_at<T: Scalar>(plant: &Plant<T>, mu: T, excluded: Option<usize>) -> Result<PairedBasis<T>> {
    let sel = Selection::new(plant, excluded)?;
    rstar_at_selection(&sel, mu, &plant.tol)
}

pub fn rstar_at_selection<T: Scalar>(sel: &Selection<T>, mu: T, tol: &TolerancePolicy<T>) -> Result<PairedBasis<T>> {
    if let Some(zero) = sel.nearest_zero(mu, tol.exclusion_radius) {
        return Err(Error::FrequencyIsZero { mu: to_f64(mu), zero: zero.to_string() });
    }
    let (v, w) = real_kernel(&sel.sys, mu, None, sel.generic_kernel_dim(), tol);
    let k = v.ncols();
    let basis = PairedBasis { v, w, modes: vec![BasisTag::Frequency(mu); k], redraws: 0 };
    basis.check(&sel.sys, None, tol)?;
    Ok(basis)
}

/// Dimension of `R*` (or `R*_j`) by saturation over `pool`: `R*(μ)` is
/// accumulated until one more frequency adds nothing.
pub fn saturated_dim<T: Scalar>(sel: &Selection<T>, pool: &[T], tol: &TolerancePolicy<T>) -> Result<usize> {
    let n = sel.sys.n();
    let mut acc = DMatrix::zeros(n, 0);
    for mu in pool {
        let (v, _) = real_kernel(&sel.sys, *mu, None, sel.generic_kernel_dim(), tol);
        let grown = numkernel::orth(&numkernel::hcat(n, &[&acc, &v]), tol.subspace_tol);
        if grown.ncols() == acc.ncols() {
            return Ok(acc.ncols());
        }
        acc = grown;
    }
    Err(Error::SaturationFailure { pool: pool.len() })
}

/// `R*` (or `R*_j`) as `V_K = [N(μ_1)k_1 ... N(μ_r)k_r]` over the first `r`
/// pool values, with seeded mixing vectors.
pub fn rstar<T: Scalar>(plant: &Plant<T>, excluded: Option<usize>, pool: Option<&[T]>) -> Result<PairedBasis<T>> {
    let stream = streams::RSTAR_MIXING;
    let mut mixer = Mixer::derived(plant.seed ^ excluded.map_or(0, |j| (j as u64 + 1) << 32), stream);
    rstar_with(plant, excluded, pool, &mut mixer)
}

pub fn rstar_with<T: Scalar>(plant: &Plant<T>, excluded: Option<usize>, pool: Option<&[T]>, mixer: &mut Mixer) -> Result<PairedBasis<T>> {
    let sel = Selection::new(plant, excluded)?;
    rstar_selection(&sel, pool, &plant.tol, mixer)
}

pub fn rstar_selection<T: Scalar>(sel: &Selection<T>, pool: Option<&[T]>, tol: &TolerancePolicy<T>, mixer: &mut Mixer) -> Result<PairedBasis<T>> {
    let pool = match pool {
        Some(p) => {
            validate_pool(sel, p, tol)?;
            p.to_vec()
        }
        None => admissible_default_pool(sel),
    };
    let r = saturated_dim(sel, &pool, tol)?;
    let (n, m) = (sel.sys.n(), sel.sys.m());
    if r == 0 {
        return Ok(PairedBasis::empty(n, m));
    }
    let kernels: Vec<(DMatrix<T>, DMatrix<T>)> =
        pool[..r].iter().map(|mu| real_kernel(&sel.sys, *mu, None, sel.generic_kernel_dim(), tol)).collect();
    let mut achieved = 0;
    for attempt in 0..=MIXING_RETRIES {
        mixer.begin_attempt();
        let mut v = DMatrix::zeros(n, r);
        let mut w = DMatrix::zeros(m, r);
        for (i, (kv, kw)) in kernels.iter().enumerate() {
            let k = mixer.vector::<T>(kv.ncols());
            let (cv, cw) = (kv * &k, kw * &k);
            let norm = cv.norm();
            if norm > T::zero() {
                v.set_column(i, &(cv / norm));
                w.set_column(i, &(cw / norm));
            }
        }
        achieved = numkernel::orth(&v, tol.subspace_tol).ncols();
        if achieved == r {
            let modes = pool[..r].iter().map(|mu| BasisTag::Frequency(*mu)).collect();
            let basis = PairedBasis { v, w, modes, redraws: attempt };
            basis.check(&sel.sys, None, tol)?;
            return Ok(basis);
        }
    }
    Err(Error::RankDeficientAfterRetries { expected: r, achieved, retries: MIXING_RETRIES })
}

/// Largest output-nulling subspace by the fixed-point recursion
/// `V⁰ = X`, `Vᵏ⁺¹ = {x | ∃u: Ax + Bu ∈ Vᵏ, Cx + Du = 0}`.
pub fn vstar_recursive<T: Scalar>(sys: &LtiSystem<T>, tol: &TolerancePolicy<T>) -> Basis<T> {
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    let mut v = DMatrix::<T>::identity(n, n);
    for _ in 0..=n {
        let q = numkernel::complement(&v);
        let rows = q.ncols() + p;
        let mut mat = DMatrix::zeros(rows, n + m);
        mat.view_mut((0, 0), (q.ncols(), n)).copy_from(&(q.transpose() * &sys.a));
        mat.view_mut((0, n), (q.ncols(), m)).copy_from(&(q.transpose() * &sys.b));
        mat.view_mut((q.ncols(), 0), (p, n)).copy_from(&sys.c);
        mat.view_mut((q.ncols(), n), (p, m)).copy_from(&sys.d);
        let k = numkernel::kernel_rel(&mat, tol.subspace_tol);
        let next = numkernel::orth(&k.rows(0, n).into_owned(), tol.subspace_tol);
        let done = next.ncols() == v.ncols();
        v = next;
        if done {
            break;
        }
    }
    Basis::span_of(&v, tol)
}

/// Smallest input-containing subspace by `S⁰ = 0`,
/// `Sᵏ⁺¹ = {As + Bu | s ∈ Sᵏ, Cs + Du = 0}`.
pub fn sstar_recursive<T: Scalar>(sys: &LtiSystem<T>, tol: &TolerancePolicy<T>) -> Basis<T> {
    let (n, m) = (sys.n(), sys.m());
    let mut s = DMatrix::<T>::zeros(n, 0);
    for _ in 0..=n {
        let k = s.ncols();
        let mut mat = DMatrix::zeros(sys.p(), k + m);
        mat.view_mut((0, 0), (sys.p(), k)).copy_from(&(&sys.c * &s));
        mat.view_mut((0, k), (sys.p(), m)).copy_from(&sys.d);
        let ker = numkernel::kernel_rel(&mat, tol.subspace_tol);
        let image = &sys.a * &s * ker.rows(0, k) + &sys.b * ker.rows(k, m);
        let next = numkernel::orth(&numkernel::hcat(n, &[&s, &image]), tol.subspace_tol);
        let done = next.ncols() == s.ncols();
        s = next;
        if done {
            break;
        }
    }
    Basis::span_of(&s, tol)
}

/// `R* = V* ∩ S*` from the two recursions.
pub fn rstar_recursive<T: Scalar>(sys: &LtiSystem<T>, tol: &TolerancePolicy<T>) -> Basis<T> {
    let v = vstar_recursive(sys, tol);
    let s = sstar_recursive(sys, tol);
    Basis::span_of(&numkernel::intersection(&v.columns, &s.columns, tol.subspace_tol), tol)
}

/// `V*g = R* + R*(z_1) + ... + R*(z_t)` as a paired basis: `r` columns
/// from the free pool followed by one (realified) kernel direction per
/// minimum-phase zero.
///
/// The default free pool lists the real minimum-phase zeros first and then
/// the saturation pool, so that the invisible closed-loop modes repeat the
/// zeros where possible.
pub fn vstar_g<T: Scalar>(plant: &Plant<T>, free_pool: Option<&[T]>) -> Result<PairedBasis<T>> {
    let mut mixer = Mixer::derived(plant.seed, streams::VSTARG_MIXING);
    vstar_g_with(plant, free_pool, &mut mixer)
}

pub fn vstar_g_with<T: Scalar>(plant: &Plant<T>, free_pool: Option<&[T]>, mixer: &mut Mixer) -> Result<PairedBasis<T>> {
    let tol = &plant.tol;
    let sel = Selection::new(plant, None)?;
    let r = saturated_dim(&sel, &admissible_default_pool(&sel), tol)?;
    let min_phase = plant.min_phase_zeros();
    let at_min_phase_zero = |mu: T| {
        min_phase
            .iter()
            .find(|z| z.is_real() && (z.value.re - mu).abs() <= tol.exclusion_radius * T::one().max(mu.abs()))
    };

    let pool: Vec<T> = match free_pool {
        Some(p) => {
            for mu in p {
                if !plant.domain().is_stable_real(*mu) {
                    return Err(Error::UnstableLambda { lambda: to_f64(*mu), domain: plant.domain().name() });
                }
                if at_min_phase_zero(*mu).is_none() {
                    if let Some(zero) = sel.nearest_zero(*mu, tol.exclusion_radius) {
                        return Err(Error::FrequencyIsZero { mu: to_f64(*mu), zero: zero.to_string() });
                    }
                }
            }
            p.to_vec()
        }
        None => min_phase
            .iter()
            .filter(|z| z.is_real())
            .map(|z| z.value.re)
            .chain(admissible_default_pool(&sel))
            .collect(),
    };
    if pool.len() < r {
        return Err(Error::InvalidSpec(format!("free pool has {} values, at least {} needed", pool.len(), r)));
    }

    let generic = plant.generic_kernel_dim();
    let (n, m) = (plant.n(), plant.m());
    let pool_kernels: Vec<(DMatrix<T>, DMatrix<T>)> = pool[..r]
        .iter()
        .map(|mu| {
            let dim = generic + at_min_phase_zero(*mu).map_or(0, |z| z.geometric_multiplicity);
            real_kernel(&plant.sys, *mu, None, dim, tol)
        })
        .collect();
    let zero_kernels: Vec<(&InvariantZero<T>, DMatrix<Complex<T>>)> = min_phase
        .iter()
        .filter(|z| z.is_real() || z.value.im > T::zero())
        .map(|z| (z, complex_kernel(&plant.sys, z.value, generic + z.geometric_multiplicity)))
        .collect();
    let t: usize = zero_kernels.iter().map(|(z, _)| if z.is_real() { 1 } else { 2 }).sum();

    let mut achieved = 0;
    for attempt in 0..=MIXING_RETRIES {
        mixer.begin_attempt();
        let mut vcols: Vec<DVector<T>> = Vec::with_capacity(r + t);
        let mut wcols: Vec<DVector<T>> = Vec::with_capacity(r + t);
        let mut modes = Vec::with_capacity(r + t);
        for ((kv, kw), mu) in pool_kernels.iter().zip(&pool) {
            let k = mixer.vector::<T>(kv.ncols());
            let (cv, cw) = normalised(kv * &k, kw * &k);
            vcols.push(cv);
            wcols.push(cw);
            modes.push(BasisTag::Frequency(*mu));
        }
        for (z, kernel) in &zero_kernels {
            let h = if z.is_real() {
                mixer.vector::<T>(kernel.ncols()).map(|x| Complex::new(x, T::zero()))
            } else {
                mixer.complex_vector::<T>(kernel.ncols())
            };
            let x = kernel * h;
            if z.is_real() {
                let (cv, cw) = normalised(x.rows(0, n).map(|c| c.re), x.rows(n, m).map(|c| c.re));
                vcols.push(cv);
                wcols.push(cw);
                modes.push(BasisTag::Frequency(z.value.re));
            } else {
                let vr = x.rows(0, n).map(|c| c.re);
                let vi = x.rows(0, n).map(|c| c.im);
                let scale = (vr.norm_squared() + vi.norm_squared()).sqrt().max(T::default_epsilon());
                let (re, im) = (z.value.re, z.value.im);
                vcols.push(vr / scale);
                vcols.push(vi / scale);
                wcols.push(x.rows(n, m).map(|c| c.re) / scale);
                wcols.push(x.rows(n, m).map(|c| c.im) / scale);
                modes.push(BasisTag::PairRe { re, im });
                modes.push(BasisTag::PairIm { re, im });
            }
        }
        let v = columns(n, &vcols);
        let w = columns(m, &wcols);
        achieved = numkernel::orth(&v, tol.subspace_tol).ncols();
        if achieved == r + t {
            let basis = PairedBasis { v, w, modes, redraws: attempt };
            basis.check(&plant.sys, None, tol)?;
            return Ok(basis);
        }
    }
    Err(Error::RankDeficientAfterRetries { expected: r + t, achieved, retries: MIXING_RETRIES })
}

fn normalised<T: Scalar>(v: DVector<T>, w: DVector<T>) -> (DVector<T>, DVector<T>) {
    let norm = v.norm();
    if norm > T::zero() {
        (v / norm, w / norm)
    } else {
        (v, w)
    }
}

fn columns<T: Scalar>(rows: usize, cols: &[DVector<T>]) -> DMatrix<T> {
    if cols.is_empty() {
        DMatrix::zeros(rows, 0)
    } else {
        DMatrix::from_columns(cols)
    }
}
