//! The plant, its Rosenbrock pencil, invariant zeros and the audit of the
//! standing tracking assumptions.

use std::fmt;
use std::path::Path;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::numkernel::{self, full_svd, streams, Mixer, TolerancePolicy};
use crate::{cabs, lit, to_f64, Error, Result, Scalar};

/// Continuous time (derivative) or discrete time (unit shift).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeDomain {
    Continuous,
    Discrete,
}

impl TimeDomain {
    /// Membership of the open stability region (left half-plane or unit disc).
    pub fn is_stable<T: Scalar>(self, z: Complex<T>) -> bool {
        match self {
            TimeDomain::Continuous => z.re < T::zero(),
            TimeDomain::Discrete => cabs(z) < T::one(),
        }
    }

    /// Strict membership with a margin: points within `margin` of the
    /// boundary count as unstable.
    pub fn is_stable_with_margin<T: Scalar>(self, z: Complex<T>, margin: T) -> bool {
        match self {
            TimeDomain::Continuous => z.re < -margin,
            TimeDomain::Discrete => cabs(z) < T::one() - margin,
        }
    }

    pub fn is_stable_real<T: Scalar>(self, x: T) -> bool {
        self.is_stable(Complex::new(x, T::zero()))
    }

    /// Frequency at which a constant reference lives: 0 or 1.
    pub fn tracking_frequency<T: Scalar>(self) -> T {
        match self {
            TimeDomain::Continuous => T::zero(),
            TimeDomain::Discrete => T::one(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TimeDomain::Continuous => "continuous",
            TimeDomain::Discrete => "discrete",
        }
    }
}

/// The quadruple `(A, B, C, D)` with its time domain.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiSystem<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
    pub d: DMatrix<T>,
    pub domain: TimeDomain,
}

impl<T: Scalar> LtiSystem<T> {
    /// Builds a system and enforces the standing structural invariants:
    /// `[B; D]` has full column rank and `[C D]` has full row rank.
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>, d: DMatrix<T>, domain: TimeDomain) -> Result<Self> {
        let sys = Self::new_unchecked(a, b, c, d, domain)?;
        let tol = TolerancePolicy::default();
        let (n, m, p) = (sys.n(), sys.m(), sys.p());
        let mut bd = DMatrix::zeros(n + p, m);
        bd.view_mut((0, 0), (n, m)).copy_from(&sys.b);
        bd.view_mut((n, 0), (p, m)).copy_from(&sys.d);
        if m > 0 && numkernel::rank_of(&bd, &tol) < m {
            return Err(Error::InvalidSystem("[B; D] does not have full column rank".into()));
        }
        let mut cd = DMatrix::zeros(p, n + m);
        cd.view_mut((0, 0), (p, n)).copy_from(&sys.c);
        cd.view_mut((0, n), (p, m)).copy_from(&sys.d);
        if p > 0 && numkernel::rank_of(&cd, &tol) < p {
            return Err(Error::InvalidSystem("[C D] does not have full row rank".into()));
        }
        Ok(sys)
    }

    /// Only checks that the dimensions agree and the entries are finite.
    pub fn new_unchecked(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>, d: DMatrix<T>, domain: TimeDomain) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::DimensionMismatch(format!("A must be square and non-empty, got {:?}", a.shape())));
        }
        if b.nrows() != n {
            return Err(Error::DimensionMismatch(format!("B has {} rows, expected {}", b.nrows(), n)));
        }
        if c.ncols() != n {
            return Err(Error::DimensionMismatch(format!("C has {} columns, expected {}", c.ncols(), n)));
        }
        if d.shape() != (c.nrows(), b.ncols()) {
            return Err(Error::DimensionMismatch(format!(
                "D is {:?}, expected {:?}",
                d.shape(),
                (c.nrows(), b.ncols())
            )));
        }
        let finite = |m: &DMatrix<T>| m.iter().all(|x| x.is_finite());
        if !(finite(&a) && finite(&b) && finite(&c) && finite(&d)) {
            return Err(Error::InvalidSystem("non-finite matrix entry".into()));
        }
        Ok(Self { a, b, c, d, domain })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// `[[A - λI, B], [C, D]]`.
    pub fn rosenbrock(&self, lambda: Complex<T>) -> DMatrix<Complex<T>> {
        let mut p = numkernel::complexify(&self.rosenbrock_real(T::zero()));
        for i in 0..self.n() {
            p[(i, i)] -= lambda;
        }
        p
    }

    pub fn rosenbrock_real(&self, mu: T) -> DMatrix<T> {
        self.rosenbrock_selected(mu, None)
    }

    /// Real pencil with output row `excluded` removed from `[C D]`.
    pub fn rosenbrock_selected(&self, mu: T, excluded: Option<usize>) -> DMatrix<T> {
        let (n, m) = (self.n(), self.m());
        let rows: Vec<usize> = (0..self.p()).filter(|&j| Some(j) != excluded).collect();
        let mut p = DMatrix::zeros(n + rows.len(), n + m);
        p.view_mut((0, 0), (n, n)).copy_from(&self.a);
        for i in 0..n {
            p[(i, i)] -= mu;
        }
        p.view_mut((0, n), (n, m)).copy_from(&self.b);
        for (k, &j) in rows.iter().enumerate() {
            for col in 0..n {
                p[(n + k, col)] = self.c[(j, col)];
            }
            for col in 0..m {
                p[(n + k, n + col)] = self.d[(j, col)];
            }
        }
        p
    }

    /// The system with output `j` removed (no invariant re-check).
    pub fn without_output(&self, j: usize) -> Self {
        let keep: Vec<usize> = (0..self.p()).filter(|&k| k != j).collect();
        Self {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c.select_rows(keep.iter()),
            d: self.d.select_rows(keep.iter()),
            domain: self.domain,
        }
    }

    /// Maximum pencil rank over seven seeded complex frequencies off the
    /// real axis.
    pub fn normal_rank(&self, tol: &TolerancePolicy<T>, seed: u64) -> usize {
        let mut mixer = Mixer::derived(seed, streams::NORMAL_RANK);
        let scale = 1.0 + to_f64(numkernel::spectral_norm(&self.a));
        (0..7)
            .map(|_| {
                let re = scale * mixer.uniform(-1.0, 1.0);
                let im = scale * mixer.uniform(0.5, 1.5) * if mixer.uniform(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
                numkernel::rank_of(&self.rosenbrock(Complex::new(lit(re), lit(im))), tol)
            })
            .max()
            .unwrap_or(0)
    }

    /// Finite invariant zeros: the frequencies where the pencil rank drops
    /// below its normal rank.
    pub fn invariant_zeros(&self, tol: &TolerancePolicy<T>, seed: u64) -> Result<Vec<InvariantZero<T>>> {
        let k = self.normal_rank(tol, seed);
        find_zeros(self, k, tol, seed)
    }

    /// Splits zeros into (minimum-phase, non-minimum-phase); boundary zeros
    /// count as non-minimum-phase.
    pub fn classify_zeros(&self, zeros: &[InvariantZero<T>]) -> (Vec<InvariantZero<T>>, Vec<InvariantZero<T>>) {
        zeros.iter().cloned().partition(|z| z.is_minimum_phase)
    }

    pub fn cast<U: Scalar>(&self) -> LtiSystem<U> {
        let f = |m: &DMatrix<T>| m.map(|x| lit::<U>(to_f64(x)));
        LtiSystem { a: f(&self.a), b: f(&self.b), c: f(&self.c), d: f(&self.d), domain: self.domain }
    }
}

/// A finite invariant zero.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantZero<T: Scalar> {
    pub value: Complex<T>,
    /// Kernel dimension of the pencil at `value` minus the generic kernel
    /// dimension `n + m - normal_rank`.
    pub geometric_multiplicity: usize,
    /// Number of coalesced eigenvalues of the compressed pencil.
    pub algebraic_multiplicity: usize,
    pub is_minimum_phase: bool,
}

impl<T: Scalar> InvariantZero<T> {
    pub fn is_real(&self) -> bool {
        self.value.im == T::zero()
    }
}

impl<T: Scalar> fmt::Display for InvariantZero<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_real() {
            write!(f, "{}", to_f64(self.value.re))
        } else {
            write!(f, "{}{:+}i", to_f64(self.value.re), to_f64(self.value.im))
        }
    }
}

struct Candidate<T: Scalar> {
    value: Complex<T>,
    count: usize,
}

/// Finite eigenvalues of a random square compression `L P(λ) R` of the
/// pencil, via the shift-invert transform `(S0 - σ S1)⁻¹ S1`.
fn compressed_eigenvalues<T: Scalar>(sys: &LtiSystem<T>, k: usize, mixer: &mut Mixer) -> Result<Vec<Complex<T>>> {
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    let p0 = sys.rosenbrock_real(T::zero());
    let mut e = DMatrix::<T>::zeros(n + p, n + m);
    for i in 0..n {
        e[(i, i)] = T::one();
    }
    let scale = 1.0 + to_f64(numkernel::spectral_norm(&p0));
    for _ in 0..8 {
        let l = DMatrix::from_fn(k, n + p, |_, _| lit::<T>(mixer.uniform(-1.0, 1.0)));
        let r = DMatrix::from_fn(n + m, k, |_, _| lit::<T>(mixer.uniform(-1.0, 1.0)));
        let s0 = &l * &p0 * &r;
        let s1 = &l * &e * &r;
        let sign = if mixer.uniform(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
        let sigma: T = lit(sign * scale * mixer.uniform(0.3, 1.1));
        let shifted = &s0 - &s1 * sigma;
        let Some(inv) = shifted.clone().try_inverse() else {
            continue;
        };
        // reject nearly singular shifts
        let cond = numkernel::spectral_norm(&shifted) * numkernel::spectral_norm(&inv);
        if to_f64(cond) > 1e10 {
            continue;
        }
        let t = inv * &s1;
        let thetas = numkernel::eigenvalues(&t)?;
        // θ = 1/(λ - σ); θ ≈ 0 are infinite eigenvalues
        let theta_floor: T = lit(1.0 / (1e8 * scale));
        return Ok(thetas
            .into_iter()
            .filter(|th| cabs(*th) > theta_floor)
            .map(|th| Complex::new(sigma, T::zero()) + Complex::new(T::one(), T::zero()) / th)
            .collect());
    }
    Err(Error::EigenFailure)
}

fn close<T: Scalar>(a: Complex<T>, b: Complex<T>, rel: T) -> bool {
    cabs(a - b) <= rel * (T::one().max(cabs(a)))
}

fn cluster<T: Scalar>(values: &[Complex<T>], rel: T) -> Vec<Candidate<T>> {
    let mut out: Vec<Candidate<T>> = Vec::new();
    for v in values {
        if let Some(c) = out.iter_mut().find(|c| close(c.value, *v, rel)) {
            let count: T = lit(c.count as f64);
            c.value = (c.value * count + v) / (count + T::one());
            c.count += 1;
        } else {
            out.push(Candidate { value: *v, count: 1 });
        }
    }
    out
}

fn find_zeros<T: Scalar>(sys: &LtiSystem<T>, normal_rank: usize, tol: &TolerancePolicy<T>, seed: u64) -> Result<Vec<InvariantZero<T>>> {
    if normal_rank == 0 {
        return Ok(Vec::new());
    }
    let mut mixer = Mixer::derived(seed, streams::ZERO_COMPRESSION);
    let first = compressed_eigenvalues(sys, normal_rank, &mut mixer)?;
    let second = compressed_eigenvalues(sys, normal_rank, &mut mixer)?;
    // candidate matching is looser than clustering: multiple zeros are
    // only located to about sqrt(eps)
    let match_tol = tol.cluster_tol.max(T::default_epsilon().sqrt() * lit(100.0));
    let first = cluster(&first, tol.cluster_tol);
    let second = cluster(&second, tol.cluster_tol);

    let (n, m) = (sys.n(), sys.m());
    let generic_kernel = n + m - normal_rank;
    let mut zeros = Vec::new();
    for cand in first {
        if !second.iter().any(|s| close(s.value, cand.value, match_tol)) {
            continue;
        }
        let mut value = cand.value;
        if value.im.abs() <= tol.cluster_tol * T::one().max(cabs(value)) {
            value.im = T::zero();
        }
        let svd = full_svd(&sys.rosenbrock(value));
        let smax = svd.sigma.first().copied().unwrap_or_else(T::one);
        let rel = |i: usize| svd.sigma.get(i).copied().unwrap_or_else(T::zero) / smax;
        let weakest = rel(normal_rank - 1);
        if weakest >= tol.zero_reject_tol {
            continue;
        }
        if weakest > tol.zero_confirm_tol {
            return Err(Error::IllConditionedPencil {
                re: to_f64(value.re),
                im: to_f64(value.im),
                sigma: to_f64(weakest),
            });
        }
        let deficiency = (0..normal_rank).filter(|&i| rel(i) <= tol.zero_confirm_tol).count();
        debug_assert!(n + m - (normal_rank - deficiency) >= generic_kernel);
        zeros.push(InvariantZero {
            value,
            geometric_multiplicity: deficiency,
            algebraic_multiplicity: cand.count,
            // a zero on the boundary up to rounding is not minimum-phase
            is_minimum_phase: sys.domain.is_stable_with_margin(value, tol.cluster_tol * T::one().max(cabs(value))),
        });
    }
    // close under conjugation
    let missing: Vec<InvariantZero<T>> = zeros
        .iter()
        .filter(|z| !z.is_real())
        .filter(|z| !zeros.iter().any(|w| close(w.value, z.value.conj(), match_tol)))
        .map(|z| InvariantZero { value: z.value.conj(), ..z.clone() })
        .collect();
    zeros.extend(missing);
    zeros.sort_by(|a, b| {
        a.value
            .re
            .partial_cmp(&b.value.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.value.im.partial_cmp(&b.value.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(zeros)
}

/// Outcome of the standing-assumption checks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub right_invertible: bool,
    pub stabilizable: bool,
    pub no_zero_at_tracking_frequency: bool,
    pub distinct_min_phase_zeros: bool,
    pub details: Vec<String>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.right_invertible && self.stabilizable && self.no_zero_at_tracking_frequency && self.distinct_min_phase_zeros
    }

    pub fn failures(&self) -> String {
        let mut out = Vec::new();
        if !self.right_invertible {
            out.push("not right invertible");
        }
        if !self.stabilizable {
            out.push("not stabilisable");
        }
        if !self.no_zero_at_tracking_frequency {
            out.push("invariant zero at the tracking frequency");
        }
        if !self.distinct_min_phase_zeros {
            out.push("coincident minimum-phase zeros");
        }
        out.join(", ")
    }
}

/// A system together with the structural data every later stage needs:
/// normal rank, invariant zeros, tolerances and the seed.
#[derive(Clone, Debug)]
pub struct Plant<T: Scalar> {
    pub sys: LtiSystem<T>,
    pub tol: TolerancePolicy<T>,
    pub seed: u64,
    pub normal_rank: usize,
    pub zeros: Vec<InvariantZero<T>>,
}

impl<T: Scalar> Plant<T> {
    pub fn new(sys: LtiSystem<T>, tol: TolerancePolicy<T>, seed: u64) -> Result<Self> {
        tol.validate()?;
        let normal_rank = sys.normal_rank(&tol, seed);
        let zeros = find_zeros(&sys, normal_rank, &tol, seed)?;
        Ok(Self { sys, tol, seed, normal_rank, zeros })
    }

    pub fn with_defaults(sys: LtiSystem<T>) -> Result<Self> {
        Self::new(sys, TolerancePolicy::default(), 0)
    }

    pub fn n(&self) -> usize {
        self.sys.n()
    }

    pub fn m(&self) -> usize {
        self.sys.m()
    }

    pub fn p(&self) -> usize {
        self.sys.p()
    }

    pub fn domain(&self) -> TimeDomain {
        self.sys.domain
    }

    /// Generic kernel dimension `n + m - normal_rank` of the pencil.
    pub fn generic_kernel_dim(&self) -> usize {
        self.n() + self.m() - self.normal_rank
    }

    pub fn is_right_invertible(&self) -> bool {
        self.normal_rank == self.n() + self.p()
    }

    /// Minimum-phase zeros, conjugate pairs adjacent with positive imaginary
    /// part first, then the real ones.
    pub fn min_phase_zeros(&self) -> Vec<InvariantZero<T>> {
        let (mut complex, real): (Vec<_>, Vec<_>) =
            self.zeros.iter().filter(|z| z.is_minimum_phase).cloned().partition(|z| !z.is_real());
        complex.sort_by(|a, b| {
            (a.value.re, b.value.im)
                .partial_cmp(&(b.value.re, a.value.im))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        complex.into_iter().chain(real).collect()
    }

    /// Fails when `mu` lies within the exclusion radius of an invariant zero.
    pub fn check_not_zero(&self, mu: T) -> Result<()> {
        let z = Complex::new(mu, T::zero());
        match self.zeros.iter().find(|zero| close(zero.value, z, self.tol.exclusion_radius)) {
            Some(zero) => Err(Error::FrequencyIsZero { mu: to_f64(mu), zero: zero.to_string() }),
            None => Ok(()),
        }
    }

    pub fn audit(&self) -> AssumptionReport {
        let sys = &self.sys;
        let (n, p) = (sys.n(), sys.p());
        let mut details = Vec::new();

        let right_invertible = self.is_right_invertible();
        details.push(format!("normal rank {} (n + p = {})", self.normal_rank, n + p));

        let mut stabilizable = true;
        match numkernel::eigenvalues(&sys.a) {
            Ok(eigs) => {
                for lambda in eigs.iter().filter(|l| !sys.domain.is_stable(**l)) {
                    let mut ab = numkernel::complexify(&sys.rosenbrock_real(T::zero()).rows(0, n).into_owned());
                    for i in 0..n {
                        ab[(i, i)] -= *lambda;
                    }
                    let sigma = full_svd(&ab).sigma;
                    let smax = sigma.first().copied().unwrap_or_else(T::one);
                    let weakest = sigma.get(n - 1).copied().unwrap_or_else(T::zero);
                    if weakest <= self.tol.zero_confirm_tol * smax {
                        stabilizable = false;
                        details.push(format!(
                            "uncontrollable unstable eigenvalue {:+.6e}{:+.6e}i",
                            to_f64(lambda.re),
                            to_f64(lambda.im)
                        ));
                    }
                }
            }
            Err(_) => {
                stabilizable = false;
                details.push("eigenvalues of A did not converge".into());
            }
        }

        let freq = sys.domain.tracking_frequency::<T>();
        let tracking_rank = numkernel::rank_of(&sys.rosenbrock_real(freq), &self.tol);
        let no_zero_at_tracking_frequency = tracking_rank == n + p;
        details.push(format!("pencil rank {} at the tracking frequency {}", tracking_rank, to_f64(freq)));

        let min_phase = self.min_phase_zeros();
        let mut distinct_min_phase_zeros = true;
        for z in &min_phase {
            if z.geometric_multiplicity != 1 || z.algebraic_multiplicity != 1 {
                distinct_min_phase_zeros = false;
                details.push(format!(
                    "minimum-phase zero {} has geometric multiplicity {} and algebraic multiplicity {}",
                    z, z.geometric_multiplicity, z.algebraic_multiplicity
                ));
            }
        }
        for (i, a) in min_phase.iter().enumerate() {
            for b in &min_phase[i + 1..] {
                if close(a.value, b.value, self.tol.cluster_tol) {
                    distinct_min_phase_zeros = false;
                    details.push(format!("minimum-phase zeros {} and {} coincide", a, b));
                }
            }
        }

        AssumptionReport { right_invertible, stabilizable, no_zero_at_tracking_frequency, distinct_min_phase_zeros, details }
    }
}

/// On-disk system description: row-major matrices and the time domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct SystemFile {
    pub time_domain: TimeDomain,
    pub A: Vec<Vec<f64>>,
    pub B: Vec<Vec<f64>>,
    pub C: Vec<Vec<f64>>,
    pub D: Vec<Vec<f64>>,
}

/// Row-major nested vectors to a matrix; `cols` is used for empty rows.
pub fn matrix_from_rows<T: Scalar>(rows: &[Vec<f64>], cols_if_empty: usize, name: &str) -> Result<DMatrix<T>> {
    let cols = rows.first().map_or(cols_if_empty, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch(format!("{name} has ragged rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| lit(rows[i][j])))
}

pub fn matrix_to_rows<T: Scalar>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().map(|x| to_f64(*x)).collect()).collect()
}

impl SystemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Builds the system, enforcing the constructor invariants.
    pub fn to_system<T: Scalar>(&self) -> Result<LtiSystem<T>> {
        let a = matrix_from_rows(&self.A, 0, "A")?;
        let n = a.nrows();
        let b = matrix_from_rows(&self.B, 0, "B")?;
        let c = matrix_from_rows(&self.C, n, "C")?;
        let d = matrix_from_rows(&self.D, b.ncols(), "D")?;
        LtiSystem::new(a, b, c, d, self.time_domain)
    }

    pub fn from_system<T: Scalar>(sys: &LtiSystem<T>) -> Self {
        Self {
            time_domain: sys.domain,
            A: matrix_to_rows(&sys.a),
            B: matrix_to_rows(&sys.b),
            C: matrix_to_rows(&sys.c),
            D: matrix_to_rows(&sys.d),
        }
    }
}

impl LtiSystem<f64> {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        SystemFile::load(path)?.to_system()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SystemFile::from_system(self)).expect("system serialises")
    }
}
