//! Gain and feedforward synthesis: one direction pair per tracked output,
//! the `V*g` columns for the invisible modes, `F = W V⁻¹` and the
//! steady-state pair.

use nalgebra::{Complex, DMatrix, DVector};

use crate::numkernel::{self, streams, Mixer};
use crate::solvability::{self, SolvabilityVerdict};
use crate::subspaces::{self, PairedBasis, Selection};
use crate::sysmodel::{LtiSystem, Plant, TimeDomain};
use crate::{cabs, lit, to_f64, Error, Result, Scalar};

/// Inputs of a synthesis run.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisSpec<T: Scalar> {
    /// One real stable mode per output.
    pub lambdas: Vec<T>,
    pub reference: Vec<T>,
    /// Frequencies for the `R*` columns of `V*g`; defaults to the minimum-phase
    /// zeros followed by the saturation pool.
    pub free_pool: Option<Vec<T>>,
    pub seed: u64,
    pub max_retries: usize,
    pub replay: Option<Replay<T>>,
}

impl<T: Scalar> SynthesisSpec<T> {
    pub fn new(lambdas: Vec<T>, reference: Vec<T>) -> Self {
        Self { lambdas, reference, free_pool: None, seed: 0, max_retries: 5, replay: None }
    }
}

/// User-supplied `V_g`, `W_g` and optionally the direction pairs, to
/// reproduce a reference gain exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay<T: Scalar> {
    pub vg: DMatrix<T>,
    pub wg: DMatrix<T>,
    /// `(output, v, w)`, output 0-based.
    pub directions: Vec<(usize, DVector<T>, DVector<T>)>,
}

/// State/input direction that excites only output `output`, with mode `mode`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionPair<T: Scalar> {
    pub v: DVector<T>,
    pub w: DVector<T>,
    /// `C_j v + D_j w`.
    pub beta: T,
    pub output: usize,
    pub mode: T,
}

/// How an output's tracking error evolves in closed loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OutputMode<T> {
    Mode(T),
    /// Error identically zero from every initial condition.
    Instantaneous,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackResult<T: Scalar> {
    pub f: DMatrix<T>,
    pub x_ss: DVector<T>,
    pub u_ss: DVector<T>,
    pub reference: Vec<T>,
    pub v: DMatrix<T>,
    pub w: DMatrix<T>,
    pub closed_loop_spectrum: Vec<Complex<T>>,
    pub assigned: Vec<OutputMode<T>>,
    pub delta: Vec<usize>,
    pub directions: Vec<DirectionPair<T>>,
    /// Modes carried by the `V*g` columns.
    pub vg_modes: Vec<Complex<T>>,
    pub verdict: SolvabilityVerdict,
    /// Rank-deficient `V` assemblies rejected before this one.
    pub redraws: usize,
}

impl<T: Scalar> FeedbackResult<T> {
    /// `u = F (x - x_ss) + u_ss`.
    pub fn control_input(&self, x: &DVector<T>) -> DVector<T> {
        &self.f * (x - &self.x_ss) + &self.u_ss
    }

    pub fn closed_loop(&self, sys: &LtiSystem<T>) -> DMatrix<T> {
        &sys.a + &sys.b * &self.f
    }

    pub fn output_map(&self, sys: &LtiSystem<T>) -> DMatrix<T> {
        &sys.c + &sys.d * &self.f
    }

    /// Number of `V*g` columns.
    pub fn vg_dim(&self) -> usize {
        self.v.ncols() - self.directions.len()
    }
}

/// Minimum-norm solution of the pencil equation with right-hand side
/// `(0, e_j)`; when the output gain vanishes the direction is re-drawn
/// inside the kernel of the pencil with output `j` deleted.
pub fn direction_for_output<T: Scalar>(plant: &Plant<T>, j: usize, lambda: T, mixer: &mut Mixer, max_retries: usize) -> Result<DirectionPair<T>> {
    let sys = &plant.sys;
    let (n, p) = (sys.n(), sys.p());
    let pencil = sys.rosenbrock_real(lambda);
    let mut rhs = DVector::zeros(n + p);
    rhs[n + j] = T::one();
    let x = numkernel::min_norm_solve(&pencil, &rhs, &plant.tol)?;
    let pair = make_pair(sys, x, j, lambda);
    if pair.beta.abs() > plant.tol.absolute_floor {
        return Ok(pair);
    }
    redraw_direction(plant, j, lambda, mixer, max_retries)
}

fn make_pair<T: Scalar>(sys: &LtiSystem<T>, x: DVector<T>, j: usize, lambda: T) -> DirectionPair<T> {
    let (n, m) = (sys.n(), sys.m());
    let v = x.rows(0, n).into_owned();
    let w = x.rows(n, m).into_owned();
    let beta = (sys.c.row(j) * &v)[0] + (sys.d.row(j) * &w)[0];
    DirectionPair { v, w, beta, output: j, mode: lambda }
}

/// Random element of the `R*_j(λ)` kernel with non-vanishing output `j`.
fn redraw_direction<T: Scalar>(plant: &Plant<T>, j: usize, lambda: T, mixer: &mut Mixer, max_retries: usize) -> Result<DirectionPair<T>> {
    let sel = Selection::new(plant, Some(j))?;
    let kernel = numkernel::nullspace_with_dim(&sel.sys.rosenbrock_real(lambda), sel.generic_kernel_dim());
    for _ in 0..max_retries {
        mixer.begin_attempt();
        let x = &kernel * mixer.vector::<T>(kernel.ncols());
        let pair = make_pair(&plant.sys, x, j, lambda);
        if pair.beta.abs() > plant.tol.absolute_floor {
            let scale = T::one() / pair.beta;
            return Ok(DirectionPair { v: pair.v * scale, w: pair.w * scale, beta: T::one(), ..pair });
        }
    }
    Err(Error::DegenerateDirection { output: j + 1, retries: max_retries })
}

/// Minimum-norm solution of `[[A - I_d, B], [C, D]] (x, u) = (0, r)`,
/// with `I_d = 0` in continuous time and `I` in discrete time.
pub fn steady_state<T: Scalar>(plant: &Plant<T>, reference: &[T]) -> Result<(DVector<T>, DVector<T>)> {
    let sys = &plant.sys;
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    if reference.len() != p {
        return Err(Error::DimensionMismatch(format!("reference has {} entries, expected {}", reference.len(), p)));
    }
    if reference.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidSpec("reference must be finite".into()));
    }
    let pencil = sys.rosenbrock_real(sys.domain.tracking_frequency());
    let mut rhs = DVector::zeros(n + p);
    for (k, r) in reference.iter().enumerate() {
        rhs[n + k] = *r;
    }
    let x = numkernel::min_norm_solve(&pencil, &rhs, &plant.tol)?;
    Ok((x.rows(0, n).into_owned(), x.rows(n, m).into_owned()))
}

/// Relative residual of `(x_ss, u_ss)` in the steady-state equations.
pub fn steady_state_residual<T: Scalar>(sys: &LtiSystem<T>, reference: &[T], x_ss: &DVector<T>, u_ss: &DVector<T>) -> T {
    let pencil = sys.rosenbrock_real(sys.domain.tracking_frequency());
    let (n, m) = (sys.n(), sys.m());
    let mut x = DVector::zeros(n + m);
    x.rows_mut(0, n).copy_from(x_ss);
    x.rows_mut(n, m).copy_from(u_ss);
    let mut rhs = DVector::zeros(n + sys.p());
    for (k, r) in reference.iter().enumerate() {
        rhs[n + k] = *r;
    }
    (&pencil * &x - &rhs).norm() / (T::one() + rhs.norm())
}

/// Invisible modes of replayed `V_g`, `W_g`: eigenvalues of `M` with
/// `A V_g + B W_g = V_g M`.
fn replay_modes<T: Scalar>(plant: &Plant<T>, vg: &DMatrix<T>, wg: &DMatrix<T>) -> Result<Vec<Complex<T>>> {
    let sys = &plant.sys;
    if vg.nrows() != plant.n() || wg.nrows() != plant.m() || vg.ncols() != wg.ncols() {
        return Err(Error::InvalidReplay(format!(
            "V_g is {:?} and W_g is {:?} for n = {}, m = {}",
            vg.shape(),
            wg.shape(),
            plant.n(),
            plant.m()
        )));
    }
    if vg.ncols() == 0 {
        return Ok(Vec::new());
    }
    let image = &sys.a * vg + &sys.b * wg;
    let mut mcols = Vec::with_capacity(vg.ncols());
    for k in 0..vg.ncols() {
        let col = numkernel::min_norm_solve(vg, &image.column(k).into_owned(), &plant.tol)
            .map_err(|_| Error::InvalidReplay("V_g is not invariant under the replayed inputs".into()))?;
        mcols.push(col);
    }
    let mmat = DMatrix::from_columns(&mcols);
    let out = &sys.c * vg + &sys.d * wg;
    let scale = T::one() + numkernel::spectral_norm(vg) + numkernel::spectral_norm(wg);
    if numkernel::max_abs(&(&image - vg * &mmat)) > plant.tol.residual_tol * scale * lit(100.0) {
        return Err(Error::InvalidReplay("V_g is not invariant under the replayed inputs".into()));
    }
    if numkernel::max_abs(&out) > plant.tol.residual_tol * scale * lit(100.0) {
        return Err(Error::InvalidReplay("V_g is not output nulling".into()));
    }
    numkernel::eigenvalues(&mmat)
}

fn pair_residual<T: Scalar>(sys: &LtiSystem<T>, d: &DirectionPair<T>) -> T {
    let pencil = sys.rosenbrock_real(d.mode);
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    let mut x = DVector::zeros(n + m);
    x.rows_mut(0, n).copy_from(&d.v);
    x.rows_mut(n, m).copy_from(&d.w);
    let mut rhs = DVector::zeros(n + p);
    rhs[n + d.output] = d.beta;
    (&pencil * &x - rhs).norm() / (numkernel::spectral_norm(&pencil) * x.norm())
}

/// Assembles `V = [v_j (j ∈ δ) | V_g]`, `W` likewise, and returns
/// `F = W V⁻¹` with the steady-state pair, after checking every closed-loop
/// invariant.
pub fn synthesize<T: Scalar>(plant: &Plant<T>, spec: &SynthesisSpec<T>) -> Result<FeedbackResult<T>> {
    let report = plant.audit();
    if !report.passed() {
        return Err(Error::AssumptionFailed(report.failures()));
    }
    solvability::validate_lambdas(plant, &spec.lambdas)?;
    let (x_ss, u_ss) = steady_state(plant, &spec.reference)?;
    let tol = &plant.tol;
    let n = plant.n();

    let mut vg_mixer = Mixer::derived(spec.seed, streams::VSTARG_MIXING);
    let mut dir_mixer = Mixer::derived(spec.seed, streams::DIRECTION_REDRAW);

    let draw_vg = |mixer: &mut Mixer| -> Result<(PairedBasis<T>, Vec<Complex<T>>)> {
        match &spec.replay {
            Some(r) => {
                let modes = replay_modes(plant, &r.vg, &r.wg)?;
                Ok((PairedBasis { v: r.vg.clone(), w: r.wg.clone(), modes: Vec::new(), redraws: 0 }, modes))
            }
            None => {
                let b = subspaces::vstar_g_with(plant, spec.free_pool.as_deref(), mixer)?;
                let modes = b.column_modes();
                Ok((b, modes))
            }
        }
    };

    let (mut vg, mut vg_modes) = draw_vg(&mut vg_mixer)?;
    let vg_span = vg.span(tol);
    let bases = solvability::rstar_j_at(plant, &spec.lambdas)?;
    let verdict = solvability::check_generalized(n, &vg_span, &bases, tol)?;
    let Some(delta) = verdict.delta.clone() else {
        let subsets: Vec<Vec<usize>> =
            verdict.failing_subsets.iter().map(|f| f.subset.iter().map(|j| j + 1).collect()).collect();
        return Err(Error::NotSolvable(format!("failing output subsets {:?}", subsets)));
    };

    let mut directions: Vec<DirectionPair<T>> = Vec::with_capacity(delta.len());
    for &j in &delta {
        let lambda = spec.lambdas[j];
        let replayed = spec.replay.as_ref().and_then(|r| r.directions.iter().find(|(k, _, _)| *k == j));
        let pair = match replayed {
            Some((_, v, w)) => {
                if v.len() != n || w.len() != plant.m() {
                    return Err(Error::InvalidReplay(format!("direction for output {} has the wrong size", j + 1)));
                }
                let mut x = DVector::zeros(n + plant.m());
                x.rows_mut(0, n).copy_from(v);
                x.rows_mut(n, plant.m()).copy_from(w);
                make_pair(&plant.sys, x, j, lambda)
            }
            None => direction_for_output(plant, j, lambda, &mut dir_mixer, spec.max_retries)?,
        };
        if pair.beta.abs() <= tol.absolute_floor || pair_residual(&plant.sys, &pair) > tol.residual_tol {
            return Err(Error::InvalidReplay(format!("direction for output {} does not solve the pencil equation", j + 1)));
        }
        directions.push(pair);
    }

    if directions.len() + vg.dim() != n {
        return Err(Error::RankDeficientAfterRetries { expected: n, achieved: directions.len() + vg.dim(), retries: 0 });
    }

    // V*g is re-drawn on a rank-deficient V; a last attempt also re-draws
    // the directions
    let mut redraws = 0;
    let (v, w) = loop {
        let v = numkernel::hcat(n, &[&columns(n, &directions, |d| &d.v), &vg.v]);
        let w = numkernel::hcat(plant.m(), &[&columns(plant.m(), &directions, |d| &d.w), &vg.w]);
        let rank = numkernel::orth(&v, tol.subspace_tol).ncols();
        if rank == n {
            break (v, w);
        }
        if redraws > spec.max_retries || spec.replay.is_some() {
            return Err(Error::RankDeficientAfterRetries { expected: n, achieved: rank, retries: redraws });
        }
        redraws += 1;
        if redraws <= spec.max_retries {
            (vg, vg_modes) = draw_vg(&mut vg_mixer)?;
        } else {
            for d in directions.iter_mut() {
                *d = redraw_direction(plant, d.output, d.mode, &mut dir_mixer, spec.max_retries)?;
            }
        }
    };

    let f = numkernel::solve_right(&w, &v).ok_or_else(|| Error::RankDeficientAfterRetries { expected: n, achieved: n - 1, retries: redraws })?;
    let spectrum = numkernel::eigenvalues(&(&plant.sys.a + &plant.sys.b * &f))?;

    let assigned = (0..plant.p())
        .map(|j| if delta.contains(&j) { OutputMode::Mode(spec.lambdas[j]) } else { OutputMode::Instantaneous })
        .collect();
    let result = FeedbackResult {
        f,
        x_ss,
        u_ss,
        reference: spec.reference.clone(),
        v,
        w,
        closed_loop_spectrum: spectrum,
        assigned,
        delta,
        directions,
        vg_modes,
        verdict,
        redraws,
    };
    check_invariants(plant, &result)?;
    Ok(result)
}

fn columns<T: Scalar>(rows: usize, directions: &[DirectionPair<T>], pick: impl Fn(&DirectionPair<T>) -> &DVector<T>) -> DMatrix<T> {
    if directions.is_empty() {
        return DMatrix::zeros(rows, 0);
    }
    DMatrix::from_columns(&directions.iter().map(|d| pick(d).clone()).collect::<Vec<_>>())
}

/// Relative closed-loop checks; any failure is an internal inconsistency.
pub fn check_invariants<T: Scalar>(plant: &Plant<T>, fb: &FeedbackResult<T>) -> Result<()> {
    let sys = &plant.sys;
    let tol = &plant.tol;
    let fail = |what: String| Err(Error::UnstableResult(what));
    let fscale = T::one() + numkernel::spectral_norm(&fb.f);

    let fv = &fb.f * &fb.v - &fb.w;
    if numkernel::max_abs(&fv) > tol.residual_tol * fscale * (T::one() + numkernel::max_abs(&fb.v)) {
        return fail(format!("F V - W = {:.3e}", to_f64(numkernel::max_abs(&fv))));
    }

    let expected: Vec<Complex<T>> =
        fb.directions.iter().map(|d| Complex::new(d.mode, T::zero())).chain(fb.vg_modes.iter().copied()).collect();
    if numkernel::match_spectra(&expected, &fb.closed_loop_spectrum, lit(1e-6)).is_none() {
        return fail(format!(
            "closed-loop spectrum {:?} does not match the assigned modes {:?}",
            fb.closed_loop_spectrum.iter().map(|z| (to_f64(z.re), to_f64(z.im))).collect::<Vec<_>>(),
            expected.iter().map(|z| (to_f64(z.re), to_f64(z.im))).collect::<Vec<_>>()
        ));
    }
    if let Some(bad) = fb.closed_loop_spectrum.iter().find(|z| !sys.domain.is_stable(**z)) {
        return fail(format!("closed-loop eigenvalue {:+.6e}{:+.6e}i is not stable", to_f64(bad.re), to_f64(bad.im)));
    }

    let out = fb.output_map(sys);
    let oscale = T::one() + numkernel::spectral_norm(&out);
    for (k, d) in fb.directions.iter().enumerate() {
        let mut e = &out * fb.v.column(k);
        e[d.output] -= d.beta;
        if e.norm() > tol.residual_tol * oscale * fb.v.column(k).norm() {
            return fail(format!("direction for output {} leaks into other outputs ({:.3e})", d.output + 1, to_f64(e.norm())));
        }
    }
    let k0 = fb.directions.len();
    for k in k0..fb.v.ncols() {
        let e = &out * fb.v.column(k);
        if e.norm() > tol.residual_tol * oscale * fb.v.column(k).norm() {
            return fail(format!("V*g column {} is visible at the output ({:.3e})", k - k0 + 1, to_f64(e.norm())));
        }
    }
    Ok(())
}

/// Closed-loop eigenvalue with the largest real part (continuous) or
/// modulus (discrete).
pub fn spectral_abscissa<T: Scalar>(domain: TimeDomain, spectrum: &[Complex<T>]) -> T {
    spectrum
        .iter()
        .map(|z| match domain {
            TimeDomain::Continuous => z.re,
            TimeDomain::Discrete => cabs(*z),
        })
        .fold(lit(f64::NEG_INFINITY), |a, b| a.max(b))
}
