//! Subset-dimension conditions for globally monotonic tracking.
//!
//! For every set `S` of outputs the sum `V*g + Σ_{j∈S} R*_j` (or its
//! λ-dependent counterpart with `R*_j(λ_j)`) must have dimension at least
//! `n - p + |S|`. When `h = dim V*g` exceeds `n - p`, the family is taken
//! over a witness set `δ` of `n - h` outputs with threshold `h + |S|`; the
//! remaining outputs are tracked instantaneously.

use crate::numkernel::{self, streams, Basis, Mixer, TolerancePolicy};
use crate::subspaces::{self, PairedBasis, Selection};
use crate::sysmodel::Plant;
use crate::{to_f64, Error, Result, Scalar};

/// Largest number of outputs for which the `2^p` subsets are enumerated.
pub const MAX_OUTPUTS: usize = 20;
/// Failing subsets kept in a verdict.
pub const MAX_REPORTED: usize = 32;
/// Attempts of the λ perturbation loop.
pub const PERTURBATION_ATTEMPTS: usize = 10;

/// A subset of outputs (0-based) whose condition does not hold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FailingSubset {
    pub subset: Vec<usize>,
    pub achieved: usize,
    pub required: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolvabilityVerdict {
    pub solvable: bool,
    /// Smallest cardinality first, at most [`MAX_REPORTED`].
    pub failing_subsets: Vec<FailingSubset>,
    /// `dim V*g`.
    pub h: usize,
    /// Outputs given a mode; the others are instantaneous. `None` when no
    /// witness exists.
    pub delta: Option<Vec<usize>>,
    /// Verdict of the global form (all `S` with `|S| > h - (n - p)`,
    /// threshold `n - p + |S|`); only evaluated when `h > n - p`.
    pub global_form: Option<bool>,
}

/// Condition family over all subsets of `indices`, threshold
/// `base + |S|`. Returns the failing subsets, smallest first.
fn subset_family<T: Scalar>(
    vg: &Basis<T>,
    bases: &[Basis<T>],
    indices: &[usize],
    base: i64,
    tol: &TolerancePolicy<T>,
) -> Result<Vec<FailingSubset>> {
    let k = indices.len();
    let mut failing = Vec::new();
    for mask in 0u32..(1u32 << k) {
        let subset: Vec<usize> = (0..k).filter(|b| mask & (1 << b) != 0).map(|b| indices[b]).collect();
        let mut parts: Vec<&Basis<T>> = vec![vg];
        parts.extend(subset.iter().map(|&j| &bases[j]));
        let achieved = numkernel::subspace_sum_dim(&parts, tol)?;
        let required = base + subset.len() as i64;
        if (achieved as i64) < required {
            failing.push(FailingSubset { subset, achieved, required: required as usize });
        }
    }
    failing.sort_by(|a, b| a.subset.len().cmp(&b.subset.len()).then_with(|| a.subset.cmp(&b.subset)));
    Ok(failing)
}

fn guard(p: usize) -> Result<()> {
    if p > MAX_OUTPUTS {
        return Err(Error::TooManyOutputs { p, limit: MAX_OUTPUTS });
    }
    Ok(())
}

/// The family with threshold `n - p + |S|` over all outputs. `bases[j]`
/// is `R*_j` or `R*_j(λ_j)`.
pub fn check_family<T: Scalar>(n: usize, vg: &Basis<T>, bases: &[Basis<T>], tol: &TolerancePolicy<T>) -> Result<SolvabilityVerdict> {
    let p = bases.len();
    guard(p)?;
    let all: Vec<usize> = (0..p).collect();
    let mut failing = subset_family(vg, bases, &all, n as i64 - p as i64, tol)?;
    let solvable = failing.is_empty();
    failing.truncate(MAX_REPORTED);
    Ok(SolvabilityVerdict {
        solvable,
        failing_subsets: failing,
        h: vg.dim(),
        delta: solvable.then_some(all),
        global_form: None,
    })
}

/// λ-free conditions with `R*_j`.
pub fn check_lambda_free<T: Scalar>(n: usize, vg: &Basis<T>, rstar_j: &[Basis<T>], tol: &TolerancePolicy<T>) -> Result<SolvabilityVerdict> {
    check_generalized(n, vg, rstar_j, tol)
}

/// λ-dependent conditions with `R*_j(λ_j)` after validating the tuple.
pub fn check_lambda_tuple<T: Scalar>(plant: &Plant<T>, vg: &Basis<T>, lambdas: &[T]) -> Result<SolvabilityVerdict> {
    let bases = rstar_j_at(plant, lambdas)?;
    check_generalized(plant.n(), vg, &bases, &plant.tol)
}

/// Witness search over `δ` of size `n - h` in lexicographic order, with
/// the global form evaluated alongside as a cross-check. Reduces to
/// [`check_family`] when `h = n - p`.
pub fn check_generalized<T: Scalar>(n: usize, vg: &Basis<T>, bases: &[Basis<T>], tol: &TolerancePolicy<T>) -> Result<SolvabilityVerdict> {
    let p = bases.len();
    guard(p)?;
    let h = vg.dim();
    if h as i64 <= n as i64 - p as i64 {
        return check_family(n, vg, bases, tol);
    }
    let size = n.saturating_sub(h);
    let mut first_failure: Option<Vec<FailingSubset>> = None;
    let mut witness = None;
    for delta in combinations(p, size) {
        let failing = subset_family(vg, bases, &delta, h as i64, tol)?;
        if failing.is_empty() {
            witness = Some(delta);
            break;
        }
        first_failure.get_or_insert(failing);
    }
    let global = global_form(n, vg, bases, tol)?;
    let mut failing = if witness.is_some() { Vec::new() } else { first_failure.unwrap_or_default() };
    failing.truncate(MAX_REPORTED);
    Ok(SolvabilityVerdict { solvable: witness.is_some(), failing_subsets: failing, h, delta: witness, global_form: Some(global) })
}

fn global_form<T: Scalar>(n: usize, vg: &Basis<T>, bases: &[Basis<T>], tol: &TolerancePolicy<T>) -> Result<bool> {
    let p = bases.len();
    let excess = vg.dim() as i64 - (n as i64 - p as i64);
    let all: Vec<usize> = (0..p).collect();
    let failing = subset_family(vg, bases, &all, n as i64 - p as i64, tol)?;
    Ok(failing.iter().all(|f| f.subset.len() as i64 <= excess))
}

/// All `size`-subsets of `0..p` in lexicographic order.
pub fn combinations(p: usize, size: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, p: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..=p - left {
            cur.push(i);
            rec(i + 1, p, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if size <= p {
        rec(0, p, size, &mut Vec::new(), &mut out);
    }
    out
}

/// Rejects modes outside the stability region or on an invariant zero.
pub fn validate_lambdas<T: Scalar>(plant: &Plant<T>, lambdas: &[T]) -> Result<()> {
    if lambdas.len() != plant.p() {
        return Err(Error::DimensionMismatch(format!("{} modes given for {} outputs", lambdas.len(), plant.p())));
    }
    for &lambda in lambdas {
        if !lambda.is_finite() || !plant.domain().is_stable_real(lambda) {
            return Err(Error::UnstableLambda { lambda: to_f64(lambda), domain: plant.domain().name() });
        }
        if let Err(Error::FrequencyIsZero { .. }) = plant.check_not_zero(lambda) {
            let zero = plant
                .zeros
                .iter()
                .map(|z| z.value.re)
                .min_by(|a, b| (*a - lambda).abs().partial_cmp(&(*b - lambda).abs()).unwrap_or(std::cmp::Ordering::Equal))
                .unwrap_or(lambda);
            return Err(Error::LambdaAtZero { lambda: to_f64(lambda), zero: to_f64(zero) });
        }
    }
    Ok(())
}

/// `R*_j` for every output.
pub fn rstar_j<T: Scalar>(plant: &Plant<T>) -> Result<Vec<Basis<T>>> {
    (0..plant.p()).map(|j| Ok(subspaces::rstar(plant, Some(j), None)?.span(&plant.tol))).collect()
}

/// `R*_j(λ_j)` for every output.
pub fn rstar_j_at<T: Scalar>(plant: &Plant<T>, lambdas: &[T]) -> Result<Vec<Basis<T>>> {
    validate_lambdas(plant, lambdas)?;
    lambdas
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            let sel = Selection::new(plant, Some(j))?;
            Ok(subspaces::rstar_at_selection(&sel, l, &plant.tol)?.span(&plant.tol))
        })
        .collect()
}

/// Both verdicts for a plant: λ-free and, when a tuple is given, λ-tuple.
pub fn analyze<T: Scalar>(plant: &Plant<T>, vg: &PairedBasis<T>, lambdas: Option<&[T]>) -> Result<(SolvabilityVerdict, Option<SolvabilityVerdict>)> {
    let vg = vg.span(&plant.tol);
    let free = check_lambda_free(plant.n(), &vg, &rstar_j(plant)?, &plant.tol)?;
    let tuple = match lambdas {
        Some(l) => Some(check_lambda_tuple(plant, &vg, l)?),
        None => None,
    };
    Ok((free, tuple))
}

/// Outcome of the perturb-and-retry loop.
#[derive(Clone, Debug)]
pub struct Perturbed<T: Scalar> {
    pub lambdas: Vec<T>,
    pub verdict: SolvabilityVerdict,
    /// 0 when the original tuple already passed.
    pub attempts: usize,
}

/// Re-tests a failing tuple after random perturbations of growing radius
/// (1e-3, doubling, [`PERTURBATION_ATTEMPTS`] attempts). Perturbations move
/// each λ further inside the stability region.
pub fn perturb_until_solvable<T: Scalar>(plant: &Plant<T>, vg: &Basis<T>, lambdas: &[T]) -> Result<Perturbed<T>> {
    let mut mixer = Mixer::derived(plant.seed, streams::LAMBDA_PERTURBATION);
    let verdict = check_lambda_tuple(plant, vg, lambdas)?;
    if verdict.solvable {
        return Ok(Perturbed { lambdas: lambdas.to_vec(), verdict, attempts: 0 });
    }
    let mut last = verdict;
    let mut radius = 1e-3;
    for attempt in 1..=PERTURBATION_ATTEMPTS {
        let candidate: Vec<T> = lambdas
            .iter()
            .map(|&l| {
                let step: T = crate::lit(mixer.uniform(0.0, radius));
                match plant.domain() {
                    crate::TimeDomain::Continuous => l - step,
                    crate::TimeDomain::Discrete if l - step > T::zero() => l - step,
                    crate::TimeDomain::Discrete => l + step,
                }
            })
            .collect();
        radius *= 2.0;
        match check_lambda_tuple(plant, vg, &candidate) {
            Ok(v) if v.solvable => return Ok(Perturbed { lambdas: candidate, verdict: v, attempts: attempt }),
            Ok(v) => last = v,
            // a perturbed value landing on a zero is just a bad draw
            Err(Error::LambdaAtZero { .. }) | Err(Error::FrequencyIsZero { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::NotSolvable(format!(
        "no admissible perturbation of the modes within {} attempts; smallest failing subset {:?}",
        PERTURBATION_ATTEMPTS,
        last.failing_subsets.first().map(|f| f.subset.iter().map(|j| j + 1).collect::<Vec<_>>())
    )))
}
