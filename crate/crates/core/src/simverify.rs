//! Closed-loop simulation and the checks run on its traces: monotonicity,
//! the rate envelope and the single-mode fit of each tracking-error
//! component.
//!
//! A sampled trace can only certify non-strict monotonicity. Together with
//! a single-mode fit and a nonzero coefficient this implies strict
//! monotonicity, which is how reports should be read.

use nalgebra::{DMatrix, DVector};

use crate::numkernel::{self, expm::expm};
use crate::synthesis::{FeedbackResult, OutputMode};
use crate::sysmodel::{LtiSystem, TimeDomain};
use crate::{cabs, lit, to_f64, Error, Result, Scalar, TolerancePolicy};

/// Differences within this fraction of `max |ε_k|` count as ties.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;
/// Largest relative residual of an accepted single-mode fit.
pub const SINGLE_MODE_TOL: f64 = 1e-6;
/// Fewest samples [`fit_single_mode`] accepts.
pub const MIN_FIT_SAMPLES: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceMetadata<T: Scalar> {
    pub domain: TimeDomain,
    pub x0: DVector<T>,
    pub reference: Vec<T>,
    pub assigned: Vec<OutputMode<T>>,
    /// Magnitude below which an output counts as identically zero: the
    /// absolute floor, raised to the rounding level of `(C+DF) ξ`.
    pub epsilon_floor: T,
}

/// Sampled error state `ξ = x - x_ss` and tracking error `ε = (C+DF) ξ`,
/// one column per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationTrace<T: Scalar> {
    pub times: Vec<T>,
    pub xi: DMatrix<T>,
    pub epsilon: DMatrix<T>,
    pub metadata: TraceMetadata<T>,
}

impl<T: Scalar> SimulationTrace<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn outputs(&self) -> usize {
        self.epsilon.nrows()
    }

    fn max_abs_row(&self, k: usize) -> T {
        self.epsilon.row(k).iter().fold(T::zero(), |a, x| a.max(x.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions<T> {
    /// Seconds in continuous time, steps in discrete time.
    pub horizon: T,
    pub samples: usize,
}

impl<T: Scalar> SimOptions<T> {
    /// `8/|ρ|` seconds over 400 samples, or 200 steps.
    pub fn default_for(domain: TimeDomain, rho: T) -> Self {
        match domain {
            TimeDomain::Continuous => Self { horizon: lit::<T>(8.0) / rho.abs(), samples: 400 },
            TimeDomain::Discrete => Self { horizon: lit(200.0), samples: 201 },
        }
    }
}

/// Convergence rate bound: `ρ < 0` in continuous time, `ρ ∈ (0, 1)` in
/// discrete time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateSpec<T> {
    pub rho: T,
    pub domain: TimeDomain,
}

impl<T: Scalar> RateSpec<T> {
    pub fn new(rho: T, domain: TimeDomain) -> Result<Self> {
        let ok = match domain {
            TimeDomain::Continuous => rho < T::zero(),
            TimeDomain::Discrete => rho > T::zero() && rho < T::one(),
        };
        if !ok || !rho.is_finite() {
            return Err(Error::InvalidSpec(format!("rate {} is outside the {} range", to_f64(rho), domain.name())));
        }
        Ok(Self { rho, domain })
    }
}

/// Slowest assigned mode, or the closed-loop spectral abscissa when every
/// output is instantaneous.
pub fn default_rho<T: Scalar>(fb: &FeedbackResult<T>, domain: TimeDomain) -> T {
    let slowest = fb
        .assigned
        .iter()
        .filter_map(|m| match m {
            OutputMode::Mode(l) => Some(*l),
            OutputMode::Instantaneous => None,
        })
        .fold(None, |acc: Option<T>, l| Some(acc.map_or(l, |a| a.max(l))));
    let rho = slowest.unwrap_or_else(|| crate::synthesis::spectral_abscissa(domain, &fb.closed_loop_spectrum));
    match domain {
        // a zero mode would give an infinite horizon
        TimeDomain::Continuous => rho.min(lit(-1e-3)),
        TimeDomain::Discrete => rho.max(lit(1e-3)),
    }
}

/// Simulates `ξ' = (A+BF) ξ` (or `ξ⁺ = (A+BF) ξ`) from `ξ(0) = x0 - x_ss`.
pub fn simulate<T: Scalar>(
    sys: &LtiSystem<T>,
    fb: &FeedbackResult<T>,
    x0: &DVector<T>,
    options: SimOptions<T>,
    tol: &TolerancePolicy<T>,
) -> Result<SimulationTrace<T>> {
    if x0.len() != sys.n() {
        return Err(Error::DimensionMismatch(format!("x0 has {} entries, expected {}", x0.len(), sys.n())));
    }
    let xi0 = x0 - &fb.x_ss;
    let mut trace = simulate_closed_loop(&fb.closed_loop(sys), &fb.output_map(sys), &xi0, sys.domain, options, tol)?;
    trace.metadata.x0 = x0.clone();
    trace.metadata.reference = fb.reference.clone();
    trace.metadata.assigned = fb.assigned.clone();
    Ok(trace)
}

/// Simulation from explicit closed-loop matrices and initial error state.
pub fn simulate_closed_loop<T: Scalar>(
    acl: &DMatrix<T>,
    out: &DMatrix<T>,
    xi0: &DVector<T>,
    domain: TimeDomain,
    options: SimOptions<T>,
    tol: &TolerancePolicy<T>,
) -> Result<SimulationTrace<T>> {
    let n = acl.nrows();
    if acl.ncols() != n || out.ncols() != n || xi0.len() != n {
        return Err(Error::DimensionMismatch("closed-loop matrices and initial state disagree".into()));
    }
    if options.samples < 2 {
        return Err(Error::InvalidSpec("at least two samples are needed".into()));
    }
    if !(options.horizon > T::zero()) || !options.horizon.is_finite() {
        return Err(Error::InvalidSpec("horizon must be positive and finite".into()));
    }
    let spectrum = numkernel::eigenvalues(acl)?;
    if let Some(bad) = spectrum.iter().find(|z| !domain.is_stable(**z)) {
        return Err(Error::UnstableClosedLoop(to_f64(match domain {
            TimeDomain::Continuous => bad.re,
            TimeDomain::Discrete => cabs(*bad),
        })));
    }

    let steps = options.samples - 1;
    let (phi, dt) = match domain {
        TimeDomain::Continuous => {
            let dt = options.horizon / lit(steps as f64);
            (expm(&(acl * dt))?, dt)
        }
        TimeDomain::Discrete => {
            let stride = (to_f64(options.horizon) / steps as f64).round().max(1.0) as u32;
            (acl.pow(stride), lit(stride as f64))
        }
    };

    let mut xi = DMatrix::zeros(n, options.samples);
    xi.set_column(0, xi0);
    for k in 1..options.samples {
        let next = &phi * xi.column(k - 1);
        xi.set_column(k, &next);
    }
    let epsilon = out * &xi;
    let times = (0..options.samples).map(|k| dt * lit(k as f64)).collect();

    let xi_scale = numkernel::max_abs(&xi) * (T::one() + numkernel::spectral_norm(out));
    let epsilon_floor = tol.absolute_floor.max(tol.residual_tol * xi_scale);
    Ok(SimulationTrace {
        times,
        xi,
        epsilon,
        metadata: TraceMetadata { domain, x0: xi0.clone(), reference: Vec::new(), assigned: Vec::new(), epsilon_floor },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Monotonicity {
    Monotone,
    /// First sample index at which the direction reverses or `|ε|` grows.
    NotMonotone { at: usize },
    Instantaneous,
}

impl Monotonicity {
    /// Monotone or identically zero.
    pub fn passed(&self) -> bool {
        !matches!(self, Monotonicity::NotMonotone { .. })
    }
}

/// Per output: successive differences never change sign beyond
/// `tie_tol · max |ε_k|` and `|ε_k|` never grows beyond it.
pub fn check_monotonic<T: Scalar>(trace: &SimulationTrace<T>, tie_tol: T) -> Vec<Monotonicity> {
    (0..trace.outputs())
        .map(|k| {
            let peak = trace.max_abs_row(k);
            if peak <= trace.metadata.epsilon_floor {
                return Monotonicity::Instantaneous;
            }
            let tie = tie_tol * peak;
            let e = trace.epsilon.row(k);
            let mut direction = 0i8;
            for t in 1..e.len() {
                let d = e[t] - e[t - 1];
                if e[t].abs() > e[t - 1].abs() + tie {
                    return Monotonicity::NotMonotone { at: t };
                }
                if d.abs() <= tie {
                    continue;
                }
                let s = if d > T::zero() { 1 } else { -1 };
                if direction == 0 {
                    direction = s;
                } else if s != direction {
                    return Monotonicity::NotMonotone { at: t };
                }
            }
            Monotonicity::Monotone
        })
        .collect()
}

/// Per output: `|ε_k(t)| ≤ β_k e^{ρt}` (or `β_k ρ^t`) at every sample with
/// `β_k = |ε_k(0)| (1 + tol)`, plus an absolute slack of `tol · max |ε_k|`
/// for rounding on fully decayed samples.
pub fn check_rate<T: Scalar>(trace: &SimulationTrace<T>, rate: RateSpec<T>, tol: T) -> Vec<bool> {
    (0..trace.outputs())
        .map(|k| {
            let peak = trace.max_abs_row(k);
            if peak <= trace.metadata.epsilon_floor {
                return true;
            }
            let beta = trace.epsilon[(k, 0)].abs() * (T::one() + tol);
            trace.times.iter().enumerate().all(|(i, &t)| {
                let envelope = match rate.domain {
                    TimeDomain::Continuous => (rate.rho * t).exp(),
                    TimeDomain::Discrete => rate.rho.powf(t),
                };
                trace.epsilon[(k, i)].abs() <= beta * envelope + tol * peak
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModeFit<T> {
    /// `ε_k ≈ γ e^{λ t}` (continuous) or `γ λ^t` (discrete).
    Fitted {
        lambda: T,
        gamma: T,
        /// RMS deviation from the fitted mode over `max |ε_k|`; 1 when the
        /// output changes sign.
        relative_residual: T,
    },
    Instantaneous,
}

impl<T: Scalar> ModeFit<T> {
    pub fn residual(&self) -> T {
        match self {
            ModeFit::Fitted { relative_residual, .. } => *relative_residual,
            ModeFit::Instantaneous => T::zero(),
        }
    }
}

/// Least-squares fit of `log |ε_k|` against time, weighted by `ε_k²` so
/// that samples decayed to rounding level do not bias the slope.
pub fn fit_single_mode<T: Scalar>(trace: &SimulationTrace<T>) -> Result<Vec<ModeFit<T>>> {
    if trace.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData(format!("{} samples, at least {} needed", trace.len(), MIN_FIT_SAMPLES)));
    }
    let tie: T = lit(DEFAULT_TIE_TOL);
    Ok((0..trace.outputs())
        .map(|k| {
            let peak = trace.max_abs_row(k);
            let floor = trace.metadata.epsilon_floor;
            if peak <= floor {
                return ModeFit::Instantaneous;
            }
            let e = trace.epsilon.row(k);
            let above: Vec<usize> = (0..e.len()).filter(|&i| e[i].abs() > floor).collect();
            let significant = |i: &&usize| e[**i].abs() > tie * peak;
            let sign_change = above.iter().filter(significant).any(|&i| e[i].signum() != e[above[0]].signum());

            let (mut sw, mut st, mut sy, mut stt, mut sty) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
            for &i in &above {
                let w = (e[i] / peak) * (e[i] / peak);
                let t = trace.times[i];
                let y = e[i].abs().ln();
                sw += w;
                st += w * t;
                sy += w * y;
                stt += w * t * t;
                sty += w * t * y;
            }
            let det = sw * stt - st * st;
            let (slope, intercept) = if above.len() >= 2 && det > T::zero() {
                let b = (sw * sty - st * sy) / det;
                (b, (sy - b * st) / sw)
            } else {
                (lit(f64::NEG_INFINITY), e[above[0]].abs().ln())
            };
            let gamma = e[above[0]].signum() * intercept.exp();
            let model = |t: T| if slope.is_finite() { gamma * (slope * t).exp() } else if t == T::zero() { gamma } else { T::zero() };
            let rss = (0..e.len()).fold(T::zero(), |a, i| {
                let r = e[i] - model(trace.times[i]);
                a + r * r
            });
            let rms = (rss / lit(e.len() as f64)).sqrt() / peak;
            let lambda = match trace.metadata.domain {
                TimeDomain::Continuous => slope,
                TimeDomain::Discrete => slope.exp(),
            };
            ModeFit::Fitted { lambda, gamma, relative_residual: if sign_change { T::one() } else { rms } }
        })
        .collect())
}

/// All checks for one output of one trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutputReport<T> {
    pub mode: Option<OutputMode<T>>,
    pub monotonicity: Monotonicity,
    pub rate_ok: bool,
    pub fit: ModeFit<T>,
    /// Monotone, single-mode, and the fitted mode equals the assigned one.
    pub single_mode_ok: bool,
}

/// Runs every check on a trace. `rate` of `None` skips the envelope check
/// (reported as satisfied).
pub fn verify_trace<T: Scalar>(trace: &SimulationTrace<T>, rate: Option<RateSpec<T>>) -> Result<Vec<OutputReport<T>>> {
    let tie: T = lit(DEFAULT_TIE_TOL);
    let mono = check_monotonic(trace, tie);
    let rate_ok = match rate {
        Some(r) => check_rate(trace, r, tie),
        None => vec![true; trace.outputs()],
    };
    let fits = fit_single_mode(trace)?;
    Ok((0..trace.outputs())
        .map(|k| {
            let mode = trace.metadata.assigned.get(k).copied();
            let single_mode_ok = mono[k].passed()
                && match (fits[k], mode) {
                    (ModeFit::Instantaneous, _) => true,
                    (ModeFit::Fitted { lambda, relative_residual, .. }, Some(OutputMode::Mode(l))) => {
                        relative_residual <= lit(SINGLE_MODE_TOL) && (lambda - l).abs() <= lit::<T>(SINGLE_MODE_TOL) * (T::one() + l.abs())
                    }
                    (ModeFit::Fitted { relative_residual, .. }, None) => relative_residual <= lit(SINGLE_MODE_TOL),
                    // a visible error on an output that should be instantaneous
                    (ModeFit::Fitted { .. }, Some(OutputMode::Instantaneous)) => false,
                };
            OutputReport { mode, monotonicity: mono[k], rate_ok: rate_ok[k], fit: fits[k], single_mode_ok }
        })
        .collect())
}

#[cfg(test)]
mod tests;
