//! Random plants with planted structure, the bundled worked example and a
//! statistical harness for the generic-rank claims.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numkernel::{self, streams, Mixer, TolerancePolicy};
use crate::synthesis::{synthesize, SynthesisSpec};
use crate::sysmodel::{LtiSystem, Plant, SystemFile, TimeDomain};
use crate::{lit, solvability, subspaces, Error, Result, Scalar};

/// The five-state, four-input, three-output worked example: zeros
/// {-6, 2, 3, 5}, uncontrollable but stabilisable at -6.
pub fn example1<T: Scalar>() -> LtiSystem<T> {
    let m = |r: usize, c: usize, v: &[f64]| DMatrix::from_row_slice(r, c, &v.iter().map(|x| lit::<T>(*x)).collect::<Vec<_>>());
    #[rustfmt::skip]
    let a = m(5, 5, &[
        -6.0, 0.0, 0.0, 0.0, 0.0,
        3.0, 3.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 2.0, 0.0, 2.0,
        -1.0, 0.0, 2.0, 0.0, 0.0,
        -2.0, 0.0, 0.0, 0.0, 2.0,
    ]);
    #[rustfmt::skip]
    let b = m(5, 4, &[
        0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, -3.0,
        0.0, 4.0, 2.0, 0.0,
        1.0, -1.0, 0.0, -1.0,
        0.0, -1.0, 0.0, 0.0,
    ]);
    #[rustfmt::skip]
    let c = m(3, 5, &[
        -1.0, 0.0, 0.0, 0.0, 0.0,
        3.0, 0.0, 0.0, 0.0, 9.0,
        1.0, 0.0, 0.0, 0.0, 0.0,
    ]);
    #[rustfmt::skip]
    let d = m(3, 4, &[
        0.0, 0.0, -2.0, 0.0,
        0.0, 3.0, -3.0, -3.0,
        0.0, 0.0, 2.0, -2.0,
    ]);
    LtiSystem::new(a, b, c, d, TimeDomain::Continuous).expect("worked example is well formed")
}

/// Requested shape and planted structure of a random plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub domain: TimeDomain,
    /// Conjugate-closed; each real zero costs one state, each pair two,
    /// unless it coincides with a planted uncontrollable mode.
    #[serde(default)]
    pub planted_zeros: Vec<(f64, f64)>,
    /// Stable real modes made uncontrollable from the input.
    #[serde(default)]
    pub planted_uncontrollable: Vec<f64>,
    pub seed: u64,
}

/// Attempts of [`generate`] before giving up.
pub const GENERATION_ATTEMPTS: usize = 20;

impl GeneratorSpec {
    pub fn new(n: usize, m: usize, p: usize, domain: TimeDomain, seed: u64) -> Self {
        Self { n, m, p, domain, planted_zeros: Vec::new(), planted_uncontrollable: Vec::new(), seed }
    }

    fn filtered_zeros(&self) -> Vec<(f64, f64)> {
        self.planted_zeros
            .iter()
            .filter(|(re, im)| !(*im == 0.0 && self.planted_uncontrollable.iter().any(|u| (u - re).abs() <= 1e-12 * (1.0 + re.abs()))))
            .copied()
            .collect()
    }

    /// States used by the zero filters and the uncontrollable block.
    fn planted_states(&self) -> usize {
        self.filtered_zeros().len() + self.planted_uncontrollable.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.p == 0 {
            return Err(Error::InvalidSpec("dimensions must be positive".into()));
        }
        if self.m < self.p {
            return Err(Error::InvalidSpec(format!("m = {} is below p = {}", self.m, self.p)));
        }
        if self.planted_states() > self.n {
            return Err(Error::InvalidSpec(format!("planted structure needs {} states, n = {}", self.planted_states(), self.n)));
        }
        for &(re, im) in &self.planted_zeros {
            if !re.is_finite() || !im.is_finite() {
                return Err(Error::InvalidSpec("planted zeros must be finite".into()));
            }
            if im != 0.0 && !self.planted_zeros.iter().any(|&(r2, i2)| r2 == re && i2 == -im) {
                return Err(Error::InvalidSpec(format!("planted zero {re}{im:+}i has no conjugate")));
            }
        }
        for &u in &self.planted_uncontrollable {
            if !self.domain.is_stable_real(u) {
                return Err(Error::InvalidSpec(format!("uncontrollable mode {u} is not stable")));
            }
        }
        Ok(())
    }
}

/// Random plant passing the assumption audit with the requested planted
/// zeros (output-side cascade of first- or second-order blocks) and
/// uncontrollable modes (block-triangular augmentation feeding the rest of
/// the state).
pub fn generate(spec: &GeneratorSpec) -> Result<LtiSystem<f64>> {
    spec.validate()?;
    let mut mixer = Mixer::derived(spec.seed, streams::GENERATOR);
    for _ in 0..GENERATION_ATTEMPTS {
        let sys = match draw(spec, &mut mixer) {
            Ok(sys) => sys,
            Err(_) => continue,
        };
        if accept(spec, &sys) {
            return Ok(sys);
        }
    }
    Err(Error::GenerationFailed(GENERATION_ATTEMPTS))
}

fn draw(spec: &GeneratorSpec, mixer: &mut Mixer) -> Result<LtiSystem<f64>> {
    let zeros = spec.filtered_zeros();
    let n0 = spec.n - spec.planted_states();
    let (m, p) = (spec.m, spec.p);
    let mut rand = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| mixer.uniform(-1.0, 1.0));

    let mut a = stable_part(rand(n0, n0), spec.domain);
    let mut b = rand(n0, m);
    let mut c = rand(p, n0);
    let d = rand(p, m);

    // zero filters on the outputs, cycling through them
    let mut pending: Vec<(f64, f64)> = zeros.iter().copied().filter(|z| z.1 >= 0.0).collect();
    pending.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    for (k, &(re, im)) in pending.iter().enumerate() {
        let j = k % p;
        let (fa, fb, fc) = if im == 0.0 {
            let q = stable_pole(spec.domain, re, &mut rand);
            (DMatrix::from_element(1, 1, q), DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, q - re))
        } else {
            // (s² - 2 re s + |z|²) / (s² + a1 s + a0) with stable poles
            let q1 = stable_pole(spec.domain, re, &mut rand);
            let q2 = stable_pole(spec.domain, re, &mut rand);
            let (a1, a0) = (-(q1 + q2), q1 * q2);
            let (b1, b0) = (-2.0 * re - a1, re * re + im * im - a0);
            (DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -a0, -a1]), DMatrix::from_row_slice(2, 1, &[0.0, 1.0]), DMatrix::from_row_slice(1, 2, &[b0, b1]))
        };
        let (nf, n) = (fa.nrows(), a.nrows());
        // filter driven by the current output j
        let mut a2 = DMatrix::zeros(n + nf, n + nf);
        a2.view_mut((0, 0), (n, n)).copy_from(&a);
        a2.view_mut((n, 0), (nf, n)).copy_from(&(&fb * c.row(j)));
        a2.view_mut((n, n), (nf, nf)).copy_from(&fa);
        let mut b2 = DMatrix::zeros(n + nf, m);
        b2.view_mut((0, 0), (n, m)).copy_from(&b);
        b2.view_mut((n, 0), (nf, m)).copy_from(&(&fb * d.row(j)));
        let mut c2 = c.clone().insert_columns(n, nf, 0.0);
        c2.view_mut((j, n), (1, nf)).copy_from(&fc);
        (a, b, c) = (a2, b2, c2);
    }

    // uncontrollable modes ahead of the rest of the state, as in the worked example
    for &mu in &spec.planted_uncontrollable {
        let n = a.nrows();
        let mut a2 = DMatrix::zeros(n + 1, n + 1);
        a2[(0, 0)] = mu;
        a2.view_mut((1, 0), (n, 1)).copy_from(&rand(n, 1));
        a2.view_mut((1, 1), (n, n)).copy_from(&a);
        let b2 = b.clone().insert_row(0, 0.0);
        let mut c2 = c.clone().insert_column(0, 0.0);
        c2.set_column(0, &rand(p, 1).column(0));
        (a, b, c) = (a2, b2, c2);
    }
    LtiSystem::new(a, b, c, d, spec.domain)
}

/// Shifts (continuous) or scales (discrete) a random matrix into the
/// stability region.
fn stable_part(r: DMatrix<f64>, domain: TimeDomain) -> DMatrix<f64> {
    let n = r.nrows();
    if n == 0 {
        return r;
    }
    let eig = numkernel::eigenvalues(&r).unwrap_or_default();
    match domain {
        TimeDomain::Continuous => {
            let abscissa = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
            let shift = abscissa.max(0.0) + 0.5;
            r - DMatrix::identity(n, n) * shift
        }
        TimeDomain::Discrete => {
            let radius = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if radius < 0.9 { r } else { r * (0.9 / radius) }
        }
    }
}

/// Filter pole at a safe distance from the planted zero.
fn stable_pole(domain: TimeDomain, zero: f64, rand: &mut impl FnMut(usize, usize) -> DMatrix<f64>) -> f64 {
    loop {
        let u = rand(1, 1)[(0, 0)];
        let q = match domain {
            TimeDomain::Continuous => -1.5 - 1.5 * u,
            TimeDomain::Discrete => 0.45 + 0.4 * u,
        };
        if (q - zero).abs() > 0.1 {
            return q;
        }
    }
}

fn accept(spec: &GeneratorSpec, sys: &LtiSystem<f64>) -> bool {
    let Ok(plant) = Plant::new(sys.clone(), TolerancePolicy::default(), spec.seed) else { return false };
    if !plant.audit().passed() {
        return false;
    }
    let near = |re: f64, im: f64| {
        plant.zeros.iter().any(|z| (z.value - Complex::new(re, im)).norm() <= 1e-6 * (1.0 + re.abs() + im.abs()))
    };
    spec.planted_zeros.iter().all(|&(re, im)| near(re, im)) && spec.planted_uncontrollable.iter().all(|&u| near(u, 0.0))
}

/// True when `mu` fails the PBH rank test of `(A, B)`.
pub fn is_uncontrollable(sys: &LtiSystem<f64>, mu: f64, tol: &TolerancePolicy<f64>) -> bool {
    let n = sys.n();
    let shifted = &sys.a - DMatrix::identity(n, n) * mu;
    numkernel::rank_of(&numkernel::hcat(n, &[&shifted, &sys.b]), tol) < n
}

/// Outcome of repeated randomized constructions on one plant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenericityStats {
    pub trials: usize,
    pub successes: usize,
    /// Rank-deficient draws, including those recovered by a retry.
    pub rank_deficiency_events: usize,
    /// Trials that failed outright.
    pub failing_seeds: Vec<u64>,
}

impl GenericityStats {
    pub fn success_fraction(&self) -> f64 {
        if self.trials == 0 {
            return 1.0;
        }
        self.successes as f64 / self.trials as f64
    }
}

/// Runs `trials` seeded draws of the `R*`/`R*_j` mixing, the `V*g` mixing
/// and a full synthesis with `lambdas`. With `adversarial > 0` the first
/// that many mixing attempts of every construction are zeroed.
pub fn genericity_trial<T: Scalar>(plant: &Plant<T>, lambdas: &[T], trials: usize, seed: u64, adversarial: usize) -> GenericityStats {
    let mut schedule = Mixer::derived(seed, streams::ENSEMBLE);
    let mut stats = GenericityStats { trials, successes: 0, rank_deficiency_events: 0, failing_seeds: Vec::new() };
    for _ in 0..trials {
        let s = schedule.next_seed();
        match one_trial(plant, lambdas, s, adversarial) {
            Ok(events) => {
                stats.successes += 1;
                stats.rank_deficiency_events += events;
            }
            Err(_) => {
                stats.rank_deficiency_events += 1;
                stats.failing_seeds.push(s);
            }
        }
    }
    stats
}

fn one_trial<T: Scalar>(plant: &Plant<T>, lambdas: &[T], seed: u64, adversarial: usize) -> Result<usize> {
    let mut events = 0;
    let outputs = std::iter::once(None).chain((0..plant.p()).map(Some));
    for (k, excluded) in outputs.enumerate() {
        let mut mixer = Mixer::adversarial(seed ^ ((k as u64) << 40), streams::RSTAR_MIXING, adversarial);
        events += subspaces::rstar_with(plant, excluded, None, &mut mixer)?.redraws;
    }
    let mut mixer = Mixer::adversarial(seed, streams::VSTARG_MIXING, adversarial);
    events += subspaces::vstar_g_with(plant, None, &mut mixer)?.redraws;
    let mut spec = SynthesisSpec::new(lambdas.to_vec(), vec![T::zero(); plant.p()]);
    spec.seed = seed;
    events += synthesize(plant, &spec)?.redraws;
    Ok(events)
}

/// SHA-256 of the canonical JSON form of a system.
pub fn fixture_hash<T: Scalar>(sys: &LtiSystem<T>) -> String {
    let json = serde_json::to_string(&SystemFile::from_system(sys)).expect("system serialises");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Named plant with the modes to assign.
pub type Fixture = (String, LtiSystem<f64>, Vec<f64>);

/// Report of one ensemble batch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchReport {
    pub seed: u64,
    pub fixtures: Vec<FixtureReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FixtureReport {
    pub name: String,
    pub hash: String,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub solvable: Option<bool>,
    pub stats: Option<GenericityStats>,
    pub error: Option<String>,
}

/// Genericity statistics for each named fixture. Fixtures whose modes are
/// unsolvable or whose audit fails are reported with `stats` absent.
pub fn run_batch(fixtures: &[Fixture], trials: usize, seed: u64) -> BatchReport {
    let reports = fixtures
        .iter()
        .map(|(name, sys, lambdas)| {
            let mut report = FixtureReport {
                name: name.clone(),
                hash: fixture_hash(sys),
                n: sys.n(),
                m: sys.m(),
                p: sys.p(),
                solvable: None,
                stats: None,
                error: None,
            };
            let outcome = Plant::new(sys.clone(), TolerancePolicy::default(), seed).and_then(|plant| {
                let vg = subspaces::vstar_g(&plant, None)?.span(&plant.tol);
                let verdict = solvability::check_lambda_tuple(&plant, &vg, lambdas)?;
                report.solvable = Some(verdict.solvable);
                if verdict.solvable {
                    report.stats = Some(genericity_trial(&plant, lambdas, trials, seed, 0));
                }
                Ok(())
            });
            if let Err(e) = outcome {
                report.error = Some(e.to_string());
            }
            report
        })
        .collect();
    BatchReport { seed, fixtures: reports }
}

/// Generated fixtures for a batch: `count` plants of increasing size with a
/// planted non-minimum-phase zero, modes spread over `[-3, -1]`.
pub fn generated_fixtures(count: usize, seed: u64) -> Result<Vec<Fixture>> {
    let mut schedule = Mixer::derived(seed, streams::ENSEMBLE);
    (0..count)
        .map(|k| {
            let p = 1 + k % 3;
            let m = p + (k / 3) % 2;
            let n = p + 2 + k % 4;
            let mut spec = GeneratorSpec::new(n, m, p, TimeDomain::Continuous, schedule.next_seed());
            spec.planted_zeros = vec![(2.0 + k as f64 * 0.25, 0.0)];
            let sys = generate(&spec)?;
            let lambdas = (0..p).map(|j| -1.0 - 2.0 * j as f64 / p.max(2) as f64 - 0.1 * (j % 2) as f64).collect();
            Ok((format!("generated-{k}"), sys, lambdas))
        })
        .collect()
}
