//! File formats: trace and gain CSV, JSON reports for analysis, synthesis
//! and verification, and the replay input file. Output indices are 1-based
//! in every file.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::numkernel::exact::{parse_rational, rational_to_f64};
use crate::simverify::{ModeFit, OutputReport, SimulationTrace};
use crate::solvability::{self, SolvabilityVerdict};
use crate::synthesis::{FeedbackResult, OutputMode, Replay};
use crate::sysmodel::{matrix_to_rows, AssumptionReport, Plant};
use crate::{subspaces, to_f64, Error, Result, Scalar};

/// Decimal with 15 significant digits.
pub fn fmt15(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    format!("{x:.14e}")
}

/// Header `t,eps_1..eps_p,xi_1..xi_n`, one row per sample.
pub fn trace_csv<T: Scalar>(trace: &SimulationTrace<T>) -> String {
    let (p, n) = (trace.epsilon.nrows(), trace.xi.nrows());
    let mut out = String::from("t");
    for k in 1..=p {
        write!(out, ",eps_{k}").unwrap();
    }
    for k in 1..=n {
        write!(out, ",xi_{k}").unwrap();
    }
    out.push('\n');
    for (i, &t) in trace.times.iter().enumerate() {
        out.push_str(&fmt15(to_f64(t)));
        for k in 0..p {
            write!(out, ",{}", fmt15(to_f64(trace.epsilon[(k, i)]))).unwrap();
        }
        for k in 0..n {
            write!(out, ",{}", fmt15(to_f64(trace.xi[(k, i)]))).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Long format `t,series,value` for plotting tools.
pub fn trace_long_csv<T: Scalar>(trace: &SimulationTrace<T>) -> String {
    let mut out = String::from("t,series,value\n");
    for (i, &t) in trace.times.iter().enumerate() {
        let t = fmt15(to_f64(t));
        for k in 0..trace.epsilon.nrows() {
            writeln!(out, "{t},eps_{},{}", k + 1, fmt15(to_f64(trace.epsilon[(k, i)]))).unwrap();
        }
        for k in 0..trace.xi.nrows() {
            writeln!(out, "{t},xi_{},{}", k + 1, fmt15(to_f64(trace.xi[(k, i)]))).unwrap();
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceJson {
    pub domain: &'static str,
    pub x0: Vec<f64>,
    pub reference: Vec<f64>,
    pub modes: Vec<ModeJson>,
    pub times: Vec<f64>,
    /// One row per output.
    pub epsilon: Vec<Vec<f64>>,
    /// One row per state.
    pub xi: Vec<Vec<f64>>,
}

pub fn trace_json<T: Scalar>(trace: &SimulationTrace<T>) -> TraceJson {
    TraceJson {
        domain: trace.metadata.domain.name(),
        x0: vec_f64(&trace.metadata.x0),
        reference: trace.metadata.reference.iter().map(|x| to_f64(*x)).collect(),
        modes: trace.metadata.assigned.iter().map(|m| ModeJson::from(*m)).collect(),
        times: trace.times.iter().map(|x| to_f64(*x)).collect(),
        epsilon: matrix_to_rows(&trace.epsilon),
        xi: matrix_to_rows(&trace.xi),
    }
}

/// `m` rows by `n` columns.
pub fn gain_csv<T: Scalar>(f: &DMatrix<T>) -> String {
    let mut out = String::new();
    for row in f.row_iter() {
        let cells: Vec<String> = row.iter().map(|x| fmt15(to_f64(*x))).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Assigned mode or the string `"instantaneous"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModeJson {
    Mode(f64),
    Tag(InstantTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstantTag {
    Instantaneous,
}

impl<T: Scalar> From<OutputMode<T>> for ModeJson {
    fn from(m: OutputMode<T>) -> Self {
        match m {
            OutputMode::Mode(l) => ModeJson::Mode(to_f64(l)),
            OutputMode::Instantaneous => ModeJson::Tag(InstantTag::Instantaneous),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ComplexJson {
    pub re: f64,
    pub im: f64,
}

impl<T: Scalar> From<Complex<T>> for ComplexJson {
    fn from(z: Complex<T>) -> Self {
        Self { re: to_f64(z.re), im: to_f64(z.im) }
    }
}

fn vec_f64<T: Scalar>(v: &DVector<T>) -> Vec<f64> {
    v.iter().map(|x| to_f64(*x)).collect()
}

fn one_based(v: &[usize]) -> Vec<usize> {
    v.iter().map(|j| j + 1).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FailingSubsetJson {
    pub subset: Vec<usize>,
    pub achieved: usize,
    pub required: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputVerdictJson {
    pub output: usize,
    pub mode: ModeJson,
    pub monotone: Option<bool>,
    pub rate_ok: Option<bool>,
    pub fit_residual: Option<f64>,
    pub fitted_mode: Option<f64>,
}

/// Solvability verdict with, after verification, the per-output checks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerdictJson {
    pub solvable: bool,
    pub failing_subsets: Vec<FailingSubsetJson>,
    pub h: usize,
    pub delta: Option<Vec<usize>>,
    pub global_form: Option<bool>,
    pub per_output: Vec<OutputVerdictJson>,
    /// How the sampled checks certify strict monotonicity.
    pub certification: Option<&'static str>,
}

pub const CERTIFICATION: &str =
    "non-strict monotonicity on the samples together with a single-mode fit with nonzero coefficient, which implies strict monotonicity";

impl VerdictJson {
    pub fn from_verdict(v: &SolvabilityVerdict) -> Self {
        Self {
            solvable: v.solvable,
            failing_subsets: v
                .failing_subsets
                .iter()
                .map(|f| FailingSubsetJson { subset: one_based(&f.subset), achieved: f.achieved, required: f.required })
                .collect(),
            h: v.h,
            delta: v.delta.as_deref().map(one_based),
            global_form: v.global_form,
            per_output: Vec::new(),
            certification: None,
        }
    }

    /// Merges per-trace reports: an output passes only if it passes on
    /// every trace; the residual is the worst one.
    pub fn with_reports<T: Scalar>(mut self, modes: &[OutputMode<T>], reports: &[Vec<OutputReport<T>>]) -> Self {
        self.per_output = modes
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let per: Vec<&OutputReport<T>> = reports.iter().filter_map(|r| r.get(k)).collect();
                let any = !per.is_empty();
                let fitted = per.iter().find_map(|r| match r.fit {
                    ModeFit::Fitted { lambda, .. } => Some(to_f64(lambda)),
                    ModeFit::Instantaneous => None,
                });
                OutputVerdictJson {
                    output: k + 1,
                    mode: ModeJson::from(*m),
                    monotone: any.then(|| per.iter().all(|r| r.monotonicity.passed())),
                    rate_ok: any.then(|| per.iter().all(|r| r.rate_ok)),
                    fit_residual: any.then(|| per.iter().map(|r| to_f64(r.fit.residual())).fold(0.0, f64::max)),
                    fitted_mode: fitted,
                }
            })
            .collect();
        if !reports.is_empty() {
            self.certification = Some(CERTIFICATION);
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectionJson {
    pub output: usize,
    pub mode: f64,
    pub beta: f64,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeedbackJson {
    pub gain: Vec<Vec<f64>>,
    pub x_ss: Vec<f64>,
    pub u_ss: Vec<f64>,
    pub reference: Vec<f64>,
    pub modes: Vec<ModeJson>,
    pub closed_loop_spectrum: Vec<ComplexJson>,
    pub vg_modes: Vec<ComplexJson>,
    pub directions: Vec<DirectionJson>,
    pub v: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub redraws: usize,
    pub verdict: VerdictJson,
}

impl FeedbackJson {
    pub fn new<T: Scalar>(fb: &FeedbackResult<T>) -> Self {
        Self {
            gain: matrix_to_rows(&fb.f),
            x_ss: vec_f64(&fb.x_ss),
            u_ss: vec_f64(&fb.u_ss),
            reference: fb.reference.iter().map(|x| to_f64(*x)).collect(),
            modes: fb.assigned.iter().map(|m| ModeJson::from(*m)).collect(),
            closed_loop_spectrum: fb.closed_loop_spectrum.iter().map(|z| ComplexJson::from(*z)).collect(),
            vg_modes: fb.vg_modes.iter().map(|z| ComplexJson::from(*z)).collect(),
            directions: fb
                .directions
                .iter()
                .map(|d| DirectionJson { output: d.output + 1, mode: to_f64(d.mode), beta: to_f64(d.beta), v: vec_f64(&d.v), w: vec_f64(&d.w) })
                .collect(),
            v: matrix_to_rows(&fb.v),
            w: matrix_to_rows(&fb.w),
            redraws: fb.redraws,
            verdict: VerdictJson::from_verdict(&fb.verdict),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZeroJson {
    pub re: f64,
    pub im: f64,
    pub geometric_multiplicity: usize,
    pub algebraic_multiplicity: usize,
    pub minimum_phase: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubspaceDims {
    pub rstar: usize,
    /// `R*_j`, in output order.
    pub rstar_j: Vec<usize>,
    pub vstar_g: usize,
    pub vstar_g_modes: Vec<ComplexJson>,
}

/// Structural analysis of a plant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalysisJson {
    pub domain: &'static str,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub normal_rank: usize,
    pub zeros: Vec<ZeroJson>,
    pub audit: AssumptionReport,
    pub dims: Option<SubspaceDims>,
    pub lambda_free: Option<VerdictJson>,
    pub lambda_tuple: Option<VerdictJson>,
}

/// Zeros, audit, subspace dimensions and verdicts. The subspaces are only
/// computed when the audit passes.
pub fn analysis<T: Scalar>(plant: &Plant<T>, lambdas: Option<&[T]>) -> Result<AnalysisJson> {
    let audit = plant.audit();
    let zeros = plant
        .zeros
        .iter()
        .map(|z| ZeroJson {
            re: to_f64(z.value.re),
            im: to_f64(z.value.im),
            geometric_multiplicity: z.geometric_multiplicity,
            algebraic_multiplicity: z.algebraic_multiplicity,
            minimum_phase: z.is_minimum_phase,
        })
        .collect();
    let mut out = AnalysisJson {
        domain: plant.domain().name(),
        n: plant.n(),
        m: plant.m(),
        p: plant.p(),
        normal_rank: plant.normal_rank,
        zeros,
        audit: audit.clone(),
        dims: None,
        lambda_free: None,
        lambda_tuple: None,
    };
    if !audit.passed() {
        return Ok(out);
    }
    let rstar = subspaces::rstar(plant, None, None)?;
    let vg = subspaces::vstar_g(plant, None)?;
    let rstar_j = solvability::rstar_j(plant)?;
    out.dims = Some(SubspaceDims {
        rstar: rstar.dim(),
        rstar_j: rstar_j.iter().map(|b| b.dim()).collect(),
        vstar_g: vg.dim(),
        vstar_g_modes: vg.column_modes().into_iter().map(ComplexJson::from).collect(),
    });
    let span = vg.span(&plant.tol);
    out.lambda_free = Some(VerdictJson::from_verdict(&solvability::check_lambda_free(plant.n(), &span, &rstar_j, &plant.tol)?));
    if let Some(l) = lambdas {
        out.lambda_tuple = Some(VerdictJson::from_verdict(&solvability::check_lambda_tuple(plant, &span, l)?));
    }
    Ok(out)
}

/// Rounded to nine decimals for display.
fn short(x: f64) -> f64 {
    let r = (x * 1e9).round() / 1e9;
    if r == 0.0 { 0.0 } else { r }
}

/// Plain-text summary of an analysis.
pub fn analysis_text(a: &AnalysisJson) -> String {
    let mut out = String::new();
    writeln!(out, "{} time, n = {}, m = {}, p = {}, normal rank {}", a.domain, a.n, a.m, a.p, a.normal_rank).unwrap();
    let zeros: Vec<String> = a
        .zeros
        .iter()
        .map(|z| {
            let v = if z.im == 0.0 { format!("{}", short(z.re)) } else { format!("{}{:+}i", short(z.re), short(z.im)) };
            format!("{v}{}", if z.minimum_phase { " (min-phase)" } else { "" })
        })
        .collect();
    writeln!(out, "invariant zeros: {{{}}}", zeros.join(", ")).unwrap();
    writeln!(
        out,
        "assumptions: right invertible {}, stabilizable {}, no zero at tracking frequency {}, distinct min-phase zeros {}",
        a.audit.right_invertible, a.audit.stabilizable, a.audit.no_zero_at_tracking_frequency, a.audit.distinct_min_phase_zeros
    )
    .unwrap();
    for d in &a.audit.details {
        writeln!(out, "  {d}").unwrap();
    }
    if let Some(dims) = &a.dims {
        writeln!(out, "dim R* = {}", dims.rstar).unwrap();
        for (j, d) in dims.rstar_j.iter().enumerate() {
            writeln!(out, "dim R*{} = {}", j + 1, d).unwrap();
        }
        writeln!(out, "dim V*g = {}", dims.vstar_g).unwrap();
    }
    for (name, v) in [("lambda-free", &a.lambda_free), ("lambda tuple", &a.lambda_tuple)] {
        if let Some(v) = v {
            write!(out, "{name}: {}", if v.solvable { "solvable" } else { "not solvable" }).unwrap();
            if let Some(delta) = &v.delta {
                write!(out, ", modes on outputs {delta:?}").unwrap();
            }
            if let Some(f) = v.failing_subsets.first() {
                write!(out, ", failing subset {:?} ({} < {})", f.subset, f.achieved, f.required).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// A number or a rational written as `"p/q"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Number(f64),
    Text(String),
}

impl Entry {
    pub fn value(&self) -> Result<f64> {
        match self {
            Entry::Number(x) => Ok(*x),
            Entry::Text(s) => parse_rational(s)
                .map(|r| rational_to_f64(&r))
                .ok_or_else(|| Error::InvalidReplay(format!("cannot parse {s:?} as a number"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionFile {
    /// 1-based.
    pub output: usize,
    pub v: Vec<Entry>,
    pub w: Vec<Entry>,
}

/// Replay input: `Vg` (n × h) and `Wg` (m × h) row-major, optional
/// direction pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ReplayFile {
    pub Vg: Vec<Vec<Entry>>,
    pub Wg: Vec<Vec<Entry>>,
    #[serde(default)]
    pub directions: Vec<DirectionFile>,
}

fn entries_matrix(rows: &[Vec<Entry>], name: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidReplay(format!("{name} has ragged rows")));
    }
    let mut m = DMatrix::zeros(rows.len(), cols);
    for (i, r) in rows.iter().enumerate() {
        for (j, e) in r.iter().enumerate() {
            m[(i, j)] = e.value()?;
        }
    }
    Ok(m)
}

fn entries_vector(v: &[Entry]) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(v.iter().map(Entry::value).collect::<Result<Vec<_>>>()?))
}

impl ReplayFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_replay(&self) -> Result<Replay<f64>> {
        let directions = self
            .directions
            .iter()
            .map(|d| {
                if d.output == 0 {
                    return Err(Error::InvalidReplay("direction outputs are 1-based".into()));
                }
                Ok((d.output - 1, entries_vector(&d.v)?, entries_vector(&d.w)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Replay { vg: entries_matrix(&self.Vg, "Vg")?, wg: entries_matrix(&self.Wg, "Wg")?, directions })
    }
}
