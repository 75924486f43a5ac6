mod config;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use monotrack::ensemble::{self, example1};
use monotrack::export::{self, FeedbackJson, ReplayFile, VerdictJson};
use monotrack::simverify::{self, OutputReport, RateSpec, SimOptions, SimulationTrace};
use monotrack::synthesis::{self, FeedbackResult, SynthesisSpec};
use monotrack::{Error, LtiSystem, Plant, Result, TolerancePolicy};
use nalgebra::DVector;
use serde::Serialize;

use config::{Cli, CommandKind, Job};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = cli.command.split();
    let outcome = Job::build(kind, args).and_then(|job| run(&job));
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(job: &Job) -> Result<u8> {
    fs::create_dir_all(&job.out)?;
    match job.command {
        CommandKind::Analyze => analyze(job),
        CommandKind::Synthesize => synthesize(job).map(|_| 0),
        CommandKind::Simulate => simulate(job).map(|_| 0),
        CommandKind::Verify => verify(job),
        CommandKind::Ensemble => batch(job),
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

// io errors carry no path on their own
fn at(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::InvalidSpec(format!("{}: {io}", path.display())),
        e => e,
    }
}

fn load_system(path: &Path) -> Result<LtiSystem<f64>> {
    LtiSystem::<f64>::load(path).map_err(|e| at(path, e))
}

fn tolerances(job: &Job) -> Result<TolerancePolicy<f64>> {
    let mut tol = TolerancePolicy::default();
    if let Some(t) = job.tol_rank {
        tol.relative_rank_tol = t;
    }
    tol.validate()?;
    Ok(tol)
}

fn plant(job: &Job) -> Result<Plant<f64>> {
    let sys = load_system(job.require_system()?)?;
    Plant::new(sys, tolerances(job)?, job.seed)
}

fn analyze(job: &Job) -> Result<u8> {
    let plant = plant(job)?;
    let a = export::analysis(&plant, job.lambdas.as_deref())?;
    write_json(&job.out.join("analysis.json"), &a)?;
    let text = export::analysis_text(&a);
    fs::write(job.out.join("analysis.txt"), &text)?;
    print!("{text}");
    if !a.audit.passed() {
        return Ok(3);
    }
    let verdict = a.lambda_tuple.as_ref().or(a.lambda_free.as_ref());
    Ok(if verdict.is_some_and(|v| !v.solvable) { 2 } else { 0 })
}

fn synthesize(job: &Job) -> Result<(Plant<f64>, FeedbackResult<f64>)> {
    let plant = plant(job)?;
    let reference = job.reference.clone().ok_or_else(|| Error::InvalidSpec("--reference is required".into()))?;
    let mut spec = SynthesisSpec::new(job.require_lambdas()?.to_vec(), reference);
    spec.seed = job.seed;
    if let Some(path) = &job.replay_vg {
        spec.replay = Some(ReplayFile::load(path).map_err(|e| at(path, e))?.to_replay()?);
    }
    let fb = synthesis::synthesize(&plant, &spec)?;
    write_json(&job.out.join("feedback.json"), &FeedbackJson::new(&fb))?;
    fs::write(job.out.join("gain.csv"), export::gain_csv(&fb.f))?;
    println!("gain written to {}", job.out.join("gain.csv").display());
    Ok((plant, fb))
}

fn initial_states(job: &Job, n: usize) -> Result<Vec<DVector<f64>>> {
    if job.x0.is_empty() {
        return Ok(vec![DVector::zeros(n)]);
    }
    job.x0
        .iter()
        .map(|x| {
            if x.len() != n {
                return Err(Error::InvalidSpec(format!("x0 has {} entries, the system has {n} states", x.len())));
            }
            Ok(DVector::from_column_slice(x))
        })
        .collect()
}

fn simulate(job: &Job) -> Result<(FeedbackResult<f64>, Vec<SimulationTrace<f64>>, RateSpec<f64>)> {
    let (plant, fb) = synthesize(job)?;
    let domain = plant.domain();
    let rate = RateSpec::new(job.rho.unwrap_or_else(|| simverify::default_rho(&fb, domain)), domain)?;
    let mut options = SimOptions::default_for(domain, rate.rho);
    if let Some(h) = job.horizon {
        options.horizon = h;
    }
    if let Some(s) = job.samples {
        options.samples = s;
    }
    let mut traces = Vec::new();
    for (k, x0) in initial_states(job, plant.n())?.iter().enumerate() {
        let trace = simverify::simulate(&plant.sys, &fb, x0, options, &plant.tol)?;
        let stem = format!("trace_{}", k + 1);
        fs::write(job.out.join(format!("{stem}.csv")), export::trace_csv(&trace))?;
        fs::write(job.out.join(format!("{stem}_long.csv")), export::trace_long_csv(&trace))?;
        write_json(&job.out.join(format!("{stem}.json")), &export::trace_json(&trace))?;
        traces.push(trace);
    }
    println!("{} trace(s) written to {}", traces.len(), job.out.display());
    Ok((fb, traces, rate))
}

fn verify(job: &Job) -> Result<u8> {
    let (fb, traces, rate) = simulate(job)?;
    let reports: Vec<Vec<OutputReport<f64>>> = traces.iter().map(|t| simverify::verify_trace(t, Some(rate))).collect::<Result<_>>()?;
    let verdict = VerdictJson::from_verdict(&fb.verdict).with_reports(&fb.assigned, &reports);
    write_json(&job.out.join("verdict.json"), &verdict)?;
    let mut ok = true;
    for (t, per) in reports.iter().enumerate() {
        for (k, r) in per.iter().enumerate() {
            let pass = r.monotonicity.passed() && r.rate_ok && r.single_mode_ok;
            ok &= pass;
            println!(
                "trace {} output {}: {} (monotone {}, rate {}, fit residual {:.3e})",
                t + 1,
                k + 1,
                if pass { "ok" } else { "FAILED" },
                r.monotonicity.passed(),
                r.rate_ok,
                r.fit.residual()
            );
        }
    }
    Ok(if ok { 0 } else { 4 })
}

fn batch(job: &Job) -> Result<u8> {
    let mut fixtures = Vec::new();
    match &job.system {
        Some(path) => fixtures.push(("system".to_string(), load_system(path)?, job.require_lambdas()?.to_vec())),
        None => fixtures.push(("example1".to_string(), example1(), job.lambdas.clone().unwrap_or(vec![-1.0, -2.0, -1.0]))),
    }
    fixtures.extend(ensemble::generated_fixtures(job.count, job.seed)?);
    let report = ensemble::run_batch(&fixtures, job.trials, job.seed);
    write_json(&job.out.join("ensemble.json"), &report)?;
    let mut ok = true;
    for f in &report.fixtures {
        match (&f.stats, &f.error) {
            (Some(s), _) => {
                ok &= s.successes == s.trials;
                println!("{}: {}/{} draws succeeded, {} rank-deficiency events", f.name, s.successes, s.trials, s.rank_deficiency_events);
            }
            (None, Some(e)) => {
                ok = false;
                println!("{}: {e}", f.name);
            }
            (None, None) => println!("{}: not solvable for its modes", f.name),
        }
    }
    Ok(if ok { 0 } else { 4 })
}
