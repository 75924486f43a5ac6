//! Acceptance criteria 1 to 10 on the bundled example plant and on seeded
//! random systems. The PASS/FAIL table goes to stderr.

use std::io::Write;
use std::time::Instant;

use monotrack::ensemble::{example1, genericity_trial};
use monotrack::numkernel::exact::{parse_rational, rational_to_f64};
use monotrack::numkernel::{self, containment_residual, match_spectra, subspace_sum_dim};
use monotrack::simverify::{self, ModeFit, RateSpec, SimOptions};
use monotrack::solvability;
use monotrack::subspaces::{self, rstar, rstar_recursive};
use monotrack::synthesis::{self, steady_state_residual, Replay, SynthesisSpec};
use monotrack::{Basis, LtiSystem, Mixer, Plant, TimeDomain, TolerancePolicy};
use nalgebra::{dvector, Complex, DMatrix, DVector};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn q(s: &str) -> f64 {
    rational_to_f64(&parse_rational(s).unwrap())
}

fn plant() -> Plant<f64> {
    Plant::with_defaults(example1()).unwrap()
}

const LAMBDAS: [f64; 3] = [-1.0, -2.0, -1.0];
const REFERENCE: [f64; 3] = [2.0, 2.0, 2.0];

fn x0s() -> [DVector<f64>; 2] {
    [dvector![0.1, -0.2, 0.1, 0.1, 0.0], dvector![0.6, 0.2, 0.2, -0.2, 1.0]]
}

fn reference_vg() -> DMatrix<f64> {
    DMatrix::from_row_slice(5, 2, &[-2.0, 0.0, q("2/3"), 0.0, q("-41/22"), 0.0, 0.0, 1.0, q("-1/11"), 0.0])
}

fn reference_wg() -> DMatrix<f64> {
    DMatrix::from_row_slice(4, 2, &[5.0, -6.0, q("36/11"), 0.0, 1.0, 0.0, 0.0, 0.0])
}

fn reference_directions() -> Vec<(usize, DVector<f64>, DVector<f64>)> {
    let stacked = [
        (["0", "-27/4", "20", "-29", "-3", "-29", "-9", "-9", "-9"], 18.0),
        (["0", "0", "-9/2", "26/5", "1", "13/5", "4", "0", "0"], 21.0),
        (["0", "-27/4", "7", "-55/4", "-3/2", "-55/4", "-9/2", "0", "-9"], 18.0),
    ];
    stacked
        .iter()
        .enumerate()
        .map(|(j, (x, s))| {
            let x: Vec<f64> = x.iter().map(|e| q(e) / s).collect();
            (j, DVector::from_column_slice(&x[..5]), DVector::from_column_slice(&x[5..]))
        })
        .collect()
}

fn reference_gain() -> DMatrix<f64> {
    let rows = [
        ["68419/8250", "802/125", "-1121/125", "-6", "-1639/250"],
        ["-5351/2475", "-16/75", "6/25", "0", "127/25"],
        ["5537/4950", "-12/225", "-36/25", "0", "-162/25"],
        ["4/9", "4/3", "0", "0", "0"],
    ];
    DMatrix::from_fn(4, 5, |i, j| q(rows[i][j]))
}

fn unit_span(idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(5, idx.len(), |i, k| if i == idx[k] { 1.0 } else { 0.0 })
}

fn same_span(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    containment_residual(a, b, 1e-10).max(containment_residual(b, a, 1e-10))
}

fn criterion_1() -> Outcome {
    let p = plant();
    let got: Vec<f64> = p.zeros.iter().map(|z| z.value.re).collect();
    ensure(got.len() == 4, format!("zeros {got:?}"))?;
    ensure(p.zeros.iter().all(|z| z.value.im == 0.0), "complex zero")?;
    let dev = got.iter().zip([-6.0, 2.0, 3.0, 5.0]).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    ensure(dev <= 1e-6, format!("max deviation {dev:e}"))?;
    let kernel = numkernel::nullspace(&p.sys.rosenbrock_real(-6.0), &p.tol).dim();
    ensure(kernel == 2, format!("pencil kernel at -6 has dimension {kernel}"))?;
    Ok(format!("zeros {{-6, 2, 3, 5}} within {dev:.1e}, pencil kernel at -6 of dim 2"))
}

fn criterion_2() -> Outcome {
    let p = plant();
    let vg = subspaces::vstar_g(&p, None).map_err(|e| e.to_string())?;
    ensure(vg.dim() == 2, format!("dim V*g = {}", vg.dim()))?;
    let vg_res = same_span(&vg.v, &reference_vg());
    ensure(vg_res <= 1e-8, format!("V*g containment residual {vg_res:e}"))?;
    let rj = solvability::rstar_j(&p).map_err(|e| e.to_string())?;
    let dims: Vec<usize> = rj.iter().map(Basis::dim).collect();
    ensure(dims == [4, 3, 4], format!("dim R*j = {dims:?}"))?;
    let expected = [unit_span(&[1, 2, 3, 4]), unit_span(&[2, 3, 4]), unit_span(&[1, 2, 3, 4])];
    let mut worst = vg_res;
    for (j, (b, e)) in rj.iter().zip(&expected).enumerate() {
        let r = same_span(&b.columns, e);
        ensure(r <= 1e-8, format!("R*{} containment residual {r:e}", j + 1))?;
        worst = worst.max(r);
    }
    Ok(format!("dim V*g = 2, dim R*j = (4, 3, 4), spans match within {worst:.1e}"))
}

fn criterion_3() -> Outcome {
    let p = plant();
    let tol = &p.tol;
    let vg = subspaces::vstar_g(&p, None).map_err(|e| e.to_string())?.span(tol);
    let rj = solvability::rstar_j(&p).map_err(|e| e.to_string())?;
    let sum = |bases: &[&Basis<f64>]| subspace_sum_dim(bases, tol).unwrap();
    let d1 = sum(&[&vg, &rj[0]]);
    let d2 = sum(&[&vg, &rj[1]]);
    let d23 = sum(&[&vg, &rj[1], &rj[2]]);
    ensure((d1, d2, d23) == (5, 4, 5), format!("dims ({d1}, {d2}, {d23})"))?;
    let verdict = solvability::check_lambda_free(5, &vg, &rj, tol).map_err(|e| e.to_string())?;
    ensure(verdict.solvable && verdict.failing_subsets.is_empty(), format!("{verdict:?}"))?;
    Ok("dim(V*g+R*1) = 5, dim(V*g+R*2) = 4, dim(V*g+R*2+R*3) = 5, every subset passes".into())
}

fn criterion_4() -> Outcome {
    let p = plant();
    let mut spec = SynthesisSpec::new(LAMBDAS.to_vec(), REFERENCE.to_vec());
    spec.replay = Some(Replay { vg: reference_vg(), wg: reference_wg(), directions: reference_directions() });
    let fb = synthesis::synthesize(&p, &spec).map_err(|e| e.to_string())?;
    let dev = (&fb.f - reference_gain()).amax();
    ensure(dev <= 1e-9, format!("entrywise deviation {dev:e}"))?;
    for ((i, j), s) in [((0, 0), "68419/8250"), ((1, 0), "-5351/2475"), ((3, 0), "4/9")] {
        let d = (fb.f[(i, j)] - q(s)).abs();
        ensure(d <= 1e-9, format!("F[{},{}] off by {d:e}", i + 1, j + 1))?;
    }
    Ok(format!("replayed gain matches entrywise within {dev:.1e}"))
}

fn criterion_5() -> Outcome {
    let p = plant();
    let expected: Vec<Complex<f64>> = [-1.0, -1.0, -2.0, -6.0, -6.0].iter().map(|x| Complex::new(*x, 0.0)).collect();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut spec = SynthesisSpec::new(LAMBDAS.to_vec(), REFERENCE.to_vec());
        spec.seed = seed;
        let fb = synthesis::synthesize(&p, &spec).map_err(|e| format!("seed {seed}: {e}"))?;
        let d = match_spectra(&expected, &fb.closed_loop_spectrum, 1e-6).ok_or(format!("seed {seed}: spectrum {:?}", fb.closed_loop_spectrum))?;
        worst = worst.max(d);
    }
    Ok(format!("spectrum {{-1, -1, -2, -6, -6}} on 20 seeds within {worst:.1e}"))
}

fn criterion_6() -> Outcome {
    let p = plant();
    let x = DVector::from_vec(vec![0.0, -2.0, q("10/3"), 0.0, q("-7/15")]);
    let u = DVector::from_vec(vec![q("-48/5"), q("-14/15"), -1.0, -2.0]);
    let known = steady_state_residual(&p.sys, &REFERENCE, &x, &u);
    ensure(known <= 1e-12, format!("known pair residual {known:e}"))?;
    let (xc, uc) = synthesis::steady_state(&p, &REFERENCE).map_err(|e| e.to_string())?;
    let ours = steady_state_residual(&p.sys, &REFERENCE, &xc, &uc);
    ensure(ours <= 1e-9, format!("computed pair residual {ours:e}"))?;
    Ok(format!("residuals {known:.1e} (known pair), {ours:.1e} (computed pair)"))
}

fn criterion_7() -> Outcome {
    let p = plant();
    let fb = synthesis::synthesize(&p, &SynthesisSpec::new(LAMBDAS.to_vec(), REFERENCE.to_vec())).map_err(|e| e.to_string())?;
    let rate = RateSpec::new(-1.0, TimeDomain::Continuous).unwrap();
    let mut worst = 0.0f64;
    for (t, x0) in x0s().iter().enumerate() {
        let trace = simverify::simulate(&p.sys, &fb, x0, SimOptions::default_for(TimeDomain::Continuous, -1.0), &p.tol).map_err(|e| e.to_string())?;
        let reports = simverify::verify_trace(&trace, Some(rate)).map_err(|e| e.to_string())?;
        for (k, r) in reports.iter().enumerate() {
            let tag = format!("x0 #{} output {}", t + 1, k + 1);
            ensure(r.monotonicity == simverify::Monotonicity::Monotone, format!("{tag}: {:?}", r.monotonicity))?;
            ensure(r.rate_ok, format!("{tag}: rate bound violated"))?;
            let ModeFit::Fitted { lambda, relative_residual, .. } = r.fit else {
                return Err(format!("{tag}: no visible error"));
            };
            ensure(relative_residual <= 1e-6, format!("{tag}: fit residual {relative_residual:e}"))?;
            ensure((lambda - LAMBDAS[k]).abs() <= 1e-6, format!("{tag}: fitted mode {lambda}"))?;
            worst = worst.max(relative_residual);
        }
    }
    Ok(format!("6 outputs monotone, rate -1 held, fitted modes (-1, -2, -1), worst fit residual {worst:.1e}"))
}

fn random_system(seed: u64) -> LtiSystem<f64> {
    let mut mixer = Mixer::new(0xACCE_0000 + seed);
    let n = 1 + (seed % 8) as usize;
    let feedthrough = seed % 2 == 0;
    // [B; D] must have full column rank and m >= p
    let p = 1 + (seed / 8 % 3) as usize;
    let p = if feedthrough { p } else { p.min(n) };
    let m = (p + (seed % 3) as usize).min(if feedthrough { n + p } else { n });
    let mut rnd = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| mixer.coefficient::<f64>());
    let a = rnd(n, n);
    let b = rnd(n, m);
    let c = rnd(p, n);
    let d = if feedthrough { rnd(p, m) } else { DMatrix::zeros(p, m) };
    LtiSystem::new(a, b, c, d, TimeDomain::Continuous).unwrap()
}

fn criterion_8() -> Outcome {
    let mut worst = 0.0f64;
    let mut nontrivial = 0;
    for seed in 0..50 {
        let sys = random_system(seed);
        let plant = Plant::new(sys.clone(), TolerancePolicy::default(), seed).map_err(|e| format!("seed {seed}: {e}"))?;
        let excluded = std::iter::once(None).chain((0..sys.p()).map(Some));
        for j in excluded {
            let kernel = rstar(&plant, j, None).map_err(|e| format!("seed {seed}: {e}"))?;
            let reduced = match j {
                Some(j) => sys.without_output(j),
                None => sys.clone(),
            };
            let oracle = rstar_recursive(&reduced, &plant.tol);
            ensure(kernel.dim() == oracle.dim(), format!("seed {seed}, excluded {j:?}: dims {} vs {}", kernel.dim(), oracle.dim()))?;
            let r = same_span(&kernel.v, &oracle.columns);
            ensure(r <= 1e-8, format!("seed {seed}, excluded {j:?}: containment residual {r:e}"))?;
            worst = worst.max(r);
            if kernel.dim() > 0 && kernel.dim() < sys.n() {
                nontrivial += 1;
            }
        }
    }
    Ok(format!("R* and every R*j agree with the recursion on 50 systems within {worst:.1e} ({nontrivial} proper nonzero)"))
}

fn criterion_9() -> Outcome {
    let p = plant();
    let stats = genericity_trial(&p, &LAMBDAS, 100, 9, 0);
    ensure(stats.successes == 100, format!("{} of 100 draws succeeded, failing seeds {:?}", stats.successes, stats.failing_seeds))?;
    ensure(stats.rank_deficiency_events == 0, format!("{} rank-deficiency events", stats.rank_deficiency_events))?;
    let gains = 100;
    for seed in 0..gains {
        let mut spec = SynthesisSpec::new(LAMBDAS.to_vec(), REFERENCE.to_vec());
        spec.seed = seed;
        let fb = synthesis::synthesize(&p, &spec).map_err(|e| format!("seed {seed}: {e}"))?;
        let options = SimOptions::default_for(TimeDomain::Continuous, simverify::default_rho(&fb, TimeDomain::Continuous));
        for k in 0..20 {
            let x0 = Mixer::new(seed * 100 + k).vector::<f64>(5);
            let trace = simverify::simulate(&p.sys, &fb, &x0, options, &p.tol).map_err(|e| e.to_string())?;
            let reports = simverify::verify_trace(&trace, None).map_err(|e| e.to_string())?;
            for (j, r) in reports.iter().enumerate() {
                ensure(r.monotonicity.passed() && r.single_mode_ok, format!("gain {seed}, x0 {k}, output {}: {r:?}", j + 1))?;
            }
        }
    }
    Ok(format!("100 draws, 0 rank-deficiency events; {gains} gains x 20 x0 monotone and single-mode"))
}

fn criterion_10() -> Outcome {
    let p = plant();
    let fb = synthesis::synthesize(&p, &SynthesisSpec::new(LAMBDAS.to_vec(), REFERENCE.to_vec())).map_err(|e| e.to_string())?;
    let opts = SimOptions { horizon: 8.0, samples: 400 };
    let sim = |x: &DVector<f64>| simverify::simulate(&p.sys, &fb, x, opts, &p.tol).unwrap().epsilon;
    let mut worst_sup = 0.0f64;
    for seed in 0..10 {
        let mut mixer = Mixer::new(500 + seed);
        let (x1, x2) = (mixer.vector::<f64>(5), mixer.vector::<f64>(5));
        let (a, b) = (mixer.uniform(-3.0, 3.0), mixer.uniform(-3.0, 3.0));
        let e1 = sim(&(&fb.x_ss + &x1));
        let e2 = sim(&(&fb.x_ss + &x2));
        let e12 = sim(&(&fb.x_ss + &x1 * a + &x2 * b));
        let d = (&e12 - (e1 * a + e2 * b)).amax() / (1.0 + e12.amax());
        ensure(d <= 1e-9, format!("superposition defect {d:e}"))?;
        worst_sup = worst_sup.max(d);
    }
    let mut worst_vis = 0.0f64;
    ensure(fb.vg_dim() == 2, format!("dim V*g = {}", fb.vg_dim()))?;
    for k in fb.directions.len()..fb.v.ncols() {
        for s in [1.0, -2.5] {
            let e = sim(&(&fb.x_ss + fb.v.column(k) * s)).amax();
            ensure(e <= 1e-9, format!("V*g column {k} visible: {e:e}"))?;
            worst_vis = worst_vis.max(e);
        }
    }
    Ok(format!("superposition defect {worst_sup:.1e}, V*g states visible at {worst_vis:.1e}"))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    // straight to stderr so the table shows without --nocapture
    let mut log = std::io::stderr().lock();
    let start = Instant::now();
    let mut failed = Vec::new();
    for (k, run) in criteria {
        let t = Instant::now();
        let outcome = run();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => writeln!(log, "PASS {k:>2} ({secs:.2}s) {msg}").unwrap(),
            Err(msg) => {
                writeln!(log, "FAIL {k:>2} ({secs:.2}s) {msg}").unwrap();
                failed.push(k);
            }
        }
    }
    let total = start.elapsed().as_secs_f64();
    writeln!(log, "total {total:.2}s").unwrap();
    assert!(failed.is_empty(), "failed criteria {failed:?}");
    assert!(total < 60.0, "acceptance took {total:.1}s");
}

// the same fixture read from disk, so the suite also covers the file format
#[test]
fn bundled_fixture_is_the_acceptance_plant() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/example1.json");
    let sys = LtiSystem::<f64>::load(path).unwrap();
    assert_eq!(sys, example1());
}
