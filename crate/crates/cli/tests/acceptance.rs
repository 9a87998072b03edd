//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Runs without the libtest harness so the lines always print.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde_json::Value;

use retromfg_core::carleman::{
    calibrate_constant, family_reports, holdout_check, search_nu0, verify_identity, CalibrationOptions, EstimateKind,
};
use retromfg_core::family::{rng_from_seed, spacetime_family, tapered, SeriesSpec};
use retromfg_core::forward::{
    picard_solve, solve_bellman_backward, solve_fokker_planck_forward, InteractionSpec, KernelSpec, MfgProblem,
    PicardOptions,
};
use retromfg_core::grid::{
    build_grid, integrate, norm, FieldKind, NormKind, PrismDomain, Region, ScalarField, SpaceTimeGrid,
};
use retromfg_core::ops::BoundaryCondition;
use retromfg_core::retro::{objective, objective_and_gradient, RetrospectiveData, WeightedObjective};

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn square(n: usize) -> Arc<SpaceTimeGrid> {
    build_grid(PrismDomain::new(vec![1.0, 1.0]).unwrap(), 1.0, vec![n, n], 2).unwrap()
}

fn interval(n: usize, steps: usize) -> Arc<SpaceTimeGrid> {
    build_grid(PrismDomain::new(vec![1.0]).unwrap(), 1.0, vec![n], steps).unwrap()
}

fn order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

// ---------------------------------------------------------------- 1

fn criterion_identity() -> Outcome {
    let exact = 4.0 * PI.powi(4);
    let u =
        |n: usize, f: &dyn Fn(f64, f64) -> f64| ScalarField::from_fn_spatial(&square(n), |x| f(x[0], x[1])).unwrap();

    let base = |x: f64, y: f64| (PI * x).cos() * (PI * y).cos();
    let r64 = verify_identity(&u(64, &base), BoundaryCondition::Neumann0).unwrap();
    let lhs_err = (r64.lhs - exact).abs() / exact;
    let rhs_err = (r64.rhs - exact).abs() / exact;

    let fields: [&dyn Fn(f64, f64) -> f64; 5] = [
        &base,
        &|x, y| (2.0 * PI * x).cos() * (PI * y).cos(),
        &|x, y| (PI * x).cos().exp() * (PI * y).cos(),
        &|x, y| (PI * x).cos() + 0.5 * (2.0 * PI * x).cos() * (3.0 * PI * y).cos(),
        &|x, y| (PI * x).cos().powi(2) * (2.0 * PI * y).cos(),
    ];
    let mut min_order = f64::INFINITY;
    for f in fields {
        let gaps: Vec<f64> = [33, 65, 129]
            .iter()
            .map(|&n| {
                verify_identity(&u(n, f), BoundaryCondition::Neumann0)
                    .unwrap()
                    .relative_gap
            })
            .collect();
        for w in gaps.windows(2) {
            min_order = min_order.min(order(w[0], w[1]));
        }
    }

    // Dirichlet: the sine analogue, same limit 4π⁴.
    let sine = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
    let d64 = verify_identity(&u(64, &sine), BoundaryCondition::Dirichlet0).unwrap();
    let d_err: Vec<f64> = [33, 65, 129]
        .iter()
        .map(|&n| {
            let r = verify_identity(&u(n, &sine), BoundaryCondition::Dirichlet0).unwrap();
            (r.lhs - exact).abs().max((r.rhs - exact).abs())
        })
        .collect();
    let d_order = order(d_err[0], d_err[1]).min(order(d_err[1], d_err[2]));

    let passed = r64.relative_gap <= 0.01
        && lhs_err <= 0.01
        && rhs_err <= 0.01
        && min_order >= 1.8
        && d64.relative_gap <= 0.01
        && d_order >= 1.8;
    check(
        passed,
        format!(
            "Neumann gap@64²={:.2e} (≤1e-2), |lhs−4π⁴|/4π⁴={lhs_err:.2e}, |rhs−4π⁴|/4π⁴={rhs_err:.2e}, min order over 5 fields={min_order:.3} (≥1.8); Dirichlet gap@64²={:.2e}, order={d_order:.3}",
            r64.relative_gap, d64.relative_gap
        ),
    )
}

// ---------------------------------------------------------------- 2, 3

const LAMBDAS: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];

fn carleman_grid() -> Arc<SpaceTimeGrid> {
    build_grid(PrismDomain::new(vec![1.0, 1.0]).unwrap(), 1.0, vec![33, 33], 33).unwrap()
}

fn criterion_forward_carleman() -> Outcome {
    let start = Instant::now();
    let g = carleman_grid();
    let cal = spacetime_family(&g, SeriesSpec::default(), 20, 1).unwrap();
    let hold = spacetime_family(&g, SeriesSpec::default(), 20, 2).unwrap();
    let opts = CalibrationOptions::default();
    let mut parts = Vec::new();
    let mut passed = true;
    for which in [EstimateKind::Forward, EstimateKind::ForwardPrism] {
        let sigma = which.default_sigma();
        match calibrate_constant(which, &cal, &LAMBDAS, 3.0, 1.0, sigma, 2.0, &opts) {
            Ok(c) => {
                let reps = family_reports(which, &hold, &LAMBDAS, 3.0, 1.0, sigma, 2.0).unwrap();
                let h = holdout_check(&reps, &LAMBDAS, c.lambda_star, c.c_calibrated);
                passed &= c.c_calibrated > 0.0 && !c.degenerate && c.lambda_star == 1.0 && h.passed;
                parts.push(format!(
                    "{}: C={:.3} λ*={} holdout min margin={:.3e}",
                    which.name(),
                    c.c_calibrated,
                    c.lambda_star,
                    h.min_margin
                ));
            }
            Err(e) => {
                passed = false;
                parts.push(format!("{}: {e}", which.name()));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        passed && secs < 60.0,
        format!("{}; {secs:.1}s (<60s)", parts.join("; ")),
    )
}

fn criterion_backward_carleman() -> Outcome {
    let start = Instant::now();
    let g = carleman_grid();
    let nus = [3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
    let opts = CalibrationOptions::default();
    let cal = spacetime_family(&g, SeriesSpec::default(), 20, 1).unwrap();
    let hold = spacetime_family(&g, SeriesSpec::default(), 20, 2).unwrap();
    let describe = |name: &str, s: &retromfg_core::carleman::NuSearch| -> (bool, bool, String) {
        let Some(nu0) = s.nu0 else {
            return (false, false, format!("{name}: no ν₀ in {{3..8}}"));
        };
        let k = s.candidates.iter().find(|k| k.nu == nu0).unwrap();
        let c = k.calibration.as_ref().unwrap();
        let h = k.holdout.as_ref().unwrap();
        (
            c.c_calibrated > 0.0 && c.lambda_star == 1.0 && h.passed,
            c.degenerate,
            format!(
                "{name}: ν₀={nu0} C={:.3e}{} λ*={} holdout min margin={:.3e}",
                c.c_calibrated,
                if c.degenerate { " (degenerate)" } else { "" },
                c.lambda_star,
                h.min_margin
            ),
        )
    };
    let literal = search_nu0(&cal, &hold, &nus, &LAMBDAS, 1.0, 2.0, &opts).unwrap();
    let (ok_lit, _, d_lit) = describe("raw family", &literal);
    let tap = search_nu0(
        &tapered(&cal).unwrap(),
        &tapered(&hold).unwrap(),
        &nus,
        &LAMBDAS,
        1.0,
        2.0,
        &opts,
    )
    .unwrap();
    let (ok_tap, degenerate_tap, d_tap) = describe("terminal-tapered family", &tap);
    let secs = start.elapsed().as_secs_f64();
    check(
        ok_lit && ok_tap && !degenerate_tap && secs < 60.0,
        format!("{d_lit}; {d_tap}; {secs:.1}s (<60s)"),
    )
}

// ---------------------------------------------------------------- 4

const BETA: f64 = 0.8;
const C2: f64 = 0.2;

fn v_star(x: f64, t: f64) -> f64 {
    0.5 * (-t).exp() * (PI * x).cos() + 0.3 * t
}

fn m_bar(x: f64, t: f64) -> f64 {
    0.5 + 0.25 * (PI * x).cos() * t
}

fn kappa(x: f64) -> f64 {
    1.0 + 0.2 * (PI * x).cos()
}

/// Source that makes `v*` solve the Bellman equation against `m̄` with
/// local coupling only.
fn g0(x: f64, t: f64) -> f64 {
    let e = (-t).exp();
    let v_t = -0.5 * e * (PI * x).cos() + 0.3;
    let v_xx = -0.5 * PI * PI * e * (PI * x).cos();
    let v_x = -0.5 * PI * e * (PI * x).sin();
    -(v_t + BETA * v_xx + 0.5 * kappa(x).powi(2) * v_x * v_x + C2 * m_bar(x, t).tanh())
}

fn bellman_error(n: usize, steps: usize) -> f64 {
    let g = interval(n, steps);
    let p = MfgProblem::new(
        BETA,
        ScalarField::from_fn_spatial(&g, |x| kappa(x[0])).unwrap(),
        InteractionSpec::new(0.0, C2, 1.0, 1.0)
            .unwrap()
            .with_source(ScalarField::from_fn_spacetime(&g, |x, t| g0(x[0], t)).unwrap()),
        KernelSpec::new(0.0, 1.0).unwrap(),
        ScalarField::from_fn_spatial(&g, |x| v_star(x[0], 1.0)).unwrap(),
        ScalarField::constant(&g, FieldKind::Spatial, 1.0),
    )
    .unwrap();
    let m = ScalarField::from_fn_spacetime(&g, |x, t| m_bar(x[0], t)).unwrap();
    let v = solve_bellman_backward(&m, &p).unwrap().field;
    let exact = ScalarField::from_fn_spacetime(&g, |x, t| v_star(x[0], t)).unwrap();
    norm(&v.sub(&exact).unwrap(), NormKind::L2SpaceTime).unwrap()
}

fn heat_problem(g: &Arc<SpaceTimeGrid>, v_t: impl Fn(f64) -> f64, m0: impl Fn(f64) -> f64) -> MfgProblem {
    MfgProblem::new(
        1.0,
        ScalarField::zeros(g, FieldKind::Spatial),
        InteractionSpec::decoupled(),
        KernelSpec::new(0.0, 1.0).unwrap(),
        ScalarField::from_fn_spatial(g, |x| v_t(x[0])).unwrap(),
        ScalarField::from_fn_spatial(g, |x| m0(x[0])).unwrap(),
    )
    .unwrap()
}

/// Fokker–Planck heat mode `m = ½ + 0.1 e^{−π²t} cos πx`.
fn fp_heat_error(n: usize, steps: usize) -> f64 {
    let g = interval(n, steps);
    let p = heat_problem(&g, |_| 0.0, |x| 0.5 + 0.1 * (PI * x).cos());
    let m = solve_fokker_planck_forward(&ScalarField::zeros(&g, FieldKind::SpaceTime), &p)
        .unwrap()
        .field;
    let exact =
        ScalarField::from_fn_spacetime(&g, |x, t| 0.5 + 0.1 * (-PI * PI * t).exp() * (PI * x[0]).cos()).unwrap();
    norm(&m.sub(&exact).unwrap(), NormKind::L2SpaceTime).unwrap()
}

/// Backward heat mode `v = e^{π²(t−T)} cos πx` with no coupling.
fn bellman_heat_error(n: usize, steps: usize) -> f64 {
    let g = interval(n, steps);
    let p = heat_problem(&g, |x| (PI * x).cos(), |_| 1.0);
    let v = solve_bellman_backward(&ScalarField::constant(&g, FieldKind::SpaceTime, 0.5), &p)
        .unwrap()
        .field;
    let exact = ScalarField::from_fn_spacetime(&g, |x, t| (PI * PI * (t - 1.0)).exp() * (PI * x[0]).cos()).unwrap();
    norm(&v.sub(&exact).unwrap(), NormKind::L2SpaceTime).unwrap()
}

fn criterion_forward_solver() -> Outcome {
    // Mass on a coupled 2D run.
    let g = build_grid(PrismDomain::new(vec![1.0, 0.5]).unwrap(), 1.0, vec![17, 9], 32).unwrap();
    let p = MfgProblem::new(
        1.0,
        ScalarField::constant(&g, FieldKind::Spatial, 1.0),
        InteractionSpec::new(0.4, 0.3, 1.0, 2.0).unwrap(),
        KernelSpec::new(1.0, 0.4).unwrap(),
        ScalarField::from_fn_spatial(&g, |x| 0.4 * (PI * x[0]).cos()).unwrap(),
        ScalarField::from_fn_spatial(&g, |x| 1.0 + 0.8 * (PI * x[0]).cos() * (2.0 * PI * x[1]).cos()).unwrap(),
    )
    .unwrap();
    let s = picard_solve(&p, &PicardOptions::default()).unwrap();
    let m0 = integrate(p.m_initial(), Region::Omega).unwrap();
    let drift = (0..g.time_levels())
        .map(|k| (integrate(&s.m, Region::TimeSlice(k)).unwrap() - m0).abs())
        .fold(0.0, f64::max);

    let ladder = |f: &dyn Fn(usize, usize) -> f64| -> (f64, f64) {
        let eh: Vec<f64> = [17, 33, 65].iter().map(|&n| f(n, (n - 1) * (n - 1) / 4)).collect();
        let et: Vec<f64> = [16, 32, 64].iter().map(|&s| f(257, s)).collect();
        (order(eh[1], eh[2]), order(et[1], et[2]))
    };
    let (bh, bt) = ladder(&bellman_error);
    let (fh, ft) = ladder(&fp_heat_error);
    let (hh, ht) = ladder(&bellman_heat_error);

    // Constants are reproduced exactly by the decoupled problem.
    let gc = interval(17, 8);
    let pc = heat_problem(&gc, |_| 0.7, |_| 1.0);
    let sc = picard_solve(&pc, &PicardOptions::default()).unwrap();
    let const_err =
        sc.v.values()
            .iter()
            .map(|v| (v - 0.7).abs())
            .chain(sc.m.values().iter().map(|m| (m - 0.5).abs()))
            .fold(0.0, f64::max);
    let heat_fine = fp_heat_error(129, 1024).max(bellman_heat_error(129, 1024));

    let passed = drift <= 1e-12
        && bh.min(fh).min(hh) >= 1.8
        && bt.min(ft).min(ht) >= 0.9
        && const_err <= 1e-12
        && heat_fine <= 1e-3;
    check(
        passed,
        format!(
            "mass drift={drift:.1e} (≤1e-12); h-orders Bellman MMS={bh:.2} FP heat={fh:.2} Bellman heat={hh:.2} (≥1.8); Δt-orders {bt:.2}/{ft:.2}/{ht:.2} (≥0.9); constants err={const_err:.1e}; heat modes err@129×1024={heat_fine:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_gradient() -> Outcome {
    let g = build_grid(PrismDomain::new(vec![1.0, 0.5]).unwrap(), 1.0, vec![9, 7], 8).unwrap();
    let p = MfgProblem::new(
        0.9,
        ScalarField::from_fn_spatial(&g, |x| 1.0 + 0.2 * (PI * x[0]).cos()).unwrap(),
        InteractionSpec::new(0.5, 0.4, 0.8, 1.2).unwrap(),
        KernelSpec::new(1.0, 0.5).unwrap(),
        ScalarField::constant(&g, FieldKind::Spatial, 0.0),
        ScalarField::constant(&g, FieldKind::Spatial, 1.0),
    )
    .unwrap();
    let data = RetrospectiveData::new(
        ScalarField::from_fn_spatial(&g, |x| 0.3 * (PI * x[0]).cos()).unwrap(),
        ScalarField::from_fn_spatial(&g, |x| 1.0 + 0.2 * (2.0 * PI * x[1]).cos()).unwrap(),
        ScalarField::constant(&g, FieldKind::Spatial, 0.25),
    )
    .unwrap();
    let obj = WeightedObjective::new(p).unwrap().with_weight(1.0, 3.0, 2.0).unwrap();
    let mut rng = rng_from_seed(2024);
    let random = |rng: &mut rand_chacha::ChaCha8Rng| {
        let vals = (0..g.spacetime_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ScalarField::new(g.clone(), FieldKind::SpaceTime, vals).unwrap()
    };
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let v = random(&mut rng);
        let m = random(&mut rng);
        let (_, gv, gm) = objective_and_gradient(&v, &m, &data, &obj).unwrap();
        for _ in 0..10 {
            let dv = random(&mut rng);
            let dm = random(&mut rng);
            let at = |s: f64| {
                objective(
                    &v.add(&dv.scale(s).unwrap()).unwrap(),
                    &m.add(&dm.scale(s).unwrap()).unwrap(),
                    &data,
                    &obj,
                )
                .unwrap()
            };
            let eps = 1e-5;
            let fd = (at(eps) - at(-eps)) / (2.0 * eps);
            let an: f64 = gv.values().iter().zip(dv.values()).map(|(a, b)| a * b).sum::<f64>()
                + gm.values().iter().zip(dm.values()).map(|(a, b)| a * b).sum::<f64>();
            worst = worst.max((fd - an).abs() / an.abs().max(1e-12));
        }
    }
    check(
        worst <= 1e-6,
        format!("max relative FD mismatch over 3 states × 10 directions = {worst:.2e} (≤1e-6)"),
    )
}

// ---------------------------------------------------------------- CLI-driven 6, 7, 8

fn cli(config: &Path, out: &Path, extra: &[&str]) -> Value {
    let status = Command::new(env!("CARGO_BIN_EXE_retromfg"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs");
    assert!(
        status.status.success(),
        "retromfg failed: {}",
        String::from_utf8_lossy(&status.stderr)
    );
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn criterion_stability(tmp: &Path) -> Outcome {
    let s = cli(&configs().join("sweep.toml"), &tmp.join("sweep"), &[]);
    let r = &s["result"];
    let slope = |k: &str| r["fits"][k]["slope"].as_f64().unwrap_or(f64::NAN);
    let (v, m, h21) = (slope("v_block"), slope("m_h10"), slope("v_h21"));
    let excluded = r["excluded_rows"].as_u64().unwrap();
    let rows = r["rows"].as_u64().unwrap();
    let band = |x: f64| (0.7..=1.3).contains(&x);
    check(
        band(v) && band(m) && band(h21) && excluded == 0 && rows == 15,
        format!("33×33 1D sweep, 5 δ × 3 seeds: slopes v-block={v:.4}, m H10={m:.4}, v H21={h21:.4} (∈[0.7,1.3]); excluded rows={excluded}"),
    )
}

fn criterion_uniqueness(tmp: &Path) -> Outcome {
    let s = cli(&configs().join("uniqueness.toml"), &tmp.join("uniq"), &[]);
    let r = &s["result"];
    let rel = r["relative"].as_f64().unwrap();
    let nc = r["non_converged"].as_array().unwrap().len();
    check(
        rel <= 1e-3 && nc == 0 && r["n_inits"] == 4,
        format!("4 random inits: max pairwise H10 distance / solution norm = {rel:.2e} (≤1e-3); non-converged={nc}"),
    )
}

fn criterion_reproducibility(tmp: &Path) -> Outcome {
    let cfg = tmp.join("small_sweep.toml");
    fs::write(
        &cfg,
        "kind = \"stability-sweep\"\nseed = 5\n[grid]\nnodes = [13]\ntime_steps = 12\n\
         [problem]\nkappa = \"0.8 + 0.1*x1^2\"\nv_terminal = \"0.5*cos(pi*x1)\"\nm_initial = \"1 + 0.5*cos(pi*x1)\"\n\
         [retro]\nmax_iter = 300\n[sweep]\ndelta_grid = [1e-3, 1e-2]\nseeds = [1, 2]\n",
    )
    .unwrap();
    let mut same = true;
    let mut files = Vec::new();
    for (config, name, csvs) in [
        (cfg.clone(), "sweep", vec!["sweep.csv"]),
        (
            configs().join("carleman_forward.toml"),
            "carleman",
            vec!["estimate_terms.csv"],
        ),
    ] {
        let a = tmp.join(format!("{name}_a"));
        let b = tmp.join(format!("{name}_b"));
        cli(&config, &a, &["--seed", "11"]);
        cli(&config, &b, &["--seed", "11"]);
        for f in csvs {
            let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
            same &= !x.is_empty() && x == y;
            files.push(format!("{f} ({} bytes)", x.len()));
        }
        same &= a.join("config.resolved.toml").exists();
    }
    check(
        same,
        format!("two runs, same config and seed: {} bit-identical", files.join(", ")),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("integral identity", Box::new(criterion_identity)),
        ("forward Carleman estimate", Box::new(criterion_forward_carleman)),
        ("backward Carleman estimate", Box::new(criterion_backward_carleman)),
        ("forward solver", Box::new(criterion_forward_solver)),
        ("gradient exactness", Box::new(criterion_gradient)),
        (
            "Lipschitz stability surrogate",
            Box::new(|| criterion_stability(tmp.path())),
        ),
        ("uniqueness surrogate", Box::new(|| criterion_uniqueness(tmp.path()))),
        ("reproducibility", Box::new(|| criterion_reproducibility(tmp.path()))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        failed += usize::from(!o.passed);
        println!(
            "criterion {} [{}] {name} — {} [{:.1}s]",
            i + 1,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
