//! Dispatch of one configured experiment and the artifacts it leaves behind.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use retromfg_core::carleman::{
    calibrate_constant, family_reports, holdout_check, observed_order, search_nu0, verify_identity, CalibrationOptions,
    EstimateKind,
};
use retromfg_core::expr::Expr;
use retromfg_core::family::{spacetime_family, tapered, SeriesSpec};
use retromfg_core::forward::{
    picard_solve, InteractionSpec, KernelSpec, MfgProblem, PicardOptions, SolutionPair, SolverOptions,
};
use retromfg_core::grid::{build_grid, integrate, PrismDomain, Region, ScalarField, SpaceTimeGrid};
use retromfg_core::io::{encode_field, write_field_csv};
use retromfg_core::ops::{BoundaryCondition, FluxScheme};
use retromfg_core::retro::{
    perturb_data, reconstruct, stability_sweep, uniqueness_check, DescentOptions, Init, RetrospectiveData, SweepRow,
    WeightedObjective,
};

use crate::config::{Bc, Estimate, ExperimentConfig, Flux, Kind};
use crate::svg::{self, Axes, Series};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{module}: {source}")]
    Core {
        module: &'static str,
        #[source]
        source: retromfg_core::Error,
    },
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl RunError {
    pub fn module(&self) -> &'static str {
        match self {
            RunError::Core { module, .. } => module,
            RunError::Io(_) | RunError::Csv(_) => "experiment_cli",
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            RunError::Core { source, .. } => source.code(),
            RunError::Io(_) => "io",
            RunError::Csv(_) => "csv",
        }
    }

    /// The machine-readable failure record written next to the outputs.
    pub fn report(&self) -> Value {
        json!({
            "status": "failed",
            "module": self.module(),
            "code": self.code(),
            "message": self.to_string(),
        })
    }
}

/// Tags core errors with the module that raised them.
trait In<T> {
    fn within(self, module: &'static str) -> Result<T, RunError>;
}

impl<T> In<T> for retromfg_core::Result<T> {
    fn within(self, module: &'static str) -> Result<T, RunError> {
        self.map_err(|source| RunError::Core { module, source })
    }
}

const GRID: &str = "domain_grid";
const CARLEMAN: &str = "carleman_core";
const FORWARD: &str = "mfg_forward";
const RETRO: &str = "retrospective";
const CLI: &str = "experiment_cli";

struct Out {
    dir: PathBuf,
}

impl Out {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn json(&self, name: &str, v: &impl Serialize) -> Result<(), RunError> {
        let s = serde_json::to_string_pretty(v).expect("report serializes");
        fs::write(self.path(name), s + "\n")?;
        Ok(())
    }

    fn csv(&self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), RunError> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
        Ok(())
    }

    fn field(&self, stem: &str, f: &ScalarField) -> Result<(), RunError> {
        fs::write(self.path(&format!("{stem}.rmfg")), encode_field(f))?;
        let file = BufWriter::new(fs::File::create(self.path(&format!("{stem}.csv")))?);
        write_field_csv(f, file).map_err(|e| RunError::Core {
            module: GRID,
            source: e.into(),
        })
    }

    fn svg(&self, name: &str, content: String) -> Result<(), RunError> {
        fs::write(self.path(name), content)?;
        Ok(())
    }
}

fn num(x: f64) -> String {
    x.to_string()
}

/// Runs the experiment and writes all artifacts into `out_dir`, returning the
/// JSON summary (also written as `summary.json`).
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Value, RunError> {
    fs::create_dir_all(out_dir)?;
    let out = Out {
        dir: out_dir.to_path_buf(),
    };
    fs::write(out.path("config.resolved.toml"), cfg.resolved_toml())?;
    let start = Instant::now();
    let body = match cfg.kind {
        Kind::VerifyIdentity => identity(cfg, &out)?,
        Kind::VerifyCarleman => carleman(cfg, &out)?,
        Kind::SolveForward => solve_forward(cfg, &out)?,
        Kind::SolveRetro => solve_retro(cfg, &out)?,
        Kind::StabilitySweep => sweep(cfg, &out)?,
        Kind::UniquenessCheck => uniqueness(cfg, &out)?,
    };
    let summary = json!({
        "status": "ok",
        "kind": cfg.kind.name(),
        "seed": cfg.seed,
        "elapsed_seconds": start.elapsed().as_secs_f64(),
        "result": body,
    });
    out.json("summary.json", &summary)?;
    Ok(summary)
}

fn grid_with(cfg: &ExperimentConfig, nodes: Vec<usize>) -> Result<Arc<SpaceTimeGrid>, RunError> {
    let g = &cfg.grid;
    build_grid(
        PrismDomain::new(g.half_widths.clone()).within(GRID)?,
        g.horizon,
        nodes,
        g.time_steps,
    )
    .within(GRID)
}

fn grid(cfg: &ExperimentConfig) -> Result<Arc<SpaceTimeGrid>, RunError> {
    grid_with(cfg, cfg.grid.nodes.clone())
}

fn expression(src: &str, dim: usize) -> Result<Expr, RunError> {
    let e = Expr::parse(src).map_err(|e| RunError::Core {
        module: CLI,
        source: e.into(),
    })?;
    if e.required_dim() > dim {
        return Err(RunError::Core {
            module: CLI,
            source: retromfg_core::Error::InvalidParameter(format!(
                "expression `{src}` uses x{} on a {dim}-dimensional domain",
                e.required_dim()
            )),
        });
    }
    Ok(e)
}

fn spatial(src: &str, g: &Arc<SpaceTimeGrid>) -> Result<ScalarField, RunError> {
    let e = expression(src, g.dim())?;
    if e.uses_time() {
        return Err(RunError::Core {
            module: CLI,
            source: retromfg_core::Error::InvalidParameter(format!("spatial expression `{src}` uses t")),
        });
    }
    ScalarField::from_fn_spatial(g, |x| e.eval(x, 0.0)).within(GRID)
}

fn problem(cfg: &ExperimentConfig) -> Result<MfgProblem, RunError> {
    let p = cfg.problem.as_ref().expect("validated: problem block present");
    let g = grid(cfg)?;
    let mut interaction = InteractionSpec::new(p.c1, p.c2, p.s1, p.s2).within(FORWARD)?;
    if let Some(src) = &p.g0 {
        let e = expression(src, g.dim())?;
        interaction = interaction.with_source(ScalarField::from_fn_spacetime(&g, |x, t| e.eval(x, t)).within(GRID)?);
    }
    MfgProblem::new(
        p.beta,
        spatial(&p.kappa, &g)?,
        interaction,
        KernelSpec::new(p.k0, p.sigma_k).within(FORWARD)?,
        spatial(&p.v_terminal, &g)?,
        spatial(&p.m_initial, &g)?,
    )
    .within(FORWARD)
}

fn picard_options(cfg: &ExperimentConfig) -> PicardOptions {
    let p = cfg.problem.as_ref();
    PicardOptions {
        damping: cfg.picard.damping,
        tol: cfg.picard.tol,
        max_iter: cfg.picard.max_iter,
        solver: SolverOptions {
            flux: match p.map(|p| p.flux) {
                Some(Flux::Centered) => FluxScheme::Centered,
                _ => FluxScheme::Upwind,
            },
            allow_cfl_violation: p.is_some_and(|p| p.allow_cfl_violation),
            ..SolverOptions::default()
        },
    }
}

fn descent_options(cfg: &ExperimentConfig) -> DescentOptions {
    DescentOptions {
        max_iter: cfg.retro.max_iter,
        grad_tol: cfg.retro.grad_tol,
        memory: cfg.retro.memory,
        smoothing: cfg.retro.smoothing,
        ..DescentOptions::default()
    }
}

fn objective(cfg: &ExperimentConfig, p: MfgProblem) -> Result<WeightedObjective, RunError> {
    let r = &cfg.retro;
    WeightedObjective::new(p)
        .and_then(|o| o.with_weight(cfg.weight.lambda, cfg.weight.nu, cfg.weight.a))
        .and_then(|o| o.with_alphas(r.alpha_vt, r.alpha_m0, r.alpha_mt))
        .within(RETRO)
}

fn identity(cfg: &ExperimentConfig, out: &Out) -> Result<Value, RunError> {
    let id = &cfg.identity;
    let bc = match id.bc {
        Bc::Neumann => BoundaryCondition::Neumann0,
        Bc::Dirichlet => BoundaryCondition::Dirichlet0,
    };
    let dim = cfg.grid.half_widths.len();
    let mut reports = Vec::new();
    for &n in &id.resolutions {
        let g = grid_with(cfg, vec![n; dim])?;
        let u = spatial(&id.field, &g)?;
        reports.push((n, verify_identity(&u, bc).within(CARLEMAN)?));
    }
    let orders: Vec<f64> = reports
        .windows(2)
        .map(|w| observed_order(w[0].1.relative_gap, w[1].1.relative_gap, w[0].1.h, w[1].1.h))
        .collect();
    out.csv(
        "identity.csv",
        &["nodes", "h", "lhs", "rhs", "relative_gap"],
        reports
            .iter()
            .map(|(n, r)| vec![n.to_string(), num(r.h), num(r.lhs), num(r.rhs), num(r.relative_gap)]),
    )?;
    out.svg(
        "identity.svg",
        svg::plot(
            "identity gap under refinement",
            "h",
            "relative gap",
            Axes {
                log_x: true,
                log_y: true,
            },
            &[Series {
                name: "gap".into(),
                points: reports.iter().map(|(_, r)| (r.h, r.relative_gap)).collect(),
                scatter: false,
            }],
        ),
    )?;
    Ok(json!({
        "field": id.field,
        "bc": bc.name(),
        "reports": reports.iter().map(|(n, r)| json!({"nodes": n, "report": r})).collect::<Vec<_>>(),
        "orders": orders,
        "min_order": orders.iter().copied().fold(None, |m: Option<f64>, o| Some(m.map_or(o, |m| m.min(o)))),
    }))
}

fn carleman(cfg: &ExperimentConfig, out: &Out) -> Result<Value, RunError> {
    let c = &cfg.carleman;
    let g = grid(cfg)?;
    let spec = SeriesSpec {
        max_wavenumber: c.max_wavenumber,
        n_modes: c.n_modes,
        ..SeriesSpec::default()
    };
    let mut cal = spacetime_family(&g, spec, c.members, cfg.seed).within(CARLEMAN)?;
    // A different seed gives a disjoint holdout draw.
    let mut hold = spacetime_family(&g, spec, c.holdout, cfg.seed.wrapping_add(1)).within(CARLEMAN)?;
    if c.taper {
        cal = tapered(&cal).within(CARLEMAN)?;
        hold = tapered(&hold).within(CARLEMAN)?;
    }
    let opts = CalibrationOptions {
        safety: c.safety,
        ..CalibrationOptions::default()
    };
    let mut lambdas = c.lambda_grid.clone();
    lambdas.sort_by(f64::total_cmp);
    let a = cfg.weight.a;
    let which = match c.estimate {
        Estimate::Forward => EstimateKind::Forward,
        Estimate::ForwardPrism => EstimateKind::ForwardPrism,
        Estimate::Backward => EstimateKind::Backward,
    };
    if which == EstimateKind::Backward {
        let s = search_nu0(&cal, &hold, &c.nu_grid, &lambdas, c.beta, a, &opts).within(CARLEMAN)?;
        out.csv(
            "nu_search.csv",
            &[
                "nu",
                "c_max",
                "c_calibrated",
                "lambda_star",
                "degenerate",
                "holdout_min_margin",
                "holdout_passed",
            ],
            s.candidates.iter().map(|k| {
                let (cm, cc, ls, dg) = match &k.calibration {
                    Some(x) => (
                        num(x.c_max),
                        num(x.c_calibrated),
                        num(x.lambda_star),
                        x.degenerate.to_string(),
                    ),
                    None => (String::new(), String::new(), String::new(), String::new()),
                };
                let (hm, hp) = match &k.holdout {
                    Some(h) => (num(h.min_margin), h.passed.to_string()),
                    None => (String::new(), "false".into()),
                };
                vec![num(k.nu), cm, cc, ls, dg, hm, hp]
            }),
        )?;
        return Ok(json!({ "estimate": which.name(), "tapered": c.taper, "search": s }));
    }

    let nu = cfg.weight.nu;
    let sigma = which.default_sigma();
    let calibration = calibrate_constant(which, &cal, &lambdas, nu, c.beta, sigma, a, &opts).within(CARLEMAN)?;
    let cal_reports = family_reports(which, &cal, &lambdas, nu, c.beta, sigma, a).within(CARLEMAN)?;
    let hold_reports = family_reports(which, &hold, &lambdas, nu, c.beta, sigma, a).within(CARLEMAN)?;
    let check = holdout_check(
        &hold_reports,
        &lambdas,
        calibration.lambda_star,
        calibration.c_calibrated,
    );
    let term_names: Vec<String> = cal_reports[0][0].terms.keys().cloned().collect();
    let mut header = vec!["family", "member", "lambda", "lhs"];
    header.extend(term_names.iter().map(|s| s.as_str()));
    header.push("margin");
    let rows = [("calibration", &cal_reports), ("holdout", &hold_reports)]
        .into_iter()
        .flat_map(|(fam, reps)| {
            reps.iter().enumerate().flat_map(move |(mi, row)| {
                row.iter().map(move |r| {
                    let mut v = vec![fam.to_string(), mi.to_string(), num(r.lambda), num(r.lhs)];
                    v.extend(r.terms.values().map(|&x| num(x)));
                    v.push(num(r.margin(calibration.c_calibrated)));
                    v
                })
            })
        })
        .collect::<Vec<_>>();
    out.csv("estimate_terms.csv", &header, rows)?;
    Ok(json!({
        "estimate": which.name(),
        "tapered": c.taper,
        "calibration": calibration,
        "holdout": check,
        "passed": check.passed,
    }))
}

fn mass_drift(s: &SolutionPair, p: &MfgProblem) -> Result<f64, RunError> {
    let m0 = integrate(p.m_initial(), Region::Omega).within(GRID)?;
    let mut drift = 0.0f64;
    for k in 0..p.grid().time_levels() {
        drift = drift.max((integrate(&s.m, Region::TimeSlice(k)).within(GRID)? - m0).abs());
    }
    Ok(drift)
}

fn solve_forward(cfg: &ExperimentConfig, out: &Out) -> Result<Value, RunError> {
    let p = problem(cfg)?;
    let s = picard_solve(&p, &picard_options(cfg)).within(FORWARD)?;
    out.field("v", &s.v)?;
    out.field("m", &s.m)?;
    out.csv(
        "picard.csv",
        &["iteration", "update"],
        s.update_trace
            .iter()
            .enumerate()
            .map(|(i, u)| vec![(i + 1).to_string(), num(*u)]),
    )?;
    out.svg(
        "picard.svg",
        svg::plot(
            "Picard updates",
            "iteration",
            "sup |m update|",
            Axes {
                log_x: false,
                log_y: true,
            },
            &[Series {
                name: "update".into(),
                points: s
                    .update_trace
                    .iter()
                    .enumerate()
                    .map(|(i, u)| ((i + 1) as f64, *u))
                    .collect(),
                scatter: false,
            }],
        ),
    )?;
    Ok(json!({
        "picard_iterations": s.picard_iterations,
        "final_update_norm": s.final_update_norm,
        "residual_bellman": s.residual_norms.0,
        "residual_fokker_planck": s.residual_norms.1,
        "contraction_ratio": s.contraction_ratio,
        "max_courant": s.max_courant,
        "mass_drift": mass_drift(&s, &p)?,
        "min_density": s.m.values().iter().copied().fold(f64::INFINITY, f64::min),
    }))
}

fn solve_retro(cfg: &ExperimentConfig, out: &Out) -> Result<Value, RunError> {
    let p = problem(cfg)?;
    let truth = picard_solve(&p, &picard_options(cfg)).within(FORWARD)?;
    let exact = RetrospectiveData::from_solution(&truth.v, &truth.m).within(RETRO)?;
    let data = perturb_data(&exact, cfg.retro.delta, cfg.seed).within(RETRO)?;
    let obj = objective(cfg, p)?;
    let r = reconstruct(
        &data,
        &obj,
        &Init::Interpolant,
        &descent_options(cfg),
        Some((&truth.v, &truth.m)),
    )
    .within(RETRO)?;
    out.field("v_hat", &r.v_hat)?;
    out.field("m_hat", &r.m_hat)?;
    out.csv(
        "objective.csv",
        &["iteration", "objective"],
        r.objective_trace
            .iter()
            .enumerate()
            .map(|(i, j)| vec![i.to_string(), num(*j)]),
    )?;
    out.svg(
        "objective.svg",
        svg::plot(
            "descent",
            "iteration",
            "J",
            Axes {
                log_x: false,
                log_y: true,
            },
            &[Series {
                name: "J".into(),
                points: r
                    .objective_trace
                    .iter()
                    .enumerate()
                    .map(|(i, j)| (i as f64, *j))
                    .collect(),
                scatter: false,
            }],
        ),
    )?;
    Ok(json!({
        "delta": cfg.retro.delta,
        "data_norm": data.data_distance(&exact).within(RETRO)?,
        "objective": r.objective(),
        "residual_part": r.residual_part,
        "grad_norm": r.grad_norm,
        "iterations": r.iterations,
        "stop": r.stop,
        "converged": r.converged,
        "errors": r.errors,
    }))
}

fn sweep(cfg: &ExperimentConfig, out: &Out) -> Result<Value, RunError> {
    let block = cfg.sweep.as_ref().expect("validated: sweep block present");
    let deltas = block.delta_grid.clone().expect("validated");
    let seeds = block.seeds.clone().expect("validated");
    let obj = objective(cfg, problem(cfg)?)?;
    let sw = stability_sweep(&obj, &picard_options(cfg), &deltas, &seeds, &descent_options(cfg)).within(RETRO)?;
    out.csv(
        "sweep.csv",
        &[
            "delta",
            "seed",
            "data_norm",
            "v_block",
            "m_h10",
            "v_h21",
            "v_block_vs_truth",
            "m_h10_vs_truth",
            "v_h21_vs_truth",
            "objective",
            "iterations",
            "converged",
        ],
        sw.rows.iter().map(|r| {
            vec![
                num(r.delta),
                r.seed.to_string(),
                num(r.data_norm),
                num(r.errors.v_block),
                num(r.errors.m_h10),
                num(r.errors.v_h21),
                num(r.errors_vs_truth.v_block),
                num(r.errors_vs_truth.m_h10),
                num(r.errors_vs_truth.v_h21),
                num(r.objective),
                r.iterations.to_string(),
                r.converged.to_string(),
            ]
        }),
    )?;
    type Pick = fn(&SweepRow) -> f64;
    let pick: [(&str, Pick); 3] = [
        ("v block", |r| r.errors.v_block),
        ("m H10", |r| r.errors.m_h10),
        ("v H21", |r| r.errors.v_h21),
    ];
    let series: Vec<Series> = pick
        .iter()
        .map(|(name, f)| Series {
            name: name.to_string(),
            points: sw
                .rows
                .iter()
                .filter(|r| r.converged)
                .map(|r| (r.data_norm, f(r)))
                .collect(),
            scatter: true,
        })
        .collect();
    out.svg(
        "sweep.svg",
        svg::plot(
            "error vs data perturbation",
            "data-side norm",
            "error",
            Axes {
                log_x: true,
                log_y: true,
            },
            &series,
        ),
    )?;
    Ok(json!({
        "fits": sw.fits,
        "fits_vs_truth": sw.fits_vs_truth,
        "excluded_rows": sw.excluded_rows,
        "floor": sw.floor,
        "measured_bounds": sw.bounds,
        "picard_iterations": sw.picard_iterations,
        "rows": sw.rows.len(),
    }))
}

fn uniqueness(cfg: &ExperimentConfig, out: &Out) -> Result<Value, RunError> {
    let p = problem(cfg)?;
    let truth = picard_solve(&p, &picard_options(cfg)).within(FORWARD)?;
    let data = RetrospectiveData::from_solution(&truth.v, &truth.m).within(RETRO)?;
    let obj = objective(cfg, p)?;
    let u = &cfg.uniqueness;
    let rep = uniqueness_check(&obj, &data, u.n_inits, cfg.seed, u.amplitude, &descent_options(cfg)).within(RETRO)?;
    out.csv(
        "uniqueness.csv",
        &["init", "objective", "iterations", "converged"],
        (0..rep.n_inits).map(|i| {
            vec![
                i.to_string(),
                num(rep.objectives[i]),
                rep.iterations[i].to_string(),
                (!rep.non_converged.contains(&i)).to_string(),
            ]
        }),
    )?;
    Ok(serde_json::to_value(&rep).expect("report serializes"))
}
