//! Forward solver for the second-order mean field games system
//!
//! ```text
//! v_t + βΔv + κ²|∇v|²/2 + F(x, t, ∫K(x,y)m(y,t)dy, m) = 0,   v(·,T) = v_T
//! m_t − βΔm + ∇·(κ² m ∇v) = 0,                               m(·,0) = m_0
//! ```
//!
//! with zero Neumann data on `S_T`. Both equations are marched IMEX
//! (implicit diffusion, explicit Hamiltonian/interaction/transport) and
//! coupled by damped Picard iteration.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{integrate_spacetime_values, weighted_sum, FieldKind, ScalarField, SpaceTimeGrid};
use crate::ops::{
    self, check_boundary_compliance, BoundaryCondition, FluxFaces, FluxScheme, SparseOp, SpatialStencils,
};

/// Dense kernel matrices are cached up to this many spatial nodes.
const DENSE_KERNEL_LIMIT: usize = 2500;
const PAR_THRESHOLD: usize = 512;

/// `F(x,t,y,z) = g0(x,t) + c1 tanh(y/s1) + c2 tanh(z/s2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionSpec {
    pub c1: f64,
    pub c2: f64,
    pub s1: f64,
    pub s2: f64,
    /// Spacetime source used by manufactured solutions.
    pub g0: Option<ScalarField>,
}

impl InteractionSpec {
    pub fn new(c1: f64, c2: f64, s1: f64, s2: f64) -> Result<Self> {
        if !(s1 > 0.0 && s2 > 0.0 && s1.is_finite() && s2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "interaction scales must be positive, got {s1}, {s2}"
            )));
        }
        if !(c1.is_finite() && c2.is_finite()) {
            return Err(Error::InvalidParameter("interaction gains must be finite".into()));
        }
        Ok(Self {
            c1,
            c2,
            s1,
            s2,
            g0: None,
        })
    }

    pub fn decoupled() -> Self {
        Self {
            c1: 0.0,
            c2: 0.0,
            s1: 1.0,
            s2: 1.0,
            g0: None,
        }
    }

    pub fn with_source(mut self, g0: ScalarField) -> Self {
        self.g0 = Some(g0);
        self
    }

    /// `(sup|F_y|, sup|F_z|) = (|c1|/s1, |c2|/s2)`.
    pub fn derivative_bounds(&self) -> (f64, f64) {
        (self.c1.abs() / self.s1, self.c2.abs() / self.s2)
    }
}

/// `K(x,y) = k0 exp(−|x−y|²/(2σ_k²))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub k0: f64,
    pub sigma_k: f64,
}

impl KernelSpec {
    pub fn new(k0: f64, sigma_k: f64) -> Result<Self> {
        if !(sigma_k > 0.0 && sigma_k.is_finite() && k0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kernel needs finite k0 and sigma_k > 0, got {k0}, {sigma_k}"
            )));
        }
        Ok(Self { k0, sigma_k })
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        self.k0 * (-d2 / (2.0 * self.sigma_k * self.sigma_k)).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative residual of each conjugate-gradient solve.
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub flux: FluxScheme,
    /// March on even when `Δt·max|κ²∇v|/h > 1`.
    pub allow_cfl_violation: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            cg_tol: 1e-10,
            cg_max_iter: 10_000,
            flux: FluxScheme::Upwind,
            allow_cfl_violation: false,
        }
    }
}

/// Discrete operators shared by the solvers and the retrospective objective.
#[derive(Debug)]
pub(crate) struct Discretization {
    pub stencils: SpatialStencils,
    pub faces: FluxFaces,
    pub kappa2: Vec<f64>,
    kernel: Option<Arc<Vec<f64>>>,
    points: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct MfgProblem {
    grid: Arc<SpaceTimeGrid>,
    beta: f64,
    kappa: ScalarField,
    interaction: InteractionSpec,
    kernel: KernelSpec,
    v_terminal: ScalarField,
    m_initial: ScalarField,
    disc: Arc<Discretization>,
}

impl MfgProblem {
    /// Validates the data and rescales a nonzero `m_0` to unit mass.
    pub fn new(
        beta: f64,
        kappa: ScalarField,
        interaction: InteractionSpec,
        kernel: KernelSpec,
        v_terminal: ScalarField,
        m_initial: ScalarField,
    ) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        let grid = kappa.grid().clone();
        for f in [&kappa, &v_terminal, &m_initial] {
            f.expect_kind(FieldKind::Spatial)?;
            f.same_grid(&kappa)?;
        }
        if let Some(g0) = &interaction.g0 {
            g0.same_grid(&kappa)?;
            g0.expect_kind(FieldKind::SpaceTime)?;
        }
        check_boundary_compliance(&v_terminal, BoundaryCondition::Neumann0)?;
        check_boundary_compliance(&m_initial, BoundaryCondition::Neumann0)?;
        if let Some(neg) = m_initial.values().iter().copied().find(|&v| v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "m_0 must be nonnegative, found {neg:.3e}"
            )));
        }
        let mass = weighted_sum(grid.spatial_weights(), m_initial.values());
        let m_initial = if mass > 0.0 {
            m_initial.scale(1.0 / mass)?
        } else {
            m_initial
        };

        let needs_kernel = interaction.c1 != 0.0 && kernel.k0 != 0.0;
        let n = grid.spatial_len();
        let points: Vec<Vec<f64>> = (0..n).map(|i| grid.point(i)).collect();
        let dense = (needs_kernel && n <= DENSE_KERNEL_LIMIT).then(|| {
            let mut k = vec![0.0; n * n];
            k.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                for (j, out) in row.iter_mut().enumerate() {
                    *out = kernel.eval(&points[i], &points[j]);
                }
            });
            Arc::new(k)
        });
        let disc = Discretization {
            stencils: SpatialStencils::new(&grid, BoundaryCondition::Neumann0),
            faces: FluxFaces::new(&grid),
            kappa2: kappa.values().iter().map(|k| k * k).collect(),
            kernel: dense,
            points,
        };
        Ok(Self {
            grid,
            beta,
            kappa,
            interaction,
            kernel,
            v_terminal,
            m_initial,
            disc: Arc::new(disc),
        })
    }

    pub fn grid(&self) -> &Arc<SpaceTimeGrid> {
        &self.grid
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn kappa(&self) -> &ScalarField {
        &self.kappa
    }

    pub fn interaction(&self) -> &InteractionSpec {
        &self.interaction
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn v_terminal(&self) -> &ScalarField {
        &self.v_terminal
    }

    pub fn m_initial(&self) -> &ScalarField {
        &self.m_initial
    }

    pub(crate) fn disc(&self) -> &Discretization {
        &self.disc
    }

    /// `sup|κ|` and `sup|K|`, the recorded contributors to `M₂`.
    pub fn coefficient_bounds(&self) -> (f64, f64) {
        (self.kappa.max_abs(), self.kernel.k0.abs())
    }

    pub(crate) fn needs_nonlocal(&self) -> bool {
        self.interaction.c1 != 0.0 && self.kernel.k0 != 0.0
    }

    /// `out(x) = Σ_y w_y K(x,y) m(y)` on one level.
    pub(crate) fn nonlocal(&self, m: &[f64], out: &mut [f64]) {
        let w = self.grid.spatial_weights();
        let wm: Vec<f64> = m.iter().zip(w).map(|(a, b)| a * b).collect();
        self.kernel_apply(&wm, out);
    }

    /// Adjoint of [`Self::nonlocal`]: `out(y) += w_y Σ_x K(x,y) g(x)`.
    pub(crate) fn nonlocal_transpose_add(&self, g: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; g.len()];
        self.kernel_apply(g, &mut tmp);
        for ((o, t), w) in out.iter_mut().zip(&tmp).zip(self.grid.spatial_weights()) {
            *o += w * t;
        }
    }

    /// `out = K x` with the symmetric kernel matrix.
    fn kernel_apply(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let disc = &self.disc;
        let row = |i: usize| -> f64 {
            match &disc.kernel {
                Some(k) => k[i * n..(i + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum(),
                None => disc
                    .points
                    .iter()
                    .zip(x)
                    .map(|(p, b)| self.kernel.eval(&disc.points[i], p) * b)
                    .sum(),
            }
        };
        if n >= PAR_THRESHOLD {
            out.par_iter_mut().enumerate().for_each(|(i, o)| *o = row(i));
        } else {
            out.iter_mut().enumerate().for_each(|(i, o)| *o = row(i));
        }
    }

    /// `F` on time level `k`, given `m` on that level.
    pub(crate) fn interaction_level(&self, k: usize, m: &[f64], out: &mut [f64]) {
        let n = m.len();
        let spec = &self.interaction;
        match &spec.g0 {
            Some(g0) => out.copy_from_slice(&g0.values()[k * n..(k + 1) * n]),
            None => out.iter_mut().for_each(|o| *o = 0.0),
        }
        if self.needs_nonlocal() {
            let mut i = vec![0.0; n];
            self.nonlocal(m, &mut i);
            for (o, y) in out.iter_mut().zip(&i) {
                *o += spec.c1 * (y / spec.s1).tanh();
            }
        }
        if spec.c2 != 0.0 {
            for (o, z) in out.iter_mut().zip(m) {
                *o += spec.c2 * (z / spec.s2).tanh();
            }
        }
    }

    /// `κ²|∇v|²/2` on one level.
    pub(crate) fn hamiltonian_level(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut g = vec![0.0; v.len()];
        for op in &self.disc.stencils.gradient {
            op.apply(v, &mut g);
            for (o, gi) in out.iter_mut().zip(&g) {
                *o += gi * gi;
            }
        }
        for (o, k2) in out.iter_mut().zip(&self.disc.kappa2) {
            *o *= 0.5 * k2;
        }
    }
}

/// Solves `(I − cL) x = b` by conjugate gradients in the trapezoid-weighted
/// inner product, in which the Neumann Laplacian is self-adjoint.
pub(crate) fn solve_shifted(
    lap: &SparseOp,
    c: f64,
    w: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).zip(w).map(|((a, b), w)| a * b * w).sum() };
    let apply = |p: &[f64], out: &mut [f64]| {
        lap.apply(p, out);
        for (o, pi) in out.iter_mut().zip(p) {
            *o = pi - c * *o;
        }
    };
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let n = b.len();
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for it in 0..max_iter {
        if rr.sqrt() <= tol * bnorm {
            return Ok(it);
        }
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rr.sqrt() <= tol * bnorm {
        return Ok(max_iter);
    }
    Err(Error::LinearSolve {
        iterations: max_iter,
        residual: rr.sqrt() / bnorm,
    })
}

/// Result of one time march.
#[derive(Clone, Debug)]
pub struct March {
    pub field: ScalarField,
    /// `L²(Q_T)` norm of the centered discrete residual of the marched equation.
    pub residual_norm: f64,
    pub cg_iterations: usize,
    pub max_courant: f64,
}

fn finite_or(values: &[f64], stage: &'static str, step: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { stage, step })
    }
}

pub fn solve_bellman_backward(m: &ScalarField, problem: &MfgProblem) -> Result<March> {
    solve_bellman_backward_with(m, problem, &SolverOptions::default())
}

/// Marches `τ = T − t` forward from `v_T`:
/// `(I − Δtβ L) v^k = v^{k+1} + Δt [κ²|∇v^{k+1}|²/2 + F(t_{k+1}, m^{k+1})]`.
pub fn solve_bellman_backward_with(m: &ScalarField, problem: &MfgProblem, opts: &SolverOptions) -> Result<March> {
    m.expect_kind(FieldKind::SpaceTime)?;
    m.same_grid(&problem.kappa)?;
    let grid = problem.grid();
    let n = grid.spatial_len();
    let levels = grid.time_levels();
    let dt = grid.dt();
    let w = grid.spatial_weights();
    let lap = &problem.disc.stencils.laplacian;
    let mut v = vec![0.0; n * levels];
    v[(levels - 1) * n..].copy_from_slice(problem.v_terminal.values());
    let mut rhs = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut iters = 0;
    for k in (0..levels - 1).rev() {
        let next = &v[(k + 1) * n..(k + 2) * n];
        problem.hamiltonian_level(next, &mut h);
        problem.interaction_level(k + 1, &m.values()[(k + 1) * n..(k + 2) * n], &mut f);
        for i in 0..n {
            rhs[i] = next[i] + dt * (h[i] + f[i]);
        }
        let mut x = next.to_vec();
        iters += solve_shifted(lap, dt * problem.beta, w, &rhs, &mut x, opts.cg_tol, opts.cg_max_iter)?;
        finite_or(&x, "bellman", k)?;
        v[k * n..(k + 1) * n].copy_from_slice(&x);
    }
    let (r1, _) = residual_arrays(&v, m.values(), problem, false);
    let field = ScalarField::from_parts(grid.clone(), FieldKind::SpaceTime, v);
    Ok(March {
        residual_norm: l2_spacetime(grid, &r1),
        field,
        cg_iterations: iters,
        max_courant: 0.0,
    })
}

pub fn solve_fokker_planck_forward(v: &ScalarField, problem: &MfgProblem) -> Result<March> {
    solve_fokker_planck_forward_with(v, problem, &SolverOptions::default())
}

/// `(I − Δtβ L) m^{k+1} = m^k − Δt ∇·(κ² m^k ∇v^k)` followed by a constant
/// shift restoring the mass of `m_0` (the linear solve conserves it only to
/// its tolerance; the flux divergence telescopes exactly).
pub fn solve_fokker_planck_forward_with(v: &ScalarField, problem: &MfgProblem, opts: &SolverOptions) -> Result<March> {
    v.expect_kind(FieldKind::SpaceTime)?;
    v.same_grid(&problem.kappa)?;
    let grid = problem.grid();
    let n = grid.spatial_len();
    let levels = grid.time_levels();
    let dt = grid.dt();
    let w = grid.spatial_weights();
    let measure = grid.domain().measure();
    let disc = &problem.disc;
    let target = weighted_sum(w, problem.m_initial.values());
    let mut m = vec![0.0; n * levels];
    m[..n].copy_from_slice(problem.m_initial.values());
    let mut div = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut iters = 0;
    let mut max_courant = 0.0f64;
    for k in 0..levels - 1 {
        let vk = &v.values()[k * n..(k + 1) * n];
        let courant = disc.faces.courant(vk, &disc.kappa2, dt);
        max_courant = max_courant.max(courant);
        if courant > 1.0 && !opts.allow_cfl_violation {
            return Err(Error::Cfl { step: k, courant });
        }
        let mk = &m[k * n..(k + 1) * n];
        disc.faces.divergence(mk, vk, &disc.kappa2, opts.flux, &mut div);
        for i in 0..n {
            rhs[i] = mk[i] - dt * div[i];
        }
        let mut x = mk.to_vec();
        iters += solve_shifted(
            &disc.stencils.laplacian,
            dt * problem.beta,
            w,
            &rhs,
            &mut x,
            opts.cg_tol,
            opts.cg_max_iter,
        )?;
        let shift = (target - weighted_sum(w, &x)) / measure;
        x.iter_mut().for_each(|xi| *xi += shift);
        finite_or(&x, "fokker-planck", k + 1)?;
        m[(k + 1) * n..(k + 2) * n].copy_from_slice(&x);
    }
    let (_, r2) = residual_arrays(v.values(), &m, problem, true);
    let field = ScalarField::from_parts(grid.clone(), FieldKind::SpaceTime, m);
    Ok(March {
        residual_norm: l2_spacetime(grid, &r2),
        field,
        cg_iterations: iters,
        max_courant,
    })
}

fn l2_spacetime(grid: &SpaceTimeGrid, r: &[f64]) -> f64 {
    if r.is_empty() {
        return 0.0;
    }
    let sq: Vec<f64> = r.iter().map(|x| x * x).collect();
    integrate_spacetime_values(grid, &sq).sqrt()
}

/// Centered discrete residuals of both equations at every node:
/// `R₁ = v_t + βΔv + κ²|∇v|²/2 + F`, `R₂ = m_t − βΔm + ∇·(κ²m∇v)`.
/// Only the requested residual is computed; the other comes back empty.
pub(crate) fn residual_arrays(v: &[f64], m: &[f64], problem: &MfgProblem, second: bool) -> (Vec<f64>, Vec<f64>) {
    let grid = problem.grid();
    let n = grid.spatial_len();
    let beta = problem.beta;
    let disc = &problem.disc;
    if !second {
        let mut r = vec![0.0; v.len()];
        ops::time_derivative_values(grid, v, &mut r);
        let mut lap = vec![0.0; n];
        let mut h = vec![0.0; n];
        let mut f = vec![0.0; n];
        for k in 0..grid.time_levels() {
            let vk = &v[k * n..(k + 1) * n];
            disc.stencils.laplacian.apply(vk, &mut lap);
            problem.hamiltonian_level(vk, &mut h);
            problem.interaction_level(k, &m[k * n..(k + 1) * n], &mut f);
            for (i, ri) in r[k * n..(k + 1) * n].iter_mut().enumerate() {
                *ri += beta * lap[i] + h[i] + f[i];
            }
        }
        (r, Vec::new())
    } else {
        let mut r = vec![0.0; m.len()];
        ops::time_derivative_values(grid, m, &mut r);
        let mut lap = vec![0.0; n];
        let mut div = vec![0.0; n];
        for k in 0..grid.time_levels() {
            let mk = &m[k * n..(k + 1) * n];
            disc.stencils.laplacian.apply(mk, &mut lap);
            disc.faces
                .divergence(mk, &v[k * n..(k + 1) * n], &disc.kappa2, FluxScheme::Centered, &mut div);
            for (i, ri) in r[k * n..(k + 1) * n].iter_mut().enumerate() {
                *ri += -beta * lap[i] + div[i];
            }
        }
        (Vec::new(), r)
    }
}

/// `(‖R₁‖_{L²(Q_T)}, ‖R₂‖_{L²(Q_T)})` for a pair of spacetime fields.
pub fn system_residual(v: &ScalarField, m: &ScalarField, problem: &MfgProblem) -> Result<(f64, f64)> {
    for f in [v, m] {
        f.expect_kind(FieldKind::SpaceTime)?;
        f.same_grid(&problem.kappa)?;
    }
    let grid = problem.grid();
    let (r1, _) = residual_arrays(v.values(), m.values(), problem, false);
    let (_, r2) = residual_arrays(v.values(), m.values(), problem, true);
    Ok((l2_spacetime(grid, &r1), l2_spacetime(grid, &r2)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    /// `θ` in `m ← θ m_new + (1−θ) m_old`.
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub solver: SolverOptions,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-8,
            max_iter: 200,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolutionPair {
    pub v: ScalarField,
    pub m: ScalarField,
    pub picard_iterations: usize,
    pub final_update_norm: f64,
    pub residual_norms: (f64, f64),
    /// Sup-norm change of `m` per iteration.
    pub update_trace: Vec<f64>,
    /// Geometric mean of successive update ratios after the first iteration.
    pub contraction_ratio: Option<f64>,
    pub max_courant: f64,
}

/// Damped Picard iteration between the two marches.
///
/// The first update is taken undamped: `m` starts as `m_0` frozen in time,
/// which is not a density evolution, and damping it only slows the
/// decoupled case down. Later updates use `θ`.
pub fn picard_solve(problem: &MfgProblem, opts: &PicardOptions) -> Result<SolutionPair> {
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "damping must lie in (0, 1], got {}",
            opts.damping
        )));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidParameter("tol and max_iter must be positive".into()));
    }
    let mut m = problem.m_initial.extend_in_time()?;
    let mut trace = Vec::new();
    let mut max_courant = 0.0f64;
    for it in 1..=opts.max_iter {
        let v = solve_bellman_backward_with(&m, problem, &opts.solver)?;
        let fp = solve_fokker_planck_forward_with(&v.field, problem, &opts.solver)?;
        max_courant = max_courant.max(fp.max_courant);
        let theta = if it == 1 { 1.0 } else { opts.damping };
        let next = fp.field.zip_map(&m, |new, old| theta * new + (1.0 - theta) * old)?;
        let update = next
            .values()
            .iter()
            .zip(m.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        trace.push(update);
        m = next;
        if update <= opts.tol {
            let v = solve_bellman_backward_with(&m, problem, &opts.solver)?.field;
            let residual_norms = system_residual(&v, &m, problem)?;
            return Ok(SolutionPair {
                v,
                m,
                picard_iterations: it,
                final_update_norm: update,
                residual_norms,
                contraction_ratio: contraction(&trace),
                update_trace: trace,
                max_courant,
            });
        }
        if !update.is_finite() {
            break;
        }
    }
    Err(Error::PicardDiverged {
        iterations: trace.len(),
        last_update: trace.last().copied().unwrap_or(f64::NAN),
        trace,
    })
}

fn contraction(trace: &[f64]) -> Option<f64> {
    let tail: Vec<f64> = trace.iter().skip(1).copied().filter(|&u| u > 0.0).collect();
    if tail.len() < 2 {
        return None;
    }
    let steps = (tail.len() - 1) as f64;
    Some((tail[tail.len() - 1] / tail[0]).powf(1.0 / steps))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AprioriBounds {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
}

impl AprioriBounds {
    pub fn new(m1: f64, m2: f64, m3: f64, m4: f64) -> Result<Self> {
        if [m1, m2, m3, m4].iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::InvalidParameter("a-priori bounds must be positive".into()));
        }
        Ok(Self { m1, m2, m3, m4 })
    }

    /// `M = max(M₁, M₂, M₃, M₄)`.
    pub fn max(&self) -> f64 {
        self.m1.max(self.m2).max(self.m3).max(self.m4)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub sup_v: f64,
    pub sup_grad_v: f64,
    pub sup_lap_v: f64,
    pub sup_m: f64,
    pub sup_grad_m: f64,
    /// `v ∈ B₃(M₃)`: `sup|v|, sup|∇v|, sup|Δv| ≤ M₃`.
    pub v_in_b3: bool,
    /// `m ∈ B₄(M₄)`: `sup|m|, sup|∇m| ≤ M₄`.
    pub m_in_b4: bool,
}

impl BoundsReport {
    /// Tightest bounds containing the pair: `M₃` and `M₄` as attained.
    pub fn attained(&self) -> (f64, f64) {
        (
            self.sup_v.max(self.sup_grad_v).max(self.sup_lap_v),
            self.sup_m.max(self.sup_grad_m),
        )
    }
}

fn sup_grad(u: &ScalarField) -> Result<f64> {
    let g = ops::gradient(u, BoundaryCondition::Neumann0)?;
    Ok((0..u.len())
        .map(|i| g.iter().map(|c| c.values()[i].powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max))
}

pub fn check_bounds(v: &ScalarField, m: &ScalarField, bounds: &AprioriBounds) -> Result<BoundsReport> {
    v.same_grid(m)?;
    let sup_v = v.max_abs();
    let sup_grad_v = sup_grad(v)?;
    let sup_lap_v = ops::laplacian(v, BoundaryCondition::Neumann0)?.max_abs();
    let sup_m = m.max_abs();
    let sup_grad_m = sup_grad(m)?;
    Ok(BoundsReport {
        sup_v,
        sup_grad_v,
        sup_lap_v,
        sup_m,
        sup_grad_m,
        v_in_b3: sup_v <= bounds.m3 && sup_grad_v <= bounds.m3 && sup_lap_v <= bounds.m3,
        m_in_b4: sup_m <= bounds.m4 && sup_grad_m <= bounds.m4,
    })
}
