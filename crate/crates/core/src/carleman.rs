//! The Carleman weight `φ_{λ,ν}(t) = exp(2λ(t+a)^ν)`, the prism integral
//! identities `∫(Δu)² = Σ_{i,j}∫u_{x_i x_j}²`, and term-by-term evaluation of
//! the two parabolic Carleman estimates with empirical calibration of their
//! constants.
//!
//! The weight is never exponentiated directly: every weighted integral is
//! reported in units of the common factor `φ^σ(T)`, so only the normalized
//! weight `φ̃ = exp(2σλ[(t+a)^ν − (T+a)^ν]) ∈ (0, 1]` is evaluated.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{integrate, FieldKind, Region, ScalarField, SpaceTimeGrid};
use crate::ops::{self, check_boundary_compliance, BoundaryCondition, SpatialStencils};

const TIME_SLACK: f64 = 1e-12;
const GAP_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanWeight {
    pub lambda: f64,
    pub nu: f64,
    pub a: f64,
    pub horizon: f64,
    /// Power of `φ` carried by the weighted integrals (1 or 2).
    pub sigma: u8,
}

impl CarlemanWeight {
    pub fn new(lambda: f64, nu: f64, a: f64, horizon: f64, sigma: u8) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::InvalidParameter(format!("nu must be positive, got {nu}")));
        }
        if !(a.is_finite() && a > 1.0) {
            return Err(Error::InvalidParameter(format!("a must exceed 1, got {a}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if !matches!(sigma, 1 | 2) {
            return Err(Error::InvalidParameter(format!("sigma must be 1 or 2, got {sigma}")));
        }
        Ok(Self {
            lambda,
            nu,
            a,
            horizon,
            sigma,
        })
    }

    /// `log φ_{λ,ν}(t) = 2λ(t+a)^ν` for `t ∈ [0, T]`.
    pub fn log_value(&self, t: f64) -> Result<f64> {
        if !(t >= -TIME_SLACK && t <= self.horizon + TIME_SLACK) {
            return Err(Error::InvalidParameter(format!(
                "t = {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(2.0 * self.lambda * (t + self.a).powf(self.nu))
    }

    /// `σλ`: the parameter the estimates see once `φ^σ` is rewritten as a
    /// single exponential.
    pub fn effective_lambda(&self) -> f64 {
        f64::from(self.sigma) * self.lambda
    }

    /// `log φ^σ(T)`, the common factor divided out of every reported integral.
    pub fn log_scale(&self) -> f64 {
        2.0 * self.effective_lambda() * (self.horizon + self.a).powf(self.nu)
    }

    /// `φ̃^σ(t) = φ^σ(t) / φ^σ(T)`.
    pub fn normalized(&self, t: f64) -> f64 {
        let tt = t.clamp(0.0, self.horizon);
        (2.0 * self.effective_lambda() * ((tt + self.a).powf(self.nu) - (self.horizon + self.a).powf(self.nu))).exp()
    }

    pub fn normalized_levels(&self, grid: &SpaceTimeGrid) -> Vec<f64> {
        (0..grid.time_levels()).map(|k| self.normalized(grid.time(k))).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// `∫(Δu)²`
    pub lhs: f64,
    /// `Σ_{i,j} ∫ u_{x_i x_j}²`
    pub rhs: f64,
    pub relative_gap: f64,
    pub h: f64,
}

/// Both sides of the prism identity with the discrete operators of `bc`.
/// The field must satisfy `bc` on every face.
pub fn verify_identity(u: &ScalarField, bc: BoundaryCondition) -> Result<IdentityReport> {
    u.expect_kind(FieldKind::Spatial)?;
    check_boundary_compliance(u, bc)?;
    let grid = u.grid();
    let st = SpatialStencils::new(grid, bc);
    let n = grid.spatial_len();
    let w = grid.spatial_weights();
    let mut buf = vec![0.0; n];
    let sq_int = |buf: &[f64]| -> f64 { buf.iter().zip(w).map(|(v, w)| w * v * v).sum() };
    st.laplacian.apply(u.values(), &mut buf);
    let lhs = sq_int(&buf);
    let mut rhs = 0.0;
    for row in &st.second {
        for op in row {
            op.apply(u.values(), &mut buf);
            rhs += sq_int(&buf);
        }
    }
    Ok(IdentityReport {
        lhs,
        rhs,
        relative_gap: (lhs - rhs).abs() / lhs.max(GAP_FLOOR),
        h: grid.max_spacing(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimateKind {
    /// `∂_t + βΔ` with `(Δu)²` as the principal term.
    Forward,
    /// `∂_t + βΔ` with `Σ u_{x_i x_j}²` as the principal term (prisms).
    ForwardPrism,
    /// `∂_t − βΔ`.
    Backward,
}

impl EstimateKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimateKind::Forward => "forward",
            EstimateKind::ForwardPrism => "forward_prism",
            EstimateKind::Backward => "backward",
        }
    }

    /// Power of `φ` in the estimate as printed.
    pub fn default_sigma(self) -> u8 {
        match self {
            EstimateKind::Forward | EstimateKind::ForwardPrism => 2,
            EstimateKind::Backward => 1,
        }
    }
}

/// Left side and named right-side integrals of one estimate for one field,
/// all in units of `φ^σ(T)` (whose logarithm is `log_scale`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub which: EstimateKind,
    pub lhs: f64,
    pub terms: BTreeMap<String, f64>,
    pub lambda: f64,
    pub nu: f64,
    pub sigma: u8,
    pub log_scale: f64,
    pub calibrated_c: Option<f64>,
}

impl EstimateReport {
    pub fn term(&self, name: &str) -> f64 {
        self.terms.get(name).copied().unwrap_or(0.0)
    }

    /// `lhs − (right side with constant C)`; nonnegative when the estimate holds.
    pub fn margin(&self, c: f64) -> f64 {
        match self.which {
            EstimateKind::Forward | EstimateKind::ForwardPrism => {
                self.lhs - self.term("principal") - c * (self.term("gradient") + self.term("zero_order"))
                    + self.term("boundary_T")
            }
            EstimateKind::Backward => {
                self.lhs - c * (self.term("gradient") + self.term("zero_order"))
                    + c * (self.term("boundary_T") + self.term("boundary_0"))
            }
        }
    }
}

/// Per-time-level spatial integrals of every integrand the estimates use.
/// The weight enters only when these are summed, so one instance serves a
/// whole `λ` grid.
#[derive(Clone, Debug)]
pub struct SliceIntegrals {
    pub beta: f64,
    pub time_weights: Vec<f64>,
    pub times: Vec<f64>,
    pub ut2: Vec<f64>,
    pub lap2: Vec<f64>,
    pub mixed2: Vec<f64>,
    pub grad2: Vec<f64>,
    pub u2: Vec<f64>,
    pub forward_op2: Vec<f64>,
    pub backward_op2: Vec<f64>,
}

impl SliceIntegrals {
    /// Requires a spacetime field with zero normal derivative on `S_T`.
    pub fn new(u: &ScalarField, beta: f64) -> Result<Self> {
        u.expect_kind(FieldKind::SpaceTime)?;
        check_boundary_compliance(u, BoundaryCondition::Neumann0)?;
        let grid = u.grid();
        let st = SpatialStencils::new(grid, BoundaryCondition::Neumann0);
        let n = grid.spatial_len();
        let levels = grid.time_levels();
        let w = grid.spatial_weights();
        let mut ut = vec![0.0; u.len()];
        ops::time_derivative_values(grid, u.values(), &mut ut);

        let mut out = Self {
            beta,
            time_weights: grid.time_weights().to_vec(),
            times: (0..levels).map(|k| grid.time(k)).collect(),
            ut2: Vec::with_capacity(levels),
            lap2: Vec::with_capacity(levels),
            mixed2: Vec::with_capacity(levels),
            grad2: Vec::with_capacity(levels),
            u2: Vec::with_capacity(levels),
            forward_op2: Vec::with_capacity(levels),
            backward_op2: Vec::with_capacity(levels),
        };
        let mut lap = vec![0.0; n];
        let mut buf = vec![0.0; n];
        let sq = |v: &[f64]| -> f64 { v.iter().zip(w).map(|(x, w)| w * x * x).sum() };
        for k in 0..levels {
            let uk = &u.values()[k * n..(k + 1) * n];
            let utk = &ut[k * n..(k + 1) * n];
            st.laplacian.apply(uk, &mut lap);
            out.ut2.push(sq(utk));
            out.lap2.push(sq(&lap));
            out.u2.push(sq(uk));
            let mut g2 = 0.0;
            for op in &st.gradient {
                op.apply(uk, &mut buf);
                g2 += sq(&buf);
            }
            out.grad2.push(g2);
            let mut m2 = 0.0;
            for row in &st.second {
                for op in row {
                    op.apply(uk, &mut buf);
                    m2 += sq(&buf);
                }
            }
            out.mixed2.push(m2);
            for (b, (&a, &l)) in buf.iter_mut().zip(utk.iter().zip(&lap)) {
                *b = a + beta * l;
            }
            out.forward_op2.push(sq(&buf));
            for (b, (&a, &l)) in buf.iter_mut().zip(utk.iter().zip(&lap)) {
                *b = a - beta * l;
            }
            out.backward_op2.push(sq(&buf));
        }
        Ok(out)
    }

    fn weighted(&self, phi: &[f64], s: &[f64]) -> f64 {
        self.time_weights
            .iter()
            .zip(phi)
            .zip(s)
            .map(|((wt, p), v)| wt * p * v)
            .sum()
    }

    fn phi(&self, w: &CarlemanWeight) -> Vec<f64> {
        self.times.iter().map(|&t| w.normalized(t)).collect()
    }

    pub fn forward(&self, w: &CarlemanWeight, which: EstimateKind) -> Result<EstimateReport> {
        if w.nu <= 2.0 {
            return Err(Error::InvalidParameter(format!("estimate needs nu > 2, got {}", w.nu)));
        }
        let principal_sq = match which {
            EstimateKind::Forward => &self.lap2,
            EstimateKind::ForwardPrism => &self.mixed2,
            EstimateKind::Backward => {
                return Err(Error::InvalidParameter(
                    "backward kind passed to forward estimate".into(),
                ))
            }
        };
        let phi = self.phi(w);
        let lam = w.effective_lambda();
        let nu = w.nu;
        let tpa_nu = (w.horizon + w.a).powf(nu);
        let last = self.times.len() - 1;
        let b2 = self.beta * self.beta;
        let mut terms = BTreeMap::new();
        terms.insert(
            "principal".to_string(),
            0.25 * self.weighted(&phi, &self.ut2) + b2 * self.weighted(&phi, principal_sq),
        );
        terms.insert("gradient".to_string(), lam * nu * self.weighted(&phi, &self.grad2));
        terms.insert(
            "zero_order".to_string(),
            lam * lam * nu * nu * self.weighted(&phi, &self.u2),
        );
        terms.insert(
            "boundary_T".to_string(),
            self.grad2[last] + lam * nu * tpa_nu * self.u2[last],
        );
        Ok(EstimateReport {
            which,
            lhs: self.weighted(&phi, &self.forward_op2),
            terms,
            lambda: w.lambda,
            nu,
            sigma: w.sigma,
            log_scale: w.log_scale(),
            calibrated_c: None,
        })
    }

    pub fn backward(&self, w: &CarlemanWeight) -> Result<EstimateReport> {
        if w.nu <= 2.0 {
            return Err(Error::InvalidParameter(format!("estimate needs nu > 2, got {}", w.nu)));
        }
        let phi = self.phi(w);
        let lam = w.effective_lambda();
        let nu = w.nu;
        let sqrt_nu = nu.sqrt();
        let last = self.times.len() - 1;
        let mut terms = BTreeMap::new();
        terms.insert(
            "gradient".to_string(),
            sqrt_nu * self.beta * self.weighted(&phi, &self.grad2),
        );
        terms.insert("zero_order".to_string(), lam * nu * nu * self.weighted(&phi, &self.u2));
        terms.insert(
            "boundary_T".to_string(),
            lam * nu * (w.horizon + w.a).powf(nu - 1.0) * self.u2[last],
        );
        terms.insert(
            "boundary_0".to_string(),
            w.normalized(0.0) * (self.grad2[0] + sqrt_nu * self.u2[0]),
        );
        Ok(EstimateReport {
            which: EstimateKind::Backward,
            lhs: self.weighted(&phi, &self.backward_op2),
            terms,
            lambda: w.lambda,
            nu,
            sigma: w.sigma,
            log_scale: w.log_scale(),
            calibrated_c: None,
        })
    }

    pub fn report(&self, w: &CarlemanWeight, which: EstimateKind) -> Result<EstimateReport> {
        match which {
            EstimateKind::Backward => self.backward(w),
            _ => self.forward(w, which),
        }
    }
}

fn check_weight_grid(u: &ScalarField, w: &CarlemanWeight) -> Result<()> {
    let t = u.grid().horizon();
    if (t - w.horizon).abs() > TIME_SLACK * t.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "weight horizon {} does not match grid horizon {t}",
            w.horizon
        )));
    }
    Ok(())
}

/// Terms of the forward estimate for `∂_t + βΔ`.
pub fn forward_estimate_terms(
    u: &ScalarField,
    w: &CarlemanWeight,
    beta: f64,
    which: EstimateKind,
) -> Result<EstimateReport> {
    check_weight_grid(u, w)?;
    SliceIntegrals::new(u, beta)?.forward(w, which)
}

/// Terms of the backward estimate for `∂_t − βΔ`.
pub fn backward_estimate_terms(u: &ScalarField, w: &CarlemanWeight, beta: f64) -> Result<EstimateReport> {
    check_weight_grid(u, w)?;
    SliceIntegrals::new(u, beta)?.backward(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Relative width at which bisection stops.
    pub rel_precision: f64,
    /// Fraction of the largest feasible constant that is reported as calibrated.
    pub safety: f64,
    /// Feasibility at this constant marks the family degenerate.
    pub upper_cap: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            rel_precision: 1e-3,
            safety: 0.5,
            upper_cap: 1e12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub which: EstimateKind,
    pub nu: f64,
    pub beta: f64,
    pub sigma: u8,
    /// Largest feasible constant found by bisection.
    pub c_max: f64,
    /// `safety · c_max`, the constant carried to holdout checks.
    pub c_calibrated: f64,
    /// Smallest grid `λ` from which every larger grid `λ` admits `c_max`.
    pub lambda_star: f64,
    pub binding_member: usize,
    pub binding_lambda: f64,
    pub binding_margin: f64,
    /// Every constant up to `upper_cap` works (e.g. the zero family).
    pub degenerate: bool,
    /// Empirical: depends on the family and resolution, not a theorem constant.
    pub empirical: bool,
}

/// Reports for every `(member, λ)` pair, member-major.
pub fn family_reports(
    which: EstimateKind,
    family: &[ScalarField],
    lambda_grid: &[f64],
    nu: f64,
    beta: f64,
    sigma: u8,
    a: f64,
) -> Result<Vec<Vec<EstimateReport>>> {
    family
        .par_iter()
        .map(|u| {
            let slices = SliceIntegrals::new(u, beta)?;
            lambda_grid
                .iter()
                .map(|&lambda| {
                    let w = CarlemanWeight::new(lambda, nu, a, u.grid().horizon(), sigma)?;
                    slices.report(&w, which)
                })
                .collect()
        })
        .collect()
}

fn bisect_largest(feasible: impl Fn(f64) -> bool, opts: &CalibrationOptions) -> Option<(f64, bool)> {
    if !feasible(0.0) {
        return None;
    }
    let mut hi = 1.0;
    while feasible(hi) {
        if hi >= opts.upper_cap {
            return Some((opts.upper_cap, true));
        }
        hi *= 10.0;
    }
    let mut lo = 0.0;
    for _ in 0..2000 {
        if hi - lo <= opts.rel_precision * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo > 0.0).then_some((lo, false))
}

/// Largest `C` (to `rel_precision`) with `margin(C) ≥ 0` for every member
/// and every grid `λ ≥ λ*`, where `λ*` is the smallest grid value that
/// admits a positive constant.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_constant(
    which: EstimateKind,
    family: &[ScalarField],
    lambda_grid: &[f64],
    nu: f64,
    beta: f64,
    sigma: u8,
    a: f64,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    if family.is_empty() || lambda_grid.is_empty() {
        return Err(Error::InvalidParameter(
            "family and lambda grid must be nonempty".into(),
        ));
    }
    let mut grid: Vec<f64> = lambda_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let reports = family_reports(which, family, &grid, nu, beta, sigma, a)?;
    calibrate_from_reports(which, &reports, &grid, nu, beta, sigma, opts)
}

/// Calibration over precomputed reports; `grid` ascending, `reports[member][λ]`.
pub fn calibrate_from_reports(
    which: EstimateKind,
    reports: &[Vec<EstimateReport>],
    grid: &[f64],
    nu: f64,
    beta: f64,
    sigma: u8,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    for start in 0..grid.len() {
        let feasible = |c: f64| {
            reports
                .iter()
                .all(|row| row[start..].iter().all(|r| r.margin(c) >= 0.0))
        };
        if let Some((c_max, degenerate)) = bisect_largest(feasible, opts) {
            let (mut bm, mut bl, mut bmargin) = (0, grid[start], f64::INFINITY);
            for (mi, row) in reports.iter().enumerate() {
                for (li, r) in row.iter().enumerate().skip(start) {
                    let m = r.margin(c_max);
                    if m < bmargin {
                        (bm, bl, bmargin) = (mi, grid[li], m);
                    }
                }
            }
            return Ok(Calibration {
                which,
                nu,
                beta,
                sigma,
                c_max,
                c_calibrated: opts.safety * c_max,
                lambda_star: grid[start],
                binding_member: bm,
                binding_lambda: bl,
                binding_margin: bmargin,
                degenerate,
                empirical: true,
            });
        }
    }
    let (mut wm, mut wl, mut wmargin) = (0, grid[0], f64::INFINITY);
    for (mi, row) in reports.iter().enumerate() {
        for (li, r) in row.iter().enumerate() {
            let m = r.margin(0.0);
            if m < wmargin {
                (wm, wl, wmargin) = (mi, grid[li], m);
            }
        }
    }
    Err(Error::EstimateViolation {
        which: which.name(),
        member: wm,
        lambda: wl,
        margin: wmargin,
    })
}

/// Smallest margin over a family at a fixed constant, with its location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutCheck {
    pub c: f64,
    pub min_margin: f64,
    pub member: usize,
    pub lambda: f64,
    pub passed: bool,
}

pub fn holdout_check(reports: &[Vec<EstimateReport>], grid: &[f64], lambda_star: f64, c: f64) -> HoldoutCheck {
    let mut out = HoldoutCheck {
        c,
        min_margin: f64::INFINITY,
        member: 0,
        lambda: lambda_star,
        passed: true,
    };
    for (mi, row) in reports.iter().enumerate() {
        for (li, r) in row.iter().enumerate() {
            if grid[li] < lambda_star {
                continue;
            }
            let m = r.margin(c);
            if m < out.min_margin {
                out.min_margin = m;
                out.member = mi;
                out.lambda = grid[li];
            }
        }
    }
    out.passed = out.min_margin >= 0.0;
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuCandidate {
    pub nu: f64,
    pub calibration: Option<Calibration>,
    pub holdout: Option<HoldoutCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuSearch {
    /// Smallest `ν` whose calibrated constant also holds on the holdout family.
    pub nu0: Option<f64>,
    pub candidates: Vec<NuCandidate>,
}

/// Grid search for the threshold `ν₀` of the backward estimate.
#[allow(clippy::too_many_arguments)]
pub fn search_nu0(
    calibration_family: &[ScalarField],
    holdout_family: &[ScalarField],
    nus: &[f64],
    lambda_grid: &[f64],
    beta: f64,
    a: f64,
    opts: &CalibrationOptions,
) -> Result<NuSearch> {
    let which = EstimateKind::Backward;
    let sigma = which.default_sigma();
    let mut grid = lambda_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut candidates = Vec::new();
    let mut nu0 = None;
    for &nu in nus {
        let reports = family_reports(which, calibration_family, &grid, nu, beta, sigma, a)?;
        let calibration = match calibrate_from_reports(which, &reports, &grid, nu, beta, sigma, opts) {
            Ok(c) => Some(c),
            Err(Error::EstimateViolation { .. }) => None,
            Err(e) => return Err(e),
        };
        let holdout = match &calibration {
            Some(cal) => {
                let hold = family_reports(which, holdout_family, &grid, nu, beta, sigma, a)?;
                Some(holdout_check(&hold, &grid, cal.lambda_star, cal.c_calibrated))
            }
            None => None,
        };
        if nu0.is_none() && holdout.as_ref().is_some_and(|h| h.passed) {
            nu0 = Some(nu);
        }
        candidates.push(NuCandidate {
            nu,
            calibration,
            holdout,
        });
    }
    Ok(NuSearch { nu0, candidates })
}

/// Observed order of a quantity that should vanish under halving of `h`.
pub fn observed_order(coarse: f64, fine: f64, h_coarse: f64, h_fine: f64) -> f64 {
    (coarse / fine).ln() / (h_coarse / h_fine).ln()
}

/// Convenience for spatial integrals of a slice, used in tests and reports.
pub fn slice_integral(u: &ScalarField, k: usize) -> Result<f64> {
    integrate(u, Region::TimeSlice(k))
}
