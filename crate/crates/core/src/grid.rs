//! Rectangular-prism geometry, uniform space-time grids, sampled fields,
//! trapezoidal quadrature and the Sobolev-type norms built on them.
//!
//! The spatial domain is `Ω = Π (−A_i, A_i)`. Grids are tensor products of
//! uniform node sets that include the boundary faces; spacings are derived
//! from node counts and never stored independently. Spacetime values are
//! laid out time-level-major, then row-major over the spatial axes (last
//! axis fastest).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, BoundaryCondition};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrismDomain {
    half_widths: Vec<f64>,
}

impl PrismDomain {
    pub fn new(half_widths: Vec<f64>) -> Result<Self> {
        if half_widths.is_empty() {
            return Err(Error::InvalidGrid("domain needs at least one axis".into()));
        }
        if let Some(a) = half_widths.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::InvalidGrid(format!(
                "half-widths must be positive and finite, got {a}"
            )));
        }
        Ok(Self { half_widths })
    }

    pub fn dim(&self) -> usize {
        self.half_widths.len()
    }

    pub fn half_widths(&self) -> &[f64] {
        &self.half_widths
    }

    /// Lebesgue measure `Π 2A_i`.
    pub fn measure(&self) -> f64 {
        self.half_widths.iter().map(|a| 2.0 * a).product()
    }

    /// All `2n` faces `Γ_i±`.
    pub fn faces(&self) -> Vec<Face> {
        (0..self.dim())
            .flat_map(|axis| [Face::new(axis, Side::Lower), Face::new(axis, Side::Upper)])
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Lower,
    Upper,
}

/// A boundary face `Γ_i−` (`x_i = −A_i`) or `Γ_i+` (`x_i = A_i`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Face {
    pub axis: usize,
    pub side: Side,
}

impl Face {
    pub fn new(axis: usize, side: Side) -> Self {
        Self { axis, side }
    }
}

impl fmt::Display for Face {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = match self.side {
            Side::Lower => '-',
            Side::Upper => '+',
        };
        write!(f, "Gamma_{}{}", self.axis + 1, sign)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeGrid {
    domain: PrismDomain,
    horizon: f64,
    nodes: Vec<usize>,
    time_steps: usize,
    strides: Vec<usize>,
    spatial_weights: Vec<f64>,
    time_weights: Vec<f64>,
}

impl SpaceTimeGrid {
    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes
    }

    pub fn domain(&self) -> &PrismDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn time_levels(&self) -> usize {
        self.time_steps + 1
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        2.0 * self.domain.half_widths[axis] / (self.nodes[axis] - 1) as f64
    }

    pub fn spacings(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.spacing(i)).collect()
    }

    /// Largest spatial spacing, the `h` quoted in convergence studies.
    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|i| self.spacing(i)).fold(0.0, f64::max)
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.time_steps as f64
    }

    pub fn spatial_len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn spacetime_len(&self) -> usize {
        self.spatial_len() * self.time_levels()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn coord(&self, axis: usize, j: usize) -> f64 {
        let a = self.domain.half_widths[axis];
        if j + 1 == self.nodes[axis] {
            a
        } else {
            -a + j as f64 * self.spacing(axis)
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.time_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(j, s)| j * s).sum()
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for axis in 0..self.dim() {
            out[axis] = idx / self.strides[axis];
            idx %= self.strides[axis];
        }
        out
    }

    /// Index of a node along one axis.
    pub fn axis_index(&self, idx: usize, axis: usize) -> usize {
        (idx / self.strides[axis]) % self.nodes[axis]
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(axis, &j)| self.coord(axis, j))
            .collect()
    }

    /// Trapezoidal weights over Ω; also the control-volume sizes of the
    /// conservative flux form.
    pub fn spatial_weights(&self) -> &[f64] {
        &self.spatial_weights
    }

    /// Trapezoidal weights over `[0, T]`.
    pub fn time_weights(&self) -> &[f64] {
        &self.time_weights
    }

    /// Spatial node indices lying on the face.
    pub fn face_nodes(&self, face: Face) -> Vec<usize> {
        let target = match face.side {
            Side::Lower => 0,
            Side::Upper => self.nodes[face.axis] - 1,
        };
        (0..self.spatial_len())
            .filter(|&i| self.axis_index(i, face.axis) == target)
            .collect()
    }

    pub fn is_boundary_node(&self, idx: usize) -> bool {
        (0..self.dim()).any(|axis| {
            let j = self.axis_index(idx, axis);
            j == 0 || j + 1 == self.nodes[axis]
        })
    }

    /// Nodes of the lateral boundary `S_T`, as (time level, spatial index).
    pub fn lateral_boundary(&self) -> Vec<(usize, usize)> {
        let boundary: Vec<usize> = (0..self.spatial_len()).filter(|&i| self.is_boundary_node(i)).collect();
        (0..self.time_levels())
            .flat_map(|k| boundary.iter().map(move |&i| (k, i)))
            .collect()
    }

    /// Same geometry with a different resolution.
    pub fn refined(&self, nodes_per_axis: Vec<usize>, time_steps: usize) -> Result<Arc<Self>> {
        build_grid(self.domain.clone(), self.horizon, nodes_per_axis, time_steps)
    }
}

/// Builds a uniform tensor-product grid on `Ω × [0, T]` with nodes on every
/// face and at both ends of the time interval.
pub fn build_grid(
    domain: PrismDomain,
    horizon: f64,
    nodes_per_axis: Vec<usize>,
    time_steps: usize,
) -> Result<Arc<SpaceTimeGrid>> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidGrid(format!(
            "time horizon must be positive, got {horizon}"
        )));
    }
    if nodes_per_axis.len() != domain.dim() {
        return Err(Error::InvalidGrid(format!(
            "{} node counts given for a {}-dimensional domain",
            nodes_per_axis.len(),
            domain.dim()
        )));
    }
    if let Some(n) = nodes_per_axis.iter().find(|&&n| n < 3) {
        return Err(Error::InvalidGrid(format!("need at least 3 nodes per axis, got {n}")));
    }
    if time_steps < 2 {
        return Err(Error::InvalidGrid(format!(
            "need at least 2 time steps, got {time_steps}"
        )));
    }
    let dim = domain.dim();
    let mut strides = vec![1; dim];
    for axis in (0..dim.saturating_sub(1)).rev() {
        strides[axis] = strides[axis + 1] * nodes_per_axis[axis + 1];
    }
    let spatial_len: usize = nodes_per_axis.iter().product();
    let hs: Vec<f64> = (0..dim)
        .map(|i| 2.0 * domain.half_widths()[i] / (nodes_per_axis[i] - 1) as f64)
        .collect();
    let spatial_weights = (0..spatial_len)
        .map(|idx| {
            (0..dim)
                .map(|axis| {
                    let j = (idx / strides[axis]) % nodes_per_axis[axis];
                    trapezoid_weight(j, nodes_per_axis[axis], hs[axis])
                })
                .product()
        })
        .collect();
    let dt = horizon / time_steps as f64;
    let time_weights = (0..=time_steps)
        .map(|k| trapezoid_weight(k, time_steps + 1, dt))
        .collect();
    Ok(Arc::new(SpaceTimeGrid {
        domain,
        horizon,
        nodes: nodes_per_axis,
        time_steps,
        strides,
        spatial_weights,
        time_weights,
    }))
}

fn trapezoid_weight(j: usize, n: usize, h: f64) -> f64 {
    if j == 0 || j + 1 == n {
        0.5 * h
    } else {
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldKind {
    Spatial,
    SpaceTime,
}

impl FieldKind {
    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Spatial => "spatial",
            FieldKind::SpaceTime => "spacetime",
        }
    }
}

/// Real values sampled at the nodes of a grid, either on Ω alone or on the
/// whole space-time cylinder.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Arc<SpaceTimeGrid>,
    kind: FieldKind,
    values: Vec<f64>,
}

impl PartialEq for ScalarField {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.values == other.values && *self.grid == *other.grid
    }
}

impl ScalarField {
    pub fn new(grid: Arc<SpaceTimeGrid>, kind: FieldKind, values: Vec<f64>) -> Result<Self> {
        let expected = match kind {
            FieldKind::Spatial => grid.spatial_len(),
            FieldKind::SpaceTime => grid.spacetime_len(),
        };
        if values.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "{} field needs {expected} values, got {}",
                kind.name(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "field construction",
                step: i,
            });
        }
        Ok(Self { grid, kind, values })
    }

    /// Unchecked constructor for values produced by finite arithmetic on
    /// finite inputs.
    pub(crate) fn from_parts(grid: Arc<SpaceTimeGrid>, kind: FieldKind, values: Vec<f64>) -> Self {
        debug_assert_eq!(
            values.len(),
            match kind {
                FieldKind::Spatial => grid.spatial_len(),
                FieldKind::SpaceTime => grid.spacetime_len(),
            }
        );
        Self { grid, kind, values }
    }

    pub fn zeros(grid: &Arc<SpaceTimeGrid>, kind: FieldKind) -> Self {
        let len = match kind {
            FieldKind::Spatial => grid.spatial_len(),
            FieldKind::SpaceTime => grid.spacetime_len(),
        };
        Self::from_parts(grid.clone(), kind, vec![0.0; len])
    }

    pub fn constant(grid: &Arc<SpaceTimeGrid>, kind: FieldKind, c: f64) -> Self {
        let mut f = Self::zeros(grid, kind);
        f.values.iter_mut().for_each(|v| *v = c);
        f
    }

    pub fn from_fn_spatial(grid: &Arc<SpaceTimeGrid>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.spatial_len()).map(|i| f(&grid.point(i))).collect();
        Self::new(grid.clone(), FieldKind::Spatial, values)
    }

    pub fn from_fn_spacetime(grid: &Arc<SpaceTimeGrid>, f: impl Fn(&[f64], f64) -> f64) -> Result<Self> {
        let points: Vec<Vec<f64>> = (0..grid.spatial_len()).map(|i| grid.point(i)).collect();
        let mut values = Vec::with_capacity(grid.spacetime_len());
        for k in 0..grid.time_levels() {
            let t = grid.time(k);
            values.extend(points.iter().map(|x| f(x, t)));
        }
        Self::new(grid.clone(), FieldKind::SpaceTime, values)
    }

    /// Stacks spatial slices into a spacetime field; one slice per time level.
    pub fn from_slices(slices: &[ScalarField]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidParameter("no slices given".into()))?;
        let grid = first.grid.clone();
        if slices.len() != grid.time_levels() {
            return Err(Error::InvalidParameter(format!(
                "need {} slices, got {}",
                grid.time_levels(),
                slices.len()
            )));
        }
        let mut values = Vec::with_capacity(grid.spacetime_len());
        for s in slices {
            s.expect_kind(FieldKind::Spatial)?;
            if *s.grid != *grid {
                return Err(Error::GridMismatch);
            }
            values.extend_from_slice(&s.values);
        }
        Ok(Self::from_parts(grid, FieldKind::SpaceTime, values))
    }

    /// Spatial field repeated at every time level.
    pub fn extend_in_time(&self) -> Result<Self> {
        self.expect_kind(FieldKind::Spatial)?;
        let mut values = Vec::with_capacity(self.grid.spacetime_len());
        for _ in 0..self.grid.time_levels() {
            values.extend_from_slice(&self.values);
        }
        Ok(Self::from_parts(self.grid.clone(), FieldKind::SpaceTime, values))
    }

    pub fn grid(&self) -> &Arc<SpaceTimeGrid> {
        &self.grid
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn expect_kind(&self, kind: FieldKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::KindMismatch {
                expected: kind.name(),
                found: self.kind.name(),
            })
        }
    }

    pub fn same_grid(&self, other: &ScalarField) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Spatial slice at time level `k`.
    pub fn slice(&self, k: usize) -> Result<ScalarField> {
        self.expect_kind(FieldKind::SpaceTime)?;
        if k >= self.grid.time_levels() {
            return Err(Error::InvalidParameter(format!(
                "time level {k} out of range (0..={})",
                self.grid.time_steps()
            )));
        }
        Ok(Self::from_parts(
            self.grid.clone(),
            FieldKind::Spatial,
            self.slice_values(k).to_vec(),
        ))
    }

    pub(crate) fn slice_values(&self, k: usize) -> &[f64] {
        let n = self.grid.spatial_len();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            self.kind,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_grid(other)?;
        if self.kind != other.kind {
            return Err(Error::KindMismatch {
                expected: self.kind.name(),
                found: other.kind.name(),
            });
        }
        Self::new(
            self.grid.clone(),
            self.kind,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn add(&self, other: &ScalarField) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        self.map(|v| c * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Mirror image `x_axis ↦ −x_axis`.
    pub fn reflect(&self, axis: usize) -> Result<Self> {
        let dim = self.grid.dim();
        if axis >= dim {
            return Err(Error::AxisOutOfRange { axis, dim });
        }
        let n = self.grid.spatial_len();
        let nodes = self.grid.nodes_per_axis()[axis];
        let stride = self.grid.stride(axis);
        let mut values = self.values.clone();
        for (chunk_out, chunk_in) in values.chunks_mut(n).zip(self.values.chunks(n)) {
            for (i, out) in chunk_out.iter_mut().enumerate() {
                let j = self.grid.axis_index(i, axis);
                let mirror = i - j * stride + (nodes - 1 - j) * stride;
                *out = chunk_in[mirror];
            }
        }
        Ok(Self::from_parts(self.grid.clone(), self.kind, values))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Omega,
    SpaceTime,
    TimeSlice(usize),
}

/// Composite trapezoidal quadrature. Exact for multilinear integrands.
pub fn integrate(field: &ScalarField, region: Region) -> Result<f64> {
    let grid = field.grid();
    match region {
        Region::Omega => {
            field.expect_kind(FieldKind::Spatial)?;
            Ok(weighted_sum(grid.spatial_weights(), field.values()))
        }
        Region::SpaceTime => {
            field.expect_kind(FieldKind::SpaceTime)?;
            Ok(integrate_spacetime_values(grid, field.values()))
        }
        Region::TimeSlice(k) => {
            field.expect_kind(FieldKind::SpaceTime)?;
            if k >= grid.time_levels() {
                return Err(Error::InvalidParameter(format!(
                    "time level {k} out of range (0..={})",
                    grid.time_steps()
                )));
            }
            Ok(weighted_sum(grid.spatial_weights(), field.slice_values(k)))
        }
    }
}

pub(crate) fn weighted_sum(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(w, v)| w * v).sum()
}

pub(crate) fn integrate_spacetime_values(grid: &SpaceTimeGrid, values: &[f64]) -> f64 {
    let n = grid.spatial_len();
    grid.time_weights()
        .iter()
        .enumerate()
        .map(|(k, wt)| wt * weighted_sum(grid.spatial_weights(), &values[k * n..(k + 1) * n]))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    L2Omega,
    H1Omega,
    L2SpaceTime,
    /// Value and spatial gradient in `L²(Q_T)`.
    H10SpaceTime,
    /// `H10SpaceTime` plus the time derivative and all second spatial derivatives.
    H21SpaceTime,
}

/// Norm under the zero-Neumann ghost extension.
pub fn norm(field: &ScalarField, kind: NormKind) -> Result<f64> {
    norm_with_bc(field, kind, BoundaryCondition::Neumann0)
}

/// Norm with the derivative stencils closed by the given ghost extension.
pub fn norm_with_bc(field: &ScalarField, kind: NormKind, bc: BoundaryCondition) -> Result<f64> {
    Ok(squared_norm(field, kind, bc)?.sqrt())
}

pub(crate) fn squared_norm(field: &ScalarField, kind: NormKind, bc: BoundaryCondition) -> Result<f64> {
    let region = match kind {
        NormKind::L2Omega | NormKind::H1Omega => {
            field.expect_kind(FieldKind::Spatial)?;
            Region::Omega
        }
        _ => {
            field.expect_kind(FieldKind::SpaceTime)?;
            Region::SpaceTime
        }
    };
    let sq = |f: &ScalarField| -> Result<f64> { integrate(&f.map(|v| v * v)?, region) };
    let mut total = sq(field)?;
    if matches!(kind, NormKind::L2Omega | NormKind::L2SpaceTime) {
        return Ok(total);
    }
    for component in ops::gradient(field, bc)? {
        total += sq(&component)?;
    }
    if kind == NormKind::H21SpaceTime {
        total += sq(&ops::time_derivative(field)?)?;
        let dim = field.grid().dim();
        for i in 0..dim {
            for j in 0..dim {
                total += sq(&ops::mixed_second(field, i, j, bc)?)?;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn square(n: usize, steps: usize) -> Arc<SpaceTimeGrid> {
        build_grid(PrismDomain::new(vec![1.0, 1.0]).unwrap(), 1.0, vec![n, n], steps).unwrap()
    }

    #[test]
    fn small_square_grid_arithmetic() {
        let g = square(3, 2);
        assert_eq!(g.spatial_len(), 9);
        assert_eq!(g.spacing(0), 1.0);
        assert_eq!(g.dt(), 0.5);
        assert_eq!(g.coord(0, 0), -1.0);
        assert_eq!(g.coord(0, 2), 1.0);
        assert_eq!(g.time(2), 1.0);
    }

    #[test]
    fn interval_grid_arithmetic() {
        let g = build_grid(PrismDomain::new(vec![2.0]).unwrap(), 0.5, vec![5], 4).unwrap();
        assert_eq!(g.spacing(0), 1.0);
        assert_eq!(g.dt(), 0.125);
    }

    #[test]
    fn rejects_degenerate_grids() {
        let d = PrismDomain::new(vec![1.0, 1.0]).unwrap();
        assert!(build_grid(d.clone(), 1.0, vec![2, 3], 2).is_err());
        assert!(build_grid(d.clone(), 1.0, vec![3, 3], 1).is_err());
        assert!(build_grid(d, -1.0, vec![3, 3], 2).is_err());
        assert!(PrismDomain::new(vec![1.0, 0.0]).is_err());
        assert!(PrismDomain::new(vec![]).is_err());
    }

    #[test]
    fn endpoints_are_exact_for_awkward_spacings() {
        let g = build_grid(PrismDomain::new(vec![0.3]).unwrap(), 0.7, vec![7], 3).unwrap();
        assert_eq!(g.coord(0, 6), 0.3);
        assert_eq!(g.coord(0, 0), -0.3);
        assert_eq!(g.time(3), 0.7);
    }

    #[test]
    fn faces_partition_the_boundary() {
        let g = build_grid(PrismDomain::new(vec![1.0, 2.0, 0.5]).unwrap(), 1.0, vec![4, 5, 3], 2).unwrap();
        let faces = g.domain().faces();
        assert_eq!(faces.len(), 6);
        let mut on_some_face = vec![false; g.spatial_len()];
        for f in faces {
            for i in g.face_nodes(f) {
                on_some_face[i] = true;
            }
        }
        for i in 0..g.spatial_len() {
            assert_eq!(on_some_face[i], g.is_boundary_node(i));
        }
    }

    #[test]
    fn measures() {
        let g = square(3, 2);
        let one = ScalarField::constant(&g, FieldKind::Spatial, 1.0);
        assert!((integrate(&one, Region::Omega).unwrap() - 4.0).abs() < 1e-15);

        let g = build_grid(PrismDomain::new(vec![1.0]).unwrap(), 2.0, vec![5], 4).unwrap();
        let one = ScalarField::constant(&g, FieldKind::SpaceTime, 1.0);
        assert!((integrate(&one, Region::SpaceTime).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn quadratic_quadrature_matches_antiderivative() {
        let g = build_grid(PrismDomain::new(vec![1.0]).unwrap(), 1.0, vec![129], 2).unwrap();
        let f = ScalarField::from_fn_spatial(&g, |x| x[0] * x[0]).unwrap();
        // ∫_{-1}^{1} x² dx = [x³/3]
        let exact = (1.0f64.powi(3) - (-1.0f64).powi(3)) / 3.0;
        assert!((integrate(&f, Region::Omega).unwrap() - exact).abs() < 1e-4);
    }

    #[test]
    fn quadrature_refinement_order() {
        let errs: Vec<f64> = [17, 33, 65]
            .iter()
            .map(|&n| {
                let g = build_grid(PrismDomain::new(vec![1.0]).unwrap(), 1.0, vec![n], 2).unwrap();
                let f = ScalarField::from_fn_spatial(&g, |x| (x[0]).exp()).unwrap();
                (integrate(&f, Region::Omega).unwrap() - (1f64.exp() - (-1f64).exp())).abs()
            })
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.9);
        }
    }

    #[test]
    fn region_kind_mismatch_is_an_error() {
        let g = square(3, 2);
        let s = ScalarField::zeros(&g, FieldKind::Spatial);
        assert!(integrate(&s, Region::SpaceTime).is_err());
        let st = ScalarField::zeros(&g, FieldKind::SpaceTime);
        assert!(integrate(&st, Region::Omega).is_err());
        assert!(integrate(&st, Region::TimeSlice(3)).is_err());
        assert!(norm(&s, NormKind::H10SpaceTime).is_err());
    }

    #[test]
    fn norm_examples() {
        let g = square(9, 2);
        for kind in [NormKind::L2Omega, NormKind::H1Omega] {
            assert_eq!(norm(&ScalarField::zeros(&g, FieldKind::Spatial), kind).unwrap(), 0.0);
        }
        for kind in [NormKind::L2SpaceTime, NormKind::H10SpaceTime, NormKind::H21SpaceTime] {
            assert_eq!(norm(&ScalarField::zeros(&g, FieldKind::SpaceTime), kind).unwrap(), 0.0);
        }
        let c = ScalarField::constant(&g, FieldKind::Spatial, -1.5);
        assert!((norm(&c, NormKind::L2Omega).unwrap() - 3.0).abs() < 1e-14);

        // ∫ sin²(πx) = 1 and ∫ π² cos²(πx) = π² on (−1, 1); sin vanishes on the faces so the
        // odd ghost extension resolves the boundary derivative.
        let g = build_grid(PrismDomain::new(vec![1.0]).unwrap(), 1.0, vec![257], 2).unwrap();
        let u = ScalarField::from_fn_spatial(&g, |x| (PI * x[0]).sin()).unwrap();
        let h1 = norm_with_bc(&u, NormKind::H1Omega, BoundaryCondition::Dirichlet0).unwrap();
        assert!((h1 - (1.0 + PI * PI).sqrt()).abs() < 1e-3, "{h1}");

        let u = ScalarField::from_fn_spatial(&g, |x| (PI * x[0]).cos()).unwrap();
        let h1 = norm(&u, NormKind::H1Omega).unwrap();
        assert!((h1 - (1.0 + PI * PI).sqrt()).abs() < 1e-3, "{h1}");
    }

    #[test]
    fn reflection_is_an_involution() {
        let g = square(5, 2);
        let f = ScalarField::from_fn_spacetime(&g, |x, t| x[0] + 2.0 * x[1] * x[1] + t).unwrap();
        let r = f.reflect(0).unwrap();
        let expect = ScalarField::from_fn_spacetime(&g, |x, t| -x[0] + 2.0 * x[1] * x[1] + t).unwrap();
        assert_eq!(r, expect);
        assert_eq!(r.reflect(0).unwrap(), f);
    }
}
