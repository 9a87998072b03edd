//! Second-order finite-difference operators on uniform prism grids.
//!
//! Boundary closure is by ghost reflection: `Neumann0` mirrors evenly
//! (`u[-1] = u[1]`), `Dirichlet0` oddly (`u[-1] = -u[1]`). Corner ghosts
//! reflect once per axis. Every spatial operator is assembled as a sparse
//! matrix so the optimizer can apply exact transposes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FieldKind, ScalarField, Side, SpaceTimeGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryCondition {
    Neumann0,
    Dirichlet0,
}

impl BoundaryCondition {
    fn ghost_sign(self) -> f64 {
        match self {
            BoundaryCondition::Neumann0 => 1.0,
            BoundaryCondition::Dirichlet0 => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundaryCondition::Neumann0 => "Neumann0",
            BoundaryCondition::Dirichlet0 => "Dirichlet0",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FluxScheme {
    Centered,
    Upwind,
}

/// Compressed-row sparse matrix.
#[derive(Clone, Debug, Default)]
pub struct SparseOp {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOp {
    fn from_rows(n: usize, mut row: impl FnMut(usize, &mut Vec<(usize, f64)>)) -> Self {
        let mut op = SparseOp {
            row_ptr: Vec::with_capacity(n + 1),
            cols: Vec::new(),
            vals: Vec::new(),
        };
        op.row_ptr.push(0);
        let mut buf = Vec::new();
        for r in 0..n {
            buf.clear();
            row(r, &mut buf);
            for &(c, v) in &buf {
                op.cols.push(c);
                op.vals.push(v);
            }
            op.row_ptr.push(op.cols.len());
        }
        op
    }

    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// `y = A x`
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
            *out = self.cols[lo..hi]
                .iter()
                .zip(&self.vals[lo..hi])
                .map(|(&c, &v)| v * x[c])
                .sum();
        }
    }

    /// `y += Aᵀ x`
    pub fn apply_transpose_add(&self, x: &[f64], y: &mut [f64]) {
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.cols[p]] += self.vals[p] * xr;
            }
        }
    }

    /// Applies the operator to every time level of a spacetime array.
    pub fn apply_slices(&self, x: &[f64], y: &mut [f64]) {
        let n = self.rows();
        for (xs, ys) in x.chunks(n).zip(y.chunks_mut(n)) {
            self.apply(xs, ys);
        }
    }

    pub fn apply_transpose_add_slices(&self, x: &[f64], y: &mut [f64]) {
        let n = self.rows();
        for (xs, ys) in x.chunks(n).zip(y.chunks_mut(n)) {
            self.apply_transpose_add(xs, ys);
        }
    }
}

/// Neighbour of `idx` one step along `axis`, resolved through the ghost
/// reflection of `bc`.
fn neighbour(grid: &SpaceTimeGrid, bc: BoundaryCondition, idx: usize, axis: usize, up: bool) -> (usize, f64) {
    let j = grid.axis_index(idx, axis);
    let n = grid.nodes_per_axis()[axis];
    let s = grid.stride(axis);
    match (up, j) {
        (true, j) if j + 1 < n => (idx + s, 1.0),
        (true, _) => (idx - s, bc.ghost_sign()),
        (false, 0) => (idx + s, bc.ghost_sign()),
        (false, _) => (idx - s, 1.0),
    }
}

/// Assembled spatial stencils for one grid and boundary closure.
#[derive(Clone, Debug)]
pub struct SpatialStencils {
    pub bc: BoundaryCondition,
    pub gradient: Vec<SparseOp>,
    pub laplacian: SparseOp,
    /// `second[i][j]`, symmetric in `i, j`.
    pub second: Vec<Vec<SparseOp>>,
}

impl SpatialStencils {
    pub fn new(grid: &SpaceTimeGrid, bc: BoundaryCondition) -> Self {
        let n = grid.spatial_len();
        let dim = grid.dim();
        let gradient = (0..dim)
            .map(|axis| {
                let h = grid.spacing(axis);
                SparseOp::from_rows(n, |r, row| {
                    let (p, sp) = neighbour(grid, bc, r, axis, true);
                    let (m, sm) = neighbour(grid, bc, r, axis, false);
                    row.push((p, sp / (2.0 * h)));
                    row.push((m, -sm / (2.0 * h)));
                })
            })
            .collect();
        let second_diff = |axis: usize| {
            let h2 = grid.spacing(axis).powi(2);
            SparseOp::from_rows(n, |r, row| {
                let (p, sp) = neighbour(grid, bc, r, axis, true);
                let (m, sm) = neighbour(grid, bc, r, axis, false);
                row.push((m, sm / h2));
                row.push((r, -2.0 / h2));
                row.push((p, sp / h2));
            })
        };
        let laplacian = SparseOp::from_rows(n, |r, row| {
            for axis in 0..dim {
                let h2 = grid.spacing(axis).powi(2);
                let (p, sp) = neighbour(grid, bc, r, axis, true);
                let (m, sm) = neighbour(grid, bc, r, axis, false);
                row.push((m, sm / h2));
                row.push((r, -2.0 / h2));
                row.push((p, sp / h2));
            }
        });
        let mut second = Vec::with_capacity(dim);
        for i in 0..dim {
            let mut line = Vec::with_capacity(dim);
            for j in 0..dim {
                if i == j {
                    line.push(second_diff(i));
                } else {
                    let scale = 1.0 / (4.0 * grid.spacing(i) * grid.spacing(j));
                    line.push(SparseOp::from_rows(n, |r, row| {
                        for (ui, si) in [(true, 1.0), (false, -1.0)] {
                            let (a, sa) = neighbour(grid, bc, r, i, ui);
                            for (uj, sj) in [(true, 1.0), (false, -1.0)] {
                                let (b, sb) = neighbour(grid, bc, a, j, uj);
                                row.push((b, si * sj * sa * sb * scale));
                            }
                        }
                    }));
                }
            }
            second.push(line);
        }
        Self {
            bc,
            gradient,
            laplacian,
            second,
        }
    }
}

fn spatial_op_on_field(u: &ScalarField, op: &SparseOp) -> ScalarField {
    let mut out = vec![0.0; u.len()];
    op.apply_slices(u.values(), &mut out);
    ScalarField::from_parts(u.grid().clone(), u.kind(), out)
}

/// Centered gradient, applied slice-wise to spacetime fields.
pub fn gradient(u: &ScalarField, bc: BoundaryCondition) -> Result<Vec<ScalarField>> {
    let st = SpatialStencils::new(u.grid(), bc);
    Ok(st.gradient.iter().map(|op| spatial_op_on_field(u, op)).collect())
}

/// `(2n+1)`-point Laplacian.
pub fn laplacian(u: &ScalarField, bc: BoundaryCondition) -> Result<ScalarField> {
    let st = SpatialStencils::new(u.grid(), bc);
    Ok(spatial_op_on_field(u, &st.laplacian))
}

/// `u_{x_i x_j}` with zero-based axes; `i == j` is the 1-D second difference,
/// otherwise the 4-point cross stencil.
pub fn mixed_second(u: &ScalarField, i: usize, j: usize, bc: BoundaryCondition) -> Result<ScalarField> {
    let dim = u.grid().dim();
    for axis in [i, j] {
        if axis >= dim {
            return Err(Error::AxisOutOfRange { axis, dim });
        }
    }
    let st = SpatialStencils::new(u.grid(), bc);
    Ok(spatial_op_on_field(u, &st.second[i][j]))
}

/// Weights of the second-order time derivative at level `k` of `levels`:
/// centered in the interior, one-sided three-point at both ends.
pub(crate) fn time_stencil(k: usize, levels: usize, dt: f64) -> [(usize, f64); 3] {
    let c = 1.0 / (2.0 * dt);
    if k == 0 {
        [(0, -3.0 * c), (1, 4.0 * c), (2, -c)]
    } else if k + 1 == levels {
        [(k, 3.0 * c), (k - 1, -4.0 * c), (k - 2, c)]
    } else {
        [(k + 1, c), (k - 1, -c), (k, 0.0)]
    }
}

pub(crate) fn time_derivative_values(grid: &SpaceTimeGrid, u: &[f64], out: &mut [f64]) {
    let n = grid.spatial_len();
    let levels = grid.time_levels();
    let dt = grid.dt();
    for k in 0..levels {
        let st = time_stencil(k, levels, dt);
        let dst = &mut out[k * n..(k + 1) * n];
        for (s, o) in dst.iter_mut().enumerate() {
            *o = st.iter().map(|&(l, w)| w * u[l * n + s]).sum();
        }
    }
}

/// `y += D_tᵀ x`
pub(crate) fn time_derivative_transpose_add(grid: &SpaceTimeGrid, x: &[f64], y: &mut [f64]) {
    let n = grid.spatial_len();
    let levels = grid.time_levels();
    let dt = grid.dt();
    for k in 0..levels {
        for &(l, w) in &time_stencil(k, levels, dt) {
            if w == 0.0 {
                continue;
            }
            for s in 0..n {
                y[l * n + s] += w * x[k * n + s];
            }
        }
    }
}

pub fn time_derivative(u: &ScalarField) -> Result<ScalarField> {
    u.expect_kind(FieldKind::SpaceTime)?;
    let mut out = vec![0.0; u.len()];
    time_derivative_values(u.grid(), u.values(), &mut out);
    Ok(ScalarField::from_parts(u.grid().clone(), FieldKind::SpaceTime, out))
}

/// Interior faces of the control-volume partition, with the geometry the
/// conservative transport term needs.
#[derive(Clone, Debug)]
pub struct FluxFaces {
    /// `(left node, right node, axis)`; faces on `∂Ω` carry zero flux and are absent.
    pub faces: Vec<(usize, usize, usize)>,
    /// Control-volume width of each node along each axis: `h` inside, `h/2` on faces.
    pub widths: Vec<Vec<f64>>,
    pub spacings: Vec<f64>,
}

impl FluxFaces {
    pub fn new(grid: &SpaceTimeGrid) -> Self {
        let dim = grid.dim();
        let n = grid.spatial_len();
        let mut faces = Vec::new();
        for axis in 0..dim {
            let last = grid.nodes_per_axis()[axis] - 1;
            for a in 0..n {
                if grid.axis_index(a, axis) < last {
                    faces.push((a, a + grid.stride(axis), axis));
                }
            }
        }
        let widths = (0..dim)
            .map(|axis| {
                let h = grid.spacing(axis);
                let last = grid.nodes_per_axis()[axis] - 1;
                (0..n)
                    .map(|i| {
                        let j = grid.axis_index(i, axis);
                        if j == 0 || j == last {
                            0.5 * h
                        } else {
                            h
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            faces,
            widths,
            spacings: grid.spacings(),
        }
    }

    /// `out = ∇·(κ² m ∇v)` on one time level.
    pub fn divergence(&self, m: &[f64], v: &[f64], kappa2: &[f64], scheme: FluxScheme, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(a, b, axis) in &self.faces {
            let speed = 0.5 * (kappa2[a] + kappa2[b]) * (v[b] - v[a]) / self.spacings[axis];
            let m_face = match scheme {
                FluxScheme::Centered => 0.5 * (m[a] + m[b]),
                FluxScheme::Upwind if speed >= 0.0 => m[a],
                FluxScheme::Upwind => m[b],
            };
            let flux = speed * m_face;
            out[a] += flux / self.widths[axis][a];
            out[b] -= flux / self.widths[axis][b];
        }
    }

    /// Adjoint of the centered divergence: given `g = ∂J/∂(div)`, accumulates
    /// `∂J/∂m` and `∂J/∂v`.
    pub fn divergence_adjoint_add(
        &self,
        m: &[f64],
        v: &[f64],
        kappa2: &[f64],
        g: &[f64],
        dm: &mut [f64],
        dv: &mut [f64],
    ) {
        for &(a, b, axis) in &self.faces {
            let h = self.spacings[axis];
            let dflux = g[a] / self.widths[axis][a] - g[b] / self.widths[axis][b];
            if dflux == 0.0 {
                continue;
            }
            let k = 0.5 * (kappa2[a] + kappa2[b]);
            let dv_coef = k * 0.5 * (m[a] + m[b]) / h * dflux;
            dv[b] += dv_coef;
            dv[a] -= dv_coef;
            let dm_coef = 0.5 * k * (v[b] - v[a]) / h * dflux;
            dm[a] += dm_coef;
            dm[b] += dm_coef;
        }
    }

    /// Largest `Δt Σ_i |κ²∂_i v| / h_i` over interior faces of one level.
    pub fn courant(&self, v: &[f64], kappa2: &[f64], dt: f64) -> f64 {
        let mut per_node = vec![0.0f64; v.len()];
        for &(a, b, axis) in &self.faces {
            let speed = (0.5 * (kappa2[a] + kappa2[b]) * (v[b] - v[a]) / self.spacings[axis]).abs();
            let c = dt * speed / self.spacings[axis];
            per_node[a] = per_node[a].max(c);
            per_node[b] = per_node[b].max(c);
        }
        per_node.into_iter().fold(0.0, f64::max)
    }
}

/// Conservative `∇·(κ² m ∇v)` with zero flux through every face of `∂Ω`.
/// `m` and `v` must share a kind; `kappa2` is spatial.
pub fn divergence_of_flux(
    m: &ScalarField,
    v: &ScalarField,
    kappa2: &ScalarField,
    scheme: FluxScheme,
) -> Result<ScalarField> {
    m.same_grid(v)?;
    m.same_grid(kappa2)?;
    kappa2.expect_kind(FieldKind::Spatial)?;
    v.expect_kind(m.kind())?;
    let grid = m.grid();
    let faces = FluxFaces::new(grid);
    let n = grid.spatial_len();
    let mut out = vec![0.0; m.len()];
    for ((ms, vs), os) in m.values().chunks(n).zip(v.values().chunks(n)).zip(out.chunks_mut(n)) {
        faces.divergence(ms, vs, kappa2.values(), scheme, os);
    }
    Ok(ScalarField::from_parts(grid.clone(), m.kind(), out))
}

/// Worst boundary-condition violation of a field, measured face by face.
///
/// `Neumann0`: second-order one-sided normal derivative. `Dirichlet0`: the
/// face value itself. Returns `(face, spatial node, time level, |value|)`.
pub fn worst_boundary_violation(u: &ScalarField, bc: BoundaryCondition) -> (String, usize, usize, f64) {
    let grid = u.grid();
    let n = grid.spatial_len();
    let levels = match u.kind() {
        FieldKind::Spatial => 1,
        FieldKind::SpaceTime => grid.time_levels(),
    };
    let mut worst = (String::new(), 0, 0, 0.0f64);
    for face in grid.domain().faces() {
        let axis = face.axis;
        let h = grid.spacing(axis);
        let s = grid.stride(axis) as isize;
        let inward: isize = match face.side {
            Side::Lower => s,
            Side::Upper => -s,
        };
        for node in grid.face_nodes(face) {
            for k in 0..levels {
                let vals = &u.values()[k * n..(k + 1) * n];
                let at = |off: isize| vals[(node as isize + off * inward) as usize];
                let value = match bc {
                    BoundaryCondition::Dirichlet0 => at(0).abs(),
                    BoundaryCondition::Neumann0 => ((-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)).abs(),
                };
                if value > worst.3 {
                    worst = (face.to_string(), node, k, value);
                }
            }
        }
    }
    worst
}

/// Largest one-sided third difference next to the faces, the scale of the
/// truncation error in the Neumann compliance measurement.
fn boundary_third_derivative(u: &ScalarField) -> f64 {
    let grid = u.grid();
    let n = grid.spatial_len();
    let levels = u.len() / n;
    let mut worst = 0.0f64;
    for face in grid.domain().faces() {
        let axis = face.axis;
        if grid.nodes_per_axis()[axis] < 4 {
            continue;
        }
        let h = grid.spacing(axis);
        let s = grid.stride(axis) as isize;
        let inward: isize = match face.side {
            Side::Lower => s,
            Side::Upper => -s,
        };
        for node in grid.face_nodes(face) {
            for k in 0..levels {
                let vals = &u.values()[k * n..(k + 1) * n];
                let at = |off: isize| vals[(node as isize + off * inward) as usize];
                let d3 = (-at(0) + 3.0 * at(1) - 3.0 * at(2) + at(3)) / h.powi(3);
                worst = worst.max(d3.abs());
            }
        }
    }
    worst
}

/// Accepts `u` as compatible with `bc` when its worst face measurement is at
/// most `10 h²`, scaled by the local third-derivative size for Neumann data.
pub fn check_boundary_compliance(u: &ScalarField, bc: BoundaryCondition) -> Result<()> {
    let h = u.grid().max_spacing();
    let scale = match bc {
        BoundaryCondition::Neumann0 => boundary_third_derivative(u).max(1.0),
        BoundaryCondition::Dirichlet0 => 1.0,
    };
    let tolerance = 10.0 * h * h * scale;
    let (face, node, level, value) = worst_boundary_violation(u, bc);
    if value > tolerance {
        return Err(Error::BoundaryViolation {
            bc: bc.name(),
            face,
            node,
            level,
            value,
            tolerance,
        });
    }
    Ok(())
}
