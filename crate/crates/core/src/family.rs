//! Seeded random fields that satisfy the zero-Neumann condition exactly:
//! sums of tensor-product modes `Π_i cos(k_i π (x_i + A_i) / (2A_i))`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grid::{ScalarField, SpaceTimeGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct CosineMode {
    pub wavenumbers: Vec<u32>,
    pub amplitude: f64,
    /// Time envelope `c0 + c1 t + c2 t² + c3 sin(ω t)`.
    pub envelope: [f64; 4],
    pub omega: f64,
}

impl CosineMode {
    fn spatial(&self, half_widths: &[f64], x: &[f64]) -> f64 {
        self.wavenumbers
            .iter()
            .zip(half_widths.iter().zip(x))
            .map(|(&k, (&a, &xi))| (k as f64 * std::f64::consts::PI * (xi + a) / (2.0 * a)).cos())
            .product::<f64>()
            * self.amplitude
    }

    fn envelope(&self, t: f64) -> f64 {
        let [c0, c1, c2, c3] = self.envelope;
        c0 + c1 * t + c2 * t * t + c3 * (self.omega * t).sin()
    }
}

/// A truncated cosine series with decaying coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct CosineSeries {
    pub modes: Vec<CosineMode>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesSpec {
    /// Largest wavenumber per axis.
    pub max_wavenumber: u32,
    /// Restrict to even wavenumbers.
    pub even_only: bool,
    pub n_modes: usize,
    /// Modulate each mode in time; otherwise the envelope is constant.
    pub time_dependent: bool,
}

impl Default for SeriesSpec {
    fn default() -> Self {
        Self {
            max_wavenumber: 4,
            even_only: true,
            n_modes: 4,
            time_dependent: true,
        }
    }
}

impl CosineSeries {
    pub fn random(dim: usize, spec: SeriesSpec, rng: &mut impl Rng) -> Self {
        let step = if spec.even_only { 2 } else { 1 };
        let choices = spec.max_wavenumber / step + 1;
        let modes = (0..spec.n_modes)
            .map(|_| {
                let wavenumbers: Vec<u32> = (0..dim).map(|_| rng.gen_range(0..choices) * step).collect();
                let k2: f64 = wavenumbers.iter().map(|&k| (k * k) as f64).sum();
                let amplitude = rng.gen_range(-1.0..1.0) / (1.0 + k2);
                let envelope = if spec.time_dependent {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-0.5..0.5),
                    ]
                } else {
                    [1.0, 0.0, 0.0, 0.0]
                };
                CosineMode {
                    wavenumbers,
                    amplitude,
                    envelope,
                    omega: rng.gen_range(1.0..4.0),
                }
            })
            .collect();
        Self { modes }
    }

    pub fn eval(&self, half_widths: &[f64], x: &[f64], t: f64) -> f64 {
        self.modes
            .iter()
            .map(|m| m.spatial(half_widths, x) * m.envelope(t))
            .sum()
    }

    pub fn sample_spatial(&self, grid: &Arc<SpaceTimeGrid>) -> Result<ScalarField> {
        let a = grid.domain().half_widths().to_vec();
        ScalarField::from_fn_spatial(grid, |x| self.eval(&a, x, 0.0))
    }

    pub fn sample_spacetime(&self, grid: &Arc<SpaceTimeGrid>) -> Result<ScalarField> {
        let a = grid.domain().half_widths().to_vec();
        ScalarField::from_fn_spacetime(grid, |x, t| self.eval(&a, x, t))
    }
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `count` independent spacetime members drawn from one seed.
pub fn spacetime_family(
    grid: &Arc<SpaceTimeGrid>,
    spec: SeriesSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<ScalarField>> {
    let mut rng = rng_from_seed(seed);
    (0..count)
        .map(|_| CosineSeries::random(grid.dim(), spec, &mut rng).sample_spacetime(grid))
        .collect()
}

/// Members multiplied by `1 − t/T`, so each vanishes on the terminal slice.
/// Without this the terminal boundary term of the backward estimate absorbs
/// every constant and calibration is vacuous.
pub fn tapered(family: &[ScalarField]) -> Result<Vec<ScalarField>> {
    family
        .iter()
        .map(|u| {
            let grid = u.grid();
            let n = grid.spatial_len();
            let horizon = grid.horizon();
            let vals = u
                .values()
                .chunks(n)
                .enumerate()
                .flat_map(|(k, c)| {
                    let s = 1.0 - grid.time(k) / horizon;
                    c.iter().map(move |x| s * x)
                })
                .collect();
            ScalarField::new(grid.clone(), u.kind(), vals)
        })
        .collect()
}
