//! Heat equation `∂T/∂t = α ΔT` on the unit square with zero edges and a
//! uniform initial temperature `T0`, solved by separation of variables.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::SampleSet;
use crate::tensor::Tensor;

/// Series terms below this bound are dropped.
pub const SERIES_TOL: f64 = 1e-10;
/// Hard cap on odd modes per axis; only reached for `t` extremely close to zero.
pub const MAX_MODES: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatGrid {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
}

impl Default for HeatGrid {
    fn default() -> Self {
        HeatGrid { nx: 32, ny: 32, nt: 16 }
    }
}

impl HeatGrid {
    pub fn points(&self) -> usize {
        self.nx * self.ny * self.nt
    }

    /// Parses `"NXxNYxNT"`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('x').collect();
        let bad = || Error::Config(format!("heat grid must look like 32x32x16, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: Vec<usize> = parts
            .iter()
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if v.iter().any(|&n| n < 2) {
            return Err(bad());
        }
        Ok(HeatGrid { nx: v[0], ny: v[1], nt: v[2] })
    }

    /// Query points `(x, y, t)` over `[0,1]³`, `x` varying fastest, then `y`, then `t`.
    pub fn query_points(&self) -> Tensor {
        let lin = |n: usize, i: usize| i as f64 / (n - 1) as f64;
        let mut data = Vec::with_capacity(self.points() * 3);
        for it in 0..self.nt {
            for iy in 0..self.ny {
                for ix in 0..self.nx {
                    data.extend([lin(self.nx, ix), lin(self.ny, iy), lin(self.nt, it)]);
                }
            }
        }
        Tensor::from_parts(vec![self.points(), 3], data)
    }
}

/// `Σ_{odd m} sin(mπx) e^{-απ²m²t} / m`, which equals `π/4` for `0 < x < 1` at `t = 0`.
fn axis_series(x: f64, alpha: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return if x > 0.0 && x < 1.0 { PI / 4.0 } else { 0.0 };
    }
    let mut sum = 0.0;
    for j in 0..MAX_MODES {
        let m = (2 * j + 1) as f64;
        let bound = (-alpha * PI * PI * m * m * t).exp() / m;
        if bound < SERIES_TOL {
            break;
        }
        sum += (m * PI * x).sin() * bound;
    }
    sum
}

/// Temperature at `(x, y, t)`.
pub fn heat_solution(t0: f64, alpha: f64, x: f64, y: f64, t: f64) -> f64 {
    if t0 == 0.0 {
        return 0.0;
    }
    16.0 * t0 / (PI * PI) * axis_series(x, alpha, t) * axis_series(y, alpha, t)
}

/// One sample: input is the raw pair `(T0, α)` at a single dummy point,
/// output is the temperature on the grid's query points.
pub fn gen_heat(t0: f64, alpha_diff: f64, grid: HeatGrid) -> Result<SampleSet> {
    if !(0.0..=1.0).contains(&t0) {
        return Err(Error::Config(format!("T0 must lie in [0, 1], got {t0}")));
    }
    if !(1e-2..=1.0).contains(&alpha_diff) {
        return Err(Error::Config(format!(
            "diffusivity must lie in [1e-2, 1], got {alpha_diff}"
        )));
    }
    let ys = grid.query_points();
    // The solution factorizes, so each axis series is computed once per (coordinate, t).
    let lin = |n: usize, i: usize| i as f64 / (n - 1) as f64;
    let mut tfs = Vec::with_capacity(grid.points());
    for it in 0..grid.nt {
        let t = lin(grid.nt, it);
        let sx: Vec<f64> = (0..grid.nx).map(|i| axis_series(lin(grid.nx, i), alpha_diff, t)).collect();
        let sy: Vec<f64> = (0..grid.ny).map(|i| axis_series(lin(grid.ny, i), alpha_diff, t)).collect();
        for vy in &sy {
            for vx in &sx {
                tfs.push(16.0 * t0 / (PI * PI) * vx * vy);
            }
        }
    }
    SampleSet::new(
        Tensor::from_parts(vec![1, 1], vec![0.0]),
        Tensor::from_parts(vec![1, 2], vec![t0, alpha_diff]),
        ys,
        Tensor::from_parts(vec![grid.points(), 1], tfs),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_initial_temperature_stays_zero() {
        let s = gen_heat(0.0, 0.1, HeatGrid { nx: 5, ny: 5, nt: 3 }).unwrap();
        assert!(s.tfs.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn initial_condition_recovered_in_interior() {
        assert!((heat_solution(0.7, 0.3, 0.5, 0.4, 0.0) - 0.7).abs() < 1e-3);
        // A tiny positive time exercises the truncated series rather than the closed form.
        assert!((heat_solution(0.7, 0.3, 0.5, 0.4, 1e-6) - 0.7).abs() < 1e-3);
    }

    #[test]
    fn pde_residual_is_small() {
        let (t0, a) = (0.8, 0.05);
        let (h, dt) = (1e-3, 1e-5);
        for &(x, y, t) in &[(0.3, 0.6, 0.05), (0.5, 0.5, 0.2), (0.8, 0.25, 0.5)] {
            let u = |x, y, t| heat_solution(t0, a, x, y, t);
            let ut = (u(x, y, t + dt) - u(x, y, t - dt)) / (2.0 * dt);
            let lap = (u(x + h, y, t) + u(x - h, y, t) + u(x, y + h, t) + u(x, y - h, t)
                - 4.0 * u(x, y, t))
                / (h * h);
            let rel = (ut - a * lap).abs() / ut.abs().max(1e-12);
            assert!(rel < 1e-3, "relative residual {rel} at {x},{y},{t}");
        }
    }

    #[test]
    fn out_of_range_parameters_rejected() {
        assert!(gen_heat(1.5, 0.1, HeatGrid::default()).is_err());
        assert!(gen_heat(0.5, 2.0, HeatGrid::default()).is_err());
    }

    #[test]
    fn grid_parse() {
        assert_eq!(HeatGrid::parse("32x32x16").unwrap(), HeatGrid::default());
        assert!(HeatGrid::parse("32x32").is_err());
    }
}
