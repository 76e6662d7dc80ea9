//! Viscous Burgers equation `u_t = ν u_xx - u u_x` on the unit circle,
//! pseudo-spectral in space with 2/3 dealiasing and classical RK4 in time.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Advective Courant number used to bound the time step.
pub const CFL: f64 = 0.4;
/// RK4's stability interval on the negative real axis is about 2.78.
const DIFFUSIVE_LIMIT: f64 = 2.5;

pub struct BurgersSolver {
    n: usize,
    nu: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Angular wavenumbers `2πκ`; the Nyquist mode gets zero.
    k: Vec<f64>,
    /// Whether each mode survives dealiasing.
    keep: Vec<bool>,
    scratch: Vec<Complex64>,
}

impl BurgersSolver {
    pub fn new(n: usize, nu: f64) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Config(format!(
                "Burgers grid size must be a power of two ≥ 4, got {n}"
            )));
        }
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::Config(format!("viscosity must be > 0, got {nu}")));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let kappa = |j: usize| -> i64 {
            if j <= n / 2 {
                j as i64
            } else {
                j as i64 - n as i64
            }
        };
        let k = (0..n)
            .map(|j| if j == n / 2 { 0.0 } else { 2.0 * PI * kappa(j) as f64 })
            .collect();
        let cutoff = n as i64 / 3;
        let keep = (0..n).map(|j| kappa(j).abs() <= cutoff && j != n / 2).collect();
        let scratch = vec![Complex64::default(); forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len())];
        Ok(BurgersSolver {
            n,
            nu,
            forward,
            inverse,
            k,
            keep,
            scratch,
        })
    }

    fn to_physical(&mut self, hat: &[Complex64]) -> Vec<Complex64> {
        let mut buf = hat.to_vec();
        self.inverse.process_with_scratch(&mut buf, &mut self.scratch);
        let inv_n = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v = Complex64::new(v.re * inv_n, 0.0);
        }
        buf
    }

    fn rhs(&mut self, hat: &[Complex64], out: &mut [Complex64]) {
        let u = self.to_physical(hat);
        let mut w: Vec<Complex64> = u.iter().map(|v| Complex64::new(0.5 * v.re * v.re, 0.0)).collect();
        self.forward.process_with_scratch(&mut w, &mut self.scratch);
        for j in 0..self.n {
            let k = self.k[j];
            let nonlinear = if self.keep[j] {
                -Complex64::new(0.0, k) * w[j]
            } else {
                Complex64::default()
            };
            out[j] = nonlinear - self.nu * k * k * hat[j];
        }
    }

    fn rk4_step(&mut self, hat: &mut [Complex64], dt: f64) {
        let n = self.n;
        let mut k1 = vec![Complex64::default(); n];
        let mut k2 = vec![Complex64::default(); n];
        let mut k3 = vec![Complex64::default(); n];
        let mut k4 = vec![Complex64::default(); n];
        let mut tmp = vec![Complex64::default(); n];
        self.rhs(hat, &mut k1);
        for j in 0..n {
            tmp[j] = hat[j] + 0.5 * dt * k1[j];
        }
        self.rhs(&tmp, &mut k2);
        for j in 0..n {
            tmp[j] = hat[j] + 0.5 * dt * k2[j];
        }
        self.rhs(&tmp, &mut k3);
        for j in 0..n {
            tmp[j] = hat[j] + dt * k3[j];
        }
        self.rhs(&tmp, &mut k4);
        for j in 0..n {
            hat[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }

    fn max_dt(&mut self, hat: &[Complex64]) -> f64 {
        let u = self.to_physical(hat);
        let umax = u.iter().fold(0.0f64, |m, v| m.max(v.re.abs()));
        let dx = 1.0 / self.n as f64;
        let kmax = PI * self.n as f64;
        let diffusive = DIFFUSIVE_LIMIT / (self.nu * kmax * kmax);
        if umax > 0.0 {
            diffusive.min(CFL * dx / umax)
        } else {
            diffusive
        }
    }

    /// Evolves `f0` (samples at `j/n`) and returns Fourier coefficients at each time in `t_grid`.
    pub fn evolve(&mut self, f0: &[f64], t_grid: &[f64]) -> Result<Vec<Vec<Complex64>>> {
        if f0.len() != self.n {
            return Err(Error::Dimension(format!(
                "initial field has {} samples but the solver grid has {}",
                f0.len(),
                self.n
            )));
        }
        if f0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite initial field".into()));
        }
        if t_grid.iter().any(|t| !(*t >= 0.0)) || t_grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(
                "time grid must be non-negative and non-decreasing".into(),
            ));
        }
        let mut hat: Vec<Complex64> = f0.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process_with_scratch(&mut hat, &mut self.scratch);
        // The Nyquist mode has no real derivative; drop it so it cannot persist undamped.
        hat[self.n / 2] = Complex64::default();
        let mut out = Vec::with_capacity(t_grid.len());
        let mut t = 0.0;
        for &target in t_grid {
            let span = target - t;
            if span > 0.0 {
                let steps = (span / self.max_dt(&hat)).ceil().max(1.0) as usize;
                let dt = span / steps as f64;
                for _ in 0..steps {
                    self.rk4_step(&mut hat, dt);
                }
                if hat.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                    return Err(Error::Solver(format!(
                        "Burgers solution blew up before t = {target}; use a smaller time step or larger viscosity"
                    )));
                }
                t = target;
            }
            out.push(hat.clone());
        }
        Ok(out)
    }
}

/// Evaluates a real field with Fourier coefficients `hat` (unnormalized FFT output) at `x`.
pub fn spectral_eval(hat: &[Complex64], x: f64) -> f64 {
    let n = hat.len();
    let mut v = hat[0].re;
    for j in 1..n / 2 {
        let c = hat[j];
        let w = 2.0 * PI * j as f64 * x;
        v += 2.0 * (c.re * w.cos() - c.im * w.sin());
    }
    v / n as f64
}

/// Solution on the solver grid `j/n` at each time: shape `[n, t_grid.len()]`.
pub fn solve_burgers(f0: &[f64], nu: f64, t_grid: &[f64]) -> Result<Tensor> {
    let n = f0.len();
    let mut solver = BurgersSolver::new(n, nu)?;
    let hats = solver.evolve(f0, t_grid)?;
    let nt = t_grid.len();
    let mut data = vec![0.0; n * nt];
    for (it, hat) in hats.iter().enumerate() {
        let u = solver.to_physical(hat);
        for (j, v) in u.iter().enumerate() {
            data[j * nt + it] = v.re;
        }
    }
    Ok(Tensor::from_parts(vec![n, nt], data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|j| j as f64 / n as f64).collect()
    }

    #[test]
    fn constant_is_stationary() {
        let u = solve_burgers(&vec![0.7; 64], 0.1, &[0.0, 0.5, 1.0]).unwrap();
        assert!(u.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn mean_is_conserved() {
        let f0: Vec<f64> = grid(128)
            .iter()
            .map(|x| 0.3 + (2.0 * PI * x).sin() + 0.5 * (6.0 * PI * x).cos())
            .collect();
        let t: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let u = solve_burgers(&f0, 0.05, &t).unwrap();
        let m0 = f0.iter().sum::<f64>() / 128.0;
        for it in 0..t.len() {
            let m = (0..128).map(|j| u.get2(j, it)).sum::<f64>() / 128.0;
            assert!((m - m0).abs() < 1e-8, "mean drift {} at t={}", m - m0, t[it]);
        }
    }

    #[test]
    fn viscous_limit_matches_heat_decay() {
        let xs = grid(128);
        let f0: Vec<f64> = xs.iter().map(|x| (2.0 * PI * x).sin()).collect();
        let (nu, t) = (1.0, 0.1);
        let u = solve_burgers(&f0, nu, &[t]).unwrap();
        let decay = (-4.0 * PI * PI * nu * t).exp();
        let (mut num, mut den) = (0.0, 0.0);
        for (j, x) in xs.iter().enumerate() {
            let exact = decay * (2.0 * PI * x).sin();
            num += (u.get2(j, 0) - exact).powi(2);
            den += exact * exact;
        }
        let rel = (num / den).sqrt();
        assert!(rel < 0.05, "relative error {rel}");
    }

    #[test]
    fn spectral_interpolation_reproduces_modes() {
        let n = 32;
        let f: Vec<f64> = grid(n).iter().map(|x| 1.0 + (2.0 * PI * 3.0 * x).cos()).collect();
        let mut hat: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut hat);
        for x in [0.013, 0.5, 0.77] {
            let exact = 1.0 + (2.0 * PI * 3.0 * x).cos();
            assert!((spectral_eval(&hat, x) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(solve_burgers(&vec![0.0; 100], 0.1, &[0.0]).is_err());
        assert!(solve_burgers(&vec![0.0; 64], 0.0, &[0.0]).is_err());
        assert!(solve_burgers(&vec![0.0; 64], 0.1, &[0.5, 0.1]).is_err());
    }
}
