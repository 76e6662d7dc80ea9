//! Nonlinear one-dimensional Darcy flow
//! `d/dx(-κ(s) ds/dx) = u` on the grid's interval, `s = 0` at both ends,
//! with `κ(s) = 0.2 + s²`.

use crate::error::{Error, Result};

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 50;
pub const LINE_SEARCH_HALVINGS: usize = 20;

pub fn permeability(s: f64) -> f64 {
    0.2 + s * s
}

fn permeability_prime(s: f64) -> f64 {
    2.0 * s
}

/// Discrete residual at interior nodes; boundary entries are zero.
fn residual(s: &[f64], u: &[f64], x: &[f64], out: &mut [f64]) {
    let n = s.len();
    out[0] = 0.0;
    out[n - 1] = 0.0;
    for i in 1..n - 1 {
        let (hm, hp) = (x[i] - x[i - 1], x[i + 1] - x[i]);
        let km = 0.5 * (permeability(s[i - 1]) + permeability(s[i]));
        let kp = 0.5 * (permeability(s[i]) + permeability(s[i + 1]));
        let flux_p = kp * (s[i + 1] - s[i]) / hp;
        let flux_m = km * (s[i] - s[i - 1]) / hm;
        out[i] = -(flux_p - flux_m) / (0.5 * (hm + hp)) - u[i];
    }
}

/// Tridiagonal Jacobian of [`residual`] over interior unknowns.
fn jacobian(s: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = s.len();
    let ni = n - 2;
    let (mut lower, mut diag, mut upper) = (vec![0.0; ni], vec![0.0; ni], vec![0.0; ni]);
    for r in 0..ni {
        let i = r + 1;
        let (hm, hp) = (x[i] - x[i - 1], x[i + 1] - x[i]);
        let w = 0.5 * (hm + hp);
        let km = 0.5 * (permeability(s[i - 1]) + permeability(s[i]));
        let kp = 0.5 * (permeability(s[i]) + permeability(s[i + 1]));
        let (dp, dm) = ((s[i + 1] - s[i]) / hp, (s[i] - s[i - 1]) / hm);
        // d flux_p / d s_i, d s_{i+1}; d flux_m / d s_{i-1}, d s_i
        let fp_i = 0.5 * permeability_prime(s[i]) * dp - kp / hp;
        let fp_ip = 0.5 * permeability_prime(s[i + 1]) * dp + kp / hp;
        let fm_im = 0.5 * permeability_prime(s[i - 1]) * dm - km / hm;
        let fm_i = 0.5 * permeability_prime(s[i]) * dm + km / hm;
        diag[r] = -(fp_i - fm_i) / w;
        upper[r] = -fp_ip / w;
        lower[r] = fm_im / w;
    }
    (lower, diag, upper)
}

/// Thomas algorithm; `lower[0]` and `upper[n-1]` are ignored.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return None;
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return None;
        }
        c[i] = upper[i] / denom;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves for `s` on a strictly increasing grid (not necessarily uniform),
/// starting Newton from `s = 0`. `u` at the boundary nodes is ignored.
pub fn solve_darcy_1d(u: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    let n = grid.len();
    if n < 3 {
        return Err(Error::Config(format!("Darcy grid needs at least 3 points, got {n}")));
    }
    if u.len() != n {
        return Err(Error::Dimension(format!(
            "forcing has {} values but the grid has {n}",
            u.len()
        )));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("Darcy grid must be strictly increasing".into()));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite Darcy forcing".into()));
    }

    let mut s = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut f_trial = vec![0.0; n];
    residual(&s, u, grid, &mut f);
    let mut norm = inf_norm(&f);
    for _ in 0..NEWTON_MAX_ITER {
        if norm < NEWTON_TOL {
            return Ok(s);
        }
        let (lo, di, up) = jacobian(&s, grid);
        let rhs: Vec<f64> = f[1..n - 1].iter().map(|v| -v).collect();
        let delta = solve_tridiagonal(&lo, &di, &up, &rhs).ok_or_else(|| {
            Error::Solver(format!("singular Newton Jacobian, residual {norm:e}"))
        })?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=LINE_SEARCH_HALVINGS {
            trial.copy_from_slice(&s);
            for (t, d) in trial[1..n - 1].iter_mut().zip(&delta) {
                *t += step * d;
            }
            residual(&trial, u, grid, &mut f_trial);
            let trial_norm = inf_norm(&f_trial);
            if trial_norm < norm {
                std::mem::swap(&mut s, &mut trial);
                std::mem::swap(&mut f, &mut f_trial);
                norm = trial_norm;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No reduction is possible once the residual sits at round-off level.
            if norm < NEWTON_TOL * 1e3 {
                return Ok(s);
            }
            return Err(Error::Solver(format!(
                "Darcy Newton line search stalled with residual {norm:e}"
            )));
        }
    }
    if norm < NEWTON_TOL {
        return Ok(s);
    }
    Err(Error::Solver(format!(
        "Darcy Newton did not converge in {NEWTON_MAX_ITER} iterations, residual {norm:e}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn zero_forcing_zero_solution() {
        let g = grid(40);
        assert_eq!(solve_darcy_1d(&vec![0.0; 40], &g).unwrap(), vec![0.0; 40]);
    }

    #[test]
    fn residual_at_solution_is_small() {
        let g = grid(40);
        let u: Vec<f64> = g.iter().map(|x| 5.0 * (3.0 * x).sin()).collect();
        let s = solve_darcy_1d(&u, &g).unwrap();
        let mut r = vec![0.0; 40];
        residual(&s, &u, &g, &mut r);
        assert!(inf_norm(&r) < 1e-9);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let g: Vec<f64> = vec![0.0, 0.1, 0.25, 0.5, 0.6, 1.0];
        let s = vec![0.0, 0.3, -0.7, 1.1, 0.4, 0.0];
        let u = vec![0.0; 6];
        let (lo, di, up) = jacobian(&s, &g);
        let h = 1e-6;
        for j in 1..5 {
            let (mut sp, mut sm) = (s.clone(), s.clone());
            sp[j] += h;
            sm[j] -= h;
            let (mut rp, mut rm) = (vec![0.0; 6], vec![0.0; 6]);
            residual(&sp, &u, &g, &mut rp);
            residual(&sm, &u, &g, &mut rm);
            for i in 1..5 {
                let fd = (rp[i] - rm[i]) / (2.0 * h);
                let r = i - 1;
                let an = if i == j {
                    di[r]
                } else if j == i + 1 {
                    up[r]
                } else if j + 1 == i {
                    lo[r]
                } else {
                    0.0
                };
                assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()), "({i},{j}) {fd} vs {an}");
            }
        }
    }

    #[test]
    fn tiny_grid_rejected() {
        assert!(matches!(solve_darcy_1d(&[0.0, 0.0], &[0.0, 1.0]), Err(Error::Config(_))));
    }

    /// `u = d/dx(-κ(s*) s*')` for `s* = sin(πx)`.
    pub(crate) fn manufactured_forcing(x: f64) -> f64 {
        let (s, ds, dds) = ((PI * x).sin(), PI * (PI * x).cos(), -PI * PI * (PI * x).sin());
        -(2.0 * s * ds * ds + permeability(s) * dds)
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        let errs: Vec<f64> = [21, 41, 81]
            .iter()
            .map(|&n| {
                let g = grid(n);
                let u: Vec<f64> = g.iter().map(|&x| manufactured_forcing(x)).collect();
                let s = solve_darcy_1d(&u, &g).unwrap();
                g.iter()
                    .zip(&s)
                    .map(|(x, v)| (v - (PI * x).sin()).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..=4.5).contains(&ratio), "ratio {ratio} from {errs:?}");
        }
    }
}
