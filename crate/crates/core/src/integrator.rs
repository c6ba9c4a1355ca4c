use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Error control for the embedded Dormand–Prince 5(4) pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rtol: 1e-10, atol: 1e-12, max_steps: 5_000_000 }
    }
}

impl Tolerances {
    pub fn halved(self) -> Self {
        Tolerances { rtol: self.rtol / 2.0, atol: self.atol / 2.0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.max_steps > 0) {
            return Err(Error::Config(format!("invalid integrator tolerances {self:?}")));
        }
        Ok(())
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// 5th-order weights are the last row of A; E = b5 − b4.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Complex linear-or-not system y' = f(t, y) integrated onto a monotone grid.
pub struct Integrator<F> {
    f: F,
    tol: Tolerances,
    k: Vec<Vec<C64>>,
    tmp: Vec<C64>,
    err: Vec<C64>,
    ynew: Vec<C64>,
    pub steps: usize,
    pub rejected: usize,
}

impl<F: Fn(f64, &[C64], &mut [C64])> Integrator<F> {
    pub fn new(f: F, dim: usize, tol: Tolerances) -> Self {
        Integrator {
            f,
            tol,
            k: vec![vec![C64::new(0.0, 0.0); dim]; 7],
            tmp: vec![C64::new(0.0, 0.0); dim],
            err: vec![C64::new(0.0, 0.0); dim],
            ynew: vec![C64::new(0.0, 0.0); dim],
            steps: 0,
            rejected: 0,
        }
    }

    fn error_norm(&self, y: &[C64]) -> f64 {
        let n = y.len().max(1) as f64;
        let s: f64 = y
            .iter()
            .zip(&self.ynew)
            .zip(&self.err)
            .map(|((a, b), e)| {
                let sc = self.tol.atol + self.tol.rtol * a.norm().max(b.norm());
                (e.norm() / sc).powi(2)
            })
            .sum();
        (s / n).sqrt()
    }

    fn initial_step(&mut self, t: f64, y: &[C64], span: f64) -> f64 {
        (self.f)(t, y, &mut self.k[0]);
        let scale = |v: &[C64]| {
            let n = v.len().max(1) as f64;
            (v.iter().zip(y).map(|(a, b)| (a.norm() / (self.tol.atol + self.tol.rtol * b.norm())).powi(2)).sum::<f64>() / n).sqrt()
        };
        let d0 = scale(y);
        let d1 = scale(&self.k[0]);
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h.min(span.abs()).max(1e-12 * span.abs().max(1.0))
    }

    /// Advances y from t0 to t1 (either direction); returns the suggested next step size.
    pub fn advance(&mut self, y: &mut [C64], t0: f64, t1: f64, h_guess: Option<f64>) -> Result<f64> {
        let span = t1 - t0;
        if span == 0.0 {
            return Ok(h_guess.unwrap_or(0.0));
        }
        let dir = span.signum();
        let mut t = t0;
        let mut h = match h_guess {
            Some(h) if h > 0.0 => h,
            _ => self.initial_step(t0, y, span),
        };
        (self.f)(t, y, &mut self.k[0]);
        loop {
            let remaining = (t1 - t) * dir;
            if remaining <= 0.0 {
                break;
            }
            let landing = h >= remaining;
            let step = if landing { remaining } else { h };
            let hs = step * dir;
            for s in 1..7 {
                for i in 0..y.len() {
                    let mut acc = C64::new(0.0, 0.0);
                    for (r, a) in A[s].iter().enumerate().take(s) {
                        if *a != 0.0 {
                            acc += self.k[r][i] * *a;
                        }
                    }
                    self.tmp[i] = y[i] + acc * hs;
                }
                let (_, tail) = self.k.split_at_mut(s);
                (self.f)(t + C[s] * hs, &self.tmp, &mut tail[0]);
            }
            // stage 6 evaluated at the 5th-order solution (FSAL)
            self.ynew.copy_from_slice(&self.tmp);
            for i in 0..y.len() {
                let mut e = C64::new(0.0, 0.0);
                for (r, w) in E.iter().enumerate() {
                    if *w != 0.0 {
                        e += self.k[r][i] * *w;
                    }
                }
                self.err[i] = e * hs;
            }
            let en = self.error_norm(y);
            self.steps += 1;
            if self.steps > self.tol.max_steps {
                return Err(Error::TooManySteps(self.tol.max_steps));
            }
            if en <= 1.0 {
                y.copy_from_slice(&self.ynew);
                t = if landing { t1 } else { t + hs };
                self.k.swap(0, 6);
                let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
                if !landing {
                    h = step * fac;
                } else {
                    h = h.max(step * fac);
                }
            } else {
                self.rejected += 1;
                h = step * (0.9 * en.powf(-0.2)).clamp(0.1, 1.0);
                if h < 1e-14 * t.abs().max(1.0) {
                    return Err(Error::StepUnderflow { t, h });
                }
            }
        }
        Ok(h)
    }
}

/// Integrates y' = f(t, y) from grid[0] and records y at every grid point; the grid must be monotone.
pub fn integrate_on_grid<F>(f: F, y0: &[C64], grid: &[f64], tol: Tolerances) -> Result<Vec<Vec<C64>>>
where
    F: Fn(f64, &[C64], &mut [C64]),
{
    tol.validate()?;
    if grid.windows(2).any(|w| w[1] == w[0]) || (grid.len() > 2 && grid.windows(3).any(|w| (w[1] - w[0]) * (w[2] - w[1]) < 0.0)) {
        return Err(Error::Config("integration grid must be strictly monotone".into()));
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut y = y0.to_vec();
    let Some(&first) = grid.first() else { return Ok(out) };
    out.push(y.clone());
    let mut integ = Integrator::new(f, y0.len(), tol);
    let mut h = None;
    let mut t = first;
    for &tn in &grid[1..] {
        h = Some(integ.advance(&mut y, t, tn, h)?);
        t = tn;
        out.push(y.clone());
    }
    Ok(out)
}

/// Final state after integrating from t0 to t1.
pub fn propagate<F>(f: F, y0: &[C64], t0: f64, t1: f64, tol: Tolerances) -> Result<Vec<C64>>
where
    F: Fn(f64, &[C64], &mut [C64]),
{
    tol.validate()?;
    let mut y = y0.to_vec();
    let mut integ = Integrator::new(f, y0.len(), tol);
    integ.advance(&mut y, t0, t1, None)?;
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tableau_consistency() {
        for s in 0..7 {
            let row: f64 = A[s].iter().sum();
            assert!((row - C[s]).abs() < 1e-14, "row {s}");
        }
        let b4: Vec<f64> = (0..7).map(|i| if i < 6 { A[6][i] } else { 0.0 } - E[i]).collect();
        assert!((b4.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(E.iter().sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn exponential_decay_and_rotation() {
        let w = C64::new(-0.3, 2.0);
        let f = |_t: f64, y: &[C64], o: &mut [C64]| o[0] = w * y[0];
        let grid: Vec<f64> = (0..=50).map(|i| i as f64 * 0.1).collect();
        let ys = integrate_on_grid(f, &[C64::new(1.0, 0.0)], &grid, Tolerances::default()).unwrap();
        for (t, y) in grid.iter().zip(&ys) {
            assert!((y[0] - (w * t).exp()).norm() < 1e-9);
        }
    }

    #[test]
    fn time_dependent_phase() {
        // y' = i cos(t) y → y = e^{i sin t}
        let f = |t: f64, y: &[C64], o: &mut [C64]| o[0] = C64::new(0.0, t.cos()) * y[0];
        let y = propagate(f, &[C64::new(1.0, 0.0)], 0.0, 20.0, Tolerances::default()).unwrap();
        assert!((y[0] - C64::new(0.0, 20f64.sin()).exp()).norm() < 1e-9);
        let back = propagate(f, &y, 20.0, 0.0, Tolerances::default()).unwrap();
        assert!((back[0] - C64::new(1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn descending_grid_and_errors() {
        let f = |_t: f64, y: &[C64], o: &mut [C64]| o[0] = -y[0];
        let ys = integrate_on_grid(f, &[C64::new(1.0, 0.0)], &[2.0, 1.0, 0.0], Tolerances::default()).unwrap();
        assert!((ys[2][0].re - 2f64.exp()).abs() < 1e-8);
        assert!(integrate_on_grid(f, &[C64::new(1.0, 0.0)], &[0.0, 1.0, 0.5], Tolerances::default()).is_err());
        let tight = Tolerances { max_steps: 3, ..Default::default() };
        assert!(matches!(propagate(f, &[C64::new(1.0, 0.0)], 0.0, 100.0, tight), Err(Error::TooManySteps(3))));
        let blowup = |_t: f64, y: &[C64], o: &mut [C64]| o[0] = y[0] * y[0];
        assert!(propagate(blowup, &[C64::new(1.0, 0.0)], 0.0, 2.0, Tolerances::default()).is_err());
    }
}
