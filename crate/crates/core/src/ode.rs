//! Dormand–Prince 5(4) with the standard continuous extension of order 4.
//!
//! The integrator advances one accepted step at a time so callers can scan
//! the dense output for events and restart from any interior time.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Right-hand side `y' = f(t, y)` written into the last argument.
pub trait Rhs {
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

impl<F> Rhs for F
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self(t, y, dy)
    }
}

#[derive(Clone, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub h_init: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_max: f64::INFINITY,
            h_min: 1e-14,
            h_init: None,
        }
    }
}

/// One accepted step with its interpolant.
#[derive(Clone, Debug)]
pub struct DenseStep {
    pub t0: f64,
    pub t1: f64,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    rcont: [Vec<f64>; 5],
}

impl DenseStep {
    pub fn h(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.y0.len()];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        if t == self.t0 {
            out.copy_from_slice(&self.y0);
            return;
        }
        if t == self.t1 {
            out.copy_from_slice(&self.y1);
            return;
        }
        let theta = (t - self.t0) / self.h();
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        for i in 0..out.len() {
            out[i] = r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])));
        }
    }

    /// Component `i` only.
    pub fn eval_component(&self, t: f64, i: usize) -> f64 {
        if t == self.t0 {
            return self.y0[i];
        }
        if t == self.t1 {
            return self.y1[i];
        }
        let theta = (t - self.t0) / self.h();
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])))
    }
}

/// Stateful stepper holding the current point, the FSAL derivative and the
/// proposed next step size.
#[derive(Clone, Debug)]
pub struct Dopri5 {
    opts: OdeOptions,
    t: f64,
    y: Vec<f64>,
    k1: Vec<f64>,
    h: f64,
    accepted: usize,
    rejected: usize,
}

impl Dopri5 {
    pub fn new<F: Rhs>(f: &mut F, t0: f64, y0: Vec<f64>, opts: OdeOptions) -> Result<Self> {
        if y0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial state"));
        }
        let mut k1 = vec![0.0; y0.len()];
        f.eval(t0, &y0, &mut k1)?;
        let mut s = Self {
            opts,
            t: t0,
            y: y0,
            k1,
            h: 0.0,
            accepted: 0,
            rejected: 0,
        };
        s.h = match s.opts.h_init {
            Some(h) => h.min(s.opts.h_max),
            None => s.initial_step(f)?,
        };
        Ok(s)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn accepted_steps(&self) -> usize {
        self.accepted
    }

    pub fn rejected_steps(&self) -> usize {
        self.rejected
    }

    pub fn options(&self) -> &OdeOptions {
        &self.opts
    }

    /// Restarts from `(t, y)`, keeping the current step-size proposal.
    pub fn reset<F: Rhs>(&mut self, f: &mut F, t: f64, y: Vec<f64>) -> Result<()> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("restart state"));
        }
        self.t = t;
        self.y = y;
        f.eval(t, &self.y, &mut self.k1)?;
        let h0 = self.initial_step(f)?;
        self.h = self.h.min(h0).max(self.opts.h_min);
        Ok(())
    }

    /// Replaces the current state at the same time without touching the
    /// step size. Meant for small corrections such as constraint projection.
    pub fn replace_state<F: Rhs>(&mut self, f: &mut F, y: Vec<f64>) -> Result<()> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("restart state"));
        }
        self.y = y;
        f.eval(self.t, &self.y, &mut self.k1)
    }

    fn norm(&self, err: &[f64], y0: &[f64], y1: &[f64]) -> f64 {
        let n = err.len().max(1) as f64;
        let s: f64 = err
            .iter()
            .zip(y0.iter().zip(y1))
            .map(|(e, (a, b))| {
                let sc = self.opts.atol + self.opts.rtol * a.abs().max(b.abs());
                (e / sc).powi(2)
            })
            .sum();
        (s / n).sqrt()
    }

    fn initial_step<F: Rhs>(&self, f: &mut F) -> Result<f64> {
        let n = self.y.len();
        let sc: Vec<f64> = self.y.iter().map(|v| self.opts.atol + self.opts.rtol * v.abs()).collect();
        let rms = |v: &[f64]| (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
        let d0 = rms(&self.y);
        let d1 = rms(&self.k1);
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(self.opts.h_max);
        let y1: Vec<f64> = self.y.iter().zip(&self.k1).map(|(y, k)| y + h0 * k).collect();
        let mut k2 = vec![0.0; n];
        f.eval(self.t + h0, &y1, &mut k2)?;
        let diff: Vec<f64> = k2.iter().zip(&self.k1).map(|(a, b)| a - b).collect();
        let d2 = rms(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(self.opts.h_max).max(self.opts.h_min))
    }

    /// Advances by one accepted step that does not pass `t_end`.
    pub fn step<F: Rhs>(&mut self, f: &mut F, t_end: f64) -> Result<DenseStep> {
        let n = self.y.len();
        let mut k = [
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
        ];
        let mut ytmp = vec![0.0; n];
        let mut y1 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        let mut h = self.h.min(self.opts.h_max);
        loop {
            let remaining = t_end - self.t;
            if remaining <= 0.0 {
                return Err(Error::Input(format!("step requested past end time {t_end}")));
            }
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            if h < self.opts.h_min && !last {
                return Err(Error::StepUnderflow { t: self.t, h });
            }
            let t = self.t;
            let y = &self.y;
            let k1 = &self.k1;
            let stages = (|| -> Result<()> {
                for i in 0..n {
                    ytmp[i] = y[i] + h * A21 * k1[i];
                }
                f.eval(t + C2 * h, &ytmp, &mut k[1])?;
                for i in 0..n {
                    ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k[1][i]);
                }
                f.eval(t + C3 * h, &ytmp, &mut k[2])?;
                for i in 0..n {
                    ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k[1][i] + A43 * k[2][i]);
                }
                f.eval(t + C4 * h, &ytmp, &mut k[3])?;
                for i in 0..n {
                    ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
                }
                f.eval(t + C5 * h, &ytmp, &mut k[4])?;
                for i in 0..n {
                    ytmp[i] = y[i] + h * (A61 * k1[i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
                }
                let t_new = if last { t_end } else { t + h };
                f.eval(t_new, &ytmp, &mut k[5])?;
                for i in 0..n {
                    y1[i] = y[i] + h * (A71 * k1[i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
                }
                f.eval(t_new, &y1, &mut k7)?;
                Ok(())
            })();
            if let Err(e) = stages {
                // trial points may leave the region where the field is defined
                h *= 0.5;
                self.rejected += 1;
                if h < self.opts.h_min {
                    return Err(e);
                }
                continue;
            }
            let err: Vec<f64> = (0..n)
                .map(|i| h * (E1 * k1[i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k7[i]))
                .collect();
            let err_norm = self.norm(&err, y, &y1);
            if !err_norm.is_finite() {
                h *= 0.5;
                self.rejected += 1;
                if h < self.opts.h_min {
                    return Err(Error::NonFinite("integrator error estimate"));
                }
                continue;
            }
            let fac = if err_norm == 0.0 {
                10.0
            } else {
                (0.9 * err_norm.powf(-0.2)).clamp(0.2, 10.0)
            };
            if err_norm <= 1.0 {
                let t1 = if last { t_end } else { t + h };
                let r2: Vec<f64> = (0..n).map(|i| y1[i] - y[i]).collect();
                let r3: Vec<f64> = (0..n).map(|i| h * k1[i] - r2[i]).collect();
                let r4: Vec<f64> = (0..n).map(|i| r2[i] - h * k7[i] - r3[i]).collect();
                let r5: Vec<f64> = (0..n)
                    .map(|i| h * (D1 * k1[i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k7[i]))
                    .collect();
                let dense = DenseStep {
                    t0: t,
                    t1,
                    y0: y.clone(),
                    y1: y1.clone(),
                    rcont: [y.clone(), r2, r3, r4, r5],
                };
                self.t = t1;
                self.y.copy_from_slice(&y1);
                self.k1.copy_from_slice(&k7);
                // keep the proposal from the unclipped step
                if !last || fac < 1.0 {
                    self.h = (h * fac).min(self.opts.h_max);
                }
                self.accepted += 1;
                return Ok(dense);
            }
            self.rejected += 1;
            h *= fac.min(1.0);
            if h < self.opts.h_min {
                return Err(Error::StepUnderflow { t: self.t, h });
            }
        }
    }
}

/// Integrates to `t_end` and returns the final state.
pub fn integrate<F: Rhs>(f: &mut F, t0: f64, y0: Vec<f64>, t_end: f64, opts: OdeOptions) -> Result<Vec<f64>> {
    let mut solver = Dopri5::new(f, t0, y0, opts)?;
    while solver.t() < t_end {
        solver.step(f, t_end)?;
    }
    Ok(solver.y().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(_t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy[0] = y[1];
        dy[1] = -y[0];
        Ok(())
    }

    #[test]
    fn harmonic_oscillator_to_tolerance() {
        let mut f = oscillator;
        let y = integrate(&mut f, 0.0, vec![1.0, 0.0], 10.0, OdeOptions::default()).unwrap();
        assert!((y[0] - 10f64.cos()).abs() < 1e-8);
        assert!((y[1] + 10f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn dense_output_matches_closed_form_inside_steps() {
        let mut f = oscillator;
        let mut s = Dopri5::new(&mut f, 0.0, vec![1.0, 0.0], OdeOptions::default()).unwrap();
        let mut worst = 0.0_f64;
        while s.t() < 5.0 {
            let d = s.step(&mut f, 5.0).unwrap();
            for j in 0..=10 {
                let t = d.t0 + d.h() * j as f64 / 10.0;
                let y = d.eval(t);
                worst = worst.max((y[0] - t.cos()).abs()).max((y[1] + t.sin()).abs());
                assert_eq!(d.eval_component(t, 0), y[0]);
            }
        }
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn polynomial_of_degree_four_is_exact() {
        let mut f = |t: f64, _y: &[f64], dy: &mut [f64]| -> Result<()> {
            dy[0] = 4.0 * t.powi(3);
            Ok(())
        };
        let y = integrate(&mut f, 0.0, vec![0.0], 2.0, OdeOptions::default()).unwrap();
        assert!((y[0] - 16.0).abs() < 1e-11);
    }

    #[test]
    fn max_step_is_respected() {
        let mut f = oscillator;
        let opts = OdeOptions {
            h_max: 0.01,
            ..OdeOptions::default()
        };
        let mut s = Dopri5::new(&mut f, 0.0, vec![1.0, 0.0], opts).unwrap();
        while s.t() < 1.0 {
            let d = s.step(&mut f, 1.0).unwrap();
            assert!(d.h() <= 0.01 + 1e-15);
        }
        assert_eq!(s.t(), 1.0);
    }

    #[test]
    fn reset_restarts_from_new_state() {
        let mut f = oscillator;
        let mut s = Dopri5::new(&mut f, 0.0, vec![1.0, 0.0], OdeOptions::default()).unwrap();
        s.step(&mut f, 1.0).unwrap();
        s.reset(&mut f, 2.0, vec![0.0, 1.0]).unwrap();
        while s.t() < 3.0 {
            s.step(&mut f, 3.0).unwrap();
        }
        assert!((s.y()[0] - 1f64.sin()).abs() < 1e-8);
    }
}
