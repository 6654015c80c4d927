//! Closed-form non-uniqueness example on the half-line `x >= 0`.
//!
//! A single bounce `z` on `[0, 1]` driven by `-f` is rescaled by `(a^n, b^n)`
//! and tiled onto `I_n = (a^{n+1}/(1-a), a^n/(1-a))`, so bounces accumulate
//! at `t = 0`. With `F` built the same way, both `x = 0` and the tiled bounce
//! solve the reflected problem from rest at the origin.

use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::{self, composite_rule, gauss_legendre};

pub type Profile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `exp(-1/((s - 1/2)(1 - s)))` on `(1/2, 1)`, zero elsewhere.
pub fn default_bump(s: f64) -> f64 {
    if s > 0.5 && s < 1.0 {
        (-1.0 / ((s - 0.5) * (1.0 - s))).exp()
    } else {
        0.0
    }
}

/// `exp(-1/(s(1 - s)))` on `(0, 1)`; symmetric about `1/2`.
pub fn symmetric_bump(s: f64) -> f64 {
    if s > 0.0 && s < 1.0 {
        (-1.0 / (s * (1.0 - s))).exp()
    } else {
        0.0
    }
}

const PANELS: usize = 512;
const PANEL_ORDER: usize = 16;

/// The single-bounce problem `z'' = -f`, `z(0) = z(1) = 0`.
pub struct AuxiliaryBounce {
    profile: Profile,
    v0: f64,
    v1: f64,
    integral_condition: f64,
    mass: f64,
    cum_a: Vec<f64>,
    cum_b: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    f_max: f64,
    z_max: f64,
    zp_max: f64,
}

impl std::fmt::Debug for AuxiliaryBounce {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuxiliaryBounce")
            .field("v0", &self.v0)
            .field("v1", &self.v1)
            .field("integral_condition", &self.integral_condition)
            .finish()
    }
}

impl AuxiliaryBounce {
    /// Requires `int (2s - 1) f > 0`, i.e. the exit speed beats the entry speed.
    pub fn new(profile: Profile) -> Result<Self> {
        let aux = Self::new_unchecked(profile)?;
        if !(aux.integral_condition > 1e-12 * aux.mass) {
            return Err(Error::Construction(format!(
                "profile gives int (2s-1) f = {:e}, which is not positive",
                aux.integral_condition
            )));
        }
        Ok(aux)
    }

    /// Builds the tables without checking the integral condition.
    pub fn new_unchecked(profile: Profile) -> Result<Self> {
        let (nodes, weights) = gauss_legendre(PANEL_ORDER);
        let h = 1.0 / PANELS as f64;
        let mut cum_a = vec![0.0; PANELS + 1];
        let mut cum_b = vec![0.0; PANELS + 1];
        for p in 0..PANELS {
            let lo = h * p as f64;
            let (mut sa, mut sb) = (0.0, 0.0);
            for (x, w) in nodes.iter().zip(&weights) {
                let s = lo + 0.5 * h * (x + 1.0);
                let fs = profile(s);
                sa += 0.5 * h * w * fs;
                sb += 0.5 * h * w * s * fs;
            }
            cum_a[p + 1] = cum_a[p] + sa;
            cum_b[p + 1] = cum_b[p] + sb;
        }
        let mass = cum_a[PANELS];
        let v1 = cum_b[PANELS];
        let v0 = mass - v1;
        let g = profile.clone();
        let integral_condition =
            quadrature::integrate(move |s| (2.0 * s - 1.0) * g(s), 0.0, 1.0, 1e-14 * mass.abs(), 1e-13)?;
        if !v0.is_finite() || !v1.is_finite() || !integral_condition.is_finite() {
            return Err(Error::NonFinite("auxiliary bounce integrals"));
        }
        let mut aux = Self {
            profile,
            v0,
            v1,
            integral_condition,
            mass,
            cum_a,
            cum_b,
            nodes,
            weights,
            f_max: 0.0,
            z_max: 0.0,
            zp_max: 0.0,
        };
        let samples = 20_000;
        for j in 0..=samples {
            let s = j as f64 / samples as f64;
            aux.f_max = aux.f_max.max(aux.f(s).abs());
            aux.z_max = aux.z_max.max(aux.z(s).abs());
            aux.zp_max = aux.zp_max.max(aux.z_prime(s).abs());
        }
        Ok(aux)
    }

    pub fn f(&self, s: f64) -> f64 {
        (self.profile)(s)
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn v1(&self) -> f64 {
        self.v1
    }

    /// `int_0^1 (2s - 1) f(s) ds`, by adaptive quadrature.
    pub fn integral_condition(&self) -> f64 {
        self.integral_condition
    }

    /// `int_0^1 f`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    pub fn z_max(&self) -> f64 {
        self.z_max
    }

    pub fn z_prime_max(&self) -> f64 {
        self.zp_max
    }

    /// `(int_0^t f, int_0^t s f)` for `t` in `[0, 1]`.
    fn moments(&self, t: f64) -> (f64, f64) {
        let t = t.clamp(0.0, 1.0);
        let p = ((t * PANELS as f64) as usize).min(PANELS);
        let lo = p as f64 / PANELS as f64;
        let (mut a, mut b) = (self.cum_a[p], self.cum_b[p]);
        let width = t - lo;
        if width > 0.0 {
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                let s = lo + 0.5 * width * (x + 1.0);
                let fs = self.f(s);
                a += 0.5 * width * w * fs;
                b += 0.5 * width * w * s * fs;
            }
        }
        (a, b)
    }

    /// `z(t) = v0 t - int_0^t (t - s) f(s) ds`.
    pub fn z(&self, t: f64) -> f64 {
        let (a, b) = self.moments(t);
        self.v0 * t - t * a + b
    }

    pub fn z_prime(&self, t: f64) -> f64 {
        self.v0 - self.moments(t).0
    }

    pub fn z_second(&self, t: f64) -> f64 {
        -self.f(t)
    }
}

/// Picks `(a, b)` with `0 < b < a^L < 1` and `v0 = (b/a) v1`, taking `a` at
/// the midpoint of its admissible range.
pub fn choose_scaling(v0: f64, v1: f64, l: u32) -> Result<(f64, f64)> {
    if !(v0 > 0.0) || !(v1 > 0.0) {
        return Err(Error::Construction(format!("speeds must be positive (v0 = {v0}, v1 = {v1})")));
    }
    if v0 >= v1 {
        return Err(Error::Construction(format!(
            "need v0 < v1 for the bounces to shrink (v0 = {v0}, v1 = {v1})"
        )));
    }
    if l == 0 {
        return Err(Error::Construction("smoothness order L must be at least 1".into()));
    }
    let r = v0 / v1;
    let lower = if l == 1 { r } else { r.powf(1.0 / (l - 1) as f64) };
    let a = 0.5 * (lower + 1.0);
    Ok((a, a * r))
}

#[derive(Clone, Debug, Serialize)]
pub struct CounterexampleParams {
    pub l: u32,
    pub v0: f64,
    pub v1: f64,
    pub a: f64,
    pub b: f64,
    pub t_mid: f64,
}

#[derive(Debug)]
pub struct Counterexample {
    aux: Arc<AuxiliaryBounce>,
    params: CounterexampleParams,
}

impl Counterexample {
    pub fn new(aux: Arc<AuxiliaryBounce>, l: u32) -> Result<Self> {
        let (a, b) = choose_scaling(aux.v0(), aux.v1(), l)?;
        let ce = Self::with_scaling(aux, l, a, b)?;
        let p = &ce.params;
        if !(0.0 < p.b && p.b < p.a.powi(l as i32) && p.a < 1.0) {
            return Err(Error::Construction(format!("scaling a = {}, b = {} violates 0 < b < a^L < 1", p.a, p.b)));
        }
        Ok(ce)
    }

    /// Arbitrary scaling, for diagnostics; only `0 < b` and `0 < a < 1` are
    /// enforced.
    pub fn with_scaling(aux: Arc<AuxiliaryBounce>, l: u32, a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0 && b > 0.0) {
            return Err(Error::Construction(format!("need 0 < a < 1 and b > 0 (a = {a}, b = {b})")));
        }
        let params = CounterexampleParams {
            l,
            v0: aux.v0(),
            v1: aux.v1(),
            a,
            b,
            t_mid: 0.5 * (1.0 + a) / (1.0 - a),
        };
        Ok(Self { aux, params })
    }

    /// Default profile, `L = 2`.
    pub fn default_construction() -> Result<Self> {
        let aux = AuxiliaryBounce::new(Arc::new(default_bump))?;
        Self::new(Arc::new(aux), 2)
    }

    pub fn params(&self) -> &CounterexampleParams {
        &self.params
    }

    pub fn auxiliary(&self) -> &AuxiliaryBounce {
        &self.aux
    }

    /// Left endpoint `a^{n+1}/(1-a)` of `I_n`.
    pub fn t_left(&self, n: usize) -> f64 {
        let a = self.params.a;
        a.powi(n as i32 + 1) / (1.0 - a)
    }

    pub fn interval_length(&self, n: usize) -> f64 {
        self.params.a.powi(n as i32)
    }

    /// Index `n` with `t` in `[t_left(n), t_left(n) + a^n)`.
    pub fn interval_of(&self, t: f64) -> Option<usize> {
        let a = self.params.a;
        if !(t > 0.0) || t >= 1.0 / (1.0 - a) {
            return None;
        }
        let guess = ((t * (1.0 - a)).ln() / a.ln()).ceil() - 1.0;
        let mut n = guess.max(0.0).min(1e6) as usize;
        while t < self.t_left(n) {
            if self.t_left(n) == 0.0 {
                return None;
            }
            n += 1;
        }
        while n > 0 && t >= self.t_left(n - 1) {
            n -= 1;
        }
        Some(n)
    }

    fn check_horizon(&self, t: f64) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::NonFinite("counterexample time"));
        }
        if t > self.params.t_mid {
            return Err(Error::Horizon {
                t,
                start: f64::NEG_INFINITY,
                end: self.params.t_mid,
            });
        }
        Ok(())
    }

    fn local(&self, t: f64) -> Option<(usize, f64)> {
        let n = self.interval_of(t)?;
        let len = self.interval_length(n);
        if len == 0.0 {
            return None;
        }
        Some((n, ((t - self.t_left(n)) / len).clamp(0.0, 1.0)))
    }

    /// `F(t)`, zero for `t <= 0`.
    pub fn force(&self, t: f64) -> Result<f64> {
        self.check_horizon(t)?;
        let p = &self.params;
        Ok(match self.local(t) {
            Some((n, tau)) => -(p.b / (p.a * p.a)).powi(n as i32) * self.aux.f(tau),
            None => 0.0,
        })
    }

    /// `(x(t), x'(t))` of the non-zero solution, right-continuous in `x'`.
    pub fn solution(&self, t: f64) -> Result<(f64, f64)> {
        self.check_horizon(t)?;
        let p = &self.params;
        Ok(match self.local(t) {
            Some((n, tau)) => (
                p.b.powi(n as i32) * self.aux.z(tau),
                (p.b / p.a).powi(n as i32) * self.aux.z_prime(tau),
            ),
            None => (0.0, 0.0),
        })
    }

    /// Velocity just before the bounce at `t_left(n)`.
    pub fn velocity_before(&self, n: usize) -> f64 {
        let p = &self.params;
        (p.b / p.a).powi(n as i32 + 1) * self.aux.z_prime(1.0)
    }

    /// Velocity just after the bounce at `t_left(n)`.
    pub fn velocity_after(&self, n: usize) -> f64 {
        let p = &self.params;
        (p.b / p.a).powi(n as i32) * self.aux.z_prime(0.0)
    }

    /// Atom `2 v0 (b/a)^n` of the wall measure at `t_left(n)`.
    pub fn atom(&self, n: usize) -> f64 {
        let p = &self.params;
        2.0 * p.v0 * (p.b / p.a).powi(n as i32)
    }

    pub fn force_sup_norm(&self) -> f64 {
        self.aux.f_max()
    }

    /// Samples `t, F, x, v, n_interval` on `n_points` equally spaced times in
    /// `[-1, T_mid]`; `n_interval` is `-1` off the bounce intervals.
    pub fn write_csv(&self, path: &Path, n_points: usize) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "F", "x", "v", "n_interval"])?;
        let n_points = n_points.max(2);
        let t_end = self.params.t_mid;
        for j in 0..n_points {
            let t = -1.0 + (t_end + 1.0) * j as f64 / (n_points - 1) as f64;
            let t = t.min(t_end);
            let f = self.force(t)?;
            let (x, v) = self.solution(t)?;
            let n = self.interval_of(t).map(|n| n as i64).unwrap_or(-1);
            w.write_record([
                format!("{t:.16e}"),
                format!("{f:.16e}"),
                format!("{x:.16e}"),
                format!("{v:.16e}"),
                n.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const CHECK_INTEGRAL_CONDITION: &str = "integral_condition";
pub const CHECK_AUXILIARY_ENDPOINTS: &str = "auxiliary_endpoints";
pub const CHECK_ODE_RESIDUAL: &str = "ode_residual";
pub const CHECK_REFLECTION: &str = "reflection";
pub const CHECK_SPEED_RATIO: &str = "speed_ratio";
pub const CHECK_BV_MASS: &str = "bv_mass";
pub const CHECK_WEAK_FORM_ZERO: &str = "weak_form_zero_solution";
pub const CHECK_WEAK_FORM_NONZERO: &str = "weak_form_nonzero_solution";
pub const CHECK_ENERGY_ZERO: &str = "energy_zero_solution";
pub const CHECK_ENERGY_NONZERO: &str = "energy_nonzero_solution";
pub const CHECK_FORCE_SMOOTHNESS: &str = "force_derivatives_at_zero";
pub const CHECK_FORCE_SIGN: &str = "force_non_positive";
pub const CHECK_ENVELOPES: &str = "geometric_envelopes";

#[derive(Clone, Debug, Serialize)]
pub struct CertificateCheck {
    pub name: String,
    /// Worst absolute value of the checked quantity.
    pub value: f64,
    /// Same, scaled by the natural magnitude of the terms involved.
    pub relative: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Bounce intervals on which the check failed.
    pub offending: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IntervalRecord {
    pub n: usize,
    pub t_left: f64,
    pub t_right: f64,
    pub ode_residual: f64,
    pub ode_relative: f64,
    pub v_minus: f64,
    pub v_plus: f64,
    pub reflection_mismatch: f64,
    pub atom: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateReport {
    pub params: CounterexampleParams,
    pub n_max: usize,
    pub v1_minus_v0: f64,
    pub fd_derivatives_at_zero: Vec<f64>,
    pub bv_mass_partial: f64,
    pub bv_mass_tail_bound: f64,
    pub checks: Vec<CertificateCheck>,
    pub intervals: Vec<IntervalRecord>,
    pub pass: bool,
}

impl CertificateReport {
    pub fn check(&self, name: &str) -> Option<&CertificateCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Tolerances applied by [`verify_counterexample`].
#[derive(Clone, Debug, Serialize)]
pub struct CertificateTolerances {
    pub ode: f64,
    pub reflection: f64,
    pub quadrature: f64,
    pub derivative: f64,
    pub weak_form: f64,
    pub energy: f64,
}

impl Default for CertificateTolerances {
    fn default() -> Self {
        Self {
            ode: 1e-6,
            reflection: 1e-10,
            quadrature: 1e-12,
            derivative: 1e-4,
            weak_form: 1e-6,
            energy: 1e-6,
        }
    }
}

fn check(name: &str, value: f64, relative: f64, tolerance: f64, pass: bool, offending: Vec<usize>) -> CertificateCheck {
    CertificateCheck {
        name: name.to_string(),
        value,
        relative,
        tolerance,
        pass: pass && value.is_finite(),
        offending,
    }
}

/// Smooth bump `exp(-1/(1-u^2))` on `(c - w, c + w)` and its derivative.
#[derive(Clone, Copy, Debug)]
struct Bump {
    c: f64,
    w: f64,
}

impl Bump {
    fn value(&self, t: f64) -> f64 {
        let u = (t - self.c) / self.w;
        if u.abs() >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - u * u)).exp()
        }
    }

    fn derivative(&self, t: f64) -> f64 {
        let u = (t - self.c) / self.w;
        if u.abs() >= 1.0 {
            0.0
        } else {
            let q = 1.0 - u * u;
            (-1.0 / q).exp() * (-2.0 * u / (q * q)) / self.w
        }
    }
}

/// Node table in local time `tau` shared by all bounce intervals.
struct LocalRule {
    tau: Vec<f64>,
    w: Vec<f64>,
    zp: Vec<f64>,
    f: Vec<f64>,
}

impl LocalRule {
    fn new(aux: &AuxiliaryBounce, lo: f64, hi: f64) -> Self {
        let rule = composite_rule(lo, hi, 64, 10);
        let tau: Vec<f64> = rule.iter().map(|r| r.0).collect();
        let w = rule.iter().map(|r| r.1).collect();
        let zp = tau.iter().map(|&s| aux.z_prime(s)).collect();
        let f = tau.iter().map(|&s| aux.f(s)).collect();
        Self { tau, w, zp, f }
    }
}

/// Largest interval index whose scale factors are still representable.
fn truncation_index(ce: &Counterexample) -> usize {
    let p = ce.params();
    let ratio = p.b / p.a;
    let mut n = 0;
    while n < 5000 && ratio.powi(n as i32) > 1e-40 && ce.interval_length(n) > 1e-300 {
        n += 1;
    }
    n
}

fn weak_form_residuals(ce: &Counterexample, bumps: &[Bump], rule: &LocalRule) -> (f64, f64, f64, f64) {
    let p = ce.params();
    let n_trunc = truncation_index(ce);
    let (mut worst_nz, mut worst_nz_rel, mut worst_z, mut worst_z_rel) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for bump in bumps {
        let (mut kinetic, mut forcing, mut atoms) = (0.0, 0.0, 0.0);
        let mut density = 0.0;
        for n in 0..=n_trunc {
            let t0 = ce.t_left(n);
            let len = ce.interval_length(n);
            if t0 + len <= bump.c - bump.w || t0 >= bump.c + bump.w {
                continue;
            }
            let sv = (p.b / p.a).powi(n as i32);
            let sf = (p.b / (p.a * p.a)).powi(n as i32);
            for k in 0..rule.tau.len() {
                let t = t0 + len * rule.tau[k];
                let wt = len * rule.w[k];
                let psi = bump.value(t);
                kinetic += wt * sv * rule.zp[k] * bump.derivative(t);
                let fval = -sf * rule.f[k];
                forcing += wt * fval * psi;
                // density of the zero solution's wall measure is -F
                density += wt * (-fval) * psi;
            }
            atoms += ce.atom(n) * bump.value(t0);
        }
        // the wall normal on the half-line is -1, so -nu.psi drho = +psi drho
        let nz = kinetic + forcing + atoms;
        let nz_scale = kinetic.abs() + forcing.abs() + atoms.abs();
        let z = forcing + density;
        let z_scale = forcing.abs() + density.abs();
        worst_nz = worst_nz.max(nz.abs());
        worst_z = worst_z.max(z.abs());
        if nz_scale > 0.0 {
            worst_nz_rel = worst_nz_rel.max(nz.abs() / nz_scale);
        }
        if z_scale > 0.0 {
            worst_z_rel = worst_z_rel.max(z.abs() / z_scale);
        }
    }
    (worst_nz, worst_nz_rel, worst_z, worst_z_rel)
}

/// `int_0^{s2} F x' dt` for the non-zero solution.
fn work_until(ce: &Counterexample, s2: f64, full: &LocalRule) -> f64 {
    if s2 <= 0.0 {
        return 0.0;
    }
    let p = ce.params();
    let aux = ce.auxiliary();
    let n_trunc = truncation_index(ce);
    let n2 = ce.interval_of(s2).unwrap_or(0);
    let mut work = 0.0;
    for n in (n2 + 1)..=n_trunc {
        let scale = (p.b / p.a).powi(2 * n as i32);
        let w: f64 = (0..full.tau.len()).map(|k| full.w[k] * (-full.f[k]) * full.zp[k]).sum();
        work += scale * w;
    }
    let tau2 = ((s2 - ce.t_left(n2)) / ce.interval_length(n2)).clamp(0.0, 1.0);
    if tau2 > 0.0 {
        let scale = (p.b / p.a).powi(2 * n2 as i32);
        let partial: f64 = composite_rule(0.0, tau2, 64, 10)
            .iter()
            .map(|(s, w)| w * (-aux.f(*s)) * aux.z_prime(*s))
            .sum();
        work += scale * partial;
    }
    work
}

fn central_derivative(ce: &Counterexample, order: u32, h: f64) -> Result<f64> {
    let k = order as i32;
    let mut sum = 0.0;
    let mut binom = 1.0;
    for j in 0..=k {
        let t = (0.5 * k as f64 - j as f64) * h;
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * binom * ce.force(t)?;
        binom = binom * (k - j) as f64 / (j + 1) as f64;
    }
    Ok(sum / h.powi(k))
}

/// Machine certificate that both `x = 0` and the tiled bounce satisfy the
/// reflected problem with the same force on `(-1, T_mid)`.
pub fn verify_counterexample(ce: &Counterexample, n_max: usize) -> Result<CertificateReport> {
    verify_with(ce, n_max, &CertificateTolerances::default())
}

pub fn verify_with(ce: &Counterexample, n_max: usize, tol: &CertificateTolerances) -> Result<CertificateReport> {
    let p = ce.params().clone();
    let aux = ce.auxiliary();
    let mut checks = Vec::new();

    // integral condition, against an independent adaptive quadrature
    let diff = aux.v1() - aux.v0();
    let cond = aux.integral_condition();
    let cond_err = (diff - cond).abs();
    checks.push(check(
        CHECK_INTEGRAL_CONDITION,
        cond_err,
        cond_err / aux.mass().max(f64::MIN_POSITIVE),
        tol.quadrature,
        diff > 0.0 && cond > 0.0 && cond_err <= tol.quadrature,
        vec![],
    ));

    let z_end = aux.z(0.0).abs().max(aux.z(1.0).abs());
    let z_positive = (1..1000).all(|j| aux.z(j as f64 / 1000.0) > 0.0);
    checks.push(check(
        CHECK_AUXILIARY_ENDPOINTS,
        z_end,
        z_end / aux.z_max().max(f64::MIN_POSITIVE),
        tol.quadrature,
        z_end <= tol.quadrature && z_positive,
        vec![],
    ));

    // per-interval ODE residual and reflection matching
    let mut intervals = Vec::new();
    let (mut ode_worst, mut ode_rel_worst, mut ode_bad) = (0.0_f64, 0.0_f64, Vec::new());
    let (mut refl_worst, mut refl_bad) = (0.0_f64, Vec::new());
    let (mut ratio_worst, mut ratio_bad) = (0.0_f64, Vec::new());
    let mut env_worst = 0.0_f64;
    let mut env_bad = Vec::new();
    let mut sign_ok = true;
    for n in 0..n_max {
        let t0 = ce.t_left(n);
        let len = ce.interval_length(n);
        let h = 1e-3 * len;
        let x_at = |t: f64| ce.solution(t).map(|s| s.0);
        let mut res = 0.0_f64;
        let (mut sup_x, mut sup_v, mut sup_a) = (0.0_f64, 0.0_f64, 0.0_f64);
        for j in 1..20 {
            let tau = j as f64 / 20.0;
            let t = t0 + len * tau;
            if t > p.t_mid - 2.0 * h {
                continue;
            }
            let acc = (-x_at(t + 2.0 * h)? + 16.0 * x_at(t + h)? - 30.0 * x_at(t)? + 16.0 * x_at(t - h)?
                - x_at(t - 2.0 * h)?)
                / (12.0 * h * h);
            let f = ce.force(t)?;
            res = res.max((acc - f).abs());
        }
        for j in 0..=200 {
            let t = t0 + len * j as f64 / 200.0;
            if t > p.t_mid {
                break;
            }
            let (x, v) = ce.solution(t)?;
            let f = ce.force(t)?;
            sign_ok &= f <= 0.0 && x >= 0.0;
            sup_x = sup_x.max(x.abs());
            sup_v = sup_v.max(v.abs());
            sup_a = sup_a.max(f.abs());
        }
        let slack = 1.0 + 1e-12;
        let env = [
            sup_x / (aux.z_max() * p.b.powi(n as i32)),
            sup_v / (aux.z_prime_max() * (p.b / p.a).powi(n as i32)),
            sup_a / (aux.f_max() * (p.b / (p.a * p.a)).powi(n as i32)),
        ];
        let env_max = env.iter().cloned().fold(0.0, f64::max);
        env_worst = env_worst.max(env_max);
        if env_max > slack {
            env_bad.push(n);
        }
        let rel = res / (aux.f_max() * (p.b / (p.a * p.a)).powi(n as i32)).max(f64::MIN_POSITIVE);
        ode_worst = ode_worst.max(res);
        ode_rel_worst = ode_rel_worst.max(rel);
        if res > tol.ode {
            ode_bad.push(n);
        }
        let v_minus = ce.velocity_before(n);
        let v_plus = ce.velocity_after(n);
        let mismatch = (v_plus + v_minus).abs() / v_plus.abs();
        refl_worst = refl_worst.max(mismatch);
        if mismatch > tol.reflection {
            refl_bad.push(n);
        }
        if n + 1 < n_max {
            let ratio = ce.velocity_after(n + 1).abs() / v_plus.abs();
            let err = (ratio - p.b / p.a).abs();
            ratio_worst = ratio_worst.max(err);
            if err > tol.reflection {
                ratio_bad.push(n);
            }
        }
        intervals.push(IntervalRecord {
            n,
            t_left: t0,
            t_right: t0 + len,
            ode_residual: res,
            ode_relative: rel,
            v_minus,
            v_plus,
            reflection_mismatch: mismatch,
            atom: ce.atom(n),
        });
    }
    checks.push(check(CHECK_ODE_RESIDUAL, ode_worst, ode_rel_worst, tol.ode, ode_bad.is_empty(), ode_bad));
    checks.push(check(CHECK_REFLECTION, refl_worst, refl_worst, tol.reflection, refl_bad.is_empty(), refl_bad));
    checks.push(check(
        CHECK_SPEED_RATIO,
        ratio_worst,
        ratio_worst / (p.b / p.a),
        tol.reflection,
        ratio_bad.is_empty(),
        ratio_bad,
    ));
    checks.push(check(CHECK_ENVELOPES, env_worst, env_worst, 1.0 + 1e-12, env_bad.is_empty(), env_bad));

    // total variation of the velocity: atoms plus absolutely continuous part
    let ratio = p.b / p.a;
    let per_unit = 2.0 * p.v0 + aux.mass();
    let bv_partial: f64 = (0..=n_max).map(|n| per_unit * ratio.powi(n as i32)).sum();
    let tail = if ratio < 1.0 {
        per_unit * ratio.powi(n_max as i32 + 1) / (1.0 - ratio)
    } else {
        f64::INFINITY
    };
    checks.push(check(
        CHECK_BV_MASS,
        bv_partial + tail,
        (bv_partial + tail) / per_unit,
        f64::INFINITY,
        ratio < 1.0 && (bv_partial + tail).is_finite(),
        vec![],
    ));

    // weak form on (-1, T_mid)
    let mut bumps = vec![Bump { c: -0.5, w: 0.45 }, Bump { c: -0.3, w: 0.2 }];
    if n_max > 0 {
        let reach = p.t_mid;
        for w in [0.1_f64, 0.3, 0.6, 0.95] {
            bumps.push(Bump { c: 0.0, w: w.min(reach * 0.99) });
        }
        bumps.push(Bump {
            c: 0.5 * (reach - 1.0),
            w: 0.5 * (reach + 1.0) * 0.98,
        });
        for n in 0..n_max.min(10) {
            let t0 = ce.t_left(n);
            bumps.push(Bump {
                c: t0,
                w: 0.45 * ce.interval_length(n),
            });
            bumps.push(Bump {
                c: t0 + 0.5 * ce.interval_length(n),
                w: 0.45 * ce.interval_length(n),
            });
        }
        bumps.retain(|b| b.c - b.w > -1.0 && b.c + b.w < p.t_mid);
    }
    let rule = LocalRule::new(aux, 0.0, 1.0);
    let (nz, nz_rel, z, z_rel) = weak_form_residuals(ce, &bumps, &rule);
    checks.push(check(CHECK_WEAK_FORM_ZERO, z, z_rel, tol.weak_form, z <= tol.weak_form, vec![]));
    checks.push(check(CHECK_WEAK_FORM_NONZERO, nz, nz_rel, tol.weak_form, nz <= tol.weak_form, vec![]));

    // energy balance on windows straddling 0, right-limit velocities
    let mut ends = vec![0.0];
    if n_max > 0 {
        for n in 0..n_max {
            ends.push(ce.t_left(n));
            let mid = ce.t_left(n) + 0.5 * ce.interval_length(n);
            if mid <= p.t_mid {
                ends.push(mid);
            }
        }
        ends.push(p.t_mid);
    }
    let (mut e_worst, mut e_rel) = (0.0_f64, 0.0_f64);
    for s1 in [-1.0, -0.5] {
        for &s2 in &ends {
            let (_, v2) = ce.solution(s2)?;
            let (_, v1) = ce.solution(s1)?;
            let gap = 0.5 * v2 * v2 - 0.5 * v1 * v1;
            let work = work_until(ce, s2, &rule);
            let r = gap - work;
            e_worst = e_worst.max(r.abs());
            let scale = gap.abs() + work.abs();
            if scale > 0.0 {
                e_rel = e_rel.max(r.abs() / scale);
            }
        }
    }
    // x = 0 has no kinetic energy and F x' vanishes identically
    let zero_energy = 0.0;
    checks.push(check(CHECK_ENERGY_ZERO, zero_energy, 0.0, tol.energy, zero_energy <= tol.energy, vec![]));
    checks.push(check(CHECK_ENERGY_NONZERO, e_worst, e_rel, tol.energy, e_worst <= tol.energy, vec![]));

    // smoothness of F at 0: Richardson-extrapolated central differences
    let mut fd = Vec::new();
    for order in 1..=p.l {
        let (h1, h2) = (1e-2, 5e-3);
        let d1 = central_derivative(ce, order, h1)?;
        let d2 = central_derivative(ce, order, h2)?;
        fd.push(((4.0 * d2 - d1) / 3.0).abs());
    }
    let fd_worst = fd.iter().cloned().fold(0.0, f64::max);
    checks.push(check(
        CHECK_FORCE_SMOOTHNESS,
        fd_worst,
        fd_worst / aux.f_max().max(f64::MIN_POSITIVE),
        tol.derivative,
        fd_worst <= tol.derivative,
        vec![],
    ));

    for j in 0..=2000 {
        let t = -1.0 + (p.t_mid + 1.0) * j as f64 / 2000.0;
        sign_ok &= ce.force(t.min(p.t_mid))? <= 0.0;
    }
    checks.push(check(CHECK_FORCE_SIGN, 0.0, 0.0, 0.0, sign_ok, vec![]));

    let pass = checks.iter().all(|c| c.pass);
    Ok(CertificateReport {
        params: p,
        n_max,
        v1_minus_v0: diff,
        fd_derivatives_at_zero: fd,
        bv_mass_partial: bv_partial,
        bv_mass_tail_bound: tail,
        checks,
        intervals,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_examples() {
        assert_eq!(default_bump(0.25), 0.0);
        assert_eq!(default_bump(1.0), 0.0);
        assert_eq!(default_bump(0.5), 0.0);
        assert!(default_bump(0.75) > 0.0);
        let cond = quadrature::integrate(|s| (2.0 * s - 1.0) * default_bump(s), 0.0, 1.0, 0.0, 1e-13).unwrap();
        assert!(cond > 0.0);
    }

    #[test]
    fn auxiliary_bounce_against_adaptive_quadrature() {
        let aux = AuxiliaryBounce::new(Arc::new(default_bump)).unwrap();
        let v0 = quadrature::integrate(|s| (1.0 - s) * default_bump(s), 0.0, 1.0, 0.0, 1e-13).unwrap();
        let v1 = quadrature::integrate(|s| s * default_bump(s), 0.0, 1.0, 0.0, 1e-13).unwrap();
        assert!((aux.v0() - v0).abs() <= 1e-12 * v0);
        assert!((aux.v1() - v1).abs() <= 1e-12 * v1);
        assert!(aux.z(0.0).abs() < 1e-22);
        assert!(aux.z(1.0).abs() <= 1e-12 * aux.z_max());
        assert!((aux.z_prime(0.0) - v0).abs() <= 1e-12 * v0);
        assert!((aux.z_prime(1.0) + v1).abs() <= 1e-12 * v1);
        for j in 1..100 {
            assert!(aux.z(j as f64 / 100.0) > 0.0);
        }
        // z(t) against direct quadrature of the convolution
        for t in [0.3, 0.6, 0.8, 0.95] {
            let conv = quadrature::integrate(|s| (t - s) * default_bump(s), 0.0, t, 0.0, 1e-13).unwrap();
            let z = v0 * t - conv;
            assert!((aux.z(t) - z).abs() <= 1e-11 * aux.z_max(), "t={t}");
        }
    }

    #[test]
    fn symmetric_profile_is_rejected() {
        let err = AuxiliaryBounce::new(Arc::new(symmetric_bump)).unwrap_err();
        assert!(matches!(err, Error::Construction(_)));
        let aux = AuxiliaryBounce::new_unchecked(Arc::new(symmetric_bump)).unwrap();
        assert!((aux.v1() - aux.v0()).abs() <= 1e-13 * aux.mass());
    }

    #[test]
    fn scaling_examples() {
        let (a, b) = choose_scaling(0.5, 1.0, 2).unwrap();
        assert_eq!((a, b), (0.75, 0.375));
        assert!(b < a * a && a * a < 1.0);
        let (a, b) = choose_scaling(0.5, 1.0, 1).unwrap();
        assert_eq!((a, b), (0.75, 0.375));
        assert!(b < a);
        assert!(matches!(choose_scaling(1.0, 1.0, 2), Err(Error::Construction(_))));
    }

    #[test]
    fn scaling_satisfies_constraints_for_many_orders() {
        for l in 1..8 {
            for r in [0.1, 0.3, 0.5, 0.9, 0.99] {
                let (a, b) = choose_scaling(r, 1.0, l).unwrap();
                assert!(0.0 < b && b < a.powi(l as i32) && a.powi(l as i32) < 1.0, "l={l} r={r}");
                assert!((b / a - r).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn force_and_solution_examples() {
        let ce = Counterexample::default_construction().unwrap();
        let p = ce.params().clone();
        assert_eq!(ce.force(-0.5).unwrap(), 0.0);
        assert_eq!(ce.solution(-0.5).unwrap(), (0.0, 0.0));
        let mid0 = ce.t_left(0) + 0.5;
        assert!((ce.force(mid0).unwrap() + default_bump(0.5)).abs() < 1e-300);
        let t = ce.t_left(0) + 0.75;
        if t <= p.t_mid {
            assert!((ce.force(t).unwrap() + default_bump(0.75)).abs() < 1e-20);
        }
        assert!(matches!(ce.force(p.t_mid + 0.1), Err(Error::Horizon { .. })));
        // speeds at bounce endpoints decay geometrically to 0
        let speeds: Vec<f64> = (0..30).map(|n| ce.velocity_after(n)).collect();
        assert!(speeds.windows(2).all(|w| w[1] < w[0]));
        assert!(speeds[29] < 1e-3 * speeds[0]);
    }

    #[test]
    fn interval_lookup_is_right_continuous() {
        let ce = Counterexample::default_construction().unwrap();
        for n in 0..60 {
            let t = ce.t_left(n);
            assert_eq!(ce.interval_of(t), Some(n));
            let mid = t + 0.5 * ce.interval_length(n);
            assert_eq!(ce.interval_of(mid), Some(n));
        }
        assert_eq!(ce.interval_of(0.0), None);
        assert_eq!(ce.interval_of(-1.0), None);
    }

    #[test]
    fn sup_of_x_decays_with_ratio_b() {
        let ce = Counterexample::default_construction().unwrap();
        let b = ce.params().b;
        let sup = |n: usize| {
            (0..=100)
                .map(|j| ce.solution(ce.t_left(n) + ce.interval_length(n) * j as f64 / 100.0).unwrap().0)
                .fold(0.0, f64::max)
        };
        for n in 2..8 {
            assert!((sup(n) / sup(n - 1) - b).abs() < 1e-12);
        }
    }

    #[test]
    fn default_certificate_passes() {
        let ce = Counterexample::default_construction().unwrap();
        let report = verify_counterexample(&ce, 10).unwrap();
        for c in &report.checks {
            assert!(c.pass, "{c:?}");
        }
        assert!(report.pass);
        // relative residuals are small too, not just the absolute ones
        assert!(report.check(CHECK_WEAK_FORM_NONZERO).unwrap().relative < 1e-8);
        assert!(report.check(CHECK_ENERGY_NONZERO).unwrap().relative < 1e-8);
        assert!(report.check(CHECK_ODE_RESIDUAL).unwrap().relative < 1e-3);
    }

    #[test]
    fn perturbed_b_breaks_reflection_everywhere() {
        let aux = Arc::new(AuxiliaryBounce::new(Arc::new(default_bump)).unwrap());
        let good = Counterexample::new(aux.clone(), 2).unwrap();
        let p = good.params();
        let bad = Counterexample::with_scaling(aux, 2, p.a, 1.05 * p.b).unwrap();
        let report = verify_counterexample(&bad, 10).unwrap();
        let refl = report.check(CHECK_REFLECTION).unwrap();
        assert!(!refl.pass);
        assert_eq!(refl.offending, (0..10).collect::<Vec<_>>());
        assert!((refl.value - 0.05).abs() < 1e-9);
        assert!(!report.pass);
    }

    #[test]
    fn empty_certificate_is_vacuous() {
        let ce = Counterexample::default_construction().unwrap();
        let report = verify_counterexample(&ce, 0).unwrap();
        assert!(report.pass);
        assert!(report.intervals.is_empty());
    }

    #[test]
    fn csv_has_expected_columns() {
        let ce = Counterexample::default_construction().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ce.csv");
        ce.write_csv(&path, 50).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,F,x,v,n_interval\n"));
        assert_eq!(text.lines().count(), 51);
    }
}
