//! Penalty approximation: the wall is replaced by the restoring force
//! `-k (d grad d)(x)` and the smooth system is integrated directly.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{compare_trajectories, extract_measure, CompareNorm};
use crate::error::{Error, Result};
use crate::forces::ForceField;
use crate::geometry::{DomainGeometry, Point};
use crate::ode::{DenseStep, Dopri5, OdeOptions};
use crate::trajectory::{Mode, Sample, SystemState, Trajectory, TrajectoryKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on the step; the stiffness clamp `2 pi / (20 sqrt k)`
    /// always applies as well. Defaults to a twentieth of the horizon.
    pub max_step: Option<f64>,
    /// Trajectory grid spacing; defaults to a thousandth of the horizon.
    pub sample_dt: Option<f64>,
    /// Points per integrator step at which `rho^k` and the penetration are
    /// sampled.
    pub rho_subsamples: usize,
}

impl Default for PenaltyOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_step: None,
            sample_dt: None,
            rho_subsamples: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoSample {
    pub t: f64,
    pub value: f64,
}

/// Maximal time interval on which a particle is outside the closed domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excursion {
    pub start: f64,
    pub end: f64,
    /// `grad d_s . v` at the start (positive).
    pub entry_speed: f64,
    /// `grad d_s . v` at the end (negative); `None` if still outside at the
    /// horizon.
    pub exit_speed: Option<f64>,
    pub max_depth: f64,
}

impl Excursion {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyRun {
    pub k: f64,
    pub trajectory: Trajectory,
    pub max_penetration: f64,
    pub rho_samples: Vec<Vec<RhoSample>>,
    pub excursions: Vec<Vec<Excursion>>,
}

impl PenaltyRun {
    /// `int rho^k dt` over the whole run for one particle.
    pub fn rho_mass(&self, particle: usize) -> f64 {
        let s = &self.rho_samples[particle];
        let t: Vec<f64> = s.iter().map(|r| r.t).collect();
        let y: Vec<f64> = s.iter().map(|r| r.value).collect();
        crate::quadrature::trapezoid(&t, &y)
    }
}

/// `-k (d grad d)(x)`: zero on the closed domain, pointing back inside.
pub fn penalty_force(dom: &DomainGeometry, x: &Point, k: f64) -> Result<Point> {
    Ok(dom.d_grad_d(x)? * -k)
}

/// Smallest stiffness keeping an impact at `impact_speed` inside the tube
/// with margin: `4 v^2 / eps^2`.
pub fn k_min(dom: &DomainGeometry, impact_speed: f64) -> f64 {
    4.0 * impact_speed * impact_speed / (dom.tube_radius() * dom.tube_radius())
}

/// Largest step resolving the `sqrt k` oscillation.
pub fn stiffness_step(k: f64) -> f64 {
    2.0 * PI / (20.0 * k.sqrt())
}

/// Penalty force without the tube guard; tube exits are caught on the
/// sampled path instead.
fn raw_penalty(dom: &DomainGeometry, x: &Point, k: f64) -> Result<Point> {
    let ds = dom.signed_distance(x)?;
    if ds <= 0.0 {
        return Ok(Point::zeros(x.len()));
    }
    Ok(dom.gradient(x)? * (-k * ds))
}

struct Layout {
    n: usize,
    m: usize,
}

impl Layout {
    fn x(&self, y: &[f64], i: usize) -> Point {
        Point::from_column_slice(&y[i * self.m..(i + 1) * self.m])
    }

    fn v(&self, y: &[f64], i: usize) -> Point {
        let off = self.n * self.m;
        Point::from_column_slice(&y[off + i * self.m..off + (i + 1) * self.m])
    }

    fn positions(&self, y: &[f64]) -> Vec<Point> {
        (0..self.n).map(|i| self.x(y, i)).collect()
    }

    fn velocities(&self, y: &[f64]) -> Vec<Point> {
        (0..self.n).map(|i| self.v(y, i)).collect()
    }
}

fn rhs(dom: &DomainGeometry, ff: &ForceField, k: f64, layout: &Layout, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
    let xs = layout.positions(y);
    let forces = ff.eval_force(t, &xs)?;
    let off = layout.n * layout.m;
    dy[..off].copy_from_slice(&y[off..]);
    for (i, f) in forces.iter().enumerate() {
        let acc = f + raw_penalty(dom, &xs[i], k)?;
        dy[off + i * layout.m..off + (i + 1) * layout.m].copy_from_slice(acc.as_slice());
    }
    Ok(())
}

struct Recorder<'a> {
    dom: &'a DomainGeometry,
    ff: &'a ForceField,
    k: f64,
    layout: Layout,
    traj: Trajectory,
    rho: Vec<Vec<RhoSample>>,
    excursions: Vec<Vec<Excursion>>,
    open: Vec<Option<Excursion>>,
    max_penetration: f64,
    sample_dt: f64,
    next_grid: usize,
}

impl Recorder<'_> {
    fn invalid(&self, penetration: f64) -> Error {
        Error::InvalidRun {
            k: self.k,
            penetration,
            tube_radius: self.dom.tube_radius(),
        }
    }

    fn distance(&self, step: &DenseStep, t: f64, i: usize) -> Result<f64> {
        let m = self.layout.m;
        let x = Point::from_iterator(m, (0..m).map(|c| step.eval_component(t, i * m + c)));
        match self.dom.signed_distance(&x) {
            Ok(d) => Ok(d),
            Err(Error::DomainQuery { .. }) => Err(self.invalid(f64::INFINITY)),
            Err(e) => Err(e),
        }
    }

    fn normal_speed(&self, y: &[f64], i: usize) -> Result<f64> {
        let x = self.layout.x(y, i);
        Ok(self.dom.gradient(&x)?.dot(&self.layout.v(y, i)))
    }

    fn push_sample(&mut self, t: f64, y: &[f64]) -> Result<()> {
        let mut dy = vec![0.0; y.len()];
        rhs(self.dom, self.ff, self.k, &self.layout, t, y, &mut dy)?;
        self.traj.samples.push(Sample {
            t,
            positions: self.layout.positions(y),
            velocities: self.layout.velocities(y),
            modes: vec![Mode::Free; self.layout.n],
            accelerations: self.layout.velocities(&dy),
        });
        Ok(())
    }

    fn record_grid(&mut self, step: &DenseStep) -> Result<()> {
        loop {
            let tg = self.traj.horizon.0 + self.sample_dt * self.next_grid as f64;
            if tg > step.t1 || tg >= self.traj.horizon.1 {
                break;
            }
            if tg > step.t0 {
                self.push_sample(tg, &step.eval(tg))?;
            }
            self.next_grid += 1;
        }
        Ok(())
    }

    fn scan(&mut self, step: &DenseStep, subsamples: usize) -> Result<()> {
        let n_sub = subsamples.max(1);
        for i in 0..self.layout.n {
            let mut t_prev = step.t0;
            let mut d_prev = self.distance(step, t_prev, i)?;
            for j in 1..=n_sub {
                let t = if j == n_sub { step.t1 } else { step.t0 + step.h() * j as f64 / n_sub as f64 };
                let d = self.distance(step, t, i)?;
                if d >= self.dom.tube_radius() {
                    return Err(self.invalid(d));
                }
                if (d_prev > 0.0) != (d > 0.0) {
                    let root = crate::roots::brent(|s| self.distance(step, s, i), t_prev, t, d_prev, d, 0.0)?;
                    let y = step.eval(root);
                    let speed = self.normal_speed(&y, i)?;
                    self.rho[i].push(RhoSample { t: root, value: 0.0 });
                    if d > 0.0 {
                        self.open[i] = Some(Excursion {
                            start: root,
                            end: root,
                            entry_speed: speed,
                            exit_speed: None,
                            max_depth: 0.0,
                        });
                    } else if let Some(mut e) = self.open[i].take() {
                        e.end = root;
                        e.exit_speed = Some(speed);
                        self.excursions[i].push(e);
                    }
                }
                let depth = d.max(0.0);
                self.max_penetration = self.max_penetration.max(depth);
                if let Some(e) = self.open[i].as_mut() {
                    e.max_depth = e.max_depth.max(depth);
                }
                self.rho[i].push(RhoSample { t, value: self.k * depth });
                t_prev = t;
                d_prev = d;
            }
        }
        Ok(())
    }
}

/// Integrates `x'' = F - k (d grad d)(x)` from `initial` to `t_end`.
pub fn simulate_penalty(
    dom: &DomainGeometry,
    ff: &ForceField,
    initial: &SystemState,
    t_end: f64,
    k: f64,
    opts: &PenaltyOptions,
) -> Result<PenaltyRun> {
    let (n, m) = (initial.n(), initial.dim());
    if ff.n_particles() != n || ff.dim() != m || dom.dim() != m {
        return Err(Error::Input("domain, force field and initial state disagree on n or m".into()));
    }
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::Input(format!("stiffness must be positive and finite, got {k}")));
    }
    let t0 = initial.t;
    if !(t_end > t0) {
        return Err(Error::Input(format!("horizon end {t_end} must exceed start {t0}")));
    }
    for (i, x) in initial.positions.iter().enumerate() {
        let d = dom.signed_distance(x)?;
        if d > 0.0 {
            return Err(Error::Input(format!("particle {i} starts outside the domain (d_s = {d:e})")));
        }
    }
    let span = t_end - t0;
    let sample_dt = opts.sample_dt.unwrap_or(span / 1000.0);
    if !(sample_dt > 0.0) || !(opts.rtol > 0.0) || !(opts.atol > 0.0) {
        return Err(Error::Input("penalty tolerances and sample_dt must be positive".into()));
    }
    let h_max = opts.max_step.unwrap_or(span / 20.0).min(stiffness_step(k));
    let ode_opts = OdeOptions {
        rtol: opts.rtol,
        atol: opts.atol,
        h_max,
        h_min: 1e-14 * span.max(1.0),
        h_init: None,
    };
    let layout = Layout { n, m };
    let mut y0 = Vec::with_capacity(2 * n * m);
    initial.positions.iter().for_each(|x| y0.extend(x.iter()));
    initial.velocities.iter().for_each(|v| y0.extend(v.iter()));

    let mut rec = Recorder {
        dom,
        ff,
        k,
        layout,
        traj: Trajectory::new(n, m, (t0, t_end), TrajectoryKind::Penalty { k }),
        rho: vec![Vec::new(); n],
        excursions: vec![Vec::new(); n],
        open: vec![None; n],
        max_penetration: 0.0,
        sample_dt,
        next_grid: 1,
    };
    rec.push_sample(t0, &y0)?;
    for i in 0..n {
        rec.rho[i].push(RhoSample { t: t0, value: 0.0 });
    }

    let lay = Layout { n, m };
    let mut f = |t: f64, y: &[f64], dy: &mut [f64]| rhs(dom, ff, k, &lay, t, y, dy);
    let mut solver = Dopri5::new(&mut f, t0, y0, ode_opts)?;
    while solver.t() < t_end {
        let step = match solver.step(&mut f, t_end) {
            Ok(s) => s,
            Err(Error::TubeViolation { distance, .. }) => return Err(rec.invalid(distance)),
            Err(Error::DomainQuery { .. }) => return Err(rec.invalid(f64::INFINITY)),
            Err(e) => return Err(e),
        };
        rec.scan(&step, opts.rho_subsamples)?;
        rec.record_grid(&step)?;
    }
    let y_end = solver.y().to_vec();
    rec.push_sample(t_end, &y_end)?;
    for i in 0..n {
        if let Some(mut e) = rec.open[i].take() {
            e.end = t_end;
            rec.excursions[i].push(e);
        }
    }
    rec.traj.end_time = t_end;
    rec.traj.mode_timeline = (0..n)
        .map(|i| crate::trajectory::ModeInterval {
            particle: i,
            start: t0,
            end: t_end,
            mode: Mode::Free,
        })
        .collect();
    Ok(PenaltyRun {
        k,
        trajectory: rec.traj,
        max_penetration: rec.max_penetration,
        rho_samples: rec.rho,
        excursions: rec.excursions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: f64,
    pub valid: bool,
    pub error: Option<String>,
    pub max_penetration: f64,
    pub sup_gap: f64,
    pub l1_vel_gap: f64,
    /// Total `int rho^k dt` over all particles.
    pub rho_mass: f64,
    /// `|rho_mass - reference mass|`; `NaN` without an exact reference.
    pub rho_mass_error: f64,
    pub excursions: usize,
    pub max_excursion_duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `log max_penetration` against `log k`.
    pub penetration_slope: Option<f64>,
    /// Same for the sup-norm gap to the reference.
    pub sup_gap_slope: Option<f64>,
    /// Whether `sup_gap` strictly decreases along the valid rows.
    pub monotone_sup_gap: bool,
}

pub const SWEEP_CSV_HEADER: &str =
    "k,valid,max_penetration,sup_gap,l1_vel_gap,rho_mass,rho_mass_error,excursions,max_excursion_duration,log_k,log_max_penetration";

impl SweepReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{SWEEP_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e}",
                r.k,
                r.valid,
                r.max_penetration,
                r.sup_gap,
                r.l1_vel_gap,
                r.rho_mass,
                r.rho_mass_error,
                r.excursions,
                r.max_excursion_duration,
                r.k.ln(),
                r.max_penetration.ln()
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Ordinary least-squares slope of `y` against `x`; needs two distinct `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

fn sweep_row(
    dom: &DomainGeometry,
    ff: &ForceField,
    initial: &SystemState,
    t_end: f64,
    k: f64,
    reference: &Trajectory,
    reference_mass: f64,
    opts: &PenaltyOptions,
) -> SweepRow {
    let run = simulate_penalty(dom, ff, initial, t_end, k, opts).and_then(|run| {
        let sup = compare_trajectories(&run.trajectory, reference, CompareNorm::SupPos)?;
        let l1 = compare_trajectories(&run.trajectory, reference, CompareNorm::L1Vel)?;
        Ok((run, sup, l1))
    });
    match run {
        Ok((run, sup_gap, l1_vel_gap)) => {
            let rho_mass: f64 = (0..run.trajectory.n).map(|i| run.rho_mass(i)).sum();
            let all = run.excursions.iter().flatten();
            SweepRow {
                k,
                valid: true,
                error: None,
                max_penetration: run.max_penetration,
                sup_gap,
                l1_vel_gap,
                rho_mass,
                rho_mass_error: (rho_mass - reference_mass).abs(),
                excursions: run.excursions.iter().map(Vec::len).sum(),
                max_excursion_duration: all.map(Excursion::duration).fold(0.0, f64::max),
            }
        }
        Err(e) => SweepRow {
            k,
            valid: false,
            error: Some(e.to_string()),
            max_penetration: f64::NAN,
            sup_gap: f64::NAN,
            l1_vel_gap: f64::NAN,
            rho_mass: f64::NAN,
            rho_mass_error: f64::NAN,
            excursions: 0,
            max_excursion_duration: f64::NAN,
        },
    }
}

/// Runs the penalty system for every `k` (in parallel) and compares each run
/// with `reference`. Invalid runs are flagged and left out of the fits.
pub fn convergence_sweep(
    dom: &DomainGeometry,
    ff: &ForceField,
    initial: &SystemState,
    t_end: f64,
    ks: &[f64],
    reference: &Trajectory,
    opts: &PenaltyOptions,
) -> Result<SweepReport> {
    if ks.is_empty() || ks.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Input("k values must be non-empty and strictly increasing".into()));
    }
    let reference_mass = match reference.kind {
        TrajectoryKind::Exact => extract_measure(reference)?.total_mass(),
        TrajectoryKind::Penalty { .. } => f64::NAN,
    };
    let rows: Vec<SweepRow> = ks
        .par_iter()
        .map(|&k| sweep_row(dom, ff, initial, t_end, k, reference, reference_mass, opts))
        .collect();
    let valid: Vec<&SweepRow> = rows.iter().filter(|r| r.valid).collect();
    let pen: Vec<&&SweepRow> = valid.iter().filter(|r| r.max_penetration > 0.0).collect();
    let penetration_slope = fit_slope(
        &pen.iter().map(|r| r.k.ln()).collect::<Vec<_>>(),
        &pen.iter().map(|r| r.max_penetration.ln()).collect::<Vec<_>>(),
    );
    let gap: Vec<&&SweepRow> = valid.iter().filter(|r| r.sup_gap > 0.0).collect();
    let sup_gap_slope = fit_slope(
        &gap.iter().map(|r| r.k.ln()).collect::<Vec<_>>(),
        &gap.iter().map(|r| r.sup_gap.ln()).collect::<Vec<_>>(),
    );
    let monotone_sup_gap = valid.windows(2).all(|w| w[1].sup_gap < w[0].sup_gap);
    Ok(SweepReport {
        rows,
        penetration_slope,
        sup_gap_slope,
        monotone_sup_gap,
    })
}
