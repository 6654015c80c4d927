//! Event-driven solver: free flight `x'' = F`, elastic reflection at the
//! wall, sliding contact with normal force density `rho = F.nu + v^T H v`,
//! and grazing detection.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forces::ForceField;
use crate::geometry::{DomainGeometry, Point};
use crate::ode::{DenseStep, Dopri5, OdeOptions};
use crate::trajectory::{
    DensitySample, Event, EventKind, Mode, ModeInterval, Sample, SystemState, Termination, Trajectory, TrajectoryKind,
};

/// What to do when a particle meets the wall with zero normal speed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrazePolicy {
    /// End the run at the grazing time.
    #[default]
    Stop,
    /// Drop the normal velocity; enter sliding if the wall pushes back.
    Stick,
    /// Apply the reflection rule and keep flying.
    Reflect,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Confinement tolerance on `d_s`.
    pub pos_tol: f64,
    /// Event grouping width and Zeno window.
    pub time_tol: f64,
    /// Normal-speed threshold separating bounces from grazes. Defaults to
    /// `1e-8 * max(max_i |v_i(0)|, 1)`.
    pub graze_tol: Option<f64>,
    pub graze_policy: GrazePolicy,
    pub max_events_per_window: usize,
    pub max_events: usize,
    /// Spacing of the regular output grid; defaults to `T / 1000`.
    pub sample_dt: Option<f64>,
    /// Largest integrator step; defaults to `T / 20`.
    pub max_step: Option<f64>,
    /// Sub-samples per step used to bracket contacts.
    pub subsamples: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            pos_tol: 1e-10,
            time_tol: 1e-9,
            graze_tol: None,
            graze_policy: GrazePolicy::Stop,
            max_events_per_window: 100,
            max_events: 1_000_000,
            sample_dt: None,
            max_step: None,
            subsamples: 8,
        }
    }
}

/// Normalizes `normal` if it is within `1e-6` of unit length.
fn unit_normal(normal: &Point) -> Result<Point> {
    let len = normal.norm();
    if !len.is_finite() || (len - 1.0).abs() > 1e-6 {
        return Err(Error::Geometry(format!("normal has length {len}, expected 1")));
    }
    Ok(normal / len)
}

/// `v - 2 (v.nu) nu`.
pub fn reflect(v: &Point, normal: &Point) -> Result<Point> {
    if v.len() != normal.len() {
        return Err(Error::Input("velocity and normal differ in dimension".into()));
    }
    let nu = unit_normal(normal)?;
    let vn = v.dot(&nu);
    Ok(v - nu * (2.0 * vn))
}

fn rho_unchecked(dom: &DomainGeometry, x: &Point, v: &Point, force: &Point) -> Result<f64> {
    let g = dom.gradient(x)?;
    let h = dom.hessian(x)?;
    Ok(force.dot(&g) + v.dot(&(h * v)))
}

/// Normal force density needed to keep a particle on the wall.
pub fn sliding_density(
    dom: &DomainGeometry,
    x: &Point,
    v: &Point,
    force: &Point,
    pos_tol: f64,
    graze_tol: f64,
) -> Result<f64> {
    let d = dom.signed_distance(x)?;
    if d.abs() > pos_tol {
        return Err(Error::Mode(format!("particle is off the wall (d_s = {d:e})")));
    }
    let vn = dom.gradient(x)?.dot(v);
    if vn.abs() > graze_tol {
        return Err(Error::Mode(format!("particle has normal speed {vn:e}")));
    }
    rho_unchecked(dom, x, v, force)
}

/// Contact found while scanning a path segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Contact {
    /// `d_s` changes sign between `lo` (inside) and `hi` (outside).
    Crossing { lo: f64, hi: f64 },
    /// Local maximum of `d_s` within `pos_tol` of zero.
    Touch { t: f64 },
}

/// Scans `path(t) = (x, v)` on `[t0, t1]` for the first wall contact.
///
/// Queries outside the bounding box count as outside the domain. With
/// `fresh_start` the start point is treated as just released from the wall.
pub fn scan_contact<P>(
    dom: &DomainGeometry,
    mut path: P,
    t0: f64,
    t1: f64,
    subsamples: usize,
    pos_tol: f64,
    fresh_start: bool,
) -> Result<Option<Contact>>
where
    P: FnMut(f64) -> (Point, Point),
{
    let mut probe = |t: f64| -> (f64, f64) {
        let (x, v) = path(t);
        match dom.signed_distance(&x) {
            // the gradient only fails on the medial axis, far from the wall
            Ok(d) => (d, dom.gradient(&x).map_or(0.0, |g| g.dot(&v))),
            Err(_) => (f64::INFINITY, f64::NAN),
        }
    };
    let n = subsamples.max(1);
    let (_, r0) = probe(t0);
    let mut r_prev = if fresh_start { r0.min(0.0) } else { r0 };
    let mut t_prev = t0;
    for j in 1..=n {
        let t = if j == n { t1 } else { t0 + (t1 - t0) * j as f64 / n as f64 };
        let (g, r) = probe(t);
        if r_prev > 0.0 && r <= 0.0 {
            // turning point of d_s: penetration within pos_tol is a touch
            let tm = crate::roots::brent(|s| Ok(probe(s).1), t_prev, t, r_prev, r, 0.0)?;
            let gm = probe(tm).0;
            if gm > pos_tol {
                let (lo, hi) = bisect_sign(|s| probe(s).0, t_prev, tm);
                return Ok(Some(Contact::Crossing { lo, hi }));
            }
            if gm >= -pos_tol {
                return Ok(Some(Contact::Touch { t: tm }));
            }
        }
        if g > 0.0 {
            let (lo, hi) = bisect_sign(|s| probe(s).0, t_prev, t);
            return Ok(Some(Contact::Crossing { lo, hi }));
        }
        r_prev = r;
        t_prev = t;
    }
    Ok(None)
}

/// Bisection keeping `f(lo) <= 0 < f(hi)`; the value at `lo` is not
/// re-evaluated, so a slightly positive start is accepted.
fn bisect_sign<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64) -> (f64, f64) {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// First time in `[t0, t1]` at which a path starting inside reaches the
/// wall, by sign change or tangential touch.
pub fn locate_crossing<P>(dom: &DomainGeometry, path: P, t0: f64, t1: f64, pos_tol: f64) -> Result<f64>
where
    P: FnMut(f64) -> (Point, Point),
{
    match scan_contact(dom, path, t0, t1, 64, pos_tol, false)? {
        Some(Contact::Crossing { lo, .. }) => Ok(lo),
        Some(Contact::Touch { t }) => Ok(t),
        None => Err(Error::Bracket { t0, t1 }),
    }
}

#[derive(Clone, Copy, Debug)]
enum Candidate {
    Crossing(f64),
    Touch(f64),
    SlideEnd(f64),
}

impl Candidate {
    fn time(self) -> f64 {
        match self {
            Candidate::Crossing(t) | Candidate::Touch(t) | Candidate::SlideEnd(t) => t,
        }
    }
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

    fn set_x(&self, y: &mut [f64], i: usize, x: &Point) {
        y[i * self.m..(i + 1) * self.m].copy_from_slice(x.as_slice());
    }

    fn set_v(&self, y: &mut [f64], i: usize, v: &Point) {
        let off = self.n * self.m;
        y[off + i * self.m..off + (i + 1) * self.m].copy_from_slice(v.as_slice());
    }

    fn positions(&self, y: &[f64]) -> Vec<Point> {
        (0..self.n).map(|i| self.x(y, i)).collect()
    }

    fn velocities(&self, y: &[f64]) -> Vec<Point> {
        (0..self.n).map(|i| self.v(y, i)).collect()
    }

    fn pack(&self, state: &SystemState) -> Vec<f64> {
        let mut y = vec![0.0; 2 * self.n * self.m];
        for i in 0..self.n {
            self.set_x(&mut y, i, &state.positions[i]);
            self.set_v(&mut y, i, &state.velocities[i]);
        }
        y
    }
}

fn rhs(
    dom: &DomainGeometry,
    ff: &ForceField,
    layout: &Layout,
    modes: &[Mode],
    t: f64,
    y: &[f64],
    dy: &mut [f64],
) -> Result<()> {
    let xs = layout.positions(y);
    let forces = ff.eval_force(t, &xs)?;
    let off = layout.n * layout.m;
    dy[..off].copy_from_slice(&y[off..]);
    for (i, f) in forces.iter().enumerate() {
        let acc = match modes[i] {
            Mode::Free => f.clone(),
            Mode::Sliding => {
                let v = layout.v(y, i);
                let g = dom.gradient(&xs[i])?;
                let rho = rho_unchecked(dom, &xs[i], &v, f)?;
                f - g * rho
            }
        };
        dy[off + i * layout.m..off + (i + 1) * layout.m].copy_from_slice(acc.as_slice());
    }
    Ok(())
}

struct Simulation<'a> {
    dom: &'a DomainGeometry,
    ff: &'a ForceField,
    opts: &'a SolverOptions,
    layout: Layout,
    graze_tol: f64,
    modes: Vec<Mode>,
    mode_start: Vec<f64>,
    last_event: Vec<f64>,
    recent: VecDeque<f64>,
    traj: Trajectory,
    sample_dt: f64,
    next_grid: usize,
    t_start: f64,
}

impl Simulation<'_> {
    /// Projects sliding particles back onto the wall and their velocities
    /// onto the tangent plane.
    fn stabilize(&self, y: &mut [f64]) -> Result<()> {
        for i in 0..self.layout.n {
            if self.modes[i] == Mode::Sliding {
                let x = self.dom.project_to_boundary(&self.layout.x(y, i))?;
                let g = self.dom.gradient(&x)?;
                let v = self.layout.v(y, i);
                let vt = &v - &g * g.dot(&v);
                self.layout.set_x(y, i, &x);
                self.layout.set_v(y, i, &vt);
            }
        }
        Ok(())
    }

    fn push_sample(&mut self, t: f64, y: &[f64]) -> Result<()> {
        let positions = self.layout.positions(y);
        let velocities = self.layout.velocities(y);
        if self.modes.contains(&Mode::Sliding) {
            let forces = self.ff.eval_force(t, &positions)?;
            for i in 0..self.layout.n {
                if self.modes[i] == Mode::Sliding {
                    let value = rho_unchecked(self.dom, &positions[i], &velocities[i], &forces[i])?;
                    let normal = self.dom.normal(&positions[i])?;
                    self.traj.contact_density[i].push(DensitySample { t, value, normal });
                }
            }
        }
        let mut dy = vec![0.0; y.len()];
        rhs(self.dom, self.ff, &self.layout, &self.modes, t, y, &mut dy)?;
        self.traj.samples.push(Sample {
            t,
            positions,
            velocities,
            modes: self.modes.clone(),
            accelerations: self.layout.velocities(&dy),
        });
        Ok(())
    }

    fn grid_time(&self, k: usize) -> f64 {
        self.t_start + self.sample_dt * k as f64
    }

    /// Records grid samples in `(step.t0, until]`.
    fn record_grid(&mut self, step: &DenseStep, until: f64) -> Result<()> {
        loop {
            let tg = self.grid_time(self.next_grid);
            if tg > until || tg > self.traj.horizon.1 {
                break;
            }
            if tg > step.t0 {
                let mut y = step.eval(tg);
                self.stabilize(&mut y)?;
                self.push_sample(tg, &y)?;
            }
            self.next_grid += 1;
        }
        Ok(())
    }

    fn set_mode(&mut self, i: usize, t: f64, mode: Mode) {
        if self.modes[i] == mode {
            return;
        }
        self.traj.mode_timeline.push(ModeInterval {
            particle: i,
            start: self.mode_start[i],
            end: t,
            mode: self.modes[i],
        });
        self.modes[i] = mode;
        self.mode_start[i] = t;
    }

    fn close_modes(&mut self, t: f64) {
        for i in 0..self.layout.n {
            self.traj.mode_timeline.push(ModeInterval {
                particle: i,
                start: self.mode_start[i],
                end: t,
                mode: self.modes[i],
            });
        }
        self.traj
            .mode_timeline
            .sort_by(|a, b| a.particle.cmp(&b.particle).then(a.start.total_cmp(&b.start)));
    }

    fn push_event(&mut self, t: f64, i: usize, kind: EventKind, v_minus: Point, v_plus: Point, normal: Point) {
        let atom_mass = match kind {
            EventKind::SlideStart | EventKind::SlideEnd | EventKind::ZenoAbort => 0.0,
            _ => (&v_minus - &v_plus).dot(&normal).max(0.0),
        };
        self.traj.events.push(Event {
            t_event: t,
            particle: i,
            kind,
            v_minus,
            v_plus,
            normal,
            atom_mass,
        });
        self.last_event[i] = t;
    }

    /// Grazing contact of particle `i` at time `t`. Returns `true` when the
    /// run must stop.
    fn graze(&mut self, t: f64, i: usize, y: &mut [f64]) -> Result<bool> {
        let x = self.layout.x(y, i);
        let nu = self.dom.normal(&x)?;
        let v_minus = self.layout.v(y, i);
        match self.opts.graze_policy {
            GrazePolicy::Stop => {
                self.push_event(t, i, EventKind::Graze, v_minus.clone(), v_minus, nu);
                Ok(true)
            }
            GrazePolicy::Reflect => {
                // only an outward normal component is flipped
                let v_plus = if v_minus.dot(&nu) > 0.0 { reflect(&v_minus, &nu)? } else { v_minus.clone() };
                self.layout.set_v(y, i, &v_plus);
                self.push_event(t, i, EventKind::Graze, v_minus, v_plus, nu);
                Ok(false)
            }
            GrazePolicy::Stick => {
                let xb = self.dom.project_to_boundary(&x)?;
                let nu = self.dom.normal(&xb)?;
                let vt = &v_minus - &nu * nu.dot(&v_minus);
                self.layout.set_x(y, i, &xb);
                self.layout.set_v(y, i, &vt);
                self.push_event(t, i, EventKind::Graze, v_minus, vt.clone(), nu.clone());
                let forces = self.ff.eval_force(t, &self.layout.positions(y))?;
                let rho = rho_unchecked(self.dom, &xb, &vt, &forces[i])?;
                if rho >= 0.0 {
                    self.push_event(t, i, EventKind::SlideStart, vt.clone(), vt, nu);
                    self.set_mode(i, t, Mode::Sliding);
                }
                Ok(false)
            }
        }
    }

    fn apply(&mut self, t: f64, i: usize, cand: Candidate, y: &mut [f64]) -> Result<bool> {
        let x = self.layout.x(y, i);
        if self.dom.signed_distance(&x)? > 0.0 {
            self.layout.set_x(y, i, &self.dom.project_to_boundary(&x)?);
        }
        match cand {
            Candidate::Crossing(_) => {
                let x = self.layout.x(y, i);
                let nu = self.dom.normal(&x)?;
                let v_minus = self.layout.v(y, i);
                if v_minus.dot(&nu) > self.graze_tol {
                    let v_plus = reflect(&v_minus, &nu)?;
                    self.layout.set_v(y, i, &v_plus);
                    self.push_event(t, i, EventKind::Bounce, v_minus, v_plus, nu);
                    Ok(false)
                } else {
                    self.graze(t, i, y)
                }
            }
            Candidate::Touch(_) => self.graze(t, i, y),
            Candidate::SlideEnd(_) => {
                let x = self.layout.x(y, i);
                let nu = self.dom.normal(&x)?;
                let v = self.layout.v(y, i);
                self.push_event(t, i, EventKind::SlideEnd, v.clone(), v, nu);
                self.set_mode(i, t, Mode::Free);
                Ok(false)
            }
        }
    }

    /// Bounds `rho` from below for a sliding particle on the step; returns
    /// the first time it turns negative.
    fn scan_detach(&self, step: &DenseStep, i: usize) -> Result<Option<f64>> {
        let rho_at = |t: f64| -> Result<f64> {
            let mut y = step.eval(t);
            self.stabilize(&mut y)?;
            let xs = self.layout.positions(&y);
            let f = self.ff.eval_force(t, &xs)?;
            rho_unchecked(self.dom, &xs[i], &self.layout.v(&y, i), &f[i])
        };
        let n = self.opts.subsamples.max(1);
        let mut t_prev = step.t0;
        for j in 1..=n {
            let t = if j == n { step.t1 } else { step.t0 + step.h() * j as f64 / n as f64 };
            if rho_at(t)? < 0.0 {
                let (mut lo, mut hi) = (t_prev, t);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if rho_at(mid)? < 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Ok(Some(hi));
            }
            t_prev = t;
        }
        Ok(None)
    }

    fn scan(&self, step: &DenseStep) -> Result<Vec<(f64, usize, Candidate)>> {
        let mut found = Vec::new();
        let m = self.layout.m;
        let off = self.layout.n * m;
        for i in 0..self.layout.n {
            match self.modes[i] {
                Mode::Free => {
                    let path = |t: f64| {
                        let x = Point::from_iterator(m, (0..m).map(|c| step.eval_component(t, i * m + c)));
                        let v = Point::from_iterator(m, (0..m).map(|c| step.eval_component(t, off + i * m + c)));
                        (x, v)
                    };
                    let fresh = self.last_event[i] == step.t0;
                    match scan_contact(self.dom, path, step.t0, step.t1, self.opts.subsamples, self.opts.pos_tol, fresh)? {
                        Some(Contact::Crossing { lo, .. }) => found.push((lo, i, Candidate::Crossing(lo))),
                        Some(Contact::Touch { t }) => found.push((t, i, Candidate::Touch(t))),
                        None => {}
                    }
                }
                Mode::Sliding => {
                    if let Some(t) = self.scan_detach(step, i)? {
                        found.push((t, i, Candidate::SlideEnd(t)));
                    }
                }
            }
        }
        Ok(found)
    }

    fn zeno(&mut self, t: f64) -> bool {
        self.recent.push_back(t);
        while let Some(&front) = self.recent.front() {
            if front < t - self.opts.time_tol {
                self.recent.pop_front();
            } else {
                break;
            }
        }
        self.recent.len() > self.opts.max_events_per_window
    }
}

/// Integrates the confined dynamics from `initial` to `t_end`.
pub fn simulate_exact(
    dom: &DomainGeometry,
    ff: &ForceField,
    initial: &SystemState,
    t_end: f64,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    let n = initial.n();
    let m = initial.dim();
    if ff.n_particles() != n || ff.dim() != m || dom.dim() != m {
        return Err(Error::Input("domain, force field and initial state disagree on n or m".into()));
    }
    let t0 = initial.t;
    if !(t_end > t0) {
        return Err(Error::Input(format!("horizon end {t_end} must exceed start {t0}")));
    }
    let positive = [opts.rtol, opts.atol, opts.pos_tol, opts.time_tol];
    if positive.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Input("solver tolerances must be positive".into()));
    }
    for (i, x) in initial.positions.iter().enumerate() {
        let d = dom.signed_distance(x)?;
        if d > opts.pos_tol {
            return Err(Error::Input(format!("particle {i} starts outside the domain (d_s = {d:e})")));
        }
    }
    let char_speed = initial.velocities.iter().map(|v| v.norm()).fold(1.0, f64::max);
    let graze_tol = opts.graze_tol.unwrap_or(1e-8 * char_speed);
    let span = t_end - t0;
    let layout = Layout { n, m };
    let mut sim = Simulation {
        dom,
        ff,
        opts,
        layout,
        graze_tol,
        modes: vec![Mode::Free; n],
        mode_start: vec![t0; n],
        last_event: vec![f64::NAN; n],
        recent: VecDeque::new(),
        traj: Trajectory::new(n, m, (t0, t_end), TrajectoryKind::Exact),
        sample_dt: opts.sample_dt.unwrap_or(span / 1000.0),
        next_grid: 1,
        t_start: t0,
    };
    if !(sim.sample_dt > 0.0) {
        return Err(Error::Input("sample_dt must be positive".into()));
    }

    let mut y = sim.layout.pack(initial);
    sim.push_sample(t0, &y)?;

    // particles starting on the wall
    let mut stop = false;
    let mut any_initial = false;
    for i in 0..n {
        let x = sim.layout.x(&y, i);
        let d = dom.signed_distance(&x)?;
        if d.abs() <= opts.pos_tol {
            let vn = dom.normal(&x)?.dot(&sim.layout.v(&y, i));
            if vn > graze_tol {
                sim.apply(t0, i, Candidate::Crossing(t0), &mut y)?;
                any_initial = true;
            } else if vn.abs() <= graze_tol {
                any_initial = true;
                if sim.graze(t0, i, &mut y)? {
                    stop = true;
                }
            }
        }
    }
    if any_initial {
        sim.push_sample(t0, &y)?;
    }
    if stop {
        sim.traj.termination = Termination::GrazeStop { t: t0 };
        sim.close_modes(t0);
        sim.traj.end_time = t0;
        return Ok(sim.traj);
    }

    let ode_opts = OdeOptions {
        rtol: opts.rtol,
        atol: opts.atol,
        h_max: opts.max_step.unwrap_or(span / 20.0),
        h_min: 1e-14 * span.max(1.0),
        h_init: None,
    };
    let mut modes_snapshot = sim.modes.clone();
    let mut f = |t: f64, y: &[f64], dy: &mut [f64]| rhs(dom, ff, &Layout { n, m }, &modes_snapshot, t, y, dy);
    let mut solver = Dopri5::new(&mut f, t0, y.clone(), ode_opts)?;
    let mut t = t0;
    let mut n_events = sim.traj.events.len();

    while t < t_end {
        let mut f = |tt: f64, yy: &[f64], dy: &mut [f64]| rhs(dom, ff, &Layout { n, m }, &modes_snapshot, tt, yy, dy);
        let step = solver.step(&mut f, t_end)?;
        let mut found = sim.scan(&step)?;
        if found.is_empty() {
            sim.record_grid(&step, step.t1)?;
            t = step.t1;
            if sim.modes.contains(&Mode::Sliding) {
                let mut y1 = step.y1.clone();
                sim.stabilize(&mut y1)?;
                solver.replace_state(&mut f, y1)?;
            }
            continue;
        }
        found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let t_e = found[0].0;
        let mut group: Vec<(usize, Candidate)> = found
            .iter()
            .filter(|c| c.0 <= t_e + opts.time_tol)
            .map(|c| (c.1, c.2))
            .collect();
        group.sort_by_key(|c| c.0);

        sim.record_grid(&step, t_e)?;
        let mut ye = step.eval(t_e);
        sim.stabilize(&mut ye)?;
        sim.push_sample(t_e, &ye)?;
        for (i, cand) in group {
            debug_assert!(cand.time() >= t_e);
            if sim.apply(t_e, i, cand, &mut ye)? {
                stop = true;
            }
        }
        n_events = sim.traj.events.len().max(n_events);
        sim.push_sample(t_e, &ye)?;
        t = t_e;
        if stop {
            sim.traj.termination = Termination::GrazeStop { t: t_e };
            break;
        }
        if sim.zeno(t_e) {
            let v = sim.layout.v(&ye, found[0].1);
            let nu = dom.normal(&sim.layout.x(&ye, found[0].1))?;
            sim.push_event(t_e, found[0].1, EventKind::ZenoAbort, v.clone(), v, nu);
            sim.traj.termination = Termination::ZenoAbort { t: t_e };
            break;
        }
        if n_events >= opts.max_events {
            sim.traj.termination = Termination::MaxEvents { t: t_e };
            break;
        }
        modes_snapshot = sim.modes.clone();
        let mut f = |tt: f64, yy: &[f64], dy: &mut [f64]| rhs(dom, ff, &Layout { n, m }, &modes_snapshot, tt, yy, dy);
        solver.reset(&mut f, t_e, ye)?;
    }
    if sim.traj.termination == Termination::Horizon {
        // make sure the horizon end is sampled
        if sim.traj.samples.last().map(|s| s.t) != Some(t_end) {
            let mut y_end = solver.y().to_vec();
            sim.stabilize(&mut y_end)?;
            sim.push_sample(t_end, &y_end)?;
        }
        t = t_end;
    }
    sim.close_modes(t);
    sim.traj.end_time = t;
    Ok(sim.traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forces::BuiltinForce;
    use proptest::prelude::*;

    fn p(v: &[f64]) -> Point {
        Point::from_column_slice(v)
    }

    #[test]
    fn reflect_examples() {
        let nu = p(&[0.0, -1.0]);
        assert_eq!(reflect(&p(&[1.0, -1.0]), &nu).unwrap(), p(&[1.0, 1.0]));
        assert_eq!(reflect(&p(&[0.0, -2.0]), &nu).unwrap(), p(&[0.0, 2.0]));
        assert_eq!(reflect(&p(&[1.0, 0.0]), &nu).unwrap(), p(&[1.0, 0.0]));
    }

    #[test]
    fn reflect_normalizes_nearly_unit_normals_only() {
        let v = p(&[0.0, -2.0]);
        let r = reflect(&v, &p(&[0.0, -1.0 - 5e-7])).unwrap();
        assert!((r - p(&[0.0, 2.0])).norm() < 1e-12);
        assert!(matches!(reflect(&v, &p(&[0.0, -1.1])), Err(Error::Geometry(_))));
    }

    proptest! {
        #[test]
        fn reflection_preserves_speed_and_tangent(
            vx in -10.0..10.0f64, vy in -10.0..10.0f64, vz in -10.0..10.0f64,
            nx in -1.0..1.0f64, ny in -1.0..1.0f64, nz in -1.0..1.0f64,
        ) {
            let n = p(&[nx, ny, nz]);
            prop_assume!(n.norm() > 1e-3);
            let nu = &n / n.norm();
            let v = p(&[vx, vy, vz]);
            let r = reflect(&v, &nu).unwrap();
            let scale = v.norm().max(1.0);
            prop_assert!((r.norm() - v.norm()).abs() <= 1e-12 * scale);
            let vt = &v - &nu * v.dot(&nu);
            let rt = &r - &nu * r.dot(&nu);
            prop_assert!((vt - rt).norm() <= 1e-12 * scale);
            prop_assert!((r.dot(&nu) + v.dot(&nu)).abs() <= 1e-12 * scale);
            let back = reflect(&r, &nu).unwrap();
            prop_assert!((back - v).norm() <= 1e-12 * scale);
        }
    }

    fn line_path(x0: f64, v0: f64, acc: f64) -> impl FnMut(f64) -> (Point, Point) {
        move |t: f64| (p(&[x0 + v0 * t + 0.5 * acc * t * t]), p(&[v0 + acc * t]))
    }

    #[test]
    fn locate_crossing_examples() {
        let dom = DomainGeometry::interval(0.0, 10.0).unwrap();
        let t = locate_crossing(&dom, line_path(1.0, -1.0, 0.0), 0.0, 2.0, 1e-10).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        let t = locate_crossing(&dom, line_path(1.0, 0.0, -1.0), 0.0, 3.0, 1e-10).unwrap();
        assert!((t - 2f64.sqrt()).abs() < 1e-12, "{t}");
        let sine = |t: f64| (p(&[t.sin() + 1.0]), p(&[t.cos()]));
        let half = std::f64::consts::FRAC_PI_2;
        let t = locate_crossing(&dom, sine, half, half + 2.0 * std::f64::consts::PI, 1e-10).unwrap();
        assert!((t - 3.0 * half).abs() < 1e-9, "{t}");
    }

    #[test]
    fn locate_crossing_without_contact_is_a_bracket_error() {
        let dom = DomainGeometry::interval(0.0, 10.0).unwrap();
        let err = locate_crossing(&dom, line_path(5.0, 1.0, 0.0), 0.0, 1.0, 1e-10).unwrap_err();
        assert!(matches!(err, Error::Bracket { .. }));
    }

    #[test]
    fn sliding_density_examples() {
        let dom = DomainGeometry::interval(0.0, 10.0).unwrap();
        let x = p(&[0.0]);
        let v = p(&[0.0]);
        assert_eq!(sliding_density(&dom, &x, &v, &p(&[-1.0]), 1e-10, 1e-8).unwrap(), 1.0);
        assert_eq!(sliding_density(&dom, &x, &v, &p(&[1.0]), 1e-10, 1e-8).unwrap(), -1.0);
        let ball = DomainGeometry::ball(p(&[0.0, 0.0]), 1.0).unwrap();
        let s = 0.7;
        let rho = sliding_density(&ball, &p(&[1.0, 0.0]), &p(&[0.0, s]), &p(&[0.0, 0.0]), 1e-10, 1e-8).unwrap();
        assert!((rho - s * s).abs() < 1e-14);
        let off = sliding_density(&dom, &p(&[1.0]), &v, &p(&[-1.0]), 1e-10, 1e-8);
        assert!(matches!(off, Err(Error::Mode(_))));
        let moving = sliding_density(&dom, &x, &p(&[1.0]), &p(&[-1.0]), 1e-10, 1e-8);
        assert!(matches!(moving, Err(Error::Mode(_))));
    }

    #[test]
    fn stationary_particle_has_no_events() {
        let dom = DomainGeometry::ball(p(&[0.0, 0.0]), 1.0).unwrap();
        let ff = ForceField::new(1, 2, BuiltinForce::Zero).unwrap();
        let init = SystemState::new(0.0, vec![p(&[0.2, 0.1])], vec![p(&[0.0, 0.0])]).unwrap();
        let traj = simulate_exact(&dom, &ff, &init, 10.0, &SolverOptions::default()).unwrap();
        assert!(traj.events.is_empty());
        assert!(traj.samples.iter().all(|s| s.positions[0] == p(&[0.2, 0.1])));
        assert_eq!(traj.samples.last().unwrap().t, 10.0);
        assert_eq!(traj.termination, Termination::Horizon);
    }

    #[test]
    fn start_outside_is_rejected() {
        let dom = DomainGeometry::interval(0.0, 10.0).unwrap();
        let ff = ForceField::new(1, 1, BuiltinForce::Zero).unwrap();
        let init = SystemState::scalar(0.0, -0.5, 0.0);
        assert!(matches!(
            simulate_exact(&dom, &ff, &init, 1.0, &SolverOptions::default()),
            Err(Error::Input(_))
        ));
    }
}
