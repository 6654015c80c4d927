//! Post-hoc checks on finished trajectories: boundary measure, energy
//! balance, weak-form residual, grazing horizon and trajectory distances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forces::ForceField;
use crate::geometry::Point;
use crate::penalty::PenaltyRun;
use crate::quadrature::gauss_legendre;
use crate::trajectory::{serde_point, DensitySample, EventKind, Mode, Trajectory, TrajectoryKind};

/// Gauss–Legendre order used on each trajectory segment.
const SEGMENT_ORDER: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub t: f64,
    pub mass: f64,
    #[serde(with = "serde_point")]
    pub normal: Point,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParticleMeasure {
    pub atoms: Vec<Atom>,
    pub density: Vec<DensitySample>,
    /// Sliding intervals carrying the density.
    pub sliding: Vec<(f64, f64)>,
}

impl ParticleMeasure {
    pub fn atom_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    /// Pairs of consecutive density samples lying in one sliding interval.
    fn density_pairs(&self) -> impl Iterator<Item = (&DensitySample, &DensitySample)> + '_ {
        self.density.windows(2).filter_map(move |w| {
            let (a, b) = (&w[0], &w[1]);
            let inside = self.sliding.iter().any(|&(s, e)| a.t >= s && b.t <= e);
            (b.t > a.t && inside).then_some((a, b))
        })
    }

    /// Trapezoid integral of the density.
    pub fn density_mass(&self) -> f64 {
        self.density_pairs().map(|(a, b)| 0.5 * (a.value + b.value) * (b.t - a.t)).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.atom_mass() + self.density_mass()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMeasure {
    pub particles: Vec<ParticleMeasure>,
}

impl BoundaryMeasure {
    pub fn empty(n: usize) -> Self {
        Self {
            particles: vec![ParticleMeasure::default(); n],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.particles.iter().all(|p| p.atoms.is_empty() && p.density.is_empty())
    }

    pub fn total_mass(&self) -> f64 {
        self.particles.iter().map(ParticleMeasure::total_mass).sum()
    }

    /// Same support with every mass set to zero.
    pub fn zeroed(&self) -> Self {
        let mut out = self.clone();
        for p in &mut out.particles {
            p.atoms.iter_mut().for_each(|a| a.mass = 0.0);
            p.density.iter_mut().for_each(|d| d.value = 0.0);
        }
        out
    }

    /// Atoms and density samples that do not lie within `tol` of a recorded
    /// contact time of `traj`, as `(particle, t)`.
    pub fn support_violations(&self, traj: &Trajectory, tol: f64) -> Vec<(usize, f64)> {
        let mut bad = Vec::new();
        for (i, p) in self.particles.iter().enumerate() {
            let contacts: Vec<f64> = traj
                .events_of(i)
                .filter(|e| matches!(e.kind, EventKind::Bounce | EventKind::Graze))
                .map(|e| e.t_event)
                .collect();
            let sliding = traj.intervals(i, Mode::Sliding);
            let ok = |t: f64| {
                contacts.iter().any(|&c| (c - t).abs() <= tol)
                    || sliding.iter().any(|&(s, e)| t >= s - tol && t <= e + tol)
            };
            for a in &p.atoms {
                if a.mass < 0.0 || !ok(a.t) {
                    bad.push((i, a.t));
                }
            }
            for d in &p.density {
                if d.value < -tol || !ok(d.t) {
                    bad.push((i, d.t));
                }
            }
        }
        bad
    }
}

/// Atoms from the event log plus the sliding density of an exact run.
pub fn extract_measure(traj: &Trajectory) -> Result<BoundaryMeasure> {
    if let TrajectoryKind::Penalty { .. } = traj.kind {
        return Err(Error::Input(
            "penalty trajectories carry no event log; use extract_measure_penalty".into(),
        ));
    }
    let mut out = BoundaryMeasure::empty(traj.n);
    for e in &traj.events {
        if matches!(e.kind, EventKind::Bounce | EventKind::Graze) && e.atom_mass > 0.0 {
            out.particles[e.particle].atoms.push(Atom {
                t: e.t_event,
                mass: e.atom_mass,
                normal: e.normal.clone(),
            });
        }
    }
    for (i, p) in out.particles.iter_mut().enumerate() {
        p.density = traj.contact_density.get(i).cloned().unwrap_or_default();
        p.sliding = traj.intervals(i, Mode::Sliding);
    }
    Ok(out)
}

/// `int_window rho^k dt` for one particle of a penalty run (trapezoid rule).
pub fn extract_measure_penalty(run: &PenaltyRun, particle: usize, window: (f64, f64)) -> Result<f64> {
    let samples = run
        .rho_samples
        .get(particle)
        .ok_or_else(|| Error::Input(format!("no particle {particle}")))?;
    let (lo, hi) = window;
    if !(hi >= lo) {
        return Err(Error::Input("window end precedes start".into()));
    }
    let at = |t: f64| -> f64 {
        let j = samples.partition_point(|s| s.t <= t);
        if j == 0 || j == samples.len() {
            return 0.0;
        }
        let (a, b) = (&samples[j - 1], &samples[j]);
        if b.t == a.t {
            return b.value;
        }
        a.value + (b.value - a.value) * (t - a.t) / (b.t - a.t)
    };
    let mut ts = vec![lo];
    let mut ys = vec![at(lo)];
    for s in samples.iter().filter(|s| s.t > lo && s.t < hi) {
        ts.push(s.t);
        ys.push(s.value);
    }
    ts.push(hi);
    ys.push(at(hi));
    Ok(crate::quadrature::trapezoid(&ts, &ys))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub particle: usize,
    pub s1: f64,
    pub s2: f64,
    pub kinetic_gap: f64,
    pub work: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub rows: Vec<EnergyRow>,
    pub max_abs_residual: f64,
}

fn check_window(traj: &Trajectory, s1: f64, s2: f64) -> Result<()> {
    let (t0, t1) = (traj.horizon.0, traj.last_time());
    if !(s1 < s2) || s1 < t0 || s2 > t1 {
        return Err(Error::Input(format!(
            "window ({s1}, {s2}) is not an ordered subinterval of [{t0}, {t1}]"
        )));
    }
    Ok(())
}

/// Calls `f(t, w, x, v)` at Gauss–Legendre nodes covering `[lo, hi]`, split
/// along the trajectory segments and into pieces no longer than `max_piece`.
fn for_each_node<F>(traj: &Trajectory, lo: f64, hi: f64, max_piece: f64, mut f: F) -> Result<()>
where
    F: FnMut(f64, f64, &[Point], &[Point]) -> Result<()>,
{
    let (nodes, weights) = gauss_legendre(SEGMENT_ORDER);
    for j in traj.segments() {
        let (a, b) = (traj.samples[j].t.max(lo), traj.samples[j + 1].t.min(hi));
        if b <= a {
            continue;
        }
        let pieces = ((b - a) / max_piece).ceil().max(1.0) as usize;
        let h = (b - a) / pieces as f64;
        for p in 0..pieces {
            let (pa, pb) = (a + h * p as f64, a + h * (p + 1) as f64);
            let (mid, half) = (0.5 * (pa + pb), 0.5 * (pb - pa));
            for (x, w) in nodes.iter().zip(&weights) {
                let t = mid + half * x;
                let (xs, vs) = traj.eval_segment(j, t);
                f(t, w * half, &xs, &vs)?;
            }
        }
    }
    Ok(())
}

/// Kinetic gap `|v(s2)|^2/2 - |v(s1)|^2/2` (right limits) against the work
/// `int F . v dt` for every particle and window.
pub fn energy_report(traj: &Trajectory, ff: &ForceField, windows: &[(f64, f64)]) -> Result<EnergyReport> {
    let mut rows = Vec::new();
    for &(s1, s2) in windows {
        check_window(traj, s1, s2)?;
        let (_, v1) = traj.state_at(s1).ok_or(Error::Input(format!("no state at {s1}")))?;
        let (_, v2) = traj.state_at(s2).ok_or(Error::Input(format!("no state at {s2}")))?;
        let mut work = vec![0.0; traj.n];
        for_each_node(traj, s1, s2, f64::INFINITY, |t, w, xs, vs| {
            let forces = ff.eval_force(t, xs)?;
            for i in 0..traj.n {
                work[i] += w * forces[i].dot(&vs[i]);
            }
            Ok(())
        })?;
        for i in 0..traj.n {
            let gap = 0.5 * (v2[i].norm_squared() - v1[i].norm_squared());
            rows.push(EnergyRow {
                particle: i,
                s1,
                s2,
                kinetic_gap: gap,
                work: work[i],
                residual: gap - work[i],
            });
        }
    }
    let max_abs_residual = rows.iter().map(|r| r.residual.abs()).fold(0.0, f64::max);
    Ok(EnergyReport { rows, max_abs_residual })
}

/// Scaled mollifier `scale * sigma((t - center) / half_width)` along one
/// coordinate axis, with `sigma(s) = exp(-1 / (1 - s^2))` on `|s| < 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub center: f64,
    pub half_width: f64,
    pub component: usize,
    pub scale: f64,
}

impl TestFunction {
    pub fn new(center: f64, half_width: f64, component: usize) -> Self {
        Self {
            center,
            half_width,
            component,
            scale: 1.0,
        }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.center - self.half_width, self.center + self.half_width)
    }

    pub fn value(&self, t: f64) -> f64 {
        let s = (t - self.center) / self.half_width;
        if s.abs() >= 1.0 {
            return 0.0;
        }
        self.scale * (-1.0 / (1.0 - s * s)).exp()
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let s = (t - self.center) / self.half_width;
        if s.abs() >= 1.0 {
            return 0.0;
        }
        let q = 1.0 - s * s;
        self.scale * (-1.0 / q).exp() * (-2.0 * s / (q * q)) / self.half_width
    }
}

/// `count` bumps centred at event times, between events and on a uniform
/// grid, cycling through the coordinate axes. Every support lies inside the
/// open sampled range.
pub fn bump_family(traj: &Trajectory, count: usize) -> Vec<TestFunction> {
    let (t0, t1) = (traj.horizon.0, traj.last_time());
    let span = t1 - t0;
    let base = span / 10.0;
    let mut centers: Vec<f64> = traj.events.iter().map(|e| e.t_event).collect();
    let ev = centers.clone();
    centers.extend(ev.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let grid = count.max(1);
    centers.extend((0..grid).map(|j| t0 + span * (j as f64 + 0.5) / grid as f64));
    let mut out = Vec::with_capacity(count);
    for c in centers {
        if out.len() == count {
            break;
        }
        let w = base.min(0.99 * (c - t0)).min(0.99 * (t1 - c));
        if w > 1e-6 * span {
            out.push(TestFunction::new(c, w, out.len() % traj.dim));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakFormEntry {
    pub particle: usize,
    pub test_function: usize,
    pub velocity_term: f64,
    pub force_term: f64,
    pub measure_term: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakFormReport {
    pub entries: Vec<WeakFormEntry>,
    pub max_residual: f64,
}

/// `max |int v . psi' dt + int F . psi dt - int nu . psi d rho|` over
/// particles and test functions.
pub fn weak_form_residual(
    traj: &Trajectory,
    measure: &BoundaryMeasure,
    ff: &ForceField,
    test_fns: &[TestFunction],
) -> Result<WeakFormReport> {
    if test_fns.is_empty() {
        return Err(Error::Input("at least one test function is required".into()));
    }
    if measure.particles.len() != traj.n {
        return Err(Error::Input("measure and trajectory disagree on particle count".into()));
    }
    let (t0, t1) = (traj.horizon.0, traj.last_time());
    let mut entries = Vec::new();
    for (k, psi) in test_fns.iter().enumerate() {
        let (lo, hi) = psi.support();
        if !(psi.half_width > 0.0) || lo < t0 || hi > t1 || psi.component >= traj.dim {
            return Err(Error::Input(format!(
                "test function {k} with support ({lo}, {hi}) must lie inside ({t0}, {t1})"
            )));
        }
        let c = psi.component;
        let mut vel = vec![0.0; traj.n];
        let mut force = vec![0.0; traj.n];
        for_each_node(traj, lo, hi, psi.half_width / 16.0, |t, w, xs, vs| {
            let fs = ff.eval_force(t, xs)?;
            let (p, dp) = (psi.value(t), psi.derivative(t));
            for i in 0..traj.n {
                vel[i] += w * vs[i][c] * dp;
                force[i] += w * fs[i][c] * p;
            }
            Ok(())
        })?;
        for (i, pm) in measure.particles.iter().enumerate() {
            let atoms: f64 = pm.atoms.iter().map(|a| a.mass * a.normal[c] * psi.value(a.t)).sum();
            let density: f64 = pm
                .density_pairs()
                .map(|(a, b)| {
                    let fa = a.value * a.normal[c] * psi.value(a.t);
                    let fb = b.value * b.normal[c] * psi.value(b.t);
                    0.5 * (fa + fb) * (b.t - a.t)
                })
                .sum();
            let measure_term = atoms + density;
            let residual = vel[i] + force[i] - measure_term;
            entries.push(WeakFormEntry {
                particle: i,
                test_function: k,
                velocity_term: vel[i],
                force_term: force[i],
                measure_term,
                residual,
            });
        }
    }
    let max_residual = entries.iter().map(|e| e.residual.abs()).fold(0.0, f64::max);
    Ok(WeakFormReport { entries, max_residual })
}

/// Earliest grazing or sliding-start time: the horizon up to which the
/// solution is certified unique.
pub fn first_grazing_time(traj: &Trajectory) -> Option<f64> {
    traj.events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Graze | EventKind::SlideStart))
        .map(|e| e.t_event)
        .reduce(f64::min)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareNorm {
    /// Sup over time of the largest particle position distance.
    SupPos,
    /// `int sum_i |v_a - v_b| dt`.
    L1Vel,
}

impl std::str::FromStr for CompareNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sup_pos" => Ok(CompareNorm::SupPos),
            "l1_vel" => Ok(CompareNorm::L1Vel),
            _ => Err(Error::Input(format!("unknown norm {s:?}; expected sup_pos or l1_vel"))),
        }
    }
}

/// Distance between two trajectories on the union of their sample times,
/// restricted to the range both cover.
pub fn compare_trajectories(a: &Trajectory, b: &Trajectory, norm: CompareNorm) -> Result<f64> {
    if a.n != b.n || a.dim != b.dim {
        return Err(Error::Input("trajectories differ in particle count or dimension".into()));
    }
    let tol = 1e-12 * (1.0 + a.horizon.1.abs());
    if (a.horizon.0 - b.horizon.0).abs() > tol || (a.horizon.1 - b.horizon.1).abs() > tol {
        return Err(Error::Input(format!(
            "horizon mismatch: {:?} vs {:?}",
            a.horizon, b.horizon
        )));
    }
    let end = a.last_time().min(b.last_time());
    let mut grid: Vec<f64> = a.times().into_iter().chain(b.times()).filter(|&t| t <= end).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut sup = 0.0_f64;
    let mut gaps = Vec::with_capacity(grid.len());
    for &t in &grid {
        let (xa, va) = a.state_at(t).ok_or(Error::Input(format!("no state at {t}")))?;
        let (xb, vb) = b.state_at(t).ok_or(Error::Input(format!("no state at {t}")))?;
        for i in 0..a.n {
            sup = sup.max((&xa[i] - &xb[i]).norm());
        }
        gaps.push((0..a.n).map(|i| (&va[i] - &vb[i]).norm()).sum::<f64>());
    }
    Ok(match norm {
        CompareNorm::SupPos => sup,
        CompareNorm::L1Vel => crate::quadrature::trapezoid(&grid, &gaps),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedAudit {
    pub max_jump: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Largest change of speed across events against `tolerance`.
pub fn speed_continuity_audit(traj: &Trajectory, tolerance: f64) -> SpeedAudit {
    let max_jump = traj.max_speed_jump();
    SpeedAudit {
        max_jump,
        tolerance,
        pass: max_jump <= tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;

    #[test]
    fn bump_derivative_matches_finite_differences() {
        let psi = TestFunction::new(1.0, 0.5, 0);
        for t in [0.6, 0.8, 1.0, 1.2, 1.45] {
            let h = 1e-6;
            let fd = (psi.value(t + h) - psi.value(t - h)) / (2.0 * h);
            assert!((fd - psi.derivative(t)).abs() < 1e-7, "t={t}");
        }
        assert_eq!(psi.value(0.5), 0.0);
        assert_eq!(psi.derivative(1.5), 0.0);
        // int psi' = 0
        let total = integrate(|t| psi.derivative(t), 0.5, 1.5, 1e-14, 1e-12).unwrap();
        assert!(total.abs() < 1e-12);
    }

    #[test]
    fn compare_norm_parses() {
        assert_eq!("sup_pos".parse::<CompareNorm>().unwrap(), CompareNorm::SupPos);
        assert_eq!("l1_vel".parse::<CompareNorm>().unwrap(), CompareNorm::L1Vel);
        assert!("l2".parse::<CompareNorm>().is_err());
    }

    #[test]
    fn zeroed_measure_keeps_support() {
        let m = BoundaryMeasure {
            particles: vec![ParticleMeasure {
                atoms: vec![Atom {
                    t: 1.0,
                    mass: 2.0,
                    normal: Point::from_element(1, -1.0),
                }],
                density: vec![],
                sliding: vec![],
            }],
        };
        let z = m.zeroed();
        assert_eq!(z.particles[0].atoms.len(), 1);
        assert_eq!(z.total_mass(), 0.0);
        assert_eq!(m.total_mass(), 2.0);
    }

    #[test]
    fn density_mass_skips_gaps_between_sliding_intervals() {
        let d = |t: f64| DensitySample {
            t,
            value: 1.0,
            normal: Point::from_element(1, -1.0),
        };
        let pm = ParticleMeasure {
            atoms: vec![],
            density: vec![d(0.0), d(1.0), d(2.0), d(3.0)],
            sliding: vec![(0.0, 1.0), (2.0, 3.0)],
        };
        assert!((pm.density_mass() - 2.0).abs() < 1e-15);
    }
}
