//! Trajectory data model shared by both solvers.
//!
//! Velocities are stored with explicit one-sided limits: at every event time
//! the sample list holds the left limit followed by the right limit, so the
//! right-continuous representative is the last sample with a given time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Serialize a [`Point`] as a flat list of floats.
pub mod serde_point {
    use super::Point;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &Point, s: S) -> Result<S::Ok, S::Error> {
        p.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Point, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Ok(Point::from_vec(v))
    }
}

/// Serialize a list of [`Point`]s as nested lists.
pub mod serde_points {
    use super::Point;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &[Point], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = p.iter().map(|x| x.as_slice()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Point>, D::Error> {
        let v = Vec::<Vec<f64>>::deserialize(d)?;
        Ok(v.into_iter().map(Point::from_vec).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Free,
    Sliding,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Free => "free",
            Mode::Sliding => "sliding",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Bounce,
    Graze,
    SlideStart,
    SlideEnd,
    ZenoAbort,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub t: f64,
    #[serde(with = "serde_points")]
    pub positions: Vec<Point>,
    #[serde(with = "serde_points")]
    pub velocities: Vec<Point>,
}

impl SystemState {
    pub fn new(t: f64, positions: Vec<Point>, velocities: Vec<Point>) -> Result<Self> {
        if positions.is_empty() || positions.len() != velocities.len() {
            return Err(Error::Input("positions and velocities must be non-empty and equally long".into()));
        }
        let m = positions[0].len();
        if m == 0 || positions.iter().chain(&velocities).any(|p| p.len() != m) {
            return Err(Error::Input("all points must share one positive dimension".into()));
        }
        if !t.is_finite() || positions.iter().chain(&velocities).any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("initial state"));
        }
        Ok(Self { t, positions, velocities })
    }

    /// Single particle in one dimension.
    pub fn scalar(t: f64, x: f64, v: f64) -> Self {
        Self {
            t,
            positions: vec![Point::from_element(1, x)],
            velocities: vec![Point::from_element(1, v)],
        }
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn dim(&self) -> usize {
        self.positions[0].len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    #[serde(with = "serde_points")]
    pub positions: Vec<Point>,
    #[serde(with = "serde_points")]
    pub velocities: Vec<Point>,
    pub modes: Vec<Mode>,
    /// One-sided accelerations matching `velocities`; empty when unknown.
    #[serde(with = "serde_points", default)]
    pub accelerations: Vec<Point>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t_event: f64,
    pub particle: usize,
    pub kind: EventKind,
    #[serde(with = "serde_point")]
    pub v_minus: Point,
    #[serde(with = "serde_point")]
    pub v_plus: Point,
    #[serde(with = "serde_point")]
    pub normal: Point,
    pub atom_mass: f64,
}

impl Event {
    pub fn speed_jump(&self) -> f64 {
        (self.v_plus.norm() - self.v_minus.norm()).abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeInterval {
    pub particle: usize,
    pub start: f64,
    pub end: f64,
    pub mode: Mode,
}

/// Normal force density `rho(t)` sampled on sliding arcs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensitySample {
    pub t: f64,
    pub value: f64,
    #[serde(with = "serde_point")]
    pub normal: Point,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "solver")]
pub enum TrajectoryKind {
    Exact,
    Penalty { k: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum Termination {
    Horizon,
    GrazeStop { t: f64 },
    ZenoAbort { t: f64 },
    MaxEvents { t: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n: usize,
    pub dim: usize,
    pub horizon: (f64, f64),
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub mode_timeline: Vec<ModeInterval>,
    pub contact_density: Vec<Vec<DensitySample>>,
    pub kind: TrajectoryKind,
    pub termination: Termination,
    pub end_time: f64,
}

impl Trajectory {
    pub fn new(n: usize, dim: usize, horizon: (f64, f64), kind: TrajectoryKind) -> Self {
        Self {
            n,
            dim,
            horizon,
            samples: Vec::new(),
            events: Vec::new(),
            mode_timeline: Vec::new(),
            contact_density: vec![Vec::new(); n],
            kind,
            termination: Termination::Horizon,
            end_time: horizon.0,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn events_of(&self, particle: usize) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.particle == particle)
    }

    pub fn bounces(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.kind == EventKind::Bounce)
    }

    /// Largest `||v+| - |v-||` over all events.
    pub fn max_speed_jump(&self) -> f64 {
        self.events
            .iter()
            .filter(|e| e.kind != EventKind::ZenoAbort)
            .map(Event::speed_jump)
            .fold(0.0, f64::max)
    }

    /// Right-continuous sample index at `t`: the last sample with time `<= t`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        let idx = self.samples.partition_point(|s| s.t <= t);
        idx.checked_sub(1)
    }

    /// Indices `j` of sample pairs spanning a proper time segment
    /// `samples[j].t < samples[j + 1].t`.
    pub fn segments(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.samples.len().saturating_sub(1)).filter(move |&j| self.samples[j].t < self.samples[j + 1].t)
    }

    /// Cubic Hermite state inside segment `j`. Positions use the stored
    /// velocities as slopes, velocities use the stored accelerations (linear
    /// interpolation when accelerations are missing).
    pub fn eval_segment(&self, j: usize, t: f64) -> (Vec<Point>, Vec<Point>) {
        let (a, b) = (&self.samples[j], &self.samples[j + 1]);
        let h = b.t - a.t;
        let s = (t - a.t) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let herm = |p0: &Point, m0: &Point, p1: &Point, m1: &Point| p0 * h00 + m0 * (h10 * h) + p1 * h01 + m1 * (h11 * h);
        let has_acc = a.accelerations.len() == self.n && b.accelerations.len() == self.n;
        let mut xs = Vec::with_capacity(self.n);
        let mut vs = Vec::with_capacity(self.n);
        for i in 0..self.n {
            xs.push(herm(&a.positions[i], &a.velocities[i], &b.positions[i], &b.velocities[i]));
            if has_acc {
                vs.push(herm(&a.velocities[i], &a.accelerations[i], &b.velocities[i], &b.accelerations[i]));
            } else {
                vs.push(&a.velocities[i] * (1.0 - s) + &b.velocities[i] * s);
            }
        }
        (xs, vs)
    }

    /// Right-continuous interpolated state at `t`, `None` outside the
    /// sampled range.
    pub fn state_at(&self, t: f64) -> Option<(Vec<Point>, Vec<Point>)> {
        let j = self.index_at(t)?;
        let s = &self.samples[j];
        if s.t == t {
            return Some((s.positions.clone(), s.velocities.clone()));
        }
        if j + 1 >= self.samples.len() {
            return None;
        }
        Some(self.eval_segment(j, t))
    }

    /// Last sampled time.
    pub fn last_time(&self) -> f64 {
        self.samples.last().map_or(self.horizon.0, |s| s.t)
    }

    /// Intervals on which `particle` was in `mode`.
    pub fn intervals(&self, particle: usize, mode: Mode) -> Vec<(f64, f64)> {
        self.mode_timeline
            .iter()
            .filter(|iv| iv.particle == particle && iv.mode == mode)
            .map(|iv| (iv.start, iv.end))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_validation() {
        assert!(SystemState::new(0.0, vec![], vec![]).is_err());
        let p = Point::from_vec(vec![0.0, 1.0]);
        let q = Point::from_vec(vec![0.0]);
        assert!(SystemState::new(0.0, vec![p.clone()], vec![q]).is_err());
        assert!(SystemState::new(0.0, vec![p.clone()], vec![p.clone()]).is_ok());
        let bad = Point::from_vec(vec![f64::NAN, 0.0]);
        assert!(matches!(SystemState::new(0.0, vec![bad], vec![p]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn event_json_uses_flat_vectors() {
        let e = Event {
            t_event: 1.0,
            particle: 0,
            kind: EventKind::Bounce,
            v_minus: Point::from_vec(vec![-1.0]),
            v_plus: Point::from_vec(vec![1.0]),
            normal: Point::from_vec(vec![-1.0]),
            atom_mass: 2.0,
        };
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(
            s,
            r#"{"t_event":1.0,"particle":0,"kind":"bounce","v_minus":[-1.0],"v_plus":[1.0],"normal":[-1.0],"atom_mass":2.0}"#
        );
        let back: Event = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn right_continuous_lookup() {
        let mut traj = Trajectory::new(1, 1, (0.0, 2.0), TrajectoryKind::Exact);
        for (t, v) in [(0.0, -1.0), (1.0, -1.0), (1.0, 1.0), (2.0, 1.0)] {
            traj.samples.push(Sample {
                t,
                positions: vec![Point::zeros(1)],
                velocities: vec![Point::from_element(1, v)],
                modes: vec![Mode::Free],
                accelerations: vec![],
            });
        }
        assert_eq!(traj.index_at(1.0), Some(2));
        assert_eq!(traj.index_at(0.5), Some(0));
        assert_eq!(traj.index_at(-0.1), None);
        let (_, v) = traj.state_at(1.0).unwrap();
        assert_eq!(v[0][0], 1.0);
        let (_, v) = traj.state_at(0.5).unwrap();
        assert_eq!(v[0][0], -1.0);
        assert!(traj.state_at(2.5).is_none());
    }

    #[test]
    fn hermite_is_exact_for_a_parabola() {
        // x = t^2 / 2, v = t, a = 1
        let mut traj = Trajectory::new(1, 1, (0.0, 2.0), TrajectoryKind::Exact);
        for t in [0.0, 0.7, 2.0] {
            traj.samples.push(Sample {
                t,
                positions: vec![Point::from_element(1, 0.5 * t * t)],
                velocities: vec![Point::from_element(1, t)],
                modes: vec![Mode::Free],
                accelerations: vec![Point::from_element(1, 1.0)],
            });
        }
        assert_eq!(traj.segments().count(), 2);
        for t in [0.1, 0.33, 1.2, 1.9] {
            let (x, v) = traj.state_at(t).unwrap();
            assert!((x[0][0] - 0.5 * t * t).abs() < 1e-15);
            assert!((v[0][0] - t).abs() < 1e-15);
        }
    }
}
