//! Force fields `F_i(t, X)`.
//!
//! All built-in fields are closed forms defined on the whole space, so the
//! continuous extension beyond the closed domain needed by the penalty solver
//! is the formula itself. Distances between configurations use
//! `||X|| = max_i |x_i|`.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::counterexample::Counterexample;
use crate::error::{Error, Result};
use crate::geometry::Point;

/// Scalar time profile `f(t)` for [`BuiltinForce::TimeScalar`].
#[derive(Clone, Debug)]
pub enum ScalarSignal {
    Constant(f64),
    /// `before` for `t < t_switch`, `after` from `t_switch` on.
    Step { t_switch: f64, before: f64, after: f64 },
    Sine { amplitude: f64, omega: f64, phase: f64 },
    /// Piecewise-linear table of `(t, value)`, held constant past either end.
    Table(Vec<(f64, f64)>),
    /// The non-positive forcing of the half-line counterexample.
    Counterexample(Arc<Counterexample>),
}

impl ScalarSignal {
    pub fn table(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Input("empty signal table".into()));
        }
        if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::NonFinite("signal table"));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self::Table(points))
    }

    /// Reads a two-column `t,value` CSV; a non-numeric first row is taken as a
    /// header.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut points = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() < 2 {
                return Err(Error::Input(format!("signal table row {row} needs two columns")));
            }
            match (record[0].parse::<f64>(), record[1].parse::<f64>()) {
                (Ok(t), Ok(v)) => points.push((t, v)),
                _ if row == 0 => continue,
                _ => return Err(Error::Input(format!("signal table row {row} is not numeric"))),
            }
        }
        Self::table(points)
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        Ok(match self {
            ScalarSignal::Constant(c) => *c,
            ScalarSignal::Step { t_switch, before, after } => {
                if t < *t_switch {
                    *before
                } else {
                    *after
                }
            }
            ScalarSignal::Sine { amplitude, omega, phase } => amplitude * (omega * t + phase).sin(),
            ScalarSignal::Table(points) => interpolate(points, t),
            ScalarSignal::Counterexample(ce) => ce.force(t)?,
        })
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            ScalarSignal::Constant(c) => c.abs(),
            ScalarSignal::Step { before, after, .. } => before.abs().max(after.abs()),
            ScalarSignal::Sine { amplitude, .. } => amplitude.abs(),
            ScalarSignal::Table(points) => points.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max),
            ScalarSignal::Counterexample(ce) => ce.force_sup_norm(),
        }
    }
}

fn interpolate(points: &[(f64, f64)], t: f64) -> f64 {
    let idx = points.partition_point(|(tp, _)| *tp <= t);
    if idx == 0 {
        return points[0].1;
    }
    if idx == points.len() {
        return points[points.len() - 1].1;
    }
    let (t0, v0) = points[idx - 1];
    let (t1, v1) = points[idx];
    if t1 == t0 {
        return v1;
    }
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}

#[derive(Clone, Debug)]
pub enum BuiltinForce {
    Zero,
    ConstantGravity { g: Point },
    /// `F_i = -k sum_j (|x_i - x_j| - rest) (x_i - x_j)/|x_i - x_j|`.
    PairwiseSpring { stiffness: f64, rest_length: f64 },
    /// `F_i = s sum_j (1 - |y|^2/c^2)^2 y` for `y = x_i - x_j`, `|y| < c`.
    PairwiseRepulsion { strength: f64, cutoff: f64 },
    /// `f(t)` times a fixed direction, for every particle.
    TimeScalar { signal: ScalarSignal, direction: Point },
}

#[derive(Clone, Debug)]
pub struct ForceField {
    n_particles: usize,
    dim: usize,
    kind: BuiltinForce,
    horizon: Option<(f64, f64)>,
    sample_box: (f64, f64),
}

impl ForceField {
    pub fn new(n_particles: usize, dim: usize, kind: BuiltinForce) -> Result<Self> {
        if n_particles == 0 || dim == 0 {
            return Err(Error::Input("force field needs n >= 1 and m >= 1".into()));
        }
        match &kind {
            BuiltinForce::ConstantGravity { g } if g.len() != dim => {
                return Err(Error::Input("gravity vector has wrong dimension".into()))
            }
            BuiltinForce::TimeScalar { direction, .. } if direction.len() != dim => {
                return Err(Error::Input("signal direction has wrong dimension".into()))
            }
            BuiltinForce::PairwiseRepulsion { cutoff, .. } if !(*cutoff > 0.0) => {
                return Err(Error::Input("repulsion cutoff must be positive".into()))
            }
            _ => {}
        }
        Ok(Self {
            n_particles,
            dim,
            kind,
            horizon: None,
            sample_box: (-1.0, 1.0),
        })
    }

    /// Restricts evaluation to `t` in `[start, end]`.
    pub fn with_horizon(mut self, start: f64, end: f64) -> Self {
        self.horizon = Some((start, end));
        self
    }

    /// Coordinate range used by [`Self::estimate_lipschitz`].
    pub fn with_sample_box(mut self, lo: f64, hi: f64) -> Self {
        self.sample_box = (lo, hi);
        self
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &BuiltinForce {
        &self.kind
    }

    pub fn horizon(&self) -> Option<(f64, f64)> {
        self.horizon
    }

    pub fn eval_force(&self, t: f64, positions: &[Point]) -> Result<Vec<Point>> {
        if !t.is_finite() {
            return Err(Error::NonFinite("force time"));
        }
        if let Some((start, end)) = self.horizon {
            if t < start || t > end {
                return Err(Error::Horizon { t, start, end });
            }
        }
        if positions.len() != self.n_particles || positions.iter().any(|x| x.len() != self.dim) {
            return Err(Error::Input(format!(
                "configuration must hold {} points of dimension {}",
                self.n_particles, self.dim
            )));
        }
        if positions.iter().any(|x| !x.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("force configuration"));
        }
        let n = self.n_particles;
        let zero = || vec![Point::zeros(self.dim); n];
        Ok(match &self.kind {
            BuiltinForce::Zero => zero(),
            BuiltinForce::ConstantGravity { g } => vec![g.clone(); n],
            BuiltinForce::PairwiseSpring { stiffness, rest_length } => {
                let mut out = zero();
                for i in 0..n {
                    for j in (i + 1)..n {
                        let y = &positions[i] - &positions[j];
                        let r = y.norm();
                        let f = if *rest_length == 0.0 {
                            y * (-stiffness)
                        } else if r > 0.0 {
                            y * (-stiffness * (r - rest_length) / r)
                        } else {
                            Point::zeros(self.dim)
                        };
                        out[i] += &f;
                        out[j] -= &f;
                    }
                }
                out
            }
            BuiltinForce::PairwiseRepulsion { strength, cutoff } => {
                let mut out = zero();
                for i in 0..n {
                    for j in (i + 1)..n {
                        let y = &positions[i] - &positions[j];
                        let u = y.norm_squared() / (cutoff * cutoff);
                        if u < 1.0 {
                            let f = y * (strength * (1.0 - u).powi(2));
                            out[i] += &f;
                            out[j] -= &f;
                        }
                    }
                }
                out
            }
            BuiltinForce::TimeScalar { signal, direction } => vec![direction * signal.value(t)?; n],
        })
    }

    /// Declared Lipschitz constant in `X`, when the field is Lipschitz.
    pub fn lipschitz_constant(&self) -> Option<f64> {
        let pairs = (self.n_particles - 1) as f64;
        match &self.kind {
            BuiltinForce::Zero | BuiltinForce::ConstantGravity { .. } | BuiltinForce::TimeScalar { .. } => Some(0.0),
            BuiltinForce::PairwiseSpring { stiffness, rest_length } => {
                (*rest_length == 0.0).then(|| 2.0 * pairs * stiffness.abs())
            }
            // the Jacobian of (1 - |y|^2/c^2)^2 y has spectral norm <= 1
            BuiltinForce::PairwiseRepulsion { strength, .. } => Some(2.0 * pairs * strength.abs()),
        }
    }

    /// Bound on `max_i |F_i|` over the sampling box and horizon.
    pub fn sup_norm_bound(&self) -> Option<f64> {
        let pairs = (self.n_particles - 1) as f64;
        match &self.kind {
            BuiltinForce::Zero => Some(0.0),
            BuiltinForce::ConstantGravity { g } => Some(g.norm()),
            BuiltinForce::PairwiseSpring { stiffness, rest_length } => {
                let (lo, hi) = self.sample_box;
                let span = (hi - lo) * (self.dim as f64).sqrt();
                Some(pairs * stiffness.abs() * (span + rest_length.abs()))
            }
            BuiltinForce::PairwiseRepulsion { strength, cutoff } => {
                Some(pairs * strength.abs() * cutoff * 16.0 / (25.0 * 5f64.sqrt()))
            }
            BuiltinForce::TimeScalar { signal, direction } => Some(signal.sup_norm() * direction.norm()),
        }
    }

    /// Largest sampled difference quotient `max_i |F_i(t,X) - F_i(t,Y)| / ||X - Y||`;
    /// a lower bound on the true constant. Half the pairs are independent
    /// uniform draws, half are close pairs probing local slopes.
    pub fn estimate_lipschitz(&self, n_samples: usize, rng_seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let (lo, hi) = self.sample_box;
        let (t0, t1) = self.horizon.unwrap_or((0.0, 1.0));
        let draw = |rng: &mut ChaCha8Rng| -> Vec<Point> {
            (0..self.n_particles)
                .map(|_| Point::from_iterator(self.dim, (0..self.dim).map(|_| rng.gen_range(lo..hi))))
                .collect()
        };
        let mut best = 0.0_f64;
        for s in 0..n_samples.max(2) {
            let t = if t1 > t0 { rng.gen_range(t0..=t1) } else { t0 };
            let x = draw(&mut rng);
            let y: Vec<Point> = if s % 2 == 0 {
                draw(&mut rng)
            } else {
                let delta = 1e-4 * (hi - lo);
                x.iter()
                    .map(|xi| xi + Point::from_iterator(self.dim, (0..self.dim).map(|_| rng.gen_range(-delta..delta))))
                    .collect()
            };
            let dist = x.iter().zip(&y).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            if dist == 0.0 {
                continue;
            }
            let fx = self.eval_force(t, &x)?;
            let fy = self.eval_force(t, &y)?;
            let df = fx.iter().zip(&fy).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            best = best.max(df / dist);
        }
        Ok(best)
    }
}
