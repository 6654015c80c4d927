//! Scenario file schema (TOML) and conversion into solver objects.

use std::path::{Path, PathBuf};

use reflectsim::geometry::{ellipse_gradient, BoundingBox, ImplicitSurface};
use reflectsim::{
    BuiltinForce, CompareNorm, DomainGeometry, ForceField, PenaltyOptions, Point, ScalarSignal, SolverOptions,
    SystemState,
};
use serde::Deserialize;

/// Rejected config: unreadable, malformed or inconsistent. Maps to exit code 2.
#[derive(Debug)]
pub struct SchemaError(pub String);

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

type SchemaResult<T> = std::result::Result<T, SchemaError>;

fn schema<T>(msg: impl Into<String>) -> SchemaResult<T> {
    Err(SchemaError(msg.into()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub domain: DomainSpec,
    pub force: ForceSpec,
    pub initial: InitialSpec,
    pub run: RunSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub penalty: PenaltyOptions,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub validate: ValidateSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Interval {
        lo: f64,
        hi: f64,
        tolerance: Option<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
        tolerance: Option<f64>,
    },
    Annulus {
        center: Vec<f64>,
        r_in: f64,
        r_out: f64,
        tolerance: Option<f64>,
    },
    HalfSpace {
        normal: Vec<f64>,
        offset: f64,
        box_lo: Vec<f64>,
        box_hi: Vec<f64>,
        tolerance: Option<f64>,
    },
    /// Implicit-surface ellipse. `gradient_semi_axes` overrides the semi-axes
    /// used by the analytic gradient only.
    Ellipse {
        center: Vec<f64>,
        semi_axes: Vec<f64>,
        tube_radius: Option<f64>,
        gradient_semi_axes: Option<Vec<f64>>,
        fd_step: Option<f64>,
        tolerance: Option<f64>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForceSpec {
    Zero,
    Gravity {
        g: Vec<f64>,
    },
    Spring {
        stiffness: f64,
        rest_length: f64,
    },
    Repulsion {
        strength: f64,
        cutoff: f64,
    },
    Signal {
        direction: Vec<f64>,
        signal: SignalSpec,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Constant { value: f64 },
    Step { t_switch: f64, before: f64, after: f64 },
    Sine { amplitude: f64, omega: f64, phase: f64 },
    /// Two-column `t,value` CSV, relative to the config file.
    Table { path: PathBuf },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub t0: f64,
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    #[default]
    Exact,
    Penalty,
    Both,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub t_end: f64,
    #[serde(default)]
    pub solver: SolverChoice,
    pub k: Option<f64>,
    pub ks: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSpec {
    pub energy_windows: Vec<[f64; 2]>,
    pub energy_tol: f64,
    pub measure: bool,
    pub weak_form: bool,
    pub test_functions: usize,
    pub weak_form_tol: f64,
    pub speed_tol: Option<f64>,
    /// Exact-versus-penalty gap when `run.solver = "both"`.
    pub compare: Option<String>,
    pub compare_tol: Option<f64>,
    /// Admissible range for the sweep's penetration slope.
    pub penetration_slope: Option<[f64; 2]>,
    pub require_monotone: bool,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            energy_windows: Vec::new(),
            energy_tol: 1e-8,
            measure: false,
            weak_form: false,
            test_functions: 20,
            weak_form_tol: 1e-6,
            speed_tol: None,
            compare: None,
            compare_tol: None,
            penetration_slope: None,
            require_monotone: false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSpec {
    pub samples: usize,
    pub lipschitz_samples: usize,
    pub seed: u64,
}

impl Default for ValidateSpec {
    fn default() -> Self {
        Self {
            samples: 10_000,
            lipschitz_samples: 2_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("reflectsim-out"),
        }
    }
}

/// Parsed config plus the objects built from it.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub domain: DomainGeometry,
    pub force: ForceField,
    pub initial: SystemState,
    pub compare: Option<CompareNorm>,
}

pub fn read_config(path: &Path) -> SchemaResult<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| SchemaError(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| SchemaError(format!("{}: {e}", path.display())))
}


fn point(name: &str, v: &[f64]) -> SchemaResult<Point> {
    if v.is_empty() {
        return schema(format!("{name} must not be empty"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return schema(format!("{name} must be finite"));
    }
    Ok(Point::from_column_slice(v))
}

fn positive(name: &str, v: f64) -> SchemaResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        schema(format!("{name} must be positive, got {v}"))
    }
}

/// Builds the domain, force field and initial state; `base` resolves relative
/// paths inside the config.
pub fn build(config: ScenarioConfig, base: &Path) -> SchemaResult<Scenario> {
    let domain = build_domain(&config.domain)?;
    let m = domain.dim();
    let init = &config.initial;
    let n = init.positions.len();
    if n == 0 || init.velocities.len() != n {
        return schema("initial.positions and initial.velocities need the same non-zero length");
    }
    let mut positions = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    for (i, (x, v)) in init.positions.iter().zip(&init.velocities).enumerate() {
        if x.len() != m || v.len() != m {
            return schema(format!("particle {i}: expected {m} coordinates"));
        }
        positions.push(point("initial.positions", x)?);
        velocities.push(point("initial.velocities", v)?);
    }
    let initial = SystemState::new(init.t0, positions, velocities).map_err(|e| SchemaError(e.to_string()))?;

    let run = &config.run;
    if !(run.t_end > init.t0) || !run.t_end.is_finite() {
        return schema(format!("run.t_end = {} must exceed initial.t0 = {}", run.t_end, init.t0));
    }
    if let Some(k) = run.k {
        positive("run.k", k)?;
    }
    if let Some(ks) = &run.ks {
        for &k in ks {
            positive("run.ks entries", k)?;
        }
        if ks.windows(2).any(|w| !(w[1] > w[0])) {
            return schema("run.ks must be strictly ascending");
        }
    }
    if matches!(run.solver, SolverChoice::Penalty | SolverChoice::Both) && run.k.is_none() {
        return schema("run.k is required for the penalty solver");
    }

    let s = &config.solver;
    for (name, v) in [
        ("solver.rtol", s.rtol),
        ("solver.atol", s.atol),
        ("solver.pos_tol", s.pos_tol),
        ("solver.time_tol", s.time_tol),
    ] {
        positive(name, v)?;
    }
    for (name, v) in [
        ("solver.graze_tol", s.graze_tol),
        ("solver.sample_dt", s.sample_dt),
        ("solver.max_step", s.max_step),
        ("penalty.max_step", config.penalty.max_step),
        ("penalty.sample_dt", config.penalty.sample_dt),
    ] {
        if let Some(v) = v {
            positive(name, v)?;
        }
    }
    positive("penalty.rtol", config.penalty.rtol)?;
    positive("penalty.atol", config.penalty.atol)?;

    let a = &config.analysis;
    positive("analysis.energy_tol", a.energy_tol)?;
    positive("analysis.weak_form_tol", a.weak_form_tol)?;
    for (name, v) in [("analysis.speed_tol", a.speed_tol), ("analysis.compare_tol", a.compare_tol)] {
        if let Some(v) = v {
            positive(name, v)?;
        }
    }
    for w in &a.energy_windows {
        if !(w[0] < w[1]) {
            return schema(format!("energy window {w:?} must have s1 < s2"));
        }
    }
    if a.weak_form && a.test_functions == 0 {
        return schema("analysis.test_functions must be at least 1");
    }
    let compare = match &a.compare {
        Some(name) => Some(name.parse::<CompareNorm>().map_err(|e| SchemaError(e.to_string()))?),
        None => None,
    };

    let bbox = domain.bounding_box();
    let lo = bbox.lo.min();
    let hi = bbox.hi.max();
    let force = build_force(&config.force, n, m, base)?.with_sample_box(lo, hi);

    Ok(Scenario {
        config,
        domain,
        force,
        initial,
        compare,
    })
}

fn build_domain(spec: &DomainSpec) -> SchemaResult<DomainGeometry> {
    let wrap = |r: reflectsim::Result<DomainGeometry>| r.map_err(|e| SchemaError(format!("domain: {e}")));
    let (dom, tol) = match spec {
        DomainSpec::Interval { lo, hi, tolerance } => (wrap(DomainGeometry::interval(*lo, *hi))?, *tolerance),
        DomainSpec::Ball {
            center,
            radius,
            tolerance,
        } => (wrap(DomainGeometry::ball(point("domain.center", center)?, *radius))?, *tolerance),
        DomainSpec::Annulus {
            center,
            r_in,
            r_out,
            tolerance,
        } => (
            wrap(DomainGeometry::annulus(point("domain.center", center)?, *r_in, *r_out))?,
            *tolerance,
        ),
        DomainSpec::HalfSpace {
            normal,
            offset,
            box_lo,
            box_hi,
            tolerance,
        } => {
            let bbox = BoundingBox::new(point("domain.box_lo", box_lo)?, point("domain.box_hi", box_hi)?)
                .map_err(|e| SchemaError(format!("domain: {e}")))?;
            (
                wrap(DomainGeometry::half_space(point("domain.normal", normal)?, *offset, bbox))?,
                *tolerance,
            )
        }
        DomainSpec::Ellipse {
            center,
            semi_axes,
            tube_radius,
            gradient_semi_axes,
            fd_step,
            tolerance,
        } => {
            let c = point("domain.center", center)?;
            let s = point("domain.semi_axes", semi_axes)?;
            if c.len() != s.len() {
                return schema("domain.center and domain.semi_axes differ in length");
            }
            if s.iter().any(|a| !(*a > 0.0)) {
                return schema("domain.semi_axes must be positive");
            }
            let base = wrap(DomainGeometry::ellipse(c.clone(), s.clone(), *tube_radius))?;
            let dom = if gradient_semi_axes.is_some() || fd_step.is_some() {
                let mut surface = ImplicitSurface::ellipse(c.clone(), s);
                if let Some(g) = gradient_semi_axes {
                    let g = point("domain.gradient_semi_axes", g)?;
                    if g.len() != c.len() {
                        return schema("domain.gradient_semi_axes has the wrong length");
                    }
                    surface = surface.with_gradient(ellipse_gradient(c, g));
                }
                if let Some(h) = fd_step {
                    positive("domain.fd_step", *h)?;
                    surface = surface.with_fd_step(*h);
                }
                wrap(DomainGeometry::implicit(
                    surface,
                    base.bounding_box().clone(),
                    Some(base.tube_radius()),
                ))?
            } else {
                base
            };
            (dom, *tolerance)
        }
    };
    match tol {
        Some(t) => {
            positive("domain.tolerance", t)?;
            Ok(dom.with_tolerance(t))
        }
        None => Ok(dom),
    }
}

fn build_force(spec: &ForceSpec, n: usize, m: usize, base: &Path) -> SchemaResult<ForceField> {
    let kind = match spec {
        ForceSpec::Zero => BuiltinForce::Zero,
        ForceSpec::Gravity { g } => BuiltinForce::ConstantGravity { g: point("force.g", g)? },
        ForceSpec::Spring { stiffness, rest_length } => BuiltinForce::PairwiseSpring {
            stiffness: *stiffness,
            rest_length: *rest_length,
        },
        ForceSpec::Repulsion { strength, cutoff } => BuiltinForce::PairwiseRepulsion {
            strength: *strength,
            cutoff: *cutoff,
        },
        ForceSpec::Signal { direction, signal } => BuiltinForce::TimeScalar {
            signal: match signal {
                SignalSpec::Constant { value } => ScalarSignal::Constant(*value),
                SignalSpec::Step {
                    t_switch,
                    before,
                    after,
                } => ScalarSignal::Step {
                    t_switch: *t_switch,
                    before: *before,
                    after: *after,
                },
                SignalSpec::Sine { amplitude, omega, phase } => ScalarSignal::Sine {
                    amplitude: *amplitude,
                    omega: *omega,
                    phase: *phase,
                },
                SignalSpec::Table { path } => ScalarSignal::from_csv(&base.join(path))
                    .map_err(|e| SchemaError(format!("force.signal.path: {e}")))?,
            },
            direction: point("force.direction", direction)?,
        },
    };
    ForceField::new(n, m, kind).map_err(|e| SchemaError(format!("force: {e}")))
}
