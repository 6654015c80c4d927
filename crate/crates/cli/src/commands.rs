use std::path::{Path, PathBuf};
use std::sync::Arc;

use reflectsim::analysis::{
    bump_family, compare_trajectories, energy_report, extract_measure, first_grazing_time, speed_continuity_audit,
    weak_form_residual,
};
use reflectsim::counterexample::{default_bump, verify_counterexample, AuxiliaryBounce, Counterexample};
use reflectsim::geometry::validate_geometry;
use reflectsim::io::{read_trajectory_csv, write_energy_csv, write_events_json, write_json, write_trajectory_csv, write_weak_form_csv};
use reflectsim::penalty::{convergence_sweep, Excursion};
use reflectsim::trajectory::TrajectoryKind;
use reflectsim::{simulate_exact, simulate_penalty, CompareNorm, Termination, Trajectory};
use serde::Serialize;

use crate::config::{self, Scenario, SolverChoice};
use crate::summary::{Failure, Summary};

pub struct Options {
    pub seed: Option<u64>,
    /// `--out` was given and wins over `[output] dir`.
    pub out_override: bool,
}

fn load(path: &Path, opts: &Options, out: &mut PathBuf) -> Result<Scenario, Failure> {
    let cfg = config::read_config(path)?;
    if !opts.out_override {
        *out = cfg.output.dir.clone();
    }
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(config::build(cfg, base)?)
}

fn prepare(out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(|e| Failure::Runtime(e.into()))
}

#[derive(Serialize)]
struct Admissibility {
    particle: usize,
    /// `None` outside the bounding box or where `d_s` is undefined.
    signed_distance: Option<f64>,
    pass: bool,
}

fn admissibility(sc: &Scenario) -> Vec<Admissibility> {
    let tol = sc.config.solver.pos_tol;
    sc.initial
        .positions
        .iter()
        .enumerate()
        .map(|(particle, x)| {
            Admissibility {
                particle,
                signed_distance: sc.domain.signed_distance(x).ok(),
                pass: sc.domain.contains_closure(x, tol),
            }
        })
        .collect()
}

fn offending(adm: &[Admissibility]) -> Vec<usize> {
    adm.iter().filter(|a| !a.pass).map(|a| a.particle).collect()
}

#[derive(Serialize)]
struct PenaltySummary<'a> {
    k: f64,
    max_penetration: f64,
    rho_mass: Vec<f64>,
    excursions: &'a [Vec<Excursion>],
}

#[derive(Serialize)]
struct Comparison<'a> {
    norm: &'a str,
    gap: f64,
}

fn norm_name(norm: CompareNorm) -> &'static str {
    match norm {
        CompareNorm::SupPos => "sup_pos",
        CompareNorm::L1Vel => "l1_vel",
    }
}

pub fn simulate(path: &Path, opts: &Options, out: &mut PathBuf, summary: &mut Summary) -> Result<(), Failure> {
    let sc = load(path, opts, out)?;
    let bad = offending(&admissibility(&sc));
    if !bad.is_empty() {
        return Err(Failure::Usage(format!("initial positions outside the domain for particles {bad:?}")));
    }
    prepare(out)?;
    let cfg = &sc.config;
    let a = &cfg.analysis;
    let t_end = cfg.run.t_end;

    let mut exact: Option<Trajectory> = None;
    if matches!(cfg.run.solver, SolverChoice::Exact | SolverChoice::Both) {
        let traj = simulate_exact(&sc.domain, &sc.force, &sc.initial, t_end, &cfg.solver)?;
        write_trajectory_csv(&traj, &out.join("trajectory.csv"))?;
        summary.artifact("trajectory.csv");
        write_events_json(&traj.events, &out.join("events.json"))?;
        summary.artifact("events.json");
        summary.detail("termination", &traj.termination);
        summary.detail("end_time", traj.end_time);
        summary.detail("events", traj.events.len());
        summary.detail("first_grazing_time", first_grazing_time(&traj));
        let finished = matches!(traj.termination, Termination::Horizon | Termination::GrazeStop { .. });
        summary.check("termination", traj.end_time, None, None, finished);

        let windows: Vec<(f64, f64)> = if a.energy_windows.is_empty() {
            vec![(sc.initial.t, traj.last_time())]
        } else {
            a.energy_windows.iter().map(|w| (w[0], w[1])).collect()
        };
        let energy = energy_report(&traj, &sc.force, &windows)?;
        write_json(&energy, &out.join("energy.json"))?;
        write_energy_csv(&energy, &out.join("energy.csv"))?;
        summary.artifact("energy.json");
        summary.artifact("energy.csv");
        summary.check_le("energy_residual", energy.max_abs_residual, a.energy_tol);

        if a.measure || a.weak_form {
            let measure = extract_measure(&traj)?;
            if a.measure {
                write_json(&measure, &out.join("measure.json"))?;
                summary.artifact("measure.json");
                summary.detail("measure_mass", measure.total_mass());
            }
            if a.weak_form {
                let test_fns = bump_family(&traj, a.test_functions);
                let report = weak_form_residual(&traj, &measure, &sc.force, &test_fns)?;
                write_json(&report, &out.join("weak_form.json"))?;
                write_weak_form_csv(&report, &out.join("weak_form.csv"))?;
                summary.artifact("weak_form.json");
                summary.artifact("weak_form.csv");
                summary.check_le("weak_form_residual", report.max_residual, a.weak_form_tol);
            }
        }
        if let Some(tol) = a.speed_tol {
            let audit = speed_continuity_audit(&traj, tol);
            summary.check_le("speed_jump", audit.max_jump, tol);
        }
        exact = Some(traj);
    }

    if matches!(cfg.run.solver, SolverChoice::Penalty | SolverChoice::Both) {
        let k = cfg.run.k.ok_or_else(|| Failure::Usage("run.k is required for the penalty solver".into()))?;
        let run = simulate_penalty(&sc.domain, &sc.force, &sc.initial, t_end, k, &cfg.penalty)?;
        write_trajectory_csv(&run.trajectory, &out.join("penalty_trajectory.csv"))?;
        summary.artifact("penalty_trajectory.csv");
        let report = PenaltySummary {
            k,
            max_penetration: run.max_penetration,
            rho_mass: (0..run.trajectory.n).map(|i| run.rho_mass(i)).collect(),
            excursions: &run.excursions,
        };
        write_json(&report, &out.join("penalty.json"))?;
        summary.artifact("penalty.json");
        summary.detail("k", k);
        summary.detail("max_penetration", run.max_penetration);
        if let (Some(traj), Some(norm)) = (&exact, sc.compare) {
            let gap = compare_trajectories(traj, &run.trajectory, norm)?;
            write_json(
                &Comparison {
                    norm: norm_name(norm),
                    gap,
                },
                &out.join("comparison.json"),
            )?;
            summary.artifact("comparison.json");
            summary.detail("gap", gap);
            if let Some(tol) = a.compare_tol {
                summary.check_le("trajectory_gap", gap, tol);
            }
        }
    }
    Ok(())
}

pub fn penalty_sweep(path: &Path, opts: &Options, out: &mut PathBuf, summary: &mut Summary) -> Result<(), Failure> {
    let sc = load(path, opts, out)?;
    let bad = offending(&admissibility(&sc));
    if !bad.is_empty() {
        return Err(Failure::Usage(format!("initial positions outside the domain for particles {bad:?}")));
    }
    let cfg = &sc.config;
    let ks = cfg
        .run
        .ks
        .clone()
        .ok_or_else(|| Failure::Usage("penalty-sweep requires run.ks".into()))?;
    prepare(out)?;
    let t_end = cfg.run.t_end;
    let reference = simulate_exact(&sc.domain, &sc.force, &sc.initial, t_end, &cfg.solver)?;
    write_trajectory_csv(&reference, &out.join("trajectory.csv"))?;
    summary.artifact("trajectory.csv");
    let report = convergence_sweep(&sc.domain, &sc.force, &sc.initial, t_end, &ks, &reference, &cfg.penalty)?;
    report.write_csv(&out.join("sweep.csv"))?;
    write_json(&report, &out.join("sweep.json"))?;
    summary.artifact("sweep.csv");
    summary.artifact("sweep.json");
    summary.detail("penetration_slope", report.penetration_slope);
    summary.detail("sup_gap_slope", report.sup_gap_slope);
    summary.detail("monotone_sup_gap", report.monotone_sup_gap);

    let invalid = report.rows.iter().filter(|r| !r.valid).count();
    summary.check("invalid_runs", invalid as f64, None, Some(0.0), invalid == 0);
    if let Some([lo, hi]) = cfg.analysis.penetration_slope {
        let s = report.penetration_slope.unwrap_or(f64::NAN);
        summary.check("penetration_slope", s, Some(lo), Some(hi), s >= lo && s <= hi);
    }
    if cfg.analysis.require_monotone {
        let last = report.rows.iter().rev().find(|r| r.valid).map_or(f64::NAN, |r| r.sup_gap);
        summary.check("monotone_sup_gap", last, None, None, report.monotone_sup_gap);
    }
    Ok(())
}

pub fn counterexample(l: u32, n_max: usize, samples: usize, out: &Path, summary: &mut Summary) -> Result<(), Failure> {
    if l == 0 {
        return Err(Failure::Usage("--L must be at least 1".into()));
    }
    prepare(out)?;
    let aux = AuxiliaryBounce::new(Arc::new(default_bump))?;
    let ce = Counterexample::new(Arc::new(aux), l)?;
    let report = verify_counterexample(&ce, n_max)?;
    write_json(&report, &out.join("certificate.json"))?;
    summary.artifact("certificate.json");
    ce.write_csv(&out.join("counterexample.csv"), samples)?;
    summary.artifact("counterexample.csv");
    let p = ce.params();
    summary.detail("L", l);
    summary.detail("a", p.a);
    summary.detail("b", p.b);
    summary.detail("t_mid", p.t_mid);
    summary.detail("n_max", n_max);
    for c in &report.checks {
        summary.check(&c.name, c.value, None, Some(c.tolerance), c.pass);
    }
    Ok(())
}

#[derive(Serialize)]
struct LipschitzReport {
    declared: Option<f64>,
    estimate: f64,
    samples: usize,
    seed: u64,
}

#[derive(Serialize)]
struct Validation<'a> {
    geometry: &'a reflectsim::geometry::GeometryReport,
    lipschitz: LipschitzReport,
    initial: Vec<Admissibility>,
    offending_particles: Vec<usize>,
}

pub fn validate(path: &Path, opts: &Options, out: &mut PathBuf, summary: &mut Summary) -> Result<(), Failure> {
    let sc = load(path, opts, out)?;
    prepare(out)?;
    let cfg = &sc.config;
    let seed = opts.seed.unwrap_or(cfg.validate.seed);

    let geometry = validate_geometry(&sc.domain, cfg.validate.samples, seed);
    for c in &geometry.checks {
        summary.check(&format!("geometry.{}", c.check_name), c.max_residual, None, Some(c.tolerance), c.pass);
    }

    let ff = sc.force.clone().with_horizon(sc.initial.t, cfg.run.t_end);
    let declared = ff.lipschitz_constant();
    let estimate = ff.estimate_lipschitz(cfg.validate.lipschitz_samples, seed)?;
    summary.detail("lipschitz_estimate", estimate);
    if let Some(l) = declared {
        let bound = l * (1.0 + 1e-9) + 1e-12;
        summary.check("lipschitz", estimate, None, Some(l), estimate <= bound);
    }

    let initial = admissibility(&sc);
    let bad = offending(&initial);
    summary.detail("offending_particles", &bad);
    summary.check("initial_admissible", bad.len() as f64, None, Some(0.0), bad.is_empty());

    let report = Validation {
        geometry: &geometry,
        lipschitz: LipschitzReport {
            declared,
            estimate,
            samples: cfg.validate.lipschitz_samples,
            seed,
        },
        initial,
        offending_particles: bad,
    };
    write_json(&report, &out.join("validation.json"))?;
    summary.artifact("validation.json");
    Ok(())
}

fn load_trajectory(path: &Path) -> Result<Trajectory, Failure> {
    let (n, dim, samples) =
        read_trajectory_csv(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return Err(Failure::Usage(format!("{} has no samples", path.display())));
    };
    let mut traj = Trajectory::new(n, dim, (first.t, last.t), TrajectoryKind::Exact);
    traj.end_time = last.t;
    traj.samples = samples;
    Ok(traj)
}

pub fn compare(
    a: &Path,
    b: &Path,
    norm: &str,
    tol: Option<f64>,
    out: &Path,
    summary: &mut Summary,
) -> Result<(), Failure> {
    let parsed: CompareNorm = norm.parse().map_err(|e: reflectsim::Error| Failure::Usage(e.to_string()))?;
    if let Some(t) = tol {
        if !(t > 0.0) {
            return Err(Failure::Usage(format!("--tol must be positive, got {t}")));
        }
    }
    let ta = load_trajectory(a)?;
    let tb = load_trajectory(b)?;
    prepare(out)?;
    let gap = compare_trajectories(&ta, &tb, parsed)?;
    write_json(
        &Comparison {
            norm: norm_name(parsed),
            gap,
        },
        &out.join("comparison.json"),
    )?;
    summary.artifact("comparison.json");
    summary.detail("gap", gap);
    if let Some(t) = tol {
        summary.check_le("trajectory_gap", gap, t);
    }
    Ok(())
}
