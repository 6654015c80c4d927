//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reflectsim::analysis::{
    bump_family, compare_trajectories, extract_measure, extract_measure_penalty, first_grazing_time, weak_form_residual,
    CompareNorm,
};
use reflectsim::counterexample::{
    verify_counterexample, Counterexample, CHECK_ENERGY_NONZERO, CHECK_ENERGY_ZERO, CHECK_FORCE_SMOOTHNESS,
    CHECK_INTEGRAL_CONDITION, CHECK_ODE_RESIDUAL, CHECK_REFLECTION, CHECK_WEAK_FORM_NONZERO, CHECK_WEAK_FORM_ZERO,
};
use reflectsim::exact::reflect;
use reflectsim::geometry::{validate_geometry, CHECK_EIKONAL, CHECK_PROJECTION_ANNIHILATION, CHECK_WEINGARTEN};
use reflectsim::io::{write_events_json, write_json, write_trajectory_csv};
use reflectsim::penalty::{convergence_sweep, simulate_penalty, PenaltyOptions};
use reflectsim::{
    simulate_exact, BuiltinForce, DomainGeometry, EventKind, ForceField, GrazePolicy, Point, ScalarSignal,
    SolverOptions, SystemState, Termination, Trajectory,
};

type Outcome = Result<String, String>;

fn p(v: &[f64]) -> Point {
    Point::from_column_slice(v)
}

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(elapsed: Duration, limit: f64) -> bool {
    elapsed.as_secs_f64() < limit
}

fn ball_drop() -> (DomainGeometry, ForceField, SystemState) {
    let dom = DomainGeometry::interval(0.0, 10.0).unwrap();
    let ff = ForceField::new(1, 1, BuiltinForce::ConstantGravity { g: p(&[-1.0]) }).unwrap();
    (dom, ff, SystemState::scalar(0.0, 1.0, 0.0))
}

fn c1_geometry() -> Outcome {
    let start = Instant::now();
    let domains = [
        DomainGeometry::ball(p(&[0.0, 0.0]), 1.0).unwrap(),
        DomainGeometry::ball(p(&[0.5, -1.0, 2.0]), 2.0).unwrap(),
        DomainGeometry::interval(-1.0, 3.0).unwrap(),
        DomainGeometry::annulus(p(&[0.0, 0.0]), 1.0, 2.0).unwrap(),
        DomainGeometry::ellipse(p(&[0.0, 0.0]), p(&[2.0, 1.0]), None).unwrap(),
    ];
    let mut worst = Vec::new();
    let mut ok = true;
    for dom in &domains {
        let tol = dom.tolerance();
        let rep = validate_geometry(dom, 10_000, 7);
        let w = [CHECK_EIKONAL, CHECK_WEINGARTEN, CHECK_PROJECTION_ANNIHILATION]
            .iter()
            .map(|c| rep.check(c).map_or(f64::INFINITY, |c| c.max_residual))
            .fold(0.0, f64::max);
        ok &= w <= tol;
        worst.push(format!("{}={w:.1e}/{tol:.0e}", dom.name()));
    }
    let el = start.elapsed();
    ensure(ok && within(el, 1.0), format!("{} in {:.2}s", worst.join(" "), el.as_secs_f64()))
}

fn c2_reflection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut speed, mut tangent, mut involution) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..100_000 {
        let m = rng.gen_range(1..=3);
        let v = Point::from_fn(m, |_, _| rng.gen_range(-10.0..10.0));
        let mut nu = Point::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        if nu.norm() < 1e-3 {
            continue;
        }
        nu /= nu.norm();
        let w = reflect(&v, &nu).unwrap();
        let back = reflect(&w, &nu).unwrap();
        speed = speed.max((w.norm() - v.norm()).abs());
        let tv = &v - &nu * nu.dot(&v);
        let tw = &w - &nu * nu.dot(&w);
        tangent = tangent.max((tv - tw).norm());
        involution = involution.max((back - &v).norm());
    }
    ensure(
        speed <= 1e-12 && tangent <= 1e-12 && involution <= 1e-12,
        format!("speed {speed:.1e}, tangent {tangent:.1e}, involution {involution:.1e}"),
    )
}

fn c3_bouncing_ball() -> Outcome {
    let start = Instant::now();
    let (dom, ff, init) = ball_drop();
    let s2 = 2f64.sqrt();
    let traj = simulate_exact(&dom, &ff, &init, 20.0 * s2, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let bounces: Vec<_> = traj.bounces().collect();
    let timing = bounces
        .iter()
        .enumerate()
        .map(|(j, e)| (e.t_event - s2 * (2 * j + 1) as f64).abs())
        .fold(0.0, f64::max);
    let drift = traj
        .samples
        .iter()
        .map(|s| (0.5 * s.velocities[0][0].powi(2) + s.positions[0][0] - 1.0).abs())
        .fold(0.0, f64::max);
    let el = start.elapsed();
    ensure(
        bounces.len() == 10 && timing <= 1e-8 && drift <= 1e-8 && within(el, 1.0),
        format!(
            "{} bounces, time error {timing:.1e}, energy drift {drift:.1e}, {:.3}s",
            bounces.len(),
            el.as_secs_f64()
        ),
    )
}

fn ball_sweep() -> (Trajectory, reflectsim::penalty::SweepReport) {
    let (dom, ff, init) = ball_drop();
    let exact = simulate_exact(&dom, &ff, &init, 3.0, &SolverOptions::default()).unwrap();
    let ks = [1e2, 1e3, 1e4, 1e5, 1e6];
    let rep = convergence_sweep(&dom, &ff, &init, 3.0, &ks, &exact, &PenaltyOptions::default()).unwrap();
    (exact, rep)
}

fn c4_penetration_rate() -> Outcome {
    let start = Instant::now();
    let (_, rep) = ball_sweep();
    let el = start.elapsed();
    let slope = rep.penetration_slope.unwrap_or(f64::NAN);
    ensure(
        rep.rows.iter().all(|r| r.valid) && (-0.55..=-0.45).contains(&slope) && within(el, 30.0),
        format!("slope {slope:.4} over k = 1e2..1e6 in {:.2}s", el.as_secs_f64()),
    )
}

fn c5_excursion_duration() -> Outcome {
    let dom = DomainGeometry::interval(0.0, 10.0).unwrap();
    let ff = ForceField::new(1, 1, BuiltinForce::Zero).unwrap();
    let init = SystemState::scalar(0.0, 0.5, -1.0);
    let mut parts = Vec::new();
    let mut ok = true;
    for k in [1e4, 1e6] {
        let run = simulate_penalty(&dom, &ff, &init, 1.0, k, &PenaltyOptions::default()).map_err(|e| e.to_string())?;
        let e = run.excursions[0].first().ok_or("no excursion")?;
        let rel = (e.duration() - PI / k.sqrt()).abs() / (PI / k.sqrt());
        ok &= e.exit_speed.is_some() && rel <= 1e-3;
        parts.push(format!("k={k:.0e} rel {rel:.1e}"));
    }
    ensure(ok, parts.join(", "))
}

fn c6_measure_concentration() -> Outcome {
    let (dom, ff, init) = ball_drop();
    let run = simulate_penalty(&dom, &ff, &init, 3.0, 1e6, &PenaltyOptions::default()).map_err(|e| e.to_string())?;
    let s2 = 2f64.sqrt();
    let mass = extract_measure_penalty(&run, 0, (s2 - 0.1, s2 + 0.1)).map_err(|e| e.to_string())?;
    let err = (mass - 2.0 * s2).abs();
    ensure(err <= 1e-2, format!("window mass {mass:.6} vs {:.6}, error {err:.1e}", 2.0 * s2))
}

fn c7_convergence() -> Outcome {
    let (_, rep) = ball_sweep();
    let first = rep.rows.first().unwrap().sup_gap;
    let last = rep.rows.last().unwrap().sup_gap;
    let flag = if rep.monotone_sup_gap { "monotone" } else { "NOT monotone (flagged)" };
    ensure(
        last <= 1e-2 && last < first,
        format!("sup gap {first:.2e} at k=1e2 -> {last:.2e} at k=1e6, {flag}"),
    )
}

fn c8_weak_form() -> Outcome {
    let (dom, ff, init) = ball_drop();
    let traj = simulate_exact(&dom, &ff, &init, 30.0, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let m = extract_measure(&traj).map_err(|e| e.to_string())?;
    let fam = bump_family(&traj, 20);
    let r = weak_form_residual(&traj, &m, &ff, &fam).map_err(|e| e.to_string())?.max_residual;
    let z = weak_form_residual(&traj, &m.zeroed(), &ff, &fam).map_err(|e| e.to_string())?.max_residual;
    ensure(
        fam.len() == 20 && r <= 1e-6 && z >= 1e-2,
        format!("{} test functions, residual {r:.1e}, zeroed-measure control {z:.2e}", fam.len()),
    )
}

fn c9_billiard() -> Outcome {
    let dom = DomainGeometry::ball(p(&[0.0, 0.0]), 1.0).unwrap();
    let ff = ForceField::new(1, 2, BuiltinForce::Zero).unwrap();
    let v0 = p(&[0.8, 0.6]);
    let init = SystemState::new(0.0, vec![p(&[0.3, -0.1])], vec![v0]).unwrap();
    let traj = simulate_exact(&dom, &ff, &init, 40.0, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let bounces: Vec<_> = traj.bounces().take(20).collect();
    let speed = traj
        .samples
        .iter()
        .filter(|s| s.t <= bounces.last().map_or(0.0, |e| e.t_event))
        .map(|s| (s.velocities[0].norm() - 1.0).abs())
        .fold(0.0, f64::max);
    let angle = bounces
        .iter()
        .map(|e| {
            let inc = (e.v_minus.dot(&e.normal) / e.v_minus.norm()).clamp(-1.0, 1.0).acos();
            let refl = (-e.v_plus.dot(&e.normal) / e.v_plus.norm()).clamp(-1.0, 1.0).acos();
            (inc - refl).abs()
        })
        .fold(0.0, f64::max);
    ensure(
        bounces.len() == 20 && speed <= 1e-10 && angle <= 1e-8,
        format!("{} bounces, speed drift {speed:.1e}, angle mismatch {angle:.1e}", bounces.len()),
    )
}

fn sliding_run() -> (Trajectory, SolverOptions) {
    let dom = DomainGeometry::interval(0.0, 10.0).unwrap();
    let signal = ScalarSignal::Step {
        t_switch: 1.0,
        before: -1.0,
        after: 1.0,
    };
    let ff = ForceField::new(
        1,
        1,
        BuiltinForce::TimeScalar {
            signal,
            direction: p(&[1.0]),
        },
    )
    .unwrap();
    let opts = SolverOptions {
        graze_policy: GrazePolicy::Stick,
        sample_dt: Some(0.01),
        ..SolverOptions::default()
    };
    let traj = simulate_exact(&dom, &ff, &SystemState::scalar(0.0, 0.0, 0.0), 2.0, &opts).unwrap();
    (traj, opts)
}

fn c10_sliding() -> Outcome {
    let (traj, opts) = sliding_run();
    let pos = traj
        .samples
        .iter()
        .filter(|s| s.t <= 1.0)
        .map(|s| s.positions[0][0].abs())
        .fold(0.0, f64::max);
    let m = extract_measure(&traj).map_err(|e| e.to_string())?;
    let dens = m.particles[0]
        .density
        .iter()
        .filter(|d| d.t < 1.0)
        .map(|d| (d.value - 1.0).abs())
        .fold(0.0, f64::max);
    let detach = traj
        .events
        .iter()
        .find(|e| e.kind == EventKind::SlideEnd)
        .map_or(f64::NAN, |e| e.t_event);
    let lag = (detach - 1.0).abs();
    ensure(
        pos <= 1e-10 && dens <= 1e-8 && m.particles[0].atoms.is_empty() && lag <= opts.time_tol,
        format!("wall offset {pos:.1e}, density error {dens:.1e}, detachment at {detach:.12} (lag {lag:.1e})"),
    )
}

fn c11_counterexample() -> Outcome {
    let start = Instant::now();
    let ce = Counterexample::default_construction().map_err(|e| e.to_string())?;
    let rep = verify_counterexample(&ce, 10).map_err(|e| e.to_string())?;
    let el = start.elapsed();
    let names = [
        CHECK_ODE_RESIDUAL,
        CHECK_REFLECTION,
        CHECK_INTEGRAL_CONDITION,
        CHECK_FORCE_SMOOTHNESS,
        CHECK_WEAK_FORM_ZERO,
        CHECK_WEAK_FORM_NONZERO,
        CHECK_ENERGY_ZERO,
        CHECK_ENERGY_NONZERO,
    ];
    let mut ok = rep.pass && within(el, 5.0);
    let mut parts = Vec::new();
    for name in names {
        match rep.check(name) {
            Some(c) => {
                ok &= c.pass;
                parts.push(format!("{name} {:.1e}", c.value));
            }
            None => {
                ok = false;
                parts.push(format!("{name} missing"));
            }
        }
    }
    ensure(
        ok && rep.v1_minus_v0 > 0.0,
        format!("v1-v0 {:.3e}; {}; {:.2}s", rep.v1_minus_v0, parts.join(", "), el.as_secs_f64()),
    )
}

fn landing_run(policy: GrazePolicy) -> Trajectory {
    // x(t) = 0.5 - t + t^2 / 2 reaches the wall at t = 1 with zero velocity
    let dom = DomainGeometry::interval(0.0, 10.0).unwrap();
    let ff = ForceField::new(1, 1, BuiltinForce::ConstantGravity { g: p(&[1.0]) }).unwrap();
    let opts = SolverOptions {
        graze_policy: policy,
        ..SolverOptions::default()
    };
    simulate_exact(&dom, &ff, &SystemState::scalar(0.0, 0.5, -1.0), 3.0, &opts).unwrap()
}

fn c12_grazing_horizon() -> Outcome {
    let traj = landing_run(GrazePolicy::Stop);
    let t0 = first_grazing_time(&traj).unwrap_or(f64::NAN);
    let err = (t0 - 1.0).abs();
    let stopped = matches!(traj.termination, Termination::GrazeStop { t } if t == t0)
        && traj.end_time == t0
        && traj.samples.last().map(|s| s.t) == Some(t0);
    ensure(
        err <= 1e-6 && stopped,
        format!("T0 = {t0:.12} (error {err:.1e}), run stopped there: {stopped}"),
    )
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn write_artifacts(dir: &Path) -> reflectsim::Result<()> {
    let (dom, ff, init) = ball_drop();
    let s2 = 2f64.sqrt();
    let ball = simulate_exact(&dom, &ff, &init, 20.0 * s2, &SolverOptions::default())?;
    write_trajectory_csv(&ball, &dir.join("ball.csv"))?;
    write_events_json(&ball.events, &dir.join("ball_events.json"))?;
    let (_, sweep) = ball_sweep();
    sweep.write_csv(&dir.join("sweep.csv"))?;
    write_json(&sweep, &dir.join("sweep.json"))?;
    let run = simulate_penalty(&dom, &ff, &init, 3.0, 1e6, &PenaltyOptions::default())?;
    write_trajectory_csv(&run.trajectory, &dir.join("penalty.csv"))?;
    write_json(&run.excursions, &dir.join("excursions.json"))?;
    let m = extract_measure(&ball)?;
    let fam = bump_family(&ball, 20);
    write_json(&weak_form_residual(&ball, &m, &ff, &fam)?, &dir.join("weak.json"))?;
    let (slide, _) = sliding_run();
    write_trajectory_csv(&slide, &dir.join("slide.csv"))?;
    write_json(&extract_measure(&slide)?, &dir.join("slide_measure.json"))?;
    let landing = landing_run(GrazePolicy::Stop);
    write_json(&landing, &dir.join("landing.json"))?;
    let ce = Counterexample::default_construction()?;
    write_json(&verify_counterexample(&ce, 10)?, &dir.join("certificate.json"))?;
    ce.write_csv(&dir.join("counterexample.csv"), 2000)?;
    let geo = validate_geometry(&DomainGeometry::ellipse(p(&[0.0, 0.0]), p(&[2.0, 1.0]), None)?, 1000, 7);
    write_json(&geo, &dir.join("geometry.json"))?;
    let exact3 = simulate_exact(&dom, &ff, &init, 3.0, &SolverOptions::default())?;
    let gap = compare_trajectories(&run.trajectory, &exact3, CompareNorm::SupPos)?;
    write_json(&gap, &dir.join("gap.json"))?;
    Ok(())
}

fn c13_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_artifacts(a.path()).map_err(|e| e.to_string())?;
    write_artifacts(b.path()).map_err(|e| e.to_string())?;
    let (fa, fb) = (read_dir_bytes(a.path()), read_dir_bytes(b.path()));
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    ensure(
        fa.len() == fb.len() && differing.is_empty(),
        format!("{} artifacts compared, differing: {:?}", fa.len(), differing),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("geometry identities", c1_geometry),
        ("reflection invariants", c2_reflection),
        ("bouncing ball", c3_bouncing_ball),
        ("penalty penetration rate", c4_penetration_rate),
        ("excursion duration", c5_excursion_duration),
        ("measure concentration", c6_measure_concentration),
        ("penalty to exact convergence", c7_convergence),
        ("weak-form residual", c8_weak_form),
        ("disk billiard", c9_billiard),
        ("sliding mode", c10_sliding),
        ("counterexample certificate", c11_counterexample),
        ("grazing horizon", c12_grazing_horizon),
        ("determinism", c13_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(msg) => println!("criterion {:>2} PASS  {name}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {msg}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
