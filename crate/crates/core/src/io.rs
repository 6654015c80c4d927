//! CSV and JSON artifacts. Floats are written with 17 significant digits so
//! identical runs produce identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::analysis::{EnergyReport, WeakFormReport};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::trajectory::{Event, Mode, Sample, Trajectory};

/// Fixed float formatting shared by every CSV writer.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trajectory_header(dim: usize) -> String {
    let mut cols = vec!["t".to_string(), "particle".to_string()];
    cols.extend((0..dim).map(|c| format!("x{c}")));
    cols.extend((0..dim).map(|c| format!("v{c}")));
    cols.push("mode".into());
    cols.join(",")
}

/// One row per sample and particle: `t,particle,x0..,v0..,mode`.
pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", trajectory_header(traj.dim))?;
    for s in &traj.samples {
        for i in 0..traj.n {
            let mut row = vec![fmt_f64(s.t), i.to_string()];
            row.extend(s.positions[i].iter().map(|v| fmt_f64(*v)));
            row.extend(s.velocities[i].iter().map(|v| fmt_f64(*v)));
            row.push(s.modes[i].as_str().into());
            writeln!(out, "{}", row.join(","))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads the samples written by [`write_trajectory_csv`] as
/// `(n, dim, samples)`; accelerations are not stored and come back empty.
pub fn read_trajectory_csv(path: &Path) -> Result<(usize, usize, Vec<Sample>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let width = headers.len();
    if width < 5 || (width - 3) % 2 != 0 || &headers[0] != "t" || &headers[1] != "particle" {
        return Err(Error::Input(format!("{} is not a trajectory CSV", path.display())));
    }
    let dim = (width - 3) / 2;
    let mut samples: Vec<Sample> = Vec::new();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            rec[j].trim().parse().map_err(|_| Error::Input(format!("bad number {:?}", &rec[j])))
        };
        let t = num(0)?;
        let particle: usize = rec[1].trim().parse().map_err(|_| Error::Input("bad particle index".into()))?;
        let x = Point::from_iterator(dim, (0..dim).map(|c| num(2 + c)).collect::<Result<Vec<_>>>()?);
        let v = Point::from_iterator(dim, (0..dim).map(|c| num(2 + dim + c)).collect::<Result<Vec<_>>>()?);
        let mode = match rec[2 + 2 * dim].trim() {
            "free" => Mode::Free,
            "sliding" => Mode::Sliding,
            other => return Err(Error::Input(format!("unknown mode {other:?}"))),
        };
        if particle == 0 {
            samples.push(Sample {
                t,
                positions: vec![],
                velocities: vec![],
                modes: vec![],
                accelerations: vec![],
            });
        }
        let s = samples
            .last_mut()
            .filter(|s| s.t == t && s.positions.len() == particle)
            .ok_or_else(|| Error::Input("trajectory rows out of order".into()))?;
        s.positions.push(x);
        s.velocities.push(v);
        s.modes.push(mode);
        n = n.max(particle + 1);
    }
    if samples.iter().any(|s| s.positions.len() != n) {
        return Err(Error::Input("samples with missing particles".into()));
    }
    Ok((n, dim, samples))
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn write_events_json(events: &[Event], path: &Path) -> Result<()> {
    write_json(events, path)
}

pub fn write_energy_csv(report: &EnergyReport, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "particle,s1,s2,kinetic_gap,work,residual")?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.particle,
            fmt_f64(r.s1),
            fmt_f64(r.s2),
            fmt_f64(r.kinetic_gap),
            fmt_f64(r.work),
            fmt_f64(r.residual)
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_weak_form_csv(report: &WeakFormReport, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "particle,test_function,velocity_term,force_term,measure_term,residual")?;
    for e in &report.entries {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.particle,
            e.test_function,
            fmt_f64(e.velocity_term),
            fmt_f64(e.force_term),
            fmt_f64(e.measure_term),
            fmt_f64(e.residual)
        )?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::TrajectoryKind;

    #[test]
    fn trajectory_csv_round_trip() {
        let mut traj = Trajectory::new(2, 2, (0.0, 1.0), TrajectoryKind::Exact);
        for (j, t) in [0.0, 0.5, 0.5, 1.0].into_iter().enumerate() {
            let f = j as f64;
            traj.samples.push(Sample {
                t,
                positions: vec![Point::from_vec(vec![0.1 * f, 1.0 / 3.0]), Point::from_vec(vec![-f, 2.0])],
                velocities: vec![Point::from_vec(vec![1e-300, -0.7]), Point::from_vec(vec![f, f])],
                modes: vec![Mode::Free, if j == 2 { Mode::Sliding } else { Mode::Free }],
                accelerations: vec![],
            });
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        write_trajectory_csv(&traj, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,particle,x0,x1,v0,v1,mode\n"));
        let (n, dim, samples) = read_trajectory_csv(&path).unwrap();
        assert_eq!((n, dim), (2, 2));
        assert_eq!(samples, traj.samples);
    }

    #[test]
    fn malformed_csv_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(read_trajectory_csv(&path).is_err());
        std::fs::write(&path, "t,particle,x0,v0,mode\n0,1,0,0,free\n").unwrap();
        assert!(read_trajectory_csv(&path).is_err());
    }
}
