use std::fmt::Write as _;

use super::{fmt_f64, IoError};
use crate::association::{Assignment, ObservationTable};
use crate::dynamics::{ControlSequence, LatentSequence, Trajectory};
use crate::evaluation::{Method, SweepRow};
use crate::solver::TraceEntry;
use crate::{Vec2, Vec3};

const DETECTIONS_HEADER: [&str; 5] = ["camera_id", "frame", "candidate_index", "px", "py"];
const TRAJECTORY_HEADER: [&str; 4] = ["frame", "x", "y", "z"];
const LATENT_HEADER: [&str; 4] = ["frame", "phi", "theta", "u"];
const CONTROLS_HEADER: [&str; 3] = ["frame", "u_phi", "u_theta"];
const ASSIGNMENT_HEADER: [&str; 3] = ["frame", "camera_id", "candidate_index"];
const SWEEP_HEADER: [&str; 6] = ["method", "sigma_px", "sigma_p", "sigma_o", "seed", "rmse"];

/// Parsed data rows with their 1-based line numbers.
fn records(text: &str, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>, IoError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let got = rdr.headers().map_err(|e| IoError::parse(1, e.to_string()))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(IoError::parse(
            1,
            format!("expected header `{}`, found `{}`", header.join(","), got.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            IoError::parse(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(IoError::parse(line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<T, IoError> {
    rec[i].parse().map_err(|_| IoError::parse(line, format!("invalid {name} `{}`", &rec[i])))
}

fn finite(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<f64, IoError> {
    let v: f64 = field(rec, i, name, line)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(IoError::parse(line, format!("{name} is not finite")))
    }
}

fn header_line(header: &[&str]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    s
}

/// Writes one row per candidate, sorted by camera, frame and index. Frames
/// are 1-based; `camera_ids[j]` labels column `j` of the table.
pub fn write_detections(obs: &ObservationTable, camera_ids: &[u32]) -> String {
    let mut s = header_line(&DETECTIONS_HEADER);
    for (j, id) in camera_ids.iter().enumerate().take(obs.n_cameras()) {
        for t in 0..obs.n_frames() {
            for (k, p) in obs.candidates(t, j).iter().enumerate() {
                let _ = writeln!(s, "{id},{},{k},{},{}", t + 1, fmt_f64(p.x), fmt_f64(p.y));
            }
        }
    }
    s
}

/// Reads detections for the given cameras. The frame count is `n_frames` if
/// given, otherwise the largest frame present.
pub fn read_detections(text: &str, camera_ids: &[u32], n_frames: Option<usize>) -> Result<ObservationTable, IoError> {
    let rows = records(text, &DETECTIONS_HEADER)?;
    let mut parsed = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let line = *line;
        let id: u32 = field(rec, 0, "camera_id", line)?;
        let j = camera_ids.iter().position(|c| *c == id).ok_or_else(|| IoError::parse(line, format!("unknown camera_id {id}")))?;
        let frame: usize = field(rec, 1, "frame", line)?;
        if frame == 0 {
            return Err(IoError::parse(line, "frames are numbered from 1"));
        }
        let k: usize = field(rec, 2, "candidate_index", line)?;
        let p = Vec2::new(finite(rec, 3, "px", line)?, finite(rec, 4, "py", line)?);
        parsed.push((line, j, frame - 1, k, p));
    }
    let n = n_frames.unwrap_or_else(|| parsed.iter().map(|r| r.2 + 1).max().unwrap_or(0));
    let mut obs = ObservationTable::new(n, camera_ids.len());
    let mut last: Option<(usize, usize)> = None;
    for (line, j, t, k, p) in parsed {
        if t >= n {
            return Err(IoError::parse(line, format!("frame {} beyond the {n} frames of the sequence", t + 1)));
        }
        if last.is_some_and(|prev| (j, t) < prev) {
            return Err(IoError::parse(line, "rows are not sorted by camera and frame"));
        }
        last = Some((j, t));
        let set = obs.candidates_mut(t, j);
        if k != set.len() {
            return Err(IoError::parse(line, format!("candidate_index {k} out of sequence, expected {}", set.len())));
        }
        set.push(p);
    }
    Ok(obs)
}

fn write_frames<const N: usize>(header: &[&str], n: usize, row: impl Fn(usize) -> [f64; N]) -> String {
    let mut s = header_line(header);
    for t in 0..n {
        let _ = write!(s, "{}", t + 1);
        for v in row(t) {
            let _ = write!(s, ",{}", fmt_f64(v));
        }
        s.push('\n');
    }
    s
}

fn read_frames<const N: usize>(text: &str, header: &[&str]) -> Result<Vec<[f64; N]>, IoError> {
    let rows = records(text, header)?;
    let mut out = Vec::with_capacity(rows.len());
    for (i, (line, rec)) in rows.iter().enumerate() {
        let frame: usize = field(rec, 0, "frame", *line)?;
        if frame != i + 1 {
            return Err(IoError::parse(*line, format!("expected frame {}, found {frame}", i + 1)));
        }
        let mut vals = [0.0; N];
        for (c, v) in vals.iter_mut().enumerate() {
            *v = finite(rec, c + 1, header[c + 1], *line)?;
        }
        out.push(vals);
    }
    Ok(out)
}

pub fn write_trajectory(x: &Trajectory) -> String {
    write_frames(&TRAJECTORY_HEADER, x.len(), |t| {
        let p = x.positions[t];
        [p.x, p.y, p.z]
    })
}

pub fn read_trajectory(text: &str, dt: f64) -> Result<Trajectory, IoError> {
    let rows = read_frames::<3>(text, &TRAJECTORY_HEADER)?;
    Trajectory::new(dt, rows.into_iter().map(Vec3::from).collect()).map_err(|e| IoError::Format(format!("trajectory: {e}")))
}

pub fn write_latent(g: &LatentSequence) -> String {
    write_frames(&LATENT_HEADER, g.len(), |t| [g.phi[t], g.theta[t], g.u[t]])
}

pub fn read_latent(text: &str) -> Result<LatentSequence, IoError> {
    let rows = read_frames::<3>(text, &LATENT_HEADER)?;
    let col = |i: usize| rows.iter().map(|r| r[i]).collect();
    LatentSequence::new(col(0), col(1), col(2)).map_err(|e| IoError::Format(format!("latent: {e}")))
}

pub fn write_controls(c: &ControlSequence) -> String {
    write_frames(&CONTROLS_HEADER, c.len(), |t| [c.u_phi[t], c.u_theta[t]])
}

pub fn read_controls(text: &str) -> Result<ControlSequence, IoError> {
    let rows = read_frames::<2>(text, &CONTROLS_HEADER)?;
    Ok(ControlSequence { u_phi: rows.iter().map(|r| r[0]).collect(), u_theta: rows.iter().map(|r| r[1]).collect() })
}

/// One row per assigned (frame, camera) pair, frame-major.
pub fn write_assignment(a: &Assignment, camera_ids: &[u32]) -> String {
    let mut s = header_line(&ASSIGNMENT_HEADER);
    for t in 0..a.n_frames() {
        for (j, id) in camera_ids.iter().enumerate().take(a.n_cameras()) {
            if let Some(k) = a.get(t, j) {
                let _ = writeln!(s, "{},{id},{k}", t + 1);
            }
        }
    }
    s
}

pub fn read_assignment(text: &str, camera_ids: &[u32], n_frames: usize) -> Result<Assignment, IoError> {
    let mut a = Assignment::empty(n_frames, camera_ids.len());
    let mut last: Option<(usize, usize)> = None;
    for (line, rec) in records(text, &ASSIGNMENT_HEADER)? {
        let frame: usize = field(&rec, 0, "frame", line)?;
        if frame == 0 || frame > n_frames {
            return Err(IoError::parse(line, format!("frame {frame} outside 1..={n_frames}")));
        }
        let id: u32 = field(&rec, 1, "camera_id", line)?;
        let j = camera_ids.iter().position(|c| *c == id).ok_or_else(|| IoError::parse(line, format!("unknown camera_id {id}")))?;
        if last.is_some_and(|prev| (frame - 1, j) <= prev) {
            return Err(IoError::parse(line, "rows are not strictly sorted by frame and camera"));
        }
        last = Some((frame - 1, j));
        a.set(frame - 1, j, Some(field(&rec, 2, "candidate_index", line)?));
    }
    Ok(a)
}

/// Energy trace, one row per outer iteration.
pub fn write_trace(trace: &[TraceEntry]) -> String {
    let mut s = String::from(
        "iteration,accepted,attempts,damping,step_norm,energy_before,energy_after,data,consistency,anchor_phi,anchor_theta,anchor_u\n",
    );
    for e in trace {
        let a = &e.after;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            e.iteration,
            e.accepted,
            e.attempts,
            fmt_f64(e.damping),
            fmt_f64(e.step_norm),
            fmt_f64(e.before.total),
            fmt_f64(a.total),
            fmt_f64(a.data),
            fmt_f64(a.consistency),
            fmt_f64(a.anchors[0]),
            fmt_f64(a.anchors[1]),
            fmt_f64(a.anchors[2]),
        );
    }
    s
}

/// Sweep results without timings, which live in a separate file.
pub fn write_sweep_rows(rows: &[SweepRow]) -> String {
    let mut s = header_line(&SWEEP_HEADER);
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.method,
            fmt_f64(r.sigma_px),
            fmt_f64(r.sigma_p),
            fmt_f64(r.sigma_o),
            r.seed,
            fmt_f64(r.rmse)
        );
    }
    s
}

pub fn read_sweep_rows(text: &str) -> Result<Vec<SweepRow>, IoError> {
    records(text, &SWEEP_HEADER)?
        .into_iter()
        .map(|(line, rec)| {
            Ok(SweepRow {
                method: Method::from_name(&rec[0]).ok_or_else(|| IoError::parse(line, format!("unknown method `{}`", &rec[0])))?,
                sigma_px: finite(&rec, 1, "sigma_px", line)?,
                sigma_p: finite(&rec, 2, "sigma_p", line)?,
                sigma_o: finite(&rec, 3, "sigma_o", line)?,
                seed: field(&rec, 4, "seed", line)?,
                rmse: finite(&rec, 5, "rmse", line)?,
                runtime_s: 0.0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ObservationTable {
        let mut obs = ObservationTable::new(3, 2);
        obs.candidates_mut(0, 0).push(Vec2::new(1.0 / 3.0, 2.5));
        obs.candidates_mut(0, 0).push(Vec2::new(100.125, 7e-9));
        obs.candidates_mut(2, 1).push(Vec2::new(0.1, 1535.9999999999998));
        obs
    }

    #[test]
    fn detections_round_trip() {
        let ids = [4, 9];
        let text = write_detections(&table(), &ids);
        let back = read_detections(&text, &ids, None).unwrap();
        assert_eq!(back, table());
        assert_eq!(write_detections(&back, &ids), text);
        assert_eq!(read_detections(&text, &ids, Some(5)).unwrap().n_frames(), 5);
    }

    #[test]
    fn malformed_detections_name_the_line() {
        let ids = [4, 9];
        let text = write_detections(&table(), &ids);
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[2] = "4,1,1,abc,2.0".into();
        let err = read_detections(&(lines.join("\n") + "\n"), &ids, None).unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 3, .. }), "{err}");
        let gap = text.replace("4,1,1,", "4,1,2,");
        assert!(matches!(read_detections(&gap, &ids, None), Err(IoError::Parse { line: 3, .. })));
        let unsorted = "camera_id,frame,candidate_index,px,py\n9,1,0,1,1\n4,1,0,1,1\n";
        assert!(matches!(read_detections(unsorted, &ids, None), Err(IoError::Parse { line: 3, .. })));
        assert!(read_detections("camera,frame\n", &ids, None).is_err());
        assert!(matches!(
            read_detections("camera_id,frame,candidate_index,px,py\n4,1,0,1\n", &ids, None),
            Err(IoError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn frame_tables_round_trip_and_check_frames() {
        let x =
            Trajectory::new(0.1, vec![Vec3::new(0.1, -1.0 / 3.0, 2.0), Vec3::new(1e-300, 5.0, -0.0), Vec3::new(1.0, 2.0, 3.0)]).unwrap();
        let text = write_trajectory(&x);
        assert!(text.starts_with("frame,x,y,z\n1,1.0000000000000001e-1,"));
        let back = read_trajectory(&text, 0.1).unwrap();
        assert_eq!(back.positions, x.positions);
        assert_eq!(write_trajectory(&back), text);
        let skipped = text.replace("\n2,", "\n3,");
        assert!(matches!(read_trajectory(&skipped, 0.1), Err(IoError::Parse { line: 3, .. })));

        let g = LatentSequence::new(vec![0.1, 0.2], vec![-0.3, 0.0], vec![9.81, 10.0]).unwrap();
        let lt = write_latent(&g);
        assert_eq!(write_latent(&read_latent(&lt).unwrap()), lt);
        let c = ControlSequence { u_phi: vec![1.5, -2.0], u_theta: vec![0.0, 3.25] };
        let ct = write_controls(&c);
        assert_eq!(read_controls(&ct).unwrap(), c);
    }

    #[test]
    fn assignment_round_trip() {
        let ids = [3, 1];
        let mut a = Assignment::empty(3, 2);
        a.set(0, 1, Some(2));
        a.set(2, 0, Some(0));
        let text = write_assignment(&a, &ids);
        assert_eq!(text, "frame,camera_id,candidate_index\n1,1,2\n3,3,0\n");
        assert_eq!(read_assignment(&text, &ids, 3).unwrap(), a);
        assert!(read_assignment(&text, &ids, 2).is_err());
    }

    #[test]
    fn sweep_rows_round_trip() {
        let rows = vec![SweepRow {
            method: Method::BaPdmSingle,
            sigma_px: 2.0,
            sigma_p: 0.2,
            sigma_o: 2.0,
            seed: 7,
            rmse: 0.0123,
            runtime_s: 0.0,
        }];
        let text = write_sweep_rows(&rows);
        assert_eq!(read_sweep_rows(&text).unwrap(), rows);
    }
}
