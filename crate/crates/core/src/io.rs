//! File formats: system JSON, trajectory and estimate CSV, report JSON.
//!
//! Floats in CSV are written as `{:.16e}` (17 significant digits), which
//! round-trips every `f64`.

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::factorization::StateSpace;
use crate::linalg::{Mat, Vector};
use crate::model::{LinearSystem, Trajectory};
use crate::sise::Estimates;
use crate::stability::StabilityReport;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    g: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    b: Option<Vec<Vec<f64>>>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    d: Option<Vec<Vec<f64>>>,
}

fn to_mat(name: &str, rows: &[Vec<f64>]) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Shape(format!("{name}: rows have different lengths")));
    }
    if nrows == 0 || ncols == 0 {
        return Err(Error::Shape(format!("{name}: empty matrix")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name}: non-finite entry")));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn mat_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Parses a system from JSON text. Unknown keys are rejected; a syntax error
/// reports line and column.
pub fn parse_system(text: &str) -> Result<LinearSystem> {
    let f: SystemFile = serde_json::from_str(text)?;
    let sys = LinearSystem::new(
        to_mat("A", &f.a)?,
        to_mat("G", &f.g)?,
        to_mat("C", &f.c)?,
        to_mat("H", &f.h)?,
        to_mat("Q", &f.q)?,
        to_mat("R", &f.r)?,
    )?;
    match (f.b, f.d) {
        (None, None) => Ok(sys),
        (Some(b), Some(d)) => sys.with_known_input(to_mat("B", &b)?, to_mat("D", &d)?),
        (Some(b), None) => {
            let b = to_mat("B", &b)?;
            let d = Mat::zeros(sys.p(), b.ncols());
            sys.with_known_input(b, d)
        }
        (None, Some(_)) => Err(Error::InvalidArgument("D given without B".into())),
    }
}

pub fn read_system(path: &std::path::Path) -> Result<LinearSystem> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    parse_system(&text)
}

pub fn system_to_json(sys: &LinearSystem) -> String {
    let f = SystemFile {
        a: mat_rows(&sys.a),
        g: mat_rows(&sys.g),
        c: mat_rows(&sys.c),
        h: mat_rows(&sys.h),
        q: mat_rows(&sys.q),
        r: mat_rows(&sys.r),
        b: sys.known.as_ref().map(|(b, _)| mat_rows(b)),
        d: sys.known.as_ref().map(|(_, d)| mat_rows(d)),
    };
    serde_json::to_string_pretty(&f).expect("plain data serializes")
}

/// A realization `(A, B, C, D)` as JSON with those four keys.
pub fn state_space_to_json(ss: &StateSpace) -> String {
    serde_json::to_string_pretty(&json!({
        "A": mat_rows(&ss.a),
        "B": mat_rows(&ss.b),
        "C": mat_rows(&ss.c),
        "D": mat_rows(&ss.d),
    }))
    .expect("plain data serializes")
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn numbered(prefix: &str, k: usize) -> impl Iterator<Item = String> + '_ {
    (1..=k).map(move |i| format!("{prefix}_{i}"))
}

/// Writes `t,x_1..x_n,d_1..d_m,y_1..y_p[,u_1..u_q]`, one row per step.
pub fn write_trajectory<W: Write>(out: W, tr: &Trajectory) -> Result<()> {
    let n = tr.states.first().map_or(0, Vector::len);
    let m = tr.disturbances.first().map_or(0, Vector::len);
    let p = tr.measurements.first().map_or(0, Vector::len);
    let q = tr.known_inputs.as_ref().and_then(|u| u.first()).map_or(0, Vector::len);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(numbered("x", n));
    header.extend(numbered("d", m));
    header.extend(numbered("y", p));
    header.extend(numbered("u", q));
    w.write_record(&header)?;
    for t in 0..=tr.horizon {
        let mut row = vec![t.to_string()];
        row.extend(tr.states[t].iter().map(|v| fmt_f64(*v)));
        row.extend(tr.disturbances[t].iter().map(|v| fmt_f64(*v)));
        row.extend(tr.measurements[t].iter().map(|v| fmt_f64(*v)));
        if let Some(u) = &tr.known_inputs {
            row.extend(u[t].iter().map(|v| fmt_f64(*v)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns of a CSV file selected by prefix (`y` picks `y_1, y_2, ...`).
#[derive(Debug, Clone, PartialEq)]
pub struct Columns {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Columns {
    /// Vectors built from the columns named `{prefix}_1 .. {prefix}_k`.
    pub fn series(&self, prefix: &str) -> Result<Vec<Vector>> {
        let mut idx = Vec::new();
        for k in 1.. {
            match self.header.iter().position(|h| h == &format!("{prefix}_{k}")) {
                Some(i) => idx.push(i),
                None => break,
            }
        }
        if idx.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no columns named {prefix}_1, {prefix}_2, ..."
            )));
        }
        Ok(self
            .rows
            .iter()
            .map(|r| Vector::from_iterator(idx.len(), idx.iter().map(|&i| r[i])))
            .collect())
    }

    pub fn has(&self, prefix: &str) -> bool {
        self.header.iter().any(|h| h == &format!("{prefix}_1"))
    }
}

/// Reads a numeric CSV with a header row.
pub fn read_columns<R: Read>(input: R) -> Result<Columns> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("row {}: '{}' is not a number", line + 2, s)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Columns { header, rows })
}

pub fn read_columns_file(path: &std::path::Path) -> Result<Columns> {
    read_columns(std::fs::File::open(path)?)
}

/// Writes `t,xhat_1..,dhat_1..,trP,innov`. The disturbance columns are named
/// `dhat_prev_i` when they hold `dhat_{t-1|t}`; `innov` is the largest
/// absolute innovation entry of the row.
pub fn write_estimates<W: Write>(out: W, est: &Estimates) -> Result<()> {
    let n = est.xhat.first().map_or(0, Vector::len);
    let m = est.dhat.first().map_or(0, Vector::len);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(numbered("xhat", n));
    header.extend(numbered(if est.delayed_input { "dhat_prev" } else { "dhat" }, m));
    header.push("trP".into());
    header.push("innov".into());
    w.write_record(&header)?;
    for t in 0..est.len() {
        let mut row = vec![t.to_string()];
        row.extend(est.xhat[t].iter().map(|v| fmt_f64(*v)));
        row.extend(est.dhat[t].iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(est.p[t].trace()));
        row.push(fmt_f64(est.innovation[t].amax()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON object per line with the gains of each step.
pub fn write_gains<W: Write>(mut out: W, est: &Estimates) -> Result<()> {
    if let Some(gains) = &est.gains {
        for g in gains {
            serde_json::to_writer(&mut out, g)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn complex_pairs(z: &[Complex64]) -> Vec<[f64; 2]> {
    z.iter().map(|z| [z.re, z.im]).collect()
}

/// Report as JSON; eigenvalues and zeros are `[re, im]` pairs.
pub fn report_json(rep: &StabilityReport) -> Value {
    json!({
        "path": rep.path,
        "verdict": rep.verdict,
        "spectral_radius": rep.spectral_radius,
        "sise_system_matrix": mat_rows(&rep.sise_system_matrix),
        "eigenvalues": complex_pairs(&rep.eigenvalues),
        "transmission_zeros": rep.transmission_zeros.as_ref().map(|z| complex_pairs(z)),
        "detectability": rep.detectability.as_ref().map(|d| json!({
            "a": mat_rows(&d.a),
            "c": mat_rows(&d.c),
            "detectable": d.result.detectable,
            "failing_modes": d.result.failing_modes,
        })),
        "stabilizability": rep.stabilizability,
        "rde": rep.rde.as_ref().map(|r| json!({
            "status": r.status,
            "iterations": r.iterations,
            "closed_loop_radius": if r.closed_loop_radius.is_finite() { json!(r.closed_loop_radius) } else { Value::Null },
            "limit": r.limit.as_ref().map(mat_rows),
        })),
        "assumptions": rep.assumptions,
        "notes": rep.notes,
    })
}
