//! File formats: CSV tables with round-trip float text, compact binary field
//! and density dumps, and JSON sidecars for solutions.
//!
//! Binary layout (all little-endian): 4-byte magic, `u64 N`, `u64 M`, then for
//! densities `u64 Mv` and `f64 R`, then the values as `f64` in storage order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ep_solver::EpSolution;
use crate::error::{Error, Result};
use crate::grid::{Density, ScalarField, TorusGrid, VelocityGrid};

pub const FIELD_MAGIC: [u8; 4] = *b"MEPF";
pub const DENSITY_MAGIC: [u8; 4] = *b"MEPD";

/// 17 significant digits; `inf`, `-inf` and `nan` for non-finite values.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Inverse of [`fmt_f64`].
pub fn parse_f64(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        "nan" => Ok(f64::NAN),
        t => t
            .parse()
            .map_err(|_| Error::InvalidInput(format!("not a number: `{t}`"))),
    }
}

/// Writes a CSV table whose cells are already formatted.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn index_header(prefix: &str, dim: usize) -> Vec<String> {
    (0..dim).map(|a| format!("{prefix}{a}")).collect()
}

/// Columns `i0[, i1, …], value`.
pub fn write_field_csv(path: &Path, field: &ScalarField) -> Result<()> {
    let grid = field.grid();
    let mut header = index_header("i", grid.dim());
    header.push("value".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = field.values().iter().enumerate().map(|(flat, v)| {
        let mut row: Vec<String> = grid.multi_index(flat).iter().map(|i| i.to_string()).collect();
        row.push(fmt_f64(*v));
        row
    });
    write_table(path, &header, rows)
}

/// Reads a file written by [`write_field_csv`].
pub fn read_field_csv(path: &Path, grid: TorusGrid) -> Result<ScalarField> {
    let mut r = csv::Reader::from_path(path)?;
    let mut values = vec![f64::NAN; grid.len()];
    for record in r.records() {
        let record = record?;
        let idx: Vec<i64> = (0..grid.dim())
            .map(|a| record[a].parse::<i64>().map_err(|_| Error::InvalidInput("bad index".into())))
            .collect::<Result<_>>()?;
        values[grid.flat_index(&idx)] = parse_f64(&record[grid.dim()])?;
    }
    ScalarField::new(grid, values)
}

/// Columns `i0…, j0…, value` with `i` torus and `j` velocity indices.
pub fn write_density_csv(path: &Path, density: &Density) -> Result<()> {
    let torus = density.torus();
    let velocity = density.velocity();
    let mut header = index_header("i", torus.dim());
    header.extend(index_header("j", velocity.dim()));
    header.push("value".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let nv = velocity.len();
    let rows = (0..torus.len() * nv).map(|k| {
        let (x, v) = (k / nv, k % nv);
        let mut row: Vec<String> = torus.multi_index(x).iter().map(|i| i.to_string()).collect();
        row.extend(velocity.multi_index(v).iter().map(|j| j.to_string()));
        row.push(fmt_f64(density.value(x, v)));
        row
    });
    write_table(path, &header, rows)
}

fn header(magic: [u8; 4], dim: usize, m: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(20);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    out.extend_from_slice(&(m as u64).to_le_bytes());
    out
}

fn push_values(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn field_to_bytes(field: &ScalarField) -> Vec<u8> {
    let grid = field.grid();
    let mut out = header(FIELD_MAGIC, grid.dim(), grid.points_per_axis());
    push_values(&mut out, field.values().iter().copied());
    out
}

/// Density values (not logarithms) in `x`-major order.
pub fn density_to_bytes(density: &Density) -> Vec<u8> {
    let torus = density.torus();
    let velocity = density.velocity();
    let mut out = header(DENSITY_MAGIC, torus.dim(), torus.points_per_axis());
    out.extend_from_slice(&(velocity.points_per_axis() as u64).to_le_bytes());
    out.extend_from_slice(&velocity.cutoff().to_le_bytes());
    push_values(&mut out, density.values());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::InvalidInput("truncated binary dump".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn open(bytes: &[u8], magic: [u8; 4]) -> Result<(Cursor<'_>, TorusGrid)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != magic {
        return Err(Error::InvalidInput("wrong magic in binary dump".into()));
    }
    let dim = c.u64()? as usize;
    let m = c.u64()? as usize;
    let grid = TorusGrid::new(dim, m)?;
    Ok((c, grid))
}

pub fn field_from_bytes(bytes: &[u8]) -> Result<ScalarField> {
    let (mut c, grid) = open(bytes, FIELD_MAGIC)?;
    let values = (0..grid.len()).map(|_| c.f64()).collect::<Result<_>>()?;
    ScalarField::new(grid, values)
}

pub fn density_from_bytes(bytes: &[u8]) -> Result<Density> {
    let (mut c, torus) = open(bytes, DENSITY_MAGIC)?;
    let mv = c.u64()? as usize;
    let cutoff = c.f64()?;
    let velocity = VelocityGrid::new(torus.dim(), cutoff, mv)?;
    let values: Vec<f64> = (0..torus.len() * velocity.len())
        .map(|_| c.f64())
        .collect::<Result<_>>()?;
    Density::from_values(torus, velocity, &values)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

/// JSON sidecar stored next to the `φ`, `φ̄` dumps of a solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionSidecar {
    pub epsilon: f64,
    pub h: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub final_residual: f64,
}

impl From<&EpSolution> for SolutionSidecar {
    fn from(s: &EpSolution) -> Self {
        Self {
            epsilon: s.epsilon,
            h: s.h,
            lambda: s.lambda,
            iterations: s.iterations,
            final_residual: s.final_residual,
        }
    }
}

/// Writes `<stem>_phi.bin`, `<stem>_phibar.bin` and `<stem>.json` into `dir`.
pub fn write_solution(dir: &Path, stem: &str, sol: &EpSolution) -> Result<()> {
    write_bytes(&dir.join(format!("{stem}_phi.bin")), &field_to_bytes(&sol.phi))?;
    write_bytes(&dir.join(format!("{stem}_phibar.bin")), &field_to_bytes(&sol.phibar))?;
    write_json(&dir.join(format!("{stem}.json")), &SolutionSidecar::from(sol))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_text_round_trips() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::INFINITY, f64::NEG_INFINITY] {
            assert_eq!(parse_f64(&fmt_f64(x)).unwrap(), x);
        }
        assert!(parse_f64("nan").unwrap().is_nan());
    }

    #[test]
    fn field_dump_round_trips() {
        let grid = TorusGrid::new(2, 5).unwrap();
        let f = ScalarField::from_fn(grid, |x| x[0].sin() - 3.0 * x[1]);
        let bytes = field_to_bytes(&f);
        assert_eq!(&bytes[..4], b"MEPF");
        assert_eq!(bytes.len(), 4 + 16 + 8 * 25);
        assert_eq!(field_from_bytes(&bytes).unwrap(), f);
        assert!(density_from_bytes(&bytes).is_err());
    }

    #[test]
    fn density_dump_round_trips() {
        let torus = TorusGrid::new(1, 4).unwrap();
        let velocity = VelocityGrid::new(1, 2.0, 5).unwrap();
        let values: Vec<f64> = (0..20).map(|k| k as f64 / 40.0).collect();
        let d = Density::from_values(torus, velocity, &values).unwrap();
        let back = density_from_bytes(&density_to_bytes(&d)).unwrap();
        assert_eq!(back.values(), d.values());
        assert_eq!(back.velocity(), d.velocity());
    }

    #[test]
    fn field_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let grid = TorusGrid::new(1, 7).unwrap();
        let f = ScalarField::from_fn(grid, |x| (x[0] * 10.0).exp());
        let path = dir.path().join("f.csv");
        write_field_csv(&path, &f).unwrap();
        assert_eq!(read_field_csv(&path, grid).unwrap(), f);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("i0,value\n0,1.0000000000000000e0\n"));
    }
}
