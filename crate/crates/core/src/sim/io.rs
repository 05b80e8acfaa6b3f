//! Ensemble file formats.
//!
//! LVHG1 binary layout (all integers and floats little-endian):
//!
//! ```text
//! "LVHG1"  d:u32  n_paths:u64  seed:u64  grid_kind:u8
//! grid_kind 0 (shared grid):  n_times:u64  t0:f64  dt:f64  t_last:f64
//!     per path: path_seed:u64  states[n_times·d]:f64  wrapped[n_times·d]:f64
//! grid_kind 1 (per-path times):
//!     per path: path_seed:u64  n_times:u64  times[n_times]:f64
//!               states[n_times·d]:f64  wrapped[n_times·d]:f64
//! ```
//!
//! A shared grid is written only when every path has the same uniform grid
//! (the last step may be shorter, hence `t_last`). Jump records and failures
//! are not serialized.

use std::io::{Read, Write};

use super::{Path, PathEnsemble};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"LVHG1";

fn shared_grid(ens: &PathEnsemble) -> Option<(u64, f64, f64, f64)> {
    let first = ens.paths.first()?;
    let n = first.times.len();
    if n < 2 {
        return None;
    }
    let t0 = first.times[0];
    let dt = first.times[1] - t0;
    let t_last = first.times[n - 1];
    let uniform = first.times[..n - 1]
        .iter()
        .enumerate()
        .all(|(k, &t)| t.to_bits() == (t0 + k as f64 * dt).to_bits());
    if !uniform || t_last <= first.times[n - 2] {
        return None;
    }
    ens.paths.iter().all(|p| p.times == first.times).then_some((n as u64, t0, dt, t_last))
}

fn put_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_lvhg1<W: Write>(ens: &PathEnsemble, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(ens.dim as u32).to_le_bytes())?;
    w.write_all(&(ens.paths.len() as u64).to_le_bytes())?;
    w.write_all(&ens.seed.to_le_bytes())?;
    match shared_grid(ens) {
        Some((n, t0, dt, t_last)) => {
            w.write_all(&[0u8])?;
            w.write_all(&n.to_le_bytes())?;
            put_f64s(&mut w, &[t0, dt, t_last])?;
            for p in &ens.paths {
                w.write_all(&p.path_seed.to_le_bytes())?;
                put_f64s(&mut w, &p.states)?;
                put_f64s(&mut w, &p.wrapped)?;
            }
        }
        None => {
            w.write_all(&[1u8])?;
            for p in &ens.paths {
                w.write_all(&p.path_seed.to_le_bytes())?;
                w.write_all(&(p.times.len() as u64).to_le_bytes())?;
                put_f64s(&mut w, &p.times)?;
                put_f64s(&mut w, &p.states)?;
                put_f64s(&mut w, &p.wrapped)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated LVHG1 stream: {e}")))?;
        Ok(b)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn checked_len(n: u64, limit: u64) -> Result<usize> {
    if n > limit {
        return Err(Error::Format(format!("implausible length {n} in LVHG1 header")));
    }
    Ok(n as usize)
}

pub fn read_lvhg1<R: Read>(r: R) -> Result<PathEnsemble> {
    let mut r = Reader { inner: r };
    if &r.bytes::<5>()? != MAGIC {
        return Err(Error::Format("missing LVHG1 magic".into()));
    }
    let dim = u32::from_le_bytes(r.bytes()?) as usize;
    if dim == 0 || dim > 3 {
        return Err(Error::Format(format!("unsupported dimension {dim}")));
    }
    let n_paths = checked_len(r.u64()?, 1 << 32)?;
    let seed = r.u64()?;
    let kind = r.bytes::<1>()?[0];
    let mut paths = Vec::with_capacity(n_paths.min(1 << 20));
    match kind {
        0 => {
            let n = checked_len(r.u64()?, 1 << 40)?;
            let (t0, dt, t_last) = (r.f64()?, r.f64()?, r.f64()?);
            let times: Vec<f64> =
                (0..n).map(|k| if k + 1 == n { t_last } else { t0 + k as f64 * dt }).collect();
            for _ in 0..n_paths {
                let path_seed = r.u64()?;
                let states = r.f64s(n * dim)?;
                let wrapped = r.f64s(n * dim)?;
                paths.push(Path { dim, path_seed, times: times.clone(), states, wrapped, jumps: vec![] });
            }
        }
        1 => {
            for _ in 0..n_paths {
                let path_seed = r.u64()?;
                let n = checked_len(r.u64()?, 1 << 40)?;
                let times = r.f64s(n)?;
                let states = r.f64s(n * dim)?;
                let wrapped = r.f64s(n * dim)?;
                paths.push(Path { dim, path_seed, times, states, wrapped, jumps: vec![] });
            }
        }
        k => return Err(Error::Format(format!("unknown grid kind {k}"))),
    }
    Ok(PathEnsemble { dim, seed, paths, failures: vec![] })
}

/// One row per `(path, time)`: `path,path_seed,time,x0..,w0..`.
pub fn write_csv<W: Write>(ens: &PathEnsemble, mut w: W) -> Result<()> {
    let d = ens.dim;
    let mut header = String::from("path,path_seed,time");
    for k in 0..d {
        header.push_str(&format!(",x{k}"));
    }
    for k in 0..d {
        header.push_str(&format!(",w{k}"));
    }
    writeln!(w, "{header}")?;
    for (i, p) in ens.paths.iter().enumerate() {
        for (j, t) in p.times.iter().enumerate() {
            let mut line = format!("{i},{},{t:e}", p.path_seed);
            for v in p.state(j).iter().chain(p.wrapped_state(j)) {
                line.push_str(&format!(",{v:e}"));
            }
            writeln!(w, "{line}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the CSV written by [`write_csv`]; `seed` is not stored in CSV.
pub fn read_csv<R: Read>(r: R, seed: u64) -> Result<PathEnsemble> {
    let mut text = String::new();
    let mut r = r;
    r.read_to_string(&mut text)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty CSV".into()))?;
    let cols = header.split(',').count();
    if cols < 5 || (cols - 3) % 2 != 0 {
        return Err(Error::Format(format!("unexpected CSV header {header:?}")));
    }
    let dim = (cols - 3) / 2;
    let mut paths: Vec<Path> = Vec::new();
    for (ln, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols {
            return Err(Error::Format(format!("line {}: expected {cols} fields", ln + 2)));
        }
        let bad = |e: &dyn std::fmt::Display| Error::Format(format!("line {}: {e}", ln + 2));
        let idx: usize = f[0].parse().map_err(|e| bad(&e))?;
        let path_seed: u64 = f[1].parse().map_err(|e| bad(&e))?;
        let vals: Vec<f64> = f[2..].iter().map(|s| s.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|e| bad(&e))?;
        if idx == paths.len() {
            paths.push(Path { dim, path_seed, times: vec![], states: vec![], wrapped: vec![], jumps: vec![] });
        } else if idx + 1 != paths.len() {
            return Err(Error::Format(format!("line {}: path index out of order", ln + 2)));
        }
        let p = paths.last_mut().expect("pushed above");
        p.times.push(vals[0]);
        p.states.extend_from_slice(&vals[1..1 + dim]);
        p.wrapped.extend_from_slice(&vals[1 + dim..]);
    }
    Ok(PathEnsemble { dim, seed, paths, failures: vec![] })
}
