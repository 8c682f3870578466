//! Dataset files.
//!
//! Text format, one record per line, `#` starts a comment:
//!
//! ```text
//! rolnn-dataset 1
//! n 2
//! dt 0.001
//! mode unactuated
//! seed 7
//! trajectory 0 2001
//! t q_1 .. q_n dq_1 .. dq_n ddq_1 .. ddq_n tau_1 .. tau_n
//! ...
//! ```
//!
//! `seed` may be `none`. Each `trajectory <index> <rows>` line is followed by
//! exactly `rows` data lines of `1 + 4n` numbers; `t` starts anywhere but must
//! advance by `dt`. The binary container holds the same content: the magic
//! bytes `RLNNDAT1`, a little-endian `u32` header length, the header as JSON,
//! a `u64` trajectory count, then per trajectory a `u64` row count and the
//! rows as little-endian `f64`.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::dataset::{Dataset, DatasetHeader, Mode, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::lagrangian::Trajectory;

pub const MAGIC: &[u8; 8] = b"RLNNDAT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Binary,
}

impl Format {
    /// Binary for `.bin` files, text otherwise.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Format::Binary,
            _ => Format::Text,
        }
    }
}

/// Expected properties of an ingested file; unset fields are not checked.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Schema {
    pub n: Option<usize>,
    pub dt: Option<f64>,
}

fn schema(line: usize, column: usize, msg: impl Into<String>) -> Error {
    Error::Schema {
        line,
        column,
        msg: msg.into(),
    }
}

fn row_values(t: &Trajectory, k: usize) -> impl Iterator<Item = f64> + '_ {
    std::iter::once(k as f64 * t.dt)
        .chain(t.q.row(k).into_iter().copied())
        .chain(t.dq.row(k).into_iter().copied())
        .chain(t.ddq.row(k).into_iter().copied())
        .chain(t.tau.row(k).into_iter().copied())
}

pub fn to_text(ds: &Dataset) -> String {
    let h = &ds.header;
    let mut s = String::new();
    let _ = writeln!(s, "rolnn-dataset {}", h.version);
    let _ = writeln!(s, "n {}", h.n);
    let _ = writeln!(s, "dt {:?}", h.dt);
    let _ = writeln!(s, "mode {}", h.mode.as_str());
    match h.seed {
        Some(x) => {
            let _ = writeln!(s, "seed {x}");
        }
        None => s.push_str("seed none\n"),
    }
    for (i, t) in ds.trajectories.iter().enumerate() {
        let _ = writeln!(s, "trajectory {i} {}", t.len());
        for k in 0..t.len() {
            let mut first = true;
            for v in row_values(t, k) {
                if !first {
                    s.push(' ');
                }
                first = false;
                let _ = write!(s, "{v:?}");
            }
            s.push('\n');
        }
    }
    s
}

pub fn to_binary(ds: &Dataset) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    let header = serde_json::to_vec(&ds.header)?;
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(ds.trajectories.len() as u64).to_le_bytes());
    for t in &ds.trajectories {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for k in 0..t.len() {
            for v in row_values(t, k) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = match Format::from_path(path) {
        Format::Text => to_text(ds).into_bytes(),
        Format::Binary => to_binary(ds)?,
    };
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Accumulates rows of one trajectory and checks time stamps.
struct Builder {
    n: usize,
    dt: f64,
    rows: usize,
    data: Vec<f64>,
    t0: f64,
}

impl Builder {
    fn new(n: usize, dt: f64, rows: usize) -> Self {
        Builder {
            n,
            dt,
            rows,
            data: Vec::with_capacity(rows * 4 * n),
            t0: 0.0,
        }
    }

    /// `vals` holds `1 + 4n` finite numbers; returns the offending column on error.
    fn push(&mut self, vals: &[f64], k: usize) -> std::result::Result<(), (usize, String)> {
        let t = vals[0];
        if k == 0 {
            self.t0 = t;
        } else {
            let want = self.t0 + k as f64 * self.dt;
            if (t - want).abs() > 1e-9 * want.abs().max(1.0) + 1e-6 * self.dt {
                return Err((1, format!("time {t} breaks the uniform step {} (expected {want})", self.dt)));
            }
        }
        self.data.extend_from_slice(&vals[1..]);
        Ok(())
    }

    fn finish(self) -> Result<Trajectory> {
        let (n, k) = (self.n, self.rows);
        let mut blocks = [Array2::zeros((k, n)), Array2::zeros((k, n)), Array2::zeros((k, n)), Array2::zeros((k, n))];
        for r in 0..k {
            for (b, block) in blocks.iter_mut().enumerate() {
                for j in 0..n {
                    block[[r, j]] = self.data[r * 4 * n + b * n + j];
                }
            }
        }
        let [q, dq, ddq, tau] = blocks;
        Trajectory::new(self.dt, q, dq, ddq, tau)
    }
}

fn check_header(h: &DatasetHeader, schema_: Schema, line: usize) -> Result<()> {
    if h.version != FORMAT_VERSION {
        return Err(schema(line, 1, format!("unsupported format version {}", h.version)));
    }
    if h.n == 0 {
        return Err(schema(line, 1, "n must be positive"));
    }
    if !(h.dt > 0.0 && h.dt.is_finite()) {
        return Err(schema(line, 1, format!("dt must be positive, got {}", h.dt)));
    }
    if let Some(n) = schema_.n {
        if n != h.n {
            return Err(schema(line, 1, format!("expected {n} degrees of freedom, file has {}", h.n)));
        }
    }
    if let Some(dt) = schema_.dt {
        if (dt - h.dt).abs() > 1e-12 * dt.abs() {
            return Err(schema(line, 1, format!("expected dt {dt}, file has {}", h.dt)));
        }
    }
    Ok(())
}

pub fn from_text(reader: impl BufRead, expect: Schema) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(l) => {
            let body = l.split('#').next().unwrap_or("").trim().to_string();
            (!body.is_empty()).then_some(Ok((i + 1, body)))
        }
        Err(e) => Some(Err(Error::Io(e))),
    });
    let mut next = |what: &str, last: usize| -> Result<(usize, String)> {
        lines.next().unwrap_or_else(|| Err(schema(last + 1, 1, format!("unexpected end of file, expected {what}"))))
    };
    let mut field = |key: &str, last: usize| -> Result<(usize, String)> {
        let (ln, l) = next(key, last)?;
        let mut it = l.splitn(2, char::is_whitespace);
        let k = it.next().unwrap_or("");
        if k != key {
            return Err(schema(ln, 1, format!("expected {key:?}, found {k:?}")));
        }
        Ok((ln, it.next().unwrap_or("").trim().to_string()))
    };
    let parse_err = |ln: usize, what: &str, v: &str| schema(ln, 2, format!("invalid {what} {v:?}"));
    let (l0, v) = field("rolnn-dataset", 0)?;
    let version = v.parse().map_err(|_| parse_err(l0, "version", &v))?;
    let (l1, v) = field("n", l0)?;
    let n: usize = v.parse().map_err(|_| parse_err(l1, "n", &v))?;
    let (l2, v) = field("dt", l1)?;
    let dt: f64 = v.parse().map_err(|_| parse_err(l2, "dt", &v))?;
    let (l3, v) = field("mode", l2)?;
    let mode: Mode = v.parse().map_err(|_| parse_err(l3, "mode", &v))?;
    let (l4, v) = field("seed", l3)?;
    let seed = if v == "none" { None } else { Some(v.parse().map_err(|_| parse_err(l4, "seed", &v))?) };
    let header = DatasetHeader { version, n, dt, mode, seed };
    check_header(&header, expect, l1)?;

    let width = 1 + 4 * n;
    let mut trajectories = Vec::new();
    let mut last = l4;
    let mut vals = vec![0.0; width];
    while let Some(item) = lines.next() {
        let (ln, l) = item?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "trajectory" {
            return Err(schema(ln, 1, format!("expected \"trajectory <index> <rows>\", found {l:?}")));
        }
        let idx: usize = parts[1].parse().map_err(|_| schema(ln, 2, format!("invalid index {:?}", parts[1])))?;
        if idx != trajectories.len() {
            return Err(schema(ln, 2, format!("expected trajectory index {}, found {idx}", trajectories.len())));
        }
        let rows: usize = parts[2].parse().map_err(|_| schema(ln, 3, format!("invalid row count {:?}", parts[2])))?;
        if rows == 0 {
            return Err(schema(ln, 3, "trajectory without rows"));
        }
        let mut b = Builder::new(n, dt, rows);
        last = ln;
        for k in 0..rows {
            let (ln, l) = lines.next().unwrap_or_else(|| Err(schema(last + 1, 1, format!("trajectory {idx} ends after {k} of {rows} rows"))))?;
            let mut count = 0;
            for (c, tok) in l.split_whitespace().enumerate() {
                if c >= width {
                    return Err(schema(ln, c + 1, format!("too many values, expected {width}")));
                }
                let v: f64 = tok.parse().map_err(|_| schema(ln, c + 1, format!("not a number: {tok:?}")))?;
                if !v.is_finite() {
                    return Err(schema(ln, c + 1, format!("non-finite value {tok:?}")));
                }
                vals[c] = v;
                count += 1;
            }
            if count < width {
                return Err(schema(ln, count + 1, format!("expected {width} values, found {count}")));
            }
            b.push(&vals, k).map_err(|(c, m)| schema(ln, c, m))?;
            last = ln;
        }
        trajectories.push(b.finish()?);
    }
    if trajectories.is_empty() {
        return Err(schema(last + 1, 1, "dataset contains no trajectories"));
    }
    Dataset::new(header, trajectories)
}

pub fn from_binary(bytes: &[u8], expect: Schema) -> Result<Dataset> {
    let mut pos = 0usize;
    let mut take = |len: usize, what: &str| -> Result<&[u8]> {
        if bytes.len() - pos < len {
            return Err(schema(0, pos + 1, format!("truncated file while reading {what}")));
        }
        pos += len;
        Ok(&bytes[pos - len..pos])
    };
    if take(8, "magic")? != MAGIC {
        return Err(schema(0, 1, "not a dataset container"));
    }
    let hlen = u32::from_le_bytes(take(4, "header length")?.try_into().unwrap()) as usize;
    let header: DatasetHeader = serde_json::from_slice(take(hlen, "header")?).map_err(|e| schema(0, 13, format!("bad header: {e}")))?;
    check_header(&header, expect, 0)?;
    let count = u64::from_le_bytes(take(8, "trajectory count")?.try_into().unwrap()) as usize;
    let width = 1 + 4 * header.n;
    let mut trajectories = Vec::with_capacity(count.min(1 << 16));
    let mut vals = vec![0.0; width];
    let mut line = 0usize;
    for i in 0..count {
        let rows = u64::from_le_bytes(take(8, "row count")?.try_into().unwrap()) as usize;
        if rows == 0 {
            return Err(schema(line, 1, format!("trajectory {i} has no rows")));
        }
        let mut b = Builder::new(header.n, header.dt, rows);
        for k in 0..rows {
            line += 1;
            let raw = take(8 * width, "row")?;
            for (c, chunk) in raw.chunks_exact(8).enumerate() {
                let v = f64::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(schema(line, c + 1, "non-finite value"));
                }
                vals[c] = v;
            }
            b.push(&vals, k).map_err(|(c, m)| schema(line, c, m))?;
        }
        trajectories.push(b.finish()?);
    }
    if pos != bytes.len() {
        return Err(schema(line, 1, "trailing bytes after the last trajectory"));
    }
    if trajectories.is_empty() {
        return Err(schema(0, 1, "dataset contains no trajectories"));
    }
    Dataset::new(header, trajectories)
}

/// Loads a dataset in either format, detected from the leading bytes. In
/// binary files, `line` in errors counts data rows from 1.
pub fn ingest_trajectories(path: &Path, expect: Schema) -> Result<Dataset> {
    let mut f = std::fs::File::open(path)?;
    let mut head = [0u8; 8];
    let got = f.read(&mut head)?;
    drop(f);
    if got == 8 && &head == MAGIC {
        from_binary(&std::fs::read(path)?, expect)
    } else {
        from_text(BufReader::new(std::fs::File::open(path)?), expect)
    }
}
