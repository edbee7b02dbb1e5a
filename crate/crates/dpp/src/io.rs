//! File formats.
//!
//! - ground spaces: JSON `{"kind", "points", "weights", "window"}`
//! - kernel tables: CSV with header `x,A,B` or `x,A,B,dA,dB`
//! - projection matrices: `DPPMAT01`, a little-endian `u64` header length,
//!   a JSON header `{"n", "rank", "space"}`, then the `n × n` weighted
//!   matrix as row-major little-endian `f64`
//! - draws: CSV, one configuration per row as comma-separated node indices
//!   (an empty line for the empty configuration)
//!
//! Writes go to a temporary file in the target directory and are renamed
//! into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dpp_core::ground::{Configuration, GroundSpace};
use dpp_core::kernels::ProjectionMatrix;
use dpp_core::linalg::HermitianMatrix;
use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"DPPMAT01";
/// Clip tolerance applied when a stored matrix is read back.
pub const MATRIX_READ_TOL: f64 = 1e-6;

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Writes `bytes` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json(value).as_bytes())
}

pub fn read_ground(path: &Path) -> Result<GroundSpace> {
    let raw: GroundSpace = read_json(path)?;
    Ok(GroundSpace::from_parts(raw.kind, raw.points, raw.weights, raw.window)?)
}

pub fn write_ground(path: &Path, space: &GroundSpace) -> Result<()> {
    write_json(path, space)
}

/// Columns of a kernel table.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub derivatives: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Deserialize)]
struct TableRow {
    x: f64,
    #[serde(rename = "A")]
    a: f64,
    #[serde(rename = "B")]
    b: f64,
    #[serde(rename = "dA", default)]
    da: Option<f64>,
    #[serde(rename = "dB", default)]
    db: Option<f64>,
}

pub fn read_kernel_table(path: &Path) -> Result<KernelTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut t = KernelTable {
        x: Vec::new(),
        a: Vec::new(),
        b: Vec::new(),
        derivatives: None,
    };
    let (mut da, mut db) = (Vec::new(), Vec::new());
    for (k, row) in rdr.deserialize::<TableRow>().enumerate() {
        let row = row.map_err(|e| Error::format(path, format!("row {}: {e}", k + 1)))?;
        t.x.push(row.x);
        t.a.push(row.a);
        t.b.push(row.b);
        match (row.da, row.db) {
            (Some(u), Some(v)) => {
                da.push(u);
                db.push(v);
            }
            (None, None) => {}
            _ => return Err(Error::format(path, format!("row {}: dA and dB must be given together", k + 1))),
        }
    }
    if !da.is_empty() {
        if da.len() != t.x.len() {
            return Err(Error::format(path, "derivative columns are incomplete"));
        }
        t.derivatives = Some((da, db));
    }
    Ok(t)
}

pub fn kernel_table_csv(t: &KernelTable) -> String {
    let mut s = String::from(if t.derivatives.is_some() { "x,A,B,dA,dB\n" } else { "x,A,B\n" });
    for i in 0..t.x.len() {
        s.push_str(&format!("{},{},{}", fmt_f64(t.x[i]), fmt_f64(t.a[i]), fmt_f64(t.b[i])));
        if let Some((da, db)) = &t.derivatives {
            s.push_str(&format!(",{},{}", fmt_f64(da[i]), fmt_f64(db[i])));
        }
        s.push('\n');
    }
    s
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Serialize, Deserialize)]
struct MatrixHeader {
    n: usize,
    rank: usize,
    space: GroundSpace,
}

pub fn matrix_bytes(p: &ProjectionMatrix) -> Vec<u8> {
    let header = serde_json::to_vec(&MatrixHeader {
        n: p.n(),
        rank: p.rank,
        space: p.space.clone(),
    })
    .expect("serializable header");
    let n = p.n();
    let mut out = Vec::with_capacity(16 + header.len() + 8 * n * n);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for i in 0..n {
        for j in 0..n {
            out.extend_from_slice(&p.get(i, j).to_le_bytes());
        }
    }
    out
}

pub fn write_matrix(path: &Path, p: &ProjectionMatrix) -> Result<()> {
    write_atomic(path, &matrix_bytes(p))
}

pub fn parse_matrix(path: &Path, bytes: &[u8]) -> Result<ProjectionMatrix> {
    let bad = |m: &str| Error::format(path, m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MATRIX_MAGIC {
        return Err(bad("not a DPPMAT01 matrix file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: MatrixHeader = serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
    let space = GroundSpace::from_parts(header.space.kind, header.space.points, header.space.weights, header.space.window)?;
    let n = header.n;
    if space.len() != n {
        return Err(bad("header n does not match the ground space"));
    }
    let data = &bytes[16 + hlen..];
    if data.len() != 8 * n * n {
        return Err(bad(&format!("expected {} matrix bytes, found {}", 8 * n * n, data.len())));
    }
    let m = DMatrix::from_fn(n, n, |i, j| {
        let k = 8 * (i * n + j);
        f64::from_le_bytes(data[k..k + 8].try_into().expect("8 bytes"))
    });
    let p = ProjectionMatrix::from_matrix(space, &HermitianMatrix::new(m)?, MATRIX_READ_TOL)?;
    if p.rank != header.rank {
        return Err(bad(&format!("header rank {} but matrix rank {}", header.rank, p.rank)));
    }
    Ok(p)
}

pub fn read_matrix(path: &Path) -> Result<ProjectionMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(path, &bytes)
}

pub fn draws_csv(draws: &[Configuration]) -> String {
    let mut s = String::new();
    for x in draws {
        let row: Vec<String> = x.indices().iter().map(|i| i.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn write_draws(path: &Path, draws: &[Configuration]) -> Result<()> {
    write_atomic(path, draws_csv(draws).as_bytes())
}

pub fn read_draws(path: &Path, space: &GroundSpace) -> Result<Vec<Configuration>> {
    let text = read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(k, line)| {
            let idx = line
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(path, format!("line {}: {e}", k + 1)))?;
            Configuration::new(space, idx).map_err(|e| Error::format(path, format!("line {}: {e}", k + 1)))
        })
        .collect()
}
