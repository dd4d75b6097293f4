//! File formats: the plain-text matrix container, trace and delay CSVs, and
//! atomic file writes.
//!
//! Container grammar (one item per line, `#` lines ignored):
//!
//! ```text
//! dsgd-container 1
//! <key> <value...>            header entries, any number
//! dense <name> <rows> <cols>  followed by <rows> lines of <cols> numbers
//! sparse <name> <rows> <cols> <nnz>
//!                             followed by <nnz> lines `i j value`
//! end
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle is exact.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{DesignMatrix, DiscreteGradient};
use crate::objectives::{make_objective, LocalObjective, Loss};
use crate::solver::TraceRecord;
use crate::timing::TimingComparison;
use crate::tomo::{TomoNode, TomoProblem};

pub const CONTAINER_MAGIC: &str = "dsgd-container 1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("container: {0}")]
    Content(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Dense(DMatrix<f64>),
    Sparse(DesignMatrix),
}

/// Ordered header entries plus named numeric blocks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub header: Vec<(String, String)>,
    pub blocks: Vec<(String, Block)>,
}

impl Container {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.header.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, IoError> {
        self.get(key).ok_or_else(|| IoError::Content(format!("missing header key `{key}`")))
    }

    pub fn parse_key<T: std::str::FromStr>(&self, key: &str) -> Result<T, IoError> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| IoError::Content(format!("header key `{key}` has invalid value `{raw}`")))
    }

    pub fn push_dense(&mut self, name: &str, m: DMatrix<f64>) {
        self.blocks.push((name.to_string(), Block::Dense(m)));
    }

    pub fn push_vector(&mut self, name: &str, v: &DVector<f64>) {
        self.push_dense(name, DMatrix::from_column_slice(v.len(), 1, v.as_slice()));
    }

    pub fn push_sparse(&mut self, name: &str, m: DesignMatrix) {
        self.blocks.push((name.to_string(), Block::Sparse(m)));
    }

    fn block(&self, name: &str) -> Result<&Block, IoError> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b)
            .ok_or_else(|| IoError::Content(format!("missing block `{name}`")))
    }

    pub fn dense(&self, name: &str) -> Result<&DMatrix<f64>, IoError> {
        match self.block(name)? {
            Block::Dense(m) => Ok(m),
            Block::Sparse(_) => Err(IoError::Content(format!("block `{name}` is sparse, expected dense"))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<DVector<f64>, IoError> {
        let m = self.dense(name)?;
        if m.ncols() != 1 {
            return Err(IoError::Content(format!("block `{name}` has {} columns, expected a vector", m.ncols())));
        }
        Ok(m.column(0).into_owned())
    }

    pub fn sparse(&self, name: &str) -> Result<DesignMatrix, IoError> {
        match self.block(name)? {
            Block::Sparse(m) => Ok(m.clone()),
            Block::Dense(m) => Ok(DesignMatrix::from_dense(m)),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CONTAINER_MAGIC);
        out.push('\n');
        for (k, v) in &self.header {
            let _ = writeln!(out, "{k} {v}");
        }
        for (name, block) in &self.blocks {
            match block {
                Block::Dense(m) => {
                    let _ = writeln!(out, "dense {name} {} {}", m.nrows(), m.ncols());
                    for r in 0..m.nrows() {
                        let row: Vec<String> = (0..m.ncols()).map(|c| m[(r, c)].to_string()).collect();
                        let _ = writeln!(out, "{}", row.join(" "));
                    }
                }
                Block::Sparse(m) => {
                    let _ = writeln!(out, "sparse {name} {} {} {}", m.nrows(), m.ncols(), m.nnz());
                    for r in 0..m.nrows() {
                        let (cols, vals) = m.row(r);
                        for (c, v) in cols.iter().zip(vals) {
                            let _ = writeln!(out, "{r} {c} {v}");
                        }
                    }
                }
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, IoError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, l)) if l == CONTAINER_MAGIC => {}
            Some((line, _)) => return Err(IoError::Parse { line, msg: format!("expected `{CONTAINER_MAGIC}`") }),
            None => return Err(IoError::Parse { line: 0, msg: "empty container".into() }),
        }
        let mut out = Container::default();
        let mut ended = false;
        while let Some((line, l)) = lines.next() {
            let err = |msg: String| IoError::Parse { line, msg };
            let fields: Vec<&str> = l.split_whitespace().collect();
            match fields[0] {
                "end" => {
                    ended = true;
                    break;
                }
                "dense" | "sparse" => {
                    let sparse = fields[0] == "sparse";
                    let want = if sparse { 5 } else { 4 };
                    if fields.len() != want {
                        return Err(err(format!("`{}` block header needs {} fields", fields[0], want - 1)));
                    }
                    let dims: Vec<usize> = fields[2..]
                        .iter()
                        .map(|f| f.parse().map_err(|_| err(format!("bad size `{f}`"))))
                        .collect::<Result<_, _>>()?;
                    let (rows, cols) = (dims[0], dims[1]);
                    let block = if sparse {
                        let mut entries = vec![Vec::new(); rows];
                        for _ in 0..dims[2] {
                            let (line, l) = lines.next().ok_or_else(|| err("truncated sparse block".into()))?;
                            let f: Vec<&str> = l.split_whitespace().collect();
                            let bad = || IoError::Parse { line, msg: format!("expected `i j value`, got `{l}`") };
                            if f.len() != 3 {
                                return Err(bad());
                            }
                            let i: usize = f[0].parse().map_err(|_| bad())?;
                            let j: usize = f[1].parse().map_err(|_| bad())?;
                            let v: f64 = f[2].parse().map_err(|_| bad())?;
                            if i >= rows || j >= cols {
                                return Err(IoError::Parse { line, msg: format!("entry ({i}, {j}) outside {rows}x{cols}") });
                            }
                            entries[i].push((j, v));
                        }
                        Block::Sparse(DesignMatrix::from_rows(cols, entries))
                    } else {
                        let mut data = Vec::with_capacity(rows * cols);
                        for _ in 0..rows {
                            let (line, l) = lines.next().ok_or_else(|| err("truncated dense block".into()))?;
                            let row: Vec<f64> = l
                                .split_whitespace()
                                .map(|f| f.parse().map_err(|_| IoError::Parse { line, msg: format!("bad number `{f}`") }))
                                .collect::<Result<_, _>>()?;
                            if row.len() != cols {
                                return Err(IoError::Parse { line, msg: format!("expected {cols} values, got {}", row.len()) });
                            }
                            data.extend(row);
                        }
                        Block::Dense(DMatrix::from_row_slice(rows, cols, &data))
                    };
                    out.blocks.push((fields[1].to_string(), block));
                }
                key => {
                    let value = l[key.len()..].trim().to_string();
                    out.header.push((key.to_string(), value));
                }
            }
        }
        if !ended {
            return Err(IoError::Parse { line: text.lines().count(), msg: "missing `end`".into() });
        }
        Ok(out)
    }
}

pub fn objective_to_container(f: &LocalObjective) -> Container {
    let mut c = Container::default();
    c.set("kind", "objective");
    c.set("loss", f.loss().name());
    match f.loss() {
        Loss::Huber { delta } => c.set("delta", delta),
        Loss::TikhonovIdentity { mu } => c.set("mu", mu),
        Loss::TikhonovGradient { mu, op } => {
            c.set("mu", mu);
            c.set("grid", join(op.dims()));
        }
        Loss::LeastSquares | Loss::Logistic => {}
    }
    c.set("sigma", f.sigma());
    let (a, b) = f.data();
    c.set("rows", a.nrows());
    c.set("cols", a.ncols());
    c.push_sparse("a", a.clone());
    c.push_vector("b", b);
    c
}

pub fn objective_from_container(c: &Container) -> Result<LocalObjective, IoError> {
    if c.get("kind") != Some("objective") {
        return Err(IoError::Content("expected `kind objective`".into()));
    }
    let loss = match c.require("loss")? {
        "least-squares" => Loss::LeastSquares,
        "huber" => Loss::Huber { delta: c.parse_key("delta")? },
        "logistic" => Loss::Logistic,
        "tikhonov-identity" => Loss::TikhonovIdentity { mu: c.parse_key("mu")? },
        "tikhonov-gradient" => Loss::TikhonovGradient { mu: c.parse_key("mu")?, op: DiscreteGradient::new(&parse_dims(c.require("grid")?)?) },
        other => return Err(IoError::Content(format!("unknown loss `{other}`"))),
    };
    let a = c.sparse("a")?;
    let b = c.vector("b")?;
    make_objective(loss, a, b, c.parse_key("sigma")?).map_err(|e| IoError::Content(e.to_string()))
}

pub fn tomo_to_container(p: &TomoProblem) -> Container {
    let mut c = Container::default();
    c.set("kind", "tomo");
    c.set("dims", join(&p.dims));
    c.set("nodes", p.nodes.len());
    c.set("noise_std", p.noise_std);
    c.set("radius", p.radius);
    c.push_vector("x_true", &p.x_true);
    for (i, node) in p.nodes.iter().enumerate() {
        c.push_vector(&format!("sensor{i}"), &DVector::from_vec(node.sensor.clone()));
        let flat: Vec<f64> = node.sources.iter().flatten().copied().collect();
        c.push_dense(&format!("sources{i}"), DMatrix::from_row_slice(node.sources.len(), p.dims.len(), &flat));
        c.push_sparse(&format!("a{i}"), node.a.clone());
        c.push_vector(&format!("b{i}"), &node.b);
    }
    c
}

pub fn tomo_from_container(c: &Container) -> Result<TomoProblem, IoError> {
    if c.get("kind") != Some("tomo") {
        return Err(IoError::Content("expected `kind tomo`".into()));
    }
    let dims = parse_dims(c.require("dims")?)?;
    let count: usize = c.parse_key("nodes")?;
    let nodes = (0..count)
        .map(|i| {
            let sources = c.dense(&format!("sources{i}"))?;
            Ok(TomoNode {
                sensor: c.vector(&format!("sensor{i}"))?.as_slice().to_vec(),
                sources: sources.row_iter().map(|r| r.iter().copied().collect()).collect(),
                a: c.sparse(&format!("a{i}"))?,
                b: c.vector(&format!("b{i}"))?,
            })
        })
        .collect::<Result<Vec<_>, IoError>>()?;
    Ok(TomoProblem { dims, x_true: c.vector("x_true")?, nodes, noise_std: c.parse_key("noise_std")?, radius: c.parse_key("radius")? })
}

fn join(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_dims(text: &str) -> Result<Vec<usize>, IoError> {
    text.split_whitespace()
        .map(|f| f.parse().map_err(|_| IoError::Content(format!("bad dimension `{f}`"))))
        .collect()
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// CSV with a header row; every row must have the header's width.
pub fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String, IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub const TRACE_COLUMNS: [&str; 6] = ["t", "alpha", "obj_gap", "disagreement_y", "disagreement_x", "max_delay"];

/// Trace rows as strings; `wall_clock` is appended when every record carries one.
pub fn trace_rows(records: &[TraceRecord]) -> (Vec<String>, Vec<Vec<String>>) {
    let clock = !records.is_empty() && records.iter().all(|r| r.wall_clock.is_some());
    let mut header: Vec<String> = TRACE_COLUMNS.iter().map(|s| s.to_string()).collect();
    if clock {
        header.push("wall_clock".into());
    }
    let rows = records
        .iter()
        .map(|r| {
            let mut row = vec![
                r.t.to_string(),
                r.alpha.to_string(),
                r.obj_gap.to_string(),
                r.disagreement_y.to_string(),
                r.disagreement_x.to_string(),
                r.max_delay.to_string(),
            ];
            if clock {
                row.push(r.wall_clock.unwrap_or_default().to_string());
            }
            row
        })
        .collect();
    (header, rows)
}

pub fn trace_csv(records: &[TraceRecord]) -> Result<String, IoError> {
    let (header, rows) = trace_rows(records);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_string(&header, rows)
}

/// Realized delays: one row per iteration `t`, one column per node.
pub fn delays_csv(delays: &[Vec<usize>]) -> Result<String, IoError> {
    let m = delays.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((0..m).map(|i| format!("node{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_string(
        &header,
        delays.iter().enumerate().map(|(t, row)| std::iter::once(t.to_string()).chain(row.iter().map(|d| d.to_string())).collect()),
    )
}

pub const TIMING_COLUMNS: [&str; 3] = ["wall_clock", "sync_gap", "async_gap"];

pub fn timing_csv(cmp: &TimingComparison) -> Result<String, IoError> {
    csv_string(
        &TIMING_COLUMNS,
        cmp.rows.iter().map(|r| vec![r.wall_clock.to_string(), r.sync_gap.to_string(), r.async_gap.to_string()]),
    )
}

/// A numeric CSV read back: header plus rows of floats.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// Parses a CSV whose every field is a number, failing on ragged rows.
pub fn read_numeric_csv(text: &str) -> Result<NumericTable, IoError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| IoError::Parse { line: i + 2, msg: format!("not a number: `{f}`") }))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(NumericTable { header, rows })
}
