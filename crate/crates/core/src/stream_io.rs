//! The `netcp-stream v1` text format.
//!
//! ```text
//! netcp-stream v1 n=<n> t_max=<T> self_loops=<0|1>
//! t,i,j,y,omega
//! ...
//! ```
//!
//! Indices are 1-based with `i <= j` (the lower triangle follows by
//! symmetry), records are sorted by `(t, i, j)`, and unobserved entries may
//! be omitted.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use crate::completion::MaskedSnapshot;
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Mask};
use crate::simulation::GroundTruth;

pub const MAGIC: &str = "netcp-stream v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub n: usize,
    pub t_max: usize,
    pub self_loops: bool,
}

impl StreamHeader {
    pub fn parse(line: &str) -> Result<Self> {
        let bad = |reason: &str| Error::Format { line: 1, reason: reason.to_string() };
        let rest = line.trim_end().strip_prefix(MAGIC).ok_or_else(|| bad("missing 'netcp-stream v1' header"))?;
        let fields: Vec<&str> = rest.split_whitespace().collect();
        let [n, t_max, loops] = fields.as_slice() else {
            return Err(bad("header needs n=, t_max= and self_loops= fields"));
        };
        let value = |field: &str, key: &str| -> Result<usize> {
            field
                .strip_prefix(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(&format!("bad header field '{field}'")))
        };
        let header = StreamHeader {
            n: value(n, "n=")?,
            t_max: value(t_max, "t_max=")?,
            self_loops: match value(loops, "self_loops=")? {
                0 => false,
                1 => true,
                _ => return Err(bad("self_loops must be 0 or 1")),
            },
        };
        if header.n == 0 {
            return Err(bad("n must be positive"));
        }
        Ok(header)
    }

    pub fn render(&self) -> String {
        format!("{MAGIC} n={} t_max={} self_loops={}", self.n, self.t_max, u8::from(self.self_loops))
    }
}

/// Whether unobserved entries are written out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Emission {
    /// Every `i <= j` entry, observed or not.
    Full,
    /// Only observed entries.
    #[default]
    Compact,
}

pub fn write_stream<W: Write>(
    out: &mut W,
    snapshots: &[MaskedSnapshot],
    self_loops: bool,
    emission: Emission,
) -> Result<()> {
    let n = snapshots.first().map_or(0, |s| s.n());
    if n == 0 {
        return Err(Error::config("cannot write an empty stream"));
    }
    let header = StreamHeader { n, t_max: snapshots.len(), self_loops };
    writeln!(out, "{}", header.render())?;
    for (idx, snap) in snapshots.iter().enumerate() {
        if snap.t() != idx + 1 {
            return Err(Error::NonContiguous { expected: idx + 1, found: snap.t() });
        }
        if snap.n() != n {
            return Err(Error::DimensionMismatch { expected: n, found: snap.n() });
        }
        for i in 0..n {
            for j in i..n {
                let seen = snap.omega().get(i, j);
                if !seen && emission == Emission::Compact {
                    continue;
                }
                let y = snap.y().get(i, j);
                let y = if y == 0.0 {
                    0
                } else if y == 1.0 {
                    1
                } else {
                    return Err(Error::InvalidSnapshot { t: snap.t(), reason: format!("non-binary entry {y}") });
                };
                writeln!(out, "{},{},{},{},{}", snap.t(), i + 1, j + 1, y, u8::from(seen))?;
            }
        }
    }
    Ok(())
}

pub fn write_stream_file(path: &Path, snapshots: &[MaskedSnapshot], self_loops: bool, emission: Emission) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_stream(&mut file, snapshots, self_loops, emission)?;
    file.flush()?;
    Ok(())
}

/// Incremental parser: feed record lines, collect snapshots as their time
/// step completes.
#[derive(Debug)]
pub struct StreamParser {
    header: StreamHeader,
    line: usize,
    next_t: usize,
    last_key: Option<(usize, usize, usize)>,
    y: DenseMatrix,
    omega: Mask,
}

impl StreamParser {
    pub fn new(header: StreamHeader) -> Self {
        StreamParser {
            header,
            line: 1,
            next_t: 1,
            last_key: None,
            y: DenseMatrix::zeros(header.n),
            omega: Mask::filled(header.n, false),
        }
    }

    pub fn header(&self) -> StreamHeader {
        self.header
    }

    /// Time index of the snapshot currently being assembled.
    pub fn pending_t(&self) -> usize {
        self.next_t
    }

    /// Whether any record of the snapshot being assembled has been read.
    pub fn has_pending_records(&self) -> bool {
        self.last_key.is_some_and(|(t, _, _)| t == self.next_t)
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Format { line: self.line, reason: reason.into() }
    }

    /// Parses one record line; returns the snapshots it completed.
    pub fn push_line(&mut self, raw: &str) -> Result<Vec<MaskedSnapshot>> {
        self.line += 1;
        let line = raw.trim();
        if line.is_empty() {
            return Ok(Vec::new());
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(self.err(format!("expected 5 fields, found {}", fields.len())));
        }
        let mut nums = [0usize; 5];
        for (slot, f) in nums.iter_mut().zip(&fields) {
            *slot = f.trim().parse().map_err(|_| self.err(format!("not an integer: '{f}'")))?;
        }
        let [t, i, j, y, omega] = nums;
        let n = self.header.n;
        if t < 1 || t > self.header.t_max {
            return Err(self.err(format!("t={t} outside 1..={}", self.header.t_max)));
        }
        if i < 1 || i > j || j > n {
            return Err(self.err(format!("need 1 <= i <= j <= {n}, got i={i}, j={j}")));
        }
        if y > 1 || omega > 1 {
            return Err(self.err("y and omega must be 0 or 1"));
        }
        if omega == 0 && y == 1 {
            return Err(self.err("y must be 0 when omega is 0"));
        }
        if i == j && omega == 1 && !self.header.self_loops {
            return Err(self.err("observed diagonal entry in a stream without self loops"));
        }
        if self.last_key.is_some_and(|k| k >= (t, i, j)) {
            return Err(self.err("records must be strictly sorted by (t, i, j)"));
        }
        self.last_key = Some((t, i, j));

        let mut done = Vec::new();
        while self.next_t < t {
            done.push(self.finalize_pending()?);
        }
        let (i, j) = (i - 1, j - 1);
        self.omega.set(i, j, omega == 1);
        self.y.set(i, j, y as f64);
        self.y.set(j, i, y as f64);
        Ok(done)
    }

    /// Closes the snapshot being assembled even if no later record arrived.
    pub fn finalize_pending(&mut self) -> Result<MaskedSnapshot> {
        if self.next_t > self.header.t_max {
            return Err(self.err("stream already complete"));
        }
        let n = self.header.n;
        let y = std::mem::replace(&mut self.y, DenseMatrix::zeros(n));
        let omega = std::mem::replace(&mut self.omega, Mask::filled(n, false));
        let snap = MaskedSnapshot::new(self.next_t, y, omega)?;
        self.next_t += 1;
        Ok(snap)
    }

    /// Completes every remaining time step up to `t_max`.
    pub fn finish(mut self) -> Result<Vec<MaskedSnapshot>> {
        let mut done = Vec::new();
        while self.next_t <= self.header.t_max {
            done.push(self.finalize_pending()?);
        }
        Ok(done)
    }
}

pub fn read_stream<R: BufRead>(reader: R) -> Result<(StreamHeader, Vec<MaskedSnapshot>)> {
    let mut lines = reader.lines();
    let first = lines.next().ok_or(Error::Format { line: 1, reason: "empty file".into() })??;
    let header = StreamHeader::parse(&first)?;
    let mut parser = StreamParser::new(header);
    let mut snapshots = Vec::with_capacity(header.t_max);
    for line in lines {
        snapshots.extend(parser.push_line(&line?)?);
    }
    snapshots.extend(parser.finish()?);
    Ok((header, snapshots))
}

pub fn read_stream_file(path: &Path) -> Result<(StreamHeader, Vec<MaskedSnapshot>)> {
    read_stream(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// `<stream>.truth.json`
pub fn truth_sidecar_path(stream: &Path) -> PathBuf {
    let mut name = stream.as_os_str().to_owned();
    name.push(".truth.json");
    PathBuf::from(name)
}

pub fn write_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    std::fs::write(path, serde_json::to_string(truth)?)?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
