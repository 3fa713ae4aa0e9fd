//! Flat parameter vectors, memory-unit partitioning, and per-unit drift.
//!
//! A model's trainable state is a flat `f64` sequence carved into named
//! segments. Drift between two snapshots is scored per memory unit, where a
//! unit is a contiguous index range chosen by a [`Granularity`] policy.

use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;

/// Named contiguous range inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn new(name: impl Into<String>, start: usize, end: usize) -> Self {
        Segment {
            name: name.into(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// Flat real-valued parameter state, partitioned into named segments.
///
/// Invariants enforced at construction and after every combining operation:
/// all values finite, segments sorted, disjoint, and covering `[0, len)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    segments: Vec<Segment>,
}

impl ParamVector {
    /// Builds a vector from values and a segment table covering them exactly.
    pub fn new(values: Vec<f64>, segments: Vec<Segment>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value at index {pos}"
            )));
        }
        validate_segments(&segments, values.len())?;
        Ok(ParamVector { values, segments })
    }

    /// Single-segment vector named `params`, for callers without a layout.
    pub fn unlabeled(values: Vec<f64>) -> Result<Self> {
        let len = values.len();
        ParamVector::new(values, vec![Segment::new("params", 0, len)])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Errors unless `other` has identical length and segment table.
    pub fn ensure_combinable(&self, other: &ParamVector) -> Result<()> {
        if self.values.len() != other.values.len() {
            return Err(Error::shape(format!(
                "length mismatch: {} vs {}",
                self.values.len(),
                other.values.len()
            )));
        }
        if self.segments != other.segments {
            return Err(Error::shape("segment tables differ"));
        }
        Ok(())
    }

    /// Replaces the values, keeping the segment table. Length must match.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::shape(format!(
                "length mismatch: {} vs {}",
                values.len(),
                self.values.len()
            )));
        }
        ParamVector::new(values, self.segments.clone())
    }

    /// Writes the snapshot format: two ASCII header lines followed by the
    /// values as little-endian 64-bit floats.
    ///
    /// ```text
    /// LONGCL-PV v1 <len>\n
    /// <nsegs> <name> <start> <end> ...\n
    /// <len * 8 bytes>
    /// ```
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "LONGCL-PV v1 {}", self.values.len())?;
        let mut table = String::new();
        write!(table, "{}", self.segments.len()).expect("string write");
        for s in &self.segments {
            if s.name.chars().any(|c| c.is_whitespace()) {
                return Err(Error::config(format!(
                    "segment name {:?} contains whitespace",
                    s.name
                )));
            }
            write!(table, " {} {} {}", s.name, s.start, s.end).expect("string write");
        }
        writeln!(w, "{table}")?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_snapshot(std::io::BufWriter::new(file))
    }

    /// Parses the snapshot format written by [`ParamVector::write_snapshot`].
    pub fn read_snapshot<R: Read>(r: R) -> Result<Self> {
        let mut reader = std::io::BufReader::new(r);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let mut fields = header.split_whitespace();
        match (fields.next(), fields.next()) {
            (Some("LONGCL-PV"), Some("v1")) => {}
            _ => return Err(Error::config("bad snapshot header")),
        }
        let len: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::config("bad snapshot length field"))?;

        let mut table = String::new();
        reader.read_line(&mut table)?;
        let mut fields = table.split_whitespace();
        let nsegs: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::config("bad segment count"))?;
        let mut segments = Vec::with_capacity(nsegs);
        for _ in 0..nsegs {
            let name = fields
                .next()
                .ok_or_else(|| Error::config("truncated segment table"))?;
            let start: usize = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::config("bad segment start"))?;
            let end: usize = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::config("bad segment end"))?;
            segments.push(Segment::new(name, start, end));
        }

        let mut buf = vec![0u8; len * 8];
        reader.read_exact(&mut buf)?;
        let values: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        ParamVector::new(values, segments)
    }

    pub fn load_snapshot(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        ParamVector::read_snapshot(file)
    }
}

fn validate_segments(segments: &[Segment], len: usize) -> Result<()> {
    if segments.is_empty() {
        if len == 0 {
            return Ok(());
        }
        return Err(Error::shape("no segments for non-empty vector"));
    }
    let mut cursor = 0usize;
    for s in segments {
        if s.start != cursor {
            return Err(Error::shape(format!(
                "segment {:?} starts at {} but previous coverage ends at {cursor}",
                s.name, s.start
            )));
        }
        if s.end < s.start {
            return Err(Error::shape(format!("segment {:?} has negative extent", s.name)));
        }
        cursor = s.end;
    }
    if cursor != len {
        return Err(Error::shape(format!(
            "segments cover [0, {cursor}) but the vector has length {len}"
        )));
    }
    Ok(())
}

/// Memory-unit sizing policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    /// Every scalar is its own unit.
    Scalar,
    /// Contiguous rows of the given width inside each segment. The width
    /// must divide every segment length.
    Row(usize),
    /// Each named segment is one unit.
    Segment,
}

/// Ordered list of disjoint contiguous index ranges covering a vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitPartition {
    units: Vec<Range<usize>>,
    total_len: usize,
}

impl UnitPartition {
    /// Partition over `[0, param_len)` treated as a single segment.
    pub fn make(param_len: usize, granularity: Granularity) -> Result<Self> {
        if param_len == 0 {
            return Err(Error::config("cannot partition an empty vector"));
        }
        let seg = [Segment::new("params", 0, param_len)];
        UnitPartition::from_segments(&seg, granularity)
    }

    /// Partition respecting segment boundaries: `Row` chunks each segment.
    pub fn from_segments(segments: &[Segment], granularity: Granularity) -> Result<Self> {
        let total_len = segments.last().map(|s| s.end).unwrap_or(0);
        validate_segments(segments, total_len)?;
        if total_len == 0 {
            return Err(Error::config("cannot partition an empty vector"));
        }
        let mut units = Vec::new();
        match granularity {
            Granularity::Scalar => {
                units.extend((0..total_len).map(|i| i..i + 1));
            }
            Granularity::Row(width) => {
                if width == 0 {
                    return Err(Error::config("row width must be positive"));
                }
                for s in segments {
                    if s.len() % width != 0 {
                        return Err(Error::config(format!(
                            "row width {width} does not divide segment {:?} of length {}",
                            s.name,
                            s.len()
                        )));
                    }
                    let mut start = s.start;
                    while start < s.end {
                        units.push(start..start + width);
                        start += width;
                    }
                }
            }
            Granularity::Segment => {
                units.extend(segments.iter().map(Segment::range));
            }
        }
        Ok(UnitPartition { units, total_len })
    }

    /// Builds a partition from explicit unit ranges, validating that they are
    /// sorted, disjoint, and cover `[0, total_len)`.
    pub fn from_ranges(units: Vec<Range<usize>>, total_len: usize) -> Result<Self> {
        let mut cursor = 0usize;
        for (i, u) in units.iter().enumerate() {
            if u.start != cursor || u.end <= u.start {
                return Err(Error::shape(format!(
                    "unit {i} ({}..{}) breaks coverage at {cursor}",
                    u.start, u.end
                )));
            }
            cursor = u.end;
        }
        if cursor != total_len {
            return Err(Error::shape(format!(
                "units cover [0, {cursor}) but expected [0, {total_len})"
            )));
        }
        if units.is_empty() {
            return Err(Error::config("a partition needs at least one unit"));
        }
        Ok(UnitPartition { units, total_len })
    }

    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    pub fn units(&self) -> &[Range<usize>] {
        &self.units
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn ensure_covers(&self, v: &ParamVector) -> Result<()> {
        if self.total_len != v.len() {
            return Err(Error::shape(format!(
                "partition covers {} scalars but the vector has {}",
                self.total_len,
                v.len()
            )));
        }
        Ok(())
    }
}

/// Per-unit nonnegative drift magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftScores {
    values: Vec<f64>,
}

impl DriftScores {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Euclidean norm of `prev - curr` restricted to each unit.
pub fn compute_drift(
    prev: &ParamVector,
    curr: &ParamVector,
    part: &UnitPartition,
) -> Result<DriftScores> {
    prev.ensure_combinable(curr)?;
    part.ensure_covers(prev)?;
    let a = prev.values();
    let b = curr.values();
    let units = part.units();
    let values = parallel::map_indexed(units.len(), |i| {
        let u = units[i].clone();
        let mut acc = 0.0f64;
        for j in u {
            let d = a[j] - b[j];
            acc += d * d;
        }
        acc.sqrt()
    });
    Ok(DriftScores { values })
}
