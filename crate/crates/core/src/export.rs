//! CSV tables and binary PGM heatmaps.

use crate::lattice::WiredDomain;
use std::io::{self, Write};

/// A CSV table with a header row, written with RFC 4180 quoting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_to<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out);
        w.write_record(&self.header).map_err(io::Error::from)?;
        for r in &self.rows {
            w.write_record(r).map_err(io::Error::from)?;
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }
}

/// Shortest representation that round-trips.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// A grayscale heatmap with the affine map `gray = round(255 (v − lo)/(hi − lo))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub lo: f64,
    pub hi: f64,
    pub pixels: Vec<u8>,
}

impl Pgm {
    /// `values[row * width + col]`, row 0 at the top; `None` cells are drawn black.
    pub fn from_values(width: usize, height: usize, values: &[Option<f64>]) -> Self {
        assert_eq!(values.len(), width * height);
        let finite = values.iter().flatten().filter(|v| v.is_finite());
        let lo = finite.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
        let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
        let pixels = values
            .iter()
            .map(|v| match v {
                Some(x) if x.is_finite() => ((x - lo) * scale).round().clamp(0.0, 255.0) as u8,
                _ => 0,
            })
            .collect();
        Pgm {
            width,
            height,
            lo,
            hi,
            pixels,
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "P5\n# gray = 255*(value-({}))/(({})-({}))\n{} {}\n255\n", self.lo, self.hi, self.lo, self.width, self.height)?;
        out.write_all(&self.pixels)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }
}

/// Heatmap of per-site values over the domain's bounding box; `y` increases upward.
pub fn site_heatmap(domain: &WiredDomain, values: &[f64]) -> Pgm {
    let sites = domain.sites();
    let x0 = sites.iter().map(|s| s.x).min().unwrap_or(0);
    let x1 = sites.iter().map(|s| s.x).max().unwrap_or(0);
    let y0 = sites.iter().map(|s| s.y).min().unwrap_or(0);
    let y1 = sites.iter().map(|s| s.y).max().unwrap_or(0);
    let (w, h) = ((x1 - x0 + 1) as usize, (y1 - y0 + 1) as usize);
    let mut cells = vec![None; w * h];
    for (s, &v) in sites.iter().zip(values) {
        let row = (y1 - s.y) as usize;
        cells[row * w + (s.x - x0) as usize] = Some(v);
    }
    Pgm::from_values(w, h, &cells)
}
