//! Grid container: a JSON header, a NUL byte, then `rows·cols` little-endian
//! `f32` values in row-major order. In sidecar mode the header names a
//! separate payload file instead.

use std::f32::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const MAGIC: &str = "TOFGRID";
pub const VERSION: u32 = 1;
pub const DTYPE: &str = "f32";
/// Conventional file extension.
pub const EXTENSION: &str = "tofgrid";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Amplitude,
    Phase,
    Depth,
    Weight,
    Label,
}

impl Domain {
    pub fn default_units(self) -> &'static str {
        match self {
            Domain::Amplitude => "sensor",
            Domain::Phase => "rad",
            Domain::Depth => "mm",
            Domain::Weight | Domain::Label => "1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub magic: String,
    pub version: u32,
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub units: String,
    pub domain: Domain,
    /// Sibling payload file, relative to the header's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_file: Option<String>,
}

impl GridHeader {
    pub fn new(rows: usize, cols: usize, domain: Domain) -> Self {
        Self {
            magic: MAGIC.into(),
            version: VERSION,
            rows,
            cols,
            dtype: DTYPE.into(),
            units: domain.default_units().into(),
            domain,
            payload_file: None,
        }
    }

    pub fn payload_len(&self) -> usize {
        self.rows * self.cols * 4
    }

    fn check(&self) -> Result<()> {
        if self.magic != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}, expected {MAGIC:?}", self.magic)));
        }
        if self.version != VERSION {
            return Err(Error::Format(format!("unsupported version {}", self.version)));
        }
        if self.dtype != DTYPE {
            return Err(Error::Format(format!("unsupported dtype {:?}", self.dtype)));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Format("grid has no pixels".into()));
        }
        Ok(())
    }
}

/// A grid with its header, holding the exact stored `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub header: GridHeader,
    pub data: Grid<f32>,
}

/// Largest `f32` below 2π.
const PHASE_MAX_F32: f32 = f32::from_bits(TAU.to_bits() - 1);

impl GridFile {
    /// Narrows to `f32`. Phase values that would round up to 2π are stored
    /// as the largest `f32` below it.
    pub fn from_f64(grid: &Grid<f64>, domain: Domain) -> Result<Self> {
        let data = grid.map(|&v| {
            let f = v as f32;
            if domain == Domain::Phase && f >= TAU && v < std::f64::consts::TAU {
                PHASE_MAX_F32
            } else {
                f
            }
        });
        let file = Self {
            header: GridHeader::new(grid.rows(), grid.cols(), domain),
            data,
        };
        file.check_values()?;
        Ok(file)
    }

    pub fn to_f64(&self) -> Grid<f64> {
        self.data.map(|&v| v as f64)
    }

    pub fn from_mask(mask: &Grid<bool>) -> Self {
        Self {
            header: GridHeader::new(mask.rows(), mask.cols(), Domain::Label),
            data: mask.map(|&m| if m { 1.0 } else { 0.0 }),
        }
    }

    pub fn to_mask(&self) -> Result<Grid<bool>> {
        self.expect_domain(Domain::Label)?;
        Ok(self.data.map(|&v| v != 0.0))
    }

    pub fn from_labels(labels: &Grid<u32>) -> Result<Self> {
        if labels.iter().any(|&l| l > (1 << 24)) {
            return Err(Error::invalid("labels above 2^24 are not representable"));
        }
        Ok(Self {
            header: GridHeader::new(labels.rows(), labels.cols(), Domain::Label),
            data: labels.map(|&l| l as f32),
        })
    }

    pub fn to_labels(&self) -> Result<Grid<u32>> {
        self.expect_domain(Domain::Label)?;
        if self.data.iter().any(|v| !(v.fract() == 0.0 && *v >= 0.0)) {
            return Err(Error::Format("label grid holds non-integer values".into()));
        }
        Ok(self.data.map(|&v| v as u32))
    }

    pub fn expect_domain(&self, domain: Domain) -> Result<()> {
        if self.header.domain != domain {
            return Err(Error::Format(format!(
                "expected a {domain:?} grid, found {:?}",
                self.header.domain
            )));
        }
        Ok(())
    }

    fn check_values(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Format(msg.to_string()));
        match self.header.domain {
            Domain::Phase => {
                if self.data.iter().any(|v| !(0.0..TAU).contains(v)) {
                    return bad("phase grid holds values outside [0, 2π)");
                }
            }
            Domain::Depth => {
                if self.data.iter().any(|v| v.is_nan() || *v < 0.0 || *v == f32::NEG_INFINITY) {
                    return bad("depth grid holds negative or NaN values");
                }
            }
            Domain::Weight => {
                if self.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return bad("weight grid holds values outside [0, 1]");
                }
            }
            Domain::Amplitude | Domain::Label => {
                if self.data.iter().any(|v| !v.is_finite()) {
                    return bad("grid holds non-finite values");
                }
            }
        }
        Ok(())
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header.payload_len());
        for v in self.data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Single-file encoding.
    pub fn encode(&self) -> Vec<u8> {
        let mut header = self.header.clone();
        header.payload_file = None;
        let mut out = serde_json::to_vec(&header).expect("header serialises");
        out.push(0);
        out.extend(self.payload());
        out
    }

    /// Parses a single-file encoding.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let nul = bytes
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| Error::Format("no NUL separator after header".into()))?;
        let header: GridHeader = parse_header(&bytes[..nul])?;
        Self::from_parts(header, &bytes[nul + 1..])
    }

    fn from_parts(header: GridHeader, payload: &[u8]) -> Result<Self> {
        header.check()?;
        let expected = header.payload_len();
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "payload is {} bytes, expected {expected} bytes for {}x{} f32",
                payload.len(),
                header.rows,
                header.cols
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let file = Self {
            data: Grid::from_vec(header.rows, header.cols, values)?,
            header,
        };
        file.check_values()?;
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(Error::file(path))?;
        Ok(())
    }

    /// Writes the header to `path` and the payload to a sibling file with a
    /// `.bin` extension.
    pub fn write_sidecar(&self, path: &Path) -> Result<PathBuf> {
        let payload_path = path.with_extension("bin");
        let name = payload_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::invalid("payload path is not valid UTF-8"))?
            .to_string();
        let mut header = self.header.clone();
        header.payload_file = Some(name);
        fs::write(&payload_path, self.payload())?;
        fs::write(path, serde_json::to_vec_pretty(&header)?)?;
        Ok(payload_path)
    }

    /// Reads either encoding.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::file(path))?;
        if let Some(nul) = bytes.iter().position(|&b| b == 0) {
            let header = parse_header(&bytes[..nul])?;
            return Self::from_parts(header, &bytes[nul + 1..]);
        }
        let header = parse_header(&bytes)?;
        let Some(name) = header.payload_file.clone() else {
            return Err(Error::Format(format!(
                "{}: header has neither an inline payload nor a payload_file",
                path.display()
            )));
        };
        let sibling = path.parent().unwrap_or(Path::new(".")).join(name);
        let payload = fs::read(&sibling).map_err(Error::file(&sibling))?;
        Self::from_parts(header, &payload)
    }
}

fn parse_header(bytes: &[u8]) -> Result<GridHeader> {
    serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("malformed grid header: {e}")))
}

/// Reads a grid and checks its domain.
pub fn read_grid(path: &Path, domain: Domain) -> Result<Grid<f64>> {
    let file = GridFile::read(path)?;
    file.expect_domain(domain)?;
    Ok(file.to_f64())
}

pub fn write_grid(path: &Path, grid: &Grid<f64>, domain: Domain) -> Result<()> {
    GridFile::from_f64(grid, domain)?.write(path)
}
