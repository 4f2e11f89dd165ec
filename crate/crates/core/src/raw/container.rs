//! `RAWD` container: a 24-byte little-endian header followed by 16-bit planar
//! samples.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "RAWD"
//!      4     2  u16 version (1)
//!      6     2  u16 channels (4)
//!      8     4  u32 height (pack rows)
//!     12     4  u32 width  (pack columns)
//!     16     4  f32 black level
//!     20     4  f32 white level
//!     24   ...  u16 samples, planes R, G1, G2, B, each row-major
//! ```
//!
//! Each file has a TOML sidecar (`<name>.meta.toml`) repeating the shape,
//! levels and CFA for tools that do not parse the binary header.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Cfa, Planes, RawImage};
use crate::error::{bail, Error, Result};

pub const MAGIC: &[u8; 4] = b"RAWD";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;

/// Serializes a RAW pack. Samples are rounded to the nearest count and
/// clamped to the u16 range.
pub fn encode_raw(raw: &RawImage) -> Result<Vec<u8>> {
    let (h, w) = (raw.height(), raw.width());
    let h32 = u32::try_from(h).map_err(|_| Error::InvalidArgument(format!("height {h} too large")))?;
    let w32 = u32::try_from(w).map_err(|_| Error::InvalidArgument(format!("width {w} too large")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + raw.planes.data.len() * 2);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&h32.to_le_bytes());
    out.extend_from_slice(&w32.to_le_bytes());
    out.extend_from_slice(&(raw.black_level as f32).to_le_bytes());
    out.extend_from_slice(&(raw.white_level as f32).to_le_bytes());
    for &v in &raw.planes.data {
        let s = v.round().clamp(0.0, u16::MAX as f64) as u16;
        out.extend_from_slice(&s.to_le_bytes());
    }
    Ok(out)
}

fn u16_at(b: &[u8], o: usize) -> u16 {
    u16::from_le_bytes([b[o], b[o + 1]])
}

fn u32_at(b: &[u8], o: usize) -> u32 {
    u32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]])
}

fn f32_at(b: &[u8], o: usize) -> f32 {
    f32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]])
}

/// Parses a `RAWD` buffer, validating every header field and the exact length.
pub fn decode_raw(bytes: &[u8]) -> Result<RawImage> {
    if bytes.len() < HEADER_LEN {
        bail!(Data, "RAWD buffer of {} bytes is shorter than the header", bytes.len());
    }
    if &bytes[0..4] != MAGIC {
        bail!(Data, "bad magic {:?}", &bytes[0..4]);
    }
    let version = u16_at(bytes, 4);
    if version != VERSION {
        bail!(Data, "unsupported RAWD version {version}");
    }
    let channels = u16_at(bytes, 6);
    if channels != 4 {
        bail!(Data, "RAWD channel count {channels}, expected 4");
    }
    let h = u32_at(bytes, 8) as usize;
    let w = u32_at(bytes, 12) as usize;
    if h == 0 || w == 0 {
        bail!(Data, "RAWD shape {h}x{w} is empty");
    }
    let black = f32_at(bytes, 16) as f64;
    let white = f32_at(bytes, 20) as f64;
    if !(black.is_finite() && white.is_finite() && black < white) {
        bail!(Data, "RAWD levels black={black} white={white} are invalid");
    }
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Data(format!("RAWD shape {h}x{w} overflows")))?;
    let expected = n
        .checked_mul(2)
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Data("RAWD size overflows".into()))?;
    if bytes.len() != expected {
        bail!(Data, "RAWD payload is {} bytes, header implies {expected}", bytes.len());
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
        .collect();
    RawImage::new(Planes::from_vec(4, h, w, data)?, black, white).map_err(|e| Error::Data(e.to_string()))
}

/// Human-readable description stored next to each RAW file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSidecar {
    pub format: String,
    pub version: u16,
    pub cfa: Cfa,
    pub channels: u16,
    pub height: u32,
    pub width: u32,
    pub black_level: f64,
    pub white_level: f64,
}

impl RawSidecar {
    pub fn describe(raw: &RawImage) -> Self {
        RawSidecar {
            format: "RAWD".into(),
            version: VERSION,
            cfa: raw.cfa,
            channels: 4,
            height: raw.height() as u32,
            width: raw.width() as u32,
            black_level: raw.black_level as f32 as f64,
            white_level: raw.white_level as f32 as f64,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let s: RawSidecar = toml::from_str(text).map_err(|e| Error::Data(format!("RAW sidecar: {e}")))?;
        if s.format != "RAWD" || s.channels != 4 {
            bail!(Data, "RAW sidecar describes {} with {} channels", s.format, s.channels);
        }
        Ok(s)
    }
}

pub fn sidecar_path(raw_path: &Path) -> PathBuf {
    let mut name = raw_path.file_stem().unwrap_or_default().to_os_string();
    name.push(".meta.toml");
    raw_path.with_file_name(name)
}

/// Writes the container and its sidecar.
pub fn write_raw(path: &Path, raw: &RawImage) -> Result<()> {
    fs::write(path, encode_raw(raw)?).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let text = toml::to_string(&RawSidecar::describe(raw)).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&side, text).map_err(|e| Error::io(side, e))
}

pub fn read_raw(path: &Path) -> Result<RawImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
