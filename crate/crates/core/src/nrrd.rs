//! A small, strict NRRD subset: 3D `uint8` masks and `float` scalar
//! volumes, raw or gzip encoded, little endian, axis-aligned spacing.
//!
//! Writing always emits the same header fields in the same order, so equal
//! volumes produce byte-identical files.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{DType, Dims, Spacing, Volume3D, VolumeData};

const MAGIC: &str = "NRRD0004";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Encoding {
    #[default]
    Raw,
    Gzip,
}

impl std::str::FromStr for Encoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Encoding::Raw),
            "gzip" | "gz" => Ok(Encoding::Gzip),
            other => Err(Error::Unsupported(format!("encoding '{other}'"))),
        }
    }
}

/// Parsed header fields of the supported subset.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeHeader {
    pub dims: Dims,
    pub spacing: Spacing,
    pub dtype: DType,
    pub encoding: Encoding,
}

impl VolumeHeader {
    fn render(&self) -> String {
        let [sx, sy, sz] = self.spacing;
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        let ty = match self.dtype {
            DType::MaskU8 => "uint8",
            DType::ScalarF32 => "float",
        };
        out.push_str(&format!("type: {ty}\n"));
        out.push_str("dimension: 3\n");
        out.push_str(&format!(
            "sizes: {} {} {}\n",
            self.dims.nx, self.dims.ny, self.dims.nz
        ));
        out.push_str(&format!(
            "space directions: ({sx},0,0) (0,{sy},0) (0,0,{sz})\n"
        ));
        let enc = match self.encoding {
            Encoding::Raw => "raw",
            Encoding::Gzip => "gzip",
        };
        out.push_str(&format!("encoding: {enc}\n"));
        if self.dtype == DType::ScalarF32 {
            out.push_str("endian: little\n");
        }
        out.push('\n');
        out
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::MalformedHeader(format!("bad number '{s}'")))
}

/// Parses `(a,b,c) (d,e,f) (g,h,i)`; only diagonal matrices are accepted.
fn parse_space_directions(value: &str) -> Result<Spacing> {
    let mut vectors = Vec::new();
    for part in value.split(')') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let inner = part
            .strip_prefix('(')
            .ok_or_else(|| Error::MalformedHeader(format!("space directions '{value}'")))?;
        let comps = inner
            .split(',')
            .map(parse_f64)
            .collect::<Result<Vec<_>>>()?;
        if comps.len() != 3 {
            return Err(Error::MalformedHeader(format!(
                "space direction '{part})' needs 3 components"
            )));
        }
        vectors.push(comps);
    }
    if vectors.len() != 3 {
        return Err(Error::MalformedHeader(format!(
            "expected 3 space directions, found {}",
            vectors.len()
        )));
    }
    let mut spacing = [0.0; 3];
    for (axis, v) in vectors.iter().enumerate() {
        for (j, c) in v.iter().enumerate() {
            if j != axis && *c != 0.0 {
                return Err(Error::Unsupported(
                    "non-diagonal space directions".to_string(),
                ));
            }
        }
        spacing[axis] = v[axis];
    }
    Ok(spacing)
}

fn parse_header(text: &str) -> Result<VolumeHeader> {
    let mut lines = text.lines();
    let magic = lines.next().unwrap_or("");
    if !magic.starts_with("NRRD000") {
        return Err(Error::MalformedHeader(format!("bad magic '{magic}'")));
    }
    let mut dtype = None;
    let mut dimension = None;
    let mut sizes = None;
    let mut spacing = None;
    let mut encoding = None;
    for line in lines {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        // key:=value pairs carry free-form metadata.
        if line.contains(":=") {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| Error::MalformedHeader(format!("line '{line}'")))?;
        let value = value.trim();
        match key.trim() {
            "type" => {
                dtype = Some(match value {
                    "uint8" | "uchar" | "unsigned char" | "uint8_t" => DType::MaskU8,
                    "float" => DType::ScalarF32,
                    other => return Err(Error::Unsupported(format!("type '{other}'"))),
                })
            }
            "dimension" => {
                let d: usize = value
                    .parse()
                    .map_err(|_| Error::MalformedHeader(format!("dimension '{value}'")))?;
                if d != 3 {
                    return Err(Error::Unsupported(format!("dimension {d}")));
                }
                dimension = Some(d);
            }
            "sizes" => {
                let s = value
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<usize>()
                            .map_err(|_| Error::MalformedHeader(format!("sizes '{value}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if s.len() != 3 || s.contains(&0) {
                    return Err(Error::MalformedHeader(format!("sizes '{value}'")));
                }
                sizes = Some(Dims::new(s[0], s[1], s[2]));
            }
            "space directions" => spacing = Some(parse_space_directions(value)?),
            "spacings" => {
                if spacing.is_none() {
                    let s = value
                        .split_whitespace()
                        .map(parse_f64)
                        .collect::<Result<Vec<_>>>()?;
                    if s.len() != 3 {
                        return Err(Error::MalformedHeader(format!("spacings '{value}'")));
                    }
                    spacing = Some([s[0], s[1], s[2]]);
                }
            }
            "encoding" => encoding = Some(value.parse::<Encoding>()?),
            "endian" => {
                if value != "little" {
                    return Err(Error::Unsupported(format!("endian '{value}'")));
                }
            }
            "data file" | "datafile" => {
                return Err(Error::Unsupported("detached data files".to_string()))
            }
            _ => {}
        }
    }
    let missing = |f: &str| Error::MalformedHeader(format!("missing field '{f}'"));
    dimension.ok_or_else(|| missing("dimension"))?;
    let spacing = spacing.unwrap_or([1.0; 3]);
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::MalformedHeader(format!(
            "spacing must be positive, got {spacing:?}"
        )));
    }
    Ok(VolumeHeader {
        dims: sizes.ok_or_else(|| missing("sizes"))?,
        spacing,
        dtype: dtype.ok_or_else(|| missing("type"))?,
        encoding: encoding.ok_or_else(|| missing("encoding"))?,
    })
}

/// Splits a file into header text and payload at the first blank line.
fn split_header(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let mut pos = 0;
    while pos < bytes.len() {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .ok_or_else(|| Error::MalformedHeader("header not terminated".into()))?;
        let line = &bytes[pos..end];
        if line.is_empty() || line == b"\r" {
            let header = std::str::from_utf8(&bytes[..pos])
                .map_err(|_| Error::MalformedHeader("header is not utf-8".into()))?;
            return Ok((header, &bytes[end + 1..]));
        }
        pos = end + 1;
    }
    Err(Error::MalformedHeader("header not terminated".into()))
}

/// Decodes an in-memory NRRD file.
pub fn decode_nrrd(bytes: &[u8]) -> Result<Volume3D> {
    let (text, payload) = split_header(bytes)?;
    let header = parse_header(text)?;
    let raw = match header.encoding {
        Encoding::Raw => payload.to_vec(),
        Encoding::Gzip => {
            let mut out = Vec::new();
            GzDecoder::new(payload)
                .read_to_end(&mut out)
                .map_err(|e| Error::MalformedHeader(format!("gzip payload: {e}")))?;
            out
        }
    };
    let n = header.dims.len();
    let width = match header.dtype {
        DType::MaskU8 => 1,
        DType::ScalarF32 => 4,
    };
    if raw.len() != n * width {
        return Err(Error::DataLength {
            expected: n * width,
            found: raw.len(),
        });
    }
    match header.dtype {
        DType::MaskU8 => Volume3D::from_mask(header.dims, header.spacing, raw),
        DType::ScalarF32 => {
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Volume3D::from_scalar(header.dims, header.spacing, data)
        }
    }
}

/// Encodes a volume as NRRD bytes.
pub fn encode_nrrd(vol: &Volume3D, encoding: Encoding) -> Vec<u8> {
    let header = VolumeHeader {
        dims: vol.dims(),
        spacing: vol.spacing(),
        dtype: vol.dtype(),
        encoding,
    };
    let payload: Vec<u8> = match vol.data() {
        VolumeData::Mask(m) => m.clone(),
        VolumeData::Scalar(s) => s.iter().flat_map(|v| v.to_le_bytes()).collect(),
    };
    let mut out = header.render().into_bytes();
    match encoding {
        Encoding::Raw => out.extend_from_slice(&payload),
        Encoding::Gzip => {
            let mut enc = GzEncoder::new(Vec::new(), Compression::default());
            enc.write_all(&payload).expect("in-memory write");
            out.extend(enc.finish().expect("in-memory write"));
        }
    }
    out
}

pub fn read_nrrd(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_nrrd(&bytes)
}

pub fn write_nrrd(vol: &Volume3D, path: impl AsRef<Path>, encoding: Encoding) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_nrrd(vol, encoding)).map_err(|e| Error::io(path, e))
}
