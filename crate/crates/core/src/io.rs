//! Binary file formats.
//!
//! `TTFS` feature matrix: magic `TTFS`, u16 version, u32 rows, u32 cols, then
//! `rows * cols` little-endian f32 values in row-major order.
//!
//! `TTMD` model: magic `TTMD`, u16 version, u32-length-prefixed UTF-8 text
//! encoder id, u32 modality count followed by (u32-length-prefixed id, u32 dim)
//! pairs, u32 shared_dim, u32 text_dim, then every parameter block as
//! little-endian f32 in declaration order.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::encoder::{DualEncoderParams, EncoderSpec, ModalitySpec};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"TTFS";
pub const MODEL_MAGIC: &[u8; 4] = b"TTMD";
pub const FORMAT_VERSION: u16 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format {
                what: self.what,
                detail: format!("truncated at byte {}", self.pos),
            })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| Error::Format {
            what: self.what,
            detail: e.to_string(),
        })
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format {
            what: self.what,
            detail: "size overflow".into(),
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format {
                what: self.what,
                detail: "bad magic".into(),
            });
        }
        let version = self.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format {
                what: self.what,
                detail: format!("unsupported version {version}"),
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format {
                what: self.what,
                detail: format!("{} trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn encode_features(m: &DenseMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(14 + 4 * m.data().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, m.rows())?;
    put_u32(&mut out, m.cols())?;
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses a feature matrix. Non-finite values are reported as [`Error::NonFiniteData`] under `name`.
pub fn decode_features(bytes: &[u8], name: &str) -> Result<DenseMatrix> {
    let mut r = Reader::new(bytes, "TTFS file");
    r.header(FEATURE_MAGIC)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let data = r.f32s(rows * cols)?;
    r.finish()?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteData(name.to_string()));
    }
    DenseMatrix::from_vec(rows, cols, data)
}

pub fn write_features(path: &Path, m: &DenseMatrix) -> Result<()> {
    fs::write(path, encode_features(m)?)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<DenseMatrix> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_features(&fs::read(path)?, &path.display().to_string())
}

pub fn encode_model(p: &DualEncoderParams) -> Result<Vec<u8>> {
    let spec = p.spec();
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_str(&mut out, &spec.text_encoder_id)?;
    put_u32(&mut out, spec.modalities.len())?;
    for m in &spec.modalities {
        put_str(&mut out, &m.id)?;
        put_u32(&mut out, m.dim)?;
    }
    put_u32(&mut out, spec.shared_dim)?;
    put_u32(&mut out, spec.text_dim)?;
    for &v in p.theta() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<DualEncoderParams> {
    let mut r = Reader::new(bytes, "TTMD file");
    r.header(MODEL_MAGIC)?;
    let text_encoder_id = r.string()?;
    let count = r.u32()? as usize;
    let mut modalities = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let id = r.string()?;
        let dim = r.u32()? as usize;
        modalities.push(ModalitySpec { id, dim });
    }
    let shared_dim = r.u32()? as usize;
    let text_dim = r.u32()? as usize;
    let spec = EncoderSpec {
        modalities,
        text_dim,
        shared_dim,
        text_encoder_id,
    };
    spec.validate()?;
    let mut params = DualEncoderParams::init(spec, 0)?;
    let values = r.f32s(params.num_params())?;
    r.finish()?;
    let theta: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
    params.set_theta(&theta)?;
    Ok(params)
}

pub fn save_model(path: &Path, p: &DualEncoderParams) -> Result<()> {
    fs::write(path, encode_model(p)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<DualEncoderParams> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_model(&fs::read(path)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut rows = Vec::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            rows.push(serde_json::from_str(&line)?);
        }
    }
    Ok(rows)
}
