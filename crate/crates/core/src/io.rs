//! Binary file formats. All integers and floats are little-endian.
//!
//! | file    | layout |
//! |---------|--------|
//! | vectors | `"ISCHVEC1"`, u32 n, u32 d, n·d f32 row-major |
//! | codes   | `"ISCHCOD1"`, u32 n, u32 m, per item ⌈m/64⌉ u64 words |
//! | model   | `"ISCHMOD1"`, u8 version, u8 method, u32 d, m, Q, ℓ, f64 τ, σ², η, d f64 mean, m·d f64 projection (row-major), u64 seed, u32 dictionary size, u32 k1 |
//! | labels  | one decimal integer per line |
//!
//! Vector readers also accept the headerless per-row format used by public
//! SIFT/GIST dumps (`.fvecs`): each row is an i32 dimension followed by that
//! many f32 values.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::encoder::{words_for, BinaryCodeSet, HashModel, Method, ModelMeta};
use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::search::LabelSet;
use crate::spectral::ModelParams;

pub const VECTOR_MAGIC: &[u8; 8] = b"ISCHVEC1";
pub const CODE_MAGIC: &[u8; 8] = b"ISCHCOD1";
pub const MODEL_MAGIC: &[u8; 8] = b"ISCHMOD1";
pub const MODEL_VERSION: u8 = 1;

struct Cursor<'a> {
    what: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(what: &'static str, bytes: &'a [u8]) -> Self {
        Cursor { what, bytes, pos: 0 }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::format(
                    self.what,
                    format!("truncated at byte {} (needed {len} more)", self.pos),
                )
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice of length N"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        if self.take(8)? != expected {
            return Err(Error::format(self.what, "bad magic"));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.what,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn checked_len(what: &'static str, parts: &[usize]) -> Result<usize> {
    parts
        .iter()
        .try_fold(1usize, |acc, &p| acc.checked_mul(p))
        .ok_or_else(|| Error::format(what, "size overflows"))
}

fn u32_field(what: &'static str, v: usize) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::format(what, format!("{v} does not fit in 32 bits")))
}

pub fn encode_vectors(x: &DataMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 4 * x.as_slice().len());
    out.extend_from_slice(VECTOR_MAGIC);
    out.extend_from_slice(&u32_field("vector file", x.rows())?);
    out.extend_from_slice(&u32_field("vector file", x.cols())?);
    for &v in x.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_vectors(bytes: &[u8]) -> Result<DataMatrix> {
    if bytes.starts_with(VECTOR_MAGIC) {
        let mut cur = Cursor::new("vector file", bytes);
        cur.magic(VECTOR_MAGIC)?;
        let n = cur.u32()? as usize;
        let d = cur.u32()? as usize;
        let count = checked_len("vector file", &[n, d])?;
        let raw = cur.take(checked_len("vector file", &[count, 4])?)?;
        cur.finish()?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        DataMatrix::new(n, d, values)
    } else {
        decode_fvecs(bytes)
    }
}

/// Headerless rows of `i32 dim, dim × f32`.
pub fn decode_fvecs(bytes: &[u8]) -> Result<DataMatrix> {
    let mut cur = Cursor::new("fvecs file", bytes);
    let mut values = Vec::new();
    let mut dim: Option<usize> = None;
    let mut rows = 0usize;
    while cur.pos < bytes.len() {
        let raw_dim = i32::from_le_bytes(cur.array()?);
        let d = usize::try_from(raw_dim)
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::format("fvecs file", format!("row {rows}: dimension {raw_dim}")))?;
        if *dim.get_or_insert(d) != d {
            return Err(Error::format(
                "fvecs file",
                format!("row {rows} has dimension {d}, expected {}", dim.unwrap_or(0)),
            ));
        }
        let raw = cur.take(checked_len("fvecs file", &[d, 4])?)?;
        values.extend(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64),
        );
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::format("vector file", "empty file"));
    }
    DataMatrix::new(rows, dim.unwrap_or(0), values)
}

pub fn encode_codes(codes: &BinaryCodeSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 8 * codes.words().len());
    out.extend_from_slice(CODE_MAGIC);
    out.extend_from_slice(&u32_field("code file", codes.len())?);
    out.extend_from_slice(&u32_field("code file", codes.bits())?);
    for &w in codes.words() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_codes(bytes: &[u8]) -> Result<BinaryCodeSet> {
    let mut cur = Cursor::new("code file", bytes);
    cur.magic(CODE_MAGIC)?;
    let n = cur.u32()? as usize;
    let m = cur.u32()? as usize;
    let count = checked_len("code file", &[n, words_for(m)])?;
    let raw = cur.take(checked_len("code file", &[count, 8])?)?;
    cur.finish()?;
    let words = raw
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    BinaryCodeSet::new(n, m, words)
}

pub fn encode_model(model: &HashModel) -> Result<Vec<u8>> {
    let (m, d) = model.projection.shape();
    if model.mean.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: model.mean.len(),
        });
    }
    if model.blocks == 0 || m % model.blocks != 0 {
        return Err(Error::InvalidParams(format!(
            "{m} bits do not split into {} blocks",
            model.blocks
        )));
    }
    let mut out = Vec::with_capacity(64 + 8 * (d + m * d));
    out.extend_from_slice(MODEL_MAGIC);
    out.push(MODEL_VERSION);
    out.push(model.method.code());
    for v in [d, m, model.blocks, m / model.blocks] {
        out.extend_from_slice(&u32_field("model file", v)?);
    }
    let (tau, sigma_sq, eta) = model
        .params
        .map_or((0.0, 0.0, 0.0), |p| (p.tau, p.sigma_sq, p.eta));
    for v in [tau, sigma_sq, eta] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &model.mean {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..m {
        for j in 0..d {
            out.extend_from_slice(&model.projection[(i, j)].to_le_bytes());
        }
    }
    out.extend_from_slice(&model.meta.seed.to_le_bytes());
    out.extend_from_slice(&model.meta.dict_size.to_le_bytes());
    out.extend_from_slice(&model.meta.k1.to_le_bytes());
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<HashModel> {
    let mut cur = Cursor::new("model file", bytes);
    cur.magic(MODEL_MAGIC)?;
    let version = cur.u8()?;
    if version != MODEL_VERSION {
        return Err(Error::format("model file", format!("unsupported version {version}")));
    }
    let method_code = cur.u8()?;
    let method = Method::from_code(method_code)
        .ok_or_else(|| Error::format("model file", format!("unknown method {method_code}")))?;
    let d = cur.u32()? as usize;
    let m = cur.u32()? as usize;
    let blocks = cur.u32()? as usize;
    let block_len = cur.u32()? as usize;
    if blocks == 0 || blocks.checked_mul(block_len) != Some(m) {
        return Err(Error::format(
            "model file",
            format!("bits {m} != blocks {blocks} × block length {block_len}"),
        ));
    }
    let tau = cur.f64()?;
    let sigma_sq = cur.f64()?;
    let eta = cur.f64()?;
    let mean = (0..d).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
    checked_len("model file", &[m, d, 8])?;
    let flat = (0..m * d).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
    let meta = ModelMeta {
        seed: cur.u64()?,
        dict_size: cur.u32()?,
        k1: cur.u32()?,
    };
    cur.finish()?;
    let params = if method == Method::Isch {
        let p = ModelParams {
            tau,
            sigma_sq,
            eta,
            bits: m,
            blocks,
            block_len,
        };
        p.validate()
            .map_err(|e| Error::format("model file", e.to_string()))?;
        Some(p)
    } else {
        None
    };
    Ok(HashModel {
        method,
        projection: DMatrix::from_row_slice(m, d, &flat),
        mean,
        blocks,
        params,
        meta,
    })
}

pub fn parse_labels(text: &str) -> Result<LabelSet> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<i64>()
                .map_err(|e| Error::format("labels file", format!("line {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<_>>>()
        .map(LabelSet)
}

pub fn format_labels(labels: &LabelSet) -> String {
    labels.0.iter().map(|l| format!("{l}\n")).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(bytes)?;
    out.flush()?;
    Ok(())
}

pub fn read_vectors(path: &Path) -> Result<DataMatrix> {
    decode_vectors(&fs::read(path)?)
}

pub fn write_vectors(path: &Path, x: &DataMatrix) -> Result<()> {
    write_file(path, &encode_vectors(x)?)
}

pub fn read_codes(path: &Path) -> Result<BinaryCodeSet> {
    decode_codes(&fs::read(path)?)
}

pub fn write_codes(path: &Path, codes: &BinaryCodeSet) -> Result<()> {
    write_file(path, &encode_codes(codes)?)
}

pub fn read_model(path: &Path) -> Result<HashModel> {
    decode_model(&fs::read(path)?)
}

pub fn write_model(path: &Path, model: &HashModel) -> Result<()> {
    write_file(path, &encode_model(model)?)
}

pub fn read_labels(path: &Path) -> Result<LabelSet> {
    parse_labels(&fs::read_to_string(path)?)
}

pub fn write_labels(path: &Path, labels: &LabelSet) -> Result<()> {
    write_file(path, format_labels(labels).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_model(method: Method) -> HashModel {
        HashModel {
            method,
            projection: DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.5 - 1.0),
            mean: vec![0.1, -0.2, 0.3],
            blocks: 2,
            params: (method == Method::Isch).then(|| ModelParams::new(0.001, 0.05, 4, 2).unwrap()),
            meta: ModelMeta {
                seed: 42,
                dict_size: 9,
                k1: 2,
            },
        }
    }

    #[test]
    fn vector_layout() {
        let x = DataMatrix::new(1, 2, vec![1.0, -2.5]).unwrap();
        let bytes = encode_vectors(&x).unwrap();
        assert_eq!(&bytes[..8], b"ISCHVEC1");
        assert_eq!(&bytes[8..16], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(decode_vectors(&bytes).unwrap(), x);
        assert!(decode_vectors(&bytes[..19]).is_err());
    }

    #[test]
    fn fvecs_import() {
        let mut bytes = Vec::new();
        for row in [[1.0f32, 2.0], [3.0, 4.0]] {
            bytes.extend_from_slice(&2i32.to_le_bytes());
            for v in row {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let x = decode_vectors(&bytes).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        bytes.extend_from_slice(&3i32.to_le_bytes());
        assert!(decode_vectors(&bytes).is_err());
        assert!(decode_vectors(&[]).is_err());
    }

    #[test]
    fn code_layout() {
        let codes = BinaryCodeSet::new(2, 65, vec![1, 1, u64::MAX, 0]).unwrap();
        let bytes = encode_codes(&codes).unwrap();
        assert_eq!(&bytes[..8], b"ISCHCOD1");
        assert_eq!(&bytes[8..16], &[2, 0, 0, 0, 65, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 4 * 8);
        assert_eq!(decode_codes(&bytes).unwrap(), codes);
        let mut bad = bytes.clone();
        bad[16 + 8] = 2; // pad bit of item 0
        assert!(decode_codes(&bad).is_err());
    }

    #[test]
    fn model_layout() {
        for method in [Method::Isch, Method::Lsh, Method::Itq] {
            let model = sample_model(method);
            let bytes = encode_model(&model).unwrap();
            assert_eq!(&bytes[..8], b"ISCHMOD1");
            assert_eq!(bytes[8], 1);
            assert_eq!(bytes[9], method.code());
            assert_eq!(&bytes[10..26], &[3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]);
            assert_eq!(bytes.len(), 10 + 16 + 24 + 8 * 3 + 8 * 12 + 16);
            assert_eq!(decode_model(&bytes).unwrap(), model);
        }
        let mut bytes = encode_model(&sample_model(Method::Lsh)).unwrap();
        bytes.push(0);
        assert!(decode_model(&bytes).is_err());
        bytes.pop();
        bytes[9] = 7;
        assert!(decode_model(&bytes).is_err());
    }

    #[test]
    fn labels_text() {
        let labels = parse_labels("3\n-1\n\n7\n").unwrap();
        assert_eq!(labels.0, vec![3, -1, 7]);
        assert_eq!(format_labels(&labels), "3\n-1\n7\n");
        assert!(parse_labels("1\nx\n").is_err());
    }

    proptest! {
        #[test]
        fn vectors_round_trip(n in 0usize..5, d in 0usize..6, seed in any::<u32>()) {
            let values: Vec<f64> = (0..n * d)
                .map(|i| (((i as u32).wrapping_mul(2654435761) ^ seed) as f64 / 1e6) as f32 as f64)
                .collect();
            let x = DataMatrix::new(n, d, values).unwrap();
            prop_assert_eq!(decode_vectors(&encode_vectors(&x).unwrap()).unwrap(), x);
        }
    }
}
