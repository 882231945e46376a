//! Binary model and embedding files, and text assignment files.
//!
//! Model layout (little-endian): `"APNC1"`, header `{format_version u32, q u32,
//! m u32, l u32, d_in u32, discrepancy u8}`, then `{variant u8, kernel tag u8,
//! kernel params 3×f64, seed u64}`, per block `{rows u32, cols u32, row-major
//! f64}`, per landmark block `{count u32, instances}`, and finally the metadata
//! as `count u32` followed by length-prefixed key/value strings.
//!
//! Embedding layout: `"APNCY"`, `{n u32, m u32}`, then per column `{id u32, m×f64}`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::cluster::Assignment;
use crate::coeffs::{ApncModel, Discrepancy, Landmarks, Variant};
use crate::dataset::{take_bytes, take_f64, take_u32, take_u64, take_u8, Features, Instance};
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::DenseMatrix;
use crate::mr::Wire;

pub const MODEL_MAGIC: &[u8; 5] = b"APNC1";
pub const EMBEDDING_MAGIC: &[u8; 5] = b"APNCY";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_model(model: &ApncModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    put_u32(&mut out, FORMAT_VERSION as usize)?;
    put_u32(&mut out, model.q())?;
    put_u32(&mut out, model.m_effective)?;
    put_u32(&mut out, model.l())?;
    put_u32(&mut out, model.d_in())?;
    out.push(model.discrepancy.tag());
    out.push(model.variant.tag());
    let (tag, params) = model.kernel.to_tag();
    out.push(tag);
    for p in params {
        p.encode(&mut out);
    }
    model.seed.encode(&mut out);
    for r in &model.blocks {
        put_u32(&mut out, r.rows())?;
        put_u32(&mut out, r.cols())?;
        for x in r.to_row_major() {
            x.encode(&mut out);
        }
    }
    for block in &model.landmarks.blocks {
        put_u32(&mut out, block.len())?;
        for x in block {
            if x.id > u32::MAX as u64 {
                return Err(Error::invalid(format!("landmark id {} does not fit in 32 bits", x.id)));
            }
            x.encode(&mut out);
        }
    }
    put_u32(&mut out, model.metadata.len())?;
    for (k, v) in &model.metadata {
        k.encode(&mut out);
        v.encode(&mut out);
    }
    Ok(out)
}

fn take_string(buf: &mut &[u8]) -> Option<std::result::Result<String, Error>> {
    let len = take_u32(buf)? as usize;
    let bytes = take_bytes(buf, len)?;
    Some(String::from_utf8(bytes.to_vec()).map_err(|_| Error::Corrupt("metadata is not UTF-8".into())))
}

pub fn decode_model(bytes: &[u8]) -> Result<ApncModel> {
    let mut buf = bytes;
    let magic = take_bytes(&mut buf, 5).ok_or(Error::BadMagic)?;
    if magic != MODEL_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = take_u32(&mut buf).ok_or(Error::TruncatedModel)?;
    if version != FORMAT_VERSION {
        return Err(Error::Corrupt(format!("unsupported model format version {version}")));
    }
    let mut header = [0usize; 4];
    for h in header.iter_mut() {
        *h = take_u32(&mut buf).ok_or(Error::TruncatedModel)? as usize;
    }
    let [q, m, l, d_in] = header;
    let discrepancy = Discrepancy::from_tag(take_u8(&mut buf).ok_or(Error::TruncatedModel)?)?;
    let variant = Variant::from_tag(take_u8(&mut buf).ok_or(Error::TruncatedModel)?)?;
    let kernel_tag = take_u8(&mut buf).ok_or(Error::TruncatedModel)?;
    let mut params = [0.0; 3];
    for p in params.iter_mut() {
        *p = take_f64(&mut buf).ok_or(Error::TruncatedModel)?;
    }
    let kernel = KernelSpec::from_tag(kernel_tag, params)?;
    let seed = take_u64(&mut buf).ok_or(Error::TruncatedModel)?;
    if q == 0 {
        return Err(Error::Corrupt("model has no blocks".into()));
    }

    let mut blocks = Vec::with_capacity(q);
    for _ in 0..q {
        let rows = take_u32(&mut buf).ok_or(Error::TruncatedModel)? as usize;
        let cols = take_u32(&mut buf).ok_or(Error::TruncatedModel)? as usize;
        let need = rows.checked_mul(cols).and_then(|c| c.checked_mul(8)).ok_or(Error::TruncatedModel)?;
        let payload = take_bytes(&mut buf, need).ok_or(Error::TruncatedModel)?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        blocks.push(DenseMatrix::from_row_major(rows, cols, &data)?);
    }
    let rows: usize = blocks.iter().map(DenseMatrix::rows).sum();
    let cols: usize = blocks.iter().map(DenseMatrix::cols).sum();
    if rows != m || cols != l {
        return Err(Error::Corrupt(format!(
            "dimension mismatch: header m={m}, l={l} but blocks hold {rows}x{cols}"
        )));
    }

    let mut landmark_blocks = Vec::with_capacity(q);
    for _ in 0..q {
        let count = take_u32(&mut buf).ok_or(Error::TruncatedModel)? as usize;
        let mut block = Vec::with_capacity(count.min(buf.len()));
        for _ in 0..count {
            let x = Instance::decode(&mut buf, d_in).ok_or(Error::TruncatedModel)?;
            let features = match x.features {
                Features::Sparse { dim, indices, values } => {
                    Features::sparse(dim, indices, values).map_err(|e| Error::Corrupt(e.to_string()))?
                }
                dense => dense,
            };
            block.push(Instance { id: x.id, features });
        }
        landmark_blocks.push(block);
    }

    let entries = take_u32(&mut buf).ok_or(Error::TruncatedModel)? as usize;
    let mut metadata = BTreeMap::new();
    for _ in 0..entries {
        let k = take_string(&mut buf).ok_or(Error::TruncatedModel)??;
        let v = take_string(&mut buf).ok_or(Error::TruncatedModel)??;
        metadata.insert(k, v);
    }
    if !buf.is_empty() {
        return Err(Error::Corrupt(format!("{} trailing bytes after model", buf.len())));
    }
    let landmarks = Landmarks::new(landmark_blocks).map_err(|e| Error::Corrupt(e.to_string()))?;
    if landmarks.d_in() != d_in {
        return Err(Error::Corrupt(format!("dimension mismatch: header d_in={d_in}")));
    }
    ApncModel::new(variant, landmarks, blocks, kernel, discrepancy, seed, metadata)
}

pub fn save_model(model: &ApncModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ApncModel> {
    decode_model(&fs::read(path)?)
}

pub fn encode_embedding(y: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(13 + y.n() * (4 + 8 * y.m()));
    out.extend_from_slice(EMBEDDING_MAGIC);
    put_u32(&mut out, y.n())?;
    put_u32(&mut out, y.m())?;
    for (i, col) in y.columns().enumerate() {
        put_u32(&mut out, i)?;
        col.encode(&mut out);
    }
    Ok(out)
}

/// Columns may appear in any id order; every id in `0..n` must appear once.
pub fn decode_embedding(bytes: &[u8], partitions: usize) -> Result<EmbeddingMatrix> {
    let mut buf = bytes;
    let magic = take_bytes(&mut buf, 5).ok_or(Error::BadEmbeddingMagic)?;
    if magic != EMBEDDING_MAGIC {
        return Err(Error::BadEmbeddingMagic);
    }
    let n = take_u32(&mut buf).ok_or(Error::TruncatedEmbedding)? as usize;
    let m = take_u32(&mut buf).ok_or(Error::TruncatedEmbedding)? as usize;
    let need = n.checked_mul(4 + 8 * m).ok_or(Error::TruncatedEmbedding)?;
    if buf.len() < need {
        return Err(Error::TruncatedEmbedding);
    }
    if buf.len() > need {
        return Err(Error::Corrupt(format!("{} trailing bytes after embeddings", buf.len() - need)));
    }
    let mut data = vec![0.0; n * m];
    let mut seen = vec![false; n];
    for _ in 0..n {
        let id = take_u32(&mut buf).ok_or(Error::TruncatedEmbedding)? as usize;
        if id >= n || seen[id] {
            return Err(Error::Corrupt(format!("bad or repeated column id {id}")));
        }
        seen[id] = true;
        for slot in &mut data[id * m..(id + 1) * m] {
            *slot = take_f64(&mut buf).ok_or(Error::TruncatedEmbedding)?;
        }
    }
    EmbeddingMatrix::from_flat(n, m, data, partitions)
}

pub fn save_embedding(y: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_embedding(y)?)?;
    Ok(())
}

pub fn load_embedding(path: impl AsRef<Path>, partitions: usize) -> Result<EmbeddingMatrix> {
    decode_embedding(&fs::read(path)?, partitions)
}

/// One `id<TAB>cluster` line per instance.
pub fn write_assignment(assignment: &Assignment, mut out: impl Write) -> Result<()> {
    let mut text = String::with_capacity(assignment.labels.len() * 8);
    for (i, c) in assignment.labels.iter().enumerate() {
        text.push_str(&format!("{i}\t{c}\n"));
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}

pub fn save_assignment(assignment: &Assignment, path: impl AsRef<Path>) -> Result<()> {
    write_assignment(assignment, fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ApncModel {
        let a = Instance::dense(3, vec![0.25, -1.5]);
        let b = Instance {
            id: 7,
            features: Features::sparse(2, vec![1], vec![2.0]).unwrap(),
        };
        let mut md = BTreeMap::new();
        md.insert("note".to_string(), "x=1".to_string());
        ApncModel::new(
            Variant::Stable,
            Landmarks::new(vec![vec![a], vec![b]]).unwrap(),
            vec![
                DenseMatrix::from_rows(&[vec![0.1], vec![-0.0]]).unwrap(),
                DenseMatrix::from_rows(&[vec![std::f64::consts::PI]]).unwrap(),
            ],
            KernelSpec::polynomial(3, 0.5).unwrap(),
            Discrepancy::L1,
            99,
            md,
        )
        .unwrap()
    }

    #[test]
    fn model_round_trip_is_bitwise() {
        let m = model();
        let back = decode_model(&encode_model(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.blocks[0].get(1, 0).to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn wrong_magic() {
        let err = decode_model(b"NOPE1rest").unwrap_err();
        assert_eq!(err.to_string(), "not an APNC model");
    }

    #[test]
    fn missing_block_is_truncation() {
        let bytes = encode_model(&model()).unwrap();
        // header (5 + 20 + 1) + variant/kernel/params/seed (1 + 1 + 24 + 8) + first block (8 + 16)
        let cut = 5 + 20 + 1 + 1 + 1 + 24 + 8 + 8 + 16;
        let err = decode_model(&bytes[..cut]).unwrap_err();
        assert_eq!(err.to_string(), "truncated model");
    }

    #[test]
    fn header_payload_mismatch() {
        let mut bytes = encode_model(&model()).unwrap();
        // bump m in the header
        bytes[13] = 9;
        assert!(matches!(decode_model(&bytes), Err(Error::Corrupt(_))));
    }

    #[test]
    fn embedding_round_trip() {
        let y = EmbeddingMatrix::from_columns(vec![vec![1.0, -2.5], vec![0.0, 1e-300], vec![3.0, 4.0]], 2).unwrap();
        let bytes = encode_embedding(&y).unwrap();
        assert_eq!(&bytes[..5], b"APNCY");
        assert_eq!(decode_embedding(&bytes, 2).unwrap(), y);
        assert!(matches!(decode_embedding(&bytes[..bytes.len() - 1], 2), Err(Error::TruncatedEmbedding)));
        assert!(matches!(decode_embedding(b"APNC1", 2), Err(Error::BadEmbeddingMagic)));
    }

    #[test]
    fn assignment_lines() {
        let mut out = Vec::new();
        write_assignment(&Assignment { labels: vec![2, 0] }, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "0\t2\n1\t0\n");
    }
}
