//! Instances, partitioned datasets and label vectors, plus the text loaders.
//!
//! A [`PartitionedDataset`] is the map/reduce view of the input: an ordered list of
//! contiguous id ranges, one per map task. It is immutable once built.

use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mr::{JobInput, Wire};

/// Raw feature vector of one instance.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Dense(Vec<f64>),
    /// Strictly increasing 0-based indices, all `< dim`.
    Sparse {
        dim: usize,
        indices: Vec<u32>,
        values: Vec<f64>,
    },
}

impl Features {
    pub fn dim(&self) -> usize {
        match self {
            Features::Dense(v) => v.len(),
            Features::Sparse { dim, .. } => *dim,
        }
    }

    /// Builds a sparse vector, checking index order and bounds.
    pub fn sparse(dim: usize, indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::invalid("sparse indices and values differ in length"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("indices not ascending"));
        }
        if let Some(&last) = indices.last() {
            if last as usize >= dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: last as usize + 1,
                });
            }
        }
        Ok(Features::Sparse {
            dim,
            indices,
            values,
        })
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            Features::Dense(v) => v.clone(),
            Features::Sparse {
                dim,
                indices,
                values,
            } => {
                let mut out = vec![0.0; *dim];
                for (&i, &v) in indices.iter().zip(values) {
                    out[i as usize] = v;
                }
                out
            }
        }
    }

    /// Value at coordinate `i`, walking a sparse vector from `cursor`.
    #[inline]
    fn sparse_at(indices: &[u32], values: &[f64], cursor: &mut usize, i: usize) -> f64 {
        if *cursor < indices.len() && indices[*cursor] as usize == i {
            let v = values[*cursor];
            *cursor += 1;
            v
        } else {
            0.0
        }
    }

    /// Inner product accumulated in ascending index order.
    pub fn dot(&self, other: &Features) -> Result<f64> {
        check_dims(self, other)?;
        Ok(match (self, other) {
            (Features::Dense(a), Features::Dense(b)) => {
                let mut acc = 0.0;
                for (x, y) in a.iter().zip(b) {
                    acc += x * y;
                }
                acc
            }
            (
                Features::Sparse {
                    indices, values, ..
                },
                Features::Dense(d),
            )
            | (
                Features::Dense(d),
                Features::Sparse {
                    indices, values, ..
                },
            ) => {
                let mut acc = 0.0;
                for (&i, &v) in indices.iter().zip(values) {
                    acc += v * d[i as usize];
                }
                acc
            }
            (
                Features::Sparse {
                    indices: ia,
                    values: va,
                    ..
                },
                Features::Sparse {
                    indices: ib,
                    values: vb,
                    ..
                },
            ) => {
                let (mut p, mut q, mut acc) = (0, 0, 0.0);
                while p < ia.len() && q < ib.len() {
                    match ia[p].cmp(&ib[q]) {
                        std::cmp::Ordering::Less => p += 1,
                        std::cmp::Ordering::Greater => q += 1,
                        std::cmp::Ordering::Equal => {
                            acc += va[p] * vb[q];
                            p += 1;
                            q += 1;
                        }
                    }
                }
                acc
            }
        })
    }

    /// Squared Euclidean distance, summed over coordinates in ascending order.
    ///
    /// Every term is `(a_i - b_i)^2`, so the result is bitwise symmetric.
    pub fn squared_distance(&self, other: &Features) -> Result<f64> {
        check_dims(self, other)?;
        Ok(match (self, other) {
            (Features::Dense(a), Features::Dense(b)) => {
                let mut acc = 0.0;
                for (x, y) in a.iter().zip(b) {
                    let d = x - y;
                    acc += d * d;
                }
                acc
            }
            (
                Features::Sparse {
                    indices, values, ..
                },
                Features::Dense(d),
            )
            | (
                Features::Dense(d),
                Features::Sparse {
                    indices, values, ..
                },
            ) => {
                let mut cursor = 0;
                let mut acc = 0.0;
                for (i, &y) in d.iter().enumerate() {
                    let x = Self::sparse_at(indices, values, &mut cursor, i);
                    let diff = x - y;
                    acc += diff * diff;
                }
                acc
            }
            (
                Features::Sparse {
                    indices: ia,
                    values: va,
                    ..
                },
                Features::Sparse {
                    indices: ib,
                    values: vb,
                    ..
                },
            ) => {
                let (mut p, mut q, mut acc) = (0, 0, 0.0);
                while p < ia.len() || q < ib.len() {
                    let (x, y) = match (ia.get(p), ib.get(q)) {
                        (Some(a), Some(b)) if a == b => {
                            p += 1;
                            q += 1;
                            (va[p - 1], vb[q - 1])
                        }
                        (Some(a), Some(b)) if a < b => {
                            p += 1;
                            (va[p - 1], 0.0)
                        }
                        (Some(_), None) => {
                            p += 1;
                            (va[p - 1], 0.0)
                        }
                        _ => {
                            q += 1;
                            (0.0, vb[q - 1])
                        }
                    };
                    let diff = x - y;
                    acc += diff * diff;
                }
                acc
            }
        })
    }
}

fn check_dims(a: &Features, b: &Features) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// One data instance with its global 0-based id.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub features: Features,
}

impl Instance {
    pub fn dense(id: u64, values: Vec<f64>) -> Self {
        Instance {
            id,
            features: Features::Dense(values),
        }
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    /// Decodes the [`Wire`] encoding produced by `encode`; `dim` comes from the
    /// enclosing header.
    pub(crate) fn decode(buf: &mut &[u8], dim: usize) -> Option<Instance> {
        let id = take_u32(buf)? as u64;
        let tag = take_u8(buf)?;
        let features = match tag {
            0 => {
                let mut v = Vec::with_capacity(dim);
                for _ in 0..dim {
                    v.push(take_f64(buf)?);
                }
                Features::Dense(v)
            }
            1 => {
                let nnz = take_u32(buf)? as usize;
                let mut indices = Vec::with_capacity(nnz);
                let mut values = Vec::with_capacity(nnz);
                for _ in 0..nnz {
                    indices.push(take_u32(buf)?);
                    values.push(take_f64(buf)?);
                }
                Features::Sparse {
                    dim,
                    indices,
                    values,
                }
            }
            _ => return None,
        };
        Some(Instance { id, features })
    }
}

impl Wire for Instance {
    fn wire_size(&self) -> usize {
        5 + match &self.features {
            Features::Dense(v) => 8 * v.len(),
            Features::Sparse { indices, .. } => 4 + 12 * indices.len(),
        }
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.id as u32).to_le_bytes());
        match &self.features {
            Features::Dense(v) => {
                out.push(0);
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Features::Sparse {
                indices, values, ..
            } => {
                out.push(1);
                out.extend_from_slice(&(indices.len() as u32).to_le_bytes());
                for (i, v) in indices.iter().zip(values) {
                    out.extend_from_slice(&i.to_le_bytes());
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
}

pub(crate) fn take_bytes<'a>(buf: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
    if buf.len() < n {
        return None;
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    Some(head)
}

pub(crate) fn take_u8(buf: &mut &[u8]) -> Option<u8> {
    take_bytes(buf, 1).map(|b| b[0])
}

pub(crate) fn take_u32(buf: &mut &[u8]) -> Option<u32> {
    take_bytes(buf, 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
}

pub(crate) fn take_u64(buf: &mut &[u8]) -> Option<u64> {
    take_bytes(buf, 8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
}

pub(crate) fn take_f64(buf: &mut &[u8]) -> Option<f64> {
    take_bytes(buf, 8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
}

/// How a loaded dataset is split into map-task blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionOptions {
    pub partitions: usize,
    /// Per-machine memory budget in bytes; `None` disables the check.
    pub memory_budget: Option<u64>,
}

impl Default for PartitionOptions {
    fn default() -> Self {
        PartitionOptions {
            partitions: 4,
            memory_budget: None,
        }
    }
}

impl PartitionOptions {
    pub fn new(partitions: usize) -> Self {
        PartitionOptions {
            partitions,
            memory_budget: None,
        }
    }
}

/// Contiguous block ranges: block `b` covers `[b*ceil(n/B), min(n, (b+1)*ceil(n/B)))`.
///
/// Trailing blocks may be empty when `n` is not much larger than `B`.
pub fn block_ranges(n: usize, partitions: usize) -> Vec<Range<usize>> {
    let partitions = partitions.max(1);
    let width = n.div_ceil(partitions);
    (0..partitions)
        .map(|b| {
            let start = (b * width).min(n);
            let end = ((b + 1) * width).min(n);
            start..end
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedDataset {
    instances: Vec<Instance>,
    blocks: Vec<Range<usize>>,
    d_in: usize,
}

impl PartitionedDataset {
    /// Builds a dataset from instances whose ids are `0..n` in order.
    pub fn new(instances: Vec<Instance>, options: PartitionOptions) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if options.partitions == 0 {
            return Err(Error::invalid("partition count must be at least 1"));
        }
        let d_in = instances[0].dim();
        for (pos, inst) in instances.iter().enumerate() {
            if inst.id != pos as u64 {
                return Err(Error::invalid(format!(
                    "instance ids must be contiguous from 0; position {pos} has id {}",
                    inst.id
                )));
            }
            if inst.dim() != d_in {
                return Err(Error::Dimension {
                    expected: d_in,
                    found: inst.dim(),
                });
            }
        }
        let blocks = block_ranges(instances.len(), options.partitions);
        if let Some(budget) = options.memory_budget {
            for (b, range) in blocks.iter().enumerate() {
                let bytes: u64 = instances[range.clone()]
                    .iter()
                    .map(|i| i.wire_size() as u64)
                    .sum();
                if bytes > budget {
                    return Err(Error::MemoryBudget {
                        block: b,
                        bytes,
                        budget,
                    });
                }
            }
        }
        Ok(PartitionedDataset {
            instances,
            blocks,
            d_in,
        })
    }

    /// Dense rows with ids assigned by position.
    pub fn from_rows(rows: Vec<Vec<f64>>, options: PartitionOptions) -> Result<Self> {
        let instances = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| Instance::dense(i as u64, r))
            .collect();
        Self::new(instances, options)
    }

    pub fn n(&self) -> usize {
        self.instances.len()
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn partition_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn instance(&self, id: usize) -> &Instance {
        &self.instances[id]
    }

    pub fn block_range(&self, b: usize) -> Range<usize> {
        self.blocks[b].clone()
    }

    pub fn block_ranges(&self) -> &[Range<usize>] {
        &self.blocks
    }

    /// Same instances under a different partition count.
    pub fn repartition(&self, options: PartitionOptions) -> Result<Self> {
        Self::new(self.instances.clone(), options)
    }
}

impl JobInput for PartitionedDataset {
    type Record = Instance;

    fn block_count(&self) -> usize {
        self.blocks.len()
    }

    fn block(&self, b: usize) -> Vec<(u64, &Instance)> {
        self.instances[self.blocks[b].clone()]
            .iter()
            .map(|i| (i.id, i))
            .collect()
    }
}

/// Ground-truth (or predicted) class ids aligned with instance ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    pub labels: Vec<u32>,
}

impl LabelVector {
    pub fn new(labels: Vec<u32>) -> Self {
        LabelVector { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Parses a comma-separated dense matrix, one instance per line.
pub fn parse_dense_csv(text: &str, path: &Path, options: PartitionOptions) -> Result<PartitionedDataset> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| {
                    Error::parse(path, line_no, format!("malformed number '{}'", f.trim()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(bad) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::parse(path, line_no, format!("non-finite value in field {}", bad + 1)));
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("ragged row: expected {w} fields, found {}", row.len()),
                ))
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    PartitionedDataset::from_rows(rows, options)
}

pub fn load_dense_csv(path: impl AsRef<Path>, options: PartitionOptions) -> Result<PartitionedDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_dense_csv(&text, path, options)
}

/// Parses libsvm-style `label idx:val ...` lines with 1-based ascending indices.
pub fn parse_sparse(
    text: &str,
    path: &Path,
    options: PartitionOptions,
) -> Result<(PartitionedDataset, LabelVector)> {
    let mut labels = Vec::new();
    let mut parsed: Vec<(Vec<u32>, Vec<f64>)> = Vec::new();
    let mut d_in = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let label_text = fields.next().unwrap_or_default();
        let label = label_text
            .parse::<u32>()
            .map_err(|_| Error::parse(path, line_no, format!("invalid label '{label_text}'")))?;
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for field in fields {
            let (idx, val) = field
                .split_once(':')
                .ok_or_else(|| Error::parse(path, line_no, format!("expected idx:val, found '{field}'")))?;
            let idx: u32 = idx
                .parse()
                .map_err(|_| Error::parse(path, line_no, format!("invalid index '{idx}'")))?;
            if idx == 0 {
                return Err(Error::parse(path, line_no, "indices are 1-based"));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| Error::parse(path, line_no, format!("non-numeric value '{val}'")))?;
            if !val.is_finite() {
                return Err(Error::parse(path, line_no, format!("non-finite value '{val}'")));
            }
            if let Some(&prev) = indices.last() {
                if idx - 1 <= prev {
                    return Err(Error::parse(path, line_no, "indices not ascending"));
                }
            }
            indices.push(idx - 1);
            values.push(val);
            d_in = d_in.max(idx as usize);
        }
        labels.push(label);
        parsed.push((indices, values));
    }
    if parsed.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let instances = parsed
        .into_iter()
        .enumerate()
        .map(|(i, (indices, values))| Instance {
            id: i as u64,
            features: Features::Sparse {
                dim: d_in,
                indices,
                values,
            },
        })
        .collect();
    Ok((
        PartitionedDataset::new(instances, options)?,
        LabelVector::new(labels),
    ))
}

pub fn load_sparse(
    path: impl AsRef<Path>,
    options: PartitionOptions,
) -> Result<(PartitionedDataset, LabelVector)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_sparse(&text, path, options)
}

/// Reads labels either as one integer per line (aligned by line order) or as
/// `id<TAB>label` lines, the format `apnc cluster` writes.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_labels(&text, path)
}

pub fn parse_labels(text: &str, path: &Path) -> Result<LabelVector> {
    let mut keyed: Vec<(u64, u32)> = Vec::new();
    let mut plain: Vec<u32> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_label = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| Error::parse(path, line_no, format!("invalid label '{s}'")))
        };
        match fields.as_slice() {
            [label] => plain.push(parse_label(label)?),
            [id, label] => {
                let id = id
                    .parse::<u64>()
                    .map_err(|_| Error::parse(path, line_no, format!("invalid id '{id}'")))?;
                keyed.push((id, parse_label(label)?));
            }
            _ => return Err(Error::parse(path, line_no, "expected 'label' or 'id<TAB>label'")),
        }
    }
    if !plain.is_empty() && !keyed.is_empty() {
        return Err(Error::parse(path, 1, "mixed label line formats"));
    }
    if keyed.is_empty() {
        if plain.is_empty() {
            return Err(Error::EmptyDataset);
        }
        return Ok(LabelVector::new(plain));
    }
    keyed.sort_by_key(|&(id, _)| id);
    for (pos, &(id, _)) in keyed.iter().enumerate() {
        if id != pos as u64 {
            return Err(Error::parse(path, pos + 1, format!("label ids must cover 0..n; missing or duplicate id near {id}")));
        }
    }
    Ok(LabelVector::new(keyed.into_iter().map(|(_, l)| l).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn dense_csv_read_back() {
        let ds = parse_dense_csv("1,0\n0,1\n1,1", p(), PartitionOptions::new(2)).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.d_in(), 2);
        assert_eq!(ds.instance(2).features, Features::Dense(vec![1.0, 1.0]));
        assert_eq!(ds.block_ranges(), &[0..2, 2..3]);
    }

    #[test]
    fn dense_csv_errors() {
        assert!(matches!(
            parse_dense_csv("", p(), PartitionOptions::default()),
            Err(Error::EmptyDataset)
        ));
        assert_eq!(
            parse_dense_csv("", p(), PartitionOptions::default())
                .unwrap_err()
                .to_string(),
            "empty dataset"
        );
        match parse_dense_csv("1,x\n2,3", p(), PartitionOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse_dense_csv("1,2\n2,3,4", p(), PartitionOptions::default()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("ragged"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sparse_read_back() {
        let (ds, labels) = parse_sparse("3 1:0.5 4:2.0\n", p(), PartitionOptions::new(1)).unwrap();
        assert_eq!(labels.labels, vec![3]);
        assert_eq!(ds.instance(0).features.to_dense(), vec![0.5, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn sparse_dimension_is_max_index() {
        let (ds, _) = parse_sparse("0 7:1\n1 1:2 3:1\n", p(), PartitionOptions::new(1)).unwrap();
        assert_eq!(ds.d_in(), 7);
        assert_eq!(ds.instance(1).dim(), 7);
    }

    #[test]
    fn sparse_errors() {
        match parse_sparse("1 4:1 2:1", p(), PartitionOptions::new(1)) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 1);
                assert_eq!(message, "indices not ascending");
            }
            other => panic!("unexpected {other:?}"),
        }
        match parse_sparse("1 1:1\n2 3:abc", p(), PartitionOptions::new(1)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn partitioning_rule() {
        assert_eq!(block_ranges(10, 4), vec![0..3, 3..6, 6..9, 9..10]);
        assert_eq!(block_ranges(9, 4), vec![0..3, 3..6, 6..9, 9..9]);
        assert_eq!(block_ranges(1000, 8)[7], 875..1000);
        let ds = PartitionedDataset::from_rows(vec![vec![0.0]; 10], PartitionOptions::new(4)).unwrap();
        let again = PartitionedDataset::from_rows(vec![vec![0.0]; 10], PartitionOptions::new(4)).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn memory_budget_checked_at_load() {
        let rows = vec![vec![1.0; 4]; 8];
        // each dense instance: 5 header bytes + 32 payload bytes
        let ok = PartitionOptions {
            partitions: 4,
            memory_budget: Some(74),
        };
        assert!(PartitionedDataset::from_rows(rows.clone(), ok).is_ok());
        let tight = PartitionOptions {
            partitions: 4,
            memory_budget: Some(73),
        };
        assert!(matches!(
            PartitionedDataset::from_rows(rows, tight),
            Err(Error::MemoryBudget { block: 0, bytes: 74, .. })
        ));
    }

    #[test]
    fn label_formats() {
        assert_eq!(parse_labels("1\n0\n2\n", p()).unwrap().labels, vec![1, 0, 2]);
        assert_eq!(parse_labels("1\t5\n0\t4\n", p()).unwrap().labels, vec![4, 5]);
        assert!(parse_labels("0\t1\n2\t1\n", p()).is_err());
    }

    #[test]
    fn sparse_and_dense_geometry_agree() {
        let a = Features::sparse(5, vec![0, 3], vec![1.5, -2.0]).unwrap();
        let b = Features::sparse(5, vec![1, 3, 4], vec![0.5, 1.0, 3.0]).unwrap();
        let da = Features::Dense(a.to_dense());
        let db = Features::Dense(b.to_dense());
        assert_eq!(a.dot(&b).unwrap(), da.dot(&db).unwrap());
        assert_eq!(a.dot(&db).unwrap(), da.dot(&db).unwrap());
        assert_eq!(a.squared_distance(&b).unwrap(), da.squared_distance(&db).unwrap());
        assert_eq!(a.squared_distance(&db).unwrap(), db.squared_distance(&a).unwrap());
        assert!(Features::sparse(3, vec![2, 1], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn wire_encoding_round_trips() {
        let inst = Instance {
            id: 9,
            features: Features::sparse(6, vec![1, 5], vec![0.25, -1.0]).unwrap(),
        };
        let mut buf = Vec::new();
        inst.encode(&mut buf);
        assert_eq!(buf.len(), inst.wire_size());
        let mut slice = buf.as_slice();
        assert_eq!(Instance::decode(&mut slice, 6).unwrap(), inst);
        assert!(slice.is_empty());
    }
}
