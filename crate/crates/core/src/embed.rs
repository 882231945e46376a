//! Blockwise embedding `y = R K_Li` as a chain of map-only rounds, one per
//! coefficient block, followed by a task-local join.

use std::ops::Range;
use std::sync::Arc;

use crate::coeffs::ApncModel;
use crate::dataset::{block_ranges, Instance, PartitionedDataset};
use crate::error::{Error, Result};
use crate::kernels::{kernel_block, KernelSpec};
use crate::linalg::DenseMatrix;
use crate::mr::{ChainStage, Emitter, Engine, JobInput, KeyedBlocks, MrJob, SideData, ShuffleReport, TaskContext, Wire};

/// Embeddings of `n` instances, one `m`-vector per id, split into blocks for
/// map tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    m: usize,
    /// Column `i` occupies `data[i*m..(i+1)*m]`.
    data: Vec<f64>,
    blocks: Vec<Range<usize>>,
}

impl EmbeddingMatrix {
    pub fn from_flat(n: usize, m: usize, data: Vec<f64>, partitions: usize) -> Result<Self> {
        if data.len() != n * m {
            return Err(Error::Dimension {
                expected: n * m,
                found: data.len(),
            });
        }
        if partitions == 0 {
            return Err(Error::invalid("partition count must be at least 1"));
        }
        if m == 0 {
            return Err(Error::invalid("embedding dimensionality must be at least 1"));
        }
        if let Some(p) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { row: p % m, col: p / m });
        }
        Ok(EmbeddingMatrix {
            n,
            m,
            data,
            blocks: block_ranges(n, partitions),
        })
    }

    pub fn from_columns(columns: Vec<Vec<f64>>, partitions: usize) -> Result<Self> {
        let n = columns.len();
        let m = columns.first().map_or(0, Vec::len);
        if let Some(c) = columns.iter().find(|c| c.len() != m) {
            return Err(Error::Dimension {
                expected: m,
                found: c.len(),
            });
        }
        Self::from_flat(n, m, columns.concat(), partitions)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.m)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn partition_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_ranges(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn repartition(&self, partitions: usize) -> Result<Self> {
        Self::from_flat(self.n, self.m, self.data.clone(), partitions)
    }
}

impl JobInput for EmbeddingMatrix {
    type Record = [f64];

    fn block_count(&self) -> usize {
        self.blocks.len()
    }

    fn block(&self, b: usize) -> Vec<(u64, &[f64])> {
        self.blocks[b].clone().map(|i| (i as u64, self.column(i))).collect()
    }
}

/// Portion `R^(b) κ(L^(b), x)`.
fn portion(kernel: &KernelSpec, r: &DenseMatrix, landmarks: &[Instance], x: &Instance) -> Result<Vec<f64>> {
    r.mul_vec(&kernel_block(kernel, landmarks, x)?)
}

/// Single-instance embedding; the same arithmetic as [`embed_all`].
pub fn embed_one(x: &Instance, model: &ApncModel) -> Result<Vec<f64>> {
    if x.dim() != model.d_in() {
        return Err(Error::Dimension {
            expected: model.d_in(),
            found: x.dim(),
        });
    }
    let mut y = Vec::with_capacity(model.m_effective);
    for (r, l) in model.blocks.iter().zip(&model.landmarks.blocks) {
        y.extend(portion(&model.kernel, r, l, x)?);
    }
    Ok(y)
}

/// A record flowing through the embedding chain.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedRecord {
    pub instance: Arc<Instance>,
    /// `(block, portion)` in the order the rounds produced them.
    pub portions: Vec<(usize, Vec<f64>)>,
    pub embedding: Option<Vec<f64>>,
}

struct Coefficients(DenseMatrix);

impl Wire for Coefficients {
    fn wire_size(&self) -> usize {
        8 * self.0.data().len()
    }
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.data().encode(out)
    }
}

struct LandmarkBlock(Vec<Instance>);

impl Wire for LandmarkBlock {
    fn wire_size(&self) -> usize {
        self.0.iter().map(Wire::wire_size).sum()
    }
    fn encode(&self, out: &mut Vec<u8>) {
        for x in &self.0 {
            x.encode(out);
        }
    }
}

/// Round `b`: loads `(R^(b), L^(b))` and appends each instance's portion to its
/// task-local record.
struct EmbedRound {
    block: usize,
    name: String,
    kernel: KernelSpec,
    r: SideData<Coefficients>,
    landmarks: SideData<LandmarkBlock>,
}

impl MrJob for EmbedRound {
    type Input = EmbedRecord;
    type Key = u64;
    type Value = f64;
    type Local = (u64, EmbedRecord);
    type State = ();
    type Output = (u64, EmbedRecord);

    fn name(&self) -> &str {
        &self.name
    }

    fn side_data(&self) -> Vec<&dyn crate::mr::Sealed> {
        vec![&self.r, &self.landmarks]
    }

    fn setup(&self, _: &TaskContext) {}

    fn map(&self, _: &mut (), id: u64, rec: &EmbedRecord, out: &mut Emitter<u64, f64, Self::Local>) -> Result<()> {
        let y = portion(&self.kernel, &self.r.0, &self.landmarks.0, &rec.instance)?;
        let mut next = rec.clone();
        next.portions.push((self.block, y));
        out.emit_local((id, next));
        Ok(())
    }

    fn reduce(&self, _: &u64, _: Vec<f64>) -> Result<Vec<(u64, EmbedRecord)>> {
        Ok(Vec::new())
    }
}

/// Concatenates an instance's portions in block order without leaving the task.
struct JoinPortions {
    q: usize,
}

impl MrJob for JoinPortions {
    type Input = EmbedRecord;
    type Key = u64;
    type Value = f64;
    type Local = (u64, EmbedRecord);
    type State = ();
    type Output = (u64, EmbedRecord);

    fn name(&self) -> &str {
        "embed-join"
    }

    fn setup(&self, _: &TaskContext) {}

    fn map(&self, _: &mut (), id: u64, rec: &EmbedRecord, out: &mut Emitter<u64, f64, Self::Local>) -> Result<()> {
        let mut y = Vec::new();
        for b in 0..self.q {
            match rec.portions.iter().find(|(pb, _)| *pb == b) {
                Some((_, p)) => y.extend_from_slice(p),
                None => return Err(Error::MissingPortion { id, block: b }),
            }
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row, col: id as usize });
        }
        out.emit_local((
            id,
            EmbedRecord {
                instance: Arc::clone(&rec.instance),
                portions: Vec::new(),
                embedding: Some(y),
            },
        ));
        Ok(())
    }

    fn reduce(&self, _: &u64, _: Vec<f64>) -> Result<Vec<(u64, EmbedRecord)>> {
        Ok(Vec::new())
    }
}

/// Embeds every instance; the result keeps the dataset's partitioning.
pub fn embed_all(engine: &Engine, dataset: &PartitionedDataset, model: &ApncModel) -> Result<(EmbeddingMatrix, ShuffleReport)> {
    if dataset.d_in() != model.d_in() {
        return Err(Error::Dimension {
            expected: model.d_in(),
            found: dataset.d_in(),
        });
    }
    let rounds: Vec<EmbedRound> = model
        .blocks
        .iter()
        .zip(&model.landmarks.blocks)
        .enumerate()
        .map(|(b, (r, l))| EmbedRound {
            block: b,
            name: format!("embed-round-{b}"),
            kernel: model.kernel,
            r: SideData::seal(Coefficients(r.clone())),
            landmarks: SideData::seal(LandmarkBlock(l.clone())),
        })
        .collect();
    let join = JoinPortions { q: model.q() };
    let mut stages: Vec<&dyn ChainStage<EmbedRecord>> = rounds.iter().map(|r| r as &dyn ChainStage<EmbedRecord>).collect();
    stages.push(&join);

    let input = KeyedBlocks::new(
        (0..dataset.partition_count())
            .map(|b| {
                dataset.instances()[dataset.block_range(b)]
                    .iter()
                    .map(|x| {
                        (
                            x.id,
                            EmbedRecord {
                                instance: Arc::new(x.clone()),
                                portions: Vec::new(),
                                embedding: None,
                            },
                        )
                    })
                    .collect()
            })
            .collect(),
    );
    let (out, reports) = engine.run_chain(&stages, input)?;
    let mut report = ShuffleReport::default();
    for r in &reports {
        report.merge(r);
    }

    let m = model.m_effective;
    let n = dataset.n();
    let mut data = vec![0.0; n * m];
    let mut seen = vec![false; n];
    for (id, rec) in out.into_records() {
        let y = rec.embedding.ok_or(Error::MissingPortion { id, block: 0 })?;
        let i = id as usize;
        data[i * m..(i + 1) * m].copy_from_slice(&y);
        seen[i] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::MissingPortion { id: i as u64, block: 0 });
    }
    let y = EmbeddingMatrix::from_flat(n, m, data, dataset.partition_count())?;
    Ok((y, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{Discrepancy, Landmarks, Variant};
    use crate::dataset::PartitionOptions;
    use std::collections::BTreeMap;

    fn points(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![(i as f64 * 0.9).sin(), (i as f64 * 0.3).cos()]).collect()
    }

    fn identity_model(ls: Vec<Instance>) -> ApncModel {
        let l = ls.len();
        ApncModel::new(
            Variant::Nystrom,
            Landmarks::new(vec![ls]).unwrap(),
            vec![DenseMatrix::identity(l)],
            KernelSpec::Linear,
            Discrepancy::L2,
            0,
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn identity_coefficients_give_dot_products() {
        let ds = PartitionedDataset::from_rows(points(9), PartitionOptions::new(3)).unwrap();
        let ls: Vec<Instance> = ds.instances()[..3].to_vec();
        let model = identity_model(ls.clone());
        let (y, report) = embed_all(&Engine::new(2).unwrap(), &ds, &model).unwrap();
        assert_eq!(report.records_shuffled, 0);
        assert_eq!((y.n(), y.m()), (9, 3));
        for (i, x) in ds.instances().iter().enumerate() {
            let want: Vec<f64> = ls.iter().map(|l| l.features.dot(&x.features).unwrap()).collect();
            assert_eq!(y.column(i), want.as_slice());
            assert_eq!(embed_one(x, &model).unwrap(), want);
        }
    }

    #[test]
    fn zero_instance_embeds_to_zero() {
        let ds = PartitionedDataset::from_rows(points(4), PartitionOptions::new(1)).unwrap();
        let model = identity_model(ds.instances().to_vec());
        let y = embed_one(&Instance::dense(0, vec![0.0, 0.0]), &model).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
        assert!(embed_one(&Instance::dense(0, vec![0.0]), &model).is_err());
    }

    #[test]
    fn join_reports_missing_portions() {
        let rec = EmbedRecord {
            instance: Arc::new(Instance::dense(0, vec![1.0])),
            portions: vec![(0, vec![1.0])],
            embedding: None,
        };
        let input = KeyedBlocks::new(vec![vec![(0, rec)]]);
        let err = Engine::new(1)
            .unwrap()
            .run_chain(&[&JoinPortions { q: 2 }], input)
            .unwrap_err();
        match err {
            Error::MapFailed { source, .. } => {
                assert!(matches!(*source, Error::MissingPortion { id: 0, block: 1 }))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn embedding_matrix_checks() {
        assert!(EmbeddingMatrix::from_flat(2, 2, vec![0.0; 3], 1).is_err());
        assert!(EmbeddingMatrix::from_flat(1, 1, vec![f64::INFINITY], 1).is_err());
        let y = EmbeddingMatrix::from_columns(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]], 2).unwrap();
        assert_eq!(y.block(1), vec![(2, &[5.0, 6.0][..])]);
        assert_eq!(y.columns().count(), 3);
    }
}
