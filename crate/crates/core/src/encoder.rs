//! Training pipelines and sign encoding into packed binary codes.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dictionary::{hierarchical_dictionary, zero_center, DictConfig};
use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::rotation::{assemble_rotation, optimize_block_rotation, BlockRotation, RotationConfig};
use crate::seed::{self, stream};
use crate::spectral::{approximate_spectral, ModelParams};

/// Rows per unit of work when accumulating a covariance in parallel.
const GRAM_CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Isch,
    Lsh,
    Itq,
}

impl Method {
    pub fn code(self) -> u8 {
        match self {
            Method::Isch => 0,
            Method::Lsh => 1,
            Method::Itq => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Method::Isch),
            1 => Some(Method::Lsh),
            2 => Some(Method::Itq),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Isch => "isch",
            Method::Lsh => "lsh",
            Method::Itq => "itq",
        }
    }
}

/// Provenance recorded alongside a trained model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ModelMeta {
    pub seed: u64,
    /// Dictionary size `k`; zero for the baselines.
    pub dict_size: u32,
    pub k1: u32,
}

/// A trained, immutable hash function `x ↦ sign(L (x − mean))`.
#[derive(Clone, Debug, PartialEq)]
pub struct HashModel {
    pub method: Method,
    /// `L`, `m × d`.
    pub projection: DMatrix<f64>,
    pub mean: Vec<f64>,
    /// Number of rotation blocks `Q` (1 for the baselines).
    pub blocks: usize,
    /// Prior parameters; only ISCH models carry them.
    pub params: Option<ModelParams>,
    pub meta: ModelMeta,
}

impl HashModel {
    pub fn bits(&self) -> usize {
        self.projection.nrows()
    }

    pub fn dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn block_len(&self) -> usize {
        self.bits() / self.blocks.max(1)
    }
}

/// `n` packed `m`-bit codes. Bit `j` of code `i` is bit `j % 64` of word
/// `j / 64` of that code; bits past `m` are zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryCodeSet {
    len: usize,
    bits: usize,
    words: Vec<u64>,
}

pub fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

fn pad_mask(bits: usize) -> u64 {
    match bits % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl BinaryCodeSet {
    pub fn new(len: usize, bits: usize, words: Vec<u64>) -> Result<Self> {
        let per = words_for(bits);
        if words.len() != len * per {
            return Err(Error::DimensionMismatch {
                expected: len * per,
                found: words.len(),
            });
        }
        if per > 0 {
            let mask = pad_mask(bits);
            if words.chunks_exact(per).any(|c| c[per - 1] & !mask != 0) {
                return Err(Error::format("code set", "pad bits beyond m are set"));
            }
        }
        Ok(BinaryCodeSet { len, bits, words })
    }

    pub fn from_bit_rows<R: AsRef<[bool]>>(bits: usize, rows: &[R]) -> Result<Self> {
        let per = words_for(bits);
        let mut words = vec![0u64; rows.len() * per];
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != bits {
                return Err(Error::DimensionMismatch {
                    expected: bits,
                    found: row.len(),
                });
            }
            pack_into(row.iter().copied(), &mut words[i * per..(i + 1) * per]);
        }
        Ok(BinaryCodeSet {
            len: rows.len(),
            bits,
            words,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words_per_code(&self) -> usize {
        words_for(self.bits)
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn code(&self, i: usize) -> &[u64] {
        let per = self.words_per_code();
        &self.words[i * per..(i + 1) * per]
    }

    pub fn bit(&self, i: usize, j: usize) -> bool {
        assert!(j < self.bits, "bit {j} out of range for {}-bit codes", self.bits);
        (self.code(i)[j / 64] >> (j % 64)) & 1 == 1
    }

    pub fn unpack(&self) -> Vec<Vec<bool>> {
        (0..self.len)
            .map(|i| (0..self.bits).map(|j| self.bit(i, j)).collect())
            .collect()
    }
}

fn pack_into(bits: impl Iterator<Item = bool>, dst: &mut [u64]) {
    for (j, b) in bits.enumerate() {
        if b {
            dst[j / 64] |= 1u64 << (j % 64);
        }
    }
}

/// Bit `i` of each code is set iff `Lᵢ · (x − mean) ≥ 0`.
pub fn encode_batch(model: &HashModel, x: &DataMatrix) -> Result<BinaryCodeSet> {
    if x.cols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: x.cols(),
        });
    }
    let bits = model.bits();
    let per = words_for(bits);
    let reduced = x.subtract_row(&model.mean)?.project(&model.projection)?;
    let mut words = vec![0u64; x.rows() * per];
    if per > 0 {
        words
            .par_chunks_mut(per)
            .zip(reduced.as_slice().par_chunks(bits))
            .for_each(|(dst, y)| pack_into(y.iter().map(|&v| v >= 0.0), dst));
    }
    BinaryCodeSet::new(x.rows(), bits, words)
}

/// Diagnostics from an ISCH training run.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub dict_size: usize,
    pub dict_level_sizes: Vec<usize>,
    pub singular_values: Vec<f64>,
    /// Largest cosine between subspaces of distinct blocks.
    pub block_overlap: f64,
    pub low_gain_rows: Vec<usize>,
    pub rotations: Vec<BlockRotation>,
}

impl TrainReport {
    pub fn final_block_errors(&self) -> Vec<f64> {
        self.rotations.iter().map(|r| r.final_error()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub model: HashModel,
    pub report: TrainReport,
}

/// Full ISCH pipeline: dictionary, column-sampled spectral step, and
/// per-block rotation. `dict_cfg` carries its own seed; `seed` drives
/// column sampling and rotation initialization.
pub fn train_isch(
    x: &DataMatrix,
    params: &ModelParams,
    dict_cfg: &DictConfig,
    rotation_cfg: &RotationConfig,
    seed: u64,
) -> Result<Trained> {
    params.validate()?;
    if x.rows() < 2 {
        return Err(Error::TooFewPoints {
            points: x.rows(),
            clusters: 2,
        });
    }
    let (centered, mean) = zero_center(x);
    let dictionary = hierarchical_dictionary(x, dict_cfg)?;
    if !dictionary.is_overcomplete() {
        log::warn!(
            "dictionary of {} atoms is not overcomplete for d = {}",
            dictionary.len(),
            dictionary.dim()
        );
    }
    if params.bits > dictionary.len() {
        return Err(Error::CodeLongerThanDictionary {
            bits: params.bits,
            atoms: dictionary.len(),
        });
    }

    let spectral = approximate_spectral(
        &dictionary.atoms,
        params,
        seed::derive(seed, &[stream::SPECTRAL]),
    )?;
    let low_gain_rows = spectral.low_gain_rows(params);
    if !low_gain_rows.is_empty() {
        log::warn!(
            "{} projection rows have gain below 1e-3 of the largest; their bits are noise-dominated",
            low_gain_rows.len()
        );
    }

    let reduced = centered.project(&spectral.projection)?.to_dmatrix();
    let len = params.block_len;
    let rotations: Vec<BlockRotation> = (0..params.blocks)
        .into_par_iter()
        .map(|j| {
            let segment = reduced.columns(j * len, len).into_owned();
            optimize_block_rotation(
                &segment,
                rotation_cfg,
                seed::derive(seed, &[stream::ROTATION, j as u64]),
            )
        })
        .collect();
    let rotation = assemble_rotation(rotations.iter().map(|r| r.rotation.clone()).collect())?;
    let projection = rotation.rotate_rows(&spectral.projection)?;

    let report = TrainReport {
        dict_size: dictionary.len(),
        dict_level_sizes: dictionary.level_sizes.clone(),
        singular_values: spectral.pairs.iter().map(|p| p.sigma).collect(),
        block_overlap: spectral.block_overlap(),
        low_gain_rows,
        rotations,
    };
    let model = HashModel {
        method: Method::Isch,
        projection,
        mean,
        blocks: params.blocks,
        params: Some(*params),
        meta: ModelMeta {
            seed,
            dict_size: dictionary.len() as u32,
            k1: dict_cfg.k1 as u32,
        },
    };
    Ok(Trained { model, report })
}

/// Random-projection baseline: i.i.d. standard Gaussian rows, not
/// normalized since the sign is scale-invariant. Centered on the mean of `x`.
pub fn train_lsh(x: &DataMatrix, bits: usize, seed: u64) -> Result<HashModel> {
    if bits == 0 {
        return Err(Error::InvalidParams("code length must be positive".into()));
    }
    let mut rng = seed::rng(seed::derive(seed, &[stream::LSH]));
    let projection = DMatrix::from_fn(bits, x.cols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(HashModel {
        method: Method::Lsh,
        projection,
        mean: x.column_means(),
        blocks: 1,
        params: None,
        meta: ModelMeta {
            seed,
            ..ModelMeta::default()
        },
    })
}

/// Top-`m` principal directions (`d × m`) of already centered data and
/// their covariance eigenvalues, descending.
pub fn pca_directions(centered: &DataMatrix, m: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let d = centered.cols();
    if m > d {
        return Err(Error::InvalidParams(format!(
            "cannot keep {m} principal directions of {d}-dimensional data"
        )));
    }
    // Partial Gram matrices are summed in chunk order, so the result does not
    // depend on thread scheduling.
    let partials: Vec<DMatrix<f64>> = centered
        .as_slice()
        .par_chunks(GRAM_CHUNK * d.max(1))
        .map(|chunk| {
            let rows = chunk.len() / d.max(1);
            let block = DMatrix::from_column_slice(d, rows, chunk);
            &block * block.transpose()
        })
        .collect();
    let mut cov = DMatrix::zeros(d, d);
    for p in partials {
        cov += p;
    }
    cov /= centered.rows().max(1) as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let dirs = DMatrix::from_columns(
        &order[..m]
            .iter()
            .map(|&i| eig.eigenvectors.column(i))
            .collect::<Vec<_>>(),
    );
    Ok((dirs, order[..m].iter().map(|&i| eig.eigenvalues[i]).collect()))
}

/// Iterative quantization baseline: PCA to `m` dimensions followed by one
/// full `m × m` rotation. Needs a `d × d` eigendecomposition, so it is only
/// practical for moderate `d`.
pub fn train_itq(
    x: &DataMatrix,
    bits: usize,
    rotation_cfg: &RotationConfig,
    seed: u64,
) -> Result<(HashModel, BlockRotation)> {
    if bits == 0 || bits > x.cols() {
        return Err(Error::InvalidParams(format!(
            "ITQ code length {bits} must lie in [1, {}]",
            x.cols()
        )));
    }
    let (centered, mean) = zero_center(x);
    let (dirs, _) = pca_directions(&centered, bits)?;
    let pca = dirs.transpose();
    let reduced = centered.project(&pca)?.to_dmatrix();
    let fit = optimize_block_rotation(&reduced, rotation_cfg, seed::derive(seed, &[stream::ITQ]));
    let projection = fit.rotation.transpose() * pca;
    let model = HashModel {
        method: Method::Itq,
        projection,
        mean,
        blocks: 1,
        params: None,
        meta: ModelMeta {
            seed,
            ..ModelMeta::default()
        },
    };
    Ok((model, fit))
}
