//! Construction of the dimensionality-reduction matrix `W = diag(f(λ)) Vᵀ`.
//!
//! Under the sparse linear model `x = Dc + ε` (Laplace prior of scale `τ` on
//! the code entries, Gaussian noise of variance `σ²`), the linear map that
//! best preserves sparse-code inner products is, up to an `m × m` rotation,
//! the top-`m` eigenvectors of `DDᵀ`, each scaled by `f(λ)`.
//!
//! Two routes to the eigenpairs are provided:
//!
//! - [`exact_spectral`] takes a full SVD of `D`. Only practical for small `d`.
//! - [`approximate_spectral`] samples `m` dictionary columns, splits them into
//!   `Q` blocks of `ℓ`, and for each block takes the SVD of the projection of
//!   `D` onto the span of the block's columns ([`subproblem_pairs`]). Each
//!   block costs one `d × ℓ` and one `ℓ × k` SVD.
//!
//! Pairs are never re-sorted across blocks: block `j` owns rows
//! `[jℓ, (j+1)ℓ)` of `W`, matching the block-diagonal rotation fitted later.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::sorted_svd;
use crate::seed::{self, stream};

/// A block is rank deficient when `σ_min / σ_max` falls to this level.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Redraws allowed for a rank-deficient block before giving up.
pub const MAX_RESAMPLES: usize = 20;

/// Rows whose gain falls below this fraction of the largest gain are
/// reported as noise-dominated.
pub const LOW_GAIN_RATIO: f64 = 1e-3;

/// Prior and code-shape parameters of the hashing model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    /// Laplace scale `τ` of the sparse-code prior.
    pub tau: f64,
    /// Noise variance `σ²`, always `eta * tau`.
    pub sigma_sq: f64,
    /// Lasso weight `η`.
    pub eta: f64,
    /// Code length `m`.
    pub bits: usize,
    /// Number of blocks `Q`.
    pub blocks: usize,
    /// Block length `ℓ = m / Q`.
    pub block_len: usize,
}

impl ModelParams {
    pub fn new(tau: f64, eta: f64, bits: usize, blocks: usize) -> Result<Self> {
        if blocks == 0 || !bits.is_multiple_of(blocks) {
            return Err(Error::InvalidParams(format!(
                "bits ({bits}) must be a positive multiple of blocks ({blocks})"
            )));
        }
        let params = ModelParams {
            tau,
            sigma_sq: eta * tau,
            eta,
            bits,
            blocks,
            block_len: bits / blocks,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.tau) && positive(self.eta) && positive(self.sigma_sq)) {
            return Err(Error::InvalidParams(format!(
                "tau ({}), eta ({}) and sigma² ({}) must be finite and positive",
                self.tau, self.eta, self.sigma_sq
            )));
        }
        if self.bits == 0 || self.blocks == 0 || self.blocks * self.block_len != self.bits {
            return Err(Error::InvalidParams(format!(
                "bits ({}) must equal blocks ({}) × block length ({})",
                self.bits, self.blocks, self.block_len
            )));
        }
        let relation = (self.sigma_sq - self.eta * self.tau).abs();
        if relation > 1e-12 * self.sigma_sq.max(self.eta * self.tau) {
            return Err(Error::InvalidParams(format!(
                "sigma² ({}) must equal eta × tau ({})",
                self.sigma_sq,
                self.eta * self.tau
            )));
        }
        Ok(())
    }

    /// Eigenvalue at which `f` peaks: `σ² / (2τ²)`.
    pub fn peak_lambda(&self) -> f64 {
        self.sigma_sq / (2.0 * self.tau * self.tau)
    }

    /// Largest value `f` can take: `τ / (σ√2)`.
    pub fn peak_gain(&self) -> f64 {
        self.tau / (2.0 * self.sigma_sq).sqrt()
    }
}

/// Gain applied to an eigenvector of `DDᵀ` with eigenvalue `lambda`.
///
/// `f(λ) = sqrt(4τ⁴λ / (σ⁴ + 4τ²σ²λ + 4τ⁴λ²))`. The denominator is the
/// perfect square `(σ² + 2τ²λ)²`, so this evaluates
/// `2τ²√λ / (σ² + 2τ²λ)`, which cannot overflow for large `λ`.
pub fn f_lambda(lambda: f64, params: &ModelParams) -> f64 {
    debug_assert!(lambda >= 0.0, "eigenvalue must be nonnegative");
    let scaled = 2.0 * params.tau * params.tau;
    scaled * lambda.sqrt() / (params.sigma_sq + scaled * lambda)
}

/// One singular value / left singular vector pair of a (projected) dictionary.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularPair {
    pub sigma: f64,
    /// Unit-norm left singular vector in `ℝᵈ`.
    pub vector: DVector<f64>,
    pub block: usize,
}

impl SingularPair {
    /// Eigenvalue of `DDᵀ` carried by this pair, `σ²`.
    pub fn lambda(&self) -> f64 {
        self.sigma * self.sigma
    }
}

#[derive(Clone, Debug)]
pub struct SpectralModel {
    /// `m` pairs, block `j` occupying `[jℓ, (j+1)ℓ)`.
    pub pairs: Vec<SingularPair>,
    /// `W`, `m × d`.
    pub projection: DMatrix<f64>,
    pub block_len: usize,
    /// Dictionary columns behind each block; empty for the exact route.
    pub sampled_columns: Vec<Vec<usize>>,
}

impl SpectralModel {
    pub fn bits(&self) -> usize {
        self.projection.nrows()
    }

    pub fn blocks(&self) -> usize {
        self.bits() / self.block_len
    }

    /// Rows of `W` belonging to block `j`.
    pub fn block_rows(&self, block: usize) -> DMatrix<f64> {
        self.projection
            .rows(block * self.block_len, self.block_len)
            .into_owned()
    }

    fn block_vectors(&self, block: usize) -> DMatrix<f64> {
        let start = block * self.block_len;
        DMatrix::from_columns(
            &self.pairs[start..start + self.block_len]
                .iter()
                .map(|p| p.vector.clone())
                .collect::<Vec<_>>(),
        )
    }

    /// Largest `‖UᵢᵀUⱼ‖₂` over distinct blocks: the cosine of the smallest
    /// principal angle between two blocks' subspaces. Zero for one block.
    pub fn block_overlap(&self) -> f64 {
        let bases: Vec<_> = (0..self.blocks()).map(|b| self.block_vectors(b)).collect();
        let mut worst: f64 = 0.0;
        for i in 0..bases.len() {
            for j in i + 1..bases.len() {
                let cross = bases[i].transpose() * &bases[j];
                let top = cross.singular_values().max();
                worst = worst.max(top);
            }
        }
        worst
    }

    /// Largest deviation from orthonormality among the vectors of any one block.
    pub fn block_orthogonality_residual(&self) -> f64 {
        (0..self.blocks())
            .map(|b| crate::matrix::orthogonality_residual(&self.block_vectors(b)))
            .fold(0.0, f64::max)
    }

    /// Indices of rows whose gain is below [`LOW_GAIN_RATIO`] of the largest gain.
    pub fn low_gain_rows(&self, params: &ModelParams) -> Vec<usize> {
        let gains: Vec<f64> = self
            .pairs
            .iter()
            .map(|p| f_lambda(p.lambda(), params))
            .collect();
        let top = gains.iter().cloned().fold(0.0, f64::max);
        gains
            .iter()
            .enumerate()
            .filter(|(_, &g)| g < LOW_GAIN_RATIO * top)
            .map(|(i, _)| i)
            .collect()
    }
}

fn check_bits(m: usize, params: &ModelParams) -> Result<()> {
    params.validate()?;
    if m != params.bits {
        return Err(Error::InvalidParams(format!(
            "requested {m} pairs but params describe {} bits",
            params.bits
        )));
    }
    Ok(())
}

/// Reference route: top-`m` singular pairs of `D` from a full SVD.
pub fn exact_spectral(
    dictionary: &DMatrix<f64>,
    m: usize,
    params: &ModelParams,
) -> Result<SpectralModel> {
    check_bits(m, params)?;
    let d = dictionary.nrows();
    if m > d {
        return Err(Error::InvalidParams(format!(
            "cannot take {m} eigenpairs of a {d}-dimensional dictionary"
        )));
    }
    let svd = sorted_svd(dictionary);
    let values = &svd.singular_values;
    let top = values.iter().cloned().fold(0.0, f64::max);
    let found = values.iter().filter(|&&s| s > RANK_TOLERANCE * top).count();
    if found < m {
        return Err(Error::InsufficientRank { needed: m, found });
    }
    let pairs: Vec<SingularPair> = (0..m)
        .map(|i| SingularPair {
            sigma: values[i],
            vector: svd.u.column(i).into_owned(),
            block: i / params.block_len,
        })
        .collect();
    let projection = assemble_w(&pairs, params)?;
    Ok(SpectralModel {
        pairs,
        projection,
        block_len: params.block_len,
        sampled_columns: Vec::new(),
    })
}

/// Draw `m` distinct columns of `D` uniformly without replacement.
pub fn sample_columns(
    dictionary: &DMatrix<f64>,
    m: usize,
    rng_seed: u64,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let k = dictionary.ncols();
    if m > k {
        return Err(Error::SampleTooLarge {
            sample: m,
            available: k,
        });
    }
    let mut rng = seed::rng(rng_seed);
    let indices = index::sample(&mut rng, k, m).into_vec();
    Ok((dictionary.select_columns(&indices), indices))
}

fn full_rank(values: &DVector<f64>, needed: usize) -> bool {
    if values.len() < needed || needed == 0 {
        return false;
    }
    let top = values.max();
    let bottom = values.min();
    top > 0.0 && bottom / top > RANK_TOLERANCE
}

/// Singular pairs of `U_C U_Cᵀ D` for one block of sampled columns `C`.
///
/// With `C = U Σ Vᵀ` (thin) and `A = UᵀD = U_A Σ_A V_Aᵀ`, the projection
/// factors as `(U U_A) Σ_A V_Aᵀ`, and `U U_A` has orthonormal columns, so
/// `Σ_A` and the columns of `U U_A` are its singular pairs. If `C` fails the
/// rank test, `resample(attempt)` supplies a replacement block, at most
/// [`MAX_RESAMPLES`] times.
pub fn subproblem_pairs<F>(
    columns: &DMatrix<f64>,
    dictionary: &DMatrix<f64>,
    block: usize,
    mut resample: F,
) -> Result<Vec<SingularPair>>
where
    F: FnMut(usize) -> Result<DMatrix<f64>>,
{
    let block_len = columns.ncols();
    let mut current = columns.clone();
    for attempt in 0..=MAX_RESAMPLES {
        if current.nrows() != dictionary.nrows() || current.ncols() != block_len {
            return Err(Error::DimensionMismatch {
                expected: dictionary.nrows() * block_len,
                found: current.nrows() * current.ncols(),
            });
        }
        let svd = sorted_svd(&current);
        if full_rank(&svd.singular_values, block_len) {
            let basis = svd.u.columns(0, block_len);
            let reduced = basis.transpose() * dictionary;
            let inner = sorted_svd(&reduced);
            let vectors = basis * &inner.u;
            return Ok((0..block_len)
                .map(|j| SingularPair {
                    sigma: inner.singular_values[j],
                    vector: vectors.column(j).into_owned(),
                    block,
                })
                .collect());
        }
        if attempt == MAX_RESAMPLES {
            break;
        }
        log::debug!("block {block}: rank test failed, resampling (attempt {attempt})");
        current = resample(attempt)?;
    }
    Err(Error::DegenerateBlock {
        block,
        attempts: MAX_RESAMPLES,
    })
}

/// `W` with row `i` equal to `f(σᵢ²) · vᵢᵀ`, in the given pair order.
pub fn assemble_w(pairs: &[SingularPair], params: &ModelParams) -> Result<DMatrix<f64>> {
    if pairs.len() != params.bits {
        return Err(Error::DimensionMismatch {
            expected: params.bits,
            found: pairs.len(),
        });
    }
    let d = pairs.first().map_or(0, |p| p.vector.len());
    let mut w = DMatrix::zeros(pairs.len(), d);
    for (i, pair) in pairs.iter().enumerate() {
        if pair.vector.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: pair.vector.len(),
            });
        }
        let gain = f_lambda(pair.lambda(), params);
        w.set_row(i, &(pair.vector.transpose() * gain));
    }
    Ok(w)
}

/// Column-sampled route to `W` for dictionaries too large for a full SVD.
///
/// Samples `m` atoms, splits them into `Q` consecutive blocks of `ℓ`, and
/// solves each block's subproblem independently (in parallel). A block
/// failing the rank test redraws its `ℓ` columns from the atoms not held by
/// any other block, using a generator keyed by `(seed, block, attempt)`.
pub fn approximate_spectral(
    dictionary: &DMatrix<f64>,
    params: &ModelParams,
    rng_seed: u64,
) -> Result<SpectralModel> {
    params.validate()?;
    let m = params.bits;
    let k = dictionary.ncols();
    let (_, indices) = sample_columns(dictionary, m, rng_seed)?;
    let len = params.block_len;
    let blocks: Vec<Vec<usize>> = indices.chunks(len).map(|c| c.to_vec()).collect();

    let solved: Vec<(Vec<SingularPair>, Vec<usize>)> = blocks
        .par_iter()
        .enumerate()
        .map(|(b, own)| {
            let mut held = own.clone();
            let pool: Vec<usize> = {
                let others: std::collections::HashSet<usize> = blocks
                    .iter()
                    .enumerate()
                    .filter(|(o, _)| *o != b)
                    .flat_map(|(_, cols)| cols.iter().copied())
                    .collect();
                (0..k).filter(|c| !others.contains(c)).collect()
            };
            let pairs = subproblem_pairs(&dictionary.select_columns(own), dictionary, b, |attempt| {
                let mut rng = seed::rng(seed::derive(
                    rng_seed,
                    &[stream::RESAMPLE, b as u64, attempt as u64],
                ));
                held = index::sample(&mut rng, pool.len(), len)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect();
                Ok(dictionary.select_columns(&held))
            })?;
            Ok((pairs, held))
        })
        .collect::<Result<_>>()?;

    let mut pairs = Vec::with_capacity(m);
    let mut sampled_columns = Vec::with_capacity(params.blocks);
    for (block_pairs, cols) in solved {
        pairs.extend(block_pairs);
        sampled_columns.push(cols);
    }
    let projection = assemble_w(&pairs, params)?;
    Ok(SpectralModel {
        pairs,
        projection,
        block_len: len,
        sampled_columns,
    })
}
