//! Block-diagonal rotation fitted by quantization-error alternation.
//!
//! With `R = blockdiag(R₁, …, R_Q)`, the joint problem over codes and
//! rotation separates into `Q` independent problems on `ℓ`-column segments
//! `Zⱼ` of the reduced data. Each is solved ITQ-style: fix the signed codes
//! `B = sign(Zⱼ Rⱼ)`, then refit `Rⱼ` by orthogonal Procrustes, and repeat.
//! Codes are `±1` here; storage maps them to `{0, 1}` bits.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::orthogonality_residual;
use crate::seed;

/// Blocks whose `‖RᵀR − I‖_∞` exceeds this are rejected.
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationConfig {
    pub max_sweeps: usize,
    /// Stop once the relative drop in error between sweeps is below this.
    pub rel_tol: f64,
}

impl Default for RotationConfig {
    fn default() -> Self {
        RotationConfig {
            max_sweeps: 50,
            rel_tol: 1e-4,
        }
    }
}

/// Result of fitting one rotation block.
#[derive(Clone, Debug)]
pub struct BlockRotation {
    pub rotation: DMatrix<f64>,
    /// Quantization error at the initial rotation, then after every sweep.
    pub history: Vec<f64>,
}

impl BlockRotation {
    pub fn final_error(&self) -> f64 {
        *self.history.last().expect("history always holds the initial error")
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `Σᵢ ‖sign(Zᵢ R) − Zᵢ R‖²`, with `sign(0) = +1`.
pub fn quantization_error(z: &DMatrix<f64>, rotation: &DMatrix<f64>) -> f64 {
    residual(&(z * rotation))
}

fn residual(rotated: &DMatrix<f64>) -> f64 {
    rotated
        .iter()
        .map(|&v| {
            let r = sign(v) - v;
            r * r
        })
        .sum()
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
pub fn random_orthogonal(size: usize, rng_seed: u64) -> DMatrix<f64> {
    let mut rng = seed::rng(rng_seed);
    let gaussian = DMatrix::from_fn(size, size, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gaussian.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..size {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Orthogonal `R` maximizing `tr(Rᵀ ZᵀB)`, i.e. minimizing `‖B − ZR‖_F`.
fn procrustes(z: &DMatrix<f64>, codes: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = (z.transpose() * codes).svd(true, true);
    svd.u.expect("u requested") * svd.v_t.expect("v_t requested")
}

/// Fit one `ℓ × ℓ` rotation block to the `n × ℓ` segment `z`.
///
/// Starts from a seeded random rotation. Each sweep refits the rotation to
/// the current signs and then re-signs. Both half-steps are exact minimizers,
/// so the error cannot rise; a sweep that would raise it through rounding is
/// discarded and ends the fit, which keeps `history` non-increasing.
pub fn optimize_block_rotation(z: &DMatrix<f64>, cfg: &RotationConfig, rng_seed: u64) -> BlockRotation {
    refine_rotation(z, cfg, random_orthogonal(z.ncols(), rng_seed))
}

/// The alternation of [`optimize_block_rotation`] from a given orthogonal
/// starting rotation. The fit is local: different starts can settle at
/// different fixed points.
pub fn refine_rotation(z: &DMatrix<f64>, cfg: &RotationConfig, initial: DMatrix<f64>) -> BlockRotation {
    let mut rotation = initial;
    let mut rotated = z * &rotation;
    let mut error = residual(&rotated);
    let mut history = vec![error];
    for _ in 0..cfg.max_sweeps {
        let codes = rotated.map(sign);
        let candidate = procrustes(z, &codes);
        let candidate_rotated = z * &candidate;
        let candidate_error = residual(&candidate_rotated);
        if candidate_error > error {
            break;
        }
        let drop = error - candidate_error;
        rotation = candidate;
        rotated = candidate_rotated;
        error = candidate_error;
        history.push(error);
        if drop <= cfg.rel_tol * error.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    BlockRotation { rotation, history }
}

/// Block-diagonal `m × m` rotation stored as its `Q` diagonal blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationModel {
    blocks: Vec<DMatrix<f64>>,
    block_len: usize,
}

/// Wrap `Q` orthogonal `ℓ × ℓ` blocks.
pub fn assemble_rotation(blocks: Vec<DMatrix<f64>>) -> Result<RotationModel> {
    let block_len = blocks.first().map_or(0, |b| b.nrows());
    for (i, b) in blocks.iter().enumerate() {
        if b.nrows() != block_len || b.ncols() != block_len {
            return Err(Error::DimensionMismatch {
                expected: block_len,
                found: if b.nrows() != block_len { b.nrows() } else { b.ncols() },
            });
        }
        let residual = orthogonality_residual(b);
        if !(residual < ORTHOGONALITY_TOLERANCE) {
            return Err(Error::InvalidRotationBlock { block: i, residual });
        }
    }
    Ok(RotationModel { blocks, block_len })
}

impl RotationModel {
    pub fn identity(blocks: usize, block_len: usize) -> Self {
        RotationModel {
            blocks: vec![DMatrix::identity(block_len, block_len); blocks],
            block_len,
        }
    }

    pub fn bits(&self) -> usize {
        self.blocks.len() * self.block_len
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    fn check(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.bits() {
            return Err(Error::DimensionMismatch {
                expected: self.bits(),
                found: v.len(),
            });
        }
        Ok(())
    }

    /// `Rᵀ v`: segment `j` of `v` is mapped by `Rⱼᵀ`.
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(v)?;
        let mut out = DVector::zeros(v.len());
        for (j, block) in self.blocks.iter().enumerate() {
            let seg = v.rows(j * self.block_len, self.block_len);
            out.rows_mut(j * self.block_len, self.block_len)
                .copy_from(&(block.transpose() * seg));
        }
        Ok(out)
    }

    /// `R v`, the inverse of [`RotationModel::apply`].
    pub fn apply_transpose(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(v)?;
        let mut out = DVector::zeros(v.len());
        for (j, block) in self.blocks.iter().enumerate() {
            let seg = v.rows(j * self.block_len, self.block_len);
            out.rows_mut(j * self.block_len, self.block_len)
                .copy_from(&(block * seg));
        }
        Ok(out)
    }

    /// `Rᵀ W` for an `m × d` matrix `W`, block by block.
    pub fn rotate_rows(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if w.nrows() != self.bits() {
            return Err(Error::DimensionMismatch {
                expected: self.bits(),
                found: w.nrows(),
            });
        }
        let mut out = DMatrix::zeros(w.nrows(), w.ncols());
        for (j, block) in self.blocks.iter().enumerate() {
            let rows = w.rows(j * self.block_len, self.block_len);
            out.rows_mut(j * self.block_len, self.block_len)
                .copy_from(&(block.transpose() * rows));
        }
        Ok(out)
    }
}
