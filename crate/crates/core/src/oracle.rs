//! Explicit counterparts of quantities the hashing pipeline never computes.
//!
//! Production encoding never solves a lasso. These routines do, at small
//! scale, so the inner-product criterion behind `W` can be measured
//! directly: sample data from the sparse linear model, recover sparse codes
//! by coordinate descent, and compare code inner products with those of
//! projected vectors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LassoConfig {
    pub max_sweeps: usize,
    /// Stop when no coordinate moves by more than this in a sweep.
    pub tol: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            max_sweeps: 10_000,
            tol: 1e-12,
        }
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// `½‖x − Dc‖² + η‖c‖₁`.
pub fn lasso_objective(dictionary: &DMatrix<f64>, x: &DVector<f64>, eta: f64, c: &DVector<f64>) -> f64 {
    0.5 * (x - dictionary * c).norm_squared() + eta * c.lp_norm(1)
}

/// Cyclic coordinate descent for `min ½‖x − Dc‖² + η‖c‖₁`.
///
/// Each coordinate update is the exact minimizer along that coordinate
/// (`soft(dⱼᵀr + ‖dⱼ‖² cⱼ, η) / ‖dⱼ‖²`), so the objective never increases.
/// Zero-norm atoms keep a zero coefficient.
pub fn lasso_cd(
    dictionary: &DMatrix<f64>,
    x: &DVector<f64>,
    eta: f64,
    cfg: &LassoConfig,
) -> DVector<f64> {
    lasso_cd_traced(dictionary, x, eta, cfg).0
}

/// [`lasso_cd`] that also returns the objective after every sweep.
pub fn lasso_cd_traced(
    dictionary: &DMatrix<f64>,
    x: &DVector<f64>,
    eta: f64,
    cfg: &LassoConfig,
) -> (DVector<f64>, Vec<f64>) {
    let k = dictionary.ncols();
    let sq_norms: Vec<f64> = dictionary.column_iter().map(|c| c.norm_squared()).collect();
    let mut c = DVector::zeros(k);
    let mut residual = x.clone();
    let mut trace = vec![lasso_objective(dictionary, x, eta, &c)];
    for _ in 0..cfg.max_sweeps {
        let mut largest_step: f64 = 0.0;
        for j in 0..k {
            if sq_norms[j] == 0.0 {
                continue;
            }
            let atom = dictionary.column(j);
            let old = c[j];
            let rho = atom.dot(&residual) + sq_norms[j] * old;
            let new = soft_threshold(rho, eta) / sq_norms[j];
            if new != old {
                residual.axpy(old - new, &atom, 1.0);
                c[j] = new;
                largest_step = largest_step.max((new - old).abs());
            }
        }
        trace.push(lasso_objective(dictionary, x, eta, &c));
        if largest_step <= cfg.tol {
            break;
        }
    }
    (c, trace)
}

/// Worst violation of the lasso optimality conditions: `|dⱼᵀr| ≤ η` where
/// `cⱼ = 0` and `dⱼᵀr = η sign(cⱼ)` elsewhere, with `r = x − Dc`.
pub fn kkt_residual(dictionary: &DMatrix<f64>, x: &DVector<f64>, eta: f64, c: &DVector<f64>) -> f64 {
    let residual = x - dictionary * c;
    let correlation = dictionary.transpose() * residual;
    correlation
        .iter()
        .zip(c.iter())
        .map(|(&g, &cj)| {
            if cj == 0.0 {
                (g.abs() - eta).max(0.0)
            } else {
                (g - eta * cj.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Data drawn from `x = Dc + ε`, `cⱼ ~ Laplace(0, τ)`, `ε ~ N(0, σ²I)`.
#[derive(Clone, Debug)]
pub struct SparseModelSample {
    /// `n × d`.
    pub x: DataMatrix,
    /// `n × k`, the generating codes.
    pub codes: DMatrix<f64>,
    pub dictionary: DMatrix<f64>,
    pub tau: f64,
    pub sigma_sq: f64,
    pub seed: u64,
}

pub fn generate_sparse_model_data(
    dictionary: &DMatrix<f64>,
    n: usize,
    tau: f64,
    sigma_sq: f64,
    rng_seed: u64,
) -> Result<SparseModelSample> {
    if !(tau > 0.0 && tau.is_finite()) || !(sigma_sq >= 0.0 && sigma_sq.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "tau ({tau}) must be positive and sigma² ({sigma_sq}) nonnegative"
        )));
    }
    let (d, k) = dictionary.shape();
    let mut rng = seed::rng(rng_seed);
    let magnitude = Exp::new(1.0 / tau).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let codes = DMatrix::from_fn(n, k, |_, _| {
        let m: f64 = rng.sample(magnitude);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    });
    let noise_scale = sigma_sq.sqrt();
    let mut x = &codes * dictionary.transpose();
    if noise_scale > 0.0 {
        for v in x.iter_mut() {
            *v += noise_scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    debug_assert_eq!(x.ncols(), d);
    Ok(SparseModelSample {
        x: DataMatrix::from_dmatrix(&x),
        codes,
        dictionary: dictionary.clone(),
        tau,
        sigma_sq,
        seed: rng_seed,
    })
}

/// Lasso codes `ĉᵢ` for every row of the sample, as an `n × k` matrix.
pub fn lasso_codes(sample: &SparseModelSample, eta: f64, cfg: &LassoConfig) -> DMatrix<f64> {
    let rows: Vec<DVector<f64>> = (0..sample.x.rows())
        .into_par_iter()
        .map(|i| {
            let x = DVector::from_column_slice(sample.x.row(i));
            lasso_cd(&sample.dictionary, &x, eta, cfg)
        })
        .collect();
    let k = sample.dictionary.ncols();
    DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j])
}

/// Mean over pairs `i < j` of `(ĉᵢᵀĉⱼ − (Lxᵢ)ᵀ(Lxⱼ))²` for precomputed codes.
pub fn distortion_with_codes(projection: &DMatrix<f64>, x: &DataMatrix, codes: &DMatrix<f64>) -> Result<f64> {
    let n = x.rows();
    if codes.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: codes.nrows(),
        });
    }
    if n < 2 {
        return Err(Error::TooFewPoints { points: n, clusters: 2 });
    }
    let reduced = x.project(projection)?.to_dmatrix();
    let code_gram = codes * codes.transpose();
    let reduced_gram = &reduced * reduced.transpose();
    let mut total = 0.0;
    for j in 1..n {
        for i in 0..j {
            let diff = code_gram[(i, j)] - reduced_gram[(i, j)];
            total += diff * diff;
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Inner-product distortion of projection `L` against lasso codes at weight `eta`.
pub fn inner_product_distortion(
    projection: &DMatrix<f64>,
    sample: &SparseModelSample,
    eta: f64,
) -> Result<f64> {
    let codes = lasso_codes(sample, eta, &LassoConfig::default());
    distortion_with_codes(projection, &sample.x, &codes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_dictionary(d: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seed::rng(seed);
        let mut m = DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        for mut c in m.column_iter_mut() {
            let n = c.norm();
            c /= n;
        }
        m
    }

    #[test]
    fn large_eta_gives_zero() {
        let d = unit_dictionary(8, 16, 1);
        let x = DVector::from_fn(8, |i, _| (i as f64).cos());
        let eta = (d.transpose() * &x).amax();
        assert_eq!(lasso_cd(&d, &x, eta, &LassoConfig::default()), DVector::zeros(16));
        assert!(lasso_cd(&d, &x, 0.9 * eta, &LassoConfig::default()).amax() > 0.0);
    }

    #[test]
    fn objective_never_increases() {
        for s in 0..10 {
            let d = unit_dictionary(12, 24, s);
            let x = DVector::from_fn(12, |i, _| ((i + s as usize) as f64).sin());
            let (c, trace) = lasso_cd_traced(&d, &x, 0.05, &LassoConfig::default());
            assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-15 * w[0].abs()));
            assert!(kkt_residual(&d, &x, 0.05, &c) < 1e-6);
        }
    }

    #[test]
    fn laplace_codes_and_noiseless_data() {
        let d = unit_dictionary(4, 6, 2);
        let s = generate_sparse_model_data(&d, 50, 0.3, 0.0, 9).unwrap();
        let exact = &s.codes * d.transpose();
        assert!((s.x.to_dmatrix() - exact).amax() < 1e-12);

        let tiny = generate_sparse_model_data(&d, 50, 1e-12, 0.01, 9).unwrap();
        assert!(tiny.codes.amax() < 1e-9);
        assert!(tiny.x.to_dmatrix().amax() > 1e-3);
        assert!(generate_sparse_model_data(&d, 5, 0.0, 0.1, 0).is_err());
    }

    #[test]
    fn zero_projection_distortion() {
        let d = unit_dictionary(4, 6, 3);
        let s = generate_sparse_model_data(&d, 10, 0.2, 0.01, 1).unwrap();
        let zero = DMatrix::zeros(2, 4);
        assert_eq!(inner_product_distortion(&zero, &s, 1e6).unwrap(), 0.0);

        let codes = lasso_codes(&s, 0.01, &LassoConfig::default());
        let gram = &codes * codes.transpose();
        let mut expected = 0.0;
        for j in 1..10 {
            for i in 0..j {
                expected += gram[(i, j)] * gram[(i, j)];
            }
        }
        expected /= 45.0;
        let got = distortion_with_codes(&zero, &s.x, &codes).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }
}
