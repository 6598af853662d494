//! Overcomplete dictionary learning by hierarchical k-means over
//! random-projection proxies.
//!
//! Each level draws one Gaussian projection `P_h` (`d × d_ℓ`) and clusters
//! the proxies `P_hᵀ x` of every cluster from the previous level. Atoms are
//! the means of cluster members in the original space, collected from all
//! levels and unit-normalized. Level one makes `k1` clusters; every later
//! level splits each sufficiently large cluster into `k2 = 2 k1`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, DataMatrix};
use crate::seed::{self, stream};

/// Atoms with a norm at or below this are dropped instead of normalized.
const MIN_ATOM_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansConfig {
    pub max_iters: usize,
    /// Relative objective change below which iteration stops.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            max_iters: 25,
            tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KMeansResult {
    /// `k × d` centers, row-major.
    pub centers: DataMatrix,
    pub assignment: Vec<usize>,
    /// Objective after each assignment step.
    pub objective: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DictConfig {
    pub k1: usize,
    /// Number of levels `H`.
    pub levels: usize,
    /// Proxy dimension `d_ℓ`.
    pub proxy_dim: usize,
    /// Clusters smaller than this are not split further.
    pub min_split: usize,
    pub seed: u64,
    pub kmeans_iters: usize,
    pub kmeans_tol: f64,
}

impl DictConfig {
    /// Defaults for data of dimension `d`: two levels, proxies of
    /// `min(d, 256)` dimensions, split threshold `2 k2`, 25 k-means
    /// iterations at tolerance `1e-4`.
    pub fn new(k1: usize, d: usize) -> Self {
        DictConfig {
            k1,
            levels: 2,
            proxy_dim: d.min(256),
            min_split: 4 * k1,
            seed: 0,
            kmeans_iters: 25,
            kmeans_tol: 1e-4,
        }
    }

    pub fn k2(&self) -> usize {
        2 * self.k1
    }

    /// Upper bound on the number of atoms this configuration can produce.
    pub fn max_atoms(&self) -> usize {
        let mut total = 0usize;
        let mut width = 1usize;
        for level in 0..self.levels {
            width = width.saturating_mul(if level == 0 { self.k1 } else { self.k2() });
            total = total.saturating_add(width);
        }
        total
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.k1 == 0 || self.levels == 0 || self.kmeans_iters == 0 {
            return Err(Error::InvalidParams(
                "k1, levels and kmeans iterations must be positive".into(),
            ));
        }
        if self.proxy_dim == 0 || self.proxy_dim > d {
            return Err(Error::InvalidParams(format!(
                "proxy dimension {} must lie in [1, {d}]",
                self.proxy_dim
            )));
        }
        if self.levels > 1 && self.min_split < self.k2() {
            return Err(Error::InvalidParams(format!(
                "split threshold {} is below the level-2 branching {}",
                self.min_split,
                self.k2()
            )));
        }
        if !(self.kmeans_tol >= 0.0) {
            return Err(Error::InvalidParams("kmeans tolerance must be nonnegative".into()));
        }
        Ok(())
    }

    fn kmeans_config(&self, seed: u64) -> KMeansConfig {
        KMeansConfig {
            max_iters: self.kmeans_iters,
            tol: self.kmeans_tol,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dictionary {
    /// `d × k`, unit-norm columns.
    pub atoms: DMatrix<f64>,
    /// Mean removed from the training data before clustering.
    pub source_mean: Vec<f64>,
    /// Atoms contributed by each level.
    pub level_sizes: Vec<usize>,
}

impl Dictionary {
    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn is_overcomplete(&self) -> bool {
        self.len() > self.dim()
    }
}

/// Subtract the column means; returns the centered data and the mean.
pub fn zero_center(x: &DataMatrix) -> (DataMatrix, Vec<f64>) {
    let mean = x.column_means();
    let centered = x
        .subtract_row(&mean)
        .expect("mean has one entry per column");
    (centered, mean)
}

fn nearest(point: &[f64], centers: &DataMatrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.row_iter().enumerate() {
        let dist = squared_distance(point, center);
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

fn plus_plus_init(x: &DataMatrix, k: usize, rng: &mut seed::Rng) -> DataMatrix {
    let n = x.rows();
    let mut centers = DataMatrix::zeros(k, x.cols());
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(x.row(first));
    let mut dist: Vec<f64> = x
        .row_iter()
        .map(|p| squared_distance(p, centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(x.row(pick));
        let new = centers.row(c).to_vec();
        dist.par_iter_mut()
            .zip(x.as_slice().par_chunks(x.cols().max(1)))
            .for_each(|(d, p)| *d = d.min(squared_distance(p, &new)));
    }
    centers
}

fn assign(x: &DataMatrix, centers: &DataMatrix) -> (Vec<usize>, Vec<f64>) {
    (0..x.rows())
        .into_par_iter()
        .map(|i| nearest(x.row(i), centers))
        .unzip()
}

/// Lloyd's k-means with k-means++ seeding.
///
/// The objective is recorded after every assignment step and never rises.
/// Stops after `max_iters` assignments, when assignments stop changing, or
/// when the relative objective change falls below `tol`. A cluster left
/// empty takes over the point currently farthest from its center.
pub fn kmeans(x: &DataMatrix, k: usize, cfg: &KMeansConfig) -> Result<KMeansResult> {
    let n = x.rows();
    if k == 0 {
        return Err(Error::InvalidParams("k-means needs at least one cluster".into()));
    }
    if n < k {
        return Err(Error::TooFewPoints {
            points: n,
            clusters: k,
        });
    }
    let d = x.cols();
    let mut rng = seed::rng(cfg.seed);
    let mut centers = plus_plus_init(x, k, &mut rng);
    let (mut assignment, mut dist) = assign(x, &centers);
    let mut objective = vec![dist.iter().sum::<f64>()];

    for _ in 1..cfg.max_iters.max(1) {
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        let mut taken = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centers.row_mut(c).iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                    *dst = s * inv;
                }
            } else {
                // refill from the farthest point not already used for a refill
                let far = dist
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken.contains(i))
                    .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .expect("n >= k leaves a point to take");
                taken.push(far);
                centers.row_mut(c).copy_from_slice(x.row(far));
            }
        }
        let (next_assignment, next_dist) = assign(x, &centers);
        let value: f64 = next_dist.iter().sum();
        let previous = *objective.last().expect("objective is non-empty");
        let unchanged = next_assignment == assignment;
        assignment = next_assignment;
        dist = next_dist;
        objective.push(value);
        if unchanged || (previous - value).abs() <= cfg.tol * previous.abs() {
            break;
        }
    }
    Ok(KMeansResult {
        centers,
        assignment,
        objective,
    })
}

fn gaussian_projection(d: usize, proxy_dim: usize, rng_seed: u64) -> DMatrix<f64> {
    // Rows act on data vectors, so this is P_hᵀ (d_ℓ × d), variance 1/d_ℓ.
    let mut rng = seed::rng(rng_seed);
    let scale = 1.0 / (proxy_dim as f64).sqrt();
    DMatrix::from_fn(proxy_dim, d, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn member_mean(x: &DataMatrix, members: &[usize]) -> Vec<f64> {
    let mut mean = vec![0.0; x.cols()];
    for &i in members {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    let inv = 1.0 / members.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

/// Learn a dictionary from the rows of `x`.
///
/// Atom order is level-major: all level-one atoms by cluster index, then
/// level-two atoms ordered by (parent, child), and so on, independent of
/// how the per-cluster work is scheduled.
pub fn hierarchical_dictionary(x: &DataMatrix, cfg: &DictConfig) -> Result<Dictionary> {
    let d = x.cols();
    cfg.validate(d)?;
    if x.rows() < cfg.k1 {
        return Err(Error::TooFewPoints {
            points: x.rows(),
            clusters: cfg.k1,
        });
    }
    let (centered, mean) = zero_center(x);

    let mut atoms: Vec<Vec<f64>> = Vec::new();
    let mut level_sizes = Vec::with_capacity(cfg.levels);
    let mut clusters: Vec<Vec<usize>> = vec![(0..x.rows()).collect()];

    for level in 0..cfg.levels {
        let branching = if level == 0 { cfg.k1 } else { cfg.k2() };
        let threshold = if level == 0 { cfg.k1 } else { cfg.min_split };
        let projection = gaussian_projection(
            d,
            cfg.proxy_dim,
            seed::derive(cfg.seed, &[stream::PROJECTION, level as u64]),
        );
        let proxies = centered.project(&projection)?;

        let children: Vec<Vec<Vec<usize>>> = clusters
            .par_iter()
            .enumerate()
            .map(|(parent, members)| {
                if members.len() < threshold {
                    return Ok(Vec::new());
                }
                let km = kmeans(
                    &proxies.select_rows(members),
                    branching,
                    &cfg.kmeans_config(seed::derive(
                        cfg.seed,
                        &[stream::KMEANS, level as u64, parent as u64],
                    )),
                )?;
                let mut groups = vec![Vec::new(); branching];
                for (local, &c) in km.assignment.iter().enumerate() {
                    groups[c].push(members[local]);
                }
                Ok(groups.into_iter().filter(|g| !g.is_empty()).collect())
            })
            .collect::<Result<_>>()?;

        clusters = children.into_iter().flatten().collect();
        let before = atoms.len();
        atoms.extend(clusters.par_iter().map(|m| member_mean(&centered, m)).collect::<Vec<_>>());
        level_sizes.push(atoms.len() - before);
        if clusters.is_empty() {
            break;
        }
    }
    while level_sizes.len() < cfg.levels {
        level_sizes.push(0);
    }

    let mut kept = Vec::with_capacity(atoms.len());
    for atom in atoms {
        let norm = atom.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > MIN_ATOM_NORM {
            kept.push(atom.into_iter().map(|v| v / norm).collect::<Vec<_>>());
        } else {
            log::warn!("dropping a dictionary atom with zero norm (cluster mean equals data mean)");
        }
    }
    let k = kept.len();
    let flat: Vec<f64> = kept.into_iter().flatten().collect();
    Ok(Dictionary {
        atoms: DMatrix::from_column_slice(d, k, &flat),
        source_mean: mean,
        level_sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DataMatrix {
        let mut rng = seed::rng(seed);
        let values = (0..rows * cols)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        DataMatrix::new(rows, cols, values).unwrap()
    }

    /// `clouds` Gaussian clouds of `per` points, centered at distinct signed
    /// corners scaled by `spread`.
    pub(crate) fn clouds(clouds: usize, per: usize, d: usize, spread: f64, seed: u64) -> DataMatrix {
        let mut rng = seed::rng(seed);
        let mut rows = Vec::new();
        for c in 0..clouds {
            let center: Vec<f64> = (0..d)
                .map(|j| if (c >> (j % 8)) & 1 == 1 { spread } else { -spread })
                .collect();
            for _ in 0..per {
                rows.push(
                    center
                        .iter()
                        .map(|v| v + rng.sample::<f64, _>(StandardNormal))
                        .collect::<Vec<_>>(),
                );
            }
        }
        DataMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn zero_center_examples() {
        let ones = DataMatrix::new(3, 2, vec![1.0; 6]).unwrap();
        let (c, mean) = zero_center(&ones);
        assert_eq!(mean, vec![1.0, 1.0]);
        assert!(c.as_slice().iter().all(|&v| v == 0.0));

        let sym = DataMatrix::new(2, 2, vec![1.0, -2.0, -1.0, 2.0]).unwrap();
        let (c, mean) = zero_center(&sym);
        assert_eq!(mean, vec![0.0, 0.0]);
        assert_eq!(c, sym);

        let (c, _) = zero_center(&random_matrix(100, 8, 1));
        for s in c.column_means() {
            assert!(s.abs() * 100.0 < 1e-6);
        }
    }

    #[test]
    fn kmeans_k_equals_n() {
        let x = random_matrix(6, 3, 2);
        let km = kmeans(&x, 6, &KMeansConfig::default()).unwrap();
        assert!(km.objective.last().unwrap().abs() < 1e-20);
        let mut assigned = km.assignment.clone();
        assigned.sort_unstable();
        assert_eq!(assigned, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn kmeans_separated_clouds() {
        let x = clouds(2, 50, 4, 10.0, 3);
        let km = kmeans(&x, 2, &KMeansConfig::default()).unwrap();
        // cloud centers are (-10, -10, -10, -10) and (10, -10, -10, -10)
        let mut firsts: Vec<f64> = km.centers.row_iter().map(|c| c[0]).collect();
        firsts.sort_by(f64::total_cmp);
        assert!((firsts[0] + 10.0).abs() < 1.0 && (firsts[1] - 10.0).abs() < 1.0);
        for center in km.centers.row_iter() {
            assert!(center[1..].iter().all(|v| (v + 10.0).abs() < 1.0));
        }
        assert_ne!(km.assignment[0], km.assignment[99]);
        assert!(km.assignment[..50].iter().all(|&a| a == km.assignment[0]));
    }

    #[test]
    fn kmeans_deterministic_and_monotone() {
        let x = random_matrix(300, 5, 4);
        let cfg = KMeansConfig { seed: 7, ..KMeansConfig::default() };
        let a = kmeans(&x, 8, &cfg).unwrap();
        let b = kmeans(&x, 8, &cfg).unwrap();
        assert_eq!(a.centers, b.centers);
        assert!(a.objective.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn kmeans_too_few_points() {
        let x = random_matrix(3, 2, 5);
        assert!(matches!(
            kmeans(&x, 4, &KMeansConfig::default()),
            Err(Error::TooFewPoints { points: 3, clusters: 4 })
        ));
    }

    #[test]
    fn kmeans_refills_empty_cluster() {
        // duplicate points make k-means++ fall back to arbitrary picks
        let x = DataMatrix::new(4, 1, vec![0.0, 0.0, 0.0, 5.0]).unwrap();
        let km = kmeans(&x, 3, &KMeansConfig::default()).unwrap();
        assert!(km.objective.last().unwrap().abs() < 1e-12);
    }

    #[test]
    fn hierarchical_four_clouds() {
        let x = clouds(4, 100, 6, 8.0, 6);
        let cfg = DictConfig { seed: 3, ..DictConfig::new(2, 6) };
        let dict = hierarchical_dictionary(&x, &cfg).unwrap();
        assert!(dict.len() >= 2 && dict.len() <= 10, "k = {}", dict.len());
        assert_eq!(dict.level_sizes[0], 2);
        for atom in dict.atoms.column_iter() {
            assert!((atom.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn hierarchical_respects_bound_and_is_deterministic() {
        let x = random_matrix(400, 10, 8);
        let cfg = DictConfig { seed: 11, ..DictConfig::new(3, 10) };
        assert_eq!(cfg.max_atoms(), 3 * (1 + 6));
        let a = hierarchical_dictionary(&x, &cfg).unwrap();
        let b = hierarchical_dictionary(&x, &cfg).unwrap();
        assert!(a.len() <= cfg.max_atoms());
        assert_eq!(a.atoms, b.atoms);
        assert!(a.is_overcomplete());
    }

    #[test]
    fn small_clusters_are_not_split() {
        let x = random_matrix(30, 4, 9);
        let cfg = DictConfig { min_split: 100, ..DictConfig::new(3, 4) };
        let dict = hierarchical_dictionary(&x, &cfg).unwrap();
        assert_eq!(dict.level_sizes, vec![3, 0]);
    }

    #[test]
    fn config_validation() {
        let cfg = DictConfig::new(4, 16);
        assert_eq!(cfg.k2(), 8);
        assert_eq!(cfg.min_split, 16);
        assert!(cfg.validate(16).is_ok());
        assert!(DictConfig { proxy_dim: 17, ..cfg }.validate(16).is_err());
        assert!(DictConfig { min_split: 7, ..cfg }.validate(16).is_err());
        assert!(DictConfig { k1: 0, ..cfg }.validate(16).is_err());
    }
}
