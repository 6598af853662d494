#![allow(dead_code)]

use std::io::Read;
use std::path::PathBuf;

use flate2::read::GzDecoder;
use isch::matrix::DataMatrix;
use isch::search::LabelSet;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Dictionary with i.i.d. Gaussian columns scaled to unit norm.
pub fn unit_dictionary(d: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = isch::seed::rng(seed);
    let mut m = DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    for mut c in m.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    m
}

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = isch::seed::rng(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Gaussian rows pulled toward `clusters` random centers.
pub fn clustered_data(n: usize, d: usize, clusters: usize, seed: u64) -> DataMatrix {
    let mut rng = isch::seed::rng(seed);
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..d).map(|_| 4.0 * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            centers[i % clusters]
                .iter()
                .map(|c| c + rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    DataMatrix::from_rows(&rows).unwrap()
}

fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// Gzipped `u32 n`, `n` label bytes, `n × 784` pixel bytes; pixels scaled
/// to `[0, 1]`.
pub fn load_digits(name: &str) -> (DataMatrix, LabelSet) {
    let file = std::fs::File::open(data_path(name)).expect("fixture present");
    let mut bytes = Vec::new();
    GzDecoder::new(file).read_to_end(&mut bytes).expect("valid gzip");
    let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let labels = LabelSet(bytes[4..4 + n].iter().map(|&b| b as i64).collect());
    let pixels = &bytes[4 + n..];
    assert_eq!(pixels.len(), n * 784);
    let values = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    (DataMatrix::new(n, 784, values).unwrap(), labels)
}
