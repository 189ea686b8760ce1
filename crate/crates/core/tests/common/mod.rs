#![allow(dead_code)]

use std::path::{Path, PathBuf};

use obsched::PomdpModel;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Row-stochastic matrix with roughly one entry in five zeroed out, so
/// impossible observations and transient states show up.
pub fn random_stochastic(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| loop {
            let row: Vec<f64> = (0..cols)
                .map(|_| {
                    if rng.random::<f64>() < 0.2 {
                        0.0
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect();
            let s: f64 = row.iter().sum();
            if s > 1e-3 {
                break row.into_iter().map(|v| v / s).collect();
            }
        })
        .collect()
}

pub fn random_model(rng: &mut ChaCha8Rng, m: usize, l: usize, a: usize) -> PomdpModel {
    let q = random_stochastic(rng, m, m);
    let sensors = (0..a).map(|_| random_stochastic(rng, m, l)).collect();
    PomdpModel::new(q, sensors).expect("random model is valid")
}

/// Uniform point of the simplex.
pub fn random_belief(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..m).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn write_model(dir: &Path, name: &str, model: &PomdpModel) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, model.to_json()).unwrap();
    path
}

pub fn hb(p: f64) -> f64 {
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}
