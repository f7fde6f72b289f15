//! Simulation designs used by the command-line experiments and the
//! acceptance suite.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data_io::{Dataset, Monotone};
use crate::error::Result;
use crate::stats::standard_normal;

/// f(x) = x³.
pub fn cubic(x: f64) -> f64 {
    x * x * x
}

/// f(x) = x1 x2² + x3 x4³ + x5.
pub fn five_dim(x: &[f64]) -> f64 {
    x[0] * x[1] * x[1] + x[2] * x[3] * x[3] * x[3] + x[4]
}

/// Simulated sample with the true regression function alongside.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulated {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub f: Vec<f64>,
}

/// x ~ U[−1, 1], y = x³ + N(0, σ²).
pub fn simulate_1d<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> Simulated {
    let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
    let f: Vec<f64> = x.iter().map(|r| cubic(r[0])).collect();
    let y = f.iter().map(|&fi| fi + sigma * standard_normal(rng)).collect();
    Simulated { x, y, f }
}

/// x ~ U(0, 1)^5, y = five_dim(x) + N(0, σ²).
pub fn simulate_5d<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> Simulated {
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..5).map(|_| rng.random::<f64>()).collect())
        .collect();
    let f: Vec<f64> = x.iter().map(|r| five_dim(r)).collect();
    let y = f.iter().map(|&fi| fi + sigma * standard_normal(rng)).collect();
    Simulated { x, y, f }
}

impl Simulated {
    /// Dataset with every predictor constrained increasing when `monotone`.
    pub fn dataset(&self, monotone: bool) -> Result<Dataset> {
        let p = self.x.first().map_or(0, Vec::len);
        let dir = if monotone { Monotone::Increasing } else { Monotone::None };
        Dataset::from_raw(
            self.x.clone(),
            self.y.clone(),
            (1..=p).map(|v| format!("x{v}")).collect(),
            "y",
            vec![dir; p],
        )
    }
}

/// One prior setting of the sensitivity study.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorSetting {
    pub m: usize,
    pub k: f64,
    pub nu: f64,
    pub q: f64,
}

/// m ∈ {50, 200, 500} × k ∈ {1, 2, 3, 5} × (ν, q) ∈ {(3, .9), (3, .99), (10, .75)}.
pub fn sensitivity_design() -> Vec<PriorSetting> {
    let mut out = Vec::with_capacity(36);
    for m in [50, 200, 500] {
        for k in [1.0, 2.0, 3.0, 5.0] {
            for (nu, q) in [(3.0, 0.9), (3.0, 0.99), (10.0, 0.75)] {
                out.push(PriorSetting { m, k, nu, q });
            }
        }
    }
    out
}

/// Random split of `0..n` into (train, test) with `train_frac` of rows in train.
pub fn train_test_split<R: Rng + ?Sized>(n: usize, train_frac: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = ((n as f64) * train_frac).round() as usize;
    let test = idx.split_off(n_train.min(n));
    let mut train = idx;
    train.sort_unstable();
    let mut test = test;
    test.sort_unstable();
    (train, test)
}
