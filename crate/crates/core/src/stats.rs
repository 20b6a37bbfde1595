//! Inter-quartile mean and seed-stratified bootstrap intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Mean after dropping `floor(n/4)` values from each end of the sorted input.
pub fn iqm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Contract("iqm of an empty list".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("iqm input contains NaN".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let cut = v.len() / 4;
    let mid = &v[cut..v.len() - cut];
    Ok(mid.iter().sum::<f64>() / mid.len() as f64)
}

/// Success rates indexed `[seed][task]` at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMatrix {
    rates: Vec<Vec<f64>>,
}

impl RunMatrix {
    pub fn new(rates: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = rates.first() else {
            return Err(Error::Contract("run matrix needs at least one seed".into()));
        };
        let width = first.len();
        if width == 0 || rates.iter().any(|r| r.len() != width) {
            return Err(Error::Shape(
                "run matrix rows must be non-empty and equal length".into(),
            ));
        }
        if rates.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract(
                "run matrix rates must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { rates })
    }

    pub fn seeds(&self) -> usize {
        self.rates.len()
    }

    pub fn tasks(&self) -> usize {
        self.rates[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rates
    }

    pub fn flat(&self) -> Vec<f64> {
        self.rates.concat()
    }

    pub fn iqm(&self) -> f64 {
        iqm(&self.flat()).expect("validated non-empty")
    }
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile interval of the IQM under resampling of whole seeds.
pub fn stratified_bootstrap_ci(
    runs: &RunMatrix,
    n_resamples: usize,
    confidence: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_resamples < 1000 {
        return Err(Error::Config(format!(
            "{n_resamples} resamples; at least 1000 required"
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Config(format!(
            "confidence {confidence} outside (0, 1)"
        )));
    }
    let s = runs.seeds();
    if s < 2 {
        return Err(Error::Degenerate("bootstrap over a single seed".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(n_resamples);
    let mut pool = Vec::with_capacity(s * runs.tasks());
    for _ in 0..n_resamples {
        pool.clear();
        for _ in 0..s {
            pool.extend_from_slice(&runs.rows()[rng.random_range(0..s)]);
        }
        stats.push(iqm(&pool)?);
    }
    stats.sort_by(f64::total_cmp);
    Ok((
        percentile_sorted(&stats, (1.0 - confidence) / 2.0),
        percentile_sorted(&stats, (1.0 + confidence) / 2.0),
    ))
}
