//! Stochastic estimate of the spectral radius of a linear map.
//!
//! For Rademacher vectors `z_j`,
//! `rho1 = ((1/N) * sum_j |B^k z_j|^2)^(1/(2k))`. Non-finite iterates
//! yield `f64::INFINITY`, which reports render as "-".

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::GridField;
use crate::network::MgNetwork;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossConfig {
    /// Power of the operator.
    pub power_k: usize,
    /// Number of probe vectors.
    pub n_batch: usize,
    pub seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { power_k: 10, n_batch: 10, seed: 0 }
    }
}

impl LossConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    fn validate(&self) -> Result<()> {
        if self.power_k == 0 || self.n_batch == 0 {
            return Err(Error::InvalidModel("power_k and n_batch must be positive".into()));
        }
        Ok(())
    }
}

/// Whether an estimate is shown as divergent.
pub fn is_divergent(rho: f64) -> bool {
    !rho.is_finite() || rho >= 1.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct RademacherBatch {
    vectors: Vec<GridField>,
}

impl RademacherBatch {
    pub fn vectors(&self) -> &[GridField] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn into_vectors(self) -> Vec<GridField> {
        self.vectors
    }
}

/// The `index`-th probe vector of the stream selected by `seed`. Vectors
/// are independent of the batch size they are drawn in.
pub fn rademacher_field(shape: (usize, usize), seed: u64, index: usize) -> GridField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let (rows, cols) = shape;
    let mut values = Vec::with_capacity(rows * cols);
    while values.len() < rows * cols {
        let bits = rng.next_u64();
        let take = (rows * cols - values.len()).min(64);
        values.extend((0..take).map(|b| if bits >> b & 1 == 1 { 1.0 } else { -1.0 }));
    }
    GridField::new(rows, cols, values).expect("shape")
}

pub fn sample_rademacher(shape: (usize, usize), n: usize, seed: u64) -> Result<RademacherBatch> {
    if n == 0 {
        return Err(Error::InvalidField("batch size must be at least 1".into()));
    }
    Ok(RademacherBatch { vectors: (0..n).map(|j| rademacher_field(shape, seed, j)).collect() })
}

/// Combines per-vector squared norms in batch order.
pub fn combine_squared_norms(squares: &[f64], power_k: usize) -> f64 {
    let mean = squares.iter().sum::<f64>() / squares.len() as f64;
    if !mean.is_finite() {
        return f64::INFINITY;
    }
    mean.powf(1.0 / (2.0 * power_k as f64))
}

fn powered_square_norm(mut z: GridField, power_k: usize, mut step: impl FnMut(&mut GridField)) -> f64 {
    for _ in 0..power_k {
        step(&mut z);
        if !z.is_finite() {
            return f64::INFINITY;
        }
    }
    z.dot(&z).expect("shape")
}

/// `rho1` of an arbitrary shape-preserving linear map.
pub fn rho1_estimate<F>(apply_b: F, shape: (usize, usize), cfg: &LossConfig) -> Result<f64>
where
    F: Fn(&GridField) -> GridField + Sync,
{
    cfg.validate()?;
    let squares: Vec<f64> = (0..cfg.n_batch)
        .into_par_iter()
        .map(|j| powered_square_norm(rademacher_field(shape, cfg.seed, j), cfg.power_k, |z| *z = apply_b(z)))
        .collect();
    Ok(combine_squared_norms(&squares, cfg.power_k))
}

/// `rho1` of the network's error propagation `I - N A` on its fine grid.
pub fn loss(net: &MgNetwork, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let n = net.fine_side();
    match net.compile() {
        Ok(compiled) => {
            let squares: Vec<f64> = (0..cfg.n_batch)
                .into_par_iter()
                .map_init(
                    || compiled.clone(),
                    |c, j| {
                        powered_square_norm(rademacher_field((n, n), cfg.seed, j), cfg.power_k, |z| {
                            c.error_propagation_in_place(z).expect("shape")
                        })
                    },
                )
                .collect();
            Ok(combine_squared_norms(&squares, cfg.power_k))
        }
        Err(_) => rho1_estimate(|z| net.apply_error_propagation(z).expect("shape"), (n, n), cfg),
    }
}

/// Median of [`loss`] over seeds `cfg.seed, cfg.seed + 1, ...`.
pub fn loss_median(net: &MgNetwork, cfg: &LossConfig, seeds: usize) -> Result<f64> {
    if seeds == 0 {
        return Err(Error::InvalidModel("at least one seed is needed".into()));
    }
    let mut values =
        (0..seeds as u64).map(|i| loss(net, &cfg.with_seed(cfg.seed.wrapping_add(i)))).collect::<Result<Vec<f64>>>()?;
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Ok(if values.len() % 2 == 1 { values[mid] } else { 0.5 * (values[mid - 1] + values[mid]) })
}
