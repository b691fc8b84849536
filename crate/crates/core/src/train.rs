//! Gradients of the spectral loss and the optimization loop.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::exec::{Exec, Tape};
use crate::field::Kernel;
use crate::loss::{self, combine_squared_norms, rademacher_field, LossConfig};
use crate::network::{Cycle, GalerkinStencils, MgNetwork, ModelKind, OperatorRoute};
use crate::problems::ProblemSpec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 };
    pub const SGD_MOMENTUM: Optimizer = Optimizer::Sgd { momentum: 0.9 };
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub train_j: u32,
    pub resample_each_step: bool,
    pub seed: u64,
    pub power_k: usize,
    pub n_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rate: 1e-3,
            optimizer: Optimizer::ADAM,
            train_j: 5,
            resample_each_step: true,
            seed: 0,
            power_k: 10,
            n_batch: 10,
        }
    }
}

impl TrainConfig {
    /// Settings tuned per model family on P5 at `J = 5`. Smoother-only
    /// models use heavy-ball SGD, which keeps the learned smoothers close to
    /// symmetric and carries over to fine grids much better than Adam does.
    /// The remaining models use Adam.
    pub fn for_model(kind: ModelKind) -> Self {
        match kind {
            ModelKind::S1mgS | ModelKind::S3mgS => {
                Self { learning_rate: 1e-2, optimizer: Optimizer::SGD_MOMENTUM, ..Self::default() }
            }
            _ => Self { learning_rate: 1e-2, ..Self::default() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=5).contains(&self.train_j) {
            return Err(Error::InvalidModel(format!("train_J must be in [2, 5], got {}", self.train_j)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidModel(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.power_k == 0 || self.n_batch == 0 {
            return Err(Error::InvalidModel("power_k and n_batch must be positive".into()));
        }
        Ok(())
    }
}

/// Loss value and the derivative with respect to each trainable kernel.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub loss: f64,
    pub kernels: Vec<(String, Kernel)>,
}

impl Gradient {
    pub fn get(&self, name: &str) -> Option<&Kernel> {
        self.kernels.iter().find(|(n, _)| n == name).map(|(_, k)| k)
    }
}

/// `|B^k z_j|^2` and its gradient for one probe vector.
fn probe_gradient(net: &MgNetwork, route: OperatorRoute<'_>, cfg: &LossConfig, j: usize) -> (f64, Vec<Option<Kernel>>) {
    let n = net.fine_side();
    let cycle = Cycle::new(net, route);
    let mut tape = Tape::new(net.kernels());
    let mut v = tape.leaf(rademacher_field((n, n), cfg.seed, j));
    for _ in 0..cfg.power_k {
        v = cycle.error_propagation(&mut tape, &v);
    }
    let out = tape.value(&v).clone();
    let sq = out.dot(&out).expect("shape");
    if !sq.is_finite() {
        return (f64::INFINITY, Vec::new());
    }
    let adj = tape.backward(v, out.scaled(2.0));
    (sq, adj.kernels)
}

/// Reverse-mode gradient of [`loss::loss`]. Shared kernels collect the
/// contributions of every level that uses them.
pub fn gradient(net: &MgNetwork, cfg: &LossConfig) -> Result<Gradient> {
    let trainable = net.trainable_ids();
    if trainable.is_empty() {
        return Err(Error::NotTrainable(net.kind().label().into()));
    }
    if cfg.power_k == 0 || cfg.n_batch == 0 {
        return Err(Error::InvalidModel("power_k and n_batch must be positive".into()));
    }
    // Galerkin stencils are constants unless a restriction is trained.
    let stencils = if net.restriction_trainable() { None } else { Some(GalerkinStencils::new(net)?) };
    let route = match &stencils {
        Some(s) => OperatorRoute::Stencil(s),
        None => OperatorRoute::Recursive,
    };
    let probes: Vec<(f64, Vec<Option<Kernel>>)> =
        (0..cfg.n_batch).into_par_iter().map(|j| probe_gradient(net, route, cfg, j)).collect();
    let squares: Vec<f64> = probes.iter().map(|p| p.0).collect();
    let value = combine_squared_norms(&squares, cfg.power_k);
    if !value.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    let total: f64 = squares.iter().sum();
    // L = (S/N)^(1/2k)  =>  dL = L / (2k) * dS / S
    let factor = if total > 0.0 { value / (2.0 * cfg.power_k as f64 * total) } else { 0.0 };
    let mut kernels = Vec::with_capacity(trainable.len());
    for id in trainable {
        let size = net.kernels()[id].size();
        let mut g = Kernel::zeros(size);
        for (_, grads) in &probes {
            if let Some(Some(k)) = grads.get(id) {
                for (a, b) in g.weights_mut().iter_mut().zip(k.weights()) {
                    *a += b;
                }
            }
        }
        let g = g.scaled(factor);
        if g.weights().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        kernels.push((net.kernel_names()[id].clone(), g));
    }
    Ok(Gradient { loss: value, kernels })
}

struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl OptimizerState {
    fn new(net: &MgNetwork, ids: &[usize]) -> Self {
        let zeros: Vec<Vec<f64>> = ids.iter().map(|&id| vec![0.0; net.kernels()[id].weights().len()]).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    fn step(&mut self, opt: Optimizer, lr: f64, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.t += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            match opt {
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.t);
                    let c2 = 1.0 - beta2.powi(self.t);
                    for e in 0..p.len() {
                        let m = &mut self.m[i][e];
                        let v = &mut self.v[i][e];
                        *m = beta1 * *m + (1.0 - beta1) * g[e];
                        *v = beta2 * *v + (1.0 - beta2) * g[e] * g[e];
                        p[e] -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
                Optimizer::Sgd { momentum } => {
                    for e in 0..p.len() {
                        let m = &mut self.m[i][e];
                        *m = momentum * *m + g[e];
                        p[e] -= lr * *m;
                    }
                }
            }
        }
    }
}

/// Consecutive non-finite losses after which training stops.
pub const DIVERGENCE_PATIENCE: usize = 10;

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Step at which training was abandoned, if it diverged.
    pub diverged_at: Option<usize>,
}

/// Fits the trainable kernels of a fresh `kind` model at `cfg.train_j`.
pub fn train(kind: ModelKind, problem: &ProblemSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(kind, problem, cfg, |_, _| {})
}

/// [`train`] with a callback receiving `(step, loss)` after every step.
pub fn train_with(
    kind: ModelKind,
    problem: &ProblemSpec,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, Option<f64>),
) -> Result<TrainOutcome> {
    if !kind.is_trainable() {
        return Err(Error::NotTrainable(kind.label().into()));
    }
    cfg.validate()?;
    let mut net = MgNetwork::build(kind, cfg.train_j, problem)?;
    let ids = net.trainable_ids();
    if net.kind().uses_diag_scale() && net.restriction_trainable() {
        return Err(Error::InvalidModel("trained restrictions with diagonal scaling are not supported".into()));
    }
    let mut state = OptimizerState::new(&net, &ids);
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fixed_seed = seeds.next_u64();
    let mut history = Vec::with_capacity(cfg.steps);
    let mut bad_run = 0;
    let mut diverged_at = None;
    for step in 0..cfg.steps {
        let seed = if cfg.resample_each_step && step > 0 { seeds.next_u64() } else { fixed_seed };
        let lcfg = LossConfig { power_k: cfg.power_k, n_batch: cfg.n_batch, seed };
        match gradient(&net, &lcfg) {
            Ok(g) => {
                bad_run = 0;
                history.push(Some(g.loss));
                progress(step, Some(g.loss));
                let grads: Vec<&[f64]> = g.kernels.iter().map(|(_, k)| k.weights()).collect();
                let kernels = net.kernels_mut();
                let mut params: Vec<&mut [f64]> = Vec::with_capacity(ids.len());
                for (id, k) in kernels.iter_mut().enumerate() {
                    if ids.contains(&id) {
                        params.push(k.weights_mut());
                    }
                }
                state.step(cfg.optimizer, cfg.learning_rate, &mut params, &grads);
            }
            Err(Error::NonFiniteGradient) => {
                bad_run += 1;
                history.push(None);
                progress(step, None);
                if bad_run >= DIVERGENCE_PATIENCE {
                    diverged_at = Some(step);
                    break;
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrainOutcome { checkpoint: Checkpoint::from_network(&net, cfg, history)?, diverged_at })
}

/// Estimate of `rho1` for a network at its own depth; see [`loss::loss`].
pub fn evaluate(net: &MgNetwork, cfg: &LossConfig) -> Result<f64> {
    loss::loss(net, cfg)
}
