//! Trained models as human-readable JSON.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Kernel;
use crate::network::{MgNetwork, ModelKind};
use crate::problems::ProblemSpec;
use crate::train::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedKernel {
    pub name: String,
    pub size: usize,
    /// Row-major weights.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: String,
    pub problem: String,
    pub train_j: u32,
    pub seed: u64,
    /// Every kernel of the model's table, trainable or not.
    pub kernels: Vec<NamedKernel>,
    /// Training losses; `null` marks a divergent step.
    pub loss_history: Vec<Option<f64>>,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn from_network(net: &MgNetwork, config: &TrainConfig, loss_history: Vec<Option<f64>>) -> Result<Self> {
        let problem = net.problem().name().to_string();
        ProblemSpec::by_name(&problem)
            .map_err(|_| Error::Checkpoint(format!("problem '{problem}' cannot be restored by name")))?;
        Ok(Self {
            version: CHECKPOINT_VERSION,
            kind: net.kind().name().to_string(),
            problem,
            train_j: net.depth(),
            seed: config.seed,
            kernels: net
                .kernel_names()
                .iter()
                .zip(net.kernels())
                .map(|(name, k)| NamedKernel { name: name.clone(), size: k.size(), weights: k.weights().to_vec() })
                .collect(),
            loss_history,
            config: *config,
        })
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        self.kind.parse()
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        ProblemSpec::by_name(&self.problem)
    }

    /// Last finite training loss.
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.iter().rev().find_map(|l| *l)
    }

    /// The stored model laid out for a grid of depth `depth`.
    pub fn network(&self, depth: u32) -> Result<MgNetwork> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}, expected {CHECKPOINT_VERSION}",
                self.version
            )));
        }
        let kind = self.model_kind()?;
        let mut net = MgNetwork::build(kind, depth, &self.problem_spec()?)?;
        let expected = net.kernel_names().to_vec();
        let found: Vec<&str> = self.kernels.iter().map(|k| k.name.as_str()).collect();
        if expected.len() != found.len() || expected.iter().zip(&found).any(|(a, b)| a != b) {
            return Err(Error::Checkpoint(format!(
                "{} expects kernels [{}], found [{}]",
                kind.label(),
                expected.join(", "),
                found.join(", ")
            )));
        }
        for (id, nk) in self.kernels.iter().enumerate() {
            if nk.weights.len() != nk.size * nk.size {
                return Err(Error::Checkpoint(format!(
                    "kernel '{}' has {} weights for size {}",
                    nk.name,
                    nk.weights.len(),
                    nk.size
                )));
            }
            let k = Kernel::new(nk.size, nk.weights.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
            net.set_kernel(id, k)?;
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!("unsupported version {v}, expected {CHECKPOINT_VERSION}")))
            }
            None => return Err(Error::Checkpoint("missing version".into())),
        }
        let ck: Checkpoint = serde_json::from_value(value)?;
        // Rebuilding validates names and counts against the kind.
        ck.network(ck.train_j.max(2))?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
