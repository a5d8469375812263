//! Training configuration and its `key = value` text form.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Domain, MeshSpec};
use crate::losses::LossWeights;
use crate::operator::Architecture;
use crate::tensor::mlp::Activation;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub n_pairs: usize,
    /// Collocation points drawn per pair each epoch.
    pub collocations: usize,
    pub batch_size: usize,
    /// Upper bound on optimizer steps per epoch.
    pub n_batches: usize,
    pub epochs_max: u64,
    pub lr: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub branch_width: usize,
    pub branch_depth: usize,
    pub trunk_width: usize,
    pub trunk_depth: usize,
    pub p: usize,
    pub activation: Activation,
    pub sensors_nx: usize,
    pub sensors_ny: usize,
    pub domain: Domain,
    /// Moving-average window for the convergence test, in epochs.
    pub convergence_window: usize,
    pub min_rel_improvement: f64,
    pub checkpoint_every: u64,
    /// Collocation entries per trunk pass.
    pub chunk: usize,
    /// Evaluate loss chunks on the thread pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    /// The full-scale Gaussian-mixture setting.
    fn default() -> Self {
        TrainConfig {
            n_pairs: 1500,
            collocations: 900,
            batch_size: 9000,
            n_batches: 150,
            epochs_max: 2500,
            lr: 5e-5,
            seed: 0,
            weights: LossWeights::default(),
            branch_width: 180,
            branch_depth: 5,
            trunk_width: 120,
            trunk_depth: 7,
            p: 120,
            activation: Activation::Tanh,
            sensors_nx: 30,
            sensors_ny: 30,
            domain: Domain::default(),
            convergence_window: 100,
            min_rel_improvement: 1e-4,
            checkpoint_every: 100,
            chunk: 64,
            parallel: false,
        }
    }
}

/// Every recognized key, in the order the resolved configuration is printed.
pub const KEYS: &[&str] = &[
    "train.n_pairs",
    "train.collocations",
    "train.batch_size",
    "train.n_batches",
    "train.epochs_max",
    "train.lr",
    "train.seed",
    "train.convergence_window",
    "train.min_rel_improvement",
    "train.checkpoint_every",
    "train.chunk",
    "train.parallel",
    "weights.alpha1",
    "weights.alpha2",
    "weights.beta0",
    "weights.beta1",
    "weights.gamma1",
    "weights.gamma2",
    "weights.omega1",
    "weights.omega2",
    "weights.epsilon",
    "arch.branch_width",
    "arch.branch_depth",
    "arch.trunk_width",
    "arch.trunk_depth",
    "arch.p",
    "arch.activation",
    "arch.sensors_nx",
    "arch.sensors_ny",
    "domain.x_min",
    "domain.x_max",
    "domain.y_min",
    "domain.y_max",
];

/// Keys that may change when training resumes from a checkpoint.
pub const RESUMABLE_KEYS: &[&str] = &[
    "train.epochs_max",
    "train.lr",
    "train.convergence_window",
    "train.min_rel_improvement",
    "train.checkpoint_every",
    "train.chunk",
    "train.parallel",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl TrainConfig {
    pub fn architecture(&self) -> Result<Architecture> {
        let arch = Architecture {
            branch_width: self.branch_width,
            branch_depth: self.branch_depth,
            trunk_width: self.trunk_width,
            trunk_depth: self.trunk_depth,
            p: self.p,
            activation: self.activation,
            sensors: MeshSpec::new(self.sensors_nx, self.sensors_ny, self.domain)?,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("train.n_pairs", self.n_pairs),
            ("train.collocations", self.collocations),
            ("train.batch_size", self.batch_size),
            ("train.n_batches", self.n_batches),
            ("train.convergence_window", self.convergence_window),
            ("train.chunk", self.chunk),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("train.checkpoint_every must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("train.lr must be finite and >= 0, got {}", self.lr)));
        }
        if !(self.min_rel_improvement.is_finite() && self.min_rel_improvement >= 0.0) {
            return Err(Error::Config("train.min_rel_improvement must be finite and >= 0".into()));
        }
        self.weights.validate()?;
        self.architecture()?;
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        let w = &mut self.weights;
        match key {
            "train.n_pairs" => self.n_pairs = parse_num(key, v)?,
            "train.collocations" => self.collocations = parse_num(key, v)?,
            "train.batch_size" => self.batch_size = parse_num(key, v)?,
            "train.n_batches" => self.n_batches = parse_num(key, v)?,
            "train.epochs_max" => self.epochs_max = parse_num(key, v)?,
            "train.lr" => self.lr = parse_num(key, v)?,
            "train.seed" => self.seed = parse_num(key, v)?,
            "train.convergence_window" => self.convergence_window = parse_num(key, v)?,
            "train.min_rel_improvement" => self.min_rel_improvement = parse_num(key, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "train.chunk" => self.chunk = parse_num(key, v)?,
            "train.parallel" => self.parallel = parse_num(key, v)?,
            "weights.alpha1" => w.alpha1 = parse_num(key, v)?,
            "weights.alpha2" => w.alpha2 = parse_num(key, v)?,
            "weights.beta0" => w.beta0 = parse_num(key, v)?,
            "weights.beta1" => w.beta1 = parse_num(key, v)?,
            "weights.gamma1" => w.gamma[0] = parse_num(key, v)?,
            "weights.gamma2" => w.gamma[1] = parse_num(key, v)?,
            "weights.omega1" => w.omega[0] = parse_num(key, v)?,
            "weights.omega2" => w.omega[1] = parse_num(key, v)?,
            "weights.epsilon" => w.epsilon = parse_num(key, v)?,
            "arch.branch_width" => self.branch_width = parse_num(key, v)?,
            "arch.branch_depth" => self.branch_depth = parse_num(key, v)?,
            "arch.trunk_width" => self.trunk_width = parse_num(key, v)?,
            "arch.trunk_depth" => self.trunk_depth = parse_num(key, v)?,
            "arch.p" => self.p = parse_num(key, v)?,
            "arch.activation" => self.activation = v.parse()?,
            "arch.sensors_nx" => self.sensors_nx = parse_num(key, v)?,
            "arch.sensors_ny" => self.sensors_ny = parse_num(key, v)?,
            "domain.x_min" => self.domain.x_min = parse_num(key, v)?,
            "domain.x_max" => self.domain.x_max = parse_num(key, v)?,
            "domain.y_min" => self.domain.y_min = parse_num(key, v)?,
            "domain.y_max" => self.domain.y_max = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let w = &self.weights;
        Some(match key {
            "train.n_pairs" => self.n_pairs.to_string(),
            "train.collocations" => self.collocations.to_string(),
            "train.batch_size" => self.batch_size.to_string(),
            "train.n_batches" => self.n_batches.to_string(),
            "train.epochs_max" => self.epochs_max.to_string(),
            "train.lr" => self.lr.to_string(),
            "train.seed" => self.seed.to_string(),
            "train.convergence_window" => self.convergence_window.to_string(),
            "train.min_rel_improvement" => self.min_rel_improvement.to_string(),
            "train.checkpoint_every" => self.checkpoint_every.to_string(),
            "train.chunk" => self.chunk.to_string(),
            "train.parallel" => self.parallel.to_string(),
            "weights.alpha1" => w.alpha1.to_string(),
            "weights.alpha2" => w.alpha2.to_string(),
            "weights.beta0" => w.beta0.to_string(),
            "weights.beta1" => w.beta1.to_string(),
            "weights.gamma1" => w.gamma[0].to_string(),
            "weights.gamma2" => w.gamma[1].to_string(),
            "weights.omega1" => w.omega[0].to_string(),
            "weights.omega2" => w.omega[1].to_string(),
            "weights.epsilon" => w.epsilon.to_string(),
            "arch.branch_width" => self.branch_width.to_string(),
            "arch.branch_depth" => self.branch_depth.to_string(),
            "arch.trunk_width" => self.trunk_width.to_string(),
            "arch.trunk_depth" => self.trunk_depth.to_string(),
            "arch.p" => self.p.to_string(),
            "arch.activation" => self.activation.to_string(),
            "arch.sensors_nx" => self.sensors_nx.to_string(),
            "arch.sensors_ny" => self.sensors_ny.to_string(),
            "domain.x_min" => self.domain.x_min.to_string(),
            "domain.x_max" => self.domain.x_max.to_string(),
            "domain.y_min" => self.domain.y_min.to_string(),
            "domain.y_max" => self.domain.y_max.to_string(),
            _ => return None,
        })
    }

    /// Fully resolved `(key, value)` pairs. Floats print in shortest
    /// round-trip form, so parsing the output reproduces the config exactly.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        KEYS.iter().map(|&k| (k, self.get(k).expect("listed key"))).collect()
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, i + 1, format!("expected key = value, got {line:?}")))?;
            cfg.set(k.trim(), v).map_err(|e| Error::format(path, i + 1, e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}
