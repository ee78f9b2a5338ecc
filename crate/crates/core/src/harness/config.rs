//! Run configuration and its flat `key = value` file format.
//!
//! ```text
//! env = pendulum
//! topology = grid:3x3
//! seed = 7
//!
//! [features]
//! dim = 100
//! ```
//!
//! Keys inside a `[section]` are addressed as `section.key`, both in files
//! and in `--set` overrides. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use crate::bellman::{PicardSettings, CARTPOLE_SIGMA, DEFAULT_ALPHA, PENDULUM_SIGMA};
use crate::consensus::{ConsensusParams, DEFAULT_COV_PERIOD, DEFAULT_INNER_STEPS, DEFAULT_VARPI};
use crate::env::{pendulum_constants, EnvKind};
use crate::error::{Error, Result};
use crate::graph::{Spectrum, Topology};

/// Seed offsets added to the master seed. The random-feature map uses the
/// master seed itself; node `n` adds `n` to its purpose offset.
pub mod seeds {
    pub const TRAJECTORY: u64 = 1000;
    pub const EPISODE: u64 = 3000;
    pub const BASELINE: u64 = 5000;
    pub const SYNTHETIC: u64 = 7000;
}

/// `(key, default, description)` for every accepted key.
pub const CONFIG_KEYS: &[(&str, &str, &str)] = &[
    ("env", "required", "pendulum | cartpole"),
    ("topology", "grid:5x5", "grid:RxC | ring:N | path:N | star:N | file:PATH"),
    ("seed", "0", "master seed"),
    ("data.samples", "500 pendulum, 100 cartpole", "trajectory length N_av per node"),
    ("data.action_points", "11", "pendulum torque grid size"),
    ("features.dim", "500 pendulum, 250 cartpole", "random-feature dimension D"),
    ("features.bandwidth", "1", "Gaussian kernel bandwidth tau"),
    ("bellman.alpha", "0.9", "discount factor"),
    ("bellman.sigma", "0.01 pendulum, 0.025 cartpole", "ridge regularizer"),
    ("bellman.tol", "1e-9", "Banach-Picard step tolerance"),
    ("bellman.max_iter", "5000", "Banach-Picard iteration cap"),
    ("consensus.eta", "optimal for the graph", "learning rate in (0, 2(1 - varpi))"),
    ("consensus.varpi", "0.5", "relaxation in [1/2, 1)"),
    ("consensus.gamma", "1/lambda_1", "mixing step"),
    ("consensus.inner_steps", "50", "inner rounds M per VI step"),
    ("consensus.cov_period", "50", "covariance period J_C in 1..=M, e.g. 10, 25, 50"),
    ("run.vi_steps", "40", "value-iteration steps K"),
    ("run.eval_every", "1", "episodic-loss cadence in VI steps"),
    ("eval.episode_steps", "200 pendulum, 500 cartpole", "episode length N_e"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub topology: Topology,
    pub seed: u64,
    pub samples_per_node: usize,
    pub action_points: usize,
    pub feature_dim: usize,
    pub bandwidth: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub picard: PicardSettings,
    /// `None` selects the optimal rate of the graph.
    pub eta: Option<f64>,
    pub varpi: f64,
    /// `None` selects `1/λ₁`.
    pub gamma: Option<f64>,
    pub inner_steps: usize,
    pub cov_period: usize,
    pub vi_steps: usize,
    pub eval_every: usize,
    pub episode_steps: usize,
}

impl RunConfig {
    /// Full-scale settings on the 5×5 grid.
    pub fn defaults(env: EnvKind) -> Self {
        let (samples, dim, sigma, episode_steps) = match env {
            EnvKind::Pendulum => (500, 500, PENDULUM_SIGMA, 200),
            EnvKind::Cartpole => (100, 250, CARTPOLE_SIGMA, 500),
        };
        RunConfig {
            env,
            topology: Topology::Grid { rows: 5, cols: 5 },
            seed: 0,
            samples_per_node: samples,
            action_points: pendulum_constants::DEFAULT_ACTION_POINTS,
            feature_dim: dim,
            bandwidth: 1.0,
            alpha: DEFAULT_ALPHA,
            sigma,
            picard: PicardSettings::default(),
            eta: None,
            varpi: DEFAULT_VARPI,
            gamma: None,
            inner_steps: DEFAULT_INNER_STEPS,
            cov_period: DEFAULT_COV_PERIOD,
            vi_steps: 40,
            eval_every: 1,
            episode_steps,
        }
    }

    /// Desk-scale pendulum: 3×3 grid, `D = N_av = 100`.
    pub fn desk_pendulum() -> Self {
        RunConfig {
            topology: Topology::Grid { rows: 3, cols: 3 },
            samples_per_node: 100,
            feature_dim: 100,
            ..RunConfig::defaults(EnvKind::Pendulum)
        }
    }

    pub fn rff_seed(&self) -> u64 {
        self.seed
    }

    pub fn trajectory_seed(&self, node: usize) -> u64 {
        self.seed.wrapping_add(seeds::TRAJECTORY + node as u64)
    }

    pub fn episode_seed(&self, node: usize) -> u64 {
        self.seed.wrapping_add(seeds::EPISODE + node as u64)
    }

    pub fn baseline_seed(&self, node: usize) -> u64 {
        self.seed.wrapping_add(seeds::BASELINE + node as u64)
    }

    pub fn synthetic_seed(&self) -> u64 {
        self.seed.wrapping_add(seeds::SYNTHETIC)
    }

    /// Parses a config file and applies `overrides` (`key=value`) on top.
    pub fn load(path: Option<&Path>, env_flag: Option<EnvKind>, overrides: &[String]) -> Result<Self> {
        let mut map = match path {
            Some(p) => parse_config(&std::fs::read_to_string(p)?)?,
            None => BTreeMap::new(),
        };
        if let Some(env) = env_flag {
            map.insert("env".into(), env.to_string());
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::ConfigInvalid(format!("override `{o}` is not key=value")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        RunConfig::from_map(&map)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        for key in map.keys() {
            if !CONFIG_KEYS.iter().any(|(k, _, _)| k == key) {
                return Err(Error::ConfigInvalid(format!("unknown key `{key}`")));
            }
        }
        let env: EnvKind = map
            .get("env")
            .ok_or_else(|| Error::ConfigInvalid("missing required key `env`".into()))?
            .parse()?;
        let mut cfg = RunConfig::defaults(env);
        for (key, value) in map {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::ConfigInvalid(format!("`{key}`: cannot parse `{value}`")))
        }
        match key {
            "env" => self.env = value.parse()?,
            "topology" => self.topology = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "data.samples" => self.samples_per_node = num(key, value)?,
            "data.action_points" => self.action_points = num(key, value)?,
            "features.dim" => self.feature_dim = num(key, value)?,
            "features.bandwidth" => self.bandwidth = num(key, value)?,
            "bellman.alpha" => self.alpha = num(key, value)?,
            "bellman.sigma" => self.sigma = num(key, value)?,
            "bellman.tol" => self.picard.tol = num(key, value)?,
            "bellman.max_iter" => self.picard.max_iter = num(key, value)?,
            "consensus.eta" => self.eta = Some(num(key, value)?),
            "consensus.varpi" => self.varpi = num(key, value)?,
            "consensus.gamma" => self.gamma = Some(num(key, value)?),
            "consensus.inner_steps" => self.inner_steps = num(key, value)?,
            "consensus.cov_period" => self.cov_period = num(key, value)?,
            "run.vi_steps" => self.vi_steps = num(key, value)?,
            "run.eval_every" => self.eval_every = num(key, value)?,
            "eval.episode_steps" => self.episode_steps = num(key, value)?,
            _ => return Err(Error::ConfigInvalid(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Ranges that do not depend on the graph.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::ConfigInvalid(format!("`{name}` must be at least 1")))
            } else {
                Ok(())
            }
        };
        positive("data.samples", self.samples_per_node)?;
        positive("data.action_points", self.action_points)?;
        positive("features.dim", self.feature_dim)?;
        positive("run.vi_steps", self.vi_steps)?;
        positive("run.eval_every", self.eval_every)?;
        positive("bellman.max_iter", self.picard.max_iter)?;
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return Err(Error::ConfigInvalid(format!("`bellman.alpha` = {} not in [0, 1)", self.alpha)));
        }
        for (name, v) in [("bellman.sigma", self.sigma), ("features.bandwidth", self.bandwidth)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::ConfigInvalid(format!("`{name}` = {v} must be positive")));
            }
        }
        Ok(())
    }

    /// Consensus parameters for `spectrum`, validated.
    pub fn consensus_params(&self, spectrum: &Spectrum) -> Result<ConsensusParams> {
        let p = ConsensusParams {
            eta: self.eta.unwrap_or_else(|| spectrum.optimal_eta().eta),
            varpi: self.varpi,
            gamma: self.gamma.unwrap_or(spectrum.gamma),
            inner_steps: self.inner_steps,
            cov_period: self.cov_period,
        };
        p.validate(spectrum)?;
        Ok(p)
    }

    /// The file form of this configuration; parsing it gives `self` back.
    pub fn to_config_text(&self) -> String {
        let mut out = format!("env = {}\ntopology = {}\nseed = {}\n", self.env, self.topology, self.seed);
        let mut section = |name: &str, entries: Vec<(&str, String)>| {
            out.push_str(&format!("\n[{name}]\n"));
            for (k, v) in entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
        };
        section(
            "data",
            vec![
                ("samples", self.samples_per_node.to_string()),
                ("action_points", self.action_points.to_string()),
            ],
        );
        section(
            "features",
            vec![("dim", self.feature_dim.to_string()), ("bandwidth", self.bandwidth.to_string())],
        );
        section(
            "bellman",
            vec![
                ("alpha", self.alpha.to_string()),
                ("sigma", self.sigma.to_string()),
                ("tol", self.picard.tol.to_string()),
                ("max_iter", self.picard.max_iter.to_string()),
            ],
        );
        let mut cons = vec![
            ("varpi", self.varpi.to_string()),
            ("inner_steps", self.inner_steps.to_string()),
            ("cov_period", self.cov_period.to_string()),
        ];
        if let Some(eta) = self.eta {
            cons.push(("eta", eta.to_string()));
        }
        if let Some(gamma) = self.gamma {
            cons.push(("gamma", gamma.to_string()));
        }
        section("consensus", cons);
        section(
            "run",
            vec![("vi_steps", self.vi_steps.to_string()), ("eval_every", self.eval_every.to_string())],
        );
        section("eval", vec![("episode_steps", self.episode_steps.to_string())]);
        out
    }
}

/// Reads `key = value` lines under optional `[section]` headers into
/// `section.key` entries. `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse { line: i + 1, message };
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| bad(format!("unterminated section `{line}`")))?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected key = value, got `{line}`")))?;
        let key = if section.is_empty() {
            k.trim().to_string()
        } else {
            format!("{section}.{}", k.trim())
        };
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(bad(format!("duplicate key `{key}`")));
        }
    }
    Ok(map)
}
