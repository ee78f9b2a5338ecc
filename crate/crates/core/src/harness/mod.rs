//! End-to-end runs: the centralized fixed point, distributed value
//! iteration on the `l = kM + m` schedule, and their evaluation metrics.

pub mod config;

use std::fmt::Write as _;

use log::{info, warn};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{parse_config, RunConfig, CONFIG_KEYS};

use crate::bellman::{
    banach_picard, nodal_bmap, nodal_covariance, CentralizedBmap, CovMatrix, NodalData, PicardOutcome, QFunction,
};
use crate::consensus::{
    acfb_q_run, consensus_loss, log_error_slope, lemma1_reference, max_node_error, symmetric_payload,
    ConsensusParams, CovConsensus, CovEnsemble, QEnsemble, Traffic,
};
use crate::env::{
    generate_trajectory, random_policy_loss, run_episode, Cartpole, EnvKind, Environment, NoiseModel, Pendulum,
    Trajectory,
};
use crate::error::{Error, Result};
use crate::features::RffMap;
use crate::graph::{Graph, Spectrum};

/// Everything a run needs before the first value-iteration step.
#[derive(Debug, Clone)]
pub struct Problem<E: Environment> {
    pub env: E,
    pub graph: Graph,
    pub spectrum: Spectrum,
    pub rff: RffMap,
    pub trajectories: Vec<Trajectory<E::State>>,
    pub data: Vec<NodalData>,
}

impl<E: Environment> Problem<E> {
    pub fn build(env: E, cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let graph = Graph::build(&cfg.topology)?;
        let spectrum = Spectrum::of(&graph)?;
        let rff = RffMap::sample(env.input_dim(), cfg.feature_dim, cfg.bandwidth, cfg.rff_seed())?;
        let noise = NoiseModel::default_for(&env);
        let trajectories: Vec<_> = (0..graph.node_count())
            .map(|n| generate_trajectory(&env, cfg.samples_per_node, &noise, cfg.trajectory_seed(n)))
            .collect();
        let data = trajectories
            .iter()
            .map(|t| NodalData::from_trajectory(&env, t, &rff))
            .collect::<Result<Vec<_>>>()?;
        Ok(Problem {
            env,
            graph,
            spectrum,
            rff,
            trajectories,
            data,
        })
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// `Q_⊙` by Banach–Picard iteration of the centralized map from zero.
    pub fn centralized_fixed_point(&self, cfg: &RunConfig) -> Result<PicardOutcome> {
        let map = CentralizedBmap::new(&self.data, cfg.sigma, cfg.alpha)?;
        banach_picard(|q| map.apply(q), QFunction::zeros(cfg.feature_dim), cfg.picard)
    }

    /// `(1/(N N_e)) Σ_n Σ_i g(s_i⁽ⁿ⁾, a_i⁽ⁿ⁾)` over noiseless greedy episodes,
    /// node `n` following its own column.
    pub fn episodic_loss(&self, ens: &QEnsemble, cfg: &RunConfig) -> Result<f64> {
        if ens.node_count() != self.node_count() {
            return Err(Error::DimensionMismatch {
                expected: self.node_count(),
                found: ens.node_count(),
            });
        }
        if cfg.episode_steps == 0 {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for n in 0..self.node_count() {
            let ep = run_episode(&self.env, &ens.node(n), &self.rff, cfg.episode_steps, cfg.episode_seed(n))?;
            total += ep.total_loss;
        }
        Ok(total / (self.node_count() * cfg.episode_steps) as f64)
    }

    /// Per-step loss of uniformly random actions, averaged over nodes.
    pub fn random_baseline(&self, cfg: &RunConfig) -> f64 {
        let n = self.node_count();
        (0..n)
            .map(|i| random_policy_loss(&self.env, cfg.episode_steps, cfg.baseline_seed(i)))
            .sum::<f64>()
            / n as f64
    }
}

/// `(1/N) Σ_n ‖Q⁽ⁿ⁾ − Q_⊙‖² / ‖Q_⊙‖²`.
pub fn distance_to_fixed_point(ens: &QEnsemble, q_star: &QFunction) -> Result<f64> {
    if ens.dim() != q_star.dim() {
        return Err(Error::DimensionMismatch {
            expected: q_star.dim(),
            found: ens.dim(),
        });
    }
    let denom = q_star.coeffs().norm_squared();
    if denom == 0.0 {
        return Err(Error::ZeroFixedPoint);
    }
    let n = ens.node_count();
    let total: f64 = (0..n)
        .map(|i| (ens.columns().column(i) - q_star.coeffs()).norm_squared() / denom)
        .sum();
    Ok(total / n as f64)
}

/// One row per value-iteration step.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub k: usize,
    pub cum_bytes: u64,
    /// `None` on steps skipped by `eval_every`.
    pub episodic_loss: Option<f64>,
    pub consensus_loss: f64,
    /// `None` when `Q_⊙` is unavailable.
    pub dist_fp: Option<f64>,
    /// `(1/N) Σ_n ‖Q⁽ⁿ⁾[k] − Q⁽ⁿ⁾[k−1]‖`.
    pub residual: f64,
}

/// One row per inner round `m = 0..=M` of every step.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub k: usize,
    pub m: usize,
    pub l: usize,
    pub consensus_loss: f64,
    pub messages: u64,
    pub cum_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub records: Vec<MetricRecord>,
    pub rounds: Vec<RoundRecord>,
    pub q_traffic: Traffic,
    pub c_traffic: Traffic,
    pub final_q: QEnsemble,
    pub final_c: CovEnsemble,
    pub fixed_point: Option<QFunction>,
    pub baseline: f64,
}

impl RunMetrics {
    pub fn total_bytes(&self) -> u64 {
        self.q_traffic.bytes() + self.c_traffic.bytes()
    }
}

/// `2|E| · 8 · (rounds_Q · D + rounds_C · D(D+1)/2)`.
pub fn closed_form_bytes(graph: &Graph, dim: usize, q_rounds: u64, c_rounds: u64) -> u64 {
    2 * graph.edge_count() as u64 * 8 * (q_rounds * dim as u64 + c_rounds * symmetric_payload(dim) as u64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    /// Record consensus loss after every inner round.
    pub trace_rounds: bool,
    /// Compute `Q_⊙` first and report the distance to it.
    pub track_fixed_point: bool,
}

/// Distributed value iteration. Each node solves with its own share of the
/// covariance recursion and its own data; the Q- and C-recursions interleave
/// on the global index `l = kM + m`.
pub fn run_distributed_in<E: Environment>(problem: &Problem<E>, cfg: &RunConfig, opts: RunOptions) -> Result<RunMetrics> {
    let params = cfg.consensus_params(&problem.spectrum)?;
    let graph = &problem.graph;
    let (dim, nodes) = (cfg.feature_dim, problem.node_count());

    let fixed_point = if opts.track_fixed_point {
        match problem.centralized_fixed_point(cfg) {
            Ok(out) if out.q.coeffs().norm() > 0.0 => Some(out.q),
            Ok(_) => {
                warn!("centralized fixed point is zero; distance reporting disabled");
                None
            }
            Err(e) => {
                warn!("centralized fixed point unavailable ({e}); distance reporting disabled");
                None
            }
        }
    } else {
        None
    };

    let payload = CovEnsemble::from_blocks(problem.data.iter().map(|d| nodal_covariance(d).into_matrix()).collect())?;
    let mut cov = CovConsensus::start(&payload, params)?;
    let mut q = QEnsemble::zeros(dim, nodes)?;
    let mut q_traffic = Traffic::default();
    let mut records = Vec::with_capacity(cfg.vi_steps);
    let mut rounds = Vec::new();

    for k in 0..cfg.vi_steps {
        debug_assert_eq!(cov.index(), k * params.inner_steps);
        let mut targets = Vec::with_capacity(nodes);
        for (n, data) in problem.data.iter().enumerate() {
            let c_est = CovMatrix::new(cov.node_block(n));
            targets.push(nodal_bmap(&q.node(n), &c_est, data, cfg.sigma, cfg.alpha)?);
        }
        let target = QEnsemble::from_functions(&targets)?;
        let run = acfb_q_run(&q, &target, &params, graph)?;

        // Round m reports Q_m: m + 1 Q-exchanges so far this step, plus the
        // covariance rounds run at m' < m.
        let q_round = Traffic::round(graph, dim);
        let q_before = q_traffic.bytes();
        let mut last_c_messages = 0;
        for m in 0..=params.inner_steps {
            if opts.trace_rounds {
                rounds.push(RoundRecord {
                    k,
                    m,
                    l: k * params.inner_steps + m,
                    consensus_loss: consensus_loss_or_zero(&run.iterates[m]),
                    messages: q_round.messages + last_c_messages,
                    cum_bytes: q_before + (m as u64 + 1) * q_round.bytes() + cov.traffic().bytes(),
                });
            }
            if m < params.inner_steps {
                let c_now = cov.traffic();
                cov.advance(graph, m)?;
                last_c_messages = cov.traffic().messages - c_now.messages;
            }
        }
        q_traffic.add(run.traffic);

        let next = run.last().clone();
        let residual = (0..nodes)
            .map(|n| (next.columns().column(n) - q.columns().column(n)).norm())
            .sum::<f64>()
            / nodes as f64;
        q = next;
        if !q.is_finite() {
            return Err(Error::NoConvergence {
                iterations: k + 1,
                residual,
            });
        }
        let step = k + 1;
        let episodic_loss = if step % cfg.eval_every == 0 || step == cfg.vi_steps {
            Some(problem.episodic_loss(&q, cfg)?)
        } else {
            None
        };
        let dist_fp = match &fixed_point {
            Some(qs) => Some(distance_to_fixed_point(&q, qs)?),
            None => None,
        };
        let record = MetricRecord {
            k: step,
            cum_bytes: q_traffic.bytes() + cov.traffic().bytes(),
            episodic_loss,
            consensus_loss: consensus_loss_or_zero(&q),
            dist_fp,
            residual,
        };
        info!(
            "k={} bytes={} episodic={:?} consensus={:.3e} dist={:?}",
            record.k, record.cum_bytes, record.episodic_loss, record.consensus_loss, record.dist_fp
        );
        records.push(record);
    }

    Ok(RunMetrics {
        records,
        rounds,
        q_traffic,
        c_traffic: cov.traffic(),
        final_q: q,
        final_c: cov.current(),
        fixed_point,
        baseline: problem.random_baseline(cfg),
    })
}

fn consensus_loss_or_zero(ens: &QEnsemble) -> f64 {
    consensus_loss(ens).unwrap_or(0.0)
}

/// Runs `f` with the environment selected by the configuration.
macro_rules! with_env {
    ($cfg:expr, |$env:ident| $body:expr) => {
        match $cfg.env {
            EnvKind::Pendulum => {
                let $env = Pendulum::new($cfg.action_points);
                $body
            }
            EnvKind::Cartpole => {
                let $env = Cartpole;
                $body
            }
        }
    };
}

pub fn run_distributed(cfg: &RunConfig, opts: RunOptions) -> Result<RunMetrics> {
    with_env!(cfg, |env| {
        let problem = Problem::build(env, cfg)?;
        run_distributed_in(&problem, cfg, opts)
    })
}

#[derive(Debug, Clone)]
pub struct CentralizedReport {
    pub q: QFunction,
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub episodic_loss: f64,
    pub baseline: f64,
}

pub fn run_centralized_in<E: Environment>(problem: &Problem<E>, cfg: &RunConfig) -> Result<CentralizedReport> {
    let out = problem.centralized_fixed_point(cfg)?;
    let ens = QEnsemble::consensual(&out.q, problem.node_count())?;
    Ok(CentralizedReport {
        episodic_loss: problem.episodic_loss(&ens, cfg)?,
        baseline: problem.random_baseline(cfg),
        q: out.q,
        iterations: out.iterations,
        residuals: out.residuals,
    })
}

pub fn run_centralized(cfg: &RunConfig) -> Result<CentralizedReport> {
    with_env!(cfg, |env| {
        let problem = Problem::build(env, cfg)?;
        run_centralized_in(&problem, cfg)
    })
}

#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub episodic_loss: f64,
    pub baseline: f64,
    pub per_node: Vec<f64>,
}

/// Reruns the greedy episodes of a stored ensemble with a stored feature map.
pub fn evaluate(cfg: &RunConfig, ens: &QEnsemble, rff: &RffMap) -> Result<EvaluationReport> {
    with_env!(cfg, |env| evaluate_in(&env, cfg, ens, rff))
}

fn evaluate_in<E: Environment>(env: &E, cfg: &RunConfig, ens: &QEnsemble, rff: &RffMap) -> Result<EvaluationReport> {
    if rff.dim() != ens.dim() {
        return Err(Error::DimensionMismatch {
            expected: rff.dim(),
            found: ens.dim(),
        });
    }
    if rff.input_dim() != env.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: env.input_dim(),
            found: rff.input_dim(),
        });
    }
    let mut per_node = Vec::with_capacity(ens.node_count());
    for n in 0..ens.node_count() {
        let ep = run_episode(env, &ens.node(n), rff, cfg.episode_steps, cfg.episode_seed(n))?;
        per_node.push(if cfg.episode_steps == 0 { 0.0 } else { ep.total_loss / cfg.episode_steps as f64 });
    }
    let nodes = ens.node_count() as f64;
    let baseline = (0..ens.node_count())
        .map(|n| random_policy_loss(env, cfg.episode_steps, cfg.baseline_seed(n)))
        .sum::<f64>()
        / nodes;
    Ok(EvaluationReport {
        episodic_loss: per_node.iter().sum::<f64>() / nodes,
        baseline,
        per_node,
    })
}

/// Synthetic Q-consensus run used to check the spectral rate.
#[derive(Debug, Clone)]
pub struct ConsensusReport {
    pub errors: Vec<f64>,
    pub slope: f64,
    pub log_rate: f64,
    /// Whether the `D = 1` ensemble run reproduced the scalar reference bit for bit.
    pub reference_match: bool,
    pub traffic: Traffic,
}

/// Random payload of `dim` entries per node, zero start; the error of round
/// `m` is `max_n ‖Q_m⁽ⁿ⁾ − Σ_n' T⁽ⁿ'⁾‖`, fitted over `m ∈ [M/4, M]`.
pub fn consensus_experiment(graph: &Graph, params: &ConsensusParams, dim: usize, seed: u64) -> Result<ConsensusReport> {
    let spectrum = Spectrum::of(graph)?;
    params.validate(&spectrum)?;
    let n = graph.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = QEnsemble::from_columns(DMatrix::from_fn(dim, n, |_, _| rng.gen_range(-1.0..1.0)))?;
    let run = acfb_q_run(&QEnsemble::zeros(dim, n)?, &target, params, graph)?;
    let sum = target.column_sum();
    let errors: Vec<f64> = run.iterates.iter().map(|e| max_node_error(e, &sum)).collect();
    let m = params.inner_steps;

    let x_init: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x_prime: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let reference = lemma1_reference(&x_init, &x_prime, params, graph, m);
    let scalar = acfb_q_run(
        &QEnsemble::from_columns(DMatrix::from_row_slice(1, n, &x_init))?,
        &QEnsemble::from_columns(DMatrix::from_row_slice(1, n, &x_prime))?,
        params,
        graph,
    )?;
    let reference_match = reference.iter().zip(&scalar.iterates).all(|(r, e)| {
        r.iter()
            .zip(e.columns().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits())
    });

    Ok(ConsensusReport {
        slope: log_error_slope(&errors, m / 4, m),
        log_rate: spectrum.rate_with_gamma(params.eta, params.varpi, params.gamma)?.ln(),
        errors,
        reference_match,
        traffic: run.traffic,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(metrics: &RunMetrics) -> String {
    let mut s = String::from("k,cum_bytes,episodic_loss,consensus_loss,dist_fp,residual\n");
    for r in &metrics.records {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.k,
            r.cum_bytes,
            opt(r.episodic_loss),
            r.consensus_loss,
            opt(r.dist_fp),
            r.residual
        )
        .unwrap();
    }
    s
}

pub fn rounds_csv(metrics: &RunMetrics) -> String {
    let mut s = String::from("k,m,l,consensus_loss,messages,cum_bytes\n");
    for r in &metrics.rounds {
        writeln!(s, "{},{},{},{},{},{}", r.k, r.m, r.l, r.consensus_loss, r.messages, r.cum_bytes).unwrap();
    }
    s
}

pub fn residuals_csv(residuals: &[f64]) -> String {
    let mut s = String::from("iteration,residual\n");
    for (i, r) in residuals.iter().enumerate() {
        writeln!(s, "{},{}", i + 1, r).unwrap();
    }
    s
}
