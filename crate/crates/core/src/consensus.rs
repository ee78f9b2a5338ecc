//! Laplacian mixing and the two consensus recursions.
//!
//! With `A(x) = x(I − γL)` and `A_ϖ = ϖA + (1 − ϖ)I`, both recursions read
//!
//! ```text
//! x₀     = A_ϖ(x₋₁) − η(x₋₁ − N·payload)
//! x_{m+1} = x_m − (A_ϖ(x_{m−1}) − η x_{m−1}) + (A(x_m) − η x_m)
//! ```
//!
//! and drive every node to the network sum of the payload columns. Each
//! round needs one neighbour exchange (`A(x_m)`); `A(x_{m−1})` is kept from
//! the previous round.

use nalgebra::{DMatrix, DVector};

use crate::bellman::{symmetrize, QFunction};
use crate::error::{Error, Result};
use crate::graph::{check_eta, check_varpi, Graph, Spectrum};

pub const DEFAULT_VARPI: f64 = 0.5;
pub const DEFAULT_INNER_STEPS: usize = 50;
pub const DEFAULT_COV_PERIOD: usize = 50;
pub const BYTES_PER_VALUE: u64 = 8;

const SYMMETRY_TOL: f64 = 1e-10;

/// Column `n` holds node `n`'s Q-coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct QEnsemble {
    cols: DMatrix<f64>,
}

impl QEnsemble {
    pub fn from_columns(cols: DMatrix<f64>) -> Result<Self> {
        if cols.nrows() == 0 || cols.ncols() == 0 {
            return Err(Error::InvalidDimension(format!(
                "ensemble must be non-empty, got {}x{}",
                cols.nrows(),
                cols.ncols()
            )));
        }
        Ok(QEnsemble { cols })
    }

    pub fn zeros(dim: usize, nodes: usize) -> Result<Self> {
        QEnsemble::from_columns(DMatrix::zeros(dim, nodes))
    }

    /// Every node holds `q`.
    pub fn consensual(q: &QFunction, nodes: usize) -> Result<Self> {
        QEnsemble::from_columns(DMatrix::from_fn(q.dim(), nodes, |i, _| q.coeffs()[i]))
    }

    pub fn from_functions(qs: &[QFunction]) -> Result<Self> {
        let dim = qs.first().map(QFunction::dim).unwrap_or(0);
        if let Some(bad) = qs.iter().find(|q| q.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        QEnsemble::from_columns(DMatrix::from_fn(dim, qs.len(), |i, n| qs[n].coeffs()[i]))
    }

    pub fn dim(&self) -> usize {
        self.cols.nrows()
    }

    pub fn node_count(&self) -> usize {
        self.cols.ncols()
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.cols
    }

    pub fn node(&self, n: usize) -> QFunction {
        QFunction::new(self.cols.column(n).into_owned())
    }

    fn slice(&self, n: usize) -> &[f64] {
        let d = self.dim();
        &self.cols.as_slice()[n * d..(n + 1) * d]
    }

    /// `Σ_n Q⁽ⁿ⁾` in ascending node order.
    pub fn column_sum(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.dim());
        for n in 0..self.node_count() {
            for (a, v) in acc.iter_mut().zip(self.slice(n)) {
                *a += v;
            }
        }
        acc
    }

    pub fn is_finite(&self) -> bool {
        self.cols.iter().all(|v| v.is_finite())
    }
}

/// Block `n` holds node `n`'s covariance estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct CovEnsemble {
    blocks: Vec<DMatrix<f64>>,
}

impl CovEnsemble {
    /// Blocks must be square, of equal size and symmetric within `1e-10`
    /// (relative to the largest entry); the symmetric part is stored.
    pub fn from_blocks(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let dim = blocks.first().map(|b| b.nrows()).unwrap_or(0);
        if dim == 0 {
            return Err(Error::InvalidDimension("ensemble must be non-empty".into()));
        }
        let mut out = Vec::with_capacity(blocks.len());
        for b in blocks {
            if b.shape() != (dim, dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: if b.nrows() != dim { b.nrows() } else { b.ncols() },
                });
            }
            let scale = b.amax().max(1.0);
            if (&b - b.transpose()).amax() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidDimension("covariance block is not symmetric".into()));
            }
            out.push(symmetrize(b));
        }
        Ok(CovEnsemble { blocks: out })
    }

    pub fn zeros(dim: usize, nodes: usize) -> Result<Self> {
        CovEnsemble::from_blocks(vec![DMatrix::zeros(dim, dim); nodes])
    }

    pub fn dim(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn node_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn block(&self, n: usize) -> &DMatrix<f64> {
        &self.blocks[n]
    }

    /// `Σ_n C⁽ⁿ⁾` in ascending node order.
    pub fn block_sum(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.dim(), self.dim());
        for b in &self.blocks {
            acc += b;
        }
        acc
    }
}

/// Step sizes and loop lengths shared by both recursions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusParams {
    pub eta: f64,
    pub varpi: f64,
    pub gamma: f64,
    /// Inner rounds `M` per value-iteration step.
    pub inner_steps: usize,
    /// Covariance rounds run when `m mod J_C = 0`.
    pub cov_period: usize,
}

impl ConsensusParams {
    /// `η = η*`, `ϖ = 1/2`, `γ = 1/λ₁`, `M = J_C = 50`.
    pub fn for_spectrum(spectrum: &Spectrum) -> Self {
        ConsensusParams {
            eta: spectrum.optimal_eta().eta,
            varpi: DEFAULT_VARPI,
            gamma: spectrum.gamma,
            inner_steps: DEFAULT_INNER_STEPS,
            cov_period: DEFAULT_COV_PERIOD,
        }
    }

    pub fn validate(&self, spectrum: &Spectrum) -> Result<()> {
        check_varpi(self.varpi)?;
        check_eta(self.eta, self.varpi)?;
        if !(self.gamma > 0.0 && self.gamma <= spectrum.gamma * (1.0 + 1e-12)) {
            return Err(Error::out_of_range("gamma", self.gamma, "(0, 1/lambda_1]"));
        }
        if self.inner_steps == 0 {
            return Err(Error::out_of_range("M", 0.0, "M >= 1"));
        }
        if self.cov_period == 0 || self.cov_period > self.inner_steps {
            return Err(Error::out_of_range("J_C", self.cov_period as f64, "1 <= J_C <= M"));
        }
        Ok(())
    }

    pub fn cov_gate_open(&self, m: usize) -> bool {
        m.is_multiple_of(self.cov_period)
    }
}

/// Communication volume of one or more exchange rounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Traffic {
    pub rounds: u64,
    pub messages: u64,
    pub values: u64,
}

impl Traffic {
    /// One round: every node sends its payload to each neighbour.
    pub fn round(graph: &Graph, values_per_message: usize) -> Self {
        let messages = 2 * graph.edge_count() as u64;
        Traffic {
            rounds: 1,
            messages,
            values: messages * values_per_message as u64,
        }
    }

    pub fn bytes(&self) -> u64 {
        self.values * BYTES_PER_VALUE
    }

    pub fn add(&mut self, other: Traffic) {
        self.rounds += other.rounds;
        self.messages += other.messages;
        self.values += other.values;
    }
}

/// Values in one symmetric `D × D` block message.
pub fn symmetric_payload(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

fn check_graph(graph: &Graph, nodes: usize) -> Result<()> {
    if graph.node_count() != nodes {
        return Err(Error::DimensionMismatch {
            expected: graph.node_count(),
            found: nodes,
        });
    }
    Ok(())
}

/// `out_n = (1 − γ|𝒩_n|) x_n + γ Σ_{j∈𝒩_n} x_j` on contiguous per-node
/// slices of length `len`, neighbours summed in ascending order.
fn mix_slices(graph: &Graph, gamma: f64, input: &[f64], len: usize, out: &mut [f64]) {
    for n in 0..graph.node_count() {
        let own = 1.0 - gamma * graph.degree(n) as f64;
        let nbrs = graph.neighbors(n);
        for i in 0..len {
            let mut s = 0.0;
            for &j in nbrs {
                s += input[j * len + i];
            }
            out[n * len + i] = own * input[n * len + i] + gamma * s;
        }
    }
}

/// One round of `A^Q`.
pub fn mix_q(ens: &QEnsemble, graph: &Graph, gamma: f64) -> Result<(QEnsemble, Traffic)> {
    check_graph(graph, ens.node_count())?;
    let mut out = DMatrix::zeros(ens.dim(), ens.node_count());
    mix_slices(graph, gamma, ens.cols.as_slice(), ens.dim(), out.as_mut_slice());
    Ok((QEnsemble { cols: out }, Traffic::round(graph, ens.dim())))
}

fn stack_blocks(blocks: &[DMatrix<f64>]) -> Vec<f64> {
    blocks.iter().flat_map(|b| b.as_slice().iter().copied()).collect()
}

fn unstack_blocks(flat: &[f64], dim: usize) -> Vec<DMatrix<f64>> {
    flat.chunks(dim * dim).map(|c| DMatrix::from_column_slice(dim, dim, c)).collect()
}

/// One round of `A^C`; each message carries the `D(D+1)/2` upper-triangle
/// entries of a block.
pub fn mix_c(ens: &CovEnsemble, graph: &Graph, gamma: f64) -> Result<(CovEnsemble, Traffic)> {
    check_graph(graph, ens.node_count())?;
    let d = ens.dim();
    let flat = stack_blocks(&ens.blocks);
    let mut out = vec![0.0; flat.len()];
    mix_slices(graph, gamma, &flat, d * d, &mut out);
    let blocks = unstack_blocks(&out, d);
    Ok((CovEnsemble { blocks }, Traffic::round(graph, symmetric_payload(d))))
}

/// `x₀[i] = ϖ·A(x₋₁)[i] + (1−ϖ)·x₋₁[i] − η(x₋₁[i] − N·payload[i])`.
fn zero_step(p: &ConsensusParams, nodes: f64, prev: &[f64], a_prev: &[f64], payload: &[f64], out: &mut [f64]) {
    for i in 0..out.len() {
        let x = prev[i];
        out[i] = (p.varpi * a_prev[i] + (1.0 - p.varpi) * x) - p.eta * (x - nodes * payload[i]);
    }
}

/// `x_{m+1}[i] = x_m[i] − (A_ϖ(x_{m−1})[i] − η x_{m−1}[i]) + (A(x_m)[i] − η x_m[i])`.
fn inner_step(p: &ConsensusParams, cur: &[f64], a_cur: &[f64], prev: &[f64], a_prev: &[f64], out: &mut [f64]) {
    for i in 0..out.len() {
        let relaxed = p.varpi * a_prev[i] + (1.0 - p.varpi) * prev[i];
        out[i] = cur[i] - (relaxed - p.eta * prev[i]) + (a_cur[i] - p.eta * cur[i]);
    }
}

/// Iterates `Q₀ … Q_M` of one Q-consensus run and the traffic it cost.
#[derive(Debug, Clone)]
pub struct QRun {
    pub iterates: Vec<QEnsemble>,
    pub traffic: Traffic,
}

impl QRun {
    pub fn last(&self) -> &QEnsemble {
        self.iterates.last().expect("a run has at least one iterate")
    }
}

/// Runs the Q-recursion from `Q₋₁ = start` with payload columns `T⁽ⁿ⁾`;
/// the factor `N` is applied here. Costs `M + 1` exchange rounds.
pub fn acfb_q_run(start: &QEnsemble, target: &QEnsemble, params: &ConsensusParams, graph: &Graph) -> Result<QRun> {
    check_varpi(params.varpi)?;
    check_eta(params.eta, params.varpi)?;
    check_graph(graph, start.node_count())?;
    if target.cols.shape() != start.cols.shape() {
        return Err(Error::DimensionMismatch {
            expected: start.cols.len(),
            found: target.cols.len(),
        });
    }
    let (d, n) = start.cols.shape();
    let len = d * n;
    let nodes = n as f64;
    let mut traffic = Traffic::default();

    let mut prev = start.cols.as_slice().to_vec();
    let mut a_prev = vec![0.0; len];
    mix_slices(graph, params.gamma, &prev, d, &mut a_prev);
    traffic.add(Traffic::round(graph, d));
    let mut cur = vec![0.0; len];
    zero_step(params, nodes, &prev, &a_prev, target.cols.as_slice(), &mut cur);

    let mut iterates = Vec::with_capacity(params.inner_steps + 1);
    iterates.push(QEnsemble {
        cols: DMatrix::from_column_slice(d, n, &cur),
    });
    let mut a_cur = vec![0.0; len];
    let mut next = vec![0.0; len];
    for _ in 0..params.inner_steps {
        mix_slices(graph, params.gamma, &cur, d, &mut a_cur);
        traffic.add(Traffic::round(graph, d));
        inner_step(params, &cur, &a_cur, &prev, &a_prev, &mut next);
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut a_prev, &mut a_cur);
        std::mem::swap(&mut cur, &mut next);
        iterates.push(QEnsemble {
            cols: DMatrix::from_column_slice(d, n, &cur),
        });
    }
    Ok(QRun { iterates, traffic })
}

/// `ℭ₀ = η N ℭ_𝒩` (since `ℭ₋₁ = 0`); needs no exchange.
pub fn acfb_c_zero(payload: &CovEnsemble, params: &ConsensusParams) -> Result<CovEnsemble> {
    check_varpi(params.varpi)?;
    check_eta(params.eta, params.varpi)?;
    let d = payload.dim();
    let flat = stack_blocks(&payload.blocks);
    let zeros = vec![0.0; flat.len()];
    let mut out = vec![0.0; flat.len()];
    zero_step(params, payload.node_count() as f64, &zeros, &zeros, &flat, &mut out);
    Ok(CovEnsemble {
        blocks: unstack_blocks(&out, d),
    })
}

/// One covariance round at global index `l = kM + m`. With the gate closed
/// (`m mod J_C ≠ 0`) the output is `prev` and nothing is sent.
pub fn acfb_c_step(
    prev: &CovEnsemble,
    prev2: &CovEnsemble,
    params: &ConsensusParams,
    graph: &Graph,
    l: usize,
) -> Result<(CovEnsemble, Traffic)> {
    check_varpi(params.varpi)?;
    check_eta(params.eta, params.varpi)?;
    if params.inner_steps == 0 || params.cov_period == 0 {
        return Err(Error::out_of_range("J_C", params.cov_period as f64, "1 <= J_C <= M"));
    }
    check_graph(graph, prev.node_count())?;
    if prev2.node_count() != prev.node_count() || prev2.dim() != prev.dim() {
        return Err(Error::DimensionMismatch {
            expected: prev.dim(),
            found: prev2.dim(),
        });
    }
    if !params.cov_gate_open(l % params.inner_steps) {
        return Ok((prev.clone(), Traffic::default()));
    }
    let d = prev.dim();
    let cur = stack_blocks(&prev.blocks);
    let old = stack_blocks(&prev2.blocks);
    let mut a_cur = vec![0.0; cur.len()];
    let mut a_old = vec![0.0; cur.len()];
    mix_slices(graph, params.gamma, &cur, d * d, &mut a_cur);
    mix_slices(graph, params.gamma, &old, d * d, &mut a_old);
    let mut next = vec![0.0; cur.len()];
    inner_step(params, &cur, &a_cur, &old, &a_old, &mut next);
    Ok((
        CovEnsemble {
            blocks: unstack_blocks(&next, d),
        },
        Traffic::round(graph, symmetric_payload(d)),
    ))
}

/// Persistent covariance recursion across value-iteration steps. Holds the
/// pair `(ℭ_l, ℭ_{l−1})` and `A(ℭ_{l−1})` from the last executed round.
#[derive(Debug, Clone)]
pub struct CovConsensus {
    dim: usize,
    nodes: usize,
    cur: Vec<f64>,
    prev: Vec<f64>,
    a_prev: Vec<f64>,
    params: ConsensusParams,
    index: usize,
    traffic: Traffic,
}

impl CovConsensus {
    /// Starts at `ℭ₀` from the nodal covariances `ℭ_𝒩`.
    pub fn start(payload: &CovEnsemble, params: ConsensusParams) -> Result<Self> {
        let c0 = acfb_c_zero(payload, &params)?;
        let len = payload.node_count() * payload.dim() * payload.dim();
        Ok(CovConsensus {
            dim: payload.dim(),
            nodes: payload.node_count(),
            cur: stack_blocks(&c0.blocks),
            prev: vec![0.0; len],
            a_prev: vec![0.0; len],
            params,
            index: 0,
            traffic: Traffic::default(),
        })
    }

    /// Global index `l` of the current estimate `ℭ_l`.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn traffic(&self) -> Traffic {
        self.traffic
    }

    pub fn current(&self) -> CovEnsemble {
        CovEnsemble {
            blocks: unstack_blocks(&self.cur, self.dim),
        }
    }

    pub fn node_block(&self, n: usize) -> DMatrix<f64> {
        let len = self.dim * self.dim;
        DMatrix::from_column_slice(self.dim, self.dim, &self.cur[n * len..(n + 1) * len])
    }

    /// Advances `l → l + 1` at inner index `m`; returns whether a round ran.
    pub fn advance(&mut self, graph: &Graph, m: usize) -> Result<bool> {
        check_graph(graph, self.nodes)?;
        self.index += 1;
        if !self.params.cov_gate_open(m) {
            return Ok(false);
        }
        let len = self.dim * self.dim;
        let mut a_cur = vec![0.0; self.cur.len()];
        mix_slices(graph, self.params.gamma, &self.cur, len, &mut a_cur);
        let mut next = vec![0.0; self.cur.len()];
        inner_step(&self.params, &self.cur, &a_cur, &self.prev, &self.a_prev, &mut next);
        self.prev = std::mem::replace(&mut self.cur, next);
        self.a_prev = a_cur;
        self.traffic.add(Traffic::round(graph, symmetric_payload(self.dim)));
        Ok(true)
    }
}

/// Scalar-per-node recursion, written out independently of the ensemble
/// code: `x₋₁ = x_init`, payload `x'`. Returns `x₀ … x_M`.
pub fn lemma1_reference(
    x_init: &[f64],
    x_prime: &[f64],
    params: &ConsensusParams,
    graph: &Graph,
    steps: usize,
) -> Vec<Vec<f64>> {
    let n = graph.node_count();
    let nodes = n as f64;
    let (eta, varpi, gamma) = (params.eta, params.varpi, params.gamma);
    let mix = |x: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let mut s = 0.0;
                for &j in graph.neighbors(i) {
                    s += x[j];
                }
                (1.0 - gamma * graph.degree(i) as f64) * x[i] + gamma * s
            })
            .collect()
    };

    let mut seq = Vec::with_capacity(steps + 1);
    let x_minus = x_init.to_vec();
    let a_minus = mix(&x_minus);
    let x0: Vec<f64> = (0..n)
        .map(|i| (varpi * a_minus[i] + (1.0 - varpi) * x_minus[i]) - eta * (x_minus[i] - nodes * x_prime[i]))
        .collect();
    seq.push(x0);
    let mut older = x_minus;
    for _ in 0..steps {
        let cur = seq.last().unwrap().clone();
        let a_cur = mix(&cur);
        let a_old = mix(&older);
        let next = (0..n)
            .map(|i| {
                let relaxed = varpi * a_old[i] + (1.0 - varpi) * older[i];
                cur[i] - (relaxed - eta * older[i]) + (a_cur[i] - eta * cur[i])
            })
            .collect();
        older = cur;
        seq.push(next);
    }
    seq
}

/// `(1/(N(N−1))) Σ_{n≠n'} ‖Q⁽ⁿ⁾ − Q⁽ⁿ'⁾‖`.
pub fn consensus_loss(ens: &QEnsemble) -> Result<f64> {
    let n = ens.node_count();
    if n < 2 {
        return Err(Error::SingleNode);
    }
    let mut total = 0.0;
    for a in 0..n {
        for b in 0..n {
            if a != b {
                let sq: f64 = ens.slice(a).iter().zip(ens.slice(b)).map(|(x, y)| (x - y) * (x - y)).sum();
                total += sq.sqrt();
            }
        }
    }
    Ok(total / (n * (n - 1)) as f64)
}

/// Largest per-node distance `max_n ‖x⁽ⁿ⁾ − target‖`.
pub fn max_node_error(ens: &QEnsemble, target: &DVector<f64>) -> f64 {
    (0..ens.node_count())
        .map(|n| {
            ens.slice(n)
                .iter()
                .zip(target.iter())
                .map(|(x, t)| (x - t) * (x - t))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Least-squares slope of `log(errors[m])` against `m` over `from..=to`.
pub fn log_error_slope(errors: &[f64], from: usize, to: usize) -> f64 {
    let pts: Vec<(f64, f64)> = (from..=to.min(errors.len().saturating_sub(1)))
        .filter(|&m| errors[m] > 0.0)
        .map(|m| (m as f64, errors[m].ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
