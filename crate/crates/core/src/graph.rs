//! Undirected agent networks, their Laplacians and the spectral quantities
//! that govern consensus speed.
//!
//! A [`Graph`] is always connected and simple. [`Spectrum`] holds the
//! descending Laplacian eigenvalues `λ_1 ≥ … ≥ λ_{N-1} > λ_N = 0`, the ratios
//! `b_n = λ_n / λ_1` and the default mixing step `γ = 1/λ_1`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of `λ_1` are treated as exact zeros.
pub const ZERO_EIGEN_RTOL: f64 = 1e-9;

/// Step of the fallback η grid search.
pub const ETA_GRID_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub enum Topology {
    Grid { rows: usize, cols: usize },
    Ring(usize),
    Path(usize),
    Star(usize),
    EdgeList { nodes: usize, edges: Vec<(usize, usize)> },
    /// Edge list stored in a text file, loaded by [`Topology::resolve`].
    File(PathBuf),
}

impl Topology {
    /// Loads `File` topologies from disk; other variants are returned as-is.
    pub fn resolve(self) -> Result<Topology> {
        match self {
            Topology::File(path) => {
                let text = std::fs::read_to_string(&path)?;
                let (nodes, edges) = parse_edge_list(&text)?;
                Ok(Topology::EdgeList { nodes, edges })
            }
            other => Ok(other),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Grid { rows, cols } => write!(f, "grid:{rows}x{cols}"),
            Topology::Ring(n) => write!(f, "ring:{n}"),
            Topology::Path(n) => write!(f, "path:{n}"),
            Topology::Star(n) => write!(f, "star:{n}"),
            Topology::EdgeList { nodes, edges } => write!(f, "edges:{nodes}/{}", edges.len()),
            Topology::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidTopologyParameter(format!("cannot parse topology `{s}`"));
        let (kind, arg) = s.trim().split_once(':').ok_or_else(bad)?;
        let count = |a: &str| a.trim().parse::<usize>().map_err(|_| bad());
        match kind.trim() {
            "grid" => {
                let (r, c) = arg.split_once(['x', 'X']).ok_or_else(bad)?;
                Ok(Topology::Grid {
                    rows: count(r)?,
                    cols: count(c)?,
                })
            }
            "ring" => Ok(Topology::Ring(count(arg)?)),
            "path" => Ok(Topology::Path(count(arg)?)),
            "star" => Ok(Topology::Star(count(arg)?)),
            "file" => Ok(Topology::File(PathBuf::from(arg.trim()))),
            _ => Err(bad()),
        }
    }
}

/// Parses the edge-list text format: one `n n'` pair of 0-based node indices
/// per line. Blank lines and lines starting with `#` are skipped. The node
/// count is one more than the largest index seen.
pub fn parse_edge_list(text: &str) -> Result<(usize, Vec<(usize, usize)>)> {
    let mut edges = Vec::new();
    let mut nodes = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut next = || -> Result<usize> {
            it.next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: i + 1,
                    message: format!("expected two node indices, got `{line}`"),
                })
        };
        let (a, b) = (next()?, next()?);
        if it.next().is_some() {
            return Err(Error::Parse {
                line: i + 1,
                message: "trailing tokens after edge".into(),
            });
        }
        nodes = nodes.max(a + 1).max(b + 1);
        edges.push((a, b));
    }
    Ok((nodes, edges))
}

/// A simple, undirected, connected graph with nodes `0..node_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Validates and builds a graph. Edges are normalized to `(min, max)` and
    /// stored sorted; neighbor lists are ascending.
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if node_count < 2 {
            return Err(Error::InvalidTopologyParameter(format!(
                "a network needs at least 2 nodes, got {node_count}"
            )));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::InvalidTopologyParameter(format!(
                    "edge ({a}, {b}) references a node outside 0..{node_count}"
                )));
            }
            if a == b {
                return Err(Error::InvalidTopologyParameter(format!("self-loop at node {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidTopologyParameter(format!("duplicate edge ({a}, {b})")));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); node_count];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let graph = Graph {
            node_count,
            edges,
            neighbors,
        };
        let reached = graph.reachable_from(0);
        if reached < node_count {
            return Err(Error::DisconnectedGraph(format!(
                "only {reached} of {node_count} nodes reachable from node 0"
            )));
        }
        Ok(graph)
    }

    pub fn build(topology: &Topology) -> Result<Self> {
        let param = |msg: String| Err(Error::InvalidTopologyParameter(msg));
        match *topology {
            Topology::Grid { rows, cols } => {
                if rows == 0 || cols == 0 || rows * cols < 2 {
                    return param(format!("grid:{rows}x{cols} has fewer than 2 nodes"));
                }
                let id = |r: usize, c: usize| r * cols + c;
                let mut edges = Vec::new();
                for r in 0..rows {
                    for c in 0..cols {
                        if c + 1 < cols {
                            edges.push((id(r, c), id(r, c + 1)));
                        }
                        if r + 1 < rows {
                            edges.push((id(r, c), id(r + 1, c)));
                        }
                    }
                }
                Graph::new(rows * cols, edges)
            }
            Topology::Ring(n) => {
                if n < 3 {
                    return param(format!("ring:{n} needs at least 3 nodes"));
                }
                Graph::new(n, (0..n).map(|i| (i, (i + 1) % n)))
            }
            Topology::Path(n) => {
                if n < 2 {
                    return param(format!("path:{n} needs at least 2 nodes"));
                }
                Graph::new(n, (1..n).map(|i| (i - 1, i)))
            }
            Topology::Star(n) => {
                if n < 2 {
                    return param(format!("star:{n} needs at least 2 nodes"));
                }
                Graph::new(n, (1..n).map(|i| (0, i)))
            }
            Topology::EdgeList { nodes, ref edges } => Graph::new(nodes, edges.iter().copied()),
            Topology::File(_) => Graph::build(&topology.clone().resolve()?),
        }
    }

    /// Random connected graph: a random spanning tree plus every remaining
    /// pair independently with probability `extra_edge_prob`.
    pub fn random_connected(node_count: usize, extra_edge_prob: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = BTreeSet::new();
        for i in 1..node_count {
            let j = rng.gen_range(0..i);
            set.insert((j, i));
        }
        for a in 0..node_count {
            for b in a + 1..node_count {
                if !set.contains(&(a, b)) && rng.gen_bool(extra_edge_prob.clamp(0.0, 1.0)) {
                    set.insert((a, b));
                }
            }
        }
        Graph::new(node_count, set)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    /// `L = diag(W·1) − W` with unit edge weights.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.node_count;
        let mut lap = DMatrix::zeros(n, n);
        for (i, nbrs) in self.neighbors.iter().enumerate() {
            lap[(i, i)] = nbrs.len() as f64;
            for &j in nbrs {
                lap[(i, j)] = -1.0;
            }
        }
        lap
    }

    fn reachable_from(&self, start: usize) -> usize {
        let mut seen = vec![false; self.node_count];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count
    }
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    pub laplacian: DMatrix<f64>,
    /// Descending; the last entry is exactly zero.
    pub eigenvalues: Vec<f64>,
    /// `b_n = λ_n / λ_1`, same order as `eigenvalues`.
    pub ratios: Vec<f64>,
    /// Algebraic connectivity `λ_{N-1}`.
    pub fiedler: f64,
    /// Default mixing step `1/λ_1`.
    pub gamma: f64,
}

impl Spectrum {
    pub fn of(graph: &Graph) -> Result<Self> {
        let laplacian = graph.laplacian();
        let eig = SymmetricEigen::try_new(laplacian.clone(), 1e-14, 10_000)
            .ok_or(Error::EigenSolverFailure)?;
        let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::EigenSolverFailure);
        }
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        let lambda_max = eigenvalues[0];
        let threshold = ZERO_EIGEN_RTOL * lambda_max;
        let mut zeros = 0;
        for v in &mut eigenvalues {
            if *v < threshold {
                *v = 0.0;
                zeros += 1;
            }
        }
        if zeros != 1 {
            return Err(Error::DisconnectedGraph(format!(
                "Laplacian has {zeros} zero eigenvalues"
            )));
        }
        let ratios = eigenvalues.iter().map(|v| v / lambda_max).collect();
        let n = eigenvalues.len();
        Ok(Spectrum {
            laplacian,
            fiedler: eigenvalues[n - 2],
            gamma: 1.0 / lambda_max,
            eigenvalues,
            ratios,
        })
    }

    pub fn node_count(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// `b_{N-1}`.
    pub fn fiedler_ratio(&self) -> f64 {
        self.ratios[self.ratios.len() - 2]
    }

    /// Linear convergence rate `ρ(η)` of the consensus recursions with the
    /// default `γ = 1/λ_1`.
    pub fn rate(&self, eta: f64, varpi: f64) -> Result<f64> {
        self.rate_with_gamma(eta, varpi, self.gamma)
    }

    /// `ρ(η) = max{ max_{n<N} |p_n + sqrt(p_n² + 4 q_n)| / 2, 1 − η }` with
    /// `p_n = 2 − η − γλ_n` and `q_n = ϖγλ_n + η − 1`. A negative
    /// discriminant is handled as a complex modulus.
    pub fn rate_with_gamma(&self, eta: f64, varpi: f64, gamma: f64) -> Result<f64> {
        check_varpi(varpi)?;
        check_eta(eta, varpi)?;
        if !(gamma > 0.0 && gamma <= self.gamma * (1.0 + 1e-12)) {
            return Err(Error::out_of_range("gamma", gamma, "(0, 1/lambda_1]"));
        }
        let n = self.eigenvalues.len();
        let mut rho = 1.0 - eta;
        for &lambda in &self.eigenvalues[..n - 1] {
            let p = 2.0 - eta - gamma * lambda;
            let q = varpi * gamma * lambda + eta - 1.0;
            let disc = p * p + 4.0 * q;
            let modulus = if disc >= 0.0 {
                (p + disc.sqrt()).abs() / 2.0
            } else {
                // |p + i sqrt(-disc)| / 2 = sqrt(-q)
                (p * p - disc).sqrt() / 2.0
            };
            rho = rho.max(modulus);
        }
        Ok(rho)
    }

    /// Learning rate minimizing `ρ(·)` for `ϖ = 1/2`.
    pub fn optimal_eta(&self) -> OptimalEta {
        let b = self.fiedler_ratio();
        if b > 0.0 && b < 0.5 {
            OptimalEta {
                eta: -b + (2.0 * b).sqrt(),
                closed_form: true,
            }
        } else {
            OptimalEta {
                eta: self.grid_search_eta(0.5),
                closed_form: false,
            }
        }
    }

    /// Argmin of `ρ(·)` over the grid `{k·10⁻⁴}` inside `(0, 2(1−ϖ))`;
    /// the first minimizer wins ties.
    pub fn grid_search_eta(&self, varpi: f64) -> f64 {
        let upper = 2.0 * (1.0 - varpi);
        let steps = (upper / ETA_GRID_STEP).ceil() as usize;
        let mut best = (f64::INFINITY, ETA_GRID_STEP);
        for k in 1..steps {
            let eta = k as f64 * ETA_GRID_STEP;
            if eta >= upper {
                break;
            }
            if let Ok(rho) = self.rate(eta, varpi) {
                if rho < best.0 {
                    best = (rho, eta);
                }
            }
        }
        best.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalEta {
    pub eta: f64,
    /// False when `b_{N-1} ≥ 1/2` and the value came from the grid search.
    pub closed_form: bool,
}

pub(crate) fn check_varpi(varpi: f64) -> Result<()> {
    if (0.5..1.0).contains(&varpi) {
        Ok(())
    } else {
        Err(Error::out_of_range("varpi", varpi, "[1/2, 1)"))
    }
}

pub(crate) fn check_eta(eta: f64, varpi: f64) -> Result<()> {
    if eta > 0.0 && eta < 2.0 * (1.0 - varpi) {
        Ok(())
    } else {
        Err(Error::out_of_range("eta", eta, "(0, 2(1 - varpi))"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn spectrum_of(t: Topology) -> Spectrum {
        Spectrum::of(&Graph::build(&t).unwrap()).unwrap()
    }

    #[test]
    fn edge_counts() {
        let g = Graph::build(&Topology::Grid { rows: 5, cols: 5 }).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (25, 5 * 4 + 5 * 4));
        assert_eq!(Graph::build(&Topology::Ring(5)).unwrap().edge_count(), 5);
        assert_eq!(Graph::build(&Topology::Path(3)).unwrap().edge_count(), 2);
        assert_eq!(Graph::build(&Topology::Star(6)).unwrap().edge_count(), 5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Graph::build(&Topology::Ring(1)),
            Err(Error::InvalidTopologyParameter(_))
        ));
        assert!(matches!(Graph::new(4, [(0, 1), (2, 3)]), Err(Error::DisconnectedGraph(_))));
        assert!(Graph::new(3, [(0, 0), (1, 2)]).is_err());
        assert!(Graph::new(3, [(0, 1), (1, 0), (1, 2)]).is_err());
        assert!(Graph::new(3, [(0, 1), (1, 5)]).is_err());
    }

    #[test]
    fn laplacian_entries() {
        let g = Graph::build(&Topology::Path(3)).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1., -1., 0., -1., 2., -1., 0., -1., 1.]);
        assert_eq!(g.laplacian(), expected);

        let ring = Graph::build(&Topology::Ring(5)).unwrap().laplacian();
        assert!((0..5).all(|i| ring[(i, i)] == 2.0));
        let grid = Graph::build(&Topology::Grid { rows: 5, cols: 5 }).unwrap().laplacian();
        for corner in [0, 4, 20, 24] {
            assert_eq!(grid[(corner, corner)], 2.0);
        }
        for r in 0..25 {
            assert_eq!(grid.row(r).sum(), 0.0);
        }
    }

    #[test]
    fn path3_spectrum() {
        let s = spectrum_of(Topology::Path(3));
        for (got, want) in s.eigenvalues.iter().zip([3.0, 1.0, 0.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-10);
        }
        assert_eq!(s.eigenvalues[2], 0.0);
        assert_abs_diff_eq!(s.fiedler_ratio(), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn ring_and_grid_closed_forms() {
        let s = spectrum_of(Topology::Ring(5));
        let mut want: Vec<f64> = (0..5).map(|k| 2.0 - 2.0 * (2.0 * PI * k as f64 / 5.0).cos()).collect();
        want.sort_by(|a, b| b.total_cmp(a));
        for (g, w) in s.eigenvalues.iter().zip(&want) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-10);
        }

        let s = spectrum_of(Topology::Grid { rows: 5, cols: 5 });
        let path: Vec<f64> = (0..5).map(|k| 2.0 - 2.0 * (k as f64 * PI / 5.0).cos()).collect();
        let mut want: Vec<f64> = path.iter().flat_map(|a| path.iter().map(move |b| a + b)).collect();
        want.sort_by(|a, b| b.total_cmp(a));
        for (g, w) in s.eigenvalues.iter().zip(&want) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(s.lambda_max(), 7.236068, epsilon = 1e-6);
        assert_abs_diff_eq!(s.fiedler, 0.381966, epsilon = 1e-6);
    }

    #[test]
    fn two_node_rates() {
        let s = spectrum_of(Topology::Path(2));
        assert_abs_diff_eq!(s.rate(0.5, 0.5).unwrap(), 0.5, epsilon = 1e-12);
        // p = 0.1, q = 0.4
        let want = (0.1 + (0.01f64 + 1.6).sqrt()) / 2.0;
        assert_abs_diff_eq!(s.rate(0.9, 0.5).unwrap(), want, epsilon = 1e-12);
        assert_abs_diff_eq!(want, 0.684430, epsilon = 2e-6);
    }

    #[test]
    fn rate_rejects_bad_params() {
        let s = spectrum_of(Topology::Path(3));
        assert!(s.rate(0.0, 0.5).is_err());
        assert!(s.rate(1.0, 0.5).is_err());
        assert!(s.rate(0.3, 0.4).is_err());
        assert!(s.rate(0.3, 1.0).is_err());
        assert!(s.rate(0.5, 0.75).is_err());
        assert!(s.rate(0.49, 0.75).is_ok());
    }

    #[test]
    fn optimal_eta_values() {
        let s = spectrum_of(Topology::Grid { rows: 5, cols: 5 });
        let opt = s.optimal_eta();
        assert!(opt.closed_form);
        assert_abs_diff_eq!(s.fiedler_ratio(), 0.052786, epsilon = 1e-6);
        assert_abs_diff_eq!(opt.eta, 0.272134, epsilon = 1e-6);

        let s = spectrum_of(Topology::Ring(5));
        let b = (1.0 - (2.0 * PI / 5.0).cos()) / (1.0 - (4.0 * PI / 5.0).cos());
        assert_abs_diff_eq!(s.optimal_eta().eta, -b + (2.0 * b).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.optimal_eta().eta, 0.492057, epsilon = 1e-5);

        let s = spectrum_of(Topology::Path(3));
        assert_abs_diff_eq!(s.optimal_eta().eta, -1.0 / 3.0 + (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn closed_form_for_b_one_eighth() {
        let b: f64 = 0.125;
        assert_abs_diff_eq!(-b + (2.0 * b).sqrt(), 0.375, epsilon = 1e-15);
    }

    #[test]
    fn two_node_graph_falls_back_to_grid_search() {
        let s = spectrum_of(Topology::Path(2));
        let opt = s.optimal_eta();
        assert!(!opt.closed_form);
        let rho = s.rate(opt.eta, 0.5).unwrap();
        for eta in [0.1, 0.3, 0.5, 0.7, 0.9] {
            assert!(rho <= s.rate(eta, 0.5).unwrap() + 1e-12);
        }
    }

    #[test]
    fn topology_parsing() {
        assert_eq!("grid:5x5".parse::<Topology>().unwrap(), Topology::Grid { rows: 5, cols: 5 });
        assert_eq!("ring:5".parse::<Topology>().unwrap(), Topology::Ring(5));
        assert_eq!("path:3".parse::<Topology>().unwrap(), Topology::Path(3));
        assert!("mesh:4".parse::<Topology>().is_err());
        assert!("grid:5".parse::<Topology>().is_err());
        let (n, e) = parse_edge_list("# triangle\n0 1\n1 2\n\n2 0\n").unwrap();
        assert_eq!((n, e.len()), (3, 3));
        assert!(parse_edge_list("0 1 2\n").is_err());
        assert!(parse_edge_list("0 x\n").is_err());
    }

    #[test]
    fn random_graphs_have_single_zero_eigenvalue() {
        for trial in 0..50u64 {
            let n = 2 + (trial as usize % 11);
            let g = Graph::random_connected(n, 0.2, trial).unwrap();
            let s = Spectrum::of(&g).unwrap();
            let zeros = s.eigenvalues.iter().filter(|&&v| v == 0.0).count();
            assert_eq!(zeros, 1);
            assert!(s.eigenvalues[..n - 1].iter().all(|&v| v >= 1e-10));
            assert_eq!(s.ratios[0], 1.0);
            assert!(s.ratios.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
