//! Browser bindings: graph spectra, rate curves and Q-consensus traces.
//!
//! The `*_report` functions are plain Rust and tested natively; the
//! `#[wasm_bindgen]` wrappers serialize their results to JSON.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use netvi::consensus::ConsensusParams;
use netvi::graph::{Graph, Spectrum, Topology};
use netvi::harness::consensus_experiment;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SpectrumReport {
    pub topology: String,
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub eigenvalues: Vec<f64>,
    pub lambda_max: f64,
    pub fiedler: f64,
    pub fiedler_ratio: f64,
    pub gamma: f64,
    pub eta_star: f64,
    pub closed_form: bool,
    pub rho_star: f64,
}

fn build(topology: &str) -> Result<(Graph, Spectrum), String> {
    let t: Topology = topology.parse().map_err(|e: netvi::Error| e.to_string())?;
    if matches!(t, Topology::File(_)) {
        return Err("file topologies are not available in the browser".into());
    }
    let graph = Graph::build(&t).map_err(|e| e.to_string())?;
    let spectrum = Spectrum::of(&graph).map_err(|e| e.to_string())?;
    Ok((graph, spectrum))
}

pub fn spectrum_report(topology: &str) -> Result<SpectrumReport, String> {
    let (graph, s) = build(topology)?;
    let opt = s.optimal_eta();
    Ok(SpectrumReport {
        topology: topology.trim().to_string(),
        nodes: graph.node_count(),
        edges: graph.edges().to_vec(),
        lambda_max: s.lambda_max(),
        fiedler: s.fiedler,
        fiedler_ratio: s.fiedler_ratio(),
        gamma: s.gamma,
        eta_star: opt.eta,
        closed_form: opt.closed_form,
        rho_star: s.rate(opt.eta, 0.5).map_err(|e| e.to_string())?,
        eigenvalues: s.eigenvalues.clone(),
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RateCurve {
    pub eta: Vec<f64>,
    pub rho: Vec<f64>,
}

/// `ρ(η)` on `points` interior grid points of `(0, 2(1 − ϖ))`.
pub fn rate_curve_report(topology: &str, varpi: f64, points: usize) -> Result<RateCurve, String> {
    let (_, s) = build(topology)?;
    let upper = 2.0 * (1.0 - varpi);
    let mut curve = RateCurve {
        eta: Vec::with_capacity(points),
        rho: Vec::with_capacity(points),
    };
    for i in 1..=points {
        let eta = upper * i as f64 / (points + 1) as f64;
        curve.rho.push(s.rate(eta, varpi).map_err(|e| e.to_string())?);
        curve.eta.push(eta);
    }
    Ok(curve)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ConsensusTrace {
    pub eta: f64,
    pub errors: Vec<f64>,
    /// Spectral prediction `ρ^m`, scaled to the first error.
    pub predicted: Vec<f64>,
    pub slope: f64,
    pub log_rate: f64,
    pub bytes: u64,
    pub reference_match: bool,
}

/// Q-consensus on a random payload; `eta <= 0` selects the optimal rate.
pub fn consensus_trace_report(topology: &str, eta: f64, rounds: usize, dim: usize, seed: u64) -> Result<ConsensusTrace, String> {
    let (graph, s) = build(topology)?;
    let mut params = ConsensusParams::for_spectrum(&s);
    if eta > 0.0 {
        params.eta = eta;
    }
    params.inner_steps = rounds.max(4);
    params.cov_period = params.inner_steps;
    let report = consensus_experiment(&graph, &params, dim.max(1), seed).map_err(|e| e.to_string())?;
    let first = report.errors[0];
    let predicted = (0..report.errors.len())
        .map(|m| first * (report.log_rate * m as f64).exp())
        .collect();
    Ok(ConsensusTrace {
        eta: params.eta,
        predicted,
        errors: report.errors,
        slope: report.slope,
        log_rate: report.log_rate,
        bytes: report.traffic.bytes(),
        reference_match: report.reference_match,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    let v = r.map_err(|e| JsValue::from_str(&e))?;
    serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn spectrum(topology: &str) -> Result<String, JsValue> {
    to_js(spectrum_report(topology))
}

#[wasm_bindgen]
pub fn rate_curve(topology: &str, varpi: f64, points: usize) -> Result<String, JsValue> {
    to_js(rate_curve_report(topology, varpi, points))
}

#[wasm_bindgen]
pub fn consensus_trace(topology: &str, eta: f64, rounds: usize, dim: usize, seed: u64) -> Result<String, JsValue> {
    to_js(consensus_trace_report(topology, eta, rounds, dim, seed))
}
