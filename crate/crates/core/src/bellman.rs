//! Nonparametric Bellman mappings in random-feature coordinates.
//!
//! A node's B-Map is `T⁽ⁿ⁾(Q) = (C + σI)⁻¹ Φ⁽ⁿ⁾ c⁽ⁿ⁾(Q)` where `C` estimates
//! the network-wide covariance `Σ_n Φ⁽ⁿ⁾Φ⁽ⁿ⁾ᵀ` and
//! `c_i(Q) = g_i + α min_{a'} Q(z(s_i', a'))` are the TD targets. With the
//! exact covariance the node-sum of these maps is the centralized map `T_⊙`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::env::{Environment, Trajectory};
use crate::error::{Error, Result};
use crate::features::RffMap;

pub const DEFAULT_ALPHA: f64 = 0.9;
pub const PENDULUM_SIGMA: f64 = 0.01;
pub const CARTPOLE_SIGMA: f64 = 0.025;

/// `Q(z) = qᵀφ(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    coeffs: DVector<f64>,
}

impl QFunction {
    pub fn new(coeffs: DVector<f64>) -> Self {
        QFunction { coeffs }
    }

    pub fn zeros(dim: usize) -> Self {
        QFunction::new(DVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> DVector<f64> {
        self.coeffs
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }

    pub fn evaluate_features(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: features.len(),
            });
        }
        Ok(self.coeffs.iter().zip(features).map(|(a, b)| a * b).sum())
    }
}

/// Symmetric `D × D` covariance estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    mat: DMatrix<f64>,
}

impl CovMatrix {
    /// Stores the symmetric part of `mat`.
    pub fn new(mat: DMatrix<f64>) -> Self {
        CovMatrix { mat: symmetrize(mat) }
    }

    pub fn zeros(dim: usize) -> Self {
        CovMatrix {
            mat: DMatrix::zeros(dim, dim),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }
}

pub(crate) fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

/// One node's private data in feature coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalData {
    /// `D × N_av`, column `i` is `φ(z(s_i, a_i))`.
    phi: DMatrix<f64>,
    losses: DVector<f64>,
    /// Per action `a'`, the `D × N_av` matrix with columns `φ(z(s_i', a'))`.
    next_phi: Vec<DMatrix<f64>>,
}

impl NodalData {
    pub fn new(phi: DMatrix<f64>, losses: DVector<f64>, next_phi: Vec<DMatrix<f64>>) -> Result<Self> {
        let (dim, n) = phi.shape();
        if losses.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: losses.len(),
            });
        }
        if next_phi.is_empty() {
            return Err(Error::InvalidDimension("need at least one action".into()));
        }
        for m in &next_phi {
            if m.shape() != (dim, n) {
                return Err(Error::DimensionMismatch {
                    expected: dim * n,
                    found: m.len(),
                });
            }
        }
        Ok(NodalData { phi, losses, next_phi })
    }

    pub fn from_trajectory<E: Environment>(env: &E, traj: &Trajectory<E::State>, rff: &RffMap) -> Result<Self> {
        if rff.input_dim() != env.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: env.input_dim(),
                found: rff.input_dim(),
            });
        }
        let (dim, n) = (rff.dim(), traj.len());
        let mut phi = DMatrix::zeros(dim, n);
        let mut next_phi = vec![DMatrix::zeros(dim, n); env.action_count()];
        let mut losses = DVector::zeros(n);
        for (i, s) in traj.samples.iter().enumerate() {
            rff.features_into(env.embed(&s.state, s.action).as_slice(), phi.column_mut(i).as_mut_slice())?;
            for (a, m) in next_phi.iter_mut().enumerate() {
                rff.features_into(env.embed(&s.next_state, a).as_slice(), m.column_mut(i).as_mut_slice())?;
            }
            losses[i] = s.loss;
        }
        NodalData::new(phi, losses, next_phi)
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn losses(&self) -> &DVector<f64> {
        &self.losses
    }

    pub fn next_phi(&self) -> &[DMatrix<f64>] {
        &self.next_phi
    }

    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn sample_count(&self) -> usize {
        self.phi.ncols()
    }

    pub fn action_count(&self) -> usize {
        self.next_phi.len()
    }
}

/// `Φ Φᵀ = Σ_i φ(z_i) φ(z_i)ᵀ`.
pub fn nodal_covariance(data: &NodalData) -> CovMatrix {
    CovMatrix::new(&data.phi * data.phi.transpose())
}

/// `Σ_n Φ⁽ⁿ⁾Φ⁽ⁿ⁾ᵀ`, summed in node order.
pub fn network_covariance(all: &[NodalData]) -> Result<CovMatrix> {
    let dim = all.first().map(NodalData::dim).ok_or_else(|| Error::InvalidDimension("no nodes".into()))?;
    let mut acc = DMatrix::zeros(dim, dim);
    for d in all {
        acc += nodal_covariance(d).into_matrix();
    }
    Ok(CovMatrix::new(acc))
}

/// `c_i = g_i + α min_{a'} qᵀφ(z(s_i', a'))`, lowest action index on ties.
pub fn td_targets(q: &QFunction, data: &NodalData, alpha: f64) -> Result<DVector<f64>> {
    if q.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: q.dim(),
        });
    }
    let mut best = data.next_phi[0].tr_mul(q.coeffs());
    for m in &data.next_phi[1..] {
        let vals = m.tr_mul(q.coeffs());
        for (b, v) in best.iter_mut().zip(vals.iter()) {
            if *v < *b {
                *b = *v;
            }
        }
    }
    Ok(&data.losses + best * alpha)
}

/// Cholesky factor of `C + σI`, reused across right-hand sides.
#[derive(Debug, Clone)]
pub struct RidgeSolver {
    chol: Cholesky<f64, Dyn>,
}

impl RidgeSolver {
    pub fn new(cov: &CovMatrix, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::out_of_range("sigma", sigma, "(0, inf)"));
        }
        let mut m = cov.matrix().clone();
        for i in 0..m.nrows() {
            m[(i, i)] += sigma;
        }
        let chol = Cholesky::new(m).ok_or(Error::FactorizationFailure)?;
        Ok(RidgeSolver { chol })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }
}

/// `(C + σI)⁻¹ Φ c` for given targets `c`.
pub fn apply_basis(solver: &RidgeSolver, data: &NodalData, targets: &DVector<f64>) -> Result<QFunction> {
    if targets.len() != data.sample_count() {
        return Err(Error::DimensionMismatch {
            expected: data.sample_count(),
            found: targets.len(),
        });
    }
    if solver.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: solver.dim(),
        });
    }
    Ok(QFunction::new(solver.solve(&(&data.phi * targets))))
}

/// Nodal B-Map `(C_est + σI)⁻¹ Φ⁽ⁿ⁾ c⁽ⁿ⁾(Q)`.
pub fn nodal_bmap(q: &QFunction, c_est: &CovMatrix, data: &NodalData, sigma: f64, alpha: f64) -> Result<QFunction> {
    let solver = RidgeSolver::new(c_est, sigma)?;
    apply_basis(&solver, data, &td_targets(q, data, alpha)?)
}

/// The centralized map `T_⊙(Q) = (Φ_𝒩Φ_𝒩ᵀ + σI)⁻¹ Φ_𝒩 c_𝒩(Q)`, with the
/// factorization computed once.
#[derive(Debug, Clone)]
pub struct CentralizedBmap<'a> {
    data: &'a [NodalData],
    solver: RidgeSolver,
    alpha: f64,
}

impl<'a> CentralizedBmap<'a> {
    pub fn new(data: &'a [NodalData], sigma: f64, alpha: f64) -> Result<Self> {
        let cov = network_covariance(data)?;
        Ok(CentralizedBmap {
            data,
            solver: RidgeSolver::new(&cov, sigma)?,
            alpha,
        })
    }

    pub fn apply(&self, q: &QFunction) -> Result<QFunction> {
        let mut rhs = DVector::zeros(q.dim());
        for d in self.data {
            let c = td_targets(q, d, self.alpha)?;
            rhs += &d.phi * c;
        }
        Ok(QFunction::new(self.solver.solve(&rhs)))
    }
}

pub fn centralized_bmap(q: &QFunction, all: &[NodalData], sigma: f64, alpha: f64) -> Result<QFunction> {
    CentralizedBmap::new(all, sigma, alpha)?.apply(q)
}

/// `Σ_n (Φ_𝒩Φ_𝒩ᵀ + σI)⁻¹ Φ⁽ⁿ⁾ c⁽ⁿ⁾(Q)`: one solve per node.
pub fn centralized_bmap_node_sum(q: &QFunction, all: &[NodalData], sigma: f64, alpha: f64) -> Result<QFunction> {
    let solver = RidgeSolver::new(&network_covariance(all)?, sigma)?;
    let mut acc = DVector::zeros(q.dim());
    for d in all {
        acc += apply_basis(&solver, d, &td_targets(q, d, alpha)?)?.into_coeffs();
    }
    Ok(QFunction::new(acc))
}

/// `Φ_𝒩 (K_𝒩 + σI)⁻¹ c_𝒩(Q)` with the Gram matrix `K_𝒩 = Φ_𝒩ᵀΦ_𝒩`.
pub fn centralized_bmap_kernel_form(q: &QFunction, all: &[NodalData], sigma: f64, alpha: f64) -> Result<QFunction> {
    let phi = stack_features(all)?;
    let mut targets = Vec::with_capacity(phi.ncols());
    for d in all {
        targets.extend(td_targets(q, d, alpha)?.iter().copied());
    }
    let gram = CovMatrix::new(phi.tr_mul(&phi));
    let solver = RidgeSolver::new(&gram, sigma)?;
    let weights = solver.solve(&DVector::from_vec(targets));
    Ok(QFunction::new(&phi * weights))
}

/// `Φ_𝒩 = [Φ⁽¹⁾, …, Φ⁽ᴺ⁾]`.
pub fn stack_features(all: &[NodalData]) -> Result<DMatrix<f64>> {
    let dim = all.first().map(NodalData::dim).ok_or_else(|| Error::InvalidDimension("no nodes".into()))?;
    let total: usize = all.iter().map(NodalData::sample_count).sum();
    let mut phi = DMatrix::zeros(dim, total);
    let mut col = 0;
    for d in all {
        let n = d.sample_count();
        phi.columns_mut(col, n).copy_from(&d.phi);
        col += n;
    }
    Ok(phi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardSettings {
    fn default() -> Self {
        PicardSettings {
            tol: 1e-9,
            max_iter: 5000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub q: QFunction,
    pub iterations: usize,
    /// `‖q_{k+1} − q_k‖` per iteration.
    pub residuals: Vec<f64>,
}

/// Iterates `q ← map(q)` until the step norm drops to `tol`.
pub fn banach_picard<F>(mut map: F, q0: QFunction, settings: PicardSettings) -> Result<PicardOutcome>
where
    F: FnMut(&QFunction) -> Result<QFunction>,
{
    let mut q = q0;
    let mut residuals = Vec::new();
    for it in 1..=settings.max_iter {
        let next = map(&q)?;
        let r = (next.coeffs() - q.coeffs()).norm();
        residuals.push(r);
        q = next;
        if !r.is_finite() {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: r,
            });
        }
        if r <= settings.tol {
            return Ok(PicardOutcome {
                q,
                iterations: it,
                residuals,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: settings.max_iter,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
    })
}
