//! Random Fourier features for the Gaussian kernel
//! `κ(z, z') = exp(−‖z − z'‖² / (2τ²))`.
//!
//! One [`RffMap`] is sampled per run and shared by every agent, so that all
//! Q-coefficient vectors and covariance matrices live in the same `ℝ^D`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// Point of the joint state-action space fed to the feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionPoint(pub Vec<f64>);

impl StateActionPoint {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RffMap {
    /// `D × d_z`; row `i` is the frequency `v_i`.
    frequencies: DMatrix<f64>,
    phases: DVector<f64>,
    bandwidth: f64,
}

impl RffMap {
    /// Draws `v_i ~ N(0, τ⁻² I)` and `u_i ~ U[0, 2π)` from a seeded ChaCha8
    /// stream. Frequencies are drawn row by row, then the phases.
    pub fn sample(input_dim: usize, dim: usize, bandwidth: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || dim == 0 {
            return Err(Error::InvalidDimension(format!(
                "feature map needs d_z >= 1 and D >= 1, got d_z = {input_dim}, D = {dim}"
            )));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::out_of_range("tau", bandwidth, "(0, inf)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / bandwidth).expect("finite std");
        let uniform = Uniform::new(0.0, 2.0 * PI);
        let mut frequencies = DMatrix::zeros(dim, input_dim);
        for i in 0..dim {
            for j in 0..input_dim {
                frequencies[(i, j)] = normal.sample(&mut rng);
            }
        }
        let phases = DVector::from_fn(dim, |_, _| uniform.sample(&mut rng));
        Ok(RffMap {
            frequencies,
            phases,
            bandwidth,
        })
    }

    pub fn from_parts(frequencies: DMatrix<f64>, phases: DVector<f64>, bandwidth: f64) -> Result<Self> {
        if frequencies.nrows() != phases.len() {
            return Err(Error::DimensionMismatch {
                expected: frequencies.nrows(),
                found: phases.len(),
            });
        }
        if frequencies.nrows() == 0 || frequencies.ncols() == 0 {
            return Err(Error::InvalidDimension("empty feature map".into()));
        }
        Ok(RffMap {
            frequencies,
            phases,
            bandwidth,
        })
    }

    pub fn dim(&self) -> usize {
        self.phases.len()
    }

    pub fn input_dim(&self) -> usize {
        self.frequencies.ncols()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn frequencies(&self) -> &DMatrix<f64> {
        &self.frequencies
    }

    pub fn phases(&self) -> &DVector<f64> {
        &self.phases
    }

    /// `sqrt(2/D) · [cos(v_iᵀz + u_i)]_i`.
    pub fn features(&self, z: &StateActionPoint) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim());
        self.features_into(z.as_slice(), out.as_mut_slice())?;
        Ok(out)
    }

    /// Writes the feature vector of `z` into `out` (length `D`).
    pub fn features_into(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        if z.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: z.len(),
            });
        }
        if out.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: out.len(),
            });
        }
        let scale = (2.0 / self.dim() as f64).sqrt();
        for (i, o) in out.iter_mut().enumerate() {
            let mut arg = self.phases[i];
            for (j, zj) in z.iter().enumerate() {
                arg += self.frequencies[(i, j)] * zj;
            }
            *o = scale * arg.cos();
        }
        Ok(())
    }

    /// Exact Gaussian kernel value the features approximate.
    pub fn kernel(&self, a: &StateActionPoint, b: &StateActionPoint) -> f64 {
        gaussian_kernel(a.as_slice(), b.as_slice(), self.bandwidth)
    }

    /// Flat text block: a header line `rff,<tau>,<D>,<d_z>`, then the `D`
    /// frequency rows, then one phase row. Floats use Rust's shortest
    /// round-trip formatting so the map is reproduced exactly.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "rff,{},{},{}", self.bandwidth, self.dim(), self.input_dim()).unwrap();
        for row in self.frequencies.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(s, "{}", cells.join(",")).unwrap();
        }
        let cells: Vec<String> = self.phases.iter().map(|v| v.to_string()).collect();
        writeln!(s, "{}", cells.join(",")).unwrap();
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty feature-map file".into(),
        })?;
        let head: Vec<&str> = header.split(',').map(str::trim).collect();
        if head.len() != 4 || head[0] != "rff" {
            return Err(Error::Parse {
                line: 1,
                message: "expected header `rff,<tau>,<D>,<d_z>`".into(),
            });
        }
        let num_err = |line: usize| Error::Parse {
            line,
            message: "malformed number".into(),
        };
        let tau: f64 = head[1].parse().map_err(|_| num_err(1))?;
        let dim: usize = head[2].parse().map_err(|_| num_err(1))?;
        let input_dim: usize = head[3].parse().map_err(|_| num_err(1))?;
        let mut row = |expected: usize| -> Result<Vec<f64>> {
            let (i, l) = lines.next().ok_or(Error::Parse {
                line: 0,
                message: "feature-map file truncated".into(),
            })?;
            let vals = crate::io::parse_row(l, i + 1)?;
            if vals.len() != expected {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {expected} values, found {}", vals.len()),
                });
            }
            Ok(vals)
        };
        let mut frequencies = DMatrix::zeros(dim, input_dim);
        for i in 0..dim {
            let r = row(input_dim)?;
            for (j, v) in r.into_iter().enumerate() {
                frequencies[(i, j)] = v;
            }
        }
        let phases = DVector::from_vec(row(dim)?);
        RffMap::from_parts(frequencies, phases, tau)
    }
}

pub fn gaussian_kernel(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-sq / (2.0 * bandwidth * bandwidth)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CartAction {
    Left,
    Right,
}

/// Pendulum embedding `z = [sin θ, cos θ, θ̇, a]`.
pub fn z_pendulum(observation: [f64; 3], torque: f64) -> StateActionPoint {
    let [s, c, w] = observation;
    StateActionPoint(vec![s, c, w, torque])
}

/// Cartpole embedding: the scaled state `[x/4, v/4, θ, θ̇/4]` occupies the
/// first block for `Left` and the second block for `Right`.
pub fn z_cartpole(state: [f64; 4], action: CartAction) -> StateActionPoint {
    let [x, v, th, w] = state;
    let block = [x / 4.0, v / 4.0, th, w / 4.0];
    let mut z = vec![0.0; 8];
    let offset = match action {
        CartAction::Left => 0,
        CartAction::Right => 4,
    };
    z[offset..offset + 4].copy_from_slice(&block);
    StateActionPoint(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn deterministic_and_shaped() {
        let a = RffMap::sample(3, 4, 1.0, 7).unwrap();
        let b = RffMap::sample(3, 4, 1.0, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.frequencies().shape(), (4, 3));
        assert_eq!(a.phases().len(), 4);
        assert_ne!(a, RffMap::sample(3, 4, 1.0, 8).unwrap());
        assert!(a.phases().iter().all(|&u| (0.0..2.0 * PI).contains(&u)));
    }

    #[test]
    fn invalid_dims() {
        assert!(matches!(RffMap::sample(0, 4, 1.0, 0), Err(Error::InvalidDimension(_))));
        assert!(matches!(RffMap::sample(2, 0, 1.0, 0), Err(Error::InvalidDimension(_))));
        assert!(RffMap::sample(2, 4, 0.0, 0).is_err());
        let m = RffMap::sample(2, 4, 1.0, 0).unwrap();
        assert!(matches!(
            m.features(&StateActionPoint(vec![1.0])),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn zero_input_gives_cosine_of_phases() {
        let m = RffMap::sample(3, 16, 1.0, 1).unwrap();
        let f = m.features(&StateActionPoint(vec![0.0; 3])).unwrap();
        let scale = (2.0 / 16.0f64).sqrt();
        for i in 0..16 {
            assert_eq!(f[i], scale * m.phases()[i].cos());
        }
    }

    #[test]
    fn feature_norm_bounded_and_pure() {
        let m = RffMap::sample(4, 50, 0.7, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let z = StateActionPoint((0..4).map(|_| rng.gen_range(-5.0..5.0)).collect());
            let f = m.features(&z).unwrap();
            assert!(f.norm_squared() <= 2.0 + 1e-12);
            assert_eq!(f, m.features(&z).unwrap());
        }
    }

    #[test]
    fn frequency_spread_scales_inverse_bandwidth() {
        // sample variance of 10^4 frequency entries vs τ⁻²
        for tau in [0.5, 2.0, 8.0] {
            let m = RffMap::sample(10, 1000, tau, 5).unwrap();
            let n = m.frequencies().len() as f64;
            let mean = m.frequencies().sum() / n;
            let var = m.frequencies().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let want = 1.0 / (tau * tau);
            assert!((var - want).abs() < 0.05 * want, "tau {tau}: var {var}, want {want}");
        }
    }

    #[test]
    fn monte_carlo_kernel_at_unit_distance() {
        // 50 seeds at D = 10^4; the mean inner product must sit within three
        // standard errors of exp(-1/2).
        let z1 = StateActionPoint(vec![0.3, -0.2, 0.5]);
        let z2 = StateActionPoint(vec![0.3, 0.8, 0.5]);
        let vals: Vec<f64> = (0..50)
            .map(|s| {
                let m = RffMap::sample(3, 10_000, 1.0, 100 + s).unwrap();
                m.features(&z1).unwrap().dot(&m.features(&z2).unwrap())
            })
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let target = (-0.5f64).exp();
        assert!((mean - target).abs() <= 3.0 * sd / n.sqrt(), "mean {mean}, se {}", sd / n.sqrt());
    }

    #[test]
    fn embeddings() {
        assert_eq!(z_pendulum([0.0, -1.0, 0.0], 0.0).0, vec![0.0, -1.0, 0.0, 0.0]);
        assert_eq!(z_pendulum([0.0, 1.0, 2.0], -2.0).0, vec![0.0, 1.0, 2.0, -2.0]);
        let s = [4.0, 4.0, 1.0, 4.0];
        assert_eq!(z_cartpole(s, CartAction::Left).0, vec![1., 1., 1., 1., 0., 0., 0., 0.]);
        assert_eq!(z_cartpole(s, CartAction::Right).0, vec![0., 0., 0., 0., 1., 1., 1., 1.]);
    }

    #[test]
    fn cartpole_blocks_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let s = [rng.gen(), rng.gen(), rng.gen(), rng.gen()];
            let l = z_cartpole(s, CartAction::Left).0;
            let r = z_cartpole(s, CartAction::Right).0;
            let dot: f64 = l.iter().zip(&r).map(|(a, b)| a * b).sum();
            assert_eq!(dot, 0.0);
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = RffMap::sample(4, 7, 1.3, 9).unwrap();
        let back = RffMap::from_csv(&m.to_csv()).unwrap();
        assert_eq!(m, back);
        assert!(RffMap::from_csv("rff,1,2,3\n1,2\n").is_err());
        let z = StateActionPoint(vec![0.1, 0.2, 0.3, 0.4]);
        assert_abs_diff_eq!(m.kernel(&z, &z), 1.0);
    }
}
