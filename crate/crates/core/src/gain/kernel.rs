//! Diffusion-map approximation of the control function.
//!
//! The semigroup `e^{εΔ_ρ}` is replaced by a row-stochastic matrix built from
//! a Gaussian kernel with symmetric degree normalization; the potential solves
//! the fixed point `Φ = TΦ + ε(h − ĥ)` by successive approximation.

use rayon::prelude::*;

use crate::ensemble::{Ensemble, GainSamples};
use crate::error::{Error, Result};

/// Default bandwidth.
pub const DEFAULT_EPSILON: f64 = 0.5;
/// Default sweep cap.
pub const DEFAULT_MAX_SWEEPS: usize = 100;
/// Default early-exit threshold on the sup-norm change of a sweep.
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-9;

/// Dense row-stochastic Markov matrix `T` over the particles.
#[derive(Debug, Clone)]
pub struct KernelOperator {
    /// Row-major `N × N`.
    t: Vec<f64>,
    n: usize,
    dim: usize,
    epsilon: f64,
    positions: Vec<f64>,
}

/// Potential values at the particles after the fixed-point sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialVector {
    pub phi: Vec<f64>,
    pub iterations_run: usize,
    /// `max_i |ΔΦ_i|` of the last sweep.
    pub residual: f64,
}

impl KernelOperator {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.t[i * self.n..(i + 1) * self.n]
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.n + j]
    }

    /// `T v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        self.t
            .par_chunks_exact(self.n)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Builds `T` from the particle positions with bandwidth `ε`.
pub fn build_operator(ens: &Ensemble, epsilon: f64) -> Result<KernelOperator> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("epsilon", "must be positive"));
    }
    let n = ens.count();
    let d = ens.dim();
    let pos = ens.positions();
    let scale = 1.0 / (4.0 * epsilon);

    let mut t = vec![0.0; n * n];
    t.par_chunks_exact_mut(n).enumerate().for_each(|(i, row)| {
        let xi = &pos[i * d..(i + 1) * d];
        for (j, g) in row.iter_mut().enumerate() {
            let xj = &pos[j * d..(j + 1) * d];
            let r2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            *g = (-r2 * scale).exp();
        }
    });

    let degree: Vec<f64> = t.par_chunks_exact(n).map(|row| row.iter().sum::<f64>()).collect();
    if let Some(row) = degree.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::BandwidthUnderflow { epsilon, row });
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|s| 1.0 / s.sqrt()).collect();

    let bad = t
        .par_chunks_exact_mut(n)
        .enumerate()
        .map(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= inv_sqrt[i] * inv_sqrt[j];
            }
            let s: f64 = row.iter().sum();
            if !(s > 0.0 && s.is_finite()) {
                return Some(i);
            }
            row.iter_mut().for_each(|v| *v /= s);
            None
        })
        .reduce(|| None, |a, b| a.or(b));
    if let Some(row) = bad {
        return Err(Error::BandwidthUnderflow { epsilon, row });
    }

    Ok(KernelOperator {
        t,
        n,
        dim: d,
        epsilon,
        positions: pos.to_vec(),
    })
}

/// Runs up to `max_sweeps` sweeps of `Φ ← TΦ + ε h̃` followed by mean
/// removal, stopping early once the sup-norm change drops below `tol`.
pub fn fixed_point(
    op: &KernelOperator,
    h_centered: &[f64],
    epsilon: f64,
    max_sweeps: usize,
    tol: f64,
    phi_init: &[f64],
) -> Result<PotentialVector> {
    let n = op.len();
    if max_sweeps == 0 {
        return Err(Error::invalid("max_sweeps", "must be at least 1"));
    }
    if h_centered.len() != n || phi_init.len() != n {
        return Err(Error::invalid("phi_init", "length must equal particle count"));
    }
    let forcing: Vec<f64> = h_centered.iter().map(|h| epsilon * h).collect();
    let mut phi = phi_init.to_vec();
    let mut residual = 0.0;
    let mut iterations = 0;
    for _ in 0..max_sweeps {
        let mut next = op.apply(&phi);
        for (v, f) in next.iter_mut().zip(&forcing) {
            *v += f;
        }
        let mean = next.iter().sum::<f64>() / n as f64;
        next.iter_mut().for_each(|v| *v -= mean);
        residual = next
            .iter()
            .zip(&phi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        phi = next;
        iterations += 1;
        if residual < tol {
            break;
        }
    }
    Ok(PotentialVector {
        phi,
        iterations_run: iterations,
        residual,
    })
}

/// `u^i = (−β/2ε) Σ_j T_ij (Φ_j + ε h̃_j) (X^j − Σ_k T_ik X^k)`.
pub fn kernel_gain(
    op: &KernelOperator,
    phi: &PotentialVector,
    h_centered: &[f64],
    beta: f64,
    epsilon: f64,
) -> GainSamples {
    let n = op.len();
    let d = op.dim;
    let pos = &op.positions;
    let f: Vec<f64> = phi
        .phi
        .iter()
        .zip(h_centered)
        .map(|(p, h)| p + epsilon * h)
        .collect();
    let coef = -beta / (2.0 * epsilon);

    let mut controls = vec![0.0; n * d];
    controls.par_chunks_exact_mut(d).enumerate().for_each(|(i, ui)| {
        let row = op.row(i);
        let mut drift = vec![0.0; d];
        let mut weighted = vec![0.0; d];
        let mut mass = 0.0;
        for j in 0..n {
            let tij = row[j];
            let xj = &pos[j * d..(j + 1) * d];
            let w = tij * f[j];
            mass += w;
            for k in 0..d {
                drift[k] += tij * xj[k];
                weighted[k] += w * xj[k];
            }
        }
        for k in 0..d {
            ui[k] = coef * (weighted[k] - mass * drift[k]);
        }
    });
    GainSamples::new(controls, d)
}
