//! Galerkin approximation of the control function on a finite basis.
//!
//! The weak form `<∇φ, ∇ψ> = <h − ĥ, ψ>` restricted to
//! `span{ψ_1, …, ψ_M}` becomes `A c = b` with empirical inner products.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::{h_stats, Ensemble, GainSamples, GaussianMoments};
use crate::error::{Error, Result};
use crate::objective::{EvalFn, GradFn, Objective};

/// Condition number above which an unregularized solve is refused.
pub const MAX_CONDITION: f64 = 1e12;

/// One differentiable basis function with its gradient.
#[derive(Clone)]
pub struct BasisFunction {
    pub label: String,
    value: Arc<EvalFn>,
    grad: Arc<GradFn>,
}

impl fmt::Debug for BasisFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BasisFunction({})", self.label)
    }
}

impl BasisFunction {
    pub fn new<F, G>(label: impl Into<String>, value: F, grad: G) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        BasisFunction {
            label: label.into(),
            value: Arc::new(value),
            grad: Arc::new(grad),
        }
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    #[inline]
    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        (self.grad)(x, out)
    }
}

/// A list of basis functions `ψ_1 … ψ_M` on `R^d`.
#[derive(Debug, Clone)]
pub struct BasisSet {
    functions: Vec<BasisFunction>,
    dim: usize,
}

impl BasisSet {
    pub fn new(functions: Vec<BasisFunction>, dim: usize) -> Result<Self> {
        if functions.is_empty() {
            return Err(Error::invalid("basis", "need at least one function"));
        }
        if dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        Ok(BasisSet { functions, dim })
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn functions(&self) -> &[BasisFunction] {
        &self.functions
    }

    pub fn labels(&self) -> Vec<&str> {
        self.functions.iter().map(|f| f.label.as_str()).collect()
    }

    /// Coordinate functions `ψ_l(x) = x_l`.
    pub fn linear(dim: usize) -> Self {
        let functions = (0..dim)
            .map(|l| {
                BasisFunction::new(
                    format!("x{}", l + 1),
                    move |x| x[l],
                    move |_, g| {
                        g.fill(0.0);
                        g[l] = 1.0;
                    },
                )
            })
            .collect();
        BasisSet { functions, dim }
    }

    /// `{x_l} ∪ {x_l x_k : l ≤ k}`, all polynomials of degree at most two
    /// without the constant.
    pub fn quadratic(dim: usize) -> Self {
        let mut set = Self::linear(dim);
        for l in 0..dim {
            for k in l..dim {
                set.functions.push(BasisFunction::new(
                    format!("x{}*x{}", l + 1, k + 1),
                    move |x| x[l] * x[k],
                    move |x, g| {
                        g.fill(0.0);
                        g[l] += x[k];
                        g[k] += x[l];
                    },
                ));
            }
        }
        set
    }

    /// `{x, cos(2πx/P), sin(2πx/P)}` on the real line.
    pub fn fourier(period: f64) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::invalid("fourier_period", "must be positive"));
        }
        let w = 2.0 * PI / period;
        let functions = vec![
            BasisFunction::new("x", |x| x[0], |_, g| g[0] = 1.0),
            BasisFunction::new(
                format!("cos(2pi x/{period})"),
                move |x| (w * x[0]).cos(),
                move |x, g| g[0] = -w * (w * x[0]).sin(),
            ),
            BasisFunction::new(
                format!("sin(2pi x/{period})"),
                move |x| (w * x[0]).sin(),
                move |x, g| g[0] = w * (w * x[0]).cos(),
            ),
        ];
        Ok(BasisSet { functions, dim: 1 })
    }

    /// The single function `{h}`; requires an analytic gradient.
    pub fn objective(objective: &Objective, dim: usize) -> Result<Self> {
        if !objective.has_grad() {
            return Err(Error::invalid("basis", "single-function basis needs the objective gradient"));
        }
        let (hv, hg) = (objective.clone(), objective.clone());
        Ok(BasisSet {
            functions: vec![BasisFunction::new(
                "h",
                move |x| hv.eval(x),
                move |x, g| {
                    hg.grad(x, g);
                },
            )],
            dim,
        })
    }
}

/// Normalized probabilists' Hermite polynomials `He_k((x − m)/σ)/√(k!)`,
/// `k = 1..=M`: the eigenfunctions of the weighted Laplacian for a Gaussian
/// density, with eigenvalues `k/σ²`.
pub fn hermite_basis(m: usize, moments: &GaussianMoments) -> Result<BasisSet> {
    if moments.dim() != 1 {
        return Err(Error::invalid("moments", "Hermite basis is one-dimensional"));
    }
    if m == 0 {
        return Err(Error::invalid("M", "must be at least 1"));
    }
    let mean = moments.mean[0];
    let sd = moments.cov[(0, 0)].sqrt();
    if !(sd > 0.0) {
        return Err(Error::invalid("moments", "variance must be positive"));
    }
    let functions = (1..=m)
        .map(|k| {
            let norm = (1..=k).map(|j| j as f64).product::<f64>().sqrt();
            BasisFunction::new(
                format!("He{k}"),
                move |x| hermite(k, (x[0] - mean) / sd) / norm,
                move |x, g| g[0] = k as f64 * hermite(k - 1, (x[0] - mean) / sd) / (sd * norm),
            )
        })
        .collect();
    Ok(BasisSet { functions, dim: 1 })
}

/// Probabilists' Hermite polynomial `He_k(z)`.
pub fn hermite(k: usize, z: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, z);
    if k == 0 {
        return prev;
    }
    for j in 1..k {
        let next = z * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Solution of the Galerkin system.
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinSolution {
    pub coeffs: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub cond_estimate: f64,
    /// `‖A c − b‖₂` against the unregularized matrix.
    pub residual: f64,
}

/// Empirical `A_lk = <∇ψ_l, ∇ψ_k>` and `b_k = <h − ĥ, ψ_k>`.
pub fn assemble(ens: &Ensemble, basis: &BasisSet) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m = basis.len();
    let d = ens.dim();
    if basis.dim() != d {
        return Err(Error::invalid("basis", format!("basis dimension {} != ensemble {d}", basis.dim())));
    }
    if ens.count() < m {
        return Err(Error::invalid("n_particles", format!("need N >= M = {m}")));
    }
    let (_, hc) = h_stats(ens);
    let mut a = DMatrix::zeros(m, m);
    let mut b = DVector::zeros(m);
    let mut grads = vec![0.0; m * d];
    for (x, hci) in ens.particles().zip(&hc) {
        for (k, f) in basis.functions().iter().enumerate() {
            f.grad(x, &mut grads[k * d..(k + 1) * d]);
            b[k] += f.value(x) * hci;
        }
        for l in 0..m {
            let gl = &grads[l * d..(l + 1) * d];
            for k in l..m {
                let gk = &grads[k * d..(k + 1) * d];
                a[(l, k)] += gl.iter().zip(gk).map(|(p, q)| p * q).sum::<f64>();
            }
        }
    }
    let n = ens.count() as f64;
    for l in 0..m {
        for k in l..m {
            a[(l, k)] /= n;
            a[(k, l)] = a[(l, k)];
        }
    }
    Ok((a, b / n))
}

/// Solves `(A + ridge·I) c = b`.
pub fn solve_coefficients(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Result<GalerkinSolution> {
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge", "must be non-negative"));
    }
    let m = a.nrows();
    let reg = a + DMatrix::identity(m, m) * ridge;
    let eig = reg.clone().symmetric_eigen();
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if (ridge == 0.0 && cond > MAX_CONDITION) || !cond.is_finite() {
        return Err(Error::IllConditioned { cond });
    }
    let coeffs = reg
        .cholesky()
        .map(|ch| ch.solve(b))
        .ok_or(Error::IllConditioned { cond })?;
    let residual = (a * &coeffs - b).norm();
    Ok(GalerkinSolution {
        coeffs,
        a: a.clone(),
        b: b.clone(),
        cond_estimate: cond,
        residual,
    })
}

/// `u^i = −β Σ_k c_k ∇ψ_k(X^i)`.
pub fn galerkin_gain(
    ens: &Ensemble,
    basis: &BasisSet,
    beta: f64,
    ridge: f64,
) -> Result<(GainSamples, GalerkinSolution)> {
    let (a, b) = assemble(ens, basis)?;
    let sol = solve_coefficients(&a, &b, ridge)?;
    let d = ens.dim();
    let mut u = GainSamples::zeros(ens.count(), d);
    let mut g = vec![0.0; d];
    for (i, x) in ens.particles().enumerate() {
        let ui = &mut u.as_mut_slice()[i * d..(i + 1) * d];
        for (f, c) in basis.functions().iter().zip(sol.coeffs.iter()) {
            f.grad(x, &mut g);
            for (uk, gk) in ui.iter_mut().zip(&g) {
                *uk -= beta * c * gk;
            }
        }
    }
    Ok((u, sol))
}

/// Recommended Tikhonov ridge `1e-8 · tr(A)/M`.
pub fn default_ridge(a: &DMatrix<f64>) -> f64 {
    1e-8 * a.trace() / a.nrows() as f64
}
