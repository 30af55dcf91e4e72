//! Natural-gradient filter for densities of known parametric form.
//!
//! With `p(x, t) = ϱ(x; θ_t)` the particle flow reduces to the ODE
//! `dθ/dt = −β G(θ)⁻¹ ∇e(θ)`, where `G` is the Fisher information matrix and
//! `e(θ) = ∫ h ϱ(·; θ)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gain::galerkin::BasisSet;
use crate::objective::{Objective, Quadratic};
use crate::rng::{stream, Purpose};

/// Smallest admissible Fisher eigenvalue.
pub const FISHER_EPS: f64 = 1e-10;

/// A family of densities `ϱ(x; θ)` on `R^d`, `θ ∈ R^M`.
pub trait ParametricFamily: Send + Sync {
    fn dim_theta(&self) -> usize;

    fn dim_x(&self) -> usize;

    fn log_density(&self, x: &[f64], theta: &DVector<f64>) -> Result<f64>;

    /// `∂/∂θ log ϱ(x; θ)`.
    fn score(&self, x: &[f64], theta: &DVector<f64>) -> Result<DVector<f64>>;

    /// `n` i.i.d. draws, row-major `n × d`.
    fn sample(&self, theta: &DVector<f64>, n: usize, rng: &mut dyn rand::RngCore) -> Result<Vec<f64>>;

    /// Closed-form Fisher matrix, when the family has one.
    fn fisher_analytic(&self, _theta: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        None
    }

    /// Closed-form (or quadrature) `∇e(θ)` for the given objective.
    fn grad_e_analytic(&self, _theta: &DVector<f64>, _objective: &Objective) -> Option<Result<DVector<f64>>> {
        None
    }
}

/// Parameter-space state of the natural-gradient filter.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalGradState {
    pub theta: DVector<f64>,
    pub t: f64,
}

/// Where `G` and `∇e` come from in a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Analytic,
    MonteCarlo,
}

/// Estimator settings for one natural-gradient step. Monte-Carlo estimates
/// of `G` and `∇e` share one sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEstimator {
    pub fisher: Source,
    pub grad: Source,
    pub samples: usize,
}

impl StepEstimator {
    pub fn analytic() -> Self {
        StepEstimator {
            fisher: Source::Analytic,
            grad: Source::Analytic,
            samples: 0,
        }
    }

    pub fn monte_carlo(samples: usize) -> Self {
        StepEstimator {
            fisher: Source::MonteCarlo,
            grad: Source::MonteCarlo,
            samples,
        }
    }
}

fn draw(fam: &dyn ParametricFamily, theta: &DVector<f64>, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("samples", "must be positive"));
    }
    let mut rng = stream(seed, 0, Purpose::Estimator, 0);
    fam.sample(theta, n, &mut rng)
}

fn check_fisher(g: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let min = g.clone().symmetric_eigenvalues().min();
    if !(min >= FISHER_EPS) {
        return Err(Error::SingularFisher { min_eigenvalue: min });
    }
    Ok(g)
}

fn fisher_from_samples(fam: &dyn ParametricFamily, theta: &DVector<f64>, xs: &[f64]) -> Result<DMatrix<f64>> {
    let m = fam.dim_theta();
    let d = fam.dim_x();
    let mut g = DMatrix::zeros(m, m);
    for x in xs.chunks_exact(d) {
        let s = fam.score(x, theta)?;
        g.ger(1.0, &s, &s, 1.0);
    }
    let n = (xs.len() / d) as f64;
    g /= n;
    Ok((&g + g.transpose()) * 0.5)
}

fn grad_e_from_samples(
    fam: &dyn ParametricFamily,
    theta: &DVector<f64>,
    objective: &Objective,
    xs: &[f64],
) -> Result<DVector<f64>> {
    let d = fam.dim_x();
    let mut out = DVector::zeros(fam.dim_theta());
    for x in xs.chunks_exact(d) {
        out.axpy(objective.eval(x), &fam.score(x, theta)?, 1.0);
    }
    Ok(out / (xs.len() / d) as f64)
}

/// `G ≈ (1/N) Σ s(X^i) s(X^i)ᵀ` with `X^i ~ ϱ(·; θ)`.
pub fn fisher_mc(fam: &dyn ParametricFamily, theta: &DVector<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let xs = draw(fam, theta, n, seed)?;
    check_fisher(fisher_from_samples(fam, theta, &xs)?)
}

/// `∇e ≈ (1/N) Σ h(X^i) s(X^i)`.
pub fn grad_e_mc(
    fam: &dyn ParametricFamily,
    theta: &DVector<f64>,
    objective: &Objective,
    n: usize,
    seed: u64,
) -> Result<DVector<f64>> {
    let xs = draw(fam, theta, n, seed)?;
    grad_e_from_samples(fam, theta, objective, &xs)
}

/// `(1/N) Σ h(X^i)`, the Monte-Carlo estimate of `e(θ)`.
pub fn e_mc(fam: &dyn ParametricFamily, theta: &DVector<f64>, objective: &Objective, n: usize, seed: u64) -> Result<f64> {
    let xs = draw(fam, theta, n, seed)?;
    let d = fam.dim_x();
    Ok(xs.chunks_exact(d).map(|x| objective.eval(x)).sum::<f64>() / n as f64)
}

/// One Euler step `θ ← θ − dt·β·G⁻¹∇e`.
pub fn natural_grad_step(
    state: &NaturalGradState,
    fam: &dyn ParametricFamily,
    objective: &Objective,
    beta: f64,
    dt: f64,
    estimator: StepEstimator,
    seed: u64,
) -> Result<NaturalGradState> {
    let theta = &state.theta;
    let needs_samples = estimator.fisher == Source::MonteCarlo || estimator.grad == Source::MonteCarlo;
    let xs = if needs_samples {
        draw(fam, theta, estimator.samples, seed)?
    } else {
        Vec::new()
    };
    let unavailable = |what: &str| Error::invalid("estimator", format!("family has no analytic {what}"));
    let g = match estimator.fisher {
        Source::Analytic => fam.fisher_analytic(theta).ok_or_else(|| unavailable("Fisher matrix"))??,
        Source::MonteCarlo => fisher_from_samples(fam, theta, &xs)?,
    };
    let g = check_fisher(g)?;
    let grad = match estimator.grad {
        Source::Analytic => fam
            .grad_e_analytic(theta, objective)
            .ok_or_else(|| unavailable("gradient"))??,
        Source::MonteCarlo => grad_e_from_samples(fam, theta, objective, &xs)?,
    };
    let min_eigenvalue = g.clone().symmetric_eigenvalues().min();
    let dir = g
        .cholesky()
        .ok_or(Error::SingularFisher { min_eigenvalue })?
        .solve(&grad);
    Ok(NaturalGradState {
        theta: theta - dir * (dt * beta),
        t: state.t + dt,
    })
}

/// Euler trajectory of the natural-gradient ODE; step `k` draws from the
/// stream `(seed, k)`.
#[allow(clippy::too_many_arguments)]
pub fn natural_grad_run(
    theta0: DVector<f64>,
    fam: &dyn ParametricFamily,
    objective: &Objective,
    beta: f64,
    dt: f64,
    t_final: f64,
    estimator: StepEstimator,
    seed: u64,
) -> Result<Vec<NaturalGradState>> {
    let steps = (t_final / dt).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(NaturalGradState { theta: theta0, t: 0.0 });
    for k in 0..steps {
        let next = natural_grad_step(
            out.last().unwrap(),
            fam,
            objective,
            beta,
            dt,
            estimator,
            crate::rng::derive_seed(seed, k as u64),
        )?;
        out.push(next);
    }
    Ok(out)
}

type Factored = (DVector<f64>, DMatrix<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>);

/// Gaussian densities on `R^d` parametrized by `θ = (m, vech Σ)`, with the
/// upper triangle of `Σ` listed row by row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaussianFamily {
    dim: usize,
}

impl GaussianFamily {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1);
        GaussianFamily { dim }
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.dim).flat_map(move |r| (r..self.dim).map(move |c| (r, c)))
    }

    pub fn theta(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> DVector<f64> {
        let mut v: Vec<f64> = mean.iter().cloned().collect();
        v.extend(self.pairs().map(|(r, c)| cov[(r, c)]));
        DVector::from_vec(v)
    }

    pub fn moments(&self, theta: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if theta.len() != self.dim_theta() {
            return Err(Error::invalid("theta", "wrong length for Gaussian family"));
        }
        let d = self.dim;
        let mean = DVector::from_iterator(d, theta.iter().take(d).cloned());
        let mut cov = DMatrix::zeros(d, d);
        for ((r, c), v) in self.pairs().zip(theta.iter().skip(d)) {
            cov[(r, c)] = *v;
            cov[(c, r)] = *v;
        }
        Ok((mean, cov))
    }

    fn factor(&self, theta: &DVector<f64>) -> Result<Factored> {
        let (m, s) = self.moments(theta)?;
        let chol = s.clone().cholesky().ok_or(Error::NotSymmetricPD)?;
        Ok((m, s, chol))
    }

    /// `e(θ)` in closed form for a quadratic objective.
    pub fn e_quadratic(&self, theta: &DVector<f64>, q: &Quadratic) -> Result<f64> {
        let (m, s) = self.moments(theta)?;
        let dm = &m - &q.minimizer;
        Ok(0.5 * dm.dot(&(&q.hessian * &dm)) + 0.5 * (&q.hessian * s).trace() + q.offset)
    }
}

impl ParametricFamily for GaussianFamily {
    fn dim_theta(&self) -> usize {
        self.dim + self.dim * (self.dim + 1) / 2
    }

    fn dim_x(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64], theta: &DVector<f64>) -> Result<f64> {
        let (m, _, chol) = self.factor(theta)?;
        let dx = DVector::from_column_slice(x) - m;
        let quad = dx.dot(&chol.solve(&dx));
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(-0.5 * (quad + logdet + self.dim as f64 * (2.0 * std::f64::consts::PI).ln()))
    }

    fn score(&self, x: &[f64], theta: &DVector<f64>) -> Result<DVector<f64>> {
        let (m, _, chol) = self.factor(theta)?;
        let inv = chol.inverse();
        let z = &inv * (DVector::from_column_slice(x) - m);
        // ∂ log ϱ / ∂Σ = ½(Σ⁻¹ (x−m)(x−m)ᵀ Σ⁻¹ − Σ⁻¹); an off-diagonal vech
        // entry moves both (r, c) and (c, r).
        let mut out: Vec<f64> = z.iter().cloned().collect();
        for (r, c) in self.pairs() {
            let g = 0.5 * (z[r] * z[c] - inv[(r, c)]);
            out.push(if r == c { g } else { 2.0 * g });
        }
        Ok(DVector::from_vec(out))
    }

    fn sample(&self, theta: &DVector<f64>, n: usize, rng: &mut dyn rand::RngCore) -> Result<Vec<f64>> {
        let (m, _, chol) = self.factor(theta)?;
        let l = chol.l();
        let d = self.dim;
        let mut out = Vec::with_capacity(n * d);
        let mut z = DVector::zeros(d);
        for _ in 0..n {
            for k in 0..d {
                z[k] = rng.sample(StandardNormal);
            }
            out.extend((&m + &l * &z).iter());
        }
        Ok(out)
    }

    fn fisher_analytic(&self, theta: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        Some(self.factor(theta).map(|(_, _, chol)| {
            let inv = chol.inverse();
            let d = self.dim;
            let m = self.dim_theta();
            let mut g = DMatrix::zeros(m, m);
            g.view_mut((0, 0), (d, d)).copy_from(&inv);
            let pairs: Vec<(usize, usize)> = self.pairs().collect();
            for (p, &(a, b)) in pairs.iter().enumerate() {
                for (q, &(c, e)) in pairs.iter().enumerate() {
                    let wa = if a == b { 1.0 } else { 2.0 };
                    let wc = if c == e { 1.0 } else { 2.0 };
                    g[(d + p, d + q)] = wa * wc * 0.25 * (inv[(a, c)] * inv[(b, e)] + inv[(a, e)] * inv[(b, c)]);
                }
            }
            g
        }))
    }

    fn grad_e_analytic(&self, theta: &DVector<f64>, objective: &Objective) -> Option<Result<DVector<f64>>> {
        let q = objective.quadratic()?;
        Some(self.moments(theta).map(|(m, _)| {
            let gm = &q.hessian * (&m - &q.minimizer);
            let mut out: Vec<f64> = gm.iter().cloned().collect();
            for (r, c) in self.pairs() {
                let v = 0.5 * q.hessian[(r, c)];
                out.push(if r == c { v } else { 2.0 * v });
            }
            DVector::from_vec(out)
        }))
    }
}

/// Gauss–Legendre nodes and weights on `[lo, hi]`.
pub fn gauss_legendre(n: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let (half, mid) = (0.5 * (hi - lo), 0.5 * (hi + lo));
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            } else {
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
            }
            // p1 = P_n(z), p0 = P_{n-1}(z)
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = mid - half * z;
        nodes[n - 1 - i] = mid + half * z;
        weights[i] = half * w;
        weights[n - 1 - i] = half * w;
    }
    (nodes, weights)
}

/// `ϱ(x; θ) ∝ exp(θ·ψ(x))` on a bounded interval, normalized by
/// Gauss–Legendre quadrature.
#[derive(Debug, Clone)]
pub struct ExponentialFamily {
    psi: BasisSet,
    lo: f64,
    hi: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Quadrature table at a fixed `θ`: normalized weights and `ψ` values.
struct Tilted {
    probs: Vec<f64>,
    psi: Vec<DVector<f64>>,
    mean_psi: DVector<f64>,
    log_z: f64,
}

impl ExponentialFamily {
    pub fn new(psi: BasisSet, lo: f64, hi: f64, n_nodes: usize) -> Result<Self> {
        if psi.dim() != 1 {
            return Err(Error::invalid("psi", "exponential family is one-dimensional"));
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("domain", "need finite lo < hi"));
        }
        if n_nodes < 2 {
            return Err(Error::invalid("n_nodes", "need at least 2 nodes"));
        }
        let (nodes, weights) = gauss_legendre(n_nodes, lo, hi);
        Ok(ExponentialFamily {
            psi,
            lo,
            hi,
            nodes,
            weights,
        })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn psi_at(&self, x: f64) -> DVector<f64> {
        DVector::from_iterator(self.psi.len(), self.psi.functions().iter().map(|f| f.value(&[x])))
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.psi.len() {
            return Err(Error::invalid("theta", "length must equal the number of basis functions"));
        }
        Ok(())
    }

    /// `log Z(θ) = log ∫ exp(θ·ψ)`.
    pub fn log_normalizer(&self, theta: &DVector<f64>) -> Result<f64> {
        Ok(self.tilt(theta)?.log_z)
    }

    fn tilt(&self, theta: &DVector<f64>) -> Result<Tilted> {
        self.check_theta(theta)?;
        let psi: Vec<DVector<f64>> = self.nodes.iter().map(|&x| self.psi_at(x)).collect();
        let expo: Vec<f64> = psi.iter().map(|p| theta.dot(p)).collect();
        let shift = expo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(Error::QuadratureOverflow);
        }
        let raw: Vec<f64> = expo
            .iter()
            .zip(&self.weights)
            .map(|(e, w)| w * (e - shift).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        let log_z = shift + total.ln();
        if !log_z.is_finite() || !(total > 0.0) {
            return Err(Error::QuadratureOverflow);
        }
        let probs: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let mut mean_psi = DVector::zeros(self.psi.len());
        for (p, v) in probs.iter().zip(&psi) {
            mean_psi.axpy(*p, v, 1.0);
        }
        Ok(Tilted {
            probs,
            psi,
            mean_psi,
            log_z,
        })
    }

    /// `∫ f ϱ(·; θ)` by quadrature.
    pub fn expect(&self, theta: &DVector<f64>, f: impl Fn(f64) -> f64) -> Result<f64> {
        let t = self.tilt(theta)?;
        Ok(t.probs.iter().zip(&self.nodes).map(|(p, x)| p * f(*x)).sum())
    }

    /// Density `ϱ(x; θ)`.
    pub fn density(&self, x: f64, theta: &DVector<f64>) -> Result<f64> {
        self.log_density(&[x], theta).map(f64::exp)
    }
}

impl ParametricFamily for ExponentialFamily {
    fn dim_theta(&self) -> usize {
        self.psi.len()
    }

    fn dim_x(&self) -> usize {
        1
    }

    fn log_density(&self, x: &[f64], theta: &DVector<f64>) -> Result<f64> {
        let log_z = self.log_normalizer(theta)?;
        if x[0] < self.lo || x[0] > self.hi {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(theta.dot(&self.psi_at(x[0])) - log_z)
    }

    fn score(&self, x: &[f64], theta: &DVector<f64>) -> Result<DVector<f64>> {
        let t = self.tilt(theta)?;
        Ok(self.psi_at(x[0]) - t.mean_psi)
    }

    /// Inverse-CDF sampling on a uniform grid with linear interpolation.
    fn sample(&self, theta: &DVector<f64>, n: usize, rng: &mut dyn rand::RngCore) -> Result<Vec<f64>> {
        const GRID: usize = 4001;
        let log_z = self.log_normalizer(theta)?;
        let h = (self.hi - self.lo) / (GRID - 1) as f64;
        let dens: Vec<f64> = (0..GRID)
            .map(|i| {
                let x = self.lo + i as f64 * h;
                (theta.dot(&self.psi_at(x)) - log_z).exp()
            })
            .collect();
        let mut cdf = vec![0.0; GRID];
        for i in 1..GRID {
            cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);
        }
        let total = cdf[GRID - 1];
        Ok((0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * total;
                let k = cdf.partition_point(|c| *c < u).clamp(1, GRID - 1);
                let span = cdf[k] - cdf[k - 1];
                let frac = if span > 0.0 { (u - cdf[k - 1]) / span } else { 0.5 };
                self.lo + (k as f64 - 1.0 + frac) * h
            })
            .collect())
    }

    /// `[G]_{lk} = Cov(ψ_l, ψ_k)` under `ϱ(·; θ)`.
    fn fisher_analytic(&self, theta: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        Some(self.tilt(theta).map(|t| {
            let m = self.psi.len();
            let mut g = DMatrix::zeros(m, m);
            for (p, v) in t.probs.iter().zip(&t.psi) {
                let c = v - &t.mean_psi;
                g.ger(*p, &c, &c, 1.0);
            }
            (&g + g.transpose()) * 0.5
        }))
    }

    /// `[∇e]_k = ∫ h (ψ_k − ψ̂_k) ϱ` by quadrature.
    fn grad_e_analytic(&self, theta: &DVector<f64>, objective: &Objective) -> Option<Result<DVector<f64>>> {
        Some(self.tilt(theta).map(|t| {
            let mut out = DVector::zeros(self.psi.len());
            for ((p, v), x) in t.probs.iter().zip(&t.psi).zip(&self.nodes) {
                out.axpy(p * objective.eval(&[*x]), &(v - &t.mean_psi), 1.0);
            }
            out
        }))
    }
}

/// `ψ = (x, x²)`.
pub fn polynomial_psi() -> BasisSet {
    BasisSet::quadratic(1)
}
