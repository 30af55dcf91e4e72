//! 1-D grid references for the posterior flow, plus the importance-sampling
//! baseline.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::objective::Objective;

/// Default truncated domain and resolution.
pub const DEFAULT_X_MIN: f64 = -8.0;
pub const DEFAULT_X_MAX: f64 = 8.0;
pub const DEFAULT_NODES: usize = 4001;

/// A non-negative function on a uniform grid over `[x_min, x_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    x_min: f64,
    x_max: f64,
    values: Vec<f64>,
}

impl GridDensity {
    /// Tabulates `f` and normalizes it to unit trapezoid mass.
    pub fn from_fn(x_min: f64, x_max: f64, n_nodes: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if n_nodes < 3 {
            return Err(Error::invalid("n_nodes", "need at least 3 nodes"));
        }
        if !(x_max > x_min) {
            return Err(Error::invalid("x_max", "must exceed x_min"));
        }
        let h = (x_max - x_min) / (n_nodes - 1) as f64;
        let values = (0..n_nodes).map(|i| f(x_min + i as f64 * h)).collect();
        GridDensity::from_values(x_min, x_max, values)
    }

    pub fn from_values(x_min: f64, x_max: f64, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("values", "density values must be finite and non-negative"));
        }
        let mut g = GridDensity { x_min, x_max, values };
        g.normalize()?;
        Ok(g)
    }

    /// `N(mean, var)` on the default domain.
    pub fn gaussian(mean: f64, var: f64) -> Result<Self> {
        Self::gaussian_on(mean, var, DEFAULT_X_MIN, DEFAULT_X_MAX, DEFAULT_NODES)
    }

    pub fn gaussian_on(mean: f64, var: f64, x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::invalid("var", "must be positive"));
        }
        Self::from_fn(x_min, x_max, n, |x| (-(x - mean).powi(2) / (2.0 * var)).exp())
    }

    /// Equal-or-weighted mixture of 1-D Gaussians `(weight, mean, var)`.
    pub fn mixture_on(components: &[(f64, f64, f64)], x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        Self::from_fn(x_min, x_max, n, |x| {
            components
                .iter()
                .map(|(w, m, v)| w * (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt())
                .sum()
        })
    }

    fn normalize(&mut self) -> Result<()> {
        let mass = self.trapezoid(&self.values);
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::invalid("values", "density has no mass"));
        }
        self.values.iter_mut().for_each(|v| *v /= mass);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn spacing(&self) -> f64 {
        (self.x_max - self.x_min) / (self.len() - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Trapezoid integral of grid values `f` over the domain.
    pub fn trapezoid(&self, f: &[f64]) -> f64 {
        let n = f.len();
        let inner: f64 = f[1..n - 1].iter().sum();
        self.spacing() * (inner + 0.5 * (f[0] + f[n - 1]))
    }

    /// `∫ f ρ dx` by the trapezoid rule.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        let fv: Vec<f64> = (0..self.len()).map(|i| f(self.node(i)) * self.values[i]).collect();
        self.trapezoid(&fv)
    }

    pub fn mean(&self) -> f64 {
        self.expect(|x| x)
    }

    /// Cumulative distribution at the nodes.
    pub fn cdf(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut out = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.values.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            out.push(acc);
        }
        out
    }

    /// CDF at an arbitrary point by linear interpolation.
    pub fn cdf_at(&self, cdf: &[f64], x: f64) -> f64 {
        if x <= self.x_min {
            return 0.0;
        }
        if x >= self.x_max {
            return 1.0;
        }
        let s = (x - self.x_min) / self.spacing();
        let i = (s.floor() as usize).min(self.len() - 2);
        let frac = s - i as f64;
        cdf[i] + frac * (cdf[i + 1] - cdf[i])
    }

    /// Kolmogorov–Smirnov distance between this density and the empirical
    /// distribution of `samples`.
    pub fn ks_distance(&self, samples: &[f64]) -> f64 {
        let cdf = self.cdf();
        let mut xs = samples.to_vec();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(k, &x)| {
                let f = self.cdf_at(&cdf, x);
                (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    fn objective_values(&self, objective: &Objective) -> Vec<f64> {
        (0..self.len()).map(|i| objective.eval(&[self.node(i)])).collect()
    }

    /// Values multiplied by `exp(log_weights)` with a max-shift, renormalized.
    fn reweight(&self, log_weights: &[f64]) -> GridDensity {
        let logs: Vec<f64> = self
            .values
            .iter()
            .zip(log_weights)
            .map(|(p, lw)| if *p > 0.0 { p.ln() + lw } else { f64::NEG_INFINITY })
            .collect();
        let shift = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let values = logs.iter().map(|l| (l - shift).exp()).collect();
        GridDensity::from_values(self.x_min, self.x_max, values).expect("reweighted density keeps its mode")
    }
}

/// `p*(x, t) ∝ p₀*(x) exp(−βh(x)t)`.
pub fn posterior_exact(prior: &GridDensity, objective: &Objective, beta: f64, t: f64) -> Result<GridDensity> {
    if !(t >= 0.0) {
        return Err(Error::invalid("t", "must be non-negative"));
    }
    if t == 0.0 {
        return Ok(prior.clone());
    }
    let lw: Vec<f64> = prior.objective_values(objective).iter().map(|h| -beta * h * t).collect();
    Ok(prior.reweight(&lw))
}

/// One Bayes update `ρ ← ρ exp(−βh dt) / Z`.
pub fn bayes_recursion_step(rho: &GridDensity, objective: &Objective, beta: f64, dt: f64) -> Result<GridDensity> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    posterior_exact(rho, objective, beta, dt)
}

/// `ĥ = ∫ h ρ / ∫ ρ`.
pub fn grid_hhat(rho: &GridDensity, hv: &[f64]) -> f64 {
    let hr: Vec<f64> = hv.iter().zip(rho.values()).map(|(h, p)| h * p).collect();
    rho.trapezoid(&hr) / rho.trapezoid(rho.values())
}

/// Right-hand side of the replicator PDE, `−β (h − ĥ) ρ`.
pub fn replicator_rhs(rho: &GridDensity, objective: &Objective, beta: f64) -> Vec<f64> {
    let hv = rho.objective_values(objective);
    replicator_rhs_values(rho.values(), rho, &hv, beta)
}

fn replicator_rhs_values(values: &[f64], grid: &GridDensity, hv: &[f64], beta: f64) -> Vec<f64> {
    let hr: Vec<f64> = hv.iter().zip(values).map(|(h, p)| h * p).collect();
    let hhat = grid.trapezoid(&hr) / grid.trapezoid(values);
    hv.iter().zip(values).map(|(h, p)| -beta * (h - hhat) * p).collect()
}

/// Time integrators for the replicator PDE on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Rk4,
}

/// Integrates the replicator PDE from `rho` over `[0, t]` with step `dt`.
pub fn integrate_replicator(
    rho: &GridDensity,
    objective: &Objective,
    beta: f64,
    t: f64,
    dt: f64,
    scheme: Scheme,
) -> Result<GridDensity> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let hv = rho.objective_values(objective);
    let steps = (t / dt).round() as usize;
    let mut p = rho.values().to_vec();
    let axpy = |p: &[f64], k: &[f64], s: f64| -> Vec<f64> { p.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    for _ in 0..steps {
        match scheme {
            Scheme::Euler => {
                let k = replicator_rhs_values(&p, rho, &hv, beta);
                p = axpy(&p, &k, dt);
            }
            Scheme::Rk4 => {
                let k1 = replicator_rhs_values(&p, rho, &hv, beta);
                let k2 = replicator_rhs_values(&axpy(&p, &k1, 0.5 * dt), rho, &hv, beta);
                let k3 = replicator_rhs_values(&axpy(&p, &k2, 0.5 * dt), rho, &hv, beta);
                let k4 = replicator_rhs_values(&axpy(&p, &k3, dt), rho, &hv, beta);
                for i in 0..p.len() {
                    p[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        // Euler can undershoot in the far tails; clamp tiny negatives.
        p.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Ok(GridDensity {
        x_min: rho.x_min,
        x_max: rho.x_max,
        values: p,
    })
}

/// Potential and control from the grid Poisson equation.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoisson {
    /// `φ` at the nodes, with `∫ φ ρ = 0`.
    pub phi: Vec<f64>,
    /// `φ'` at the nodes.
    pub grad_phi: Vec<f64>,
    /// `u = −β φ'`.
    pub u: Vec<f64>,
}

/// Solves `−(ρφ')' = (h − ĥ)ρ` on the grid with zero flux at both ends.
///
/// The flux `ρφ'` is the running integral of `−(h − ĥ)ρ`, accumulated from
/// the left up to the mode of `ρ` and from the right beyond it, so that the
/// division by `ρ` in the tails does not amplify cancellation error.
pub fn poisson_grid_solve(rho: &GridDensity, objective: &Objective, beta: f64) -> Result<GridPoisson> {
    let hv = rho.objective_values(objective);
    poisson_grid_solve_values(rho, &hv, beta)
}

pub fn poisson_grid_solve_values(rho: &GridDensity, hv: &[f64], beta: f64) -> Result<GridPoisson> {
    let n = rho.len();
    let p = rho.values();
    if let Some(node) = (1..n - 1).find(|&i| !(p[i] > 0.0)) {
        return Err(Error::SingularSystem { node });
    }
    let hhat = grid_hhat(rho, hv);
    let src: Vec<f64> = hv.iter().zip(p).map(|(h, r)| (h - hhat) * r).collect();
    let h = rho.spacing();
    let mode = p
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(n / 2);

    let mut flux = vec![0.0; n];
    let mut acc = 0.0;
    for i in 1..=mode {
        acc += 0.5 * h * (src[i - 1] + src[i]);
        flux[i] = -acc;
    }
    acc = 0.0;
    for i in (mode + 1..n - 1).rev() {
        acc += 0.5 * h * (src[i] + src[i + 1]);
        flux[i] = acc;
    }
    let grad_phi: Vec<f64> = flux
        .iter()
        .zip(p)
        .map(|(f, r)| if *r > 0.0 { f / r } else { 0.0 })
        .collect();

    let mut phi = vec![0.0; n];
    for i in 1..n {
        phi[i] = phi[i - 1] + 0.5 * h * (grad_phi[i - 1] + grad_phi[i]);
    }
    let pr: Vec<f64> = phi.iter().zip(p).map(|(a, b)| a * b).collect();
    let mean = rho.trapezoid(&pr);
    phi.iter_mut().for_each(|v| *v -= mean);
    let u = grad_phi.iter().map(|g| -beta * g).collect();
    Ok(GridPoisson { phi, grad_phi, u })
}

/// Weighted particle set; weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble {
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
    pub dim: usize,
}

impl WeightedEnsemble {
    /// Equally weighted particles.
    pub fn uniform(positions: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || positions.is_empty() || !positions.len().is_multiple_of(dim) {
            return Err(Error::invalid("positions", "length must be a positive multiple of dim"));
        }
        let n = positions.len() / dim;
        Ok(WeightedEnsemble {
            positions,
            weights: vec![1.0 / n as f64; n],
            dim,
        })
    }

    pub fn count(&self) -> usize {
        self.weights.len()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    /// `Σ w^i X^i`.
    pub fn weighted_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (i, w) in self.weights.iter().enumerate() {
            for (mk, xk) in m.iter_mut().zip(self.particle(i)) {
                *mk += w * xk;
            }
        }
        m
    }
}

/// Importance weights `w^i ∝ w_prev^i exp(−βh(X^i)dt)`, normalized with a
/// max-shift.
pub fn importance_weights(we: &WeightedEnsemble, objective: &Objective, beta: f64, dt: f64) -> Vec<f64> {
    let logs: Vec<f64> = (0..we.count())
        .map(|i| we.weights[i].ln() - beta * objective.eval(we.particle(i)) * dt)
        .collect();
    let shift = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logs.iter().map(|l| (l - shift).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

/// One importance-sampling/multinomial-resampling step.
pub fn sisr_step<R: Rng + ?Sized>(
    we: &WeightedEnsemble,
    objective: &Objective,
    beta: f64,
    dt: f64,
    rng: &mut R,
) -> Result<WeightedEnsemble> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let w = importance_weights(we, objective, beta, dt);
    let picker = WeightedIndex::new(&w).map_err(|e| Error::invalid("weights", e.to_string()))?;
    let n = we.count();
    let mut positions = Vec::with_capacity(we.positions.len());
    for _ in 0..n {
        positions.extend_from_slice(we.particle(picker.sample(rng)));
    }
    WeightedEnsemble::uniform(positions, we.dim)
}
