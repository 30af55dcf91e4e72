//! Euler time-stepping of the controlled particle system, the
//! gradient-descent and importance-sampling baselines, and Monte-Carlo
//! experiment drivers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{empirical_cov, empirical_mean, h_stats, Ensemble, GainSamples, GaussianMoments};
use crate::error::{Error, Result};
use crate::gain::affine::{affine_gain, DEFAULT_EPS_PD};
use crate::gain::galerkin::{galerkin_gain, hermite_basis, BasisSet};
use crate::gain::kernel::{self, build_operator, fixed_point, kernel_gain};
use crate::objective::Objective;
use crate::oracle::posterior::{sisr_step, GridDensity, WeightedEnsemble, DEFAULT_NODES, DEFAULT_X_MAX, DEFAULT_X_MIN};
use crate::oracle::qg::QgOracle;
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMethod {
    Affine,
    Galerkin,
    Kernel,
    GradientDescent,
    Sisr,
}

impl GainMethod {
    pub fn name(self) -> &'static str {
        match self {
            GainMethod::Affine => "affine",
            GainMethod::Galerkin => "galerkin",
            GainMethod::Kernel => "kernel",
            GainMethod::GradientDescent => "gradient_descent",
            GainMethod::Sisr => "sisr",
        }
    }

    pub const CONTROLLED: [GainMethod; 3] = [GainMethod::Affine, GainMethod::Galerkin, GainMethod::Kernel];
}

/// Galerkin basis selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// Fourier modes for the 1-D double well, quadratic polynomials otherwise.
    Auto,
    Linear,
    Quadratic,
    Fourier,
    /// `{∂h/∂x_k}` plus the linear functions; needs the gradient of `h`.
    Objective,
    /// Normalized Hermite polynomials of the current empirical Gaussian (1-D).
    Hermite,
}

/// Backend parameters; unused entries are ignored by other backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodParams {
    /// Kernel bandwidth `ε`.
    pub epsilon: f64,
    pub max_sweeps: usize,
    pub residual_tol: f64,
    pub basis: BasisKind,
    pub fourier_period: f64,
    pub hermite_order: usize,
    /// Tikhonov ridge on the Galerkin matrix.
    pub ridge: f64,
    /// Steps with some `|Δt·u^i| > clip_threshold` are flagged.
    pub clip_threshold: f64,
    /// Rescale flagged moves to length `clip_threshold` instead of only flagging.
    pub hard_clip: bool,
    /// The affine backend stops once `tr Σ^(N)` drops below this value.
    pub trace_stop: f64,
    pub eps_pd: f64,
    /// Record particle positions every this many steps (and at the end).
    pub snapshot_every: Option<usize>,
}

impl Default for MethodParams {
    fn default() -> Self {
        MethodParams {
            epsilon: kernel::DEFAULT_EPSILON,
            max_sweeps: kernel::DEFAULT_MAX_SWEEPS,
            residual_tol: kernel::DEFAULT_RESIDUAL_TOL,
            basis: BasisKind::Auto,
            fourier_period: 10.0,
            hermite_order: 3,
            ridge: 0.0,
            clip_threshold: 1.0,
            hard_clip: false,
            trace_stop: 1e-8,
            eps_pd: DEFAULT_EPS_PD,
            snapshot_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub beta: f64,
    pub dt: f64,
    pub t_final: f64,
    pub n_particles: usize,
    #[serde(default)]
    pub seed: u64,
    pub gain_method: GainMethod,
    #[serde(default)]
    pub method_params: MethodParams,
}

impl SimConfig {
    pub fn new(beta: f64, dt: f64, t_final: f64, n_particles: usize, seed: u64, gain_method: GainMethod) -> Self {
        SimConfig {
            beta,
            dt,
            t_final,
            n_particles,
            seed,
            gain_method,
            method_params: MethodParams::default(),
        }
    }

    /// Number of Euler steps, `round(T/Δt)`.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid("beta", "must be finite and non-negative"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid("dt", "must be finite and positive"));
        }
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return Err(Error::invalid("t_final", "must be finite and positive"));
        }
        if !(self.dt < self.t_final) {
            return Err(Error::invalid("dt", "must be smaller than t_final"));
        }
        if self.n_particles < 2 {
            return Err(Error::invalid("n_particles", "need at least 2 particles"));
        }
        let p = &self.method_params;
        if !(p.epsilon > 0.0) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        if p.max_sweeps == 0 {
            return Err(Error::invalid("max_sweeps", "must be at least 1"));
        }
        if !(p.residual_tol >= 0.0) {
            return Err(Error::invalid("residual_tol", "must be non-negative"));
        }
        if !(p.ridge >= 0.0) {
            return Err(Error::invalid("ridge", "must be non-negative"));
        }
        if !(p.clip_threshold > 0.0) {
            return Err(Error::invalid("clip_threshold", "must be positive"));
        }
        if !(p.fourier_period > 0.0) {
            return Err(Error::invalid("fourier_period", "must be positive"));
        }
        if p.snapshot_every == Some(0) {
            return Err(Error::invalid("snapshot_every", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Isotropic variance of the component.
    pub var: f64,
}

/// Sampler for the initial density `p₀`.
#[derive(Debug, Clone, PartialEq)]
pub enum Initializer {
    Gaussian(GaussianMoments),
    GaussianMixture(Vec<MixtureComponent>),
}

impl Initializer {
    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Ok(Initializer::Gaussian(GaussianMoments::new(mean, cov)?))
    }

    pub fn isotropic(dim: usize, mean: f64, var: f64) -> Result<Self> {
        Self::gaussian(DVector::from_element(dim, mean), DMatrix::identity(dim, dim) * var)
    }

    pub fn mixture(components: Vec<MixtureComponent>) -> Result<Self> {
        let init = Initializer::GaussianMixture(components);
        init.validate()?;
        Ok(init)
    }

    /// `½N(−2, 0.6²) + ½N(2, 0.6²)`.
    pub fn double_well_default() -> Self {
        let c = |m: f64| MixtureComponent {
            weight: 0.5,
            mean: vec![m],
            var: 0.36,
        };
        Initializer::GaussianMixture(vec![c(-2.0), c(2.0)])
    }

    pub fn dim(&self) -> usize {
        match self {
            Initializer::Gaussian(g) => g.dim(),
            Initializer::GaussianMixture(c) => c.first().map_or(0, |c| c.mean.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Initializer::Gaussian(g) => {
                GaussianMoments::new(g.mean.clone(), g.cov.clone())?;
            }
            Initializer::GaussianMixture(cs) => {
                if cs.is_empty() {
                    return Err(Error::invalid("components", "mixture needs at least one component"));
                }
                let d = cs[0].mean.len();
                if d == 0 || cs.iter().any(|c| c.mean.len() != d) {
                    return Err(Error::invalid("components", "component means must share a positive dimension"));
                }
                if cs.iter().any(|c| !(c.weight >= 0.0)) {
                    return Err(Error::invalid("components", "weights must be non-negative"));
                }
                let total: f64 = cs.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid("components", format!("weights sum to {total}, not 1")));
                }
                if cs.iter().any(|c| !(c.var >= 0.0)) {
                    return Err(Error::invalid("components", "variances must be non-negative"));
                }
            }
        }
        Ok(())
    }

    /// `n` draws, row-major; particle `i` uses its own stream.
    pub fn sample(&self, n: usize, seed: u64, replicate: u64) -> Result<Vec<f64>> {
        self.validate()?;
        let d = self.dim();
        let draw = |i: usize, out: &mut [f64], root: &DMatrix<f64>, mean: &[f64]| {
            let mut rng = stream(seed, replicate, Purpose::Init, i as u64);
            let z: DVector<f64> = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
            let x = root * z;
            for k in 0..d {
                out[k] = mean[k] + x[k];
            }
        };
        let mut out = vec![0.0; n * d];
        match self {
            Initializer::Gaussian(g) => {
                let root = psd_sqrt(&g.cov);
                let mean: Vec<f64> = g.mean.iter().cloned().collect();
                for (i, x) in out.chunks_exact_mut(d).enumerate() {
                    draw(i, x, &root, &mean);
                }
            }
            Initializer::GaussianMixture(cs) => {
                let roots: Vec<DMatrix<f64>> = cs
                    .iter()
                    .map(|c| DMatrix::identity(d, d) * c.var.sqrt())
                    .collect();
                for (i, x) in out.chunks_exact_mut(d).enumerate() {
                    // The component label comes from a stream disjoint from the
                    // Gaussian draw of the same particle.
                    let mut pick = stream(seed, replicate, Purpose::Init, (n + i) as u64);
                    let u: f64 = pick.random();
                    let mut acc = 0.0;
                    let mut k = cs.len() - 1;
                    for (j, c) in cs.iter().enumerate() {
                        acc += c.weight;
                        if u < acc {
                            k = j;
                            break;
                        }
                    }
                    draw(i, x, &roots[k], &cs[k].mean);
                }
            }
        }
        Ok(out)
    }

    /// The 1-D initial density on a grid, for the posterior oracle.
    pub fn grid_density(&self) -> Result<GridDensity> {
        if self.dim() != 1 {
            return Err(Error::OracleUnavailable("grid posterior needs d = 1".into()));
        }
        match self {
            Initializer::Gaussian(g) => GridDensity::gaussian(g.mean[0], g.cov[(0, 0)]),
            Initializer::GaussianMixture(cs) => {
                let comps: Vec<(f64, f64, f64)> = cs.iter().map(|c| (c.weight, c.mean[0], c.var)).collect();
                GridDensity::mixture_on(&comps, DEFAULT_X_MIN, DEFAULT_X_MAX, DEFAULT_NODES)
            }
        }
    }
}

/// Symmetric square root of a PSD matrix.
fn psd_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = cov.clone().symmetric_eigen();
    let s = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub step: usize,
    /// Row-major `N × d`.
    pub positions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub dim: usize,
    pub times: Vec<f64>,
    pub hhat: Vec<f64>,
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
    pub cov_trace: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    /// Steps whose largest move exceeded `clip_threshold`.
    pub flagged_steps: Vec<usize>,
    /// Set when the affine backend stopped on a collapsed covariance.
    pub stopped_early: bool,
    pub final_positions: Vec<f64>,
}

impl TrajectoryLog {
    fn new(dim: usize) -> Self {
        TrajectoryLog {
            dim,
            times: Vec::new(),
            hhat: Vec::new(),
            mean: Vec::new(),
            cov: Vec::new(),
            cov_trace: Vec::new(),
            snapshots: Vec::new(),
            flagged_steps: Vec::new(),
            stopped_early: false,
            final_positions: Vec::new(),
        }
    }

    fn record(&mut self, t: f64, ens: &Ensemble) {
        let cov = empirical_cov(ens);
        self.times.push(t);
        self.hhat.push(h_stats(ens).0);
        self.mean.push(empirical_mean(ens));
        self.cov_trace.push(cov.trace());
        self.cov.push(cov);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_mean(&self) -> &DVector<f64> {
        self.mean.last().expect("log has the initial record")
    }
}

/// Per-run state of a gain backend.
enum Backend {
    Affine,
    Galerkin(Option<BasisSet>),
    Kernel(Vec<f64>),
    GradientDescent,
    Sisr,
}

fn resolve_basis(params: &MethodParams, objective: &Objective, dim: usize) -> Result<Option<BasisSet>> {
    Ok(Some(match params.basis {
        BasisKind::Auto if dim == 1 && objective.name() == "double_well" => BasisSet::fourier(params.fourier_period)?,
        BasisKind::Auto | BasisKind::Quadratic => BasisSet::quadratic(dim),
        BasisKind::Linear => BasisSet::linear(dim),
        BasisKind::Fourier => {
            if dim != 1 {
                return Err(Error::invalid("basis", "the Fourier basis is one-dimensional"));
            }
            BasisSet::fourier(params.fourier_period)?
        }
        BasisKind::Objective => BasisSet::objective(objective, dim)?,
        BasisKind::Hermite => {
            if dim != 1 {
                return Err(Error::invalid("basis", "the Hermite basis is one-dimensional"));
            }
            return Ok(None);
        }
    }))
}

fn controls(
    backend: &mut Backend,
    ens: &Ensemble,
    config: &SimConfig,
    objective: &Objective,
) -> Result<GainSamples> {
    let p = &config.method_params;
    let beta = config.beta;
    match backend {
        Backend::Affine => Ok(affine_gain(ens, beta, p.eps_pd)?.0),
        Backend::Galerkin(basis) => match basis {
            Some(b) => Ok(galerkin_gain(ens, b, beta, p.ridge)?.0),
            None => {
                let moments = GaussianMoments::new(empirical_mean(ens), empirical_cov(ens))?;
                let b = hermite_basis(p.hermite_order, &moments)?;
                Ok(galerkin_gain(ens, &b, beta, p.ridge)?.0)
            }
        },
        Backend::Kernel(phi_prev) => {
            let (_, hc) = h_stats(ens);
            let op = build_operator(ens, p.epsilon)?;
            let pv = fixed_point(&op, &hc, p.epsilon, p.max_sweeps, p.residual_tol, phi_prev)?;
            let u = kernel_gain(&op, &pv, &hc, beta, p.epsilon);
            *phi_prev = pv.phi;
            Ok(u)
        }
        Backend::GradientDescent => {
            let d = ens.dim();
            let mut u = GainSamples::zeros(ens.count(), d);
            for (x, ui) in ens.particles().zip(u.as_mut_slice().chunks_exact_mut(d)) {
                objective.grad(x, ui);
                ui.iter_mut().for_each(|v| *v = -*v);
            }
            Ok(u)
        }
        Backend::Sisr => unreachable!("importance sampling moves particles by resampling"),
    }
}

/// Simulates the particle system from a sampled initial ensemble.
pub fn run(config: &SimConfig, objective: &Objective, init: &Initializer) -> Result<TrajectoryLog> {
    run_replicate(config, objective, init, 0)
}

/// Same as [`run`] with the initial draw taken from replicate stream `replicate`.
pub fn run_replicate(
    config: &SimConfig,
    objective: &Objective,
    init: &Initializer,
    replicate: u64,
) -> Result<TrajectoryLog> {
    config.validate()?;
    let d = init.dim();
    if let Some(od) = objective.dim() {
        if od != d {
            return Err(Error::invalid("init", format!("dimension {d} does not match objective dimension {od}")));
        }
    }
    let positions = init.sample(config.n_particles, config.seed, replicate)?;
    let ens = Ensemble::new(positions, d, objective)?;
    run_from_ensemble(config, objective, ens, replicate)
}

/// Simulates the particle system from a given initial ensemble.
pub fn run_from_ensemble(
    config: &SimConfig,
    objective: &Objective,
    mut ens: Ensemble,
    replicate: u64,
) -> Result<TrajectoryLog> {
    config.validate()?;
    let p = &config.method_params;
    let d = ens.dim();
    let n = ens.count();
    let mut backend = match config.gain_method {
        GainMethod::Affine => Backend::Affine,
        GainMethod::Galerkin => Backend::Galerkin(resolve_basis(p, objective, d)?),
        GainMethod::Kernel => Backend::Kernel(vec![0.0; n]),
        GainMethod::GradientDescent => {
            if !objective.has_grad() {
                return Err(Error::invalid("gain_method", "gradient_descent needs an objective gradient"));
            }
            Backend::GradientDescent
        }
        GainMethod::Sisr => Backend::Sisr,
    };
    let steps = config.steps();
    let dt = config.dt;
    let mut log = TrajectoryLog::new(d);
    log.record(0.0, &ens);
    let snap = |log: &mut TrajectoryLog, step: usize, ens: &Ensemble| {
        log.snapshots.push(Snapshot {
            t: step as f64 * dt,
            step,
            positions: ens.positions().to_vec(),
        });
    };
    if p.snapshot_every.is_some() {
        snap(&mut log, 0, &ens);
    }
    let wrap = |step: usize, e: Error| {
        if e.is_validation() {
            e
        } else {
            Error::Backend {
                backend: config.gain_method.name(),
                step,
                source: Box::new(e),
            }
        }
    };

    for step in 0..steps {
        if matches!(backend, Backend::Sisr) {
            let we = WeightedEnsemble::uniform(ens.positions().to_vec(), d)?;
            let mut rng = stream(config.seed, replicate, Purpose::Resample, step as u64);
            let next = sisr_step(&we, objective, config.beta, dt, &mut rng).map_err(|e| wrap(step, e))?;
            ens.set_positions(next.positions, objective);
        } else {
            if matches!(backend, Backend::Affine) && empirical_cov(&ens).trace() < p.trace_stop {
                log.stopped_early = true;
                break;
            }
            let mut u = controls(&mut backend, &ens, config, objective).map_err(|e| wrap(step, e))?;
            let limit = p.clip_threshold / dt;
            let mut flagged = false;
            for ui in u.as_mut_slice().chunks_exact_mut(d) {
                let norm = ui.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > limit {
                    flagged = true;
                    if p.hard_clip {
                        ui.iter_mut().for_each(|v| *v *= limit / norm);
                    }
                }
            }
            if flagged {
                log.flagged_steps.push(step);
            }
            ens.advance(&u, dt, objective)
                .map_err(|particle| Error::NonFinitePosition { step, particle })?;
        }
        log.record((step + 1) as f64 * dt, &ens);
        if let Some(every) = p.snapshot_every {
            if (step + 1) % every == 0 || step + 1 == steps {
                snap(&mut log, step + 1, &ens);
            }
        }
    }
    if log.stopped_early && p.snapshot_every.is_some() {
        let step = log.len() - 1;
        if log.snapshots.last().map(|s| s.step) != Some(step) {
            snap(&mut log, step, &ens);
        }
    }
    log.final_positions = ens.positions().to_vec();
    Ok(log)
}

/// Runs every controlled backend on one configuration.
pub fn run_backends(
    config: &SimConfig,
    objective: &Objective,
    init: &Initializer,
) -> Result<Vec<(GainMethod, TrajectoryLog)>> {
    GainMethod::CONTROLLED
        .par_iter()
        .map(|&m| {
            let mut c = config.clone();
            c.gain_method = m;
            run(&c, objective, init).map(|log| (m, log))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// Particle counts.
    N,
    /// Dimensions.
    D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub kind: GridKind,
    pub grid: Vec<usize>,
    pub mc_var: Vec<f64>,
    pub replicates: usize,
}

impl McReport {
    /// Least-squares slope of `log mc_var` against `log grid`.
    pub fn log_log_slope(&self) -> f64 {
        let xs: Vec<f64> = self.grid.iter().map(|&v| (v as f64).ln()).collect();
        let ys: Vec<f64> = self.mc_var.iter().map(|v| v.ln()).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    }
}

/// `(1/J) Σ_j |m_j − m̄|²`.
pub fn mc_variance(finals: &[DVector<f64>]) -> f64 {
    let j = finals.len() as f64;
    let mut mean = DVector::zeros(finals[0].len());
    for m in finals {
        mean += m;
    }
    mean /= j;
    finals.iter().map(|m| (m - &mean).norm_squared()).sum::<f64>() / j
}

/// Final empirical means of independent runs, one per replicate index.
pub fn final_means(
    config: &SimConfig,
    objective: &Objective,
    init: &Initializer,
    replicates: &[u64],
) -> Result<Vec<DVector<f64>>> {
    replicates
        .par_iter()
        .map(|&r| run_replicate(config, objective, init, r).map(|log| log.final_mean().clone()))
        .collect()
}

fn check_replicates(replicates: usize) -> Result<()> {
    if replicates < 2 {
        return Err(Error::invalid("replicates", "Monte-Carlo variance needs at least 2 replicates"));
    }
    Ok(())
}

/// Monte-Carlo variance of `m_T^(N)` over a grid of particle counts.
pub fn mc_variance_study(
    config: &SimConfig,
    objective: &Objective,
    init: &Initializer,
    n_grid: &[usize],
    replicates: usize,
) -> Result<McReport> {
    check_replicates(replicates)?;
    let reps: Vec<u64> = (0..replicates as u64).collect();
    let mc_var = n_grid
        .iter()
        .map(|&n| {
            let mut c = config.clone();
            c.n_particles = n;
            final_means(&c, objective, init, &reps).map(|f| mc_variance(&f))
        })
        .collect::<Result<_>>()?;
    Ok(McReport {
        kind: GridKind::N,
        grid: n_grid.to_vec(),
        mc_var,
        replicates,
    })
}

/// Monte-Carlo variance of `m_T^(N)` over a grid of dimensions; `problem(d)`
/// builds the objective and initial density in dimension `d`.
pub fn mc_variance_study_dims<F>(config: &SimConfig, d_grid: &[usize], replicates: usize, problem: F) -> Result<McReport>
where
    F: Fn(usize) -> Result<(Objective, Initializer)>,
{
    check_replicates(replicates)?;
    let reps: Vec<u64> = (0..replicates as u64).collect();
    let mc_var = d_grid
        .iter()
        .map(|&d| {
            let (obj, init) = problem(d)?;
            final_means(config, &obj, &init, &reps).map(|f| mc_variance(&f))
        })
        .collect::<Result<_>>()?;
    Ok(McReport {
        kind: GridKind::D,
        grid: d_grid.to_vec(),
        mc_var,
        replicates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentErrors {
    pub times: Vec<f64>,
    /// `|m_t^(N) − m_t|`.
    pub mean_err: Vec<f64>,
    /// Frobenius norm of `Σ_t^(N) − Σ_t`.
    pub cov_err: Vec<f64>,
}

impl MomentErrors {
    pub fn max_mean_err(&self) -> f64 {
        self.mean_err.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionErrors {
    pub times: Vec<f64>,
    /// Kolmogorov–Smirnov distance to the exact posterior.
    pub ks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub moments: Option<MomentErrors>,
    pub distribution: Option<DistributionErrors>,
}

/// Errors of a trajectory against whichever exact references apply: the
/// closed-form moments (quadratic `h`, Gaussian `p₀`) and the 1-D grid
/// posterior at each snapshot.
pub fn compare_to_oracle(
    log: &TrajectoryLog,
    config: &SimConfig,
    objective: &Objective,
    init: &Initializer,
) -> Result<OracleReport> {
    let moments = match (objective.quadratic(), init) {
        (Some(q), Initializer::Gaussian(prior)) => {
            let oracle = QgOracle::new(prior.clone(), q, config.beta)?;
            let mut out = MomentErrors {
                times: log.times.clone(),
                mean_err: Vec::with_capacity(log.len()),
                cov_err: Vec::with_capacity(log.len()),
            };
            for ((t, m), s) in log.times.iter().zip(&log.mean).zip(&log.cov) {
                let exact = oracle.at(*t)?;
                out.mean_err.push((m - &exact.mean).norm());
                out.cov_err.push((s - &exact.cov).norm());
            }
            Some(out)
        }
        _ => None,
    };
    let distribution = if log.dim == 1 {
        let prior = init.grid_density()?;
        let snaps: Vec<(f64, &[f64])> = if log.snapshots.is_empty() {
            vec![(*log.times.last().unwrap(), &log.final_positions[..])]
        } else {
            log.snapshots.iter().map(|s| (s.t, &s.positions[..])).collect()
        };
        let mut out = DistributionErrors {
            times: Vec::new(),
            ks: Vec::new(),
        };
        for (t, xs) in snaps {
            let post = crate::oracle::posterior::posterior_exact(&prior, objective, config.beta, t)?;
            out.times.push(t);
            out.ks.push(post.ks_distance(xs));
        }
        Some(out)
    } else {
        None
    };
    if moments.is_none() && distribution.is_none() {
        return Err(Error::OracleUnavailable(format!(
            "objective `{}` is not quadratic with a Gaussian prior and d = {} > 1",
            objective.name(),
            log.dim
        )));
    }
    Ok(OracleReport { moments, distribution })
}
