//! Executable acceptance criteria. Each criterion runs independently under a
//! fixed seed and reports a measured value against a pinned threshold.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::ensemble::{h_stats, Ensemble, GaussianMoments};
use crate::error::Result;
use crate::gain::affine::{affine_gain, affine_gain_with, solve_lyapunov, DEFAULT_EPS_PD};
use crate::gain::galerkin::{galerkin_gain, hermite_basis, BasisSet};
use crate::gain::kernel::{build_operator, fixed_point, kernel_gain};
use crate::objective::{double_well, isotropic_quadratic, quadratic, Objective};
use crate::oracle::posterior::{integrate_replicator, poisson_grid_solve, posterior_exact, GridDensity, Scheme};
use crate::oracle::qg::{qg_euler, qg_exact, qg_moment_rhs_mc, qg_ode_rhs};
use crate::parametric::{
    natural_grad_run, natural_grad_step, polynomial_psi, ExponentialFamily, GaussianFamily, NaturalGradState, Source,
    StepEstimator,
};
use crate::rng::{stream, Purpose};
use crate::sim::{compare_to_oracle, mc_variance_study, mc_variance_study_dims, run, GainMethod, Initializer, SimConfig};

pub const DEFAULT_SEED: u64 = 2024;

/// Criteria that fail for structural reasons and are reported red:
///
/// * 7: at `ε = 0.5` the kernel gain for `N(0, 1)`, `h = ½x²` converges to
///   `u = −0.4057x` as `N → ∞` (see [`kernel_population_slope`]), a relative
///   RMS error of 18.9% against `u = −x/2`.
/// * 10: the `t = 1` double-well posterior puts 88% of its mass in a mode of
///   width 0.17. The kernel flow moves the mass but smooths the mode at large
///   `ε` and cannot move it across the barrier at small `ε`; the KS distance
///   stays above 0.29 for every `ε` in `[0.01, 1]`.
pub const INFEASIBLE: [u8; 2] = [7, 10];

/// Limit `N → ∞` of the kernel gain slope for `ρ = N(0, 1)`, `h = ½x²`.
///
/// All kernels are Gaussian: `T(x, ·) = N(r x, v)`, the fixed point is
/// `Φ = c x² + const` and `u = −(c + ε/2) r v x / ε`.
pub fn kernel_population_slope(eps: f64) -> f64 {
    let a = 1.0 - 1.0 / (2.0 * (1.0 + 2.0 * eps));
    let precision = 1.0 / (2.0 * eps) + a;
    let r = 1.0 / (2.0 * eps) / precision;
    let v = 1.0 / precision;
    let c = 0.5 * eps / (1.0 - r * r);
    -(c + 0.5 * eps) * r * v / eps
}

/// Whole-suite wall-clock budget in seconds.
pub const SUITE_BUDGET_SECS: f64 = 600.0;

pub const TRACKING_MEAN_TOL: f64 = 0.15;
pub const TRACKING_BUDGET_SECS: f64 = 5.0;
pub const SLOPE_RANGE: (f64, f64) = (-1.3, -0.7);
pub const MC_BUDGET_SECS: f64 = 120.0;
pub const MOMENT_EULER_TOL: f64 = 1e-3;
pub const MOMENT_MC_REL_TOL: f64 = 0.03;
pub const TRIANGLE_RMS_TOL: f64 = 0.03;
pub const GALERKIN_AFFINE_TOL: f64 = 1e-8;
pub const KERNEL_RMS_TOL: f64 = 0.15;
pub const ROW_SUM_TOL: f64 = 1e-12;
pub const MONOTONE_SLACK: f64 = 1e-3;
pub const CAPTURE_RADIUS: f64 = 0.5;
pub const CAPTURE_FRACTION: f64 = 0.9;
pub const KS_TOL: f64 = 0.1;
pub const REPLICATOR_TOL: f64 = 1e-4;
pub const NATURAL_GRADIENT_REL_TOL: f64 = 0.02;
pub const EXP_FAMILY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
    pub threshold: String,
    pub runtime_secs: f64,
    pub detail: String,
}

/// Outcome of a criterion body: pass flag, measured value, threshold text, detail.
struct Outcome {
    passed: bool,
    measured: f64,
    threshold: String,
    detail: String,
}

type Body = fn(u64) -> Result<Outcome>;

const CRITERIA: [(u8, &str, Body); 12] = [
    (1, "quadratic_gaussian_tracking", c01_tracking),
    (2, "mc_variance_vs_particles", c02_mc_vs_n),
    (3, "mc_variance_vs_dimension", c03_mc_vs_d),
    (4, "moment_ode_consistency", c04_moment_odes),
    (5, "poisson_solver_triangle", c05_triangle),
    (6, "galerkin_reproduces_affine", c06_galerkin_affine),
    (7, "kernel_gain_accuracy", c07_kernel_accuracy),
    (8, "kernel_monotone_hhat", c08_kernel_monotone),
    (9, "double_well_convergence", c09_double_well),
    (10, "grid_posterior_exactness", c10_posterior),
    (11, "natural_gradient_reductions", c11_natural_gradient),
    (12, "hermite_galerkin_error_bound", c12_spectral_bound),
];

pub fn criterion_ids() -> impl Iterator<Item = (u8, &'static str)> {
    CRITERIA.iter().map(|(id, name, _)| (*id, *name))
}

/// Runs one criterion; numerical errors count as failures.
pub fn run_one(id: u8, seed: u64) -> Option<CriterionResult> {
    let (id, name, body) = *CRITERIA.iter().find(|c| c.0 == id)?;
    let start = Instant::now();
    let outcome = body(seed);
    let runtime_secs = start.elapsed().as_secs_f64();
    Some(match outcome {
        Ok(o) => CriterionResult {
            id,
            name,
            passed: o.passed,
            measured: o.measured,
            threshold: o.threshold,
            runtime_secs,
            detail: o.detail,
        },
        Err(e) => CriterionResult {
            id,
            name,
            passed: false,
            measured: f64::NAN,
            threshold: String::new(),
            runtime_secs,
            detail: format!("error: {e}"),
        },
    })
}

/// Runs every criterion in order.
pub fn run_all(seed: u64) -> Vec<CriterionResult> {
    CRITERIA
        .iter()
        .filter_map(|(id, _, _)| run_one(*id, seed))
        .collect()
}

fn normal_samples(n: usize, mean: f64, sd: f64, seed: u64, replicate: u64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let z: f64 = stream(seed, replicate, Purpose::Init, i as u64).sample(StandardNormal);
            mean + sd * z
        })
        .collect()
}

fn rel_rms(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn scalar_quadratic_setup(seed: u64) -> (SimConfig, Objective, Initializer) {
    (
        SimConfig::new(1.0, 0.01, 5.0, 500, seed, GainMethod::Affine),
        isotropic_quadratic(1, 1.0, 0.0, 0.0).expect("valid quadratic"),
        Initializer::isotropic(1, 1.0, 1.0).expect("valid prior"),
    )
}

fn c01_tracking(seed: u64) -> Result<Outcome> {
    let start = Instant::now();
    let (config, h, init) = scalar_quadratic_setup(seed);
    let log = run(&config, &h, &init)?;
    let report = compare_to_oracle(&log, &config, &h, &init)?;
    let elapsed = start.elapsed().as_secs_f64();
    let err = report.moments.expect("quadratic oracle applies").max_mean_err();
    Ok(Outcome {
        passed: err <= TRACKING_MEAN_TOL && elapsed < TRACKING_BUDGET_SECS,
        measured: err,
        threshold: format!("max_t |m_t^N - m_t| <= {TRACKING_MEAN_TOL}, runtime < {TRACKING_BUDGET_SECS} s"),
        detail: format!("m_T^N = {:.5} (exact 1/6), runtime {elapsed:.2} s", log.final_mean()[0]),
    })
}

fn c02_mc_vs_n(seed: u64) -> Result<Outcome> {
    let start = Instant::now();
    let (config, h, init) = scalar_quadratic_setup(seed);
    let report = mc_variance_study(&config, &h, &init, &[50, 100, 200, 400, 800], 100)?;
    let slope = report.log_log_slope();
    let elapsed = start.elapsed().as_secs_f64();
    Ok(Outcome {
        passed: (SLOPE_RANGE.0..=SLOPE_RANGE.1).contains(&slope) && elapsed < MC_BUDGET_SECS,
        measured: slope,
        threshold: format!("slope in [{}, {}], runtime < {MC_BUDGET_SECS} s", SLOPE_RANGE.0, SLOPE_RANGE.1),
        detail: format!("mc_var = {:?}, runtime {elapsed:.1} s", report.mc_var),
    })
}

fn c03_mc_vs_d(seed: u64) -> Result<Outcome> {
    let start = Instant::now();
    let (config, _, _) = scalar_quadratic_setup(seed);
    let report = mc_variance_study_dims(&config, &[1, 2, 4, 8], 100, |d| {
        Ok((isotropic_quadratic(d, 1.0, 0.0, 0.0)?, Initializer::isotropic(d, 1.0, 1.0)?))
    })?;
    let elapsed = start.elapsed().as_secs_f64();
    let min_ratio = report
        .mc_var
        .windows(2)
        .map(|w| w[1] / w[0])
        .fold(f64::INFINITY, f64::min);
    Ok(Outcome {
        passed: min_ratio > 1.0 && elapsed < MC_BUDGET_SECS,
        measured: min_ratio,
        threshold: format!("successive ratios > 1, runtime < {MC_BUDGET_SECS} s"),
        detail: format!("mc_var = {:?}, runtime {elapsed:.1} s", report.mc_var),
    })
}

fn c04_moment_odes(seed: u64) -> Result<Outcome> {
    let h = isotropic_quadratic(1, 1.0, 0.0, 0.0)?;
    let q = h.quadratic().expect("quadratic");
    let prior = GaussianMoments::scalar(1.0, 1.0)?;
    let euler = qg_euler(&prior, q, 1.0, 1e-4, 5.0);
    let exact = qg_exact(5.0, &prior, q, 1.0)?;
    let euler_err = (&euler.mean - &exact.mean).amax().max((&euler.cov - &exact.cov).amax());

    // Moment right-hand sides from 10^5 samples of a Gaussian that is not the prior.
    let (m, s) = (0.6f64, 0.8f64);
    let ens = Ensemble::new(normal_samples(100_000, m, s.sqrt(), seed, 4), 1, &h)?;
    let (dm_mc, ds_mc) = qg_moment_rhs_mc(&ens, 1.0);
    let (dm, ds) = qg_ode_rhs(&GaussianMoments::scalar(m, s)?, q, 1.0);
    let mc_err = ((dm_mc[0] - dm[0]) / dm[0]).abs().max(((ds_mc[(0, 0)] - ds[(0, 0)]) / ds[(0, 0)]).abs());
    let measured = (euler_err / MOMENT_EULER_TOL).max(mc_err / MOMENT_MC_REL_TOL);
    Ok(Outcome {
        passed: measured <= 1.0,
        measured,
        threshold: format!("Euler error <= {MOMENT_EULER_TOL} and MC relative error <= {MOMENT_MC_REL_TOL} (ratio <= 1)"),
        detail: format!("euler_err = {euler_err:.3e}, mc_rel_err = {mc_err:.4}"),
    })
}

/// Closed-form exact control for Gaussian `ρ = N(m, s)` and
/// `h = ½H(x − x̄)²`: `u = −β(½Hs(x − m) + Hs(m − x̄))`.
fn gaussian_quadratic_control(x: f64, m: f64, s: f64, hess: f64, xbar: f64, beta: f64) -> f64 {
    -beta * (0.5 * hess * s * (x - m) + hess * s * (m - xbar))
}

type LyapunovSolver = dyn Fn(&DMatrix<f64>, &DMatrix<f64>) -> Result<DMatrix<f64>> + Sync;

fn triangle_with(seed: u64, lyapunov: &LyapunovSolver) -> Result<Outcome> {
    let (m, s, hess, xbar, beta) = (0.5, 1.5f64, 2.0, 0.2, 1.0);
    let h = quadratic(DMatrix::from_element(1, 1, hess), DVector::from_element(1, xbar), 0.0)?;
    let rho = GridDensity::gaussian(m, s)?;
    let grid = poisson_grid_solve(&rho, &h, beta)?;

    let ens = Ensemble::new(normal_samples(100_000, m, s.sqrt(), seed, 5), 1, &h)?;
    let (u, _) = affine_gain_with(&ens, beta, lyapunov)?;

    // Grid vs closed form on nodes within four standard deviations.
    let window: Vec<usize> = (0..rho.len())
        .filter(|&i| (rho.node(i) - m).abs() <= 4.0 * s.sqrt())
        .collect();
    let grid_u: Vec<f64> = window.iter().map(|&i| grid.u[i]).collect();
    let closed_nodes: Vec<f64> = window
        .iter()
        .map(|&i| gaussian_quadratic_control(rho.node(i), m, s, hess, xbar, beta))
        .collect();
    // Particles vs closed form and vs the grid (interpolated), at the particles.
    let xs = ens.positions();
    let closed_particles: Vec<f64> = xs
        .iter()
        .map(|&x| gaussian_quadratic_control(x, m, s, hess, xbar, beta))
        .collect();
    let grid_at_particles: Vec<f64> = xs.iter().map(|&x| interpolate(&rho, &grid.u, x)).collect();

    let e_grid_closed = rel_rms(&grid_u, &closed_nodes);
    let e_particle_closed = rel_rms(u.as_slice(), &closed_particles);
    let e_particle_grid = rel_rms(u.as_slice(), &grid_at_particles);
    let worst = e_grid_closed.max(e_particle_closed).max(e_particle_grid);
    Ok(Outcome {
        passed: worst <= TRIANGLE_RMS_TOL,
        measured: worst,
        threshold: format!("pairwise relative RMS <= {TRIANGLE_RMS_TOL}"),
        detail: format!(
            "grid-closed {e_grid_closed:.2e}, affine-closed {e_particle_closed:.2e}, affine-grid {e_particle_grid:.2e}"
        ),
    })
}

fn interpolate(rho: &GridDensity, values: &[f64], x: f64) -> f64 {
    let pos = ((x - rho.x_min()) / rho.spacing()).clamp(0.0, (rho.len() - 1) as f64);
    let k = (pos.floor() as usize).min(rho.len() - 2);
    let frac = pos - k as f64;
    values[k] * (1.0 - frac) + values[k + 1] * frac
}

fn c05_triangle(seed: u64) -> Result<Outcome> {
    triangle_with(seed, &|sigma, c| solve_lyapunov(sigma, c, DEFAULT_EPS_PD))
}

fn c06_galerkin_affine(seed: u64) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for d in 1..=3usize {
        // A non-quadratic objective, so the shared ensemble is generic.
        let h = Objective::new("quartic_mix", Some(d), move |x| {
            x.iter().enumerate().map(|(k, v)| v.powi(4) / 4.0 - (k as f64 + 1.0) * v).sum::<f64>() + x[0] * x[d - 1]
        });
        let xs = normal_samples(400 * d, 0.3, 1.2, seed, 6 + d as u64);
        let ens = Ensemble::new(xs, d, &h)?;
        let (ua, _) = affine_gain(&ens, 1.0, DEFAULT_EPS_PD)?;
        let (ug, _) = galerkin_gain(&ens, &BasisSet::quadratic(d), 1.0, 0.0)?;
        let diff = ua
            .as_slice()
            .iter()
            .zip(ug.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        detail.push(format!("d={d}: {diff:.2e}"));
        worst = worst.max(diff);
    }
    Ok(Outcome {
        passed: worst <= GALERKIN_AFFINE_TOL,
        measured: worst,
        threshold: format!("max |u_affine - u_galerkin| <= {GALERKIN_AFFINE_TOL:e}"),
        detail: detail.join(", "),
    })
}

fn c07_kernel_accuracy(seed: u64) -> Result<Outcome> {
    let eps = 0.5;
    let h = isotropic_quadratic(1, 1.0, 0.0, 0.0)?;
    let ens = Ensemble::new(normal_samples(5000, 0.0, 1.0, seed, 7), 1, &h)?;
    let op = build_operator(&ens, eps)?;
    let row_dev = (0..op.len())
        .map(|i| (op.row(i).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let (_, hc) = h_stats(&ens);
    let pv = fixed_point(&op, &hc, eps, 100, 1e-9, &vec![0.0; op.len()])?;
    let u = kernel_gain(&op, &pv, &hc, 1.0, eps);
    let exact: Vec<f64> = ens.positions().iter().map(|x| -0.5 * x).collect();
    let rms = rel_rms(u.as_slice(), &exact);
    Ok(Outcome {
        passed: rms <= KERNEL_RMS_TOL && row_dev <= ROW_SUM_TOL,
        measured: rms,
        threshold: format!("relative RMS <= {KERNEL_RMS_TOL}, row-sum deviation <= {ROW_SUM_TOL:e}"),
        detail: format!("row-sum deviation {row_dev:.2e}, sweeps {}", pv.iterations_run),
    })
}

fn double_well_config(method: GainMethod, dt: f64, t_final: f64, seed: u64) -> SimConfig {
    SimConfig::new(1.0, dt, t_final, 500, seed, method)
}

/// Step for the monotonicity check. At `Δt = 0.01` one particle crossing the
/// barrier at `x = 0` (where `h = 16`) raises `ĥ` by up to `4e-3·|ĥ_0|` in a
/// single step; the per-step slack is met at `Δt = 1e-3`.
pub const MONOTONE_DT: f64 = 1e-3;

/// Replicator step: explicit schemes are stiff where `βh` reaches `3.6e3`
/// at the edge of the grid, so RK4 is used well inside its stability region.
pub const REPLICATOR_DT: f64 = 5e-4;

/// Largest single-step increase of `ĥ`, relative to `|ĥ_0|`.
pub fn max_relative_increase(hhat: &[f64]) -> f64 {
    let scale = hhat[0].abs();
    hhat.windows(2).map(|w| (w[1] - w[0]) / scale).fold(f64::NEG_INFINITY, f64::max)
}

fn c08_kernel_monotone(seed: u64) -> Result<Outcome> {
    let log = run(
        &double_well_config(GainMethod::Kernel, MONOTONE_DT, 10.0, seed),
        &double_well(),
        &Initializer::double_well_default(),
    )?;
    let worst = max_relative_increase(&log.hhat);
    Ok(Outcome {
        passed: worst <= MONOTONE_SLACK,
        measured: worst,
        threshold: format!("per-step increase <= {MONOTONE_SLACK} |hhat_0|"),
        detail: format!("hhat: {:.4} -> {:.4}", log.hhat[0], log.hhat.last().unwrap()),
    })
}

/// Global minimizer of the double well: grid search, then bisection on `h'`.
pub fn double_well_minimizer() -> f64 {
    let h = double_well();
    let grid = (0..=40_000).map(|k| -4.0 + 8.0 * k as f64 / 40_000.0);
    let best = grid.min_by(|a, b| h.eval(&[*a]).total_cmp(&h.eval(&[*b]))).unwrap();
    let dh = |x: f64| 4.0 * x * (x * x - 4.0) - 0.5;
    let (mut lo, mut hi) = (best - 1e-3, best + 1e-3);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dh(lo) * dh(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn c09_double_well(seed: u64) -> Result<Outcome> {
    let x_star = double_well_minimizer();
    let h = double_well();
    let init = Initializer::double_well_default();
    let fractions: Vec<Result<(GainMethod, f64)>> = GainMethod::CONTROLLED
        .par_iter()
        .map(|&m| {
            let log = run(&double_well_config(m, 0.01, 10.0, seed), &h, &init)?;
            let near = log
                .final_positions
                .iter()
                .filter(|x| (*x - x_star).abs() <= CAPTURE_RADIUS)
                .count();
            Ok((m, near as f64 / log.final_positions.len() as f64))
        })
        .collect();
    let mut worst: f64 = 1.0;
    let mut detail = vec![format!("x* = {x_star:.6}")];
    for f in fractions {
        let (m, frac) = f?;
        worst = worst.min(frac);
        detail.push(format!("{}: {frac:.3}", m.name()));
    }
    Ok(Outcome {
        passed: worst >= CAPTURE_FRACTION,
        measured: worst,
        threshold: format!("fraction within {CAPTURE_RADIUS} of x* >= {CAPTURE_FRACTION}"),
        detail: detail.join(", "),
    })
}

fn c10_posterior(seed: u64) -> Result<Outcome> {
    let h = double_well();
    let init = Initializer::double_well_default();
    let prior = init.grid_density()?;
    let exact = posterior_exact(&prior, &h, 1.0, 1.0)?;
    let log = run(&double_well_config(GainMethod::Kernel, 0.01, 1.0, seed), &h, &init)?;
    let ks = exact.ks_distance(&log.final_positions);
    let flow = integrate_replicator(&prior, &h, 1.0, 1.0, REPLICATOR_DT, Scheme::Rk4)?;
    let sup = flow
        .values()
        .iter()
        .zip(exact.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let measured = (ks / KS_TOL).max(sup / REPLICATOR_TOL);
    Ok(Outcome {
        passed: measured <= 1.0,
        measured,
        threshold: format!("KS <= {KS_TOL} and replicator sup-error <= {REPLICATOR_TOL:e} (ratio <= 1)"),
        detail: format!("ks = {ks:.4}, replicator sup-error = {sup:.2e}"),
    })
}

fn c11_natural_gradient(seed: u64) -> Result<Outcome> {
    let fam = GaussianFamily::new(1);
    let h = isotropic_quadratic(1, 1.0, 0.0, 0.0)?;
    let est = StepEstimator {
        fisher: Source::Analytic,
        grad: Source::MonteCarlo,
        samples: 100_000,
    };
    let traj = natural_grad_run(DVector::from_vec(vec![1.0, 1.0]), &fam, &h, 1.0, 0.01, 1.0, est, seed)?;
    let (m, s) = fam.moments(&traj.last().unwrap().theta)?;
    let exact = qg_exact(1.0, &GaussianMoments::scalar(1.0, 1.0)?, h.quadratic().unwrap(), 1.0)?;
    let rel = ((m[0] - exact.mean[0]) / exact.mean[0])
        .abs()
        .max(((s[(0, 0)] - exact.cov[(0, 0)]) / exact.cov[(0, 0)]).abs());

    let efam = ExponentialFamily::new(polynomial_psi(), -4.0, 4.0, 120)?;
    let alpha = [0.7, 1.3];
    let hp = Objective::new("alpha_psi", Some(1), move |x| alpha[0] * x[0] + alpha[1] * x[0] * x[0]);
    let s0 = NaturalGradState {
        theta: DVector::from_vec(vec![0.2, -0.6]),
        t: 0.0,
    };
    let (beta, dt) = (1.5, 0.01);
    let s1 = natural_grad_step(&s0, &efam, &hp, beta, dt, StepEstimator::analytic(), seed)?;
    let step_err = (0..2)
        .map(|k| ((s1.theta[k] - s0.theta[k]) / dt + beta * alpha[k]).abs())
        .fold(0.0, f64::max);
    let measured = (rel / NATURAL_GRADIENT_REL_TOL).max(step_err / EXP_FAMILY_TOL);
    Ok(Outcome {
        passed: measured <= 1.0,
        measured,
        threshold: format!(
            "Gaussian relative error <= {NATURAL_GRADIENT_REL_TOL} and |dtheta/dt + beta alpha| <= {EXP_FAMILY_TOL:e} (ratio <= 1)"
        ),
        detail: format!("gaussian_rel_err = {rel:.4}, exp_family_err = {step_err:.2e}"),
    })
}

/// Galerkin error budget for `ρ = N(0, 1)`, `h = sin 2x` and the first `M`
/// Hermite eigenfunctions.
pub struct SpectralBudget {
    pub bias_bound: f64,
    /// Median over seeds of `‖∇φ − ∇φ^(M,N)‖` per particle count.
    pub error: Vec<f64>,
    /// Median over seeds of `ε_N = ‖∇φ^(M) − ∇φ^(M,N)‖`.
    pub eps_n: Vec<f64>,
    /// Per-seed check `error <= bias_bound + ε_N`.
    pub bound_holds: bool,
}

pub const SPECTRAL_ORDER: usize = 3;
pub const SPECTRAL_COUNTS: [usize; 3] = [1_000, 10_000, 100_000];
pub const SPECTRAL_SEEDS: u64 = 10;

pub fn spectral_budget(seed: u64) -> Result<SpectralBudget> {
    let h = Objective::new("sin2x", Some(1), |x| (2.0 * x[0]).sin());
    let rho = GridDensity::gaussian(0.0, 1.0)?;
    let exact = poisson_grid_solve(&rho, &h, 1.0)?;
    let basis = hermite_basis(SPECTRAL_ORDER, &GaussianMoments::scalar(0.0, 1.0)?)?;
    let nodes = rho.nodes();
    let psi: Vec<Vec<f64>> = basis
        .functions()
        .iter()
        .map(|f| nodes.iter().map(|x| f.value(&[*x])).collect())
        .collect();
    let dpsi: Vec<Vec<f64>> = basis
        .functions()
        .iter()
        .map(|f| {
            nodes
                .iter()
                .map(|x| {
                    let mut g = [0.0];
                    f.grad(&[*x], &mut g);
                    g[0]
                })
                .collect()
        })
        .collect();
    let hv: Vec<f64> = nodes.iter().map(|x| h.eval(&[*x])).collect();
    let weighted = |f: &[f64]| rho.trapezoid(&f.iter().zip(rho.values()).map(|(a, p)| a * p).collect::<Vec<_>>());
    let hhat = weighted(&hv);
    let hc: Vec<f64> = hv.iter().map(|v| v - hhat).collect();

    // Population Galerkin coefficients; the eigenfunctions are orthonormal.
    let m = SPECTRAL_ORDER;
    let coeff: Vec<f64> = (0..m)
        .map(|k| weighted(&hc.iter().zip(&psi[k]).map(|(a, b)| a * b).collect::<Vec<_>>()) / (k + 1) as f64)
        .collect();
    let proj: Vec<f64> = (0..nodes.len())
        .map(|i| hc[i] - (0..m).map(|k| coeff[k] * (k + 1) as f64 * psi[k][i]).sum::<f64>())
        .collect();
    let lambda_m = m as f64;
    let bias_bound = weighted(&proj.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt() / lambda_m.sqrt();
    let grad_of = |c: &[f64]| -> Vec<f64> { (0..nodes.len()).map(|i| (0..m).map(|k| c[k] * dpsi[k][i]).sum()).collect() };
    let pop_grad = grad_of(&coeff);
    let l2 = |a: &[f64], b: &[f64]| weighted(&a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect::<Vec<_>>()).sqrt();

    let mut error = Vec::new();
    let mut eps_n = Vec::new();
    let mut bound_holds = true;
    for (ci, &n) in SPECTRAL_COUNTS.iter().enumerate() {
        let runs: Vec<Result<(f64, f64)>> = (0..SPECTRAL_SEEDS)
            .into_par_iter()
            .map(|r| {
                let xs = normal_samples(n, 0.0, 1.0, seed, 100 * (ci as u64 + 1) + r);
                let ens = Ensemble::new(xs, 1, &h)?;
                let (_, sol) = galerkin_gain(&ens, &basis, 1.0, 0.0)?;
                let c: Vec<f64> = sol.coeffs.iter().cloned().collect();
                let g = grad_of(&c);
                Ok((l2(&exact.grad_phi, &g), l2(&pop_grad, &g)))
            })
            .collect();
        let mut errs = Vec::new();
        let mut epss = Vec::new();
        for r in runs {
            let (e, en) = r?;
            bound_holds &= e <= bias_bound + en;
            errs.push(e);
            epss.push(en);
        }
        error.push(median(&mut errs));
        eps_n.push(median(&mut epss));
    }
    Ok(SpectralBudget {
        bias_bound,
        error,
        eps_n,
        bound_holds,
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn c12_spectral_bound(seed: u64) -> Result<Outcome> {
    let b = spectral_budget(seed)?;
    let monotone = b.eps_n.windows(2).all(|w| w[1] < w[0]);
    let median_bound = b
        .error
        .iter()
        .zip(&b.eps_n)
        .all(|(e, en)| *e <= b.bias_bound + en);
    let slack = b
        .error
        .iter()
        .zip(&b.eps_n)
        .map(|(e, en)| e - (b.bias_bound + en))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Outcome {
        passed: monotone && median_bound && b.bound_holds,
        measured: slack,
        threshold: "error - (bias bound + eps_N) <= 0 for every seed, eps_N strictly decreasing".into(),
        detail: format!(
            "bias bound {:.4e}, median errors {:?}, median eps_N {:?}",
            b.bias_bound, b.error, b.eps_n
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Lyapunov solver that solves `ΣK = C` and drops the symmetric half of the
    /// equation; used to confirm the triangle criterion detects it.
    fn corrupted_lyapunov(sigma: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        sigma.clone().cholesky().map(|ch| ch.solve(c)).ok_or(crate::Error::NotSymmetricPD)
    }

    #[test]
    fn corrupted_lyapunov_fails_the_triangle() {
        let good = triangle_with(DEFAULT_SEED, &|s, c| solve_lyapunov(s, c, DEFAULT_EPS_PD)).unwrap();
        assert!(good.passed, "{}", good.detail);
        let bad = triangle_with(DEFAULT_SEED, &corrupted_lyapunov).unwrap();
        assert!(!bad.passed, "{}", bad.detail);
    }

    #[test]
    fn minimizer_oracle() {
        let x = double_well_minimizer();
        assert!((4.0 * x * (x * x - 4.0) - 0.5).abs() < 1e-9);
        assert!((x - 2.0154).abs() < 1e-3);
        let h = double_well();
        assert!(h.eval(&[x]) < h.eval(&[-2.0]));
    }

    #[test]
    fn every_criterion_is_registered_once() {
        let ids: Vec<u8> = criterion_ids().map(|c| c.0).collect();
        assert_eq!(ids, (1..=12).collect::<Vec<_>>());
        assert!(run_one(13, 0).is_none());
    }

    #[test]
    fn relative_increase() {
        assert_eq!(max_relative_increase(&[10.0, 9.0, 9.5, 8.0]), 0.05);
    }

    #[test]
    fn kernel_population_limit() {
        assert!((kernel_population_slope(0.5) + 0.4057).abs() < 1e-4);
        assert!((kernel_population_slope(1e-4) + 0.5).abs() < 1e-3);
        // Finite-N kernel gains scatter around the limit.
        let h = isotropic_quadratic(1, 1.0, 0.0, 0.0).unwrap();
        let ens = Ensemble::new(normal_samples(5000, 0.0, 1.0, DEFAULT_SEED, 7), 1, &h).unwrap();
        let op = build_operator(&ens, 0.5).unwrap();
        let (_, hc) = h_stats(&ens);
        let pv = fixed_point(&op, &hc, 0.5, 100, 1e-9, &vec![0.0; 5000]).unwrap();
        let u = kernel_gain(&op, &pv, &hc, 1.0, 0.5);
        let xs = ens.positions();
        let slope = u.as_slice().iter().zip(xs).map(|(u, x)| u * x).sum::<f64>() / xs.iter().map(|x| x * x).sum::<f64>();
        assert!((slope - kernel_population_slope(0.5)).abs() < 0.03, "{slope}");
    }
}
