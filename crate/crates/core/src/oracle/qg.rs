//! Quadratic objective with Gaussian prior: the moments of the posterior
//! obey closed-form ODEs with an explicit solution.

use nalgebra::{DMatrix, DVector};

use crate::ensemble::{empirical_mean, h_stats, Ensemble, GaussianMoments};
use crate::error::{Error, Result};
use crate::objective::Quadratic;

/// Moments at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct QgState {
    pub moments: GaussianMoments,
    pub t: f64,
}

/// Explicit solution of the moment ODEs from a fixed prior, with `H⁻¹`
/// computed once.
#[derive(Debug, Clone)]
pub struct QgOracle {
    prior: GaussianMoments,
    minimizer: DVector<f64>,
    hessian_inv: DMatrix<f64>,
    beta: f64,
}

impl QgOracle {
    pub fn new(prior: GaussianMoments, objective: &Quadratic, beta: f64) -> Result<Self> {
        if prior.dim() != objective.dim() {
            return Err(Error::invalid("m0", "prior and objective dimensions differ"));
        }
        if !(beta >= 0.0) {
            return Err(Error::invalid("beta", "must be non-negative"));
        }
        if prior.cov.clone().cholesky().is_none() {
            return Err(Error::NotSymmetricPD);
        }
        Ok(QgOracle {
            prior,
            minimizer: objective.minimizer.clone(),
            hessian_inv: objective.hessian_inverse(),
            beta,
        })
    }

    /// `S_t = H⁻¹/(βt) + Σ₀`, `m_t = m₀ + Σ₀S_t⁻¹(x̄ − m₀)`,
    /// `Σ_t = Σ₀ − Σ₀S_t⁻¹Σ₀`.
    pub fn at(&self, t: f64) -> Result<GaussianMoments> {
        if !(t >= 0.0) {
            return Err(Error::invalid("t", "must be non-negative"));
        }
        let bt = self.beta * t;
        if bt == 0.0 {
            return Ok(self.prior.clone());
        }
        let s0 = &self.prior.cov;
        let m0 = &self.prior.mean;
        let s = &self.hessian_inv / bt + s0;
        let chol = s.cholesky().ok_or(Error::NotSymmetricPD)?;
        let mean = m0 + s0 * chol.solve(&(&self.minimizer - m0));
        let cov = s0 - s0 * chol.solve(s0);
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(GaussianMoments { mean, cov })
    }
}

/// Moments at time `t` for prior `(m0, Σ0)` and quadratic `h`.
pub fn qg_exact(t: f64, prior: &GaussianMoments, objective: &Quadratic, beta: f64) -> Result<GaussianMoments> {
    QgOracle::new(prior.clone(), objective, beta)?.at(t)
}

/// `dm = βΣH(x̄ − m)`, `dΣ = −βΣHΣ`.
pub fn qg_ode_rhs(state: &GaussianMoments, objective: &Quadratic, beta: f64) -> (DVector<f64>, DMatrix<f64>) {
    let sh = &state.cov * &objective.hessian;
    let dm = &sh * (&objective.minimizer - &state.mean) * beta;
    let ds = -(&sh * &state.cov) * beta;
    (dm, (&ds + ds.transpose()) * 0.5)
}

/// Ensemble estimates of the moment derivatives:
/// `dm = −β E[X (h − ĥ)]`, `dΣ = −β E[(X − m)(X − m)ᵀ (h − ĥ)]`.
pub fn qg_moment_rhs_mc(ens: &Ensemble, beta: f64) -> (DVector<f64>, DMatrix<f64>) {
    use crate::gain::affine::{affine_offset, weighted_second_moment};
    let (_, hc) = h_stats(ens);
    let m = empirical_mean(ens);
    let b = affine_offset(ens, &hc);
    let c = weighted_second_moment(ens, &m, &hc);
    (b * -beta, c * -beta)
}

/// Forward-Euler integration of the moment ODEs.
pub fn qg_euler(prior: &GaussianMoments, objective: &Quadratic, beta: f64, dt: f64, t_final: f64) -> GaussianMoments {
    let steps = (t_final / dt).round() as usize;
    let mut state = prior.clone();
    for _ in 0..steps {
        let (dm, ds) = qg_ode_rhs(&state, objective, beta);
        state.mean += dm * dt;
        state.cov += ds * dt;
    }
    state
}

/// `½(m − x̄)ᵀH(m − x̄) + ½ tr(HΣ)`, the posterior mean of `h − c`.
pub fn expected_excess(moments: &GaussianMoments, objective: &Quadratic) -> f64 {
    let dm = &moments.mean - &objective.minimizer;
    0.5 * dm.dot(&(&objective.hessian * &dm)) + 0.5 * (&objective.hessian * &moments.cov).trace()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gain::affine::{affine_gain, DEFAULT_EPS_PD};
    use crate::objective::quadratic;
    use crate::rng::{stream, Purpose};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn scalar_problem() -> (GaussianMoments, Quadratic) {
        let q = quadratic(DMatrix::identity(1, 1), DVector::zeros(1), 0.0).unwrap();
        (GaussianMoments::scalar(1.0, 1.0).unwrap(), q.quadratic().unwrap().clone())
    }

    fn problem_2d() -> (GaussianMoments, Quadratic) {
        let q = quadratic(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]),
            DVector::from_vec(vec![0.5, -1.0]),
            0.3,
        )
        .unwrap();
        let prior = GaussianMoments::new(
            DVector::from_vec(vec![1.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.6]),
        )
        .unwrap();
        (prior, q.quadratic().unwrap().clone())
    }

    #[test]
    fn time_zero_returns_prior() {
        let (p, q) = problem_2d();
        assert_eq!(qg_exact(0.0, &p, &q, 1.0).unwrap(), p);
    }

    #[test]
    fn scalar_value_at_five() {
        let (p, q) = scalar_problem();
        let m = qg_exact(5.0, &p, &q, 1.0).unwrap();
        assert_relative_eq!(m.mean[0], 1.0 / 6.0, epsilon = 1e-14);
        assert_relative_eq!(m.cov[(0, 0)], 1.0 / 6.0, epsilon = 1e-14);
    }

    #[test]
    fn long_time_limit() {
        let (p, q) = problem_2d();
        let m = qg_exact(1e6, &p, &q, 1.0).unwrap();
        assert!((&m.mean - &q.minimizer).amax() < 1e-5);
        assert!(m.cov.amax() < 1e-5);
    }

    #[test]
    fn ode_rhs_fixed_points() {
        let (p, q) = problem_2d();
        let at_min = GaussianMoments {
            mean: q.minimizer.clone(),
            cov: p.cov.clone(),
        };
        let (dm, _) = qg_ode_rhs(&at_min, &q, 1.0);
        assert_eq!(dm, DVector::zeros(2));
        let collapsed = GaussianMoments {
            mean: p.mean.clone(),
            cov: DMatrix::zeros(2, 2),
        };
        let (dm, ds) = qg_ode_rhs(&collapsed, &q, 1.0);
        assert_eq!(dm, DVector::zeros(2));
        assert_eq!(ds, DMatrix::zeros(2, 2));
    }

    #[test]
    fn euler_matches_explicit_solution() {
        let (p, q) = scalar_problem();
        let euler = qg_euler(&p, &q, 1.0, 1e-4, 5.0);
        let exact = qg_exact(5.0, &p, &q, 1.0).unwrap();
        assert!((euler.mean[0] - exact.mean[0]).abs() < 1e-3);
        assert!((euler.cov[(0, 0)] - exact.cov[(0, 0)]).abs() < 1e-3);

        let (p, q) = problem_2d();
        let euler = qg_euler(&p, &q, 0.8, 1e-4, 3.0);
        let exact = qg_exact(3.0, &p, &q, 0.8).unwrap();
        assert!((&euler.mean - &exact.mean).amax() < 1e-3);
        assert!((&euler.cov - &exact.cov).amax() < 1e-3);
    }

    #[test]
    fn covariance_stays_pd_and_excess_decreases() {
        let (p, q) = problem_2d();
        let oracle = QgOracle::new(p, &q, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=60 {
            let t = 10f64.powf(-3.0 + 0.15 * k as f64);
            let m = oracle.at(t).unwrap();
            assert_eq!(m.cov, m.cov.transpose());
            assert!(m.cov.clone().symmetric_eigenvalues().min() > 0.0, "t={t}");
            let e = expected_excess(&m, &q);
            assert!(e <= prev + 1e-15);
            prev = e;
        }
    }

    #[test]
    fn monte_carlo_rhs_matches_closed_form() {
        let (p, q) = problem_2d();
        let obj = quadratic(q.hessian.clone(), q.minimizer.clone(), q.offset).unwrap();
        let l = p.cov.clone().cholesky().unwrap().l();
        let mut rng = stream(17, 0, Purpose::Init, 0);
        let mut pos = Vec::new();
        for _ in 0..100_000 {
            let z = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            pos.extend((&p.mean + &l * z).iter());
        }
        let ens = Ensemble::new(pos, 2, &obj).unwrap();
        let (dm, ds) = qg_moment_rhs_mc(&ens, 1.0);
        let (em, es) = qg_ode_rhs(&p, &q, 1.0);
        assert!((&dm - &em).norm() <= 0.03 * em.norm());
        assert!((&ds - &es).norm() <= 0.03 * es.norm());

        // dm is exactly −β b from the affine gain on the same ensemble.
        let (_, law) = affine_gain(&ens, 1.0, DEFAULT_EPS_PD).unwrap();
        assert_eq!(dm, -&law.offset);
    }

    #[test]
    fn constant_objective_rhs_vanishes() {
        let h = crate::objective::Objective::new("c", Some(1), |_| 1.0);
        let e = Ensemble::new(vec![0.1, 0.5, -0.3, 2.0], 1, &h).unwrap();
        let (dm, ds) = qg_moment_rhs_mc(&e, 1.0);
        assert_eq!(dm[0], 0.0);
        assert_eq!(ds[(0, 0)], 0.0);
    }
}
