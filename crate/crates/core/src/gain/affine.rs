//! Affine control law `u(x) = −β K (x − m) − β b` estimated from the ensemble.

use nalgebra::{DMatrix, DVector};

use crate::ensemble::{empirical_cov, empirical_mean, h_stats, Ensemble, GainSamples};
use crate::error::{Error, Result};

/// Default positive-definiteness threshold for the covariance in the
/// Lyapunov solve.
pub const DEFAULT_EPS_PD: f64 = 1e-10;

/// Gain matrix, affine constant and the ensemble mean they were computed at.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGain {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub mean: DVector<f64>,
}

impl AffineGain {
    /// `−β (K (x − m) + b)`.
    pub fn control_at(&self, x: &[f64], beta: f64, out: &mut [f64]) {
        let d = self.mean.len();
        for r in 0..d {
            let mut acc = self.offset[r];
            for c in 0..d {
                acc += self.gain[(r, c)] * (x[c] - self.mean[c]);
            }
            out[r] = -beta * acc;
        }
    }
}

/// Solves `Σ K + K Σ = C` for symmetric positive-definite `Σ`.
///
/// With `Σ = Q Λ Qᵀ` the solution is `K = Q [ (QᵀCQ)_{ij} / (λ_i + λ_j) ] Qᵀ`,
/// symmetrized afterwards.
pub fn solve_lyapunov(sigma: &DMatrix<f64>, c: &DMatrix<f64>, eps_pd: f64) -> Result<DMatrix<f64>> {
    let d = sigma.nrows();
    if sigma.ncols() != d || c.nrows() != d || c.ncols() != d {
        return Err(Error::invalid("Sigma", "Sigma and C must be square of equal size"));
    }
    let eig = sigma.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if !(min > eps_pd) {
        return Err(Error::SingularCovariance {
            min_eigenvalue: min,
            threshold: eps_pd,
        });
    }
    let q = &eig.eigenvectors;
    let mut ct = q.transpose() * c * q;
    for i in 0..d {
        for j in 0..d {
            ct[(i, j)] /= eig.eigenvalues[i] + eig.eigenvalues[j];
        }
    }
    let k = q * ct * q.transpose();
    Ok((&k + k.transpose()) * 0.5)
}

/// Empirical `b = (1/N) Σ X^i (h(X^i) − ĥ)`.
pub fn affine_offset(ens: &Ensemble, h_centered: &[f64]) -> DVector<f64> {
    let mut b = DVector::zeros(ens.dim());
    for (x, hc) in ens.particles().zip(h_centered) {
        for (bk, xk) in b.iter_mut().zip(x) {
            *bk += xk * hc;
        }
    }
    b / ens.count() as f64
}

/// Empirical `C = (1/N) Σ (X^i − m)(X^i − m)ᵀ (h(X^i) − ĥ)`.
pub fn weighted_second_moment(ens: &Ensemble, mean: &DVector<f64>, h_centered: &[f64]) -> DMatrix<f64> {
    let d = ens.dim();
    let mut c = DMatrix::zeros(d, d);
    let mut dx = vec![0.0; d];
    for (x, hc) in ens.particles().zip(h_centered) {
        for k in 0..d {
            dx[k] = x[k] - mean[k];
        }
        for r in 0..d {
            for s in r..d {
                c[(r, s)] += dx[r] * dx[s] * hc;
            }
        }
    }
    let n = ens.count() as f64;
    for r in 0..d {
        for s in r..d {
            c[(r, s)] /= n;
            c[(s, r)] = c[(r, s)];
        }
    }
    c
}

/// Affine approximation of the control function from the ensemble.
pub fn affine_gain(ens: &Ensemble, beta: f64, eps_pd: f64) -> Result<(GainSamples, AffineGain)> {
    affine_gain_with(ens, beta, |s, c| solve_lyapunov(s, c, eps_pd))
}

pub(crate) fn affine_gain_with<F>(ens: &Ensemble, beta: f64, lyapunov: F) -> Result<(GainSamples, AffineGain)>
where
    F: Fn(&DMatrix<f64>, &DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    let mean = empirical_mean(ens);
    let sigma = empirical_cov(ens);
    let (_, hc) = h_stats(ens);
    let offset = affine_offset(ens, &hc);
    let c = weighted_second_moment(ens, &mean, &hc);
    let gain = lyapunov(&sigma, &c)?;
    let law = AffineGain { gain, offset, mean };

    let d = ens.dim();
    let mut u = GainSamples::zeros(ens.count(), d);
    for (i, x) in ens.particles().enumerate() {
        law.control_at(x, beta, &mut u.as_mut_slice()[i * d..(i + 1) * d]);
    }
    Ok((u, law))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{isotropic_quadratic, quadratic, Objective};
    use crate::rng::{stream, Purpose};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_positions(n: usize, mean: &DVector<f64>, cov: &DMatrix<f64>, seed: u64) -> Vec<f64> {
        let l = cov.clone().cholesky().unwrap().l();
        let d = mean.len();
        let mut rng = stream(seed, 0, Purpose::Init, 0);
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            out.extend((mean + &l * z).iter());
        }
        out
    }

    #[test]
    fn lyapunov_identity_sigma_halves_c() {
        let c = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, -0.5, 1.0, 4.0, 0.3, -0.5, 0.3, 1.0]);
        let k = solve_lyapunov(&DMatrix::identity(3, 3), &c, DEFAULT_EPS_PD).unwrap();
        assert_relative_eq!(k, &c * 0.5, epsilon = 1e-14);
    }

    #[test]
    fn lyapunov_diag_example() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 3.0, 8.0]);
        let k = solve_lyapunov(&sigma, &c, DEFAULT_EPS_PD).unwrap();
        assert_relative_eq!(k, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]), epsilon = 1e-13);
    }

    #[test]
    fn lyapunov_random_pd_gives_pd_gain() {
        let mut rng = stream(99, 0, Purpose::Estimator, 0);
        let mut rand_pd = |d: usize| {
            let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            &a * a.transpose() + DMatrix::identity(d, d) * 0.5
        };
        let sigma = rand_pd(5);
        let h = rand_pd(5);
        let c = &sigma * &h * &sigma;
        let k = solve_lyapunov(&sigma, &c, DEFAULT_EPS_PD).unwrap();
        assert!(k.clone().symmetric_eigenvalues().min() > 0.0);
        let resid = &sigma * &k + &k * &sigma - &c;
        assert!(resid.amax() <= 1e-8 * c.amax());
        assert_eq!(k, k.transpose());
    }

    #[test]
    fn lyapunov_rejects_singular_sigma() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let err = solve_lyapunov(&sigma, &DMatrix::identity(2, 2), DEFAULT_EPS_PD).unwrap_err();
        assert!(matches!(err, Error::SingularCovariance { .. }));
    }

    #[test]
    fn constant_h_gives_zero_control() {
        let h = Objective::new("const", Some(2), |_| 3.0);
        let pos = gaussian_positions(50, &DVector::zeros(2), &DMatrix::identity(2, 2), 1);
        let e = Ensemble::new(pos, 2, &h).unwrap();
        let (u, law) = affine_gain(&e, 1.0, DEFAULT_EPS_PD).unwrap();
        assert!(u.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(law.offset, DVector::zeros(2));
        assert_eq!(law.gain, DMatrix::zeros(2, 2));
    }

    #[test]
    fn standard_gaussian_half_square() {
        let h = isotropic_quadratic(1, 1.0, 0.0, 0.0).unwrap();
        let pos = gaussian_positions(100_000, &DVector::zeros(1), &DMatrix::identity(1, 1), 2);
        let e = Ensemble::new(pos, 1, &h).unwrap();
        let (_, law) = affine_gain(&e, 1.0, DEFAULT_EPS_PD).unwrap();
        assert_relative_eq!(law.gain[(0, 0)], 0.5, max_relative = 0.03);
        assert!(law.offset[0].abs() < 0.02);
    }

    #[test]
    fn gaussian_quadratic_matches_closed_form() {
        // b = Σ H (m − x̄), Σ K + K Σ = Σ H Σ.
        let m = DVector::from_vec(vec![1.0, -0.5]);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let hess = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let xbar = DVector::from_vec(vec![0.2, 0.1]);
        let h = quadratic(hess.clone(), xbar.clone(), 0.7).unwrap();
        let e = Ensemble::new(gaussian_positions(100_000, &m, &sigma, 3), 2, &h).unwrap();
        let (_, law) = affine_gain(&e, 1.0, DEFAULT_EPS_PD).unwrap();
        let b = &sigma * &hess * (&m - &xbar);
        assert!((&law.offset - &b).norm() <= 0.05 * b.norm());
        let k = solve_lyapunov(&sigma, &(&sigma * &hess * &sigma), DEFAULT_EPS_PD).unwrap();
        assert!((&law.gain - &k).norm() <= 0.05 * k.norm());
    }

    #[test]
    fn translation_and_offset_invariance() {
        let h = isotropic_quadratic(2, 1.0, 0.3, 0.0).unwrap();
        let pos = gaussian_positions(200, &DVector::from_vec(vec![1.0, 2.0]), &DMatrix::identity(2, 2), 4);
        let e = Ensemble::new(pos.clone(), 2, &h).unwrap();
        let (u, law) = affine_gain(&e, 1.3, DEFAULT_EPS_PD).unwrap();

        // Shift positions by v and the objective along with them.
        let v = [5.0, -3.0];
        let shifted_pos: Vec<f64> = pos.iter().enumerate().map(|(k, x)| x + v[k % 2]).collect();
        let h_shift = Objective::new("shifted", Some(2), {
            let h = h.clone();
            move |x: &[f64]| h.eval(&[x[0] - v[0], x[1] - v[1]])
        });
        let es = Ensemble::new(shifted_pos, 2, &h_shift).unwrap();
        let (us, laws) = affine_gain(&es, 1.3, DEFAULT_EPS_PD).unwrap();
        assert_relative_eq!(laws.gain, law.gain, epsilon = 1e-9);
        assert_relative_eq!(laws.mean[0], law.mean[0] + v[0], epsilon = 1e-9);
        for (a, b) in us.as_slice().iter().zip(u.as_slice()) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }

        let ec = Ensemble::new(pos, 2, &h.shifted(42.0)).unwrap();
        let (uc, lawc) = affine_gain(&ec, 1.3, DEFAULT_EPS_PD).unwrap();
        assert_relative_eq!(lawc.gain, law.gain, epsilon = 1e-10);
        for (a, b) in uc.as_slice().iter().zip(u.as_slice()) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }
}
