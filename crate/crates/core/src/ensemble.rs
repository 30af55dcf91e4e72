//! Particle ensembles and their empirical statistics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Objective;

/// `N` particles in `R^d` with cached objective values.
///
/// Positions are stored row-major: particle `i` occupies
/// `positions[i*d .. (i+1)*d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    positions: Vec<f64>,
    h_values: Vec<f64>,
    dim: usize,
}

impl Ensemble {
    /// Builds an ensemble and evaluates `h` at every particle.
    pub fn new(positions: Vec<f64>, dim: usize, objective: &Objective) -> Result<Self> {
        Self::check_shape(&positions, dim)?;
        if let Some(d) = objective.dim() {
            if d != dim {
                return Err(Error::invalid(
                    "dim",
                    format!("objective has dimension {d}, ensemble {dim}"),
                ));
            }
        }
        let h_values = positions.chunks_exact(dim).map(|x| objective.eval(x)).collect();
        Ok(Ensemble {
            positions,
            h_values,
            dim,
        })
    }

    /// Builds an ensemble from positions and already-computed objective values.
    pub fn from_parts(positions: Vec<f64>, dim: usize, h_values: Vec<f64>) -> Result<Self> {
        Self::check_shape(&positions, dim)?;
        if h_values.len() * dim != positions.len() {
            return Err(Error::invalid("h_values", "length must equal particle count"));
        }
        Ok(Ensemble {
            positions,
            h_values,
            dim,
        })
    }

    fn check_shape(positions: &[f64], dim: usize) -> Result<()> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        if !positions.len().is_multiple_of(dim) {
            return Err(Error::invalid("positions", "length is not a multiple of dim"));
        }
        if positions.len() / dim < 2 {
            return Err(Error::invalid("positions", "need at least 2 particles"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.h_values.len()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn h_values(&self) -> &[f64] {
        &self.h_values
    }

    #[inline]
    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn particles(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.positions.chunks_exact(self.dim)
    }

    /// Positions as an `N × d` matrix.
    pub fn positions_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.count(), self.dim, &self.positions)
    }

    /// Moves every particle by `scale · controls[i]` and refreshes `h`.
    ///
    /// Returns the index of the first particle whose new position is not
    /// finite, leaving the ensemble unchanged in that case.
    pub fn advance(
        &mut self,
        controls: &GainSamples,
        scale: f64,
        objective: &Objective,
    ) -> std::result::Result<(), usize> {
        debug_assert_eq!(controls.dim(), self.dim);
        let mut next = self.positions.clone();
        for (x, u) in next.iter_mut().zip(controls.as_slice()) {
            *x += scale * u;
        }
        if let Some(bad) = next
            .chunks_exact(self.dim)
            .position(|x| x.iter().any(|v| !v.is_finite()))
        {
            return Err(bad);
        }
        self.positions = next;
        self.refresh(objective);
        Ok(())
    }

    /// Replaces the positions (same count and dimension) and refreshes `h`.
    pub fn set_positions(&mut self, positions: Vec<f64>, objective: &Objective) {
        assert_eq!(positions.len(), self.positions.len());
        self.positions = positions;
        self.refresh(objective);
    }

    fn refresh(&mut self, objective: &Objective) {
        for (h, x) in self.h_values.iter_mut().zip(self.positions.chunks_exact(self.dim)) {
            *h = objective.eval(x);
        }
    }

    /// Same particles in a different order: particle `k` of the result is
    /// particle `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Ensemble {
        assert_eq!(perm.len(), self.count());
        let mut positions = Vec::with_capacity(self.positions.len());
        for &p in perm {
            positions.extend_from_slice(self.particle(p));
        }
        let h_values = perm.iter().map(|&p| self.h_values[p]).collect();
        Ensemble {
            positions,
            h_values,
            dim: self.dim,
        }
    }
}

/// Per-particle control vectors `u^i`, row-major `N × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSamples {
    controls: Vec<f64>,
    dim: usize,
}

impl GainSamples {
    pub fn new(controls: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0 && controls.len().is_multiple_of(dim));
        GainSamples { controls, dim }
    }

    pub fn zeros(count: usize, dim: usize) -> Self {
        GainSamples::new(vec![0.0; count * dim], dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.controls.len() / self.dim
    }

    #[inline]
    pub fn control(&self, i: usize) -> &[f64] {
        &self.controls[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.controls
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.controls
    }

    pub fn is_finite(&self) -> bool {
        self.controls.iter().all(|v| v.is_finite())
    }

    /// Largest Euclidean norm over the rows.
    pub fn max_norm(&self) -> f64 {
        self.controls
            .chunks_exact(self.dim)
            .map(|u| u.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Mean and covariance of a Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.nrows() != d || cov.ncols() != d {
            return Err(Error::invalid("cov", "shape must be d x d matching the mean"));
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        if (&cov - cov.transpose()).amax() > 1e-12 * scale {
            return Err(Error::invalid("cov", "must be symmetric"));
        }
        if cov.clone().symmetric_eigenvalues().min() < -1e-12 * scale {
            return Err(Error::invalid("cov", "must be positive semidefinite"));
        }
        Ok(GaussianMoments { mean, cov })
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        GaussianMoments::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `(1/N) Σ_i X^i`.
pub fn empirical_mean(ens: &Ensemble) -> DVector<f64> {
    let mut m = DVector::zeros(ens.dim());
    for x in ens.particles() {
        for (mk, xk) in m.iter_mut().zip(x) {
            *mk += xk;
        }
    }
    m / ens.count() as f64
}

/// `(1/N) Σ_i (X^i − m)(X^i − m)ᵀ`, exactly symmetric.
pub fn empirical_cov(ens: &Ensemble) -> DMatrix<f64> {
    let d = ens.dim();
    let m = empirical_mean(ens);
    let mut c = DMatrix::zeros(d, d);
    let mut dx = vec![0.0; d];
    for x in ens.particles() {
        for k in 0..d {
            dx[k] = x[k] - m[k];
        }
        for r in 0..d {
            for s in r..d {
                c[(r, s)] += dx[r] * dx[s];
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

/// Covariance that the caller needs to be usable as a positive-definite
/// matrix; fails when every particle sits at the same point.
pub fn empirical_cov_nondegenerate(ens: &Ensemble) -> Result<DMatrix<f64>> {
    let first = ens.particle(0);
    if ens.particles().all(|x| x == first) {
        return Err(Error::DegenerateEnsemble);
    }
    Ok(empirical_cov(ens))
}

/// `ĥ = (1/N) Σ_i h(X^i)` and the centered values `h(X^i) − ĥ`.
pub fn h_stats(ens: &Ensemble) -> (f64, Vec<f64>) {
    centered(ens.h_values())
}

pub(crate) fn centered(values: &[f64]) -> (f64, Vec<f64>) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (mean, values.iter().map(|v| v - mean).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{double_well, isotropic_quadratic};
    use crate::rng::{stream, Purpose};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn zero_obj(d: usize) -> Objective {
        Objective::new("zero", Some(d), |_| 0.0)
    }

    fn normal_samples(n: usize, mean: &[f64], sd: &[f64], seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, 0, Purpose::Init, 0);
        let mut out = Vec::with_capacity(n * mean.len());
        for _ in 0..n {
            for (m, s) in mean.iter().zip(sd) {
                let z: f64 = rng.sample(StandardNormal);
                out.push(m + s * z);
            }
        }
        out
    }

    #[test]
    fn mean_of_two_points() {
        let e = Ensemble::new(vec![0.0, 2.0], 1, &zero_obj(1)).unwrap();
        assert_eq!(empirical_mean(&e)[0], 1.0);
    }

    #[test]
    fn constant_ensemble() {
        let e = Ensemble::new([1.5, -2.0].repeat(5), 2, &zero_obj(2)).unwrap();
        let m = empirical_mean(&e);
        assert_relative_eq!(m[0], 1.5);
        assert_relative_eq!(m[1], -2.0);
        assert_eq!(empirical_cov(&e), DMatrix::zeros(2, 2));
        assert_eq!(empirical_cov_nondegenerate(&e), Err(Error::DegenerateEnsemble));
    }

    #[test]
    fn variance_of_plus_minus_one() {
        let e = Ensemble::new(vec![-1.0, 1.0], 1, &zero_obj(1)).unwrap();
        assert_eq!(empirical_cov(&e)[(0, 0)], 1.0);
    }

    #[test]
    fn large_sample_mean_and_cov() {
        let n = 100_000;
        let e = Ensemble::new(normal_samples(n, &[1.0], &[1.0], 11), 1, &zero_obj(1)).unwrap();
        assert!((empirical_mean(&e)[0] - 1.0).abs() < 3.0 / (n as f64).sqrt() * 2.0);

        let e = Ensemble::new(
            normal_samples(n, &[0.0, 0.0], &[1.0, 2f64.sqrt()], 12),
            2,
            &zero_obj(2),
        )
        .unwrap();
        let c = empirical_cov(&e);
        assert_relative_eq!(c[(0, 0)], 1.0, max_relative = 0.05);
        assert_relative_eq!(c[(1, 1)], 2.0, max_relative = 0.05);
        assert!(c[(0, 1)].abs() < 0.05);
    }

    #[test]
    fn h_stats_examples() {
        let e = Ensemble::from_parts(vec![0.0; 3], 1, vec![1.0; 3]).unwrap();
        assert_eq!(h_stats(&e), (1.0, vec![0.0; 3]));
        let e = Ensemble::from_parts(vec![0.0; 2], 1, vec![0.0, 2.0]).unwrap();
        assert_eq!(h_stats(&e), (1.0, vec![-1.0, 1.0]));
    }

    #[test]
    fn double_well_centered_sums_to_zero() {
        let e = Ensemble::new(normal_samples(500, &[0.0], &[2.0], 3), 1, &double_well()).unwrap();
        let (_, c) = h_stats(&e);
        assert!(c.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Ensemble::new(vec![1.0], 1, &zero_obj(1)).is_err());
        assert!(Ensemble::new(vec![1.0, 2.0, 3.0], 2, &zero_obj(2)).is_err());
        assert!(Ensemble::from_parts(vec![1.0, 2.0], 1, vec![0.0]).is_err());
        let h = isotropic_quadratic(2, 1.0, 0.0, 0.0).unwrap();
        assert!(Ensemble::new(vec![0.0; 6], 3, &h).is_err());
    }

    #[test]
    fn advance_refreshes_h() {
        let h = isotropic_quadratic(1, 1.0, 0.0, 0.0).unwrap();
        let mut e = Ensemble::new(vec![0.0, 1.0], 1, &h).unwrap();
        e.advance(&GainSamples::new(vec![1.0, 1.0], 1), 0.5, &h).unwrap();
        assert_eq!(e.positions(), &[0.5, 1.5]);
        assert_relative_eq!(e.h_values()[1], 0.5 * 1.5 * 1.5);
        let bad = GainSamples::new(vec![0.0, f64::NAN], 1);
        assert_eq!(e.advance(&bad, 1.0, &h), Err(1));
        assert_eq!(e.positions(), &[0.5, 1.5]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn centered_sums_to_zero(h in prop::collection::vec(-1e3f64..1e3, 2..64)) {
                let n = h.len();
                let e = Ensemble::from_parts(vec![0.0; n], 1, h).unwrap();
                let (_, c) = h_stats(&e);
                let scale: f64 = e.h_values().iter().map(|v| v.abs()).sum::<f64>() + 1.0;
                prop_assert!(c.iter().sum::<f64>().abs() <= 1e-13 * scale);
            }

            #[test]
            fn cov_is_symmetric_psd(pos in prop::collection::vec(-10f64..10.0, 6..60)) {
                let d = 3;
                let n = pos.len() / d;
                prop_assume!(n >= 2);
                let pos = pos[..n * d].to_vec();
                let e = Ensemble::from_parts(pos, d, vec![0.0; n]).unwrap();
                let c = empirical_cov(&e);
                prop_assert_eq!(c.clone(), c.transpose());
                let tr = c.trace();
                prop_assert!(c.symmetric_eigenvalues().min() >= -1e-12 * tr.max(1e-300));
            }
        }
    }
}
