//! Objective functions `h: R^d -> R` and the benchmark problems.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type EvalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
pub type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// `h(x) = ½ (x − x̄)ᵀ H (x − x̄) + c` with `H` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub hessian: DMatrix<f64>,
    pub minimizer: DVector<f64>,
    pub offset: f64,
}

impl Quadratic {
    pub fn dim(&self) -> usize {
        self.minimizer.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for r in 0..d {
            let dr = x[r] - self.minimizer[r];
            for c in 0..d {
                acc += dr * self.hessian[(r, c)] * (x[c] - self.minimizer[c]);
            }
        }
        0.5 * acc + self.offset
    }

    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for r in 0..d {
            out[r] = (0..d)
                .map(|c| self.hessian[(r, c)] * (x[c] - self.minimizer[c]))
                .sum();
        }
    }

    /// `H⁻¹`, via the Cholesky factor.
    pub fn hessian_inverse(&self) -> DMatrix<f64> {
        self.hessian
            .clone()
            .cholesky()
            .expect("hessian checked PD at construction")
            .inverse()
    }
}

/// An evaluatable objective with an optional analytic gradient and an
/// optional record of quadratic structure.
#[derive(Clone)]
pub struct Objective {
    name: String,
    dim: Option<usize>,
    eval: Arc<EvalFn>,
    grad: Option<Arc<GradFn>>,
    quadratic: Option<Arc<Quadratic>>,
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Objective")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("has_grad", &self.grad.is_some())
            .field("quadratic", &self.quadratic)
            .finish()
    }
}

impl Objective {
    /// Wraps an arbitrary function. `dim = None` means dimension-agnostic.
    pub fn new<F>(name: impl Into<String>, dim: Option<usize>, eval: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Objective {
            name: name.into(),
            dim,
            eval: Arc::new(eval),
            grad: None,
            quadratic: None,
        }
    }

    pub fn with_grad<G>(mut self, grad: G) -> Self
    where
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn has_grad(&self) -> bool {
        self.grad.is_some()
    }

    /// Writes `∇h(x)` into `out`; `None` if no gradient was supplied.
    pub fn grad(&self, x: &[f64], out: &mut [f64]) -> Option<()> {
        self.grad.as_ref().map(|g| g(x, out))
    }

    pub fn quadratic(&self) -> Option<&Quadratic> {
        self.quadratic.as_deref()
    }

    /// Returns the same function shifted by a constant: `h(x) + shift`.
    pub fn shifted(&self, shift: f64) -> Objective {
        let inner = self.eval.clone();
        let mut out = self.clone();
        out.eval = Arc::new(move |x| inner(x) + shift);
        out.quadratic = self.quadratic.as_ref().map(|q| {
            let mut q = (**q).clone();
            q.offset += shift;
            Arc::new(q)
        });
        out
    }
}

/// `h(x) = (x−2)²(x+2)² − x/2` on the real line.
pub fn double_well() -> Objective {
    Objective::new("double_well", Some(1), |x| {
        let x = x[0];
        (x - 2.0).powi(2) * (x + 2.0).powi(2) - 0.5 * x
    })
    .with_grad(|x, g| {
        let x = x[0];
        g[0] = 4.0 * x * (x * x - 4.0) - 0.5;
    })
}

/// `h(x) = ½ (x − x̄)ᵀ H (x − x̄) + c`.
pub fn quadratic(hessian: DMatrix<f64>, minimizer: DVector<f64>, offset: f64) -> Result<Objective> {
    let d = minimizer.len();
    if d == 0 {
        return Err(Error::invalid("xbar", "dimension must be at least 1"));
    }
    if hessian.nrows() != d || hessian.ncols() != d {
        return Err(Error::invalid(
            "H",
            format!("expected {d}x{d}, got {}x{}", hessian.nrows(), hessian.ncols()),
        ));
    }
    let scale = hessian.amax().max(f64::MIN_POSITIVE);
    if (&hessian - hessian.transpose()).amax() > 1e-12 * scale {
        return Err(Error::NotSymmetricPD);
    }
    if hessian.clone().cholesky().is_none() {
        return Err(Error::NotSymmetricPD);
    }
    let q = Arc::new(Quadratic {
        hessian,
        minimizer,
        offset,
    });
    let (qe, qg) = (q.clone(), q.clone());
    let mut obj = Objective::new("quadratic", Some(d), move |x| qe.eval(x))
        .with_grad(move |x, g| qg.grad(x, g));
    obj.quadratic = Some(q);
    Ok(obj)
}

/// `h(x) = ½ scale·|x − center·1|² + offset` in dimension `d`.
pub fn isotropic_quadratic(d: usize, scale: f64, center: f64, offset: f64) -> Result<Objective> {
    if scale <= 0.0 || !scale.is_finite() {
        return Err(Error::invalid("scale", "must be positive"));
    }
    quadratic(
        DMatrix::identity(d, d) * scale,
        DVector::from_element(d, center),
        offset,
    )
}
