//! Penalised least squares through the normal equations.
//!
//! Minimises `‖y − Aθ‖² + Σ_i w_i (θ_i − μ_i)²` by solving
//! `(AᵀA + W) Δ = Aᵀ(y − Aμ)` for `Δ = θ − μ` with a Cholesky factorisation
//! of the Jacobi-equilibrated system, followed by iterative refinement.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const REFINEMENT_STEPS: usize = 3;
/// Diagonal jitter attempts, relative to the mean equilibrated diagonal (1.0).
const JITTER_LADDER: [f64; 4] = [1e-12, 1e-10, 1e-8, 1e-6];

#[derive(Debug, Clone)]
pub struct RidgeProblem<'a> {
    pub design: &'a DMatrix<f64>,
    pub target: &'a DVector<f64>,
    /// Per-column penalty weights, all `>= 0`.
    pub penalty: &'a [f64],
    /// Values the penalty pulls towards.
    pub prior: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct RidgeSolution {
    pub theta: DVector<f64>,
    pub condition_estimate: f64,
    /// Jitter that had to be added to the equilibrated diagonal, if any.
    pub jitter: f64,
}

impl RidgeProblem<'_> {
    fn check(&self) -> Result<()> {
        let p = self.design.ncols();
        if self.design.nrows() != self.target.len() {
            return Err(Error::Config(format!(
                "design has {} rows but target has {}",
                self.design.nrows(),
                self.target.len()
            )));
        }
        if self.penalty.len() != p || self.prior.len() != p {
            return Err(Error::Config(format!(
                "penalty/prior length ({}, {}) must match {p} columns",
                self.penalty.len(),
                self.prior.len()
            )));
        }
        if self.penalty.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("penalty weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn residuals(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.target - self.design * theta
    }

    pub fn objective(&self, theta: &DVector<f64>) -> f64 {
        let r = self.residuals(theta);
        let pen: f64 = (0..theta.len())
            .map(|i| self.penalty[i] * (theta[i] - self.prior[i]).powi(2))
            .sum();
        r.norm_squared() + pen
    }

    /// `∇ = −2Aᵀ(y − Aθ) + 2W(θ − μ)`
    pub fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let r = self.residuals(theta);
        let mut g = self.design.tr_mul(&r) * -2.0;
        for i in 0..theta.len() {
            g[i] += 2.0 * self.penalty[i] * (theta[i] - self.prior[i]);
        }
        g
    }

    pub fn solve(&self) -> Result<RidgeSolution> {
        self.check()?;
        let p = self.design.ncols();
        let prior = DVector::from_column_slice(self.prior);
        let mut normal = self.design.tr_mul(self.design);
        for i in 0..p {
            normal[(i, i)] += self.penalty[i];
        }
        let rhs = self.design.tr_mul(&(self.target - self.design * &prior));

        let scale: Vec<f64> = (0..p)
            .map(|i| {
                let d = normal[(i, i)];
                if d > 0.0 { 1.0 / d.sqrt() } else { 1.0 }
            })
            .collect();
        let mut scaled = normal.clone();
        for i in 0..p {
            for j in 0..p {
                scaled[(i, j)] *= scale[i] * scale[j];
            }
        }

        let mut jitter = 0.0;
        let mut chol = scaled.clone().cholesky();
        if chol.is_none() {
            for &eps in &JITTER_LADDER {
                let mut m = scaled.clone();
                for i in 0..p {
                    m[(i, i)] += eps;
                }
                chol = m.cholesky();
                if chol.is_some() {
                    jitter = eps;
                    break;
                }
            }
        }
        let chol = chol.ok_or_else(|| Error::Numerical {
            message: "normal equations are not positive definite even after ridge repair".into(),
            condition: f64::INFINITY,
        })?;

        let l = chol.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..p {
            let v = l[(i, i)].abs();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let condition_estimate = if p == 0 { 1.0 } else { (hi / lo).powi(2) };
        if !condition_estimate.is_finite() || condition_estimate > 1e15 {
            return Err(Error::Numerical {
                message: "normal equations are numerically singular".into(),
                condition: condition_estimate,
            });
        }

        let scale_v = DVector::from_vec(scale);
        let solve_scaled = |b: &DVector<f64>| -> DVector<f64> {
            let z = chol.solve(&b.component_mul(&scale_v));
            z.component_mul(&scale_v)
        };
        let mut delta = solve_scaled(&rhs);
        for _ in 0..REFINEMENT_STEPS {
            let resid = &rhs - &normal * &delta;
            delta += solve_scaled(&resid);
        }
        Ok(RidgeSolution {
            theta: delta + prior,
            condition_estimate,
            jitter,
        })
    }
}
