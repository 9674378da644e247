//! Damped (Levenberg-Marquardt) nonlinear least squares.
//!
//! Problems expose a residual vector r(x) and optionally an analytic Jacobian;
//! the solver minimises ‖r‖² with Marquardt diagonal scaling. Damping starts at
//! `damping_init`, is multiplied by 10 on every rejected step and by 0.3 on
//! every accepted one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Settings for [`minimize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Convergence threshold on the scaled gradient (see [`LmReport::gradient_norm`]).
    pub gradient_tol: f64,
    /// Relative step size below which the solver stops once the gradient test passes.
    pub step_tol: f64,
    pub damping_init: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: 200,
            gradient_tol: 1e-12,
            step_tol: 1e-12,
            damping_init: 1e-3,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.max_iter == 0 || !(self.gradient_tol > 0.0) || !(self.step_tol > 0.0) || !(self.damping_init > 0.0) {
            return Err(crate::Error::InvalidInput(format!(
                "fit config values must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

const DAMPING_UP: f64 = 10.0;
const DAMPING_DOWN: f64 = 0.3;
const DAMPING_MAX: f64 = 1e16;

pub trait LeastSquaresProblem {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;

    /// Fills `out` with residuals at `x`. Returns `false` when `x` lies outside
    /// the feasible domain; such trial points are rejected.
    fn residuals(&self, x: &[f64], out: &mut [f64]) -> bool;

    /// Fills `jac` (n_residuals × n_params). Defaults to central differences.
    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        finite_difference_jacobian(self, x, jac);
    }

    /// Norm of the data the residuals are measured against. Normalises the
    /// gradient test so that it is independent of the data scale.
    fn data_norm(&self) -> f64 {
        1.0
    }
}

/// Central-difference Jacobian with per-parameter relative steps.
pub fn finite_difference_jacobian<P: LeastSquaresProblem + ?Sized>(problem: &P, x: &[f64], jac: &mut DMatrix<f64>) {
    let m = problem.n_residuals();
    let mut xp = x.to_vec();
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    for j in 0..x.len() {
        let h = 1e-6 * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let ok_p = problem.residuals(&xp, &mut plus);
        xp[j] = x[j] - h;
        let ok_m = problem.residuals(&xp, &mut minus);
        xp[j] = x[j];
        match (ok_p, ok_m) {
            (true, true) => {
                for i in 0..m {
                    jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
                }
            }
            (true, false) => {
                problem.residuals(x, &mut minus);
                for i in 0..m {
                    jac[(i, j)] = (plus[i] - minus[i]) / h;
                }
            }
            (false, true) => {
                problem.residuals(x, &mut plus);
                for i in 0..m {
                    jac[(i, j)] = (plus[i] - minus[i]) / h;
                }
            }
            (false, false) => {
                for i in 0..m {
                    jac[(i, j)] = 0.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradientTolerance,
    ZeroResidual,
    MaxIterations,
    DampingOverflow,
    InfeasibleStart,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub x: Vec<f64>,
    /// Sum of squared residuals at `x`.
    pub ssr: f64,
    pub residuals: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub n_iter: usize,
    pub converged: bool,
    pub termination: Termination,
    /// max_j |J_jᵀ r| / (‖J_j‖ · data_norm) at `x`.
    pub gradient_norm: f64,
    /// Sum of squared residuals after every accepted step, starting point first.
    pub history: Vec<f64>,
}

impl LmReport {
    /// Linearised parameter covariance (JᵀJ)⁻¹ · s², with s² = ssr / (m − n).
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        let m = self.residuals.len();
        let n = self.x.len();
        let dof = m.saturating_sub(n).max(1) as f64;
        let s2 = self.ssr / dof;
        unscaled_covariance(&self.jacobian).map(|c| c * s2)
    }

    /// (JᵀJ)⁻¹ without residual-variance scaling, for problems whose residuals
    /// are already divided by known standard deviations.
    pub fn unscaled_covariance(&self) -> Option<DMatrix<f64>> {
        unscaled_covariance(&self.jacobian)
    }
}

fn unscaled_covariance(jac: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let jtj = jac.transpose() * jac;
    let n = jtj.nrows();
    // Equilibrate before inverting; parameter scales can differ by many decades.
    let d: Vec<f64> = (0..n)
        .map(|j| {
            let v = jtj[(j, j)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| jtj[(i, j)] * d[i] * d[j]);
    let inv = match scaled.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => scaled.pseudo_inverse(1e-12).ok()?,
    };
    Some(DMatrix::from_fn(n, n, |i, j| inv[(i, j)] * d[i] * d[j]))
}

fn sum_squares(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn gradient_measure(jac: &DMatrix<f64>, r: &[f64], data_norm: f64) -> f64 {
    let rv = DVector::from_column_slice(r);
    let mut worst: f64 = 0.0;
    for j in 0..jac.ncols() {
        let col = jac.column(j);
        let cn = col.norm();
        if cn == 0.0 {
            continue;
        }
        let g = col.dot(&rv).abs() / (cn * data_norm.max(f64::MIN_POSITIVE));
        worst = worst.max(g);
    }
    worst
}

/// Minimises ‖r(x)‖² starting from `x0`.
pub fn minimize<P: LeastSquaresProblem + ?Sized>(problem: &P, x0: &[f64], config: &FitConfig) -> LmReport {
    let n = problem.n_params();
    let m = problem.n_residuals();
    let mut x = x0.to_vec();
    let mut r = vec![0.0; m];
    let mut jac = DMatrix::zeros(m, n);
    let data_norm = problem.data_norm();

    if !problem.residuals(&x, &mut r) || r.iter().any(|v| !v.is_finite()) {
        return LmReport {
            x,
            ssr: f64::INFINITY,
            residuals: r,
            jacobian: jac,
            n_iter: 0,
            converged: false,
            termination: Termination::InfeasibleStart,
            gradient_norm: f64::INFINITY,
            history: Vec::new(),
        };
    }
    let mut ssr = sum_squares(&r);
    let mut history = vec![ssr];
    problem.jacobian(&x, &mut jac);
    let mut gnorm = gradient_measure(&jac, &r, data_norm);

    let mut lambda = config.damping_init;
    let mut trial_x = vec![0.0; n];
    let mut trial_r = vec![0.0; m];
    let mut n_iter = 0;
    let mut termination = Termination::MaxIterations;

    while n_iter < config.max_iter {
        if ssr == 0.0 {
            termination = Termination::ZeroResidual;
            break;
        }
        if gnorm <= config.gradient_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        n_iter += 1;

        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        let mean_diag = (0..n).map(|j| jtj[(j, j)]).sum::<f64>() / n as f64;
        let diag: Vec<f64> = (0..n)
            .map(|j| {
                let v = jtj[(j, j)];
                if v > 0.0 {
                    v
                } else {
                    mean_diag.max(1.0)
                }
            })
            .collect();

        let mut accepted = false;
        let mut tiny_step = false;
        while lambda <= DAMPING_MAX {
            let mut a = jtj.clone();
            for j in 0..n {
                a[(j, j)] += lambda * diag[j];
            }
            let step = a.cholesky().map(|ch| ch.solve(&(-&g)));
            let Some(step) = step else {
                lambda *= DAMPING_UP;
                continue;
            };
            for j in 0..n {
                trial_x[j] = x[j] + step[j];
            }
            let feasible = problem.residuals(&trial_x, &mut trial_r) && trial_r.iter().all(|v| v.is_finite());
            let trial_ssr = if feasible { sum_squares(&trial_r) } else { f64::INFINITY };
            if trial_ssr < ssr {
                let step_norm = step.amax();
                let x_norm = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                tiny_step = step_norm <= config.step_tol * (x_norm + config.step_tol);
                std::mem::swap(&mut x, &mut trial_x);
                std::mem::swap(&mut r, &mut trial_r);
                ssr = trial_ssr;
                history.push(ssr);
                lambda = (lambda * DAMPING_DOWN).max(1e-300);
                accepted = true;
                break;
            }
            lambda *= DAMPING_UP;
        }

        if !accepted {
            termination = Termination::DampingOverflow;
            break;
        }
        problem.jacobian(&x, &mut jac);
        gnorm = gradient_measure(&jac, &r, data_norm);
        if tiny_step && gnorm <= config.gradient_tol {
            termination = Termination::GradientTolerance;
            break;
        }
    }

    if ssr == 0.0 {
        gnorm = 0.0;
        termination = Termination::ZeroResidual;
    }
    let converged = gnorm <= config.gradient_tol;
    if converged && termination == Termination::MaxIterations {
        termination = Termination::GradientTolerance;
    }
    LmReport {
        x,
        ssr,
        residuals: r,
        jacobian: jac,
        n_iter,
        converged,
        termination,
        gradient_norm: gnorm,
        history,
    }
}

/// Weighted linear least squares: minimises Σ wᵢ (yᵢ − Σ_j X_ij β_j)².
///
/// Returns the coefficients, their covariance (JᵀWJ)⁻¹ · scale and the
/// weighted residual sum of squares. `scale_by_residual` multiplies the
/// covariance by the reduced chi-square.
pub struct LinearFit {
    pub coef: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub wssr: f64,
}

pub fn weighted_linear_fit(
    design: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    scale_by_residual: bool,
) -> crate::Result<LinearFit> {
    let (m, n) = design.shape();
    if y.len() != m || weights.len() != m {
        return Err(crate::Error::InvalidInput(
            "design, data and weight lengths differ".to_string(),
        ));
    }
    if m < n {
        return Err(crate::Error::RankDeficient(format!(
            "{m} observations for {n} coefficients"
        )));
    }
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let a = DMatrix::from_fn(m, n, |i, j| design[(i, j)] * sw[i]);
    let b = DVector::from_fn(m, |i, _| y[i] * sw[i]);

    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    if norms.iter().any(|v| *v == 0.0 || !v.is_finite()) {
        return Err(crate::Error::RankDeficient("empty design column".to_string()));
    }
    let scaled = DMatrix::from_fn(m, n, |i, j| a[(i, j)] / norms[j]);
    let svd = scaled.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(crate::Error::RankDeficient(format!(
            "condition number {:e}",
            smax / smin
        )));
    }
    let sol = svd
        .solve(&b, 0.0)
        .map_err(|e| crate::Error::RankDeficient(e.to_string()))?;
    let coef: Vec<f64> = (0..n).map(|j| sol[j] / norms[j]).collect();
    let fitted = &a * DVector::from_column_slice(&coef);
    let wssr = (&b - fitted).norm_squared();

    let gram = scaled.transpose() * &scaled;
    let inv = gram
        .try_inverse()
        .ok_or_else(|| crate::Error::RankDeficient("singular normal matrix".to_string()))?;
    let mut cov = DMatrix::from_fn(n, n, |i, j| inv[(i, j)] / (norms[i] * norms[j]));
    if scale_by_residual {
        let dof = (m - n).max(1) as f64;
        cov *= wssr / dof;
    }
    Ok(LinearFit {
        coef,
        covariance: cov,
        wssr,
    })
}
