//! Huberized hinge loss, sign-flip convexification, objective assembly with an
//! optional fusion term, and a deterministic L-BFGS solver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::gram_entries;
use crate::types::{DecisionRule, KernelSpec, RuleForm};

/// Huberized hinge loss: 0 for `u >= 1`, `0.25 (u - 1)^2` on `[-1, 1)`, `-u` below.
pub fn huber_hinge(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else if u >= -1.0 {
        0.25 * (u - 1.0) * (u - 1.0)
    } else {
        -u
    }
}

/// Derivative of [`huber_hinge`]; continuous everywhere.
pub fn huber_hinge_grad(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else if u >= -1.0 {
        0.5 * (u - 1.0)
    } else {
        -1.0
    }
}

/// Sign-flipped weighted classification instances fed to the solver.
#[derive(Debug, Clone)]
pub struct WeightedInstances {
    pub covariates: DMatrix<f64>,
    pub labels: Vec<i8>,
    /// Nonnegative, already divided by the propensities.
    pub weights: Vec<f64>,
}

impl WeightedInstances {
    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }
}

/// Convexification: weight `|delta| / pi`, label `t * sign(delta)`.
///
/// A zero residual keeps label `t` and weight 0, so the instance is inert but
/// index alignment is preserved.
pub fn sign_flip(
    deltas: &[f64],
    treatments: &[i8],
    propensities: &[f64],
    covariates: &DMatrix<f64>,
) -> Result<WeightedInstances> {
    let n = deltas.len();
    if treatments.len() != n || propensities.len() != n || covariates.nrows() != n {
        return Err(Error::DimensionMismatch("sign_flip inputs differ in length".into()));
    }
    let mut labels = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let flip = if deltas[i] < 0.0 { -1 } else { 1 };
        labels.push(treatments[i] * flip);
        weights.push(deltas[i].abs() / propensities[i]);
    }
    Ok(WeightedInstances { covariates: covariates.clone(), labels, weights })
}

/// Fusion term penalizing disagreement with the other study's rule at its
/// covariates: `(strength / m) * sum_k phi(f(anchor_k) * score_k)`.
#[derive(Debug, Clone)]
pub struct FusionTerm {
    pub anchor_covariates: DMatrix<f64>,
    /// External decision-function signs at the anchors, pre-mapped to ±1.
    pub anchor_scores: Vec<i8>,
    pub strength: f64,
}

impl FusionTerm {
    pub fn validate(&self) -> Result<()> {
        if self.anchor_scores.len() != self.anchor_covariates.nrows() {
            return Err(Error::DimensionMismatch("fusion anchors and scores differ in length".into()));
        }
        if self.strength < 0.0 {
            return Err(Error::InvalidInput("fusion strength must be nonnegative".into()));
        }
        if self.anchor_scores.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidInput("anchor scores must be ±1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveSettings {
    /// Infinity-norm gradient tolerance.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub ls_c1: f64,
    /// Backtracking shrink factor.
    pub ls_shrink: f64,
    /// L-BFGS memory.
    pub memory: usize,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self { grad_tol: 1e-6, max_iter: 1000, ls_c1: 1e-4, ls_shrink: 0.5, memory: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct SolverStats {
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub grad_inf_norm: f64,
}

/// Assembled smooth convex objective over parameters `theta = (coefficients, intercept)`.
/// Public so external validation harnesses can cross-check values and gradients.
pub struct Objective {
    /// Rows whose dot with the coefficients gives the data-term scores.
    data_rows: DMatrix<f64>,
    labels: Vec<f64>,
    weights: Vec<f64>,
    inv_n: f64,
    lambda: f64,
    /// None for the linear class (penalty is alpha' alpha).
    penalty_gram: Option<DMatrix<f64>>,
    /// Rows for the fusion scores, with their ±1 targets and weight strength/m.
    fusion_rows: Option<(DMatrix<f64>, Vec<f64>, f64)>,
}

impl Objective {
    pub fn dim(&self) -> usize {
        self.data_rows.ncols() + 1
    }

    pub fn eval(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let d = self.dim();
        let q = d - 1;
        let coef = theta.rows(0, q);
        let beta = theta[q];
        let mut value = 0.0;
        let mut grad = DVector::<f64>::zeros(d);

        let scores = &self.data_rows * coef;
        for i in 0..self.labels.len() {
            let w = self.weights[i] * self.inv_n;
            if w == 0.0 {
                continue;
            }
            let y = self.labels[i];
            let u = y * (scores[i] + beta);
            value += w * huber_hinge(u);
            let g = w * huber_hinge_grad(u) * y;
            if g != 0.0 {
                for j in 0..q {
                    grad[j] += g * self.data_rows[(i, j)];
                }
                grad[q] += g;
            }
        }

        match &self.penalty_gram {
            None => {
                value += self.lambda * coef.dot(&coef);
                for j in 0..q {
                    grad[j] += 2.0 * self.lambda * coef[j];
                }
            }
            Some(k) => {
                let ka = k * coef;
                value += self.lambda * coef.dot(&ka);
                for j in 0..q {
                    grad[j] += 2.0 * self.lambda * ka[j];
                }
            }
        }

        if let Some((rows, targets, w)) = &self.fusion_rows {
            let fscores = rows * coef;
            for k in 0..targets.len() {
                let s = targets[k];
                let u = (fscores[k] + beta) * s;
                value += w * huber_hinge(u);
                let g = w * huber_hinge_grad(u) * s;
                if g != 0.0 {
                    for j in 0..q {
                        grad[j] += g * rows[(k, j)];
                    }
                    grad[q] += g;
                }
            }
        }

        (value, grad)
    }
}

pub fn build_objective(
    instances: &WeightedInstances,
    spec: &KernelSpec,
    lambda: f64,
    fusion: Option<&FusionTerm>,
) -> Result<(Objective, Option<DMatrix<f64>>)> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    if instances.weights.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidInput("instance weights must be nonnegative".into()));
    }
    if let Some(f) = fusion {
        f.validate()?;
        if f.anchor_covariates.ncols() != instances.covariates.ncols() {
            return Err(Error::DimensionMismatch("fusion anchors have wrong covariate count".into()));
        }
    }
    let n = instances.n();
    let labels: Vec<f64> = instances.labels.iter().map(|&l| l as f64).collect();
    match spec {
        KernelSpec::Linear => {
            let fusion_rows = fusion.map(|f| {
                (
                    f.anchor_covariates.clone(),
                    f.anchor_scores.iter().map(|&s| s as f64).collect(),
                    f.strength / f.anchor_scores.len() as f64,
                )
            });
            Ok((
                Objective {
                    data_rows: instances.covariates.clone(),
                    labels,
                    weights: instances.weights.clone(),
                    inv_n: 1.0 / n as f64,
                    lambda,
                    penalty_gram: None,
                    fusion_rows,
                },
                None,
            ))
        }
        KernelSpec::Rbf { .. } => {
            // Representer support: training covariates, then the anchors, so the
            // fusion evaluations stay inside the expansion span.
            let support = match fusion {
                Some(f) => {
                    let mut rows: Vec<_> =
                        (0..n).map(|i| instances.covariates.row(i)).collect();
                    rows.extend((0..f.anchor_covariates.nrows()).map(|k| f.anchor_covariates.row(k)));
                    DMatrix::from_rows(&rows)
                }
                None => instances.covariates.clone(),
            };
            let mut k_ss = gram_entries(spec, &support, &support)?;
            // enforce exact symmetry for the quadratic penalty
            let kt = k_ss.transpose();
            k_ss = (k_ss + kt) * 0.5;
            let data_rows = k_ss.rows(0, n).into_owned();
            let fusion_rows = fusion.map(|f| {
                let a = f.anchor_covariates.nrows();
                (
                    k_ss.rows(n, a).into_owned(),
                    f.anchor_scores.iter().map(|&s| s as f64).collect(),
                    f.strength / a as f64,
                )
            });
            Ok((
                Objective {
                    data_rows,
                    labels,
                    weights: instances.weights.clone(),
                    inv_n: 1.0 / n as f64,
                    lambda,
                    penalty_gram: Some(k_ss),
                    fusion_rows,
                },
                Some(support),
            ))
        }
    }
}

/// Minimize the assembled objective with L-BFGS and backtracking line search.
///
/// The objective is smooth and convex, so the returned rule is a global
/// minimizer up to the gradient tolerance; hitting the iteration cap is
/// reported through `converged = false`.
pub fn solve(
    instances: &WeightedInstances,
    spec: &KernelSpec,
    lambda: f64,
    fusion: Option<&FusionTerm>,
    settings: &SolveSettings,
) -> Result<(DecisionRule, SolverStats)> {
    let (objective, support) = build_objective(instances, spec, lambda, fusion)?;
    let (theta, stats) = minimize(&objective, settings)?;
    let q = objective.dim() - 1;
    let coef = theta.rows(0, q).into_owned();
    let intercept = theta[q];
    let form = match spec {
        KernelSpec::Linear => RuleForm::Linear { weights: coef, intercept },
        KernelSpec::Rbf { .. } => RuleForm::Kernel {
            spec: *spec,
            support: support.expect("RBF objective carries its support"),
            coefficients: coef,
            intercept,
        },
    };
    Ok((DecisionRule { form, standardization: None }, stats))
}

pub(crate) fn minimize(
    objective: &Objective,
    settings: &SolveSettings,
) -> Result<(DVector<f64>, SolverStats)> {
    let d = objective.dim();
    let mut theta = DVector::<f64>::zeros(d);
    let (mut value, mut grad) = objective.eval(&theta);
    if !value.is_finite() {
        return Err(Error::Numerical("non-finite objective at the starting point".into()));
    }

    let mut s_hist: Vec<DVector<f64>> = Vec::new();
    let mut y_hist: Vec<DVector<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut iterations = 0;

    loop {
        let g_inf = grad.amax();
        if g_inf <= settings.grad_tol {
            return Ok((
                theta,
                SolverStats { iterations, converged: true, objective: value, grad_inf_norm: g_inf },
            ));
        }
        if iterations >= settings.max_iter {
            return Ok((
                theta,
                SolverStats { iterations, converged: false, objective: value, grad_inf_norm: g_inf },
            ));
        }

        // two-loop recursion
        let mut direction = -grad.clone();
        let m = s_hist.len();
        let mut alphas = vec![0.0; m];
        for i in (0..m).rev() {
            alphas[i] = rho_hist[i] * s_hist[i].dot(&direction);
            direction -= &y_hist[i] * alphas[i];
        }
        if m > 0 {
            let last = m - 1;
            let scale = s_hist[last].dot(&y_hist[last]) / y_hist[last].dot(&y_hist[last]);
            direction *= scale;
        }
        for i in 0..m {
            let b = rho_hist[i] * y_hist[i].dot(&direction);
            direction += &s_hist[i] * (alphas[i] - b);
        }
        let mut slope = grad.dot(&direction);
        if slope >= 0.0 {
            direction = -grad.clone();
            slope = grad.dot(&direction);
        }

        // backtracking Armijo
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = &theta + &direction * step;
            let (v, g) = objective.eval(&candidate);
            if !v.is_finite() {
                return Err(Error::Numerical("objective overflowed during line search".into()));
            }
            if v <= value + settings.ls_c1 * step * slope {
                accepted = Some((candidate, v, g));
                break;
            }
            step *= settings.ls_shrink;
        }
        let (new_theta, new_value, new_grad) = match accepted {
            Some(t) => t,
            None => {
                // no acceptable step: treat the current point as final
                return Ok((
                    theta,
                    SolverStats {
                        iterations,
                        converged: g_inf <= settings.grad_tol,
                        objective: value,
                        grad_inf_norm: g_inf,
                    },
                ));
            }
        };

        let s = &new_theta - &theta;
        let y = &new_grad - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            if s_hist.len() == settings.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
        }

        theta = new_theta;
        value = new_value;
        grad = new_grad;
        iterations += 1;
    }
}
