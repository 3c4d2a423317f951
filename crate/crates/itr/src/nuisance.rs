//! Weighted least-squares estimation of the nuisance regression g and residuals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::TrialDataset;

/// Linear nuisance model `g(x) = intercept + coefficients' x`.
#[derive(Debug, Clone)]
pub struct GModel {
    pub coefficients: DVector<f64>,
    pub intercept: f64,
}

impl GModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// Weighted regression of `responses` on the covariates with weights
/// `pi(-t, x) / pi(t, x) = (1 - pi_i) / pi_i`, solved by normal equations.
///
/// If the unregularized system is singular, a ridge jitter of 1e-8 is added to
/// the covariate block (the intercept stays unpenalized).
pub fn fit_g(data: &TrialDataset, responses: &[f64]) -> Result<GModel> {
    let n = data.n();
    if responses.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "responses length {} != n {}",
            responses.len(),
            n
        )));
    }
    let weights: Vec<f64> = data.propensities().iter().map(|&pi| (1.0 - pi) / pi).collect();
    fit_weighted_ls(data.covariates(), responses, &weights)
}

/// Core weighted least squares with intercept; shared with the per-arm
/// outcome models used by AIPWE.
pub fn fit_weighted_ls(x: &DMatrix<f64>, responses: &[f64], weights: &[f64]) -> Result<GModel> {
    let n = x.nrows();
    let p = x.ncols();
    let d = p + 1;
    // A = D' W D, b = D' W r with design D = [1, X].
    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    for i in 0..n {
        let w = weights[i];
        let mut row = Vec::with_capacity(d);
        row.push(1.0);
        row.extend(x.row(i).iter().copied());
        for j in 0..d {
            b[j] += w * row[j] * responses[i];
            for k in j..d {
                a[(j, k)] += w * row[j] * row[k];
            }
        }
    }
    for j in 0..d {
        for k in 0..j {
            a[(j, k)] = a[(k, j)];
        }
    }
    let solve = |a: DMatrix<f64>| -> Option<DVector<f64>> {
        a.cholesky().map(|ch| ch.solve(&b))
    };
    let sol = match solve(a.clone()) {
        Some(s) => s,
        None => {
            let mut aj = a;
            for j in 1..d {
                aj[(j, j)] += 1e-8;
            }
            solve(aj).ok_or_else(|| {
                Error::Numerical("nuisance regression design is singular even after jitter".into())
            })?
        }
    };
    Ok(GModel { intercept: sol[0], coefficients: sol.rows(1, p).into_owned() })
}

/// Residuals `delta_i = responses_i - g(x_i)`.
pub fn residuals(data: &TrialDataset, responses: &[f64], model: &GModel) -> Result<Vec<f64>> {
    if responses.len() != data.n() {
        return Err(Error::DimensionMismatch("responses length != n".into()));
    }
    Ok((0..data.n())
        .map(|i| responses[i] - model.predict(&data.covariate_row(i)))
        .collect())
}
