//! The three fitting pipelines: SepL, IntLS, and IntLF.
//!
//! Each pipeline runs nuisance regression, residual sign-flipping, and the
//! surrogate solve; the integrative variants add pseudo-outcomes built from the
//! other study's rule and (for IntLF) a fusion term over its covariates.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::kernels::median_bandwidth;
use crate::nuisance::{fit_g, residuals};
use crate::surrogate::{sign_flip, solve, FusionTerm, SolveSettings, SolverStats};
use crate::types::{DecisionRule, KernelSpec, Standardization, TrialDataset};

/// Kernel choice with the bandwidth policy left open until training data is seen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelConfig {
    Linear,
    /// RBF with the median-heuristic bandwidth computed on the (standardized)
    /// training covariates.
    RbfMedian,
    RbfFixed(f64),
}

impl KernelConfig {
    pub fn is_rbf(&self) -> bool {
        !matches!(self, KernelConfig::Linear)
    }

    fn resolve(&self, x: &DMatrix<f64>) -> Result<KernelSpec> {
        match self {
            KernelConfig::Linear => Ok(KernelSpec::Linear),
            KernelConfig::RbfMedian => Ok(KernelSpec::Rbf { sigma: median_bandwidth(x)? }),
            KernelConfig::RbfFixed(sigma) => {
                let spec = KernelSpec::Rbf { sigma: *sigma };
                spec.validate()?;
                Ok(spec)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Standardize covariates before fitting; `None` means the default policy
    /// (off for linear kernels, on for RBF).
    pub standardize: Option<bool>,
    pub settings: SolveSettings,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { standardize: None, settings: SolveSettings::default() }
    }
}

/// Pseudo-outcomes `r + kappa * pi * sign(t * f'(x))` with `sign(0) = 0`.
#[derive(Debug, Clone)]
pub struct PseudoOutcomes {
    pub values: Vec<f64>,
    pub kappa: f64,
}

struct Prepared {
    standardization: Option<Standardization>,
    covariates: DMatrix<f64>,
    spec: KernelSpec,
}

fn prepare(data: &TrialDataset, kernel: KernelConfig, opts: &FitOptions) -> Result<Prepared> {
    let standardize = opts.standardize.unwrap_or(kernel.is_rbf());
    let (standardization, covariates) = if standardize {
        let st = Standardization::from_data(data.covariates());
        let x = st.apply_matrix(data.covariates());
        (Some(st), x)
    } else {
        (None, data.covariates().clone())
    };
    let spec = kernel.resolve(&covariates)?;
    Ok(Prepared { standardization, covariates, spec })
}

fn fit_from_responses(
    data: &TrialDataset,
    responses: &[f64],
    prep: &Prepared,
    lambda: f64,
    fusion: Option<&FusionTerm>,
    settings: &SolveSettings,
) -> Result<(DecisionRule, SolverStats)> {
    let g = fit_g(data, responses)?;
    let deltas = residuals(data, responses, &g)?;
    let instances = sign_flip(&deltas, data.treatments(), data.propensities(), &prep.covariates)?;
    let (mut rule, stats) = solve(&instances, &prep.spec, lambda, fusion, settings)?;
    rule.standardization = prep.standardization.clone();
    Ok((rule, stats))
}

/// Separate learning: doubly robust outcome-weighted learning on one study.
pub fn fit_sepl(
    data: &TrialDataset,
    kernel: KernelConfig,
    lambda: f64,
    opts: &FitOptions,
) -> Result<(DecisionRule, SolverStats)> {
    let prep = prepare(data, kernel, opts)?;
    fit_from_responses(data, data.outcomes(), &prep, lambda, None, &opts.settings)
}

fn sign3(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Shift each outcome by `kappa * pi * sign(t * f'(x))`, rewarding agreement
/// with the external rule. A zero external score contributes nothing.
pub fn pseudo_outcomes(
    data: &TrialDataset,
    kappa: f64,
    external: &DecisionRule,
) -> Result<PseudoOutcomes> {
    let mut values = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let s = sign3(data.treatments()[i] as f64 * external.predict_score(&data.covariate_row(i))?);
        values.push(data.outcomes()[i] + kappa * data.propensities()[i] * s);
    }
    Ok(PseudoOutcomes { values, kappa })
}

/// IntLS: pseudo-outcome pipeline with the nuisance model refit on the shifted
/// outcomes, then the same sign-flipped solve as SepL.
pub fn fit_intls(
    data: &TrialDataset,
    external: &DecisionRule,
    kernel: KernelConfig,
    lambda: f64,
    kappa: f64,
    opts: &FitOptions,
) -> Result<(DecisionRule, SolverStats)> {
    let prep = prepare(data, kernel, opts)?;
    let pseudo = pseudo_outcomes(data, kappa, external)?;
    fit_from_responses(data, &pseudo.values, &prep, lambda, None, &opts.settings)
}

/// IntLF: the IntLS pipeline plus a fusion loss evaluated at the other study's
/// covariates, pulling this study's decision function toward the external rule.
pub fn fit_intlf(
    data_j: &TrialDataset,
    data_jp: &TrialDataset,
    external: &DecisionRule,
    kernel: KernelConfig,
    lambda: f64,
    kappa_j: f64,
    kappa_jp: f64,
    opts: &FitOptions,
) -> Result<(DecisionRule, SolverStats)> {
    if data_j.p() != data_jp.p() {
        return Err(crate::error::Error::DimensionMismatch(
            "studies have different covariate schemas".into(),
        ));
    }
    let prep = prepare(data_j, kernel, opts)?;
    let pseudo = pseudo_outcomes(data_j, kappa_j, external)?;
    let fusion = if kappa_jp > 0.0 {
        let anchors_raw = data_jp.covariates();
        let anchors = match &prep.standardization {
            Some(st) => st.apply_matrix(anchors_raw),
            None => anchors_raw.clone(),
        };
        let mut scores = Vec::with_capacity(data_jp.n());
        for i in 0..data_jp.n() {
            let s = external.predict_score(&data_jp.covariate_row(i))?;
            scores.push(if s < 0.0 { -1 } else { 1 });
        }
        Some(FusionTerm { anchor_covariates: anchors, anchor_scores: scores, strength: kappa_jp })
    } else {
        None
    };
    fit_from_responses(data_j, &pseudo.values, &prep, lambda, fusion.as_ref(), &opts.settings)
}
