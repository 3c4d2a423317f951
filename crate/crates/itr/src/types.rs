//! Domain types shared by all modules: trial data, kernels, decision rules.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One randomized study: covariates, ±1 treatments, outcomes, propensities.
///
/// The shared comparator arm is coded `+1` in both studies of a pair.
#[derive(Debug, Clone)]
pub struct TrialDataset {
    covariates: DMatrix<f64>,
    treatments: Vec<i8>,
    outcomes: Vec<f64>,
    propensities: Vec<f64>,
    study_label: String,
}

impl TrialDataset {
    pub fn new(
        covariates: DMatrix<f64>,
        treatments: Vec<i8>,
        outcomes: Vec<f64>,
        propensities: Vec<f64>,
        study_label: impl Into<String>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        let p = covariates.ncols();
        if n == 0 || p == 0 {
            return Err(Error::InvalidInput("dataset must have n >= 1 and p >= 1".into()));
        }
        if treatments.len() != n || outcomes.len() != n || propensities.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "covariates have {n} rows but treatments/outcomes/propensities have lengths {}/{}/{}",
                treatments.len(),
                outcomes.len(),
                propensities.len()
            )));
        }
        if treatments.iter().any(|&t| t != 1 && t != -1) {
            return Err(Error::InvalidInput("treatments must be -1 or +1".into()));
        }
        if propensities.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::InvalidInput("propensities must lie strictly in (0, 1)".into()));
        }
        if covariates.iter().any(|v| !v.is_finite()) || outcomes.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("covariates and outcomes must be finite".into()));
        }
        Ok(Self { covariates, treatments, outcomes, propensities, study_label: study_label.into() })
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn covariate_row(&self, i: usize) -> Vec<f64> {
        self.covariates.row(i).iter().copied().collect()
    }

    pub fn treatments(&self) -> &[i8] {
        &self.treatments
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn propensities(&self) -> &[f64] {
        &self.propensities
    }

    pub fn study_label(&self) -> &str {
        &self.study_label
    }

    /// Row subset preserving the order of `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.iter().any(|&i| i >= self.n()) {
            return Err(Error::InvalidInput("subset index out of range".into()));
        }
        let rows: Vec<_> = indices.iter().map(|&i| self.covariates.row(i)).collect();
        let covariates = DMatrix::from_rows(&rows);
        Self::new(
            covariates,
            indices.iter().map(|&i| self.treatments[i]).collect(),
            indices.iter().map(|&i| self.outcomes[i]).collect(),
            indices.iter().map(|&i| self.propensities[i]).collect(),
            self.study_label.clone(),
        )
    }

    /// Same dataset with outcomes replaced (used for pseudo-outcome refits).
    pub fn with_outcomes(&self, outcomes: Vec<f64>) -> Result<Self> {
        Self::new(
            self.covariates.clone(),
            self.treatments.clone(),
            outcomes,
            self.propensities.clone(),
            self.study_label.clone(),
        )
    }
}

/// Two studies sharing the comparator arm (coded +1 in both).
#[derive(Debug, Clone)]
pub struct StudyPair {
    pub study1: TrialDataset,
    pub study2: TrialDataset,
}

impl StudyPair {
    pub fn new(study1: TrialDataset, study2: TrialDataset) -> Result<Self> {
        if study1.p() != study2.p() {
            return Err(Error::DimensionMismatch(format!(
                "studies have different covariate dimensions: {} vs {}",
                study1.p(),
                study2.p()
            )));
        }
        Ok(Self { study1, study2 })
    }
}

/// Kernel choice for the decision-function class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Linear,
    /// Gaussian RBF `k(x, x') = exp(-sigma * ||x - x'||^2)`.
    Rbf { sigma: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if let KernelSpec::Rbf { sigma } = self {
            if !(*sigma > 0.0) {
                return Err(Error::InvalidInput(format!("RBF bandwidth must be positive, got {sigma}")));
            }
        }
        Ok(())
    }
}

/// Per-column centering and scaling applied before rule evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    /// Column means and standard deviations of `x`; zero-variance columns get scale 1.
    pub fn from_data(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let p = x.ncols();
        let mut center = vec![0.0; p];
        let mut scale = vec![1.0; p];
        for j in 0..p {
            let col = x.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            center[j] = mean;
            let sd = var.sqrt();
            scale[j] = if sd > 0.0 { sd } else { 1.0 };
        }
        Self { center, scale }
    }

    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.center.iter().zip(self.scale.iter()))
            .map(|(v, (c, s))| (v - c) / s)
            .collect()
    }

    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for j in 0..x.ncols() {
            let (c, s) = (self.center[j], self.scale[j]);
            for i in 0..x.nrows() {
                out[(i, j)] = (out[(i, j)] - c) / s;
            }
        }
        out
    }
}

/// The functional form of a fitted decision function.
#[derive(Debug, Clone)]
pub enum RuleForm {
    Linear {
        weights: DVector<f64>,
        intercept: f64,
    },
    Kernel {
        spec: KernelSpec,
        /// Expansion points, rows in the (possibly standardized) covariate space.
        support: DMatrix<f64>,
        coefficients: DVector<f64>,
        intercept: f64,
    },
}

/// A decision rule `d(x) = sign(f(x))`, with `sign(0) = +1` (the shared comparator).
#[derive(Debug, Clone)]
pub struct DecisionRule {
    pub form: RuleForm,
    /// Applied to raw covariates before the form is evaluated.
    pub standardization: Option<Standardization>,
}

impl DecisionRule {
    pub fn linear(weights: DVector<f64>, intercept: f64) -> Self {
        Self { form: RuleForm::Linear { weights, intercept }, standardization: None }
    }

    fn input_dim(&self) -> usize {
        match &self.form {
            RuleForm::Linear { weights, .. } => weights.len(),
            RuleForm::Kernel { support, .. } => support.ncols(),
        }
    }

    /// Decision-function score `f(x)`.
    pub fn predict_score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "rule expects {} covariates, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let xs;
        let x = match &self.standardization {
            Some(st) => {
                xs = st.apply_row(x);
                xs.as_slice()
            }
            None => x,
        };
        let score = match &self.form {
            RuleForm::Linear { weights, intercept } => {
                weights.iter().zip(x.iter()).map(|(w, v)| w * v).sum::<f64>() + intercept
            }
            RuleForm::Kernel { spec, support, coefficients, intercept } => {
                let mut s = *intercept;
                for (i, a) in coefficients.iter().enumerate() {
                    let row: Vec<f64> = support.row(i).iter().copied().collect();
                    s += a * crate::kernels::kernel_eval(spec, x, &row)?;
                }
                s
            }
        };
        Ok(score)
    }

    /// Treatment recommendation: `+1` if `f(x) >= 0`, else `-1`.
    pub fn recommend(&self, x: &[f64]) -> Result<i8> {
        Ok(if self.predict_score(x)? >= 0.0 { 1 } else { -1 })
    }

    /// Scores for each row of a covariate matrix.
    pub fn scores(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        (0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                self.predict_score(&row)
            })
            .collect()
    }
}

/// Record of what tuning selected and how the final solve went.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub selected_lambda: f64,
    pub selected_kappa_own: Option<f64>,
    pub selected_kappa_cross: Option<f64>,
    /// (parameter value, mean held-out score) per grid point, per tuning stage.
    pub cv_traces: Vec<CvTrace>,
    pub final_objective: f64,
    pub solver_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvTrace {
    pub parameter: String,
    pub grid: Vec<f64>,
    pub mean_scores: Vec<f64>,
}

// --- JSON rule document -----------------------------------------------------

pub const RULE_FORMAT_VERSION: u32 = 1;

/// Self-describing serialized form of a [`DecisionRule`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum RuleFormDoc {
    Linear {
        weights: Vec<f64>,
        intercept: f64,
    },
    Kernel {
        kernel: KernelSpec,
        support: Vec<Vec<f64>>,
        coefficients: Vec<f64>,
        intercept: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleDocument {
    pub format_version: u32,
    #[serde(flatten)]
    pub form: RuleFormDoc,
    pub standardization: Option<Standardization>,
}

impl From<&DecisionRule> for RuleDocument {
    fn from(rule: &DecisionRule) -> Self {
        let form = match &rule.form {
            RuleForm::Linear { weights, intercept } => RuleFormDoc::Linear {
                weights: weights.iter().copied().collect(),
                intercept: *intercept,
            },
            RuleForm::Kernel { spec, support, coefficients, intercept } => RuleFormDoc::Kernel {
                kernel: *spec,
                support: (0..support.nrows())
                    .map(|i| support.row(i).iter().copied().collect())
                    .collect(),
                coefficients: coefficients.iter().copied().collect(),
                intercept: *intercept,
            },
        };
        RuleDocument { format_version: RULE_FORMAT_VERSION, form, standardization: rule.standardization.clone() }
    }
}

impl TryFrom<RuleDocument> for DecisionRule {
    type Error = Error;

    fn try_from(doc: RuleDocument) -> Result<Self> {
        if doc.format_version != RULE_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported rule format version {}",
                doc.format_version
            )));
        }
        let form = match doc.form {
            RuleFormDoc::Linear { weights, intercept } => RuleForm::Linear {
                weights: DVector::from_vec(weights),
                intercept,
            },
            RuleFormDoc::Kernel { kernel, support, coefficients, intercept } => {
                kernel.validate()?;
                if support.len() != coefficients.len() {
                    return Err(Error::DimensionMismatch(
                        "support row count must equal coefficient length".into(),
                    ));
                }
                if support.is_empty() {
                    return Err(Error::InvalidInput("kernel rule needs a nonempty support".into()));
                }
                let p = support[0].len();
                if support.iter().any(|r| r.len() != p) {
                    return Err(Error::DimensionMismatch("ragged support matrix".into()));
                }
                let support =
                    DMatrix::from_row_iterator(support.len(), p, support.iter().flatten().copied());
                RuleForm::Kernel {
                    spec: kernel,
                    support,
                    coefficients: DVector::from_vec(coefficients),
                    intercept,
                }
            }
        };
        Ok(DecisionRule { form, standardization: doc.standardization })
    }
}

impl DecisionRule {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&RuleDocument::from(self))
            .map_err(|e| Error::InvalidInput(format!("rule serialization failed: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: RuleDocument = serde_json::from_str(s)
            .map_err(|e| Error::InvalidInput(format!("rule parse failed: {e}")))?;
        doc.try_into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset() -> TrialDataset {
        TrialDataset::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            vec![1, -1],
            vec![0.5, -0.5],
            vec![0.5, 0.5],
            "toy",
        )
        .unwrap()
    }

    #[test]
    fn linear_score_dot_product() {
        let rule = DecisionRule::linear(DVector::from_vec(vec![1.0, -1.0]), 0.5);
        assert_eq!(rule.predict_score(&[2.0, 1.0]).unwrap(), 1.5);
    }

    #[test]
    fn zero_rule_scores_zero() {
        let rule = DecisionRule::linear(DVector::from_vec(vec![0.0, 0.0]), 0.0);
        assert_eq!(rule.predict_score(&[3.0, -7.0]).unwrap(), 0.0);
    }

    #[test]
    fn kernel_score_at_support_point() {
        let rule = DecisionRule {
            form: RuleForm::Kernel {
                spec: KernelSpec::Rbf { sigma: 1.0 },
                support: DMatrix::from_row_slice(1, 2, &[0.0, 0.0]),
                coefficients: DVector::from_vec(vec![2.0]),
                intercept: 0.0,
            },
            standardization: None,
        };
        assert!((rule.predict_score(&[0.0, 0.0]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn recommend_sign_convention() {
        let rule = DecisionRule::linear(DVector::from_vec(vec![1.0]), 0.0);
        assert_eq!(rule.recommend(&[1.5]).unwrap(), 1);
        assert_eq!(rule.recommend(&[-0.01]).unwrap(), -1);
        // Tie convention: zero score maps to +1, the shared comparator.
        assert_eq!(rule.recommend(&[0.0]).unwrap(), 1);
    }

    #[test]
    fn sign_invariant_to_positive_scaling() {
        let rule = DecisionRule::linear(DVector::from_vec(vec![1.0, -2.0]), 0.3);
        let scaled = DecisionRule::linear(DVector::from_vec(vec![7.0, -14.0]), 2.1);
        for x in [[0.5, 0.1], [-1.0, 2.0], [0.0, 0.0], [3.0, 1.4]] {
            assert_eq!(rule.recommend(&x).unwrap(), scaled.recommend(&x).unwrap());
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let rule = DecisionRule::linear(DVector::from_vec(vec![1.0, 2.0]), 0.0);
        assert!(rule.predict_score(&[1.0]).is_err());
    }

    #[test]
    fn dataset_invariants_enforced() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(TrialDataset::new(x.clone(), vec![0, 1], vec![0.0, 0.0], vec![0.5, 0.5], "s").is_err());
        assert!(TrialDataset::new(x.clone(), vec![1, 1], vec![0.0, 0.0], vec![0.0, 0.5], "s").is_err());
        assert!(TrialDataset::new(x, vec![1, 1], vec![f64::NAN, 0.0], vec![0.5, 0.5], "s").is_err());
    }

    #[test]
    fn study_pair_rejects_mismatched_p() {
        let a = toy_dataset();
        let b = TrialDataset::new(
            DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            vec![1, -1],
            vec![0.0, 0.0],
            vec![0.5, 0.5],
            "b",
        )
        .unwrap();
        assert!(StudyPair::new(a, b).is_err());
    }

    #[test]
    fn rule_json_round_trip() {
        let rule = DecisionRule {
            form: RuleForm::Kernel {
                spec: KernelSpec::Rbf { sigma: 0.25 },
                support: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0]),
                coefficients: DVector::from_vec(vec![0.5, -0.25]),
                intercept: 0.1,
            },
            standardization: Some(Standardization { center: vec![0.5, 1.0], scale: vec![1.0, 2.0] }),
        };
        let json = rule.to_json().unwrap();
        let back = DecisionRule::from_json(&json).unwrap();
        for x in [[0.0, 0.0], [1.0, -1.0], [2.5, 3.5]] {
            assert!((rule.predict_score(&x).unwrap() - back.predict_score(&x).unwrap()).abs() < 1e-15);
        }
    }
}
