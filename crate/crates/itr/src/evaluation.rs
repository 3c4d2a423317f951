//! Value, benefit, AIPWE, and agreement metrics for fitted rules.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::{fit_weighted_ls, GModel};
use crate::types::{DecisionRule, TrialDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Ipw,
    Aipwe,
    TrueConditional,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub value: f64,
    pub benefit: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agreement: Option<f64>,
    pub estimator: EstimatorKind,
}

/// Inverse-probability-weighted value: `(1/n) sum r_i 1{t_i = d(x_i)} / pi_i`.
pub fn ipw_value(data: &TrialDataset, rule: &DecisionRule) -> Result<f64> {
    let n = data.n();
    let mut total = 0.0;
    for i in 0..n {
        if data.treatments()[i] == rule.recommend(&data.covariate_row(i))? {
            total += data.outcomes()[i] / data.propensities()[i];
        }
    }
    Ok(total / n as f64)
}

/// Per-arm linear outcome models `Q(x, +1)` and `Q(x, -1)`, ordinary least
/// squares on the arm subsets.
pub fn fit_arm_models(data: &TrialDataset) -> Result<(GModel, GModel)> {
    let fit_arm = |arm: i8| -> Result<GModel> {
        let idx: Vec<usize> =
            (0..data.n()).filter(|&i| data.treatments()[i] == arm).collect();
        if idx.is_empty() {
            return Err(Error::InvalidInput(format!("no observations in arm {arm}")));
        }
        let rows: Vec<_> = idx.iter().map(|&i| data.covariates().row(i)).collect();
        let x = DMatrix::from_rows(&rows);
        let r: Vec<f64> = idx.iter().map(|&i| data.outcomes()[i]).collect();
        fit_weighted_ls(&x, &r, &vec![1.0; idx.len()])
    };
    Ok((fit_arm(1)?, fit_arm(-1)?))
}

/// Doubly robust value estimate with outcome models for each arm.
pub fn aipwe_value(
    data: &TrialDataset,
    rule: &DecisionRule,
    q_plus: &GModel,
    q_minus: &GModel,
) -> Result<f64> {
    let n = data.n();
    let mut total = 0.0;
    for i in 0..n {
        let x = data.covariate_row(i);
        let d = rule.recommend(&x)?;
        let m_hat = if d == 1 { q_plus.predict(&x) } else { q_minus.predict(&x) };
        let mut term = m_hat;
        if data.treatments()[i] == d {
            term += (data.outcomes()[i] - m_hat) / data.propensities()[i];
        }
        total += term;
    }
    Ok(total / n as f64)
}

fn negate(rule: &DecisionRule) -> DecisionRule {
    use crate::types::RuleForm;
    let form = match &rule.form {
        RuleForm::Linear { weights, intercept } => RuleForm::Linear {
            weights: -weights,
            // nudge so sign(0) of the negated rule opposes the original's +1 tie
            intercept: -intercept - 1e-300,
        },
        RuleForm::Kernel { spec, support, coefficients, intercept } => RuleForm::Kernel {
            spec: *spec,
            support: support.clone(),
            coefficients: -coefficients,
            intercept: -intercept - 1e-300,
        },
    };
    DecisionRule { form, standardization: rule.standardization.clone() }
}

/// `value(d) - value(-d)` under the chosen estimator.
pub fn benefit(data: &TrialDataset, rule: &DecisionRule, estimator: EstimatorKind) -> Result<f64> {
    let neg = negate(rule);
    match estimator {
        EstimatorKind::Ipw => Ok(ipw_value(data, rule)? - ipw_value(data, &neg)?),
        EstimatorKind::Aipwe => {
            let (qp, qm) = fit_arm_models(data)?;
            Ok(aipwe_value(data, rule, &qp, &qm)? - aipwe_value(data, &neg, &qp, &qm)?)
        }
        EstimatorKind::TrueConditional => Err(Error::InvalidInput(
            "true-conditional benefit needs a scenario; use sim::true_metrics".into(),
        )),
    }
}

/// Fraction of rows where two rules recommend the same arm.
pub fn agreement_rate(a: &DecisionRule, b: &DecisionRule, x: &DMatrix<f64>) -> Result<f64> {
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("agreement rate over an empty matrix".into()));
    }
    let mut agree = 0usize;
    for i in 0..x.nrows() {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        if a.recommend(&row)? == b.recommend(&row)? {
            agree += 1;
        }
    }
    Ok(agree as f64 / x.nrows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn data_2() -> TrialDataset {
        TrialDataset::new(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            vec![1, -1],
            vec![1.0, 3.0],
            vec![0.5, 0.5],
            "e",
        )
        .unwrap()
    }

    #[test]
    fn ipw_matches_all() {
        // rule = sign(x): matches t at both rows; (1/2)(1/0.5 + 3/0.5) = 4
        let rule = DecisionRule::linear(DVector::from_vec(vec![1.0]), 0.0);
        assert_relative_eq!(ipw_value(&data_2(), &rule).unwrap(), 4.0);
    }

    #[test]
    fn ipw_matches_none() {
        let rule = DecisionRule::linear(DVector::from_vec(vec![-1.0]), -0.5);
        assert_relative_eq!(ipw_value(&data_2(), &rule).unwrap(), 0.0);
    }

    #[test]
    fn ipw_partial_match() {
        // all-(-1) rule matches only the second row (r = 3): (1/2)(3/0.5) = 3
        let rule = DecisionRule::linear(DVector::from_vec(vec![0.0]), -1.0);
        assert_relative_eq!(ipw_value(&data_2(), &rule).unwrap(), 3.0);
    }

    #[test]
    fn aipwe_with_zero_models_equals_ipw() {
        let zero = GModel { coefficients: DVector::from_vec(vec![0.0]), intercept: 0.0 };
        let rule = DecisionRule::linear(DVector::from_vec(vec![1.0]), 0.3);
        let d = data_2();
        assert_eq!(
            aipwe_value(&d, &rule, &zero, &zero).unwrap(),
            ipw_value(&d, &rule).unwrap()
        );
    }

    #[test]
    fn aipwe_perfect_models_give_mean_outcome() {
        // rule matches every treatment and m(x, d) = r pointwise
        let d = TrialDataset::new(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            vec![1, -1],
            vec![2.0, -2.0],
            vec![0.5, 0.5],
            "e",
        )
        .unwrap();
        let rule = DecisionRule::linear(DVector::from_vec(vec![1.0]), 0.0);
        let q = GModel { coefficients: DVector::from_vec(vec![2.0]), intercept: 0.0 };
        assert_relative_eq!(aipwe_value(&d, &rule, &q, &q).unwrap(), 0.0);
    }

    #[test]
    fn aipwe_matches_hand_expansion() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let d = TrialDataset::new(
            x.clone(),
            vec![1, -1, 1, -1],
            vec![0.7, -0.2, 1.1, 0.4],
            vec![0.4, 0.6, 0.5, 0.3],
            "e",
        )
        .unwrap();
        let rule = DecisionRule::linear(DVector::from_vec(vec![0.8, -0.4]), 0.1);
        let qp = GModel { coefficients: DVector::from_vec(vec![0.3, 0.2]), intercept: 0.5 };
        let qm = GModel { coefficients: DVector::from_vec(vec![-0.1, 0.6]), intercept: -0.2 };
        let mut expected = 0.0;
        for i in 0..4 {
            let row = d.covariate_row(i);
            let di = rule.recommend(&row).unwrap();
            let m = if di == 1 { qp.predict(&row) } else { qm.predict(&row) };
            let ind = if d.treatments()[i] == di { 1.0 } else { 0.0 };
            expected += (d.outcomes()[i] - m) * ind / d.propensities()[i] + m;
        }
        expected /= 4.0;
        assert_relative_eq!(
            aipwe_value(&d, &rule, &qp, &qm).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn benefit_antisymmetric() {
        let rule = DecisionRule::linear(DVector::from_vec(vec![1.0]), 0.2);
        let neg = DecisionRule::linear(DVector::from_vec(vec![-1.0]), -0.2 - 1e-300);
        let d = data_2();
        for kind in [EstimatorKind::Ipw, EstimatorKind::Aipwe] {
            let b = benefit(&d, &rule, kind).unwrap();
            let bn = benefit(&d, &neg, kind).unwrap();
            assert_relative_eq!(b, -bn, epsilon = 1e-10);
        }
    }

    #[test]
    fn ipw_benefit_expansion() {
        // pi = 0.5: benefit = (2/n)(sum matched r - sum unmatched r)
        let d = data_2();
        let rule = DecisionRule::linear(DVector::from_vec(vec![0.0]), 1.0); // all +1
        let b = benefit(&d, &rule, EstimatorKind::Ipw).unwrap();
        assert_relative_eq!(b, (2.0 / 2.0) * (1.0 - 3.0), epsilon = 1e-12);
    }

    #[test]
    fn agreement_cases() {
        let x = DMatrix::from_row_slice(4, 1, &[-1.0, -0.4, 0.3, 2.0]);
        let a = DecisionRule::linear(DVector::from_vec(vec![1.0]), 0.0);
        let b = DecisionRule::linear(DVector::from_vec(vec![-1.0]), 0.0);
        assert_eq!(agreement_rate(&a, &a, &x).unwrap(), 1.0);
        assert_eq!(agreement_rate(&a, &b, &x).unwrap(), 0.0);
        // intercept shift moves the boundary: sign(x) vs sign(x - 0.5)
        let c = DecisionRule::linear(DVector::from_vec(vec![1.0]), -0.5);
        assert_eq!(agreement_rate(&a, &c, &x).unwrap(), 0.75);
        let empty = DMatrix::<f64>::zeros(0, 1);
        assert!(agreement_rate(&a, &b, &empty).is_err());
    }
}
