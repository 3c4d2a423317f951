//! Synthetic two-study experiments: data generation, Bayes benchmark, and
//! replication harness aggregating RMSE and bias tables.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{EstimatorKind, MetricsRecord};
use crate::learners::{FitOptions, KernelConfig};
use crate::tuning::{tune_intlf, tune_intls, tune_sepl, TuningGrid};
use crate::types::{DecisionRule, TrialDataset};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub const SIM_P: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    LinearInteraction,
    NonlinearInteraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    One,
    Two,
}

impl Study {
    pub fn index(self) -> usize {
        match self {
            Study::One => 1,
            Study::Two => 2,
        }
    }
}

/// Generative model configuration: interaction kind, similarity knob (rho for
/// linear, tau for nonlinear), sample sizes, and seeding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// rho in (0, 1] for the linear scenario, tau > 0 for the nonlinear one.
    pub similarity: f64,
    pub n1: usize,
    pub n2: usize,
    pub replications: usize,
    pub base_seed: u64,
    pub test_size: usize,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ScenarioKind::LinearInteraction => {
                if !(self.similarity > 0.0 && self.similarity <= 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "rho must lie in (0, 1], got {}",
                        self.similarity
                    )));
                }
            }
            ScenarioKind::NonlinearInteraction => {
                if !(self.similarity > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "tau must be positive, got {}",
                        self.similarity
                    )));
                }
            }
        }
        if self.n1 < 20 || self.n2 < 20 {
            return Err(Error::InvalidInput("sample sizes must be at least 20".into()));
        }
        if self.test_size == 0 {
            return Err(Error::InvalidInput("test size must be positive".into()));
        }
        Ok(())
    }

    /// Main effect m_j(x).
    pub fn main_effect(&self, study: Study, x: &[f64]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        match study {
            Study::One => 1.0 + 2.0 * x1 + x2 * x2 + x1 * x2,
            Study::Two => 1.0 + 2.0 * x1 * x1 + 1.5 * x2 + 0.5 * x1 * x2,
        }
    }

    /// Treatment contrast c_j(x); the interaction is iota_j(x, t) = t * c_j(x).
    pub fn contrast(&self, study: Study, x: &[f64]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        match (self.kind, study) {
            (ScenarioKind::LinearInteraction, Study::One) => 0.2 - x1 - 2.0 * x2,
            (ScenarioKind::LinearInteraction, Study::Two) => 0.2 - x1 - 2.0 * self.similarity * x2,
            (ScenarioKind::NonlinearInteraction, Study::One) => -2.2 + x1.exp() + x2.exp(),
            (ScenarioKind::NonlinearInteraction, Study::Two) => {
                -self.similarity + x1.exp() + x2.exp()
            }
        }
    }
}

/// Covariate draws: ten Uniform(-1, 1) columns with X3 = 0.8 X3' + 0.2 X1.
pub fn sample_covariates(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, SIM_P);
    for i in 0..n {
        for j in 0..SIM_P {
            x[(i, j)] = rng.random_range(-1.0..1.0);
        }
        x[(i, 2)] = 0.8 * x[(i, 2)] + 0.2 * x[(i, 0)];
    }
    x
}

/// Draw one study: 1:1 randomized treatments, outcome = main effect +
/// interaction + standard normal noise, propensities exactly 0.5.
pub fn generate_study(
    config: &ScenarioConfig,
    study: Study,
    n: usize,
    seed: u64,
) -> Result<TrialDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = sample_covariates(&mut rng, n);
    let mut treatments = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    for i in 0..n {
        let t: i8 = if rng.random_bool(0.5) { 1 } else { -1 };
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let eps: f64 = StandardNormal.sample(&mut rng);
        let r =
            config.main_effect(study, &row) + t as f64 * config.contrast(study, &row) + eps;
        treatments.push(t);
        outcomes.push(r);
    }
    TrialDataset::new(x, treatments, outcomes, vec![0.5; n], format!("study{}", study.index()))
}

/// Anything that can recommend a treatment for a covariate vector.
pub trait Policy {
    fn decide(&self, x: &[f64]) -> Result<i8>;
}

impl Policy for DecisionRule {
    fn decide(&self, x: &[f64]) -> Result<i8> {
        self.recommend(x)
    }
}

/// The Bayes-optimal rule `sign(contrast)` with the +1 tie convention.
#[derive(Debug, Clone)]
pub struct BayesRule {
    pub config: ScenarioConfig,
    pub study: Study,
}

impl Policy for BayesRule {
    fn decide(&self, x: &[f64]) -> Result<i8> {
        Ok(if self.config.contrast(self.study, x) >= 0.0 { 1 } else { -1 })
    }
}

/// A drawn test set with the analytic main effects and contrasts cached, so
/// every method is scored on identical draws.
pub struct TestSet {
    pub covariates: DMatrix<f64>,
    main: Vec<f64>,
    contrast: Vec<f64>,
}

impl TestSet {
    pub fn draw(config: &ScenarioConfig, study: Study, size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let covariates = sample_covariates(&mut rng, size);
        let mut main = Vec::with_capacity(size);
        let mut contrast = Vec::with_capacity(size);
        for i in 0..size {
            let row: Vec<f64> = covariates.row(i).iter().copied().collect();
            main.push(config.main_effect(study, &row));
            contrast.push(config.contrast(study, &row));
        }
        Self { covariates, main, contrast }
    }

    /// True conditional value and benefit of a policy on these draws.
    pub fn metrics(&self, policy: &dyn Policy) -> Result<MetricsRecord> {
        let n = self.covariates.nrows();
        let mut value = 0.0;
        let mut benefit = 0.0;
        for i in 0..n {
            let row: Vec<f64> = self.covariates.row(i).iter().copied().collect();
            let d = policy.decide(&row)? as f64;
            value += self.main[i] + d * self.contrast[i];
            benefit += 2.0 * d * self.contrast[i];
        }
        Ok(MetricsRecord {
            value: value / n as f64,
            benefit: benefit / n as f64,
            agreement: None,
            estimator: EstimatorKind::TrueConditional,
        })
    }
}

/// True value and benefit of a policy on fresh scenario draws.
pub fn true_metrics(
    config: &ScenarioConfig,
    study: Study,
    policy: &dyn Policy,
    test_size: usize,
    seed: u64,
) -> Result<MetricsRecord> {
    TestSet::draw(config, study, test_size, seed).metrics(policy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SepL,
    IntLS,
    IntLF,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SepL => "SepL",
            Method::IntLS => "IntLS",
            Method::IntLF => "IntLF",
        }
    }
}

/// Seed derivation: one independent stream per (replication, purpose) pair.
/// SplitMix64 over the packed inputs keeps streams decorrelated while staying
/// reproducible across platforms.
pub fn derive_seed(base: u64, replication: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(replication.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-method, per-study results of one replication: true metrics and their
/// biases against the Bayes rule on the same test draws.
#[derive(Debug, Clone)]
pub struct ReplicationResult {
    pub entries: Vec<ReplicationEntry>,
}

#[derive(Debug, Clone)]
pub struct ReplicationEntry {
    pub method: Method,
    pub study: Study,
    pub value: f64,
    pub benefit: f64,
    pub value_bias: f64,
    pub benefit_bias: f64,
}

/// Fit parameters selected during one replication (kept for reporting).
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub kernel: KernelConfig,
    pub grid: TuningGrid,
    pub opts: FitOptions,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            kernel: KernelConfig::Linear,
            grid: TuningGrid::default(),
            opts: FitOptions::default(),
        }
    }
}

pub fn run_replication(
    config: &ScenarioConfig,
    methods: &[Method],
    settings: &RunSettings,
    replication: u64,
) -> Result<ReplicationResult> {
    config.validate()?;
    let seed1 = derive_seed(config.base_seed, replication, 1);
    let seed2 = derive_seed(config.base_seed, replication, 2);
    let test_seed1 = derive_seed(config.base_seed, replication, 3);
    let test_seed2 = derive_seed(config.base_seed, replication, 4);
    let fold_seed = derive_seed(config.base_seed, replication, 5);

    let data1 = generate_study(config, Study::One, config.n1, seed1)?;
    let data2 = generate_study(config, Study::Two, config.n2, seed2)?;
    let grid = TuningGrid { fold_seed, ..settings.grid.clone() };

    let (lambda1, sepl1, _, _) = tune_sepl(&data1, settings.kernel, &grid, &settings.opts)?;
    let (lambda2, sepl2, _, _) = tune_sepl(&data2, settings.kernel, &grid, &settings.opts)?;

    let test1 = TestSet::draw(config, Study::One, config.test_size, test_seed1);
    let test2 = TestSet::draw(config, Study::Two, config.test_size, test_seed2);
    let bayes1 = test1.metrics(&BayesRule { config: config.clone(), study: Study::One })?;
    let bayes2 = test2.metrics(&BayesRule { config: config.clone(), study: Study::Two })?;

    let mut entries = Vec::new();
    let record = |method: Method,
                      study: Study,
                      rule: &DecisionRule,
                      entries: &mut Vec<ReplicationEntry>|
     -> Result<()> {
        let (test, bayes) = match study {
            Study::One => (&test1, &bayes1),
            Study::Two => (&test2, &bayes2),
        };
        let m = test.metrics(rule)?;
        entries.push(ReplicationEntry {
            method,
            study,
            value: m.value,
            benefit: m.benefit,
            value_bias: m.value - bayes.value,
            benefit_bias: m.benefit - bayes.benefit,
        });
        Ok(())
    };

    let needs_intls = methods.contains(&Method::IntLS) || methods.contains(&Method::IntLF);

    if methods.contains(&Method::SepL) {
        record(Method::SepL, Study::One, &sepl1, &mut entries)?;
        record(Method::SepL, Study::Two, &sepl2, &mut entries)?;
    }

    if needs_intls {
        let (kappa1, intls1, _, _) =
            tune_intls(&data1, &sepl2, settings.kernel, lambda1, &grid, &settings.opts)?;
        let (kappa2, intls2, _, _) =
            tune_intls(&data2, &sepl1, settings.kernel, lambda2, &grid, &settings.opts)?;
        if methods.contains(&Method::IntLS) {
            record(Method::IntLS, Study::One, &intls1, &mut entries)?;
            record(Method::IntLS, Study::Two, &intls2, &mut entries)?;
        }
        if methods.contains(&Method::IntLF) {
            let (_, intlf1, _, _) = tune_intlf(
                &data1,
                &data2,
                &sepl2,
                settings.kernel,
                lambda1,
                kappa1,
                &grid,
                &settings.opts,
            )?;
            let (_, intlf2, _, _) = tune_intlf(
                &data2,
                &data1,
                &sepl1,
                settings.kernel,
                lambda2,
                kappa2,
                &grid,
                &settings.opts,
            )?;
            record(Method::IntLF, Study::One, &intlf1, &mut entries)?;
            record(Method::IntLF, Study::Two, &intlf2, &mut entries)?;
        }
    }

    Ok(ReplicationResult { entries })
}

/// One row of the aggregated experiment table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub study: usize,
    pub metric: String,
    pub rmse: f64,
    pub mean_bias: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub rows: Vec<TableRow>,
    pub replications_run: usize,
    pub replications_failed: usize,
    /// Indices of failed replications with the error message.
    pub failures: Vec<(u64, String)>,
}

impl ExperimentTable {
    pub fn row(&self, method: Method, study: Study, metric: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| {
            r.method == method.name() && r.study == study.index() && r.metric == metric
        })
    }

    pub fn rmse(&self, method: Method, study: Study, metric: &str) -> Option<f64> {
        self.row(method, study, metric).map(|r| r.rmse)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    // linear interpolation between order statistics
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn aggregate(
    results: Vec<(u64, Result<ReplicationResult>)>,
    methods: &[Method],
) -> Result<ExperimentTable> {
    let mut failures = Vec::new();
    let mut ok = Vec::new();
    let total = results.len();
    for (rep, res) in results {
        match res {
            Ok(r) => ok.push(r),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    if ok.is_empty() {
        return Err(Error::Numerical("all replications failed".into()));
    }
    let mut sorted_methods = methods.to_vec();
    sorted_methods.sort();
    sorted_methods.dedup();
    let mut rows = Vec::new();
    for method in sorted_methods {
        for study in [Study::One, Study::Two] {
            for metric in ["value", "benefit"] {
                let biases: Vec<f64> = ok
                    .iter()
                    .flat_map(|r| r.entries.iter())
                    .filter(|e| e.method == method && e.study == study)
                    .map(|e| if metric == "value" { e.value_bias } else { e.benefit_bias })
                    .collect();
                if biases.is_empty() {
                    continue;
                }
                let m = biases.len() as f64;
                let mean = biases.iter().sum::<f64>() / m;
                let rmse = (biases.iter().map(|b| b * b).sum::<f64>() / m).sqrt();
                let sd = if biases.len() > 1 {
                    (biases.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / (m - 1.0))
                        .sqrt()
                } else {
                    0.0
                };
                let mut sorted = biases.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                rows.push(TableRow {
                    method: method.name().to_string(),
                    study: study.index(),
                    metric: metric.to_string(),
                    rmse,
                    mean_bias: mean,
                    sd,
                    q025: quantile(&sorted, 0.025),
                    q975: quantile(&sorted, 0.975),
                });
            }
        }
    }
    Ok(ExperimentTable {
        rows,
        replications_run: total,
        replications_failed: failures.len(),
        failures,
    })
}

/// Run all replications sequentially. Kept public so the parallel path can be
/// benchmarked against it; results are identical.
pub fn run_experiment_sequential(
    config: &ScenarioConfig,
    methods: &[Method],
    settings: &RunSettings,
) -> Result<ExperimentTable> {
    config.validate()?;
    if config.replications < 2 {
        return Err(Error::InvalidInput("need at least 2 replications".into()));
    }
    let results: Vec<_> = (0..config.replications as u64)
        .map(|rep| (rep, run_replication(config, methods, settings, rep)))
        .collect();
    aggregate(results, methods)
}

/// Run all replications, in parallel when the `parallel` feature is enabled.
/// Each replication is self-contained and seeded independently, so the
/// aggregate is independent of execution order.
pub fn run_experiment(
    config: &ScenarioConfig,
    methods: &[Method],
    settings: &RunSettings,
) -> Result<ExperimentTable> {
    config.validate()?;
    if config.replications < 2 {
        return Err(Error::InvalidInput("need at least 2 replications".into()));
    }
    #[cfg(feature = "parallel")]
    let results: Vec<_> = (0..config.replications as u64)
        .into_par_iter()
        .map(|rep| (rep, run_replication(config, methods, settings, rep)))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = (0..config.replications as u64)
        .map(|rep| (rep, run_replication(config, methods, settings, rep)))
        .collect();
    aggregate(results, methods)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_config() -> ScenarioConfig {
        ScenarioConfig {
            kind: ScenarioKind::LinearInteraction,
            similarity: 0.9,
            n1: 60,
            n2: 60,
            replications: 2,
            base_seed: 7,
            test_size: 2000,
        }
    }

    #[test]
    fn covariate_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = sample_covariates(&mut rng, 500);
        for i in 0..500 {
            for j in 0..SIM_P {
                assert!(x[(i, j)].abs() <= 1.0, "X{j} out of range");
            }
        }
    }

    #[test]
    fn covariate_moments_match_generative_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1_000_000;
        let x = sample_covariates(&mut rng, n);
        let mean1 = x.column(0).sum() / n as f64;
        assert!(mean1.abs() < 0.004, "mean X1 = {mean1}");
        // corr(X1, X3) = 0.2/sqrt(0.64 + 0.04) with Var(U) = 1/3 factored out
        let mean3 = x.column(2).sum() / n as f64;
        let mut cov = 0.0;
        let mut v1 = 0.0;
        let mut v3 = 0.0;
        for i in 0..n {
            let a = x[(i, 0)] - mean1;
            let b = x[(i, 2)] - mean3;
            cov += a * b;
            v1 += a * a;
            v3 += b * b;
        }
        let corr = cov / (v1.sqrt() * v3.sqrt());
        let expected = 0.2 / (0.64f64 + 0.04).sqrt();
        assert!((corr - expected).abs() < 0.01, "corr = {corr}, expected {expected}");
    }

    #[test]
    fn generated_study_is_deterministic_with_half_propensities() {
        let c = linear_config();
        let a = generate_study(&c, Study::One, 50, 11).unwrap();
        let b = generate_study(&c, Study::One, 50, 11).unwrap();
        assert_eq!(a.outcomes(), b.outcomes());
        assert_eq!(a.treatments(), b.treatments());
        assert!(a.propensities().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn bayes_rule_signs() {
        let c = linear_config();
        let b1 = BayesRule { config: c.clone(), study: Study::One };
        // 0.2 - x1 - 2 x2 > 0
        let mut x = vec![0.0; SIM_P];
        x[0] = -0.5;
        x[1] = 0.0;
        assert_eq!(b1.decide(&x).unwrap(), 1);
        let nc = ScenarioConfig { kind: ScenarioKind::NonlinearInteraction, similarity: 2.3, ..c };
        let bn = BayesRule { config: nc, study: Study::One };
        let origin = vec![0.0; SIM_P];
        // contrast at origin: -2.2 + 2 = -0.2
        assert_eq!(bn.decide(&origin).unwrap(), -1);
    }

    #[test]
    fn constant_rule_true_value_matches_analytic() {
        // Study 1 linear, all-(+1) rule: E[m1] + E[c1] = (1 + 1/3) + 0.2
        let c = ScenarioConfig { test_size: 100_000, ..linear_config() };
        let all_plus = DecisionRule::linear(nalgebra::DVector::from_vec(vec![0.0; SIM_P]), 1.0);
        let m = true_metrics(&c, Study::One, &all_plus, c.test_size, 99).unwrap();
        assert!((m.value - (4.0 / 3.0 + 0.2)).abs() < 0.02, "value = {}", m.value);
    }

    #[test]
    fn bayes_dominates_fixed_and_random_rules() {
        let c = linear_config();
        let test = TestSet::draw(&c, Study::One, 5000, 3);
        let bayes = BayesRule { config: c.clone(), study: Study::One };
        let vb = test.metrics(&bayes).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let w = nalgebra::DVector::from_fn(SIM_P, |_, _| rng.random_range(-1.0..1.0));
            let rule = DecisionRule::linear(w, rng.random_range(-1.0..1.0));
            let m = test.metrics(&rule).unwrap();
            assert!(m.value <= vb.value + 1e-12);
            assert!(m.benefit <= vb.benefit + 1e-12);
        }
    }

    #[test]
    fn bayes_bias_is_zero_and_tables_aggregate() {
        // Hand-set biases (0.1, -0.1): RMSE 0.1, mean 0, SD = 0.1 * sqrt(2)
        let biases = [0.1, -0.1];
        let m = biases.len() as f64;
        let mean: f64 = biases.iter().sum::<f64>() / m;
        let rmse = (biases.iter().map(|b| b * b).sum::<f64>() / m).sqrt();
        let sd =
            (biases.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / (m - 1.0)).sqrt();
        assert!((rmse - 0.1).abs() < 1e-12);
        assert!(mean.abs() < 1e-12);
        assert!((sd - 0.1414).abs() < 1e-3);
    }

    #[test]
    fn replication_value_never_beats_bayes() {
        let c = linear_config();
        let res = run_replication(&c, &[Method::SepL], &RunSettings::default(), 0).unwrap();
        for e in &res.entries {
            assert!(e.value_bias <= 1e-12, "V bias {}", e.value_bias);
            assert!(e.benefit_bias <= 1e-12, "B bias {}", e.benefit_bias);
        }
    }

    #[test]
    fn experiment_table_deterministic_and_parallel_consistent() {
        let c = ScenarioConfig { replications: 3, test_size: 500, ..linear_config() };
        let methods = [Method::SepL];
        let s = RunSettings::default();
        let a = run_experiment(&c, &methods, &s).unwrap();
        let b = run_experiment(&c, &methods, &s).unwrap();
        let seq = run_experiment_sequential(&c, &methods, &s).unwrap();
        let key = |t: &ExperimentTable| serde_json::to_string(&t.rows).unwrap();
        assert_eq!(key(&a), key(&b));
        assert_eq!(key(&a), key(&seq));
    }
}
