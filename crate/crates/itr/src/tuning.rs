//! k-fold cross-validation and the sequential lambda-then-kappa selection used
//! by all three learners.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::ipw_value;
use crate::learners::{fit_intlf, fit_intls, fit_sepl, FitOptions, KernelConfig};
use crate::surrogate::SolverStats;
use crate::types::{CvTrace, DecisionRule, TrialDataset};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Tuning grids and fold configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningGrid {
    pub lambdas: Vec<f64>,
    /// Multiplied by mean |r| of the training data to form the kappa grid.
    pub kappa_multipliers: Vec<f64>,
    pub folds: usize,
    pub fold_seed: u64,
}

impl Default for TuningGrid {
    fn default() -> Self {
        Self {
            lambdas: vec![2f64.powi(-8), 2f64.powi(-6), 2f64.powi(-4), 2f64.powi(-2), 1.0, 4.0],
            kappa_multipliers: vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0],
            folds: 3,
            fold_seed: 0,
        }
    }
}

impl TuningGrid {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.kappa_multipliers.is_empty() {
            return Err(Error::InvalidInput("tuning grids must be nonempty".into()));
        }
        if !self.kappa_multipliers.contains(&0.0) {
            return Err(Error::InvalidInput("kappa grid must contain 0".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidInput("fold count must be at least 2".into()));
        }
        Ok(())
    }

    pub fn kappa_grid(&self, outcomes: &[f64]) -> Vec<f64> {
        let scale = outcomes.iter().map(|r| r.abs()).sum::<f64>() / outcomes.len() as f64;
        self.kappa_multipliers.iter().map(|m| m * scale).collect()
    }
}

/// Per-grid-point CV scores with the winning index.
#[derive(Debug, Clone)]
pub struct CvResult {
    pub grid: Vec<f64>,
    pub fold_scores: Vec<Vec<f64>>,
    pub mean_scores: Vec<f64>,
    pub winner: usize,
}

impl CvResult {
    pub fn trace(&self, parameter: &str) -> CvTrace {
        CvTrace {
            parameter: parameter.to_string(),
            grid: self.grid.clone(),
            mean_scores: self.mean_scores.clone(),
        }
    }
}

/// Disjoint index folds with sizes differing by at most one; deterministic in
/// the seed.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k > n {
        return Err(Error::InvalidInput(format!("cannot split {n} observations into {k} folds")));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(indices[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

/// Mean over folds of the held-out IPW value of a rule trained on the rest.
/// A held-out fold where the rule matches no observed treatment scores 0.
pub fn cv_score<F>(data: &TrialDataset, folds: &[Vec<usize>], fit: F) -> Result<Vec<f64>>
where
    F: Fn(&TrialDataset) -> Result<DecisionRule> + Sync,
{
    let run_fold = |held: &Vec<usize>| -> Result<f64> {
        let train: Vec<usize> =
            (0..data.n()).filter(|i| !held.contains(i)).collect();
        if train.is_empty() {
            return Err(Error::DegenerateInput(
                "a fold holds out every observation".into(),
            ));
        }
        let rule = fit(&data.subset(&train)?)?;
        ipw_value(&data.subset(held)?, &rule)
    };
    #[cfg(feature = "parallel")]
    let scores: Result<Vec<f64>> = folds.par_iter().map(run_fold).collect();
    #[cfg(not(feature = "parallel"))]
    let scores: Result<Vec<f64>> = folds.iter().map(run_fold).collect();
    scores
}

/// Winner = maximal mean score; ties broken toward the earlier (smaller) grid
/// point, so grids must be sorted ascending.
fn pick_winner(mean_scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in mean_scores.iter().enumerate().skip(1) {
        if s > mean_scores[best] {
            best = i;
        }
    }
    best
}

fn run_grid<F>(data: &TrialDataset, grid: &[f64], folds: &[Vec<usize>], fit: F) -> Result<CvResult>
where
    F: Fn(&TrialDataset, f64) -> Result<DecisionRule> + Sync,
{
    let eval_point =
        |&param: &f64| -> Result<Vec<f64>> { cv_score(data, folds, |d| fit(d, param)) };
    #[cfg(feature = "parallel")]
    let fold_scores: Result<Vec<Vec<f64>>> = grid.par_iter().map(eval_point).collect();
    #[cfg(not(feature = "parallel"))]
    let fold_scores: Result<Vec<Vec<f64>>> = grid.iter().map(eval_point).collect();
    let fold_scores = fold_scores?;
    let mean_scores: Vec<f64> = fold_scores
        .iter()
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect();
    let winner = pick_winner(&mean_scores);
    Ok(CvResult { grid: grid.to_vec(), fold_scores, mean_scores, winner })
}

/// Select lambda by CV over the SepL pipeline and refit on the full data.
pub fn tune_sepl(
    data: &TrialDataset,
    kernel: KernelConfig,
    grid: &TuningGrid,
    opts: &FitOptions,
) -> Result<(f64, DecisionRule, CvResult, SolverStats)> {
    grid.validate()?;
    let folds = kfold_split(data.n(), grid.folds, grid.fold_seed)?;
    let cv = run_grid(data, &grid.lambdas, &folds, |d, lambda| {
        Ok(fit_sepl(d, kernel, lambda, opts)?.0)
    })?;
    let lambda = cv.grid[cv.winner];
    let (rule, stats) = fit_sepl(data, kernel, lambda, opts)?;
    Ok((lambda, rule, cv, stats))
}

/// With lambda fixed, select kappa for IntLS against a full-data external rule.
pub fn tune_intls(
    data: &TrialDataset,
    external: &DecisionRule,
    kernel: KernelConfig,
    lambda: f64,
    grid: &TuningGrid,
    opts: &FitOptions,
) -> Result<(f64, DecisionRule, CvResult, SolverStats)> {
    grid.validate()?;
    let folds = kfold_split(data.n(), grid.folds, grid.fold_seed)?;
    let kappas = grid.kappa_grid(data.outcomes());
    let cv = run_grid(data, &kappas, &folds, |d, kappa| {
        Ok(fit_intls(d, external, kernel, lambda, kappa, opts)?.0)
    })?;
    let kappa = cv.grid[cv.winner];
    let (rule, stats) = fit_intls(data, external, kernel, lambda, kappa, opts)?;
    Ok((kappa, rule, cv, stats))
}

/// With lambda and the own-study kappa fixed, select the fusion strength.
#[allow(clippy::too_many_arguments)]
pub fn tune_intlf(
    data_j: &TrialDataset,
    data_jp: &TrialDataset,
    external: &DecisionRule,
    kernel: KernelConfig,
    lambda: f64,
    kappa_j: f64,
    grid: &TuningGrid,
    opts: &FitOptions,
) -> Result<(f64, DecisionRule, CvResult, SolverStats)> {
    grid.validate()?;
    let folds = kfold_split(data_j.n(), grid.folds, grid.fold_seed)?;
    let kappas = grid.kappa_grid(data_j.outcomes());
    let cv = run_grid(data_j, &kappas, &folds, |d, kappa_jp| {
        Ok(fit_intlf(d, data_jp, external, kernel, lambda, kappa_j, kappa_jp, opts)?.0)
    })?;
    let kappa_jp = cv.grid[cv.winner];
    let (rule, stats) =
        fit_intlf(data_j, data_jp, external, kernel, lambda, kappa_j, kappa_jp, opts)?;
    Ok((kappa_jp, rule, cv, stats))
}
