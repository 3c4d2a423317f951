use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;

use itr::evaluation::{
    agreement_rate, aipwe_value, benefit, fit_arm_models, ipw_value, EstimatorKind, MetricsRecord,
};
use itr::learners::FitOptions;
use itr::sim::{self, ExperimentTable, Method, RunSettings, Study};
use itr::tuning::{tune_intlf, tune_intls, tune_sepl};
use itr::types::{DecisionRule, FitReport};
use itr::StudyPair;

use crate::config::{CliError, CliResult, RunConfig};
use crate::csvio;

/// Write a file atomically: temp file in the same directory, then rename.
fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn format_results_csv(table: &ExperimentTable) -> String {
    let mut out = String::from("method,study,metric,rmse,mean_bias,sd,q025,q975\n");
    for r in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.method, r.study, r.metric, r.rmse, r.mean_bias, r.sd, r.q025, r.q975
        ));
    }
    out
}

pub fn simulate(
    config_path: &Path,
    out: Option<&Path>,
    reps: Option<usize>,
    seed: Option<u64>,
) -> CliResult<()> {
    let config = RunConfig::load(config_path)?;
    let mut scenario = config.scenario()?;
    if let Some(r) = reps {
        scenario.replications = r;
    }
    if let Some(s) = seed {
        scenario.base_seed = s;
    }
    let settings = RunSettings {
        kernel: config.kernel(None)?,
        grid: config.grid(scenario.base_seed),
        opts: FitOptions {
            standardize: config.kernel.standardize,
            ..FitOptions::default()
        },
    };
    let methods = [Method::SepL, Method::IntLS, Method::IntLF];
    let table = sim::run_experiment(&scenario, &methods, &settings)?;

    let out_dir: PathBuf = out
        .map(Path::to_path_buf)
        .or_else(|| config.io.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    write_atomic(&out_dir.join("results.csv"), &format_results_csv(&table))?;
    write_atomic(
        &out_dir.join("results.json"),
        &serde_json::to_string_pretty(&table).map_err(|e| CliError::data(e.to_string()))?,
    )?;
    if !table.failures.is_empty() {
        let mut f = String::from("replication,error\n");
        for (rep, msg) in &table.failures {
            f.push_str(&format!("{rep},\"{}\"\n", msg.replace('"', "'")));
        }
        write_atomic(&out_dir.join("failures.csv"), &f)?;
    }
    println!(
        "wrote {} rows to {} ({} replications, {} failed)",
        table.rows.len(),
        out_dir.join("results.csv").display(),
        table.replications_run,
        table.replications_failed
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn fit(
    study1_path: &Path,
    study2_path: &Path,
    config_path: Option<&Path>,
    method: &str,
    kernel: &str,
    standardize: bool,
    seed: u64,
    out: &Path,
) -> CliResult<()> {
    let config = match config_path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let kernel = config.kernel(Some(kernel))?;
    let grid = config.grid(seed);
    let opts = FitOptions {
        standardize: if standardize { Some(true) } else { config.kernel.standardize },
        ..FitOptions::default()
    };

    let d1 = csvio::read_trial_csv(study1_path)?.dataset;
    let d2 = csvio::read_trial_csv(study2_path)?.dataset;
    let pair = StudyPair::new(d1, d2)?;
    let (d1, d2) = (&pair.study1, &pair.study2);

    let (lambda1, sepl1, cv_l1, stats1) = tune_sepl(d1, kernel, &grid, &opts)?;
    let (lambda2, sepl2, cv_l2, stats2) = tune_sepl(d2, kernel, &grid, &opts)?;

    let mut report1 = FitReport {
        selected_lambda: lambda1,
        selected_kappa_own: None,
        selected_kappa_cross: None,
        cv_traces: vec![cv_l1.trace("lambda")],
        final_objective: stats1.objective,
        solver_iterations: stats1.iterations,
        converged: stats1.converged,
    };
    let mut report2 = FitReport {
        selected_lambda: lambda2,
        selected_kappa_own: None,
        selected_kappa_cross: None,
        cv_traces: vec![cv_l2.trace("lambda")],
        final_objective: stats2.objective,
        solver_iterations: stats2.iterations,
        converged: stats2.converged,
    };

    let (rule1, rule2) = match method {
        "sepl" => (sepl1.clone(), sepl2.clone()),
        "intls" | "intlf" => {
            let (k1, intls1, cv_k1, s1) = tune_intls(d1, &sepl2, kernel, lambda1, &grid, &opts)?;
            let (k2, intls2, cv_k2, s2) = tune_intls(d2, &sepl1, kernel, lambda2, &grid, &opts)?;
            report1.selected_kappa_own = Some(k1);
            report2.selected_kappa_own = Some(k2);
            report1.cv_traces.push(cv_k1.trace("kappa_own"));
            report2.cv_traces.push(cv_k2.trace("kappa_own"));
            if method == "intls" {
                report1.final_objective = s1.objective;
                report1.solver_iterations = s1.iterations;
                report1.converged = s1.converged;
                report2.final_objective = s2.objective;
                report2.solver_iterations = s2.iterations;
                report2.converged = s2.converged;
                (intls1, intls2)
            } else {
                let (kc1, intlf1, cv_c1, f1) =
                    tune_intlf(d1, d2, &sepl2, kernel, lambda1, k1, &grid, &opts)?;
                let (kc2, intlf2, cv_c2, f2) =
                    tune_intlf(d2, d1, &sepl1, kernel, lambda2, k2, &grid, &opts)?;
                report1.selected_kappa_cross = Some(kc1);
                report2.selected_kappa_cross = Some(kc2);
                report1.cv_traces.push(cv_c1.trace("kappa_cross"));
                report2.cv_traces.push(cv_c2.trace("kappa_cross"));
                report1.final_objective = f1.objective;
                report1.solver_iterations = f1.iterations;
                report1.converged = f1.converged;
                report2.final_objective = f2.objective;
                report2.solver_iterations = f2.iterations;
                report2.converged = f2.converged;
                (intlf1, intlf2)
            }
        }
        other => return Err(CliError::usage(format!("unknown method \"{other}\""))),
    };

    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("rule_study1.json"), &rule1.to_json()?)?;
    write_atomic(&out.join("rule_study2.json"), &rule2.to_json()?)?;
    let report = json!({
        "method": method,
        "study1": report1,
        "study2": report2,
        "agreement_with_sepl": {
            "study1": agreement_rate(&rule1, &sepl1, d1.covariates())?,
            "study2": agreement_rate(&rule2, &sepl2, d2.covariates())?,
        },
    });
    write_atomic(
        &out.join("fit_report.json"),
        &serde_json::to_string_pretty(&report).map_err(|e| CliError::data(e.to_string()))?,
    )?;
    println!("wrote rules and fit report to {}", out.display());
    Ok(())
}

fn load_rule(path: &Path) -> CliResult<DecisionRule> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read rule {}: {e}", path.display())))?;
    Ok(DecisionRule::from_json(&text)?)
}

pub fn predict(rule_path: &Path, data_path: &Path, out: Option<&Path>) -> CliResult<()> {
    let rule = load_rule(rule_path)?;
    let x = csvio::read_covariates(data_path)?;
    let mut csv = String::from("row_id,score,recommendation\n");
    for i in 0..x.nrows() {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let score = rule.predict_score(&row)?;
        let rec = rule.recommend(&row)?;
        csv.push_str(&format!("{i},{score},{rec}\n"));
    }
    match out {
        Some(p) => write_atomic(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn evaluate(
    rule_path: &Path,
    data_path: Option<&Path>,
    estimator: &str,
    config_path: Option<&Path>,
    study: usize,
    seed: u64,
    out: Option<&Path>,
) -> CliResult<()> {
    let rule = load_rule(rule_path)?;
    let record: MetricsRecord = match estimator {
        "ipw" | "aipwe" => {
            let data_path = data_path
                .ok_or_else(|| CliError::usage("estimator ipw/aipwe requires a data CSV"))?;
            let data = csvio::read_trial_csv(data_path)?.dataset;
            if estimator == "ipw" {
                MetricsRecord {
                    value: ipw_value(&data, &rule)?,
                    benefit: benefit(&data, &rule, EstimatorKind::Ipw)?,
                    agreement: None,
                    estimator: EstimatorKind::Ipw,
                }
            } else {
                let (qp, qm) = fit_arm_models(&data)?;
                MetricsRecord {
                    value: aipwe_value(&data, &rule, &qp, &qm)?,
                    benefit: benefit(&data, &rule, EstimatorKind::Aipwe)?,
                    agreement: None,
                    estimator: EstimatorKind::Aipwe,
                }
            }
        }
        "true" => {
            let config_path = config_path.ok_or_else(|| {
                CliError::usage("estimator \"true\" requires --config with a [scenario] section")
            })?;
            let scenario = RunConfig::load(config_path)?.scenario()?;
            let study = match study {
                1 => Study::One,
                2 => Study::Two,
                other => return Err(CliError::usage(format!("study must be 1 or 2, got {other}"))),
            };
            sim::true_metrics(&scenario, study, &rule, scenario.test_size, seed)?
        }
        other => return Err(CliError::usage(format!("unknown estimator \"{other}\""))),
    };
    let text =
        serde_json::to_string_pretty(&record).map_err(|e| CliError::data(e.to_string()))?;
    match out {
        Some(p) => write_atomic(p, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}
