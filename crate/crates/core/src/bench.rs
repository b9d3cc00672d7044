//! Scripted experiment grids over the toy generator.
//!
//! Each suite regenerates a fresh structural model and dataset per run,
//! applies the estimators under comparison to the same draw, and reduces the
//! per-run errors or p-values to one deterministic CSV row per grid cell.
//! Dimension cells are reported as the observed feature count `d = 2 * width
//! + 1` (the anchor plus two blocks of `width` columns each).

use std::collections::BTreeSet;
use std::path::Path;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjust::{ate_adjusted, AdjustError};
use crate::citest::{one_hot, CiError, CiTester};
use crate::envgen::{assign_environments, EnvError};
use crate::graph::{node_id, NodeId};
use crate::irm::{ate_irm, IrmError, IrmParams, TreatmentArm};
use crate::rng::derive_rng;
use crate::scm::dataset::{DataError, Dataset};
use crate::scm::{gen_toy_scm, gen_toy_scm_x1y, LinearScm, ScmError};
use crate::search::{exhaustive_ate, SearchError, SearchParams};

/// Seed tag for the estimator-comparison grid, ASCII "fig3".
const TAG_FIG3: u64 = 0x66_6967_33;
/// Seed tag for the acceptance-fraction grid, ASCII "succ".
const TAG_SUCCESS: u64 = 0x73_7563_63;
/// Seed tag for the p-value tables, ASCII "tabl".
const TAG_TABLES: u64 = 0x74_6162_6c;

/// Errors from the experiment suites.
#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Ci(#[from] CiError),
    #[error(transparent)]
    Adjust(#[from] AdjustError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Irm(#[from] IrmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

/// Shared controls for all suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteParams {
    /// Rows per simulated dataset.
    pub n: usize,
    /// Fresh model-and-data draws per grid cell.
    pub n_runs: usize,
    pub num_envs: u32,
    /// Whether the environment depends on the treatment as well as the anchor.
    pub include_treatment: bool,
    /// Block widths for the cells every estimator runs on (d = 3, 5, 7).
    pub small_widths: Vec<usize>,
    /// Block widths for the high-dimensional sweep run by the IRM arms only.
    pub sweep_widths: Vec<usize>,
    /// Acceptance thresholds for the subset-search cells.
    pub thresholds: Vec<f64>,
    pub ci: CiTester,
    /// Controls for the inner subset-search runs; its threshold and tester
    /// are overridden per cell.
    pub search: SearchParams,
    /// Controls for the inner IRM runs.
    pub irm: IrmParams,
}

impl Default for SuiteParams {
    fn default() -> Self {
        let irm = IrmParams {
            n_runs: 2,
            ..IrmParams::default()
        };
        Self {
            n: 50_000,
            n_runs: 20,
            num_envs: 3,
            include_treatment: true,
            small_widths: vec![1, 2, 3],
            sweep_widths: vec![7, 12, 17, 22, 27, 32],
            thresholds: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            ci: CiTester::default(),
            search: SearchParams::default(),
            irm,
        }
    }
}

impl SuiteParams {
    fn validate(&self) -> Result<(), BenchError> {
        if self.n < 10 || self.n_runs == 0 {
            return Err(BenchError::BadParameter(
                "need at least ten rows and one run".into(),
            ));
        }
        if self.small_widths.iter().chain(&self.sweep_widths).any(|w| *w == 0) {
            return Err(BenchError::BadParameter("zero block width".into()));
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(BenchError::BadParameter(
                "thresholds must lie strictly between 0 and 1".into(),
            ));
        }
        Ok(())
    }
}

/// Mean absolute estimation error for one (estimator, dimension) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorCell {
    pub method: String,
    /// Observed feature count, 2 * width + 1.
    pub d: usize,
    /// Acceptance threshold, present for the subset-search rows only.
    pub threshold: Option<f64>,
    /// Runs that produced an estimate; the subset search can abstain.
    pub runs: usize,
    pub mean_error: Option<f64>,
    /// Standard error of the mean, absent below two effective runs.
    pub stderr_error: Option<f64>,
}

/// Acceptance fraction of the known valid set for one (d, threshold) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessCell {
    pub d: usize,
    pub threshold: f64,
    pub runs: usize,
    /// Fraction of runs whose invariance p-value exceeded the threshold.
    pub success_probability: f64,
}

/// Mean invariance p-value for one (graph, subset, d) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvalueCell {
    /// Generator label: `toy` or `toy_x1y`.
    pub graph: String,
    /// Conditioning subset members joined by `;`, empty for the empty set.
    pub subset: String,
    pub d: usize,
    pub runs: usize,
    pub mean_pvalue: f64,
    /// Standard error of the mean, absent below two runs.
    pub stderr_pvalue: Option<f64>,
}

fn mean_stderr(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some((var / n).sqrt()))
}

fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    rand::RngExt::random(&mut derive_rng(seed, tags))
}

/// One simulated draw: model, dataset, environment labels.
fn draw(
    width: usize,
    x1_to_y: bool,
    params: &SuiteParams,
    seed: u64,
    tags: &[u64],
) -> Result<(LinearScm, Dataset, crate::envgen::EnvAssignment), BenchError> {
    let scm_seed = derive_seed(seed, &[tags[0], tags[1], tags[2], 0]);
    let data_seed = derive_seed(seed, &[tags[0], tags[1], tags[2], 1]);
    let env_seed = derive_seed(seed, &[tags[0], tags[1], tags[2], 2]);
    let scm = if x1_to_y {
        gen_toy_scm_x1y(width, scm_seed)?
    } else {
        gen_toy_scm(width, scm_seed)?
    };
    let data = scm.simulate(params.n, data_seed)?;
    let env = assign_environments(
        &data,
        &node_id("x1"),
        params.num_envs,
        params.include_treatment,
        env_seed,
    )?;
    Ok((scm, data, env))
}

/// Estimator comparison across dimensions.
///
/// For every small-width cell each run draws one dataset and applies: the
/// baseline adjusting for every observed feature, the subset search at each
/// threshold, and both IRM arms. The high-dimensional sweep repeats the two
/// IRM arms only. Cells report the mean and standard error of the absolute
/// error against the generating model's true effect.
pub fn suite_fig3(params: &SuiteParams, seed: u64) -> Result<Vec<ErrorCell>, BenchError> {
    params.validate()?;
    let mut cells = Vec::new();
    for (wi, &width) in params.small_widths.iter().enumerate() {
        let d = 2 * width + 1;
        let mut baseline = Vec::new();
        let mut search_errors = vec![Vec::new(); params.thresholds.len()];
        let mut irm_t = Vec::new();
        let mut irm_c = Vec::new();
        for run in 0..params.n_runs {
            let (scm, data, env) = draw(width, false, params, seed, &[TAG_FIG3, wi as u64, run as u64])?;
            let truth = scm.true_ate()?;
            let est_seed = derive_seed(seed, &[TAG_FIG3, wi as u64, run as u64, 3]);

            let all: BTreeSet<NodeId> = data.feature_ids().into_iter().collect();
            let est = ate_adjusted(&data, &all, &params.search.ridge, est_seed)?;
            baseline.push((est - truth).abs());

            for (ti, &threshold) in params.thresholds.iter().enumerate() {
                let search = SearchParams {
                    p_threshold: threshold,
                    ci: params.ci.clone(),
                    ..params.search.clone()
                };
                let report = exhaustive_ate(&data, &node_id("x1"), &env, &search, est_seed)?;
                if let Some(est) = report.ate {
                    search_errors[ti].push((est - truth).abs());
                }
            }

            for (arm, errors) in [
                (TreatmentArm::Treated, &mut irm_t),
                (TreatmentArm::Control, &mut irm_c),
            ] {
                let report = ate_irm(&data, &node_id("x1"), &env, arm, &params.irm, est_seed)?;
                errors.push((report.ate - truth).abs());
            }
        }
        let (mean, stderr) = mean_stderr(&baseline);
        cells.push(ErrorCell {
            method: "baseline".into(),
            d,
            threshold: None,
            runs: baseline.len(),
            mean_error: mean,
            stderr_error: stderr,
        });
        for (ti, errors) in search_errors.iter().enumerate() {
            let (mean, stderr) = mean_stderr(errors);
            cells.push(ErrorCell {
                method: "exhaustive".into(),
                d,
                threshold: Some(params.thresholds[ti]),
                runs: errors.len(),
                mean_error: mean,
                stderr_error: stderr,
            });
        }
        for (method, errors) in [("irm-t", &irm_t), ("irm-c", &irm_c)] {
            let (mean, stderr) = mean_stderr(errors);
            cells.push(ErrorCell {
                method: method.into(),
                d,
                threshold: None,
                runs: errors.len(),
                mean_error: mean,
                stderr_error: stderr,
            });
        }
    }
    for (wi, &width) in params.sweep_widths.iter().enumerate() {
        let d = 2 * width + 1;
        let mut irm_t = Vec::new();
        let mut irm_c = Vec::new();
        for run in 0..params.n_runs {
            let tags = [TAG_FIG3, (params.small_widths.len() + wi) as u64, run as u64];
            let (scm, data, env) = draw(width, false, params, seed, &tags)?;
            let truth = scm.true_ate()?;
            let est_seed = derive_seed(seed, &[tags[0], tags[1], tags[2], 3]);
            for (arm, errors) in [
                (TreatmentArm::Treated, &mut irm_t),
                (TreatmentArm::Control, &mut irm_c),
            ] {
                let report = ate_irm(&data, &node_id("x1"), &env, arm, &params.irm, est_seed)?;
                errors.push((report.ate - truth).abs());
            }
        }
        for (method, errors) in [("irm-t", &irm_t), ("irm-c", &irm_c)] {
            let (mean, stderr) = mean_stderr(errors);
            cells.push(ErrorCell {
                method: method.into(),
                d,
                threshold: None,
                runs: errors.len(),
                mean_error: mean,
                stderr_error: stderr,
            });
        }
    }
    Ok(cells)
}

/// Acceptance fraction of the known valid set across thresholds.
///
/// Per run one dataset is drawn and the invariance p-value of the second
/// feature block given the treatment is computed once; each threshold cell
/// counts the runs whose p-value exceeded it.
pub fn suite_success_probability(
    params: &SuiteParams,
    seed: u64,
) -> Result<Vec<SuccessCell>, BenchError> {
    params.validate()?;
    let mut cells = Vec::new();
    for (wi, &width) in params.small_widths.iter().enumerate() {
        let d = 2 * width + 1;
        let mut pvalues = Vec::with_capacity(params.n_runs);
        for run in 0..params.n_runs {
            let tags = [TAG_SUCCESS, wi as u64, run as u64];
            let (_, data, env) = draw(width, false, params, seed, &tags)?;
            let pv_seed = derive_seed(seed, &[tags[0], tags[1], tags[2], 3]);
            pvalues.push(invariance_pvalue(
                &data,
                &env.labels,
                params.num_envs,
                &[node_id("x2")],
                &params.ci,
                pv_seed,
            )?);
        }
        for &threshold in &params.thresholds {
            let hits = pvalues.iter().filter(|p| **p > threshold).count();
            cells.push(SuccessCell {
                d,
                threshold,
                runs: params.n_runs,
                success_probability: hits as f64 / params.n_runs as f64,
            });
        }
    }
    Ok(cells)
}

/// P-value of the invariance test `e` vs outcome given `subset` and `t`.
fn invariance_pvalue(
    data: &Dataset,
    labels: &[u32],
    num_envs: u32,
    subset: &[NodeId],
    ci: &CiTester,
    seed: u64,
) -> Result<f64, BenchError> {
    let e = one_hot(labels, num_envs)?;
    let y = data.column(data.outcome_id()?)?;
    let t = data.column(data.treatment_id()?)?;
    let (z, _) = data.design_matrix(subset)?;
    let cond = crate::search::hstack(&[&z, t]);
    Ok(ci.pvalue(&e, y, &cond, seed)?)
}

/// Mean invariance p-values for fixed subsets on the toy graph and on its
/// variant with a direct anchor-to-outcome edge.
///
/// On the plain graph the tested subsets are the empty set, the third block,
/// and both blocks; the variant adds the second block alone. None of these
/// is a valid adjustment set on its graph, so every mean is expected small.
pub fn suite_pvalue_tables(
    params: &SuiteParams,
    seed: u64,
) -> Result<Vec<PvalueCell>, BenchError> {
    params.validate()?;
    let x2 = node_id("x2");
    let x3 = node_id("x3");
    let grids: [(&str, bool, Vec<Vec<NodeId>>); 2] = [
        ("toy", false, vec![vec![], vec![x3.clone()], vec![x2.clone(), x3.clone()]]),
        (
            "toy_x1y",
            true,
            vec![
                vec![],
                vec![x2.clone()],
                vec![x3.clone()],
                vec![x2.clone(), x3.clone()],
            ],
        ),
    ];
    let mut cells = Vec::new();
    for (gi, (label, x1_to_y, subsets)) in grids.iter().enumerate() {
        for (wi, &width) in params.small_widths.iter().enumerate() {
            let d = 2 * width + 1;
            let mut per_subset = vec![Vec::with_capacity(params.n_runs); subsets.len()];
            for run in 0..params.n_runs {
                let tags = [TAG_TABLES, (gi * params.small_widths.len() + wi) as u64, run as u64];
                let (_, data, env) = draw(width, *x1_to_y, params, seed, &tags)?;
                for (si, subset) in subsets.iter().enumerate() {
                    let pv_seed =
                        derive_seed(seed, &[tags[0], tags[1], tags[2], 3 + si as u64]);
                    per_subset[si].push(invariance_pvalue(
                        &data,
                        &env.labels,
                        params.num_envs,
                        subset,
                        &params.ci,
                        pv_seed,
                    )?);
                }
            }
            for (si, subset) in subsets.iter().enumerate() {
                let (mean, stderr) = mean_stderr(&per_subset[si]);
                cells.push(PvalueCell {
                    graph: (*label).into(),
                    subset: subset.iter().map(|id| id.as_str()).join(";"),
                    d,
                    runs: params.n_runs,
                    mean_pvalue: mean.expect("runs >= 1"),
                    stderr_pvalue: stderr,
                });
            }
        }
    }
    Ok(cells)
}

fn float_field(value: Option<f64>) -> String {
    value.map_or(String::new(), |v| format!("{v:.16e}"))
}

/// One row per estimator cell: method, d, threshold, effective runs, mean
/// and standard error of the absolute estimation error.
pub fn write_error_csv(cells: &[ErrorCell], path: &Path) -> Result<(), BenchError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["method", "d", "threshold", "runs", "mean_error", "stderr_error"])?;
    for cell in cells {
        writer.write_record([
            cell.method.clone(),
            cell.d.to_string(),
            float_field(cell.threshold),
            cell.runs.to_string(),
            float_field(cell.mean_error),
            float_field(cell.stderr_error),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// One row per (d, threshold) cell with the acceptance fraction.
pub fn write_success_csv(cells: &[SuccessCell], path: &Path) -> Result<(), BenchError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["d", "threshold", "runs", "success_probability"])?;
    for cell in cells {
        writer.write_record([
            cell.d.to_string(),
            format!("{:.16e}", cell.threshold),
            cell.runs.to_string(),
            format!("{:.16e}", cell.success_probability),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// One row per (graph, subset, d) cell with the mean invariance p-value.
pub fn write_pvalue_csv(cells: &[PvalueCell], path: &Path) -> Result<(), BenchError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["graph", "subset", "d", "runs", "mean_pvalue", "stderr_pvalue"])?;
    for cell in cells {
        writer.write_record([
            cell.graph.clone(),
            cell.subset.clone(),
            cell.d.to_string(),
            cell.runs.to_string(),
            format!("{:.16e}", cell.mean_pvalue),
            float_field(cell.stderr_pvalue),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_params() -> SuiteParams {
        SuiteParams {
            n: 4_000,
            n_runs: 3,
            small_widths: vec![1],
            sweep_widths: vec![],
            thresholds: vec![0.1],
            ..SuiteParams::default()
        }
    }

    #[test]
    fn estimator_grid_has_one_row_per_cell_and_is_deterministic() {
        let mut params = tiny_params();
        params.sweep_widths = vec![2];
        let cells = suite_fig3(&params, 9).unwrap();
        let labels: Vec<(String, usize, Option<f64>)> = cells
            .iter()
            .map(|c| (c.method.clone(), c.d, c.threshold))
            .collect();
        assert_eq!(
            labels,
            vec![
                ("baseline".into(), 3, None),
                ("exhaustive".into(), 3, Some(0.1)),
                ("irm-t".into(), 3, None),
                ("irm-c".into(), 3, None),
                ("irm-t".into(), 5, None),
                ("irm-c".into(), 5, None),
            ]
        );
        for cell in &cells {
            assert!(cell.runs <= params.n_runs);
            if let Some(mean) = cell.mean_error {
                assert!(mean.is_finite() && mean >= 0.0);
            }
        }
        assert_eq!(cells, suite_fig3(&params, 9).unwrap());
    }

    #[test]
    fn search_cells_estimate_and_stay_in_range() {
        // The valid set is accepted in essentially every run at this scale,
        // so the search cell never abstains and its error stays moderate.
        // Ordering claims against the baseline need desk-scale samples and
        // live in the acceptance suite.
        let params = tiny_params();
        let cells = suite_fig3(&params, 17).unwrap();
        let search = cells.iter().find(|c| c.method == "exhaustive").unwrap();
        assert_eq!(search.runs, params.n_runs);
        assert!(search.mean_error.unwrap() < 0.5, "error {:?}", search.mean_error);
        let baseline = cells.iter().find(|c| c.method == "baseline").unwrap();
        assert!(baseline.mean_error.unwrap().is_finite());
    }

    #[test]
    fn success_fractions_are_survival_monotone() {
        let mut params = tiny_params();
        params.n_runs = 4;
        params.thresholds = vec![0.1, 0.3, 0.5];
        let cells = suite_success_probability(&params, 3).unwrap();
        assert_eq!(cells.len(), 3);
        for pair in cells.windows(2) {
            assert!(pair[0].threshold < pair[1].threshold);
            assert!(pair[0].success_probability >= pair[1].success_probability);
        }
        for cell in &cells {
            assert!((0.0..=1.0).contains(&cell.success_probability));
            assert_eq!(cell.runs, 4);
        }
        assert_eq!(cells, suite_success_probability(&params, 3).unwrap());
    }

    #[test]
    fn pvalue_grid_flags_every_listed_subset_as_variant() {
        let params = tiny_params();
        let cells = suite_pvalue_tables(&params, 5).unwrap();
        // Three subsets on the plain graph, four on the variant.
        assert_eq!(cells.len(), 7);
        let toy_empty = cells
            .iter()
            .find(|c| c.graph == "toy" && c.subset.is_empty())
            .unwrap();
        assert!(toy_empty.mean_pvalue < 1e-6, "mean {}", toy_empty.mean_pvalue);
        let toy_x3 = cells.iter().find(|c| c.graph == "toy" && c.subset == "x3").unwrap();
        assert!(toy_x3.mean_pvalue < 1e-6, "mean {}", toy_x3.mean_pvalue);
        for cell in &cells {
            assert!((0.0..=1.0).contains(&cell.mean_pvalue));
        }
        assert_eq!(cells, suite_pvalue_tables(&params, 5).unwrap());
    }

    #[test]
    fn csv_emitters_write_one_line_per_cell() {
        let dir = tempfile::tempdir().unwrap();
        let params = tiny_params();

        let errors = suite_fig3(&params, 2).unwrap();
        let path = dir.path().join("errors.csv");
        write_error_csv(&errors, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), errors.len() + 1);
        assert!(text.starts_with("method,d,threshold,runs,mean_error,stderr_error"));

        let success = suite_success_probability(&params, 2).unwrap();
        let path = dir.path().join("success.csv");
        write_success_csv(&success, &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap().lines().count(),
            success.len() + 1
        );

        let pvalues = suite_pvalue_tables(&params, 2).unwrap();
        let path = dir.path().join("pvalues.csv");
        write_pvalue_csv(&pvalues, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), pvalues.len() + 1);
        assert!(text.contains("toy_x1y,x2;x3,3,"));
    }

    #[test]
    fn degenerate_suite_parameters_error() {
        let mut params = tiny_params();
        params.thresholds = vec![0.0];
        assert!(matches!(
            suite_success_probability(&params, 1),
            Err(BenchError::BadParameter(_))
        ));
        let mut params = tiny_params();
        params.n_runs = 0;
        assert!(matches!(suite_fig3(&params, 1), Err(BenchError::BadParameter(_))));
    }
}
