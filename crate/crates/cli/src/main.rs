//! Command-line driver for dataset generation, environment labeling, effect
//! estimation, graph validation, back-door enumeration, and experiment
//! suites.
//!
//! Every command is deterministic: the same inputs, options, and seed give
//! byte-identical outputs. Exit codes: 0 success, 1 usage or I/O error,
//! 2 validation counterexample, 3 no invariant subset accepted.

mod config;
mod jsonfmt;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::RngExt;
use serde::{Deserialize, Serialize};

use invarset::adjust::{ate_adjusted, RidgeParams};
use invarset::bench::{
    suite_fig3, suite_pvalue_tables, suite_success_probability, write_error_csv,
    write_pvalue_csv, write_success_csv, SuiteParams,
};
use invarset::envgen::{assign_environments, EnvAssignment};
use invarset::graph::{NodeId, SemiMarkovianGraph};
use invarset::irm::{ate_irm, IrmParams, IrmReport, TreatmentArm};
use invarset::oracle::{
    fixtures, random_assumption1_graph, verify_corollary1, verify_theorem1_spouse,
    EquivalenceReport,
};
use invarset::rng::derive_rng;
use invarset::scm::dataset::load_dataset_csv;
use invarset::scm::{gen_toy_scm, LinearScm};
use invarset::search::{
    exhaustive_ate, find_all_backdoors, write_summary_csv, AdjustmentReport, BackdoorBackend,
    SearchParams,
};

const TAG_VALIDATE: u64 = 0x63_6c69_5f76_616c;

const EXIT_USAGE: i32 = 1;
const EXIT_COUNTEREXAMPLE: i32 = 2;
const EXIT_NO_SUBSET: i32 = 3;

#[derive(Parser)]
#[command(
    name = "invarset",
    version,
    about = "Covariate adjustment search and treatment-effect estimation"
)]
struct Cli {
    /// TOML file supplying values for omitted options (options win).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the linear toy model and write its dataset and model files.
    Gen(GenArgs),
    /// Draw environment labels and append the `e` column to a dataset.
    Env(EnvArgs),
    /// Estimate the treatment effect with one of the five estimators.
    Run(RunArgs),
    /// Check the invariance equivalences on fixture and random graphs.
    Validate(ValidateArgs),
    /// Enumerate all back-door sets of a graph given the treatment parents.
    Backdoors(BackdoorsArgs),
    /// Run one experiment grid and write its CSV table.
    Suite(SuiteArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Block width of the wide features; the observed dimension is 2*dim + 1.
    #[arg(long)]
    dim: Option<usize>,
    /// Rows to simulate.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset CSV path; a role sidecar is written next to it.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Model JSON path (holds the ground-truth effect).
    #[arg(long, value_name = "PATH")]
    scm: Option<PathBuf>,
}

#[derive(Args)]
struct EnvArgs {
    /// Dataset CSV to label; rewritten in place.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Scalar feature column the labels depend on.
    #[arg(long)]
    anchor: Option<String>,
    /// Make the labels depend on the treatment as well (default).
    #[arg(long = "with-t", overrides_with = "no_t")]
    with_t: bool,
    /// Make the labels depend on the anchor only.
    #[arg(long = "no-t")]
    no_t: bool,
    /// Number of environments.
    #[arg(long)]
    envs: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Assignment JSON path; defaults to the dataset path with `.env.json`.
    #[arg(long, value_name = "PATH")]
    weights: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset CSV with its role sidecar (and environment JSON for all
    /// modes except baseline).
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Estimator to run.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Invariance acceptance threshold for subset search.
    #[arg(long)]
    pvalue: Option<f64>,
    /// Largest candidate subset size in sparse mode.
    #[arg(long)]
    k: Option<usize>,
    /// Runs, each with a fresh train split and fresh environment labels.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model JSON with the ground truth; adds the absolute error.
    #[arg(long, value_name = "PATH")]
    scm: Option<PathBuf>,
    /// Report JSON path; a summary CSV is written next to it.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Baseline,
    Exhaustive,
    Sparse,
    IrmT,
    IrmC,
}

impl Mode {
    fn label(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Exhaustive => "exhaustive",
            Mode::Sparse => "sparse",
            Mode::IrmT => "irm-t",
            Mode::IrmC => "irm-c",
        }
    }
}

#[derive(Args)]
struct ValidateArgs {
    /// Number of random graphs to sweep.
    #[arg(long)]
    graphs: Option<usize>,
    /// Largest observed feature count of the random graphs.
    #[arg(long)]
    max_obs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BackdoorsArgs {
    /// Graph JSON path.
    #[arg(long, value_name = "PATH")]
    graph: Option<PathBuf>,
    /// Comma-separated treatment parents, e.g. `x1,x2`.
    #[arg(long)]
    parents: Option<String>,
}

#[derive(Args)]
struct SuiteArgs {
    #[command(subcommand)]
    kind: SuiteKind,
}

#[derive(Subcommand)]
enum SuiteKind {
    /// Mean absolute error per estimator and dimension.
    Fig3(SuiteOpts),
    /// Acceptance fraction of the known valid set per threshold.
    Success(SuiteOpts),
    /// Mean invariance p-value per graph, subset, and dimension.
    Pvalues(SuiteOpts),
}

#[derive(Args)]
struct SuiteOpts {
    /// Rows per simulated dataset.
    #[arg(long)]
    n: Option<usize>,
    /// Fresh model-and-data draws per grid cell.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

/// Report written by `run`; estimator-specific sections are optional.
#[derive(Serialize)]
struct RunReport<'a> {
    mode: &'a str,
    status: &'a str,
    data: String,
    seed: u64,
    runs: usize,
    ate: Option<f64>,
    true_ate: Option<f64>,
    absolute_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    c1: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    adjusted_set: Option<&'a BTreeSet<NodeId>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    search: Option<&'a AdjustmentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    irm: Option<&'a IrmReport>,
}

fn main() {
    match try_main() {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(EXIT_USAGE);
        }
    }
}

fn try_main() -> Result<i32> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            err.print().context("printing usage")?;
            return Ok(code);
        }
    };
    let file = match &cli.config {
        Some(path) => config::load(path)?,
        None => config::ConfigFile::default(),
    };
    match cli.command {
        Command::Gen(args) => cmd_gen(args, &file.gen),
        Command::Env(args) => cmd_env(args, &file.env),
        Command::Run(args) => cmd_run(args, &file.run),
        Command::Validate(args) => cmd_validate(args, &file.validate),
        Command::Backdoors(args) => cmd_backdoors(args, &file.backdoors),
        Command::Suite(args) => cmd_suite(args, &file.suite),
    }
}

/// Option value, then config value, then the built-in default.
fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn require<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T> {
    flag.or(file)
        .with_context(|| format!("missing `--{name}` (set it as an option or in the config)"))
}

fn env_sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("env.json")
}

fn set_label(set: &BTreeSet<NodeId>) -> String {
    let names: Vec<&str> = set.iter().map(NodeId::as_str).collect();
    format!("{{{}}}", names.join(", "))
}

fn parse_node_list(raw: &str) -> Result<BTreeSet<NodeId>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| NodeId::new(s).map_err(Into::into))
        .collect()
}

fn cmd_gen(args: GenArgs, file: &config::GenSection) -> Result<i32> {
    let dim = pick(args.dim, file.dim, 1);
    let n = pick(args.n, file.n, 50_000);
    let seed = pick(args.seed, file.seed, 0);
    let out = pick(args.out, file.out.clone(), PathBuf::from("data.csv"));
    let scm_path = pick(args.scm, file.scm.clone(), PathBuf::from("scm.json"));

    let scm = gen_toy_scm(dim, seed)?;
    let data = scm.simulate(n, seed)?;
    data.write_csv(&out)
        .with_context(|| format!("writing {}", out.display()))?;
    fs::write(&scm_path, jsonfmt::to_json_pretty(&scm)?)
        .with_context(|| format!("writing {}", scm_path.display()))?;
    println!(
        "wrote {} ({} rows, d = {}) and {}",
        out.display(),
        n,
        2 * dim + 1,
        scm_path.display()
    );
    println!("true ATE: {:.16e}", scm.true_ate()?);
    Ok(0)
}

fn cmd_env(args: EnvArgs, file: &config::EnvSection) -> Result<i32> {
    let data_path = pick(args.data, file.data.clone(), PathBuf::from("data.csv"));
    let anchor_name = pick(args.anchor, file.anchor.clone(), "x1".to_string());
    let include_treatment = if args.with_t {
        true
    } else if args.no_t {
        false
    } else {
        file.with_t.unwrap_or(true)
    };
    let num_envs = pick(args.envs, file.envs, 3);
    let seed = pick(args.seed, file.seed, 0);
    let weights_path = args
        .weights
        .or(file.weights.clone())
        .unwrap_or_else(|| env_sidecar_path(&data_path));

    let anchor = NodeId::new(anchor_name)?;
    let mut data = load_dataset_csv(&data_path)
        .with_context(|| format!("reading {}", data_path.display()))?;
    let assignment = assign_environments(&data, &anchor, num_envs, include_treatment, seed)?;
    data.set_env(assignment.column())?;
    data.write_csv(&data_path)
        .with_context(|| format!("writing {}", data_path.display()))?;
    fs::write(&weights_path, jsonfmt::to_json_pretty(&assignment)?)
        .with_context(|| format!("writing {}", weights_path.display()))?;

    let fractions = assignment
        .fractions
        .iter()
        .map(|f| format!("{f:.16e}"))
        .collect::<Vec<_>>()
        .join(" ");
    println!(
        "labeled {} with {num_envs} environments (anchor {anchor}, {})",
        data_path.display(),
        if include_treatment { "with treatment" } else { "anchor only" },
    );
    println!("fractions: {fractions}");
    println!("wrote {}", weights_path.display());
    Ok(0)
}

fn cmd_run(args: RunArgs, file: &config::RunSection) -> Result<i32> {
    let data_path = pick(args.data, file.data.clone(), PathBuf::from("data.csv"));
    let mode = require(args.mode, file.mode, "mode")?;
    let pvalue = pick(args.pvalue, file.pvalue, 0.1);
    let k = pick(args.k, file.k, 5);
    let runs = pick(args.runs, file.runs, 100);
    let seed = pick(args.seed, file.seed, 0);
    let scm_path = args.scm.or(file.scm.clone());
    let report_path = pick(args.report, file.report.clone(), PathBuf::from("report.json"));
    let summary_path = report_path.with_extension("summary.csv");

    let data = load_dataset_csv(&data_path)
        .with_context(|| format!("reading {}", data_path.display()))?;
    let true_ate = match &scm_path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let scm: LinearScm = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            Some(scm.true_ate()?)
        }
        None => None,
    };
    let load_env = || -> Result<EnvAssignment> {
        let path = env_sidecar_path(&data_path);
        let text = fs::read_to_string(&path).with_context(|| {
            format!("reading {} (run `invarset env` first)", path.display())
        })?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    };

    let label = mode.label();
    let mut report = RunReport {
        mode: label,
        status: "ok",
        data: data_path.display().to_string(),
        seed,
        runs,
        ate: None,
        true_ate,
        absolute_error: None,
        c1: None,
        adjusted_set: None,
        search: None,
        irm: None,
    };
    let mut code = 0;
    let all_features: BTreeSet<NodeId> = data.feature_ids().into_iter().collect();
    let search_report;
    let irm_report;

    match mode {
        Mode::Baseline => {
            let estimate = ate_adjusted(&data, &all_features, &RidgeParams::default(), seed)?;
            report.runs = 1;
            report.ate = Some(estimate);
            report.adjusted_set = Some(&all_features);
            let mut summary = String::from("subset,size,ate\n");
            let members: Vec<&str> = all_features.iter().map(NodeId::as_str).collect();
            writeln!(
                summary,
                "{},{},{estimate:.16e}",
                members.join(";"),
                all_features.len()
            )?;
            fs::write(&summary_path, summary)
                .with_context(|| format!("writing {}", summary_path.display()))?;
            println!("mode {label}: ATE = {estimate:.16e} (adjusting over {})", set_label(&all_features));
        }
        Mode::Exhaustive | Mode::Sparse => {
            let env = load_env()?;
            let params = SearchParams {
                p_threshold: pvalue,
                max_size: match mode {
                    Mode::Sparse => Some(k),
                    _ => None,
                },
                n_runs: runs,
                regenerate_env: true,
                ..SearchParams::default()
            };
            let anchor = env.anchor.clone();
            search_report = exhaustive_ate(&data, &anchor, &env, &params, seed)?;
            write_summary_csv(&search_report, &summary_path)?;
            report.ate = search_report.ate;
            report.c1 = Some(search_report.c1);
            report.search = Some(&search_report);
            match search_report.ate {
                Some(estimate) => {
                    println!(
                        "mode {label}: ATE = {estimate:.16e} (c1 = {}/{runs} runs, {}/{} candidates accepted)",
                        search_report.c1,
                        search_report.accepted().count(),
                        search_report.candidates_tested,
                    );
                }
                None => {
                    report.status = "no-invariant-subset";
                    code = EXIT_NO_SUBSET;
                    println!(
                        "mode {label}: no invariant subset accepted (c1 = 0 of {runs} runs)"
                    );
                }
            }
        }
        Mode::IrmT | Mode::IrmC => {
            let env = load_env()?;
            let arm = match mode {
                Mode::IrmT => TreatmentArm::Treated,
                _ => TreatmentArm::Control,
            };
            let params = IrmParams {
                n_runs: runs,
                ..IrmParams::default()
            };
            let anchor = env.anchor.clone();
            irm_report = ate_irm(&data, &anchor, &env, arm, &params, seed)?;
            let mut summary = String::from("run,selected,size,ate\n");
            for (i, run) in irm_report.runs.iter().enumerate() {
                let members: Vec<&str> = run.selected.iter().map(NodeId::as_str).collect();
                writeln!(
                    summary,
                    "{i},{},{},{:.16e}",
                    members.join(";"),
                    run.selected.len(),
                    run.ate
                )?;
            }
            fs::write(&summary_path, summary)
                .with_context(|| format!("writing {}", summary_path.display()))?;
            report.ate = Some(irm_report.ate);
            report.irm = Some(&irm_report);
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for run in &irm_report.runs {
                *counts.entry(set_label(&run.selected)).or_default() += 1;
            }
            let selected = counts
                .iter()
                .map(|(s, c)| format!("{s} x{c}"))
                .collect::<Vec<_>>()
                .join(", ");
            println!("mode {label}: ATE = {:.16e} (selected {selected})", irm_report.ate);
        }
    }

    if let (Some(truth), Some(estimate)) = (true_ate, report.ate) {
        let error = (estimate - truth).abs();
        report.absolute_error = Some(error);
        println!("|ATE_est - ATE_true| = {error:.16e}");
    }
    fs::write(&report_path, jsonfmt::to_json_pretty(&report)?)
        .with_context(|| format!("writing {}", report_path.display()))?;
    println!(
        "wrote {} and {}",
        report_path.display(),
        summary_path.display()
    );
    Ok(code)
}

/// Prints one line per counterexample and returns how many there were.
fn report_counterexamples(context: &str, report: &EquivalenceReport) -> usize {
    for c in &report.counterexamples {
        println!(
            "{context}: counterexample Z={} backdoor={} e_separated={}",
            set_label(&c.z),
            c.backdoor,
            c.e_separated
        );
    }
    report.counterexamples.len()
}

fn cmd_validate(args: ValidateArgs, file: &config::ValidateSection) -> Result<i32> {
    let graphs = pick(args.graphs, file.graphs, 200);
    let max_obs = pick(args.max_obs, file.max_obs, 6);
    let seed = pick(args.seed, file.seed, 0);
    if max_obs < 3 {
        bail!("--max-obs must be at least 3");
    }

    let mut bad = 0usize;
    let fixture_checks: [(&str, SemiMarkovianGraph, &str, bool); 7] = [
        ("g_toy", fixtures::g_toy(), "x1", false),
        ("g_toy_bidirected", fixtures::g_toy_bidirected(), "x1", false),
        ("g_toy_x1y", fixtures::g_toy_x1y(), "x1", false),
        ("g_bd", fixtures::g_bd(), "x1", false),
        ("g_bd", fixtures::g_bd(), "x2", false),
        ("g_bi", fixtures::g_bi(), "x1", true),
        ("g_m_bias", fixtures::g_m_bias(), "x1", true),
    ];
    for (name, graph, anchor, spouse) in &fixture_checks {
        let x_t = NodeId::new(*anchor)?;
        let t = graph.treatment()?.clone();
        for v in [BTreeSet::new(), BTreeSet::from([t.clone()])] {
            let (kind, report) = if *spouse {
                ("sufficiency", verify_theorem1_spouse(graph, &x_t, &v)?)
            } else {
                ("equivalence", verify_corollary1(graph, &x_t, &v)?)
            };
            let context = format!("{name} x_t={anchor} V={}", set_label(&v));
            if report.holds() {
                println!("{context}: {kind} holds over {} subsets", report.subsets_checked);
            } else {
                bad += report_counterexamples(&context, &report);
            }
        }
    }

    let mut subsets = 0usize;
    let mut spouse_anchors = 0usize;
    for i in 0..graphs {
        let graph_seed: u64 = derive_rng(seed, &[TAG_VALIDATE, i as u64]).random();
        let n_obs = 3 + (graph_seed % (max_obs as u64 - 2)) as usize;
        let graph = random_assumption1_graph(n_obs, n_obs.div_ceil(2), 0.3, graph_seed)?;
        let t = graph.treatment()?.clone();
        let features: BTreeSet<NodeId> = graph.observed_features().into_iter().collect();
        let v: BTreeSet<NodeId> = if i % 2 == 0 {
            BTreeSet::new()
        } else {
            BTreeSet::from([t.clone()])
        };
        let anchor = graph
            .parents(&t)?
            .into_iter()
            .filter(|p| features.contains(p))
            .min()
            .expect("generator guarantees a feature parent");
        let context = format!("graph {i} (seed {graph_seed}) x_t={anchor} V={}", set_label(&v));
        let report = verify_corollary1(&graph, &anchor, &v)?;
        subsets += report.subsets_checked;
        bad += report_counterexamples(&context, &report);
        if let Some(spouse) = graph
            .spouses(&t)?
            .into_iter()
            .filter(|s| features.contains(s))
            .min()
        {
            let context =
                format!("graph {i} (seed {graph_seed}) spouse {spouse} V={}", set_label(&v));
            let report = verify_theorem1_spouse(&graph, &spouse, &v)?;
            subsets += report.subsets_checked;
            spouse_anchors += 1;
            bad += report_counterexamples(&context, &report);
        }
    }
    println!(
        "random graphs: {graphs} checked (max {max_obs} observed, {subsets} subsets, \
         {spouse_anchors} spouse anchors)"
    );
    if bad == 0 {
        println!("validation passed");
        Ok(0)
    } else {
        println!("validation failed: {bad} counterexamples");
        Ok(EXIT_COUNTEREXAMPLE)
    }
}

fn cmd_backdoors(args: BackdoorsArgs, file: &config::BackdoorsSection) -> Result<i32> {
    let graph_path = require(args.graph, file.graph.clone(), "graph")?;
    let parents_raw = require(args.parents, file.parents.clone(), "parents")?;
    let parents = parse_node_list(&parents_raw)?;
    if parents.is_empty() {
        bail!("--parents needs at least one column name");
    }
    let text = fs::read_to_string(&graph_path)
        .with_context(|| format!("reading {}", graph_path.display()))?;
    let graph: SemiMarkovianGraph = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", graph_path.display()))?;
    let observed: BTreeSet<NodeId> = graph.observed_features().into_iter().collect();
    let sets = find_all_backdoors(&parents, &observed, &BackdoorBackend::Dsep(&graph))?;
    for z in &sets {
        println!("{}", set_label(z));
    }
    println!(
        "{} back-door sets relative to parents {}",
        sets.len(),
        set_label(&parents)
    );
    Ok(0)
}

fn cmd_suite(args: SuiteArgs, file: &config::SuiteSection) -> Result<i32> {
    let (opts, default_out) = match &args.kind {
        SuiteKind::Fig3(opts) => (opts, "fig3.csv"),
        SuiteKind::Success(opts) => (opts, "success.csv"),
        SuiteKind::Pvalues(opts) => (opts, "pvalues.csv"),
    };
    let mut params = SuiteParams::default();
    if let Some(n) = opts.n.or(file.n) {
        params.n = n;
    }
    if let Some(runs) = opts.runs.or(file.runs) {
        params.n_runs = runs;
    }
    let seed = pick(opts.seed, file.seed, 0);
    let out = pick(opts.out.clone(), file.out.clone(), PathBuf::from(default_out));

    let cells = match &args.kind {
        SuiteKind::Fig3(_) => {
            let cells = suite_fig3(&params, seed)?;
            write_error_csv(&cells, &out)?;
            cells.len()
        }
        SuiteKind::Success(_) => {
            let cells = suite_success_probability(&params, seed)?;
            write_success_csv(&cells, &out)?;
            cells.len()
        }
        SuiteKind::Pvalues(_) => {
            let cells = suite_pvalue_tables(&params, seed)?;
            write_pvalue_csv(&cells, &out)?;
            cells.len()
        }
    };
    println!("wrote {} ({cells} cells)", out.display());
    Ok(0)
}
