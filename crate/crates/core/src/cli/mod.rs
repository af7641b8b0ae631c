//! Command-line front end: `fit`, `test`, `simulate`, `converge`, `roc`.

mod config;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::{Overrides, RunConfig};

use crate::error::{Error, Result};
use crate::evaluate::{cv_roc, predict_joint_at_fpr, CvOptions, CvRoc};
use crate::inference::{run_test, Hypothesis, TestSpec};
use crate::intensity::{
    build_conditional_design, build_marginal_design, fit_poisson_irls, HistoryCovariateSpec, IntensityFit, IrlsOptions,
    SplineBasis,
};
use crate::loglinear::Mode;
use crate::simulate::{convergence_probe, simulate_marked_trials, write_marked_csv, MarkedProcessSpec, ProbeOptions};
use crate::spikedata::{bin_trains, load_with_sidecar, BinnedTensor, Metadata};

/// Exit status for operational failures (bad input, I/O, configuration).
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "spikesync",
    version,
    about = "Excess-synchrony detection in multi-trial spike trains"
)]
struct Cli {
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit per-neuron intensities; writes fit JSONs and a smoothed PSTH.
    Fit(FitArgs),
    /// Bootstrap test of excess synchrony for a pair or triple.
    Test(TestArgs),
    /// Simulate a marked point process from a spec file.
    Simulate(SimulateArgs),
    /// Bin-width sweep of the empirical interaction factor.
    Converge(ConvergeArgs),
    /// Cross-validated ROC of marginal and conditional joint-spike predictions.
    Roc(RocArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Event file (.csv or .ndjson) with a `.meta.json` sidecar.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Bin width, seconds.
    #[arg(long)]
    delta: Option<f64>,
    /// Spline knot spacing, seconds.
    #[arg(long)]
    knot_spacing: Option<f64>,
    #[arg(long)]
    own_window: Option<f64>,
    #[arg(long)]
    population_window: Option<f64>,
    /// 1-based neurons left out of population covariates.
    #[arg(long, value_delimiter = ',')]
    exclude: Option<Vec<usize>>,
    #[arg(long)]
    ridge: Option<f64>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// `conditional` also fits history terms.
    #[arg(long)]
    mode: Option<Mode>,
}

#[derive(Debug, Args)]
struct TestArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Two or three 1-based neurons.
    #[arg(long, value_delimiter = ',')]
    neurons: Option<Vec<usize>>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Delay of the second neuron, seconds.
    #[arg(long)]
    lag: Option<f64>,
    /// Bootstrap replicates.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    resimulate_population: bool,
    #[arg(long)]
    refit: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Process spec (.json or .toml).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Debug, Args)]
struct ConvergeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    /// Bin widths, seconds, strictly decreasing.
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    neurons: Option<Vec<usize>>,
    #[arg(long)]
    lag: Option<f64>,
    /// Own-history window for the stratified factor, seconds.
    #[arg(long)]
    history_window: Option<f64>,
}

#[derive(Debug, Args)]
struct RocArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',')]
    neurons: Option<Vec<usize>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    target_fpr: Option<f64>,
}

impl DataArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            input: self.input.clone(),
            delta: self.delta,
            knot_spacing: self.knot_spacing,
            own_window: self.own_window,
            population_window: self.population_window,
            exclude: self.exclude.clone(),
            ridge: self.ridge,
            ..Default::default()
        }
    }
}

fn resolve(common: &Common, flags: Overrides) -> Result<RunConfig> {
    let flags = Overrides {
        seed: common.seed,
        output_dir: common.output_dir.clone(),
        ..flags
    };
    let file = match &common.config {
        Some(p) => Overrides::load(p)?,
        None => Overrides::default(),
    };
    RunConfig::resolve(flags.over(file))
}

#[derive(Serialize)]
struct Output<'a, T: Serialize> {
    version: &'static str,
    command: &'static str,
    config: &'a RunConfig,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<T>,
}

fn write_json<T: Serialize>(
    path: &Path,
    command: &'static str,
    cfg: &RunConfig,
    result: std::result::Result<T, String>,
) -> Result<()> {
    let (status, message, result) = match result {
        Ok(r) => ("ok", None, Some(r)),
        Err(m) => ("degenerate", Some(m), None),
    };
    let out = Output {
        version: env!("CARGO_PKG_VERSION"),
        command,
        config: cfg,
        status,
        message,
        result,
    };
    let text = serde_json::to_string_pretty(&out)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn output_dir(cfg: &RunConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    Ok(&cfg.output_dir)
}

fn load_binned(cfg: &RunConfig) -> Result<BinnedTensor> {
    bin_trains(&load_with_sidecar(cfg.input()?)?, cfg.delta)
}

fn basis(cfg: &RunConfig, binned: &BinnedTensor) -> Result<SplineBasis> {
    SplineBasis::cubic(binned.bins() as f64 * binned.delta(), cfg.knot_spacing)
}

fn irls(cfg: &RunConfig) -> IrlsOptions {
    IrlsOptions {
        ridge: cfg.ridge,
        ..IrlsOptions::default()
    }
}

/// History spec leaving out the configured neurons plus `tested`.
fn history(cfg: &RunConfig, tested: &[usize]) -> Result<HistoryCovariateSpec> {
    let mut exclude: Vec<usize> = cfg
        .exclude
        .iter()
        .map(|i| i - 1)
        .chain(tested.iter().copied())
        .collect();
    exclude.sort_unstable();
    exclude.dedup();
    HistoryCovariateSpec::new(cfg.own_window, cfg.population_window, exclude)
}

fn fit_neuron(
    cfg: &RunConfig,
    binned: &BinnedTensor,
    neuron: usize,
    hist: Option<&HistoryCovariateSpec>,
) -> Result<IntensityFit> {
    let basis = basis(cfg, binned)?;
    let design = match hist {
        Some(h) => build_conditional_design(binned, neuron, &basis, h)?,
        None => build_marginal_design(binned, neuron, &basis)?,
    };
    fit_poisson_irls(&design, &irls(cfg))
}

fn check_neurons(tested: &[usize], binned: &BinnedTensor) -> Result<()> {
    if let Some(&i) = tested.iter().find(|&&i| i >= binned.neurons()) {
        return Err(Error::Config(format!(
            "neuron {} out of range (data have {})",
            i + 1,
            binned.neurons()
        )));
    }
    Ok(())
}

fn whole_bins(x: f64, delta: f64) -> Result<usize> {
    let q = x / delta;
    if (q - q.round()).abs() > 1e-6 * q.max(1.0) {
        return Err(Error::Config(format!(
            "lag {x} is not a whole number of {delta} s bins"
        )));
    }
    Ok(q.round() as usize)
}

#[derive(Serialize)]
struct FitSummary {
    neuron: usize,
    mode: Mode,
    deviance: f64,
    iterations: usize,
    mean_rate: f64,
    file: String,
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let flags = Overrides {
        mode: args.mode,
        ..args.data.overrides()
    };
    let cfg = resolve(&args.common, flags)?;
    let binned = load_binned(&cfg)?;
    let dir = output_dir(&cfg)?;
    let mut summary = Vec::new();
    let mut psth: Vec<Vec<f64>> = Vec::new();
    for i in 0..binned.neurons() {
        let fit = fit_neuron(&cfg, &binned, i, None)?;
        let rates = fit.rates_on(&binned)?;
        let row = rates.trial(0).to_vec();
        let name = format!("fit_marginal_{}.json", i + 1);
        fit.save(&dir.join(&name))?;
        summary.push(FitSummary {
            neuron: i + 1,
            mode: Mode::Marginal,
            deviance: fit.deviance,
            iterations: fit.iterations,
            mean_rate: row.iter().sum::<f64>() / row.len() as f64,
            file: name,
        });
        psth.push(row);
        if cfg.mode == Mode::Conditional {
            let h = history(&cfg, &[i])?;
            let fit = fit_neuron(&cfg, &binned, i, Some(&h))?;
            let name = format!("fit_conditional_{}.json", i + 1);
            fit.save(&dir.join(&name))?;
            let rates = fit.rates_on(&binned)?;
            summary.push(FitSummary {
                neuron: i + 1,
                mode: Mode::Conditional,
                deviance: fit.deviance,
                iterations: fit.iterations,
                mean_rate: (0..binned.trials())
                    .map(|r| rates.trial(r).iter().sum::<f64>())
                    .sum::<f64>()
                    / (binned.trials() * binned.bins()) as f64,
                file: name,
            });
        }
    }
    let path = dir.join("psth.csv");
    let mut out = create(&path)?;
    let io = |e| Error::io(&path, e);
    let header: Vec<String> = (1..=binned.neurons()).map(|i| format!("neuron_{i}")).collect();
    writeln!(out, "t,{}", header.join(",")).map_err(io)?;
    for m in 0..binned.bins() {
        let cols: Vec<String> = psth.iter().map(|r| r[m].to_string()).collect();
        writeln!(out, "{},{}", binned.bin_center(m), cols.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)?;
    write_json(&dir.join("fit_summary.json"), "fit", &cfg, Ok(summary))
}

/// Errors that describe the data rather than a failed run.
fn statistical(e: &Error) -> bool {
    matches!(
        e,
        Error::DegenerateTest(_)
            | Error::DegenerateModel(_)
            | Error::Separation { .. }
            | Error::InsufficientEvents { .. }
    )
}

fn cmd_test(args: TestArgs) -> Result<()> {
    let flags = Overrides {
        neurons: args.neurons,
        mode: args.mode,
        lag: args.lag,
        bootstrap: args.bootstrap,
        alpha: args.alpha,
        resimulate_population: args.resimulate_population.then_some(true),
        refit: args.refit.then_some(true),
        ..args.data.overrides()
    };
    let cfg = resolve(&args.common, flags)?;
    let binned = load_binned(&cfg)?;
    let tested = cfg.tested();
    check_neurons(&tested, &binned)?;
    let lag_bins = whole_bins(cfg.lag, binned.delta())?;
    let hypothesis = match (tested.len(), cfg.mode, lag_bins) {
        (3, Mode::Marginal, 0) => Hypothesis::Triple,
        (2, Mode::Conditional, 0) => Hypothesis::PairConditional,
        (2, Mode::Marginal, 0) => Hypothesis::PairMarginal,
        (2, Mode::Marginal, l) => Hypothesis::PairLagged { lag_bins: l },
        _ => {
            return Err(Error::Config(
                "tests cover pairs (marginal, conditional or lagged marginal) and marginal triples".into(),
            ))
        }
    };
    let dir = output_dir(&cfg)?;
    let labels: Vec<String> = cfg.neurons.iter().map(|i| i.to_string()).collect();
    let path = dir.join(format!("test_{}.json", labels.join("_")));
    let spec = TestSpec {
        hypothesis,
        subset: tested.clone(),
        replicates: cfg.bootstrap,
        alpha: cfg.alpha,
        seed: cfg.seed,
        resimulate_population: cfg.resimulate_population,
        refit: cfg.refit,
    };
    let outcome = (|| {
        let hist = match cfg.mode {
            Mode::Conditional => Some(history(&cfg, &tested)?),
            Mode::Marginal => None,
        };
        let fits = tested
            .iter()
            .map(|&i| fit_neuron(&cfg, &binned, i, hist.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        run_test(&binned, &fits, &spec)
    })();
    match outcome {
        Ok(report) => write_json(&path, "test", &cfg, Ok(report)),
        Err(e) if statistical(&e) => write_json::<()>(&path, "test", &cfg, Err(e.to_string())),
        Err(e) => Err(e),
    }
}

#[derive(Serialize)]
struct MarkCount {
    mark: String,
    lag: f64,
    count: usize,
}

#[derive(Serialize)]
struct SimulateSummary {
    spec: MarkedProcessSpec,
    reps: usize,
    events_file: String,
    marks: Vec<MarkCount>,
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let flags = Overrides {
        spec: args.spec,
        reps: args.reps,
        ..Default::default()
    };
    let cfg = resolve(&args.common, flags)?;
    let spec = MarkedProcessSpec::load(cfg.spec()?)?;
    let seqs = simulate_marked_trials(&spec, cfg.reps, cfg.seed)?;
    let dir = output_dir(&cfg)?;
    let events = dir.join("events.csv");
    write_marked_csv(&seqs, create(&events)?)?;
    Metadata {
        duration: spec.duration,
        nu: spec.nu,
        n_trials: cfg.reps,
    }
    .save(&crate::spikedata::sidecar_path(&events))?;
    let marks = spec
        .marks()
        .iter()
        .enumerate()
        .map(|(k, m)| MarkCount {
            mark: m.label(),
            lag: m.lag,
            count: seqs.iter().map(|s| s.mark_count(k)).sum(),
        })
        .collect();
    let summary = SimulateSummary {
        spec,
        reps: cfg.reps,
        events_file: "events.csv".into(),
        marks,
    };
    write_json(&dir.join("simulate.json"), "simulate", &cfg, Ok(summary))
}

fn cmd_converge(args: ConvergeArgs) -> Result<()> {
    let flags = Overrides {
        spec: args.spec,
        reps: args.reps,
        deltas: args.deltas,
        neurons: args.neurons,
        lag: args.lag,
        history_window: args.history_window,
        ..Default::default()
    };
    let cfg = resolve(&args.common, flags)?;
    let spec = MarkedProcessSpec::load(cfg.spec()?)?;
    let opts = ProbeOptions {
        deltas: cfg.deltas.clone(),
        reps: cfg.reps,
        seed: cfg.seed,
        subset: cfg.tested(),
        lag: cfg.lag,
        history_window: cfg.history_window,
    };
    let report = convergence_probe(&spec, &opts)?;
    let dir = output_dir(&cfg)?;
    write_json(&dir.join("converge.json"), "converge", &cfg, Ok(report))
}

#[derive(Serialize)]
struct RocSummary {
    mode: Mode,
    auc: f64,
    positives: usize,
    negatives: usize,
    /// Achieved rates when holding the false-positive rate at the target.
    fpr_at_target: f64,
    tpr_at_target: f64,
    curve_file: String,
}

fn roc_summary(roc: &CvRoc, target: f64, file: String) -> Result<RocSummary> {
    let pred = predict_joint_at_fpr(&roc.scores, target)?;
    Ok(RocSummary {
        mode: roc.mode,
        auc: roc.curve.auc,
        positives: roc.curve.positives,
        negatives: roc.curve.negatives,
        fpr_at_target: pred.fpr,
        tpr_at_target: pred.tpr,
        curve_file: file,
    })
}

fn cmd_roc(args: RocArgs) -> Result<()> {
    let flags = Overrides {
        neurons: args.neurons,
        folds: args.folds,
        target_fpr: args.target_fpr,
        ..args.data.overrides()
    };
    let cfg = resolve(&args.common, flags)?;
    let binned = load_binned(&cfg)?;
    let tested = cfg.tested();
    check_neurons(&tested, &binned)?;
    if tested.len() != 2 {
        return Err(Error::Config("roc needs exactly two neurons".into()));
    }
    let opts = CvOptions {
        folds: cfg.folds,
        seed: cfg.seed,
        basis: basis(&cfg, &binned)?,
        history: history(&cfg, &tested)?,
        irls: irls(&cfg),
    };
    let dir = output_dir(&cfg)?;
    let pair = [tested[0], tested[1]];
    let mut summaries = Vec::new();
    for mode in [Mode::Marginal, Mode::Conditional] {
        let roc = cv_roc(&binned, pair, mode, &opts)?;
        let file = format!("roc_{mode}.csv");
        roc.curve.write_csv(create(&dir.join(&file))?)?;
        summaries.push(roc_summary(&roc, cfg.target_fpr, file)?);
    }
    write_json(&dir.join("roc.json"), "roc", &cfg, Ok(summaries))
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FAILURE } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_FAILURE;
        }
        // the global pool can only be built once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Converge(a) => cmd_converge(a),
        Command::Roc(a) => cmd_roc(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
