//! `clansim` command handlers.
//!
//! Exit codes: 0 when everything checked passes, 1 when a bound or condition
//! fails (reports are still written) or a run aborts, 2 for usage errors and
//! unreadable inputs.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use clan_sim::backward::{run_backward, write_event_log_csv, BackwardOptions, CertificationMode, DEFAULT_MAX_STEPS};
use clan_sim::histogram::write_counts_csv;
use clan_sim::model::{check_conditions, delta_f, parse_scope, validate, AlphaWarning, Topology};
use clan_sim::model_file::parse_model;
use clan_sim::oracle::{estimate_marginal, DEFAULT_BURN_IN};
use clan_sim::report::write_report;
use clan_sim::rng::RngStream;
use clan_sim::sampler::{run_batch, BatchOptions};
use clan_sim::verify::{default_scope, run_verification, VerifyOptions};
use clan_sim::{ModelSpec, NeuronId};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "clansim", version, about = "Perfect sampling for networks of spiking neurons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the sufficient conditions and print the derived quantities.
    Check {
        #[arg(long)]
        model: PathBuf,
        /// Inclusive id range `A..B`; defaults to every neuron of a finite
        /// model.
        #[arg(long)]
        scope: Option<String>,
    },
    /// Draw perfect samples of one neuron's potential.
    Sample {
        #[command(flatten)]
        common: SampleArgs,
        /// Histogram CSV (`potential,count`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Event log CSV of sample 0.
        #[arg(long)]
        log_out: Option<PathBuf>,
    },
    /// Coupled samples against the process restricted to a finite set.
    Couple {
        #[command(flatten)]
        common: SampleArgs,
        /// Comma-separated neuron ids.
        #[arg(long)]
        finite_set: String,
    },
    /// Forward simulation of a finite set; time-weighted marginal.
    Oracle {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        neuron: u64,
        #[arg(long, default_value_t = DEFAULT_BURN_IN)]
        burn_in: u64,
        #[arg(long)]
        jumps: u64,
        #[arg(long)]
        seed: u64,
        /// Simulated set; defaults to every neuron of a finite model.
        #[arg(long)]
        finite_set: Option<String>,
        /// Histogram CSV (`potential,probability`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every applicable bound check and write a JSON report.
    Verify {
        #[command(flatten)]
        common: SampleArgs,
        #[arg(long)]
        report: PathBuf,
        /// Finite set for the coupling bound; defaults to the neuron and its
        /// presynaptic neighbors.
        #[arg(long)]
        finite_set: Option<String>,
        #[arg(long)]
        oracle_jumps: Option<u64>,
        #[arg(long)]
        coupled_samples: Option<u64>,
        /// Store the elapsed time in the report (breaks byte-identical output).
        #[arg(long)]
        record_wall_clock: bool,
    },
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    neuron: u64,
    #[arg(long)]
    samples: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: u64,
    /// `resample` or `retained`.
    #[arg(long, default_value = "resample")]
    certification: CertificationMode,
    /// Sample even if the sufficient conditions fail.
    #[arg(long)]
    force: bool,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(String),
}

type Outcome = Result<bool, Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn run_err(e: impl std::fmt::Display) -> Failure {
    Failure::Run(e.to_string())
}

fn load(path: &Path) -> Result<ModelSpec, Failure> {
    parse_model(path).map_err(usage)
}

fn neuron_in(model: &ModelSpec, id: u64) -> Result<NeuronId, Failure> {
    let i = NeuronId(id);
    if model.contains(i) {
        Ok(i)
    } else {
        Err(Failure::Usage(format!("neuron {id} is not in the model")))
    }
}

fn parse_set(text: &str) -> Result<BTreeSet<NeuronId>, Failure> {
    let set = text
        .split(',')
        .map(|s| s.trim().parse::<u64>().map(NeuronId))
        .collect::<Result<BTreeSet<_>, _>>()
        .map_err(|_| Failure::Usage(format!("finite set `{text}` is not a comma-separated id list")))?;
    if set.is_empty() {
        return Err(Failure::Usage("finite set is empty".into()));
    }
    Ok(set)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Run(format!("{}: {e}", path.display())))
}

fn backward_options(a: &SampleArgs) -> BackwardOptions {
    BackwardOptions { max_steps: a.max_steps, holding_times: false, certification: a.certification }
}

fn check(out: &mut dyn Write, model: &Path, scope: Option<&str>) -> Outcome {
    let model = load(model)?;
    let scope = match scope {
        Some(s) => parse_scope(s).map_err(usage)?,
        None => default_scope(&model, NeuronId(0)),
    };
    let diagnostics = validate(&model, &scope).map_err(usage)?;
    for issue in &diagnostics.issues {
        writeln!(out, "invalid: {issue}").ok();
    }
    let report = check_conditions(&model, &scope).map_err(run_err)?;
    writeln!(out, "scope: {} neurons ({}..{})", scope.len(), scope[0], scope[scope.len() - 1]).ok();
    writeln!(out, "beta = {}", report.beta).ok();
    writeln!(out, "alpha = {} (at neuron {})", report.alpha.value, report.alpha.argmax).ok();
    match report.alpha.warning {
        Some(AlphaWarning::Degenerate) => writeln!(out, "warning: alpha = 1, the tail bound is vacuous").ok(),
        Some(AlphaWarning::NotContracting) => writeln!(out, "warning: alpha > 1").ok(),
        None => None,
    };
    writeln!(out, "c = {}", report.growth).ok();
    writeln!(out, "neuron,big_lambda,rho,margin,alpha_i").ok();
    for m in &report.margins {
        writeln!(out, "{},{},{},{},{}", m.neuron, m.big_lambda, m.rho, m.margin, m.alpha).ok();
    }
    if let Topology::DecayingFeedforward(f) = model.topology() {
        let c = f.closed_form_check();
        writeln!(
            out,
            "closed form: incoming {} (upper {}) vs certified {}: {}",
            c.incoming,
            c.incoming_upper,
            c.certified,
            if c.passed { "pass" } else { "fail" }
        )
        .ok();
    }
    let passed = report.passed && diagnostics.passed();
    writeln!(out, "conditions: {}", if passed { "pass" } else { "fail" }).ok();
    Ok(passed)
}

fn sample(out: &mut dyn Write, a: &SampleArgs, hist_out: Option<&Path>, log_out: Option<&Path>) -> Outcome {
    let model = load(&a.model)?;
    let i = neuron_in(&model, a.neuron)?;
    let opts = BatchOptions {
        backward: backward_options(a),
        workers: a.workers,
        force: a.force,
        ..Default::default()
    };
    let stats = run_batch(&model, i, a.samples, a.seed, &opts).map_err(run_err)?;
    let hist = stats.potential_histogram().map_err(run_err)?;
    writeln!(out, "samples = {}", stats.n_samples).ok();
    writeln!(out, "mean potential = {}", hist.mean()).ok();
    writeln!(out, "mean n_stop = {} (stderr {})", stats.mean_n_stop(), stats.n_stop_stderr()).ok();
    writeln!(out, "max clan = {}", stats.max_clan.keys().last().copied().unwrap_or(0)).ok();
    writeln!(out, "null steps = {}", stats.null_steps).ok();
    if let Some(path) = hist_out {
        let mut w = create(path)?;
        write_counts_csv(&stats.potentials, &mut w).and_then(|_| w.flush()).map_err(run_err)?;
    }
    if let Some(path) = log_out {
        let run = run_backward(&model, i, &backward_options(a), &mut RngStream::new(a.seed, 0)).map_err(run_err)?;
        let mut w = create(path)?;
        write_event_log_csv(&run.log, &mut w).and_then(|_| w.flush()).map_err(run_err)?;
    }
    Ok(true)
}

fn couple(out: &mut dyn Write, a: &SampleArgs, finite_set: &str) -> Outcome {
    let model = load(&a.model)?;
    let i = neuron_in(&model, a.neuron)?;
    let f = parse_set(finite_set)?;
    if !f.contains(&i) {
        return Err(Failure::Usage(format!("neuron {i} must belong to the finite set")));
    }
    if let Some(bad) = f.iter().find(|j| !model.contains(**j)) {
        return Err(Failure::Usage(format!("neuron {bad} is not in the model")));
    }
    let scope = default_scope(&model, i);
    let delta = delta_f(&model, &f, &scope).map_err(run_err)?;
    let bound = delta.bound().map_err(run_err)?;
    let opts = BatchOptions {
        backward: backward_options(a),
        coupled: Some(f),
        workers: a.workers,
        force: a.force,
        ..Default::default()
    };
    let stats = run_batch(&model, i, a.samples, a.seed, &opts).map_err(run_err)?;
    let (rate, se) = stats.disagreement_rate().expect("coupled batch");
    let c = stats.coupled.as_ref().expect("coupled batch");
    let pass = rate <= bound + 3.0 * se && c.implication_violations == 0;
    writeln!(out, "samples = {}", stats.n_samples).ok();
    writeln!(out, "disagreement rate = {rate} (stderr {se})").ok();
    writeln!(out, "delta(F) = {}", delta.delta).ok();
    writeln!(out, "bound = {bound}").ok();
    writeln!(out, "hits outside F = {}", c.hits_outside_f).ok();
    writeln!(out, "implication violations = {}", c.implication_violations).ok();
    writeln!(out, "pass = {pass}").ok();
    Ok(pass)
}

#[allow(clippy::too_many_arguments)]
fn oracle(
    out: &mut dyn Write,
    model: &Path,
    neuron: u64,
    burn_in: u64,
    jumps: u64,
    seed: u64,
    finite_set: Option<&str>,
    hist_out: Option<&Path>,
) -> Outcome {
    let model = load(model)?;
    let i = neuron_in(&model, neuron)?;
    let f: Vec<NeuronId> = match (finite_set, model.finite_scope()) {
        (Some(s), _) => parse_set(s)?.into_iter().collect(),
        (None, Some(all)) => all,
        (None, None) => return Err(Failure::Usage("countable models need --finite-set".into())),
    };
    if jumps == 0 {
        return Err(Failure::Usage("--jumps must be at least 1".into()));
    }
    let hist = estimate_marginal(&model, f, i, burn_in, jumps, &mut RngStream::new(seed, 0)).map_err(usage)?;
    writeln!(out, "jumps = {jumps}, burn-in = {burn_in}").ok();
    writeln!(out, "mean potential = {}", hist.mean()).ok();
    if let Some(path) = hist_out {
        let mut w = create(path)?;
        hist.write_csv(&mut w).and_then(|_| w.flush()).map_err(run_err)?;
    } else {
        hist.write_csv(&mut *out).ok();
    }
    Ok(true)
}

#[allow(clippy::too_many_arguments)]
fn verify(
    out: &mut dyn Write,
    a: &SampleArgs,
    report_path: &Path,
    finite_set: Option<&str>,
    oracle_jumps: Option<u64>,
    coupled_samples: Option<u64>,
    record_wall_clock: bool,
) -> Outcome {
    let model = load(&a.model)?;
    let i = neuron_in(&model, a.neuron)?;
    let finite_set = finite_set.map(parse_set).transpose()?;
    if let Some(f) = &finite_set {
        if !f.contains(&i) {
            return Err(Failure::Usage(format!("neuron {i} must belong to the finite set")));
        }
    }
    let opts = VerifyOptions {
        samples: a.samples,
        seed: a.seed,
        finite_set,
        oracle_jumps,
        coupled_samples,
        workers: a.workers,
        certification: a.certification,
        max_steps: a.max_steps,
        force: a.force,
        record_wall_clock,
        ..Default::default()
    };
    let report = run_verification(&model, i, &opts).map_err(run_err)?;
    write_report(&report, report_path).map_err(run_err)?;
    for b in &report.bounds {
        if !b.pass {
            writeln!(
                out,
                "FAIL {}: empirical {} vs analytic {} (stderr {})",
                b.name, b.empirical_value, b.analytic_value, b.stderr
            )
            .ok();
        }
    }
    let failed = report.failed().count();
    writeln!(out, "{} of {} bound checks passed", report.bounds.len() - failed, report.bounds.len()).ok();
    writeln!(out, "report written to {}", report_path.display()).ok();
    Ok(failed == 0)
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Outcome {
    match cli.command {
        Command::Check { model, scope } => check(out, &model, scope.as_deref()),
        Command::Sample { common, out: hist, log_out } => sample(out, &common, hist.as_deref(), log_out.as_deref()),
        Command::Couple { common, finite_set } => couple(out, &common, &finite_set),
        Command::Oracle { model, neuron, burn_in, jumps, seed, finite_set, out: hist } => {
            oracle(out, &model, neuron, burn_in, jumps, seed, finite_set.as_deref(), hist.as_deref())
        }
        Command::Verify { common, report, finite_set, oracle_jumps, coupled_samples, record_wall_clock } => verify(
            out,
            &common,
            &report,
            finite_set.as_deref(),
            oracle_jumps,
            coupled_samples,
            record_wall_clock,
        ),
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            e.print().ok();
            return code;
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match dispatch(cli, &mut out) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_FAIL,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            EXIT_FAIL
        }
    }
}
