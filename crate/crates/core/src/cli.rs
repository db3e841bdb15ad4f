//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error. Diagnostics go to
//! stderr; data goes to the named files, or stdout for `-`.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::calibration::{apply, train, train_per_condition, TrainOptions};
use crate::design::{
    design_experiment, partner_appearances, read_plan, synth_key, synth_scores, verify_plan, write_plan,
    Inventory, SynthConfig,
};
use crate::error::Error;
use crate::io::{
    fmt_f64, parse_inventory, parse_key, parse_llrs, parse_report, parse_responses, parse_roster,
    parse_scores, write_header, write_key, write_llrs, write_report, write_scores,
};
use crate::metrics::evaluate;
use crate::model::{Label, TrialSet};
use crate::perceptual::{filter_responses, pool_responses, PoolingMode};
use crate::scores::{restrict, LlrSet, ScoreSet};
use crate::serve::{self, AppState, SessionStore};
use crate::speaker::{
    confusion_matrix, default_subset_size, parse_partition, partition_speakers, speaker_summaries,
    write_matrix, write_summaries,
};
use crate::stats::{decisions_from_llrs, ks_two_sample, mcnemar, PairedDecisions, TestResult};

#[derive(Parser, Debug)]
#[command(name = "spkeval", version, about = "Speaker-discrimination evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a logistic calibration on one score file and write LLRs
    Calibrate(CalibrateArgs),
    /// Fuse several score files into one LLR file
    Fuse(FuseArgs),
    /// Compute EER, Cllr and minCllr of an LLR file
    Metrics(MetricsArgs),
    /// Per-speaker summaries and easy/average/hard subsets
    Speaker(SpeakerArgs),
    /// Subset confusion matrix of two or three speaker partitions
    Confusion(ConfusionArgs),
    /// Significance tests
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Draw a listening-experiment plan from a stimulus inventory
    Design(DesignArgs),
    /// Check a plan against its inventory
    Verify(VerifyArgs),
    /// Generate synthetic scores (and optionally a synthetic key)
    Synth(SynthArgs),
    /// Turn listener responses into signed similarity scores
    Unfold(UnfoldArgs),
    /// Serve listening sessions over HTTP
    Serve(ServeArgs),
    /// Tabulate one or more metrics reports
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    prior: f64,
    #[arg(long)]
    ridge: Option<f64>,
    /// Train one model per style condition
    #[arg(long)]
    per_condition: bool,
    #[arg(long)]
    out: PathBuf,
    /// Write the trained model(s) and diagnostics as JSON
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FuseArgs {
    /// Score file; repeat for each system, in weight order
    #[arg(long, required = true)]
    scores: Vec<PathBuf>,
    #[arg(long)]
    key: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    prior: f64,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long)]
    llr: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    per_condition: bool,
    /// Histogram bin width for LLR distribution summaries
    #[arg(long)]
    hist_bin: Option<f64>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Debug)]
struct SpeakerArgs {
    #[arg(long)]
    llr: PathBuf,
    #[arg(long)]
    key: PathBuf,
    /// Size of the easy subset (default: a third of the speakers)
    #[arg(long)]
    easy: Option<usize>,
    /// Size of the hard subset (default: a third of the speakers)
    #[arg(long)]
    hard: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ConfusionArgs {
    #[arg(long)]
    p1: PathBuf,
    #[arg(long)]
    p2: PathBuf,
    #[arg(long)]
    p3: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum StatsCommand {
    /// McNemar test on the hard decisions of two LLR files
    Mcnemar(McNemarArgs),
    /// Two-sample Kolmogorov-Smirnov test on two score files
    Ks(KsArgs),
}

#[derive(Args, Debug)]
struct McNemarArgs {
    #[arg(long)]
    llr1: PathBuf,
    #[arg(long)]
    llr2: PathBuf,
    #[arg(long)]
    key: PathBuf,
    /// Decide "same speaker" when the LLR is at least this value
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    threshold: f64,
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct KsArgs {
    #[arg(long)]
    scores1: PathBuf,
    #[arg(long)]
    scores2: PathBuf,
    /// Restrict both files to trials of one class of this key
    #[arg(long, requires = "class")]
    key: Option<PathBuf>,
    #[arg(long, requires = "key", value_parser = ["tar", "non"])]
    class: Option<String>,
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DesignArgs {
    #[arg(long)]
    inventory: PathBuf,
    #[arg(long)]
    listeners: usize,
    #[arg(long, default_value_t = 24)]
    subset: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    inventory: PathBuf,
    /// Write partner-appearance counts as JSON
    #[arg(long)]
    partners_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Key to score; generated and written here when --speakers is given
    #[arg(long)]
    key: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    dprime_rr: f64,
    #[arg(long, allow_negative_numbers = true)]
    dprime_cc: f64,
    #[arg(long, allow_negative_numbers = true)]
    dprime_rc: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    speaker_sd: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Generate a key with this many speakers instead of reading one
    #[arg(long, requires = "trials_per_cell")]
    speakers: Option<usize>,
    /// Trials per (condition, label) cell of a generated key
    #[arg(long, requires = "speakers")]
    trials_per_cell: Option<usize>,
    /// Write the planted per-speaker effects
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value = "synth")]
    system_id: String,
}

#[derive(Args, Debug)]
struct UnfoldArgs {
    #[arg(long)]
    responses: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long, default_value = "per-response")]
    mode: PoolingMode,
    #[arg(long, requires = "filter")]
    roster: Option<PathBuf>,
    /// Keep listeners whose roster attribute equals a value: ATTR=VALUE
    #[arg(long, requires = "roster")]
    filter: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Key of the pooled evaluation units
    #[arg(long)]
    key_out: Option<PathBuf>,
    #[arg(long, default_value = "human")]
    system_id: String,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    stimuli: PathBuf,
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    port: Option<u16>,
    /// Directory of the listener client's static assets
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Runs the tool on `argv` (including the program name) and returns the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            if code == 0 {
                print!("{e}");
            } else {
                eprint!("{}", e.render());
            }
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Calibrate(a) => calibrate(a),
        Command::Fuse(a) => fuse(a),
        Command::Metrics(a) => metrics(a),
        Command::Speaker(a) => speaker(a),
        Command::Confusion(a) => confusion(a),
        Command::Stats(StatsCommand::Mcnemar(a)) => stats_mcnemar(a),
        Command::Stats(StatsCommand::Ks(a)) => stats_ks(a),
        Command::Design(a) => design(a),
        Command::Verify(a) => verify(a),
        Command::Synth(a) => synth(a),
        Command::Unfold(a) => unfold(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Report(a) => report(a),
    }
}

fn open(path: &Path) -> Result<BufReader<fs::File>, Error> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Renders into a buffer, then writes the file (or stdout for `-`).
fn emit(path: &Path, render: impl FnOnce(&mut Vec<u8>) -> Result<(), Error>) -> Result<(), Error> {
    let mut buf = Vec::new();
    render(&mut buf)?;
    if path.as_os_str() == "-" {
        let mut out = std::io::stdout().lock();
        out.write_all(&buf)?;
        out.flush()?;
        Ok(())
    } else {
        fs::write(path, buf).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

fn system_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "system".into())
}

fn read_key(path: &Path) -> Result<TrialSet, Error> {
    parse_key(open(path)?)
}

fn read_scores(path: &Path) -> Result<ScoreSet, Error> {
    parse_scores(open(path)?, &system_id(path))
}

fn read_llrs(path: &Path) -> Result<LlrSet, Error> {
    parse_llrs(open(path)?, &system_id(path))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Error> {
    emit(path, |buf| {
        serde_json::to_writer_pretty(&mut *buf, value).map_err(|e| Error::Io(e.to_string()))?;
        buf.push(b'\n');
        Ok(())
    })
}

fn report_diagnostics(label: &str, iterations: usize, converged: bool, objective: f64) {
    if converged {
        eprintln!("{label}: converged after {iterations} iterations, objective {objective:.6} bits");
    } else {
        eprintln!("warning: {label}: not converged after {iterations} iterations, objective {objective:.6} bits");
    }
}

fn calibrate(a: CalibrateArgs) -> CliResult {
    let key = read_key(&a.key)?;
    let scores = read_scores(&a.scores)?;
    let opts = TrainOptions { prior: a.prior, ridge: a.ridge };
    if a.per_condition {
        let models = train_per_condition(&[&scores], &key, &opts)?;
        for (c, (_, d)) in &models.models {
            report_diagnostics(c, d.iterations, d.converged, d.final_objective);
        }
        let llrs = models.apply(&[&scores], &key)?;
        emit(&a.out, |w| write_llrs(&llrs, w))?;
        if let Some(p) = &a.model_out {
            write_json(p, &models)?;
        }
    } else {
        let (model, diag) = train(&[&scores], &key, &opts)?;
        report_diagnostics("calibration", diag.iterations, diag.converged, diag.final_objective);
        let llrs = apply(&model, &[&scores])?;
        emit(&a.out, |w| write_llrs(&llrs, w))?;
        if let Some(p) = &a.model_out {
            write_json(p, &json!({ "model": model, "diagnostics": diag }))?;
        }
    }
    Ok(())
}

fn fuse(a: FuseArgs) -> CliResult {
    let key = read_key(&a.key)?;
    let sets = a.scores.iter().map(|p| read_scores(p)).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&ScoreSet> = sets.iter().collect();
    let (model, diag) = train(&refs, &key, &TrainOptions { prior: a.prior, ridge: a.ridge })?;
    report_diagnostics("fusion", diag.iterations, diag.converged, diag.final_objective);
    let llrs = apply(&model, &refs)?;
    emit(&a.out, |w| write_llrs(&llrs, w))?;
    if let Some(p) = &a.model_out {
        write_json(p, &json!({ "model": model, "diagnostics": diag }))?;
    }
    Ok(())
}

fn metrics(a: MetricsArgs) -> CliResult {
    let key = read_key(&a.key)?;
    let llrs = read_llrs(&a.llr)?;
    let report = evaluate(&llrs, &key, a.per_condition, a.hist_bin)?;
    emit(&a.report, |w| write_report(&report, w))?;
    Ok(())
}

fn speaker(a: SpeakerArgs) -> CliResult {
    let key = read_key(&a.key)?;
    let llrs = read_llrs(&a.llr)?;
    let summaries = speaker_summaries(&llrs, &key)?;
    let ranked = summaries.iter().filter(|s| s.cllr.is_some()).count();
    let n_easy = a.easy.unwrap_or_else(|| default_subset_size(ranked));
    let n_hard = a.hard.unwrap_or_else(|| default_subset_size(ranked));
    let partition = partition_speakers(&summaries, n_easy, n_hard)?;
    if !partition.excluded.is_empty() {
        eprintln!(
            "warning: {} speaker(s) lack target or non-target trials and were excluded",
            partition.excluded.len()
        );
    }
    emit(&a.out, |w| write_summaries(&summaries, &partition, w))?;
    Ok(())
}

fn confusion(a: ConfusionArgs) -> CliResult {
    let p1 = parse_partition(open(&a.p1)?)?;
    let p2 = parse_partition(open(&a.p2)?)?;
    let p3 = a.p3.as_deref().map(|p| parse_partition(open(p)?)).transpose()?;
    let m = confusion_matrix(&p1, &p2, p3.as_ref())?;
    emit(&a.out, |w| write_matrix(&m, w))?;
    Ok(())
}

fn write_test(path: &Path, r: &TestResult) -> Result<(), Error> {
    write_json(path, r)
}

fn stats_mcnemar(a: McNemarArgs) -> CliResult {
    let key = read_key(&a.key)?;
    let d1 = decisions_from_llrs(&read_llrs(&a.llr1)?, &key, a.threshold)?;
    let d2 = decisions_from_llrs(&read_llrs(&a.llr2)?, &key, a.threshold)?;
    let r = mcnemar(&PairedDecisions::new(&d1, &d2)?)?;
    write_test(&a.out, &r)?;
    Ok(())
}

fn stats_ks(a: KsArgs) -> CliResult {
    let s1 = read_scores(&a.scores1)?;
    let s2 = read_scores(&a.scores2)?;
    let (x, y): (Vec<f64>, Vec<f64>) = match (&a.key, a.class.as_deref()) {
        (Some(k), Some(class)) => {
            let key = read_key(k)?;
            let label = if class == "tar" { Label::Target } else { Label::NonTarget };
            let sub = key.filter(|t| t.label == label);
            (
                restrict(&s1.scores, &sub).into_values().collect(),
                restrict(&s2.scores, &sub).into_values().collect(),
            )
        }
        _ => (s1.scores.into_values().collect(), s2.scores.into_values().collect()),
    };
    let r = ks_two_sample(&x, &y)?;
    write_test(&a.out, &r)?;
    Ok(())
}

fn read_inventory(path: &Path) -> Result<Inventory, Error> {
    Inventory::new(parse_inventory(open(path)?)?)
}

fn design(a: DesignArgs) -> CliResult {
    let inventory = read_inventory(&a.inventory)?;
    let plan = design_experiment(&inventory, a.listeners, a.subset, a.seed)?;
    write_plan(&plan, &a.out)?;
    eprintln!(
        "{} listeners, {} trials each",
        plan.listeners.len(),
        plan.listeners.first().map_or(0, |l| l.trials.len())
    );
    Ok(())
}

fn verify(a: VerifyArgs) -> CliResult {
    let inventory = read_inventory(&a.inventory)?;
    let plan = read_plan(&a.plan)?;
    let violations = verify_plan(&plan, &inventory);
    if let Some(p) = &a.partners_out {
        write_json(p, &partner_appearances(&plan))?;
    }
    if violations.is_empty() {
        eprintln!("plan ok: {} listeners", plan.listeners.len());
        return Ok(());
    }
    for v in &violations {
        eprintln!("violation: {v:?}");
    }
    Err(Failure::Data(Error::InvalidParams(format!(
        "{} plan violation(s)",
        violations.len()
    ))))
}

fn synth(a: SynthArgs) -> CliResult {
    let config = SynthConfig {
        n_speakers: a.speakers.unwrap_or(0),
        trials_per_cell: a.trials_per_cell.unwrap_or(0),
        dprime: [a.dprime_rr, a.dprime_cc, a.dprime_rc],
        speaker_effect_sd: a.speaker_sd,
        seed: a.seed,
    };
    let key = if a.speakers.is_some() {
        let key = synth_key(&config)?;
        emit(&a.key, |w| write_key(&key, w))?;
        key
    } else {
        read_key(&a.key)?
    };
    let (scores, truth) = synth_scores(&key, &config, &a.system_id)?;
    emit(&a.out, |w| write_scores(&scores, w))?;
    if let Some(p) = &a.truth {
        emit(p, |w| {
            write_header(w, &["speaker", "delta"])?;
            for (s, d) in &truth.deltas {
                writeln!(w, "{s}\t{}", fmt_f64(*d))?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn unfold(a: UnfoldArgs) -> CliResult {
    let key = read_key(&a.key)?;
    let mut responses = parse_responses(open(&a.responses)?)?;
    if let (Some(roster), Some(filter)) = (&a.roster, &a.filter) {
        let (attr, value) = filter
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--filter `{filter}` is not ATTR=VALUE")))?;
        let roster = parse_roster(open(roster)?)?;
        let f = filter_responses(&responses, &roster, attr, |v| v == value)?;
        if f.missing_attribute {
            eprintln!("warning: no roster entry has attribute `{attr}`");
        }
        responses = f.responses;
    }
    if responses.is_empty() {
        return Err(Failure::Data(Error::EmptyInput));
    }
    let pooled = pool_responses(&responses, &key, a.mode, &a.system_id)?;
    emit(&a.out, |w| write_scores(&pooled.scores, w))?;
    match &a.key_out {
        Some(p) => emit(p, |w| write_key(&pooled.key, w))?,
        None if a.mode == PoolingMode::PerResponse => {
            eprintln!("warning: per-response unit ids need the unit key; pass --key-out to write it")
        }
        None => {}
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> CliResult {
    let port = match a.port {
        Some(p) => p,
        None => match std::env::var(serve::PORT_ENV) {
            Ok(v) => v
                .parse()
                .map_err(|_| Failure::Usage(format!("{}=`{v}` is not a port", serve::PORT_ENV)))?,
            Err(_) => serve::DEFAULT_PORT,
        },
    };
    let plan = read_plan(&a.plan)?;
    if !a.stimuli.is_dir() {
        return Err(Failure::Data(Error::Io(format!(
            "{}: not a directory",
            a.stimuli.display()
        ))));
    }
    let store = SessionStore::open(&plan, &a.log)?;
    let app = AppState {
        store: Arc::new(store),
        stimuli_dir: a.stimuli,
        static_dir: a.static_dir,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Io(e.to_string()))?;
    runtime.block_on(serve::run(app, port))?;
    Ok(())
}

fn report(a: ReportArgs) -> CliResult {
    let mut rows: Vec<[String; 7]> = Vec::new();
    for p in &a.inputs {
        let r = parse_report(open(p)?)?;
        let mut push = |scope: &str, n_tar: usize, n_non: usize, eer: f64, cllr: f64, min_cllr: f64| {
            rows.push([
                r.system_id.clone(),
                scope.to_string(),
                n_tar.to_string(),
                n_non.to_string(),
                fmt_f64(eer),
                fmt_f64(cllr),
                fmt_f64(min_cllr),
            ])
        };
        push("all", r.n_tar, r.n_non, r.eer, r.cllr, r.min_cllr);
        for (c, m) in r.per_condition.iter().flatten() {
            push(c, m.n_tar, m.n_non, m.eer, m.cllr, m.min_cllr);
        }
    }
    emit(&a.out, |w| {
        write_header(w, &["system_id", "condition", "n_tar", "n_non", "eer", "cllr", "min_cllr"])?;
        for r in &rows {
            writeln!(w, "{}", r.join("\t"))?;
        }
        Ok(())
    })?;
    Ok(())
}
