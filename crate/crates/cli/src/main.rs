//! `iolwsim` command-line frontend.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 `--check` mismatch.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use iolwsim::adversary::AttackKind;
use iolwsim::analysis::{
    bep_experiment, classify_trace, compare_table1, monte_carlo_forgery, render_reports_csv,
    render_reports_table, table1_row, AttackOutcome, BepMode, ExperimentReport, Impact,
};
use iolwsim::medium::{run_with, RunOptions, SimTrace, TraceLevel};
use iolwsim::scenario::{Scenario, ScenarioError};
use iolwsim::secure::{advantage_bound, fips_check, AdvantageParams, REFERENCE_VALUES};

#[derive(Debug, Parser)]
#[command(name = "iolwsim", version, about = "IO-Link Wireless security simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and classify every attack in it.
    Simulate(SimulateArgs),
    /// Run a scenario restricted to one of its attacks.
    Attack {
        #[command(flatten)]
        run: SimulateArgs,
        /// Index of the attack in the scenario's list.
        #[arg(long)]
        attack: usize,
    },
    /// Forgery advantage bound and FIPS-style verdicts.
    Advantage(AdvantageArgs),
    /// Plaintext bit-error experiment.
    Bep(BepArgs),
    /// Standard experiment reports: forgery Monte Carlo and bit-error runs.
    Report(ReportArgs),
    /// Print the scenario JSON schema.
    Schema,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario JSON file.
    scenario: PathBuf,
    #[arg(long, env = "IOLWSIM_SEED")]
    seed: Option<u64>,
    /// Output directory for trace.jsonl, summary.csv, outcomes.json and reports.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    level: Option<Level>,
    /// Compare outcomes with the expected-outcome sidecar; exit 3 on mismatch.
    #[arg(long)]
    check: bool,
    /// Sidecar path; defaults to `<scenario>.expected.json`.
    #[arg(long)]
    expected: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Level {
    Full,
    Security,
}

#[derive(Debug, Args)]
struct AdvantageArgs {
    #[arg(long, default_value_t = 32)]
    tau: u32,
    #[arg(long, default_value_t = 1)]
    sigma: u64,
    #[arg(long, default_value_t = 3)]
    qdec: u64,
    #[arg(long = "block-bits", default_value_t = 128)]
    block_bits: u32,
    /// Add per-attempt and per-minute verdicts.
    #[arg(long)]
    fips: bool,
    /// Print the five worked parameterizations next to their printed values.
    #[arg(long)]
    table: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Preserving,
    Diffusing,
}

impl From<Mode> for BepMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Preserving => BepMode::BitPreserving,
            Mode::Diffusing => BepMode::BlockDiffusing,
        }
    }
}

#[derive(Debug, Args)]
struct BepArgs {
    #[arg(long, value_enum, default_value = "diffusing")]
    mode: Mode,
    #[arg(long, default_value_t = 10_000)]
    blocks: u64,
    #[arg(long, env = "IOLWSIM_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, env = "IOLWSIM_SEED", default_value_t = 0)]
    seed: u64,
    /// Episodes for the forgery runs.
    #[arg(long, default_value_t = 1_000_000)]
    episodes: u64,
    /// Tag lengths for the forgery runs.
    #[arg(long, value_delimiter = ',', default_values_t = [8u16, 16])]
    tau: Vec<u16>,
    #[arg(long, default_value_t = 3)]
    qdec: u32,
    #[arg(long, default_value_t = 10_000)]
    blocks: u64,
    /// Scenario files whose outcomes are compared with the reference classification.
    #[arg(long = "scenario")]
    scenarios: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Invalid(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Invalid(_) => 2,
            CliError::Check(_) => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Expected-outcome sidecar shipped next to each canonical scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Expected {
    outcomes: Vec<ExpectedOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpectedOutcome {
    attack: usize,
    kind: AttackKind,
    safety_impact: bool,
    impact: BTreeSet<Impact>,
}

/// One row of the reference comparison.
#[derive(Debug, Clone, Serialize)]
struct Table1Comparison {
    attack: usize,
    kind: AttackKind,
    expected_safety_impact: bool,
    expected_impact: BTreeSet<Impact>,
    observed_safety_impact: bool,
    observed_impact: BTreeSet<Impact>,
    matches: bool,
}

fn comparison(o: &AttackOutcome) -> Table1Comparison {
    let row = table1_row(o.kind);
    Table1Comparison {
        attack: o.attack,
        kind: o.kind,
        expected_safety_impact: row.safety_impact,
        expected_impact: row.impact_set(),
        observed_safety_impact: o.safety_impact,
        observed_impact: o.impact.clone(),
        matches: compare_table1(o),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = io::stdout().lock();
    match dispatch(cli.command, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = stdout.flush();
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(command: Command, out: &mut impl Write) -> Result<(), CliError> {
    let stdout = PathBuf::from("<stdout>");
    let result = match command {
        Command::Simulate(args) => simulate(&args, None, out),
        Command::Attack { run, attack } => simulate(&run, Some(attack), out),
        Command::Advantage(args) => advantage(&args, out),
        Command::Bep(args) => bep(&args, out),
        Command::Report(args) => report(&args, out),
        Command::Schema => {
            let schema = serde_json::to_string_pretty(&Scenario::schema()).expect("schema");
            writeln!(out, "{schema}").map_err(io_err(&stdout))
        }
    };
    result
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Scenario::from_json(&text).map_err(|e| match e {
        ScenarioError::Parse { line, column, message } => {
            CliError::Invalid(format!("{}:{line}:{column}: {message}", path.display()))
        }
        ScenarioError::Invalid(m) => CliError::Invalid(format!("{}: {m}", path.display())),
    })
}

fn default_sidecar(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.expected.json"))
}

fn simulate(args: &SimulateArgs, only: Option<usize>, out: &mut impl Write) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let options = RunOptions {
        seed: args.seed,
        level: args.level.map(|l| match l {
            Level::Full => TraceLevel::Full,
            Level::Security => TraceLevel::Security,
        }),
        detection: true,
    };
    let (trace, outcomes) = match only {
        Some(i) => {
            if i >= scenario.attacks.len() {
                return Err(CliError::Invalid(format!(
                    "scenario has {} attacks, index {i} out of range",
                    scenario.attacks.len()
                )));
            }
            let mut single = scenario.clone();
            single.attacks = vec![scenario.attacks[i].clone()];
            let trace = run_with(&single, &options).map_err(|e| CliError::Invalid(e.to_string()))?;
            let mut outcomes = classify_trace(&trace).map_err(|e| CliError::Invalid(e.to_string()))?;
            let mut outcome = outcomes.remove(0);
            outcome.attack = i;
            (trace, vec![outcome])
        }
        None => {
            let trace = run_with(&scenario, &options).map_err(|e| CliError::Invalid(e.to_string()))?;
            let outcomes = classify_trace(&trace).map_err(|e| CliError::Invalid(e.to_string()))?;
            (trace, outcomes)
        }
    };
    let rows: Vec<Table1Comparison> = outcomes.iter().map(comparison).collect();
    if let Some(dir) = &args.out {
        write_artifacts(dir, &trace, &outcomes, &rows)?;
    }
    let stdout = PathBuf::from("<stdout>");
    if args.json {
        let text = serde_json::to_string_pretty(&outcomes).expect("outcomes serialize");
        writeln!(out, "{text}").map_err(io_err(&stdout))?;
    } else {
        write_outcome_table(out, &scenario.name, &trace, &rows).map_err(io_err(&stdout))?;
    }
    if args.check {
        let sidecar = args.expected.clone().unwrap_or_else(|| default_sidecar(&args.scenario));
        let text = fs::read_to_string(&sidecar).map_err(io_err(&sidecar))?;
        let expected: Expected = serde_json::from_str(&text).map_err(|e| {
            CliError::Invalid(format!("{}:{}:{}: {e}", sidecar.display(), e.line(), e.column()))
        })?;
        check(&expected, &outcomes, only)?;
        writeln!(out, "check: ok").map_err(io_err(&stdout))?;
    }
    Ok(())
}

fn check(expected: &Expected, outcomes: &[AttackOutcome], only: Option<usize>) -> Result<(), CliError> {
    let wanted: Vec<&ExpectedOutcome> = expected
        .outcomes
        .iter()
        .filter(|e| only.is_none_or(|i| e.attack == i))
        .collect();
    if wanted.len() != outcomes.len() {
        return Err(CliError::Check(format!(
            "{} expected outcomes, {} observed",
            wanted.len(),
            outcomes.len()
        )));
    }
    for (e, o) in wanted.iter().zip(outcomes) {
        if e.attack != o.attack
            || e.kind != o.kind
            || e.safety_impact != o.safety_impact
            || e.impact != o.impact
        {
            return Err(CliError::Check(format!(
                "attack {}: expected {:?} {} safety={}, observed {:?} {} safety={}",
                e.attack,
                e.kind,
                impact_letters(&e.impact),
                e.safety_impact,
                o.kind,
                o.impact_string(),
                o.safety_impact
            )));
        }
    }
    Ok(())
}

fn impact_letters(set: &BTreeSet<Impact>) -> String {
    iolwsim::analysis::impact_string(set)
}

fn write_outcome_table(
    out: &mut impl Write,
    name: &str,
    trace: &SimTrace,
    rows: &[Table1Comparison],
) -> io::Result<()> {
    writeln!(out, "scenario {name}: {} cycles, {} events", trace.summary.cycles, trace.events.len())?;
    writeln!(
        out,
        "{:<6} {:<20} {:<8} {:<8} {:<8} {:<8} {}",
        "attack", "kind", "impact", "safety", "ref", "ref_saf", "match"
    )?;
    for r in rows {
        writeln!(
            out,
            "{:<6} {:<20} {:<8} {:<8} {:<8} {:<8} {}",
            r.attack,
            r.kind.label(),
            impact_letters(&r.observed_impact),
            yes_no(r.observed_safety_impact),
            impact_letters(&r.expected_impact),
            yes_no(r.expected_safety_impact),
            if r.matches { "yes" } else { "NO" }
        )?;
    }
    Ok(())
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn write_artifacts(
    dir: &Path,
    trace: &SimTrace,
    outcomes: &[AttackOutcome],
    rows: &[Table1Comparison],
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("trace.jsonl");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = io::BufWriter::new(file);
    trace.write_jsonl(&mut w).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))?;

    let path = dir.join("summary.csv");
    let mut buf = Vec::new();
    trace.write_summary_csv(&mut buf).map_err(io_err(&path))?;
    fs::write(&path, buf).map_err(io_err(&path))?;

    let path = dir.join("outcomes.json");
    let text = serde_json::to_string_pretty(outcomes).expect("outcomes serialize");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;

    let path = dir.join("reports.json");
    let text = serde_json::to_string_pretty(rows).expect("rows serialize");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(())
}

#[derive(Serialize)]
struct AdvantageOutput {
    params: AdvantageParams,
    bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    fips: Option<iolwsim::secure::FipsVerdict>,
}

#[derive(Serialize)]
struct ReferenceRow {
    label: &'static str,
    params: AdvantageParams,
    printed: f64,
    recomputed: f64,
    relative_difference: f64,
    flagged: bool,
}

fn advantage(args: &AdvantageArgs, out: &mut impl Write) -> Result<(), CliError> {
    let stdout = PathBuf::from("<stdout>");
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(io_err(&stdout));
    if args.table {
        let rows: Vec<ReferenceRow> = REFERENCE_VALUES
            .iter()
            .map(|r| {
                let recomputed = advantage_bound(&r.params).expect("reference parameters are valid");
                ReferenceRow {
                    label: r.label,
                    params: r.params,
                    printed: r.printed,
                    recomputed,
                    relative_difference: (recomputed - r.printed) / r.printed,
                    flagged: r.flagged,
                }
            })
            .collect();
        if args.json {
            return w(out, serde_json::to_string_pretty(&rows).expect("rows serialize"));
        }
        w(
            out,
            format!(
                "{:<16} {:>4} {:>6} {:>5} {:>10} {:>12} {:>9}  note",
                "case", "tau", "sigma", "qdec", "printed", "recomputed", "rel.diff"
            ),
        )?;
        for r in &rows {
            let note = if r.flagged {
                "printed value does not follow from the formula"
            } else {
                ""
            };
            w(
                out,
                format!(
                    "{:<16} {:>4} {:>6} {:>5} {:>10.2e} {:>12.3e} {:>8.1}%  {note}",
                    r.label,
                    r.params.tau,
                    r.params.sigma,
                    r.params.q_dec,
                    r.printed,
                    r.recomputed,
                    r.relative_difference * 100.0
                ),
            )?;
        }
        return Ok(());
    }
    let params = AdvantageParams::new(args.tau, args.sigma, args.block_bits, args.qdec);
    let bound = advantage_bound(&params).map_err(|e| CliError::Invalid(e.to_string()))?;
    let fips = if args.fips {
        Some(fips_check(&params).map_err(|e| CliError::Invalid(e.to_string()))?)
    } else {
        None
    };
    if args.json {
        let o = AdvantageOutput { params, bound, fips };
        return w(out, serde_json::to_string_pretty(&o).expect("serialize"));
    }
    w(
        out,
        format!(
            "tau={} sigma={} n={} q_dec={}  Adv <= {:.3e}",
            params.tau, params.sigma, params.n, params.q_dec, bound
        ),
    )?;
    if let Some(v) = fips {
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        w(
            out,
            format!(
                "per-attempt (< 1e-6): {:.3e} {}",
                v.bound,
                verdict(v.per_attempt_ok)
            ),
        )?;
        w(
            out,
            format!(
                "per-minute  (< 1e-5): {:.3e} {} (without lockout: {:.3e})",
                v.per_minute_locked,
                verdict(v.per_minute_ok),
                v.per_minute_unlocked
            ),
        )?;
    }
    Ok(())
}

fn print_reports(out: &mut impl Write, reports: &[ExperimentReport], format: Format) -> Result<(), CliError> {
    let stdout = PathBuf::from("<stdout>");
    let text = match format {
        Format::Table => render_reports_table(reports),
        Format::Csv => render_reports_csv(reports),
        Format::Json => serde_json::to_string_pretty(reports).expect("reports serialize") + "\n",
    };
    out.write_all(text.as_bytes()).map_err(io_err(&stdout))
}

fn bep(args: &BepArgs, out: &mut impl Write) -> Result<(), CliError> {
    let report = bep_experiment(args.mode.into(), args.blocks, args.seed)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    let format = if args.json { Format::Json } else { Format::Table };
    print_reports(out, &[report], format)
}

fn report(args: &ReportArgs, out: &mut impl Write) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for &tau in &args.tau {
        reports.push(
            monte_carlo_forgery(tau, args.qdec, args.episodes, args.seed)
                .map_err(|e| CliError::Invalid(e.to_string()))?,
        );
    }
    for mode in [BepMode::BitPreserving, BepMode::BlockDiffusing] {
        reports.push(
            bep_experiment(mode, args.blocks, args.seed).map_err(|e| CliError::Invalid(e.to_string()))?,
        );
    }
    print_reports(out, &reports, args.format)?;
    if args.scenarios.is_empty() {
        return Ok(());
    }
    let mut rows = Vec::new();
    for path in &args.scenarios {
        let scenario = load_scenario(path)?;
        let trace = run_with(&scenario, &RunOptions::seeded(scenario.seed.unwrap_or(args.seed)))
            .map_err(|e| CliError::Invalid(e.to_string()))?;
        let outcomes = classify_trace(&trace).map_err(|e| CliError::Invalid(e.to_string()))?;
        rows.extend(outcomes.iter().map(comparison));
    }
    let stdout = PathBuf::from("<stdout>");
    match args.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&rows).expect("serialize")),
        Format::Csv => {
            let mut r = writeln!(out, "attack,kind,impact,safety_impact,reference_impact,reference_safety_impact,matches");
            for c in &rows {
                r = r.and_then(|_| {
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        c.attack,
                        c.kind.label(),
                        impact_letters(&c.observed_impact),
                        c.observed_safety_impact,
                        impact_letters(&c.expected_impact),
                        c.expected_safety_impact,
                        c.matches
                    )
                });
            }
            r
        }
        Format::Table => {
            let mut r = writeln!(out, "\n{:<20} {:<8} {:<8} {:<8} {:<8} {}", "kind", "impact", "safety", "ref", "ref_saf", "match");
            for c in &rows {
                r = r.and_then(|_| {
                    writeln!(
                        out,
                        "{:<20} {:<8} {:<8} {:<8} {:<8} {}",
                        c.kind.label(),
                        impact_letters(&c.observed_impact),
                        yes_no(c.observed_safety_impact),
                        impact_letters(&c.expected_impact),
                        yes_no(c.expected_safety_impact),
                        if c.matches { "yes" } else { "NO" }
                    )
                });
            }
            r
        }
    }
    .map_err(io_err(&stdout))
}
