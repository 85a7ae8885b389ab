use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use apv_core::anb::{parse_protocol_with_warnings, pretty_print};
use apv_core::checker::{search, CheckError, SearchConfig, SearchOutcome, Verdict};
use apv_core::exporters::{export_anb, export_tamarin};
use apv_core::hl::{load_grammar, load_hl_model, to_anb};
use apv_core::model::ProtocolSpec;
use apv_core::simkit::{simulate, NotReproduced, SimReport, SimVerdict};
use apv_core::testgen::{atc_to_intruder_script, trace_from_json, trace_to_atc, trace_to_json, AbstractTestCase};

const VIOLATED: u8 = 1;
const INPUT: u8 = 2;
const BUDGET: u8 = 3;

#[derive(Parser)]
#[command(name = "apv", version, about = "Bounded protocol checking, test generation and replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lower a high-level model to AnB.
    Transform {
        model: PathBuf,
        /// Payload grammar files; each is registered under its `name`.
        #[arg(long = "grammar", required = true)]
        grammars: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Search for attacks; exits 1 and writes a trace when one is found.
    Check {
        protocol: PathBuf,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Turn an attack trace into an abstract test case.
    Testgen {
        protocol: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Replay a test case; exits 1 when the expected violation does not occur.
    Simulate {
        protocol: PathBuf,
        #[arg(long)]
        atc: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        max_steps: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Print the protocol as canonical AnB or a Tamarin theory.
    Export {
        protocol: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
        /// Write here instead of standard output.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// check, then testgen and simulate on the attack found.
    Pipeline {
        protocol: PathBuf,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        max_steps: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, default_value_t = 2)]
    sessions: usize,
    #[arg(long, value_delimiter = ',', default_value = "a,b,i")]
    agents: Vec<String>,
    #[arg(long, default_value_t = 64)]
    max_depth: usize,
    #[arg(long, default_value_t = 1_000_000)]
    max_states: usize,
    /// Explore role assignments on all cores.
    #[arg(long)]
    parallel: bool,
}

impl SearchArgs {
    fn config(&self) -> SearchConfig {
        SearchConfig {
            max_sessions: self.sessions,
            agents: self.agents.clone(),
            max_depth: self.max_depth,
            max_states: self.max_states,
            parallel: self.parallel,
            ..SearchConfig::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Anb,
    Tamarin,
}

/// A diagnostic that ends the command with the given exit code.
struct Failure {
    code: u8,
    lines: Vec<String>,
}

impl Failure {
    fn input(msg: impl Display) -> Self {
        Failure { code: INPUT, lines: vec![msg.to_string()] }
    }
}

type Outcome = Result<u8, Failure>;

fn color() -> bool {
    std::env::var("APV_COLOR").map(|v| v == "1").unwrap_or(false)
}

fn label(kind: &str) -> String {
    if !color() {
        return format!("{kind}:");
    }
    let code = if kind == "error" { "31" } else { "33" };
    format!("\x1b[1;{code}m{kind}:\x1b[0m")
}

fn warn(msg: impl Display) {
    eprintln!("{} {msg}", label("warning"));
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_spec(path: &Path) -> Result<ProtocolSpec, Failure> {
    let text = read(path)?;
    let parsed = parse_protocol_with_warnings(&text);
    let diags = match &parsed {
        Ok(p) => &p.warnings,
        Err(d) => d,
    };
    for d in diags {
        let kind = if d.is_error() { "error" } else { "warning" };
        let (line, col) = (d.span.line, d.span.column);
        eprintln!("{}:{line}:{col}: {} [{}] {}", path.display(), label(kind), d.code, d.message);
    }
    parsed.map(|p| p.spec).map_err(|_| Failure { code: INPUT, lines: Vec::new() })
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into())
}

fn run_search(spec: &ProtocolSpec, args: &SearchArgs) -> Result<SearchOutcome, Failure> {
    search(spec, &args.config()).map_err(|e| match e {
        CheckError::SearchBudgetExceeded { .. } => Failure { code: BUDGET, lines: vec![e.to_string()] },
        other => Failure::input(other),
    })
}

/// Runs the search; on attack the trace is written and its path returned.
fn check(path: &Path, args: &SearchArgs, out_dir: &Path) -> Result<(ProtocolSpec, Option<PathBuf>), Failure> {
    let spec = load_spec(path)?;
    let outcome = run_search(&spec, args)?;
    match &outcome.verdict {
        Verdict::SafeAtBound => {
            println!(
                "{}: safe at bound ({} sessions, {} states, {} scenarios)",
                spec.name, args.sessions, outcome.states, outcome.scenarios
            );
            Ok((spec, None))
        }
        Verdict::Attack(trace) => {
            let mut violated = vec![trace.goal];
            violated.extend(&trace.also_violated);
            println!("{}: attack after {} states", spec.name, outcome.states);
            for g in violated {
                println!("  violates goal {g}: {}", spec.goals[g]);
            }
            let file = out_dir.join(format!("{}.trace.json", stem(path)));
            write(&file, &trace_to_json(&spec, trace))?;
            println!("  trace: {}", file.display());
            Ok((spec, Some(file)))
        }
    }
}

fn testgen(spec: &ProtocolSpec, trace: &Path, out: &Path) -> Result<AbstractTestCase, Failure> {
    let trace = trace_from_json(&read(trace)?, spec).map_err(|e| Failure::input(format!("{}: {e}", trace.display())))?;
    let atc = trace_to_atc(&trace);
    write(out, &atc.to_json(spec))?;
    println!("{}: test case with {} steps: {}", spec.name, atc.steps.len(), out.display());
    Ok(atc)
}

fn replay(spec: &ProtocolSpec, atc: &AbstractTestCase, seed: u64, max_steps: usize, out: &Path) -> Outcome {
    let script = atc_to_intruder_script(atc);
    let report: SimReport = simulate(spec, &script, seed, max_steps).map_err(Failure::input)?;
    write(out, &report.to_json())?;
    let code = match &report.verdict {
        SimVerdict::ViolationReproduced { goal, step, .. } if *goal == atc.goal => {
            println!("{}: reproduced goal {goal} ({}) at step {step}", spec.name, spec.goals[*goal]);
            0
        }
        SimVerdict::ViolationReproduced { goal, step, .. } => {
            println!("{}: expected goal {} but goal {goal} was violated at step {step}", spec.name, atc.goal);
            VIOLATED
        }
        SimVerdict::NotReproduced(NotReproduced::StepBudgetExhausted) => {
            println!("{}: step budget of {max_steps} exhausted", spec.name);
            BUDGET
        }
        SimVerdict::NotReproduced(why) => {
            println!("{}: not reproduced ({why:?})", spec.name);
            VIOLATED
        }
    };
    println!("  report: {}", out.display());
    Ok(code)
}

fn execute(command: Command) -> Outcome {
    match command {
        Command::Transform { model, grammars, out } => {
            let hl = load_hl_model(&read(&model)?).map_err(|e| Failure::input(format!("{}: {e}", model.display())))?;
            let mut table = BTreeMap::new();
            for g in &grammars {
                let grammar = load_grammar(&read(g)?).map_err(|e| Failure::input(format!("{}: {e}", g.display())))?;
                table.insert(grammar.name.clone(), grammar);
            }
            let lowered = to_anb(&hl, &table).map_err(|e| Failure::input(format!("{}: {e}", model.display())))?;
            lowered.warnings.iter().for_each(warn);
            write(&out, &pretty_print(&lowered.spec))?;
            println!("{}: {} actions, {} goals: {}", lowered.spec.name, lowered.spec.actions.len(), lowered.spec.goals.len(), out.display());
            Ok(0)
        }
        Command::Check { protocol, search, out_dir } => {
            let (_, trace) = check(&protocol, &search, &out_dir)?;
            Ok(if trace.is_some() { VIOLATED } else { 0 })
        }
        Command::Testgen { protocol, trace, out } => {
            let spec = load_spec(&protocol)?;
            testgen(&spec, &trace, &out)?;
            Ok(0)
        }
        Command::Simulate { protocol, atc, seed, max_steps, out_dir } => {
            let spec = load_spec(&protocol)?;
            let case = AbstractTestCase::from_json(&read(&atc)?, &spec)
                .map_err(|e| Failure::input(format!("{}: {e}", atc.display())))?;
            replay(&spec, &case, seed, max_steps, &out_dir.join(format!("{}.sim.json", stem(&protocol))))
        }
        Command::Export { protocol, format, out } => {
            let spec = load_spec(&protocol)?;
            let artifact = match format {
                Format::Anb => export_anb(&spec),
                Format::Tamarin => export_tamarin(&spec).map_err(Failure::input)?,
            };
            artifact.warnings.iter().for_each(warn);
            match out {
                Some(path) => write(&path, &artifact.text)?,
                None => print!("{}", artifact.text),
            }
            Ok(0)
        }
        Command::Pipeline { protocol, search, seed, max_steps, out_dir } => {
            let (spec, trace) = check(&protocol, &search, &out_dir)?;
            let Some(trace) = trace else {
                return Ok(0);
            };
            let name = stem(&protocol);
            let atc = testgen(&spec, &trace, &out_dir.join(format!("{name}.atc.json")))?;
            replay(&spec, &atc, seed, max_steps, &out_dir.join(format!("{name}.sim.json")))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { INPUT } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            for line in &f.lines {
                eprintln!("{} {line}", label("error"));
            }
            ExitCode::from(f.code)
        }
    }
}
