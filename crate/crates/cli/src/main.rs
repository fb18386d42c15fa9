mod tables;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use quantal::deck::{Deck, DegenerateId, Target};
use quantal::engine::{Engine, EngineError, Outcome};
use quantal::interference::{interference_closed_form, interference_grid, interference_parts, InterferenceError, InterferenceQuery};
use quantal::montecarlo::{run_protocol, EntropyDevice, EntropySource, ShuffleStrategy, SimError, Simulator, Variant, DEFAULT_PREP_CAP};
use quantal::parse::{format_expression, format_outcome, parse_assignment, parse_expression, ParseError};
use quantal::presets;
use quantal::prob::{decimal, rational_string};
use quantal::{quantum, toy};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "quantal", version, about = "Exact and simulated probabilities for card decks whose observations disturb the deck")]
struct Cli {
    /// Deck description (JSON). Defaults to the built-in Face/Suit/Color deck.
    #[arg(long, global = true)]
    deck: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
    Markdown,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shuffle {
    Full,
    Top,
}

#[derive(Subcommand)]
enum Command {
    /// Check a deck file and summarize it.
    Validate {
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Conditional matrix, order defects, ignored-observation shifts and interference grids.
    Tables {
        /// Variable used for preparations and rows.
        #[arg(long)]
        p: Option<String>,
        /// Variable used for columns.
        #[arg(long)]
        q: Option<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Exact probability of a sequence such as `Face=K; Suit=H & Face=K`.
    Prob {
        expr: String,
        /// Condition on the first K steps and report the probability of the rest.
        #[arg(long, value_name = "K")]
        given: Option<usize>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Monte Carlo frequencies for every outcome tuple of a protocol.
    Simulate {
        expr: String,
        #[arg(long, default_value_t = 100_000)]
        n: u64,
        #[arg(long, default_value = "s")]
        variant: Variant,
        /// Seed for the deterministic generator.
        #[arg(long)]
        seed: Option<u64>,
        /// Byte stream used instead of the operating system's randomness.
        #[arg(long)]
        entropy_device: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "full")]
        shuffle: Shuffle,
        #[arg(long, default_value_t = DEFAULT_PREP_CAP)]
        prep_cap: u64,
    },
    /// Interference of a degenerate class such as `Color=R`.
    Interfere {
        #[arg(long)]
        class: String,
        /// Preparation, e.g. `Face=K`. Without it a full grid is printed.
        #[arg(long)]
        prep: Option<String>,
        /// Final outcome, e.g. `Face=Q`.
        #[arg(long)]
        q: Option<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Answers for the discard-rule exercises on the K♠/Q♥ deck.
    Exercises {
        #[arg(long, value_enum, default_value = "markdown")]
        format: Format,
    },
    /// Randomized check of order symmetry against commutation for projector families.
    Quantum {
        #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
        dim: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 2718)]
        seed: u64,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
}

enum Failure {
    Validation(String),
    Parse(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Parse(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Parse(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<ParseError> for Failure {
    fn from(e: ParseError) -> Self {
        Failure::Parse(format!("parse error {e}"))
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<InterferenceError> for Failure {
    fn from(e: InterferenceError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Rendered = Result<String, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let deck = || load_deck(cli.deck.as_deref());
    let text = match cli.command {
        Command::Validate { format } => validate(&deck()?, format),
        Command::Tables { p, q, format } => cmd_tables(&deck()?, p, q, format),
        Command::Prob { expr, given, format } => prob(&deck()?, &expr, given, format),
        Command::Simulate {
            expr,
            n,
            variant,
            seed,
            entropy_device,
            format,
            out,
            shuffle,
            prep_cap,
        } => {
            let deck = deck()?;
            let body = simulate(&deck, &expr, n, variant, seed, entropy_device, format, shuffle, prep_cap)?;
            if let Some(path) = out {
                return fs::write(&path, body).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())));
            }
            Ok(body)
        }
        Command::Interfere { class, prep, q, format } => interfere(&deck()?, &class, prep.as_deref(), q.as_deref(), format),
        Command::Exercises { format } => exercises(format),
        Command::Quantum { dim, trials, seed, format } => cmd_quantum(&dim, trials, seed, format),
    }?;
    let mut out = io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Failure::Runtime(format!("cannot write output: {e}")))
}

fn load_deck(path: Option<&Path>) -> Result<Deck, Failure> {
    let Some(path) = path else {
        return Ok(presets::face_suit_color());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))?;
    Deck::from_json(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn unsupported(cmd: &str, format: Format) -> Failure {
    let name = format.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
    Failure::Parse(format!("{cmd} does not support --format {name}"))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct ValidateOut {
    valid: bool,
    report: quantal::deck::ValidationReport,
    deck: quantal::DeckSpec,
}

fn validate(deck: &Deck, format: Format) -> Rendered {
    let report = deck.report();
    match format {
        Format::Text => Ok(format!(
            "valid deck: {} variables, {} values each, {} card types, {} cards, {} per value\n",
            report.variables, report.values_per_variable, report.card_types, report.total_cards, report.per_value
        )),
        Format::Json => Ok(json(&ValidateOut {
            valid: true,
            report,
            deck: deck.to_spec(),
        })),
        f => Err(unsupported("validate", f)),
    }
}

fn variable(deck: &Deck, name: Option<String>, fallback: usize) -> Result<quantal::VariableId, Failure> {
    match name {
        Some(n) => deck
            .variable_id(&n)
            .ok_or_else(|| Failure::Parse(format!("unknown variable {n:?}"))),
        None => {
            if fallback >= deck.variables().len() {
                return Err(Failure::Validation("tables need at least two variables".into()));
            }
            Ok(quantal::VariableId(fallback))
        }
    }
}

fn cmd_tables(deck: &Deck, p: Option<String>, q: Option<String>, format: Format) -> Rendered {
    let p = variable(deck, p, 0)?;
    let q = variable(deck, q, if p.0 == 1 { 0 } else { 1 })?;
    if p == q {
        return Err(Failure::Parse("--p and --q must name different variables".into()));
    }
    let t = tables::build(deck, p, q).map_err(Failure::Runtime)?;
    match format {
        Format::Text => Ok(tables::to_text(&t)),
        Format::Markdown => Ok(tables::to_markdown(&t)),
        Format::Json => Ok(json(&t)),
        Format::Csv => tables::to_csv(&t).map_err(|e| Failure::Runtime(e.to_string())),
    }
}

#[derive(Serialize)]
struct ProbOut {
    expression: String,
    given_steps: usize,
    exact: String,
    decimal: String,
}

fn prob(deck: &Deck, input: &str, given: Option<usize>, format: Format) -> Rendered {
    let expr = parse_expression(deck, input)?;
    let engine = Engine::new(deck);
    let seq = expr.sequence(&engine)?;
    let k = given.unwrap_or(0);
    if k >= seq.steps.len() {
        return Err(Failure::Parse(format!(
            "--given {k} leaves no step to evaluate ({} steps)",
            seq.steps.len()
        )));
    }
    let p = if k == 0 {
        engine.sequence_prob(&seq)?
    } else {
        let (cond, then) = seq.steps.split_at(k);
        engine.conditional_prob(&seq.prep, cond, then)?
    };
    let out = ProbOut {
        expression: format_expression(deck, &expr),
        given_steps: k,
        exact: p.to_string(),
        decimal: p.decimal(),
    };
    match format {
        Format::Text => Ok(format!("{} ({})\n", out.exact, out.decimal)),
        Format::Json => Ok(json(&out)),
        f => Err(unsupported("prob", f)),
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    deck: &Deck,
    input: &str,
    n: u64,
    variant: Variant,
    seed: Option<u64>,
    device: Option<PathBuf>,
    format: Format,
    shuffle: Shuffle,
    prep_cap: u64,
) -> Rendered {
    let expr = parse_expression(deck, input)?;
    let entropy = match (seed, device) {
        (Some(_), Some(_)) => return Err(Failure::Parse("--seed and --entropy-device are exclusive".into())),
        (Some(seed), None) => EntropySource::Seeded { seed },
        (None, Some(path)) => EntropySource::External(EntropyDevice::File(path)),
        (None, None) => EntropySource::External(EntropyDevice::Os),
    };
    let sim = Simulator::new(deck)
        .with_shuffle(match shuffle {
            Shuffle::Full => ShuffleStrategy::Full,
            Shuffle::Top => ShuffleStrategy::TopOnly,
        })
        .with_prep_cap(prep_cap);
    let table = run_protocol(&sim, &expr, n, variant, &entropy)?;
    match format {
        Format::Csv => Ok(table.to_csv()),
        Format::Json => {
            let mut s = table.to_json();
            s.push('\n');
            Ok(s)
        }
        f => Err(unsupported("simulate", f)),
    }
}

#[derive(Serialize)]
struct InterfereOne {
    class: String,
    prep: String,
    q: String,
    merged: String,
    branch_sum: String,
    interference: String,
    decimal: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form: Option<String>,
}

#[derive(Serialize)]
struct InterfereGrid {
    class: String,
    rows: Vec<String>,
    cols: Vec<String>,
    cells: Vec<Vec<tables::Cell>>,
}

fn degenerate_class(deck: &Deck, s: &str) -> Result<(DegenerateId, usize), Failure> {
    let o = parse_assignment(deck, s)?;
    match o.target {
        Target::Degenerate(d) => Ok((d, o.value)),
        Target::Plain(_) => Err(Failure::Parse(format!("{s:?} is not a class of a degenerate variable"))),
    }
}

fn interfere(deck: &Deck, class: &str, prep: Option<&str>, q: Option<&str>, format: Format) -> Rendered {
    let (d, c) = degenerate_class(deck, class)?;
    let engine = Engine::new(deck);
    let over = deck.degenerate_variable(d).over();
    let class_label = format_outcome(deck, Outcome::new(Target::Degenerate(d), c));
    match (prep, q) {
        (Some(prep), Some(q)) => {
            let po = parse_assignment(deck, prep)?;
            let qo = parse_assignment(deck, q)?;
            let state = engine.prepare(po.target, po.value)?;
            let query = InterferenceQuery::for_class(deck, d, c, state.clone(), qo);
            let parts = interference_parts(&engine, &query)?;
            let i = parts.interference();
            let closed_form = interference_closed_form(deck, &state, d, c, qo)
                .ok()
                .map(|r| rational_string(&r));
            let out = InterfereOne {
                class: class_label,
                prep: format_outcome(deck, po),
                q: format_outcome(deck, qo),
                merged: parts.merged.to_string(),
                branch_sum: parts.branch_sum.to_string(),
                interference: rational_string(&i),
                decimal: decimal(&i),
                closed_form,
            };
            match format {
                Format::Text => Ok(format!(
                    "I = {} - {} = {} ({})\n",
                    out.merged, out.branch_sum, out.interference, out.decimal
                )),
                Format::Json => Ok(json(&out)),
                f => Err(unsupported("interfere", f)),
            }
        }
        (None, None) => {
            let pv = (0..deck.variables().len())
                .map(quantal::VariableId)
                .find(|&v| v != over)
                .ok_or_else(|| Failure::Validation("interference needs a second plain variable".into()))?;
            let t = Target::Plain(pv);
            let grid = interference_grid(&engine, d, c, t, t)?;
            let names: Vec<String> = deck.variable(pv).values().to_vec();
            let out = InterfereGrid {
                class: class_label,
                rows: names.clone(),
                cols: names,
                cells: grid.iter().map(|r| r.iter().map(tables::Cell::new).collect()).collect(),
            };
            match format {
                Format::Text => {
                    let mut s = format!("interference of {} (rows: preparation, columns: final outcome)\n", out.class);
                    for (r, row) in out.rows.iter().zip(&out.cells) {
                        let cells: Vec<String> = row.iter().map(|c| format!("{} ({})", c.exact, c.decimal)).collect();
                        s.push_str(&format!("{r}  {}\n", cells.join("  ")));
                    }
                    Ok(s)
                }
                Format::Json => Ok(json(&out)),
                f => Err(unsupported("interfere", f)),
            }
        }
        _ => Err(Failure::Parse("--prep and --q go together".into())),
    }
}

fn exercises(format: Format) -> Rendered {
    let report = toy::exercise_report();
    match format {
        Format::Markdown | Format::Text => Ok(report.to_markdown()),
        Format::Json => {
            let mut s = report.to_json();
            s.push('\n');
            Ok(s)
        }
        f => Err(unsupported("exercises", f)),
    }
}

fn cmd_quantum(dims: &[usize], trials: usize, seed: u64, format: Format) -> Rendered {
    let report = quantum::theorem_fuzz(dims, trials, seed).map_err(|e| Failure::Parse(e.to_string()))?;
    let body = match format {
        Format::Json => json(&report),
        Format::Text => {
            let mut s = format!("seed {}\n", report.seed);
            for d in &report.per_dim {
                s.push_str(&format!(
                    "dim {}: {} trials, {} compatible, {} incompatible, {} gray, {} failures\n",
                    d.dim, d.trials, d.compatible, d.incompatible, d.gray, d.failures
                ));
            }
            s
        }
        f => return Err(unsupported("quantum", f)),
    };
    if report.total_failures() > 0 {
        print!("{body}");
        return Err(Failure::Runtime(format!("{} pairs contradict the commutation criterion", report.total_failures())));
    }
    Ok(body)
}
