use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attnmod::harness::{run_ablation, run_trace_with, trace_step, write_trace, ArmSummary, HarnessError};
use attnmod::render::render_heatmap;
use attnmod::{
    ConfigError, Lexicon, Matrix, ParseError, ParsedPrompt, PromptParser, TraceConfig,
};
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_USAGE: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_OUTPUT: u8 = 4;
const EXIT_INTERNAL: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "attnmod", version, about = "Phase-wise attention modulation toolkit")]
struct Cli {
    /// Run config (JSON with trace / self_mod / cross_mod / parser sections)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Lexicon file with one `word<TAB>TAG` pair per line
    #[arg(long, global = true, value_name = "PATH")]
    lexicon: Option<PathBuf>,
    /// Override the trace seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Machine-readable output
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split a prompt into entity groups and other spans
    Parse { prompt: String },
    /// Run the synthetic trace and write tensors plus a manifest
    Trace {
        #[arg(long, default_value = "trace_out")]
        out: PathBuf,
    },
    /// Compare baseline, self-only, mask-only, reweight-only and full arms
    Ablate {
        /// Timing repetitions per arm
        #[arg(long, default_value_t = attnmod::harness::OVERHEAD_SAMPLES)]
        samples: usize,
        /// Skip the overhead measurement
        #[arg(long)]
        no_timing: bool,
    },
    /// Write one attention slice as a binary PGM heatmap
    Render {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        step: usize,
        /// Cross-attention map of the first token with this text
        #[arg(long, conflicts_with_all = ["token_index", "patch"])]
        token: Option<String>,
        /// Cross-attention map of this token position
        #[arg(long, conflicts_with = "patch")]
        token_index: Option<usize>,
        /// Self-attention map of patch `H,W`
        #[arg(long, value_parser = parse_patch)]
        patch: Option<(usize, usize)>,
        /// Head for --patch; averages heads when omitted
        #[arg(long)]
        head: Option<usize>,
        #[arg(long, value_enum, default_value_t = FieldKind::Modulated)]
        field: FieldKind,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FieldKind {
    Raw,
    Modulated,
}

fn parse_patch(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(',').ok_or("expected H,W")?;
    let p = |x: &str| x.trim().parse::<usize>().map_err(|e| e.to_string());
    Ok((p(h)?, p(w)?))
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, format!("invalid config: {e}"))
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Parse(p) => parse_failure(p),
            HarnessError::Config(c) => c.into(),
            HarnessError::PromptTooLong { .. } => Failure::new(EXIT_CONFIG, format!("invalid config: {e}")),
            HarnessError::Io(io) => Failure::new(EXIT_OUTPUT, format!("cannot write output: {io}")),
            other => Failure::new(EXIT_INTERNAL, other.to_string()),
        }
    }
}

fn parse_failure(e: ParseError) -> Failure {
    match e {
        ParseError::EmptyPrompt => Failure::new(
            EXIT_USAGE,
            format!("{e}\n\nUsage: attnmod parse <PROMPT>"),
        ),
        ParseError::NoEntityFound => Failure::new(EXIT_PARSE, format!("NoEntityFound: {e}")),
        ParseError::Lexicon { .. } | ParseError::Io(_) => Failure::new(EXIT_CONFIG, e.to_string()),
    }
}

struct Style {
    color: bool,
}

impl Style {
    fn detect() -> Self {
        let color = std::env::var_os("ATTNMOD_NO_COLOR").is_none() && std::io::stdout().is_terminal();
        Self { color }
    }

    fn paint(&self, code: &str, s: &str) -> String {
        if self.color {
            format!("\x1b[{code}m{s}\x1b[0m")
        } else {
            s.to_string()
        }
    }
}

fn load_config(cli: &Cli) -> Result<TraceConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => TraceConfig::load(path)?,
        None => TraceConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.trace.seed = seed;
    }
    if cfg.self_mod.enabled && cfg.self_mod.tau > 1.0 {
        eprintln!(
            "warning: self_mod.tau = {} > 1 flattens self-attention instead of sharpening it",
            cfg.self_mod.tau
        );
    }
    Ok(cfg)
}

fn load_parser(cli: &Cli, cfg: &TraceConfig) -> Result<PromptParser, Failure> {
    let lexicon = match &cli.lexicon {
        Some(path) => Lexicon::load(path).map_err(|e| Failure::new(EXIT_CONFIG, format!("invalid lexicon: {e}")))?,
        None => Lexicon::bundled(),
    };
    Ok(cfg.parser(lexicon))
}

fn print_json(value: &impl serde::Serialize) {
    let v = serde_json::to_value(value).expect("serializable");
    println!("{}", serde_json::to_string_pretty(&v).expect("value serializes"));
}

fn cmd_parse(cli: &Cli, prompt: &str) -> Result<(), Failure> {
    if prompt.trim().is_empty() {
        return Err(parse_failure(ParseError::EmptyPrompt));
    }
    let cfg = load_config(cli)?;
    let parser = load_parser(cli, &cfg)?;
    let parsed = parser.parse(prompt).map_err(parse_failure)?;
    if cli.json {
        print_json(&parsed);
    } else {
        print_parse_table(&parsed, &Style::detect());
    }
    Ok(())
}

fn print_parse_table(p: &ParsedPrompt, style: &Style) {
    let tags: Vec<String> = p.tokens.iter().map(|t| format!("{}/{}", t.text, t.tag)).collect();
    println!("tokens: {}", tags.join(" "));
    println!("{:<8} {:<10} {:<6} text", "kind", "span", "head");
    for (i, e) in p.entities.iter().enumerate() {
        let kind = style.paint("1;32", &format!("{:<8}", format!("entity{i}")));
        let span = format!("[{}, {})", e.start, e.end);
        println!("{kind} {span:<10} {:<6} {}", e.head_noun_index, e.label);
    }
    if !p.other_spans.is_empty() {
        let idx: Vec<String> = p.other_spans.iter().map(ToString::to_string).collect();
        let words: Vec<&str> = p.other_spans.iter().map(|&i| p.tokens[i].text.as_str()).collect();
        let kind = style.paint("1;34", &format!("{:<8}", "other"));
        println!("{kind} {:<10} {:<6} {}", format!("{{{}}}", idx.join(",")), "-", words.join(" "));
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn cmd_trace(cli: &Cli, out: &Path) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let parser = load_parser(cli, &cfg)?;
    let trace = run_trace_with(&cfg, &parser)?;
    if std::fs::create_dir_all(out).is_err() {
        return Err(Failure::new(EXIT_OUTPUT, format!("cannot create {}", out.display())));
    }
    let manifest = write_trace(&trace, out)?;
    if cli.json {
        print_json(&manifest.summary);
        return Ok(());
    }
    println!("wrote {} steps to {}", manifest.steps.len(), out.display());
    println!("{:<10} {:>10} {:>10} {:>10}", "field", "overlap", "entropy", "top-mass");
    for (name, s) in [("raw", &manifest.summary.raw), ("modulated", &manifest.summary.modulated)] {
        println!(
            "{name:<10} {:>10} {:>10.4} {:>10.2}",
            fmt_opt(s.mean_overlap),
            s.mean_entropy,
            s.mean_top_mass
        );
    }
    Ok(())
}

fn cmd_ablate(cli: &Cli, samples: usize, no_timing: bool) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let parser = load_parser(cli, &cfg)?;
    let arms = run_ablation(&cfg, &parser, (!no_timing).then_some(samples))?;
    if cli.json {
        print_json(&arms);
        return Ok(());
    }
    print_ablation(&arms);
    Ok(())
}

fn print_ablation(arms: &[ArmSummary]) {
    println!(
        "{:<14} {:>10} {:>10} {:>10} {:>10} {:>9}",
        "arm", "overlap", "max", "entropy", "top-mass", "overhead"
    );
    for a in arms {
        let ratio = a.overhead.map_or_else(|| "-".to_string(), |o| format!("{:.3}", o.ratio));
        println!(
            "{:<14} {:>10} {:>10} {:>10.4} {:>10.2} {:>9}",
            a.arm.name(),
            fmt_opt(a.summary.mean_overlap),
            fmt_opt(a.summary.max_overlap),
            a.summary.mean_entropy,
            a.summary.mean_top_mass,
            ratio
        );
    }
}

enum Selection {
    Token(usize),
    Patch(usize, usize, Option<usize>),
}

#[allow(clippy::too_many_arguments)]
fn cmd_render(
    cli: &Cli,
    out: &Path,
    step: usize,
    token: Option<&str>,
    token_index: Option<usize>,
    patch: Option<(usize, usize)>,
    head: Option<usize>,
    field: FieldKind,
) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let parser = load_parser(cli, &cfg)?;
    let parsed = parser.parse(&cfg.trace.prompt).map_err(parse_failure)?;
    let p = &cfg.trace;
    let selection = match (token, token_index, patch) {
        (Some(word), _, _) => Selection::Token(
            parsed
                .token_index(&word.to_lowercase())
                .ok_or_else(|| Failure::new(EXIT_USAGE, format!("token {word:?} not in prompt")))?,
        ),
        (_, Some(i), _) if i < p.tokens => Selection::Token(i),
        (_, Some(i), _) => return Err(Failure::new(EXIT_USAGE, format!("token index {i} >= {}", p.tokens))),
        (_, _, Some((h, w))) if h < p.height && w < p.width => Selection::Patch(h, w, head),
        (_, _, Some(_)) => return Err(Failure::new(EXIT_USAGE, "patch outside the grid")),
        _ => return Err(Failure::new(EXIT_USAGE, "one of --token, --token-index, --patch is required")),
    };
    if head.is_some_and(|k| k >= p.heads) {
        return Err(Failure::new(EXIT_USAGE, format!("head must be < {}", p.heads)));
    }
    let record = if cfg.cross_mod.freeze_after.is_some() {
        let mut trace = run_trace_with(&cfg, &parser)?;
        if step >= trace.steps.len() {
            return Err(Failure::new(EXIT_USAGE, format!("step must be < {}", trace.steps.len())));
        }
        trace.steps.swap_remove(step)
    } else {
        trace_step(&cfg, &parsed, step).map_err(|e| match e {
            HarnessError::StepOutOfRange { .. } => Failure::new(EXIT_USAGE, e.to_string()),
            other => other.into(),
        })?
    };
    let slice = match selection {
        Selection::Token(t) => match field {
            FieldKind::Raw => record.raw.token_slice(t),
            FieldKind::Modulated => record.modulated.token_slice(t),
        },
        Selection::Patch(h, w, head) => {
            let row = h * p.width + w;
            let heads: Vec<&Matrix> = match head {
                Some(k) => vec![&record.self_weights[k]],
                None => record.self_weights.iter().collect(),
            };
            let n = heads.len() as f64;
            let data = (0..p.patches())
                .map(|j| heads.iter().map(|m| m[(row, j)]).sum::<f64>() / n)
                .collect();
            Matrix::from_vec(p.height, p.width, data).expect("grid shape")
        }
    };
    render_heatmap(&slice, out)
        .map_err(|e| Failure::new(EXIT_OUTPUT, format!("cannot write {}: {e}", out.display())))?;
    if cli.json {
        print_json(&serde_json::json!({ "output": out.display().to_string(), "step": step }));
    } else {
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Parse { prompt } => cmd_parse(cli, prompt),
        Command::Trace { out } => cmd_trace(cli, out),
        Command::Ablate { samples, no_timing } => cmd_ablate(cli, *samples, *no_timing),
        Command::Render {
            out,
            step,
            token,
            token_index,
            patch,
            head,
            field,
        } => cmd_render(cli, out, *step, token.as_deref(), *token_index, *patch, *head, *field),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
