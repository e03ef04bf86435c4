mod commands;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use oas_align::metric::{DEFAULT_K_FINAL, DEFAULT_K_LAYER};
use oas_align::synth::PathStyle;

/// Alignment analysis and supervision for decoder-only TTS attention dumps.
#[derive(Debug, Parser)]
#[command(name = "oas-align", version)]
struct Cli {
    /// Emit errors and log records as JSON objects on stderr.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print a dump's manifest and per-head row-sum ranges.
    Inspect {
        #[arg(long)]
        dump: PathBuf,
    },
    /// Per-head OAS table, per-layer top-k means and final OAS.
    Oas(OasArgs),
    /// Choose alignment heads from an OAS report.
    SelectHeads(SelectArgs),
    /// Optimal path and durations of one head.
    Path(PathArgs),
    /// Build CoT supervision records from the best head of each utterance.
    Supervise(SuperviseArgs),
    /// OAS loss and gradient norms on designated heads.
    Loss(LossArgs),
    /// Correlate final OAS with per-utterance WER.
    Corr(CorrArgs),
    /// Write a synthetic corpus with planted alignment heads.
    Synth(SynthArgs),
    /// Run the exhaustive path search and finite-difference suites.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
#[group(id = "input", required = true, multiple = false)]
struct InputArgs {
    /// A single dump directory.
    #[arg(long, group = "input")]
    dump: Option<PathBuf>,
    /// A directory whose subdirectories are dumps.
    #[arg(long, group = "input")]
    corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OasArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "oas_report.json")]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K_LAYER)]
    k_layer: usize,
    #[arg(long, default_value_t = DEFAULT_K_FINAL)]
    k_final: usize,
    /// Also write one JSON line per utterance (final OAS and best head).
    #[arg(long)]
    per_utt_out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyKind {
    Fixed,
    Top,
}

#[derive(Debug, Args)]
struct PolicyArgs {
    #[arg(long, value_enum, default_value = "fixed")]
    policy: PolicyKind,
    /// Layers searched by the fixed policy.
    #[arg(long, value_delimiter = ',', default_value = "8,9")]
    layers: Vec<usize>,
    /// Heads kept per layer by the fixed policy; default is half the heads.
    #[arg(long)]
    per_layer: Option<usize>,
    /// Heads kept by the top policy.
    #[arg(long, default_value_t = 14)]
    count: usize,
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// An `oas_report.json`.
    #[arg(long)]
    report: PathBuf,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value = "heads.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PathArgs {
    #[arg(long)]
    dump: PathBuf,
    /// Defaults to the highest-OAS head.
    #[arg(long, requires = "head")]
    layer: Option<usize>,
    #[arg(long, requires = "layer")]
    head: Option<usize>,
    #[arg(long, default_value = "path.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SuperviseArgs {
    #[command(flatten)]
    input: InputArgs,
    /// JSON array of token ids (single dump) or JSONL of
    /// `{"utterance_id", "tokens"}` records.
    #[arg(long)]
    tokens: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "supervision.jsonl")]
    out: PathBuf,
    /// Use the corpus-level best head for utterances whose own OAS table
    /// cannot be computed.
    #[arg(long)]
    fallback_corpus_head: bool,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct LossArgs {
    #[arg(long)]
    dump: PathBuf,
    /// A `heads.json` from `select-heads`; otherwise heads are chosen on this
    /// dump with the policy flags.
    #[arg(long)]
    heads: Option<PathBuf>,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Clamp path probabilities below this value instead of failing.
    #[arg(long, num_args = 0..=1, default_missing_value = "1e-8")]
    floor: Option<f64>,
    #[arg(long, default_value = "loss_report.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CorrArgs {
    /// Per-utterance OAS lines written by `oas --per-utt-out`.
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    oas: Option<PathBuf>,
    /// Compute per-utterance OAS from this corpus instead.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Defaults to `wer.jsonl` inside the corpus.
    #[arg(long, required_unless_present = "corpus")]
    wer: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K_FINAL)]
    k_final: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StyleArg {
    Diagonal,
    RandomMonotone,
}

impl From<StyleArg> for PathStyle {
    fn from(s: StyleArg) -> Self {
        match s {
            StyleArg::Diagonal => PathStyle::Diagonal,
            StyleArg::RandomMonotone => PathStyle::RandomMonotone,
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    n_utts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, default_value_t = 36)]
    speech_len: usize,
    #[arg(long, default_value_t = 12)]
    text_len: usize,
    #[arg(long, value_enum, default_value = "random-monotone")]
    path_style: StyleArg,
    #[arg(long, default_value_t = 24)]
    n_layers: usize,
    #[arg(long, default_value_t = 14)]
    n_heads: usize,
    /// Layers receiving the planted path.
    #[arg(long, value_delimiter = ',', default_value = "8,9")]
    planted_layers: Vec<usize>,
    /// Heads `0..n` of each planted layer receive the path.
    #[arg(long, default_value_t = 7)]
    planted_per_layer: usize,
    /// Perturbation of the background heads' uniform rows.
    #[arg(long, default_value_t = 0.5)]
    jitter: f64,
    /// Fixed noise level; drawn uniformly per utterance when absent.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0.02)]
    wer_base: f64,
    #[arg(long, default_value_t = 0.5)]
    wer_slope: f64,
    #[arg(long, default_value_t = 0.02)]
    wer_sigma: f64,
}

fn init_logging(json: bool) {
    let env = env_logger::Env::new().filter_or("OAS_ALIGN_LOG", "warn");
    let mut builder = env_logger::Builder::from_env(env);
    if json {
        builder.format(|buf, record| {
            let line = serde_json::json!({
                "level": record.level().as_str().to_ascii_lowercase(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    builder.init();
}

fn report_failure(json: bool, kind: &str, message: &str) {
    if json {
        eprintln!(
            "{}",
            serde_json::json!({ "error": kind, "message": message })
        );
    } else {
        eprintln!("error: {message}");
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let wants_json = std::env::args().any(|a| a == "--json");
            if wants_json && e.use_stderr() {
                report_failure(true, "usage", e.to_string().trim());
                return ExitCode::from(2);
            }
            e.exit();
        }
    };
    init_logging(cli.json);
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report_failure(cli.json, f.kind, &f.message);
            ExitCode::FAILURE
        }
    }
}
