//! Command-line front end: argument parsing, dispatch and exit codes.
//!
//! Exit status is 0 on success, 1 when the input or flags are invalid and 2
//! when a command fails while running.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use salient_clue::corpus::{Form, Style};
use salient_clue::model::{ClueMode, ExtKind};
use salient_clue::Error;

mod commands;
mod inputs;

pub use commands::{inspect_saliency_table, InspectTable};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "salient-clue", version, about = "Quatrain generation with salient clues")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a corpus and write a checkpoint.
    Train(TrainArgs),
    /// Add a style embedding to a checkpoint and fine-tune on style-labeled poems.
    FinetuneStyle(FinetuneArgs),
    /// Generate quatrains as JSON lines, one per keyword.
    Generate(GenerateArgs),
    /// Corpus BLEU of generated lines against references.
    EvalBleu(EvalBleuArgs),
    /// Jaccard overlap of model and gold saliency selections.
    EvalSaliency(EvalSaliencyArgs),
    /// Mean pairwise character-set Jaccard of generated poems.
    EvalInnovation(EvalInnovationArgs),
    /// Print the saliency scores and selections of every line transition of a poem.
    InspectSaliency(InspectArgs),
    /// Check line length, tone template and rhyme of poems.
    CheckForm(CheckFormArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormArg {
    Wujue,
    Qijue,
}

impl From<FormArg> for Form {
    fn from(f: FormArg) -> Form {
        match f {
            FormArg::Wujue => Form::Wujue,
            FormArg::Qijue => Form::Qijue,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StyleArg {
    Pastoral,
    Battlefield,
    Romantic,
    None,
}

impl From<StyleArg> for Style {
    fn from(s: StyleArg) -> Style {
        match s {
            StyleArg::Pastoral => Style::Pastoral,
            StyleArg::Battlefield => Style::Battlefield,
            StyleArg::Romantic => Style::Romantic,
            StyleArg::None => Style::None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClueArg {
    Sdu,
    Ssi,
}

impl From<ClueArg> for ClueMode {
    fn from(c: ClueArg) -> ClueMode {
        match c {
            ClueArg::Sdu => ClueMode::Sdu,
            ClueArg::Ssi => ClueMode::Ssi,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExtArg {
    None,
    Intent,
    Style,
    #[value(name = "intent+style")]
    IntentStyle,
}

impl From<ExtArg> for ExtKind {
    fn from(e: ExtArg) -> ExtKind {
        match e {
            ExtArg::None => ExtKind::None,
            ExtArg::Intent => ExtKind::Intent,
            ExtArg::Style => ExtKind::Style,
            ExtArg::IntentStyle => ExtKind::IntentStyle,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Poems, `L1|L2|L3|L4[<TAB>style[<TAB>keyword]]` per row, or JSON lines (`.jsonl`).
    #[arg(long)]
    pub corpus: PathBuf,
    /// `key = value` settings; see README for the keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub clue: Option<ClueArg>,
    #[arg(long, value_enum)]
    pub ext: Option<ExtArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for per-poem gradients (results do not depend on it).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Write the loss curve as CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Style-labeled poems.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Repeat for several poems.
    #[arg(long, required_unless_present = "keywords")]
    pub keyword: Vec<String>,
    /// File with one keyword per row.
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "wujue")]
    pub form: FormArg,
    #[arg(long, value_enum)]
    pub style: Option<StyleArg>,
    #[arg(long, default_value_t = salient_clue::generator::DEFAULT_BEAM)]
    pub beam: usize,
    /// Defaults to on when --lexicon is given, off otherwise.
    #[arg(long, value_enum)]
    pub constraints: Option<Switch>,
    /// Tab-separated `char tone [rhyme-group]` rows.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keyword sessions run concurrently; output order follows the keyword order.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Write JSON lines here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalBleuArgs {
    /// Generator JSON lines, or plain text with one line of verse per row.
    #[arg(long)]
    pub hyp: PathBuf,
    /// Plain text aligned with the hypothesis lines; tabs separate alternative references.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalSaliencyArgs {
    /// JSON with `lines: [{model: [..], gold: [..]}]`.
    #[arg(long, conflicts_with_all = ["checkpoint", "gold"])]
    pub annotations: Option<PathBuf>,
    /// Score a checkpoint's own selections instead.
    #[arg(long, requires = "gold")]
    pub checkpoint: Option<PathBuf>,
    /// JSON lines with `lines` (four strings) and `selected` (three index lists).
    #[arg(long, requires = "checkpoint")]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalInnovationArgs {
    /// Generator JSON lines, or one `L1|L2|L3|L4` poem per row.
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// File holding one poem as `L1|L2|L3|L4[<TAB>style[<TAB>keyword]]`.
    #[arg(long)]
    pub poem: PathBuf,
    /// Overrides the poem's keyword (otherwise extracted by tf-idf).
    #[arg(long)]
    pub keyword: Option<String>,
    #[arg(long, value_enum)]
    pub style: Option<StyleArg>,
    /// Reject the poem unless it has this form.
    #[arg(long, value_enum)]
    pub form: Option<FormArg>,
    /// Also write the tables as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckFormArgs {
    /// Generator JSON lines, or one `L1|L2|L3|L4` poem per row.
    #[arg(long)]
    pub poem: PathBuf,
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long, value_enum)]
    pub form: Option<FormArg>,
}

/// Parses `argv` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match commands::dispatch(&cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_validation() {
                let _ = writeln!(err, "\n{}", usage(&cli.command));
                EXIT_INVALID
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn usage(command: &Command) -> String {
    use clap::CommandFactory;
    let name = match command {
        Command::Train(_) => "train",
        Command::FinetuneStyle(_) => "finetune-style",
        Command::Generate(_) => "generate",
        Command::EvalBleu(_) => "eval-bleu",
        Command::EvalSaliency(_) => "eval-saliency",
        Command::EvalInnovation(_) => "eval-innovation",
        Command::InspectSaliency(_) => "inspect-saliency",
        Command::CheckForm(_) => "check-form",
    };
    let mut cmd = Cli::command();
    cmd.build();
    cmd.find_subcommand_mut(name)
        .map(|c| c.render_usage().to_string())
        .unwrap_or_default()
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
