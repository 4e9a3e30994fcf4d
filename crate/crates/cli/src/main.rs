use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use refex_cli::config::{parse_holdout, RunConfig};
use refex_cli::presets::{self, Overrides, Preset};
use refex_cli::run;
use refex_cli::CliError;
use refex_core::domain::{SplitTag, Variant};

#[derive(Parser)]
#[command(name = "refex", version, about = "Referring-expression grid worlds and attention-only transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset bundle.
    Gen(Flags),
    /// Train a model on a generated bundle.
    Train(Flags),
    /// Evaluate a checkpoint or the construction on test files.
    Eval(Flags),
    /// Export M, s and logit decompositions.
    Inspect(Flags),
    /// Run a named experiment end to end.
    Reproduce(ReproduceArgs),
}

/// Every flag overrides the same key in `--config`.
#[derive(Args, Default)]
struct Flags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long)]
    val_count: Option<usize>,
    #[arg(long)]
    test_count: Option<usize>,
    #[arg(long)]
    min_objects: Option<usize>,
    #[arg(long)]
    max_objects: Option<usize>,
    #[arg(long)]
    green_square_distractor_scale: Option<f64>,
    /// Comma-separated split tags, or `none`.
    #[arg(long, value_parser = parse_holdout)]
    holdout: Option<Vec<SplitTag>>,

    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_qk: Option<usize>,
    #[arg(long)]
    scale_scores: bool,

    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    init_std: Option<f64>,
    #[arg(long)]
    train_seed: Option<u64>,

    /// Use the hand-built weights.
    #[arg(long)]
    construct: bool,
    #[arg(long)]
    gamma_attr: Option<f64>,
    #[arg(long)]
    gamma_size: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,

    #[arg(long)]
    example_id: Option<usize>,
    #[arg(long)]
    examples: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// table6, a1-distractor or construction
    preset: String,
    #[arg(long, default_value = "reproduce")]
    out: PathBuf,
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long)]
    test_count: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).map_err(|e| e.to_string())
}

macro_rules! overlay {
    ($cfg:ident, $flags:ident, $($field:ident),*) => {
        $(if let Some(v) = $flags.$field { $cfg.$field = v; })*
    };
}

impl Flags {
    fn resolve(self) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::load(self.config.as_deref())?;
        let f = self;
        overlay!(
            c, f, variant, seed, out, train_count, val_count, test_count, min_objects, max_objects,
            green_square_distractor_scale, layers, heads, lr, batch_size, epochs, patience, init_std, train_seed,
            gamma_attr, gamma_size, sigma
        );
        if f.data.is_some() {
            c.data = f.data;
        }
        if f.checkpoint.is_some() {
            c.checkpoint = f.checkpoint;
        }
        if f.holdout.is_some() {
            c.holdout = f.holdout;
        }
        if f.d_qk.is_some() {
            c.d_qk = f.d_qk;
        }
        if f.example_id.is_some() {
            c.example_id = f.example_id;
        }
        if f.examples.is_some() {
            c.examples = f.examples;
        }
        c.scale_scores |= f.scale_scores;
        c.construct |= f.construct;
        // Model flags fail fast, before any data is touched.
        c.model_config(c.variant)?;
        std::fs::create_dir_all(&c.out)?;
        Ok(c)
    }
}

fn reproduce(args: ReproduceArgs) -> Result<bool, CliError> {
    let preset = Preset::parse(&args.preset)?;
    let overrides =
        Overrides { train_count: args.train_count, test_count: args.test_count, epochs: args.epochs, restarts: args.restarts };
    let out = &args.out;
    let pass = match preset {
        Preset::Table6 => {
            let rows = presets::reproduce_table6(&overrides, out)?;
            print!("{}", std::fs::read_to_string(out.join("table6.md"))?);
            rows.iter().all(|r| r.cells.iter().all(|c| c.pass))
        }
        Preset::A1Distractor => {
            let summary = presets::reproduce_a1_distractor(&overrides, out)?;
            print!("{}", std::fs::read_to_string(out.join("a1_distractor.md"))?);
            summary.pass
        }
        Preset::Construction => {
            let results = presets::reproduce_construction(&overrides, out)?;
            for r in &results {
                let accs: Vec<String> = r.accuracy.iter().map(|(t, a)| format!("{t} {a:.4}")).collect();
                println!("{}: {}", r.variant, accs.join(" "));
            }
            results.iter().all(|r| r.pass)
        }
    };
    println!("{}", if pass { "all checks pass" } else { "some checks fail" });
    Ok(pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(f) => f.resolve().and_then(|c| run::cmd_gen(&c)).map(|_| true),
        Command::Train(f) => f.resolve().and_then(|c| run::cmd_train(&c)).map(|_| true),
        Command::Eval(f) => f.resolve().and_then(|c| run::cmd_eval(&c)).map(|_| true),
        Command::Inspect(f) => f.resolve().and_then(|c| run::cmd_inspect(&c)).map(|_| true),
        Command::Reproduce(a) => reproduce(a),
    };
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
