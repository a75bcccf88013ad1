mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddi_core::model::Variant;

use failure::Failure;

const SMILES_HELP: &str = "\
SMILES subset:
  organic-subset atoms B C N O P S F Cl Br I, aromatic b c n o p s;
  bracket atoms [Sym Hn +c] with any element, explicit H count and charge;
  branches ( ), ring closures 0-9 and %nn, bonds - = # :.
  Rejected: stereo (/ \\ @, see `prepare --strip-stereo`), isotopes, atom
  classes, wildcards *, quadruple bonds $ and dot-separated fragments.

Exit codes: 0 success, 2 input error, 3 numeric failure,
            4 config/checkpoint mismatch, 64 usage error.";

const PAIRS_HELP: &str = "\
Pair file (UTF-8 CSV, header required):
  drug1_id,drug2_id,smiles1,smiles2,type_code
  Each row is a known interaction; type_code is its type in 0..=85.
  Negatives (type_code -1) are sampled by `prepare`.

Reference file (optional, UTF-8 CSV, header required):
  partner_name,drugbank_id,smiles,label,mechanism
  label is the expected binary interaction with ASA (0 or 1).";

#[derive(Parser, Debug)]
#[command(name = "ddi", version, about = "Drug-drug interaction prediction with siamese graph networks", after_help = SMILES_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// TOML run configuration; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training and split seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epochs per training phase
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Train only the multi-class head in phase 2
    #[arg(long)]
    pub freeze_trunk: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a dataset bundle: negatives, ASA holdout, split, graph cache, manifest
    #[command(after_help = PAIRS_HELP)]
    Prepare {
        #[arg(long)]
        pairs: PathBuf,
        /// Curated ASA co-medications for `asa-report`
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Remove stereo marks before parsing
        #[arg(long)]
        strip_stereo: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train one variant; writes checkpoints after each phase and a JSON-lines log
    Train {
        #[arg(long, value_parser = parse_variant)]
        variant: Variant,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Binary and multi-class metrics on the test split
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reference-pair and ASA holdout predictions with attention summaries
    AsaReport {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate all three variants under one configuration
    Ablate {
        /// Prepared bundle; omit with --synthetic
        #[arg(long, required_unless_present = "synthetic")]
        bundle: Option<PathBuf>,
        /// Use the planted-mechanism synthetic benchmark
        #[arg(long, conflicts_with = "bundle")]
        synthetic: bool,
        #[arg(long)]
        out: PathBuf,
        /// Train the variants concurrently (same results, more memory)
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Binary probability, top-5 types and attention summary for one pair
    Predict {
        #[arg(long)]
        smiles_a: String,
        #[arg(long)]
        smiles_b: String,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Emit JSON instead of text
        #[arg(long)]
        json: bool,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
        .map_err(|e: ddi_core::model::ModelError| e.to_string())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Prepare {
            pairs,
            reference,
            out,
            strip_stereo,
            overrides,
        } => commands::prepare(pairs, reference, out, strip_stereo, &overrides),
        Command::Train {
            variant,
            bundle,
            out,
            overrides,
        } => commands::train(variant, bundle, out, &overrides),
        Command::Evaluate {
            checkpoint,
            bundle,
            out,
        } => commands::evaluate(checkpoint, bundle, out),
        Command::AsaReport {
            checkpoint,
            bundle,
            out,
        } => commands::asa_report(checkpoint, bundle, out),
        Command::Ablate {
            bundle,
            synthetic: _,
            out,
            parallel,
            overrides,
        } => commands::ablate(bundle, out, parallel, &overrides),
        Command::Predict {
            smiles_a,
            smiles_b,
            checkpoint,
            json,
        } => commands::predict(&smiles_a, &smiles_b, checkpoint, json),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(64)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
