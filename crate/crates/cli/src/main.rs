use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use reks::config::SEED_ENV;
use reks::pipeline::{self, AblationAxis};
use reks::synth::SynthConfig;
use reks::{Error, RunConfig};

#[derive(Parser)]
#[command(name = "reks", version, about = "Explainable session-based recommendation over a knowledge graph")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from the synthetic benchmark preset instead of the full-size defaults.
    #[arg(long, global = true)]
    synthetic: bool,
    /// Override a single config key, e.g. `--set epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Takes precedence over REKS_SEED and the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Path length T; sampling sizes and beam widths are padded with 1 or truncated.
    #[arg(long, global = true)]
    path_length: Option<usize>,
    /// Beam width at the first hop.
    #[arg(long, global = true)]
    p1: Option<usize>,
    /// Beam width at the second hop.
    #[arg(long, global = true)]
    p2: Option<usize>,
    /// Cutoffs, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    topk: Vec<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sessionize interactions and write the split.
    Ingest,
    /// Build the knowledge graph from the training split and metadata.
    BuildKg,
    /// Pretrain entity and relation embeddings.
    TrainTranse,
    /// Train the path reasoning policy.
    Train,
    /// Write ranked recommendations with explanation paths for the test sessions.
    Recommend,
    /// Compute HR@K and NDCG@K on the test sessions.
    Evaluate,
    /// Run the ablation variants.
    Ablate {
        /// Any of reward, loss, start, length.
        #[arg(long, value_delimiter = ',', default_value = "reward,loss,start,length")]
        axes: Vec<String>,
    },
    /// Generate the synthetic benchmark into the workdir.
    Synth {
        #[arg(long)]
        products: Option<usize>,
        #[arg(long)]
        users: Option<usize>,
    },
}

fn resize(widths: &mut Vec<usize>, t: usize) {
    widths.resize(t, 1);
}

fn build_config(c: &Common) -> reks::Result<RunConfig> {
    let mut cfg = if c.synthetic {
        RunConfig::synthetic()
    } else {
        RunConfig::default()
    };
    if let Some(path) = &c.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_seed_env(std::env::var(SEED_ENV).ok().as_deref())?;
    for o in &c.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(dir) = &c.workdir {
        cfg.workdir = dir.clone();
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(t) = c.path_length {
        cfg.path_length = t;
        resize(&mut cfg.sampling_sizes, t);
        resize(&mut cfg.beam_widths, t);
    }
    for (hop, width) in [(0, c.p1), (1, c.p2)] {
        if let Some(w) = width {
            match cfg.beam_widths.get_mut(hop) {
                Some(slot) => *slot = w,
                None => return Err(Error::Config(format!("path length {} has no hop {}", cfg.path_length, hop + 1))),
            }
        }
    }
    if !c.topk.is_empty() {
        cfg.topk = c.topk.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> reks::Result<()> {
    let cfg = build_config(&cli.common)?;
    match cli.command {
        Command::Ingest => {
            let s = pipeline::stage_ingest(&cfg)?;
            eprintln!(
                "ingest: {} interactions, {} items retained, {} sessions",
                s.raw_interactions, s.retained_items, s.sessions
            );
        }
        Command::BuildKg => {
            let stats = pipeline::stage_build_kg(&cfg)?;
            eprintln!("build-kg: {} entities, {} triples", stats.total_entities, stats.total_triples);
        }
        Command::TrainTranse => {
            let report = pipeline::stage_train_transe(&cfg)?;
            for (i, loss) in report.epoch_losses.iter().enumerate() {
                eprintln!("transe epoch {}: loss {loss:.4}", i + 1);
            }
        }
        Command::Train => {
            for r in pipeline::stage_train(&cfg)? {
                eprintln!(
                    "epoch {}: L_r {:.4} L_ce {:.4} L {:.4} mean reward {:.4}",
                    r.epoch, r.reward_loss, r.ce_loss, r.loss, r.mean_reward
                );
            }
        }
        Command::Recommend => {
            let k = cfg.topk.iter().copied().max().unwrap_or(10);
            let n = pipeline::stage_recommend(&cfg, k)?;
            eprintln!("recommend: {n} sessions written");
        }
        Command::Evaluate => {
            let report = pipeline::stage_evaluate(&cfg)?;
            print!("{}", report.to_table());
        }
        Command::Ablate { axes } => {
            let axes = axes
                .iter()
                .map(|a| AblationAxis::from_name(a))
                .collect::<reks::Result<Vec<_>>>()?;
            let rows = pipeline::stage_ablate(&cfg, &axes)?;
            print!("{}", pipeline::ablation_table(&rows));
        }
        Command::Synth { products, users } => {
            let mut synth = SynthConfig {
                seed: cfg.seed,
                ..SynthConfig::default()
            };
            if let Some(p) = products {
                synth.products = p;
            }
            if let Some(u) = users {
                synth.users = u;
            }
            let (interactions, metadata) = pipeline::stage_synth(&cfg, &synth)?;
            eprintln!("synth: wrote {} and {}", interactions.display(), metadata.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Parse { .. }
        | Error::Data(_)
        | Error::UnknownEntity(_)
        | Error::ColdStart(_)
        | Error::EmptySession
        | Error::Io { .. }
        | Error::Artifact { .. } => 2,
        Error::Shape { .. } | Error::IllegalAction { .. } | Error::DeadEnd | Error::TraceMismatch(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
