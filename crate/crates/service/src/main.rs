use std::collections::BTreeSet;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use learnpath_core::concept_map::{parse_arcs, parse_nodes, parse_partial_order, write_arcs, ConceptMap};
use learnpath_core::ingest::{load_question_bank, write_question_bank};
use learnpath_core::sim::{run_experiment, ExperimentConfig};
use learnpath_service::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "learnpath", version, about = "Adaptive self-assessment question recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        /// TOML config; defaults plus environment overrides when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Validate a question bank and concept map, optionally installing them.
    Ingest {
        #[arg(long)]
        bank: PathBuf,
        /// Directory with concept_nodes.csv and either concept_arcs.csv or
        /// partial_order.csv.
        #[arg(long)]
        map: PathBuf,
        /// Copy the validated files here under the service's default names.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Run a simulated-student experiment.
    Simulate {
        /// JSON experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Directory for results.csv and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
}

type Error = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let result = match Cli::parse().command {
        Command::Serve { config } => serve(config.as_deref()),
        Command::Ingest { bank, map, data_dir } => ingest(&bank, &map, data_dir.as_deref()),
        Command::Simulate { config, out } => simulate(&config, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn serve(config: Option<&Path>) -> Result<(), Error> {
    let config = match config {
        Some(path) => ServiceConfig::load(path)?,
        None => {
            let mut cfg = ServiceConfig::default();
            cfg.apply_env(|k| std::env::var(k).ok())?;
            cfg
        }
    };
    let state = Arc::new(AppState::load(config)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(learnpath_service::serve(state, async {
        let _ = tokio::signal::ctrl_c().await;
    }))?;
    Ok(())
}

fn ingest(bank_path: &Path, map_dir: &Path, data_dir: Option<&Path>) -> Result<(), Error> {
    let bank = load_question_bank(bank_path)?;
    let nodes_path = map_dir.join("concept_nodes.csv");
    let concepts = parse_nodes(File::open(&nodes_path)?)?;
    let arcs_path = map_dir.join("concept_arcs.csv");
    let arcs = if arcs_path.exists() {
        parse_arcs(File::open(&arcs_path)?)?
    } else {
        parse_partial_order(File::open(map_dir.join("partial_order.csv"))?)?
    };
    let (map, warnings) = ConceptMap::new(concepts, arcs)?;

    let ids: BTreeSet<_> = bank.iter().map(|q| &q.id).collect();
    let dangling: Vec<_> = map
        .concepts()
        .iter()
        .flat_map(|c| c.question_ids.iter().filter(|q| !ids.contains(q)).map(move |q| (&c.id, q)))
        .collect();
    if !dangling.is_empty() {
        let list: Vec<String> = dangling.iter().map(|(c, q)| format!("{c}:{q}")).collect();
        return Err(format!("concepts reference questions missing from the bank: {}", list.join(", ")).into());
    }
    let topics: BTreeSet<&str> = bank.iter().map(|q| q.topic.as_str()).collect();
    println!(
        "{} questions in {} topics; {} concepts, {} prerequisite arcs",
        bank.len(),
        topics.len(),
        map.len(),
        map.arcs().len()
    );
    for w in &warnings {
        println!("warning: {w:?}");
    }
    let unmapped = map.unmapped_questions(&bank);
    if !unmapped.is_empty() {
        println!("{} questions belong to no concept", unmapped.len());
    }

    if let Some(dir) = data_dir {
        std::fs::create_dir_all(dir)?;
        let defaults = ServiceConfig::default();
        write_question_bank(&bank, File::create(dir.join(&defaults.bank))?)?;
        std::fs::copy(&nodes_path, dir.join(&defaults.concept_nodes))?;
        write_arcs(map.arcs(), File::create(dir.join(&defaults.concept_arcs))?)?;
        println!("installed into {}", dir.display());
    }
    Ok(())
}

fn simulate(config: &Path, out: &Path) -> Result<(), Error> {
    let cfg = ExperimentConfig::load(config)?;
    let result = run_experiment(&cfg)?;
    result.write_to_dir(out)?;
    println!("topic {}", result.topic);
    for s in &result.summaries {
        println!(
            "{:<24} mean questions to mastery {:>7.2}  mastered {}/{}  correct rate {:.3}  coverage {:.3}",
            s.strategy, s.mean_questions_to_mastery, s.mastered_runs, s.runs, s.mean_correct_rate, s.mean_coverage
        );
    }
    Ok(())
}
