use std::path::PathBuf;
use std::process::ExitCode;

use authnet::harness::{
    self, known_keys, load_config, report, run_experiment, source_from_path, write_synthetic_corpus,
    ExperimentConfig, HarnessError, RunManifest, Session, SynthGrid,
};
use authnet::corpus::UtteranceKey;
use clap::{Parser, Subcommand};

const EXIT_PARTIAL: u8 = 2;

/// Person-word video verification experiments.
///
/// Any configuration key can be set with `--<key>=<value>` (for example
/// `--classifier.epochs=10`) or an `AUTHNET_<KEY>` variable
/// (`AUTHNET_CLASSIFIER_EPOCHS=10`). Flags win over variables, variables win
/// over the config file.
#[derive(Debug, Parser)]
#[command(name = "authnet", version)]
struct Cli {
    /// TOML configuration file (default: $AUTHNET_CONFIG if set).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Index the corpus and list speakers, words and enrollable targets.
    Scan,
    /// Detect, crop and normalise every utterance into the frame cache.
    Preprocess,
    /// Compute (or load) cached features for every utterance.
    Embed,
    /// Train a verifier for each selected target.
    Train,
    /// Evaluate saved verifiers on their test partitions.
    Eval,
    /// Train and evaluate every target, then write the aggregate report.
    Run,
    /// Score a single utterance (frame directory or video) with a saved model.
    Verify {
        #[arg(long)]
        model: PathBuf,
        /// Directory of frame images or a video file.
        #[arg(long)]
        input: PathBuf,
    },
    /// Aggregate the completed combinations of a run into tables and plots.
    Report,
    /// Print the effective configuration as TOML.
    Config {
        /// List every accepted key instead.
        #[arg(long)]
        keys: bool,
    },
    /// Write a small synthetic corpus in the MIRACL-VC1 layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        speakers: usize,
        #[arg(long, default_value_t = 3)]
        words: usize,
        #[arg(long, default_value_t = 4)]
        utterances: usize,
        #[arg(long, default_value_t = 8)]
        frames: usize,
    },
}

/// Pulls `--<known.key>=value` and `--<known.key> value` out of the argument
/// list before clap sees it.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let keys = known_keys();
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match body.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if !keys.contains(&name) {
            if name.contains('.') {
                return Err(format!("unknown configuration key {name:?}"));
            }
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| format!("--{name} needs a value"))?,
        };
        overrides.push((name, value));
    }
    Ok((rest, overrides))
}

fn main() -> ExitCode {
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = Cli::parse_from(args);
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AUTHNET_LOG", level))
        .format_timestamp(None)
        .init();

    let file = cli
        .config
        .clone()
        .or_else(|| std::env::var_os("AUTHNET_CONFIG").map(PathBuf::from));
    let result = load_config(file.as_deref(), std::env::vars(), &overrides)
        .and_then(|config| execute(cli.command, config));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn print_failures(failed: &std::collections::BTreeMap<UtteranceKey, String>) -> u8 {
    for (k, e) in failed {
        eprintln!("failed {k}: {e}");
    }
    if failed.is_empty() {
        0
    } else {
        EXIT_PARTIAL
    }
}

fn execute(command: Command, config: ExperimentConfig) -> Result<u8, HarnessError> {
    match command {
        Command::Config { keys } => {
            if keys {
                for k in known_keys() {
                    println!("{k}\t{}", harness::env_var_name(&k));
                }
            } else {
                print!("{}", config.to_toml());
            }
            Ok(0)
        }
        Command::Synth { out, speakers, words, utterances, frames } => {
            write_synthetic_corpus(&out, SynthGrid { speakers, words, utterances, frames })?;
            println!("{}", out.display());
            Ok(0)
        }
        Command::Scan => {
            let session = Session::open(&config)?;
            let index = &session.index;
            println!("root        {}", index.root.display());
            println!("layout      {}", index.layout);
            println!("speakers    {} ({})", index.speakers.len(), index.speakers.join(" "));
            println!("words       {} ({})", index.words.len(), index.words.join(" "));
            println!("utterances  {} ({} per word)", index.len(), index.utterances_per_word);
            println!("missing     {}", index.missing.len());
            let targets = session.targets()?;
            println!("targets     {}", targets.len());
            for t in targets {
                println!("  {t}");
            }
            Ok(0)
        }
        Command::Preprocess => {
            let mut session = Session::open(&config)?;
            let failed = session.preprocess_all();
            println!("preprocessed {} of {} utterances", session.index.len() - failed.len(), session.index.len());
            Ok(print_failures(&failed))
        }
        Command::Embed => {
            let session = Session::open(&config)?;
            let keys: Vec<UtteranceKey> = session.index.keys().cloned().collect();
            let (ok, failed) = session.features(&keys);
            println!(
                "embedded {} of {} utterances with {}",
                ok.len(),
                keys.len(),
                session.store.backend().fingerprint()
            );
            Ok(print_failures(&failed))
        }
        Command::Train => {
            let session = Session::open(&config)?;
            let mut code = 0;
            for target in session.targets()? {
                let plan = session.plan(&target)?;
                let keys: Vec<UtteranceKey> = plan.train.iter().chain(&plan.test).map(|e| e.key.clone()).collect();
                let (features, failed) = session.features(&keys);
                code = code.max(print_failures(&failed));
                match session.train_target(&target, &features) {
                    Ok((_, model, _)) => println!(
                        "{target}: final loss {:.6} -> {}",
                        model.loss_curve.last().copied().unwrap_or(f64::NAN),
                        harness::model_path(&config.output, &target).display()
                    ),
                    Err(e) => {
                        eprintln!("{target}: {e}");
                        code = EXIT_PARTIAL;
                    }
                }
            }
            Ok(code)
        }
        Command::Eval => {
            let session = Session::open(&config)?;
            let mut code = 0;
            for target in session.targets()? {
                match session.evaluate_saved(&target) {
                    Ok(r) => {
                        let m = r.eval.metrics;
                        let f = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
                        println!(
                            "{target}: sensitivity {} specificity {} accuracy {} auc {} eer {}",
                            f(m.sensitivity),
                            f(m.specificity),
                            f(m.accuracy),
                            f(m.auc),
                            f(m.eer)
                        );
                    }
                    Err(e) => {
                        eprintln!("{target}: {e}");
                        code = EXIT_PARTIAL;
                    }
                }
            }
            Ok(code)
        }
        Command::Run => {
            let outcome = run_experiment(&config)?;
            let m = &outcome.manifest;
            println!(
                "{} combinations: {} trained, {} reused, {} failed",
                m.entries.len(),
                outcome.trained.len(),
                outcome.reused.len(),
                outcome.failures()
            );
            if m.completed().next().is_some() {
                let (_, files) = report(m, &config.output)?;
                println!("{}", std::fs::read_to_string(&files.tables).map_err(|e| HarnessError::Io {
                    path: files.tables.clone(),
                    source: e,
                })?);
            }
            let partial = outcome.failures() > 0 || !m.failed_utterances.is_empty();
            Ok(if partial { EXIT_PARTIAL } else { 0 })
        }
        Command::Verify { model, input } => {
            let source = source_from_path(&input)?;
            let verdict = harness::verify(&model, &source, &config)?;
            println!("{verdict}");
            Ok(0)
        }
        Command::Report => {
            let manifest = RunManifest::load(&RunManifest::path_in(&config.output))?;
            let (agg, files) = report(&manifest, &config.output)?;
            print!("{}", std::fs::read_to_string(&files.tables).unwrap_or_default());
            println!(
                "\n{} combinations; wrote {}, {} and {} plots",
                agg.combinations,
                files.aggregate_json.display(),
                files.tables.display(),
                files.plots.len()
            );
            Ok(if manifest.failures() > 0 { EXIT_PARTIAL } else { 0 })
        }
    }
}
