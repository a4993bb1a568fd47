use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rulesynth_cli::{
    cmd_check, cmd_explain, cmd_pdg, cmd_refine, cmd_synth, CliError, Settings, EXIT_INPUT, EXIT_OK,
};

#[derive(Parser)]
#[command(name = "rulesynth", version, about = "Synthesize and run static-analysis rules from code changes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ConfigFlags {
    /// JSON settings file; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Entropy margin for keeping candidate splits.
    #[arg(long)]
    delta: Option<f64>,
    /// Partitions explored before giving up.
    #[arg(long = "max-partitions")]
    max_partitions: Option<usize>,
    /// Neighborhood radius kept for single-example groups.
    #[arg(long)]
    radius: Option<usize>,
    /// Rounds adding uncovered conforming models.
    #[arg(long = "max-model-rounds")]
    max_model_rounds: Option<usize>,
    /// Search-node budget of the alignment solver.
    #[arg(long = "solver-cap")]
    solver_cap: Option<u64>,
    /// Maximum candidate pairs per alignment instance.
    #[arg(long = "max-pairs")]
    max_pairs: Option<usize>,
    /// Write every alignment instance as LP text into this directory.
    #[arg(long = "dump-ilp")]
    dump_ilp: Option<PathBuf>,
}

impl ConfigFlags {
    fn settings(&self) -> Result<Settings, CliError> {
        let base = match &self.config {
            Some(p) => Settings::from_file(p)?,
            None => Settings::default(),
        };
        Ok(base.overridden_by(Settings {
            delta: self.delta,
            max_partitions: self.max_partitions,
            radius: self.radius,
            max_model_rounds: self.max_model_rounds,
            solver_cap: self.solver_cap,
            max_pairs: self.max_pairs,
            dump_ilp: self.dump_ilp.clone(),
        }))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a rule from a corpus directory.
    Synth {
        corpus: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Where to write the synthesis trace.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Run a rule over files or directories; exits 1 when anything is flagged.
    Check {
        rule: PathBuf,
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Fold a false positive into a refinement session.
    Refine {
        session: PathBuf,
        fp: PathBuf,
        /// Corpus used to start the session when it does not exist yet.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Print a rule as formulas.
    Explain { rule: PathBuf },
    /// Print the dependence graph of a source file as JSON.
    Pdg { file: PathBuf },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let mut stdout = std::io::stdout().lock();
    let mut emit = |s: &str| {
        let _ = stdout.write_all(s.as_bytes());
    };
    match cli.command {
        Command::Synth {
            corpus,
            output,
            report,
            flags,
        } => {
            let (rule, _) = cmd_synth(&corpus, &output, report.as_deref(), &flags.settings()?)?;
            let sizes: Vec<String> = rule.post.iter().map(|q| q.node_atoms.len().to_string()).collect();
            emit(&format!(
                "wrote {}: pre {} node(s), post ({})\n",
                output.display(),
                rule.pre.node_atoms.len(),
                sizes.join(", ")
            ));
            Ok(EXIT_OK)
        }
        Command::Check { rule, paths } => {
            let out = cmd_check(&rule, &paths)?;
            emit(&out.records());
            log::info!(
                "{} file(s), {} prefiltered, {} detection(s)",
                out.files,
                out.prefiltered.len(),
                out.detections.len()
            );
            Ok(out.exit_code())
        }
        Command::Refine {
            session,
            fp,
            corpus,
            flags,
        } => {
            let out = cmd_refine(&session, &fp, corpus.as_deref(), &flags.settings()?)?;
            emit(&format!("rule version {:03}, converged={}\n", out.version, out.converged));
            Ok(EXIT_OK)
        }
        Command::Explain { rule } => {
            emit(&cmd_explain(&rule)?);
            Ok(EXIT_OK)
        }
        Command::Pdg { file } => {
            emit(&cmd_pdg(&file)?);
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { EXIT_OK as u8 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
