mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use contobs::Error;

/// Oblivious vs adaptive privacy under continual observation.
#[derive(Parser)]
#[command(name = "contobs", version)]
struct Cli {
    /// TOML file whose keys mirror the long flags; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for trial-level parallelism [default: all cores].
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Accuracy of a mechanism on streams fixed in advance.
    ObliviousAccuracy(commands::ObliviousArgs),
    /// Run the reconstruction attack and report reconstruction quality.
    AdaptiveAttack(commands::AttackArgs),
    /// Refute an (epsilon, delta) budget for a mechanism via the attack.
    Audit(commands::AttackArgs),
    /// Check the majority reconstruction bound on planted instances.
    LemmaCheck(commands::LemmaArgs),
    /// Print derived parameters for (alpha, d).
    Params(commands::ParamsArgs),
    /// Serve a built-in mechanism over the line protocol on stdin/stdout.
    #[command(hide = true)]
    ServeMechanism(ServeArgs),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "fresh-rr")]
    mechanism: String,
    /// Steps accepted before refusing [default: unlimited].
    #[arg(long)]
    horizon: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Domain(_) => 2,
        Error::Protocol(_) | Error::Lifecycle(_) => 3,
        Error::Io(_) => 4,
    }
}

fn serve(args: ServeArgs) -> contobs::Result<ExitCode> {
    let mechanism: contobs::mechanisms::BuiltinMechanism = args.mechanism.parse()?;
    let seed = match std::env::var(contobs::wire::SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("bad {}: {v:?}", contobs::wire::SEED_ENV)))?,
        Err(_) => 0,
    };
    let stdin = std::io::stdin().lock();
    let stdout = std::io::BufWriter::new(std::io::stdout().lock());
    contobs::wire::serve(
        stdin,
        stdout,
        &mechanism,
        seed,
        args.horizon.unwrap_or(usize::MAX),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> contobs::Result<ExitCode> {
    let file = match &cli.config {
        Some(p) => config::FileConfig::load(p)?,
        None => config::FileConfig::default(),
    };
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        if jobs == 0 {
            return Err(Error::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::ObliviousAccuracy(a) => commands::oblivious_accuracy(a, &file),
        Command::AdaptiveAttack(a) => commands::attack(a, &file, commands::AttackMode::Attack),
        Command::Audit(a) => commands::attack(a, &file, commands::AttackMode::Audit),
        Command::LemmaCheck(a) => commands::lemma_check(a, &file),
        Command::Params(a) => commands::params(a, &file),
        Command::ServeMechanism(a) => serve(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("contobs: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
