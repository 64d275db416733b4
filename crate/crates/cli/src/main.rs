//! `humbert`: build corpus indexes, chat in the terminal, run parameter
//! sweeps and launch the HTTP service.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::fs;
use std::io::{self, BufRead, BufWriter, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use humbert::corpus::{ingest, load_index, save_index, CorpusError, CorpusIndex, SegmenterConfig};
use humbert::engine::sweep::{parse_script, sweep, Grid};
use humbert::engine::transcript::Transcript;
use humbert::engine::{BackendChoice, Engine, EngineConfig, EngineError, ParamOverrides, TurnRecord};
use humbert_service::{ServiceConfig, ServiceError};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "humbert", version, about = "Case-grounded dialog engine")]
struct Cli {
    /// Log verbosity on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment a directory of `*.txt` case files into an NDJSON index.
    Ingest {
        dir: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Converse with the engine; one human turn per stdin line.
    Chat {
        index: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        backends: BackendArgs,
        /// Print only the replies.
        #[arg(long)]
        quiet: bool,
        /// Write the finished conversation as JSON.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Replay a scripted conversation over a parameter grid.
    Sweep {
        index: PathBuf,
        /// One human turn per line, `#` comments.
        #[arg(long)]
        script: PathBuf,
        /// e.g. `P=1,5;R=2,6;w=0,2`, optionally with `M=...`.
        #[arg(long)]
        grid: String,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_tokens: Option<usize>,
        #[command(flatten)]
        backends: BackendArgs,
    },
    /// Run the HTTP service.
    Serve {
        /// TOML or JSON service config; `HUMBERT_*` variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus index, overriding the config file.
        #[arg(long)]
        index: Option<PathBuf>,
        /// Listen address, overriding the config file.
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
    },
    /// Print the case a query routes to.
    Classify {
        index: PathBuf,
        query: String,
        /// Also print the score of every case.
        #[arg(long)]
        scores: bool,
        #[command(flatten)]
        backends: BackendArgs,
    },
}

#[derive(Debug, Args)]
struct ParamArgs {
    /// Candidates per turn.
    #[arg(long = "p")]
    p: Option<usize>,
    /// History capacity, in utterances.
    #[arg(long = "r")]
    r: Option<usize>,
    /// Subcontext half-width.
    #[arg(long = "w")]
    w: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Use only the first M+1 sentences of the routed case.
    #[arg(long = "m")]
    m: Option<usize>,
}

impl ParamArgs {
    fn overrides(&self) -> ParamOverrides {
        ParamOverrides {
            p: self.p,
            r: self.r,
            w: self.w,
            seed: self.seed,
            max_tokens: self.max_tokens,
            m: self.m,
        }
    }
}

#[derive(Debug, Args)]
struct BackendArgs {
    /// Remote classifier base URL.
    #[arg(long)]
    classifier: Option<String>,
    /// Remote embedder base URL.
    #[arg(long)]
    embedder: Option<String>,
    /// Remote generator base URL.
    #[arg(long)]
    generator: Option<String>,
    /// Timeout for every remote call, in milliseconds.
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// Fall back to the local backends when a remote one fails.
    #[arg(long)]
    fallback: bool,
}

impl BackendArgs {
    fn engine_config(&self) -> EngineConfig {
        let choice = |url: &Option<String>| match url {
            Some(url) => BackendChoice::Remote {
                url: url.clone(),
                timeout_ms: self.timeout_ms,
                dim: None,
            },
            None => BackendChoice::Local,
        };
        EngineConfig {
            classifier: choice(&self.classifier),
            embedder: choice(&self.embedder),
            generator: choice(&self.generator),
            fallback: self.fallback,
            ..Default::default()
        }
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Failed(String),
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn stdout_err(source: io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(io::stderr)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest { dir, output } => cmd_ingest(&dir, &output),
        Command::Chat {
            index,
            params,
            backends,
            quiet,
            transcript,
        } => cmd_chat(&index, &params, &backends, quiet, transcript.as_deref()),
        Command::Sweep {
            index,
            script,
            grid,
            output,
            seed,
            max_tokens,
            backends,
        } => cmd_sweep(&index, &script, &grid, &output, seed, max_tokens, &backends),
        Command::Serve { config, index, bind } => cmd_serve(config.as_deref(), index, bind),
        Command::Classify {
            index,
            query,
            scores,
            backends,
        } => cmd_classify(&index, &query, scores, &backends),
    }
}

fn load_engine(index: &Path, backends: &BackendArgs) -> Result<Engine, CliError> {
    let index = load_index(index)?;
    Ok(Engine::new(Arc::new(index), backends.engine_config())?)
}

fn cmd_ingest(dir: &Path, output: &Path) -> Result<(), CliError> {
    let ingested = ingest(dir)?;
    for w in &ingested.warnings {
        eprintln!("warning: {w}");
    }
    let (index, warnings) = CorpusIndex::build(&ingested.corpus, &SegmenterConfig::default())?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    save_index(&index, output)?;
    let sentences: usize = index.sentence_sets().iter().map(|s| s.len()).sum();
    println!("{} cases, {} sentences -> {}", index.k(), sentences, output.display());
    Ok(())
}

fn print_turn(out: &mut impl Write, turn: &TurnRecord, case_id: &str, quiet: bool) -> io::Result<()> {
    if quiet {
        return writeln!(out, "{}", turn.reply);
    }
    writeln!(out, "agent> {}", turn.reply)?;
    writeln!(
        out,
        "  case={} k={} j*={} cs={:.4} subcontext={}..={}",
        case_id, turn.k, turn.j_star, turn.similarity[turn.j_star], turn.subcontext.start, turn.subcontext.end
    )?;
    for (l, (c, rho)) in turn.candidates.iter().zip(&turn.rho).enumerate() {
        let mark = if l == turn.selected { '*' } else { ' ' };
        writeln!(out, "  {mark} [{l}] rho={rho:.4} {c}")?;
    }
    if !turn.flags.is_empty() {
        let flags: Vec<&str> = turn.flags.iter().map(|f| f.as_str()).collect();
        writeln!(out, "  flags: {}", flags.join(", "))?;
    }
    Ok(())
}

fn cmd_chat(
    index: &Path,
    params: &ParamArgs,
    backends: &BackendArgs,
    quiet: bool,
    transcript: Option<&Path>,
) -> Result<(), CliError> {
    let engine = load_engine(index, backends)?;
    let mut session = engine.new_session(&params.overrides())?;
    let interactive = io::stdin().is_terminal();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut failures = 0usize;
    if interactive && !quiet {
        writeln!(
            out,
            "{} cases loaded; type a query, Ctrl-D to quit.",
            engine.index().k()
        )
        .map_err(stdout_err)?;
    }
    let mut lines = io::stdin().lock().lines();
    loop {
        if interactive {
            write!(out, "you> ").map_err(stdout_err)?;
            out.flush().map_err(stdout_err)?;
        }
        let Some(line) = lines.next() else { break };
        let line = line.map_err(io_at(Path::new("<stdin>")))?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let result = if session.is_started() {
            engine.step(&mut session, text)
        } else {
            engine.start(&mut session, text)
        };
        match result {
            Ok(turn) => {
                let case_id = session.case_id().unwrap_or_default().to_string();
                print_turn(&mut out, &turn, &case_id, quiet).map_err(stdout_err)?;
            }
            Err(e) => {
                failures += 1;
                eprintln!("error: {e}");
            }
        }
    }
    out.flush().map_err(stdout_err)?;
    if let (Some(path), Some(t)) = (transcript, Transcript::of(&session)) {
        fs::write(path, t.to_json()).map_err(io_at(path))?;
    }
    if failures > 0 {
        return Err(CliError::Failed(format!("{failures} turn(s) failed")));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    index: &Path,
    script: &Path,
    grid: &str,
    output: &Path,
    seed: Option<u64>,
    max_tokens: Option<usize>,
    backends: &BackendArgs,
) -> Result<(), CliError> {
    let grid: Grid = grid.parse().map_err(|e| CliError::Failed(format!("{e}")))?;
    let text = fs::read_to_string(script).map_err(io_at(script))?;
    let turns = parse_script(&text);
    let engine = load_engine(index, backends)?;
    let base = ParamOverrides {
        seed,
        max_tokens,
        ..Default::default()
    };
    let report = sweep(&engine, &turns, &grid, &base)?;
    for f in &report.failures {
        eprintln!("warning: grid point {:?} failed: {}", f.point, f.error);
    }
    let file = fs::File::create(output).map_err(io_at(output))?;
    report.write_csv(BufWriter::new(file)).map_err(io_at(output))?;
    if report.rows.is_empty() {
        return Err(CliError::Failed("every grid point failed".into()));
    }
    println!("{} rows -> {}", report.rows.len(), output.display());
    Ok(())
}

fn cmd_serve(
    config: Option<&Path>,
    index: Option<PathBuf>,
    bind: Option<std::net::SocketAddr>,
) -> Result<(), CliError> {
    let mut cfg = ServiceConfig::load(config)?;
    if let Some(index) = index {
        cfg.index = Some(index);
    }
    if let Some(bind) = bind {
        cfg.bind = bind;
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(io_at(Path::new("<runtime>")))?;
    rt.block_on(humbert_service::run(cfg))?;
    Ok(())
}

fn cmd_classify(index: &Path, query: &str, scores: bool, backends: &BackendArgs) -> Result<(), CliError> {
    let engine = load_engine(index, backends)?;
    let routing = engine.route(query)?;
    println!("{}", routing.case_id);
    if scores {
        for (id, score) in engine.index().case_ids().iter().zip(&routing.logits.0) {
            println!("  {score:.6} {id}");
        }
    }
    if routing.fallback {
        eprintln!("warning: classifier failed, routed by the local baseline");
    }
    Ok(())
}
