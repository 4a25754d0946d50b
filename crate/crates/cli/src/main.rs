use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vvv_core::codec::{parse_code, CodeScheme, Decoded, PhaseShares, Settings};
use vvv_core::explorer::{
    format_selections, parse_selections, run_batch, CandidateStatus, ExplorerError, Session, Step,
    Termination,
};
use vvv_core::io::{load_image, parse_config, ConfigError, RunConfig};
use vvv_core::pipeline::registry;
use vvv_service::AppState;

#[derive(Parser)]
#[command(
    name = "vvv",
    version,
    about = "Steer three-phase image pipelines through code space"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a session in the terminal, or headlessly from a selection script.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// One decimal code or NONE per line; overrides the config's script.
        #[arg(long)]
        selections: Option<PathBuf>,
    },
    /// Serve the HTTP API, starting one session from the config.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// List the available stages and their default grids.
    ListStages,
    /// Encode grid indices as a code.
    Encode {
        /// Comma-separated indices, Veni first.
        #[arg(long)]
        settings: String,
        #[arg(long)]
        shares: String,
        #[arg(long, default_value = "flat")]
        scheme: String,
    },
    /// Decode a code into grid indices.
    Decode {
        #[arg(long)]
        code: String,
        /// Required unless --config is given.
        #[arg(long)]
        shares: Option<String>,
        /// Also check the indices against this config's grids and scheme.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scheme: Option<String>,
    },
}

enum Failure {
    Validation(String),
    Io(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) | Failure::Io(m) => f.write_str(m),
        }
    }
}

impl Failure {
    fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Validation(_) => ExitCode::from(2),
            Failure::Io(_) => ExitCode::from(3),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => Failure::Io(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<ExplorerError> for Failure {
    fn from(e: ExplorerError) -> Self {
        match e {
            ExplorerError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, selections } => run(&config, selections.as_deref()),
        Command::Serve { config, port } => serve(&config, port),
        Command::ListStages => {
            list_stages();
            Ok(())
        }
        Command::Encode {
            settings,
            shares,
            scheme,
        } => encode(&settings, &shares, &scheme),
        Command::Decode {
            code,
            shares,
            config,
            scheme,
        } => decode(
            &code,
            shares.as_deref(),
            config.as_deref(),
            scheme.as_deref(),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            failure.exit_code()
        }
    }
}

fn parse_list(text: &str, what: &str) -> Result<Vec<u64>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|_| {
                Failure::Validation(format!("{what}: `{s}` is not a non-negative integer"))
            })
        })
        .collect()
}

fn parse_shares(text: &str) -> Result<PhaseShares, Failure> {
    match parse_list(text, "--shares")?[..] {
        [a, b, c] => Ok(PhaseShares::new(a as usize, b as usize, c as usize)),
        _ => Err(Failure::Validation(format!(
            "--shares expects three comma-separated counts, got `{text}`"
        ))),
    }
}

fn parse_scheme(text: &str) -> Result<CodeScheme, Failure> {
    match text {
        "flat" => Ok(CodeScheme::Flat),
        "nested" => Ok(CodeScheme::Nested),
        _ => Err(Failure::Validation(format!(
            "unknown scheme `{text}` (expected flat or nested)"
        ))),
    }
}

fn encode(settings: &str, shares: &str, scheme: &str) -> Result<(), Failure> {
    let settings = Settings::new(parse_list(settings, "--settings")?);
    let shares = parse_shares(shares)?;
    if settings.len() != shares.total() {
        return Err(Failure::Validation(format!(
            "{} indices given, shares {shares} need {}",
            settings.len(),
            shares.total()
        )));
    }
    let code = parse_scheme(scheme)?
        .encode(&settings, &shares)
        .map_err(|e| Failure::Validation(e.to_string()))?;
    println!("{code}");
    Ok(())
}

fn decode(
    code: &str,
    shares: Option<&str>,
    config: Option<&Path>,
    scheme: Option<&str>,
) -> Result<(), Failure> {
    let code = parse_code(code)
        .ok_or_else(|| Failure::Validation(format!("`{code}` is not a decimal code")))?;
    let config = config.map(parse_config).transpose()?;
    let shares = match (shares, &config) {
        (Some(text), _) => parse_shares(text)?,
        (None, Some(c)) => c.shares,
        (None, None) => {
            return Err(Failure::Validation(
                "--shares or --config is required".into(),
            ))
        }
    };
    let scheme = match (scheme, &config) {
        (Some(text), _) => parse_scheme(text)?,
        (None, Some(c)) => c.scheme,
        (None, None) => CodeScheme::Flat,
    };
    let decoded = match &config {
        Some(c) => {
            if c.shares != shares {
                return Err(Failure::Validation(format!(
                    "shares {shares} do not match the config's {}",
                    c.shares
                )));
            }
            scheme.decode(&code, &shares, &c.schemas())
        }
        None => scheme.decode_shape(&code, &shares),
    };
    match decoded {
        Decoded::Feasible(settings) => {
            println!("{settings}");
            if let Some(c) = &config {
                let values: Vec<String> = settings
                    .values(&c.schemas())
                    .iter()
                    .map(f64::to_string)
                    .collect();
                println!("values: {}", values.join(","));
            }
        }
        Decoded::Infeasible(reason) => println!("infeasible: {reason}"),
    }
    Ok(())
}

fn list_stages() {
    for stage in registry() {
        let params: Vec<String> = stage
            .params
            .iter()
            .map(|p| {
                format!(
                    "{} (min {}, step {}, count {})",
                    p.name, p.min, p.step, p.count
                )
            })
            .collect();
        let phase = format!("{:?}", stage.phase).to_lowercase();
        if params.is_empty() {
            println!("{:<16} {phase}", stage.id);
        } else {
            println!("{:<16} {phase:<9} {}", stage.id, params.join("; "));
        }
    }
}

fn describe(session: &Session) {
    println!(
        "iteration {}  code {}  settings {}",
        session.iteration(),
        session.code(),
        session.settings()
    );
    for c in session.window() {
        let marker = if c.code == *session.code() { "*" } else { " " };
        let detail = match &c.status {
            CandidateStatus::Feasible { settings } => match &c.dir {
                Some(dir) => format!("{settings}  {}", dir.display()),
                None => settings.to_string(),
            },
            CandidateStatus::Infeasible { reason } => format!("infeasible: {reason}"),
            CandidateStatus::Failed { message, .. } => format!("failed: {message}"),
        };
        println!(" {marker} {:>8}  {detail}", c.code);
    }
}

fn report(end: &Termination, config: &RunConfig) -> Result<(), Failure> {
    let values: Vec<String> = end.values.iter().map(f64::to_string).collect();
    println!(
        "final: iteration {}  code {}  settings {}  values {}",
        end.iteration,
        end.code,
        end.settings,
        values.join(",")
    );
    let mut script: Vec<_> = end.history.iter().map(|h| Some(h.code.clone())).collect();
    script.push(None);
    let path = config.output_root.join("history.txt");
    fs::create_dir_all(&config.output_root)
        .and_then(|()| fs::write(&path, format_selections(&script)))
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn run(config_path: &Path, selections: Option<&Path>) -> Result<(), Failure> {
    let config = parse_config(config_path)?;
    let script = selections
        .map(Path::to_owned)
        .or_else(|| config.selections.clone());
    let session = vvv_core::explorer::init_session(&config)?;
    let Some(script) = script else {
        return interactive(session.evaluate_window()?, &config);
    };
    let text = fs::read_to_string(&script)
        .map_err(|e| Failure::Io(format!("{}: {e}", script.display())))?;
    let selections = parse_selections(&text).map_err(|e| Failure::Validation(e.to_string()))?;
    let trajectory =
        run_batch(session.config().clone(), &selections).map_err(|e| match e.source {
            ExplorerError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        })?;
    for state in &trajectory.states {
        println!(
            "iteration {}  code {}  settings {}",
            state.iteration(),
            state.code(),
            state.settings()
        );
    }
    match &trajectory.termination {
        Some(end) => report(end, &config),
        None => {
            println!("script ended without NONE; session left at the last state");
            report(&trajectory.last().terminate(), &config)
        }
    }
}

fn interactive(mut session: Session, config: &RunConfig) -> Result<(), Failure> {
    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    loop {
        describe(&session);
        print!("select a code (empty or NONE to stop): ");
        io::stdout().flush().ok();
        let line = match lines.next() {
            Some(line) => line.map_err(|e| Failure::Io(e.to_string()))?,
            None => String::new(),
        };
        let line = line.trim();
        let selection = if line.is_empty() || line == "NONE" {
            None
        } else {
            match parse_code(line) {
                Some(code) => Some(code),
                None => {
                    println!("`{line}` is not a decimal code");
                    continue;
                }
            }
        };
        match session.apply_selection(selection.as_ref()) {
            Ok(Step::Continue(next)) => session = next,
            Ok(Step::Terminated(end)) => return report(&end, config),
            Err(ExplorerError::Selection(e)) => println!("{e}"),
            Err(e) => return Err(e.into()),
        }
    }
}

fn serve(config_path: &Path, port: u16) -> Result<(), Failure> {
    let config = parse_config(config_path)?;
    for path in &config.images {
        load_image(path).map_err(|e| Failure::Io(e.to_string()))?;
    }
    let base = config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_owned();
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Io(e.to_string()))?;
    runtime.block_on(async {
        let state = AppState::new(base);
        let snapshot = state
            .create_session(config)
            .await
            .map_err(|e| Failure::Validation(e.to_string()))?;
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
            .await
            .map_err(|e| Failure::Io(format!("port {port}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Failure::Io(e.to_string()))?;
        println!("listening on http://{addr}");
        println!("session {} at /sessions/{}", snapshot.id, snapshot.id);
        vvv_service::serve(listener, state)
            .await
            .map_err(|e| Failure::Io(e.to_string()))
    })
}
