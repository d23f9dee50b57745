//! `colma`: administrative command-line tool and server launcher.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 when the engine or the
//! service refuses or fails the operation.

use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use colma_core::coordination::Stimulus;
use colma_core::scenario::{eval_capabilities, run_scenario, Scenario};
use colma_core::{json, Engine};
use colma_service::{Access, AuthTable, Op, Request, Server, Service, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "colma", version, about = "Hierarchical memory engine: server and administration")]
struct Cli {
    /// TOML config file. Falls back to $COLMA_CONFIG, then built-in defaults.
    #[arg(long, global = true, env = "COLMA_CONFIG", value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "NS")]
    namespace: Option<String>,
    /// Check the command against this principal from the auth file. Without
    /// it, local commands run with full rights.
    #[arg(long, global = true, value_name = "T")]
    token: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the line protocol until killed.
    Serve {
        /// Overrides `listen` from the config.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Encode JSON Lines stimuli (file, or standard input) into a namespace.
    Ingest { file: Option<PathBuf> },
    /// Run one protocol operation locally. PAYLOAD is JSON; `-` reads it
    /// from standard input.
    Query { op: String, payload: Option<String> },
    /// Run a consolidation tick (or only forgetting) over a namespace.
    Tick {
        /// Tick time in microseconds since the epoch; defaults to now.
        #[arg(long)]
        at: Option<i64>,
        #[arg(long)]
        forget: bool,
    },
    /// Write a namespace as JSON Lines.
    Export {
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Load JSON Lines produced by `export` into an empty namespace.
    Import { file: Option<PathBuf> },
    /// Run a scripted scenario (S1..S4) in a scratch store and print its transcript.
    Scenario { which: Scenario },
    /// Probe every capability dimension and print the report.
    Eval,
    /// Object counts for one namespace, or for all of them.
    Stats,
}

enum Failure {
    Usage(String),
    Engine(String),
}

impl<E: std::fmt::Display> From<E> for Failure
where
    E: Into<Box<dyn std::error::Error>>,
{
    fn from(e: E) -> Self {
        Failure::Engine(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("run `colma --help` for usage");
            ExitCode::from(1)
        }
        Err(Failure::Engine(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: Option<&Path>) -> CliResult<ServiceConfig> {
    match path {
        Some(p) => ServiceConfig::load(p).map_err(|e| usage(e.to_string())),
        None => Ok(ServiceConfig::default()),
    }
}

fn load_auth(cfg: &ServiceConfig) -> CliResult<Option<AuthTable>> {
    match &cfg.auth_file {
        Some(p) => Ok(Some(AuthTable::load(p).map_err(|e| usage(e.to_string()))?)),
        None => Ok(None),
    }
}

fn emit<T: Serialize>(format: Format, value: &T) -> CliResult<()> {
    let text = match format {
        Format::Json => json::canonical(value)?,
        Format::Text => serde_json::to_string_pretty(value)?,
    };
    println!("{text}");
    Ok(())
}

fn read_input(file: Option<&Path>) -> CliResult<String> {
    let mut s = String::new();
    match file {
        Some(p) if p != Path::new("-") => {
            s = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        }
        _ => {
            std::io::stdin().read_to_string(&mut s)?;
        }
    }
    Ok(s)
}

struct Ctx {
    cfg: ServiceConfig,
    auth: Option<AuthTable>,
    token: Option<String>,
    namespace: Option<String>,
    format: Format,
}

impl Ctx {
    fn namespace(&self) -> CliResult<&str> {
        self.namespace.as_deref().ok_or_else(|| usage("this command needs --namespace"))
    }

    /// With `--token`, the principal must be allowed to run `op` on `ns`.
    fn check(&self, ns: &str, op: Op) -> CliResult<()> {
        let Some(token) = &self.token else { return Ok(()) };
        let auth = self.auth.as_ref().ok_or_else(|| usage("--token needs auth_file in the config"))?;
        match auth.authorize_token(token, ns, op) {
            None => Err(Failure::Engine("unauthorized: unknown token".into())),
            Some(Access::Allow) => Ok(()),
            Some(_) => Err(Failure::Engine(format!("forbidden: {op} on {ns:?}"))),
        }
    }

    fn open(&self) -> CliResult<Arc<Engine>> {
        Ok(Arc::new(Engine::open(self.cfg.engine.clone())?))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(cli.config.as_deref())?;
    let auth = load_auth(&cfg)?;
    let ctx = Ctx {
        cfg,
        auth,
        token: cli.token,
        namespace: cli.namespace,
        format: cli.format,
    };
    match cli.command {
        Command::Serve { listen } => serve(ctx, listen),
        Command::Ingest { file } => ingest(&ctx, file.as_deref()),
        Command::Query { op, payload } => query(&ctx, &op, payload.as_deref()),
        Command::Tick { at, forget } => tick(&ctx, at, forget),
        Command::Export { out } => export(&ctx, out.as_deref()),
        Command::Import { file } => import(&ctx, file.as_deref()),
        Command::Scenario { which } => scenario(&ctx, which, cli.seed.unwrap_or(0)),
        Command::Eval => eval(&ctx),
        Command::Stats => stats(&ctx),
    }
}

fn serve(ctx: Ctx, listen: Option<String>) -> CliResult<()> {
    let auth = ctx.auth.ok_or_else(|| usage("serve needs auth_file in the config"))?;
    if auth.is_empty() {
        return Err(usage("the auth file lists no principals"));
    }
    let engine = Arc::new(Engine::open(ctx.cfg.engine.clone())?);
    let service = Arc::new(Service::new(engine, auth));
    let addr = listen.unwrap_or(ctx.cfg.listen.clone());
    let server = Server::bind(&addr, service)?
        .with_tick_interval(Some(Duration::from_secs(ctx.cfg.tick_interval_s)));
    log::info!("listening on {}", server.local_addr()?);
    server.run()?;
    Ok(())
}

fn ingest(ctx: &Ctx, file: Option<&Path>) -> CliResult<()> {
    let ns = ctx.namespace()?;
    ctx.check(ns, Op::PutRecord)?;
    let kb = ctx.open()?.namespace(ns)?;
    let reader: Box<dyn BufRead> = match file {
        Some(p) if p != Path::new("-") => Box::new(std::io::BufReader::new(
            std::fs::File::open(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        )),
        _ => Box::new(std::io::stdin().lock()),
    };
    let mut out = std::io::stdout().lock();
    let mut count = 0usize;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Stimulus = serde_json::from_str(&line).map_err(|e| usage(format!("line {}: {e}", n + 1)))?;
        let r = kb.encode(s).map_err(|e| Failure::Engine(format!("line {}: {e}", n + 1)))?;
        count += 1;
        if ctx.format == Format::Json {
            writeln!(out, "{}", json::canonical(&serde_json::json!({"id": r.record.id, "version": r.record.version}))?)?;
        }
    }
    if ctx.format == Format::Text {
        writeln!(out, "ingested {count} records into {ns}")?;
    }
    Ok(())
}

fn query(ctx: &Ctx, op: &str, payload: Option<&str>) -> CliResult<()> {
    let ns = ctx.namespace()?;
    let op = Op::parse(op).ok_or_else(|| {
        let names: Vec<&str> = Op::ALL.iter().map(|o| o.as_str()).collect();
        usage(format!("unknown op {op:?}; expected one of {}", names.join(", ")))
    })?;
    let payload: Value = match payload {
        None => Value::Null,
        Some("-") => serde_json::from_str(&read_input(None)?).map_err(|e| usage(format!("payload: {e}")))?,
        Some(text) => serde_json::from_str(text).map_err(|e| usage(format!("payload: {e}")))?,
    };
    let engine = ctx.open()?;
    let service = Service::new(engine, AuthTable::new(Vec::new())?);
    let result = match (&ctx.token, &ctx.auth) {
        (Some(token), Some(_)) => {
            // Same path a network request takes.
            let auth = AuthTable::load(ctx.cfg.auth_file.as_deref().expect("auth loaded from this path"))?;
            let service = Service::new(service.engine().clone(), auth);
            service.handle(Request::new(op, ns, payload).with_token(token)).into_result()
        }
        (Some(_), None) => return Err(usage("--token needs auth_file in the config")),
        (None, _) => service.execute(op, ns, payload),
    };
    match result {
        Ok(v) => emit(ctx.format, &v),
        Err(e) => Err(Failure::Engine(format!("{}: {}", json::canonical(&e.code)?.trim_matches('"'), e.message))),
    }
}

fn tick(ctx: &Ctx, at: Option<i64>, forget: bool) -> CliResult<()> {
    let ns = ctx.namespace()?;
    ctx.check(ns, if forget { Op::ForgetTick } else { Op::ConsolidateTick })?;
    let engine = ctx.open()?;
    let kb = engine.namespace(ns)?;
    let now = at.unwrap_or_else(|| engine.now());
    if forget {
        emit(ctx.format, &kb.forget_tick(now)?)
    } else {
        emit(ctx.format, &kb.consolidate_tick(now)?)
    }
}

fn export(ctx: &Ctx, out: Option<&Path>) -> CliResult<()> {
    let ns = ctx.namespace()?;
    ctx.check(ns, Op::SyncDelta)?;
    let lines = ctx.open()?.namespace(ns)?.export()?;
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn import(ctx: &Ctx, file: Option<&Path>) -> CliResult<()> {
    let ns = ctx.namespace()?;
    // Import writes history verbatim, so it needs the replication right.
    ctx.check(ns, Op::ApplyDelta)?;
    let text = read_input(file)?;
    let n = ctx.open()?.namespace(ns)?.import(text.lines().filter(|l| !l.trim().is_empty()))?;
    emit(ctx.format, &serde_json::json!({ "imported": n }))
}

fn scenario(ctx: &Ctx, which: Scenario, seed: u64) -> CliResult<()> {
    let t = run_scenario(which, seed)?;
    match ctx.format {
        Format::Json => print!("{}", t.to_jsonl()?),
        Format::Text => {
            println!("{which} seed {seed}: {} steps, assertions passed: {}", t.steps.len(), t.assertions_passed);
            for (k, v) in &t.observations {
                println!("  {k} = {v}");
            }
        }
    }
    Ok(())
}

fn eval(ctx: &Ctx) -> CliResult<()> {
    let report = eval_capabilities(&ctx.cfg.engine);
    match ctx.format {
        Format::Json => println!("{}", report.to_json()?),
        Format::Text => {
            for d in &report.dimensions {
                let status = json::canonical(&d.status)?;
                println!("{:<14} {:<12} {}", d.dimension, status.trim_matches('"'), d.detail.as_deref().unwrap_or(&d.probe));
            }
            println!("{}/{} supported", report.supported_count(), report.dimensions.len());
            for f in &report.footnotes {
                println!("* {f}");
            }
        }
    }
    Ok(())
}

fn stats(ctx: &Ctx) -> CliResult<()> {
    let engine = ctx.open()?;
    match &ctx.namespace {
        Some(ns) => {
            ctx.check(ns, Op::Stats)?;
            emit(ctx.format, &engine.namespace(ns)?.stats()?)
        }
        None => {
            if ctx.token.is_some() {
                return Err(usage("--token needs --namespace for stats"));
            }
            let mut all = std::collections::BTreeMap::new();
            for ns in engine.namespaces() {
                all.insert(ns.clone(), engine.namespace(&ns)?.stats()?);
            }
            emit(ctx.format, &all)
        }
    }
}
