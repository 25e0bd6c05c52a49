//! `anonreport`: run the ingestion service and the offline tooling around it.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anonreport_core::export::{read_csv, read_jsonl, write_csv, write_jsonl};
use anonreport_core::fixture::{gen_fixture, FixtureSpec};
use anonreport_core::geo::StubGeocoder;
use anonreport_core::simulate::{KSetting, SimConfig};
use anonreport_core::{Catalog, Granularity, PublicReport};
use anonreport_server::{aggregates, store, ServerConfig};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "anonreport", version, about = "Anonymous geo-tagged survey reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve(ServeArgs),
    /// Validate a survey catalog file and print its version.
    LoadSchema {
        file: PathBuf,
    },
    /// Generate a synthetic report set from a fixture spec.
    GenFixture {
        /// Fixture spec (JSON), or `reference` for the bundled one.
        spec: String,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = DataFormat::Jsonl)]
        format: DataFormat,
        /// Also write the generator's bookkeeping as JSON.
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Run the limbo-latency simulator.
    Simulate {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = TableFormat::Json)]
        format: TableFormat,
        /// Write here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compute a named aggregate from an export file or a running server.
    Aggregate(AggregateArgs),
    /// Write the public report set.
    Export {
        #[arg(short, long)]
        output: PathBuf,
        /// Store directory to read.
        #[arg(long, conflicts_with = "url", required_unless_present = "url")]
        store: Option<PathBuf>,
        /// Base URL of a running server.
        #[arg(long)]
        url: Option<String>,
        #[arg(long, value_enum, default_value_t = DataFormat::Jsonl)]
        format: DataFormat,
    },
    /// Serve the reverse-geocoding endpoint from a bounding-box table.
    ServeGeocoder {
        /// Table file; the bundled table when omitted.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8081")]
        listen: SocketAddr,
    },
}

#[derive(Args)]
struct ServeArgs {
    /// TOML config file. `ANONREPORT_*` variables override it; flags override both.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<SocketAddr>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    k: Option<u32>,
    /// day, hour, minute or seconds.
    #[arg(long)]
    granularity: Option<Granularity>,
    /// Granularity units before a stale pool escalates.
    #[arg(long)]
    escalation_after: Option<u32>,
    #[arg(long)]
    replay_window_secs: Option<u64>,
}

#[derive(Args)]
struct AggregateArgs {
    /// One of the aggregate names, e.g. tag-counts or cooccurrence.
    name: String,
    /// Export file (.jsonl or .csv).
    #[arg(long, conflicts_with = "url", required_unless_present = "url")]
    from: Option<PathBuf>,
    /// Base URL of a running server.
    #[arg(long)]
    url: Option<String>,
    /// Aggregate parameter, repeatable: `--param a=sa.relationship`.
    #[arg(short, long = "param", value_parser = parse_param)]
    params: Vec<(String, String)>,
    #[arg(long, value_enum, default_value_t = TableFormat::Json)]
    format: TableFormat,
    /// Catalog for `--from`; the bundled catalog when omitted.
    #[arg(long)]
    catalog: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    fn as_str(self) -> &'static str {
        match self {
            Self::Jsonl => "jsonl",
            Self::Csv => "csv",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TableFormat {
    Json,
    Csv,
}

fn parse_param(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.to_owned()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Serve(args) => serve(args),
        Command::LoadSchema { file } => load_schema(&file),
        Command::GenFixture { spec, output, seed, format, ledger, catalog } => {
            gen(&spec, &output, seed, format, ledger.as_deref(), catalog.as_deref())
        }
        Command::Simulate { config, format, output } => simulate(&config, format, output.as_deref()),
        Command::Aggregate(args) => aggregate(args),
        Command::Export { output, store, url, format } => export(&output, store.as_deref(), url.as_deref(), format),
        Command::ServeGeocoder { table, listen } => serve_geocoder(table.as_deref(), listen),
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(io::stderr).init();
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

async fn ctrl_c() {
    if let Err(e) = tokio::signal::ctrl_c().await {
        tracing::error!(error = %e, "cannot listen for ctrl-c");
        std::future::pending::<()>().await;
    }
}

fn server_config(args: ServeArgs, env: impl IntoIterator<Item = (String, String)>) -> Result<ServerConfig> {
    let mut config = match &args.config {
        Some(path) => ServerConfig::load(path)?,
        None => ServerConfig::default(),
    };
    config.apply_env(env)?;
    if let Some(v) = args.listen {
        config.listen = v;
    }
    if let Some(v) = args.store {
        config.store = Some(v);
    }
    if let Some(v) = args.catalog {
        config.catalog = Some(v);
    }
    if let Some(v) = args.k {
        config.k = KSetting::Uniform(v);
    }
    if let Some(v) = args.granularity {
        config.granularity = v;
    }
    if let Some(v) = args.escalation_after {
        config.escalation_after = Some(v);
    }
    if let Some(v) = args.replay_window_secs {
        config.replay_window_secs = v;
    }
    config.policy().validate()?;
    config.auth()?;
    Ok(config)
}

fn serve(args: ServeArgs) -> Result<()> {
    let config = server_config(args, std::env::vars())?;
    init_logging();
    runtime()?.block_on(anonreport_server::serve(config, ctrl_c()))?;
    Ok(())
}

fn load_schema(file: &Path) -> Result<()> {
    let catalog = Catalog::load(file).with_context(|| format!("loading {}", file.display()))?;
    let questions: usize = catalog.surveys().iter().map(|s| s.questions.len()).sum();
    println!("version {}", catalog.version());
    println!("{} surveys, {questions} questions, {} tags", catalog.surveys().len(), catalog.tag_count());
    Ok(())
}

fn load_catalog(path: Option<&Path>) -> Result<Catalog> {
    match path {
        Some(p) => Catalog::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(Catalog::builtin()),
    }
}

fn write_reports(path: &Path, reports: &[PublicReport], format: DataFormat) -> Result<()> {
    let out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    match format {
        DataFormat::Jsonl => write_jsonl(out, reports)?,
        DataFormat::Csv => write_csv(out, reports)?,
    }
    Ok(())
}

fn gen(
    spec: &str,
    output: &Path,
    seed: u64,
    format: DataFormat,
    ledger: Option<&Path>,
    catalog: Option<&Path>,
) -> Result<()> {
    let spec = if spec == "reference" {
        FixtureSpec::reference()
    } else {
        let text = fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {spec}"))?
    };
    let catalog = load_catalog(catalog)?;
    let fixture = gen_fixture(&spec, &catalog, seed)?;
    write_reports(output, &fixture.reports, format)?;
    if let Some(path) = ledger {
        fs::write(path, serde_json::to_string_pretty(&fixture.ledger)?)?;
    }
    eprintln!("wrote {} reports to {}", fixture.reports.len(), output.display());
    Ok(())
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn simulate(config: &Path, format: TableFormat, output: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let config: SimConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
    let report = config.run()?;
    let text = match format {
        TableFormat::Json => serde_json::to_string_pretty(&report)?,
        TableFormat::Csv => report.to_csv(),
    };
    emit(output, &text)
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(60)))
        .http_status_as_error(false)
        .build()
        .into()
}

fn fetch(url: &str, query: &[(String, String)]) -> Result<String> {
    let mut req = agent().get(url);
    for (k, v) in query {
        req = req.query(k, v);
    }
    let mut resp = req.call().with_context(|| format!("requesting {url}"))?;
    let status = resp.status();
    let body = resp.body_mut().read_to_string()?;
    if !status.is_success() {
        bail!("{url}: {status}: {body}");
    }
    Ok(body)
}

fn read_export(path: &Path) -> Result<Vec<PublicReport>> {
    let file = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let reports = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_csv(file)?
    } else {
        read_jsonl(file)?
    };
    Ok(reports)
}

fn aggregate(args: AggregateArgs) -> Result<()> {
    if let Some(url) = &args.url {
        let mut query = args.params.clone();
        if args.format == TableFormat::Csv {
            query.push(("format".into(), "csv".into()));
        }
        let body = fetch(&format!("{}/api/v1/aggregates/{}", url.trim_end_matches('/'), args.name), &query)?;
        let text = match args.format {
            TableFormat::Json => serde_json::to_string_pretty(&serde_json::from_str::<serde_json::Value>(&body)?)?,
            TableFormat::Csv => body,
        };
        return emit(None, &text);
    }
    let from = args.from.as_deref().expect("clap requires --from or --url");
    let reports = read_export(from)?;
    let catalog = load_catalog(args.catalog.as_deref())?;
    let params: HashMap<String, String> = args.params.into_iter().collect();
    let result = aggregates::compute(&args.name, &params, &reports, &catalog)?;
    let text = match args.format {
        TableFormat::Json => serde_json::to_string_pretty(&result.json)?,
        TableFormat::Csv => result.csv,
    };
    emit(None, &text)
}

fn export(output: &Path, store_dir: Option<&Path>, url: Option<&str>, format: DataFormat) -> Result<()> {
    if let Some(url) = url {
        let body = fetch(
            &format!("{}/api/v1/export", url.trim_end_matches('/')),
            &[("format".into(), format.as_str().into())],
        )?;
        return fs::write(output, body).with_context(|| format!("writing {}", output.display()));
    }
    let dir = store_dir.expect("clap requires --store or --url");
    if !dir.is_dir() {
        bail!("{} is not a store directory", dir.display());
    }
    let reports = store::read_public(dir)?;
    write_reports(output, &reports, format)?;
    eprintln!("exported {} reports to {}", reports.len(), output.display());
    Ok(())
}

fn serve_geocoder(table: Option<&Path>, listen: SocketAddr) -> Result<()> {
    let geocoder = match table {
        Some(p) => StubGeocoder::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => StubGeocoder::builtin(),
    };
    init_logging();
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen).await?;
        anonreport_server::geocoder::serve_geocoder(listener, Arc::new(geocoder), ctrl_c()).await
    })?;
    Ok(())
}
