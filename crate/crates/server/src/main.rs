use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use immercity_core::ingest::{run_poll_cycle, DefaultTransport};
use immercity_core::marker::{
    design_patches, embed_patches, partial_visibility_check, reliability_score, render_base_map, CropRect, MapStyle,
    MarkerDesign, Patch, Raster,
};
use immercity_core::{generate_city, CityScene, ContentStore, SystemClock};
use immercity_server::config::Config;

#[derive(Parser)]
#[command(name = "immercity", version, about = "Content city service and tools")]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<String>,
    },
    /// Poll the configured feeds into the store.
    Ingest {
        /// Run a single poll cycle and exit.
        #[arg(long)]
        once: bool,
    },
    /// Write the city scene for a seed as JSON.
    GenCity {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a marker image and optionally its report.
    GenMarker {
        #[arg(long, value_enum, default_value_t = Style::Final)]
        style: Style,
        #[arg(long)]
        size: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// Extra patch as `FILE@U,V,SCALE` (anchor and scale normalized).
        #[arg(long = "patch")]
        patches: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a marker image.
    ScoreMarker {
        #[arg(long = "in")]
        input: PathBuf,
        /// Also check each quadrant on its own.
        #[arg(long)]
        quadrants: bool,
    },
    /// Write the scene for the configured default seed.
    ExportScene {
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load items (JSON lines) into the store.
    ImportItems {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Dump all items as JSON lines.
    ExportItems {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Style {
    Plan,
    Center,
    Final,
}

impl From<Style> for MarkerDesign {
    fn from(s: Style) -> Self {
        match s {
            Style::Plan => MarkerDesign::Plan,
            Style::Center => MarkerDesign::CenterPatch,
            Style::Final => MarkerDesign::Final,
        }
    }
}

fn main() {
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = Config::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Serve { port, bind } => serve(config, port, bind),
        Command::Ingest { once } => ingest(&config, once),
        Command::GenCity { seed, out } => write_scene(&scene(&config, seed)?, Some(&out)),
        Command::ExportScene { seed, out } => write_scene(&scene(&config, seed)?, out.as_deref()),
        Command::GenMarker { style, size, seed, patches, out, report } => {
            gen_marker(&config, style.into(), size, seed, &patches, &out, report.as_deref())
        }
        Command::ScoreMarker { input, quadrants } => score_marker(&config, &input, quadrants),
        Command::ImportItems { input } => {
            let store = open_store(&config)?;
            let file = std::fs::File::open(&input).with_context(|| format!("reading {}", input.display()))?;
            let report = store.import_items(std::io::BufReader::new(file))?;
            println!("{}", serde_json::to_string(&report)?);
            Ok(())
        }
        Command::ExportItems { out } => {
            let store = open_store(&config)?;
            let mut buf = Vec::new();
            store.export_items(&mut buf)?;
            emit(&buf, out.as_deref())
        }
    }
}

fn open_store(config: &Config) -> Result<ContentStore> {
    let path = config.store_file();
    ContentStore::open(&path, std::sync::Arc::new(SystemClock)).with_context(|| format!("opening {}", path.display()))
}

fn emit(bytes: &[u8], out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => Ok(std::io::stdout().write_all(bytes)?),
    }
}

fn scene(config: &Config, seed: Option<u64>) -> Result<CityScene> {
    Ok(generate_city(seed.unwrap_or(config.default_seed), &config.layout)?)
}

fn write_scene(scene: &CityScene, out: Option<&Path>) -> Result<()> {
    emit(scene.to_json().as_bytes(), out)
}

fn serve(mut config: Config, port: Option<u16>, bind: Option<String>) -> Result<()> {
    config.port = port.unwrap_or(config.port);
    config.bind = bind.unwrap_or_else(|| config.bind.clone());
    let addr = format!("{}:{}", config.bind, config.port);
    let state = immercity_server::open_state(config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        immercity_server::serve(state, listener, shutdown).await?;
        Ok(())
    })
}

fn ingest(config: &Config, once: bool) -> Result<()> {
    if config.sources.is_empty() {
        bail!("no feed sources configured");
    }
    let store = open_store(config)?;
    let transport = DefaultTransport::new(&config.base_dir);
    let mut sources = config.sources.clone();
    loop {
        let report = run_poll_cycle(&mut sources, &store, &transport, &SystemClock);
        println!("{}", serde_json::to_string(&report)?);
        if once {
            if report.failed == report.polled && report.polled > 0 {
                bail!("every source failed");
            }
            return Ok(());
        }
        let wait = sources.iter().map(|s| s.poll_interval_secs).min().unwrap_or(3600);
        std::thread::sleep(Duration::from_secs(wait));
    }
}

fn parse_patch(spec: &str) -> Result<Patch> {
    let (file, place) = spec.rsplit_once('@').context("patch must look like FILE@U,V,SCALE")?;
    let nums: Vec<f64> = place.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>().context("patch placement")?;
    let [u, v, scale] = nums[..] else {
        bail!("patch placement needs U,V,SCALE, got {place:?}");
    };
    let bitmap = Raster::load_png(Path::new(file))?;
    Ok(Patch { bitmap, anchor: [u, v], scale })
}

fn gen_marker(
    config: &Config,
    design: MarkerDesign,
    size: Option<u32>,
    seed: Option<u64>,
    extra: &[String],
    out: &Path,
    report: Option<&Path>,
) -> Result<()> {
    let scene = scene(config, seed)?;
    let style = if design == MarkerDesign::Plan { MapStyle::GrayscalePlan } else { MapStyle::BinaryPlan };
    let base = render_base_map(&scene, size.unwrap_or(config.marker_size), style)?;
    let mut patches = design_patches(&scene, design);
    for spec in extra {
        patches.push(parse_patch(spec)?);
    }
    let marker = embed_patches(&base, &patches)?;
    marker.save_png(out)?;
    let rep = reliability_score(&marker, &config.marker);
    if let Some(path) = report {
        std::fs::write(path, rep.to_json()).with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!("reliability {}/5, {} features, periphery ok: {}", rep.reliability, rep.feature_count, rep.periphery_ok);
    Ok(())
}

fn score_marker(config: &Config, input: &Path, quadrants: bool) -> Result<()> {
    let raster = Raster::load_png(input)?;
    let report = reliability_score(&raster, &config.marker);
    if !quadrants {
        println!("{}", report.to_json());
        return Ok(());
    }
    let checks = (0..4)
        .map(|q| partial_visibility_check(&raster, &CropRect::quadrant(raster.width(), raster.height(), q), &config.marker))
        .collect::<Result<Vec<_>, _>>()?;
    let body = serde_json::json!({ "report": report, "quadrants": checks });
    println!("{}", serde_json::to_string_pretty(&body)?);
    Ok(())
}
