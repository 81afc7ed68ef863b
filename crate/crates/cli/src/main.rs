use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use richtx::attnmap::write_token_maps;
use richtx::colorbench::{
    run_color_benchmark, toy_self_test_runner, BenchmarkOptions, ColorCategory, EngineRunner, RgbSource, SuitePalettes,
};
use richtx::regionfuse::{write_diagnostics_jsonl, GenerationConfig};
use richtx::richdoc::{check_token_budget, parse_document, RichTextDocument, CLIP_TOKEN_BUDGET};
use richtx::sampler::remote::{serve_tcp, RemoteDenoiser};
use richtx::sampler::{Denoiser, ToyDenoiser, ToyLayoutSpec};
use richtx::tensor::encode_rgb_png;
use richtx::{toy_engine, Engine};
use richtx_gateway::{fixed_engine, serve as serve_http, toy_engines, EngineFactory, GatewayConfig, JobService};

#[derive(Parser)]
#[command(
    name = "richtx",
    version,
    about = "Rich-text prompts to images with region-based diffusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the spans and region prompts of a document.
    Parse {
        #[arg(long)]
        doc: PathBuf,
    },
    /// Generate an image from a document.
    Generate(GenerateArgs),
    /// Run a benchmark.
    Bench {
        #[command(subcommand)]
        which: BenchCommand,
    },
    /// Run the HTTP job service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Serve the toy denoiser over the JSON-RPC wire protocol.
    ServeDenoiser {
        #[arg(long, default_value = "127.0.0.1:7070")]
        addr: String,
        /// Document whose spans lay out the toy regions.
        #[arg(long)]
        doc: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        size: usize,
    },
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// `toy` or `remote:HOST:PORT`.
    #[arg(long, default_value = "toy")]
    backend: String,
    /// Toy image side length.
    #[arg(long, default_value_t = 32)]
    size: usize,
}

enum Backend {
    Toy(usize),
    Remote(String),
}

impl BackendArgs {
    fn parse(&self) -> Result<Backend> {
        if self.backend == "toy" {
            if self.size < 2 {
                bail!("--size must be at least 2");
            }
            Ok(Backend::Toy(self.size))
        } else if let Some(addr) = self.backend.strip_prefix("remote:") {
            Ok(Backend::Remote(addr.to_string()))
        } else {
            bail!("unknown backend {:?}; use `toy` or `remote:HOST:PORT`", self.backend)
        }
    }
}

impl Backend {
    fn engine_for(&self, doc: &RichTextDocument) -> Result<Engine> {
        Ok(match self {
            Backend::Toy(n) => toy_engine(doc, (*n, *n))?,
            Backend::Remote(addr) => remote_engine(addr)?,
        })
    }

    /// Toy targets assume no classifier-free guidance.
    fn default_config(&self) -> GenerationConfig {
        let mut cfg = GenerationConfig::default();
        if let Backend::Toy(_) = self {
            cfg.guidance.cfg_scale = 1.0;
        }
        cfg
    }
}

fn remote_engine(addr: &str) -> Result<Engine> {
    let backend = RemoteDenoiser::connect(addr).with_context(|| format!("connecting to denoiser at {addr}"))?;
    Ok(Engine::new(Arc::new(backend)))
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    doc: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[command(flatten)]
    backend: BackendArgs,
    /// JSON file with generation settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cfg_scale: Option<f64>,
    #[arg(long, default_value = "out.png")]
    out: PathBuf,
    /// Directory for token-map PNGs and their index.
    #[arg(long)]
    dump_maps: Option<PathBuf>,
    /// JSON-lines file for per-step guidance diagnostics.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Color fidelity over the common, HTML and RGB color suites.
    Color(ColorBenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CategoryArg {
    Common,
    Html,
    Rgb,
}

impl From<CategoryArg> for ColorCategory {
    fn from(c: CategoryArg) -> Self {
        match c {
            CategoryArg::Common => ColorCategory::Common,
            CategoryArg::Html => ColorCategory::Html,
            CategoryArg::Rgb => ColorCategory::Rgb,
        }
    }
}

#[derive(Args)]
struct ColorBenchArgs {
    #[command(flatten)]
    backend: BackendArgs,
    /// CSV report path; the JSON summary goes next to it.
    #[arg(long, default_value = "color_bench.csv")]
    report: PathBuf,
    /// Directory with common.json, html.json and rgb.json; defaults to the
    /// bundled palettes.
    #[arg(long)]
    palettes: Option<PathBuf>,
    /// Sample RGB colors with this seed instead of the listed ones.
    #[arg(long)]
    rgb_seed: Option<u64>,
    /// Restrict to these categories.
    #[arg(long, value_enum, value_delimiter = ',')]
    categories: Vec<CategoryArg>,
    /// Run only the first N cases.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Parse { doc } => parse(&doc),
        Command::Generate(args) => generate(args),
        Command::Bench {
            which: BenchCommand::Color(args),
        } => bench_color(args),
        Command::Serve { addr, backend } => serve(&addr, &backend),
        Command::ServeDenoiser { addr, doc, size } => serve_denoiser(&addr, doc.as_deref(), size),
    }
}

fn read_doc(path: &Path) -> Result<RichTextDocument> {
    let raw = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_document(&raw).with_context(|| format!("parsing {}", path.display()))
}

fn parse(path: &Path) -> Result<()> {
    let doc = read_doc(path)?;
    let (spans, prompts) = toy_engine(&doc, (8, 8))?.compile(&doc)?;
    for w in check_token_budget(&spans.tokens, CLIP_TOKEN_BUDGET) {
        eprintln!("warning: {w}");
    }
    let out = serde_json::json!({
        "document": doc,
        "plain_prompt": spans.plain_prompt,
        "spans": spans.spans,
        "region_prompts": prompts,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let doc = read_doc(&args.doc)?;
    let backend = args.backend.parse()?;
    let mut config = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => backend.default_config(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(s) = args.steps {
        config.steps = s;
    }
    if let Some(c) = args.cfg_scale {
        config.guidance.cfg_scale = c;
    }
    let engine = backend.engine_for(&doc)?;
    let res = engine.generate_with(&doc, &config, Default::default(), &mut |p| {
        tracing::info!(step = p.step, t_norm = p.t_norm, "preview");
    })?;
    std::fs::write(&args.out, encode_rgb_png(&res.image)?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(dir) = &args.dump_maps {
        write_token_maps(&res.token_maps, dir)?;
    }
    if let Some(p) = &args.diagnostics {
        write_diagnostics_jsonl(&res.diagnostics, std::fs::File::create(p)?)?;
    }
    for r in &res.region_prompts {
        eprintln!("span {}: {}", r.span_id, r.prompt_text);
    }
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn bench_color(args: ColorBenchArgs) -> Result<()> {
    let rgb = args.rgb_seed.map_or(RgbSource::Listed, RgbSource::Sampled);
    let palettes = match &args.palettes {
        Some(dir) => SuitePalettes::load(dir, rgb)?,
        None => SuitePalettes::bundled(rgb),
    };
    let mut suite = richtx::colorbench::build_color_suite(&palettes);
    if !args.categories.is_empty() {
        let keep: Vec<ColorCategory> = args.categories.iter().map(|&c| c.into()).collect();
        suite.retain(|c| keep.contains(&c.category));
    }
    if let Some(n) = args.limit {
        suite.truncate(n);
    }
    let backend = args.backend.parse()?;
    let mut config = backend.default_config();
    if let Some(s) = args.steps {
        config.steps = s;
    }
    let opts = BenchmarkOptions {
        workers: args.workers,
        scorers: Vec::new(),
    };
    eprintln!("running {} cases", suite.len());
    let report = match &backend {
        Backend::Toy(n) => run_color_benchmark(&toy_self_test_runner((*n, *n)), &suite, &config, &opts),
        Backend::Remote(addr) => {
            let addr = addr.clone();
            let runner =
                EngineRunner::new(move |_, _| remote_engine(&addr).map_err(|e| richtx::Error::Backend(e.to_string())));
            run_color_benchmark(&runner, &suite, &config, &opts)
        }
    };
    report.write_files(&args.report)?;
    for c in &report.categories {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<7} cases {:>4}  skipped {:>4}  mean {}  min {}",
            c.category,
            c.cases,
            c.skipped,
            fmt(c.mean_distance),
            fmt(c.min_distance)
        );
    }
    eprintln!(
        "wrote {} and {}",
        args.report.display(),
        args.report.with_extension("json").display()
    );
    Ok(())
}

fn serve(addr: &str, backend: &BackendArgs) -> Result<()> {
    let backend = backend.parse()?;
    let mut config = GatewayConfig::from_env().map_err(anyhow::Error::msg)?;
    let engines: EngineFactory = match &backend {
        Backend::Toy(n) => {
            config = config.toy_defaults();
            toy_engines((*n, *n))
        }
        Backend::Remote(a) => fixed_engine(remote_engine(a)?),
    };
    std::fs::create_dir_all(&config.data_dir)?;
    tracing::info!(data_dir = %config.data_dir.display(), workers = config.workers, "starting job service");
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let service = JobService::new(config, engines);
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!("listening on http://{}", listener.local_addr()?);
        serve_http(listener, service).await?;
        Ok(())
    })
}

fn serve_denoiser(addr: &str, doc: Option<&Path>, size: usize) -> Result<()> {
    let layout = match doc {
        Some(p) => {
            let doc = read_doc(p)?;
            let spans = richtx::richdoc::extract_spans(&doc, &richtx::richdoc::WordTokenizer)?;
            ToyLayoutSpec::for_spans((size, size), &spans)
        }
        None => ToyLayoutSpec::bands((size, size), vec![Vec::new()]),
    };
    let backend: Arc<dyn Denoiser> = Arc::new(ToyDenoiser::new(layout)?);
    let listener = TcpListener::bind(addr)?;
    eprintln!("toy denoiser listening on {}", listener.local_addr()?);
    serve_tcp(backend, listener)?;
    Ok(())
}
