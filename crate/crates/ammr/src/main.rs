use std::io::Write;
use std::path::{Path, PathBuf};

use ammr::service::{router, AppState};
use ammr::{load_engine, schema_or_default, EngineFiles};
use ammr_core::catalog::{generate_catalog, Catalog, Skew};
use ammr_core::composer::{pocket_task_triplets, train_composer, ComposerVariant, TrainConfig, Triplet};
use ammr_core::embedding::{read_embeddings, SliceLayout, UniversalEncoder};
use ammr_core::eval::{
    evaluate_run, load_queries, run_flip_experiment, run_recall_experiment, EvalConfig, FlipConfig, PipelineKind,
    RecallConfig,
};
use ammr_core::index::{build_index, save_index, EncoderTag, IndexKind, DEFAULT_N_LISTS};
use ammr_core::pipeline::{encode_catalog, Engine, EngineConfig};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "ammr", version, about = "Anchor + text-delta retrieval with an agentic refinement loop")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic JSON-Lines catalog.
    GenCatalog {
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        seed: u64,
        /// `slot.value=p`, repeatable.
        #[arg(long, num_args = 1..)]
        skew: Vec<String>,
        #[arg(short = 'o', long)]
        output: PathBuf,
    },
    /// Encode a catalog and write an index file.
    BuildIndex {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = EncoderArg::Disentangled)]
        encoder: EncoderArg,
        /// Rotation seed of the universal encoder.
        #[arg(long, default_value_t = 7)]
        encoder_seed: u64,
        /// Externally computed vectors (AMMREMB) instead of an encoder.
        #[arg(long, conflicts_with = "encoder")]
        embeddings: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = KindArg::Ivf)]
        kind: KindArg,
        #[arg(long, default_value_t = DEFAULT_N_LISTS)]
        lists: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(short = 'o', long)]
        output: PathBuf,
    },
    /// Write synthetic pocket-removal triplets as JSON Lines.
    GenTriplets {
        #[arg(long, default_value_t = 200)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(short = 'o', long)]
        output: PathBuf,
    },
    /// Train TIRG/FiLM composer parameters on triplets.
    Train {
        #[arg(long)]
        triplets: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, value_parser = ["tirg", "film"])]
        variant: String,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(short = 'o', long)]
        output: PathBuf,
    },
    /// Metrics and reproduction experiments.
    Eval {
        #[command(subcommand)]
        which: EvalCommand,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[command(flatten)]
        files: FileArgs,
    },
}

#[derive(Args)]
struct FileArgs {
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    trend_file: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

impl FileArgs {
    fn as_files(&self) -> EngineFiles<'_> {
        EngineFiles {
            schema: self.schema.as_deref(),
            trend_file: self.trend_file.as_deref(),
            lexicon: self.lexicon.as_deref(),
        }
    }
}

#[derive(Subcommand)]
enum EvalCommand {
    /// The pocket-removal flip on a skewed catalog.
    Flip {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        encoder_seed: u64,
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
    },
    /// Metrics over a JSON-Lines query suite.
    Suite {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        pipeline: String,
        #[arg(long)]
        catalog: PathBuf,
        /// Prebuilt disentangled index; an exact index is built otherwise.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 7)]
        encoder_seed: u64,
        #[command(flatten)]
        files: FileArgs,
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
    },
    /// IVF recall sweep over n_probe.
    Recall {
        #[arg(long, default_value_t = 100_000)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderArg {
    Disentangled,
    Universal,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Exact,
    Ivf,
}

impl From<KindArg> for IndexKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Exact => IndexKind::Exact,
            KindArg::Ivf => IndexKind::Ivf,
        }
    }
}

/// Report file: the config that produced it next to the numbers.
#[derive(Serialize)]
struct Report<'a, C: Serialize, R: Serialize> {
    config: &'a C,
    report: &'a R,
}

fn emit<C: Serialize, R: Serialize>(config: &C, report: &R, output: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(&Report { config, report })? + "\n";
    match output {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn gen_catalog(schema: Option<&Path>, size: usize, seed: u64, skew: &[String], output: &Path) -> anyhow::Result<()> {
    let schema = schema_or_default(schema)?;
    let mut s = Skew::new();
    for arg in skew {
        let (key, p) = Skew::parse_arg(arg)?;
        s = s.with(&key, p);
    }
    let catalog = generate_catalog(&schema, size, &s, seed)?;
    catalog.save(output)?;
    log::info!("wrote {} items to {}", catalog.len(), output.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn build(
    catalog: &Path,
    schema: Option<&Path>,
    encoder: EncoderArg,
    encoder_seed: u64,
    embeddings: Option<&Path>,
    kind: IndexKind,
    lists: usize,
    seed: u64,
    output: &Path,
) -> anyhow::Result<()> {
    let schema = schema_or_default(schema)?;
    let catalog = Catalog::load(catalog, &schema)?;
    let ids: Vec<String> = catalog.items().iter().map(|i| i.id.clone()).collect();
    let layout = SliceLayout::from_schema(&schema);
    let (layout, tag, vectors) = match (embeddings, encoder) {
        (Some(path), _) => {
            let (file_layout, rows) = read_embeddings(path)?;
            if file_layout != layout {
                bail!("{}: layout table does not match the schema", path.display());
            }
            if rows.len() != catalog.len() {
                bail!("{} holds {} vectors for {} items", path.display(), rows.len(), catalog.len());
            }
            (layout, EncoderTag::External, rows)
        }
        (None, EncoderArg::Disentangled) => {
            let rows = encode_catalog(&catalog, &schema, &layout)?;
            (layout, EncoderTag::Disentangled, rows)
        }
        (None, EncoderArg::Universal) => {
            let enc = UniversalEncoder::with_defaults(&schema, encoder_seed)?;
            let rows = catalog
                .items()
                .iter()
                .map(|i| enc.encode(i, &schema))
                .collect::<Result<Vec<_>, _>>()?;
            (enc.output_layout().clone(), EncoderTag::Universal(encoder_seed), rows)
        }
    };
    let index = build_index(&layout, tag, ids, &vectors, kind, lists, seed)?;
    save_index(output, &index)?;
    log::info!("wrote {:?} index of {} rows to {}", index.kind(), index.len(), output.display());
    Ok(())
}

fn read_triplets(path: &Path) -> anyhow::Result<Vec<Triplet>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), n + 1)))
        .collect()
}

fn gen_triplets(size: usize, seed: u64, output: &Path) -> anyhow::Result<()> {
    let schema = schema_or_default(None)?;
    let mut out = String::new();
    for t in pocket_task_triplets(&schema, size, seed)? {
        out.push_str(&serde_json::to_string(&t)?);
        out.push('\n');
    }
    std::fs::write(output, out).with_context(|| format!("writing {}", output.display()))?;
    Ok(())
}

fn train(
    triplets: &Path,
    schema: Option<&Path>,
    variant: &str,
    epochs: usize,
    seed: u64,
    output: &Path,
) -> anyhow::Result<()> {
    let schema = schema_or_default(schema)?;
    let layout = SliceLayout::from_schema(&schema);
    let config = TrainConfig {
        epochs,
        seed,
        variant: ComposerVariant::parse(variant)?,
        ..TrainConfig::default()
    };
    let params = train_composer(&read_triplets(triplets)?, &config, &layout, &schema)?;
    let (first, last) = (params.loss_curve[0], *params.loss_curve.last().expect("initial loss"));
    log::info!("loss {first:.6} -> {last:.6} over {epochs} epochs");
    params.save(output)?;
    Ok(())
}

fn eval(which: EvalCommand) -> anyhow::Result<()> {
    match which {
        EvalCommand::Flip {
            seed,
            size,
            encoder_seed,
            output,
        } => {
            let config = FlipConfig {
                seed,
                size,
                encoder_seed,
                ..FlipConfig::default()
            };
            let report = run_flip_experiment(&config)?;
            emit(&config, &report, output.as_deref())
        }
        EvalCommand::Suite {
            queries,
            pipeline,
            catalog,
            index,
            k,
            encoder_seed,
            files,
            output,
        } => {
            let engine = match &index {
                Some(ix) => load_engine(&catalog, ix, &files.as_files(), EngineConfig::default())?,
                None => {
                    let schema = schema_or_default(files.schema.as_deref())?;
                    let cat = Catalog::load(&catalog, &schema)?;
                    Engine::build(schema, cat, IndexKind::Exact, 1, 0, EngineConfig::default())?
                }
            };
            let queries = load_queries(&queries)?;
            let mut config = EvalConfig::new(PipelineKind::parse(&pipeline)?, k);
            config.encoder_seed = encoder_seed;
            let report = evaluate_run(&engine, &queries, &config, None)?;
            emit(&config, &report, output.as_deref())
        }
        EvalCommand::Recall { size, seed, output } => {
            let config = RecallConfig {
                size,
                seed,
                ..RecallConfig::default()
            };
            let report = run_recall_experiment(&config)?;
            emit(&config, &report, output.as_deref())
        }
    }
}

fn serve(host: &str, port: u16, index: &Path, catalog: &Path, files: &FileArgs) -> anyhow::Result<()> {
    // The backend's blocking HTTP client must be built outside the runtime.
    let engine = load_engine(catalog, index, &files.as_files(), EngineConfig::default())?;
    log::info!("serving {engine:?}");
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(AppState::new(engine))).await?;
        Ok(())
    })
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenCatalog {
            schema,
            size,
            seed,
            skew,
            output,
        } => gen_catalog(schema.as_deref(), size, seed, &skew, &output),
        Command::BuildIndex {
            catalog,
            schema,
            encoder,
            encoder_seed,
            embeddings,
            kind,
            lists,
            seed,
            output,
        } => build(
            &catalog,
            schema.as_deref(),
            encoder,
            encoder_seed,
            embeddings.as_deref(),
            kind.into(),
            lists,
            seed,
            &output,
        ),
        Command::GenTriplets { size, seed, output } => gen_triplets(size, seed, &output),
        Command::Train {
            triplets,
            schema,
            variant,
            epochs,
            seed,
            output,
        } => train(&triplets, schema.as_deref(), &variant, epochs, seed, &output),
        Command::Eval { which } => eval(which),
        Command::Serve {
            port,
            host,
            index,
            catalog,
            files,
        } => serve(&host, port, &index, &catalog, &files),
    }
}
