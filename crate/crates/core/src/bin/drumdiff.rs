use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use drumdiff::pipeline::train::Checkpoint;
use drumdiff::pipeline::{build_cache, evaluate, synthesize_dataset, tables, train_on, Cache, Corpus, ModelKind, Preset, ProjectConfig, TrainingData};
use drumdiff::service::{serve, ServiceState};
use drumdiff::split::Split;

#[derive(Parser)]
#[command(version, about = "Drum grid to audio by latent diffusion")]
struct Cli {
    /// TOML or JSON file with [dataset], [cache] and [run] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda_ce: Option<f64>,
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    #[arg(long)]
    frontend_trainable: Option<bool>,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    match s {
        "desk" => Ok(Preset::Desk),
        "tiny" => Ok(Preset::Tiny),
        _ => Err(format!("unknown preset {s}; use desk or tiny")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the procedural drum corpus.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        patterns: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Segment, encode and quantize a corpus into a window cache.
    BuildCache {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the regressor and every configured diffusion checkpoint.
    Train {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train only these checkpoints, e.g. `diffusion_n25 regressor`.
        #[arg(long, num_args = 1..)]
        only: Vec<String>,
        #[command(flatten)]
        run: RunOverrides,
    },
    /// Score every available system on the test split.
    Evaluate {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write every generated clip as 16-bit WAV.
        #[arg(long)]
        audio: bool,
        #[command(flatten)]
        run: RunOverrides,
    },
    /// Serve renders and diagnostics over HTTP.
    Serve {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Markdown tables from an evaluation directory.
    ExportTables {
        #[arg(long)]
        eval: PathBuf,
        /// Adds PCA diagnostics over the test split.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, run: Option<&RunOverrides>) -> anyhow::Result<ProjectConfig> {
    let mut config = match path {
        Some(p) => ProjectConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ProjectConfig::default(),
    };
    if let Some(o) = run {
        let r = &mut config.run;
        r.epochs = o.epochs.unwrap_or(r.epochs);
        r.max_steps = o.max_steps.or(r.max_steps);
        r.seed = o.seed.unwrap_or(r.seed);
        r.lambda_ce = o.lambda_ce.unwrap_or(r.lambda_ce);
        r.preset = o.preset.unwrap_or(r.preset);
        r.frontend_trainable = o.frontend_trainable.unwrap_or(r.frontend_trainable);
    }
    config.validate()?;
    Ok(config)
}

fn load_checkpoints(dir: &Path, config: &ProjectConfig) -> anyhow::Result<Vec<Checkpoint>> {
    let mut out = Vec::new();
    for kind in ModelKind::planned(&config.run) {
        match Checkpoint::load(dir, kind) {
            Ok(c) => out.push(c),
            Err(drumdiff::Error::Missing(what)) => log::warn!("{what} not found"),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::SynthData { out, patterns, seed } => {
            let mut config = load_config(config_path, None)?;
            config.dataset.patterns = patterns.unwrap_or(config.dataset.patterns);
            let corpus = synthesize_dataset(&config.dataset, seed)?;
            corpus.save(&out)?;
            println!("{} performances, hash {}", corpus.performances.len(), corpus.content_hash());
        }
        Command::BuildCache { corpus, out } => {
            let config = load_config(config_path, None)?;
            let cache = build_cache(&Corpus::load(&corpus)?, &config.cache)?;
            cache.save(&out)?;
            for s in Split::ALL {
                println!("{s}: {} windows", cache.manifest.splits[&s].len());
            }
            println!("dropped by boundary filter: {}", cache.manifest.dropped.len());
        }
        Command::Train { cache, out, only, run } => {
            let config = load_config(config_path, Some(&run))?;
            let cache = Cache::load(&cache)?;
            let kinds: Vec<ModelKind> = ModelKind::planned(&config.run)
                .into_iter()
                .filter(|k| only.is_empty() || only.contains(&k.to_string()))
                .collect();
            if kinds.is_empty() {
                bail!("--only matched no configured checkpoint");
            }
            let data = TrainingData::from_cache(&cache, &config.run)?;
            for kind in kinds {
                let ckpt = train_on(&data, &cache.basis, &cache.codec, &config.run, kind, 1)?;
                ckpt.save(&out)?;
                let r = &ckpt.meta.report;
                println!("{kind}: best epoch {} val {}", r.best_epoch, r.best_val_loss);
            }
        }
        Command::Evaluate { cache, checkpoints, out, audio, run } => {
            let config = load_config(config_path, Some(&run))?;
            let cache = Cache::load(&cache)?;
            let ckpts = load_checkpoints(&checkpoints, &config)?;
            let eval = evaluate(&cache, &ckpts, &config.run)?;
            eval.save(&out, cache.sample_rate(), audio)?;
            print!("{}", eval.metric_csv());
            for s in &eval.omitted {
                eprintln!("omitted: {s}");
            }
        }
        Command::Serve { cache, checkpoints, addr } => {
            let config = load_config(config_path, None)?;
            let cache = Cache::load(&cache)?;
            let ckpts = load_checkpoints(&checkpoints, &config)?;
            for c in &ckpts {
                c.check_compatible(&cache)?;
            }
            let state = ServiceState::new(cache.codec, cache.basis, ckpts)?;
            tokio::runtime::Runtime::new()?.block_on(serve(state, addr))?;
        }
        Command::ExportTables { eval, cache } => {
            let diagnostics = match cache {
                Some(dir) => {
                    let cache = Cache::load(&dir)?;
                    let test: Vec<_> = cache.split(Split::Test).map(|r| &r.y).collect();
                    Some(cache.basis.diagnostics(&test))
                }
                None => None,
            };
            print!("{}", tables::export_tables(&eval, diagnostics.as_ref())?);
        }
    }
    Ok(())
}
