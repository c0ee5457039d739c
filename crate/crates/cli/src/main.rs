//! `sessrec`: generate data, train and evaluate next-item models, and run the
//! ablation, transfer and similarity experiments.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or I/O error,
//! 4 numerical failure.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use sessrec::dataset::{partition, InputFormat, MarketDataset};
use sessrec::experiment::{
    align_markets, run_ablation, run_similarity_study, run_transfer, AblationResult, Fraction,
    ModelKind, SimilarityStudy, TransferResult,
};
use sessrec::markov::estimate_transitions;
use sessrec::metrics::evaluate;
use sessrec::nn::{train, Checkpoint, LstmRecommender};
use sessrec::report::{emit_report, read_json_report, write_timings, Report, ReportFormat};
use sessrec::synth::{write_market, SyntheticMarketConfig};
use sessrec::{Error, Result};

use config::{load_datasets, resolve_markets, resolve_output, ExperimentConfig, MarketSpec};

#[derive(Parser)]
#[command(
    name = "sessrec",
    version,
    about = "Session-based next-item recommendation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic markets (CSV plus manifest per market).
    Gen(GenArgs),
    /// Convert a raw session file to the native format and id-map.
    Prep(PrepArgs),
    /// Train one model on a market's training split.
    Train(TrainArgs),
    /// Score a trained checkpoint on a market's validation split.
    Eval(EvalArgs),
    /// Train a fresh model per training fraction and score each.
    Ablate(ExperimentArgs),
    /// Train on source markets and validate on the target market.
    Transfer(ExperimentArgs),
    /// Compare markets through a shared item embedding.
    Similarity(ExperimentArgs),
    /// Re-render CSV/SVG from a JSON result.
    Report(ReportArgs),
    /// Print the default experiment configuration as TOML.
    Defaults,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    /// Generate every synthetic and derived market listed in this config.
    #[arg(short, long, conflicts_with_all = ["id", "n_x", "n_sessions", "zipf_s", "temperature", "length_p", "seed"])]
    config: Option<PathBuf>,
    /// Market id of a single market built from the flags below.
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    n_x: Option<usize>,
    #[arg(long)]
    n_sessions: Option<usize>,
    #[arg(long)]
    zipf_s: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    length_p: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `data` under the output root.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PrepArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// `native` or `yoochoose`.
    #[arg(short, long, default_value = "native")]
    format: InputFormat,
    #[arg(long)]
    id: String,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Market id from the config; defaults to the first market.
    #[arg(long)]
    market: Option<String>,
    /// Overrides `ablation.model`.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    /// Output file stem; defaults to `<market>-<model>` in the output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    market: Option<String>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Metrics JSON; printed to stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Overrides `output_dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON result written by ablate, transfer or similarity.
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long, value_delimiter = ',', default_value = "json,csv,svg")]
    formats: Vec<ReportFormat>,
    /// Defaults to the input's directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Argument(_) => 2,
        Error::Numerical(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => gen(a),
        Command::Prep(a) => prep(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate(a),
        Command::Transfer(a) => transfer(a),
        Command::Similarity(a) => similarity(a),
        Command::Report(a) => report(a),
        Command::Defaults => {
            print!("{}", ExperimentConfig::default().to_toml()?);
            Ok(())
        }
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let specs = match &a.config {
        Some(path) => ExperimentConfig::load(path)?.markets,
        None => {
            let d = SyntheticMarketConfig::default();
            let cfg = SyntheticMarketConfig {
                market_id: a.id.clone().unwrap_or(d.market_id.clone()),
                n_x: a.n_x.unwrap_or(d.n_x),
                n_sessions: a.n_sessions.unwrap_or(d.n_sessions),
                zipf_s: a.zipf_s.unwrap_or(d.zipf_s),
                temperature: a.temperature.unwrap_or(d.temperature),
                length_p: a.length_p.unwrap_or(d.length_p),
                seed: a.seed.unwrap_or(d.seed),
                ..d
            };
            vec![MarketSpec {
                id: cfg.market_id.clone(),
                synthetic: Some(cfg),
                ..Default::default()
            }]
        }
    };
    let dir = resolve_output(a.out.as_deref().unwrap_or(Path::new("data")));
    let resolved = resolve_markets(&specs)?;
    for r in &resolved {
        let Some(market) = &r.synthetic else {
            continue;
        };
        let base = r.derived.map(|(eps, i)| {
            (
                eps,
                &resolved[i]
                    .synthetic
                    .as_ref()
                    .expect("base is synthetic")
                    .structure,
            )
        });
        let manifest = write_market(&dir, market, base)?;
        info!(
            "wrote {} ({} sessions, latent {})",
            market.config.market_id,
            manifest.n_sessions,
            &manifest.latent_hash[..12]
        );
    }
    Ok(())
}

fn prep(a: PrepArgs) -> Result<()> {
    let market = MarketDataset::load(a.id.clone(), &a.input, a.format)?;
    let dir = resolve_output(a.out.as_deref().unwrap_or(Path::new("data")));
    fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    sessrec::dataset::write_native_csv(
        &dir.join(format!("{}.csv", a.id)),
        &market.sessions,
        &market.id_map,
    )?;
    market
        .id_map
        .write_csv(&dir.join(format!("{}.ids.csv", a.id)))?;
    info!(
        "{}: {} sessions over {} items",
        a.id,
        market.sessions.len(),
        market.catalog_size
    );
    Ok(())
}

fn pick_market(config: &ExperimentConfig, id: Option<&str>) -> Result<MarketDataset> {
    let specs: Vec<MarketSpec> = match id {
        None => config.markets.iter().take(1).cloned().collect(),
        Some(id) => {
            // a derived market needs its base resolved first
            let pos = config
                .markets
                .iter()
                .position(|m| m.id == id)
                .ok_or_else(|| Error::Config(format!("no market {id:?} in config")))?;
            config.markets[..=pos].to_vec()
        }
    };
    load_datasets(&specs)?
        .pop()
        .ok_or_else(|| Error::Config("config lists no markets".into()))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let config = ExperimentConfig::load(&a.config.config)?;
    let market = pick_market(&config, a.market.as_deref())?;
    let mut settings = config.ablation.clone();
    if let Some(m) = a.model {
        settings.model = m;
    }
    settings.validate(market.catalog_size)?;
    let fraction = Fraction::try_from(a.fraction)?;
    let split = partition(&market.sessions, settings.partition_seed)?;
    let sessions = split.cumulative(fraction.tenths());
    let stem = a.out.unwrap_or_else(|| {
        config
            .output_dir()
            .join(format!("{}-{}", market.market_id, settings.model))
    });
    if let Some(dir) = stem.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let with_ext = |ext: &str| PathBuf::from(format!("{}.{ext}", stem.display()));
    match settings.model {
        ModelKind::Markov => {
            let t = estimate_transitions(&sessions, market.catalog_size)?;
            t.write_csv(&with_ext("transitions.csv"))?;
        }
        ModelKind::LstmCe | ModelKind::LstmBpr => {
            let tc = settings.train_config();
            let outcome = train(&sessions, market.catalog_size, &tc)?;
            let ids = with_ext("ids.csv");
            market.id_map.write_csv(&ids)?;
            let ids_name = ids.file_name().map(|n| n.to_string_lossy().into_owned());
            Checkpoint::new(outcome.params, tc, ids_name).save(&with_ext("json"))?;
            if let Some(l) = outcome.loss_trace.last() {
                info!("final mean training loss {l:.4}");
            }
        }
    }
    info!(
        "trained {} on {} sessions of {}",
        settings.model,
        sessions.len(),
        market.market_id
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let config = ExperimentConfig::load(&a.config.config)?;
    let market = pick_market(&config, a.market.as_deref())?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    if ck.dims.n_x != market.catalog_size {
        return Err(Error::Config(format!(
            "checkpoint catalog {} differs from market catalog {}",
            ck.dims.n_x, market.catalog_size
        )));
    }
    if let (Some(name), Some(dir)) = (&ck.id_map, a.checkpoint.parent()) {
        let ids = sessrec::dataset::IdMap::read_csv(&dir.join(name))?;
        if ids != market.id_map {
            return Err(Error::Config(
                "checkpoint id-map differs from the market's".into(),
            ));
        }
    }
    let settings = &config.ablation;
    let split = partition(&market.sessions, settings.partition_seed)?;
    let popularity = sessrec::dataset::compute_popularity(&split.training(), market.catalog_size)?;
    let rec = LstmRecommender { params: &ck.params };
    let metrics = evaluate(&rec, &split.validation, &popularity, settings.k)?;
    let json = serde_json::to_string_pretty(&metrics)?;
    match a.out {
        Some(p) => fs::write(&p, json + "\n")
            .map_err(|e| Error::io(format!("writing {}", p.display()), e))?,
        None => println!("{json}"),
    }
    Ok(())
}

/// Copies the resolved config next to the reports so the run can be repeated
/// with `--config <dir>/manifest.toml`.
fn write_manifest(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut c = config.clone();
    c.output_dir = dir.to_path_buf();
    let p = dir.join("manifest.toml");
    fs::write(&p, c.to_toml()?).map_err(|e| Error::io(format!("writing {}", p.display()), e))
}

fn out_dir(config: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.map(|p| resolve_output(&p))
        .unwrap_or_else(|| config.output_dir())
}

fn ablate(a: ExperimentArgs) -> Result<()> {
    let config = ExperimentConfig::load(&a.config.config)?;
    let dir = out_dir(&config, a.out);
    let markets = load_datasets(&config.markets)?;
    if markets.is_empty() {
        return Err(Error::Config("config lists no markets".into()));
    }
    write_manifest(&config, &dir)?;
    for market in &markets {
        info!(
            "ablation of {} on {}",
            config.ablation.model, market.market_id
        );
        let timed = run_ablation(market, &config.ablation)?;
        let stem = format!("ablation-{}-{}", market.market_id, config.ablation.model);
        emit_report(&timed.result, &dir, &stem, &config.formats)?;
        write_timings(&dir, &stem, &timed.wall_clock_secs)?;
        for row in &timed.result.rows {
            info!(
                "  fraction {}: accuracy {:.4}, coverage {:.4}, novelty {:.4}",
                row.fraction,
                row.metrics.top_k_accuracy,
                row.metrics.catalog_coverage,
                row.metrics.novelty
            );
        }
    }
    Ok(())
}

fn transfer(a: ExperimentArgs) -> Result<()> {
    let config = ExperimentConfig::load(&a.config.config)?;
    let target_id = config
        .target
        .clone()
        .ok_or_else(|| Error::Config("transfer needs `target`".into()))?;
    let dir = out_dir(&config, a.out);
    let mut markets = load_datasets(&config.markets)?;
    if config.align_id_maps {
        markets = align_markets(&markets)?;
    }
    let pos = markets
        .iter()
        .position(|m| m.market_id == target_id)
        .ok_or_else(|| Error::Config(format!("target {target_id:?} not found")))?;
    let target = markets.remove(pos);
    write_manifest(&config, &dir)?;
    let timed = run_transfer(&target, &markets, &config.ablation)?;
    let stem = format!("transfer-{}-{}", target.market_id, config.ablation.model);
    emit_report(&timed.result, &dir, &stem, &config.formats)?;
    write_timings(&dir, &stem, &timed.wall_clock_secs)?;
    let last = |r: &AblationResult| r.rows.last().map(|x| x.metrics.top_k_accuracy);
    info!(
        "baseline {}: {:?}",
        target.market_id,
        last(&timed.result.baseline)
    );
    for s in &timed.result.sources {
        info!("source {}: {:?}", s.train_market, last(s));
    }
    Ok(())
}

fn similarity(a: ExperimentArgs) -> Result<()> {
    let config = ExperimentConfig::load(&a.config.config)?;
    let dir = out_dir(&config, a.out);
    let markets = load_datasets(&config.markets)?;
    write_manifest(&config, &dir)?;
    let timed = run_similarity_study(&markets, &config.similarity)?;
    emit_report(&timed.result, &dir, "similarity", &config.formats)?;
    write_timings(&dir, "similarity", &timed.wall_clock_secs)?;
    timed
        .result
        .matrix
        .write_csv(&dir.join("similarity-matrix.csv"))?;
    Ok(())
}

fn rerender<R: Report>(path: &Path, dir: &Path, formats: &[ReportFormat]) -> Result<Option<()>> {
    match read_json_report::<R>(path) {
        Ok(r) => {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "report".into());
            emit_report(&r, dir, &stem, formats)?;
            Ok(Some(()))
        }
        Err(Error::Serialization(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn report(a: ReportArgs) -> Result<()> {
    let dir = match a.out {
        Some(p) => resolve_output(&p),
        None => a.input.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if rerender::<AblationResult>(&a.input, &dir, &a.formats)?.is_some()
        || rerender::<TransferResult>(&a.input, &dir, &a.formats)?.is_some()
        || rerender::<SimilarityStudy>(&a.input, &dir, &a.formats)?.is_some()
    {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{} is not an ablation, transfer or similarity result",
            a.input.display()
        )))
    }
}
