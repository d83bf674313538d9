//! Command-line front end: one subcommand per pipeline stage, plus the
//! ablation, lambda-sweep and gradient-check harnesses.
//!
//! Conventions: `--config <path>` reads a flat `key = value` file whose
//! keys mirror the flags; explicit flags win. All randomness of a
//! command flows from one seed. Progress goes to stderr, results to
//! files and stdout. Exit codes: 0 success, 1 usage or config errors,
//! 2 data or schema errors, 3 numerical aborts.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crossreid::checkpoint::{
    load_embedding_checkpoint, load_gan_checkpoint, save_embedding_checkpoint, save_gan_checkpoint,
};
use crossreid::config::KvFile;
use crossreid::error::{Error, ErrorClass};
use crossreid::evalrank::{
    ablate_combinations, ablation_combinations, evaluate, reports_to_markdown, sweep_lambda,
    write_reports, EvalProtocol, LambdaRow,
};
use crossreid::gan::{augment_and_merge, train_gan, GanLossWeights, GanTrainConfig};
use crossreid::gradsuite::run_gradient_suite;
use crossreid::metric_loss::MarginMode;
use crossreid::multiorder::{collect_tri_order_sets, Combination};
use crossreid::numerics::rng::derive_seed;
use crossreid::synthcam::io::{read_dataset, write_atomic, write_dataset};
use crossreid::synthcam::{generate_dataset, split_one_view, DatasetManifest, Order, Side};
use crossreid::trainer::{train_reid, ReidTrainConfig};

#[derive(Parser)]
#[command(
    name = "crossreid",
    about = "Cross-distance re-identification over synthetic multi-camera features",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and its one-view partition.
    GenData(GenDataArgs),
    /// Train the feature-space style-transfer GAN.
    TrainGan(TrainGanArgs),
    /// Mint order-1/2 samples from an order-0 dataset with a trained GAN.
    Augment(AugmentArgs),
    /// Train the embedding with the triplet + center objective.
    TrainReid(TrainReidArgs),
    /// Evaluate retrieval with a fused cross-distance combination.
    Eval(EvalArgs),
    /// Evaluate the full cross-distance combination table.
    Ablate(AblateArgs),
    /// Retrain and evaluate across center-loss weights.
    SweepLambda(SweepLambdaArgs),
    /// Check every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Manifest file (key = value).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    cameras: Option<usize>,
    #[arg(long)]
    samples_per_identity: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    noise_ramp: Option<f64>,
    #[arg(long)]
    camera_spread: Option<f64>,
    #[arg(long)]
    offset_scale: Option<f64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Output directory for dataset_train.jsonl, dataset_test.jsonl and
    /// manifest.cfg.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainGanArgs {
    /// Order-0 training dataset with sides assigned.
    #[arg(long)]
    train: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    generator_lr: Option<f64>,
    #[arg(long)]
    discriminator_lr: Option<f64>,
    #[arg(long)]
    decay_start: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args)]
struct AugmentArgs {
    /// Trained GAN checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Order-0 dataset to augment.
    #[arg(long)]
    input: PathBuf,
    /// Output dataset: the input records plus their order-1/2
    /// derivatives.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainReidArgs {
    /// Augmented dataset (orders 0, 1 and 2).
    #[arg(long)]
    train: PathBuf,
    /// Embedding checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Identities per batch.
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated training orders, e.g. `0,1,2` or `0`.
    #[arg(long)]
    orders: Option<String>,
    /// `hinge` or `softplus`.
    #[arg(long)]
    margin_mode: Option<String>,
    /// Hinge margin.
    #[arg(long)]
    m: Option<f64>,
    /// Center-loss weight.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    gamma0: Option<f64>,
    #[arg(long)]
    t0: Option<u64>,
    #[arg(long)]
    t1: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Augmented test dataset (orders 0, 1 and 2 with sides).
    #[arg(long)]
    data: PathBuf,
    /// Embedding checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Cross-distance combination, e.g. `d1+d2+d10`.
    #[arg(long, default_value = "d1+d2+d10")]
    combination: String,
    /// Probe side (`X` or `Y`); the other side is the gallery.
    #[arg(long, default_value = "X")]
    probe_side: String,
    #[arg(long, default_value_t = 10)]
    max_rank: usize,
    #[arg(long, default_value = "report.csv")]
    out_csv: PathBuf,
    #[arg(long, default_value = "report.md")]
    out_md: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Semicolon-separated combination list; defaults to the full
    /// 15-column table.
    #[arg(long)]
    combinations: Option<String>,
    #[arg(long, default_value = "X")]
    probe_side: String,
    #[arg(long, default_value_t = 10)]
    max_rank: usize,
    #[arg(long, default_value = "ablation.csv")]
    out_csv: PathBuf,
    #[arg(long, default_value = "ablation.md")]
    out_md: PathBuf,
}

#[derive(Args)]
struct SweepLambdaArgs {
    /// Augmented training dataset.
    #[arg(long)]
    train: PathBuf,
    /// Augmented test dataset.
    #[arg(long)]
    test: PathBuf,
    /// Comma-separated center-loss weights.
    #[arg(long, default_value = "0.0006,0.001,0.003,0.006,0.01")]
    lambdas: String,
    #[arg(long, default_value = "d1+d2+d10")]
    combination: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    t0: Option<u64>,
    #[arg(long)]
    t1: Option<u64>,
    #[arg(long, default_value = "X")]
    probe_side: String,
    #[arg(long, default_value = "sweep.csv")]
    out_csv: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Valid parameter points per loss.
    #[arg(long, default_value_t = 20)]
    points: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Pass threshold on the max relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            match err.class() {
                ErrorClass::Usage => ExitCode::from(1),
                ErrorClass::Data => ExitCode::from(2),
                ErrorClass::Numeric => ExitCode::from(3),
            }
        }
    }
}

fn load_kv(path: &Option<PathBuf>) -> Result<KvFile, Error> {
    match path {
        Some(p) => KvFile::load(p),
        None => Ok(KvFile::default()),
    }
}

fn parse_side(s: &str) -> Result<Side, Error> {
    Side::parse(s).map_err(|_| Error::usage(format!("probe side must be 'X' or 'Y', got '{s}'")))
}

fn parse_orders(s: &str) -> Result<Vec<Order>, Error> {
    let mut orders = Vec::new();
    for part in s.split(',') {
        let v: u8 = part
            .trim()
            .parse()
            .map_err(|_| Error::usage(format!("bad order '{}' (use 0, 1 or 2)", part.trim())))?;
        orders.push(Order::from_u8(v).map_err(|e| Error::usage(e.to_string()))?);
    }
    if orders.is_empty() {
        return Err(Error::usage("orders list is empty"));
    }
    Ok(orders)
}

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::GenData(args) => gen_data(args),
        Command::TrainGan(args) => train_gan_cmd(args),
        Command::Augment(args) => augment_cmd(args),
        Command::TrainReid(args) => train_reid_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Ablate(args) => ablate_cmd(args),
        Command::SweepLambda(args) => sweep_lambda_cmd(args),
        Command::Gradcheck(args) => gradcheck_cmd(args),
    }
}

fn gen_data(args: GenDataArgs) -> Result<ExitCode, Error> {
    let kv = load_kv(&args.config)?;
    let mut manifest = DatasetManifest::from_kv(&kv)?;
    kv.ensure_consumed()?;
    if let Some(v) = args.seed {
        manifest.seed = v;
    }
    if let Some(v) = args.identities {
        manifest.identities = v;
    }
    if let Some(v) = args.cameras {
        manifest.cameras = v;
    }
    if let Some(v) = args.samples_per_identity {
        manifest.samples_per_identity = v;
    }
    if let Some(v) = args.latent_dim {
        manifest.latent_dim = v;
    }
    if let Some(v) = args.feature_dim {
        manifest.feature_dim = v;
    }
    if let Some(v) = args.noise_sigma {
        manifest.noise_sigma = v;
    }
    if let Some(v) = args.noise_ramp {
        manifest.noise_ramp = v;
    }
    if let Some(v) = args.camera_spread {
        manifest.camera_spread = v;
    }
    if let Some(v) = args.offset_scale {
        manifest.offset_scale = v;
    }
    if let Some(v) = args.train_fraction {
        manifest.train_fraction = v;
    }
    manifest.validate()?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    eprintln!(
        "generating {} identities x {} samples (seed {})",
        manifest.identities, manifest.samples_per_identity, manifest.seed
    );
    let mut data = generate_dataset(&manifest)?;
    split_one_view(&mut data.train, derive_seed(manifest.seed, "split-train"))?;
    split_one_view(&mut data.test, derive_seed(manifest.seed, "split-test"))?;

    let train_path = args.out_dir.join("dataset_train.jsonl");
    let test_path = args.out_dir.join("dataset_test.jsonl");
    let manifest_path = args.out_dir.join("manifest.cfg");
    write_dataset(&train_path, &data.train)?;
    write_dataset(&test_path, &data.test)?;
    write_atomic(&manifest_path, manifest.to_kv_string().as_bytes())?;
    println!(
        "wrote {} train and {} test records under {}",
        data.train.len(),
        data.test.len(),
        args.out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn train_gan_cmd(args: TrainGanArgs) -> Result<ExitCode, Error> {
    let kv = load_kv(&args.config)?;
    let mut config = GanTrainConfig::default();
    let mut weights = GanLossWeights::default();
    if let Some(v) = kv.get("epochs")? {
        config.epochs = v;
    }
    if let Some(v) = kv.get("batch_size")? {
        config.batch_size = v;
    }
    if let Some(v) = kv.get("generator_lr")? {
        config.generator_lr = v;
    }
    if let Some(v) = kv.get("discriminator_lr")? {
        config.discriminator_lr = v;
    }
    if let Some(v) = kv.get("decay_start")? {
        config.decay_start = v;
    }
    if let Some(v) = kv.get("seed")? {
        config.seed = v;
    }
    if let Some(v) = kv.get("alpha")? {
        weights.alpha = v;
    }
    if let Some(v) = kv.get("beta")? {
        weights.beta = v;
    }
    kv.ensure_consumed()?;
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.generator_lr {
        config.generator_lr = v;
    }
    if let Some(v) = args.discriminator_lr {
        config.discriminator_lr = v;
    }
    if let Some(v) = args.decay_start {
        config.decay_start = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.alpha {
        weights.alpha = v;
    }
    if let Some(v) = args.beta {
        weights.beta = v;
    }
    config.validate()?;
    weights.validate()?;

    let records = read_dataset(&args.train)?;
    eprintln!(
        "training GAN on {} records for {} epochs (seed {})",
        records.len(),
        config.epochs,
        config.seed
    );
    let (model, log) = train_gan(&records, &config, &weights)?;
    if let Some(last) = log.last() {
        eprintln!(
            "final epoch {}: generator loss {:.4}, discriminator loss {:.4}",
            last.epoch, last.generator_loss, last.discriminator_loss
        );
    }
    save_gan_checkpoint(&args.out, &model, &weights, config.seed, &config.echo())?;
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn augment_cmd(args: AugmentArgs) -> Result<ExitCode, Error> {
    let (model, _, _) = load_gan_checkpoint(&args.checkpoint)?;
    let records = read_dataset(&args.input)?;
    eprintln!("augmenting {} order-0 records", records.len());
    let all = augment_and_merge(&model, &records)?;
    write_dataset(&args.out, &all)?;
    println!(
        "wrote {} records ({} originals + {} augmented) to {}",
        all.len(),
        records.len(),
        all.len() - records.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Flag-level overrides applied on top of a config file; `None` leaves
/// the file (or default) value in place.
#[derive(Default)]
struct ReidOverrides {
    seed: Option<u64>,
    k: Option<usize>,
    orders: Option<String>,
    margin_mode: Option<String>,
    m: Option<f64>,
    lambda: Option<f64>,
    hidden_dim: Option<usize>,
    embed_dim: Option<usize>,
    gamma0: Option<f64>,
    t0: Option<u64>,
    t1: Option<u64>,
}

fn reid_config_from(
    config_path: &Option<PathBuf>,
    over: ReidOverrides,
) -> Result<ReidTrainConfig, Error> {
    let kv = load_kv(config_path)?;
    let mut config = ReidTrainConfig::default();
    if let Some(v) = kv.get("k")? {
        config.k = v;
    }
    if let Some(v) = kv.get_str("orders") {
        config.orders = parse_orders(&v)?;
    }
    let file_mode: Option<String> = kv.get_str("margin_mode");
    let file_m: Option<f64> = kv.get("m")?;
    if let Some(v) = kv.get("lambda")? {
        config.lambda = v;
    }
    if let Some(v) = kv.get("hidden_dim")? {
        config.hidden_dim = v;
    }
    if let Some(v) = kv.get("embed_dim")? {
        config.embed_dim = v;
    }
    if let Some(v) = kv.get("gamma0")? {
        config.schedule.gamma0 = v;
    }
    if let Some(v) = kv.get("t0")? {
        config.schedule.t0 = v;
    }
    if let Some(v) = kv.get("t1")? {
        config.schedule.t1 = v;
    }
    if let Some(v) = kv.get("seed")? {
        config.seed = v;
    }
    kv.ensure_consumed()?;

    if let Some(v) = over.seed {
        config.seed = v;
    }
    if let Some(v) = over.k {
        config.k = v;
    }
    if let Some(v) = &over.orders {
        config.orders = parse_orders(v)?;
    }
    if let Some(v) = over.lambda {
        config.lambda = v;
    }
    if let Some(v) = over.hidden_dim {
        config.hidden_dim = v;
    }
    if let Some(v) = over.embed_dim {
        config.embed_dim = v;
    }
    if let Some(v) = over.gamma0 {
        config.schedule.gamma0 = v;
    }
    if let Some(v) = over.t0 {
        config.schedule.t0 = v;
    }
    if let Some(v) = over.t1 {
        config.schedule.t1 = v;
    }
    // Margin: flag beats file, each half independently.
    let mode = over
        .margin_mode
        .or(file_mode)
        .unwrap_or_else(|| "hinge".to_string());
    let margin_value = over.m.or(file_m).unwrap_or(0.3);
    config.margin = MarginMode::parse(&mode, margin_value)?;
    config.validate()?;
    Ok(config)
}

fn train_reid_cmd(args: TrainReidArgs) -> Result<ExitCode, Error> {
    let config = reid_config_from(
        &args.config,
        ReidOverrides {
            seed: args.seed,
            k: args.k,
            orders: args.orders.clone(),
            margin_mode: args.margin_mode.clone(),
            m: args.m,
            lambda: args.lambda,
            hidden_dim: args.hidden_dim,
            embed_dim: args.embed_dim,
            gamma0: args.gamma0,
            t0: args.t0,
            t1: args.t1,
        },
    )?;
    let records = read_dataset(&args.train)?;
    eprintln!(
        "training embedding on {} records to t1 = {} (seed {})",
        records.len(),
        config.schedule.t1,
        config.seed
    );
    let out = train_reid(&records, &config)?;
    if let Some(last) = out.log.last() {
        eprintln!(
            "final iteration {}: loss {:.4} (lr {:.2e})",
            last.iteration, last.loss, last.lr
        );
    }
    save_embedding_checkpoint(&args.out, &out.model, config.seed, &config.echo())?;
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn eval_cmd(args: EvalArgs) -> Result<ExitCode, Error> {
    let combination = Combination::parse(&args.combination)?;
    let protocol = EvalProtocol {
        probe_side: parse_side(&args.probe_side)?,
        max_rank: args.max_rank,
    };
    let (embed, _) = load_embedding_checkpoint(&args.checkpoint)?;
    let records = read_dataset(&args.data)?;
    let sets = collect_tri_order_sets(&embed, &records)?;
    eprintln!(
        "evaluating {} tri-order sets with {}",
        sets.len(),
        combination
    );
    let report = evaluate(&sets, &combination, &protocol)?;
    write_reports(&args.out_csv, &args.out_md, std::slice::from_ref(&report))?;
    print!("{}", reports_to_markdown(std::slice::from_ref(&report)));
    println!(
        "mAP {:.4}, Rank-1 {:.4} over {} queries ({} skipped)",
        report.map,
        report.rank1(),
        report.num_queries,
        report.skipped_queries
    );
    Ok(ExitCode::SUCCESS)
}

fn ablate_cmd(args: AblateArgs) -> Result<ExitCode, Error> {
    let combinations = match &args.combinations {
        None => ablation_combinations(),
        Some(list) => list
            .split(';')
            .map(Combination::parse)
            .collect::<Result<Vec<_>, _>>()?,
    };
    let protocol = EvalProtocol {
        probe_side: parse_side(&args.probe_side)?,
        max_rank: args.max_rank,
    };
    let (embed, _) = load_embedding_checkpoint(&args.checkpoint)?;
    let records = read_dataset(&args.data)?;
    let sets = collect_tri_order_sets(&embed, &records)?;
    eprintln!(
        "ablating {} combinations over {} tri-order sets",
        combinations.len(),
        sets.len()
    );
    let reports = ablate_combinations(&sets, &combinations, &protocol)?;
    write_reports(&args.out_csv, &args.out_md, &reports)?;
    print!("{}", reports_to_markdown(&reports));
    Ok(ExitCode::SUCCESS)
}

fn sweep_lambda_cmd(args: SweepLambdaArgs) -> Result<ExitCode, Error> {
    let mut lambdas = Vec::new();
    for part in args.lambdas.split(',') {
        let v: f64 = part
            .trim()
            .parse()
            .map_err(|_| Error::usage(format!("bad lambda '{}'", part.trim())))?;
        if v.is_nan() || v < 0.0 {
            return Err(Error::usage(format!("lambda must be >= 0, got {v}")));
        }
        lambdas.push(v);
    }
    let combination = Combination::parse(&args.combination)?;
    let protocol = EvalProtocol {
        probe_side: parse_side(&args.probe_side)?,
        max_rank: 10,
    };
    let base = reid_config_from(
        &args.config,
        ReidOverrides {
            seed: args.seed,
            k: args.k,
            t0: args.t0,
            t1: args.t1,
            ..ReidOverrides::default()
        },
    )?;
    let train_records = read_dataset(&args.train)?;
    let test_records = read_dataset(&args.test)?;
    let rows = sweep_lambda(
        |lambda| {
            eprintln!("retraining with lambda = {lambda}");
            let config = ReidTrainConfig {
                lambda,
                ..base.clone()
            };
            let out = train_reid(&train_records, &config)?;
            let sets = collect_tri_order_sets(&out.model, &test_records)?;
            evaluate(&sets, &combination, &protocol)
        },
        &lambdas,
    )?;
    let mut csv = String::from("lambda,rank1,mAP\n");
    println!("lambda  rank1   mAP");
    for LambdaRow { lambda, rank1, map } in &rows {
        csv.push_str(&format!("{lambda},{rank1},{map}\n"));
        println!("{lambda:<7} {rank1:.4}  {map:.4}");
    }
    write_atomic(&args.out_csv, csv.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn gradcheck_cmd(args: GradcheckArgs) -> Result<ExitCode, Error> {
    if args.step.is_nan() || args.step <= 0.0 {
        return Err(Error::usage("step must be > 0"));
    }
    eprintln!(
        "checking gradients at {} points per loss (seed {}, step {:.1e})",
        args.points, args.seed, args.step
    );
    let reports = run_gradient_suite(args.seed, args.points, args.step)?;
    let mut all_ok = true;
    for r in &reports {
        let ok = r.max_rel_err < args.tolerance;
        all_ok &= ok;
        println!(
            "{:<26} max relative error {:.3e} over {} points ({} skipped near kinks) {}",
            r.name,
            r.max_rel_err,
            r.points,
            r.skipped,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if all_ok {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Error::numeric(format!(
            "a gradient check exceeded the {} tolerance",
            args.tolerance
        )))
    }
}
