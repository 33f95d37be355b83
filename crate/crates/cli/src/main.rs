//! `mcthfr`: generate synthetic data, train, sweep missing rates and run
//! diagnostics. Exit status 0 on success, 1 when a check fails or a run
//! aborts, 2 on usage or configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcthfr::checkpoint::{load_checkpoint, save_checkpoint};
use mcthfr::config::RunConfig;
use mcthfr::datasim::{class_histogram, generate_range, load_dataset, save_dataset, DatasetHeader};
use mcthfr::evalkit::{
    count_params_macs, gradcheck, model_complexity, sweep, GradcheckConfig, LayerKind, DEFAULT_MAC_LENS,
};
use mcthfr::mct::{ModelConfig, Network};
use mcthfr::trainer::{train, Strategy};
use mcthfr::Error;

#[derive(Parser)]
#[command(name = "mcthfr", version, about = "Multimodal transformer with hybrid feature reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic MMT1 dataset.
    GenData(GenArgs),
    /// Train a model and write its checkpoint, log and resolved config.
    Train(TrainArgs),
    /// Score a checkpoint over a range of missing rates.
    Sweep(SweepArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Print parameter and MAC counts as key=value lines.
    Params(ParamsArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: usize,
    /// Overrides data.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Index of the first sample in the seeded stream.
    #[arg(long, default_value_t = 0)]
    start: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset; without it the last tenth of --data is held out.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// complete, one-to-one or dynamic.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    miss_rate: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Train pure MCT without the reconstruction branch.
    #[arg(long)]
    no_hfr: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Supplies [eval] defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated missing rates.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    mask_seeds: Option<Vec<u64>>,
    /// Output directory for sweep.csv and sweep.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Its [model] section replaces the tiny model.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct ParamsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated audio, vision and language lengths for MAC estimates.
    #[arg(long, value_delimiter = ',')]
    lens: Option<Vec<usize>>,
}

enum Failure {
    /// Exit 1.
    Check(String),
    /// Exit 2.
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Invalid { .. } | Error::Mismatch { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Check(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    std::fs::write(path, contents).map_err(|e| Failure::Check(format!("cannot write {}: {e}", path.display())))
}

fn gen_data(a: GenArgs) -> CmdResult {
    if a.n == 0 {
        return Err(Failure::Usage("--n must be at least 1".into()));
    }
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.data.seed = s;
    }
    let samples = generate_range(&cfg.data, a.start, a.n)?;
    let header = DatasetHeader {
        classes: cfg.data.classes,
        dims: cfg.data.dims,
    };
    save_dataset(&a.out, header, &samples)?;
    println!("samples={}", samples.len());
    for (c, n) in class_histogram(&samples, cfg.data.classes).iter().enumerate() {
        println!("class_{c}={n}");
    }
    Ok(())
}

fn check_header(model: &ModelConfig, header: DatasetHeader) -> CmdResult {
    if header.classes != model.classes || header.dims != model.feature_dims {
        return Err(Error::Mismatch {
            checkpoint: model.signature(),
            data: format!(
                "classes={} dims=({},{},{})",
                header.classes, header.dims[0], header.dims[1], header.dims[2]
            ),
        }
        .into());
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let mut cfg = load_config(a.config.as_deref())?;
    let plan = &mut cfg.train;
    if let Some(s) = a.strategy {
        plan.strategy = s;
    }
    if let Some(r) = a.miss_rate {
        if plan.strategy == Strategy::Complete {
            return Err(Failure::Usage("--miss-rate conflicts with the complete strategy".into()));
        }
        plan.p_miss = r;
    }
    if let Some(v) = a.alpha {
        plan.alpha = v;
    }
    if let Some(v) = a.beta {
        plan.beta = v;
    }
    if let Some(v) = a.seed {
        plan.seed = v;
    }
    if let Some(v) = a.epochs {
        plan.max_epochs = v;
    }
    if a.no_hfr {
        plan.use_hfr = false;
    }
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs).into());
    }
    let (header, mut samples) = load_dataset(&a.data)?;
    check_header(&cfg.model, header)?;
    let valid = match &a.valid {
        Some(p) => {
            let (h, v) = load_dataset(p)?;
            check_header(&cfg.model, h)?;
            v
        }
        None => {
            let hold = (samples.len() / 10).max(1);
            if samples.len() < hold + 2 {
                return Err(Failure::Usage(format!("{} samples are too few to hold out validation", samples.len())));
            }
            samples.split_off(samples.len() - hold)
        }
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Check(format!("cannot create {}: {e}", a.out.display())))?;
    eprintln!(
        "strategy={:?} alpha={} beta={} p_miss={} hfr={}",
        cfg.train.strategy, cfg.train.alpha, cfg.train.beta, cfg.train.p_miss, cfg.train.use_hfr
    );
    let net: Network<f32> = cfg.train.build_network(&cfg.model)?;
    let outcome = train(net, &cfg.train, &samples, &valid, |e| {
        eprintln!(
            "epoch {:>3}  train {:.4}  valid {:.4}  acc {:.3}",
            e.epoch, e.train.total, e.valid.total, e.valid_accuracy
        )
    })?;
    let ckpt = a.out.join("model.mctp");
    save_checkpoint(&ckpt, &outcome.network)?;
    let mut log = outcome.log;
    log.checkpoint = Some(ckpt.display().to_string());
    log.write_jsonl(a.out.join("train_log.jsonl"))?;
    log.write_summary(a.out.join("summary.json"))?;
    write_file(&a.out.join("config.toml"), cfg.to_toml())?;
    println!("best_epoch={}", log.best_epoch);
    println!("best_valid_loss={:.6}", log.best_valid_loss);
    println!("checkpoint={}", ckpt.display());
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> CmdResult {
    let cfg = load_config(a.config.as_deref())?;
    let mut eval = cfg.eval;
    if let Some(r) = a.rates {
        eval.rates = r;
    }
    if let Some(s) = a.mask_seeds {
        eval.mask_seeds = s;
    }
    let net: Network<f32> = load_checkpoint(&a.checkpoint)?;
    let (header, samples) = load_dataset(&a.data)?;
    check_header(&net.cfg, header)?;
    let report = sweep(&net, &samples, &eval)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Check(format!("cannot create {}: {e}", a.out.display())))?;
    write_file(&a.out.join("sweep.csv"), report.to_csv())?;
    write_file(&a.out.join("sweep.json"), report.to_json() + "\n")?;
    for (r, s) in report.rates.iter().zip(&report.mean) {
        println!("rate={r:.2} UA={:.4} WA={:.4} UF1={:.4} WF1={:.4}", s.ua, s.wa, s.uf1, s.wf1);
    }
    match report.auilc {
        Some(s) => println!("auilc UA={:.4} WA={:.4} UF1={:.4} WF1={:.4}", s.ua, s.wa, s.uf1, s.wf1),
        None => println!("auilc=absent (single rate)"),
    }
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> CmdResult {
    let mut cfg = GradcheckConfig {
        tolerance: a.tolerance,
        ..GradcheckConfig::default()
    };
    if let Some(p) = &a.config {
        cfg.model = RunConfig::load(p)?.model;
    }
    cfg.fault = a.inject_fault.map(|group| mcthfr::evalkit::Fault { group, factor: 1.01 });
    let report = gradcheck(&cfg)?;
    print!("{}", report.table());
    println!("max_rel_error={:.3e} tolerance={:.1e}", report.max_error(), report.tolerance);
    if report.passed() {
        return Ok(());
    }
    let failing: Vec<&str> = report.failing().map(|g| g.group.as_str()).collect();
    Err(Failure::Check(format!("gradient check failed for {}", failing.join(", "))))
}

fn params_cmd(a: ParamsArgs) -> CmdResult {
    let cfg = load_config(a.config.as_deref())?;
    let lens = match a.lens {
        Some(v) if v.len() == 3 => [v[0], v[1], v[2]],
        Some(v) => return Err(Failure::Usage(format!("--lens takes 3 values, got {}", v.len()))),
        None => DEFAULT_MAC_LENS,
    };
    let model = &cfg.model;
    let hfr = cfg.train.use_hfr.then_some(&cfg.train.hfr);
    let lines = [
        ("layer.mrau", count_params_macs(model, LayerKind::Mrau, lens)),
        ("layer.pairwise_reference", count_params_macs(model, LayerKind::PairwiseReference, lens)),
        ("model.training", model_complexity(model, hfr, lens, true)),
        ("model.inference", model_complexity(model, hfr, lens, false)),
    ];
    println!("lens={},{},{}", lens[0], lens[1], lens[2]);
    for (key, c) in lines {
        println!("{key}.params={}", c.params);
        println!("{key}.macs={}", c.macs);
    }
    let net: Network<f32> = cfg.train.build_network(model)?;
    println!("enumerated.training.params={}", net.store.scalar_count());
    println!("enumerated.inference.params={}", net.inference_param_count());
    if model.layers > 0 {
        println!("enumerated.layer.mrau.params={}", net.store.count_with_prefix(&["mrau0."]));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Params(a) => params_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
