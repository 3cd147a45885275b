use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use doubleadapt::config::{Config, Prepared};
use doubleadapt::data::write_csv;
use doubleadapt::pipeline::{
    offline_train, online_train, pretrain_backbone, run_baseline_naive_il, run_baseline_rolling_retrain,
    shift_partition, write_ablation_csv, write_epochs_csv, write_metrics_csv, write_predictions_csv,
    write_report_csv, write_timing_csv, AblationRow, LearnerState, RunConfig, RunMode, RunReport, Variant,
};
use doubleadapt::ParamSet;

#[derive(Parser)]
#[command(name = "doubleadapt", version, about = "Incremental learning with meta-learned data and model adapters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run seed (overrides training.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Method (overrides training.mode).
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic stream as CSV.
    Generate,
    /// Offline phase: pretrain the backbone and meta-train the adapters.
    Pretrain,
    /// Online phase over validation and test tasks.
    Online {
        /// Directory holding phi.json / psi.json (defaults to the output directory).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Run every ablation variant on the same stream and schedule.
    Ablate,
    /// Print the effective configuration.
    PrintConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "doubleadapt")]
    DoubleAdapt,
    #[value(name = "naive_il")]
    NaiveIl,
    #[value(name = "rolling_retrain")]
    RollingRetrain,
}

impl From<ModeArg> for RunMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::DoubleAdapt => RunMode::DoubleAdapt,
            ModeArg::NaiveIl => RunMode::NaiveIl,
            ModeArg::RollingRetrain => RunMode::RollingRetrain,
        }
    }
}

fn effective_config(cli: &Cli) -> Result<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => Config::default(),
    };
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.training.seed = seed;
    }
    if let Some(mode) = cli.mode {
        config.training.mode = mode.into();
    }
    config.validate()?;
    Ok(config)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn prepare_output(config: &Config) -> Result<PathBuf> {
    let dir = config.output.dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("effective_config.toml"), config.to_toml())?;
    Ok(dir)
}

fn generate(config: &Config) -> Result<()> {
    if config.data.path.is_some() {
        bail!("generate needs a synthetic data section, but data.path is set");
    }
    let dir = prepare_output(config)?;
    let (ds, synth) = config.raw_stream()?;
    let synth = synth.expect("synthetic stream");
    let comments = vec![
        format!("seed={}", config.training.seed),
        format!("data_seed={}", synth.config.seed),
        format!("drift_mode={:?}", synth.config.drift_mode).to_lowercase(),
    ];
    write_csv(&ds, create(&dir, "stream.csv")?, &comments)?;
    log::info!("wrote {} dates to {}", ds.n_dates(), dir.join("stream.csv").display());
    Ok(())
}

fn write_params(dir: &Path, name: &str, params: &ParamSet) -> Result<()> {
    params.save(&dir.join(name))?;
    Ok(())
}

fn pretrain(config: &Config) -> Result<()> {
    let dir = prepare_output(config)?;
    let Prepared { dataset, schedule, .. } = config.prepare()?;
    let rc = RunConfig::from_config(config);
    match config.training.mode {
        RunMode::RollingRetrain => bail!("rolling_retrain has no offline phase"),
        RunMode::NaiveIl => {
            let phi = pretrain_backbone(&rc, &dataset, &schedule)?;
            write_params(&dir, "phi.json", &phi)
        }
        RunMode::DoubleAdapt => {
            let phi0 = pretrain_backbone(&rc, &dataset, &schedule)?;
            let learner = rc.learner(dataset.feature_dim(), config.training.variant)?;
            let state = learner.init_state(phi0, config.training.seed);
            let result = offline_train(&learner, state, &dataset, &schedule, &config.training)?;
            write_epochs_csv(&result.epochs, create(&dir, "epochs.csv")?)?;
            write_params(&dir, "phi.json", &result.state.phi)?;
            if let Some(psi) = &result.state.psi {
                write_params(&dir, "psi.json", psi)?;
            }
            log::info!(
                "offline training ran {} epochs, best epoch {:?}",
                result.epochs.len(),
                result.best_epoch
            );
            Ok(())
        }
    }
}

fn load_params(dir: &Path, name: &str) -> Result<ParamSet> {
    let path = dir.join(name);
    ParamSet::load(&path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn write_run(dir: &Path, report: &RunReport, metrics: &[(String, Option<doubleadapt::eval::MetricsSummary>)]) -> Result<()> {
    write_report_csv(report, create(dir, "report.csv")?)?;
    write_predictions_csv(report, create(dir, "predictions.csv")?)?;
    write_timing_csv(report, create(dir, "timing.csv")?)?;
    write_metrics_csv(metrics, create(dir, "metrics.csv")?)?;
    Ok(())
}

fn online(config: &Config, checkpoints: Option<&Path>) -> Result<()> {
    let dir = prepare_output(config)?;
    let ckpt = checkpoints.unwrap_or(&dir).to_path_buf();
    let Prepared { dataset, schedule, .. } = config.prepare()?;
    let rc = RunConfig::from_config(config);
    let model = rc.backbone(dataset.feature_dim());
    let phi0 = pretrain_backbone(&rc, &dataset, &schedule)?;
    let eta = config.meta.eta_theta;
    let steps = config.meta.inner_steps;
    let report = match config.training.mode {
        RunMode::DoubleAdapt => {
            let learner = rc.learner(dataset.feature_dim(), config.training.variant)?;
            let phi = load_params(&ckpt, "phi.json")?;
            let psi = match learner.adapter {
                Some(_) => Some(load_params(&ckpt, "psi.json")?),
                None => None,
            };
            let state = LearnerState::new(phi, psi);
            let (report, last) = online_train(&learner, state, &dataset, &schedule, "doubleadapt")?;
            write_params(&dir, "phi_final.json", &last.phi)?;
            if let Some(psi) = &last.psi {
                write_params(&dir, "psi_final.json", psi)?;
            }
            report
        }
        RunMode::NaiveIl => {
            let start = if ckpt.join("phi.json").exists() {
                load_params(&ckpt, "phi.json")?
            } else {
                phi0.clone()
            };
            run_baseline_naive_il(&model, start, &dataset, &schedule, eta, steps)?
        }
        RunMode::RollingRetrain => run_baseline_rolling_retrain(&rc, &dataset, &schedule)?,
    };
    let partition = shift_partition(&model, phi0, &dataset, &schedule, eta, steps)?;
    write_run(&dir, &report, &report.stratified(&partition))?;
    let m = &report.metrics;
    println!(
        "{} ic={:.4} icir={} rank_ic={:.4} dates={}",
        report.mode,
        m.ic_mean,
        m.icir.map_or("null".into(), |v| format!("{v:.4}")),
        m.rank_ic_mean,
        m.n_dates
    );
    Ok(())
}

fn ablate(config: &Config) -> Result<()> {
    let dir = prepare_output(config)?;
    let Prepared { dataset, schedule, .. } = config.prepare()?;
    let rc = RunConfig::from_config(config);
    let phi0 = pretrain_backbone(&rc, &dataset, &schedule)?;
    let model = rc.backbone(dataset.feature_dim());
    let eta = config.meta.eta_theta;
    let steps = config.meta.inner_steps;
    let partition = shift_partition(&model, phi0.clone(), &dataset, &schedule, eta, steps)?;
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let report = if variant == Variant::Il {
            run_baseline_naive_il(&model, phi0.clone(), &dataset, &schedule, eta, steps)?
        } else {
            let learner = rc.learner(dataset.feature_dim(), variant)?;
            let state = learner.init_state(phi0.clone(), config.training.seed);
            let offline = offline_train(&learner, state, &dataset, &schedule, &config.training)?;
            online_train(&learner, offline.state, &dataset, &schedule, variant.label())?.0
        };
        for (stratum, metrics) in report.stratified(&partition) {
            rows.push(AblationRow {
                variant: variant.label().to_string(),
                stratum,
                metrics,
            });
        }
        println!("{:<12} ic={:.4} rank_ic={:.4}", variant.label(), report.metrics.ic_mean, report.metrics.rank_ic_mean);
    }
    write_ablation_csv(&rows, create(&dir, "ablation.csv")?)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let config = effective_config(cli)?;
    match &cli.command {
        Command::Generate => generate(&config),
        Command::Pretrain => pretrain(&config),
        Command::Online { checkpoints } => online(&config, checkpoints.as_deref()),
        Command::Ablate => ablate(&config),
        Command::PrintConfig => {
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut parts: Vec<String> = Vec::new();
            for cause in e.chain() {
                let text = cause.to_string().replace('\n', " ");
                if !parts.last().is_some_and(|p| p.contains(&text)) {
                    parts.push(text);
                }
            }
            eprintln!("error: {}", parts.join(": "));
            ExitCode::FAILURE
        }
    }
}
