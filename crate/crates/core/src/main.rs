use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use xmodal::checkpoint::{load_checkpoint, save_checkpoint, save_params};
use xmodal::config::{ExperimentConfig, Sweep};
use xmodal::data::{generate_synthetic, split_classes};
use xmodal::error::{Error, Result};
use xmodal::experiment::{
    corpus_dims, evaluate_checkpoint, load_or_generate, run_trials, sweep_csv, EvalReport, Protocol,
};
use xmodal::trainer::train;
use xmodal::verify::{run_verify, VerifyOptions};

/// Joint video/text embeddings: data generation, training, evaluation and
/// self-checks.
///
/// Config precedence, lowest first: built-in defaults, the `--config` file,
/// then `--seed`, `--set` overrides and `--ablate`.
#[derive(Parser, Debug)]
#[command(name = "xmodal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment document.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's `seed`; required when the config has none.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; falls back to the config's `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated loss terms to switch off (e.g. `joint,cross,cycle`).
    #[arg(long, global = true)]
    ablate: Option<String>,
    /// Dotted config override, `KEY=VALUE`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus (features, vocabulary, split).
    GenData,
    /// Train a model and write its checkpoint and logs.
    Train {
        /// Corpus directory; unset means generate from the config.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint, or train and evaluate fresh trials.
    Eval {
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        /// Saved model; without one, `eval.trials` models are trained.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// `KEY=V1,V2,...`: one trial set per value, summarised in sweep.csv.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Run the gradient, filter-bank, embedding and determinism checks.
    Verify {
        /// Random tiny-model instances per gradient check.
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, hide = true, value_name = "CHECK")]
        inject_fault: Option<String>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ProtocolArg {
    Zeroshot,
    Discover,
    Caption,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Zeroshot => Protocol::Zeroshot,
            ProtocolArg::Discover => Protocol::Discover,
            ProtocolArg::Caption => Protocol::Caption,
        }
    }
}

fn resolve_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match (&common.config, common.seed) {
        (Some(path), seed) => ExperimentConfig::load(path, seed)?,
        (None, Some(seed)) => ExperimentConfig::with_seed(seed),
        (None, None) => return Err(Error::Config("missing required key `seed` (no --config and no --seed)".into())),
    };
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set {kv:?} is not KEY=VALUE")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(terms) = &common.ablate {
        config.ablate(terms)?;
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(common: &Common, config: &ExperimentConfig) -> Result<PathBuf> {
    common
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `out_dir`".into()))
}

/// Creates `dir` and records the resolved config and seed in it.
fn prepare_out(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), config.to_json_pretty() + "\n")?;
    fs::write(dir.join("seed.txt"), format!("{}\n", config.seed))?;
    Ok(())
}

fn gen_data(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let (corpus, _) = generate_synthetic::<f64>(&config.data)?;
    corpus.save_dir(out)?;
    println!(
        "wrote {} paired, {} unpaired videos, {} unpaired texts; unseen classes {:?} to {}",
        corpus.paired.len(),
        corpus.unpaired_videos.len(),
        corpus.unpaired_texts.len(),
        corpus.unseen,
        out.display()
    );
    Ok(())
}

fn train_cmd(config: &ExperimentConfig, data: Option<&Path>, out: &Path) -> Result<()> {
    let corpus = load_or_generate(config, data)?;
    corpus_dims(&corpus)?;
    let (view, _) = split_classes(&corpus, &corpus.unseen)?;
    let start = Instant::now();
    let outcome = train(&view, &config.model, &config.train)?;
    fs::write(out.join("checkpoint.bin"), save_checkpoint(&outcome.model))?;
    fs::write(out.join("discriminators.bin"), save_params(&outcome.discriminators.params))?;
    fs::write(out.join("train_log.ndjson"), outcome.log.to_ndjson()?)?;
    fs::write(out.join("timing.ndjson"), outcome.log.timing_ndjson())?;
    if let Some(last) = outcome.log.records.last() {
        println!(
            "trained {} epochs in {:.1}s; final paired loss {:.4}",
            outcome.log.records.len(),
            start.elapsed().as_secs_f64(),
            last.paired.total
        );
    }
    Ok(())
}

fn eval_cmd(
    config: &ExperimentConfig,
    protocol: Protocol,
    checkpoint: Option<&Path>,
    data: Option<&Path>,
    sweep: Option<&str>,
    out: &Path,
) -> Result<()> {
    let corpus = load_or_generate(config, data)?;
    let dims = corpus_dims(&corpus)?;
    if let Some(spec) = sweep {
        if checkpoint.is_some() {
            return Err(Error::Config("--sweep trains fresh models and cannot take --checkpoint".into()));
        }
        let sweep = Sweep::parse(spec)?;
        let mut rows = Vec::new();
        for (value, cfg) in sweep.values.iter().zip(sweep.expand(config)?) {
            // A data-side key changes the corpus, so regenerate per value.
            let corpus = if data.is_none() && cfg.data != config.data { load_or_generate(&cfg, None)? } else { corpus.clone() };
            let report = EvalReport::new(protocol, &cfg, None, run_trials(protocol, &corpus, &cfg)?);
            print_summary(&report, &format!("{}={value}", sweep.key));
            rows.push((value.clone(), report));
        }
        fs::write(out.join("sweep.csv"), sweep_csv(&sweep.key, &rows))?;
        let reports: Vec<&EvalReport> = rows.iter().map(|(_, r)| r).collect();
        fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&reports)? + "\n")?;
        return Ok(());
    }
    let trials = match checkpoint {
        Some(path) => {
            let model = load_checkpoint::<f64>(&fs::read(path)?, &config.model, dims)?;
            vec![evaluate_checkpoint(protocol, &model, &corpus, config)?]
        }
        None => run_trials(protocol, &corpus, config)?,
    };
    let report = EvalReport::new(protocol, config, checkpoint.map(|p| p.display().to_string()), trials);
    print_summary(&report, protocol.name());
    fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    if config.eval.write_csv {
        fs::write(out.join("trials.csv"), report.to_csv())?;
    }
    Ok(())
}

fn print_summary(report: &EvalReport, label: &str) {
    let fmt = |name: &str, s: &Option<xmodal::experiment::Summary>| match s {
        Some(s) if !name.is_empty() => format!(" {name}={:.4}±{:.4}", s.mean, s.std),
        _ => String::new(),
    };
    println!(
        "{label}:{}{}{} trials={} divergences={}",
        fmt(&report.metric_names[0], &report.primary),
        fmt(&report.metric_names[1], &report.secondary),
        fmt(&report.metric_names[2], &report.baseline),
        report.trials.len(),
        report.divergences
    );
}

/// Returns whether every check passed.
fn verify_cmd(common: &Common, instances: usize, fault: Option<String>) -> Result<bool> {
    let seed = common.seed.unwrap_or(0);
    let start = Instant::now();
    let report = run_verify(&VerifyOptions { seed, instances, fault })?;
    let text = format!("{report} in {:.1}s", start.elapsed().as_secs_f64());
    println!("{text}");
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("verify.txt"), text + "\n")?;
        fs::write(dir.join("seed.txt"), format!("{seed}\n"))?;
    }
    Ok(report.passed())
}

fn run(cli: Cli) -> Result<bool> {
    if let Command::Verify { instances, inject_fault } = cli.command {
        return verify_cmd(&cli.common, instances, inject_fault);
    }
    let config = resolve_config(&cli.common)?;
    let out = out_dir(&cli.common, &config)?;
    prepare_out(&out, &config)?;
    match &cli.command {
        Command::GenData => gen_data(&config, &out)?,
        Command::Train { data } => train_cmd(&config, data.as_deref(), &out)?,
        Command::Eval { protocol, checkpoint, data, sweep } => {
            eval_cmd(&config, (*protocol).into(), checkpoint.as_deref(), data.as_deref(), sweep.as_deref(), &out)?
        }
        Command::Verify { .. } => unreachable!(),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
