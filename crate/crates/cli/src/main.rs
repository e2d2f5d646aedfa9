use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use era_core::align::{Checkpoint, Variant};
use era_core::error::Error;
use era_core::gradcheck::{self, GradCheckOptions};
use era_core::pipeline::{self, RunConfig};
use era_core::scenario::Dataset;

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Evidential reliability alignment lab.
#[derive(Parser, Debug)]
#[command(name = "era", version, about)]
struct Cli {
    /// Run directory holding config, datasets, checkpoints and reports.
    #[arg(long, global = true, env = "ERA_RUN_DIR", default_value = "runs/default")]
    run_dir: PathBuf,

    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic world and write train/eval datasets.
    Gen(GenArgs),
    /// Train one variant and write a checkpoint plus step log.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write metrics and analysis tables.
    Eval(EvalArgs),
    /// Train and evaluate every variant over shared seeds.
    Ablate(AblateArgs),
    /// Run the log-probability and self-consistency baselines.
    Analyze(EvalArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Regenerate a run from its config and byte-compare the artifacts.
    Verify,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_eval: Option<usize>,
    #[arg(long)]
    idk_ratio: Option<f64>,
    #[arg(long)]
    p_known: Option<f64>,
    #[arg(long)]
    p_gold: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    coupling: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value = "full")]
    variant: String,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training set (defaults to the run directory's train.jsonl).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint directory (defaults to <run-dir>/ckpt-<variant>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint directory (defaults to <run-dir>/ckpt-full).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluation set (defaults to the run directory's eval.jsonl).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory (defaults to the checkpoint directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate even when the checkpoint came from a different world.
    #[arg(long)]
    allow_mismatch: bool,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Comma-separated subset of variants.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    configs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Perturb one loss's analytic gradient to exercise the failure path.
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult<T> = Result<T, Failure>;

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Usage(_) => EXIT_USAGE,
        Failure::Core(Error::Numerical { .. }) | Failure::Core(Error::NonFinite(_)) => EXIT_NUMERICAL,
        Failure::Core(Error::UnknownVariant(_)) => EXIT_USAGE,
        Failure::Core(_) => EXIT_VALIDATION,
    }
}

fn base_config(cli: &Cli) -> CliResult<RunConfig> {
    let saved = cli.run_dir.join(pipeline::CONFIG_FILE);
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None if saved.exists() => RunConfig::load(&saved)?,
        None => RunConfig::default(),
    };
    Ok(cfg)
}

fn resolve(cfg: RunConfig) -> CliResult<RunConfig> {
    cfg.resolved().map_err(|e| match e {
        Error::Config(m) => Failure::Usage(m),
        other => Failure::Core(other),
    })
}

fn parse_variant(s: &str) -> CliResult<Variant> {
    s.parse::<Variant>().map_err(|e| Failure::Usage(e.to_string()))
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    Ok(Dataset::read_jsonl(path)?)
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> CliResult<()> {
    let mut cfg = base_config(cli)?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.n_train {
        cfg.n_train = v;
    }
    if let Some(v) = a.n_eval {
        cfg.n_eval = v;
    }
    if let Some(v) = a.idk_ratio {
        cfg.world.idk_ratio = v;
    }
    if let Some(v) = a.p_known {
        cfg.world.p_known = v;
    }
    if let Some(v) = a.p_gold {
        cfg.world.p_gold = v;
    }
    if let Some(v) = a.noise_sigma {
        cfg.world.noise_sigma = v;
    }
    if let Some(v) = a.coupling {
        cfg.world.coupling = v;
    }
    let cfg = resolve(cfg)?;
    std::fs::create_dir_all(&cli.run_dir).map_err(Error::from)?;
    cfg.save(&cli.run_dir.join(pipeline::CONFIG_FILE))?;
    let (train, eval) = pipeline::generate(&cfg)?;
    pipeline::write_datasets(&cli.run_dir, &train, &eval)?;
    println!(
        "wrote {} train / {} eval samples to {} (quadrants KG,KN,UG,UN train {:?})",
        train.samples.len(),
        eval.samples.len(),
        cli.run_dir.display(),
        train.histogram()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> CliResult<()> {
    let variant = parse_variant(&a.variant)?;
    let mut cfg = base_config(cli)?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let mut cfg = resolve(cfg)?;
    cfg.train.variant = variant;
    if let Some(v) = a.gamma {
        cfg.train.dpo.gamma = v;
    }
    if let Some(v) = a.tau {
        cfg.train.dpo.tau = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    cfg.train.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let data_path = a.data.clone().unwrap_or_else(|| cli.run_dir.join(pipeline::TRAIN_FILE));
    let data = load_dataset(&data_path)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| cli.run_dir.join(format!("ckpt-{variant}")));
    match pipeline::train_on(&data, &cfg.train) {
        Ok((ck, outcome)) => {
            pipeline::save_training(&out, &ck, &outcome.log)?;
            let w = outcome.log.iter().map(|r| r.loss.w_ds);
            let (lo, hi) = w.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            let smooth = era_core::align::train::smoothed_endpoints(&outcome.log, 100);
            println!(
                "trained {variant} for {} steps; w_ds range [{lo:.4}, {hi:.4}]; smoothed loss {}; checkpoint {}",
                outcome.log.len(),
                smooth.map_or("n/a".to_string(), |(s, e)| format!("{s:.4} -> {e:.4}")),
                out.display()
            );
            Ok(())
        }
        Err(failure) => {
            if let Some(ck) = &failure.last_good {
                let dir = out.join("last-good");
                ck.save(&dir)?;
                eprintln!("saved last finite parameters to {}", dir.display());
            }
            Err(Failure::Core(failure.error))
        }
    }
}

fn checkpoint_dir(cli: &Cli, a: &EvalArgs) -> PathBuf {
    a.checkpoint.clone().unwrap_or_else(|| cli.run_dir.join("ckpt-full"))
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> CliResult<()> {
    let cfg = base_config(cli)?;
    let dir = checkpoint_dir(cli, a);
    let ck = Checkpoint::load(&dir)?;
    let data = load_dataset(&a.data.clone().unwrap_or_else(|| cli.run_dir.join(pipeline::EVAL_FILE)))?;
    let (records, m) = pipeline::evaluate_checkpoint(&ck, &data, a.allow_mismatch)?;
    let out = a.out.clone().unwrap_or(dir);
    pipeline::write_eval_outputs(&out, &records, &m, cfg.eval.ece_bins)?;
    println!(
        "{}: answer F1 {:.4}, abstain F1 {:.4}, overall F1 {:.4}, ECE {:?}, JSD gap {:+.4}",
        ck.manifest.variant,
        m.f1,
        m.abstain_f1,
        m.overall_f1,
        m.ece_per_quadrant.map(|v| (v * 1e4).round() / 1e4),
        m.jsd_gap
    );
    Ok(())
}

fn cmd_analyze(cli: &Cli, a: &EvalArgs) -> CliResult<()> {
    let cfg = resolve(base_config(cli)?)?;
    let dir = checkpoint_dir(cli, a);
    let ck = Checkpoint::load(&dir)?;
    let data = load_dataset(&a.data.clone().unwrap_or_else(|| cli.run_dir.join(pipeline::EVAL_FILE)))?;
    if !a.allow_mismatch {
        pipeline::check_compatible(&ck, &data)?;
    }
    let results = pipeline::analyze(&ck, &data, &cfg.eval, cfg.seed)?;
    let out = a.out.clone().unwrap_or(dir);
    std::fs::create_dir_all(&out).map_err(Error::from)?;
    pipeline::write_baselines(&out.join(pipeline::BASELINES_FILE), &results)?;
    for r in &results {
        println!(
            "{:<24} abstain {:.3}  answer F1 {:.4}  abstain F1 {:.4}  overall F1 {:.4}",
            r.name, r.abstain_rate, r.metrics.f1, r.metrics.abstain_f1, r.metrics.overall_f1
        );
    }
    Ok(())
}

fn cmd_ablate(cli: &Cli, a: &AblateArgs) -> CliResult<()> {
    let mut cfg = resolve(base_config(cli)?)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let variants = match &a.variants {
        Some(names) => names.iter().map(|n| parse_variant(n)).collect::<CliResult<Vec<_>>>()?,
        None => Variant::ALL.to_vec(),
    };
    let train = load_dataset(&cli.run_dir.join(pipeline::TRAIN_FILE))?;
    let eval = load_dataset(&cli.run_dir.join(pipeline::EVAL_FILE))?;
    let n_seeds = a.seeds.unwrap_or(cfg.eval.ablation_seeds);
    let table = pipeline::ablate(&train, &eval, &cfg.train, cfg.seed, n_seeds, &variants, |v, s, m| {
        eprintln!(
            "{v:<12} seed {s}: overall F1 {:.4} abstain F1 {:.4} ECE {:?} JSD gap {:+.4}",
            m.overall_f1,
            m.abstain_f1,
            m.ece_per_quadrant.map(|x| (x * 1e4).round() / 1e4),
            m.jsd_gap
        );
    })?;
    let out = cli.run_dir.join("ablation");
    std::fs::create_dir_all(&out).map_err(Error::from)?;
    std::fs::write(
        out.join("ablation.json"),
        serde_json::to_string_pretty(&table).map_err(Error::from)? + "\n",
    )
    .map_err(Error::from)?;
    let md = table.render();
    std::fs::write(out.join("ablation.md"), &md).map_err(Error::from)?;
    print!("{md}");
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<bool> {
    let report = gradcheck::run(&GradCheckOptions {
        configs: a.configs,
        seed: a.seed,
        corrupt: a.corrupt.clone(),
    })?;
    for c in &report.checks {
        println!(
            "{} {:<8} worst rel. err {:.3e} over {} configs (tol {:.0e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.loss,
            c.worst_rel_err,
            c.configs,
            report.tolerance
        );
    }
    Ok(report.passed())
}

fn cmd_verify(cli: &Cli) -> CliResult<bool> {
    let cfg = resolve(RunConfig::load(&cli.run_dir.join(pipeline::CONFIG_FILE))?)?;
    let scratch = cli.run_dir.join(".verify");
    if scratch.exists() {
        std::fs::remove_dir_all(&scratch).map_err(Error::from)?;
    }
    let (train, eval) = pipeline::generate(&cfg)?;
    pipeline::write_datasets(&scratch, &train, &eval)?;
    let mut ok = true;
    let report = |name: &str, diffs: &[String]| {
        if diffs.is_empty() {
            println!("MATCH {name}");
        } else {
            println!("DIFF  {name}: {}", diffs.join(", "));
        }
        diffs.is_empty()
    };
    let diffs = pipeline::compare_files(&cli.run_dir, &scratch, &[pipeline::TRAIN_FILE, pipeline::EVAL_FILE])?;
    ok &= report("datasets", &diffs);

    let ck_dir = cli.run_dir.join("ckpt-full");
    if ck_dir.join(era_core::align::checkpoint::MANIFEST_FILE).exists() {
        let saved = Checkpoint::load(&ck_dir)?;
        let (ck, outcome) = pipeline::train_on(&train, &saved.manifest.train).map_err(|f| f.error)?;
        let re = scratch.join("ckpt-full");
        pipeline::save_training(&re, &ck, &outcome.log)?;
        let (records, m) = pipeline::evaluate_checkpoint(&ck, &eval, false)?;
        pipeline::write_eval_outputs(&re, &records, &m, cfg.eval.ece_bins)?;
        let mut names = vec![
            era_core::align::checkpoint::MANIFEST_FILE,
            era_core::align::checkpoint::PARAMS_FILE,
            pipeline::STEP_LOG_FILE,
        ];
        if ck_dir.join(pipeline::METRICS_FILE).exists() {
            names.extend([
                pipeline::METRICS_FILE,
                pipeline::ECE_FILE,
                pipeline::SIMPLEX_FILE,
                pipeline::JSD_FILE,
            ]);
        }
        ok &= report(
            "checkpoint and metrics",
            &pipeline::compare_files(&ck_dir, &re, &names)?,
        );
    }
    std::fs::remove_dir_all(&scratch).map_err(Error::from)?;
    Ok(ok)
}

fn run(cli: &Cli) -> CliResult<bool> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli, a).map(|_| true),
        Command::Train(a) => cmd_train(cli, a).map(|_| true),
        Command::Eval(a) => cmd_eval(cli, a).map(|_| true),
        Command::Ablate(a) => cmd_ablate(cli, a).map(|_| true),
        Command::Analyze(a) => cmd_analyze(cli, a).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Verify => match cmd_verify(cli)? {
            true => Ok(true),
            false => Err(Failure::Core(Error::InvalidInput(
                "regenerated artifacts differ".into(),
            ))),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_NUMERICAL),
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Core(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&f))
        }
    }
}
