//! `lexhold`: command-line front end of the hold-out evaluation harness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lexhold::config::{ConfigError, PipelineConfig, ReferenceSet};
use lexhold::layout::{EvalName, Layout};
use lexhold::pipeline::{self, PipelineError, ScoreRequest, StageOutcome};
use lexhold::report::fmt3;
use lexhold::results::{Condition, ProbeResult};
use lexhold::runner::Runner;

#[derive(Parser, Debug)]
#[command(name = "lexhold", version, about = "Lexical hold-out evaluation of metaphor detection models")]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "lexhold.toml")]
    config: PathBuf,
    /// Overrides the configured work directory.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dataset statistics of the input corpora and any split files.
    Stats,
    /// Build the held-out and exposed evaluation sets and the filtered train set.
    Split(SplitArgs),
    /// Score prediction files against the evaluation gold labels.
    Score(ScoreArgs),
    /// Spearman correlation of per-lemma F1 with lemma frequency.
    Correlate(CorrelateArgs),
    /// Representation probes.
    Probe {
        #[command(subcommand)]
        probe: ProbeCommand,
    },
    /// Seed sweep of the standard model through the configured runner.
    Sweep,
    /// Render the report tables from whatever results exist.
    Report,
    /// Run every stage, skipping those whose inputs are unchanged.
    RunAll {
        /// Skip the runner stages (sweep, fine-tune, predict, embed).
        #[arg(long)]
        no_model: bool,
    },
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_heldout: Option<usize>,
    #[arg(long)]
    n_exposed: Option<usize>,
    #[arg(long)]
    min_freq_heldout: Option<u64>,
    #[arg(long)]
    min_freq_exposed: Option<u64>,
    #[arg(long)]
    mask_token: Option<String>,
    #[arg(long)]
    pos_filter: Option<String>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Condition of the prediction file; with --set and --predictions.
    /// Without them every prediction file under the work directory is scored.
    #[arg(long, requires_all = ["set", "predictions"])]
    condition: Option<ConditionArg>,
    #[arg(long, requires = "condition")]
    set: Option<SetArg>,
    #[arg(long, requires = "condition")]
    predictions: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CorrelateArgs {
    /// A per-lemma F1 table; defaults to the full-model tables of the work directory.
    #[arg(long)]
    per_lemma: Option<PathBuf>,
    /// Frequency table; defaults to the configured one.
    #[arg(long)]
    freq: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ProbeArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long, value_enum)]
    reference: Option<ReferenceArg>,
    /// Evaluation sets to probe (default: both).
    #[arg(long = "eval", value_enum)]
    sets: Vec<SetArg>,
    /// Conditions for geometry probes (default: full and context_only).
    #[arg(long = "condition", value_enum)]
    conditions: Vec<ConditionArg>,
}

#[derive(Subcommand, Debug)]
enum ProbeCommand {
    /// k-nearest-neighbour label purity of contextual representations.
    Purity(ProbeArgs),
    /// k-NN classification F1 of contextual representations.
    Knn(ProbeArgs),
    /// Logistic probe on context-free target representations.
    Wordonly(ProbeArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
#[value(rename_all = "snake_case")]
enum ConditionArg {
    Full,
    ContextOnly,
    WordOnly,
}

impl From<ConditionArg> for Condition {
    fn from(c: ConditionArg) -> Self {
        match c {
            ConditionArg::Full => Condition::Full,
            ConditionArg::ContextOnly => Condition::ContextOnly,
            ConditionArg::WordOnly => Condition::WordOnly,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
#[value(rename_all = "snake_case")]
enum SetArg {
    Exposed,
    HeldOut,
}

impl From<SetArg> for EvalName {
    fn from(s: SetArg) -> Self {
        match s {
            SetArg::Exposed => EvalName::Exposed,
            SetArg::HeldOut => EvalName::HeldOut,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ReferenceArg {
    Filtered,
    Standard,
}

impl From<ReferenceArg> for ReferenceSet {
    fn from(r: ReferenceArg) -> Self {
        match r {
            ReferenceArg::Filtered => ReferenceSet::Filtered,
            ReferenceArg::Standard => ReferenceSet::Standard,
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(dir) = &cli.work_dir {
        cfg.paths.work_dir = dir.clone();
    }
    Ok(cfg)
}

fn print_results(results: &[ProbeResult]) {
    println!("condition\tset\tprecision\trecall\tf1");
    for r in results {
        if let Some(prf) = r.metrics.prf {
            println!("{}\t{}\t{}\t{}\t{}", r.condition, r.set, fmt3(prf.precision), fmt3(prf.recall), fmt3(prf.f1));
        }
    }
}

fn apply_probe_args(cfg: &mut PipelineConfig, args: &ProbeArgs) -> Result<(), PipelineError> {
    if let Some(k) = args.k {
        cfg.probe.k = k;
    }
    if let Some(l2) = args.l2 {
        cfg.probe.l2 = l2;
    }
    if let Some(r) = args.reference {
        cfg.probe.reference = r.into();
    }
    cfg.validate()?;
    Ok(())
}

fn sets_of(args: &ProbeArgs) -> Vec<EvalName> {
    if args.sets.is_empty() {
        EvalName::ALL.to_vec()
    } else {
        args.sets.iter().map(|&s| s.into()).collect()
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match &cli.command {
        Command::Stats => {
            let rows = pipeline::cmd_stats(&load_config(&cli)?)?;
            println!("dataset\tsamples\tmetaphorical\tmet_pct\tlemmas");
            for r in rows {
                let pct = if r.n_samples == 0 { 0.0 } else { 100.0 * r.n_metaphorical as f64 / r.n_samples as f64 };
                println!("{}\t{}\t{}\t{pct:.1}\t{}", r.dataset, r.n_samples, r.n_metaphorical, r.n_lemmas);
            }
        }
        Command::Split(a) => {
            let mut cfg = load_config(&cli)?;
            let s = &mut cfg.split;
            if let Some(v) = a.seed {
                s.seed = v;
            }
            if let Some(v) = a.n_heldout {
                s.n_heldout = v;
            }
            if let Some(v) = a.n_exposed {
                s.n_exposed = v;
            }
            if let Some(v) = a.min_freq_heldout {
                s.min_freq_heldout = v;
            }
            if let Some(v) = a.min_freq_exposed {
                s.min_freq_exposed = v;
            }
            if let Some(v) = &a.mask_token {
                s.mask_token = v.clone();
            }
            if let Some(v) = &a.pos_filter {
                s.pos_filter = Some(v.clone());
            }
            let m = pipeline::cmd_split(&cfg)?;
            let layout = Layout::new(&cfg.paths.work_dir);
            println!(
                "held-out eval: {} instances, exposed eval: {} instances, written to {}",
                m.held_out_eval_ids.len(),
                m.exposed_eval_ids.len(),
                layout.split_dir().display()
            );
        }
        Command::Score(a) => {
            let layout = Layout::new(&load_config(&cli)?.paths.work_dir);
            let requests = match (a.condition, a.set, &a.predictions) {
                (Some(c), Some(s), Some(p)) => {
                    vec![ScoreRequest { condition: c.into(), set: s.into(), predictions: p.clone() }]
                }
                _ => pipeline::discover_predictions(&layout),
            };
            if requests.is_empty() {
                return Err(PipelineError::Validation(format!(
                    "no prediction files under {}",
                    layout.predictions_dir().display()
                )));
            }
            print_results(&pipeline::cmd_score(&layout, &requests)?);
        }
        Command::Correlate(a) => {
            let cfg = load_config(&cli)?;
            let freq = a.freq.clone().or(cfg.paths.freq.clone()).ok_or_else(|| {
                PipelineError::Validation("no frequency table: pass --freq or set paths.freq".into())
            })?;
            println!("source\trho\tp_value\tn\tmissing");
            if let Some(per_lemma) = &a.per_lemma {
                let r = pipeline::correlate_files(per_lemma, &freq)?;
                println!("{}\t{:.3}\t{:.3}\t{}\t{}", per_lemma.display(), r.rho, r.p_value, r.n, r.missing_lemmas.len());
            } else {
                for res in pipeline::cmd_correlate(&Layout::new(&cfg.paths.work_dir), &freq)? {
                    let r = res.metrics.correlation.expect("correlation result");
                    println!("{}\t{:.3}\t{:.3}\t{}\t{}", res.set, r.rho, r.p_value, r.n, r.missing_lemmas.len());
                }
            }
        }
        Command::Probe { probe } => {
            let mut cfg = load_config(&cli)?;
            match probe {
                ProbeCommand::Purity(a) | ProbeCommand::Knn(a) => {
                    apply_probe_args(&mut cfg, a)?;
                    let conditions: Vec<Condition> = if a.conditions.is_empty() {
                        vec![Condition::Full, Condition::ContextOnly]
                    } else {
                        a.conditions.iter().map(|&c| c.into()).collect()
                    };
                    let results = pipeline::cmd_geometry(&cfg, &sets_of(a), &conditions)?;
                    let purity = matches!(probe, ProbeCommand::Purity(_));
                    println!("condition\tset\t{}", if purity { "purity" } else { "knn_f1" });
                    for r in results {
                        let v = if purity { r.metrics.purity } else { r.metrics.knn_f1 };
                        println!("{}\t{}\t{}", r.condition, r.set, fmt3(v.expect("geometry value")));
                    }
                }
                ProbeCommand::Wordonly(a) => {
                    apply_probe_args(&mut cfg, a)?;
                    let sets = sets_of(a);
                    let written = pipeline::cmd_word_probe(&cfg, &sets)?;
                    let layout = Layout::new(&cfg.paths.work_dir);
                    let requests: Vec<ScoreRequest> = sets
                        .iter()
                        .zip(written)
                        .map(|(&set, predictions)| ScoreRequest { condition: Condition::WordOnly, set, predictions })
                        .collect();
                    print_results(&pipeline::cmd_score(&layout, &requests)?);
                }
            }
        }
        Command::Sweep => {
            let cfg = load_config(&cli)?;
            let layout = Layout::new(&cfg.paths.work_dir);
            let runner = Runner::new(&cfg.runner, layout.logs_dir())?;
            let seed = pipeline::cmd_sweep(&cfg, &runner)?;
            println!("selected seed {seed}");
        }
        Command::Report => {
            let root = report_root(&cli)?;
            let layout = Layout::new(root);
            let report = pipeline::cmd_report(&layout)?;
            print!("{}", report.render_text());
            eprintln!("report written to {}", layout.report_dir().display());
        }
        Command::RunAll { no_model } => {
            let cfg = load_config(&cli)?;
            let summary = pipeline::cmd_run_all(&cfg, *no_model)?;
            for (name, outcome) in &summary.stages {
                let word = match outcome {
                    StageOutcome::Ran => "ran",
                    StageOutcome::UpToDate => "up to date",
                    StageOutcome::Skipped => "skipped",
                };
                eprintln!("{name:<16} {word}");
            }
            print!("{}", summary.report.render_text());
        }
    }
    Ok(())
}

/// `report` needs only a work directory, so a missing config file is fine
/// when `--work-dir` is given.
fn report_root(cli: &Cli) -> Result<PathBuf, PipelineError> {
    if let Some(dir) = &cli.work_dir {
        return Ok(dir.clone());
    }
    match PipelineConfig::load(&cli.config) {
        Ok(cfg) => Ok(cfg.paths.work_dir),
        Err(ConfigError::Read { .. }) if !Path::new(&cli.config).exists() => {
            Err(PipelineError::Validation(format!("{} not found; pass --work-dir", cli.config.display())))
        }
        Err(e) => Err(e.into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
