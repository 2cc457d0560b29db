use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use qudit_qnn::data::{convert_uci, PoisonMode};
use qudit_qnn::experiment::{
    comparison_table, load_dataset, run_evaluate, run_poison_study, run_train, ExperimentConfig,
    MetricsReport, ModelKind, PoisonSettings, ReportKind,
};
use qudit_qnn::generators::{build_generators, check_algebra};
use qudit_qnn::qnn::{ImportanceMode, Readout};

#[derive(Parser)]
#[command(name = "qudit-qnn", version, about = "Single-qudit QNN experiments on credit-default data")]
struct Cli {
    /// Directory receiving all outputs.
    #[arg(long, global = true, env = "QUDIT_QNN_OUT", default_value = "runs")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and save models, histories, and rankings.
    Train(RunArgs),
    /// Score models on the test split and compare rankings with logistic regression.
    Evaluate(RunArgs),
    /// Replace random features with noise and measure F1 and ranking quality.
    PoisonStudy(RunArgs),
    /// Combine metrics reports into a comparison table (text, CSV, JSON).
    Report {
        /// Report JSON files written by `evaluate` or `poison-study`.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Rewrite the UCI export (two header rows) as canonical CSV.
    ConvertDataset { input: PathBuf, output: PathBuf },
    /// Verify trace, normalization, and orthogonality of the su(d) generators.
    CheckAlgebra {
        /// Dimensions to check.
        #[arg(long, value_delimiter = ',', default_values_t = vec![2, 3, 4, 5, 6, 7, 8])]
        dims: Vec<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Qnn,
    Logreg,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReadoutArg {
    Parity,
    FirstTwo,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImportanceArg {
    Sum,
    MeanAbs,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoisonModeArg {
    TrainAndTest,
    TestOnly,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset CSV, overriding the config.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    #[arg(long, value_enum)]
    readout: Option<ReadoutArg>,
    #[arg(long, value_enum)]
    importance_mode: Option<ImportanceArg>,
    #[arg(long, value_enum)]
    poison_mode: Option<PoisonModeArg>,
    /// Number of poisoned features.
    #[arg(long)]
    poison_count: Option<usize>,
    /// Evaluate saved models from this directory instead of training.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Logistic-regression models used as the ranking reference.
    #[arg(long)]
    reference: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self, out: &Path) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        if let Some(m) = self.model {
            cfg.model = match m {
                ModelArg::Qnn => ModelKind::Qnn,
                ModelArg::Logreg => ModelKind::Logreg,
                ModelArg::Mlp => ModelKind::Mlp,
            };
        }
        if let Some(seeds) = &self.seed_list {
            cfg.seeds = seeds.clone();
        }
        if let Some(r) = self.readout {
            cfg.qnn.readout = match r {
                ReadoutArg::Parity => Readout::Parity,
                ReadoutArg::FirstTwo => Readout::FirstTwo,
            };
        }
        if let Some(i) = self.importance_mode {
            cfg.qnn.importance_mode = match i {
                ImportanceArg::Sum => ImportanceMode::Sum,
                ImportanceArg::MeanAbs => ImportanceMode::MeanAbs,
            };
        }
        if self.poison_mode.is_some() || self.poison_count.is_some() {
            let p = cfg.poison.get_or_insert_with(PoisonSettings::default);
            if let Some(m) = self.poison_mode {
                p.mode = match m {
                    PoisonModeArg::TrainAndTest => PoisonMode::TrainAndTest,
                    PoisonModeArg::TestOnly => PoisonMode::TestOnly,
                };
            }
            if let Some(c) = self.poison_count {
                p.count = c;
            }
        }
        if let Some(m) = &self.models {
            cfg.models_dir = Some(m.clone());
        }
        if let Some(r) = &self.reference {
            cfg.reference_dir = Some(r.clone());
        }
        cfg.output_dir = Some(out.to_path_buf());
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report_failures(failed: &[u64]) -> ExitCode {
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failed seeds: {failed:?}");
        ExitCode::from(2)
    }
}

fn write_report(report: &MetricsReport, out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let prefix = match report.kind {
        ReportKind::Evaluate => "evaluate",
        ReportKind::PoisonStudy => "poison",
    };
    let path = out.join(format!("{prefix}_{}.json", report.model));
    report.save(&path)?;
    Ok(path)
}

fn print_seeds(report: &MetricsReport) {
    for s in &report.seeds {
        match (&s.error, s.macro_f1) {
            (Some(e), _) => println!("seed {}: FAILED {e}", s.seed),
            (None, Some(f1)) => {
                let mut line = format!("seed {}: macro-F1 {f1:.4}", s.seed);
                if let Some(d) = s.edit_distance_to_logreg {
                    line.push_str(&format!(", edit distance to LR {d}"));
                }
                if let Some(w) = s.wis {
                    line.push_str(&format!(", WIS {w:.3}"));
                }
                if let Some(r) = s.random_wis {
                    line.push_str(&format!(", random WIS {r:.3}"));
                }
                println!("{line}");
            }
            (None, None) => println!("seed {}: no metrics", s.seed),
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let out = cli.out;
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve(&out)?;
            let raw = load_dataset(&cfg)?;
            let summary = run_train(&cfg, &raw, &out)?;
            for s in &summary.seeds {
                match &s.error {
                    Some(e) => println!("seed {}: FAILED {e}", s.seed),
                    None => println!(
                        "seed {}: {} parameters, validation macro-F1 {:.4}",
                        s.seed,
                        s.parameter_count.unwrap_or(0),
                        s.validation_macro_f1.unwrap_or(f64::NAN)
                    ),
                }
            }
            println!("wrote {}", out.display());
            Ok(report_failures(&summary.failed_seeds()))
        }
        Command::Evaluate(args) => {
            let cfg = args.resolve(&out)?;
            let raw = load_dataset(&cfg)?;
            let report = run_evaluate(&cfg, &raw)?;
            print_seeds(&report);
            println!("{}", comparison_table(std::slice::from_ref(&report))?.render_text());
            println!("wrote {}", write_report(&report, &out)?.display());
            Ok(report_failures(&report.failed_seeds()))
        }
        Command::PoisonStudy(args) => {
            let mut cfg = args.resolve(&out)?;
            if cfg.poison.is_none() {
                cfg.poison = Some(PoisonSettings::default());
            }
            let raw = load_dataset(&cfg)?;
            let report = run_poison_study(&cfg, &raw)?;
            print_seeds(&report);
            println!("{}", comparison_table(std::slice::from_ref(&report))?.render_text());
            println!("wrote {}", write_report(&report, &out)?.display());
            Ok(report_failures(&report.failed_seeds()))
        }
        Command::Report { reports } => {
            let loaded = reports
                .iter()
                .map(|p| MetricsReport::load(p).with_context(|| format!("reading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let table = comparison_table(&loaded)?;
            let text = table.render_text();
            print!("{text}");
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            fs::write(out.join("table.txt"), &text)?;
            fs::write(out.join("table.json"), table.to_json() + "\n")?;
            table.write_csv(fs::File::create(out.join("table.csv"))?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::ConvertDataset { input, output } => {
            let reader = fs::File::open(&input)
                .with_context(|| format!("opening {}", input.display()))?;
            let writer = fs::File::create(&output)
                .with_context(|| format!("creating {}", output.display()))?;
            let ds = convert_uci(std::io::BufReader::new(reader), std::io::BufWriter::new(writer))?;
            let fp = ds.fingerprint();
            println!(
                "wrote {}: {} rows, {} positives, feature-name sha256 {}",
                output.display(),
                fp.rows,
                fp.positives,
                fp.feature_names_sha256
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::CheckAlgebra { dims } => {
            let mut ok = true;
            for d in dims {
                let gs = build_generators(d)?;
                let r = check_algebra(&gs);
                let pass = r.passes(1e-12);
                ok &= pass;
                println!(
                    "d={d}: {} generators ({} sym, {} antisym, {} diag), max|Tr G|={:.1e}, \
                     max|Tr GiGj|={:.1e}, max|Tr Gi²-2|={:.1e} {}",
                    r.count,
                    r.symmetric,
                    r.antisymmetric,
                    r.diagonal,
                    r.max_abs_trace,
                    r.max_offdiag_inner_product,
                    r.max_norm_deviation,
                    if pass { "ok" } else { "FAIL" }
                );
            }
            if !ok {
                bail!("generator algebra check failed");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
