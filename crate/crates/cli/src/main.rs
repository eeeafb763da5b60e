use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use causal_mediation::adjustment::{fit_propensity, ipw_weights, overlap_diagnostics};
use causal_mediation::dag::{backdoor_paths, is_valid_adjustment, CausalDag};
use causal_mediation::data::{
    describe, filter_analysis_rows, write_csv, Cell, ColumnKind, DescribeOptions, MissingPolicy, WriteOptions,
};
use causal_mediation::estimators::EstimatorRegistry;
use causal_mediation::imputation::{impute, mi_effects_from, stack_imputations, ImputationConfig};
use causal_mediation::mediation::{estimate_triple, BootstrapConfig, EffectTriple, Variant};
use causal_mediation::pipeline::{
    analysis_subset, load_dataset, run_pipeline, AnalysisConfig, PipelineError, RunOptions, Stage,
};
use causal_mediation::scm::{oracle_estimands, sample, ScmSpec};
use causal_mediation::sensitivity::{evalue, OrConversion};
use clap::{Args, Parser, Subcommand};

/// Causal mediation analysis: total, direct and indirect effects of a binary
/// exposure through post-exposure mediators.
#[derive(Parser)]
#[command(name = "cmed", version)]
struct Cli {
    /// Seed for every random step; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for bootstrap and imputation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Analysis config (TOML); relative paths inside resolve against its directory.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Read and recode the input, then print per-column cell counts.
    Ingest {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Write the recoded dataset here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Descriptive table of the complete-case sample by exposure group, as CSV.
    Describe {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        weighted: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Total, direct and indirect effects for one variant.
    Mediate {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, default_value = "primary", value_parser = parse_variant)]
        variant: Variant,
        /// Bootstrap replicates for the indirect-effect interval.
        #[arg(long)]
        reps: Option<usize>,
        /// Pool over multiply imputed datasets instead of complete cases.
        #[arg(long)]
        mi: bool,
        /// Print the full-precision result as JSON.
        #[arg(long)]
        json: bool,
    },
    /// E-value for an odds ratio and, optionally, its confidence interval.
    Evalue {
        #[arg(long = "or")]
        odds_ratio: f64,
        /// Interval as `lo,hi`.
        #[arg(long, value_parser = parse_pair)]
        ci: Option<(f64, f64)>,
        /// Treat the outcome as rare (RR taken equal to OR).
        #[arg(long)]
        rare: bool,
        #[arg(long)]
        json: bool,
    },
    /// Propensity scores, IPW weights and balance diagnostics.
    Psweight {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Include the mediators in the score model.
        #[arg(long)]
        with_mediator: bool,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Write `row,score,weight` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multiple imputation; writes the stacked completed datasets.
    Impute {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Backdoor check of an adjustment set against a DAG.
    DagCheck {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        exposure: String,
        #[arg(long)]
        outcome: String,
        /// Comma-separated adjustment set.
        #[arg(long, value_delimiter = ',')]
        adjust: Vec<String>,
    },
    /// Sample a dataset from an SCM spec.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also print the enumerated oracle estimands as JSON.
        #[arg(long)]
        oracle: bool,
    },
    /// Full pipeline: report.json plus forest, Table 1 and overlap CSVs.
    Report {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Output directory; overrides the config file.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| {
        let names: Vec<&str> = Variant::ALL.iter().map(Variant::as_str).collect();
        format!("unknown variant `{s}`; expected one of {}", names.join(", "))
    })
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `lo,hi`")?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    Ok((num(a)?, num(b)?))
}

/// Failure with its exit code: 1 for analysis outcomes, 2 for usage and config.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn analysis(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = if e.stage == Stage::Config { 2 } else { 1 };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn analysis_err(e: impl std::fmt::Display) -> Failure {
    Failure::analysis(e.to_string())
}

struct Loaded {
    cfg: AnalysisConfig,
    opts: RunOptions,
}

fn load(arg: &ConfigArg, cli: &Cli) -> Result<Loaded, Failure> {
    let mut cfg = AnalysisConfig::from_file(&arg.config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let base_dir = arg.config.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded {
        cfg,
        opts: RunOptions {
            threads: cli.threads,
            base_dir,
        },
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::analysis(format!("cannot write {}: {e}", path.display())))
}

fn print_triple(t: &EffectTriple) {
    for e in t.effects() {
        println!(
            "{:<14} {:<9} {:.2} ({:.2}, {:.2})",
            e.variant.as_str(),
            e.kind.as_str(),
            e.or,
            e.ci_or.0,
            e.ci_or.1
        );
    }
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    match threads {
        None => Ok(f()),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map(|p| p.install(f))
            .map_err(|e| Failure::usage(format!("cannot start {t} threads: {e}"))),
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Ingest { cfg, out } => {
            let l = load(cfg, cli)?;
            let (ds, _) = load_dataset(&l.cfg, &l.opts)?;
            println!("rows: {}", ds.n_rows());
            println!("column,kind,observed,missing,nonresponse");
            for c in ds.columns() {
                let missing = c.cells.iter().filter(|x| **x == Cell::Missing).count();
                let nonresp = c.count_unobserved() - missing;
                let kind = match &c.kind {
                    ColumnKind::Continuous => "continuous",
                    ColumnKind::Binary { .. } => "binary",
                    ColumnKind::Categorical { .. } => "categorical",
                };
                println!("{},{kind},{},{missing},{nonresp}", c.name, c.len() - c.count_unobserved());
            }
            if let Some(out) = out {
                let f = fs::File::create(out).map_err(analysis_err)?;
                write_csv(&ds, f, &WriteOptions::default()).map_err(analysis_err)?;
            }
            Ok(())
        }
        Command::Describe { cfg, weighted, out } => {
            let l = load(cfg, cli)?;
            let (ds, _) = load_dataset(&l.cfg, &l.opts)?;
            let roles = &l.cfg.roles;
            let (cc, _) = filter_analysis_rows(&ds, roles, MissingPolicy::CompleteCase).map_err(analysis_err)?;
            let vars: Vec<&str> = if l.cfg.describe.variables.is_empty() {
                roles.analysis_columns().into_iter().filter(|c| *c != roles.exposure).collect()
            } else {
                l.cfg.describe.variables.iter().map(String::as_str).collect()
            };
            let opts = DescribeOptions {
                weighted: *weighted || l.cfg.describe.weighted,
            };
            let table = describe(&cc, &roles.exposure, &vars, opts).map_err(analysis_err)?;
            let text = table.to_csv().map_err(analysis_err)?;
            match out {
                Some(p) => write_file(p, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Mediate {
            cfg,
            variant,
            reps,
            mi,
            json,
        } => {
            let l = load(cfg, cli)?;
            let (ds, _) = load_dataset(&l.cfg, &l.opts)?;
            let roles = &l.cfg.roles;
            let boot = BootstrapConfig {
                seed: l.cfg.seed,
                reps: reps.unwrap_or(l.cfg.bootstrap.reps),
                ..l.cfg.bootstrap
            };
            if boot.reps < 100 {
                return Err(Failure::usage(format!("--reps must be at least 100, got {}", boot.reps)));
            }
            let registry = EstimatorRegistry::with_defaults(&l.cfg.estimator);
            let est = registry.get(variant.as_str()).map_err(analysis_err)?;
            let level = l.cfg.estimator.level;
            let triple = in_pool(cli.threads, || -> Result<EffectTriple, Failure> {
                if *mi {
                    let (kept, _) = filter_analysis_rows(&ds, roles, MissingPolicy::KeepMissingForImputation)
                        .map_err(analysis_err)?;
                    let kept = analysis_subset(&kept, roles).map_err(analysis_err)?;
                    let icfg = ImputationConfig {
                        seed: l.cfg.seed,
                        ..l.cfg.imputation.clone()
                    };
                    let completed = impute(&kept, &icfg).map_err(analysis_err)?;
                    Ok(mi_effects_from(&completed, roles, est.as_ref(), level, &boot, None)
                        .map_err(analysis_err)?
                        .triple)
                } else {
                    let (cc, _) = filter_analysis_rows(&ds, roles, MissingPolicy::CompleteCase).map_err(analysis_err)?;
                    let cc = analysis_subset(&cc, roles).map_err(analysis_err)?;
                    estimate_triple(est.as_ref(), &cc, roles, level, &boot).map_err(analysis_err)
                }
            })??;
            if *json {
                println!("{}", serde_json::to_string_pretty(&triple).expect("triple serializes"));
            } else {
                print_triple(&triple);
            }
            Ok(())
        }
        Command::Evalue {
            odds_ratio,
            ci,
            rare,
            json,
        } => {
            let conversion = if *rare { OrConversion::Identity } else { OrConversion::SqrtOr };
            let r = evalue(*odds_ratio, *ci, conversion).map_err(|e| Failure::usage(e.to_string()))?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&r).expect("result serializes"));
                return Ok(());
            }
            println!("E-value (point): {:.2}", r.evalue_point);
            if let Some(e) = r.evalue_ci {
                println!("E-value (CI):    {e:.2}");
            }
            Ok(())
        }
        Command::Psweight {
            cfg,
            with_mediator,
            bins,
            out,
        } => {
            let l = load(cfg, cli)?;
            let (ds, _) = load_dataset(&l.cfg, &l.opts)?;
            let roles = &l.cfg.roles;
            let (cc, _) = filter_analysis_rows(&ds, roles, MissingPolicy::CompleteCase).map_err(analysis_err)?;
            let cc = analysis_subset(&cc, roles).map_err(analysis_err)?;
            let ps = fit_propensity(&cc, roles, *with_mediator, &l.cfg.estimator.fit).map_err(analysis_err)?;
            let ipw = &l.cfg.estimator.ipw;
            let w = ipw_weights(&ps, ipw.stabilized, ipw.trim).map_err(analysis_err)?;
            let diag = overlap_diagnostics(&ps, *bins, Some(&w)).map_err(analysis_err)?;
            println!(
                "rows: {}  mean weight: {:.4}  trimmed: {}",
                w.weights.len(),
                w.weights.iter().sum::<f64>() / w.weights.len() as f64,
                w.n_trimmed
            );
            print!("{}", diag.smd_csv());
            if let Some(p) = out {
                let mut text = String::from("row,score,weight\n");
                for (i, (s, wt)) in ps.scores.iter().zip(&w.weights).enumerate() {
                    text.push_str(&format!("{},{s},{wt}\n", i + 1));
                }
                write_file(p, &text)?;
            }
            Ok(())
        }
        Command::Impute { cfg, m, out } => {
            let l = load(cfg, cli)?;
            let (ds, _) = load_dataset(&l.cfg, &l.opts)?;
            let roles = &l.cfg.roles;
            let (kept, counts) =
                filter_analysis_rows(&ds, roles, MissingPolicy::KeepMissingForImputation).map_err(analysis_err)?;
            let kept = analysis_subset(&kept, roles).map_err(analysis_err)?;
            let icfg = ImputationConfig {
                seed: l.cfg.seed,
                m: m.unwrap_or(l.cfg.imputation.m),
                ..l.cfg.imputation.clone()
            };
            let completed = in_pool(cli.threads, || impute(&kept, &icfg))?.map_err(analysis_err)?;
            let stacked = stack_imputations(&completed).map_err(analysis_err)?;
            let f = fs::File::create(out).map_err(analysis_err)?;
            write_csv(&stacked, f, &WriteOptions::default()).map_err(analysis_err)?;
            println!(
                "imputed {} datasets of {} rows ({} non-response rows dropped)",
                completed.len(),
                kept.n_rows(),
                counts.nonresponse
            );
            Ok(())
        }
        Command::DagCheck {
            graph,
            exposure,
            outcome,
            adjust,
        } => {
            let text = fs::read_to_string(graph)
                .map_err(|e| Failure::usage(format!("cannot read {}: {e}", graph.display())))?;
            let dag = CausalDag::parse(&text).map_err(|e| Failure::usage(e.to_string()))?;
            let set: Vec<&str> = adjust.iter().map(String::as_str).filter(|s| !s.is_empty()).collect();
            let report = is_valid_adjustment(&dag, exposure, outcome, &set).map_err(|e| Failure::usage(e.to_string()))?;
            let paths = backdoor_paths(&dag, exposure, outcome, &set).map_err(|e| Failure::usage(e.to_string()))?;
            for p in &paths {
                let status = if p.open {
                    "open".to_string()
                } else {
                    let mut why: Vec<String> = p.blocked_by.iter().map(|b| format!("blocked by {b}")).collect();
                    why.extend(p.closed_colliders.iter().map(|c| format!("closed collider {c}")));
                    why.join(", ")
                };
                println!("{}  [{status}]", p.path.join(" - "));
            }
            println!("{}", report.explanation);
            println!("valid: {}", report.valid);
            if report.valid {
                Ok(())
            } else {
                Err(Failure::analysis("adjustment set does not satisfy the backdoor criterion"))
            }
        }
        Command::Simulate { spec, n, out, oracle } => {
            if *n == 0 {
                return Err(Failure::usage("--n must be at least 1"));
            }
            let text = fs::read_to_string(spec)
                .map_err(|e| Failure::usage(format!("cannot read {}: {e}", spec.display())))?;
            let scm = ScmSpec::from_toml(&text)
                .and_then(|s| s.compile())
                .map_err(|e| Failure::usage(e.to_string()))?;
            let ds = sample(&scm, *n, cli.seed.unwrap_or(0)).map_err(analysis_err)?;
            let f = fs::File::create(out).map_err(analysis_err)?;
            write_csv(&ds, f, &WriteOptions::default()).map_err(analysis_err)?;
            if *oracle {
                let o = oracle_estimands(&scm).map_err(analysis_err)?;
                println!("{}", serde_json::to_string_pretty(&o).expect("estimands serialize"));
            }
            Ok(())
        }
        Command::Report { cfg, out_dir } => {
            let mut l = load(cfg, cli)?;
            if let Some(d) = out_dir {
                l.cfg.output_dir = std::env::current_dir().map_err(analysis_err)?.join(d);
            }
            let bundle = run_pipeline(&l.cfg, &l.opts)?;
            let dir = l.opts.resolve(&l.cfg.output_dir);
            for (name, _) in &bundle.files {
                println!("{}", dir.join(name).display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
