//! End-to-end analysis driven by one TOML config: ingest, recode, filter,
//! complete-case and multiple-imputation effects for each estimator variant,
//! E-values, a descriptive table and propensity overlap diagnostics.
//!
//! Relative paths in the config resolve against [`RunOptions::base_dir`].
//! The top-level `seed` drives both imputation chains and bootstrap
//! replicates; the seeds inside `[imputation]` and `[bootstrap]` are ignored.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adjustment::{fit_propensity, ipw_weights, overlap_diagnostics, OverlapDiagnostics};
use crate::data::{
    describe, filter_analysis_rows, read_csv, recode, DescribeOptions, DescriptiveTable, ExclusionCounts,
    IngestOptions, MissingPolicy, RecodeRuleSet, Schema, VariableRoles,
};
use crate::data::{Dataset, DataError};
use crate::estimators::{EstimatorOptions, EstimatorRegistry};
use crate::imputation::{impute, mi_effects_from, ImputationConfig, PooledEstimate};
use crate::mediation::{estimate_triple, BootstrapConfig, CiMethod, EffectEstimate, EffectKind, EffectTriple, Variant};
use crate::sensitivity::{evalue, EvalueResult, OrConversion};
use crate::Error;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescribeConfig {
    /// Columns summarized by exposure group; empty means every analysis
    /// column other than the exposure.
    pub variables: Vec<String>,
    pub weighted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub input: PathBuf,
    pub schema: Schema,
    #[serde(default)]
    pub ingest: IngestOptions,
    /// Apply the built-in NHIS wording rules to the columns present, before
    /// the rules in `recode`.
    #[serde(default)]
    pub nhis_recode: bool,
    #[serde(default)]
    pub recode: RecodeRuleSet,
    pub roles: VariableRoles,
    #[serde(default = "all_variants")]
    pub variants: Vec<Variant>,
    /// `keep_missing_for_imputation` runs both the complete-case and the
    /// imputation analyses; `complete_case` runs only the former.
    #[serde(default = "keep_missing")]
    pub missing_policy: MissingPolicy,
    #[serde(default)]
    pub imputation: ImputationConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub estimator: EstimatorOptions,
    #[serde(default)]
    pub describe: DescribeConfig,
    #[serde(default = "default_bins")]
    pub overlap_bins: usize,
    #[serde(default)]
    pub evalue_conversion: OrConversion,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn all_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

fn keep_missing() -> MissingPolicy {
    MissingPolicy::KeepMissingForImputation
}

fn default_bins() -> usize {
    20
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Recode,
    Filter,
    Describe,
    Impute,
    Estimate,
    Sensitivity,
    Diagnostics,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().unwrap())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

fn at<E: Into<Error>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        source: e.into(),
    }
}

fn config_error(msg: impl Into<String>) -> PipelineError {
    PipelineError {
        stage: Stage::Config,
        source: Error::Config(msg.into()),
    }
}

impl AnalysisConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: AnalysisConfig = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(at(Stage::Config))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.variants.is_empty() {
            return Err(config_error("at least one variant is required"));
        }
        for (i, v) in self.variants.iter().enumerate() {
            if self.variants[..i].contains(v) {
                return Err(config_error(format!("variant `{v}` is listed twice")));
            }
        }
        for name in self.roles.analysis_columns() {
            if !self.schema.columns.contains_key(name) {
                return Err(config_error(format!("role column `{name}` is not declared in the schema")));
            }
        }
        for name in self.recode.rules.keys().chain(&self.describe.variables) {
            if !self.schema.columns.contains_key(name) {
                return Err(config_error(format!("column `{name}` is not declared in the schema")));
            }
        }
        let level = self.estimator.level;
        if !(level > 0.0 && level < 1.0) {
            return Err(config_error(format!("estimator.level must lie in (0, 1), got {level}")));
        }
        if self.bootstrap.level != level {
            return Err(config_error("bootstrap.level must equal estimator.level"));
        }
        if self.overlap_bins < 2 {
            return Err(config_error("overlap_bins must be at least 2"));
        }
        self.imputation.validate().map_err(at(Stage::Config))?;
        Ok(())
    }

    /// SHA-256 of the config with the output directory dropped and the input
    /// reduced to its file name, so the hash does not depend on where the
    /// analysis runs.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.input = PathBuf::from(file_name(&self.input));
        hex_sha256(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
}

fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Worker threads for bootstrap and imputation; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Directory against which relative config paths resolve.
    pub base_dir: PathBuf,
}

impl RunOptions {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Raw bytes of the input and the dataset after ingestion and recoding.
pub fn load_dataset(cfg: &AnalysisConfig, opts: &RunOptions) -> Result<(Dataset, Vec<u8>), PipelineError> {
    let path = opts.resolve(&cfg.input);
    let bytes = fs::read(&path).map_err(|e| PipelineError {
        stage: Stage::Ingest,
        source: DataError::Unreadable {
            path: file_name(&path),
            reason: e.to_string(),
        }
        .into(),
    })?;
    let raw = read_csv(bytes.as_slice(), &cfg.schema, &cfg.ingest).map_err(at(Stage::Ingest))?;
    let rules = if cfg.nhis_recode {
        RecodeRuleSet::nhis().restricted_to(&raw).merged(&cfg.recode)
    } else {
        cfg.recode.clone()
    };
    let ds = recode(&raw, &rules).map_err(at(Stage::Recode))?;
    Ok((ds, bytes))
}

/// The role columns (and the weight column) of `ds`, in role order.
pub fn analysis_subset(ds: &Dataset, roles: &VariableRoles) -> Result<Dataset, DataError> {
    let mut names: Vec<&str> = roles.analysis_columns();
    if let Some(w) = ds.weight_column() {
        if !names.contains(&w) {
            names.push(w);
        }
    }
    let columns = names.iter().map(|n| ds.column(n).cloned()).collect::<Result<Vec<_>, _>>()?;
    Dataset::new(columns, ds.weight_column().map(str::to_string))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    CompleteCase,
    MultipleImputation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub analysis: Analysis,
    pub variant: Variant,
    pub effect: EffectKind,
    pub log_or: f64,
    pub or: f64,
    pub se: Option<f64>,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub ci_method: CiMethod,
    pub n_used: usize,
    pub evalue: EvalueResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rubin: Option<PooledEstimate>,
    pub data_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusions {
    pub complete_case: ExclusionCounts,
    pub imputation: Option<ExclusionCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub analysis: Analysis,
    pub variant: Variant,
    pub reps: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationSummary {
    pub m: usize,
    pub donors: usize,
    pub max_cycles: usize,
    /// Missing cells filled in each completed dataset, by column.
    pub imputed_cells: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpwSummary {
    pub mean_weight: f64,
    pub max_weight: f64,
    pub n_trimmed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Score model without, then with, the mediators.
    pub overlap: Vec<OverlapDiagnostics>,
    pub ipw: IpwSummary,
    pub bootstrap: Vec<BootstrapSummary>,
    pub imputation: Option<ImputationSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub input_hash: String,
    pub input_file: String,
    pub engine_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub report_version: u32,
    pub descriptives: DescriptiveTable,
    pub exclusions: Exclusions,
    pub effects: Vec<EffectRow>,
    pub diagnostics: Diagnostics,
    pub provenance: Provenance,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn effects_for(&self, analysis: Analysis) -> Vec<&EffectRow> {
        self.effects.iter().filter(|e| e.analysis == analysis).collect()
    }
}

/// Forest-plot data: `variant,effect,or,ci_lo,ci_hi`.
pub fn forest_csv<'a>(rows: impl IntoIterator<Item = &'a EffectRow>) -> String {
    let mut out = String::from("variant,effect,or,ci_lo,ci_hi\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.variant, r.effect.as_str(), r.or, r.ci_lo, r.ci_hi);
    }
    out
}

/// Output files keyed by file name, in write order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub report: Report,
    pub files: Vec<(String, String)>,
}

fn effect_row(
    analysis: Analysis,
    e: &EffectEstimate,
    rubin: Option<&PooledEstimate>,
    conversion: OrConversion,
) -> Result<EffectRow, PipelineError> {
    let ev = evalue(e.or, Some(e.ci_or), conversion).map_err(at(Stage::Sensitivity))?;
    Ok(EffectRow {
        analysis,
        variant: e.variant,
        effect: e.kind,
        log_or: e.log_or,
        or: e.or,
        se: e.se,
        ci_lo: e.ci_or.0,
        ci_hi: e.ci_or.1,
        ci_method: e.ci_method,
        n_used: e.n_used,
        evalue: ev,
        rubin: rubin.cloned(),
        data_fingerprint: e.data_fingerprint.clone(),
    })
}

fn triple_rows(
    analysis: Analysis,
    t: &EffectTriple,
    pooled: Option<[&PooledEstimate; 3]>,
    conversion: OrConversion,
) -> Result<Vec<EffectRow>, PipelineError> {
    t.effects()
        .iter()
        .enumerate()
        .map(|(k, e)| effect_row(analysis, e, pooled.map(|p| p[k]), conversion))
        .collect()
}

fn overlap_files(diags: &[OverlapDiagnostics]) -> (String, String) {
    let mut hist = String::from("model,group,bin_lo,bin_hi,proportion\n");
    let mut smd = String::from("model,covariate,smd_before,smd_after\n");
    for d in diags {
        let model = if d.includes_mediator { "with_mediator" } else { "without_mediator" };
        for g in &d.groups {
            for (b, p) in g.proportions.iter().enumerate() {
                let _ = writeln!(hist, "{model},{},{},{},{p}", g.group, d.edges[b], d.edges[b + 1]);
            }
        }
        for r in &d.smd {
            let after = r.after.map_or(String::new(), |a| a.to_string());
            let _ = writeln!(smd, "{model},\"{}\",{},{after}", r.covariate.replace('"', "\"\""), r.before);
        }
    }
    (hist, smd)
}

/// Runs every stage in memory and returns the report with its CSV files.
pub fn build_report(cfg: &AnalysisConfig, opts: &RunOptions) -> Result<ReportBundle, PipelineError> {
    cfg.validate()?;
    match opts.threads {
        None => build(cfg, opts),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| config_error(format!("cannot start {t} threads: {e}")))?;
            pool.install(|| build(cfg, opts))
        }
    }
}

fn build(cfg: &AnalysisConfig, opts: &RunOptions) -> Result<ReportBundle, PipelineError> {
    let (ds, bytes) = load_dataset(cfg, opts)?;
    let roles = &cfg.roles;
    let (cc, cc_counts) = filter_analysis_rows(&ds, roles, MissingPolicy::CompleteCase).map_err(at(Stage::Filter))?;
    let cc = analysis_subset(&cc, roles).map_err(at(Stage::Filter))?;

    let describe_vars: Vec<&str> = if cfg.describe.variables.is_empty() {
        roles.analysis_columns().into_iter().filter(|c| *c != roles.exposure).collect()
    } else {
        cfg.describe.variables.iter().map(String::as_str).collect()
    };
    let descriptives = describe(
        &cc,
        &roles.exposure,
        &describe_vars,
        DescribeOptions {
            weighted: cfg.describe.weighted,
        },
    )
    .map_err(at(Stage::Describe))?;

    let boot = BootstrapConfig {
        seed: cfg.seed,
        ..cfg.bootstrap
    };
    let registry = EstimatorRegistry::with_defaults(&cfg.estimator);
    let level = cfg.estimator.level;
    let mut effects = Vec::new();
    let mut boot_summary = Vec::new();
    for v in &cfg.variants {
        let est = registry.get(v.as_str()).map_err(at(Stage::Estimate))?;
        let t = estimate_triple(est.as_ref(), &cc, roles, level, &boot).map_err(at(Stage::Estimate))?;
        effects.extend(triple_rows(Analysis::CompleteCase, &t, None, cfg.evalue_conversion)?);
        boot_summary.push(BootstrapSummary {
            analysis: Analysis::CompleteCase,
            variant: *v,
            reps: t.bootstrap_reps,
            failures: t.bootstrap_failures,
        });
    }

    let mut mi_counts = None;
    let mut imputation = None;
    if cfg.missing_policy == MissingPolicy::KeepMissingForImputation {
        let (kept, counts) =
            filter_analysis_rows(&ds, roles, MissingPolicy::KeepMissingForImputation).map_err(at(Stage::Filter))?;
        let kept = analysis_subset(&kept, roles).map_err(at(Stage::Filter))?;
        let icfg = ImputationConfig {
            seed: cfg.seed,
            ..cfg.imputation.clone()
        };
        let completed = impute(&kept, &icfg).map_err(at(Stage::Impute))?;
        for v in &cfg.variants {
            let est = registry.get(v.as_str()).map_err(at(Stage::Estimate))?;
            let mi = mi_effects_from(&completed, roles, est.as_ref(), level, &boot, None).map_err(at(Stage::Estimate))?;
            let pooled = [&mi.total, &mi.direct, &mi.indirect];
            effects.extend(triple_rows(
                Analysis::MultipleImputation,
                &mi.triple,
                Some(pooled),
                cfg.evalue_conversion,
            )?);
            boot_summary.push(BootstrapSummary {
                analysis: Analysis::MultipleImputation,
                variant: *v,
                reps: mi.triple.bootstrap_reps * completed.len(),
                failures: mi.triple.bootstrap_failures,
            });
        }
        imputation = Some(ImputationSummary {
            m: icfg.m,
            donors: icfg.donors,
            max_cycles: icfg.max_cycles,
            imputed_cells: kept
                .columns()
                .filter(|c| c.count_unobserved() > 0)
                .map(|c| (c.name.clone(), c.count_unobserved()))
                .collect(),
        });
        mi_counts = Some(counts);
    }

    let mut overlap = Vec::new();
    let mut ipw_summary = None;
    for with_mediator in [false, true] {
        if with_mediator && roles.mediators.is_empty() {
            continue;
        }
        let ps = fit_propensity(&cc, roles, with_mediator, &cfg.estimator.fit).map_err(at(Stage::Diagnostics))?;
        let w = ipw_weights(&ps, cfg.estimator.ipw.stabilized, cfg.estimator.ipw.trim).map_err(at(Stage::Diagnostics))?;
        if !with_mediator {
            ipw_summary = Some(IpwSummary {
                mean_weight: w.weights.iter().sum::<f64>() / w.weights.len() as f64,
                max_weight: w.weights.iter().copied().fold(0.0, f64::max),
                n_trimmed: w.n_trimmed,
            });
        }
        overlap.push(overlap_diagnostics(&ps, cfg.overlap_bins, Some(&w)).map_err(at(Stage::Diagnostics))?);
    }

    let report = Report {
        report_version: REPORT_VERSION,
        descriptives,
        exclusions: Exclusions {
            complete_case: cc_counts,
            imputation: mi_counts,
        },
        effects,
        diagnostics: Diagnostics {
            overlap,
            ipw: ipw_summary.expect("score model without mediators is always fitted"),
            bootstrap: boot_summary,
            imputation,
        },
        provenance: Provenance {
            seed: cfg.seed,
            config_hash: cfg.hash(),
            input_hash: hex_sha256(&bytes),
            input_file: file_name(&cfg.input),
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    };

    let mut files = vec![("report.json".to_string(), report.to_json())];
    files.push((
        "forest_complete_case.csv".into(),
        forest_csv(report.effects_for(Analysis::CompleteCase)),
    ));
    if report.exclusions.imputation.is_some() {
        files.push((
            "forest_multiple_imputation.csv".into(),
            forest_csv(report.effects_for(Analysis::MultipleImputation)),
        ));
    }
    files.push(("table1.csv".into(), report.descriptives.to_csv().map_err(at(Stage::Describe))?));
    let (hist, smd) = overlap_files(&report.diagnostics.overlap);
    files.push(("overlap.csv".into(), hist));
    files.push(("smd.csv".into(), smd));
    Ok(ReportBundle { report, files })
}

/// Writes every file of `bundle` into `dir`. On failure, files written so
/// far (and `dir`, if this call created it) are removed.
pub fn write_bundle(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let created_dir = !dir.exists();
    let mut written = Vec::new();
    let result = (|| {
        fs::create_dir_all(dir)?;
        for (name, contents) in &bundle.files {
            let path = dir.join(name);
            fs::write(&path, contents)?;
            written.push(path);
        }
        Ok::<_, std::io::Error>(())
    })();
    if let Err(e) = result {
        for p in &written {
            let _ = fs::remove_file(p);
        }
        if created_dir {
            let _ = fs::remove_dir(dir);
        }
        return Err(at(Stage::Write)(e));
    }
    Ok(written)
}

/// Builds the report and writes it to the configured output directory.
/// Nothing is written unless every analysis stage succeeds.
pub fn run_pipeline(cfg: &AnalysisConfig, opts: &RunOptions) -> Result<ReportBundle, PipelineError> {
    let bundle = build_report(cfg, opts)?;
    write_bundle(&bundle, &opts.resolve(&cfg.output_dir))?;
    Ok(bundle)
}
