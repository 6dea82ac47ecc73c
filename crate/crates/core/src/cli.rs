//! Command-line pipeline: analyze, diagnose, temporal, meta, simulate.
//!
//! Every command reads explicit paths, writes one JSON report (plus
//! tab-separated plot data) into `--out`, and uses exit codes scriptable in
//! automation: 0 = success / nothing flagged, 1 = a detector flagged,
//! 2 and above = operational error.

use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bias_diagnosis::{diagnose, DiagnosisReport, SsrVerdict, TrackingPredicate};
use crate::datamodel::{
    ingest, read_events, write_events, DayRange, ExperimentConfig, IngestedLog,
};
use crate::metacorr::{
    build_history, comovement, estimate_conditionals, fit_delta_relation, ComovementResult,
    CoSigConditionals, DeltaRelationFit, ExperimentArchive, MetaError,
};
use crate::report::{fmt_f64, write_tsv, Report, RunManifest};
use crate::simulator::{generate, generate_corpus, CorpusSpec, ScenarioSpec};
use crate::statscore::{delta_percent, em_two_group, DeltaEstimate, EmFit};
use crate::temporal::{
    analyze_trigger_day, build_impact_series, detect_novelty, ImpactSeries, NoveltyFinding,
    NoveltyParams, TriggerDayFinding, TriggerDayParams, Weekday,
};
use crate::trigger_engine::{classify_coverage, CoverageClass};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FLAGGED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("config not found: {0}")]
    ConfigNotFound(PathBuf),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] crate::datamodel::DataError),
    #[error(transparent)]
    Engine(#[from] crate::trigger_engine::EngineError),
    #[error(transparent)]
    Stats(#[from] crate::statscore::StatsError),
    #[error(transparent)]
    Diag(#[from] crate::bias_diagnosis::DiagError),
    #[error(transparent)]
    Temporal(#[from] crate::temporal::TemporalError),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Sim(#[from] crate::simulator::SimError),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Invalid(_) => "invalid_argument",
            CliError::ConfigNotFound(_) => "config_not_found",
            CliError::Io { .. } => "io",
            CliError::Data(_) => "data",
            CliError::Engine(_) => "engine",
            CliError::Stats(_) => "stats",
            CliError::Diag(_) => "diagnosis",
            CliError::Temporal(_) => "temporal",
            CliError::Meta(_) => "meta",
            CliError::Sim(_) => "simulator",
        }
    }

    /// Machine-readable error object for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": { "kind": self.kind(), "message": self.to_string() }
        })
        .to_string()
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "expdiag",
    version,
    about = "Diagnostics engine for online controlled experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute triggered cross-day and latest single-day lift estimates.
    Analyze(AnalyzeArgs),
    /// Run the Sample Size Ratio Test and the root-cause check battery.
    Diagnose(DiagnoseArgs),
    /// Detect trigger-day and novelty effects for one metric.
    Temporal(TemporalArgs),
    /// Meta-analyze a corpus of historical experiments for one metric pair.
    Meta(MetaArgs),
    /// Generate a synthetic experiment (or corpus) with ground truth.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Newline-delimited event log.
    #[arg(long)]
    pub events: PathBuf,
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Cross-day analysis range as start:end (defaults to the counting
    /// window declared in the config).
    #[arg(long)]
    pub range: Option<String>,
    /// Comma-separated metric subset (defaults to every metric in the log).
    #[arg(long)]
    pub metrics: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    /// Event logs of experiments sharing the hash id (repeatable; pair each
    /// with --sibling-config).
    #[arg(long = "sibling-events")]
    pub sibling_events: Vec<PathBuf>,
    #[arg(long = "sibling-config")]
    pub sibling_configs: Vec<PathBuf>,
    #[arg(long)]
    pub range: Option<String>,
    /// SSR significance level.
    #[arg(long, default_value_t = 0.001)]
    pub alpha: f64,
    /// Metric reproducing the trigger condition independently of exposure
    /// events (e.g. page views of the trigger page).
    #[arg(long)]
    pub tracking_metric: Option<String>,
    #[arg(long)]
    pub tracking_source: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TemporalArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub metric: String,
    /// Treatment arm to analyze (defaults to the second declared variant).
    #[arg(long)]
    pub variant: Option<String>,
    /// Analysis horizon in days (defaults to the experiment duration).
    #[arg(long)]
    pub k: Option<u32>,
    #[arg(long, default_value_t = 0.8)]
    pub w_threshold: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Significance level of the novelty extremes test.
    #[arg(long, default_value_t = 0.005)]
    pub alpha_extremes: f64,
    /// Weekday the experiment started on (enables the day-of-week caveat).
    #[arg(long)]
    pub start_weekday: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetaArgs {
    /// Directory holding archives.json (and optionally meta.json).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Metric pair as X,Y: X is the indicator, Y the target.
    #[arg(long)]
    pub pair: String,
    /// User-level correlation between the metrics (defaults to the corpus
    /// metadata).
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// FDR level for selecting experiments that moved the indicator.
    #[arg(long, default_value_t = 0.05)]
    pub q: f64,
    #[arg(long, default_value_t = 7)]
    pub min_days: u32,
    /// Simulation seed (falls back to EXPDIAG_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario or corpus specification (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// A simulate spec file is either a single scenario or a corpus.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SimulateSpec {
    Scenario(ScenarioSpec),
    Corpus(CorpusSpec),
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

fn open_config(path: &Path) -> CliResult<ExperimentConfig> {
    let file = std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::ConfigNotFound(path.to_path_buf())
        } else {
            CliError::Io {
                context: format!("opening config {}", path.display()),
                source: e,
            }
        }
    })?;
    Ok(ExperimentConfig::from_reader(BufReader::new(file))?)
}

fn load_log(events: &Path, config: &Path) -> CliResult<IngestedLog> {
    let config = open_config(config)?;
    let file = std::fs::File::open(events).map_err(|e| CliError::Io {
        context: format!("opening events {}", events.display()),
        source: e,
    })?;
    let events = read_events(BufReader::new(file))?;
    Ok(ingest(events, &config)?)
}

fn parse_range(text: &str) -> CliResult<DayRange> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| CliError::Invalid(format!("range must be start:end, got '{text}'")))?;
    let start: u32 = a
        .parse()
        .map_err(|_| CliError::Invalid(format!("bad range start '{a}'")))?;
    let end: u32 = b
        .parse()
        .map_err(|_| CliError::Invalid(format!("bad range end '{b}'")))?;
    Ok(DayRange::new(start, end)?)
}

fn default_range(config: &ExperimentConfig) -> DayRange {
    DayRange::new(config.count_from_day, config.duration_days)
        .expect("validated config window")
}

fn ensure_out_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Io {
        context: format!("creating output directory {}", path.display()),
        source: e,
    })
}

fn write_report<T: Serialize>(
    out: &Path,
    manifest: RunManifest,
    payload: T,
) -> CliResult<PathBuf> {
    let path = out.join("report.json");
    Report::new(manifest, payload)
        .write_json(&path)
        .map_err(|e| CliError::Io {
            context: format!("writing {}", path.display()),
            source: e,
        })?;
    Ok(path)
}

fn io_ctx(context: &str) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io {
        context: context.to_string(),
        source: e,
    }
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricAnalysis {
    pub coverage: CoverageClass,
    pub cross_day: Option<DeltaEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_day_note: Option<String>,
    pub single_day: Option<DeltaEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single_day_note: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnalyzePayload {
    pub experiment_id: String,
    pub variant: String,
    pub cross_day_range: DayRange,
    pub single_day: u32,
    pub n_users: u64,
    pub metrics: BTreeMap<String, MetricAnalysis>,
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> CliResult<i32> {
    let log = load_log(&args.events, &args.config)?;
    let range = match &args.range {
        Some(text) => parse_range(text)?,
        None => default_range(&log.config),
    };
    let selected: Option<Vec<String>> = args
        .metrics
        .as_ref()
        .map(|m| m.split(',').map(|s| s.trim().to_string()).collect());
    let variant = log.config.variants[1].label.clone();

    let cross = crate::trigger_engine::build_summaries(
        &log,
        range,
        crate::trigger_engine::AnalysisMode::Triggered,
    )?;
    let latest = DayRange::single(range.end).expect("valid day");
    let single = crate::trigger_engine::build_summaries(
        &log,
        latest,
        crate::trigger_engine::AnalysisMode::SingleDay,
    )?;

    let mut metrics = BTreeMap::new();
    for metric in &log.metric_names {
        if selected
            .as_ref()
            .is_some_and(|list| !list.contains(metric))
        {
            continue;
        }
        let coverage = classify_coverage(&log, metric)?;
        let run = |set: &crate::trigger_engine::SummarySet| match set
            .arm_pair(&log, &variant, metric)
        {
            Some((t, c)) => match delta_percent(t, c) {
                Ok(est) => (Some(est), None),
                Err(e) => (None, Some(e.to_string())),
            },
            None => (None, Some("metric or variant absent".to_string())),
        };
        let (cross_day, cross_day_note) = run(&cross);
        let (single_day, single_day_note) = run(&single);
        metrics.insert(
            metric.clone(),
            MetricAnalysis {
                coverage,
                cross_day,
                cross_day_note,
                single_day,
                single_day_note,
            },
        );
    }

    ensure_out_dir(&args.out)?;
    let manifest = RunManifest::new("analyze")
        .with_input(&args.events)
        .map_err(io_ctx("digesting events"))?
        .with_input(&args.config)
        .map_err(io_ctx("digesting config"))?
        .with_parameter("range", range)
        .with_parameter("variant", &variant);
    let payload = AnalyzePayload {
        experiment_id: log.experiment_id().to_string(),
        variant,
        cross_day_range: range,
        single_day: range.end,
        n_users: log.n_users() as u64,
        metrics,
    };
    let path = write_report(&args.out, manifest, payload)?;
    println!("{}", path.display());
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

pub fn cmd_diagnose(args: &DiagnoseArgs) -> CliResult<i32> {
    if args.sibling_events.len() != args.sibling_configs.len() {
        return Err(CliError::Invalid(
            "--sibling-events and --sibling-config must be paired".into(),
        ));
    }
    let log = load_log(&args.events, &args.config)?;
    let range = match &args.range {
        Some(text) => parse_range(text)?,
        None => default_range(&log.config),
    };
    let siblings: Vec<IngestedLog> = args
        .sibling_events
        .iter()
        .zip(&args.sibling_configs)
        .map(|(e, c)| load_log(e, c))
        .collect::<CliResult<_>>()?;
    for sibling in &siblings {
        if sibling.config.hash_id != log.config.hash_id {
            return Err(CliError::Invalid(format!(
                "overlap analysis requires a shared hash id: '{}' vs '{}'",
                log.config.hash_id, sibling.config.hash_id
            )));
        }
    }
    let sibling_refs: Vec<&IngestedLog> = siblings.iter().collect();
    let tracking = args.tracking_metric.as_ref().map(|metric| TrackingPredicate {
        metric_id: metric.clone(),
        source_tag: args.tracking_source.clone(),
    });

    let report: DiagnosisReport =
        diagnose(&log, &sibling_refs, range, args.alpha, tracking.as_ref())?;

    ensure_out_dir(&args.out)?;
    let mut manifest = RunManifest::new("diagnose")
        .with_input(&args.events)
        .map_err(io_ctx("digesting events"))?
        .with_input(&args.config)
        .map_err(io_ctx("digesting config"))?
        .with_parameter("alpha", args.alpha)
        .with_parameter("range", range);
    for path in args.sibling_events.iter().chain(&args.sibling_configs) {
        manifest = manifest.with_input(path).map_err(io_ctx("digesting sibling"))?;
    }

    // Plot data: the per-day new/returned sample-ratio series.
    let labels = log.config.labels();
    let mut header = vec!["day".to_string()];
    for l in &labels {
        header.push(format!("n_new_{l}"));
    }
    for l in &labels {
        header.push(format!("n_returned_{l}"));
    }
    header.push("new_p".into());
    header.push("returned_p".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows = report.daily_new_returned.iter().map(|row| {
        let mut cells = vec![row.day.to_string()];
        cells.extend(row.n_new.iter().map(|c| c.to_string()));
        cells.extend(row.n_returned.iter().map(|c| c.to_string()));
        cells.push(row.new_p.map(fmt_f64).unwrap_or_else(|| "NA".into()));
        cells.push(row.returned_p.map(fmt_f64).unwrap_or_else(|| "NA".into()));
        cells
    });
    write_tsv(&args.out.join("newret_series.tsv"), &header_refs, rows)
        .map_err(io_ctx("writing newret_series.tsv"))?;

    let flagged = report.verdict == SsrVerdict::Mismatch;
    let path = write_report(&args.out, manifest, report)?;
    println!("{}", path.display());
    Ok(if flagged { EXIT_FLAGGED } else { EXIT_OK })
}

// ---------------------------------------------------------------------------
// temporal
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct TemporalPayload {
    pub experiment_id: String,
    pub metric_id: String,
    pub variant: String,
    pub k: u32,
    pub trigger_day: TriggerDayFinding,
    pub novelty: Option<NoveltyFinding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novelty_note: Option<String>,
    pub impact_series: ImpactSeries,
}

pub fn cmd_temporal(args: &TemporalArgs) -> CliResult<i32> {
    let log = load_log(&args.events, &args.config)?;
    let k = args.k.unwrap_or(log.config.duration_days);
    let variant = match &args.variant {
        Some(v) => v.clone(),
        None => log.config.variants[1].label.clone(),
    };
    if log.config.variant_index(&variant).is_none() {
        return Err(CliError::Invalid(format!("unknown variant '{variant}'")));
    }
    let start_weekday = args
        .start_weekday
        .as_deref()
        .map(|s| s.parse::<Weekday>().map_err(CliError::Invalid))
        .transpose()?;

    let trigger_day = analyze_trigger_day(
        &log,
        &args.metric,
        k,
        TriggerDayParams {
            w_threshold: args.w_threshold,
            alpha: args.alpha,
        },
    )?;
    let impact_series = build_impact_series(&log, &args.metric, &variant, k)?;

    let single_estimates: Option<Vec<DeltaEstimate>> = impact_series
        .single_day
        .iter()
        .map(|p| p.estimate)
        .collect();
    let (novelty, novelty_note) = match single_estimates {
        Some(series) if series.len() >= 7 => {
            let params = NoveltyParams {
                alpha_extremes: args.alpha_extremes,
                start_weekday,
                ..NoveltyParams::default()
            };
            match detect_novelty(&series, params) {
                Ok(finding) => (Some(finding), None),
                Err(e) => (None, Some(e.to_string())),
            }
        }
        Some(_) => (None, Some("fewer than 7 single-day estimates".into())),
        None => (
            None,
            Some("single-day series has undefined days; novelty detector skipped".into()),
        ),
    };

    ensure_out_dir(&args.out)?;
    let manifest = RunManifest::new("temporal")
        .with_input(&args.events)
        .map_err(io_ctx("digesting events"))?
        .with_input(&args.config)
        .map_err(io_ctx("digesting config"))?
        .with_parameter("metric", &args.metric)
        .with_parameter("variant", &variant)
        .with_parameter("k", k)
        .with_parameter("w_threshold", args.w_threshold)
        .with_parameter("alpha", args.alpha)
        .with_parameter("alpha_extremes", args.alpha_extremes);

    write_tsv(
        &args.out.join("wk_series.tsv"),
        &["day", "w"],
        trigger_day.w_series.iter().map(|(day, w)| {
            vec![
                day.to_string(),
                w.map(fmt_f64).unwrap_or_else(|| "NA".into()),
            ]
        }),
    )
    .map_err(io_ctx("writing wk_series.tsv"))?;

    write_tsv(
        &args.out.join("impact_series.tsv"),
        &[
            "day",
            "single_day_delta",
            "single_day_p",
            "cross_day_delta",
            "cross_day_p",
        ],
        impact_series.single_day.iter().zip(&impact_series.cross_day).map(
            |(s, c)| {
                let cell = |e: &Option<DeltaEstimate>, f: fn(&DeltaEstimate) -> f64| {
                    e.as_ref()
                        .map(|d| fmt_f64(f(d)))
                        .unwrap_or_else(|| "NA".into())
                };
                vec![
                    s.day.to_string(),
                    cell(&s.estimate, |d| d.delta_pct),
                    cell(&s.estimate, |d| d.p_value),
                    cell(&c.estimate, |d| d.delta_pct),
                    cell(&c.estimate, |d| d.p_value),
                ]
            },
        ),
    )
    .map_err(io_ctx("writing impact_series.tsv"))?;

    if let Some(n) = &novelty {
        write_tsv(
            &args.out.join("novelty_fit.tsv"),
            &["day", "observed", "fitted"],
            n.fitted.iter().map(|(day, fitted)| {
                let observed = impact_series
                    .single_day
                    .get(*day as usize - 1)
                    .and_then(|p| p.estimate.as_ref())
                    .map(|e| fmt_f64(e.delta_pct))
                    .unwrap_or_else(|| "NA".into());
                vec![day.to_string(), observed, fmt_f64(*fitted)]
            }),
        )
        .map_err(io_ctx("writing novelty_fit.tsv"))?;
    }

    let flagged =
        trigger_day.flag || novelty.as_ref().is_some_and(|n| n.flag);
    let payload = TemporalPayload {
        experiment_id: log.experiment_id().to_string(),
        metric_id: args.metric.clone(),
        variant,
        k,
        trigger_day,
        novelty,
        novelty_note,
        impact_series,
    };
    let path = write_report(&args.out, manifest, payload)?;
    println!("{}", path.display());
    Ok(if flagged { EXIT_FLAGGED } else { EXIT_OK })
}

// ---------------------------------------------------------------------------
// meta
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct MetaPayload {
    pub metric_x: String,
    pub metric_y: String,
    pub history_records: usize,
    pub excluded_experiments: Vec<String>,
    pub user_level_rho: f64,
    pub comovement: ComovementResult,
    pub relation: Option<DeltaRelationFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_note: Option<String>,
    pub prior_x: Option<EmFit>,
    pub prior_y: Option<EmFit>,
    pub conditionals: Option<CoSigConditionals>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub rho_user: f64,
}

pub fn cmd_meta(args: &MetaArgs) -> CliResult<i32> {
    let (x, y) = args
        .pair
        .split_once(',')
        .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
        .ok_or_else(|| CliError::Invalid("--pair must be 'X,Y'".into()))?;

    let archives_path = args.corpus.join("archives.json");
    let file = std::fs::File::open(&archives_path).map_err(|e| CliError::Io {
        context: format!("opening {}", archives_path.display()),
        source: e,
    })?;
    let archives: Vec<ExperimentArchive> = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Invalid(format!("bad archives.json: {e}")))?;

    let rho = match args.rho {
        Some(r) => r,
        None => {
            let meta_path = args.corpus.join("meta.json");
            let file = std::fs::File::open(&meta_path).map_err(|_| {
                CliError::Invalid(
                    "user-level correlation unknown: pass --rho or provide meta.json".into(),
                )
            })?;
            let meta: CorpusMeta = serde_json::from_reader(BufReader::new(file))
                .map_err(|e| CliError::Invalid(format!("bad meta.json: {e}")))?;
            meta.rho_user
        }
    };
    let seed = args
        .seed
        .or_else(|| {
            std::env::var("EXPDIAG_SEED")
                .ok()
                .and_then(|s| s.parse().ok())
        })
        .unwrap_or(0);

    let (history, excluded) = build_history(&archives, args.min_days);
    let com = comovement(&history, &x, &y, rho, args.alpha, seed)?;
    let (relation, relation_note) = match fit_delta_relation(&history, &x, &y, args.q) {
        Ok(fit) => (Some(fit), None),
        Err(e @ MetaError::InsufficientDiscoveries(_, _)) => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let fit_prior = |metric: &str| {
        let effects: Vec<(f64, f64)> = history
            .iter()
            .filter_map(|r| r.metrics.get(metric).map(|m| (m.delta_norm, m.n_e)))
            .collect();
        em_two_group(&effects).ok()
    };
    let prior_x = fit_prior(&x);
    let prior_y = fit_prior(&y);
    let conditionals = estimate_conditionals(&history, &x, &y, rho, args.alpha, seed).ok();

    ensure_out_dir(&args.out)?;
    let manifest = RunManifest::new("meta")
        .with_input(&archives_path)
        .map_err(io_ctx("digesting archives"))?
        .with_parameter("pair", &args.pair)
        .with_parameter("rho", rho)
        .with_parameter("alpha", args.alpha)
        .with_parameter("q", args.q)
        .with_parameter("min_days", args.min_days)
        .with_seed(seed);

    if let Some(fit) = &relation {
        write_tsv(
            &args.out.join("relation_points.tsv"),
            &["experiment", "delta_x", "delta_y"],
            fit.points_used
                .iter()
                .map(|(id, dx, dy)| vec![id.clone(), fmt_f64(*dx), fmt_f64(*dy)]),
        )
        .map_err(io_ctx("writing relation_points.tsv"))?;
    }

    let payload = MetaPayload {
        metric_x: x,
        metric_y: y,
        history_records: history.len(),
        excluded_experiments: excluded,
        user_level_rho: rho,
        comovement: com,
        relation,
        relation_note,
        prior_x,
        prior_y,
        conditionals,
    };
    let path = write_report(&args.out, manifest, payload)?;
    println!("{}", path.display());
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulatePayload {
    pub kind: String,
    pub files: Vec<String>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<i32> {
    let file = std::fs::File::open(&args.spec).map_err(|e| CliError::Io {
        context: format!("opening spec {}", args.spec.display()),
        source: e,
    })?;
    let spec: SimulateSpec = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Invalid(format!("bad scenario spec: {e}")))?;
    ensure_out_dir(&args.out)?;
    let mut files = Vec::new();

    let kind = match &spec {
        SimulateSpec::Scenario(scenario) => {
            let out = generate(scenario)?;
            let events_path = args.out.join("events.ndjson");
            let f = std::fs::File::create(&events_path).map_err(io_ctx("creating events"))?;
            write_events(std::io::BufWriter::new(f), &out.events)?;
            files.push("events.ndjson".to_string());

            let config_path = args.out.join("config.json");
            std::fs::write(
                &config_path,
                serde_json::to_string_pretty(&out.config).expect("config serializes") + "\n",
            )
            .map_err(io_ctx("writing config"))?;
            files.push("config.json".to_string());

            let truth_path = args.out.join("truth.json");
            std::fs::write(
                &truth_path,
                serde_json::to_string_pretty(&out.truth).expect("truth serializes") + "\n",
            )
            .map_err(io_ctx("writing truth"))?;
            files.push("truth.json".to_string());

            for sibling in &out.siblings {
                let id = &sibling.config.experiment_id;
                let events_name = format!("sibling_{id}_events.ndjson");
                let f = std::fs::File::create(args.out.join(&events_name))
                    .map_err(io_ctx("creating sibling events"))?;
                write_events(std::io::BufWriter::new(f), &sibling.events)?;
                files.push(events_name);
                let config_name = format!("sibling_{id}_config.json");
                std::fs::write(
                    args.out.join(&config_name),
                    serde_json::to_string_pretty(&sibling.config).expect("config serializes")
                        + "\n",
                )
                .map_err(io_ctx("writing sibling config"))?;
                files.push(config_name);
            }
            scenario.kind.as_str().to_string()
        }
        SimulateSpec::Corpus(corpus_spec) => {
            let out = generate_corpus(corpus_spec)?;
            for (day, archives) in &out.snapshots {
                let name = format!("archives_day{day}.json");
                std::fs::write(
                    args.out.join(&name),
                    serde_json::to_string(&archives).expect("archives serialize") + "\n",
                )
                .map_err(io_ctx("writing archives"))?;
                files.push(name);
            }
            // The final snapshot doubles as the default corpus for `meta`.
            if let Some(archives) = out.snapshots.values().last() {
                std::fs::write(
                    args.out.join("archives.json"),
                    serde_json::to_string(&archives).expect("archives serialize") + "\n",
                )
                .map_err(io_ctx("writing archives"))?;
                files.push("archives.json".to_string());
            }
            std::fs::write(
                args.out.join("meta.json"),
                serde_json::to_string_pretty(&CorpusMeta {
                    rho_user: out.rho_user,
                })
                .expect("meta serializes")
                    + "\n",
            )
            .map_err(io_ctx("writing meta"))?;
            files.push("meta.json".to_string());
            std::fs::write(
                args.out.join("truth.json"),
                serde_json::to_string_pretty(&out.truth).expect("truth serializes") + "\n",
            )
            .map_err(io_ctx("writing truth"))?;
            files.push("truth.json".to_string());
            "corpus".to_string()
        }
    };

    let manifest = RunManifest::new("simulate")
        .with_input(&args.spec)
        .map_err(io_ctx("digesting spec"))?;
    let path = write_report(&args.out, manifest, SimulatePayload { kind, files })?;
    println!("{}", path.display());
    Ok(EXIT_OK)
}

/// Dispatches a parsed command; returns the process exit code.
pub fn run(cli: &Cli) -> CliResult<i32> {
    match &cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Temporal(args) => cmd_temporal(args),
        Command::Meta(args) => cmd_meta(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}
