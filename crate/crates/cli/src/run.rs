//! Experiment orchestration and report files.

use std::fs;
use std::path::{Path, PathBuf};

use num_bigint::BigInt;
use serde::Serialize;

use riesz_core::construction::{all_geometries, sample_realization, sample_replica, validate_params};
use riesz_core::montecarlo::{kb_ratio, spread_points, KbOptions, Method};
use riesz_core::singularity::{
    case_of, complete_window, greedy_select, phi_weak_limit, section6_bound, stage_dilation, GreedyMode,
    GreedyOptions, Section6Options, SingularityCase,
};
use riesz_core::spectral::{default_grid_size, product_span, GridDensity, GridEvaluator, DensityKind};
use riesz_core::tower::{build_tower, correlation_window_is_flat, recursion_check_all};
use riesz_core::trigpoly::{build_pk, phi_window, PkForm};
use riesz_core::OrnsteinParams;

use crate::config::{ConfigError, Experiment, ExperimentConfig, Format, GreedyModeSpec};

/// Exit statuses of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Success,
    ValidationRejected,
    AssertionFailed,
    ResourceError,
}

impl Status {
    pub fn code(&self) -> i32 {
        match self {
            Status::Success => 0,
            Status::ValidationRejected => 2,
            Status::AssertionFailed => 3,
            Status::ResourceError => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("validation rejected: {0}")]
    Validation(String),
    #[error("resource limit: {0}")]
    Resource(String),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot write csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot encode json: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<riesz_core::Error> for RunError {
    fn from(e: riesz_core::Error) -> Self {
        match e {
            riesz_core::Error::ResourceLimit(msg) => RunError::Resource(msg),
            other => RunError::Validation(other.to_string()),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Params(inner) => inner.into(),
            other => RunError::Validation(other.to_string()),
        }
    }
}

impl RunError {
    /// Exit code; I/O trouble is a plain failure (1).
    pub fn code(&self) -> i32 {
        match self {
            RunError::Validation(_) => Status::ValidationRejected.code(),
            RunError::Resource(_) => Status::ResourceError.code(),
            RunError::Io(_) | RunError::Csv(_) | RunError::Json(_) => 1,
        }
    }
}

/// What a finished run produced.
#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub experiment: Experiment,
    pub status: Status,
    pub files: Vec<PathBuf>,
    pub failures: Vec<String>,
    pub notes: Vec<String>,
}

/// Sequences as resolved from the config, with big values as strings.
#[derive(Debug, Serialize)]
struct ResolvedParams {
    stages: usize,
    cuts: Vec<u64>,
    spacing: Vec<String>,
    top_spacers: Vec<String>,
    heights: Vec<String>,
}

impl ResolvedParams {
    fn new(params: &OrnsteinParams) -> Self {
        let n = params.stages();
        Self {
            stages: n,
            cuts: params.cuts().to_vec(),
            spacing: (0..n).map(|k| params.spacing(k).to_string()).collect(),
            top_spacers: (0..n).map(|k| params.top_spacer(k).to_string()).collect(),
            heights: params.heights().iter().map(BigInt::to_string).collect(),
        }
    }
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    experiment: Experiment,
    seed: u64,
    config: &'a ExperimentConfig,
    params: ResolvedParams,
    status: Status,
    failures: &'a [String],
    notes: &'a [String],
    result: T,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    experiment: Experiment,
    seed: u64,
    config: &'a ExperimentConfig,
    status: Status,
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    files: Vec<String>,
    /// Seconds since the Unix epoch; the only field that changes between reruns.
    timestamp: u64,
}

/// Collects files and findings while an experiment runs.
struct Sink<'a> {
    cfg: &'a ExperimentConfig,
    experiment: Experiment,
    dir: PathBuf,
    files: Vec<PathBuf>,
    failures: Vec<String>,
    notes: Vec<String>,
}

impl<'a> Sink<'a> {
    fn new(cfg: &'a ExperimentConfig, experiment: Experiment) -> Result<Self, RunError> {
        let dir = cfg.output.dir.clone();
        fs::create_dir_all(&dir)?;
        Ok(Self { cfg, experiment, dir, files: Vec::new(), failures: Vec::new(), notes: Vec::new() })
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }

    fn status(&self) -> Status {
        if self.failures.is_empty() {
            Status::Success
        } else {
            Status::AssertionFailed
        }
    }

    fn json<T: Serialize>(&mut self, params: &OrnsteinParams, result: T) -> Result<(), RunError> {
        if !self.cfg.wants(Format::Json) {
            return Ok(());
        }
        let report = Report {
            experiment: self.experiment,
            seed: self.cfg.numeric.seed,
            config: self.cfg,
            params: ResolvedParams::new(params),
            status: self.status(),
            failures: &self.failures,
            notes: &self.notes,
            result,
        };
        let path = self.dir.join(format!("{}.json", self.experiment));
        fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
        self.files.push(path);
        Ok(())
    }

    fn csv<T: Serialize>(&mut self, suffix: &str, rows: impl IntoIterator<Item = T>) -> Result<(), RunError> {
        if !self.cfg.wants(Format::Csv) {
            return Ok(());
        }
        let path = self.dir.join(format!("{}{suffix}.csv", self.experiment));
        let mut w = csv::Writer::from_path(&path)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        self.files.push(path);
        Ok(())
    }

    fn finish(self) -> Outcome {
        Outcome {
            experiment: self.experiment,
            status: self.status(),
            files: self.files,
            failures: self.failures,
            notes: self.notes,
        }
    }
}

fn write_manifest(
    cfg: &ExperimentConfig,
    experiment: Experiment,
    result: &Result<Outcome, RunError>,
) -> Result<PathBuf, RunError> {
    fs::create_dir_all(&cfg.output.dir)?;
    let (status, code, error, files) = match result {
        Ok(o) => (o.status, o.status.code(), None, o.files.clone()),
        Err(e) => {
            let status = match e {
                RunError::Validation(_) => Status::ValidationRejected,
                RunError::Resource(_) => Status::ResourceError,
                _ => Status::AssertionFailed,
            };
            (status, e.code(), Some(e.to_string()), Vec::new())
        }
    };
    let manifest = Manifest {
        tool: "riesz-lab",
        version: env!("CARGO_PKG_VERSION"),
        experiment,
        seed: cfg.numeric.seed,
        config: cfg,
        status,
        exit_code: code,
        error,
        files: files.iter().map(|p| file_name(p)).collect(),
        timestamp: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let path = cfg.output.dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Runs one experiment and writes its manifest. The experiment named in the
/// config is used when `experiment` is `None`.
pub fn run_experiment(cfg: &ExperimentConfig, experiment: Option<Experiment>) -> Result<Outcome, RunError> {
    let experiment = experiment
        .or(cfg.experiment.name)
        .ok_or_else(|| RunError::Validation("no experiment given".into()))?;
    let mut cfg = cfg.clone();
    cfg.experiment.name = Some(experiment);
    let result = execute(&cfg, experiment);
    let manifest = write_manifest(&cfg, experiment, &result)?;
    result.map(|mut o| {
        o.files.insert(0, manifest);
        o
    })
}

fn execute(cfg: &ExperimentConfig, experiment: Experiment) -> Result<Outcome, RunError> {
    let params = cfg.params.build()?;
    let mut sink = Sink::new(cfg, experiment)?;
    match experiment {
        Experiment::Validate => validate(&params, &mut sink)?,
        Experiment::RieszDecay => riesz_decay(&params, &mut sink)?,
        Experiment::OracleCheck => oracle_check(&params, &mut sink)?,
        Experiment::Greedy => greedy(&params, &mut sink)?,
        Experiment::KbBound => kb_bound(&params, &mut sink)?,
        Experiment::PhiLimit => phi_limit(&params, &mut sink)?,
        Experiment::Section6 => section6(&params, &mut sink)?,
    }
    Ok(sink.finish())
}

#[derive(Serialize)]
struct ValidateRow {
    k: usize,
    cut: u64,
    spacing: String,
    height: String,
    finiteness_term: f64,
}

fn validate(params: &OrnsteinParams, sink: &mut Sink) -> Result<(), RunError> {
    let report = validate_params(params, params.stages());
    sink.notes.extend(report.messages.iter().cloned());
    let rows: Vec<ValidateRow> = (0..params.stages())
        .map(|k| ValidateRow {
            k,
            cut: params.cut(k),
            spacing: params.spacing(k).to_string(),
            height: params.height(k).to_string(),
            finiteness_term: report.finiteness_terms.get(k).copied().unwrap_or(f64::NAN),
        })
        .collect();
    sink.json(params, &report)?;
    sink.csv("", rows)
}

#[derive(Serialize)]
struct DecayRow {
    stages: usize,
    root_mean: f64,
    squared_mean: f64,
    aliasing_risk: bool,
}

fn riesz_decay(params: &OrnsteinParams, sink: &mut Sink) -> Result<(), RunError> {
    let omega = sample_realization(params, sink.cfg.numeric.seed);
    let geoms = all_geometries(params, &omega)?;
    let n = sink.cfg.numeric.grid.unwrap_or_else(|| default_grid_size(&geoms));
    let eval = GridEvaluator::new(n);
    let mut root = GridDensity::constant(n, DensityKind::Root);
    let mut rows = Vec::with_capacity(geoms.len());
    for (k, g) in geoms.iter().enumerate() {
        root.multiply(&eval.modulus(&build_pk(g, PkForm::Ornstein)), g.stage);
        let squared: Vec<f64> = root.values.iter().map(|v| v * v).collect();
        let squared_mean = riesz_core::numeric::pairwise_sum(&squared) / n as f64;
        let aliasing_risk = BigInt::from(n) <= 2 * product_span(&geoms[..=k]);
        if !aliasing_risk {
            sink.check((squared_mean - 1.0).abs() < 1e-9, || {
                format!("grid mean of the squared product over {} stages is {squared_mean}", k + 1)
            });
        }
        rows.push(DecayRow { stages: k + 1, root_mean: root.mean(), squared_mean, aliasing_risk });
    }
    if rows.iter().any(|r| r.aliasing_risk) {
        sink.notes.push(format!("grid {n} does not resolve every partial product; means are quadratures"));
    }
    #[derive(Serialize)]
    struct Decay<'a> {
        grid_size: usize,
        series: &'a [DecayRow],
    }
    sink.json(params, Decay { grid_size: n, series: &rows })?;
    sink.csv("", rows)
}

#[derive(Serialize)]
struct OracleRow {
    replica: u64,
    stage: usize,
    window: usize,
    residual: String,
    flat_window: bool,
    base_partition: bool,
}

fn oracle_check(params: &OrnsteinParams, sink: &mut Sink) -> Result<(), RunError> {
    let stages = sink.cfg.numeric.tower_stages.unwrap_or(params.stages()).min(params.stages());
    let seed = sink.cfg.numeric.seed;
    let mut rows = Vec::new();
    for replica in 0..sink.cfg.numeric.seeds {
        let omega = sample_replica(params, seed, replica);
        let tower = build_tower(params, &omega, stages)?;
        for r in recursion_check_all(&tower)? {
            let j = r.stage;
            let corr = tower.correlation(j, tower.max_window(j)?)?;
            let flat = correlation_window_is_flat(&corr, tower.heights()[j]);
            let (inside, total) = tower.base_reconstruction(j)?;
            let partition = inside == *tower.base_width(j) && total == inside;
            sink.check(r.residual_is_zero, || format!("replica {replica} stage {j}: residual {}", r.residual));
            sink.check(flat, || format!("replica {replica} stage {j}: correlation not flat below h_j"));
            sink.check(partition, || format!("replica {replica} stage {j}: base not rebuilt by its copies"));
            rows.push(OracleRow {
                replica,
                stage: j,
                window: r.window,
                residual: r.residual,
                flat_window: flat,
                base_partition: partition,
            });
        }
    }
    #[derive(Serialize)]
    struct Oracle<'a> {
        tower_stages: usize,
        replicas: u64,
        checks: &'a [OracleRow],
    }
    sink.json(params, Oracle { tower_stages: stages, replicas: sink.cfg.numeric.seeds, checks: &rows })?;
    sink.csv("", rows)
}

/// Largest coefficient window used to describe a limit `phi`.
const PHI_WINDOW_CAP: u64 = 256;

fn limit_phi(params: &OrnsteinParams, window: Option<u64>, grid: usize, epsilon: f64) -> Result<riesz_core::PhiFunction, RunError> {
    let last = params.stages() - 1;
    let window = window.unwrap_or_else(|| complete_window(params, last, PHI_WINDOW_CAP));
    if params.stages() >= 2 {
        Ok(phi_weak_limit(params, 0..params.stages(), window, grid, epsilon)?.phi)
    } else {
        Ok(phi_window(params.law(last), last, window))
    }
}

#[derive(Serialize)]
struct GreedyRow {
    step: usize,
    stage: Option<usize>,
    value: f64,
}

fn greedy(params: &OrnsteinParams, sink: &mut Sink) -> Result<(), RunError> {
    if case_of(params, 0..params.stages()) == SingularityCase::Degenerate {
        return Err(RunError::Validation(
            "offset laws are degenerate (max xi_m = 1); run the section6 experiment instead".into(),
        ));
    }
    let num = &sink.cfg.numeric;
    let grid = num.grid.unwrap_or(1 << 14);
    let phi = limit_phi(params, num.window, grid, num.epsilon)?;
    let mode = match num.mode {
        GreedyModeSpec::Fixed => GreedyMode::Fixed,
        GreedyModeSpec::Averaged => GreedyMode::Averaged { replicas: num.replicas.unwrap_or(64) },
    };
    let opts = GreedyOptions {
        epsilon: num.epsilon,
        budget: num.budget,
        grid,
        threshold: num.threshold,
        max_steps: num.max_steps,
        start_stage: 0,
        seed: num.seed,
        mode,
    };
    let trace = greedy_select(params, &phi, &opts)?;
    sink.check(trace.is_non_increasing(), || "greedy trace increased".into());
    let rows: Vec<GreedyRow> = trace
        .values
        .iter()
        .enumerate()
        .map(|(step, &value)| GreedyRow { step, stage: step.checked_sub(1).map(|i| trace.selected[i]), value })
        .collect();
    #[derive(Serialize)]
    struct Greedy<'a> {
        options: &'a GreedyOptions,
        trace: &'a riesz_core::GreedyTrace,
    }
    sink.json(params, Greedy { options: &opts, trace: &trace })?;
    sink.csv("", rows)
}

fn single_stage(params: &OrnsteinParams, stage: Option<usize>) -> Result<usize, RunError> {
    let m = stage.unwrap_or(0);
    if m >= params.stages() {
        return Err(RunError::Validation(format!("stage {m} outside 0..{}", params.stages())));
    }
    Ok(m)
}

fn kb_bound(params: &OrnsteinParams, sink: &mut Sink) -> Result<(), RunError> {
    let num = &sink.cfg.numeric;
    let m = single_stage(params, num.stage)?;
    let opts = KbOptions {
        grid: num.grid.unwrap_or(1 << 10),
        replicas: num.replicas.unwrap_or(10_000),
        seed: num.seed,
        ..Default::default()
    };
    let points = spread_points(params, m, opts.grid, num.points);
    let report = kb_ratio(params, m, &points, &opts)?;
    if let Some(msg) = &report.message {
        sink.notes.push(msg.clone());
    }
    for s in &report.points {
        if report.method == Method::Enumeration {
            sink.check(s.variance_ok, || format!("point {}: variance residual {}", s.point, s.variance_residual));
        } else if !s.variance_ok {
            sink.notes.push(format!("point {}: variance outside 3 standard errors", s.point));
        }
    }
    sink.json(params, &report)?;
    sink.csv("", report.points.clone())
}

fn phi_limit(params: &OrnsteinParams, sink: &mut Sink) -> Result<(), RunError> {
    let num = &sink.cfg.numeric;
    if params.stages() < 2 {
        return Err(RunError::Validation("phi-limit needs at least two stages".into()));
    }
    let last = params.stages() - 1;
    let window = num.window.unwrap_or_else(|| complete_window(params, last, 64));
    let limit = phi_weak_limit(params, 0..params.stages(), window, num.grid.unwrap_or(4096), num.epsilon)?;
    sink.check(limit.nonnegative, || "negative limit coefficient".into());
    let sum = riesz_core::numeric::rational_to_f64(&limit.phi.coeff_sum());
    sink.check(sum <= 1.0 + 1e-9, || format!("limit coefficients sum to {sum}"));
    #[derive(Serialize)]
    struct Row {
        n: i64,
        limit: f64,
        limit_exact: String,
        oscillation: f64,
    }
    let rows: Vec<Row> = limit
        .paths
        .iter()
        .map(|p| Row { n: p.n, limit: p.limit, limit_exact: p.limit_exact.clone(), oscillation: p.oscillation })
        .collect();
    sink.json(params, &limit)?;
    sink.csv("", rows)
}

fn section6(params: &OrnsteinParams, sink: &mut Sink) -> Result<(), RunError> {
    let num = &sink.cfg.numeric;
    let m = single_stage(params, num.stage)?;
    let opts = Section6Options { grid: num.grid, replicas: num.replicas.unwrap_or(64), seed: num.seed };
    let report = section6_bound(params.cut(m), &stage_dilation(params, m), params.law(m), None, &opts)?;
    sink.check(report.f_term_holds, || {
        format!("F-term {} below its lower bound {}", report.f_term, report.f_lower_bound)
    });
    if !report.spacing_below_dilation {
        sink.notes.push("t_m >= h_m + t_m: the lower bound argument does not apply".into());
    }
    sink.json(params, &report)?;
    sink.csv("", [report.clone()])
}
