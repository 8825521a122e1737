//! Experiment configuration and the `train`, `suite`, `analyze` and
//! `gen-data` commands.
//!
//! Every command writes through an [`ArtifactWriter`]. On failure the
//! written files are removed and `error.json` is left in the output
//! directory. Metric files contain no timing, so reruns with the same config
//! and seed are byte-identical; wall-clock goes to `timing.json`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cpa::biorthogonality_residual;
use crate::data::{
    control_chart, fmt_f64, load_csv, to_csv, ControlChartParams, DatasetTable, Normalization, NormalizationMode,
};
use crate::error::{Error, Result};
use crate::io::{
    generators_to_json, model_to_json, plot_script, raster_csv, read_generators, read_model, surface_csv,
    write_error_json, ArtifactWriter, PlotKind,
};
use crate::liegroup::{gen_orbit_dataset, make_named_generator, NamedGenerator, OrbitSpec, ThetaSampling};
use crate::network::{Activation, Architecture};
use crate::numerics::Rng;
use crate::partition::{
    count_regions_in_ball, export_decoder_surface, rasterize_partition_2d, sample_neighbor_pair, LatentLaw,
    NeighborSearch,
};
use crate::regularizers::{solve_epsilon_first, solve_epsilon_second, RegConfig, RegKind};
use crate::trainer::{
    init_run, run_suite, train, EpochMetrics, RunRecord, RunStatus, Split, SuiteEntry, SuiteResult, TrainConfig,
};

/// Layer lists, or widths with a bottleneck index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Layers(Architecture),
    Widths {
        widths: Vec<usize>,
        bottleneck: usize,
        #[serde(default = "default_hidden")]
        activation: Activation,
    },
}

fn default_hidden() -> Activation {
    Activation::Relu
}

impl ModelSpec {
    pub fn architecture(&self) -> Result<Architecture> {
        let arch = match self {
            ModelSpec::Layers(a) => a.clone(),
            ModelSpec::Widths {
                widths,
                bottleneck,
                activation,
            } => Architecture::from_widths(widths, *bottleneck, *activation)?,
        };
        arch.validate().map_err(|e| Error::Config(format!("model: {e}")))?;
        Ok(arch)
    }
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Orbit of `x0` under a named generator set. Without `val`, the
    /// validation rows are drawn from `train`.
    Orbit {
        x0: Vec<f64>,
        generator: NamedGenerator,
        train: ThetaSampling,
        #[serde(default)]
        val: Option<ThetaSampling>,
        test: ThetaSampling,
        #[serde(default)]
        noise_std: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Paths are relative to the config file. Without `test`, a seeded
    /// `test_fraction` of `train` is held out.
    Csv {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
        #[serde(default)]
        has_label_column: bool,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    ControlChart {
        #[serde(default)]
        params: ControlChartParams,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub data: DataSpec,
    #[serde(default)]
    pub normalization: NormalizationMode,
    pub train: TrainConfig,
    #[serde(default)]
    pub outputs: Option<PathBuf>,
}

/// One column of a suite table: a regularizer plus optional overrides of the
/// base training config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    pub reg: RegConfig,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    /// Row label of the table.
    #[serde(default = "default_dataset_name")]
    pub dataset: String,
    pub model: ModelSpec,
    pub data: DataSpec,
    #[serde(default)]
    pub normalization: NormalizationMode,
    pub train: TrainConfig,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub outputs: Option<PathBuf>,
}

fn default_dataset_name() -> String {
    "dataset".into()
}

impl SuiteConfig {
    pub fn entries(&self) -> Result<Vec<SuiteEntry>> {
        if self.methods.is_empty() {
            return Err(Error::Config("suite needs at least one method".into()));
        }
        let mut entries: Vec<SuiteEntry> = Vec::new();
        for m in &self.methods {
            if entries.iter().any(|e| e.name == m.name) {
                return Err(Error::Config(format!("duplicate method name {:?}", m.name)));
            }
            let mut t = self.train.clone();
            t.reg = m.reg.clone();
            t.lr = m.lr.unwrap_or(t.lr);
            t.epochs = m.epochs.unwrap_or(t.epochs);
            t.validate()?;
            entries.push(SuiteEntry {
                name: m.name.clone(),
                train: t,
            });
        }
        Ok(entries)
    }
}

/// Command-line overrides applied after parsing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

fn read_config_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))
}

fn parse_config<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid {what} config: {e}")))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

impl DataSpec {
    /// Resolves relative paths against `base` and checks that they exist.
    pub fn resolve(&mut self, base: &Path) -> Result<()> {
        if let DataSpec::Csv { train, test, .. } = self {
            for p in std::iter::once(train).chain(test.as_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                if !p.is_file() {
                    return Err(Error::Config(format!("data file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = parse_config(text, "experiment")?;
        cfg.data.resolve(base)?;
        cfg.model.architecture()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_config_text(path)?, &base_dir(path))
    }
}

impl SuiteConfig {
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = parse_config(text, "suite")?;
        cfg.data.resolve(base)?;
        cfg.model.architecture()?;
        cfg.entries()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_config_text(path)?, &base_dir(path))
    }
}

/// Normalized split plus the fitted normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub split: Split,
    pub normalization: Normalization,
}

type Rows = Vec<Vec<f64>>;

/// Splits off a seeded `fraction` of `rows` as `(kept, held out)`.
fn hold_out(mut rows: Rows, fraction: f64, rng: &mut Rng) -> Result<(Rows, Rows)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
    }
    if rows.len() < 2 {
        return Err(Error::Config("need at least two rows to hold out a test set".into()));
    }
    rng.shuffle(&mut rows);
    let n_test = ((fraction * rows.len() as f64).round() as usize).clamp(1, rows.len() - 1);
    let test = rows.split_off(rows.len() - n_test);
    Ok((rows, test))
}

/// Builds the split. Normalization is fit on the train portion (validation
/// included) and applied to every part.
pub fn prepare_data(
    data: &DataSpec,
    mode: NormalizationMode,
    val_fraction: f64,
    seed: u64,
    input_dim: usize,
) -> Result<PreparedData> {
    let data_rng = |s: Option<u64>| Rng::new(s.unwrap_or(seed)).fork(0xDA7A);
    let (train, val, test) = match data {
        DataSpec::Orbit {
            x0,
            generator,
            train,
            val,
            test,
            noise_std,
            seed: s,
        } => {
            let mut rng = data_rng(*s);
            let generators = make_named_generator(*generator, x0.len())?;
            let mut draw = |sampling: &ThetaSampling| -> Result<Vec<Vec<f64>>> {
                let spec = OrbitSpec {
                    x0: x0.clone(),
                    generators: generators.clone(),
                    sampling: sampling.clone(),
                    noise_std: *noise_std,
                };
                Ok(gen_orbit_dataset(&spec, &mut rng)?.rows())
            };
            let tr = draw(train)?;
            let va = val.as_ref().map(&mut draw).transpose()?;
            (tr, va, draw(test)?)
        }
        DataSpec::Csv {
            train,
            test,
            has_label_column,
            test_fraction,
        } => {
            let tr = load_csv(train, *has_label_column)?.features;
            match test {
                Some(p) => (tr, None, load_csv(p, *has_label_column)?.features),
                None => {
                    let (a, b) = hold_out(tr, *test_fraction, &mut data_rng(None).fork(1))?;
                    (a, None, b)
                }
            }
        }
        DataSpec::ControlChart {
            params,
            test_fraction,
            seed: s,
        } => {
            let mut rng = data_rng(*s);
            let table = control_chart(params, &mut rng)?;
            let (a, b) = hold_out(table.features, *test_fraction, &mut rng.fork(1))?;
            (a, None, b)
        }
    };
    for (name, rows) in [("train", &train), ("test", &test)] {
        if rows.is_empty() {
            return Err(Error::Config(format!("{name} set is empty")));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != input_dim) {
            return Err(Error::Config(format!(
                "{name} rows have {} features, model expects {input_dim}",
                r.len()
            )));
        }
    }
    let fit_rows: Vec<Vec<f64>> = train.iter().chain(val.iter().flatten()).cloned().collect();
    let normalization = Normalization::fit(&fit_rows, mode)?;
    let apply = |rows: Vec<Vec<f64>>| rows.iter().map(|r| normalization.apply(r)).collect::<Vec<_>>();
    let split = match val {
        Some(v) => Split {
            train: apply(train),
            val: apply(v),
            test: apply(test),
        },
        None => Split::derive(apply(train), apply(test), val_fraction, seed)?,
    };
    Ok(PreparedData { split, normalization })
}

/// Runs `body` against a fresh writer for `dir`. On error the written files
/// are replaced by `error.json` and the error is returned.
pub fn with_artifacts<T>(dir: &Path, body: impl FnOnce(&mut ArtifactWriter) -> Result<T>) -> Result<T> {
    let mut w = ArtifactWriter::create(dir)?;
    let stale = dir.join("error.json");
    if stale.exists() {
        std::fs::remove_file(&stale)?;
    }
    match body(&mut w) {
        Ok(v) => Ok(v),
        Err(e) => {
            let _ = w.fail(&e);
            Err(e)
        }
    }
}

fn output_dir(configured: &Option<PathBuf>, base: &Path, ov: &Overrides) -> Result<PathBuf> {
    match (&ov.out, configured) {
        (Some(o), _) => Ok(o.clone()),
        (None, Some(p)) if p.is_relative() => Ok(base.join(p)),
        (None, Some(p)) => Ok(p.clone()),
        (None, None) => Err(Error::Config(
            "no output directory: pass --out or set \"outputs\"".into(),
        )),
    }
}

/// Loads a config, resolves its output directory and runs `body`. Errors
/// raised before the directory is known are returned without an error file.
fn run_configured<C, T>(
    config_path: &Path,
    ov: &Overrides,
    load: impl FnOnce(&Path) -> Result<C>,
    outputs: impl Fn(&C) -> &Option<PathBuf>,
    body: impl FnOnce(&mut ArtifactWriter, C) -> Result<T>,
) -> Result<T> {
    let cfg = match load(config_path) {
        Ok(c) => c,
        Err(e) => {
            if let Some(o) = &ov.out {
                let _ = write_error_json(o, &e);
            }
            return Err(e);
        }
    };
    let dir = output_dir(outputs(&cfg), &base_dir(config_path), ov)?;
    with_artifacts(&dir, |w| body(w, cfg))
}

#[derive(Serialize)]
struct EpochLine<'a> {
    run: usize,
    seed: u64,
    #[serde(flatten)]
    metrics: &'a EpochMetrics,
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    run: usize,
    summary: bool,
    method: &'a str,
    seed: u64,
    best_epoch: Option<usize>,
    final_test_mse: f64,
    #[serde(flatten)]
    status: &'a RunStatus,
}

#[derive(Serialize)]
struct EpsilonLine<'a> {
    run: usize,
    step: usize,
    epsilon: &'a [f64],
    residual: f64,
}

#[derive(Serialize)]
struct Timing {
    wall_clock_seconds: Vec<f64>,
}

/// Result of `train`: one record per run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub records: Vec<RunRecord>,
}

fn runrecord_lines(records: &[RunRecord]) -> Result<String> {
    let mut text = String::new();
    for (r, rec) in records.iter().enumerate() {
        for m in &rec.epochs {
            text += &serde_json::to_string(&EpochLine {
                run: r,
                seed: rec.seed,
                metrics: m,
            })?;
            text.push('\n');
        }
        text += &serde_json::to_string(&SummaryLine {
            run: r,
            summary: true,
            method: &rec.method,
            seed: rec.seed,
            best_epoch: rec.best_epoch,
            final_test_mse: rec.final_test_mse,
            status: &rec.status,
        })?;
        text.push('\n');
    }
    Ok(text)
}

fn epsilon_lines(records: &[RunRecord]) -> Result<String> {
    let mut text = String::new();
    for (r, rec) in records.iter().enumerate() {
        for e in &rec.epsilon_trace {
            text += &serde_json::to_string(&EpsilonLine {
                run: r,
                step: e.step,
                epsilon: &e.epsilon,
                residual: e.residual,
            })?;
            text.push('\n');
        }
    }
    Ok(text)
}

/// Trains `cfg.train.runs` seeds. Writes `model.json`, `generators.json`
/// (suffixed `_run{r}` when there are several runs), `runrecord.jsonl`,
/// `epsilon_trace.jsonl`, `normalization.json`, `timing.json` and plot
/// scripts. A diverged run fails the command with a numeric error.
pub fn cmd_train(cfg: &ExperimentConfig, w: &mut ArtifactWriter) -> Result<TrainOutcome> {
    let arch = cfg.model.architecture()?;
    cfg.train.validate()?;
    let prepared = prepare_data(
        &cfg.data,
        cfg.normalization,
        cfg.train.val_fraction,
        cfg.train.seed,
        arch.input_dim(),
    )?;
    let mut records = Vec::with_capacity(cfg.train.runs);
    for r in 0..cfg.train.runs {
        let (mut model, mut gs, run_cfg) = init_run(&arch, &cfg.train, r)?;
        let rec = train(&mut model, &mut gs, &prepared.split, &run_cfg)?;
        if let RunStatus::Diverged { epoch, step, message } = &rec.status {
            return Err(Error::Numeric(format!(
                "run {r} (seed {}) diverged at epoch {epoch}, step {step}: {message}",
                rec.seed
            )));
        }
        let suffix = if cfg.train.runs > 1 {
            format!("_run{r}")
        } else {
            String::new()
        };
        w.write(&format!("model{suffix}.json"), &model_to_json(&model)?)?;
        w.write(&format!("generators{suffix}.json"), &generators_to_json(&gs)?)?;
        records.push(rec);
    }
    w.write("runrecord.jsonl", &runrecord_lines(&records)?)?;
    w.write("epsilon_trace.jsonl", &epsilon_lines(&records)?)?;
    w.write_json("normalization.json", &prepared.normalization)?;
    w.write("curves.py", &plot_script(PlotKind::Curves, "runrecord.jsonl"))?;
    w.write(
        "epsilon_trace.py",
        &plot_script(PlotKind::EpsilonTrace, "epsilon_trace.jsonl"),
    )?;
    w.write_json(
        "timing.json",
        &Timing {
            wall_clock_seconds: records.iter().map(|r| r.wall_clock.as_secs_f64()).collect(),
        },
    )?;
    Ok(TrainOutcome {
        dir: w.dir().to_path_buf(),
        records,
    })
}

pub fn train_from_path(config_path: &Path, ov: &Overrides) -> Result<TrainOutcome> {
    run_configured(
        config_path,
        ov,
        |p| {
            let mut c = ExperimentConfig::load(p)?;
            c.train.seed = ov.seed.unwrap_or(c.train.seed);
            Ok(c)
        },
        |c| &c.outputs,
        |w, c| cmd_train(&c, w),
    )
}

#[derive(Serialize)]
struct SuiteRowDoc<'a> {
    name: &'a str,
    method: &'a str,
    mean: f64,
    std: f64,
    failed: usize,
    final_test_mse: Vec<f64>,
    runs: Vec<SuiteRunDoc<'a>>,
}

#[derive(Serialize)]
struct SuiteRunDoc<'a> {
    seed: u64,
    best_epoch: Option<usize>,
    final_test_mse: f64,
    #[serde(flatten)]
    status: &'a RunStatus,
}

#[derive(Serialize)]
struct SuiteDoc<'a> {
    dataset: &'a str,
    rows: Vec<SuiteRowDoc<'a>>,
}

/// Table with one row per statistic and one column per method.
pub fn suite_table_csv(dataset: &str, result: &SuiteResult) -> String {
    let mut out = String::from("dataset,statistic");
    for row in &result.rows {
        out.push(',');
        out.push_str(&row.name);
    }
    out.push('\n');
    for (stat, pick) in [("mean", 0), ("std", 1)] {
        let _ = write!(out, "{dataset},{stat}");
        for row in &result.rows {
            let v = if pick == 0 { row.mean } else { row.std };
            let _ = write!(out, ",{}", fmt_f64(v));
        }
        out.push('\n');
    }
    out
}

fn suite_runs_csv(result: &SuiteResult) -> String {
    let mut out = String::from("method,seed,best_epoch,final_test_mse,status\n");
    for row in &result.rows {
        for r in &row.runs {
            let status = if r.diverged() { "diverged" } else { "completed" };
            let best = r.best_epoch.map_or(String::new(), |b| b.to_string());
            let _ = writeln!(
                out,
                "{},{},{best},{},{status}",
                row.name,
                r.seed,
                fmt_f64(r.final_test_mse)
            );
        }
    }
    out
}

/// Runs every method over `train.runs` seeds. Writes `suite.json`,
/// `table.csv`, `runs.csv` and `timing.json`. Diverged runs are counted in
/// `failed`, not fatal.
pub fn cmd_suite(cfg: &SuiteConfig, workers: usize, w: &mut ArtifactWriter) -> Result<SuiteResult> {
    let arch = cfg.model.architecture()?;
    let entries = cfg.entries()?;
    let prepared = prepare_data(
        &cfg.data,
        cfg.normalization,
        cfg.train.val_fraction,
        cfg.train.seed,
        arch.input_dim(),
    )?;
    let result = run_suite(&arch, &entries, &prepared.split, workers)?;
    let doc = SuiteDoc {
        dataset: &cfg.dataset,
        rows: result
            .rows
            .iter()
            .map(|row| SuiteRowDoc {
                name: &row.name,
                method: &row.method,
                mean: row.mean,
                std: row.std,
                failed: row.failed,
                final_test_mse: row.runs.iter().map(|r| r.final_test_mse).collect(),
                runs: row
                    .runs
                    .iter()
                    .map(|r| SuiteRunDoc {
                        seed: r.seed,
                        best_epoch: r.best_epoch,
                        final_test_mse: r.final_test_mse,
                        status: &r.status,
                    })
                    .collect(),
            })
            .collect(),
    };
    w.write_json("suite.json", &doc)?;
    w.write("table.csv", &suite_table_csv(&cfg.dataset, &result))?;
    w.write("runs.csv", &suite_runs_csv(&result))?;
    w.write_json("normalization.json", &prepared.normalization)?;
    let secs = result
        .rows
        .iter()
        .flat_map(|r| r.runs.iter().map(|x| x.wall_clock.as_secs_f64()))
        .collect();
    w.write_json(
        "timing.json",
        &Timing {
            wall_clock_seconds: secs,
        },
    )?;
    Ok(result)
}

pub fn suite_from_path(config_path: &Path, ov: &Overrides) -> Result<SuiteResult> {
    run_configured(
        config_path,
        ov,
        |p| {
            let mut c = SuiteConfig::load(p)?;
            c.train.seed = ov.seed.unwrap_or(c.train.seed);
            Ok(c)
        },
        |c| &c.outputs,
        |w, c| cmd_suite(&c, ov.workers.unwrap_or(1), w),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyzeKind {
    Partition2d,
    Surface,
    BallCounts,
    Biorthogonality,
    EpsilonTrace,
}

impl std::str::FromStr for AnalyzeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Config(format!("unknown analysis kind {s:?}")))
    }
}

fn default_probes() -> usize {
    10_000
}
fn default_points() -> usize {
    20
}
fn default_pairs() -> usize {
    100
}

/// Options for `analyze`. Unused fields are ignored by kinds that do not
/// need them; paths are relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub model: PathBuf,
    #[serde(default)]
    pub generators: Option<PathBuf>,
    pub kind: AnalyzeKind,
    /// Input bounds (partition2d) or latent bounds (surface) per axis.
    #[serde(default)]
    pub bounds: Option<Vec<(f64, f64)>>,
    /// Pixels per axis (partition2d) or vertices per axis (surface).
    #[serde(default)]
    pub resolution: Option<usize>,
    /// Rows for ball_counts, biorthogonality and the latent law of
    /// epsilon_trace.
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub has_label_column: bool,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    #[serde(default)]
    pub radii: Option<Vec<f64>>,
    #[serde(default = "default_probes")]
    pub probes: usize,
    /// Gaussian points drawn when no data file is given (biorthogonality).
    #[serde(default = "default_points")]
    pub points: usize,
    /// Neighbor draws for epsilon_trace.
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    /// Regularizer whose ε is traced: `lie1` or `lie2`.
    #[serde(default)]
    pub reg: Option<RegConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub outputs: Option<PathBuf>,
}

impl AnalyzeConfig {
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = parse_config(text, "analyze")?;
        for p in std::iter::once(&mut cfg.model)
            .chain(cfg.generators.as_mut())
            .chain(cfg.data.as_mut())
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_config_text(path)?, &base_dir(path))
    }
}

#[derive(Serialize)]
struct BiorthogonalityDoc {
    points: Vec<Vec<f64>>,
    residuals: Vec<f64>,
    max: f64,
    mean: f64,
}

#[derive(Serialize)]
struct TraceLine {
    step: usize,
    order: u8,
    epsilon: Vec<f64>,
    residual: f64,
}

/// Runs one analysis and returns the data artifact's path.
pub fn cmd_analyze(cfg: &AnalyzeConfig, w: &mut ArtifactWriter) -> Result<PathBuf> {
    let model = read_model(&cfg.model)?;
    let mut rng = Rng::new(cfg.seed);
    let data = match &cfg.data {
        Some(p) => load_csv(p, cfg.has_label_column)?.features,
        None => Vec::new(),
    };
    if let Some(r) = data.iter().find(|r| r.len() != model.input_dim()) {
        return Err(Error::Contract(format!(
            "data rows have {} features, model expects {}",
            r.len(),
            model.input_dim()
        )));
    }
    let path = match cfg.kind {
        AnalyzeKind::Partition2d => {
            let b = cfg.bounds.clone().unwrap_or_else(|| vec![(-3.0, 3.0); 2]);
            if b.len() != 2 {
                return Err(Error::Config("partition2d needs two bounds".into()));
            }
            let n = cfg.resolution.unwrap_or(200);
            let raster = rasterize_partition_2d(&model, [b[0], b[1]], (n, n))?;
            let legend: Vec<Vec<String>> = raster.legend.iter().map(|c| c.bitstrings()).collect();
            w.write_json("partition2d_legend.json", &legend)?;
            w.write("partition2d.py", &plot_script(PlotKind::Partition2d, "partition2d.csv"))?;
            w.write("partition2d.csv", &raster_csv(&raster))?
        }
        AnalyzeKind::Surface => {
            let h = model.bottleneck();
            let b = cfg.bounds.clone().unwrap_or_else(|| vec![(-3.0, 3.0); h]);
            let s = export_decoder_surface(&model, &b, cfg.resolution.unwrap_or(40))?;
            w.write("surface.py", &plot_script(PlotKind::Surface, "surface.csv"))?;
            w.write("surface.csv", &surface_csv(&s))?
        }
        AnalyzeKind::BallCounts => {
            let d = model.input_dim();
            let center = match (&cfg.center, data.is_empty()) {
                (Some(c), _) => c.clone(),
                (None, false) => {
                    let n = data.len() as f64;
                    (0..d).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n).collect()
                }
                (None, true) => vec![0.0; d],
            };
            let radii = cfg.radii.clone().unwrap_or_else(|| vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0]);
            let report = count_regions_in_ball(&model, &center, &radii, cfg.probes, &data, &mut rng)?;
            w.write("ball_counts.py", &plot_script(PlotKind::BallCounts, "ball_counts.json"))?;
            w.write_json("ball_counts.json", &report)?
        }
        AnalyzeKind::Biorthogonality => {
            let points = if data.is_empty() {
                (0..cfg.points)
                    .map(|_| rng.gaussian_vec(model.input_dim(), 1.0))
                    .collect()
            } else {
                data.into_iter().take(cfg.points).collect::<Vec<_>>()
            };
            let residuals = points
                .iter()
                .map(|x| biorthogonality_residual(&model, x))
                .collect::<Result<Vec<_>>>()?;
            let max = residuals.iter().copied().fold(0.0, f64::max);
            let mean = residuals.iter().sum::<f64>() / residuals.len().max(1) as f64;
            w.write(
                "biorthogonality.py",
                &plot_script(PlotKind::Biorthogonality, "biorthogonality.json"),
            )?;
            w.write_json(
                "biorthogonality.json",
                &BiorthogonalityDoc {
                    points,
                    residuals,
                    max,
                    mean,
                },
            )?
        }
        AnalyzeKind::EpsilonTrace => {
            let gpath = cfg
                .generators
                .as_ref()
                .ok_or_else(|| Error::Config("epsilon_trace needs a generators file".into()))?;
            let gs = read_generators(gpath)?;
            if gs.dim() != model.input_dim() {
                return Err(Error::Contract(format!(
                    "generators act on R^{}, model outputs R^{}",
                    gs.dim(),
                    model.input_dim()
                )));
            }
            let reg = cfg.reg.clone().unwrap_or_else(|| RegConfig::new(RegKind::Lie1, 1.0));
            let embedded = data.iter().map(|x| model.encode(x)).collect::<Result<Vec<_>>>()?;
            let law = if embedded.is_empty() {
                LatentLaw::Gaussian
            } else {
                LatentLaw::Mixture(&embedded)
            };
            let search = NeighborSearch {
                initial_step: reg.hessian_sigma,
                ..NeighborSearch::default()
            };
            let mut lines = Vec::new();
            for step in 0..cfg.pairs {
                let solved = match reg.kind {
                    RegKind::Lie1 => {
                        let z = law.draw(model.bottleneck(), &mut rng);
                        let zp: Vec<f64> = z.iter().map(|&t| t + rng.uniform_range(-reg.rho, reg.rho)).collect();
                        let (d, dp) = (model.decode(&z)?.0, model.decode(&zp)?.0);
                        Some((1, solve_epsilon_first(&gs, &d, &dp, reg.ridge)))
                    }
                    RegKind::Lie2 => sample_neighbor_pair(&model, &mut rng, law, &search)?
                        .map(|p| (2, solve_epsilon_second(&gs, &p.a.tangent, &p.b.tangent, reg.ridge))),
                    other => {
                        return Err(Error::Config(format!(
                            "epsilon_trace needs reg kind lie1 or lie2, got {}",
                            other.name()
                        )))
                    }
                };
                match solved {
                    Some((order, Ok(s))) => lines.push(TraceLine {
                        step,
                        order,
                        epsilon: s.epsilon,
                        residual: s.residual,
                    }),
                    Some((_, Err(Error::Degenerate(_)))) | None => {}
                    Some((_, Err(e))) => return Err(e),
                }
            }
            w.write(
                "epsilon_trace.py",
                &plot_script(PlotKind::EpsilonTrace, "epsilon_trace.jsonl"),
            )?;
            w.write_jsonl("epsilon_trace.jsonl", &lines)?
        }
    };
    Ok(path)
}

pub fn analyze_from_path(
    config_path: &Path,
    ov: &Overrides,
    model: Option<&Path>,
    kind: Option<AnalyzeKind>,
) -> Result<PathBuf> {
    run_configured(
        config_path,
        ov,
        |p| {
            let mut c = AnalyzeConfig::load(p)?;
            c.seed = ov.seed.unwrap_or(c.seed);
            if let Some(m) = model {
                c.model = m.to_path_buf();
            }
            c.kind = kind.unwrap_or(c.kind);
            Ok(c)
        },
        |c| &c.outputs,
        |w, c| cmd_analyze(&c, w),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenDataKind {
    OrbitCircle,
    OrbitBlocks,
    ControlChart,
}

impl std::str::FromStr for GenDataKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Config(format!("unknown dataset kind {s:?}")))
    }
}

fn default_count() -> usize {
    64
}
fn default_blocks_dim() -> usize {
    4
}

/// `orbit_circle`: `count` evenly spaced rotations of `(1, 0)`.
/// `orbit_blocks`: `count` uniform draws over `[0, 2π)^{d/2}` of independent
/// plane rotations of the unit vector `(1, …, 1)/√d`.
/// `control_chart`: `params`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub kind: GenDataKind,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default = "default_blocks_dim")]
    pub dim: usize,
    #[serde(default)]
    pub params: ControlChartParams,
    #[serde(default)]
    pub seed: u64,
    /// Output CSV path.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl GenDataConfig {
    pub fn new(kind: GenDataKind) -> Self {
        Self {
            kind,
            count: default_count(),
            noise_std: 0.0,
            dim: default_blocks_dim(),
            params: ControlChartParams::default(),
            seed: 0,
            output: None,
        }
    }
}

pub fn gen_data(cfg: &GenDataConfig) -> Result<DatasetTable> {
    let mut rng = Rng::new(cfg.seed).fork(0xDA7A);
    let tau = 2.0 * std::f64::consts::PI;
    let orbit = |generator: NamedGenerator, d: usize, sampling: ThetaSampling, rng: &mut Rng| {
        let x0 = vec![1.0 / (d as f64).sqrt(); d];
        let x0 = if generator == NamedGenerator::Rotation2d {
            vec![1.0, 0.0]
        } else {
            x0
        };
        let spec = OrbitSpec {
            x0,
            generators: make_named_generator(generator, d)?,
            sampling,
            noise_std: cfg.noise_std,
        };
        Ok::<_, Error>(DatasetTable::new(gen_orbit_dataset(&spec, rng)?.rows(), None))
    };
    if cfg.kind != GenDataKind::ControlChart && cfg.count == 0 {
        return Err(Error::Config("count must be >= 1".into()));
    }
    match cfg.kind {
        GenDataKind::OrbitCircle => orbit(
            NamedGenerator::Rotation2d,
            2,
            ThetaSampling::Grid {
                lo: 0.0,
                hi: tau,
                count: cfg.count,
            },
            &mut rng,
        ),
        GenDataKind::OrbitBlocks => orbit(
            NamedGenerator::BlockRotations,
            cfg.dim,
            ThetaSampling::Uniform {
                ranges: vec![(0.0, tau); cfg.dim / 2],
                count: cfg.count,
            },
            &mut rng,
        ),
        GenDataKind::ControlChart => control_chart(&cfg.params, &mut rng),
    }
}

/// Writes the generated CSV to `out`. On failure `error.json` is written
/// next to it.
pub fn gen_data_to(cfg: &GenDataConfig, out: &Path) -> Result<PathBuf> {
    let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let name = out
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Config(format!("invalid output path {}", out.display())))?
        .to_string();
    with_artifacts(&dir, |w| {
        let table = gen_data(cfg)?;
        w.write(&name, &to_csv(&table))
    })
}

pub fn gen_data_from_path(config_path: Option<&Path>, kind: Option<GenDataKind>, ov: &Overrides) -> Result<PathBuf> {
    let mut cfg = match (config_path, kind) {
        (Some(p), _) => {
            let mut c: GenDataConfig = parse_config(&read_config_text(p)?, "gen-data")?;
            if let Some(o) = c.output.as_mut().filter(|o| o.is_relative()) {
                *o = base_dir(p).join(&*o);
            }
            c
        }
        (None, Some(k)) => GenDataConfig::new(k),
        (None, None) => return Err(Error::Config("gen-data needs --config or --kind".into())),
    };
    if let Some(k) = kind {
        cfg.kind = k;
    }
    cfg.seed = ov.seed.unwrap_or(cfg.seed);
    let out = ov
        .out
        .clone()
        .or(cfg.output.clone())
        .ok_or_else(|| Error::Config("no output file: pass --out or set \"output\"".into()))?;
    gen_data_to(&cfg, &out)
}
