//! Loss assembly, Adam, the training loop and seeded multi-run suites.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::GeneratorSet;
use crate::network::{decode_on_tape, encode_on_tape, AeModel, Architecture, Layer};
use crate::numerics::{Matrix, Rng, Tape, Var};
use crate::partition::LatentLaw;
use crate::regularizers::{
    corrupt, hoc_penalty, reg_first_order, reg_second_order, EpsilonSolve, RegConfig, RegKind, TapeModel,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_betas")]
    pub adam_betas: (f64, f64),
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "RegConfig::none")]
    pub reg: RegConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Number of generators `G_k` for the Lie regularizers; the bottleneck
    /// width when absent.
    #[serde(default)]
    pub generators: Option<usize>,
    /// Biases are zeroed at start and never updated.
    #[serde(default)]
    pub zero_bias: bool,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_runs() -> usize {
    1
}
fn default_val_fraction() -> f64 {
    0.2
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, reg: RegConfig) -> Self {
        Self {
            epochs,
            batch_size,
            lr: default_lr(),
            adam_betas: default_betas(),
            adam_eps: default_adam_eps(),
            reg,
            seed: 0,
            runs: default_runs(),
            val_fraction: default_val_fraction(),
            generators: None,
            zero_bias: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.runs == 0 {
            return bad("epochs, batch_size and runs must be >= 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be > 0");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if self.generators == Some(0) {
            return bad("generators must be >= 1");
        }
        self.reg.validate()
    }

    pub fn adam(&self) -> Adam {
        Adam {
            lr: self.lr,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: self.adam_eps,
        }
    }
}

/// Train, validation and test rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<Vec<f64>>,
    /// May be empty, in which case selection uses the training MSE.
    pub val: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
}

impl Split {
    /// Moves a seeded `val_fraction` share of `train` (at least one row when
    /// two or more are available) into the validation set.
    pub fn derive(mut train: Vec<Vec<f64>>, test: Vec<Vec<f64>>, val_fraction: f64, seed: u64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        Rng::new(seed).fork(0x5917).shuffle(&mut train);
        let n = train.len();
        let n_val = ((val_fraction * n as f64).round() as usize).clamp(usize::from(n >= 2), n - 1);
        let val = train.split_off(n - n_val);
        Ok(Self { train, val, test })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update of every parameter block.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState, hp: &Adam) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape("adam parameter/gradient/state block counts differ".into()));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::Shape("adam block sizes differ".into()));
        }
    }
    state.t += 1;
    let c1 = 1.0 - hp.beta1.powi(state.t as i32);
    let c2 = 1.0 - hp.beta2.powi(state.t as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.len() {
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= hp.lr * mhat / (vhat.sqrt() + hp.eps);
        }
    }
    Ok(())
}

/// Independent random streams of one run.
#[derive(Clone, Debug)]
pub struct Streams {
    pub shuffle: Rng,
    pub reg: Rng,
    pub noise: Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let root = Rng::new(seed);
        Self {
            shuffle: root.fork(1),
            reg: root.fork(2),
            noise: root.fork(3),
        }
    }
}

/// Loss node and its parts for one minibatch.
#[derive(Clone, Debug)]
pub struct LossParts {
    pub total: Var,
    /// Mean of `‖D(E(x̃)) − x‖²` over the batch.
    pub reconstruction: f64,
    /// λ-weighted regularizer value (0 when skipped).
    pub regularizer: f64,
    pub solve: Option<EpsilonSolve>,
}

/// Builds `mean_b ‖D(E(x̃_b)) − x_b‖² + R` on `tape`, with one regularizer
/// draw per call.
pub fn build_loss(
    tape: &mut Tape,
    tm: TapeModel<'_>,
    gs: &GeneratorSet,
    batch: &[Vec<f64>],
    reg: &RegConfig,
    streams: &mut Streams,
) -> Result<LossParts> {
    if batch.is_empty() {
        return Err(Error::Contract("empty minibatch".into()));
    }
    let inputs: Vec<Vec<f64>> = if reg.kind == RegKind::Denoise {
        batch
            .iter()
            .map(|x| corrupt(x, reg.corruption_std, &mut streams.noise))
            .collect()
    } else {
        batch.to_vec()
    };
    let x_in = tape.constant(Matrix::from_columns(&inputs)?);
    let target = tape.constant(Matrix::from_columns(batch)?);
    let z = encode_on_tape(tape, tm.model, tm.vars, x_in)?;
    let y = decode_on_tape(tape, tm.model, tm.vars, z)?;
    let diff = tape.sub(y, target)?;
    let sq = tape.sum_squares(diff);
    let rec = tape.scale(sq, 1.0 / batch.len() as f64);
    let reconstruction = tape.scalar(rec);

    let term = match reg.kind {
        RegKind::Lie1 | RegKind::Lie2 if reg.weight > 0.0 => {
            let zv = tape.value(z);
            let pool: Vec<Vec<f64>> = (0..zv.cols()).map(|j| zv.col(j)).collect();
            let law = LatentLaw::Mixture(&pool);
            let draw = if reg.kind == RegKind::Lie1 {
                reg_first_order(tape, tm, gs, reg, law, &mut streams.reg)?
            } else {
                reg_second_order(tape, tm, gs, reg, law, &mut streams.reg)?
            };
            draw.map(|t| (t.loss, Some(t.solve)))
        }
        RegKind::Hoc if reg.weight > 0.0 => {
            let x = &batch[streams.reg.below(batch.len())];
            Some((hoc_penalty(tape, tm, x, reg, &mut streams.reg)?.loss, None))
        }
        _ => None,
    };
    Ok(match term {
        Some((r, solve)) => {
            let regularizer = tape.scalar(r);
            LossParts {
                total: tape.add(rec, r)?,
                reconstruction,
                regularizer,
                solve,
            }
        }
        None => LossParts {
            total: rec,
            reconstruction,
            regularizer: 0.0,
            solve: None,
        },
    })
}

/// Mean per-coordinate squared reconstruction error.
pub fn reconstruction_mse(model: &AeModel, rows: &[Vec<f64>]) -> Result<f64> {
    if rows.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for x in rows {
        let y = model.reconstruct(x)?;
        total += y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    }
    Ok(total / rows.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub test_mse: f64,
    /// Mean minibatch loss, regularizer included.
    pub loss: f64,
    pub regularizer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRecord {
    pub step: usize,
    pub epsilon: Vec<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize, step: usize, message: String },
}

/// Equality ignores `wall_clock`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    /// Epoch of minimum validation MSE (earliest on ties).
    pub best_epoch: Option<usize>,
    pub final_test_mse: f64,
    pub epsilon_trace: Vec<EpsilonRecord>,
    #[serde(flatten)]
    pub status: RunStatus,
    /// Not serialized, so metric files stay byte-identical across reruns.
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl PartialEq for RunRecord {
    fn eq(&self, o: &Self) -> bool {
        self.method == o.method
            && self.seed == o.seed
            && self.epochs == o.epochs
            && self.best_epoch == o.best_epoch
            && self.final_test_mse.to_bits() == o.final_test_mse.to_bits()
            && self.epsilon_trace == o.epsilon_trace
            && self.status == o.status
    }
}

impl RunRecord {
    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }
}

/// Mutable views of the trainable blocks, in tape registration order.
fn param_blocks<'a>(model: &'a mut AeModel, gs: &'a mut GeneratorSet, biases: bool) -> Vec<&'a mut [f64]> {
    let mut blocks: Vec<&mut [f64]> = Vec::new();
    for Layer { weight, bias, .. } in model.layers_mut() {
        blocks.push(weight.data_mut());
        if biases {
            blocks.push(bias.as_mut_slice());
        }
    }
    if gs.learnable {
        for g in &mut gs.generators {
            blocks.push(g.data_mut());
        }
    }
    blocks
}

/// `Instant::now` panics on wasm32-unknown-unknown, so runs there record a
/// zero wall clock.
#[cfg(not(target_arch = "wasm32"))]
fn clock() -> Option<Instant> {
    Some(Instant::now())
}

#[cfg(target_arch = "wasm32")]
fn clock() -> Option<Instant> {
    None
}

/// Trains `model` and `gs` in place. On return both hold the parameters of
/// the best validation epoch. A non-finite loss or generator stops the run
/// with a `Diverged` status instead of an error.
pub fn train(model: &mut AeModel, gs: &mut GeneratorSet, split: &Split, cfg: &TrainConfig) -> Result<RunRecord> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if gs.dim() != model.input_dim() {
        return Err(Error::Config(format!(
            "generators are {}-dimensional, data is {}-dimensional",
            gs.dim(),
            model.input_dim()
        )));
    }
    let started = clock();
    if cfg.zero_bias {
        *model = model.zero_bias();
    }
    let train_biases = !cfg.zero_bias;
    let sizes: Vec<usize> = param_blocks(model, gs, train_biases).iter().map(|b| b.len()).collect();
    let mut adam = AdamState::new(&sizes);
    let hp = cfg.adam();
    let mut streams = Streams::new(cfg.seed);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut record = RunRecord {
        method: cfg.reg.kind.name().into(),
        seed: cfg.seed,
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
        final_test_mse: f64::NAN,
        epsilon_trace: Vec::new(),
        status: RunStatus::Completed,
        wall_clock: Duration::ZERO,
    };
    let mut best: Option<(f64, AeModel, GeneratorSet)> = None;
    let mut step = 0;
    'epochs: for epoch in 0..cfg.epochs {
        streams.shuffle.shuffle(&mut order);
        let (mut loss_sum, mut reg_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Vec<f64>> = chunk.iter().map(|&i| split.train[i].clone()).collect();
            let mut tape = Tape::new();
            let vars = model.register(&mut tape);
            let gens: Vec<Var> = gs
                .generators
                .iter()
                .map(|g| {
                    if gs.learnable {
                        tape.leaf(g.clone())
                    } else {
                        tape.constant(g.clone())
                    }
                })
                .collect();
            let tm = TapeModel {
                model: &*model,
                vars: &vars,
                generators: &gens,
            };
            let parts = build_loss(&mut tape, tm, gs, &batch, &cfg.reg, &mut streams)?;
            let value = tape.scalar(parts.total);
            if !value.is_finite() {
                record.status = RunStatus::Diverged {
                    epoch,
                    step,
                    message: format!("non-finite loss {value}"),
                };
                break 'epochs;
            }
            let grads = tape.backward(parts.total)?;
            let mut grad_blocks: Vec<Matrix> = Vec::with_capacity(sizes.len());
            for v in vars.all() {
                grad_blocks.push(grads.get(v.weight));
                if train_biases {
                    grad_blocks.push(grads.get(v.bias));
                }
            }
            if gs.learnable {
                grad_blocks.extend(gens.iter().map(|&g| grads.get(g)));
            }
            let grad_refs: Vec<&[f64]> = grad_blocks.iter().map(|m| m.data()).collect();
            adam_step(&mut param_blocks(model, gs, train_biases), &grad_refs, &mut adam, &hp)?;
            if !gs.is_finite() || !model.layers().all(|l| l.weight.is_finite()) {
                record.status = RunStatus::Diverged {
                    epoch,
                    step,
                    message: "non-finite parameters after update".into(),
                };
                break 'epochs;
            }
            if let Some(s) = parts.solve {
                record.epsilon_trace.push(EpsilonRecord {
                    step,
                    epsilon: s.epsilon,
                    residual: s.residual,
                });
            }
            loss_sum += value;
            reg_sum += parts.regularizer;
            batches += 1;
            step += 1;
        }
        let metrics = EpochMetrics {
            epoch,
            train_mse: reconstruction_mse(model, &split.train)?,
            val_mse: reconstruction_mse(model, &split.val)?,
            test_mse: reconstruction_mse(model, &split.test)?,
            loss: loss_sum / batches as f64,
            regularizer: reg_sum / batches as f64,
        };
        let select = if split.val.is_empty() {
            metrics.train_mse
        } else {
            metrics.val_mse
        };
        if select.is_finite() && best.as_ref().is_none_or(|(b, _, _)| select < *b) {
            best = Some((select, model.clone(), gs.clone()));
            record.best_epoch = Some(epoch);
            record.final_test_mse = metrics.test_mse;
        }
        record.epochs.push(metrics);
    }
    if let Some((_, m, g)) = best {
        *model = m;
        *gs = g;
    }
    record.wall_clock = started.map_or(Duration::ZERO, |t| t.elapsed());
    Ok(record)
}

/// Initial model and generators for run `run` of a config.
pub fn init_run(arch: &Architecture, cfg: &TrainConfig, run: usize) -> Result<(AeModel, GeneratorSet, TrainConfig)> {
    let seed = cfg.seed.wrapping_add(run as u64);
    let model = AeModel::init(arch, seed)?;
    let mut grng = Rng::new(seed).fork(4);
    let gs = GeneratorSet::random(cfg.generators.unwrap_or(arch.bottleneck()), arch.input_dim(), &mut grng)?;
    let mut run_cfg = cfg.clone();
    run_cfg.seed = seed;
    Ok((model, gs, run_cfg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub name: String,
    pub method: String,
    pub runs: Vec<RunRecord>,
    /// Mean and sample standard deviation of `final_test_mse` over the
    /// completed runs.
    pub mean: f64,
    pub std: f64,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub rows: Vec<SuiteRow>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One named configuration of a suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub name: String,
    pub train: TrainConfig,
}

/// Runs `cfg.runs` seeds of every entry on `workers` threads. Results are
/// ordered by entry then run, independent of scheduling.
pub fn run_suite(arch: &Architecture, entries: &[SuiteEntry], split: &Split, workers: usize) -> Result<SuiteResult> {
    if entries.is_empty() {
        return Err(Error::Config("suite needs at least one configuration".into()));
    }
    for e in entries {
        e.train.validate()?;
    }
    let jobs: Vec<(usize, usize)> = entries
        .iter()
        .enumerate()
        .flat_map(|(i, e)| (0..e.train.runs).map(move |r| (i, r)))
        .collect();
    let run_job = |&(i, r): &(usize, usize)| -> Result<RunRecord> {
        let (mut model, mut gs, cfg) = init_run(arch, &entries[i].train, r)?;
        train(&mut model, &mut gs, split, &cfg)
    };
    let records = execute(&jobs, workers, run_job)?;
    let mut rows: Vec<SuiteRow> = entries
        .iter()
        .map(|e| SuiteRow {
            name: e.name.clone(),
            method: e.train.reg.kind.name().into(),
            runs: Vec::new(),
            mean: f64::NAN,
            std: f64::NAN,
            failed: 0,
        })
        .collect();
    for (&(i, _), rec) in jobs.iter().zip(records) {
        rows[i].runs.push(rec);
    }
    for row in &mut rows {
        let ok: Vec<f64> = row
            .runs
            .iter()
            .filter(|r| !r.diverged() && r.final_test_mse.is_finite())
            .map(|r| r.final_test_mse)
            .collect();
        row.failed = row.runs.len() - ok.len();
        (row.mean, row.std) = mean_std(&ok);
    }
    Ok(SuiteResult { rows })
}

#[cfg(feature = "parallel")]
fn execute<J, T, F>(jobs: &[J], workers: usize, f: F) -> Result<Vec<T>>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> Result<T> + Sync,
{
    use rayon::prelude::*;
    if workers <= 1 {
        return jobs.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(&f).collect())
}

#[cfg(not(feature = "parallel"))]
fn execute<J, T, F>(jobs: &[J], _workers: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(&J) -> Result<T>,
{
    jobs.iter().map(f).collect()
}
