//! Synthetic training runs and parameter audits.
//!
//! Every run is a pure function of its [`ExperimentSpec`]: data, initial
//! weights, batch order and dropout masks all come from streams derived from
//! `spec.seed`, so repeating a spec reproduces the loss series bit for bit.

pub mod data;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::{save_layer, write_json};
use crate::error::{PhmError, Result};
use crate::graph::Graph;
use crate::models::{ModelConfig, PhmTransformer};
use crate::optim::{grad_norm, zero_grad, OptimizerSpec};
use crate::phm::PhmParams;
use crate::tensor::{Param, Tensor};

use data::{RegressionData, SeqPair};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Rotation3d,
    Hamilton,
    CopySeq,
    ReverseSeq,
}

impl Task {
    pub fn is_sequence(self) -> bool {
        matches!(self, Task::CopySeq | Task::ReverseSeq)
    }

    /// Input and output width of the regression tasks.
    pub fn regression_dims(self) -> Option<(usize, usize)> {
        match self {
            Task::Rotation3d => Some((3, 3)),
            Task::Hamilton => Some((4, 4)),
            _ => None,
        }
    }
}

fn default_batch() -> usize {
    64
}

fn default_one() -> usize {
    1
}

fn default_dataset() -> usize {
    1024
}

fn default_seq_len() -> usize {
    6
}

fn default_eval_interval() -> usize {
    100
}

fn default_eval_size() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub task: Task,
    pub n: usize,
    /// Regression input width; fixed by the task when omitted.
    #[serde(default)]
    pub d: Option<usize>,
    /// Regression output width; fixed by the task when omitted.
    #[serde(default)]
    pub k: Option<usize>,
    /// Sequence tasks only; defaults to [`ModelConfig::toy`].
    #[serde(default)]
    pub model: Option<ModelConfig>,
    pub optimizer: OptimizerSpec,
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub log_interval: usize,
    /// Regression tasks: keep the rule matrices at their initial values.
    /// For `hamilton` this fixes them to the quaternion basis.
    #[serde(default)]
    pub freeze_rule: bool,
    #[serde(default)]
    pub bias: bool,
    #[serde(default = "default_dataset")]
    pub dataset_size: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
    #[serde(default = "default_eval_size")]
    pub eval_size: usize,
    /// Stop once the batch loss falls below this value.
    #[serde(default)]
    pub target_loss: Option<f64>,
    /// Sequence tasks: stop once greedy token accuracy reaches this value.
    #[serde(default)]
    pub target_accuracy: Option<f64>,
}

impl ExperimentSpec {
    fn base(task: Task, n: usize, optimizer: OptimizerSpec, steps: usize) -> Self {
        Self {
            task,
            n,
            d: None,
            k: None,
            model: None,
            optimizer,
            steps,
            batch_size: default_batch(),
            seed: 0,
            log_interval: default_one(),
            freeze_rule: false,
            bias: false,
            dataset_size: default_dataset(),
            seq_len: default_seq_len(),
            eval_interval: default_eval_interval(),
            eval_size: default_eval_size(),
            target_loss: None,
            target_accuracy: None,
        }
    }

    /// `d = k = n = 3`, Adam 1e-2, 5000 steps, batch 64.
    pub fn rotation3d() -> Self {
        Self::base(Task::Rotation3d, 3, OptimizerSpec::adam(1e-2), 5000)
    }

    /// `d = k = n = 4`, Adam 1e-2, 5000 steps, batch 64.
    pub fn hamilton() -> Self {
        Self::base(Task::Hamilton, 4, OptimizerSpec::adam(1e-2), 5000)
    }

    pub fn copy_seq(n: usize) -> Self {
        let mut spec = Self::base(Task::CopySeq, n, OptimizerSpec::adam(1e-3), 3000);
        spec.batch_size = 16;
        spec.log_interval = 10;
        spec.target_accuracy = Some(0.995);
        spec
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.clone().unwrap_or_else(|| ModelConfig::toy(self.n))
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        let (d, k) = self.task.regression_dims()?;
        Some((self.d.unwrap_or(d), self.k.unwrap_or(k)))
    }

    pub fn validate(&self) -> Result<()> {
        let contract = |m: String| Err(PhmError::Contract(m));
        if self.steps == 0 || self.batch_size == 0 || self.log_interval == 0 {
            return contract("steps, batch_size and log_interval must be positive".into());
        }
        if self.task.is_sequence() {
            if self.d.is_some() || self.k.is_some() || self.freeze_rule || self.bias {
                return contract("d, k, freeze_rule and bias apply to regression tasks only".into());
            }
            let config = self.model_config();
            if config.n != self.n {
                return contract(format!("model n={} disagrees with spec n={}", config.n, self.n));
            }
            config.validate()?;
            if self.seq_len == 0 || self.seq_len + 1 > config.max_len {
                return contract(format!("seq_len {} does not fit max_len {}", self.seq_len, config.max_len));
            }
            if config.vocab <= data::FIRST_CONTENT_TOKEN {
                return contract(format!("vocab {} has no content tokens", config.vocab));
            }
            if self.eval_interval == 0 || self.eval_size == 0 {
                return contract("eval_interval and eval_size must be positive".into());
            }
        } else {
            if self.model.is_some() || self.target_accuracy.is_some() {
                return contract("model and target_accuracy apply to sequence tasks only".into());
            }
            let (d, k) = self.dims().expect("regression task");
            if Some((d, k)) != self.task.regression_dims() {
                return contract(format!("{:?} is defined for fixed dims, got d={d} k={k}", self.task));
            }
            crate::phm::check_divisible(self.n, d, k)?;
            if self.freeze_rule && self.task == Task::Hamilton && self.n != 4 {
                return contract("a frozen quaternion rule needs n=4".into());
            }
            if self.dataset_size == 0 {
                return contract("dataset_size must be positive".into());
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec_hash: String,
    pub series: Vec<LogRow>,
    pub steps_run: usize,
    /// Full-dataset MSE (regression) or eval-set cross-entropy (sequences).
    pub final_loss: Option<f64>,
    /// Max abs difference between the learned `H` and the generating map.
    pub h_max_err: Option<f64>,
    /// Greedy token accuracy on the eval set.
    pub accuracy: Option<f64>,
    pub checkpoint: Option<PathBuf>,
}

impl RunRecord {
    pub fn losses(&self) -> Vec<f64> {
        self.series.iter().map(|r| r.loss).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for row in &self.series {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `run.csv`, `spec.json` and `record.json` into `dir`.
    pub fn persist(&self, dir: &Path, spec: &ExperimentSpec) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(&dir.join("run.csv"))?;
        write_json(&dir.join("spec.json"), spec)?;
        write_json(&dir.join("record.json"), self)
    }
}

fn csv_err(e: csv::Error) -> PhmError {
    PhmError::Format(format!("csv: {e}"))
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("training diverged at step {step}: {cause}")]
    Diverged {
        step: usize,
        cause: PhmError,
        record: Box<RunRecord>,
    },
    #[error(transparent)]
    Phm(#[from] PhmError),
}

#[derive(Clone, Debug)]
pub enum TrainedModel {
    Layer(PhmParams),
    Transformer(Box<PhmTransformer>),
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub record: RunRecord,
    pub model: TrainedModel,
    /// Generating map of a regression task, `k×d`.
    pub truth: Option<Tensor>,
}

/// Independent seed streams derived from the spec seed.
fn stream(seed: u64, k: u64) -> crate::Rng {
    let mut rng = crate::rng(seed);
    rng.set_stream(k);
    rng
}

const DATA: u64 = 1;
const INIT: u64 = 2;
const BATCH: u64 = 3;
const EVAL: u64 = 4;
const DROPOUT: u64 = 5;

/// Trains the model `spec` describes. With `out`, the record, spec and final
/// checkpoint are written there, including after divergence.
pub fn run_experiment(spec: &ExperimentSpec, out: Option<&Path>) -> std::result::Result<RunOutput, ExperimentError> {
    spec.validate()?;
    let result = if spec.task.is_sequence() {
        run_sequence(spec)
    } else {
        run_regression(spec)
    };
    match result {
        Ok(mut output) => {
            if let Some(dir) = out {
                std::fs::create_dir_all(dir).map_err(PhmError::from)?;
                let stem = dir.join("checkpoint");
                match &output.model {
                    TrainedModel::Layer(layer) => save_layer(&stem, layer)?,
                    TrainedModel::Transformer(model) => model.save(&stem)?,
                }
                output.record.checkpoint = Some(stem.with_extension("bin"));
                output.record.persist(dir, spec)?;
            }
            Ok(output)
        }
        Err(ExperimentError::Diverged { step, cause, record }) => {
            if let Some(dir) = out {
                record.persist(dir, spec)?;
            }
            Err(ExperimentError::Diverged { step, cause, record })
        }
        Err(e) => Err(e),
    }
}

fn regression_data(spec: &ExperimentSpec) -> RegressionData {
    let seed = stream(spec.seed, DATA).gen();
    match spec.task {
        Task::Rotation3d => data::gen_rotation_dataset(seed, spec.dataset_size),
        Task::Hamilton => data::gen_hamilton_dataset(seed, spec.dataset_size),
        _ => unreachable!("regression task"),
    }
}

fn regression_model(spec: &ExperimentSpec, rng: &mut crate::Rng) -> Result<PhmParams> {
    let (d, k) = spec.dims().expect("regression task");
    if spec.freeze_rule && spec.task == Task::Hamilton {
        let blocks = std::array::from_fn(|_| Tensor::new(vec![1, 1], vec![rng.gen_range(-0.5..0.5)]).expect("1×1"));
        return PhmParams::from_quaternion(&blocks);
    }
    let layer = PhmParams::random(spec.n, d, k, spec.bias, rng)?;
    if spec.freeze_rule {
        layer.set_rule_trainable(false);
    }
    Ok(layer)
}

struct Trainer {
    series: Vec<LogRow>,
    start: Instant,
    hash: String,
}

impl Trainer {
    fn new(spec: &ExperimentSpec) -> Self {
        Self {
            series: Vec::new(),
            start: Instant::now(),
            hash: spec.hash(),
        }
    }

    fn log(&mut self, spec: &ExperimentSpec, step: usize, loss: f64, grad_norm: f64) {
        if step.is_multiple_of(spec.log_interval) || step == 1 || step == spec.steps {
            self.series.push(LogRow {
                step,
                loss,
                grad_norm,
                wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
            });
        }
    }

    fn record(&self, steps_run: usize) -> RunRecord {
        RunRecord {
            spec_hash: self.hash.clone(),
            series: self.series.clone(),
            steps_run,
            ..RunRecord::default()
        }
    }

    fn diverged(&self, step: usize, cause: PhmError) -> ExperimentError {
        ExperimentError::Diverged {
            step,
            cause,
            record: Box::new(self.record(step.saturating_sub(1))),
        }
    }
}

/// Backward pass and optimizer update shared by both task kinds.
fn update(
    g: &Graph,
    loss: crate::graph::Var,
    params: &[Param],
    opt: &mut crate::optim::Optimizer,
) -> Result<(f64, f64)> {
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(PhmError::NonFinite("loss"));
    }
    g.backward(loss)?;
    let norm = grad_norm(params);
    if !norm.is_finite() {
        return Err(PhmError::NonFinite("gradient"));
    }
    opt.step(params)?;
    zero_grad(params);
    Ok((value, norm))
}

fn run_regression(spec: &ExperimentSpec) -> std::result::Result<RunOutput, ExperimentError> {
    let data = regression_data(spec);
    let layer = regression_model(spec, &mut stream(spec.seed, INIT))?;
    let params = layer.parameters();
    let mut opt = spec.optimizer.build();
    let mut batch_rng = stream(spec.seed, BATCH);
    let mut trainer = Trainer::new(spec);
    let mut steps_run = 0;

    for step in 1..=spec.steps {
        let ids: Vec<usize> = (0..spec.batch_size).map(|_| batch_rng.gen_range(0..data.len())).collect();
        let (x, y) = data.batch(&ids);
        let attempt = (|| {
            let mut g = Graph::new();
            let xv = g.constant(x);
            let pred = layer.forward(&mut g, xv)?;
            let loss = g.mse(pred, &y)?;
            update(&g, loss, &params, &mut opt)
        })();
        let (loss, norm) = attempt.map_err(|e| trainer.diverged(step, e))?;
        trainer.log(spec, step, loss, norm);
        steps_run = step;
        if spec.target_loss.is_some_and(|t| loss < t) {
            break;
        }
    }

    let pred = layer.apply(&data.inputs)?;
    let final_loss = pred
        .data()
        .iter()
        .zip(data.targets.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.numel() as f64;
    let mut record = trainer.record(steps_run);
    record.final_loss = Some(final_loss);
    record.h_max_err = Some(layer.build_h().max_abs_diff(&data.truth)?);
    Ok(RunOutput {
        record,
        model: TrainedModel::Layer(layer),
        truth: Some(data.truth),
    })
}

/// Greedy token accuracy and teacher-forced cross-entropy over `pairs`.
pub fn evaluate_sequences(model: &PhmTransformer, pairs: &[SeqPair]) -> Result<(f64, f64)> {
    let src: Vec<Vec<usize>> = pairs.iter().map(|p| p.src.clone()).collect();
    let (dec_in, dec_out): (Vec<_>, Vec<_>) = pairs.iter().map(SeqPair::decoder_io).unzip();
    let steps = dec_out[0].len();
    let decoded = model.greedy_decode(&src, steps)?;
    let mut correct = 0;
    let mut total = 0;
    for (pred, want) in decoded.iter().zip(&dec_out) {
        total += want.len();
        correct += want.iter().enumerate().filter(|&(j, t)| pred.get(j) == Some(t)).count();
    }
    let mut g = Graph::new();
    let logits = model.forward(&mut g, &src, &dec_in, None)?;
    let targets: Vec<usize> = dec_out.concat();
    let ce = g.cross_entropy(logits, &targets)?;
    Ok((correct as f64 / total as f64, g.value(ce).item()))
}

fn run_sequence(spec: &ExperimentSpec) -> std::result::Result<RunOutput, ExperimentError> {
    let config = spec.model_config();
    let reverse = spec.task == Task::ReverseSeq;
    let model = PhmTransformer::new(config.clone(), &mut stream(spec.seed, INIT))?;
    let eval = data::gen_copy_dataset(stream(spec.seed, EVAL).gen(), config.vocab, spec.seq_len, spec.eval_size, reverse);
    let params = model.parameters();
    let mut opt = spec.optimizer.build();
    let mut batch_rng = stream(spec.seed, DATA);
    let mut drop_rng = stream(spec.seed, DROPOUT);
    let mut trainer = Trainer::new(spec);
    let mut steps_run = 0;

    for step in 1..=spec.steps {
        let pairs: Vec<SeqPair> = (0..spec.batch_size)
            .map(|_| data::sample_pair(&mut batch_rng, config.vocab, spec.seq_len, reverse))
            .collect();
        let src: Vec<Vec<usize>> = pairs.iter().map(|p| p.src.clone()).collect();
        let (dec_in, dec_out): (Vec<_>, Vec<_>) = pairs.iter().map(SeqPair::decoder_io).unzip();
        let targets = dec_out.concat();
        let attempt = (|| {
            let mut g = Graph::new();
            let rng = (config.dropout > 0.0).then_some(&mut drop_rng);
            let logits = model.forward(&mut g, &src, &dec_in, rng)?;
            let loss = g.cross_entropy(logits, &targets)?;
            update(&g, loss, &params, &mut opt)
        })();
        let (loss, norm) = attempt.map_err(|e| trainer.diverged(step, e))?;
        trainer.log(spec, step, loss, norm);
        steps_run = step;
        if spec.target_loss.is_some_and(|t| loss < t) {
            break;
        }
        if step % spec.eval_interval == 0 {
            let (acc, _) = evaluate_sequences(&model, &eval)?;
            log::debug!("step {step}: loss {loss:.4e}, eval accuracy {acc:.4}");
            if spec.target_accuracy.is_some_and(|t| acc >= t) {
                break;
            }
        }
    }

    let (acc, ce) = evaluate_sequences(&model, &eval)?;
    let mut record = trainer.record(steps_run);
    record.final_loss = Some(ce);
    record.accuracy = Some(acc);
    Ok(RunOutput {
        record,
        model: TrainedModel::Transformer(Box::new(model)),
        truth: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSpec {
    /// Base configuration; its `n` is replaced by each entry of `ns`.
    pub model: ModelConfig,
    pub ns: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub n: usize,
    pub params: usize,
    /// `100 · (params / params(n=1) − 1)`; negative means fewer parameters.
    pub change_pct: f64,
}

/// Non-embedding parameter counts for each `n`, relative to `n = 1`.
pub fn param_audit(base: &ModelConfig, ns: &[usize]) -> Result<Vec<AuditRow>> {
    let with_n = |n| ModelConfig { n, ..base.clone() };
    let baseline = with_n(1).non_embedding_params()? as f64;
    ns.iter()
        .map(|&n| {
            let cfg = with_n(n);
            cfg.validate()?;
            let params = cfg.non_embedding_params()?;
            Ok(AuditRow {
                n,
                params,
                change_pct: 100.0 * (params as f64 / baseline - 1.0),
            })
        })
        .collect()
}
