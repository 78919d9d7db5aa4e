//! Training loops with per-epoch validation and best-checkpoint selection.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use candle_core::{DType, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cache::{Cache, WindowRecord};
use super::config::RunConfig;
use crate::baselines::{Regressor, RegressorConfig};
use crate::conditioning::{Frontend, FrontendConfig};
use crate::diffusion::{cosine_schedule, pad_frames, Denoiser, DenoiserConfig, NoiseDraw, NoiseSchedule, SequenceBatch};
use crate::frames::Frames;
use crate::nn::{scalar, Dropout, ParamStore};
use crate::pca::PcaBasis;
use crate::rvq_ce::{combined_loss, FrozenCodebooks, LatentMap};
use crate::split::Split;
use crate::{Error, Result};

const MODEL_FILE: &str = "model.safetensors";
const FRONTEND_FILE: &str = "frontend.safetensors";
const META_FILE: &str = "checkpoint.json";
const LOG_FILE: &str = "log.csv";

/// What a checkpoint predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelKind {
    Diffusion { steps: usize, rvq_ce: bool },
    Regressor,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Diffusion { steps, rvq_ce: false } => write!(f, "diffusion_n{steps}"),
            ModelKind::Diffusion { steps, rvq_ce: true } => write!(f, "diffusion_ce_n{steps}"),
            ModelKind::Regressor => f.write_str("regressor"),
        }
    }
}

impl ModelKind {
    /// Every checkpoint a run config asks for, regressor first.
    pub fn planned(config: &RunConfig) -> Vec<ModelKind> {
        let mut out = vec![ModelKind::Regressor];
        out.extend(config.diffusion_steps.iter().map(|&steps| ModelKind::Diffusion { steps, rvq_ce: false }));
        out.extend(config.ce_steps.iter().map(|&steps| ModelKind::Diffusion { steps, rvq_ce: true }));
        out
    }
}

pub enum Network {
    Diffusion(Denoiser),
    Regressor(Regressor),
}

impl Network {
    pub fn params(&self) -> &ParamStore {
        match self {
            Network::Diffusion(d) => d.params(),
            Network::Regressor(r) => r.params(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub steps: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainReport {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,steps,train_loss,val_loss\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.steps, e.train_loss, val));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub denoiser: Option<DenoiserConfig>,
    pub regressor: Option<RegressorConfig>,
    pub frontend: FrontendConfig,
    pub run: RunConfig,
    pub codec_hash: String,
    pub pca_train_hash: String,
    pub report: TrainReport,
}

/// A trained model with the frontend it was trained against.
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub network: Network,
    pub frontend: Frontend,
}

impl Checkpoint {
    pub fn name(&self) -> String {
        self.meta.kind.to_string()
    }

    pub fn schedule(&self) -> Result<Option<NoiseSchedule>> {
        match self.meta.kind {
            ModelKind::Diffusion { steps, .. } => Ok(Some(cosine_schedule(steps)?)),
            ModelKind::Regressor => Ok(None),
        }
    }

    /// Writes `<dir>/<name>/` with weights, metadata and the loss log.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let dir = dir.join(self.name());
        std::fs::create_dir_all(&dir)?;
        self.network.params().save(&dir.join(MODEL_FILE))?;
        if self.meta.frontend.trainable {
            self.frontend.params().save(&dir.join(FRONTEND_FILE))?;
        }
        std::fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(&self.meta)?)?;
        std::fs::write(dir.join(LOG_FILE), self.meta.report.log_csv())?;
        Ok(())
    }

    pub fn load(dir: &Path, kind: ModelKind) -> Result<Self> {
        let dir = dir.join(kind.to_string());
        let meta_path = dir.join(META_FILE);
        if !meta_path.exists() {
            return Err(Error::Missing(format!("checkpoint {}", dir.display())));
        }
        let meta: CheckpointMeta = serde_json::from_slice(&std::fs::read(&meta_path)?)?;
        let network = match (meta.kind, &meta.denoiser, &meta.regressor) {
            (ModelKind::Diffusion { .. }, Some(c), _) => Network::Diffusion(Denoiser::new(c.clone(), DType::F32)?),
            (ModelKind::Regressor, _, Some(c)) => Network::Regressor(Regressor::new(c.clone(), DType::F32)?),
            _ => return Err(Error::cache(&meta_path, "model config missing for checkpoint kind")),
        };
        network.params().load(&dir.join(MODEL_FILE))?;
        let frontend = Frontend::new(meta.frontend.clone(), DType::F32)?;
        if meta.frontend.trainable {
            frontend.params().load(&dir.join(FRONTEND_FILE))?;
        }
        Ok(Self { meta, network, frontend })
    }

    pub fn check_compatible(&self, cache: &Cache) -> Result<()> {
        if self.meta.codec_hash != cache.manifest.codec_hash || self.meta.pca_train_hash != cache.manifest.pca_train_hash {
            return Err(Error::validation(
                "checkpoint",
                format!("{} was trained against a different codec or PCA basis", self.name()),
            ));
        }
        Ok(())
    }
}

/// Conditioning inputs of the training windows.
enum CondInputs {
    /// Precomputed rows from a frozen frontend.
    Frozen(Vec<Frames>),
    /// Branch window tensors, encoded inside the graph.
    Joint(Vec<Vec<Tensor>>),
}

/// Conditioning rows for a window from a frozen frontend.
pub fn conditioning(frontend: &Frontend, record: &WindowRecord, frame_rate: f64) -> Result<Frames> {
    Ok(frontend.build(&record.grid, &record.window, frame_rate)?.h)
}

fn cond_inputs(frontend: &Frontend, records: &[&WindowRecord], frame_rate: f64) -> Result<CondInputs> {
    if frontend.config().trainable {
        records
            .iter()
            .map(|r| {
                let times = crate::conditioning::codec_frame_times(r.window.frames(), frame_rate, r.window.start);
                frontend.window_tensors(&r.grid, &times)
            })
            .collect::<Result<_>>()
            .map(CondInputs::Joint)
    } else {
        records
            .iter()
            .map(|r| conditioning(frontend, r, frame_rate))
            .collect::<Result<_>>()
            .map(CondInputs::Frozen)
    }
}

impl CondInputs {
    fn batch(&self, frontend: &Frontend, idx: &[usize], frames: usize, dtype: DType) -> Result<Tensor> {
        match self {
            CondInputs::Frozen(rows) => pad_frames(&idx.iter().map(|&i| &rows[i]).collect::<Vec<_>>(), dtype),
            CondInputs::Joint(windows) => {
                let parts = idx
                    .iter()
                    .map(|&i| {
                        let h = frontend.encode(&windows[i])?;
                        let t = h.dims()[0];
                        Ok(h.pad_with_zeros(0, 0, frames - t)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Tensor::stack(&parts, 0)?.to_dtype(dtype)?)
            }
        }
    }
}

struct Objective<'a> {
    kind: ModelKind,
    network: &'a Network,
    frontend: &'a Frontend,
    schedule: Option<NoiseSchedule>,
    latent: Option<LatentMap>,
    books: Option<FrozenCodebooks>,
    config: &'a RunConfig,
    frame_rate: f64,
}

impl Objective<'_> {
    fn loss(
        &self,
        records: &[&WindowRecord],
        cond: &CondInputs,
        idx: &[usize],
        noise: &mut ChaCha8Rng,
        dropout: &mut Dropout,
    ) -> Result<Tensor> {
        let dtype = self.network.params().dtype();
        let targets: Vec<&Frames> = idx.iter().map(|&i| &records[i].x0).collect();
        let masks: Vec<&[bool]> = idx.iter().map(|&i| records[i].mask()).collect();
        let batch = SequenceBatch::new(&targets, &masks, self.frame_rate, dtype)?;
        let h = cond.batch(self.frontend, idx, batch.frames(), dtype)?;
        match self.network {
            Network::Regressor(r) => r.loss(&batch, &h, dropout),
            Network::Diffusion(d) => {
                let schedule = self.schedule.as_ref().expect("diffusion objective has a schedule");
                let draw = NoiseDraw::sample(schedule, batch.x0.dims(), noise, dtype)?;
                let eps = d.eps_loss(&batch, &h, schedule, &draw, dropout)?;
                let ModelKind::Diffusion { rvq_ce: true, .. } = self.kind else {
                    return Ok(eps.loss);
                };
                let codes: Vec<_> = idx.iter().map(|&i| &records[i].codes).collect();
                let combined = combined_loss(
                    &eps,
                    || eps.x0_hat(schedule, &draw),
                    self.latent.as_ref().expect("CE objective has a latent map"),
                    &codes,
                    &batch.mask,
                    self.books.as_ref().expect("CE objective has codebooks"),
                    &self.config.aux_loss(),
                )?;
                Ok(combined.total)
            }
        }
    }

    /// Mean objective over fixed draws; the same value for the same weights.
    fn validation(&self, records: &[&WindowRecord], cond: &CondInputs) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(3);
        let draws = if self.schedule.is_some() { self.config.val_draws } else { 1 };
        let order: Vec<usize> = (0..draws).flat_map(|_| 0..records.len()).collect();
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(self.config.batch_size) {
            let loss = self.loss(records, cond, idx, &mut rng, &mut Dropout::eval())?;
            total += scalar(&loss)?;
            batches += 1;
        }
        Ok(total / batches as f64)
    }
}

fn non_finite(step: usize, what: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step,
            detail: format!("{what} = {value}"),
        })
    }
}

/// Training and validation windows with their conditioning inputs, prepared
/// once and shared by every model of a run.
pub struct TrainingData<'a> {
    pub train: Vec<&'a WindowRecord>,
    pub val: Vec<&'a WindowRecord>,
    frontend: FrontendConfig,
    frame_rate: f64,
    train_cond: CondInputs,
    val_cond: CondInputs,
}

impl<'a> TrainingData<'a> {
    pub fn new(train: Vec<&'a WindowRecord>, val: Vec<&'a WindowRecord>, config: &RunConfig, frame_rate: f64) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::Degenerate("training needs train and validation windows".into()));
        }
        let frontend = Frontend::new(config.frontend(), DType::F32)?;
        Ok(Self {
            train_cond: cond_inputs(&frontend, &train, frame_rate)?,
            val_cond: cond_inputs(&frontend, &val, frame_rate)?,
            frontend: frontend.config().clone(),
            frame_rate,
            train,
            val,
        })
    }

    /// The cache's train and validation splits.
    pub fn from_cache(cache: &'a Cache, config: &RunConfig) -> Result<Self> {
        Self::new(
            cache.split(Split::Train).collect(),
            cache.split(Split::Validation).collect(),
            config,
            cache.frame_rate(),
        )
    }
}

/// Train one model.
///
/// Validation runs every `val_every` epochs and after the last one; the
/// weights of the validated epoch with the lowest loss are kept.
pub fn train_on(
    data: &TrainingData,
    basis: &PcaBasis,
    codec: &crate::codec::Codec,
    config: &RunConfig,
    kind: ModelKind,
    val_every: usize,
) -> Result<Checkpoint> {
    config.validate()?;
    if data.frontend != config.frontend() {
        return Err(Error::validation("frontend", "training data was prepared for another frontend config"));
    }
    let (train, val) = (data.train.as_slice(), data.val.as_slice());
    let frame_rate = data.frame_rate;
    let frontend = Frontend::new(data.frontend.clone(), DType::F32)?;
    let cond_dim = frontend.config().cond_dim();
    let (network, denoiser_cfg, regressor_cfg) = match kind {
        ModelKind::Regressor => {
            let c = RegressorConfig {
                seed: config.seed ^ 0x5eed,
                ..config.regressor(cond_dim)
            };
            (Network::Regressor(Regressor::new(c.clone(), DType::F32)?), None, Some(c))
        }
        ModelKind::Diffusion { .. } => {
            let c = config.denoiser(cond_dim);
            (Network::Diffusion(Denoiser::new(c.clone(), DType::F32)?), Some(c), None)
        }
    };
    let (schedule, latent, books) = match kind {
        ModelKind::Diffusion { steps, rvq_ce } => (
            Some(cosine_schedule(steps)?),
            if rvq_ce { Some(LatentMap::new(basis, DType::F32)?) } else { None },
            if rvq_ce { Some(FrozenCodebooks::new(codec.stack(), DType::F32)?) } else { None },
        ),
        ModelKind::Regressor => (None, None, None),
    };
    let objective = Objective {
        kind,
        network: &network,
        frontend: &frontend,
        schedule,
        latent,
        books,
        config,
        frame_rate,
    };
    let (train_cond, val_cond) = (&data.train_cond, &data.val_cond);

    let mut vars: Vec<Var> = network.params().vars();
    if frontend.config().trainable {
        vars.extend(frontend.params().vars());
    }
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: config.weight_decay,
            ..ParamsAdamW::default()
        },
    )?;
    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(s);
        rng
    };
    let (mut order_rng, mut noise_rng, mut drop_rng) = (stream(0), stream(1), stream(2));
    let dropout_p = match &network {
        Network::Diffusion(d) => d.config().dropout,
        Network::Regressor(r) => r.config().dropout,
    };

    let initial_val_loss = objective.validation(val, val_cond)?;
    non_finite(0, "initial validation loss", initial_val_loss)?;
    let snapshot = || -> Result<(HashMap<String, Tensor>, Option<HashMap<String, Tensor>>)> {
        Ok((
            network.params().snapshot()?,
            if frontend.config().trainable { Some(frontend.params().snapshot()?) } else { None },
        ))
    };
    let mut best = (0usize, initial_val_loss, snapshot()?);
    let mut epochs = Vec::new();
    let mut steps = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();
    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        let mut count = 0;
        let mut stop = false;
        for idx in order.chunks(config.batch_size) {
            let mut dropout = Dropout::train(dropout_p, &mut drop_rng);
            let loss = objective.loss(train, train_cond, idx, &mut noise_rng, &mut dropout)?;
            let value = scalar(&loss)?;
            non_finite(steps + 1, "training loss", value)?;
            opt.backward_step(&loss)?;
            steps += 1;
            sum += value;
            count += 1;
            if config.max_steps.is_some_and(|m| steps >= m) {
                stop = true;
                break;
            }
        }
        let last = stop || epoch == config.epochs;
        let val_loss = if epoch % val_every.max(1) == 0 || last {
            let v = objective.validation(val, val_cond)?;
            non_finite(steps, "validation loss", v)?;
            if v < best.1 {
                best = (epoch, v, snapshot()?);
            }
            Some(v)
        } else {
            None
        };
        let train_loss = sum / count as f64;
        log::info!("{kind} epoch {epoch} steps {steps} train {train_loss:.5} val {val_loss:?}");
        epochs.push(EpochLog {
            epoch,
            steps,
            train_loss,
            val_loss,
        });
        if stop {
            break 'epochs;
        }
    }
    let (best_epoch, best_val_loss, (weights, frontend_weights)) = best;
    network.params().load_map(&weights)?;
    if let Some(w) = frontend_weights {
        frontend.params().load_map(&w)?;
    }
    Ok(Checkpoint {
        meta: CheckpointMeta {
            kind,
            denoiser: denoiser_cfg,
            regressor: regressor_cfg,
            frontend: frontend.config().clone(),
            run: config.clone(),
            codec_hash: codec.content_hash(),
            pca_train_hash: basis.train_hash().to_string(),
            report: TrainReport {
                initial_val_loss,
                epochs,
                best_epoch,
                best_val_loss,
            },
        },
        network,
        frontend,
    })
}

/// Train on the cache's train split, validating on its validation split.
pub fn train(cache: &Cache, config: &RunConfig, kind: ModelKind) -> Result<Checkpoint> {
    let data = TrainingData::from_cache(cache, config)?;
    train_on(&data, &cache.basis, &cache.codec, config, kind, 1)
}
