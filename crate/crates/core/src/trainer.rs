//! Training and evaluation loops plus the binary checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! "AIDC" | u32 version | u64 json_len | json | num_tensors × blob
//! blob = u32 name_len | name | u32 ndim | ndim × u64 dim | [u8; 8] checksum | f64 data
//! ```
//!
//! The checksum is the first eight bytes of SHA-256 over the blob's data bytes.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AidError, Result};
use crate::losses::{total_loss_node, CentroidSet};
use crate::metrics::{count_illuminants, map_mae, per_illuminant_ae, EvalReport, ImageRecord, ACTIVE_THRESHOLD};
use crate::model::{AidModel, Decomposer, ModelConfig};
use crate::synth::Scene;
use crate::tensor::{Adam, AdamConfig, AdamState, Graph, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AIDC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epoch `e` (0-based) trains at `lr · lr_decay^e`.
    pub lr_decay: f64,
    pub seed: u64,
    pub model: ModelConfig,
    /// Weight of the centroid term; 0 disables it.
    pub centroid_weight: f64,
    pub centroid_path: Option<PathBuf>,
    pub dataset_path: Option<PathBuf>,
    /// Log every this many optimizer steps; 0 disables step logging.
    pub log_every: usize,
    /// Write a checkpoint every this many epochs; 0 disables periodic saves.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 1,
            lr: 1e-3,
            lr_decay: 1.0,
            seed: 0,
            model: ModelConfig::default(),
            centroid_weight: 1.0,
            centroid_path: None,
            dataset_path: None,
            log_every: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(AidError::Config("batch size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(AidError::Config(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(AidError::Config(format!("lr decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        if !(self.centroid_weight >= 0.0 && self.centroid_weight.is_finite()) {
            return Err(AidError::Config("centroid weight must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Number of completed epochs.
    pub epoch: usize,
    pub model: AidModel,
    pub adam: Adam,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: TrainConfig,
    epoch: usize,
    rng_seed: u64,
    rng_word_pos: u128,
    adam_step: u64,
    num_tensors: usize,
}

fn checksum(data: &[u8]) -> [u8; 8] {
    let d = Sha256::digest(data);
    d[..8].try_into().expect("digest has at least 8 bytes")
}

fn push_blob(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    let data: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    out.extend_from_slice(&checksum(&data));
    out.extend_from_slice(&data);
}

impl Checkpoint {
    pub fn fresh(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = AidModel::new(config.model.clone())?;
        let adam = Adam::new(config.adam(), &model.params.store);
        Ok(Checkpoint {
            rng_seed: config.seed,
            rng_word_pos: 0,
            epoch: 0,
            model,
            adam,
            config,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let store = &self.model.params.store;
        let header = CheckpointHeader {
            config: self.config.clone(),
            epoch: self.epoch,
            rng_seed: self.rng_seed,
            rng_word_pos: self.rng_word_pos,
            adam_step: self.adam.step_count(),
            num_tensors: 3 * store.len(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in store.iter() {
            push_blob(&mut out, &p.name, &p.value);
        }
        for (p, s) in store.iter().zip(&self.adam.states) {
            push_blob(&mut out, &format!("adam.m/{}", p.name), &s.first_moment);
            push_blob(&mut out, &format!("adam.v/{}", p.name), &s.second_moment);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(AidError::format(path, "bad magic bytes (not an AIDC checkpoint)"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(AidError::format(
                path,
                format!("unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"),
            ));
        }
        let len = r.u64("header length")? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(len, "header")?)
            .map_err(|e| AidError::format(path, format!("bad header json: {e}")))?;
        header.config.validate().map_err(|e| AidError::format(path, e.to_string()))?;

        let mut model = AidModel::new(header.config.model.clone())?;
        let n = model.params.store.len();
        if header.num_tensors != 3 * n {
            return Err(AidError::format(
                path,
                format!("{} tensors listed, model needs {}", header.num_tensors, 3 * n),
            ));
        }
        let mut blobs = Vec::with_capacity(header.num_tensors);
        for _ in 0..header.num_tensors {
            blobs.push(r.blob()?);
        }
        if r.pos != bytes.len() {
            return Err(AidError::format(path, "trailing bytes after last tensor"));
        }
        let ids: Vec<_> = model.params.store.ids().collect();
        let mut states = Vec::with_capacity(n);
        for (i, id) in ids.into_iter().enumerate() {
            let name = model.params.store.get(id).name.clone();
            let expect = |blob: &(String, Tensor), want: &str| -> Result<Tensor> {
                if blob.0 != want {
                    return Err(AidError::format(path, format!("tensor '{}' where '{want}' expected", blob.0)));
                }
                Ok(blob.1.clone())
            };
            let value = expect(&blobs[i], &name)?;
            let m = expect(&blobs[n + 2 * i], &format!("adam.m/{name}"))?;
            let v = expect(&blobs[n + 2 * i + 1], &format!("adam.v/{name}"))?;
            let shape = model.params.store.value(id).shape().to_vec();
            for t in [&value, &m, &v] {
                if t.shape() != shape {
                    return Err(AidError::format(path, format!("tensor '{name}' has shape {:?}, expected {shape:?}", t.shape())));
                }
            }
            model.params.store.set_value(id, value)?;
            states.push(AdamState {
                first_moment: m,
                second_moment: v,
                step: header.adam_step,
            });
        }
        let adam = Adam {
            config: header.config.adam(),
            states,
        };
        Ok(Checkpoint {
            config: header.config,
            epoch: header.epoch,
            model,
            adam,
            rng_seed: header.rng_seed,
            rng_word_pos: header.rng_word_pos,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            AidError::format(self.path, format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn blob(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32("tensor name length")? as usize;
        let name = String::from_utf8(self.take(len, "tensor name")?.to_vec())
            .map_err(|_| AidError::format(self.path, "tensor name is not UTF-8"))?;
        let ndim = self.u32("tensor rank")? as usize;
        if ndim > 8 {
            return Err(AidError::format(self.path, format!("tensor '{name}' has implausible rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64("tensor shape")? as usize);
        }
        let sum: [u8; 8] = self.take(8, "checksum")?.try_into().expect("8 bytes");
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| AidError::format(self.path, format!("tensor '{name}' shape overflows")))?;
        let data = self.take(count, &format!("tensor '{name}'"))?;
        if checksum(data) != sum {
            return Err(AidError::format(self.path, format!("checksum mismatch in tensor '{name}'")));
        }
        let values = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(&shape, values).map_err(|e| AidError::format(self.path, e.to_string()))?;
        Ok((name, t))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| AidError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| AidError::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}

/// One line of the metrics history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub loss: f64,
    pub mixed: f64,
    pub centroid: f64,
    pub val_mae: Option<f64>,
}

/// Optional side channels of a training run.
#[derive(Default)]
pub struct TrainHooks<'a> {
    pub val: Option<&'a [&'a Scene]>,
    pub checkpoint_dir: Option<&'a Path>,
    pub history_path: Option<&'a Path>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub mixed: f64,
    pub centroid: f64,
}

/// Forward, loss and backward of one scene; gradients accumulate into the store.
pub fn accumulate_scene(
    model: &mut AidModel,
    scene: &Scene,
    centroids: &CentroidSet,
    centroid_weight: f64,
) -> Result<StepLosses> {
    let mut g = Graph::new();
    let nodes = model.forward_graph(&mut g, &scene.image, scene.domain_id)?;
    let loss = total_loss_node(&mut g, nodes.loss_inputs(), scene, centroids, centroid_weight)?;
    let losses = StepLosses {
        total: g.value(loss.total).item(),
        mixed: g.value(loss.mixed).item(),
        centroid: g.value(loss.centroid).item(),
    };
    if !losses.total.is_finite() {
        return Err(AidError::Numeric(format!("non-finite loss {} on scene {}", losses.total, scene.id)));
    }
    let grads = g.backward(loss.total)?;
    model.params.store.accumulate(&grads)?;
    if !model.params.store.grads_finite() {
        return Err(AidError::Numeric(format!("non-finite gradient on scene {}", scene.id)));
    }
    Ok(losses)
}

fn check_centroids(config: &TrainConfig, centroids: &CentroidSet) -> Result<()> {
    if centroids.k() != config.model.k {
        return Err(AidError::Config(format!(
            "centroid set has K = {} but the model has K = {}",
            centroids.k(),
            config.model.k
        )));
    }
    Ok(())
}

/// Continues `ckpt` until `ckpt.config.epochs` epochs are complete.
pub fn resume(
    mut ckpt: Checkpoint,
    train: &[&Scene],
    centroids: &CentroidSet,
    hooks: &TrainHooks,
) -> Result<(Checkpoint, Vec<HistoryRecord>)> {
    let config = ckpt.config.clone();
    config.validate()?;
    check_centroids(&config, centroids)?;
    if train.is_empty() {
        return Err(AidError::Argument("training split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ckpt.rng_seed);
    rng.set_word_pos(ckpt.rng_word_pos);
    let mut history = Vec::new();
    let mut history_file = match hooks.history_path {
        Some(p) => Some(
            fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| AidError::io(p, e))?,
        ),
        None => None,
    };
    let mut step = ckpt.adam.step_count() as usize;

    while ckpt.epoch < config.epochs {
        ckpt.adam.config.lr = config.lr * config.lr_decay.powi(ckpt.epoch as i32);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut sums = StepLosses::default();
        for batch in order.chunks(config.batch_size) {
            let store = &mut ckpt.model.params.store;
            store.zero_grad();
            for &i in batch {
                let l = accumulate_scene(&mut ckpt.model, train[i], centroids, config.centroid_weight)?;
                sums.total += l.total;
                sums.mixed += l.mixed;
                sums.centroid += l.centroid;
            }
            if batch.len() > 1 {
                let s = 1.0 / batch.len() as f64;
                for p in ckpt.model.params.store.iter_mut() {
                    p.grad.data_mut().iter_mut().for_each(|v| *v *= s);
                }
            }
            ckpt.adam.step(&mut ckpt.model.params.store)?;
            step += 1;
            if config.log_every > 0 && step % config.log_every == 0 {
                log::info!("epoch {} step {step}: running loss {:.5}", ckpt.epoch + 1, sums.total / step as f64);
            }
        }
        ckpt.epoch += 1;
        ckpt.rng_word_pos = rng.get_word_pos();
        let n = train.len() as f64;
        let val_mae = match hooks.val {
            Some(v) if !v.is_empty() => Some(evaluate(&ckpt.model, v, centroids)?.mae.mean),
            _ => None,
        };
        let rec = HistoryRecord {
            epoch: ckpt.epoch,
            loss: sums.total / n,
            mixed: sums.mixed / n,
            centroid: sums.centroid / n,
            val_mae,
        };
        log::info!(
            "epoch {}: loss {:.5} (mixed {:.5}, centroid {:.5}) val MAE {:?}",
            rec.epoch,
            rec.loss,
            rec.mixed,
            rec.centroid,
            rec.val_mae
        );
        if let (Some(f), Some(p)) = (history_file.as_mut(), hooks.history_path) {
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(f, "{line}").map_err(|e| AidError::io(p, e))?;
        }
        history.push(rec);
        if let Some(dir) = hooks.checkpoint_dir {
            if config.checkpoint_every > 0 && ckpt.epoch % config.checkpoint_every == 0 {
                save_checkpoint(&dir.join(format!("epoch_{:04}.aidc", ckpt.epoch)), &ckpt)?;
            }
        }
    }
    Ok((ckpt, history))
}

/// Trains from a fresh initialization.
pub fn train(
    config: TrainConfig,
    train: &[&Scene],
    centroids: &CentroidSet,
    hooks: &TrainHooks,
) -> Result<(Checkpoint, Vec<HistoryRecord>)> {
    check_centroids(&config, centroids)?;
    resume(Checkpoint::fresh(config)?, train, centroids, hooks)
}

/// Per-scene record of one decomposition.
pub fn evaluate_scene(model: &impl Decomposer, scene: &Scene, centroids: &CentroidSet) -> Result<ImageRecord> {
    let d = model.decompose_image(&scene.image, scene.domain_id)?;
    Ok(ImageRecord {
        scene_id: scene.id,
        n_illuminants: scene.n_illuminants(),
        mae: map_mae(&d.fused, &scene.gt_map()?)?,
        predicted_count: count_illuminants(&d.weights, ACTIVE_THRESHOLD).0,
        illuminant_ae: per_illuminant_ae(&d, scene, centroids)?,
    })
}

pub fn evaluate(model: &impl Decomposer, scenes: &[&Scene], centroids: &CentroidSet) -> Result<EvalReport> {
    if scenes.is_empty() {
        return Err(AidError::Argument("evaluation split is empty".into()));
    }
    let records = scenes
        .iter()
        .map(|s| evaluate_scene(model, s, centroids))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_records(records)
}

/// Parameters only, for comparisons that ignore optimizer state.
pub fn param_bytes(store: &ParamStore) -> Vec<u8> {
    store
        .iter()
        .flat_map(|p| p.value.data().iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}
