use std::any::Any;
use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{digest, ExperimentConfig};
use crate::adapter::{count_trainable_params, AdaptedModel, AdapterPlacement};
use crate::data::{
    load_image_folder, synth_transfer_pair, AugmentationSpec, Dataset, Preprocess, Split, TaskSplits,
};
use crate::error::{ForgeError, Result};
use crate::tensor::{DType, Rng, Scalar};
use crate::training::{evaluate, fit, select_trainables, TuneMode};
use crate::vit::{read_checkpoint, write_checkpoint, Module, VisionTransformer};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "PEFT_FORGE_THREADS";

/// Outcome of one seed of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub seed: u64,
    /// Row label within an ablation table.
    pub label: String,
    pub mode: String,
    pub position: String,
    pub rank: usize,
    pub init: String,
    pub scaling: String,
    /// Whether the adapter has its own layer norm.
    pub norm: bool,
    pub params: usize,
    /// Accuracy in percent.
    pub val_acc: f64,
    pub test_acc: f64,
    pub seconds: f64,
    pub epoch_losses: Vec<f64>,
}

/// Data for one run: target splits plus the source task used for pretraining.
pub struct PreparedData {
    pub source: TaskSplits,
    pub target: TaskSplits,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let pair = synth_transfer_pair(&Rng::new(cfg.data.seed), &cfg.data.synthetic)?;
    let target = match &cfg.data.folder {
        None => pair.target,
        Some(f) => {
            let train = load_image_folder(&f.train, Split::Train)?.dataset;
            let test = load_image_folder(&f.test, Split::Test)?.dataset;
            let val = match &f.val {
                Some(v) => load_image_folder(v, Split::Val)?.dataset,
                None => Dataset::new(Vec::new(), train.num_classes, Split::Val)?,
            };
            TaskSplits { train, val, test }
        }
    };
    Ok(PreparedData {
        source: pair.source,
        target,
    })
}

type Cache = Mutex<HashMap<String, Arc<dyn Any + Send + Sync>>>;

fn backbone_cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Drops every in-process pretrained backbone; disk caches are untouched.
pub fn clear_backbone_cache() {
    backbone_cache().lock().expect("cache lock").clear();
}

/// Key of the pretrained backbone a config asks for.
pub fn pretrain_key(cfg: &ExperimentConfig) -> String {
    let mut p = cfg.pretrain.clone();
    p.cache_dir = None;
    digest(&(&pretrain_backbone_config(cfg), &p, &cfg.data.seed, &cfg.data.synthetic.num_classes, &cfg.data.synthetic.n_train,
        &cfg.data.synthetic.image_size, &cfg.data.synthetic.noise, cfg.precision))
}

fn pretrain_backbone_config(cfg: &ExperimentConfig) -> crate::vit::BackboneConfig {
    crate::vit::BackboneConfig {
        drop_path_max: cfg.pretrain.drop_path_max,
        ..cfg.backbone.clone()
    }
}

fn train_backbone<T: Scalar>(cfg: &ExperimentConfig, source: &TaskSplits) -> Result<VisionTransformer<T>> {
    let mut rng = Rng::new(cfg.pretrain.seed);
    let backbone = VisionTransformer::new(pretrain_backbone_config(cfg), &mut rng)?;
    if cfg.pretrain.epochs == 0 {
        return Ok(backbone);
    }
    let mut model = AdaptedModel::new(backbone, None, source.train.num_classes, &mut rng)?;
    let prep = Preprocess::new(cfg.pretrain.normalization, AugmentationSpec::vtab(cfg.backbone.image_size));
    let hist = fit(&mut model, &source.train, &prep, &cfg.pretrain.train_config(), &mut rng)?;
    log::info!(
        "pretrained backbone: final loss {:.4}, source test accuracy {:.3}",
        hist.last().map_or(f64::NAN, |m| m.loss),
        evaluate(&model, &source.test, &prep)?
    );
    Ok(model.backbone)
}

/// The frozen backbone for `cfg`: loaded, cached, or pretrained on the synthetic source task.
pub fn pretrained_backbone<T: Scalar>(cfg: &ExperimentConfig, source: &TaskSplits) -> Result<VisionTransformer<T>> {
    let mut b = cached_backbone::<T>(cfg, source)?;
    b.config.drop_path_max = cfg.backbone.drop_path_max;
    Ok(b)
}

fn cached_backbone<T: Scalar>(cfg: &ExperimentConfig, source: &TaskSplits) -> Result<VisionTransformer<T>> {
    if let Some(path) = &cfg.pretrain.checkpoint {
        return load_backbone(cfg, path);
    }
    let key = format!("{}-{:?}", pretrain_key(cfg), T::DTYPE);
    let mut cache = backbone_cache().lock().expect("cache lock");
    if let Some(hit) = cache.get(&key).and_then(|b| b.downcast_ref::<VisionTransformer<T>>()) {
        return Ok(hit.clone());
    }
    let disk = cfg.pretrain.cache_dir.as_ref().map(|d| d.join(format!("backbone-{key}.ckpt")));
    let backbone = match &disk {
        Some(path) if path.exists() => load_backbone(cfg, path)?,
        _ => {
            let b = train_backbone::<T>(cfg, source)?;
            if let Some(path) = &disk {
                std::fs::create_dir_all(path.parent().expect("joined path"))?;
                write_checkpoint(path, serde_json::to_value(&b.config)?, &b.params())?;
            }
            b
        }
    };
    cache.insert(key, Arc::new(backbone.clone()));
    Ok(backbone)
}

fn load_backbone<T: Scalar>(cfg: &ExperimentConfig, path: &Path) -> Result<VisionTransformer<T>> {
    let data = read_checkpoint::<T>(path)?;
    let mut backbone = VisionTransformer::new(cfg.backbone.clone(), &mut Rng::new(0))?;
    let mut stored: HashMap<String, _> = data.tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    for p in backbone.params_mut() {
        let st = stored
            .remove(&p.name)
            .ok_or_else(|| ForgeError::Checkpoint(format!("{}: missing `{}`", path.display(), p.name)))?;
        if st.tensor.shape() != p.tensor.shape() {
            return Err(ForgeError::Checkpoint(format!("{}: `{}` has the wrong shape", path.display(), p.name)));
        }
        p.tensor = st.tensor;
    }
    Ok(backbone)
}

fn describe(placement: Option<&AdapterPlacement>) -> (String, usize, String, String, bool) {
    match placement {
        Some(p) => (
            p.adapter.position.label().to_string(),
            p.adapter.rank,
            p.adapter.init.label().to_string(),
            p.adapter.scaling.to_string(),
            p.adapter.use_layernorm,
        ),
        None => ("none".into(), 0, "none".into(), "none".into(), false),
    }
}

fn run_seed<T: Scalar>(cfg: &ExperimentConfig, data: &PreparedData, backbone: &VisionTransformer<T>, seed: u64, label: &str) -> Result<ResultRecord> {
    let start = Instant::now();
    let placement = cfg.placement()?;
    let rng = Rng::new(seed);
    let classes = data.target.train.num_classes;
    let mut model = AdaptedModel::new(backbone.clone(), placement.clone(), classes, &mut rng.derive(1))?;
    select_trainables(&mut model, cfg.train.mode)?;
    let params = model.num_trainable();
    if cfg.train.mode != TuneMode::Full {
        let closed = count_trainable_params(&cfg.backbone, placement.as_ref(), classes);
        if closed != params {
            return Err(ForgeError::contract(format!(
                "enumerated {params} trainable parameters, closed form gives {closed}"
            )));
        }
    }
    let prep = cfg.preprocess();
    let merged;
    let train_set = if cfg.include_val_in_train && !data.target.val.is_empty() {
        merged = data.target.train.merged(&data.target.val)?;
        &merged
    } else {
        &data.target.train
    };
    let hist = fit(&mut model, train_set, &prep, &cfg.train, &mut rng.derive(2))?;
    let val_acc = if data.target.val.is_empty() {
        f64::NAN
    } else {
        100.0 * evaluate(&model, &data.target.val, &prep)?
    };
    let test_acc = 100.0 * evaluate(&model, &data.target.test, &prep)?;
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        model.save(&dir.join(format!("model-seed{seed}.ckpt")))?;
        if placement.is_some() {
            model.save_adapter(&dir.join(format!("adapter-seed{seed}.ckpt")))?;
        }
    }
    let (position, rank, init, scaling, norm) = describe(placement.as_ref());
    Ok(ResultRecord {
        config_hash: cfg.hash(),
        seed,
        label: label.to_string(),
        mode: cfg.train.mode.to_string(),
        position,
        rank,
        init,
        scaling,
        norm,
        params,
        val_acc,
        test_acc,
        seconds: start.elapsed().as_secs_f64(),
        epoch_losses: hist.iter().map(|m| m.loss).collect(),
    })
}

/// Worker pool honoring [`THREADS_ENV`].
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| ForgeError::config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| ForgeError::config(e.to_string()))
}

fn run_typed<T: Scalar>(cfg: &ExperimentConfig, data: &PreparedData, label: &str) -> Result<Vec<ResultRecord>> {
    let backbone = pretrained_backbone::<T>(cfg, &data.source)?;
    let pool = thread_pool()?;
    pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&s| run_seed(cfg, data, &backbone, s, label))
            .collect()
    })
}

/// Runs every seed of `cfg` on already prepared data.
pub fn run_with_data(cfg: &ExperimentConfig, data: &PreparedData, label: &str) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    match cfg.precision {
        DType::F32 => run_typed::<f32>(cfg, data, label),
        DType::F64 => run_typed::<f64>(cfg, data, label),
    }
}

/// Builds data, obtains the pretrained backbone and trains one model per seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    run_with_data(cfg, &data, &cfg.name)
}
