//! Supervised training: MAE loss, Adam, augmented curriculum minibatches.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_sample, AugmentConfig};
use crate::checkpoint::save_checkpoint;
use crate::curriculum::{
    per_landmark_validation_error, CurriculumState, DEFAULT_FLOOR_EPS, EPOCH_LENGTH,
};
use crate::dataset::{load_split, Sample};
use crate::error::{Error, Result};
use crate::landmarks::{LandmarkId, NUM_LANDMARKS};
use crate::model::{loss_and_grad, mae_with_grad, Regressor, RegressorSpec, OUTPUTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelPreset {
    Full,
    #[default]
    Desk,
    Tiny,
}

impl ModelPreset {
    pub fn spec(self, input: usize) -> RegressorSpec {
        match self {
            ModelPreset::Full => RegressorSpec {
                input_size: [input, input],
                ..RegressorSpec::full()
            },
            ModelPreset::Desk => RegressorSpec::desk(input),
            ModelPreset::Tiny => RegressorSpec::tiny(input),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from `learning_rate` to zero over the run.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub epoch_length: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Side of the square network input.
    pub input_size: usize,
    pub model: ModelPreset,
    /// Explicit architecture; overrides `model` when set.
    pub model_spec: Option<RegressorSpec>,
    pub augment: AugmentConfig,
    pub curriculum: bool,
    pub floor_eps: f64,
    /// Periodic checkpoint interval in iterations; 0 disables.
    pub checkpoint_every: u64,
    /// Dataset directory (with manifest) or a single sequence file.
    pub train_data: PathBuf,
    /// Defaults to the `val` split of `train_data` when unset.
    pub val_data: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Serial, bit-reproducible execution. The engine is single-threaded,
    /// so this is always honoured; the flag is recorded for provenance.
    pub reproducible: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            epoch_length: EPOCH_LENGTH as u64,
            batch_size: 16,
            learning_rate: 1e-4,
            lr_schedule: LrSchedule::Constant,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            input_size: 64,
            model: ModelPreset::Desk,
            model_spec: None,
            augment: AugmentConfig::default(),
            curriculum: true,
            floor_eps: DEFAULT_FLOOR_EPS,
            checkpoint_every: 1000,
            train_data: PathBuf::from("data"),
            val_data: None,
            out_dir: PathBuf::from("runs/desk"),
            reproducible: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epoch_length == 0 {
            return Err(Error::Config("epoch_length must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.adam_eps.is_nan()
            || self.adam_eps <= 0.0
        {
            return Err(Error::Config(
                "Adam betas must lie in [0, 1) and eps must be > 0".into(),
            ));
        }
        if !(self.floor_eps > 0.0 && self.floor_eps <= 1.0) {
            return Err(Error::Config(format!(
                "floor_eps must lie in (0, 1], got {}",
                self.floor_eps
            )));
        }
        self.augment.validate()?;
        let spec = self.spec();
        spec.validate()?;
        if spec.input_size != [self.input_size, self.input_size] {
            return Err(Error::Config(format!(
                "model_spec input {:?} differs from input_size {}",
                spec.input_size, self.input_size
            )));
        }
        Ok(())
    }

    pub fn spec(&self) -> RegressorSpec {
        self.model_spec
            .clone()
            .unwrap_or_else(|| self.model.spec(self.input_size))
    }

    pub fn lr_at(&self, iteration: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let f = iteration as f64 / self.iterations.max(1) as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * f).cos())
            }
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn from_config(n_params: usize, cfg: &TrainConfig) -> Self {
        Self::new(n_params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
    }
}

/// Mean absolute error over all `B×10×2` components. Absent landmarks
/// count through their `(0, 0)` targets.
pub fn mae_loss(pred: &[[f64; OUTPUTS]], target: &[[f64; OUTPUTS]]) -> Result<f64> {
    Ok(mae_with_grad(pred, target)?.0)
}

fn non_finite_report(model: &Regressor<f32>, grads: &[f32]) -> String {
    let mut out = String::new();
    for entry in model.layout() {
        let bad_p = model.params()[entry.offset..entry.offset + entry.len]
            .iter()
            .filter(|v| !v.is_finite())
            .count();
        let bad_g = grads
            .get(entry.offset..entry.offset + entry.len)
            .map_or(0, |g| g.iter().filter(|v| !v.is_finite()).count());
        if bad_p + bad_g > 0 {
            let _ = write!(
                out,
                "{}: {bad_p} non-finite params, {bad_g} non-finite grads; ",
                entry.name
            );
        }
    }
    if out.is_empty() {
        out.push_str("parameters finite; loss overflowed");
    }
    out
}

/// One Adam update on the MAE of `images` against `targets`. Returns the
/// pre-update loss.
pub fn train_step(
    model: &mut Regressor<f32>,
    opt: &mut Adam,
    images: &[&[f32]],
    targets: &[[f32; OUTPUTS]],
    lr: f64,
) -> Result<f64> {
    let (loss, grads) = loss_and_grad(model, images, targets)?;
    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            iteration: opt.steps(),
            diagnostic: non_finite_report(model, &grads),
        });
    }
    opt.step(model.params_mut(), &grads, lr);
    Ok(loss as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub iteration: u64,
    pub landmark_error: [f64; NUM_LANDMARKS],
    pub weight_entropy: f64,
}

impl EpochRecord {
    pub fn mean_error(&self) -> f64 {
        self.landmark_error.iter().sum::<f64>() / NUM_LANDMARKS as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Regressor<f32>,
    pub losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub curriculum: CurriculumState,
    /// Final checkpoint, when an output directory was given.
    pub checkpoint: Option<PathBuf>,
}

pub const TRAIN_LOG: &str = "train_log.csv";
pub const EPOCH_LOG: &str = "epochs.csv";
pub const EPOCH_ERROR_LOG: &str = "epoch_errors.csv";
pub const FINAL_CHECKPOINT: &str = "model_final.vnck";

/// Loads the datasets named in `cfg` and trains, writing logs and
/// checkpoints under `cfg.out_dir`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set = load_split(&cfg.train_data, "train", cfg.input_size)?;
    let val_set = match &cfg.val_data {
        Some(p) => load_split(p, "val", cfg.input_size)?,
        None => load_split(&cfg.train_data, "val", cfg.input_size)?,
    };
    train_on(cfg, &train_set, &val_set, Some(&cfg.out_dir))
}

fn checkpoint_name(iteration: u64) -> String {
    format!("model_{iteration:07}.vnck")
}

/// Training on in-memory samples. Validation (per-landmark error and
/// curriculum update) runs after every `epoch_length` iterations.
pub fn train_on(
    cfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let n = cfg.input_size;
    if let Some(s) = train_set
        .iter()
        .chain(val_set)
        .find(|s| s.image.width() != n || s.image.height() != n)
    {
        return Err(Error::Shape(format!(
            "sample {}#{} is {}x{}, expected {n}x{n}",
            s.subject,
            s.frame,
            s.image.width(),
            s.image.height()
        )));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sample_rng = init_rng.clone();
    sample_rng.set_stream(1);
    let mut aug_rng = init_rng.clone();
    aug_rng.set_stream(2);

    let mut model = Regressor::<f32>::build(&cfg.spec(), &mut init_rng)?;
    let mut opt = Adam::from_config(model.count_params(), cfg);
    let mut state = CurriculumState::uniform(train_set.len(), cfg.floor_eps);
    let views: Vec<_> = train_set.iter().map(|s| s.view).collect();

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("config.json"),
            serde_json::to_string_pretty(cfg)? + "\n",
        )?;
        fs::write(dir.join(TRAIN_LOG), "iteration,loss\n")?;
        fs::write(
            dir.join(EPOCH_LOG),
            "epoch,iteration,mean_error_px,weight_entropy\n",
        )?;
        fs::write(dir.join(EPOCH_ERROR_LOG), "epoch,landmark_id,error_px\n")?;
    }
    let mut loss_log = String::new();
    let mut losses = Vec::with_capacity(cfg.iterations as usize);
    let mut epochs = Vec::new();

    for it in 0..cfg.iterations {
        let picks = state.sample(cfg.batch_size, &mut sample_rng);
        let mut images = Vec::with_capacity(picks.len());
        let mut targets = Vec::with_capacity(picks.len());
        for &i in &picks {
            let s = &train_set[i];
            let (img, lms) = augment_sample(&s.image, &s.landmarks, &cfg.augment, &mut aug_rng);
            images.push(img.into_pixels());
            targets.push(lms.to_target().map(|v| v as f32));
        }
        let refs: Vec<&[f32]> = images.iter().map(Vec::as_slice).collect();
        let loss = train_step(&mut model, &mut opt, &refs, &targets, cfg.lr_at(it)).map_err(
            |e| match e {
                Error::NonFiniteLoss { diagnostic, .. } => Error::NonFiniteLoss {
                    iteration: it,
                    diagnostic,
                },
                other => other,
            },
        )?;
        losses.push(loss);
        let _ = writeln!(loss_log, "{},{loss}", it + 1);

        let done = it + 1;
        if done % cfg.epoch_length == 0 && !val_set.is_empty() {
            let errors = per_landmark_validation_error(&model, val_set)?;
            if cfg.curriculum {
                state.update(errors, &views);
            } else {
                state.per_landmark_error = errors;
            }
            let rec = EpochRecord {
                epoch: done / cfg.epoch_length,
                iteration: done,
                landmark_error: errors,
                weight_entropy: state.weight_entropy(),
            };
            if let Some(dir) = out_dir {
                append(&dir.join(TRAIN_LOG), &std::mem::take(&mut loss_log))?;
                append(
                    &dir.join(EPOCH_LOG),
                    &format!(
                        "{},{},{},{}\n",
                        rec.epoch,
                        rec.iteration,
                        rec.mean_error(),
                        rec.weight_entropy
                    ),
                )?;
                let mut rows = String::new();
                for (i, e) in errors.iter().enumerate() {
                    let _ = writeln!(rows, "{},{},{e}", rec.epoch, LandmarkId::from_index(i));
                }
                append(&dir.join(EPOCH_ERROR_LOG), &rows)?;
            }
            epochs.push(rec);
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0
                && done % cfg.checkpoint_every == 0
                && done != cfg.iterations
            {
                save_checkpoint(&dir.join(checkpoint_name(done)), &model, cfg, done)?;
            }
        }
    }

    let checkpoint = match out_dir {
        Some(dir) => {
            append(&dir.join(TRAIN_LOG), &loss_log)?;
            let path = dir.join(FINAL_CHECKPOINT);
            save_checkpoint(&path, &model, cfg, cfg.iterations)?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainOutcome {
        model,
        losses,
        epochs,
        curriculum: state,
        checkpoint,
    })
}

fn append(path: &Path, text: &str) -> Result<()> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new().append(true).open(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
