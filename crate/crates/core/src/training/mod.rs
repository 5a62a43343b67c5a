//! Supervised training on synthetic pairs, online fine-tuning on unpaired
//! rainy images, and evaluation.

mod eval;
mod online;

pub use eval::{evaluate, evaluate_predictions, EvalReport, EvalRow};
pub use online::{finetune_online, FinetuneReport, PseudoLabelStore};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::image::{pyramid_build, Image, ImageError};
use crate::metrics::{self, MetricError, SsimParams};
use crate::network::{CollaborativeModel, ForwardOutput, ModelError, MsccMode};
use crate::nn::Bound;
use crate::optim::{adam_step, AdamState};
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("invalid training configuration: {0}")]
    Config(String),

    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize, loss: f64 },

    #[error("online fine-tuning needs at least 2 real images, got {0}")]
    TooFewRealImages(usize),

    #[error("crop {crop} does not fit image {h}x{w}")]
    CropTooLarge { crop: usize, h: usize, w: usize },

    #[error("stopped by epoch callback: {0}")]
    Stopped(String),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Metric(#[from] MetricError),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Image(#[from] ImageError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Optimization and loss hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Epochs (0-based) at which the learning rate is divided by `lr_drop_factor`.
    pub lr_drops: Vec<usize>,
    pub lr_drop_factor: f64,
    pub epochs: usize,
    pub batch: usize,
    pub crop: usize,
    /// Background loss weights for the bottom, middle and top streams.
    pub alphas: [f64; 3],
    /// Half- and quarter-scale constraint weights.
    pub betas: [f64; 2],
    /// Weight of the rain-histogram divergence during fine-tuning.
    pub lambda: f64,
    pub epoch_real: usize,
    pub seed: u64,
    /// Fine-tune only the bottom stream.
    pub freeze_auxiliary: bool,
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            lr: 5e-4,
            lr_drops: vec![300, 400],
            lr_drop_factor: 10.0,
            epochs: 500,
            batch: 12,
            crop: 128,
            alphas: [1.0, 1.0, 1.0],
            betas: [0.05, 0.001],
            lambda: 1e-4,
            epoch_real: 30,
            seed: 0,
            freeze_auxiliary: false,
        }
    }

    /// Desk-scale settings: the paper schedule with small crops and batches.
    pub fn toy() -> Self {
        TrainConfig {
            batch: 4,
            crop: 32,
            ..TrainConfig::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.crop == 0 || !self.crop.is_multiple_of(8) {
            return bad(format!("crop {} must be a positive multiple of 8", self.crop));
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if self.lr.is_nan() || self.lr < 0.0 || self.lr_drop_factor.is_nan() || self.lr_drop_factor <= 0.0 {
            return bad("learning rate must be ≥ 0 and drop factor > 0".into());
        }
        let weights = self.alphas.iter().chain(&self.betas).chain([&self.lambda]);
        if weights.clone().any(|w| w.is_nan() || *w < 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        Ok(())
    }
}

/// Learning rate for `epoch` (0-based): divided by the drop factor once for
/// every drop epoch already reached.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let passed = cfg.lr_drops.iter().filter(|&&d| epoch >= d).count();
    cfg.lr / cfg.lr_drop_factor.powi(passed as i32)
}

/// A synthetic training or evaluation pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub name: String,
    pub rainy: Image,
    pub clean: Image,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "epoch\tloss\tpsnr\tssim\tlr";

impl EpochMetrics {
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.4}\t{:.6}\t{:e}",
            self.epoch, self.loss, self.psnr, self.ssim, self.lr
        )
    }
}

/// Pyramid supervision for the auxiliary heads, batched like the input.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleTargets<T: Scalar> {
    pub band_half: Tensor<T>,
    pub top_quarter: Tensor<T>,
}

impl<T: Scalar> ScaleTargets<T> {
    pub fn from_clean(clean: &[Image]) -> Result<Self> {
        let mut bands = Vec::with_capacity(clean.len());
        let mut tops = Vec::with_capacity(clean.len());
        for img in clean {
            let p = pyramid_build(img)?;
            bands.push(p.band_half.to_tensor::<T>());
            tops.push(p.top_quarter.to_tensor::<T>());
        }
        Ok(ScaleTargets {
            band_half: Tensor::stack(&bands)?,
            top_quarter: Tensor::stack(&tops)?,
        })
    }
}

/// Objective on a synthetic batch: the collaborative term over every stream
/// the model has, plus the enabled scale constraints.
pub fn synthetic_objective<T: Scalar>(
    tape: &mut Tape<T>,
    model: &CollaborativeModel,
    bound: &Bound,
    rainy: Var,
    clean: Var,
    targets: &ScaleTargets<T>,
    cfg: &TrainConfig,
) -> Result<(Var, ForwardOutput)> {
    let out = model.forward(tape, bound, rainy)?;
    let params = SsimParams::default();
    let s = tape.shape(clean);
    let fitted = params.fitted(s.h(), s.w());
    let alphas: Vec<f64> = out.streams.iter().map(|&i| cfg.alphas[i]).collect();
    let collab = metrics::loss_collaborative(tape, &out.backgrounds, clean, &alphas, &fitted)?;
    let mscc = match model.config.mscc {
        MsccMode::None => None,
        MsccMode::FullScale => {
            let mut terms = Vec::new();
            if let Some(t) = metrics::scale_term(tape, &out.half, clean, &params)? {
                terms.push(tape.scalar_mul(t, T::of_f64(cfg.betas[0])));
            }
            if let Some(t) = metrics::scale_term(tape, &out.quarter, clean, &params)? {
                terms.push(tape.scalar_mul(t, T::of_f64(cfg.betas[1])));
            }
            match terms[..] {
                [] => None,
                [a] => Some(a),
                [a, b] => Some(tape.add(a, b)?),
                _ => unreachable!("two scale groups"),
            }
        }
        _ => Some(metrics::loss_mscc(
            tape,
            &out.half,
            &out.quarter,
            &targets.band_half,
            &targets.top_quarter,
            cfg.betas,
            &params,
        )?),
    };
    let loss = metrics::loss_synthetic(tape, collab, mscc)?;
    Ok((loss, out))
}

fn random_crop(rng: &mut ChaCha8Rng, h: usize, w: usize, crop: usize) -> Result<(usize, usize)> {
    if h < crop || w < crop {
        return Err(TrainError::CropTooLarge { crop, h, w });
    }
    Ok((rng.random_range(0..=h - crop), rng.random_range(0..=w - crop)))
}

/// Collects gradients of every parameter, `None` where nothing flowed.
fn gradients(tape: &Tape<f32>, bound: &Bound, loss: Var, skip: &[bool]) -> Result<Vec<Option<Tensor<f32>>>> {
    let mut grads = tape.backward(loss)?;
    Ok(bound
        .vars()
        .iter()
        .zip(skip)
        .map(|(&v, &s)| if s { None } else { grads.take(v) })
        .collect())
}

fn batch_quality(tape: &Tape<f32>, estimate: Var, clean: &[Image]) -> Result<(f64, f64)> {
    let (mut psnr, mut ssim) = (0.0, 0.0);
    for (n, gt) in clean.iter().enumerate() {
        let est = Image::from_tensor(tape.value(estimate), n)?.clamped();
        psnr += metrics::psnr(&est, gt)?.min(100.0);
        ssim += metrics::ssim_images(&est, gt)?;
    }
    Ok((psnr, ssim))
}

/// Runs `cfg.epochs` epochs of supervised training. `on_epoch` sees every
/// epoch's metrics together with the current model and optimizer state.
pub fn train_supervised(
    model: &mut CollaborativeModel,
    optimizer: &mut AdamState<f32>,
    data: &[Pair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &CollaborativeModel, &AdamState<f32>) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::Empty("training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let no_skip = vec![false; model.params.len()];
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut psnr_sum, mut ssim_sum, mut seen, mut steps) = (0.0, 0.0, 0.0, 0, 0);
        for chunk in order.chunks(cfg.batch) {
            let mut rainy = Vec::with_capacity(chunk.len());
            let mut clean = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let pair = &data[i];
                let (top, left) = random_crop(&mut rng, pair.clean.height(), pair.clean.width(), cfg.crop)?;
                let mut o = pair.rainy.to_rgb().crop(top, left, cfg.crop, cfg.crop)?;
                let mut b = pair.clean.to_rgb().crop(top, left, cfg.crop, cfg.crop)?;
                if rng.random_bool(0.5) {
                    o = o.flip_horizontal();
                    b = b.flip_horizontal();
                }
                rainy.push(o);
                clean.push(b);
            }
            let targets = ScaleTargets::from_clean(&clean)?;
            let o = Tensor::stack(&rainy.iter().map(Image::to_tensor).collect::<Vec<_>>())?;
            let b = Tensor::stack(&clean.iter().map(Image::to_tensor).collect::<Vec<_>>())?;

            let mut tape = Tape::<f32>::new();
            let bound = model.params.bind(&mut tape, true);
            let ov = tape.constant(o);
            let bv = tape.constant(b);
            let (loss, out) = synthetic_objective(&mut tape, model, &bound, ov, bv, &targets, cfg)?;
            let value = tape.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch: epoch + 1,
                    step,
                    loss: value,
                });
            }
            let grads = gradients(&tape, &bound, loss, &no_skip)?;
            adam_step(&mut model.params, &grads, optimizer, lr)?;

            let (p, s) = batch_quality(&tape, out.background(), &clean)?;
            loss_sum += value;
            psnr_sum += p;
            ssim_sum += s;
            seen += clean.len();
            steps += 1;
            step += 1;
        }
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            loss: loss_sum / steps as f64,
            psnr: psnr_sum / seen as f64,
            ssim: ssim_sum / seen as f64,
            lr,
        };
        log::info!("{}", metrics.log_line());
        on_epoch(&metrics, model, optimizer)?;
        log.push(metrics);
    }
    Ok(log)
}
