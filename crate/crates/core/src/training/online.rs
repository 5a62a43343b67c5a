use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gradients, random_crop, Result, TrainConfig, TrainError};
use crate::image::{save_image, Image, ImageError};
use crate::metrics::{self, HistogramKlParams};
use crate::network::CollaborativeModel;
use crate::optim::{adam_step, AdamState};
use crate::tensor::{Tape, Tensor};

/// Current pseudo ground truth for every real image.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelStore {
    ids: Vec<String>,
    labels: Vec<Image>,
    epoch: usize,
    rewrites: usize,
}

impl PseudoLabelStore {
    /// Labels every image with the model's full-resolution output.
    pub fn initialize(model: &CollaborativeModel, ids: Vec<String>, images: &[Image]) -> Result<Self> {
        if ids.len() != images.len() {
            return Err(TrainError::Config(format!(
                "{} ids for {} images",
                ids.len(),
                images.len()
            )));
        }
        let labels = images
            .iter()
            .map(|img| model.derain(img))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(PseudoLabelStore {
            ids,
            labels,
            epoch: 0,
            rewrites: 0,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[Image] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Epoch that produced the current labels; 0 for the initial labels.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Number of overwrites since initialization.
    pub fn rewrites(&self) -> usize {
        self.rewrites
    }

    /// Replaces every label at once. Returns the mean absolute change.
    pub fn overwrite(&mut self, labels: Vec<Image>, epoch: usize) -> Result<f64> {
        if labels.len() != self.labels.len() {
            return Err(TrainError::Config(format!(
                "{} labels for a store of {}",
                labels.len(),
                self.labels.len()
            )));
        }
        let (mut change, mut count) = (0.0, 0usize);
        for (old, new) in self.labels.iter().zip(&labels) {
            if !old.same_dims(new) {
                return Err(ImageError::Dimensions(format!(
                    "label {}x{}x{} replaced by {}x{}x{}",
                    old.channels(),
                    old.height(),
                    old.width(),
                    new.channels(),
                    new.height(),
                    new.width()
                ))
                .into());
            }
            change += old
                .data()
                .iter()
                .zip(new.data())
                .map(|(a, b)| (a - b).abs() as f64)
                .sum::<f64>();
            count += old.data().len();
        }
        self.labels = labels;
        self.epoch = epoch;
        self.rewrites += 1;
        Ok(change / count.max(1) as f64)
    }

    /// Writes one PPM per label plus a `manifest.tsv` of `id  path  epoch`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|source| ImageError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut manifest = String::new();
        for (id, label) in self.ids.iter().zip(&self.labels) {
            let path: PathBuf = dir.join(format!("{id}.ppm"));
            save_image(label, &path)?;
            let _ = writeln!(manifest, "{id}\t{}\t{}", path.display(), self.epoch);
        }
        let path = dir.join("manifest.tsv");
        fs::write(&path, manifest).map_err(|source| ImageError::Io { path, source })?;
        Ok(())
    }
}

/// Per-epoch history of online fine-tuning.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FinetuneReport {
    /// Mean content term over the steps of each epoch.
    pub content_means: Vec<f64>,
    /// Mean total loss over the steps of each epoch.
    pub loss_means: Vec<f64>,
    /// Mean per-pixel L1 between successive pseudo labels.
    pub label_change: Vec<f64>,
    /// Store rewrite count after each epoch.
    pub rewrites: Vec<usize>,
}

/// Self-supervised fine-tuning on unpaired rainy images.
///
/// Each epoch takes `ceil(n / batch)` gradient steps on random crops of the
/// rainy images paired with the same crop of their current labels, then
/// relabels every image and overwrites the store. The rain reference for
/// image `i` is a crop of `O_j − B̂_j` for a random `j ≠ i`.
pub fn finetune_online(
    model: &mut CollaborativeModel,
    optimizer: &mut AdamState<f32>,
    real: &[Image],
    store: &mut PseudoLabelStore,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &PseudoLabelStore, &CollaborativeModel) -> Result<()>,
) -> Result<FinetuneReport> {
    cfg.validate()?;
    if real.len() < 2 {
        return Err(TrainError::TooFewRealImages(real.len()));
    }
    if store.len() != real.len() {
        return Err(TrainError::Config(format!(
            "store holds {} labels for {} images",
            store.len(),
            real.len()
        )));
    }
    let real: Vec<Image> = real.iter().map(Image::to_rgb).collect();
    for (img, label) in real.iter().zip(store.labels()) {
        if !img.same_dims(label) {
            return Err(ImageError::Dimensions(format!(
                "label {}x{} for image {}x{}",
                label.height(),
                label.width(),
                img.height(),
                img.width()
            ))
            .into());
        }
    }

    let mut skip = vec![false; model.params.len()];
    if cfg.freeze_auxiliary {
        for id in model.auxiliary_params() {
            skip[id.index()] = true;
        }
    }
    let kl = HistogramKlParams::default();
    let lr = cfg.lr;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6f6e_6c69_6e65);
    let mut order: Vec<usize> = (0..real.len()).collect();
    let mut report = FinetuneReport::default();
    let crop = cfg.crop;

    for epoch in 1..=cfg.epoch_real {
        order.shuffle(&mut rng);
        let (mut content_sum, mut loss_sum, mut steps) = (0.0, 0.0, 0);
        for chunk in order.chunks(cfg.batch) {
            let mut o = Vec::new();
            let mut prev = Vec::new();
            let mut reference = Vec::new();
            for &i in chunk {
                let img = &real[i];
                let (top, left) = random_crop(&mut rng, img.height(), img.width(), crop)?;
                o.push(img.crop(top, left, crop, crop)?.to_tensor::<f32>());
                prev.push(store.labels()[i].crop(top, left, crop, crop)?.to_tensor::<f32>());

                let mut j = rng.random_range(0..real.len() - 1);
                if j >= i {
                    j += 1;
                }
                let other = &real[j];
                let (top, left) = random_crop(&mut rng, other.height(), other.width(), crop)?;
                let rain = other.zip_map(&store.labels()[j], |a, b| a - b)?;
                reference.push(rain.crop(top, left, crop, crop)?.to_tensor::<f32>());
            }
            let mut tape = Tape::<f32>::new();
            let bound = model.params.bind(&mut tape, true);
            let ov = tape.constant(Tensor::stack(&o)?);
            let pv = tape.constant(Tensor::stack(&prev)?);
            let rv = tape.constant(Tensor::stack(&reference)?);
            let out = model.forward(&mut tape, &bound, ov)?;
            let b = out.background();
            let rain = tape.sub(ov, b)?;
            let loss = metrics::loss_real(&mut tape, b, pv, rain, rv, cfg.lambda, &kl)?;
            let content = metrics::loss_real(&mut tape, b, pv, rain, rv, 0.0, &kl)?;
            let value = tape.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    step: steps,
                    loss: value,
                });
            }
            let grads = gradients(&tape, &bound, loss, &skip)?;
            adam_step(&mut model.params, &grads, optimizer, lr)?;
            content_sum += tape.value(content).item() as f64;
            loss_sum += value;
            steps += 1;
        }
        let labels = real
            .iter()
            .map(|img| model.derain(img))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let change = store.overwrite(labels, epoch)?;
        report.content_means.push(content_sum / steps as f64);
        report.loss_means.push(loss_sum / steps as f64);
        report.label_change.push(change);
        report.rewrites.push(store.rewrites());
        log::info!(
            "online epoch {epoch}: content {:.6} loss {:.6} label change {:.6}",
            content_sum / steps as f64,
            loss_sum / steps as f64,
            change
        );
        on_epoch(epoch, store, model)?;
    }
    Ok(report)
}
