use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hcn_core::image::procedural::scene;
use hcn_core::image::{save_image, synthesize_rain, Image, RainConfig};
use hcn_core::network::{load_checkpoint, load_checkpoint_into, model_init, save_checkpoint, CollaborativeModel};
use hcn_core::optim::AdamState;
use hcn_core::tensor::Tensor;
use hcn_core::training::{
    evaluate, evaluate_predictions, finetune_online, train_supervised, PseudoLabelStore, TrainError, METRICS_HEADER,
};

use crate::config::RunConfig;
use crate::data::{self, Entry};
use crate::error::CliError;

fn item_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Writes to a sibling temporary file, then renames it into place.
fn save_atomic(model: &CollaborativeModel, opt: Option<&AdamState<f32>>, path: &Path) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    save_checkpoint(model, opt, &tmp)?;
    fs::rename(&tmp, path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub enum CleanSource<'a> {
    Dir(&'a Path),
    Scenes { count: usize, size: usize },
}

pub fn synth(cfg: &RunConfig, source: CleanSource, out: &Path) -> Result<Vec<Entry>, CliError> {
    let clean: Vec<(String, Image)> = match source {
        CleanSource::Dir(dir) => {
            let files = data::list_images(dir)?;
            if files.is_empty() {
                return Err(CliError::Data(format!("no clean images in {}", dir.display())));
            }
            files
                .iter()
                .map(|p| Ok((data::stem(p), data::load(p)?.to_rgb())))
                .collect::<Result<_, CliError>>()?
        }
        CleanSource::Scenes { count, size } => {
            if count == 0 || size == 0 {
                return Err(CliError::Usage("--scenes and --size must be positive".into()));
            }
            (0..count)
                .map(|i| (format!("scene{i:03}"), scene(size, size, item_seed(cfg.train.seed, i))))
                .collect()
        }
    };
    data::create_dir(out)?;
    let mut entries = Vec::with_capacity(clean.len());
    for (i, (name, img)) in clean.iter().enumerate() {
        let rain_cfg = RainConfig {
            seed: item_seed(cfg.rain.seed, i),
            ..cfg.rain.clone()
        };
        let (rainy, streaks) = synthesize_rain(img, &rain_cfg)?;
        let entry = Entry {
            name: name.clone(),
            rain: out.join(format!("{name}_rain.ppm")),
            clean: out.join(format!("{name}_clean.ppm")),
            streaks: Some(out.join(format!("{name}_streaks.ppm"))),
        };
        save_image(&rainy, &entry.rain)?;
        save_image(img, &entry.clean)?;
        save_image(&streaks, entry.streaks.as_ref().expect("set above"))?;
        entries.push(entry);
    }
    data::write_text(&out.join(data::MANIFEST), &data::manifest_text(&entries))?;
    log::info!("wrote {} pairs to {}", entries.len(), out.display());
    Ok(entries)
}

pub fn train(cfg: &RunConfig, data_dir: &Path, out: &Path, resume: Option<&Path>) -> Result<(), CliError> {
    let pairs = data::read_pairs(data_dir)?;
    let (mut model, mut opt) = match resume {
        Some(path) => {
            let (model, opt) = load_checkpoint_into(path, &cfg.model)?;
            let opt = opt.unwrap_or_else(|| AdamState::new(&model.params));
            (model, opt)
        }
        None => {
            let model = model_init(&cfg.model, cfg.train.seed)?;
            let opt = AdamState::new(&model.params);
            (model, opt)
        }
    };
    data::create_dir(out)?;
    data::write_text(&out.join("config.txt"), &cfg.dump())?;
    let log_path = out.join("metrics.tsv");
    let checkpoint = out.join("checkpoint.hcn");
    let mut log = format!("{METRICS_HEADER}\n");
    data::write_text(&log_path, &log)?;
    let mut failure = None;
    let result = train_supervised(&mut model, &mut opt, &pairs, &cfg.train, |m, model, opt| {
        println!("{}", m.log_line());
        log.push_str(&m.log_line());
        log.push('\n');
        let saved = data::write_text(&log_path, &log).and_then(|_| save_atomic(model, Some(opt), &checkpoint));
        saved.map_err(|e| {
            let stop = TrainError::Stopped(e.to_string());
            failure = Some(e);
            stop
        })
    });
    match (result, failure) {
        (Err(_), Some(e)) => Err(e),
        (result, _) => result.map(|_| ()).map_err(CliError::from),
    }
}

pub fn finetune(cfg: &RunConfig, checkpoint: &Path, real_dir: &Path, out: &Path) -> Result<(), CliError> {
    let (mut model, _) = load_checkpoint(checkpoint)?;
    let images = data::read_images(real_dir)?;
    let (ids, images): (Vec<String>, Vec<Image>) = images.into_iter().map(|(n, i)| (n, i.to_rgb())).unzip();
    let mut store = PseudoLabelStore::initialize(&model, ids, &images)?;
    let mut opt = AdamState::new(&model.params);
    data::create_dir(out)?;
    data::write_text(&out.join("config.txt"), &cfg.dump())?;
    let labels = out.join("labels");
    store.save(&labels)?;
    let report = finetune_online(&mut model, &mut opt, &images, &mut store, &cfg.train, |k, store, _| {
        println!(
            "online epoch {k}: store epoch {}, rewrites {}",
            store.epoch(),
            store.rewrites()
        );
        store.save(&labels)
    })?;

    let mut log = String::from("epoch\tcontent\tloss\tlabel_change\n");
    for (k, ((c, l), d)) in report
        .content_means
        .iter()
        .zip(&report.loss_means)
        .zip(&report.label_change)
        .enumerate()
    {
        let _ = writeln!(log, "{}\t{c:.6}\t{l:.6}\t{d:.6}", k + 1);
    }
    data::write_text(&out.join("online.tsv"), &log)?;
    let derained = out.join("derained");
    data::create_dir(&derained)?;
    for (id, label) in store.ids().iter().zip(store.labels()) {
        save_image(label, derained.join(format!("{id}.ppm")))?;
    }
    save_atomic(&model, Some(&opt), &out.join("finetuned.hcn"))?;
    Ok(())
}

pub enum Predictions<'a> {
    Checkpoint(&'a Path),
    Dir(&'a Path),
}

fn find_prediction(dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    ["", "_derained"]
        .iter()
        .flat_map(|suffix| ["ppm", "pgm"].map(|ext| dir.join(format!("{name}{suffix}.{ext}"))))
        .find(|p| p.is_file())
        .ok_or_else(|| CliError::Data(format!("no prediction for {name} in {}", dir.display())))
}

pub fn eval(data_dir: &Path, predictions: Predictions, out: Option<&Path>) -> Result<String, CliError> {
    let report = match predictions {
        Predictions::Checkpoint(path) => {
            let (model, _) = load_checkpoint(path)?;
            evaluate(&model, &data::read_pairs(data_dir)?)?
        }
        Predictions::Dir(dir) => {
            let items = data::read_entries(data_dir)?
                .into_iter()
                .map(|e| {
                    let pred = data::load(&find_prediction(dir, &e.name)?)?;
                    let gt = data::load(&e.clean)?;
                    Ok((e.name, pred, gt))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            evaluate_predictions(&items)?
        }
    };
    if let Some(path) = out {
        data::write_text(path, &report.tsv())?;
    }
    Ok(report.table())
}

pub fn derain(checkpoint: &Path, input: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let images = data::read_images(input)?;
    data::create_dir(out)?;
    let mut written = Vec::new();
    for (name, img) in images {
        let path = out.join(format!("{name}_derained.ppm"));
        save_image(&model.derain(&img)?, &path)?;
        written.push(path);
    }
    Ok(written)
}

pub fn list_sites(checkpoint: &Path) -> Result<Vec<&'static str>, CliError> {
    let (model, _) = load_checkpoint(checkpoint)?;
    Ok(model.sites())
}

/// Per-channel min-max normalized planes of a `(1,C,H,W)` tensor.
fn channel_planes(t: &Tensor<f32>) -> Vec<Image> {
    let s = t.shape();
    t.data()
        .chunks(s.h() * s.w())
        .map(|plane| {
            let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
            let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let span = hi - lo;
            let data = plane
                .iter()
                .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
                .collect();
            Image::new(s.w(), s.h(), 1, data).expect("plane dimensions")
        })
        .collect()
}

/// Writes `before_NN.ppm` and `after_NN.ppm` per feature channel.
pub fn inspect(checkpoint: &Path, image: &Path, layer: &str, out: &Path) -> Result<usize, CliError> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let img = data::load(image)?.center_crop_multiple(8)?;
    let (before, after) = model.inspect(&img, layer)?;
    data::create_dir(out)?;
    let mut count = 0;
    for (tag, t) in [("before", &before), ("after", &after)] {
        for (k, plane) in channel_planes(t).iter().enumerate() {
            save_image(plane, out.join(format!("{tag}_{k:02}.ppm")))?;
            count += 1;
        }
    }
    Ok(count)
}
