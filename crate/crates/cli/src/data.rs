//! Dataset layout on disk.
//!
//! A synthesized dataset directory holds `<name>_rain.ppm`,
//! `<name>_clean.ppm` and `<name>_streaks.ppm` per image, plus a
//! `manifest.tsv` with one `name  rain  clean  streaks` row each (paths
//! relative to the directory).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hcn_core::image::{load_image, Image};
use hcn_core::training::Pair;

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.tsv";

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// PPM/PGM files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| io_error(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_error(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if path.is_file() && matches!(ext, "ppm" | "pgm") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// One row of a dataset manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub rain: PathBuf,
    pub clean: PathBuf,
    pub streaks: Option<PathBuf>,
}

pub fn manifest_text(entries: &[Entry]) -> String {
    let mut out = String::new();
    let file = |p: &Path| {
        p.file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    for e in entries {
        let streaks = e.streaks.as_deref().map(file).unwrap_or_default();
        let _ = writeln!(out, "{}\t{}\t{}\t{}", e.name, file(&e.rain), file(&e.clean), streaks);
    }
    out
}

/// Reads `manifest.tsv` if present, otherwise pairs `<name>_rain` with
/// `<name>_clean` files.
pub fn read_entries(dir: &Path) -> Result<Vec<Entry>, CliError> {
    let manifest = dir.join(MANIFEST);
    let entries = if manifest.is_file() {
        let text = fs::read_to_string(&manifest).map_err(|e| io_error(&manifest, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 {
                return Err(CliError::Data(format!(
                    "{} line {}: expected name, rain and clean columns",
                    manifest.display(),
                    i + 1
                )));
            }
            entries.push(Entry {
                name: fields[0].to_string(),
                rain: dir.join(fields[1]),
                clean: dir.join(fields[2]),
                streaks: fields.get(3).filter(|s| !s.is_empty()).map(|s| dir.join(s)),
            });
        }
        entries
    } else {
        list_images(dir)?
            .into_iter()
            .filter_map(|p| {
                let s = stem(&p);
                let name = s.strip_suffix("_rain")?.to_string();
                let clean = p.with_file_name(format!("{name}_clean.{}", p.extension()?.to_string_lossy()));
                Some(Entry {
                    name,
                    rain: p.clone(),
                    clean,
                    streaks: None,
                })
            })
            .collect()
    };
    if entries.is_empty() {
        return Err(CliError::Data(format!("no image pairs in {}", dir.display())));
    }
    Ok(entries)
}

pub fn load(path: &Path) -> Result<Image, CliError> {
    Ok(load_image(path)?)
}

pub fn read_pairs(dir: &Path) -> Result<Vec<Pair>, CliError> {
    read_entries(dir)?
        .into_iter()
        .map(|e| {
            let rainy = load(&e.rain)?;
            let clean = load(&e.clean)?;
            if !rainy.same_dims(&clean) {
                return Err(CliError::Data(format!("{}: rainy and clean sizes differ", e.name)));
            }
            Ok(Pair {
                name: e.name,
                rainy,
                clean,
            })
        })
        .collect()
}

/// Images from a directory, or a single file.
pub fn read_images(input: &Path) -> Result<Vec<(String, Image)>, CliError> {
    let files = if input.is_dir() {
        list_images(input)?
    } else {
        vec![input.to_path_buf()]
    };
    if files.is_empty() {
        return Err(CliError::Data(format!("no images in {}", input.display())));
    }
    files.iter().map(|p| Ok((stem(p), load(p)?))).collect()
}
