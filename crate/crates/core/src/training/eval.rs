use std::fmt::Write as _;

use super::{Pair, Result, TrainError};
use crate::image::Image;
use crate::metrics;
use crate::network::CollaborativeModel;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image scores and their arithmetic means.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(TrainError::Empty("evaluation set"));
        }
        let n = rows.len() as f64;
        let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        Ok(EvalReport {
            rows,
            mean_psnr,
            mean_ssim,
        })
    }

    /// Human-readable table with a trailing mean row.
    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).chain([5]).max().unwrap_or(5);
        let mut out = format!("{:<width$}  {:>10}  {:>8}\n", "image", "psnr", "ssim");
        let mut line = |name: &str, psnr: f64, ssim: f64| {
            let _ = writeln!(out, "{name:<width$}  {:>10}  {ssim:>8.4}", fmt_psnr(psnr));
        };
        for r in &self.rows {
            line(&r.name, r.psnr, r.ssim);
        }
        line("mean", self.mean_psnr, self.mean_ssim);
        out
    }

    /// Tab-separated rows `name  psnr  ssim`, header first, means last.
    pub fn tsv(&self) -> String {
        let mut out = String::from("name\tpsnr\tssim\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{:.6}", r.name, fmt_psnr(r.psnr), r.ssim);
        }
        let _ = writeln!(out, "mean\t{}\t{:.6}", fmt_psnr(self.mean_psnr), self.mean_ssim);
        out
    }
}

/// Scores already-derained images against their ground truth.
pub fn evaluate_predictions(items: &[(String, Image, Image)]) -> Result<EvalReport> {
    let rows = items
        .iter()
        .map(|(name, pred, gt)| {
            let pred = pred.to_rgb().clamped();
            let gt = gt.to_rgb();
            Ok(EvalRow {
                name: name.clone(),
                psnr: metrics::psnr(&pred, &gt)?,
                ssim: metrics::ssim_images(&pred, &gt)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_rows(rows)
}

/// Full-image inference on every pair, then scoring.
pub fn evaluate(model: &CollaborativeModel, pairs: &[Pair]) -> Result<EvalReport> {
    let items = pairs
        .iter()
        .map(|p| Ok((p.name.clone(), model.derain(&p.rainy)?, p.clean.clone())))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(&items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::procedural::scene;
    use crate::network::{model_init, ModelConfig};

    #[test]
    fn ground_truth_against_itself() {
        let gt = scene(20, 12, 4);
        let report = evaluate_predictions(&[("a".into(), gt.clone(), gt)]).unwrap();
        assert!(report.rows[0].psnr.is_infinite());
        assert!((report.rows[0].ssim - 1.0).abs() < 1e-9);
        assert!(report.tsv().contains("a\tinf\t1.000000"));
    }

    #[test]
    fn means_are_row_means() {
        let gt = scene(16, 16, 1);
        let items: Vec<_> = (0..3)
            .map(|i| {
                let pred = gt.map(|v| v + 0.02 * (i + 1) as f32);
                (format!("i{i}"), pred, gt.clone())
            })
            .collect();
        let r = evaluate_predictions(&items).unwrap();
        let psnr = r.rows.iter().map(|x| x.psnr).sum::<f64>() / 3.0;
        let ssim = r.rows.iter().map(|x| x.ssim).sum::<f64>() / 3.0;
        assert_eq!(r.mean_psnr, psnr);
        assert_eq!(r.mean_ssim, ssim);
        assert_eq!(r.table().lines().count(), 5);
    }

    #[test]
    fn evaluation_is_deterministic_on_odd_sizes() {
        let cfg = ModelConfig {
            channels: 4,
            position_grid: 4,
            ..ModelConfig::default()
        };
        let model = model_init(&cfg, 2).unwrap();
        let pair = Pair {
            name: "odd".into(),
            rainy: scene(19, 13, 7),
            clean: scene(19, 13, 8),
        };
        let a = evaluate(&model, std::slice::from_ref(&pair)).unwrap();
        let b = evaluate(&model, &[pair]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_set_fails() {
        assert!(matches!(evaluate_predictions(&[]), Err(TrainError::Empty(_))));
    }
}
