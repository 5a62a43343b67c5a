//! Differentiable image similarity measures and the training objectives built
//! from them.

use thiserror::Error;

use crate::image::Image;
use crate::tensor::{Scalar, Shape, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{op}: shape mismatch {lhs} vs {rhs}")]
    ShapeMismatch { op: &'static str, lhs: Shape, rhs: Shape },

    #[error("image {h}x{w} is smaller than the {window}x{window} SSIM window")]
    WindowTooLarge { window: usize, h: usize, w: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Gaussian-window SSIM settings for signals with dynamic range 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            c1: 0.01f64.powi(2),
            c2: 0.03f64.powi(2),
        }
    }
}

impl SsimParams {
    /// Shrinks the window (and sigma proportionally) for images smaller than
    /// it, keeping the window odd.
    pub fn fitted(self, h: usize, w: usize) -> SsimParams {
        let side = h.min(w);
        if side >= self.window {
            return self;
        }
        let window = if side % 2 == 1 { side } else { side.saturating_sub(1) }.max(1);
        SsimParams {
            window,
            sigma: self.sigma * window as f64 / self.window as f64,
            ..self
        }
    }

    /// Normalized 1-D Gaussian taps.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window as f64 - 1.0) / 2.0;
        let g: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - r).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let total: f64 = g.iter().sum();
        g.iter().map(|v| v / total).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0 || self.sigma <= 0.0 || self.c1 <= 0.0 || self.c2 <= 0.0 {
            return Err(MetricError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramKlParams {
    pub bins: usize,
    pub epsilon: f64,
}

impl Default for HistogramKlParams {
    fn default() -> Self {
        HistogramKlParams {
            bins: 64,
            epsilon: 1e-8,
        }
    }
}

fn same_shape<T: Scalar>(tape: &Tape<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (lhs, rhs) = (tape.shape(a), tape.shape(b));
    if lhs != rhs {
        return Err(MetricError::ShapeMismatch { op, lhs, rhs });
    }
    Ok(())
}

/// Mean local SSIM over all valid window positions and channels.
pub fn ssim<T: Scalar>(tape: &mut Tape<T>, x: Var, y: Var, params: &SsimParams) -> Result<Var> {
    params.validate()?;
    same_shape(tape, "ssim", x, y)?;
    let s = tape.shape(x);
    if s.h() < params.window || s.w() < params.window {
        return Err(MetricError::WindowTooLarge {
            window: params.window,
            h: s.h(),
            w: s.w(),
        });
    }
    let planes = Shape::new(s.n() * s.c(), 1, s.h(), s.w());
    let taps: Vec<T> = params.taps().into_iter().map(T::of_f64).collect();
    let row = tape.constant(Tensor::from_vec([1, 1, 1, params.window], taps.clone())?);
    let col = tape.constant(Tensor::from_vec([1, 1, params.window, 1], taps)?);
    let blur = |tape: &mut Tape<T>, v: Var| -> Result<Var> {
        let v = tape.reshape(v, planes)?;
        let v = tape.conv2d(v, row, None, 1, 0)?;
        Ok(tape.conv2d(v, col, None, 1, 0)?)
    };

    let xx = tape.square(x);
    let yy = tape.square(y);
    let xy = tape.mul(x, y)?;
    let mu_x = blur(tape, x)?;
    let mu_y = blur(tape, y)?;
    let e_xx = blur(tape, xx)?;
    let e_yy = blur(tape, yy)?;
    let e_xy = blur(tape, xy)?;

    let mu_xx = tape.square(mu_x);
    let mu_yy = tape.square(mu_y);
    let mu_xy = tape.mul(mu_x, mu_y)?;
    let var_x = tape.sub(e_xx, mu_xx)?;
    let var_y = tape.sub(e_yy, mu_yy)?;
    let cov = tape.sub(e_xy, mu_xy)?;

    let c1 = T::of_f64(params.c1);
    let c2 = T::of_f64(params.c2);
    let two = T::of_f64(2.0);
    let lum_num = tape.scalar_mul(mu_xy, two);
    let lum_num = tape.add_scalar(lum_num, c1);
    let cs_num = tape.scalar_mul(cov, two);
    let cs_num = tape.add_scalar(cs_num, c2);
    let lum_den = tape.add(mu_xx, mu_yy)?;
    let lum_den = tape.add_scalar(lum_den, c1);
    let cs_den = tape.add(var_x, var_y)?;
    let cs_den = tape.add_scalar(cs_den, c2);

    let num = tape.mul(lum_num, cs_num)?;
    let den = tape.mul(lum_den, cs_den)?;
    let map = tape.div(num, den)?;
    Ok(tape.mean(map))
}

/// SSIM between two images, with the window fitted to small images.
pub fn ssim_images(a: &Image, b: &Image) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(a.to_tensor());
    let y = tape.constant(b.to_tensor());
    let params = SsimParams::default().fitted(a.height(), a.width());
    let v = ssim(&mut tape, x, y, &params)?;
    Ok(tape.value(v).item())
}

/// Peak signal-to-noise ratio in dB for unit peak; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(MetricError::InvalidParams(format!(
            "psnr of {}x{}x{} and {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn smoothed_log_histogram<T: Scalar>(tape: &mut Tape<T>, x: Var, params: &HistogramKlParams) -> Result<(Var, Var)> {
    let h = tape.soft_histogram(x, params.bins)?;
    let eps = T::of_f64(params.epsilon);
    let norm = T::one() / (T::one() + T::of_f64(params.bins as f64) * eps);
    let h = tape.add_scalar(h, eps);
    let p = tape.scalar_mul(h, norm);
    let log_p = tape.log(p)?;
    Ok((p, log_p))
}

fn kl_single<T: Scalar>(tape: &mut Tape<T>, r1: Var, r2: Var, params: &HistogramKlParams) -> Result<Var> {
    let (p, log_p) = smoothed_log_histogram(tape, r1, params)?;
    let (_, log_q) = smoothed_log_histogram(tape, r2, params)?;
    let diff = tape.sub(log_p, log_q)?;
    let terms = tape.mul(p, diff)?;
    Ok(tape.sum(terms))
}

/// `KL(P‖Q)` between epsilon-smoothed intensity histograms of `r1` and `r2`.
///
/// For batched inputs the divergence is taken per item and averaged; a
/// single-item `r2` serves as the reference for every item of `r1`.
pub fn kl_histogram<T: Scalar>(tape: &mut Tape<T>, r1: Var, r2: Var, params: &HistogramKlParams) -> Result<Var> {
    if params.bins < 2 || params.epsilon <= 0.0 {
        return Err(MetricError::InvalidParams(format!("{params:?}")));
    }
    let (n1, n2) = (tape.shape(r1).n(), tape.shape(r2).n());
    if n1 == 1 && n2 == 1 {
        return kl_single(tape, r1, r2, params);
    }
    if n2 != n1 && n2 != 1 {
        return Err(MetricError::ShapeMismatch {
            op: "kl_histogram",
            lhs: tape.shape(r1),
            rhs: tape.shape(r2),
        });
    }
    let mut total: Option<Var> = None;
    for n in 0..n1 {
        let a = tape.select_batch(r1, n)?;
        let b = if n2 == 1 { r2 } else { tape.select_batch(r2, n)? };
        let kl = kl_single(tape, a, b, params)?;
        total = Some(match total {
            Some(t) => tape.add(t, kl)?,
            None => kl,
        });
    }
    let total = total.expect("at least one batch item");
    Ok(tape.scalar_mul(total, T::one() / T::of_f64(n1 as f64)))
}

fn weighted_sum<T: Scalar>(tape: &mut Tape<T>, terms: &[(Var, f64)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(v, w) in terms {
        let scaled = tape.scalar_mul(v, T::of_f64(w));
        acc = Some(match acc {
            Some(a) => tape.add(a, scaled)?,
            None => scaled,
        });
    }
    acc.ok_or_else(|| MetricError::InvalidParams("no loss terms".into()))
}

/// `Σ α_i · (−SSIM(B̂_i, B))` over the background predictions.
pub fn loss_collaborative<T: Scalar>(
    tape: &mut Tape<T>,
    predictions: &[Var],
    target: Var,
    alphas: &[f64],
    params: &SsimParams,
) -> Result<Var> {
    if predictions.len() != alphas.len() || predictions.is_empty() {
        return Err(MetricError::InvalidParams(format!(
            "{} predictions with {} weights",
            predictions.len(),
            alphas.len()
        )));
    }
    let mut terms = Vec::with_capacity(predictions.len());
    for (&p, &a) in predictions.iter().zip(alphas) {
        same_shape(tape, "loss_collaborative", p, target)?;
        terms.push((ssim(tape, p, target, params)?, -a));
    }
    weighted_sum(tape, &terms)
}

/// `−SSIM(mean of predictions, target)`, with the window fitted to the
/// target size. Returns `None` when there are no predictions.
pub fn scale_term<T: Scalar>(
    tape: &mut Tape<T>,
    predictions: &[Var],
    target: Var,
    params: &SsimParams,
) -> Result<Option<Var>> {
    let Some(&first) = predictions.first() else {
        return Ok(None);
    };
    for &p in predictions {
        same_shape(tape, "loss_mscc", p, target)?;
    }
    let mut combined = first;
    for &p in &predictions[1..] {
        combined = tape.add(combined, p)?;
    }
    if predictions.len() > 1 {
        combined = tape.scalar_mul(combined, T::one() / T::of_f64(predictions.len() as f64));
    }
    let s = tape.shape(target);
    let fitted = params.fitted(s.h(), s.w());
    let score = ssim(tape, combined, target, &fitted)?;
    Ok(Some(tape.scalar_mul(score, -T::one())))
}

/// Multi-scale compact constraint.
///
/// `band_half` holds the signed half-resolution Laplacian band and is mapped
/// to `[0, 1]` by `(v + 1) / 2` before scoring; `top_quarter` is the
/// quarter-resolution Gaussian level. Heads sharing a scale are averaged.
pub fn loss_mscc<T: Scalar>(
    tape: &mut Tape<T>,
    half_predictions: &[Var],
    quarter_predictions: &[Var],
    band_half: &Tensor<T>,
    top_quarter: &Tensor<T>,
    betas: [f64; 2],
    params: &SsimParams,
) -> Result<Var> {
    let half = T::of_f64(0.5);
    let band_target = tape.constant(band_half.map(|v| (v + T::one()) * half));
    let top_target = tape.constant(top_quarter.clone());
    let mut terms = Vec::new();
    if let Some(t) = scale_term(tape, half_predictions, band_target, params)? {
        terms.push((t, betas[0]));
    }
    if let Some(t) = scale_term(tape, quarter_predictions, top_target, params)? {
        terms.push((t, betas[1]));
    }
    if terms.is_empty() {
        let zero = tape.constant(Tensor::scalar(T::zero()));
        return Ok(zero);
    }
    weighted_sum(tape, &terms)
}

/// Objective on synthetic pairs: collaborative term plus the optional
/// multi-scale term.
pub fn loss_synthetic<T: Scalar>(tape: &mut Tape<T>, collaborative: Var, mscc: Option<Var>) -> Result<Var> {
    match mscc {
        Some(m) => Ok(tape.add(collaborative, m)?),
        None => Ok(collaborative),
    }
}

/// Objective on real images: `mean|B^k − B^{k−1}| + λ·KL(R^k ‖ R^{k−1}_random)`.
pub fn loss_real<T: Scalar>(
    tape: &mut Tape<T>,
    background: Var,
    previous_background: Var,
    rain: Var,
    reference_rain: Var,
    lambda: f64,
    kl: &HistogramKlParams,
) -> Result<Var> {
    same_shape(tape, "loss_real", background, previous_background)?;
    let diff = tape.sub(background, previous_background)?;
    let abs = tape.abs(diff);
    let content = tape.mean(abs);
    if lambda == 0.0 {
        return Ok(content);
    }
    let div = kl_histogram(tape, rain, reference_rain, kl)?;
    let reg = tape.scalar_mul(div, T::of_f64(lambda));
    Ok(tape.add(content, reg)?)
}
