//! Central finite-difference checks of tape gradients, plus a catalogue of
//! cases covering every differentiable operation and the full training loss.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::biscsm::{Biscsm, BiscsmConfig, ScaleFusion};
use crate::image::Image;
use crate::metrics::{self, HistogramKlParams, SsimParams};
use crate::network::{model_init, ModelConfig};
use crate::nn::{Bound, Initializer, ParamSet, LEAKY_SLOPE};
use crate::tensor::kernels::Boundary;
use crate::tensor::{Shape, Tape, Tensor, TensorError, Var};
use crate::training::{synthetic_objective, ScaleTargets, TrainConfig};

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("case {case}: {source}")]
    Evaluation {
        case: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },

    #[error("case {0}: objective is not a scalar")]
    NotScalar(String),
}

type Objective = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, Box<dyn std::error::Error + Send + Sync>>>;

/// A scalar objective of some inputs.
pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    pub objective: Objective,
}

/// Outcome of checking one case.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates passed over because `x ± h` crossed a kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Every analytic gradient was finite.
    pub finite: bool,
}

impl GradReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.finite && self.checked > 0 && self.max_rel_error < tolerance
    }
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

struct Evaluation {
    value: f64,
    pattern: Vec<i64>,
    grads: Vec<Option<Tensor<f64>>>,
}

fn evaluate(case: &GradCase, inputs: &[Tensor<f64>], grads: bool) -> Result<Evaluation, GradCheckError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = (case.objective)(&mut tape, &vars).map_err(|source| GradCheckError::Evaluation {
        case: case.name.clone(),
        source,
    })?;
    if tape.value(loss).numel() != 1 {
        return Err(GradCheckError::NotScalar(case.name.clone()));
    }
    let value = tape.value(loss).item();
    let pattern = tape.piece_pattern();
    if !grads {
        return Ok(Evaluation {
            value,
            pattern,
            grads: Vec::new(),
        });
    }
    let mut g = tape.backward(loss).map_err(|e| GradCheckError::Evaluation {
        case: case.name.clone(),
        source: Box::new(e),
    })?;
    Ok(Evaluation {
        value,
        pattern,
        grads: vars.iter().map(|&v| g.take(v)).collect(),
    })
}

/// Compares analytic gradients with central differences of step `h` on
/// `samples` coordinates drawn without replacement from all inputs.
///
/// A coordinate whose `x ± h` moves any leaky ReLU, `abs` or histogram input
/// onto another linear piece has no meaningful central difference; it is
/// counted in `skipped` and the next random coordinate is drawn instead.
pub fn check_case(case: &GradCase, samples: usize, h: f64, seed: u64) -> Result<GradReport, GradCheckError> {
    let base = evaluate(case, &case.inputs, true)?;
    let finite = base.grads.iter().flatten().all(Tensor::is_finite);
    let sizes: Vec<usize> = case.inputs.iter().map(Tensor::numel).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = sample(&mut rng, total, total);

    let mut inputs = case.inputs.clone();
    let (mut checked, mut skipped) = (0, 0);
    let mut max_rel_error: f64 = 0.0;
    for flat in order.iter() {
        if checked == samples {
            break;
        }
        let (mut which, mut k) = (0, flat);
        while k >= sizes[which] {
            k -= sizes[which];
            which += 1;
        }
        let x0 = inputs[which].data()[k];
        inputs[which].data_mut()[k] = x0 + h;
        let plus = evaluate(case, &inputs, false)?;
        inputs[which].data_mut()[k] = x0 - h;
        let minus = evaluate(case, &inputs, false)?;
        inputs[which].data_mut()[k] = x0;
        if plus.pattern != base.pattern || minus.pattern != base.pattern {
            skipped += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * h);
        let analytic = base.grads[which].as_ref().map_or(0.0, |g| g.data()[k]);
        max_rel_error = max_rel_error.max(relative_error(analytic, numeric));
        checked += 1;
    }
    Ok(GradReport {
        name: case.name.clone(),
        checked,
        skipped,
        max_rel_error,
        finite,
    })
}

fn uniform(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_f64(shape, &data).expect("sized data")
}

/// Values with magnitude in `[0.1, 1)` and random sign, away from kinks at 0.
fn off_zero(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_f64(shape, &data).expect("sized data")
}

/// Reduces `y` to a scalar through a fixed random weighting.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = tape.shape(y);
    let w = tape.constant(uniform(&mut rng, s.0, -1.0, 1.0));
    let prod = tape.mul(y, w)?;
    Ok(tape.sum(prod))
}

macro_rules! case {
    ($name:expr, $inputs:expr, |$tape:ident, $v:ident| $body:expr) => {
        GradCase {
            name: $name.to_string(),
            inputs: $inputs,
            objective: Box::new(move |$tape: &mut Tape<f64>, $v: &[Var]| {
                let y: Var = $body?;
                Ok(project($tape, y, 99)?)
            }),
        }
    };
}

/// One case per differentiable tensor operation, metric and block.
pub fn op_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let s = [2, 3, 4, 4];
    let mut cases = vec![
        case!(
            "add",
            vec![uniform(r, s, -1.0, 1.0), uniform(r, s, -1.0, 1.0)],
            |t, v| t.add(v[0], v[1])
        ),
        case!(
            "add_broadcast",
            vec![uniform(r, s, -1.0, 1.0), uniform(r, [1, 1, 1, 1], -1.0, 1.0)],
            |t, v| t.add(v[0], v[1])
        ),
        case!(
            "sub",
            vec![uniform(r, s, -1.0, 1.0), uniform(r, s, -1.0, 1.0)],
            |t, v| t.sub(v[0], v[1])
        ),
        case!(
            "mul",
            vec![uniform(r, s, -1.0, 1.0), uniform(r, s, -1.0, 1.0)],
            |t, v| t.mul(v[0], v[1])
        ),
        case!(
            "div",
            vec![uniform(r, s, -1.0, 1.0), uniform(r, s, 0.5, 2.0)],
            |t, v| t.div(v[0], v[1])
        ),
        case!(
            "add_scalar",
            vec![uniform(r, s, -1.0, 1.0)],
            |t, v| Ok::<_, TensorError>(t.add_scalar(v[0], 0.3))
        ),
        case!(
            "scalar_mul",
            vec![uniform(r, s, -1.0, 1.0)],
            |t, v| Ok::<_, TensorError>(t.scalar_mul(v[0], -1.7))
        ),
        case!("square", vec![uniform(r, s, -1.0, 1.0)], |t, v| Ok::<_, TensorError>(
            t.square(v[0])
        )),
        case!("exp", vec![uniform(r, s, -1.0, 1.0)], |t, v| Ok::<_, TensorError>(
            t.exp(v[0])
        )),
        case!("log", vec![uniform(r, s, 0.2, 2.0)], |t, v| t.log(v[0])),
        case!("abs", vec![off_zero(r, s)], |t, v| Ok::<_, TensorError>(t.abs(v[0]))),
        case!("leaky_relu", vec![off_zero(r, s)], |t, v| Ok::<_, TensorError>(
            t.leaky_relu(v[0], LEAKY_SLOPE)
        )),
        case!(
            "conv2d",
            vec![
                uniform(r, [2, 3, 6, 6], -1.0, 1.0),
                uniform(r, [4, 3, 3, 3], -1.0, 1.0),
                uniform(r, [4, 1, 1, 1], -1.0, 1.0)
            ],
            |t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 1)
        ),
        case!(
            "conv2d_strided",
            vec![uniform(r, [1, 2, 7, 7], -1.0, 1.0), uniform(r, [3, 2, 3, 3], -1.0, 1.0)],
            |t, v| t.conv2d(v[0], v[1], None, 2, 0)
        ),
        case!("down2x", vec![uniform(r, [2, 2, 8, 8], -1.0, 1.0)], |t, v| t
            .down2x(v[0])),
        case!("up2x", vec![uniform(r, [2, 2, 4, 4], -1.0, 1.0)], |t, v| t.up2x(v[0])),
        case!("resize_clamp", vec![uniform(r, [1, 2, 5, 3], -1.0, 1.0)], |t, v| t
            .resize(v[0], 8, 7, Boundary::Clamp)),
        case!("resize_wrap", vec![uniform(r, [1, 2, 4, 4], -1.0, 1.0)], |t, v| t
            .resize(v[0], 8, 8, Boundary::Wrap)),
        case!("gather", vec![uniform(r, [1, 1, 5, 5], -1.0, 1.0)], |t, v| t.gather(
            v[0],
            Shape::new(1, 1, 2, 10),
            (0..20).map(|i| (i * 7) % 25).collect()
        )),
        case!("scatter_add", vec![uniform(r, [1, 1, 4, 5], -1.0, 1.0)], |t, v| t
            .scatter_add(
                v[0],
                Shape::new(1, 1, 3, 3),
                (0..20).map(|i| (i * 5) % 9).collect()
            )),
        case!("pad_reflect", vec![uniform(r, s, -1.0, 1.0)], |t, v| t
            .pad_reflect(v[0], [1, 2, 3, 1])),
        case!("crop", vec![uniform(r, [1, 2, 8, 8], -1.0, 1.0)], |t, v| t
            .crop(v[0], 1, 2, 5, 4)),
        case!("unfold_patches", vec![uniform(r, [1, 2, 8, 8], -1.0, 1.0)], |t, v| t
            .unfold_patches(v[0], 3, 1)),
        case!("fold_patches", vec![uniform(r, [1, 1, 9, 18], -1.0, 1.0)], |t, v| t
            .fold_patches(v[0], Shape::new(1, 2, 5, 5), 3, 1)),
        case!("select_batch", vec![uniform(r, s, -1.0, 1.0)], |t, v| t
            .select_batch(v[0], 1)),
        case!(
            "concat",
            vec![uniform(r, [2, 1, 4, 4], -1.0, 1.0), uniform(r, [2, 3, 4, 4], -1.0, 1.0)],
            |t, v| t.concat(&[v[0], v[1]])
        ),
        case!(
            "add_batch_broadcast",
            vec![uniform(r, s, -1.0, 1.0), uniform(r, [1, 3, 4, 4], -1.0, 1.0)],
            |t, v| t.add_batch_broadcast(v[0], v[1])
        ),
        case!("sum", vec![uniform(r, s, -1.0, 1.0)], |t, v| Ok::<_, TensorError>(
            t.sum(v[0])
        )),
        case!("mean", vec![uniform(r, s, -1.0, 1.0)], |t, v| Ok::<_, TensorError>(
            t.mean(v[0])
        )),
        case!("reshape", vec![uniform(r, s, -1.0, 1.0)], |t, v| t
            .reshape(v[0], [1, 6, 2, 8])),
        case!(
            "attend",
            vec![
                uniform(r, [2, 1, 5, 4], -1.0, 1.0),
                uniform(r, [2, 1, 6, 4], -1.0, 1.0),
                uniform(r, [2, 1, 6, 3], -1.0, 1.0)
            ],
            |t, v| t.attend(v[0], v[1], v[2])
        ),
        case!("soft_histogram", vec![uniform(r, [1, 2, 6, 6], 0.02, 0.98)], |t, v| t
            .soft_histogram(v[0], 8)),
    ];

    cases.push(GradCase {
        name: "ssim".into(),
        inputs: vec![uniform(r, [2, 3, 8, 8], 0.0, 1.0), uniform(r, [2, 3, 8, 8], 0.0, 1.0)],
        objective: Box::new(|t, v| {
            let p = SsimParams::default().fitted(8, 8);
            Ok(metrics::ssim(t, v[0], v[1], &p)?)
        }),
    });
    cases.push(GradCase {
        name: "kl_histogram".into(),
        inputs: vec![
            uniform(r, [2, 3, 6, 6], 0.02, 0.98),
            uniform(r, [2, 3, 6, 6], 0.02, 0.98),
        ],
        objective: Box::new(|t, v| {
            let p = HistogramKlParams { bins: 8, epsilon: 1e-3 };
            Ok(metrics::kl_histogram(t, v[0], v[1], &p)?)
        }),
    });
    cases.push(biscsm_case(r));
    cases
}

fn biscsm_case(rng: &mut ChaCha8Rng) -> GradCase {
    let mut params = ParamSet::<f32>::new();
    let mut init = Initializer::new(rng.random());
    let config = BiscsmConfig {
        fusion: ScaleFusion::Mining,
        ..BiscsmConfig::default()
    };
    let block = Biscsm::new(&mut params, &mut init, "block", 3, (6, 6), config).expect("valid block");
    let mut inputs = vec![uniform(rng, [1, 3, 6, 6], -1.0, 1.0)];
    inputs.extend(params.iter().map(|(_, _, t)| {
        let t = t.cast::<f64>();
        // non-zero positional grid so its gradient is exercised
        t.map(|v| if v == 0.0 { 0.1 } else { v })
    }));
    GradCase {
        name: "biscsm".into(),
        inputs,
        objective: Box::new(move |t, v| {
            let bound = Bound::from_vars(v[1..].to_vec());
            let y = block.forward(t, &bound, v[0])?;
            Ok(project(t, y, 7)?)
        }),
    }
}

/// The full synthetic training objective of a small model on one
/// `side × side` pair; inputs are the model parameters.
pub fn model_loss_case(seed: u64, side: usize, channels: usize) -> GradCase {
    let cfg = ModelConfig {
        channels,
        position_grid: side / 4,
        ..ModelConfig::default()
    };
    let model = model_init(&cfg, seed).expect("valid model");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let rainy = uniform(&mut rng, [1, 3, side, side], 0.0, 1.0);
    let clean = uniform(&mut rng, [1, 3, side, side], 0.0, 1.0);
    let clean_img = Image::from_tensor(&clean, 0).expect("rgb tensor");
    let targets = ScaleTargets::<f64>::from_clean(&[clean_img]).expect("pyramid of a valid image");
    let inputs: Vec<Tensor<f64>> = model
        .params
        .iter()
        .map(|(_, _, t)| {
            // randomize zero-initialized tensors so their gradients are not trivial
            let t = t.cast::<f64>();
            if t.data().iter().all(|&v| v == 0.0) {
                uniform(&mut rng, t.shape().0, -0.1, 0.1)
            } else {
                t
            }
        })
        .collect();
    let train = TrainConfig::paper();
    GradCase {
        name: "synthetic_objective".into(),
        inputs,
        objective: Box::new(move |t, v| {
            let bound = Bound::from_vars(v.to_vec());
            let o = t.constant(rainy.clone());
            let b = t.constant(clean.clone());
            let (loss, _) = synthetic_objective(t, &model, &bound, o, b, &targets, &train)?;
            Ok(loss)
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // exp's value with the gradient of the identity
        let case = GradCase {
            name: "broken".into(),
            inputs: vec![Tensor::from_f64([1, 1, 1, 3], &[0.5, 1.0, 1.5]).unwrap()],
            objective: Box::new(|t, v| {
                let e = t.exp(v[0]);
                let frozen = t.constant(t.value(e).clone());
                let d = t.sub(frozen, v[0])?;
                let d = t.add(d, v[0])?;
                let d = t.add(d, v[0])?;
                Ok(t.sum(d))
            }),
        };
        let report = check_case(&case, 3, 1e-4, 0).unwrap();
        assert!(!report.passed(1e-3));
    }

    #[test]
    fn coordinates_straddling_a_kink_are_skipped() {
        let case = GradCase {
            name: "relu".into(),
            inputs: vec![Tensor::from_f64([1, 1, 1, 2], &[5e-5, 0.5]).unwrap()],
            objective: Box::new(|t, v| {
                let y = t.leaky_relu(v[0], LEAKY_SLOPE);
                Ok(t.sum(y))
            }),
        };
        let report = check_case(&case, 2, 1e-4, 0).unwrap();
        assert_eq!((report.checked, report.skipped), (1, 1));
        assert!(report.passed(1e-9));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.001) - 0.001 / 1.001).abs() < 1e-12);
    }
}
