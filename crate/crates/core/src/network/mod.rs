//! The collaborative deraining model: three streams of encoder-decoder
//! modules, feature bridges between them, and auxiliary scale heads.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, load_checkpoint_into, save_checkpoint, CheckpointError};
pub use config::{ModelConfig, MsccMode};

use thiserror::Error;

use crate::biscsm::{Biscsm, BiscsmError};
use crate::image::Image;
use crate::nn::{Bound, Conv, Initializer, ParamId, ParamSet};
use crate::tensor::{Scalar, Tape, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Biscsm(#[from] BiscsmError),

    #[error("input {h}x{w} must have sides divisible by 8")]
    Indivisible { h: usize, w: usize },

    #[error("input must have 3 channels, got {0}")]
    Channels(usize),

    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("unknown inspection site {name}; valid sites: {valid}")]
    UnknownSite { name: String, valid: String },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Two-level encoder-decoder with a scale-fusion bottleneck.
#[derive(Clone, Debug, PartialEq)]
pub struct EncDec {
    encoder: [[Conv; 2]; 2],
    bottleneck: Option<Biscsm>,
    skip_fuse: [Conv; 2],
    decoder: [[Conv; 2]; 2],
}

/// Bottleneck features before and after the fusion block.
#[derive(Clone, Copy, Debug)]
pub struct Probe {
    pub before: Var,
    pub after: Var,
}

impl EncDec {
    fn new(params: &mut ParamSet<f32>, init: &mut Initializer, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.channels;
        let mut conv =
            |suffix: &str, cin: usize, k: usize| Conv::new(params, init, &format!("{name}.{suffix}"), cin, c, k, true);
        let encoder = [
            [conv("enc0.conv0", c, 3), conv("enc0.conv1", c, 3)],
            [conv("enc1.conv0", c, 3), conv("enc1.conv1", c, 3)],
        ];
        let skip_fuse = [conv("dec1.fuse", 2 * c, 1), conv("dec0.fuse", 2 * c, 1)];
        let decoder = [
            [conv("dec1.conv0", c, 3), conv("dec1.conv1", c, 3)],
            [conv("dec0.conv0", c, 3), conv("dec0.conv1", c, 3)],
        ];
        let bottleneck = match cfg.biscsm {
            Some(b) => {
                let side = cfg.position_grid;
                Some(Biscsm::new(
                    params,
                    init,
                    &format!("{name}.biscsm"),
                    c,
                    (side, side),
                    b,
                )?)
            }
            None => None,
        };
        Ok(EncDec {
            encoder,
            bottleneck,
            skip_fuse,
            decoder,
        })
    }

    /// Returns the output features (same shape as `x`) and the bottleneck probe.
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<(Var, Probe)> {
        let mut skips = Vec::with_capacity(2);
        let mut h = x;
        for [a, b] in &self.encoder {
            h = a.forward_lrelu(tape, bound, h)?;
            h = b.forward_lrelu(tape, bound, h)?;
            skips.push(h);
            h = tape.down2x(h)?;
        }
        let before = h;
        if let Some(block) = &self.bottleneck {
            h = block.forward(tape, bound, h)?;
        }
        let probe = Probe { before, after: h };
        for (level, ([a, b], fuse)) in self.decoder.iter().zip(&self.skip_fuse).enumerate() {
            let up = tape.up2x(h)?;
            let skip = skips[skips.len() - 1 - level];
            let cat = tape.concat(&[up, skip])?;
            h = fuse.forward(tape, bound, cat)?;
            h = a.forward_lrelu(tape, bound, h)?;
            h = b.forward_lrelu(tape, bound, h)?;
        }
        Ok((tape.add(h, x)?, probe))
    }
}

/// Auxiliary prediction from intermediate features at a reduced scale.
#[derive(Clone, Debug, PartialEq)]
struct ScaleHead {
    halvings: usize,
    conv: Conv,
}

impl ScaleHead {
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, mut x: Var) -> Result<Var> {
        for _ in 0..self.halvings {
            x = tape.down2x(x)?;
        }
        Ok(self.conv.forward(tape, bound, x)?)
    }
}

/// Module names in evaluation order.
pub const SITE_ORDER: [&str; 6] = ["n11", "n31", "n21", "n22", "n12", "n13"];

const CASCADE_ORDER: [&str; 6] = ["n11", "n12", "n13", "n21", "n22", "n31"];

#[derive(Clone, Debug, PartialEq)]
struct Stream {
    stem: Conv,
    head: Conv,
}

#[derive(Clone, Debug, PartialEq)]
struct Bridges {
    /// `[stem_M, N11] → N21` input.
    bottom_to_middle: Option<Conv>,
    /// `[N21, N31] → N22` input.
    top_to_middle: Option<Conv>,
    /// `[N12, N22] → N13` input.
    middle_to_bottom: Option<Conv>,
}

/// Network outputs for one batch.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Background estimates `O − R̂`, bottom stream first.
    pub backgrounds: Vec<Var>,
    /// Stream of each background: 0 bottom, 1 middle, 2 top.
    pub streams: Vec<usize>,
    pub half: Vec<Var>,
    pub quarter: Vec<Var>,
    /// Bottleneck probes keyed by module name, in evaluation order.
    pub probes: Vec<(&'static str, Probe)>,
}

impl ForwardOutput {
    /// The primary derained estimate.
    pub fn background(&self) -> Var {
        self.backgrounds[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollaborativeModel {
    pub config: ModelConfig,
    pub params: ParamSet<f32>,
    bottom: Stream,
    middle: Option<Stream>,
    top: Option<Stream>,
    modules: Vec<(&'static str, EncDec)>,
    bridges: Bridges,
    half_heads: Vec<(&'static str, ScaleHead)>,
    quarter_heads: Vec<(&'static str, ScaleHead)>,
}

/// Rain heads start small so the initial estimate stays close to the input.
const RAIN_HEAD_GAIN: f32 = 0.1;

fn stream(params: &mut ParamSet<f32>, init: &mut Initializer, name: &str, c: usize) -> Stream {
    Stream {
        stem: Conv::new(params, init, &format!("{name}.stem"), 3, c, 3, true),
        head: Conv::with_weights(
            params,
            &format!("{name}.head"),
            init.kaiming(3, c, 3).map(|v| v * RAIN_HEAD_GAIN),
            true,
        ),
    }
}

/// Builds a freshly initialized model; identical seeds give identical weights.
pub fn model_init(config: &ModelConfig, seed: u64) -> Result<CollaborativeModel> {
    config.validate()?;
    let c = config.channels;
    let mut params = ParamSet::new();
    let mut init = Initializer::new(seed);
    let cascaded = config.cascaded;
    let bottom = stream(&mut params, &mut init, "bottom", c);
    let middle = (!cascaded && config.use_middle).then(|| stream(&mut params, &mut init, "middle", c));
    let top = (!cascaded && config.use_top).then(|| stream(&mut params, &mut init, "top", c));

    let order: &[&'static str] = if cascaded { &CASCADE_ORDER } else { &SITE_ORDER };
    let mut modules = Vec::new();
    for &name in order {
        let present = cascaded
            || match &name[..2] {
                "n1" => true,
                "n2" => middle.is_some(),
                _ => top.is_some(),
            };
        if present {
            modules.push((name, EncDec::new(&mut params, &mut init, name, config)?));
        }
    }

    let mut bridge = |name: &str, on: bool| {
        on.then(|| Conv::new(&mut params, &mut init, &format!("bridge.{name}"), 2 * c, c, 1, true))
    };
    let bridges = Bridges {
        bottom_to_middle: bridge("bottom_to_middle", middle.is_some()),
        top_to_middle: bridge("top_to_middle", middle.is_some() && top.is_some()),
        middle_to_bottom: bridge("middle_to_bottom", middle.is_some()),
    };

    let full = config.mscc == MsccMode::FullScale;
    let mut head = |name: &str, halvings: usize| ScaleHead {
        halvings: if full { 0 } else { halvings },
        conv: Conv::new(&mut params, &mut init, &format!("scale_head.{name}"), c, 3, 3, true),
    };
    let has = |name: &str| modules.iter().any(|(n, _)| *n == name);
    let mut half_heads = Vec::new();
    let mut quarter_heads = Vec::new();
    if config.mscc.half() {
        for name in ["n11", "n21"] {
            if has(name) {
                half_heads.push((name, head(name, 1)));
            }
        }
    }
    if config.mscc.quarter() && has("n12") {
        quarter_heads.push(("n12", head("n12", 2)));
    }

    Ok(CollaborativeModel {
        config: config.clone(),
        params,
        bottom,
        middle,
        top,
        modules,
        bridges,
        half_heads,
        quarter_heads,
    })
}

impl CollaborativeModel {
    fn module(&self, name: &str) -> &EncDec {
        &self.modules.iter().find(|(n, _)| *n == name).expect("module present").1
    }

    /// Names of modules whose bottleneck can be inspected.
    pub fn sites(&self) -> Vec<&'static str> {
        self.modules.iter().map(|(n, _)| *n).collect()
    }

    /// Names of parameters that belong to the middle and top streams.
    pub fn auxiliary_params(&self) -> Vec<ParamId> {
        self.params
            .iter()
            .filter(|(_, name, _)| {
                ["middle.", "top.", "n2", "n3", "bridge.", "scale_head.n21"]
                    .iter()
                    .any(|p| name.starts_with(p))
            })
            .map(|(id, _, _)| id)
            .collect()
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, o: Var) -> Result<ForwardOutput> {
        let s = tape.shape(o);
        if s.c() != 3 {
            return Err(ModelError::Channels(s.c()));
        }
        if !s.h().is_multiple_of(8) || !s.w().is_multiple_of(8) || s.h() == 0 || s.w() == 0 {
            return Err(ModelError::Indivisible { h: s.h(), w: s.w() });
        }
        let mut features: Vec<(&'static str, Var)> = Vec::new();
        let mut probes = Vec::new();
        let mut run =
            |tape: &mut Tape<T>, name: &'static str, x: Var, features: &mut Vec<(&'static str, Var)>| -> Result<Var> {
                let (y, probe) = self.module(name).forward(tape, bound, x)?;
                probes.push((name, probe));
                features.push((name, y));
                Ok(y)
            };
        let residual = |tape: &mut Tape<T>, head: &Conv, f: Var| -> Result<Var> {
            let r = head.forward(tape, bound, f)?;
            Ok(tape.sub(o, r)?)
        };
        let fuse = |tape: &mut Tape<T>, conv: &Conv, a: Var, b: Var| -> Result<Var> {
            let cat = tape.concat(&[a, b])?;
            Ok(conv.forward(tape, bound, cat)?)
        };

        let mut backgrounds = Vec::new();
        let mut streams = vec![0];
        if self.config.cascaded {
            let mut h = self.bottom.stem.forward_lrelu(tape, bound, o)?;
            for name in CASCADE_ORDER {
                h = run(tape, name, h, &mut features)?;
            }
            backgrounds.push(residual(tape, &self.bottom.head, h)?);
        } else {
            let stem_b = self.bottom.stem.forward_lrelu(tape, bound, o)?;
            let f11 = run(tape, "n11", stem_b, &mut features)?;
            let f31 = match &self.top {
                Some(top) => {
                    let stem_t = top.stem.forward_lrelu(tape, bound, o)?;
                    Some(run(tape, "n31", stem_t, &mut features)?)
                }
                None => None,
            };
            let f22 = match &self.middle {
                Some(middle) => {
                    let stem_m = middle.stem.forward_lrelu(tape, bound, o)?;
                    let in21 = fuse(
                        tape,
                        self.bridges.bottom_to_middle.as_ref().expect("bridge"),
                        stem_m,
                        f11,
                    )?;
                    let f21 = run(tape, "n21", in21, &mut features)?;
                    let in22 = match (f31, &self.bridges.top_to_middle) {
                        (Some(f31), Some(conv)) => fuse(tape, conv, f21, f31)?,
                        _ => f21,
                    };
                    Some(run(tape, "n22", in22, &mut features)?)
                }
                None => None,
            };
            let f12 = run(tape, "n12", f11, &mut features)?;
            let in13 = match (f22, &self.bridges.middle_to_bottom) {
                (Some(f22), Some(conv)) => fuse(tape, conv, f12, f22)?,
                _ => f12,
            };
            let f13 = run(tape, "n13", in13, &mut features)?;
            backgrounds.push(residual(tape, &self.bottom.head, f13)?);
            if let (Some(m), Some(f22)) = (&self.middle, f22) {
                backgrounds.push(residual(tape, &m.head, f22)?);
                streams.push(1);
            }
            if let (Some(t), Some(f31)) = (&self.top, f31) {
                backgrounds.push(residual(tape, &t.head, f31)?);
                streams.push(2);
            }
        }

        let tap = |name: &str| {
            features
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, v)| *v)
                .expect("tapped module ran")
        };
        let mut half = Vec::new();
        for (name, head) in &self.half_heads {
            half.push(head.forward(tape, bound, tap(name))?);
        }
        let mut quarter = Vec::new();
        for (name, head) in &self.quarter_heads {
            quarter.push(head.forward(tape, bound, tap(name))?);
        }
        Ok(ForwardOutput {
            backgrounds,
            streams,
            half,
            quarter,
            probes,
        })
    }

    /// Full-image inference; sides that are not multiples of 8 are
    /// reflect-padded and the result cropped back.
    pub fn derain(&self, rainy: &Image) -> Result<Image> {
        let mut tape = Tape::<f32>::new();
        let bound = self.params.bind(&mut tape, false);
        let o = tape.constant(rainy.to_rgb().to_tensor());
        let (h, w) = (rainy.height(), rainy.width());
        let (eh, ew) = ((8 - h % 8) % 8, (8 - w % 8) % 8);
        let (top, left) = (eh / 2, ew / 2);
        let padded = tape.pad_reflect(o, [top, eh - top, left, ew - left])?;
        let out = self.forward(&mut tape, &bound, padded)?;
        let b = tape.crop(out.background(), top, left, h, w)?;
        Image::from_tensor(tape.value(b), 0).map_err(|e| ModelError::Config(e.to_string()))
    }

    /// Bottleneck features of module `site` for `image`, as `(before, after)`
    /// `(1, C, H/4, W/4)` tensors.
    pub fn inspect(
        &self,
        image: &Image,
        site: &str,
    ) -> Result<(crate::tensor::Tensor<f32>, crate::tensor::Tensor<f32>)> {
        if !self.sites().contains(&site) {
            return Err(ModelError::UnknownSite {
                name: site.to_string(),
                valid: self.sites().join(", "),
            });
        }
        let mut tape = Tape::<f32>::new();
        let bound = self.params.bind(&mut tape, false);
        let o = tape.constant(image.to_rgb().to_tensor());
        let out = self.forward(&mut tape, &bound, o)?;
        let (_, probe) = out.probes.iter().find(|(n, _)| *n == site).expect("site ran");
        Ok((tape.value(probe.before).clone(), tape.value(probe.after).clone()))
    }
}
