//! Bidirectional cross-scale patch mining.
//!
//! Each direction matches non-overlapping `p×p` patches at one scale against
//! patches of the same feature map at half resolution, and adds the
//! attention-weighted patches back as a residual.

use thiserror::Error;

use crate::nn::{Bound, Conv, Initializer, ParamId, ParamSet};
use crate::tensor::kernels::Boundary;
use crate::tensor::{Scalar, Shape, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BiscsmError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid mining configuration: {0}")]
    Config(String),

    #[error("feature map {h}x{w} is smaller than the {p}x{p} patch")]
    Degenerate { h: usize, w: usize, p: usize },
}

pub type Result<T> = std::result::Result<T, BiscsmError>;

/// How the full- and half-resolution features are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleFusion {
    /// Patch attention in the enabled directions.
    Mining,
    /// `x + up2x(down2x(x))`.
    Sum,
    /// 1×1 convolution over `[x, up2x(down2x(x))]`.
    Conv1x1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BiscsmConfig {
    pub patch: usize,
    pub fusion: ScaleFusion,
    pub down_to_up: bool,
    pub up_to_down: bool,
    pub position: bool,
}

impl Default for BiscsmConfig {
    fn default() -> Self {
        BiscsmConfig {
            patch: 3,
            fusion: ScaleFusion::Mining,
            down_to_up: true,
            up_to_down: true,
            position: true,
        }
    }
}

impl BiscsmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 {
            return Err(BiscsmError::Config("patch size must be at least 1".into()));
        }
        if self.fusion == ScaleFusion::Mining && !self.down_to_up && !self.up_to_down {
            return Err(BiscsmError::Config(
                "at least one mining direction must be enabled".into(),
            ));
        }
        Ok(())
    }
}

/// Query, key and value projections of one mining direction.
#[derive(Clone, Debug, PartialEq)]
pub struct MiningWeights {
    pub query: Conv,
    pub key: Conv,
    pub value: Conv,
}

impl MiningWeights {
    pub fn new(params: &mut ParamSet<f32>, init: &mut Initializer, name: &str, channels: usize) -> Self {
        MiningWeights {
            query: Conv::new(params, init, &format!("{name}.query"), channels, channels, 1, false),
            key: Conv::new(params, init, &format!("{name}.key"), channels, channels, 1, false),
            value: Conv::new(params, init, &format!("{name}.value"), channels, channels, 1, false),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.query, &self.key, &self.value]
            .iter()
            .flat_map(|c| c.params())
            .collect()
    }
}

/// Reflect-pads `x` so both sides are multiples of `m`; returns the padded
/// value and the crop window `(top, left)` of the original.
fn pad_to_multiple<T: Scalar>(tape: &mut Tape<T>, x: Var, m: usize) -> Result<(Var, usize, usize)> {
    let s = tape.shape(x);
    let extra_h = (m - s.h() % m) % m;
    let extra_w = (m - s.w() % m) % m;
    let (top, left) = (extra_h / 2, extra_w / 2);
    let padded = tape.pad_reflect(x, [top, extra_h - top, left, extra_w - left])?;
    Ok((padded, top, left))
}

fn check_size(s: Shape, p: usize) -> Result<()> {
    if s.h() < p || s.w() < p {
        return Err(BiscsmError::Degenerate { h: s.h(), w: s.w(), p });
    }
    Ok(())
}

/// Attention of `p×p` patches of `query_src` over patches of `ref_src`,
/// folded back to the shape of `query_src`.
fn mine<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    weights: &MiningWeights,
    query_src: Var,
    ref_src: Var,
    p: usize,
) -> Result<Var> {
    let q = weights.query.forward(tape, bound, query_src)?;
    let k = weights.key.forward(tape, bound, ref_src)?;
    let v = weights.value.forward(tape, bound, ref_src)?;
    let q = tape.unfold_patches(q, p, p)?;
    let k = tape.unfold_patches(k, p, p)?;
    let v = tape.unfold_patches(v, p, p)?;
    let y = tape.attend(q, k, v)?;
    let target = tape.shape(query_src);
    Ok(tape.fold_patches(y, target, p, p)?)
}

/// Full-resolution patches query the half-resolution map; the mined patches
/// are added to the input.
pub fn up_to_down_mine<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    weights: &MiningWeights,
    x: Var,
    p: usize,
) -> Result<Var> {
    let s = tape.shape(x);
    check_size(s, p)?;
    let (xp, top, left) = pad_to_multiple(tape, x, 2 * p)?;
    let coarse = tape.down2x(xp)?;
    let mined = mine(tape, bound, weights, xp, coarse, p)?;
    let out = tape.add(xp, mined)?;
    Ok(tape.crop(out, top, left, s.h(), s.w())?)
}

/// Half-resolution patches query the full-resolution map; the mined coarse
/// map is upsampled (periodic boundary) and added to the input.
pub fn down_to_up_mine<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    weights: &MiningWeights,
    x: Var,
    p: usize,
) -> Result<Var> {
    let s = tape.shape(x);
    check_size(s, p)?;
    let (xp, top, left) = pad_to_multiple(tape, x, 2 * p)?;
    let coarse = tape.down2x(xp)?;
    let mined = mine(tape, bound, weights, coarse, xp, p)?;
    let ps = tape.shape(xp);
    let up = tape.resize(mined, ps.h(), ps.w(), Boundary::Wrap)?;
    let out = tape.add(xp, up)?;
    Ok(tape.crop(out, top, left, s.h(), s.w())?)
}

/// `[0.5·I | 0.5·I]`: averages two `channels`-wide inputs.
fn averaging_kernel(channels: usize) -> Tensor<f32> {
    let mut w = Tensor::zeros([channels, 2 * channels, 1, 1]);
    for o in 0..channels {
        w.data_mut()[o * 2 * channels + o] = 0.5;
        w.data_mut()[o * 2 * channels + channels + o] = 0.5;
    }
    w
}

/// Scale-fusion block placed at the encoder-decoder bottleneck.
#[derive(Clone, Debug, PartialEq)]
pub struct Biscsm {
    pub config: BiscsmConfig,
    pub up_to_down: Option<MiningWeights>,
    pub down_to_up: Option<MiningWeights>,
    pub fuse: Option<Conv>,
    pub position: Option<ParamId>,
}

impl Biscsm {
    /// `position_hw` is the feature resolution seen during training.
    pub fn new(
        params: &mut ParamSet<f32>,
        init: &mut Initializer,
        name: &str,
        channels: usize,
        position_hw: (usize, usize),
        config: BiscsmConfig,
    ) -> Result<Self> {
        config.validate()?;
        let mining = config.fusion == ScaleFusion::Mining;
        let up_to_down = (mining && config.up_to_down)
            .then(|| MiningWeights::new(params, init, &format!("{name}.up_to_down"), channels));
        let down_to_up = (mining && config.down_to_up)
            .then(|| MiningWeights::new(params, init, &format!("{name}.down_to_up"), channels));
        let needs_fuse = (up_to_down.is_some() && down_to_up.is_some()) || config.fusion == ScaleFusion::Conv1x1;
        let fuse =
            needs_fuse.then(|| Conv::with_weights(params, &format!("{name}.fuse"), averaging_kernel(channels), true));
        let position = config.position.then(|| {
            params.add(
                format!("{name}.position"),
                Tensor::zeros([1, channels, position_hw.0, position_hw.1]),
            )
        });
        Ok(Biscsm {
            config,
            up_to_down,
            down_to_up,
            fuse,
            position,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        let x = match self.position {
            Some(id) => {
                let mut pos = bound[id];
                let ps = tape.shape(pos);
                if (ps.h(), ps.w()) != (s.h(), s.w()) {
                    pos = tape.resize(pos, s.h(), s.w(), Boundary::Clamp)?;
                }
                tape.add_batch_broadcast(x, pos)?
            }
            None => x,
        };
        let p = self.config.patch;
        match self.config.fusion {
            ScaleFusion::Mining => {
                let mut current = x;
                let mut outputs = Vec::with_capacity(2);
                if let Some(w) = &self.up_to_down {
                    current = up_to_down_mine(tape, bound, w, current, p)?;
                    outputs.push(current);
                }
                if let Some(w) = &self.down_to_up {
                    current = down_to_up_mine(tape, bound, w, current, p)?;
                    outputs.push(current);
                }
                match &self.fuse {
                    Some(fuse) => {
                        let both = tape.concat(&outputs)?;
                        Ok(fuse.forward(tape, bound, both)?)
                    }
                    None => Ok(current),
                }
            }
            ScaleFusion::Sum | ScaleFusion::Conv1x1 => {
                let (xp, top, left) = pad_to_multiple(tape, x, 2)?;
                let coarse = tape.down2x(xp)?;
                let up = tape.up2x(coarse)?;
                let up = tape.crop(up, top, left, s.h(), s.w())?;
                match &self.fuse {
                    Some(fuse) => {
                        let both = tape.concat(&[x, up])?;
                        Ok(fuse.forward(tape, bound, both)?)
                    }
                    None => Ok(tape.add(x, up)?),
                }
            }
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for w in [&self.up_to_down, &self.down_to_up].into_iter().flatten() {
            ids.extend(w.params());
        }
        if let Some(f) = &self.fuse {
            ids.extend(f.params());
        }
        ids.extend(self.position);
        ids
    }
}
