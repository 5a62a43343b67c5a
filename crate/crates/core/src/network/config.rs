use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::{ModelError, Result};
use crate::biscsm::{BiscsmConfig, ScaleFusion};

/// Which auxiliary scale constraints are trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MsccMode {
    None,
    HalfOnly,
    QuarterOnly,
    /// Both head groups predict the full-resolution background.
    FullScale,
    Both,
}

impl MsccMode {
    pub fn half(self) -> bool {
        matches!(self, MsccMode::HalfOnly | MsccMode::FullScale | MsccMode::Both)
    }

    pub fn quarter(self) -> bool {
        matches!(self, MsccMode::QuarterOnly | MsccMode::FullScale | MsccMode::Both)
    }
}

impl fmt::Display for MsccMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MsccMode::None => "none",
            MsccMode::HalfOnly => "half",
            MsccMode::QuarterOnly => "quarter",
            MsccMode::FullScale => "full",
            MsccMode::Both => "both",
        })
    }
}

impl FromStr for MsccMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "none" => MsccMode::None,
            "half" => MsccMode::HalfOnly,
            "quarter" => MsccMode::QuarterOnly,
            "full" => MsccMode::FullScale,
            "both" => MsccMode::Both,
            _ => return Err(format!("expected none|half|quarter|full|both, got {s}")),
        })
    }
}

/// Architecture hyperparameters and ablation switches.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    /// Side of the learned positional grid (training crop / 4).
    pub position_grid: usize,
    /// Bottleneck block; `None` leaves the bottleneck empty.
    pub biscsm: Option<BiscsmConfig>,
    pub use_middle: bool,
    pub use_top: bool,
    /// Chain all six modules into a single stream.
    pub cascaded: bool,
    pub mscc: MsccMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 20,
            position_grid: 32,
            biscsm: Some(BiscsmConfig::default()),
            use_middle: true,
            use_top: true,
            cascaded: false,
            mscc: MsccMode::Both,
        }
    }
}

fn fusion_name(f: ScaleFusion) -> &'static str {
    match f {
        ScaleFusion::Mining => "mining",
        ScaleFusion::Sum => "sum",
        ScaleFusion::Conv1x1 => "conv1x1",
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(ModelError::Config("channels must be at least 1".into()));
        }
        if self.position_grid == 0 {
            return Err(ModelError::Config("position_grid must be at least 1".into()));
        }
        if let Some(b) = &self.biscsm {
            b.validate()?;
        }
        Ok(())
    }

    /// Flat `key=value` pairs in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let b = self.biscsm;
        vec![
            ("channels", self.channels.to_string()),
            ("position_grid", self.position_grid.to_string()),
            ("bottleneck", b.map_or("none", |b| fusion_name(b.fusion)).to_string()),
            ("patch", b.map_or(3, |b| b.patch).to_string()),
            ("up_to_down", b.is_none_or(|b| b.up_to_down).to_string()),
            ("down_to_up", b.is_none_or(|b| b.down_to_up).to_string()),
            ("position", b.is_none_or(|b| b.position).to_string()),
            ("use_middle", self.use_middle.to_string()),
            ("use_top", self.use_top.to_string()),
            ("cascaded", self.cascaded.to_string()),
            ("mscc", self.mscc.to_string()),
        ]
    }

    /// Inverse of [`ModelConfig::to_pairs`]; missing keys keep defaults.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut block = BiscsmConfig::default();
        let mut has_block = true;
        for (k, v) in pairs {
            let bad = |e: String| ModelError::Config(format!("{k}: {e}"));
            let flag = || v.parse::<bool>().map_err(|e| bad(e.to_string()));
            let count = || v.parse::<usize>().map_err(|e| bad(e.to_string()));
            match k.as_str() {
                "channels" => cfg.channels = count()?,
                "position_grid" => cfg.position_grid = count()?,
                "bottleneck" => match v.as_str() {
                    "none" => has_block = false,
                    "mining" => block.fusion = ScaleFusion::Mining,
                    "sum" => block.fusion = ScaleFusion::Sum,
                    "conv1x1" => block.fusion = ScaleFusion::Conv1x1,
                    _ => return Err(bad("expected none|mining|sum|conv1x1".into())),
                },
                "patch" => block.patch = count()?,
                "up_to_down" => block.up_to_down = flag()?,
                "down_to_up" => block.down_to_up = flag()?,
                "position" => block.position = flag()?,
                "use_middle" => cfg.use_middle = flag()?,
                "use_top" => cfg.use_top = flag()?,
                "cascaded" => cfg.cascaded = flag()?,
                "mscc" => cfg.mscc = v.parse().map_err(bad)?,
                _ => {}
            }
        }
        cfg.biscsm = has_block.then_some(block);
        cfg.validate()?;
        Ok(cfg)
    }
}
