//! End-to-end interpolation: bidirectional flow, intermediate flows,
//! backward warping and fusion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::farneback::{estimate_flow_gf, GfParams};
use crate::flow::lk::{estimate_flow_lk, LkParams, ShiTomasiParams};
use crate::flow::DenseFlow;
use crate::fusion::{interpolate_learned, FusionConfig, FusionMode, FusionWeights};
use crate::image::Image;
use crate::warp::{fuse_blend, Timestep, WarpPair};

/// How bidirectional flow is obtained from the frames themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowMethod {
    /// Dense polynomial-expansion flow.
    #[default]
    Gf,
    /// Sparse Lucas-Kanade tracks, densified.
    Lk,
    /// No motion. With blend fusion this is the plain overlay of the two
    /// inputs, the baseline every estimator should beat.
    Zero,
}

impl std::str::FromStr for FlowMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gf" => Ok(FlowMethod::Gf),
            "lk" => Ok(FlowMethod::Lk),
            "zero" => Ok(FlowMethod::Zero),
            _ => Err(Error::InvalidParameter(format!(
                "unknown flow method `{s}` (expected gf, lk or zero)"
            ))),
        }
    }
}

impl std::fmt::Display for FlowMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FlowMethod::Gf => "gf",
            FlowMethod::Lk => "lk",
            FlowMethod::Zero => "zero",
        })
    }
}

/// Everything the pipeline needs besides the frames and weights.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub flow: FlowMethod,
    pub gf: GfParams,
    pub shi_tomasi: ShiTomasiParams,
    pub lk: LkParams,
    pub fusion: FusionConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.gf.validate()?;
        self.shi_tomasi.validate()?;
        self.lk.validate()?;
        self.fusion.validate()
    }
}

/// Flow from `from` to `to` with the configured estimator.
pub fn estimate_flow(from: &Image, to: &Image, config: &PipelineConfig) -> Result<DenseFlow> {
    from.check_same_shape(to)?;
    match config.flow {
        FlowMethod::Gf => estimate_flow_gf(from, to, &config.gf),
        FlowMethod::Lk => estimate_flow_lk(from, to, &config.shi_tomasi, &config.lk),
        FlowMethod::Zero => Ok(DenseFlow::zeros(from.width(), from.height())),
    }
}

/// `(f01, f10)`: two independent estimator calls.
pub fn bidirectional_flow(
    frame0: &Image,
    frame1: &Image,
    config: &PipelineConfig,
) -> Result<(DenseFlow, DenseFlow)> {
    Ok((
        estimate_flow(frame0, frame1, config)?,
        estimate_flow(frame1, frame0, config)?,
    ))
}

/// Warps and fuses given bidirectional flow.
pub fn synthesize(
    frame0: &Image,
    frame1: &Image,
    f01: &DenseFlow,
    f10: &DenseFlow,
    t: Timestep,
    fusion: &FusionConfig,
    weights: Option<&FusionWeights>,
) -> Result<Image> {
    let pair = WarpPair::build(frame0, frame1, f01, f10, t)?;
    match fusion.mode {
        FusionMode::Blend => Ok(fuse_blend(&pair, t)),
        FusionMode::Learned => {
            let w = weights.ok_or(Error::MissingWeights)?;
            interpolate_learned(frame0, frame1, &pair, w)
        }
    }
}

/// Full pipeline for one timestep.
pub fn interpolate(
    frame0: &Image,
    frame1: &Image,
    t: Timestep,
    config: &PipelineConfig,
    weights: Option<&FusionWeights>,
) -> Result<Image> {
    Ok(interpolate_many(frame0, frame1, &[t], config, weights)?.remove(0))
}

/// Several timesteps of one pair, sharing a single flow computation.
pub fn interpolate_many(
    frame0: &Image,
    frame1: &Image,
    ts: &[Timestep],
    config: &PipelineConfig,
    weights: Option<&FusionWeights>,
) -> Result<Vec<Image>> {
    check_ready(frame0, frame1, config, weights)?;
    let (f01, f10) = bidirectional_flow(frame0, frame1, config)?;
    interpolate_with_flows(frame0, frame1, &f01, &f10, ts, config, weights)
}

/// Several timesteps from externally supplied flow (for example read from
/// `.flo` files). The flows must match the frame size.
pub fn interpolate_with_flows(
    frame0: &Image,
    frame1: &Image,
    f01: &DenseFlow,
    f10: &DenseFlow,
    ts: &[Timestep],
    config: &PipelineConfig,
    weights: Option<&FusionWeights>,
) -> Result<Vec<Image>> {
    check_ready(frame0, frame1, config, weights)?;
    f01.check_dims(frame0.width(), frame0.height())?;
    f10.check_dims(frame0.width(), frame0.height())?;
    ts.iter()
        .map(|&t| synthesize(frame0, frame1, f01, f10, t, &config.fusion, weights))
        .collect()
}

fn check_ready(
    frame0: &Image,
    frame1: &Image,
    config: &PipelineConfig,
    weights: Option<&FusionWeights>,
) -> Result<()> {
    config.validate()?;
    frame0.check_same_shape(frame1)?;
    if config.fusion.mode == FusionMode::Learned && weights.is_none() {
        return Err(Error::MissingWeights);
    }
    Ok(())
}
