//! Desk-scale training of the fusion network with fixed analytical flow.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Triplet;
use crate::error::{Error, Result};
use crate::flow::DenseFlow;
use crate::fusion::{FusionConfig, FusionWeights, PaddedBatch};
use crate::nn::loss::{census_with_grad, l1_with_grad};
use crate::nn::{
    adamw_step, distillation_loss, AdamW, CensusParams, LossBreakdown, Tensor4, DISTILLATION_WEIGHT,
};
use crate::pipeline::{bidirectional_flow, PipelineConfig};
use crate::warp::{Timestep, WarpPair};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamW,
    pub census: CensusParams,
    pub distillation_weight: f64,
    /// Seeds the weight initialization and the sample order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 1,
            optimizer: AdamW::default(),
            census: CensusParams::default(),
            distillation_weight: DISTILLATION_WEIGHT,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if !(self.distillation_weight >= 0.0) {
            return Err(Error::InvalidParameter("distillation_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// A training triplet with an optional reference flow from frame 0 to
/// frame 1 for the distillation term.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub triplet: Triplet,
    pub flow_label: Option<DenseFlow>,
}

impl From<Triplet> for TrainSample {
    fn from(triplet: Triplet) -> Self {
        TrainSample { triplet, flow_label: None }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: FusionWeights,
    /// Losses of every step, measured before that step's update.
    pub history: Vec<LossBreakdown>,
}

/// Everything that stays fixed across steps for one sample.
struct Prepared {
    sample: TrainSample,
    pair: WarpPair,
    l_dis: f64,
}

fn prepare(samples: &[TrainSample], pipeline: &PipelineConfig) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            let t = &s.triplet;
            t.frame0.check_same_shape(&t.gt)?;
            t.frame0.check_same_shape(&t.frame1)?;
            let (f01, f10) = bidirectional_flow(&t.frame0, &t.frame1, pipeline)?;
            // The flow has no trainable parameters, so this term is logged
            // but contributes no gradient.
            let l_dis = match &s.flow_label {
                Some(label) => distillation_loss(&f01, label)?,
                None => 0.0,
            };
            Ok(Prepared {
                pair: WarpPair::build(&t.frame0, &t.frame1, &f01, &f10, Timestep::MIDDLE)?,
                sample: s.clone(),
                l_dis,
            })
        })
        .collect()
}

/// Trains fresh weights seeded from `config.seed`.
pub fn train_fusion(
    samples: &[TrainSample],
    fusion: &FusionConfig,
    pipeline: &PipelineConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let channels = samples
        .first()
        .ok_or_else(|| Error::Dataset("training set is empty".into()))?
        .triplet
        .frame0
        .channels();
    let weights = FusionWeights::new(fusion, channels, config.seed)?;
    train_fusion_from(weights, samples, pipeline, config)
}

/// Continues training `weights`. Flows are estimated once up front; each
/// step draws the next batch from a seeded per-epoch shuffle. A non-finite
/// loss aborts with the last finite losses in the message.
pub fn train_fusion_from(
    mut weights: FusionWeights,
    samples: &[TrainSample],
    pipeline: &PipelineConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    pipeline.validate()?;
    if samples.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let prepared = prepare(samples, pipeline)?;
    let batch = config.batch_size.min(prepared.len());
    if batch > 1 && prepared.iter().any(|p| p.pair.dims() != prepared[0].pair.dims()) {
        return Err(Error::InvalidParameter(
            "batch_size > 1 needs all training frames to share one size".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = Vec::new();
    let mut history = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut idx = Vec::with_capacity(batch);
        while idx.len() < batch {
            if order.is_empty() {
                order = (0..prepared.len()).collect();
                order.shuffle(&mut rng);
            }
            idx.push(order.pop().expect("refilled"));
        }
        let items: Vec<_> = idx
            .iter()
            .map(|&i| {
                let p = &prepared[i];
                (&p.sample.triplet.frame0, &p.sample.triplet.frame1, &p.pair)
            })
            .collect();
        let input = PaddedBatch::new(&items)?;
        let gt_imgs: Vec<_> = idx.iter().map(|&i| &prepared[i].sample.triplet.gt).collect();
        let gt = Tensor4::from_images(&gt_imgs)?;

        let (pred, cache) = weights.forward(&input)?;
        let (l_rec, g_rec) = l1_with_grad(&pred, &gt, true)?;
        let (l_cen, g_cen) = census_with_grad(&pred, &gt, &config.census, true)?;
        let l_dis = idx.iter().map(|&i| prepared[i].l_dis).sum::<f64>() / idx.len() as f64;
        let losses = LossBreakdown::new(l_rec, l_cen, l_dis, config.distillation_weight);
        if !losses.is_finite() {
            return Err(divergence(step, &history));
        }
        history.push(losses);

        let mut g = g_rec.expect("requested");
        g.add_assign(&g_cen.expect("requested"))?;
        weights.store_mut().zero_grads();
        weights.backward(&cache, &g)?;
        adamw_step(weights.store_mut(), &config.optimizer)?;
        if !weights.store().params().iter().all(|p| p.value.is_finite()) {
            return Err(divergence(step + 1, &history));
        }
        log::debug!(
            "step {step}: l_rec {:.6} l_cen {:.6} total {:.6}",
            losses.l_rec,
            losses.l_cen,
            losses.total
        );
    }
    Ok(TrainOutcome { weights, history })
}

fn divergence(step: usize, history: &[LossBreakdown]) -> Error {
    let last = match history.last() {
        Some(l) => format!(
            "last finite losses: l_rec {} l_cen {} l_dis {} total {}",
            l.l_rec, l.l_cen, l.l_dis, l.total
        ),
        None => "no finite losses recorded".into(),
    };
    Error::Numeric(format!("training diverged at step {step}; {last}"))
}

/// Writes `step,l_rec,l_cen,l_dis,total` rows.
pub fn write_history_csv(history: &[LossBreakdown], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "step,l_rec,l_cen,l_dis,total")?;
    for (i, l) in history.iter().enumerate() {
        writeln!(out, "{i},{},{},{},{}", l.l_rec, l.l_cen, l.l_dis, l.total)?;
    }
    Ok(())
}
