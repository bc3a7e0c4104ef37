//! Learned fusion: a shared context extractor and a small U-Net that turns
//! two warped frames into the output frame through a blend mask and a
//! bounded residual.
//!
//! Topology, with `B = base_channels` and `c` image channels; level `s`
//! lives at `1/2^(s+1)` of the (padded) input size:
//!
//! ```text
//! context (per frame, shared weights):  stage s: stride-2 conv → PReLU → R res blocks
//!                                        channels B/2, B, 2B, 4B; each output warped
//!                                        by the intermediate flow resized to its level
//! encoder input  [warped0, warped1, flow_t0, flow_t1]       (2c + 4 channels)
//! encoder stage s: [enc s−1, ctx0 s−1, ctx1 s−1] → B·2^s
//! decoder:  up(enc3, ctx 3) → 4B,  up(·, enc2, ctx 2) → 2B,  up(·, enc1, ctx 1) → B,
//!           up(·, enc0, ctx 0) → B/2 at full size
//! head:     conv([dec, encoder input]) → 1 mask logit + c residual channels
//! out = clamp(m·warped0 + (1 − m)·warped1 + 0.5·tanh(r), 0, 1),  m = sigmoid(logit)
//! ```
//!
//! Inputs are replicate-padded to a multiple of 16 and the output cropped
//! back. The head starts at zero, so a fresh network reproduces the
//! `t = 0.5` blend exactly.

mod checkpoint;
pub(crate) mod net;

pub use checkpoint::{load_weights, read_weights, save_weights, write_weights, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use self::net::{Conv, HeUniform, Init, Stage, StageCache, UpBlock, UpCache, Zeros};
use crate::error::{Error, Result};
use crate::flow::DenseFlow;
use crate::image::Image;
use crate::nn::{warp_features, warp_features_backward, ParamStore, Tensor4};
use crate::warp::WarpPair;

/// Spatial alignment required by the four stride-2 levels.
pub const ALIGN: usize = 16;
const LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Linear blend of the warped frames.
    #[default]
    Blend,
    /// The learned fusion network.
    Learned,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blend" => Ok(FusionMode::Blend),
            "learned" => Ok(FusionMode::Learned),
            _ => Err(Error::InvalidParameter(format!(
                "unknown fusion mode `{s}` (expected blend or learned)"
            ))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Blend => "blend",
            FusionMode::Learned => "learned",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub base_channels: usize,
    pub resblocks_per_stage: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::Blend,
            base_channels: 16,
            resblocks_per_stage: 4,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 4 || self.base_channels % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "base_channels must be even and >= 4, got {}",
                self.base_channels
            )));
        }
        if self.resblocks_per_stage == 0 {
            return Err(Error::InvalidParameter("resblocks_per_stage must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Network {
    ctx: Vec<Stage>,
    enc: Vec<Stage>,
    /// `dec[s]` lifts level `s` to level `s − 1` (full size for `s = 0`).
    dec: Vec<UpBlock>,
    head: Conv,
    base: usize,
}

fn ctx_channels(base: usize, s: usize) -> usize {
    (base / 2) << s
}

fn enc_channels(base: usize, s: usize) -> usize {
    base << s
}

impl Network {
    fn build(cfg: &FusionConfig, channels: usize, ps: &mut ParamStore, init: &mut dyn Init) -> Result<Self> {
        let b = cfg.base_channels;
        let r = cfg.resblocks_per_stage;
        let mut ctx = Vec::new();
        for s in 0..LEVELS {
            let cin = if s == 0 { channels } else { ctx_channels(b, s - 1) };
            ctx.push(Stage::build(ps, init, &format!("ctx.s{s}"), cin, ctx_channels(b, s), r)?);
        }
        let mut enc = Vec::new();
        for s in 0..LEVELS {
            let cin = if s == 0 {
                2 * channels + 4
            } else {
                enc_channels(b, s - 1) + 2 * ctx_channels(b, s - 1)
            };
            enc.push(Stage::build(ps, init, &format!("enc.s{s}"), cin, enc_channels(b, s), r)?);
        }
        let mut dec = Vec::new();
        for s in 0..LEVELS {
            // [dec s+1 (except at the coarsest level), enc s, ctx0 s, ctx1 s]
            let from_below = if s + 1 < LEVELS { enc_channels(b, s) } else { 0 };
            let cin = from_below + enc_channels(b, s) + 2 * ctx_channels(b, s);
            let cout = if s == 0 { b / 2 } else { enc_channels(b, s - 1) };
            dec.push(UpBlock::build(ps, init, &format!("dec.s{s}"), cin, cout)?);
        }
        let head = Conv::build(ps, &mut Zeros, "head", b / 2 + 2 * channels + 4, 1 + channels, 1, 0.0)?;
        Ok(Network {
            ctx,
            enc,
            dec,
            head,
            base: b,
        })
    }
}

/// Network parameters plus the architecture they were built for.
#[derive(Debug, Clone)]
pub struct FusionWeights {
    config: FusionConfig,
    channels: usize,
    store: ParamStore,
    net: Network,
}

impl PartialEq for FusionWeights {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.channels == other.channels && self.store == other.store
    }
}

impl FusionWeights {
    /// Seeded initialization for images with `channels` channels.
    pub fn new(config: &FusionConfig, channels: usize, seed: u64) -> Result<Self> {
        Self::build(config, channels, &mut HeUniform(ChaCha8Rng::seed_from_u64(seed)))
    }

    /// All convolution weights and biases zero; PReLU slopes keep their
    /// initial value.
    pub fn zeros(config: &FusionConfig, channels: usize) -> Result<Self> {
        Self::build(config, channels, &mut Zeros)
    }

    fn build(config: &FusionConfig, channels: usize, init: &mut dyn Init) -> Result<Self> {
        config.validate()?;
        if channels != 1 && channels != 3 {
            return Err(Error::Unsupported(format!("{channels}-channel fusion")));
        }
        let mut store = ParamStore::new();
        let net = Network::build(config, channels, &mut store, init)?;
        Ok(FusionWeights {
            config: FusionConfig {
                mode: FusionMode::Learned,
                ..*config
            },
            channels,
            store,
            net,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check_channels(&self, c: usize) -> Result<()> {
        if c == self.channels {
            Ok(())
        } else {
            Err(Error::WeightShape(format!(
                "weights built for {}-channel images, got {c} channels",
                self.channels
            )))
        }
    }
}

/// Warped context features of one frame, finest level first.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextFeatures {
    pub levels: Vec<Tensor4>,
}

pub(crate) fn padded_len(len: usize) -> usize {
    len.div_ceil(ALIGN) * ALIGN
}

/// Replicate-pads every plane on the right and bottom.
pub(crate) fn pad_tensor(t: &Tensor4, h: usize, w: usize) -> Tensor4 {
    let [n, c, th, tw] = t.dims();
    if (th, tw) == (h, w) {
        return t.clone();
    }
    let mut out = Tensor4::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let src = t.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h {
                let sy = y.min(th - 1);
                for x in 0..w {
                    dst[y * w + x] = src[sy * tw + x.min(tw - 1)];
                }
            }
        }
    }
    out
}

pub(crate) fn crop_tensor(t: &Tensor4, h: usize, w: usize) -> Tensor4 {
    let [n, c, th, tw] = t.dims();
    if (th, tw) == (h, w) {
        return t.clone();
    }
    let mut out = Tensor4::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let src = t.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h {
                dst[y * w..(y + 1) * w].copy_from_slice(&src[y * tw..y * tw + w]);
            }
        }
    }
    out
}

pub(crate) fn pad_flow(f: &DenseFlow, h: usize, w: usize) -> DenseFlow {
    let t = flow_tensor(&[f]);
    let p = pad_tensor(&t, h, w);
    DenseFlow::from_planes_unchecked(w, h, p.plane(0, 0).to_vec(), p.plane(0, 1).to_vec())
        .expect("consistent planes")
}

/// Flows as a `(n, 2, h, w)` tensor.
pub(crate) fn flow_tensor(flows: &[&DenseFlow]) -> Tensor4 {
    let (w, h) = flows[0].dims();
    let mut t = Tensor4::zeros([flows.len(), 2, h, w]);
    for (b, f) in flows.iter().enumerate() {
        t.plane_mut(b, 0).copy_from_slice(f.u());
        t.plane_mut(b, 1).copy_from_slice(f.v());
    }
    t
}

pub(crate) struct CtxCache {
    stages: Vec<StageCache>,
    flows: Vec<Vec<DenseFlow>>,
}

pub(crate) struct FuseCache {
    w0: Tensor4,
    w1: Tensor4,
    e_in: Vec<Tensor4>,
    enc: Vec<StageCache>,
    dec: Vec<UpCache>,
    head_in: Tensor4,
    mask: Tensor4,
    res_tanh: Tensor4,
    raw: Tensor4,
}

impl Network {
    /// Context features of a padded frame batch, warped per item.
    pub(crate) fn context(
        &self,
        ps: &ParamStore,
        frames: &Tensor4,
        flows: &[&DenseFlow],
    ) -> Result<(Vec<Tensor4>, CtxCache)> {
        let mut x = frames.clone();
        let mut warped = Vec::with_capacity(LEVELS);
        let mut stages = Vec::with_capacity(LEVELS);
        let mut level_flows = Vec::with_capacity(LEVELS);
        for stage in &self.ctx {
            let (y, cache) = stage.forward(ps, x)?;
            let lf: Vec<DenseFlow> = flows.iter().map(|f| f.resize(y.width(), y.height())).collect();
            let refs: Vec<&DenseFlow> = lf.iter().collect();
            warped.push(warp_features(&y, &refs)?);
            stages.push(cache);
            level_flows.push(lf);
            x = y;
        }
        Ok((
            warped,
            CtxCache {
                stages,
                flows: level_flows,
            },
        ))
    }

    pub(crate) fn context_backward(
        &self,
        ps: &mut ParamStore,
        cache: &CtxCache,
        grads: &[Tensor4],
    ) -> Result<()> {
        let mut from_above: Option<Tensor4> = None;
        for s in (0..LEVELS).rev() {
            let refs: Vec<&DenseFlow> = cache.flows[s].iter().collect();
            let mut g = warp_features_backward(&grads[s], &refs)?;
            if let Some(a) = from_above.take() {
                g.add_assign(&a)?;
            }
            from_above = Some(self.ctx[s].backward(ps, &cache.stages[s], &g)?);
        }
        Ok(())
    }

    /// The fusion U-Net on padded inputs. Returns the clamped output.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn fuse(
        &self,
        ps: &ParamStore,
        w0: &Tensor4,
        w1: &Tensor4,
        ft0: &Tensor4,
        ft1: &Tensor4,
        c0: &[Tensor4],
        c1: &[Tensor4],
    ) -> Result<(Tensor4, FuseCache)> {
        let input = Tensor4::concat_channels(&[w0, w1, ft0, ft1])?;
        let mut e_in = vec![input];
        let mut enc_out = Vec::with_capacity(LEVELS);
        let mut enc_cache = Vec::with_capacity(LEVELS);
        for s in 0..LEVELS {
            let x = if s == 0 {
                e_in[0].clone()
            } else {
                let x = Tensor4::concat_channels(&[&enc_out[s - 1], &c0[s - 1], &c1[s - 1]])?;
                e_in.push(x.clone());
                x
            };
            let (y, cache) = self.enc[s].forward(ps, x)?;
            enc_out.push(y);
            enc_cache.push(cache);
        }
        let mut dec_cache: Vec<Option<UpCache>> = (0..LEVELS).map(|_| None).collect();
        let mut d: Option<Tensor4> = None;
        for s in (0..LEVELS).rev() {
            let x = match &d {
                None => Tensor4::concat_channels(&[&enc_out[s], &c0[s], &c1[s]])?,
                Some(d) => Tensor4::concat_channels(&[d, &enc_out[s], &c0[s], &c1[s]])?,
            };
            let (y, cache) = self.dec[s].forward(ps, &x)?;
            dec_cache[s] = Some(cache);
            d = Some(y);
        }
        let head_in = Tensor4::concat_channels(&[&d.expect("four levels"), &e_in[0]])?;
        let h = self.head.forward(ps, &head_in)?;
        let c = w0.channels();
        let parts = h.split_channels(&[1, c])?;
        let mask = Tensor4::from_vec(
            parts[0].dims(),
            parts[0].data().iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect(),
        )?;
        let res_tanh = Tensor4::from_vec(
            parts[1].dims(),
            parts[1].data().iter().map(|&z| z.tanh()).collect(),
        )?;
        let mut raw = Tensor4::zeros(w0.dims());
        for b in 0..w0.batch() {
            let m = mask.plane(b, 0);
            for ch in 0..c {
                let (a, bb, r) = (w0.plane(b, ch), w1.plane(b, ch), res_tanh.plane(b, ch));
                for (i, o) in raw.plane_mut(b, ch).iter_mut().enumerate() {
                    *o = m[i] * a[i] + (1.0 - m[i]) * bb[i] + 0.5 * r[i];
                }
            }
        }
        let out = Tensor4::from_vec(raw.dims(), raw.data().iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
        Ok((
            out,
            FuseCache {
                w0: w0.clone(),
                w1: w1.clone(),
                e_in,
                enc: enc_cache,
                dec: dec_cache.into_iter().map(|c| c.expect("filled")).collect(),
                head_in,
                mask,
                res_tanh,
                raw,
            },
        ))
    }

    /// Backpropagates through the fusion head and U-Net. Returns the
    /// gradients with respect to both frames' context features.
    pub(crate) fn fuse_backward(
        &self,
        ps: &mut ParamStore,
        cache: &FuseCache,
        g_out: &Tensor4,
    ) -> Result<(Vec<Tensor4>, Vec<Tensor4>)> {
        let base = self.base;
        let c = cache.w0.channels();
        let [n, _, h, w] = cache.w0.dims();
        // Clamp, then the mask / residual composition.
        let mut g_logit = Tensor4::zeros([n, 1, h, w]);
        let mut g_res = Tensor4::zeros([n, c, h, w]);
        for b in 0..n {
            let mut gm = vec![0.0f32; h * w];
            for ch in 0..c {
                let raw = cache.raw.plane(b, ch);
                let go = g_out.plane(b, ch);
                let (a, bb) = (cache.w0.plane(b, ch), cache.w1.plane(b, ch));
                let t = cache.res_tanh.plane(b, ch);
                let gr = g_res.plane_mut(b, ch);
                for i in 0..h * w {
                    let g = if raw[i] > 0.0 && raw[i] < 1.0 { go[i] } else { 0.0 };
                    gm[i] += g * (a[i] - bb[i]);
                    gr[i] = g * 0.5 * (1.0 - t[i] * t[i]);
                }
            }
            let m = cache.mask.plane(b, 0);
            for ((o, &g), &mv) in g_logit.plane_mut(b, 0).iter_mut().zip(&gm).zip(m) {
                *o = g * mv * (1.0 - mv);
            }
        }
        let g_h = Tensor4::concat_channels(&[&g_logit, &g_res])?;
        let g_head_in = self.head.backward(ps, &cache.head_in, &g_h)?;
        let mut g_d = g_head_in
            .split_channels(&[base / 2, cache.e_in[0].channels()])?
            .remove(0);

        let mut g_enc: Vec<Option<Tensor4>> = vec![None; LEVELS];
        let mut g_c0: Vec<Option<Tensor4>> = vec![None; LEVELS];
        let mut g_c1: Vec<Option<Tensor4>> = vec![None; LEVELS];
        fn add(slot: &mut Option<Tensor4>, g: Tensor4) -> Result<()> {
            match slot {
                Some(t) => t.add_assign(&g),
                None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        // Decoder, full size first; dec[s] consumed [dec s+1, enc s, ctx0 s, ctx1 s].
        for s in 0..LEVELS {
            let gx = self.dec[s].backward(ps, &cache.dec[s], &g_d)?;
            let (ec, cc) = (enc_channels(base, s), ctx_channels(base, s));
            let mut parts = if s + 1 < LEVELS {
                gx.split_channels(&[ec, ec, cc, cc])?
            } else {
                gx.split_channels(&[ec, cc, cc])?
            };
            add(&mut g_c1[s], parts.pop().expect("split"))?;
            add(&mut g_c0[s], parts.pop().expect("split"))?;
            add(&mut g_enc[s], parts.pop().expect("split"))?;
            if let Some(below) = parts.pop() {
                g_d = below;
            }
        }

        // Encoder, coarsest first; enc[s] consumed [enc s−1, ctx0 s−1, ctx1 s−1].
        for s in (0..LEVELS).rev() {
            let g = g_enc[s].take().expect("every level receives gradient");
            let gx = self.enc[s].backward(ps, &cache.enc[s], &g)?;
            if s > 0 {
                let (ec, cc) = (enc_channels(base, s - 1), ctx_channels(base, s - 1));
                let mut parts = gx.split_channels(&[ec, cc, cc])?;
                add(&mut g_c1[s - 1], parts.pop().expect("split"))?;
                add(&mut g_c0[s - 1], parts.pop().expect("split"))?;
                add(&mut g_enc[s - 1], parts.pop().expect("split"))?;
            }
        }
        let unwrap = |v: Vec<Option<Tensor4>>| v.into_iter().map(|t| t.expect("filled")).collect();
        Ok((unwrap(g_c0), unwrap(g_c1)))
    }
}

/// Padded network inputs for a batch of frame pairs.
pub(crate) struct PaddedBatch {
    frame0: Tensor4,
    frame1: Tensor4,
    warped0: Tensor4,
    warped1: Tensor4,
    flow_t0: Vec<DenseFlow>,
    flow_t1: Vec<DenseFlow>,
    /// Unpadded `(height, width)`.
    size: (usize, usize),
}

impl PaddedBatch {
    pub(crate) fn new(items: &[(&Image, &Image, &WarpPair)]) -> Result<Self> {
        let (f0, _, p0) = items
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty batch".into()))?;
        let (w, h) = f0.dims();
        for (a, b, p) in items {
            a.check_same_shape(f0)?;
            b.check_same_shape(f0)?;
            p.warped0.check_same_shape(&p0.warped0)?;
            p.flow_t0.check_dims(w, h)?;
            p.flow_t1.check_dims(w, h)?;
        }
        let (ph, pw) = (padded_len(h), padded_len(w));
        let stack = |imgs: Vec<&Image>| -> Result<Tensor4> {
            Ok(pad_tensor(&Tensor4::from_images(&imgs)?, ph, pw))
        };
        Ok(PaddedBatch {
            frame0: stack(items.iter().map(|i| i.0).collect())?,
            frame1: stack(items.iter().map(|i| i.1).collect())?,
            warped0: stack(items.iter().map(|i| &i.2.warped0).collect())?,
            warped1: stack(items.iter().map(|i| &i.2.warped1).collect())?,
            flow_t0: items.iter().map(|i| pad_flow(&i.2.flow_t0, ph, pw)).collect(),
            flow_t1: items.iter().map(|i| pad_flow(&i.2.flow_t1, ph, pw)).collect(),
            size: (h, w),
        })
    }
}

pub(crate) struct ForwardCache {
    ctx0: CtxCache,
    ctx1: CtxCache,
    fuse: FuseCache,
    padded: (usize, usize),
}

impl FusionWeights {
    /// Full forward pass. The output is cropped to the unpadded size.
    pub(crate) fn forward(&self, batch: &PaddedBatch) -> Result<(Tensor4, ForwardCache)> {
        self.check_channels(batch.frame0.channels())?;
        let r0: Vec<&DenseFlow> = batch.flow_t0.iter().collect();
        let r1: Vec<&DenseFlow> = batch.flow_t1.iter().collect();
        let (c0, ctx0) = self.net.context(&self.store, &batch.frame0, &r0)?;
        let (c1, ctx1) = self.net.context(&self.store, &batch.frame1, &r1)?;
        let (out, fuse) = self.net.fuse(
            &self.store,
            &batch.warped0,
            &batch.warped1,
            &flow_tensor(&r0),
            &flow_tensor(&r1),
            &c0,
            &c1,
        )?;
        let (h, w) = batch.size;
        Ok((
            crop_tensor(&out, h, w),
            ForwardCache {
                ctx0,
                ctx1,
                fuse,
                padded: (batch.frame0.height(), batch.frame0.width()),
            },
        ))
    }

    /// Accumulates parameter gradients for `∂L/∂out` of the cropped output.
    pub(crate) fn backward(&mut self, cache: &ForwardCache, g_out: &Tensor4) -> Result<()> {
        let (ph, pw) = cache.padded;
        let [n, c, h, w] = g_out.dims();
        let mut g = Tensor4::zeros([n, c, ph, pw]);
        for b in 0..n {
            for ch in 0..c {
                let src = g_out.plane(b, ch);
                let dst = g.plane_mut(b, ch);
                for y in 0..h {
                    dst[y * pw..y * pw + w].copy_from_slice(&src[y * w..(y + 1) * w]);
                }
            }
        }
        let (g0, g1) = self.net.fuse_backward(&mut self.store, &cache.fuse, &g)?;
        self.net.context_backward(&mut self.store, &cache.ctx0, &g0)?;
        self.net.context_backward(&mut self.store, &cache.ctx1, &g1)?;
        Ok(())
    }
}

/// Multi-scale context features of `img`, each level backward-warped by
/// `flow_t` resized to that level. The frame is replicate-padded to a
/// multiple of 16 first, so a 64×64 input yields 32, 16, 8 and 4 pixel
/// levels.
pub fn context_extract(img: &Image, flow_t: &DenseFlow, weights: &FusionWeights) -> Result<ContextFeatures> {
    weights.check_channels(img.channels())?;
    flow_t.check_dims(img.width(), img.height())?;
    let (ph, pw) = (padded_len(img.height()), padded_len(img.width()));
    let frames = pad_tensor(&Tensor4::from_image(img), ph, pw);
    let flow = pad_flow(flow_t, ph, pw);
    let (levels, _) = weights.net.context(&weights.store, &frames, &[&flow])?;
    Ok(ContextFeatures { levels })
}

/// Runs the fusion network on one warped pair and the context features of
/// both frames.
pub fn fuse_learned(
    pair: &WarpPair,
    ctx0: &ContextFeatures,
    ctx1: &ContextFeatures,
    weights: &FusionWeights,
) -> Result<Image> {
    weights.check_channels(pair.warped0.channels())?;
    pair.warped0.check_same_shape(&pair.warped1)?;
    let (w, h) = pair.dims();
    pair.flow_t0.check_dims(w, h)?;
    pair.flow_t1.check_dims(w, h)?;
    let (ph, pw) = (padded_len(h), padded_len(w));
    for (s, (a, b)) in ctx0.levels.iter().zip(&ctx1.levels).enumerate() {
        let expect = [1, ctx_channels(weights.config.base_channels, s), ph >> (s + 1), pw >> (s + 1)];
        a.check_dims(expect, "context features")?;
        b.check_dims(expect, "context features")?;
    }
    if ctx0.levels.len() != LEVELS || ctx1.levels.len() != LEVELS {
        return Err(Error::WeightShape(format!("expected {LEVELS} context levels")));
    }
    let pad = |img: &Image| pad_tensor(&Tensor4::from_image(img), ph, pw);
    let f0 = pad_flow(&pair.flow_t0, ph, pw);
    let f1 = pad_flow(&pair.flow_t1, ph, pw);
    let (out, _) = weights.net.fuse(
        &weights.store,
        &pad(&pair.warped0),
        &pad(&pair.warped1),
        &flow_tensor(&[&f0]),
        &flow_tensor(&[&f1]),
        &ctx0.levels,
        &ctx1.levels,
    )?;
    let out = crop_tensor(&out, h, w);
    if !out.is_finite() {
        return Err(Error::Numeric("fusion network produced non-finite output".into()));
    }
    out.to_image(0)
}

/// Context extraction for both frames followed by [`fuse_learned`].
pub fn interpolate_learned(
    frame0: &Image,
    frame1: &Image,
    pair: &WarpPair,
    weights: &FusionWeights,
) -> Result<Image> {
    let c0 = context_extract(frame0, &pair.flow_t0, weights)?;
    let c1 = context_extract(frame1, &pair.flow_t1, weights)?;
    fuse_learned(pair, &c0, &c1, weights)
}
