//! Building blocks of the fusion network and their cached forward /
//! backward passes. Parameters live in a [`ParamStore`]; blocks only hold
//! their indices.

use rand::Rng;

use crate::error::Result;
use crate::nn::{
    conv2d, conv2d_backward, prelu, prelu_backward, upsample2, upsample2_backward, ParamStore,
    Tensor4,
};

/// Supplies initial values for a new parameter given its name and shape.
pub(crate) trait Init {
    fn conv(&mut self, name: &str, shape: [usize; 4], gain: f32) -> Vec<f32>;
}

/// Scaled He-uniform weights from a seeded generator.
pub(crate) struct HeUniform<R: Rng>(pub R);

impl<R: Rng> Init for HeUniform<R> {
    fn conv(&mut self, _name: &str, shape: [usize; 4], gain: f32) -> Vec<f32> {
        let fan_in = (shape[1] * shape[2] * shape[3]) as f32;
        let bound = gain * (6.0 / fan_in).sqrt();
        let n = shape.iter().product();
        if bound == 0.0 {
            return vec![0.0; n];
        }
        (0..n).map(|_| self.0.gen_range(-bound..bound)).collect()
    }
}

/// All-zero weights.
pub(crate) struct Zeros;

impl Init for Zeros {
    fn conv(&mut self, _name: &str, shape: [usize; 4], _gain: f32) -> Vec<f32> {
        vec![0.0; shape.iter().product()]
    }
}

pub(crate) const PRELU_INIT: f32 = 0.25;

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

impl Conv {
    pub fn build(
        ps: &mut ParamStore,
        init: &mut dyn Init,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        gain: f32,
    ) -> Result<Self> {
        let shape = [cout, cin, 3, 3];
        let w = ps.add(&format!("{name}.w"), &shape, init.conv(name, shape, gain))?;
        let b = ps.add(&format!("{name}.b"), &[cout], vec![0.0; cout])?;
        Ok(Conv { w, b, stride, pad: 1 })
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor4) -> Result<Tensor4> {
        conv2d(x, ps.value(self.w), Some(ps.value(self.b).data()), self.stride, self.pad)
    }

    pub fn backward(&self, ps: &mut ParamStore, x: &Tensor4, gy: &Tensor4) -> Result<Tensor4> {
        let g = conv2d_backward(x, ps.value(self.w), gy, self.stride, self.pad)?;
        ps.accumulate(self.w, g.weight.data())?;
        ps.accumulate(self.b, &g.bias)?;
        Ok(g.input)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Act {
    a: usize,
}

impl Act {
    pub fn build(ps: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let a = ps.add(&format!("{name}.a"), &[channels], vec![PRELU_INIT; channels])?;
        Ok(Act { a })
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor4) -> Result<Tensor4> {
        prelu(x, ps.value(self.a).data())
    }

    pub fn backward(&self, ps: &mut ParamStore, x: &Tensor4, gy: &Tensor4) -> Result<Tensor4> {
        let (gx, ga) = prelu_backward(x, ps.value(self.a).data(), gy)?;
        ps.accumulate(self.a, &ga)?;
        Ok(gx)
    }
}

/// `out = x + conv2(prelu(conv1(x)))`.
#[derive(Debug, Clone)]
pub(crate) struct ResBlock {
    c1: Conv,
    act: Act,
    c2: Conv,
}

pub(crate) struct ResCache {
    x: Tensor4,
    h1: Tensor4,
    h2: Tensor4,
}

impl ResBlock {
    pub fn build(ps: &mut ParamStore, init: &mut dyn Init, name: &str, ch: usize) -> Result<Self> {
        Ok(ResBlock {
            c1: Conv::build(ps, init, &format!("{name}.c1"), ch, ch, 1, 1.0)?,
            act: Act::build(ps, &format!("{name}.act"), ch)?,
            // Small second conv keeps a fresh block close to the identity.
            c2: Conv::build(ps, init, &format!("{name}.c2"), ch, ch, 1, 0.1)?,
        })
    }

    pub fn forward(&self, ps: &ParamStore, x: Tensor4) -> Result<(Tensor4, ResCache)> {
        let h1 = self.c1.forward(ps, &x)?;
        let h2 = self.act.forward(ps, &h1)?;
        let mut out = self.c2.forward(ps, &h2)?;
        out.add_assign(&x)?;
        Ok((out, ResCache { x, h1, h2 }))
    }

    pub fn backward(&self, ps: &mut ParamStore, cache: &ResCache, gy: &Tensor4) -> Result<Tensor4> {
        let g2 = self.c2.backward(ps, &cache.h2, gy)?;
        let g1 = self.act.backward(ps, &cache.h1, &g2)?;
        let mut gx = self.c1.backward(ps, &cache.x, &g1)?;
        gx.add_assign(gy)?;
        Ok(gx)
    }
}

/// Stride-2 convolution, PReLU, then a chain of residual blocks.
#[derive(Debug, Clone)]
pub(crate) struct Stage {
    down: Conv,
    act: Act,
    blocks: Vec<ResBlock>,
}

pub(crate) struct StageCache {
    x: Tensor4,
    z: Tensor4,
    blocks: Vec<ResCache>,
}

impl Stage {
    pub fn build(
        ps: &mut ParamStore,
        init: &mut dyn Init,
        name: &str,
        cin: usize,
        cout: usize,
        blocks: usize,
    ) -> Result<Self> {
        let down = Conv::build(ps, init, &format!("{name}.down"), cin, cout, 2, 1.0)?;
        let act = Act::build(ps, &format!("{name}.down"), cout)?;
        let blocks = (0..blocks)
            .map(|r| ResBlock::build(ps, init, &format!("{name}.rb{r}"), cout))
            .collect::<Result<_>>()?;
        Ok(Stage { down, act, blocks })
    }

    pub fn forward(&self, ps: &ParamStore, x: Tensor4) -> Result<(Tensor4, StageCache)> {
        let z = self.down.forward(ps, &x)?;
        let mut h = self.act.forward(ps, &z)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (out, c) = b.forward(ps, h)?;
            caches.push(c);
            h = out;
        }
        Ok((h, StageCache { x, z, blocks: caches }))
    }

    pub fn backward(&self, ps: &mut ParamStore, cache: &StageCache, gy: &Tensor4) -> Result<Tensor4> {
        let mut g = gy.clone();
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            g = b.backward(ps, c, &g)?;
        }
        let gz = self.act.backward(ps, &cache.z, &g)?;
        self.down.backward(ps, &cache.x, &gz)
    }
}

/// Nearest ×2 upsampling, convolution, PReLU.
#[derive(Debug, Clone)]
pub(crate) struct UpBlock {
    conv: Conv,
    act: Act,
}

pub(crate) struct UpCache {
    up: Tensor4,
    z: Tensor4,
}

impl UpBlock {
    pub fn build(
        ps: &mut ParamStore,
        init: &mut dyn Init,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        Ok(UpBlock {
            conv: Conv::build(ps, init, &format!("{name}.conv"), cin, cout, 1, 1.0)?,
            act: Act::build(ps, &format!("{name}.conv"), cout)?,
        })
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor4) -> Result<(Tensor4, UpCache)> {
        let up = upsample2(x);
        let z = self.conv.forward(ps, &up)?;
        let out = self.act.forward(ps, &z)?;
        Ok((out, UpCache { up, z }))
    }

    pub fn backward(&self, ps: &mut ParamStore, cache: &UpCache, gy: &Tensor4) -> Result<Tensor4> {
        let gz = self.act.backward(ps, &cache.z, gy)?;
        let gu = self.conv.backward(ps, &cache.up, &gz)?;
        upsample2_backward(&gu)
    }
}
