//! Composition of layers into blocks and gradients mirrored over the same
//! structure.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::config::ConvSpec;
use super::layers::{
    leaky_relu_backward, leaky_relu_forward, Conv2d, InstanceNorm, NormCache,
};
use crate::error::Result;
use crate::tensor::Tensor;

/// One convolution with its optional normalization and activation, in the
/// order conv -> instance norm -> leaky rectifier.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    pub conv: Conv2d,
    pub norm: Option<InstanceNorm>,
    pub activated: bool,
}

/// Forward-pass state a [`ConvUnit`] needs for its backward pass.
#[derive(Debug)]
pub struct UnitCache {
    conv_in: Tensor,
    norm: Option<NormCache>,
    act_out: Option<Tensor>,
}

/// Parameter gradients of one [`ConvUnit`].
#[derive(Debug, Clone)]
pub struct UnitGrads {
    pub weight: Tensor,
    pub bias: Tensor,
    pub gamma: Option<Tensor>,
    pub beta: Option<Tensor>,
}

impl ConvUnit {
    pub fn from_spec(spec: &ConvSpec) -> Self {
        ConvUnit {
            conv: Conv2d::zeros(
                spec.in_channels,
                spec.out_channels,
                spec.kernel,
                spec.stride,
                spec.transpose,
            ),
            norm: spec.normalized.then(|| InstanceNorm::new(spec.out_channels)),
            activated: spec.activated,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.conv.forward(x)?;
        if let Some(norm) = &self.norm {
            y = norm.forward(&y);
        }
        if self.activated {
            leaky_relu_forward(&mut y);
        }
        Ok(y)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, UnitCache)> {
        let mut y = self.conv.forward(x)?;
        let norm_cache = match &self.norm {
            Some(norm) => {
                let (ny, cache) = norm.forward_cached(&y);
                y = ny;
                Some(cache)
            }
            None => None,
        };
        let act_out = if self.activated {
            leaky_relu_forward(&mut y);
            Some(y.clone())
        } else {
            None
        };
        Ok((
            y,
            UnitCache {
                conv_in: x.clone(),
                norm: norm_cache,
                act_out,
            },
        ))
    }

    /// Convolution only, without bias: the linearized form used by
    /// receptive-field probes.
    pub fn forward_linear(&self, x: &Tensor) -> Result<Tensor> {
        self.conv.forward_no_bias(x)
    }

    pub fn backward(&self, cache: &UnitCache, mut gy: Tensor) -> (Tensor, UnitGrads) {
        if self.activated {
            leaky_relu_backward(cache.act_out.as_ref().expect("cached"), &mut gy);
        }
        let (gamma, beta, gy) = match (&self.norm, &cache.norm) {
            (Some(norm), Some(nc)) => {
                let (gx, ggamma, gbeta) = norm.backward(nc, &gy);
                (Some(ggamma), Some(gbeta), gx)
            }
            _ => (None, None, gy),
        };
        let (gx, gw, gb) = self.conv.backward(&cache.conv_in, &gy);
        (
            gx,
            UnitGrads {
                weight: gw,
                bias: gb,
                gamma,
                beta,
            },
        )
    }

    pub fn zero_grads(&self) -> UnitGrads {
        UnitGrads {
            weight: Tensor::zeros(self.conv.weight.shape()),
            bias: Tensor::zeros(self.conv.bias.shape()),
            gamma: self.norm.as_ref().map(|n| Tensor::zeros(n.gamma.shape())),
            beta: self.norm.as_ref().map(|n| Tensor::zeros(n.beta.shape())),
        }
    }

    /// Kaiming-uniform weight init scaled for the leaky rectifier.
    pub fn init_random(&mut self, rng: &mut ChaCha12Rng) {
        let shape = self.conv.weight.shape();
        let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
        let gain = (2.0 / (1.0 + super::layers::LEAKY_SLOPE.powi(2))).sqrt();
        let bound = gain * (3.0 / fan_in).sqrt();
        for v in self.conv.weight.data_mut() {
            *v = (rng.gen::<f64>() * 2.0 - 1.0) * bound;
        }
        // biases start at zero; norm affine stays at identity
    }

    pub fn param_count(&self) -> usize {
        let mut n = self.conv.weight.len() + self.conv.bias.len();
        if let Some(norm) = &self.norm {
            n += norm.gamma.len() + norm.beta.len();
        }
        n
    }
}

/// A NU-Block: four convolution units, at most one of which resamples.
#[derive(Debug, Clone)]
pub struct NuBlock {
    pub units: Vec<ConvUnit>,
    pub resamples: bool,
}

impl NuBlock {
    pub fn from_specs(convs: &[ConvSpec], resamples: bool) -> Self {
        NuBlock {
            units: convs.iter().map(ConvUnit::from_spec).collect(),
            resamples,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        for unit in &self.units {
            y = unit.forward(&y)?;
        }
        Ok(y)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, Vec<UnitCache>)> {
        let mut caches = Vec::with_capacity(self.units.len());
        let mut y = x.clone();
        for unit in &self.units {
            let (ny, cache) = unit.forward_cached(&y)?;
            y = ny;
            caches.push(cache);
        }
        Ok((y, caches))
    }

    pub fn forward_linear(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        for unit in &self.units {
            y = unit.forward_linear(&y)?;
        }
        Ok(y)
    }

    pub fn backward(&self, caches: &[UnitCache], mut gy: Tensor) -> (Tensor, Vec<UnitGrads>) {
        let mut grads = Vec::with_capacity(self.units.len());
        for (unit, cache) in self.units.iter().zip(caches).rev() {
            let (gx, g) = unit.backward(cache, gy);
            gy = gx;
            grads.push(g);
        }
        grads.reverse();
        (gy, grads)
    }
}

/// A NU-Block Residual: `G(x) = F(x) + x` where `F` is two shape-preserving
/// convolution units.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub units: Vec<ConvUnit>,
}

impl ResBlock {
    pub fn from_specs(convs: &[ConvSpec]) -> Self {
        ResBlock {
            units: convs.iter().map(ConvUnit::from_spec).collect(),
        }
    }

    /// Applies `G(x) = F(x) + x`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut f = x.clone();
        for unit in &self.units {
            f = unit.forward(&f)?;
        }
        let mut y = f;
        for (yv, xv) in y.data_mut().iter_mut().zip(x.data()) {
            *yv += xv;
        }
        Ok(y)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, Vec<UnitCache>)> {
        let mut caches = Vec::with_capacity(self.units.len());
        let mut f = x.clone();
        for unit in &self.units {
            let (nf, cache) = unit.forward_cached(&f)?;
            f = nf;
            caches.push(cache);
        }
        let mut y = f;
        for (yv, xv) in y.data_mut().iter_mut().zip(x.data()) {
            *yv += xv;
        }
        Ok((y, caches))
    }

    pub fn forward_linear(&self, x: &Tensor) -> Result<Tensor> {
        let mut f = x.clone();
        for unit in &self.units {
            f = unit.forward_linear(&f)?;
        }
        let mut y = f;
        for (yv, xv) in y.data_mut().iter_mut().zip(x.data()) {
            *yv += xv;
        }
        Ok(y)
    }

    pub fn backward(&self, caches: &[UnitCache], gy: Tensor) -> (Tensor, Vec<UnitGrads>) {
        let mut grads = Vec::with_capacity(self.units.len());
        let mut g = gy.clone();
        for (unit, cache) in self.units.iter().zip(caches).rev() {
            let (gx, ug) = unit.backward(cache, g);
            g = gx;
            grads.push(ug);
        }
        grads.reverse();
        // identity path
        for (gv, up) in g.data_mut().iter_mut().zip(gy.data()) {
            *gv += up;
        }
        (g, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ConvSpec;

    fn plain_spec(ch: usize, kernel: usize) -> ConvSpec {
        ConvSpec {
            in_channels: ch,
            out_channels: ch,
            kernel,
            stride: 1,
            transpose: false,
            normalized: false,
            activated: false,
        }
    }

    #[test]
    fn zeroed_res_block_is_identity() {
        let block = ResBlock::from_specs(&[plain_spec(2, 3), plain_spec(2, 3)]);
        let x = Tensor::from_vec(&[2, 4, 4], (0..32).map(|i| i as f64 / 31.0).collect()).unwrap();
        let y = block.apply(&x).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn res_block_channel_mismatch_is_shape_error() {
        let block = ResBlock::from_specs(&[plain_spec(4, 3), plain_spec(4, 3)]);
        let x = Tensor::zeros(&[3, 4, 4]);
        assert!(block.apply(&x).is_err());
    }

    #[test]
    fn scalar_res_block_matches_hand_evaluation() {
        // 1x1 kernels on a 1x1x1 tensor: F(x) = b*(a*x); a=2, b=1 gives G(x) = 3x
        let mut block = ResBlock::from_specs(&[plain_spec(1, 1), plain_spec(1, 1)]);
        block.units[0].conv.weight.data_mut()[0] = 2.0;
        block.units[1].conv.weight.data_mut()[0] = 1.0;
        let x = Tensor::from_vec(&[1, 1, 1], vec![0.7]).unwrap();
        let y = block.apply(&x).unwrap();
        assert!((y.data()[0] - 2.1).abs() < 1e-15);
    }
}
