//! The NU-Class Net model: six encoder NU-Blocks, eight bottleneck residual
//! blocks, six decoder NU-Blocks joined to the encoder by skip connections,
//! five final residual blocks, and a pair of 1x1 feature-map adapters.
//!
//! A freshly built model is the identity enhancer: the last convolution of
//! every residual branch and the output adapter start at zero, so the
//! predicted residual is exactly zero until training moves the weights.

mod checkpoint;
pub mod config;
pub mod layers;
mod net;
mod receptive;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ArchitecturePlan, BlockRole, ConvSpec, ModelConfig, NuBlockSpec, ResidualBlockSpec};
pub use net::{ConvUnit, NuBlock, ResBlock, UnitCache, UnitGrads};
pub use receptive::{deepest_path, receptive_field, receptive_field_chain, LayerGeom};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::tensor::{FrameTensor, ResidualTensor, Tensor};
use layers::{tanh_backward, tanh_forward};

/// The instantiated network: configuration plus all parameter tensors.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    pub in_fm: ConvUnit,
    pub encoder: Vec<NuBlock>,
    pub bottleneck: Vec<ResBlock>,
    pub decoder: Vec<NuBlock>,
    pub final_res: Vec<ResBlock>,
    pub out_fm: ConvUnit,
}

/// Everything the backward pass needs from one forward pass.
pub struct ModelCache {
    in_fm: UnitCache,
    encoder: Vec<Vec<UnitCache>>,
    bottleneck: Vec<Vec<UnitCache>>,
    decoder: Vec<Vec<UnitCache>>,
    final_res: Vec<Vec<UnitCache>>,
    out_fm: UnitCache,
    tanh_out: Tensor,
}

/// Parameter gradients, mirrored over the model structure.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    in_fm: UnitGrads,
    encoder: Vec<Vec<UnitGrads>>,
    bottleneck: Vec<Vec<UnitGrads>>,
    decoder: Vec<Vec<UnitGrads>>,
    final_res: Vec<Vec<UnitGrads>>,
    out_fm: UnitGrads,
}

/// Builds the network described by `config` with deterministic, seeded
/// initialization. The freshly built model predicts the zero residual.
pub fn build_model(config: &ModelConfig) -> Result<Model> {
    let plan = config.architecture()?;
    Model::from_plan(config.clone(), &plan)
}

impl Model {
    /// Instantiates layers from an explicit plan. `config.seed` drives
    /// initialization.
    pub fn from_plan(config: ModelConfig, plan: &ArchitecturePlan) -> Result<Model> {
        plan.validate()?;
        let mut model = Model {
            config,
            in_fm: ConvUnit::from_spec(&plan.in_feature_map),
            encoder: plan
                .encoder
                .iter()
                .map(|b| NuBlock::from_specs(&b.convs, b.resamples))
                .collect(),
            bottleneck: plan.bottleneck.iter().map(|b| ResBlock::from_specs(&b.convs)).collect(),
            decoder: plan
                .decoder
                .iter()
                .map(|b| NuBlock::from_specs(&b.convs, b.resamples))
                .collect(),
            final_res: plan.final_res.iter().map(|b| ResBlock::from_specs(&b.convs)).collect(),
            out_fm: ConvUnit::from_spec(&plan.out_feature_map),
        };
        model.initialize();
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn initialize(&mut self) {
        let mut rng = ChaCha12Rng::seed_from_u64(self.config.seed);
        self.for_each_unit_mut(&mut |unit| unit.init_random(&mut rng));
        // zero the residual branches' last convolution and the output adapter
        // so the initial network is the identity enhancer
        for block in self.bottleneck.iter_mut().chain(self.final_res.iter_mut()) {
            block.units[1].conv.weight.fill(0.0);
            block.units[1].conv.bias.fill(0.0);
        }
        self.out_fm.conv.weight.fill(0.0);
        self.out_fm.conv.bias.fill(0.0);
    }

    /// Overwrites every parameter (including the zero-initialized layers) with
    /// small random values. Used by gradient checks and receptive-field
    /// probes, which need a generic point in parameter space.
    pub fn randomize_all(&mut self, seed: u64) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        self.for_each_param_mut(|_, t| {
            let scale = 1.0 / (t.len() as f64).sqrt().max(1.0);
            for v in t.data_mut() {
                *v = (rng.gen::<f64>() * 2.0 - 1.0) * scale.max(0.05);
            }
        });
        // keep normalization gains near identity
        self.for_each_unit_mut(&mut |unit| {
            if let Some(norm) = &mut unit.norm {
                for v in norm.gamma.data_mut() {
                    *v = 0.9 + 0.2 * v.abs().min(1.0);
                }
            }
        });
    }

    /// Checks the divisibility and minimum-size constraints the architecture
    /// places on input frames.
    pub fn validate_input_shape(&self, channels: usize, h: usize, w: usize) -> Result<()> {
        if channels != self.config.io_channels {
            return Err(Error::shape(format!(
                "expected {} input channels, got {}",
                self.config.io_channels, channels
            )));
        }
        let div = self.config.required_divisor();
        if h % div != 0 || w % div != 0 {
            return Err(Error::shape(format!(
                "frame dims {h}x{w} must each be divisible by {div}"
            )));
        }
        let pad = (self.config.kernel - 1) / 2;
        if h / div <= pad || w / div <= pad {
            return Err(Error::shape(format!(
                "frame dims {h}x{w} too small: after {div}x downsampling each dim must exceed the reflection padding {pad}"
            )));
        }
        Ok(())
    }

    /// Predicts the residual frame for a compressed input.
    pub fn forward(&self, frame: &FrameTensor) -> Result<ResidualTensor> {
        let (h, w) = frame.hw();
        self.validate_input_shape(frame.channels(), h, w)?;
        let out = self.forward_tensor(frame.tensor())?;
        ResidualTensor::new(out)
    }

    fn forward_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = self.in_fm.forward(x)?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for block in &self.encoder {
            x = block.forward(&x)?;
            skips.push(x.clone());
        }
        for block in &self.bottleneck {
            x = block.apply(&x)?;
        }
        let n = self.encoder.len();
        for (j, block) in self.decoder.iter().enumerate() {
            let cat = Tensor::concat_channels(&x, &skips[n - 1 - j])?;
            x = block.forward(&cat)?;
        }
        for block in &self.final_res {
            x = block.apply(&x)?;
        }
        let mut out = self.out_fm.forward(&x)?;
        tanh_forward(&mut out);
        Ok(out)
    }

    /// Forward pass that keeps the intermediate state needed by [`Model::backward`].
    pub fn forward_cached(&self, frame: &FrameTensor) -> Result<(ResidualTensor, ModelCache)> {
        let (h, w) = frame.hw();
        self.validate_input_shape(frame.channels(), h, w)?;
        let (mut x, in_fm) = self.in_fm.forward_cached(frame.tensor())?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut encoder = Vec::with_capacity(self.encoder.len());
        for block in &self.encoder {
            let (nx, cache) = block.forward_cached(&x)?;
            x = nx;
            skips.push(x.clone());
            encoder.push(cache);
        }
        let mut bottleneck = Vec::with_capacity(self.bottleneck.len());
        for block in &self.bottleneck {
            let (nx, cache) = block.forward_cached(&x)?;
            x = nx;
            bottleneck.push(cache);
        }
        let n = self.encoder.len();
        let mut decoder = Vec::with_capacity(self.decoder.len());
        for (j, block) in self.decoder.iter().enumerate() {
            let cat = Tensor::concat_channels(&x, &skips[n - 1 - j])?;
            let (nx, cache) = block.forward_cached(&cat)?;
            x = nx;
            decoder.push(cache);
        }
        let mut final_res = Vec::with_capacity(self.final_res.len());
        for block in &self.final_res {
            let (nx, cache) = block.forward_cached(&x)?;
            x = nx;
            final_res.push(cache);
        }
        let (mut out, out_fm) = self.out_fm.forward_cached(&x)?;
        tanh_forward(&mut out);
        let tanh_out = out.clone();
        Ok((
            ResidualTensor::new(out)?,
            ModelCache {
                in_fm,
                encoder,
                bottleneck,
                decoder,
                final_res,
                out_fm,
                tanh_out,
            },
        ))
    }

    /// Backpropagates a gradient w.r.t. the predicted residual into parameter
    /// gradients.
    pub fn backward(&self, cache: &ModelCache, grad_residual: &Tensor) -> ModelGrads {
        let mut g = grad_residual.clone();
        tanh_backward(&cache.tanh_out, &mut g);
        let (mut g, out_fm) = self.out_fm.backward(&cache.out_fm, g);

        let mut final_res = Vec::with_capacity(self.final_res.len());
        for (block, bc) in self.final_res.iter().zip(&cache.final_res).rev() {
            let (gx, grads) = block.backward(bc, g);
            g = gx;
            final_res.push(grads);
        }
        final_res.reverse();

        let n = self.encoder.len();
        let mut skip_grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        let mut decoder = Vec::with_capacity(self.decoder.len());
        for (j, (block, bc)) in self.decoder.iter().zip(&cache.decoder).enumerate().rev() {
            let (gcat, grads) = block.backward(bc, g);
            let mirror = n - 1 - j;
            let prev_channels = gcat.channels() / 2;
            let (gx, gskip) = gcat.split_channels(prev_channels);
            skip_grads[mirror] = Some(gskip);
            g = gx;
            decoder.push(grads);
        }
        decoder.reverse();

        let mut bottleneck = Vec::with_capacity(self.bottleneck.len());
        for (block, bc) in self.bottleneck.iter().zip(&cache.bottleneck).rev() {
            let (gx, grads) = block.backward(bc, g);
            g = gx;
            bottleneck.push(grads);
        }
        bottleneck.reverse();

        let mut encoder = Vec::with_capacity(self.encoder.len());
        for (i, (block, bc)) in self.encoder.iter().zip(&cache.encoder).enumerate().rev() {
            if let Some(gskip) = &skip_grads[i] {
                for (gv, sv) in g.data_mut().iter_mut().zip(gskip.data()) {
                    *gv += sv;
                }
            }
            let (gx, grads) = block.backward(bc, g);
            g = gx;
            encoder.push(grads);
        }
        encoder.reverse();

        let (_, in_fm) = self.in_fm.backward(&cache.in_fm, g);

        ModelGrads {
            in_fm,
            encoder,
            bottleneck,
            decoder,
            final_res,
            out_fm,
        }
    }

    /// Linearized forward: convolutions (without bias), concatenations and
    /// residual additions only. Used to measure perturbation footprints.
    pub fn forward_linear(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = self.in_fm.forward_linear(x)?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for block in &self.encoder {
            x = block.forward_linear(&x)?;
            skips.push(x.clone());
        }
        for block in &self.bottleneck {
            x = block.forward_linear(&x)?;
        }
        let n = self.encoder.len();
        for (j, block) in self.decoder.iter().enumerate() {
            let cat = Tensor::concat_channels(&x, &skips[n - 1 - j])?;
            x = block.forward_linear(&cat)?;
        }
        for block in &self.final_res {
            x = block.forward_linear(&x)?;
        }
        self.out_fm.forward_linear(&x)
    }

    fn for_each_unit_mut(&mut self, f: &mut impl FnMut(&mut ConvUnit)) {
        f(&mut self.in_fm);
        for block in &mut self.encoder {
            block.units.iter_mut().for_each(&mut *f);
        }
        for block in &mut self.bottleneck {
            block.units.iter_mut().for_each(&mut *f);
        }
        for block in &mut self.decoder {
            block.units.iter_mut().for_each(&mut *f);
        }
        for block in &mut self.final_res {
            block.units.iter_mut().for_each(&mut *f);
        }
        f(&mut self.out_fm);
    }

    fn ordered_units(&self) -> Vec<(String, &ConvUnit)> {
        let mut out = vec![("in_fm".to_string(), &self.in_fm)];
        for (i, block) in self.encoder.iter().enumerate() {
            for (u, unit) in block.units.iter().enumerate() {
                out.push((format!("enc.{i}.{u}"), unit));
            }
        }
        for (i, block) in self.bottleneck.iter().enumerate() {
            for (u, unit) in block.units.iter().enumerate() {
                out.push((format!("bot.{i}.{u}"), unit));
            }
        }
        for (i, block) in self.decoder.iter().enumerate() {
            for (u, unit) in block.units.iter().enumerate() {
                out.push((format!("dec.{i}.{u}"), unit));
            }
        }
        for (i, block) in self.final_res.iter().enumerate() {
            for (u, unit) in block.units.iter().enumerate() {
                out.push((format!("fin.{i}.{u}"), unit));
            }
        }
        out.push(("out_fm".to_string(), &self.out_fm));
        out
    }

    /// Deterministic enumeration of every parameter tensor with its name.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (path, unit) in self.ordered_units() {
            out.push((format!("{path}.weight"), &unit.conv.weight));
            out.push((format!("{path}.bias"), &unit.conv.bias));
            if let Some(norm) = &unit.norm {
                out.push((format!("{path}.gamma"), &norm.gamma));
                out.push((format!("{path}.beta"), &norm.beta));
            }
        }
        out
    }

    /// Visits every parameter tensor mutably, in enumeration order, passing
    /// its flat index.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut Tensor)) {
        let mut idx = 0;
        self.for_each_unit_mut(&mut |unit| {
            f(idx, &mut unit.conv.weight);
            idx += 1;
            f(idx, &mut unit.conv.bias);
            idx += 1;
            if let Some(norm) = &mut unit.norm {
                f(idx, &mut norm.gamma);
                idx += 1;
                f(idx, &mut norm.beta);
                idx += 1;
            }
        });
    }

    /// Exact number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.ordered_units().iter().map(|(_, u)| u.param_count()).sum()
    }
}

impl ModelGrads {
    pub fn zeros_like(model: &Model) -> Self {
        ModelGrads {
            in_fm: model.in_fm.zero_grads(),
            encoder: model
                .encoder
                .iter()
                .map(|b| b.units.iter().map(|u| u.zero_grads()).collect())
                .collect(),
            bottleneck: model
                .bottleneck
                .iter()
                .map(|b| b.units.iter().map(|u| u.zero_grads()).collect())
                .collect(),
            decoder: model
                .decoder
                .iter()
                .map(|b| b.units.iter().map(|u| u.zero_grads()).collect())
                .collect(),
            final_res: model
                .final_res
                .iter()
                .map(|b| b.units.iter().map(|u| u.zero_grads()).collect())
                .collect(),
            out_fm: model.out_fm.zero_grads(),
        }
    }

    fn unit_grads(&self) -> Vec<&UnitGrads> {
        let mut out = vec![&self.in_fm];
        for group in [&self.encoder, &self.bottleneck, &self.decoder, &self.final_res] {
            for block in group {
                out.extend(block.iter());
            }
        }
        out.push(&self.out_fm);
        out
    }

    fn unit_grads_mut(&mut self) -> Vec<&mut UnitGrads> {
        let mut out = vec![&mut self.in_fm];
        for group in [
            &mut self.encoder,
            &mut self.bottleneck,
            &mut self.decoder,
            &mut self.final_res,
        ] {
            for block in group {
                out.extend(block.iter_mut());
            }
        }
        out.push(&mut self.out_fm);
        out
    }

    /// Gradient tensors in the model's parameter enumeration order.
    pub fn flatten(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for g in self.unit_grads() {
            out.push(&g.weight);
            out.push(&g.bias);
            if let Some(gamma) = &g.gamma {
                out.push(gamma);
            }
            if let Some(beta) = &g.beta {
                out.push(beta);
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        let mut mine = self.unit_grads_mut();
        let theirs = other.unit_grads();
        for (a, b) in mine.iter_mut().zip(theirs) {
            add_tensor(&mut a.weight, &b.weight);
            add_tensor(&mut a.bias, &b.bias);
            if let (Some(ag), Some(bg)) = (a.gamma.as_mut(), b.gamma.as_ref()) {
                add_tensor(ag, bg);
            }
            if let (Some(ab), Some(bb)) = (a.beta.as_mut(), b.beta.as_ref()) {
                add_tensor(ab, bb);
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.unit_grads_mut() {
            for t in [&mut g.weight, &mut g.bias]
                .into_iter()
                .chain(g.gamma.as_mut())
                .chain(g.beta.as_mut())
            {
                for v in t.data_mut() {
                    *v *= k;
                }
            }
        }
    }
}

fn add_tensor(a: &mut Tensor, b: &Tensor) {
    for (av, bv) in a.data_mut().iter_mut().zip(b.data()) {
        *av += bv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_model_outputs_zero_residual() {
        let model = build_model(&ModelConfig::tiny()).unwrap();
        let frame = FrameTensor::from_vec(
            3,
            8,
            8,
            (0..192).map(|i| (i % 97) as f64 / 96.0).collect(),
        )
        .unwrap();
        let residual = model.forward(&frame).unwrap();
        assert!(residual.tensor().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_rejects_bad_divisibility() {
        let model = build_model(&ModelConfig::tiny()).unwrap();
        let err = model.validate_input_shape(3, 8, 9).unwrap_err();
        assert!(err.to_string().contains("divisible by 4"), "{err}");
    }

    #[test]
    fn builds_are_deterministic_under_seed() {
        let cfg = ModelConfig {
            seed: 42,
            ..ModelConfig::tiny()
        };
        let a = build_model(&cfg).unwrap();
        let b = build_model(&cfg).unwrap();
        for ((na, ta), (nb, tb)) in a.named_parameters().iter().zip(b.named_parameters().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data(), "tensor {na} differs");
        }
        assert_eq!(a.param_count(), b.param_count());
    }

    #[test]
    fn seeds_change_parameters() {
        let a = build_model(&ModelConfig { seed: 1, ..ModelConfig::tiny() }).unwrap();
        let b = build_model(&ModelConfig { seed: 2, ..ModelConfig::tiny() }).unwrap();
        let pa = &a.named_parameters()[0].1;
        let pb = &b.named_parameters()[0].1;
        assert_ne!(pa.data(), pb.data());
    }

    #[test]
    fn random_model_residual_is_bounded() {
        let mut model = build_model(&ModelConfig::tiny()).unwrap();
        model.randomize_all(7);
        let frame = FrameTensor::from_vec(
            3,
            8,
            8,
            (0..192).map(|i| ((i * 31) % 101) as f64 / 100.0).collect(),
        )
        .unwrap();
        let residual = model.forward(&frame).unwrap();
        assert!(residual
            .tensor()
            .data()
            .iter()
            .all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn param_enumeration_matches_grads_flatten() {
        let model = build_model(&ModelConfig::tiny()).unwrap();
        let grads = ModelGrads::zeros_like(&model);
        let names = model.named_parameters();
        let flat = grads.flatten();
        assert_eq!(names.len(), flat.len());
        for ((_, p), g) in names.iter().zip(flat) {
            assert_eq!(p.shape(), g.shape());
        }
    }

    #[test]
    fn single_conv_param_count_closed_form() {
        // 7x7 conv, 3 in, 8 out, bias: 3*8*49 + 8 = 1184
        let conv = layers::Conv2d::zeros(3, 8, 7, 1, false);
        assert_eq!(conv.weight.len() + conv.bias.len(), 1184);
    }
}
