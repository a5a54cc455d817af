//! Architecture hyperparameters and the derived layer plan.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry and dressing of one convolution layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Odd kernel size; shape-preserving layers pad by `(kernel - 1) / 2`.
    pub kernel: usize,
    /// 1 or 2.
    pub stride: usize,
    /// Stride-2 transposed convolution (spatial doubling) instead of a plain one.
    pub transpose: bool,
    /// Instance normalization after the convolution.
    pub normalized: bool,
    /// Leaky rectifier after the normalization.
    pub activated: bool,
}

impl ConvSpec {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::config(field, format!("kernel {} must be odd", self.kernel)));
        }
        if !(self.stride == 1 || self.stride == 2) {
            return Err(Error::config(field, format!("stride {} must be 1 or 2", self.stride)));
        }
        if self.transpose && self.stride != 2 {
            return Err(Error::config(field, "transposed convolutions use stride 2"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config(field, "channel counts must be positive"));
        }
        Ok(())
    }
}

/// Whether a NU-Block sits in the contracting or the expanding half.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockRole {
    Encoder,
    Decoder,
}

/// A NU-Block: exactly four convolutions; resampling blocks halve (encoder)
/// or double (decoder) the spatial dims with their first convolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NuBlockSpec {
    pub role: BlockRole,
    pub convs: Vec<ConvSpec>,
    pub resamples: bool,
}

impl NuBlockSpec {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.convs.len() != 4 {
            return Err(Error::config(
                field,
                format!("a NU-Block has exactly 4 convolutions, got {}", self.convs.len()),
            ));
        }
        let mut resampling_layers = 0;
        for (i, conv) in self.convs.iter().enumerate() {
            conv.validate(&format!("{field}.convs[{i}]"))?;
            if conv.stride == 2 {
                resampling_layers += 1;
                match self.role {
                    BlockRole::Encoder if conv.transpose => {
                        return Err(Error::config(field, "encoder blocks resample with plain stride-2 convolutions"));
                    }
                    BlockRole::Decoder if !conv.transpose => {
                        return Err(Error::config(field, "decoder blocks resample with stride-2 transposed convolutions"));
                    }
                    _ => {}
                }
            }
        }
        if resampling_layers > 1 {
            return Err(Error::config(field, "at most one resampling layer per block"));
        }
        if self.resamples != (resampling_layers == 1) {
            return Err(Error::config(field, "resamples flag does not match the layer strides"));
        }
        // consecutive layers must agree on channels
        for pair in self.convs.windows(2) {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::config(field, "channel mismatch between consecutive convolutions"));
            }
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.convs.last().expect("validated").out_channels
    }
}

/// A NU-Block Residual computing `G(x) = F(x) + x` with two shape-preserving
/// convolutions forming `F`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidualBlockSpec {
    pub channels: usize,
    pub convs: Vec<ConvSpec>,
}

impl ResidualBlockSpec {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.convs.len() != 2 {
            return Err(Error::config(
                field,
                format!("a residual block has exactly 2 convolutions, got {}", self.convs.len()),
            ));
        }
        for (i, conv) in self.convs.iter().enumerate() {
            conv.validate(&format!("{field}.convs[{i}]"))?;
            if conv.stride != 1 || conv.transpose {
                return Err(Error::config(field, "residual convolutions are shape preserving"));
            }
        }
        if self.convs[0].in_channels != self.channels
            || self.convs[1].out_channels != self.channels
            || self.convs[0].out_channels != self.convs[1].in_channels
        {
            return Err(Error::config(field, "residual block must map channels onto themselves"));
        }
        Ok(())
    }
}

/// Architecture hyperparameters.
///
/// The block counts are fixed by the architecture (6 + 6 NU-Blocks,
/// 8 bottleneck + 5 final residual blocks); they appear here so that
/// deserialized configs are checked rather than silently reinterpreted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Channel width entering the first encoder block. Each downsampling
    /// block doubles the width; the decoder mirrors.
    pub base_channels: usize,
    pub encoder_blocks: usize,
    pub bottleneck_res: usize,
    pub decoder_blocks: usize,
    pub final_res: usize,
    /// Odd convolution window, default 7.
    pub kernel: usize,
    /// Encoder block indices (0-based) that downsample; exactly two.
    pub downsample_positions: Vec<usize>,
    /// Seed for deterministic parameter initialization.
    pub seed: u64,
    /// RGB in/out channels of the feature-map adapters.
    pub io_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 64,
            encoder_blocks: 6,
            bottleneck_res: 8,
            decoder_blocks: 6,
            final_res: 5,
            kernel: 7,
            downsample_positions: vec![2, 4],
            seed: 0,
            io_channels: 3,
        }
    }
}

impl ModelConfig {
    /// Reduced width for tests and desk-scale experiments.
    pub fn test_scale() -> Self {
        ModelConfig {
            base_channels: 8,
            ..ModelConfig::default()
        }
    }

    /// A deliberately tiny variant for gradient checks: narrow channels and a
    /// 3x3 window so 8x8 inputs survive two downsampling stages.
    pub fn tiny() -> Self {
        ModelConfig {
            base_channels: 2,
            kernel: 3,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_blocks != 6 {
            return Err(Error::config("encoder_blocks", format!("must be 6, got {}", self.encoder_blocks)));
        }
        if self.decoder_blocks != 6 {
            return Err(Error::config("decoder_blocks", format!("must be 6, got {}", self.decoder_blocks)));
        }
        if self.bottleneck_res != 8 {
            return Err(Error::config("bottleneck_res", format!("must be 8, got {}", self.bottleneck_res)));
        }
        if self.final_res != 5 {
            return Err(Error::config("final_res", format!("must be 5, got {}", self.final_res)));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::config("kernel", format!("must be odd, got {}", self.kernel)));
        }
        if self.base_channels == 0 {
            return Err(Error::config("base_channels", "must be positive"));
        }
        if self.io_channels == 0 {
            return Err(Error::config("io_channels", "must be positive"));
        }
        let mut ds = self.downsample_positions.clone();
        ds.sort_unstable();
        ds.dedup();
        if ds.len() != 2 || self.downsample_positions.len() != 2 {
            return Err(Error::config(
                "downsample_positions",
                format!("exactly 2 distinct encoder blocks downsample, got {:?}", self.downsample_positions),
            ));
        }
        if ds[1] >= self.encoder_blocks {
            return Err(Error::config(
                "downsample_positions",
                format!("index {} out of range 0..{}", ds[1], self.encoder_blocks),
            ));
        }
        Ok(())
    }

    /// Number of downsampling stages D; input dims must divide `2^D`.
    pub fn downsample_stages(&self) -> usize {
        self.downsample_positions.len()
    }

    /// `2^D`, the required divisor of frame height and width.
    pub fn required_divisor(&self) -> usize {
        1 << self.downsample_stages()
    }

    /// Encoder block index paired with each decoder block index.
    pub fn skip_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.encoder_blocks)
            .map(|enc| (enc, self.encoder_blocks - 1 - enc))
            .collect()
    }

    fn conv(&self, in_ch: usize, out_ch: usize, stride: usize, transpose: bool) -> ConvSpec {
        ConvSpec {
            in_channels: in_ch,
            out_channels: out_ch,
            kernel: self.kernel,
            stride,
            transpose,
            normalized: true,
            activated: true,
        }
    }

    /// Expand the numeric config into the concrete layer plan.
    pub fn architecture(&self) -> Result<ArchitecturePlan> {
        self.validate()?;
        let mut encoder = Vec::with_capacity(self.encoder_blocks);
        let mut width = self.base_channels;
        let mut enc_in = Vec::new();
        let mut enc_out = Vec::new();
        for i in 0..self.encoder_blocks {
            let resamples = self.downsample_positions.contains(&i);
            let out = if resamples { width * 2 } else { width };
            let mut convs = vec![self.conv(width, out, if resamples { 2 } else { 1 }, false)];
            for _ in 1..4 {
                convs.push(self.conv(out, out, 1, false));
            }
            encoder.push(NuBlockSpec {
                role: BlockRole::Encoder,
                convs,
                resamples,
            });
            enc_in.push(width);
            enc_out.push(out);
            width = out;
        }

        let bottleneck = (0..self.bottleneck_res)
            .map(|_| self.residual_spec(width))
            .collect();

        let mut decoder = Vec::with_capacity(self.decoder_blocks);
        for j in 0..self.decoder_blocks {
            let mirror = self.encoder_blocks - 1 - j;
            let resamples = self.downsample_positions.contains(&mirror);
            // the previous decoder output (or the bottleneck) matches the
            // skip's channel count, and concatenation doubles it
            let concat_in = 2 * enc_out[mirror];
            let out = enc_in[mirror];
            let mut convs = vec![if resamples {
                self.conv(concat_in, out, 2, true)
            } else {
                self.conv(concat_in, out, 1, false)
            }];
            for _ in 1..4 {
                convs.push(self.conv(out, out, 1, false));
            }
            decoder.push(NuBlockSpec {
                role: BlockRole::Decoder,
                convs,
                resamples,
            });
        }

        let final_res = (0..self.final_res)
            .map(|_| self.residual_spec(self.base_channels))
            .collect();

        let adapter = |in_ch: usize, out_ch: usize| ConvSpec {
            in_channels: in_ch,
            out_channels: out_ch,
            kernel: 1,
            stride: 1,
            transpose: false,
            normalized: false,
            activated: false,
        };

        let plan = ArchitecturePlan {
            in_feature_map: adapter(self.io_channels, self.base_channels),
            encoder,
            bottleneck,
            decoder,
            final_res,
            out_feature_map: adapter(self.base_channels, self.io_channels),
        };
        plan.validate()?;
        Ok(plan)
    }

    fn residual_spec(&self, channels: usize) -> ResidualBlockSpec {
        ResidualBlockSpec {
            channels,
            convs: vec![
                self.conv(channels, channels, 1, false),
                // second convolution: normalized but not activated, so the
                // identity path is the block output at zero initialization
                ConvSpec {
                    activated: false,
                    ..self.conv(channels, channels, 1, false)
                },
            ],
        }
    }
}

/// The fully expanded layer plan derived from a [`ModelConfig`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitecturePlan {
    pub in_feature_map: ConvSpec,
    pub encoder: Vec<NuBlockSpec>,
    pub bottleneck: Vec<ResidualBlockSpec>,
    pub decoder: Vec<NuBlockSpec>,
    pub final_res: Vec<ResidualBlockSpec>,
    pub out_feature_map: ConvSpec,
}

impl ArchitecturePlan {
    pub fn validate(&self) -> Result<()> {
        self.in_feature_map.validate("in_feature_map")?;
        self.out_feature_map.validate("out_feature_map")?;
        for (i, block) in self.encoder.iter().enumerate() {
            block.validate(&format!("encoder[{i}]"))?;
        }
        for (i, block) in self.decoder.iter().enumerate() {
            block.validate(&format!("decoder[{i}]"))?;
        }
        for (i, block) in self.bottleneck.iter().enumerate() {
            block.validate(&format!("bottleneck[{i}]"))?;
        }
        for (i, block) in self.final_res.iter().enumerate() {
            block.validate(&format!("final_res[{i}]"))?;
        }
        let down: usize = self.encoder.iter().filter(|b| b.resamples).count();
        let up: usize = self.decoder.iter().filter(|b| b.resamples).count();
        if down != up {
            return Err(Error::config(
                "decoder",
                format!("{down} downsampling blocks but {up} upsampling blocks"),
            ));
        }
        // skip pairing: encoder i feeds decoder (N-1-i); channel widths must
        // match what the decoder's first convolution absorbs
        let n = self.encoder.len();
        for (j, dec) in self.decoder.iter().enumerate() {
            let enc = &self.encoder[n - 1 - j];
            let expected = 2 * enc.out_channels();
            let got = dec.convs[0].in_channels;
            if got != expected {
                return Err(Error::config(
                    &format!("decoder[{j}]"),
                    format!(
                        "skip pair with encoder[{}] carries {} channels, first convolution absorbs {}",
                        n - 1 - j,
                        expected,
                        got
                    ),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let plan = ModelConfig::default().architecture().unwrap();
        assert_eq!(plan.encoder.len(), 6);
        assert_eq!(plan.decoder.len(), 6);
        assert_eq!(plan.bottleneck.len(), 8);
        assert_eq!(plan.final_res.len(), 5);
        assert!(plan.encoder.iter().all(|b| b.convs.len() == 4));
        assert_eq!(plan.encoder.iter().filter(|b| b.resamples).count(), 2);
        assert_eq!(plan.decoder.iter().filter(|b| b.resamples).count(), 2);
    }

    #[test]
    fn five_encoder_blocks_rejected() {
        let cfg = ModelConfig {
            encoder_blocks: 5,
            ..ModelConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("encoder_blocks"));
    }

    #[test]
    fn even_kernel_rejected() {
        let cfg = ModelConfig {
            kernel: 6,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("kernel"));
    }

    #[test]
    fn duplicate_downsample_positions_rejected() {
        let cfg = ModelConfig {
            downsample_positions: vec![2, 2],
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn channel_plan_doubles_at_downsampling_blocks() {
        let plan = ModelConfig::test_scale().architecture().unwrap();
        let widths: Vec<usize> = plan.encoder.iter().map(|b| b.out_channels()).collect();
        assert_eq!(widths, vec![8, 8, 16, 16, 32, 32]);
        // decoder mirrors back down to the base width
        let dec_widths: Vec<usize> = plan.decoder.iter().map(|b| b.out_channels()).collect();
        assert_eq!(dec_widths, vec![32, 16, 16, 8, 8, 8]);
    }

    #[test]
    fn skip_pair_mismatch_is_named_config_error() {
        let mut plan = ModelConfig::test_scale().architecture().unwrap();
        plan.decoder[1].convs[0].in_channels = 24;
        let err = plan.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("decoder[1]"), "got: {msg}");
    }
}
