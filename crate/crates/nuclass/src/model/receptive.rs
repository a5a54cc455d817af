//! Analytic receptive-field computation.
//!
//! Walking the layer chain from input to output we track the receptive field
//! `rf` and the cumulative input stride `jump` of one output unit:
//! a plain convolution adds `(k - 1) * jump` and multiplies `jump` by its
//! stride; a stride-s transposed convolution first refines the grid
//! (`jump /= s`) and then adds `(k - 1) * jump`.

use super::config::{ArchitecturePlan, ConvSpec, ModelConfig};
use crate::error::Result;

/// Geometry of one layer on the deepest input-to-output path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeom {
    pub kernel: usize,
    pub stride: usize,
    pub transpose: bool,
}

impl From<&ConvSpec> for LayerGeom {
    fn from(spec: &ConvSpec) -> Self {
        LayerGeom {
            kernel: spec.kernel,
            stride: spec.stride,
            transpose: spec.transpose,
        }
    }
}

/// Receptive field of a sequential chain of convolution layers, in pixels.
pub fn receptive_field_chain(chain: &[LayerGeom]) -> usize {
    let mut rf = 1.0_f64;
    let mut jump = 1.0_f64;
    for layer in chain {
        if layer.transpose {
            jump /= layer.stride as f64;
            rf += (layer.kernel - 1) as f64 * jump;
        } else {
            rf += (layer.kernel - 1) as f64 * jump;
            jump *= layer.stride as f64;
        }
    }
    debug_assert!(rf.fract() == 0.0, "receptive field should be integral, got {rf}");
    rf.round() as usize
}

/// The layer sequence along the deepest path (through the bottleneck).
pub fn deepest_path(plan: &ArchitecturePlan) -> Vec<LayerGeom> {
    let mut chain = vec![LayerGeom::from(&plan.in_feature_map)];
    for block in &plan.encoder {
        chain.extend(block.convs.iter().map(LayerGeom::from));
    }
    for block in &plan.bottleneck {
        chain.extend(block.convs.iter().map(LayerGeom::from));
    }
    for block in &plan.decoder {
        chain.extend(block.convs.iter().map(LayerGeom::from));
    }
    for block in &plan.final_res {
        chain.extend(block.convs.iter().map(LayerGeom::from));
    }
    chain.push(LayerGeom::from(&plan.out_feature_map));
    chain
}

/// Analytic receptive field of the full network described by `config`.
pub fn receptive_field(config: &ModelConfig) -> Result<usize> {
    Ok(receptive_field_chain(&deepest_path(&config.architecture()?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(kernel: usize, stride: usize) -> LayerGeom {
        LayerGeom {
            kernel,
            stride,
            transpose: false,
        }
    }

    #[test]
    fn single_seven_tap_conv() {
        assert_eq!(receptive_field_chain(&[conv(7, 1)]), 7);
    }

    #[test]
    fn two_stacked_seven_tap_convs() {
        assert_eq!(receptive_field_chain(&[conv(7, 1), conv(7, 1)]), 13);
    }

    #[test]
    fn stride_two_in_the_middle() {
        // 7 + 6*1 + 6*2 = 25
        assert_eq!(
            receptive_field_chain(&[conv(7, 1), conv(7, 2), conv(7, 1)]),
            25
        );
    }

    #[test]
    fn transpose_refines_the_grid() {
        let chain = [
            conv(3, 2),
            LayerGeom {
                kernel: 3,
                stride: 2,
                transpose: true,
            },
        ];
        // 1 + 2*1 = 3 after the strided conv (jump 2); transpose brings jump
        // back to 1 and adds 2*1
        assert_eq!(receptive_field_chain(&chain), 5);
    }

    #[test]
    fn full_model_receptive_field_is_substantial() {
        let rf = receptive_field(&ModelConfig::default()).unwrap();
        // 76 layers of 7x7 windows with two downsampling stages
        assert!(rf > 500, "got {rf}");
        let rf3 = receptive_field(&ModelConfig::tiny()).unwrap();
        assert!(rf3 > 100 && rf3 < rf, "got {rf3}");
    }
}
