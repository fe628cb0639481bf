//! Differentiable core: recorded forward/backward passes, Adam, and the
//! finite-difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod params;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, layer_suite, nudge_off_kinks, GradCheckReport, FD_STEP, FD_TOL, KINK_MARGIN};
pub use graph::{conv_out_size, conv_transpose_out_size, Graph, Scalar, VarId, LOG_CLAMP};
pub use params::{Param, ParamSet};

use crate::error::{Error, Result};

/// Declarative layer description; its output shape is a pure function of
/// the input shape and the hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize },
    TransposedConv { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize },
    FullyConnected { in_features: usize, out_features: usize },
    LeakyRelu { negative_slope: f64 },
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
    Concat { axis: usize },
    Reshape { shape: Vec<usize> },
}

impl LayerSpec {
    /// Output shape for a single input (Concat callers pass the already
    /// concatenated extent on `axis`).
    pub fn out_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            LayerSpec::Conv { in_channels, out_channels, kernel, stride, pad } => {
                if input.len() != 4 || input[1] != *in_channels {
                    return Err(Error::Dimension(format!("conv: bad input shape {input:?}")));
                }
                Ok(vec![
                    input[0],
                    *out_channels,
                    conv_out_size(input[2], *kernel, *stride, *pad),
                    conv_out_size(input[3], *kernel, *stride, *pad),
                ])
            }
            LayerSpec::TransposedConv { in_channels, out_channels, kernel, stride, pad } => {
                if input.len() != 4 || input[1] != *in_channels {
                    return Err(Error::Dimension(format!("transposed conv: bad input shape {input:?}")));
                }
                Ok(vec![
                    input[0],
                    *out_channels,
                    conv_transpose_out_size(input[2], *kernel, *stride, *pad),
                    conv_transpose_out_size(input[3], *kernel, *stride, *pad),
                ])
            }
            LayerSpec::FullyConnected { in_features, out_features } => {
                if input.len() != 2 || input[1] != *in_features {
                    return Err(Error::Dimension(format!("fully connected: bad input shape {input:?}")));
                }
                Ok(vec![input[0], *out_features])
            }
            LayerSpec::Reshape { shape } => {
                let have: usize = input.iter().product();
                let want: usize = shape.iter().product();
                if have != want {
                    return Err(Error::Dimension(format!(
                        "reshape: {input:?} has {have} elements, target {shape:?} wants {want}"
                    )));
                }
                Ok(shape.clone())
            }
            _ => Ok(input.to_vec()),
        }
    }
}
