//! Minimal CPU neural-network building blocks used by the encoder and decoder.

mod adam;
mod gemm;
mod layers;

pub use adam::{AdamConfig, AdamState};
pub use gemm::{gemm, MatRef};
pub use layers::{
    channels_to_rows, col2im, im2col, relu_backward, relu_inplace, rows_to_channels,
    sigmoid_backward, sigmoid_inplace, Conv2d, ConvGeom, ConvTranspose2d, Linear, Param,
};
