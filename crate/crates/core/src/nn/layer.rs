use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    MaxPool,
    Dense,
    Relu,
    Sigmoid,
    Concat,
    Upsample,
}

/// One row of an architecture table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerSpec {
    pub fn conv(kernel: usize, padding: usize, in_channels: usize, out_channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            kernel,
            stride: 1,
            padding,
            in_channels,
            out_channels,
        }
    }

    /// Stride-1 convolution that preserves spatial extent (odd kernels).
    pub fn same_conv(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        Self::conv(kernel, (kernel - 1) / 2, in_channels, out_channels)
    }

    pub fn max_pool(size: usize, channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::MaxPool,
            kernel: size,
            stride: size,
            padding: 0,
            in_channels: channels,
            out_channels: channels,
        }
    }

    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            kernel: 1,
            stride: 1,
            padding: 0,
            in_channels: inputs,
            out_channels: outputs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::config("kernel and stride must be at least 1"));
        }
        Ok(())
    }

    /// Spatial output extent, `(input + 2p - k) / s + 1`.
    pub fn output_extent(&self, input: usize) -> Result<usize> {
        conv_extent(input, self.kernel, self.stride, self.padding)
    }

    /// Scalar parameters held by this layer.
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv => {
                self.kernel * self.kernel * self.in_channels * self.out_channels + self.out_channels
            }
            LayerKind::Dense => self.in_channels * self.out_channels + self.out_channels,
            _ => 0,
        }
    }
}

pub fn conv_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || !(padded - kernel).is_multiple_of(stride) {
        return Err(Error::shape(format!(
            "extent {input} with kernel {kernel}, stride {stride}, padding {padding} is not integral"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}
