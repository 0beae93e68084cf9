//! Layer schedule of the encoder-decoder.
//!
//! Encoder: three 3×3 convs at F, pool, three at 2F, pool, three at 4F.
//! Decoder: upsample, three convs at 2F, upsample, six convs at F, then a
//! final conv to the class logits. Every conv except the last is followed by
//! batch-norm and ReLU.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// `activated`: followed by batch-norm + ReLU, using norm slot `conv`.
    Conv { conv: usize, in_channels: usize, out_channels: usize, activated: bool },
    MaxPool,
    Upsample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub base_filters: usize,
    pub in_channels: usize,
    pub num_classes: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LayerCensus {
    pub conv: usize,
    pub batch_norm: usize,
    pub relu: usize,
    pub max_pool: usize,
    pub upsample: usize,
    pub softmax_head: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
}

impl LayerCensus {
    /// Conv, pooling and upsampling layers; batch-norm and ReLU ride on convs.
    pub fn layers(&self) -> usize {
        self.conv + self.max_pool + self.upsample
    }
}

enum Stage {
    Convs(usize, usize),
    Pool,
    Up,
}

impl ArchitectureSpec {
    pub fn new(base_filters: usize) -> Result<Self> {
        if base_filters == 0 {
            return Err(Error::Config("base_filters must be at least 1".into()));
        }
        Ok(Self { base_filters, in_channels: 1, num_classes: 2 })
    }

    /// Required divisor of input height and width.
    pub const SIZE_MULTIPLE: usize = 4;

    fn stages(&self) -> [Stage; 9] {
        let f = self.base_filters;
        [
            Stage::Convs(3, f),
            Stage::Pool,
            Stage::Convs(3, 2 * f),
            Stage::Pool,
            Stage::Convs(3, 4 * f),
            Stage::Up,
            Stage::Convs(3, 2 * f),
            Stage::Up,
            Stage::Convs(6, f),
        ]
    }

    /// Index in `layers()` of the first decoder layer.
    pub fn decoder_start(&self) -> usize {
        11
    }

    pub fn layers(&self) -> Vec<LayerKind> {
        let mut out = Vec::with_capacity(23);
        let mut channels = self.in_channels;
        let mut conv = 0;
        for stage in self.stages() {
            match stage {
                Stage::Convs(n, width) => {
                    for _ in 0..n {
                        out.push(LayerKind::Conv { conv, in_channels: channels, out_channels: width, activated: true });
                        channels = width;
                        conv += 1;
                    }
                }
                Stage::Pool => out.push(LayerKind::MaxPool),
                Stage::Up => out.push(LayerKind::Upsample),
            }
        }
        out.push(LayerKind::Conv { conv, in_channels: channels, out_channels: self.num_classes, activated: false });
        out
    }

    /// `(in, out)` channels of every conv in schedule order.
    pub fn conv_shapes(&self) -> Vec<(usize, usize)> {
        self.layers()
            .into_iter()
            .filter_map(|l| match l {
                LayerKind::Conv { in_channels, out_channels, .. } => Some((in_channels, out_channels)),
                _ => None,
            })
            .collect()
    }

    /// Channel counts of every batch-norm, in schedule order.
    pub fn norm_widths(&self) -> Vec<usize> {
        self.layers()
            .into_iter()
            .filter_map(|l| match l {
                LayerKind::Conv { out_channels, activated: true, .. } => Some(out_channels),
                _ => None,
            })
            .collect()
    }

    pub fn census(&self) -> LayerCensus {
        let mut c = LayerCensus { softmax_head: 1, ..Default::default() };
        for (i, layer) in self.layers().into_iter().enumerate() {
            match layer {
                LayerKind::Conv { activated, .. } => {
                    c.conv += 1;
                    if activated {
                        c.batch_norm += 1;
                        c.relu += 1;
                    }
                }
                LayerKind::MaxPool => c.max_pool += 1,
                LayerKind::Upsample => c.upsample += 1,
            }
            if i < self.decoder_start() {
                c.encoder_layers += 1;
            } else {
                c.decoder_layers += 1;
            }
        }
        c
    }
}
